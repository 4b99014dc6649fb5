//! Dense indexing of count states.
//!
//! A count state with total `s` is a weak composition of `s` into `2K` parts in
//! the interleaved layout `(N+_1, N-_1, .., N+_K, N-_K)`. Compositions are
//! ranked colexicographically through their stars-and-bars bar positions:
//! with bars `b_0 < .. < b_{p-2}`, `rank = sum_i C(b_i, i + 1)`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::beliefs::CountState;
use crate::combinatorics::BinomialTable;
use crate::error::{Error, Result};

#[derive(Debug)]
pub struct StateIndexer {
    k: usize,
    max_sum: usize,
    binom: BinomialTable,
    /// `layers[s]` holds every composition of `s`, flattened, in rank order.
    layers: Vec<Vec<u16>>,
    /// `children[s][rank * 2K + part]` is the rank in layer `s + 1` after incrementing `part`.
    children: Vec<Vec<u32>>,
}

impl StateIndexer {
    pub fn new(k: usize, max_sum: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Domain("indexer needs K >= 1".into()));
        }
        if max_sum > u16::MAX as usize {
            return Err(Error::Overflow(format!("indexer with max_sum {max_sum}")));
        }
        let p = 2 * k;
        let binom = BinomialTable::new(max_sum + p, p)?;
        let mut idx = Self {
            k,
            max_sum,
            binom,
            layers: Vec::with_capacity(max_sum + 1),
            children: Vec::with_capacity(max_sum),
        };
        for s in 0..=max_sum {
            let n = idx.layer_len(s);
            if n > u32::MAX as usize {
                return Err(Error::Overflow(format!("layer {s} with {n} states")));
            }
            let mut flat = Vec::with_capacity(n * p);
            let mut scratch = vec![0u32; p];
            for r in 0..n {
                idx.unrank_into(s, r as u64, &mut scratch);
                flat.extend(scratch.iter().map(|&c| c as u16));
            }
            idx.layers.push(flat);
        }
        for s in 0..max_sum {
            let n = idx.layer_len(s);
            let mut child = Vec::with_capacity(n * p);
            let mut scratch = vec![0u32; p];
            for r in 0..n {
                for part in 0..p {
                    for (dst, &src) in scratch.iter_mut().zip(idx.parts(s, r)) {
                        *dst = u32::from(src);
                    }
                    scratch[part] += 1;
                    child.push(idx.rank_parts(&scratch) as u32);
                }
            }
            idx.children.push(child);
        }
        Ok(idx)
    }

    /// Process-wide shared indexer for `(k, max_sum)`.
    pub fn shared(k: usize, max_sum: usize) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<StateIndexer>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(found) = cache.lock().unwrap().get(&(k, max_sum)) {
            return Ok(found.clone());
        }
        let built = Arc::new(Self::new(k, max_sum)?);
        Ok(cache
            .lock()
            .unwrap()
            .entry((k, max_sum))
            .or_insert(built)
            .clone())
    }

    pub fn num_airlines(&self) -> usize {
        self.k
    }

    pub fn max_sum(&self) -> usize {
        self.max_sum
    }

    /// Number of states with total `s`: `C(s + 2K - 1, 2K - 1)`.
    #[inline]
    pub fn layer_len(&self, s: usize) -> usize {
        let p = 2 * self.k;
        self.binom.get(s + p - 1, p - 1) as usize
    }

    /// Interleaved counts of the state with rank `r` in layer `s`.
    #[inline]
    pub fn parts(&self, s: usize, r: usize) -> &[u16] {
        let p = 2 * self.k;
        &self.layers[s][r * p..(r + 1) * p]
    }

    /// Rank in layer `s + 1` after incrementing `part` of state `(s, r)`.
    #[inline]
    pub fn child(&self, s: usize, r: usize, part: usize) -> usize {
        self.children[s][r * 2 * self.k + part] as usize
    }

    fn rank_parts(&self, parts: &[u32]) -> u64 {
        let mut pos = 0usize;
        let mut rank = 0u64;
        for (i, &c) in parts[..parts.len() - 1].iter().enumerate() {
            pos += c as usize;
            // bar i sits after the first i+1 parts and i earlier bars
            rank += self.binom.get(pos + i, i + 1);
        }
        rank
    }

    fn unrank_into(&self, s: usize, mut rank: u64, out: &mut [u32]) {
        let p = 2 * self.k;
        let slots = s + p - 1;
        let mut bars = vec![0usize; p - 1];
        let mut hi = slots;
        for i in (0..p - 1).rev() {
            // largest b < hi with C(b, i + 1) <= rank
            let mut b = hi - 1;
            while self.binom.get(b, i + 1) > rank {
                b -= 1;
            }
            rank -= self.binom.get(b, i + 1);
            bars[i] = b;
            hi = b;
        }
        let mut prev: isize = -1;
        for i in 0..p - 1 {
            out[i] = (bars[i] as isize - prev - 1) as u32;
            prev = bars[i] as isize;
        }
        out[p - 1] = (slots as isize - prev - 1) as u32;
    }

    /// Rank of `counts` within its layer.
    pub fn rank(&self, counts: &CountState) -> Result<u64> {
        if counts.num_airlines() != self.k {
            return Err(Error::Dimension(format!(
                "counts for {} airlines, indexer for {}",
                counts.num_airlines(),
                self.k
            )));
        }
        let s = counts.total();
        if s > self.max_sum {
            return Err(Error::OutOfWindow(format!(
                "state total {s} exceeds indexed maximum {}",
                self.max_sum
            )));
        }
        Ok(self.rank_parts(&counts.interleaved()))
    }

    pub fn unrank(&self, s: usize, rank: u64) -> Result<CountState> {
        if s > self.max_sum {
            return Err(Error::OutOfWindow(format!(
                "sum {s} exceeds indexed maximum {}",
                self.max_sum
            )));
        }
        let count = self.layer_len(s) as u64;
        if rank >= count {
            return Err(Error::RankOutOfRange { rank, sum: s, count });
        }
        let parts: Vec<u32> = self
            .parts(s, rank as usize)
            .iter()
            .map(|&c| u32::from(c))
            .collect();
        Ok(CountState::from_interleaved(&parts))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinatorics::count_states;

    #[test]
    fn zero_state_has_rank_zero() {
        let idx = StateIndexer::new(3, 4).unwrap();
        assert_eq!(idx.rank(&CountState::zeros(3)).unwrap(), 0);
    }

    #[test]
    fn two_airlines_one_flight_is_bijective() {
        let idx = StateIndexer::new(2, 1).unwrap();
        assert_eq!(idx.layer_len(1), 4);
        let mut seen = Vec::new();
        for part in 0..4 {
            let mut parts = vec![0u32; 4];
            parts[part] = 1;
            seen.push(idx.rank(&CountState::from_interleaved(&parts)).unwrap());
        }
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3]);
    }

    #[test]
    fn exhaustive_round_trip_k3() {
        let idx = StateIndexer::new(3, 9).unwrap();
        assert_eq!(idx.layer_len(9) as u64, count_states(10, 3).unwrap());
        assert_eq!(idx.layer_len(9), 2002);
        for s in 0..=9 {
            for r in 0..idx.layer_len(s) as u64 {
                let c = idx.unrank(s, r).unwrap();
                assert_eq!(c.total(), s);
                assert_eq!(idx.rank(&c).unwrap(), r);
            }
        }
    }

    #[test]
    fn children_increment_one_part() {
        let idx = StateIndexer::new(2, 3).unwrap();
        for s in 0..3 {
            for r in 0..idx.layer_len(s) {
                for part in 0..4 {
                    let c = idx.child(s, r, part);
                    let parent = idx.parts(s, r);
                    let kid = idx.parts(s + 1, c);
                    for i in 0..4 {
                        let bump = u16::from(i == part);
                        assert_eq!(kid[i], parent[i] + bump);
                    }
                }
            }
        }
    }

    #[test]
    fn out_of_range_rank_is_an_error() {
        let idx = StateIndexer::new(2, 2).unwrap();
        assert!(matches!(idx.unrank(1, 4), Err(Error::RankOutOfRange { .. })));
        assert!(idx.unrank(3, 0).is_err());
    }
}
