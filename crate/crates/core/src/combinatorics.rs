//! Exact counting and enumeration of weak compositions.
//!
//! Count states at flight `t` are weak compositions of `t - 1` into `2K`
//! parts; BRMDP draw vectors are weak compositions of `D` into `J` parts.

use crate::error::{Error, Result};

/// Binomial coefficient `C(n, k)` with overflow detection.
pub fn binomial(n: u64, k: u64) -> Result<u64> {
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) is exact at every step.
        acc = acc
            .checked_mul(u128::from(n - i))
            .ok_or_else(|| Error::Overflow(format!("C({n}, {k})")))?
            / u128::from(i + 1);
    }
    u64::try_from(acc).map_err(|_| Error::Overflow(format!("C({n}, {k})")))
}

/// Number of count states at flight `t` with `k` airlines: `C(t + 2K - 2, 2K - 1)`.
pub fn count_states(t: usize, k: usize) -> Result<u64> {
    if t == 0 || k == 0 {
        return Err(Error::Domain(format!(
            "count_states needs t >= 1 and K >= 1 (got t={t}, K={k})"
        )));
    }
    binomial((t + 2 * k - 2) as u64, (2 * k - 1) as u64)
}

/// Number of count states over flights `1..=T`: `C(T + 2K - 1, 2K)`.
pub fn total_states(horizon: usize, k: usize) -> Result<u64> {
    if horizon == 0 || k == 0 {
        return Err(Error::Domain(format!(
            "total_states needs T >= 1 and K >= 1 (got T={horizon}, K={k})"
        )));
    }
    binomial((horizon + 2 * k - 1) as u64, (2 * k) as u64)
}

/// Number of action values tabulated over flights `1..=T`: `K * C(T + 2K - 1, 2K)`.
pub fn total_action_values(horizon: usize, k: usize) -> Result<u64> {
    total_states(horizon, k)?
        .checked_mul(k as u64)
        .ok_or_else(|| Error::Overflow(format!("K * S_total for T={horizon}, K={k}")))
}

/// Number of weak compositions of `total` into `parts` parts: `C(total + parts - 1, parts - 1)`.
pub fn composition_count(total: usize, parts: usize) -> Result<u64> {
    if parts == 0 {
        return Err(Error::Domain("compositions need at least one part".into()));
    }
    binomial((total + parts - 1) as u64, (parts - 1) as u64)
}

/// Iterator over weak compositions of `total` into `parts` parts in ascending
/// lexicographic order, starting at `(0, .., 0, total)`.
#[derive(Debug, Clone)]
pub struct Compositions {
    current: Option<Vec<usize>>,
}

pub fn compositions(total: usize, parts: usize) -> Result<Compositions> {
    if parts == 0 {
        return Err(Error::Domain("compositions need at least one part".into()));
    }
    let mut first = vec![0; parts];
    first[parts - 1] = total;
    Ok(Compositions {
        current: Some(first),
    })
}

impl Iterator for Compositions {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.take()?;
        let p = out.len();
        // Successor: find the rightmost position i < p-1 whose suffix (i+1..) has
        // mass; move one unit into i and push the rest of the suffix to the end.
        let mut next = out.clone();
        let mut suffix = 0;
        let mut i = p - 1;
        while i > 0 {
            suffix += next[i];
            next[i] = 0;
            i -= 1;
            if suffix > 0 {
                next[i] += 1;
                next[p - 1] = suffix - 1;
                self.current = Some(next);
                return Some(out);
            }
        }
        Some(out)
    }
}

/// Pascal table `C(n, k)` for `n <= max_n`, `k <= max_k`, for hot-path ranking.
#[derive(Debug, Clone)]
pub struct BinomialTable {
    max_k: usize,
    rows: Vec<u64>,
}

impl BinomialTable {
    pub fn new(max_n: usize, max_k: usize) -> Result<Self> {
        let width = max_k + 1;
        let mut rows = vec![0u64; (max_n + 1) * width];
        for n in 0..=max_n {
            rows[n * width] = 1;
            for k in 1..=max_k.min(n) {
                let a = rows[(n - 1) * width + k - 1];
                let b = rows[(n - 1) * width + k];
                rows[n * width + k] = a
                    .checked_add(b)
                    .ok_or_else(|| Error::Overflow(format!("C({n}, {k})")))?;
            }
        }
        Ok(Self { max_k, rows })
    }

    #[inline]
    pub fn get(&self, n: usize, k: usize) -> u64 {
        if k > n {
            return 0;
        }
        self.rows[n * (self.max_k + 1) + k]
    }
}
