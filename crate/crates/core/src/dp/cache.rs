//! Value-table reuse across solves with identical inputs.
//!
//! Tables are keyed by [`SolveSpec::content_hash`]. The in-memory map is
//! cleared wholesale once it exceeds its byte budget. With a directory
//! attached, tables are also written to `<hash>.vtab` files in a small
//! little-endian binary format and read back on a miss.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use super::rule::ChoiceRule;
use super::solver::{solve_backward, SolveSpec, ValueTable};
use crate::beliefs::CountState;
use crate::error::{Error, Result};
use crate::scalar::Real;

const MAGIC: &[u8; 8] = b"MBVTAB01";

pub struct TableCache<S: Real = f64> {
    tables: Mutex<CacheInner<S>>,
    budget_bytes: usize,
    dir: Option<PathBuf>,
}

struct CacheInner<S: Real> {
    map: HashMap<String, Arc<ValueTable<S>>>,
    bytes: usize,
    hits: u64,
    misses: u64,
}

impl<S: Real> Default for TableCache<S> {
    fn default() -> Self {
        Self::new(512 << 20)
    }
}

impl<S: Real> TableCache<S> {
    pub fn new(budget_bytes: usize) -> Self {
        Self {
            tables: Mutex::new(CacheInner {
                map: HashMap::new(),
                bytes: 0,
                hits: 0,
                misses: 0,
            }),
            budget_bytes,
            dir: None,
        }
    }

    pub fn with_dir(mut self, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        self.dir = Some(dir);
        Ok(self)
    }

    /// Returns the cached table for `spec`, solving it on a miss.
    pub fn get_or_solve(&self, spec: &SolveSpec<'_, S>) -> Result<Arc<ValueTable<S>>> {
        let key = spec.content_hash();
        {
            let mut inner = self.tables.lock().unwrap();
            if let Some(t) = inner.map.get(&key).cloned() {
                inner.hits += 1;
                return Ok(t);
            }
            inner.misses += 1;
        }
        let table = match self.load(&key)? {
            Some(t) => t,
            None => {
                let t = solve_backward(spec)?;
                self.store(&key, &t)?;
                t
            }
        };
        let table = Arc::new(table);
        let mut inner = self.tables.lock().unwrap();
        if inner.bytes + table.footprint() > self.budget_bytes {
            inner.map.clear();
            inner.bytes = 0;
        }
        inner.bytes += table.footprint();
        Ok(inner.map.entry(key).or_insert(table).clone())
    }

    /// `(hits, misses)` since construction.
    pub fn stats(&self) -> (u64, u64) {
        let inner = self.tables.lock().unwrap();
        (inner.hits, inner.misses)
    }

    pub fn len(&self) -> usize {
        self.tables.lock().unwrap().map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.vtab")))
    }

    fn load(&self, key: &str) -> Result<Option<ValueTable<S>>> {
        let Some(path) = self.path(key) else {
            return Ok(None);
        };
        match fs::File::open(&path) {
            Ok(mut f) => Ok(Some(read_table(&mut f)?)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn store(&self, key: &str, table: &ValueTable<S>) -> Result<()> {
        if let Some(path) = self.path(key) {
            let tmp = path.with_extension("vtab.tmp");
            let mut f = fs::File::create(&tmp)?;
            write_table(table, &mut f)?;
            f.sync_all()?;
            fs::rename(tmp, path)?;
        }
        Ok(())
    }
}

fn put_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> io::Result<f64> {
    Ok(f64::from_bits(get_u64(r)?))
}

/// Layout: magic, K, window, rule tag + parameter, 2K base counts, then each
/// layer's action values followed by each layer's state values, all as f64.
pub fn write_table<S: Real>(table: &ValueTable<S>, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u64(w, table.num_airlines() as u64)?;
    put_u64(w, table.window() as u64)?;
    let (tag, param) = match *table.rule() {
        ChoiceRule::EpsGreedy { epsilon } => (0, epsilon.as_f64()),
        ChoiceRule::Softmax { tau } => (1, tau.as_f64()),
    };
    put_u64(w, tag)?;
    put_u64(w, param.to_bits())?;
    for c in table.base().interleaved() {
        put_u64(w, u64::from(c))?;
    }
    let (action, state) = table.layers();
    for layer in action.iter().chain(state) {
        for v in layer {
            put_u64(w, v.as_f64().to_bits())?;
        }
    }
    Ok(())
}

pub fn read_table<S: Real>(r: &mut impl Read) -> Result<ValueTable<S>> {
    let bad = |msg: &str| Error::Parse {
        line: 0,
        msg: format!("value table: {msg}"),
    };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let k = get_u64(r)? as usize;
    let window = get_u64(r)? as usize;
    if k == 0 || k > 64 || window == 0 || window > 4096 {
        return Err(bad("implausible header"));
    }
    let tag = get_u64(r)?;
    let param = S::of(get_f64(r)?);
    let rule = match tag {
        0 => ChoiceRule::EpsGreedy { epsilon: param },
        1 => ChoiceRule::Softmax { tau: param },
        _ => return Err(bad("unknown rule tag")),
    };
    let mut parts = Vec::with_capacity(2 * k);
    for _ in 0..2 * k {
        parts.push(u32::try_from(get_u64(r)?).map_err(|_| bad("count overflow"))?);
    }
    let base = CountState::from_interleaved(&parts);
    let indexer = super::indexer::StateIndexer::shared(k, window - 1)?;
    let mut action = Vec::with_capacity(window);
    for d in 0..window {
        let n = indexer.layer_len(d) * k;
        action.push((0..n).map(|_| get_f64(r).map(S::of)).collect::<io::Result<Vec<_>>>()?);
    }
    let mut state = Vec::with_capacity(window);
    for d in 0..window {
        let n = indexer.layer_len(d);
        state.push((0..n).map(|_| get_f64(r).map(S::of)).collect::<io::Result<Vec<_>>>()?);
    }
    ValueTable::from_parts(base, window, rule, action, state)
}
