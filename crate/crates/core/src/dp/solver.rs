//! Backward induction over count states under a hypothesis mixture.
//!
//! For mixture weights `w` over hypotheses `P^(j)`, the hypothesis-conditioned
//! value of airline `k` is
//!
//! ```text
//! V^(j)(k | s) = th^(j)_k(s) + gamma * [ th^(j)_k(s) W(s + e+_k) + (1 - th^(j)_k(s)) W(s + e-_k) ]
//! ```
//!
//! and the integrated value is `V(k | s) = sum_j w_j V^(j)(k | s)`. The
//! continuation `W` is shared across hypotheses, so the sum collapses onto the
//! mixture posterior mean `th_k(s) = sum_j w_j th^(j)_k(s)`; the solver
//! tabulates `th_k` once per `(k, N+_k, N-_k)` and then runs the recursion on it.

use std::sync::Arc;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::indexer::StateIndexer;
use super::rule::ChoiceRule;
use crate::beliefs::{posterior_mean_raw, CountState, HypothesisClass};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Inputs of one backward-induction solve.
#[derive(Debug, Clone)]
pub struct SolveSpec<'a, S: Real = f64> {
    /// Flights per route `T`.
    pub horizon: usize,
    /// Planning window `h` in `1..=T`.
    pub lookahead: usize,
    pub gamma: S,
    pub rule: ChoiceRule<S>,
    pub class: &'a HypothesisClass,
    /// Weight per hypothesis; nonnegative, summing to one.
    pub mixture: &'a [f64],
    /// Counts at the root of the window. Zero for a full-route solve.
    pub base: CountState,
}

impl<'a, S: Real> SolveSpec<'a, S> {
    /// Full-horizon solve from the empty state.
    pub fn full(
        horizon: usize,
        gamma: S,
        rule: ChoiceRule<S>,
        class: &'a HypothesisClass,
        mixture: &'a [f64],
    ) -> Self {
        Self {
            horizon,
            lookahead: horizon,
            gamma,
            rule,
            class,
            mixture,
            base: CountState::zeros(class.num_airlines()),
        }
    }

    pub fn with_lookahead(mut self, lookahead: usize) -> Self {
        self.lookahead = lookahead;
        self
    }

    pub fn with_base(mut self, base: CountState) -> Self {
        self.base = base;
        self
    }

    /// Number of flights covered: `min(h, T - flights already flown)`.
    pub fn window(&self) -> usize {
        self.lookahead.min(self.horizon.saturating_sub(self.base.total()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InfeasibleSpec("horizon must be positive".into()));
        }
        if self.lookahead == 0 || self.lookahead > self.horizon {
            return Err(Error::InfeasibleSpec(format!(
                "lookahead {} outside 1..={}",
                self.lookahead, self.horizon
            )));
        }
        if !(self.gamma > S::zero() && self.gamma <= S::one()) {
            return Err(Error::InfeasibleSpec(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        self.rule.validate()?;
        if self.class.is_empty() {
            return Err(Error::InfeasibleSpec("empty hypothesis class".into()));
        }
        if self.mixture.len() != self.class.len() {
            return Err(Error::InfeasibleSpec(format!(
                "{} mixture weights for {} hypotheses",
                self.mixture.len(),
                self.class.len()
            )));
        }
        if self.mixture.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InfeasibleSpec("mixture weights must be nonnegative".into()));
        }
        let total: f64 = self.mixture.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InfeasibleSpec(format!("mixture sums to {total}")));
        }
        if self.base.num_airlines() != self.class.num_airlines() {
            return Err(Error::InfeasibleSpec(format!(
                "base counts for {} airlines, class has {}",
                self.base.num_airlines(),
                self.class.num_airlines()
            )));
        }
        if self.base.total() >= self.horizon {
            return Err(Error::InfeasibleSpec(format!(
                "base state already has {} of {} flights",
                self.base.total(),
                self.horizon
            )));
        }
        Ok(())
    }

    /// SHA-256 over everything the resulting table depends on.
    pub fn content_hash(&self) -> String {
        #[derive(Serialize)]
        struct Key<'b> {
            scalar: &'static str,
            k: usize,
            window: usize,
            gamma: f64,
            rule: ChoiceRule<f64>,
            base: &'b CountState,
            components: Vec<(u64, &'b [f64], &'b [f64])>,
        }
        let components = self
            .mixture
            .iter()
            .zip(&self.class.hypotheses)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, h)| (w.to_bits(), h.alphas.as_slice(), h.betas.as_slice()))
            .collect();
        let key = Key {
            scalar: std::any::type_name::<S>(),
            k: self.class.num_airlines(),
            window: self.window(),
            gamma: self.gamma.as_f64(),
            rule: self.rule.cast(),
            base: &self.base,
            components,
        };
        let bytes = serde_json::to_vec(&key).expect("key serialises");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Action values `V(k | s)` and state values `W(s)` for every state of a window.
#[derive(Debug, Clone)]
pub struct ValueTable<S: Real = f64> {
    k: usize,
    base: CountState,
    window: usize,
    rule: ChoiceRule<S>,
    indexer: Arc<StateIndexer>,
    /// `action[d][rank * K + k]` for relative depth `d`.
    action: Vec<Vec<S>>,
    state: Vec<Vec<S>>,
}

impl<S: Real> ValueTable<S> {
    pub fn num_airlines(&self) -> usize {
        self.k
    }

    pub fn base(&self) -> &CountState {
        &self.base
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn rule(&self) -> &ChoiceRule<S> {
        &self.rule
    }

    pub fn indexer(&self) -> &StateIndexer {
        &self.indexer
    }

    /// Number of states tabulated.
    pub fn len(&self) -> usize {
        self.state.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Locates `counts` as `(depth, rank)` relative to the window root.
    pub fn locate(&self, counts: &CountState) -> Result<(usize, usize)> {
        if counts.num_airlines() != self.k {
            return Err(Error::Dimension(format!(
                "counts for {} airlines, table for {}",
                counts.num_airlines(),
                self.k
            )));
        }
        let mut rel = Vec::with_capacity(2 * self.k);
        for (c, b) in counts.interleaved().iter().zip(self.base.interleaved()) {
            if *c < b {
                return Err(Error::OutOfWindow(format!(
                    "{counts:?} is not reachable from the window root {:?}",
                    self.base
                )));
            }
            rel.push(c - b);
        }
        let depth: u32 = rel.iter().sum();
        let depth = depth as usize;
        if depth >= self.window {
            return Err(Error::OutOfWindow(format!(
                "{depth} flights past the root, window covers {}",
                self.window
            )));
        }
        let rank = self.indexer.rank(&CountState::from_interleaved(&rel))?;
        Ok((depth, rank as usize))
    }

    /// Integrated action values `V(k | s)` for all airlines.
    pub fn action_values(&self, counts: &CountState) -> Result<&[S]> {
        let (d, r) = self.locate(counts)?;
        Ok(self.action_at(d, r))
    }

    pub fn state_value(&self, counts: &CountState) -> Result<S> {
        let (d, r) = self.locate(counts)?;
        Ok(self.state[d][r])
    }

    #[inline]
    pub fn action_at(&self, depth: usize, rank: usize) -> &[S] {
        &self.action[depth][rank * self.k..(rank + 1) * self.k]
    }

    #[inline]
    pub fn state_at(&self, depth: usize, rank: usize) -> S {
        self.state[depth][rank]
    }

    /// Values at the window root.
    pub fn root_values(&self) -> &[S] {
        self.action_at(0, 0)
    }

    /// Bytes occupied by the value arrays.
    pub fn footprint(&self) -> usize {
        self.len() * (self.k + 1) * std::mem::size_of::<S>()
    }

    /// SHA-256 over the raw values; equal tables hash equally.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for layer in self.action.iter().chain(&self.state) {
            for v in layer {
                hasher.update(v.as_f64().to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    pub(crate) fn from_parts(
        base: CountState,
        window: usize,
        rule: ChoiceRule<S>,
        action: Vec<Vec<S>>,
        state: Vec<Vec<S>>,
    ) -> Result<Self> {
        let k = base.num_airlines();
        let indexer = StateIndexer::shared(k, window.saturating_sub(1))?;
        if action.len() != window || state.len() != window {
            return Err(Error::Dimension("layer count does not match window".into()));
        }
        for d in 0..window {
            let n = indexer.layer_len(d);
            if state[d].len() != n || action[d].len() != n * k {
                return Err(Error::Dimension(format!("layer {d} has the wrong size")));
            }
        }
        Ok(Self {
            k,
            base,
            window,
            rule,
            indexer,
            action,
            state,
        })
    }

    pub(crate) fn layers(&self) -> (&[Vec<S>], &[Vec<S>]) {
        (&self.action, &self.state)
    }
}

/// Mixture posterior means `th_k(a, b)` for increments `a + b < window` past the base.
struct MixtureMeans<S> {
    stride: usize,
    k_stride: usize,
    values: Vec<S>,
}

impl<S: Real> MixtureMeans<S> {
    fn new(spec: &SolveSpec<'_, S>, window: usize) -> Self {
        let k = spec.class.num_airlines();
        let stride = window;
        let k_stride = window * window;
        let mut values = vec![S::zero(); k * k_stride];
        let active: Vec<(S, &crate::beliefs::PriorHypothesis)> = spec
            .mixture
            .iter()
            .zip(&spec.class.hypotheses)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, h)| (S::of(*w), h))
            .collect();
        for airline in 0..k {
            let (b_on, b_off) = (spec.base.on_time[airline], spec.base.delayed[airline]);
            for a in 0..window {
                for b in 0..window - a {
                    let mut acc = S::zero();
                    for (w, h) in &active {
                        let th: S = posterior_mean_raw(
                            h.alphas[airline],
                            h.betas[airline],
                            b_on + a as u32,
                            b_off + b as u32,
                        );
                        acc += *w * th;
                    }
                    values[airline * k_stride + a * stride + b] = acc;
                }
            }
        }
        Self {
            stride,
            k_stride,
            values,
        }
    }

    #[inline]
    fn get(&self, airline: usize, on: u16, off: u16) -> S {
        self.values[airline * self.k_stride + on as usize * self.stride + off as usize]
    }
}

pub fn solve_backward<S: Real>(spec: &SolveSpec<'_, S>) -> Result<ValueTable<S>> {
    spec.validate()?;
    let k = spec.class.num_airlines();
    let window = spec.window();
    let indexer = StateIndexer::shared(k, window - 1)?;
    let means = MixtureMeans::new(spec, window);
    let gamma = spec.gamma;

    let mut action: Vec<Vec<S>> = vec![Vec::new(); window];
    let mut state: Vec<Vec<S>> = vec![Vec::new(); window];
    for d in (0..window).rev() {
        let n = indexer.layer_len(d);
        let mut v = vec![S::zero(); n * k];
        let mut w = vec![S::zero(); n];
        let terminal = d + 1 == window;
        for r in 0..n {
            let parts = indexer.parts(d, r);
            let row = &mut v[r * k..(r + 1) * k];
            for (airline, slot) in row.iter_mut().enumerate() {
                let th = means.get(airline, parts[2 * airline], parts[2 * airline + 1]);
                *slot = if terminal {
                    th
                } else {
                    let next = &state[d + 1];
                    let up = next[indexer.child(d, r, 2 * airline)];
                    let down = next[indexer.child(d, r, 2 * airline + 1)];
                    th + gamma * (th * up + (S::one() - th) * down)
                };
            }
            w[r] = spec.rule.state_value(row);
        }
        action[d] = v;
        state[d] = w;
    }
    Ok(ValueTable {
        k,
        base: spec.base.clone(),
        window,
        rule: spec.rule,
        indexer,
        action,
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beliefs::{build_hypothesis_grid, update_counts, PriorHypothesis};
    use crate::dp::rule;

    type ChoiceRule = rule::ChoiceRule<f64>;

    fn uniform_class(k: usize) -> HypothesisClass {
        HypothesisClass::single(PriorHypothesis::uniform(k))
    }

    #[test]
    fn two_flight_hand_value() {
        let class = uniform_class(2);
        let rule = ChoiceRule::eps_greedy(0.0).unwrap();
        let spec = SolveSpec::full(2, 1.0, rule, &class, &[1.0]);
        let table = solve_backward(&spec).unwrap();
        let v = table.action_values(&CountState::zeros(2)).unwrap();
        for x in v {
            assert!((x - 13.0 / 12.0).abs() < 1e-12, "{x}");
        }
    }

    #[test]
    fn two_flight_hand_value_f32() {
        let class = uniform_class(2);
        let rule = rule::ChoiceRule::<f32>::eps_greedy(0.0).unwrap();
        let spec = SolveSpec::full(2, 1.0f32, rule, &class, &[1.0]);
        let table = solve_backward(&spec).unwrap();
        assert!((table.root_values()[0] - 13.0 / 12.0).abs() < 1e-6);
    }

    #[test]
    fn terminal_values_are_posterior_means() {
        let class = uniform_class(2);
        let spec = SolveSpec::full(4, 1.0, ChoiceRule::eps_greedy(0.0).unwrap(), &class, &[1.0]);
        let table = solve_backward(&spec).unwrap();
        let counts = CountState::from_counts(vec![2, 0], vec![1, 0]).unwrap();
        let v = table.action_values(&counts).unwrap();
        // Beta(1,1) after 2 on-time and 1 delayed: 3/5; unflown: 1/2.
        assert!((v[0] - 0.6).abs() < 1e-12);
        assert!((v[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mixture_terminal_example() {
        let class = HypothesisClass::ascend_summit_example();
        let spec = SolveSpec::full(1, 1.0, ChoiceRule::eps_greedy(0.0).unwrap(), &class, &[0.5, 0.5]);
        let table = solve_backward(&spec).unwrap();
        let v = table.root_values();
        assert!((v[0] - (0.5 * 0.75 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
        assert!((v[0] - 0.7083).abs() < 1e-4);
    }

    #[test]
    fn symmetric_airlines_have_equal_values() {
        let class = build_hypothesis_grid(&[0.3, 0.7], 3).unwrap();
        // Permutation-invariant mixture: weight depends only on the multiset of means.
        let mixture: Vec<f64> = class
            .hypotheses
            .iter()
            .map(|h| 1.0 + h.alphas.iter().filter(|&&a| a > 0.5).count() as f64)
            .collect();
        let total: f64 = mixture.iter().sum();
        let mixture: Vec<f64> = mixture.iter().map(|w| w / total).collect();
        let spec = SolveSpec::full(5, 1.0, ChoiceRule::eps_greedy(0.1).unwrap(), &class, &mixture);
        let table = solve_backward(&spec).unwrap();
        let v = table.root_values();
        assert!((v[0] - v[1]).abs() < 1e-12 && (v[1] - v[2]).abs() < 1e-12);
    }

    #[test]
    fn values_are_bounded_by_remaining_flights() {
        let class = build_hypothesis_grid(&[0.2, 0.8], 2).unwrap();
        let mixture = vec![0.25; 4];
        for gamma in [1.0f64, 0.7] {
            let spec = SolveSpec::full(6, gamma, ChoiceRule::softmax(0.3).unwrap(), &class, &mixture);
            let table = solve_backward(&spec).unwrap();
            for d in 0..table.window() {
                let remaining = table.window() - d;
                let bound: f64 = (0..remaining).map(|s| gamma.powi(s as i32)).sum();
                for r in 0..table.indexer().layer_len(d) {
                    for &v in table.action_at(d, r) {
                        assert!((0.0..=bound + 1e-12).contains(&v));
                    }
                }
            }
        }
    }

    #[test]
    fn window_relative_lookup() {
        let class = uniform_class(2);
        let base = update_counts(&CountState::zeros(2), 0, 1).unwrap();
        let spec = SolveSpec::full(5, 1.0, ChoiceRule::eps_greedy(0.2).unwrap(), &class, &[1.0])
            .with_lookahead(2)
            .with_base(base.clone());
        assert_eq!(spec.window(), 2);
        let table = solve_backward(&spec).unwrap();
        assert!(table.action_values(&base).is_ok());
        assert!(matches!(
            table.action_values(&CountState::zeros(2)),
            Err(Error::OutOfWindow(_))
        ));
        let two_more = update_counts(&update_counts(&base, 1, 0).unwrap(), 1, 0).unwrap();
        assert!(matches!(table.action_values(&two_more), Err(Error::OutOfWindow(_))));
        // Near the end of the route the window shrinks.
        let late = CountState::from_counts(vec![3, 0], vec![1, 0]).unwrap();
        let spec = SolveSpec::full(5, 1.0, ChoiceRule::eps_greedy(0.2).unwrap(), &class, &[1.0])
            .with_lookahead(3)
            .with_base(late);
        assert_eq!(spec.window(), 1);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let class = uniform_class(2);
        let rule = ChoiceRule::eps_greedy(0.1).unwrap();
        assert!(solve_backward(&SolveSpec::full(3, 1.0, rule, &class, &[0.5])).is_err());
        assert!(solve_backward(&SolveSpec::full(3, 0.0, rule, &class, &[1.0])).is_err());
        assert!(solve_backward(&SolveSpec::full(3, 1.0, rule, &class, &[1.0]).with_lookahead(4)).is_err());
        assert!(solve_backward(&SolveSpec::full(0, 1.0, rule, &class, &[1.0])).is_err());
        let bad = ChoiceRule::EpsGreedy { epsilon: 2.0 };
        assert!(solve_backward(&SolveSpec::full(3, 1.0, bad, &class, &[1.0])).is_err());
    }
}
