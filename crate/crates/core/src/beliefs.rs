//! Within-route Beta–Bernoulli counts and the cross-route hyper-posterior.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// On-time and delayed counts per airline within one route.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CountState {
    pub on_time: Vec<u32>,
    pub delayed: Vec<u32>,
}

impl CountState {
    pub fn zeros(k: usize) -> Self {
        Self {
            on_time: vec![0; k],
            delayed: vec![0; k],
        }
    }

    pub fn from_counts(on_time: Vec<u32>, delayed: Vec<u32>) -> Result<Self> {
        if on_time.len() != delayed.len() {
            return Err(Error::Dimension(format!(
                "{} on-time counts vs {} delayed counts",
                on_time.len(),
                delayed.len()
            )));
        }
        Ok(Self { on_time, delayed })
    }

    pub fn num_airlines(&self) -> usize {
        self.on_time.len()
    }

    /// Total flights observed, `|N+|_1 + |N-|_1`.
    pub fn total(&self) -> usize {
        self.on_time
            .iter()
            .chain(&self.delayed)
            .map(|&c| c as usize)
            .sum()
    }

    /// 1-based index of the next flight.
    pub fn flight_index(&self) -> usize {
        self.total() + 1
    }

    pub fn trials(&self, k: usize) -> u32 {
        self.on_time[k] + self.delayed[k]
    }

    fn check(&self, k: usize) -> Result<()> {
        if k >= self.num_airlines() {
            return Err(Error::Index {
                index: k,
                len: self.num_airlines(),
            });
        }
        Ok(())
    }

    /// Interleaved `(N+_1, N-_1, .., N+_K, N-_K)` layout used by the state indexer.
    pub fn interleaved(&self) -> Vec<u32> {
        self.on_time
            .iter()
            .zip(&self.delayed)
            .flat_map(|(&a, &b)| [a, b])
            .collect()
    }

    pub fn from_interleaved(parts: &[u32]) -> Self {
        Self {
            on_time: parts.iter().step_by(2).copied().collect(),
            delayed: parts.iter().skip(1).step_by(2).copied().collect(),
        }
    }
}

/// Records outcome `y` of a flight on airline `k`.
pub fn update_counts(counts: &CountState, k: usize, outcome: u8) -> Result<CountState> {
    counts.check(k)?;
    let mut next = counts.clone();
    match outcome {
        1 => next.on_time[k] += 1,
        0 => next.delayed[k] += 1,
        y => return Err(Error::Domain(format!("outcome must be 0 or 1, got {y}"))),
    }
    Ok(next)
}

/// Airline-specific Beta prior parameters `(alpha_k, beta_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorHypothesis {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

impl PriorHypothesis {
    pub fn new(alphas: Vec<f64>, betas: Vec<f64>) -> Result<Self> {
        if alphas.len() != betas.len() || alphas.is_empty() {
            return Err(Error::Dimension(format!(
                "{} alphas vs {} betas",
                alphas.len(),
                betas.len()
            )));
        }
        if let Some(bad) = alphas
            .iter()
            .chain(&betas)
            .find(|v| !(**v > 0.0 && v.is_finite()))
        {
            return Err(Error::Domain(format!("Beta shape {bad} must be positive")));
        }
        Ok(Self { alphas, betas })
    }

    /// The same Beta on every airline.
    pub fn symmetric(k: usize, alpha: f64, beta: f64) -> Result<Self> {
        Self::new(vec![alpha; k], vec![beta; k])
    }

    /// Beta(1,1) on every airline.
    pub fn uniform(k: usize) -> Self {
        Self::symmetric(k, 1.0, 1.0).expect("uniform prior is valid")
    }

    pub fn num_airlines(&self) -> usize {
        self.alphas.len()
    }
}

/// Posterior mean of airline `k`: `(alpha + N+) / (alpha + beta + N+ + N-)`.
pub fn posterior_mean<S: Real>(hyp: &PriorHypothesis, counts: &CountState, k: usize) -> Result<S> {
    if k >= hyp.num_airlines() {
        return Err(Error::Index {
            index: k,
            len: hyp.num_airlines(),
        });
    }
    counts.check(k)?;
    Ok(posterior_mean_raw(
        hyp.alphas[k],
        hyp.betas[k],
        counts.on_time[k],
        counts.delayed[k],
    ))
}

#[inline]
pub(crate) fn posterior_mean_raw<S: Real>(alpha: f64, beta: f64, on_time: u32, delayed: u32) -> S {
    let a = S::of(alpha) + S::of(f64::from(on_time));
    a / (S::of(alpha + beta) + S::of(f64::from(on_time + delayed)))
}

/// Ordered candidate priors. `mean_grid` records the grid a class was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisClass {
    pub hypotheses: Vec<PriorHypothesis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_grid: Option<Vec<f64>>,
}

impl HypothesisClass {
    pub fn new(hypotheses: Vec<PriorHypothesis>) -> Result<Self> {
        let first = hypotheses
            .first()
            .ok_or_else(|| Error::Empty("hypothesis class".into()))?;
        let k = first.num_airlines();
        if let Some(h) = hypotheses.iter().find(|h| h.num_airlines() != k) {
            return Err(Error::Dimension(format!(
                "hypothesis with {} airlines in a class of K={k}",
                h.num_airlines()
            )));
        }
        Ok(Self {
            hypotheses,
            mean_grid: None,
        })
    }

    /// A one-element class.
    pub fn single(hyp: PriorHypothesis) -> Self {
        Self {
            hypotheses: vec![hyp],
            mean_grid: None,
        }
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn num_airlines(&self) -> usize {
        self.hypotheses[0].num_airlines()
    }

    /// The two-airline "Ascend is better" / "Summit is better" example class.
    pub fn ascend_summit_example() -> Self {
        Self::new(vec![
            PriorHypothesis::new(vec![3.0, 2.0], vec![1.0, 1.0]).unwrap(),
            PriorHypothesis::new(vec![2.0, 3.0], vec![1.0, 1.0]).unwrap(),
        ])
        .unwrap()
    }
}

/// Mean grid of the standard 125-hypothesis class for three airlines.
pub const DEFAULT_MEAN_GRID: [f64; 5] = [0.2, 0.4, 0.5, 0.6, 0.8];

/// [`build_hypothesis_grid`] over [`DEFAULT_MEAN_GRID`].
pub fn default_hypothesis_class(k: usize) -> Result<HypothesisClass> {
    build_hypothesis_grid(&DEFAULT_MEAN_GRID, k)
}

/// All `g^K` ordered K-tuples over `mean_grid`, each mapped to
/// `alpha_k = mu_k`, `beta_k = 1 - mu_k`. The first airline's grid index is the
/// most significant digit.
pub fn build_hypothesis_grid(mean_grid: &[f64], k: usize) -> Result<HypothesisClass> {
    if mean_grid.is_empty() {
        return Err(Error::Empty("mean grid".into()));
    }
    if k == 0 {
        return Err(Error::Domain("K must be positive".into()));
    }
    if let Some(bad) = mean_grid.iter().find(|&&m| !(m > 0.0 && m < 1.0)) {
        return Err(Error::Domain(format!("grid mean {bad} is outside (0, 1)")));
    }
    let g = mean_grid.len();
    let total = g
        .checked_pow(k as u32)
        .ok_or_else(|| Error::Overflow(format!("{g}^{k} hypotheses")))?;
    let mut hypotheses = Vec::with_capacity(total);
    let mut digits = vec![0usize; k];
    for _ in 0..total {
        let means: Vec<f64> = digits.iter().map(|&d| mean_grid[d]).collect();
        let betas = means.iter().map(|m| 1.0 - m).collect();
        hypotheses.push(PriorHypothesis::new(means, betas)?);
        for pos in (0..k).rev() {
            digits[pos] += 1;
            if digits[pos] < g {
                break;
            }
            digits[pos] = 0;
        }
    }
    Ok(HypothesisClass {
        hypotheses,
        mean_grid: Some(mean_grid.to_vec()),
    })
}

/// Probability weights over a hypothesis class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperPosterior {
    pub weights: Vec<f64>,
}

impl HyperPosterior {
    pub fn uniform(j: usize) -> Self {
        Self {
            weights: vec![1.0 / j as f64; j],
        }
    }

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty("hyper-posterior".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Domain("hyper-posterior weights must be nonnegative".into()));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("hyper-posterior sums to {s}")));
        }
        Ok(Self { weights })
    }

    /// Point mass on hypothesis `j`.
    pub fn degenerate(len: usize, j: usize) -> Self {
        let mut weights = vec![0.0; len];
        weights[j] = 1.0;
        Self { weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Log Beta–Binomial evidence of a route's counts under one hypothesis.
/// Airlines never flown contribute exactly zero.
pub fn route_evidence_log(hyp: &PriorHypothesis, route_counts: &CountState) -> Result<f64> {
    if hyp.num_airlines() != route_counts.num_airlines() {
        return Err(Error::Dimension(format!(
            "hypothesis has {} airlines, counts have {}",
            hyp.num_airlines(),
            route_counts.num_airlines()
        )));
    }
    let mut total = 0.0;
    for k in 0..hyp.num_airlines() {
        let n_plus = f64::from(route_counts.on_time[k]);
        let n_minus = f64::from(route_counts.delayed[k]);
        if n_plus + n_minus == 0.0 {
            continue;
        }
        let (a, b) = (hyp.alphas[k], hyp.betas[k]);
        total += ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + ln_gamma(a + n_plus)
            + ln_gamma(b + n_minus)
            - ln_gamma(a + b + n_plus + n_minus);
    }
    Ok(total)
}

/// `ln(sum exp(x_i))` with max subtraction. Empty or all `-inf` input gives `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Bayes update of the hyper-posterior on one route's counts.
pub fn hyper_posterior_update(
    q: &HyperPosterior,
    class: &HypothesisClass,
    route_counts: &CountState,
) -> Result<HyperPosterior> {
    if q.len() != class.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} hypotheses",
            q.len(),
            class.len()
        )));
    }
    if route_counts.total() == 0 {
        return Ok(q.clone());
    }
    let log_post = q
        .weights
        .iter()
        .zip(&class.hypotheses)
        .map(|(&w, h)| {
            if w > 0.0 {
                Ok(w.ln() + route_evidence_log(h, route_counts)?)
            } else {
                Ok(f64::NEG_INFINITY)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let norm = log_sum_exp(&log_post);
    if !norm.is_finite() {
        return Err(Error::NumericUnderflow);
    }
    let mut weights: Vec<f64> = log_post.iter().map(|l| (l - norm).exp()).collect();
    // Renormalise away the last ulp of rounding so the sum is 1 to 1e-15.
    let s: f64 = weights.iter().sum();
    if s <= 0.0 {
        return Err(Error::NumericUnderflow);
    }
    weights.iter_mut().for_each(|w| *w /= s);
    Ok(HyperPosterior { weights })
}
