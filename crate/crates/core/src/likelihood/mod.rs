//! Trial-by-trial log-likelihoods of observed choice histories.
//!
//! Within a route the likelihood multiplies the policy's probability of each
//! observed choice at the count state implied by the earlier observed
//! outcomes; outcome probabilities never enter. MetaDP and BRMDP carry the
//! hyper-posterior from route to route using the observed counts.

mod mc;
mod sweep;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

pub use mc::{draw_route_samples, loglik_brmdp_mc, mc_from_draws, McEstimate, RouteDraws};
pub use sweep::{fit_table_csv, sweep, FitResult, Grid, GridKind, ParticipantFit, SweepOptions};

use crate::beliefs::{
    hyper_posterior_update, log_sum_exp, update_counts, CountState, HyperPosterior, HypothesisClass,
    PriorHypothesis,
};
use crate::combinatorics::{composition_count, compositions};
use crate::dp::{choice_probabilities, solve_backward, ChoiceRule, SolveSpec, TableCache, ValueTable};
use crate::env::{ConditionLabel, RouteRates};
use crate::error::{Error, Result};
use crate::simulate::{Step, Trajectory};

/// Largest number of compositions exact BRMDP enumeration will visit by default.
pub const DEFAULT_ENUMERATION_CAP: u64 = 100_000;

/// One participant's complete choice record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantHistory {
    pub participant_id: String,
    pub condition: Option<ConditionLabel>,
    pub num_airlines: usize,
    /// `routes[m][t]`, airlines 0-based.
    pub routes: Vec<Vec<Step>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<Vec<RouteRates>>,
}

impl ParticipantHistory {
    pub fn new(
        participant_id: impl Into<String>,
        condition: Option<ConditionLabel>,
        num_airlines: usize,
        routes: Vec<Vec<Step>>,
    ) -> Result<Self> {
        let h = Self {
            participant_id: participant_id.into(),
            condition,
            num_airlines,
            routes,
            rates: None,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn from_trajectory(participant_id: impl Into<String>, traj: &Trajectory) -> Result<Self> {
        let k = traj.routes.first().map_or(0, |r| r.rates.rates.len());
        let mut h = Self::new(
            participant_id,
            traj.condition,
            k,
            traj.routes.iter().map(|r| r.steps.clone()).collect(),
        )?;
        h.rates = Some(traj.routes.iter().map(|r| r.rates.clone()).collect());
        Ok(h)
    }

    pub fn num_routes(&self) -> usize {
        self.routes.len()
    }

    pub fn horizon(&self) -> usize {
        self.routes.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_airlines < 1 {
            return Err(Error::Domain("history needs at least one airline".into()));
        }
        let t = self.horizon();
        if self.routes.is_empty() || t == 0 {
            return Err(Error::Empty("history has no flights".into()));
        }
        for (m, route) in self.routes.iter().enumerate() {
            if route.len() != t {
                return Err(Error::Invariant {
                    row: m + 1,
                    msg: format!("route {} has {} flights, expected {t}", m + 1, route.len()),
                });
            }
            for (i, s) in route.iter().enumerate() {
                if s.airline >= self.num_airlines || s.outcome > 1 {
                    return Err(Error::Invariant {
                        row: m * t + i + 1,
                        msg: format!("route {} flight {}: airline {} outcome {}", m + 1, i + 1, s.airline, s.outcome),
                    });
                }
            }
        }
        Ok(())
    }

    /// Realised count state at the end of route `m` (0-based).
    pub fn route_counts(&self, m: usize) -> Result<CountState> {
        self.routes[m]
            .iter()
            .try_fold(CountState::zeros(self.num_airlines), |c, s| update_counts(&c, s.airline, s.outcome))
    }
}

/// Planning parameters shared by every policy's likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Planning {
    pub rule: ChoiceRule,
    pub gamma: f64,
    /// Planning window; `None` plans the full route.
    pub lookahead: Option<usize>,
}

impl Planning {
    pub fn new(rule: ChoiceRule) -> Self {
        Self {
            rule,
            gamma: 1.0,
            lookahead: None,
        }
    }

    pub fn with_lookahead(mut self, h: usize) -> Self {
        self.lookahead = Some(h);
        self
    }

    pub fn window(&self, horizon: usize) -> usize {
        self.lookahead.unwrap_or(horizon).min(horizon)
    }
}

fn solve(spec: &SolveSpec<'_>, cache: Option<&TableCache>) -> Result<Arc<ValueTable>> {
    match cache {
        Some(c) => c.get_or_solve(spec),
        None => Ok(Arc::new(solve_backward(spec)?)),
    }
}

/// Log-probability of one route's observed choices when planning with `mixture`.
pub fn route_log_path(
    steps: &[Step],
    class: &HypothesisClass,
    mixture: &[f64],
    plan: &Planning,
    cache: Option<&TableCache>,
) -> Result<f64> {
    let horizon = steps.len();
    let h = plan.window(horizon);
    let mut counts = CountState::zeros(class.num_airlines());
    let mut table: Option<Arc<ValueTable>> = None;
    let mut total = 0.0;
    for step in steps {
        if table.is_none() || h < horizon {
            let spec = SolveSpec::full(horizon, plan.gamma, plan.rule, class, mixture)
                .with_lookahead(h)
                .with_base(counts.clone());
            table = Some(solve(&spec, cache)?);
        }
        let values = table.as_ref().expect("solved").action_values(&counts)?;
        let probs = choice_probabilities(values, &plan.rule);
        let p = *probs.get(step.airline).ok_or(Error::Index {
            index: step.airline,
            len: probs.len(),
        })?;
        total += p.ln();
        counts = update_counts(&counts, step.airline, step.outcome)?;
    }
    Ok(total)
}

fn check_class(history: &ParticipantHistory, class: &HypothesisClass) -> Result<()> {
    history.validate()?;
    if class.num_airlines() != history.num_airlines {
        return Err(Error::Dimension(format!(
            "class over {} airlines, history has {}",
            class.num_airlines(),
            history.num_airlines
        )));
    }
    Ok(())
}

/// `Q_1, .., Q_M`: the hyper-posterior in force at the start of each route.
pub fn hyper_sequence(
    history: &ParticipantHistory,
    class: &HypothesisClass,
    q1: Option<&HyperPosterior>,
) -> Result<Vec<HyperPosterior>> {
    check_class(history, class)?;
    let mut q = q1.cloned().unwrap_or_else(|| HyperPosterior::uniform(class.len()));
    if q.len() != class.len() {
        return Err(Error::Dimension(format!("{} weights for {} hypotheses", q.len(), class.len())));
    }
    let mut out = Vec::with_capacity(history.num_routes());
    for m in 0..history.num_routes() {
        let next = hyper_posterior_update(&q, class, &history.route_counts(m)?)?;
        out.push(std::mem::replace(&mut q, next));
    }
    Ok(out)
}

/// DP: every route planned with a fixed prior (Beta(1,1) when `prior` is `None`).
pub fn loglik_dp(
    history: &ParticipantHistory,
    prior: Option<&PriorHypothesis>,
    plan: &Planning,
    cache: Option<&TableCache>,
) -> Result<f64> {
    let prior = prior
        .cloned()
        .unwrap_or_else(|| PriorHypothesis::uniform(history.num_airlines));
    let class = HypothesisClass::single(prior);
    check_class(history, &class)?;
    history
        .routes
        .iter()
        .map(|r| route_log_path(r, &class, &[1.0], plan, cache))
        .sum()
}

/// MetaDP: route `m` planned with the hyper-posterior `Q_m`.
pub fn loglik_metadp(
    history: &ParticipantHistory,
    class: &HypothesisClass,
    q1: Option<&HyperPosterior>,
    plan: &Planning,
    cache: Option<&TableCache>,
) -> Result<f64> {
    let qs = hyper_sequence(history, class, q1)?;
    history
        .routes
        .iter()
        .zip(&qs)
        .map(|(r, q)| route_log_path(r, class, &q.weights, plan, cache))
        .sum()
}

/// `ln P(x)` for `x ~ Multinomial(D, q)`; `-inf` when `x` puts mass on a zero weight.
pub fn multinomial_log_pmf(x: &[u32], q: &[f64]) -> f64 {
    let d: u64 = x.iter().map(|&c| u64::from(c)).sum();
    let mut lp = ln_factorial(d);
    for (&c, &w) in x.iter().zip(q) {
        if c == 0 {
            continue;
        }
        if w <= 0.0 {
            return f64::NEG_INFINITY;
        }
        lp += f64::from(c) * w.ln() - ln_factorial(u64::from(c));
    }
    lp
}

/// BRMDP(D) by exhaustive enumeration of the `C(D+J-1, J-1)` draw vectors per route.
pub fn loglik_brmdp_exact(
    history: &ParticipantHistory,
    class: &HypothesisClass,
    q1: Option<&HyperPosterior>,
    plan: &Planning,
    draws: u32,
    cap: u64,
    cache: Option<&TableCache>,
) -> Result<f64> {
    if draws == 0 {
        return Err(Error::InfeasibleSpec("BRMDP needs D >= 1".into()));
    }
    let count = composition_count(draws as usize, class.len())?;
    if count > cap {
        return Err(Error::EnumerationCap { count, cap });
    }
    let qs = hyper_sequence(history, class, q1)?;
    let d = f64::from(draws);
    let mut total = 0.0;
    for (route, q) in history.routes.iter().zip(&qs) {
        let mut terms = Vec::new();
        for x in compositions(draws as usize, class.len())? {
            let x: Vec<u32> = x.into_iter().map(|c| c as u32).collect();
            let lp = multinomial_log_pmf(&x, &q.weights);
            if lp == f64::NEG_INFINITY {
                continue;
            }
            let w: Vec<f64> = x.iter().map(|&c| f64::from(c) / d).collect();
            terms.push(lp + route_log_path(route, class, &w, plan, cache)?);
        }
        total += log_sum_exp(&terms);
    }
    Ok(total)
}
