//! Stateful DP, MetaDP and BRMDP(D) agents playing a sequence of routes.
//!
//! All three plan with [`solve_backward`](crate::dp::solve_backward); they
//! differ only in the hypothesis mixture handed to it:
//!
//! * DP: point mass on a fixed prior (Beta(1,1) by default), never updated.
//! * MetaDP: the current hyper-posterior `Q_m`.
//! * BRMDP(D): `x / D` for `x ~ Multinomial(D, Q_m)`, drawn once per route.
//!
//! MetaDP and BRMDP both update the full `Q_m` after each route.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::beliefs::{
    hyper_posterior_update, update_counts, CountState, HyperPosterior, HypothesisClass,
    PriorHypothesis,
};
use crate::dp::{choice_probabilities, solve_backward, ChoiceRule, SolveSpec, TableCache, ValueTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    Dp,
    MetaDp,
    Brmdp { draws: u32 },
}

impl PolicyKind {
    pub fn label(&self) -> String {
        match self {
            PolicyKind::Dp => "DP".into(),
            PolicyKind::MetaDp => "MetaDP".into(),
            PolicyKind::Brmdp { draws } => format!("BRMDP({draws})"),
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    /// `dp`, `metadp`, `brmdp` (D=1), `brmdp3`, `brmdp(3)` or `brmdp:3`.
    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.to_ascii_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        match norm.as_str() {
            "dp" => Ok(PolicyKind::Dp),
            "metadp" => Ok(PolicyKind::MetaDp),
            "brmdp" => Ok(PolicyKind::Brmdp { draws: 1 }),
            other => {
                let d = other
                    .strip_prefix("brmdp")
                    .and_then(|d| d.parse::<u32>().ok())
                    .filter(|d| *d >= 1)
                    .ok_or_else(|| Error::Domain(format!("unknown policy {s:?}")))?;
                Ok(PolicyKind::Brmdp { draws: d })
            }
        }
    }
}

/// Draws `x ~ Multinomial(draws, probs)` by sequential conditional binomials.
pub fn sample_multinomial<R: Rng + ?Sized>(draws: u32, probs: &[f64], rng: &mut R) -> Vec<u32> {
    let mut out = vec![0u32; probs.len()];
    if draws == 1 && !probs.is_empty() {
        let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
        let mut acc = 0.0;
        let mut pick = probs.iter().rposition(|p| *p > 0.0).unwrap_or(0);
        for (j, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc && *p > 0.0 {
                pick = j;
                break;
            }
        }
        out[pick] = 1;
        return out;
    }
    let mut remaining = draws;
    let mut mass = 1.0f64;
    for (j, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if j + 1 == probs.len() || mass <= 0.0 {
            out[j] = remaining;
            break;
        }
        let cond = (p / mass).clamp(0.0, 1.0);
        let x = if cond >= 1.0 {
            remaining
        } else if cond <= 0.0 {
            0
        } else {
            Binomial::new(u64::from(remaining), cond)
                .expect("valid binomial")
                .sample(rng) as u32
        };
        out[j] = x;
        remaining -= x;
        mass -= p;
    }
    // When floating-point leftovers land the tail on a zero-probability
    // hypothesis, move it to the largest-probability one instead.
    if let Some(last) = probs.len().checked_sub(1) {
        if out[last] > 0 && probs[last] <= 0.0 {
            let best = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            out[best] += out[last];
            out[last] = 0;
        }
    }
    out
}

/// Policy family plus everything that shapes its planning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub kind: PolicyKind,
    pub rule: ChoiceRule,
    pub gamma: f64,
    /// Flights per route `T`.
    pub horizon: usize,
    /// Planning window `h`; `h = T` plans the whole route once.
    pub lookahead: usize,
    /// With `h < T`, re-solve the window every this many flights.
    pub resolve_every: usize,
    /// Fixed prior for DP.
    pub dp_prior: Option<PriorHypothesis>,
}

impl AgentConfig {
    pub fn new(kind: PolicyKind, rule: ChoiceRule, horizon: usize) -> Self {
        Self {
            kind,
            rule,
            gamma: 1.0,
            horizon,
            lookahead: horizon,
            resolve_every: 1,
            dp_prior: None,
        }
    }

    pub fn with_lookahead(mut self, h: usize) -> Self {
        self.lookahead = h;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.rule.validate()?;
        if self.horizon == 0 || self.lookahead == 0 || self.lookahead > self.horizon {
            return Err(Error::InfeasibleSpec(format!(
                "lookahead {} with horizon {}",
                self.lookahead, self.horizon
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InfeasibleSpec(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if self.resolve_every == 0 {
            return Err(Error::InfeasibleSpec("resolve_every must be positive".into()));
        }
        if let PolicyKind::Brmdp { draws: 0 } = self.kind {
            return Err(Error::InfeasibleSpec("BRMDP needs D >= 1".into()));
        }
        Ok(())
    }
}

/// An agent mid-episode. Serialises without its value table, which is
/// re-solved on demand after deserialisation.
#[derive(Clone, Serialize, Deserialize)]
pub struct Agent {
    config: AgentConfig,
    /// Hypotheses the agent plans over; for DP the single fixed prior.
    class: Arc<HypothesisClass>,
    hyper: HyperPosterior,
    /// BRMDP draw vector `x_m` for the current route.
    sampled: Option<Vec<u32>>,
    mixture: Vec<f64>,
    counts: CountState,
    /// 1-based index of the current (or next) route.
    route: usize,
    in_route: bool,
    /// Flights flown when the current table was solved.
    solved_at: usize,
    #[serde(skip)]
    table: Option<Arc<ValueTable>>,
    #[serde(skip)]
    cache: Option<Arc<TableCache>>,
}

impl std::fmt::Debug for Agent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Agent")
            .field("kind", &self.config.kind)
            .field("route", &self.route)
            .field("flight", &self.flight())
            .field("hyper", &self.hyper.weights)
            .field("sampled", &self.sampled)
            .finish()
    }
}

impl Agent {
    /// DP, MetaDP or BRMDP agent. `class` is ignored for DP, which plans with
    /// `config.dp_prior` (Beta(1,1) when unset).
    pub fn new(config: AgentConfig, class: Arc<HypothesisClass>) -> Result<Self> {
        let hyper = HyperPosterior::uniform(class.len());
        Self::with_hyper(config, class, hyper)
    }

    /// Same as [`Agent::new`] with an explicit initial hyper-prior `Q_1`.
    pub fn with_hyper(
        config: AgentConfig,
        class: Arc<HypothesisClass>,
        hyper: HyperPosterior,
    ) -> Result<Self> {
        config.validate()?;
        let k = class.num_airlines();
        let (class, hyper) = match config.kind {
            PolicyKind::Dp => {
                let prior = config
                    .dp_prior
                    .clone()
                    .unwrap_or_else(|| PriorHypothesis::uniform(k));
                if prior.num_airlines() != k {
                    return Err(Error::Dimension("DP prior does not match K".into()));
                }
                (Arc::new(HypothesisClass::single(prior)), HyperPosterior::degenerate(1, 0))
            }
            _ => {
                if hyper.len() != class.len() {
                    return Err(Error::Dimension(format!(
                        "{} hyper weights for {} hypotheses",
                        hyper.len(),
                        class.len()
                    )));
                }
                (class, hyper)
            }
        };
        let mixture = hyper.weights.clone();
        Ok(Self {
            config,
            class,
            hyper,
            sampled: None,
            mixture,
            counts: CountState::zeros(k),
            route: 1,
            in_route: false,
            solved_at: 0,
            table: None,
            cache: None,
        })
    }

    /// Share solved tables with other agents through `cache`.
    pub fn with_cache(mut self, cache: Arc<TableCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn kind(&self) -> PolicyKind {
        self.config.kind
    }

    pub fn class(&self) -> &HypothesisClass {
        &self.class
    }

    pub fn hyper(&self) -> &HyperPosterior {
        &self.hyper
    }

    pub fn sampled(&self) -> Option<&[u32]> {
        self.sampled.as_deref()
    }

    /// Weights the current route is planned with.
    pub fn mixture(&self) -> &[f64] {
        &self.mixture
    }

    pub fn counts(&self) -> &CountState {
        &self.counts
    }

    pub fn route(&self) -> usize {
        self.route
    }

    /// 1-based index of the next flight on the current route.
    pub fn flight(&self) -> usize {
        self.counts.flight_index()
    }

    pub fn in_route(&self) -> bool {
        self.in_route
    }

    pub fn table(&self) -> Option<&ValueTable> {
        self.table.as_deref()
    }

    pub fn begin_route<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        if self.in_route {
            return Err(Error::RouteIncomplete {
                observed: self.counts.total(),
                expected: self.config.horizon,
            });
        }
        self.counts = CountState::zeros(self.class.num_airlines());
        match self.config.kind {
            PolicyKind::Dp => {
                self.mixture = vec![1.0];
                self.sampled = None;
            }
            PolicyKind::MetaDp => {
                self.mixture = self.hyper.weights.clone();
                self.sampled = None;
            }
            PolicyKind::Brmdp { draws } => {
                let x = sample_multinomial(draws, &self.hyper.weights, rng);
                self.mixture = x.iter().map(|&c| f64::from(c) / f64::from(draws)).collect();
                self.sampled = Some(x);
            }
        }
        self.in_route = true;
        self.resolve()
    }

    fn resolve(&mut self) -> Result<()> {
        let spec = SolveSpec::full(
            self.config.horizon,
            self.config.gamma,
            self.config.rule,
            &self.class,
            &self.mixture,
        )
        .with_lookahead(self.config.lookahead)
        .with_base(self.counts.clone());
        let table = match &self.cache {
            Some(cache) => cache.get_or_solve(&spec)?,
            None => Arc::new(solve_backward(&spec)?),
        };
        self.table = Some(table);
        self.solved_at = self.counts.total();
        Ok(())
    }

    fn ensure_table(&mut self) -> Result<()> {
        if !self.in_route {
            return Err(Error::NoRoute);
        }
        if self.counts.total() >= self.config.horizon {
            return Err(Error::RouteComplete {
                flights: self.config.horizon,
            });
        }
        let stale = match &self.table {
            None => true,
            Some(t) => t.locate(&self.counts).is_err(),
        };
        if stale {
            self.resolve()?;
        }
        Ok(())
    }

    /// Choice probabilities at the current state.
    pub fn choice_probabilities(&mut self) -> Result<Vec<f64>> {
        self.ensure_table()?;
        let table = self.table.as_ref().expect("table solved");
        let values = table.action_values(&self.counts)?;
        Ok(choice_probabilities(values, &self.config.rule))
    }

    /// Samples an airline (0-based) from the policy at the current state.
    pub fn act<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<usize> {
        let probs = self.choice_probabilities()?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return Ok(k);
            }
        }
        Ok(probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1))
    }

    pub fn observe(&mut self, airline: usize, outcome: u8) -> Result<()> {
        if !self.in_route {
            return Err(Error::NoRoute);
        }
        if self.counts.total() >= self.config.horizon {
            return Err(Error::RouteComplete {
                flights: self.config.horizon,
            });
        }
        self.counts = update_counts(&self.counts, airline, outcome)?;
        let flown = self.counts.total();
        if self.config.lookahead < self.config.horizon && flown < self.config.horizon {
            let due = flown - self.solved_at >= self.config.resolve_every;
            let outside = self
                .table
                .as_ref()
                .map(|t| t.locate(&self.counts).is_err())
                .unwrap_or(true);
            if due || outside {
                self.resolve()?;
            }
        }
        Ok(())
    }

    pub fn end_route(&mut self) -> Result<()> {
        if !self.in_route {
            return Err(Error::NoRoute);
        }
        let observed = self.counts.total();
        if observed != self.config.horizon {
            return Err(Error::RouteIncomplete {
                observed,
                expected: self.config.horizon,
            });
        }
        if self.config.kind != PolicyKind::Dp {
            self.hyper = hyper_posterior_update(&self.hyper, &self.class, &self.counts)?;
        }
        self.in_route = false;
        self.route += 1;
        self.table = None;
        Ok(())
    }
}
