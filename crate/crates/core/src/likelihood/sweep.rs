//! Grid sweeps of policy log-likelihoods over the choice-rule noise parameter.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    draw_route_samples, hyper_sequence, loglik_brmdp_exact, loglik_dp, loglik_metadp, mc_from_draws,
    ParticipantHistory, Planning, RouteDraws, DEFAULT_ENUMERATION_CAP,
};
use crate::beliefs::{HyperPosterior, HypothesisClass};
use crate::combinatorics::composition_count;
use crate::dp::{ChoiceRule, TableCache};
use crate::error::{Error, Result};
use crate::policies::PolicyKind;
use crate::rng::{self, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Eps,
    Softmax,
}

/// Ascending noise values for one choice-rule family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub kind: GridKind,
    pub values: Vec<f64>,
}

impl Grid {
    /// `n` evenly spaced values from `lo` to `hi` inclusive.
    pub fn even(kind: GridKind, lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 0 || !(lo <= hi) {
            return Err(Error::Domain(format!("grid {lo}..{hi} with {n} points")));
        }
        let values = if n == 1 {
            vec![lo]
        } else {
            (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
        };
        Self::new(kind, values)
    }

    pub fn new(kind: GridKind, mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("grid".into()));
        }
        values.sort_by(f64::total_cmp);
        let grid = Self { kind, values };
        for i in 0..grid.values.len() {
            grid.rule(i)?;
        }
        Ok(grid)
    }

    /// 20 values of epsilon in [0.01, 0.5].
    pub fn default_eps() -> Self {
        Self::even(GridKind::Eps, 0.01, 0.5, 20).expect("valid default grid")
    }

    /// 20 temperatures in [0.1, 5].
    pub fn default_softmax() -> Self {
        Self::even(GridKind::Softmax, 0.1, 5.0, 20).expect("valid default grid")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn rule(&self, i: usize) -> Result<ChoiceRule> {
        match self.kind {
            GridKind::Eps => ChoiceRule::eps_greedy(self.values[i]),
            GridKind::Softmax => ChoiceRule::softmax(self.values[i]),
        }
    }
}

impl FromStr for Grid {
    type Err = Error;

    /// `eps:lo:hi:n`, `softmax:lo:hi:n`, or a comma list such as `eps:0.1,0.2`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Domain(format!("bad grid {s:?}"));
        let mut parts = s.split(':');
        let kind = match parts.next().map(str::trim) {
            Some("eps") | Some("epsilon") => GridKind::Eps,
            Some("softmax") | Some("tau") => GridKind::Softmax,
            _ => return Err(bad()),
        };
        let rest: Vec<&str> = parts.collect();
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| bad());
        match rest.as_slice() {
            [lo, hi, n] => {
                let n: usize = n.trim().parse().map_err(|_| bad())?;
                Grid::even(kind, num(lo)?, num(hi)?, n)
            }
            [list] => Grid::new(kind, list.split(',').map(num).collect::<Result<_>>()?),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            GridKind::Eps => "eps",
            GridKind::Softmax => "softmax",
        };
        let vals: Vec<String> = self.values.iter().map(|v| format!("{v}")).collect();
        write!(f, "{kind}:{}", vals.join(","))
    }
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub class: Arc<HypothesisClass>,
    /// Hyper-prior at route 1; uniform when `None`.
    pub q1: Option<HyperPosterior>,
    pub gamma: f64,
    pub lookahead: Option<usize>,
    /// Monte Carlo draws per route for BRMDP.
    pub b: usize,
    pub seed: u64,
    /// Use exact enumeration for BRMDP when it fits under `cap`.
    pub exact_brmdp: bool,
    pub cap: u64,
}

impl SweepOptions {
    pub fn new(class: Arc<HypothesisClass>) -> Self {
        Self {
            class,
            q1: None,
            gamma: 1.0,
            lookahead: None,
            b: 2000,
            seed: 0,
            exact_brmdp: false,
            cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantFit {
    pub participant_id: String,
    /// One log-likelihood per grid value.
    pub loglik: Vec<f64>,
    /// Monte Carlo fits: `route_se[grid][route]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route_se: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub policy: PolicyKind,
    pub grid: Grid,
    pub gamma: f64,
    pub lookahead: Option<usize>,
    /// Total log-likelihood across participants per grid value.
    pub total: Vec<f64>,
    pub participants: Vec<ParticipantFit>,
    /// Draws per route when the fit used Monte Carlo.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_se: Option<Vec<f64>>,
}

impl FitResult {
    /// `(grid index, grid value, total log-likelihood)` of the best grid point.
    /// Ties go to the smaller noise value.
    pub fn best(&self) -> (usize, f64, f64) {
        let mut best = 0;
        for (i, v) in self.total.iter().enumerate() {
            if *v > self.total[best] {
                best = i;
            }
        }
        (best, self.grid.values[best], self.total[best])
    }
}

fn fit_participant(
    pi: usize,
    history: &ParticipantHistory,
    policy: PolicyKind,
    grid: &Grid,
    opts: &SweepOptions,
    cache: &TableCache,
) -> Result<ParticipantFit> {
    let plan = |i: usize| -> Result<Planning> {
        Ok(Planning {
            rule: grid.rule(i)?,
            gamma: opts.gamma,
            lookahead: opts.lookahead,
        })
    };
    let class = &*opts.class;
    let q1 = opts.q1.as_ref();
    let mut loglik = Vec::with_capacity(grid.len());
    let mut route_se = None;
    match policy {
        PolicyKind::Dp => {
            for i in 0..grid.len() {
                loglik.push(loglik_dp(history, None, &plan(i)?, Some(cache))?);
            }
        }
        PolicyKind::MetaDp => {
            for i in 0..grid.len() {
                loglik.push(loglik_metadp(history, class, q1, &plan(i)?, Some(cache))?);
            }
        }
        PolicyKind::Brmdp { draws } => {
            let exact = opts.exact_brmdp && composition_count(draws as usize, class.len())? <= opts.cap;
            if exact {
                for i in 0..grid.len() {
                    loglik.push(loglik_brmdp_exact(history, class, q1, &plan(i)?, draws, opts.cap, Some(cache))?);
                }
            } else {
                // Draws depend only on the hyper-posterior path, so every grid
                // point reuses the same samples.
                let qs = hyper_sequence(history, class, q1)?;
                let samples: Vec<RouteDraws> = qs
                    .iter()
                    .enumerate()
                    .map(|(m, q)| {
                        let mut rng = rng::stream(
                            opts.seed,
                            Domain::MonteCarlo,
                            &[pi as u64, u64::from(draws), m as u64],
                        );
                        draw_route_samples(q, draws, opts.b, &mut rng)
                    })
                    .collect();
                let mut ses = Vec::with_capacity(grid.len());
                for i in 0..grid.len() {
                    let est = mc_from_draws(history, class, &plan(i)?, &samples, Some(cache))?;
                    loglik.push(est.estimate);
                    ses.push(est.route_se);
                }
                route_se = Some(ses);
            }
        }
    }
    Ok(ParticipantFit {
        participant_id: history.participant_id.clone(),
        loglik,
        route_se,
    })
}

/// Evaluates every policy at every grid value, summing over participants.
pub fn sweep(
    histories: &[ParticipantHistory],
    policies: &[PolicyKind],
    grid: &Grid,
    opts: &SweepOptions,
) -> Result<Vec<FitResult>> {
    if histories.is_empty() {
        return Err(Error::Empty("no histories to fit".into()));
    }
    if opts.b < 2 {
        return Err(Error::InfeasibleSpec("Monte Carlo needs B >= 2".into()));
    }
    let cache = TableCache::default();
    let mut results = Vec::with_capacity(policies.len());
    for &policy in policies {
        log::info!("fitting {policy} over {} grid points", grid.len());
        let participants = histories
            .par_iter()
            .enumerate()
            .map(|(pi, h)| fit_participant(pi, h, policy, grid, opts, &cache))
            .collect::<Result<Vec<_>>>()?;
        let total = (0..grid.len())
            .map(|i| participants.iter().map(|p| p.loglik[i]).sum())
            .collect();
        let mc = participants.iter().all(|p| p.route_se.is_some());
        let total_se = mc.then(|| {
            (0..grid.len())
                .map(|i| {
                    participants
                        .iter()
                        .flat_map(|p| &p.route_se.as_ref().expect("mc fit")[i])
                        .map(|s| s * s)
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        });
        results.push(FitResult {
            policy,
            grid: grid.clone(),
            gamma: opts.gamma,
            lookahead: opts.lookahead,
            total,
            participants,
            b: mc.then_some(opts.b),
            total_se,
        });
    }
    Ok(results)
}

/// Policy-by-grid table: one row per policy, one column per grid value.
pub fn fit_table_csv(results: &[FitResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if let Some(first) = results.first() {
        let mut header = vec!["policy".to_string()];
        header.extend(first.grid.values.iter().map(|v| format!("{v:.3}")));
        w.write_record(&header).map_err(csv_err)?;
    }
    for r in results {
        let mut row = vec![r.policy.label()];
        row.extend(r.total.iter().map(|v| format!("{v:.2}")));
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
