//! Route-level Monte Carlo likelihood for BRMDP(D).

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{hyper_sequence, route_log_path, ParticipantHistory, Planning};
use crate::beliefs::{HyperPosterior, HypothesisClass};
use crate::dp::TableCache;
use crate::error::{Error, Result};
use crate::policies::sample_multinomial;

/// B draws of `x ~ Multinomial(D, Q_m)` for one route, grouped by value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDraws {
    pub draws: u32,
    pub total: usize,
    /// Distinct draw vectors (sorted) with their multiplicities.
    pub groups: Vec<(Vec<u32>, usize)>,
}

pub fn draw_route_samples<R: Rng + ?Sized>(q: &HyperPosterior, draws: u32, b: usize, rng: &mut R) -> RouteDraws {
    let mut groups: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
    for _ in 0..b {
        *groups.entry(sample_multinomial(draws, &q.weights, rng)).or_default() += 1;
    }
    RouteDraws {
        draws,
        total: b,
        groups: groups.into_iter().collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    /// Sum of per-route log-likelihood estimates.
    pub estimate: f64,
    pub route_estimates: Vec<f64>,
    /// Delta-method standard error of each route's log estimate.
    pub route_se: Vec<f64>,
}

impl McEstimate {
    /// Standard error of the total, treating routes as independent.
    pub fn total_se(&self) -> f64 {
        self.route_se.iter().map(|s| s * s).sum::<f64>().sqrt()
    }
}

/// Log-mean-exp over grouped samples and the delta-method SE of its log.
fn combine(samples: &[(f64, usize)], b: usize) -> (f64, f64) {
    let a = samples.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    if a == f64::NEG_INFINITY {
        return (a, f64::NAN);
    }
    let bf = b as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for &(s, n) in samples {
        let e = (s - a).exp();
        sum += n as f64 * e;
        sum_sq += n as f64 * e * e;
    }
    let mean = sum / bf;
    let var = ((sum_sq - bf * mean * mean) / (bf - 1.0)).max(0.0);
    (a + mean.ln(), (var / bf).sqrt() / mean)
}

/// Estimates each route's likelihood from pre-drawn samples. Each distinct draw
/// vector is solved once and weighted by its multiplicity.
pub fn mc_from_draws(
    history: &ParticipantHistory,
    class: &HypothesisClass,
    plan: &Planning,
    draws: &[RouteDraws],
    cache: Option<&TableCache>,
) -> Result<McEstimate> {
    if draws.len() != history.num_routes() {
        return Err(Error::Dimension(format!(
            "{} draw sets for {} routes",
            draws.len(),
            history.num_routes()
        )));
    }
    let mut route_estimates = Vec::with_capacity(draws.len());
    let mut route_se = Vec::with_capacity(draws.len());
    for (route, rd) in history.routes.iter().zip(draws) {
        if rd.total < 2 {
            return Err(Error::InfeasibleSpec("Monte Carlo needs B >= 2".into()));
        }
        let d = f64::from(rd.draws);
        let samples = rd
            .groups
            .par_iter()
            .map(|(x, n)| {
                let w: Vec<f64> = x.iter().map(|&c| f64::from(c) / d).collect();
                Ok((route_log_path(route, class, &w, plan, cache)?, *n))
            })
            .collect::<Result<Vec<_>>>()?;
        let (est, se) = combine(&samples, rd.total);
        route_estimates.push(est);
        route_se.push(se);
    }
    Ok(McEstimate {
        estimate: route_estimates.iter().sum(),
        route_estimates,
        route_se,
    })
}

/// BRMDP(D) log-likelihood from `b` multinomial draws per route.
#[allow(clippy::too_many_arguments)]
pub fn loglik_brmdp_mc<R: Rng + ?Sized>(
    history: &ParticipantHistory,
    class: &HypothesisClass,
    q1: Option<&HyperPosterior>,
    plan: &Planning,
    draws: u32,
    b: usize,
    rng: &mut R,
    cache: Option<&TableCache>,
) -> Result<McEstimate> {
    if draws == 0 {
        return Err(Error::InfeasibleSpec("BRMDP needs D >= 1".into()));
    }
    if b < 2 {
        return Err(Error::InfeasibleSpec("Monte Carlo needs B >= 2".into()));
    }
    let qs = hyper_sequence(history, class, q1)?;
    let samples: Vec<RouteDraws> = qs.iter().map(|q| draw_route_samples(q, draws, b, rng)).collect();
    mc_from_draws(history, class, plan, &samples, cache)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beliefs::PriorHypothesis;
    use crate::dp::ChoiceRule;
    use crate::likelihood::loglik_metadp;
    use crate::simulate::Step;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_hypothesis_is_exact_with_zero_spread() {
        let class = HypothesisClass::single(PriorHypothesis::uniform(2));
        let steps = vec![Step { airline: 0, outcome: 1 }, Step { airline: 1, outcome: 0 }];
        let h = ParticipantHistory::new("p", None, 2, vec![steps.clone(), steps]).unwrap();
        let plan = Planning::new(ChoiceRule::eps_greedy(0.2).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mc = loglik_brmdp_mc(&h, &class, None, &plan, 3, 50, &mut rng, None).unwrap();
        let exact = loglik_metadp(&h, &class, None, &plan, None).unwrap();
        assert!((mc.estimate - exact).abs() < 1e-12);
        assert!(mc.route_se.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn combine_matches_direct_mean() {
        let s = [(-1.0, 2), (-3.0, 1), (-0.5, 1)];
        let (est, _) = combine(&s, 4);
        let direct = ((2.0 * (-1.0f64).exp() + (-3.0f64).exp() + (-0.5f64).exp()) / 4.0).ln();
        assert!((est - direct).abs() < 1e-14);
    }

    #[test]
    fn draws_are_grouped() {
        let q = HyperPosterior::new(vec![0.5, 0.5]).unwrap();
        let d = draw_route_samples(&q, 1, 1000, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(d.groups.len(), 2);
        assert_eq!(d.groups.iter().map(|g| g.1).sum::<usize>(), 1000);
    }

    #[test]
    fn too_few_draws() {
        let class = HypothesisClass::ascend_summit_example();
        let h = ParticipantHistory::new("p", None, 2, vec![vec![Step { airline: 0, outcome: 1 }]]).unwrap();
        let plan = Planning::new(ChoiceRule::eps_greedy(0.2).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(loglik_brmdp_mc(&h, &class, None, &plan, 1, 1, &mut rng, None).is_err());
    }
}
