//! Hierarchical Beta–Bernoulli airline environment.
//!
//! Each airline `k` has a Beta hyper-prior; on route `m` its on-time rate is
//! an independent draw from that Beta, and each flight on that airline is a
//! Bernoulli draw from the route rate.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

pub const AIRLINE_NAMES: [&str; 3] = ["Ascend", "Summit", "DynaAir"];

/// Display name for airline `k` (0-based).
pub fn airline_name(k: usize) -> String {
    AIRLINE_NAMES
        .get(k)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("Airline {}", k + 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AirlineHyperPrior {
    pub alpha: f64,
    pub beta: f64,
}

impl AirlineHyperPrior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::Domain(format!(
                "Beta shapes must be positive and finite (alpha={alpha}, beta={beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta;
        self.alpha * self.beta / (s * s * (s + 1.0))
    }
}

/// Inverts the Beta moment map: returns `(alpha, beta)` with mean `mu` and variance `sigma2`.
pub fn beta_params_from_moments(mu: f64, sigma2: f64) -> Result<(f64, f64)> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::Domain(format!("mean {mu} is outside (0, 1)")));
    }
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::Domain(format!("variance {sigma2} must be positive")));
    }
    let bound = mu * (1.0 - mu);
    if sigma2 >= bound {
        return Err(Error::InfeasibleVariance { sigma2, bound });
    }
    let strength = bound / sigma2 - 1.0;
    let alpha = mu * strength;
    Ok((alpha, strength - alpha))
}

/// The four cells of the experimental design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConditionLabel {
    FarLow,
    FarHigh,
    CloseLow,
    CloseHigh,
}

impl ConditionLabel {
    pub const ALL: [ConditionLabel; 4] = [
        ConditionLabel::FarLow,
        ConditionLabel::FarHigh,
        ConditionLabel::CloseLow,
        ConditionLabel::CloseHigh,
    ];

    pub fn spec(self) -> ConditionSpec {
        let (means, variance) = match self {
            ConditionLabel::FarLow => (vec![0.2, 0.5, 0.8], 0.02),
            ConditionLabel::FarHigh => (vec![0.2, 0.5, 0.8], 0.04),
            ConditionLabel::CloseLow => (vec![0.4, 0.6, 0.8], 0.02),
            ConditionLabel::CloseHigh => (vec![0.4, 0.6, 0.8], 0.04),
        };
        ConditionSpec {
            label: Some(self),
            means,
            variance,
        }
    }
}

impl fmt::Display for ConditionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ConditionLabel::FarLow => "FarLow",
            ConditionLabel::FarHigh => "FarHigh",
            ConditionLabel::CloseLow => "CloseLow",
            ConditionLabel::CloseHigh => "CloseHigh",
        };
        f.write_str(s)
    }
}

impl FromStr for ConditionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "farlow" => Ok(ConditionLabel::FarLow),
            "farhigh" => Ok(ConditionLabel::FarHigh),
            "closelow" => Ok(ConditionLabel::CloseLow),
            "closehigh" => Ok(ConditionLabel::CloseHigh),
            _ => Err(Error::Domain(format!("unknown condition label {s:?}"))),
        }
    }
}

/// Moment parameterisation of an environment: per-airline means and a shared variance.
/// `label` is `None` for custom conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub label: Option<ConditionLabel>,
    pub means: Vec<f64>,
    pub variance: f64,
}

impl ConditionSpec {
    pub fn custom(means: Vec<f64>, variance: f64) -> Result<Self> {
        let spec = Self {
            label: None,
            means,
            variance,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.len() < 2 {
            return Err(Error::InvalidEnvironment(format!(
                "need at least two airlines, got {}",
                self.means.len()
            )));
        }
        for &mu in &self.means {
            beta_params_from_moments(mu, self.variance)?;
        }
        Ok(())
    }

    pub fn hyper_priors(&self) -> Result<Vec<AirlineHyperPrior>> {
        self.means
            .iter()
            .map(|&mu| {
                let (a, b) = beta_params_from_moments(mu, self.variance)?;
                AirlineHyperPrior::new(a, b)
            })
            .collect()
    }
}

/// Generative truth of an experiment: `k` airlines, `m` routes of `t` flights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub k: usize,
    pub m: usize,
    pub t: usize,
    pub seed: u64,
    pub hyper_priors: Vec<AirlineHyperPrior>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition_label: Option<ConditionLabel>,
}

impl EnvironmentSpec {
    pub fn new(
        hyper_priors: Vec<AirlineHyperPrior>,
        routes: usize,
        flights: usize,
        seed: u64,
    ) -> Result<Self> {
        let spec = Self {
            k: hyper_priors.len(),
            m: routes,
            t: flights,
            seed,
            hyper_priors,
            condition_label: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidEnvironment(format!(
                "K must be at least 2, got {}",
                self.k
            )));
        }
        if self.m < 1 || self.t < 1 {
            return Err(Error::InvalidEnvironment(format!(
                "M and T must be positive (M={}, T={})",
                self.m, self.t
            )));
        }
        if self.hyper_priors.len() != self.k {
            return Err(Error::InvalidEnvironment(format!(
                "{} hyper-priors for K={}",
                self.hyper_priors.len(),
                self.k
            )));
        }
        for hp in &self.hyper_priors {
            AirlineHyperPrior::new(hp.alpha, hp.beta)?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serialises");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Same spec with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

pub fn spec_from_condition(
    cond: &ConditionSpec,
    routes: usize,
    flights: usize,
    seed: u64,
) -> Result<EnvironmentSpec> {
    cond.validate()?;
    let mut spec = EnvironmentSpec::new(cond.hyper_priors()?, routes, flights, seed)?;
    spec.condition_label = cond.label;
    Ok(spec)
}

/// Latent on-time rates of every airline on one route; `route` is 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRates {
    pub route: usize,
    pub rates: Vec<f64>,
}

impl RouteRates {
    pub fn new(route: usize, rates: Vec<f64>) -> Result<Self> {
        if let Some(bad) = rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Domain(format!("rate {bad} is outside [0, 1]")));
        }
        Ok(Self { route, rates })
    }

    pub fn best_rate(&self) -> f64 {
        self.rates.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn worst_rate(&self) -> f64 {
        self.rates.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Draws the K route rates for route `m` (1-based). Each airline's draw uses its
/// own stream keyed by `(seed, m, k)`, so results do not depend on call order.
pub fn sample_route_rates(spec: &EnvironmentSpec, m: usize) -> Result<RouteRates> {
    if m < 1 || m > spec.m {
        return Err(Error::Index {
            index: m,
            len: spec.m,
        });
    }
    let rates = spec
        .hyper_priors
        .iter()
        .enumerate()
        .map(|(k, hp)| {
            let mut rng = rng::stream(spec.seed, Domain::RouteRate, &[m as u64, k as u64]);
            let beta = Beta::new(hp.alpha, hp.beta)
                .map_err(|e| Error::Domain(format!("Beta({}, {}): {e}", hp.alpha, hp.beta)))?;
            Ok(beta.sample(&mut rng).clamp(0.0, 1.0))
        })
        .collect::<Result<Vec<_>>>()?;
    RouteRates::new(m, rates)
}

/// Bernoulli draw: 1 (on time) with probability `theta`.
pub fn sample_outcome<R: Rng + ?Sized>(theta: f64, rng: &mut R) -> Result<u8> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Domain(format!("theta {theta} is outside [0, 1]")));
    }
    let u: f64 = rng.random();
    Ok(u8::from(u < theta))
}

/// A realised environment: the spec plus its route-rate matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub spec: EnvironmentSpec,
    pub routes: Vec<RouteRates>,
}

impl Environment {
    /// Samples a fresh rate matrix from the spec's seed.
    pub fn realize(spec: EnvironmentSpec) -> Result<Self> {
        spec.validate()?;
        let routes = (1..=spec.m)
            .map(|m| sample_route_rates(&spec, m))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec, routes })
    }

    /// Pins a given rate matrix (e.g. one shared across sessions of a condition).
    pub fn with_rates(spec: EnvironmentSpec, routes: Vec<RouteRates>) -> Result<Self> {
        spec.validate()?;
        if routes.len() != spec.m {
            return Err(Error::Dimension(format!(
                "{} route rate rows for M={}",
                routes.len(),
                spec.m
            )));
        }
        for (i, r) in routes.iter().enumerate() {
            if r.rates.len() != spec.k {
                return Err(Error::Dimension(format!(
                    "route {} has {} rates for K={}",
                    i + 1,
                    r.rates.len(),
                    spec.k
                )));
            }
            RouteRates::new(r.route, r.rates.clone())?;
        }
        Ok(Self { spec, routes })
    }

    pub fn rates(&self, route: usize) -> &RouteRates {
        &self.routes[route - 1]
    }

    /// Outcome of flying `airline` (0-based) on flight `flight` of route `route`
    /// (both 1-based). Deterministic in `(seed, route, airline, flight)`.
    pub fn outcome(&self, route: usize, flight: usize, airline: usize) -> Result<u8> {
        if route < 1 || route > self.spec.m {
            return Err(Error::Index {
                index: route,
                len: self.spec.m,
            });
        }
        if flight < 1 || flight > self.spec.t {
            return Err(Error::Index {
                index: flight,
                len: self.spec.t,
            });
        }
        let theta = *self
            .rates(route)
            .rates
            .get(airline)
            .ok_or(Error::Index {
                index: airline,
                len: self.spec.k,
            })?;
        let mut rng = rng::stream(
            self.spec.seed,
            Domain::Outcome,
            &[route as u64, airline as u64, flight as u64],
        );
        sample_outcome(theta, &mut rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn moments(a: f64, b: f64) -> (f64, f64) {
        let hp = AirlineHyperPrior { alpha: a, beta: b };
        (hp.mean(), hp.variance())
    }

    #[test]
    fn uniform_beta_from_moments() {
        let (a, b) = beta_params_from_moments(0.5, 1.0 / 12.0).unwrap();
        assert!((a - 1.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn skewed_beta_from_moments() {
        let (a, b) = beta_params_from_moments(0.8, 0.02).unwrap();
        assert!((a - 5.6).abs() < 1e-12, "{a}");
        assert!((b - 1.4).abs() < 1e-12, "{b}");
        let (mu, s2) = moments(a, b);
        assert!((mu - 0.8).abs() < 1e-12 && (s2 - 0.02).abs() < 1e-12);
    }

    #[test]
    fn bernoulli_bound_is_infeasible() {
        assert!(matches!(
            beta_params_from_moments(0.5, 0.25),
            Err(Error::InfeasibleVariance { .. })
        ));
        assert!(matches!(beta_params_from_moments(1.0, 0.01), Err(Error::Domain(_))));
        assert!(matches!(beta_params_from_moments(0.0, 0.01), Err(Error::Domain(_))));
    }

    #[test]
    fn far_low_hyper_priors() {
        let spec = spec_from_condition(&ConditionLabel::FarLow.spec(), 10, 10, 1).unwrap();
        let expect = [(1.4, 5.6), (5.75, 5.75), (5.6, 1.4)];
        assert_eq!(spec.k, 3);
        for (hp, (a, b)) in spec.hyper_priors.iter().zip(expect) {
            assert!((hp.alpha - a).abs() < 1e-12 && (hp.beta - b).abs() < 1e-12, "{hp:?}");
        }
        assert_eq!(spec.condition_label, Some(ConditionLabel::FarLow));
        let again = spec_from_condition(&ConditionLabel::FarLow.spec(), 10, 10, 1).unwrap();
        assert_eq!(spec, again);
    }

    #[test]
    fn single_airline_rejected() {
        let cond = ConditionSpec {
            label: None,
            means: vec![0.5],
            variance: 0.01,
        };
        assert!(matches!(
            spec_from_condition(&cond, 1, 1, 0),
            Err(Error::InvalidEnvironment(_))
        ));
        let hp = AirlineHyperPrior::new(1.0, 1.0).unwrap();
        assert!(EnvironmentSpec::new(vec![hp], 1, 1, 0).is_err());
    }

    #[test]
    fn condition_labels_parse() {
        for label in ConditionLabel::ALL {
            assert_eq!(label.to_string().parse::<ConditionLabel>().unwrap(), label);
        }
        assert_eq!("far-low".parse::<ConditionLabel>().unwrap(), ConditionLabel::FarLow);
        assert!("medium".parse::<ConditionLabel>().is_err());
    }

    #[test]
    fn route_rates_are_reproducible() {
        let spec = spec_from_condition(&ConditionLabel::CloseHigh.spec(), 10, 10, 99).unwrap();
        let a = sample_route_rates(&spec, 4).unwrap();
        let b = sample_route_rates(&spec, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_route_rates(&spec, 5).unwrap());
        assert!(sample_route_rates(&spec, 0).is_err());
        assert!(sample_route_rates(&spec, 11).is_err());
    }

    #[test]
    fn concentrated_hyper_prior_pins_rates() {
        let hp = AirlineHyperPrior::new(1e6, 1e6).unwrap();
        let spec = EnvironmentSpec::new(vec![hp; 3], 1000, 1, 5).unwrap();
        let env = Environment::realize(spec).unwrap();
        let within = env
            .routes
            .iter()
            .flat_map(|r| r.rates.iter())
            .filter(|&&r| (r - 0.5).abs() < 0.01)
            .count();
        assert!(within as f64 >= 0.999 * 3000.0, "{within}");
    }

    #[test]
    fn outcome_extremes_and_frequency() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        assert_eq!(sample_outcome(1.0, &mut rng).unwrap(), 1);
        assert_eq!(sample_outcome(0.0, &mut rng).unwrap(), 0);
        assert!(sample_outcome(1.5, &mut rng).is_err());
        let n = 100_000;
        let hits: u32 = (0..n).map(|_| u32::from(sample_outcome(0.8, &mut rng).unwrap())).sum();
        let mean = f64::from(hits) / n as f64;
        // binomial sd is 0.00126; 0.01 is ~8 sd.
        assert!((mean - 0.8).abs() < 0.01, "{mean}");
    }

    #[test]
    fn environment_outcomes_are_order_independent() {
        let spec = spec_from_condition(&ConditionLabel::FarLow.spec(), 3, 5, 11).unwrap();
        let env = Environment::realize(spec.clone()).unwrap();
        let env2 = Environment::realize(spec).unwrap();
        assert_eq!(env, env2);
        let forward: Vec<u8> = (1..=5).map(|t| env.outcome(2, t, 1).unwrap()).collect();
        let backward: Vec<u8> = (1..=5).rev().map(|t| env2.outcome(2, t, 1).unwrap()).collect();
        assert_eq!(forward, backward.into_iter().rev().collect::<Vec<_>>());
    }

    #[test]
    fn spec_json_shape() {
        let spec = spec_from_condition(&ConditionLabel::FarLow.spec(), 10, 10, 42).unwrap();
        let v: serde_json::Value = serde_json::to_value(&spec).unwrap();
        for key in ["k", "m", "t", "seed", "hyper_priors", "condition_label"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert!(v["hyper_priors"][0].get("alpha").is_some());
        let back: EnvironmentSpec = serde_json::from_value(v).unwrap();
        assert_eq!(back, spec);
    }
}
