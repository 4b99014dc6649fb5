use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Maps action values to choice probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChoiceRule<S = f64> {
    /// Argmax with probability `1 - epsilon` (ties split uniformly), uniform with `epsilon`.
    EpsGreedy { epsilon: S },
    /// `exp(v / tau)` normalised.
    Softmax { tau: S },
}

impl<S: Real> ChoiceRule<S> {
    pub fn eps_greedy(epsilon: S) -> Result<Self> {
        let rule = ChoiceRule::EpsGreedy { epsilon };
        rule.validate()?;
        Ok(rule)
    }

    pub fn softmax(tau: S) -> Result<Self> {
        let rule = ChoiceRule::Softmax { tau };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ChoiceRule::EpsGreedy { epsilon } => {
                if !(epsilon >= S::zero() && epsilon <= S::one()) {
                    return Err(Error::Domain(format!("epsilon {epsilon} is outside [0, 1]")));
                }
            }
            ChoiceRule::Softmax { tau } => {
                if !(tau > S::zero()) || !tau.is_finite() {
                    return Err(Error::Domain(format!("temperature {tau} must be positive")));
                }
            }
        }
        Ok(())
    }

    /// The noise parameter (epsilon or tau).
    pub fn parameter(&self) -> S {
        match *self {
            ChoiceRule::EpsGreedy { epsilon } => epsilon,
            ChoiceRule::Softmax { tau } => tau,
        }
    }

    pub fn cast<T: Real>(&self) -> ChoiceRule<T> {
        match *self {
            ChoiceRule::EpsGreedy { epsilon } => ChoiceRule::EpsGreedy {
                epsilon: T::of(epsilon.as_f64()),
            },
            ChoiceRule::Softmax { tau } => ChoiceRule::Softmax {
                tau: T::of(tau.as_f64()),
            },
        }
    }

    /// Expected action value under the rule's own choice distribution.
    pub fn state_value(&self, values: &[S]) -> S {
        let k = S::of(values.len() as f64);
        match *self {
            ChoiceRule::EpsGreedy { epsilon } => {
                let max = values.iter().copied().fold(S::neg_infinity(), S::max);
                let sum: S = values.iter().copied().sum();
                (S::one() - epsilon) * max + epsilon / k * sum
            }
            ChoiceRule::Softmax { tau } => {
                let max = values.iter().copied().fold(S::neg_infinity(), S::max);
                let mut num = S::zero();
                let mut den = S::zero();
                for &v in values {
                    let e = ((v - max) / tau).exp();
                    num += e * v;
                    den += e;
                }
                num / den
            }
        }
    }

    /// `(key, value)` pair for display: `eps:0.1` or `softmax:2`.
    pub fn label(&self) -> String {
        match *self {
            ChoiceRule::EpsGreedy { epsilon } => format!("eps:{epsilon}"),
            ChoiceRule::Softmax { tau } => format!("softmax:{tau}"),
        }
    }
}

impl std::str::FromStr for ChoiceRule<f64> {
    type Err = Error;

    /// Parses `eps:<v>` or `softmax:<v>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| Error::Domain(format!("rule {s:?} is not kind:value")))?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::Domain(format!("bad rule parameter {value:?}")))?;
        match kind.trim() {
            "eps" | "epsilon" => ChoiceRule::eps_greedy(v),
            "softmax" | "tau" => ChoiceRule::softmax(v),
            other => Err(Error::Domain(format!("unknown rule kind {other:?}"))),
        }
    }
}

/// Indices of the argmax set, with values within the scalar's tie tolerance counted as tied.
pub fn argmax_set<S: Real>(values: &[S]) -> Vec<usize> {
    let max = values.iter().copied().fold(S::neg_infinity(), S::max);
    let tol = S::of(S::TIE_TOL);
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| max - v <= tol)
        .map(|(i, _)| i)
        .collect()
}

pub fn choice_probabilities<S: Real>(values: &[S], rule: &ChoiceRule<S>) -> Vec<S> {
    let k = values.len();
    if k == 0 {
        return Vec::new();
    }
    let kf = S::of(k as f64);
    match *rule {
        ChoiceRule::EpsGreedy { epsilon } => {
            let best = argmax_set(values);
            let share = (S::one() - epsilon) / S::of(best.len() as f64);
            let mut probs = vec![epsilon / kf; k];
            for i in best {
                probs[i] += share;
            }
            probs
        }
        ChoiceRule::Softmax { tau } => {
            let max = values.iter().copied().fold(S::neg_infinity(), S::max);
            let exps: Vec<S> = values.iter().map(|&v| ((v - max) / tau).exp()).collect();
            let den: S = exps.iter().copied().sum();
            exps.into_iter().map(|e| e / den).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type ChoiceRule = super::ChoiceRule<f64>;

    #[test]
    fn eps_greedy_example() {
        let rule = ChoiceRule::eps_greedy(0.3).unwrap();
        let p = choice_probabilities(&[0.9, 0.5, 0.5], &rule);
        for (a, b) in p.iter().zip([0.8, 0.1, 0.1]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ties_are_uniform_for_any_epsilon() {
        for eps in [0.0, 0.2, 1.0] {
            let p = choice_probabilities(&[0.4, 0.4, 0.4 + 1e-12], &ChoiceRule::eps_greedy(eps).unwrap());
            for x in &p {
                assert!((x - 1.0 / 3.0).abs() < 1e-12, "{p:?}");
            }
        }
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let p = choice_probabilities(&[3.0, 1.0], &ChoiceRule::eps_greedy(1.0).unwrap());
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_limits() {
        let hot = choice_probabilities(&[0.9, 0.1, 0.3], &ChoiceRule::softmax(1e6).unwrap());
        assert!(hot.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-5));
        let cold = choice_probabilities(&[0.9, 0.1, 0.3], &ChoiceRule::softmax(1e-8).unwrap());
        assert!((cold[0] - 1.0).abs() < 1e-12);
        let sum: f64 = cold.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_handles_large_values() {
        let p = choice_probabilities(&[1000.0, 999.0], &ChoiceRule::softmax(0.1).unwrap());
        assert!(p.iter().all(|x| x.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_parameters() {
        assert!(ChoiceRule::eps_greedy(-0.1).is_err());
        assert!(ChoiceRule::eps_greedy(1.1).is_err());
        assert!(ChoiceRule::softmax(0.0).is_err());
    }

    #[test]
    fn parse_rules() {
        assert_eq!("eps:0.1".parse::<ChoiceRule>().unwrap(), ChoiceRule::EpsGreedy { epsilon: 0.1 });
        assert_eq!("softmax:2".parse::<ChoiceRule>().unwrap(), ChoiceRule::Softmax { tau: 2.0 });
        assert!("greedy".parse::<ChoiceRule>().is_err());
        assert!("eps:2".parse::<ChoiceRule>().is_err());
    }

    #[test]
    fn state_value_matches_probability_weighting() {
        let values = [0.7, 1.3, 0.2];
        for rule in [ChoiceRule::eps_greedy(0.25).unwrap(), ChoiceRule::softmax(0.4).unwrap()] {
            let p = choice_probabilities(&values, &rule);
            let direct: f64 = p.iter().zip(&values).map(|(p, v)| p * v).sum();
            assert!((direct - rule.state_value(&values)).abs() < 1e-14);
        }
    }
}
