//! Workbench for hierarchical Bernoulli-bandit meta-learning.
//!
//! The crate is organised bottom-up:
//!
//! * [`env`] samples the hierarchical Beta–Bernoulli airline environment.
//! * [`beliefs`] holds within-route count states and the cross-route
//!   hyper-posterior over a finite class of prior hypotheses.
//! * [`dp`] is a single backward-induction solver over the count-state space,
//!   generic over the scalar type and parameterised by a hypothesis mixture
//!   and a choice rule. DP, MetaDP and BRMDP are all instances of it.
//! * [`policies`] wraps the solver in stateful multi-route agents.
//! * [`simulate`] runs agents in environments and computes the behavioural
//!   metrics (best-airline rate, pseudo-regret).
//! * [`likelihood`] evaluates observed choice histories under each policy,
//!   exactly or by Monte Carlo, and sweeps noise grids.
//! * [`io`] reads and writes sessions, environment specs and CSV exports.

pub mod beliefs;
pub mod combinatorics;
pub mod dp;
pub mod env;
pub mod error;
pub mod io;
pub mod likelihood;
pub mod policies;
pub mod rng;
pub mod scalar;
pub mod simulate;

pub use beliefs::{CountState, HyperPosterior, HypothesisClass, PriorHypothesis};
pub use env::{AirlineHyperPrior, ConditionLabel, ConditionSpec, EnvironmentSpec, RouteRates};
pub use error::{Error, Result};
pub use policies::{Agent, AgentConfig, PolicyKind};
pub use scalar::Real;

/// Value table over double-precision scalars; the default for policies and likelihoods.
pub type ValueTable = dp::ValueTable<f64>;
/// Single-precision value table.
pub type ValueTable32 = dp::ValueTable<f32>;
/// Choice rule over `f64`.
pub type ChoiceRule = dp::ChoiceRule<f64>;
/// Solver input over `f64`.
pub type SolveSpec<'a> = dp::SolveSpec<'a, f64>;
