//! Running agents in environments and the behavioural metrics.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beliefs::{HyperPosterior, HypothesisClass};
use crate::dp::TableCache;
use crate::env::{ConditionLabel, Environment, EnvironmentSpec, RouteRates};
use crate::error::{Error, Result};
use crate::policies::{Agent, AgentConfig};
use crate::rng::{self, Domain, StreamRng};

/// One flight: the chosen airline (0-based) and its outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub airline: usize,
    pub outcome: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteTrace {
    pub rates: RouteRates,
    pub steps: Vec<Step>,
}

impl RouteTrace {
    pub fn on_time(&self) -> usize {
        self.steps.iter().filter(|s| s.outcome == 1).count()
    }
}

/// A full episode: every route's latent rates and its flights in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub env_hash: String,
    pub condition: Option<ConditionLabel>,
    pub routes: Vec<RouteTrace>,
}

impl Trajectory {
    pub fn num_routes(&self) -> usize {
        self.routes.len()
    }

    pub fn num_flights(&self) -> usize {
        self.routes.first().map_or(0, |r| r.steps.len())
    }
}

/// Plays every route of `env`: begin, `T` rounds of act/outcome/observe, end.
/// Outcomes come from the environment's own streams, so two agents making the
/// same choice on the same flight see the same outcome.
pub fn run_episode(agent: &mut Agent, env: &Environment, rng: &mut StreamRng) -> Result<Trajectory> {
    let t = env.spec.t;
    if agent.config().horizon != t {
        return Err(Error::Dimension(format!(
            "agent horizon {} for an environment with T={t}",
            agent.config().horizon
        )));
    }
    if agent.class().num_airlines() != env.spec.k {
        return Err(Error::Dimension(format!(
            "agent plans over {} airlines, environment has {}",
            agent.class().num_airlines(),
            env.spec.k
        )));
    }
    let mut routes = Vec::with_capacity(env.spec.m);
    for m in 1..=env.spec.m {
        agent.begin_route(rng)?;
        let mut steps = Vec::with_capacity(t);
        for flight in 1..=t {
            let airline = agent.act(rng)?;
            let outcome = env.outcome(m, flight, airline)?;
            agent.observe(airline, outcome)?;
            steps.push(Step { airline, outcome });
        }
        agent.end_route()?;
        routes.push(RouteTrace {
            rates: env.rates(m).clone(),
            steps,
        });
    }
    Ok(Trajectory {
        env_hash: env.spec.content_hash(),
        condition: env.spec.condition_label,
        routes,
    })
}

fn check_airline(rates: &RouteRates, airline: usize) -> Result<()> {
    if airline >= rates.rates.len() {
        return Err(Error::Index {
            index: airline,
            len: rates.rates.len(),
        });
    }
    Ok(())
}

/// `max_k theta_k - theta_airline`.
pub fn pseudo_regret(rates: &RouteRates, airline: usize) -> Result<f64> {
    check_airline(rates, airline)?;
    Ok(rates.best_rate() - rates.rates[airline])
}

/// 1 when `airline` is in the argmax set of the true rates.
pub fn best_airline_indicator(rates: &RouteRates, airline: usize) -> Result<u8> {
    check_airline(rates, airline)?;
    Ok(u8::from(rates.rates[airline] >= rates.best_rate()))
}

/// How a batch draws its environments.
#[derive(Debug, Clone)]
pub struct BatchSpec {
    pub env: EnvironmentSpec,
    pub runs: usize,
    pub seed: u64,
    /// Reuse the spec's own rate matrix in every replication instead of
    /// drawing fresh rates per replication.
    pub pin_rates: bool,
}

impl BatchSpec {
    pub fn new(env: EnvironmentSpec, runs: usize, seed: u64) -> Self {
        Self {
            env,
            runs,
            seed,
            pin_rates: false,
        }
    }

    /// Environment of replication `r` (0-based).
    pub fn environment(&self, r: usize) -> Result<Environment> {
        let spec = if self.pin_rates {
            self.env.clone()
        } else {
            self.env
                .with_seed(rng::derive_seed(self.seed, Domain::Replication, &[r as u64]))
        };
        Environment::realize(spec)
    }
}

/// Runs `batch.runs` independent episodes in parallel. Replication `r` uses its
/// own environment and agent streams derived from `(batch.seed, r)`, so the
/// result does not depend on scheduling.
pub fn simulate_batch(
    batch: &BatchSpec,
    config: &AgentConfig,
    class: Arc<HypothesisClass>,
    hyper: Option<HyperPosterior>,
) -> Result<Vec<Trajectory>> {
    let cache = Arc::new(TableCache::default());
    (0..batch.runs)
        .into_par_iter()
        .map(|r| {
            let env = batch.environment(r)?;
            let hyper = hyper.clone().unwrap_or_else(|| HyperPosterior::uniform(class.len()));
            let mut agent = Agent::with_hyper(config.clone(), class.clone(), hyper)?.with_cache(cache.clone());
            let mut rng = rng::stream(batch.seed, Domain::Agent, &[r as u64]);
            run_episode(&mut agent, &env, &mut rng)
        })
        .collect()
}

/// Route-level aggregates for one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteMetricRow {
    pub replication_id: usize,
    /// 1-based.
    pub route: usize,
    /// Number of flights on which a best airline was chosen.
    pub i_best: u32,
    pub regret: f64,
    pub theta_best: f64,
}

/// Per-(route, flight) means over a batch plus per-route rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub replications: usize,
    pub routes: usize,
    pub flights: usize,
    /// `best_rate[m][t]`: share of replications choosing a best airline.
    pub best_rate: Vec<Vec<f64>>,
    pub best_var: Vec<Vec<f64>>,
    pub regret_mean: Vec<Vec<f64>>,
    pub regret_var: Vec<Vec<f64>>,
    /// Mean best latent rate per route.
    pub theta_best_mean: Vec<f64>,
    pub route_rows: Vec<RouteMetricRow>,
}

impl MetricSeries {
    /// Mean of `I_m^best` over replications, per route.
    pub fn route_best_mean(&self) -> Vec<f64> {
        self.mean_by_route(|r| f64::from(r.i_best))
    }

    pub fn route_regret_mean(&self) -> Vec<f64> {
        self.mean_by_route(|r| r.regret)
    }

    fn mean_by_route(&self, f: impl Fn(&RouteMetricRow) -> f64) -> Vec<f64> {
        let mut sums = vec![0.0; self.routes];
        for row in &self.route_rows {
            sums[row.route - 1] += f(row);
        }
        sums.into_iter().map(|s| s / self.replications as f64).collect()
    }
}

fn mean_var(sum: f64, sum_sq: f64, n: f64) -> (f64, f64) {
    let mean = sum / n;
    let var = if n > 1.0 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    (mean, var)
}

pub fn aggregate_metrics(trajectories: &[Trajectory]) -> Result<MetricSeries> {
    let first = trajectories.first().ok_or_else(|| Error::Empty("no trajectories".into()))?;
    let (routes, flights) = (first.num_routes(), first.num_flights());
    let mut best = vec![vec![(0.0, 0.0); flights]; routes];
    let mut regret = vec![vec![(0.0, 0.0); flights]; routes];
    let mut theta_best = vec![0.0; routes];
    let mut route_rows = Vec::with_capacity(trajectories.len() * routes);
    for (rep, traj) in trajectories.iter().enumerate() {
        if traj.num_routes() != routes || traj.routes.iter().any(|r| r.steps.len() != flights) {
            return Err(Error::Dimension(format!(
                "replication {rep} is not a {routes}x{flights} trajectory"
            )));
        }
        for (m, route) in traj.routes.iter().enumerate() {
            let mut i_best = 0u32;
            let mut r_sum = 0.0;
            for (t, step) in route.steps.iter().enumerate() {
                let b = f64::from(best_airline_indicator(&route.rates, step.airline)?);
                let r = pseudo_regret(&route.rates, step.airline)?;
                best[m][t].0 += b;
                best[m][t].1 += b * b;
                regret[m][t].0 += r;
                regret[m][t].1 += r * r;
                i_best += b as u32;
                r_sum += r;
            }
            theta_best[m] += route.rates.best_rate();
            route_rows.push(RouteMetricRow {
                replication_id: rep,
                route: m + 1,
                i_best,
                regret: r_sum,
                theta_best: route.rates.best_rate(),
            });
        }
    }
    let n = trajectories.len() as f64;
    let split = |cells: Vec<Vec<(f64, f64)>>| -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        cells
            .into_iter()
            .map(|row| row.into_iter().map(|(s, q)| mean_var(s, q, n)).unzip())
            .unzip()
    };
    let (best_rate, best_var) = split(best);
    let (regret_mean, regret_var) = split(regret);
    Ok(MetricSeries {
        replications: trajectories.len(),
        routes,
        flights,
        best_rate,
        best_var,
        regret_mean,
        regret_var,
        theta_best_mean: theta_best.into_iter().map(|s| s / n).collect(),
        route_rows,
    })
}

/// One flight of one replication, in the exported CSV layout (1-based indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightRow {
    pub replication_id: usize,
    pub condition: String,
    pub route: usize,
    pub flight: usize,
    pub airline: usize,
    pub outcome: u8,
    pub theta_best: f64,
    pub theta_chosen: f64,
    pub regret: f64,
    pub best_indicator: u8,
}

pub fn flight_rows(replication_id: usize, traj: &Trajectory) -> Result<Vec<FlightRow>> {
    let condition = traj
        .condition
        .map(|c| c.to_string())
        .unwrap_or_else(|| "custom".into());
    let mut rows = Vec::with_capacity(traj.num_routes() * traj.num_flights());
    for (m, route) in traj.routes.iter().enumerate() {
        for (t, step) in route.steps.iter().enumerate() {
            rows.push(FlightRow {
                replication_id,
                condition: condition.clone(),
                route: m + 1,
                flight: t + 1,
                airline: step.airline + 1,
                outcome: step.outcome,
                theta_best: route.rates.best_rate(),
                theta_chosen: route.rates.rates[step.airline],
                regret: pseudo_regret(&route.rates, step.airline)?,
                best_indicator: best_airline_indicator(&route.rates, step.airline)?,
            });
        }
    }
    Ok(rows)
}

/// `(route, flight)` cell of a metric series, for plot-ready export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub route: usize,
    pub flight: usize,
    pub replications: usize,
    pub best_rate: f64,
    pub best_var: f64,
    pub regret_mean: f64,
    pub regret_var: f64,
}

pub fn series_rows(series: &MetricSeries) -> Vec<SeriesRow> {
    let mut rows = Vec::with_capacity(series.routes * series.flights);
    for m in 0..series.routes {
        for t in 0..series.flights {
            rows.push(SeriesRow {
                route: m + 1,
                flight: t + 1,
                replications: series.replications,
                best_rate: series.best_rate[m][t],
                best_var: series.best_var[m][t],
                regret_mean: series.regret_mean[m][t],
                regret_var: series.regret_var[m][t],
            });
        }
    }
    rows
}
