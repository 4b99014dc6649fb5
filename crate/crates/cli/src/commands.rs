//! `gen-env`, `simulate` and `fit`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::Args;
use metabandit::beliefs::default_hypothesis_class;
use metabandit::env::spec_from_condition;
use metabandit::io::{load_histories, read_env_spec, record_from_trajectory, write_csv, write_env_spec, write_json, write_session};
use metabandit::likelihood::{
    fit_table_csv, loglik_brmdp_exact, sweep, FitResult, Grid, ParticipantHistory, Planning, SweepOptions,
    DEFAULT_ENUMERATION_CAP,
};
use metabandit::simulate::{aggregate_metrics, flight_rows, series_rows, simulate_batch, BatchSpec};
use metabandit::{AgentConfig, ChoiceRule, ConditionLabel, ConditionSpec, Error, PolicyKind};

#[derive(Debug, Clone, Args)]
pub struct GenEnvArgs {
    /// Condition label (FarLow, FarHigh, CloseLow, CloseHigh) or `custom`.
    #[arg(long, default_value = "FarLow")]
    pub condition: String,
    /// Per-airline means for a custom condition, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub means: Vec<f64>,
    /// Shared variance for a custom condition.
    #[arg(long)]
    pub variance: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub routes: usize,
    #[arg(long, default_value_t = 10)]
    pub flights: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn condition_spec(condition: &str, means: &[f64], variance: Option<f64>) -> anyhow::Result<ConditionSpec> {
    if condition.eq_ignore_ascii_case("custom") {
        let Some(variance) = variance else {
            bail!("a custom condition needs --variance");
        };
        if means.is_empty() {
            bail!("a custom condition needs --means");
        }
        return Ok(ConditionSpec::custom(means.to_vec(), variance)?);
    }
    let label: ConditionLabel = condition.parse()?;
    let mut spec = label.spec();
    if !means.is_empty() || variance.is_some() {
        log::warn!("--means/--variance are ignored for the {label} condition");
    }
    spec.validate()?;
    spec.label = Some(label);
    Ok(spec)
}

pub fn gen_env(args: &GenEnvArgs) -> anyhow::Result<()> {
    let cond = condition_spec(&args.condition, &args.means, args.variance)?;
    let spec = spec_from_condition(&cond, args.routes, args.flights, args.seed)?;
    write_env_spec(&args.out, &spec).with_context(|| format!("writing {}", args.out.display()))?;
    log::info!("wrote environment {} to {}", spec.content_hash(), args.out.display());
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// dp, metadp or brmdp.
    #[arg(long, default_value = "metadp")]
    pub policy: String,
    /// Draws per route for brmdp.
    #[arg(long)]
    pub d: Option<u32>,
    /// Choice rule, `eps:<v>` or `softmax:<v>`.
    #[arg(long, default_value = "eps:0.1")]
    pub rule: String,
    #[arg(long, default_value_t = 2000)]
    pub runs: usize,
    /// Environment spec JSON written by gen-env. Without it the FarLow condition is used.
    #[arg(long)]
    pub env: Option<PathBuf>,
    /// Condition used when no --env is given.
    #[arg(long, default_value = "FarLow")]
    pub condition: String,
    /// Trajectory CSV, one row per flight.
    #[arg(long)]
    pub out: PathBuf,
    /// Route-level metric CSV; defaults to `<out>.metrics.csv`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Optional per-(route, flight) series CSV.
    #[arg(long)]
    pub series: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reuse the env file's rate matrix in every run instead of fresh rates per run.
    #[arg(long)]
    pub pin_rates: bool,
    /// Planning window h (defaults to the full route).
    #[arg(long)]
    pub lookahead: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Also write every run as a session JSONL file into this directory.
    #[arg(long)]
    pub sessions_dir: Option<PathBuf>,
}

pub fn parse_policy(policy: &str, d: Option<u32>) -> anyhow::Result<PolicyKind> {
    let kind: PolicyKind = policy.parse()?;
    Ok(match (kind, d) {
        (PolicyKind::Brmdp { .. }, Some(draws)) => PolicyKind::Brmdp { draws },
        (_, Some(_)) => bail!("--d only applies to brmdp"),
        (kind, None) => kind,
    })
}

fn metrics_path(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".metrics.csv");
    out.with_file_name(name)
}

pub fn simulate(args: &SimulateArgs) -> anyhow::Result<()> {
    let kind = parse_policy(&args.policy, args.d)?;
    let rule: ChoiceRule = args.rule.parse()?;
    let env = match &args.env {
        Some(path) => read_env_spec(path).with_context(|| format!("reading {}", path.display()))?,
        None => spec_from_condition(&condition_spec(&args.condition, &[], None)?, 10, 10, args.seed)?,
    };
    if args.runs == 0 {
        bail!("--runs must be positive");
    }
    let mut config = AgentConfig::new(kind, rule, env.t).with_gamma(args.gamma);
    if let Some(h) = args.lookahead {
        config = config.with_lookahead(h);
    }
    config.validate()?;
    let class = Arc::new(default_hypothesis_class(env.k)?);
    let mut batch = BatchSpec::new(env, args.runs, args.seed);
    batch.pin_rates = args.pin_rates;
    log::info!("simulating {} runs of {kind}", args.runs);
    let trajectories = simulate_batch(&batch, &config, class, None)?;

    let rows = trajectories
        .iter()
        .enumerate()
        .map(|(r, traj)| flight_rows(r + 1, traj))
        .collect::<metabandit::Result<Vec<_>>>()?;
    write_csv(&args.out, rows.into_iter().flatten())?;
    let metrics = aggregate_metrics(&trajectories)?;
    let metrics_out = args.metrics.clone().unwrap_or_else(|| metrics_path(&args.out));
    write_csv(&metrics_out, &metrics.route_rows)?;
    if let Some(path) = &args.series {
        write_csv(path, series_rows(&metrics))?;
    }
    if let Some(dir) = &args.sessions_dir {
        std::fs::create_dir_all(dir)?;
        let now = chrono::Utc::now().to_rfc3339();
        for (r, traj) in trajectories.iter().enumerate() {
            let id = format!("sim-{:05}", r + 1);
            let record = record_from_trajectory(&id, &batch.environment(r)?, traj, Some(config.clone()), &now)?;
            write_session(&dir.join(format!("{id}.jsonl")), &record)?;
        }
    }
    let best = metrics.route_best_mean();
    println!(
        "{kind} x {} runs: P(best) route 1 {:.3}, route {} {:.3}",
        args.runs,
        best[0],
        best.len(),
        best[best.len() - 1]
    );
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Directory of session JSONL files.
    #[arg(long)]
    pub histories: PathBuf,
    /// Policies to fit, comma separated (dp, metadp, brmdp1, brmdp3, ...).
    #[arg(long, value_delimiter = ',', default_value = "dp,metadp,brmdp1")]
    pub policies: Vec<String>,
    /// `eps:lo:hi:n`, `softmax:lo:hi:n` or an explicit list such as `eps:0.1,0.2`.
    #[arg(long, default_value = "eps:0.01:0.5:20")]
    pub grid: String,
    /// Monte Carlo draws per route for BRMDP.
    #[arg(long, default_value_t = 2000)]
    pub b: usize,
    /// Policy-by-grid table; `.json` writes the full fit results instead of CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub lookahead: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use exact enumeration for BRMDP wherever it fits under the cap.
    #[arg(long)]
    pub exact: bool,
    /// Recompute BRMDP fits exactly at the best grid point and compare with Monte Carlo.
    #[arg(long)]
    pub check_exact: bool,
}

/// Exact-vs-Monte-Carlo comparison for one participant.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ExactCheck {
    pub policy: String,
    pub participant_id: String,
    pub eps: f64,
    pub exact: f64,
    pub mc: f64,
    pub se: f64,
}

impl ExactCheck {
    pub fn z(&self) -> f64 {
        (self.mc - self.exact) / self.se.max(f64::MIN_POSITIVE)
    }
}

pub fn check_exact(
    histories: &[ParticipantHistory],
    results: &[FitResult],
    opts: &SweepOptions,
) -> anyhow::Result<Vec<ExactCheck>> {
    let mut checks = Vec::new();
    for res in results {
        let PolicyKind::Brmdp { draws } = res.policy else {
            continue;
        };
        if res.b.is_none() {
            continue;
        }
        let (gi, value, _) = res.best();
        let mut plan = Planning::new(res.grid.rule(gi)?);
        plan.gamma = opts.gamma;
        plan.lookahead = opts.lookahead;
        for (h, fit) in histories.iter().zip(&res.participants) {
            let exact = match loglik_brmdp_exact(h, &opts.class, opts.q1.as_ref(), &plan, draws, opts.cap, None) {
                Ok(v) => v,
                Err(Error::EnumerationCap { count, cap }) => {
                    log::warn!("{}: {count} draw vectors exceed cap {cap}; skipping exact check", res.policy);
                    break;
                }
                Err(e) => return Err(e.into()),
            };
            let se = fit
                .route_se
                .as_ref()
                .map(|s| s[gi].iter().map(|x| x * x).sum::<f64>().sqrt())
                .unwrap_or(0.0);
            checks.push(ExactCheck {
                policy: res.policy.label(),
                participant_id: h.participant_id.clone(),
                eps: value,
                exact,
                mc: fit.loglik[gi],
                se,
            });
        }
    }
    Ok(checks)
}

pub fn fit(args: &FitArgs) -> anyhow::Result<Vec<FitResult>> {
    let (histories, warnings) = load_histories(&args.histories)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    if histories.is_empty() {
        bail!("no complete histories in {}", args.histories.display());
    }
    let policies = args
        .policies
        .iter()
        .map(|p| parse_policy(p, None))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let grid: Grid = args.grid.parse()?;
    let k = histories[0].num_airlines;
    let mut opts = SweepOptions::new(Arc::new(default_hypothesis_class(k)?));
    opts.b = args.b;
    opts.gamma = args.gamma;
    opts.lookahead = args.lookahead;
    opts.seed = args.seed;
    opts.exact_brmdp = args.exact;
    opts.cap = DEFAULT_ENUMERATION_CAP;
    log::info!("fitting {} histories", histories.len());
    let results = sweep(&histories, &policies, &grid, &opts)?;

    if args.out.extension().is_some_and(|x| x == "json") {
        write_json(&args.out, &results)?;
    } else {
        std::fs::write(&args.out, fit_table_csv(&results)?)
            .with_context(|| format!("writing {}", args.out.display()))?;
    }
    for r in &results {
        let (_, value, ll) = r.best();
        println!("{}: best {:.3} log-likelihood {ll:.2}", r.policy, value);
    }
    if args.check_exact {
        let checks = check_exact(&histories, &results, &opts)?;
        let within = checks.iter().filter(|c| c.z().abs() <= 3.0).count();
        for c in &checks {
            println!(
                "exact check {} {} at {:.3}: exact {:.4} mc {:.4} (se {:.4}, z {:.2})",
                c.policy,
                c.participant_id,
                c.eps,
                c.exact,
                c.mc,
                c.se,
                c.z()
            );
        }
        println!("exact check: {within}/{} within 3 SE", checks.len());
    }
    Ok(results)
}
