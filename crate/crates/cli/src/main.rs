use std::path::PathBuf;

use clap::{Parser, Subcommand};
use metabandit_cli::commands::{self, FitArgs, GenEnvArgs, SimulateArgs};
use metabandit_cli::server::{self, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "metabandit", version, about = "Hierarchical Bernoulli bandit workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write an environment spec JSON.
    GenEnv(GenEnvArgs),
    /// Simulate a policy and write trajectory and metric CSVs.
    Simulate(SimulateArgs),
    /// Fit policies to recorded sessions over a noise grid.
    Fit(FitArgs),
    /// Run the HTTP session service.
    Serve {
        #[arg(long, env = "METABANDIT_ADDR", default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, env = "METABANDIT_DATA_DIR", default_value = "sessions")]
        data_dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        routes: usize,
        #[arg(long, default_value_t = 10)]
        flights: usize,
    },
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::GenEnv(args) => commands::gen_env(&args),
        Command::Simulate(args) => commands::simulate(&args),
        Command::Fit(args) => commands::fit(&args).map(|_| ()),
        Command::Serve {
            addr,
            data_dir,
            routes,
            flights,
        } => {
            let mut config = ServiceConfig::new(data_dir);
            config.routes = routes;
            config.flights = flights;
            tokio::runtime::Runtime::new()?.block_on(server::serve(&addr, config))
        }
    }
}
