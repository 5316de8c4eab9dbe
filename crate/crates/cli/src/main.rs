use std::fmt::Display;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use atm_core::config::Config;
use atm_core::harness::{
    compute_metrics, format_report, read_results, run_batch, run_episode, write_results, EpisodeTrace,
};
use atm_core::live::AgentMode;
use atm_core::world::{sample_scenario, Scenario};
use atm_hitl::Server;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "atm", version, about = "Simulation-based theory of mind for a care robot")]
struct Cli {
    /// TOML file overriding any atm.*, nav.*, perception.*, engine.*, harness.* or hitl.* key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs a seeded batch and writes episodes.csv, metrics.json and timings.
    Run(RunArgs),
    /// Runs one episode and writes every simulation and memory dump as JSON.
    Trace {
        #[arg(long)]
        scenario: PathBuf,
        /// Episode seed, as listed in episodes.csv.
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serves the live mode over a websocket at /ws.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Recomputes the report from a results file or directory.
    Metrics {
        #[arg(long = "in")]
        input: PathBuf,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 180)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    master_seed: u64,
    /// Overrides perception.pos_sigma_m.
    #[arg(long)]
    pos_sigma: Option<f64>,
    /// Overrides perception.size_inflation_sigma.
    #[arg(long)]
    size_sigma: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

/// Exit codes.
const USAGE: u8 = 1;
const SCENARIO: u8 = 2;
const RUNTIME: u8 = 3;

struct Failure(u8, String);

fn fail(code: u8) -> impl FnOnce(&dyn Display) -> Failure {
    move |e| Failure(code, e.to_string())
}

fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    match path {
        Some(p) => Config::from_file(p).map_err(|e| fail(USAGE)(&e)),
        None => Ok(Config::default()),
    }
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    Scenario::from_file(path).map_err(|e| fail(SCENARIO)(&e))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Run(args) => {
            if args.episodes == 0 {
                return Err(Failure(USAGE, "--episodes must be at least 1".into()));
            }
            if let Some(s) = args.pos_sigma {
                cfg.perception.pos_sigma_m = s;
            }
            if let Some(s) = args.size_sigma {
                cfg.perception.size_inflation_sigma = s;
            }
            cfg.validate().map_err(|e| fail(USAGE)(&e))?;
            let base = load_scenario(&args.scenario)?;
            let started = Instant::now();
            let batch = run_batch(&base, args.episodes, &cfg, args.master_seed);
            write_results(&args.out, &batch.results, batch.report.as_ref().ok()).map_err(|e| fail(RUNTIME)(&e))?;
            let report = batch.report.map_err(|e| fail(RUNTIME)(&e))?;
            print!("{}", format_report(&report));
            eprintln!(
                "{} episodes in {:.1} s, results in {}",
                report.total,
                started.elapsed().as_secs_f64(),
                args.out.display()
            );
        }
        Command::Trace { scenario, seed, out } => {
            let base = load_scenario(&scenario)?;
            let sc = sample_scenario(&base, seed).map_err(|e| fail(SCENARIO)(&e))?;
            let trace = EpisodeTrace::default();
            let result = run_episode(&sc, &cfg, Some(&trace)).map_err(|e| fail(RUNTIME)(&e))?;
            let mut doc = trace.to_json(&result);
            doc["scenario"] = serde_json::to_value(&sc).map_err(|e| fail(RUNTIME)(&e))?;
            let text = serde_json::to_string_pretty(&doc).map_err(|e| fail(RUNTIME)(&e))?;
            std::fs::write(&out, text + "\n").map_err(|e| fail(RUNTIME)(&e))?;
            println!("{}", serde_json::to_string(&result).map_err(|e| fail(RUNTIME)(&e))?);
        }
        Command::Serve { port, host, scenario } => {
            let sc = load_scenario(&scenario)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| fail(RUNTIME)(&e))?;
            rt.block_on(async {
                let addr = SocketAddr::new(host, port);
                let server = Server::bind(addr, &sc, Arc::new(cfg), AgentMode::Threaded).await.map_err(|e| match e {
                    atm_hitl::BindError::Session(e) => fail(SCENARIO)(&e),
                    atm_hitl::BindError::Io(e) => fail(RUNTIME)(&e),
                })?;
                let bound = server.local_addr().map_err(|e| fail(RUNTIME)(&e))?;
                eprintln!("serving ws://{bound}/ws, ctrl-c to stop");
                server
                    .run_until(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await
                    .map_err(|e| fail(RUNTIME)(&e))
            })?;
        }
        Command::Metrics { input, json } => {
            let results = read_results(&input).map_err(|e| fail(RUNTIME)(&e))?;
            let report = compute_metrics(&results).map_err(|e| fail(RUNTIME)(&e))?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).map_err(|e| fail(RUNTIME)(&e))?);
            } else {
                print!("{}", format_report(&report));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
