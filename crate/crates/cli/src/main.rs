use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use railchain::sim::World;
use railchain::{canonical, Tick};
use railchain_cli::api::{router, Clock, Sim};
use railchain_cli::commands::{self, RunOptions, EXIT_CONFIG};

#[derive(Parser)]
#[command(
    name = "railchain",
    version,
    about = "Decentralized railway reservation ledger simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario to completion; exit 1 if an oracle found a violation.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        until: Option<Tick>,
        /// Directory for artifacts without an explicit path [default: runs/<scenario name>].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Event log path [default: <out>/events.jsonl].
        #[arg(long)]
        log: Option<PathBuf>,
        /// Metrics path [default: <out>/metrics.json].
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Directory for per-node chain files [default: <out>/chains].
        #[arg(long)]
        chains: Option<PathBuf>,
    },
    /// Serve the HTTP API over a live, interactive scenario.
    Serve {
        scenario: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Clock speed in ticks per second.
        #[arg(long, default_value_t = 2.0, conflicts_with = "manual_step")]
        tick_rate: f64,
        /// Advance the clock only through POST /control/step.
        #[arg(long)]
        manual_step: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a chain file's integrity and replay it through the contract and oracles.
    Verify { chain: PathBuf, topology: PathBuf },
    /// Recompute run metrics from an event log.
    Replay {
        log: PathBuf,
        /// Compare against a metrics file; exit 1 on any difference.
        #[arg(long)]
        check: Option<PathBuf>,
    },
}

fn exit(code: i32) -> ExitCode {
    ExitCode::from(code.clamp(0, 255) as u8)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            seed,
            until,
            out,
            log,
            metrics,
            chains,
        } => {
            let opts = RunOptions {
                scenario,
                seed,
                until,
                out,
                log,
                metrics,
                chains,
            };
            commands::run(&opts).map(|r| {
                println!("{}", canonical::to_string(&r.outcome.metrics));
                for v in &r.outcome.violations {
                    eprintln!("violation: {v}");
                }
                eprintln!(
                    "log {} | metrics {} | chains {}",
                    r.log.display(),
                    r.metrics.display(),
                    r.chains.display()
                );
                r.outcome.exit_code
            })
        }
        Command::Serve {
            scenario,
            bind,
            tick_rate,
            manual_step,
            seed,
        } => serve(scenario, bind, tick_rate, manual_step, seed),
        Command::Verify { chain, topology } => commands::verify(&chain, &topology).map(|r| {
            println!("{}", canonical::to_string(&r));
            r.exit_code()
        }),
        Command::Replay { log, check } => commands::replay(&log, check.as_deref()).map(|(m, same)| {
            println!("{}", canonical::to_string(&m));
            match same {
                Some(false) => {
                    eprintln!("recomputed metrics differ from {}", check.expect("compared").display());
                    1
                }
                _ => 0,
            }
        }),
    };
    match result {
        Ok(code) => exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            exit(EXIT_CONFIG)
        }
    }
}

fn serve(scenario: PathBuf, bind: SocketAddr, tick_rate: f64, manual: bool, seed: Option<u64>) -> anyhow::Result<i32> {
    let scenario = commands::load_scenario(&scenario, seed, None)?;
    let world = World::new(scenario)?;
    let clock = if manual { Clock::Manual } else { Clock::Rate(tick_rate) };
    let app = router(Sim::spawn(world, clock));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind).await?;
        tracing::info!("serving on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(0)
    })
}
