use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedsim::harness::{audit, oracle, parse_scenario, run_scenario, run_swat0, Faults, LinkParams, RunOptions};

#[derive(Parser)]
#[command(name = "fedsim", version, about = "Deterministic simulator for a federated social network protocol")]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(clap::Args)]
struct Network {
    /// Per-send loss probability on every link
    #[arg(long, default_value_t = 0.0)]
    loss: f64,
    /// Probability that a send escapes per-link FIFO order
    #[arg(long, default_value_t = 0.0)]
    reorder: f64,
    /// Delivery delay is drawn uniformly from 1..=delay-max ticks
    #[arg(long, default_value_t = 1)]
    delay_max: u64,
    /// Resends before an unacknowledged envelope is abandoned
    #[arg(long, default_value_t = fedsim::harness::DEFAULT_RETRIES)]
    retries: u32,
}

impl Network {
    fn options(&self, seed: u64) -> Result<RunOptions, String> {
        let link = LinkParams::new(self.delay_max, self.loss, self.reorder).map_err(|e| e.to_string())?;
        Ok(RunOptions { seed, default_link: link, retries: self.retries })
    }
}

#[derive(Subcommand)]
enum Commands {
    /// Run a scenario file
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        network: Network,
        /// Write the event trace here, one JSON document per line
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run the SWAT0 interaction
    Swat0 {
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        network: Network,
    },
    /// Compare a random workload against the centralized model
    OracleCheck {
        #[arg(long, default_value_t = 3)]
        sites: usize,
        #[arg(long, default_value_t = 500)]
        ops: usize,
        #[arg(long)]
        seed: u64,
    },
}

fn usage(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("fedsim: {msg}");
    ExitCode::from(2)
}

fn report(failures: &[String]) -> ExitCode {
    for f in failures {
        println!("FAIL {f}");
    }
    if failures.is_empty() {
        println!("PASS");
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command {
        Commands::Run { scenario, seed, network, trace } => {
            let options = match network.options(seed) {
                Ok(o) => o,
                Err(e) => return usage(e),
            };
            let text = match fs::read_to_string(&scenario) {
                Ok(t) => t,
                Err(e) => return usage(format!("{}: {e}", scenario.display())),
            };
            let parsed = match parse_scenario(&text) {
                Ok(s) => s,
                Err(e) => return usage(format!("{}: {e}", scenario.display())),
            };
            let outcome = match run_scenario(&parsed, options) {
                Ok(o) => o,
                Err(e) => return usage(e),
            };
            if let Some(path) = trace {
                if let Err(e) = fs::write(&path, outcome.trace().to_bytes()) {
                    return usage(format!("{}: {e}", path.display()));
                }
            }
            let mut failures = outcome.failures.clone();
            failures.extend(audit::privacy_audit(outcome.trace()).into_iter().map(|v| format!("privacy: {v}")));
            println!(
                "{} lines, {} expectations, {} ticks, {} events",
                parsed.lines.len(),
                outcome.expectations,
                outcome.sim.now(),
                outcome.trace().len()
            );
            report(&failures)
        }
        Commands::Swat0 { seed, network } => {
            let options = match network.options(seed) {
                Ok(o) => o,
                Err(e) => return usage(e),
            };
            match run_swat0(options, &[]) {
                Ok(o) => {
                    let mut failures = o.failures.clone();
                    failures.extend(audit::privacy_audit(o.sim.trace()).into_iter().map(|v| format!("privacy: {v}")));
                    report(&failures)
                }
                Err(e) => usage(e),
            }
        }
        Commands::OracleCheck { sites, ops, seed } => {
            if sites < 2 {
                return usage("--sites must be at least 2");
            }
            match oracle::oracle_check(sites, ops, seed, Faults::default()) {
                Ok(r) => {
                    println!("{} ops over {} sites, {} ticks", ops, sites, r.run.sim.now());
                    report(&r.diff)
                }
                Err(e) => usage(e),
            }
        }
    }
}
