use clap::{Args, Parser, Subcommand};
use dfl_cli::commands::{cmd_attack, cmd_budget, cmd_run, cmd_sweep};
use dfl_cli::config::{load_config, RunConfig};
use dfl_cli::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "dfl",
    version,
    about = "Decentralized gradient-tracking training with noise-protected messages"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file: a run config, or any artifact that embeds one.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $DFL_OUT_DIR, then ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's seed list, comma separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Override the config's noise scale.
    #[arg(long)]
    beta: Option<f64>,
    /// Override the config's round count.
    #[arg(long)]
    rounds: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train under every configured rule; writes metrics.csv and summary.json.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Tabulate per-round privacy budgets; writes budgets.csv.
    Budget {
        #[command(flatten)]
        common: Common,
        /// Last interception round to tabulate.
        #[arg(long, default_value_t = 20)]
        t_max: usize,
    },
    /// Reconstruct a victim's batch from its intercepted tracker message;
    /// writes attack.json and reconstruction.csv.
    Attack {
        #[command(flatten)]
        common: Common,
        /// Client whose message is intercepted.
        #[arg(long, default_value_t = 0)]
        victim: usize,
        /// Round at which the message is intercepted.
        #[arg(long, default_value_t = 0)]
        target_round: usize,
    },
    /// Scan noise scales; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Noise scales to scan, comma separated.
        #[arg(
            long = "beta-list",
            value_delimiter = ',',
            default_value = "0.025,0.1,0.5"
        )]
        betas: Vec<f64>,
        /// Also attack client 0's first tracker message at every scale.
        #[arg(long)]
        attack: bool,
    },
}

/// Loads the config, applies command-line overrides, and resolves the
/// output directory. Overrides happen before validation so artifacts echo
/// the effective values.
fn load(common: &Common) -> Result<(RunConfig, PathBuf), CliError> {
    let mut config = match &common.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seeds) = &common.seeds {
        config.seeds = seeds.clone();
    }
    if let Some(beta) = common.beta {
        config.beta = beta;
    }
    if let Some(rounds) = common.rounds {
        config.rounds = rounds;
    }
    config.validate()?;
    let out = common
        .out
        .clone()
        .or_else(|| std::env::var_os("DFL_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((config, out))
}

fn dispatch(command: Command) -> Result<u8, CliError> {
    match command {
        Command::Run { common } => {
            let (config, out) = load(&common)?;
            let outcome = cmd_run(&config, &out)?;
            for (rule, s) in &outcome.summary.rules {
                match (s.final_accuracy_mean, s.final_accuracy_std) {
                    (Some(mean), Some(std)) => {
                        println!(
                            "{rule}: final accuracy {mean:.4} +- {std:.4} over {} seed(s)",
                            s.seeds
                        )
                    }
                    _ => println!("{rule}: all {} run(s) diverged", s.seeds),
                }
            }
            println!("wrote {}", out.join("metrics.csv").display());
            println!("wrote {}", out.join("summary.json").display());
            if outcome.diverged_runs > 0 {
                eprintln!("warning: {} run(s) diverged", outcome.diverged_runs);
                Ok(2)
            } else {
                Ok(0)
            }
        }
        Command::Budget { common, t_max } => {
            let (config, out) = load(&common)?;
            let rows = cmd_budget(&config, &out, t_max)?;
            let first = rows.first().expect("at least round zero");
            let last = rows.last().expect("at least round zero");
            println!(
                "round 0: epsilon_lppa {:.4}, epsilon_dp {:.4}",
                first.epsilon_lppa, first.epsilon_dp
            );
            println!(
                "round {}: epsilon_lppa {:.4}, epsilon_dp {:.4}",
                last.round, last.epsilon_lppa, last.epsilon_dp
            );
            println!("wrote {}", out.join("budgets.csv").display());
            Ok(0)
        }
        Command::Attack {
            common,
            victim,
            target_round,
        } => {
            let (config, out) = load(&common)?;
            let doc = cmd_attack(&config, &out, victim, target_round)?;
            for (rule, r) in &doc.results {
                println!("{rule}: median reconstruction mse {:.6}", r.median_mse);
            }
            println!("wrote {}", out.join("attack.json").display());
            println!("wrote {}", out.join("reconstruction.csv").display());
            Ok(0)
        }
        Command::Sweep {
            common,
            betas,
            attack,
        } => {
            let (config, out) = load(&common)?;
            let rows = cmd_sweep(&config, &out, &betas, attack)?;
            println!("{} sweep row(s)", rows.len());
            println!("wrote {}", out.join("sweep.csv").display());
            Ok(if rows.iter().any(|r| r.diverged) {
                2
            } else {
                0
            })
        }
    }
}

fn main() -> ExitCode {
    // clap reserves exit code 2 for usage errors; here 2 means a run
    // diverged, so usage problems are folded into code 1 instead.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
