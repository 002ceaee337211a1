use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ivy_cli::commands::{self, ABLATION_FILE, REPORT_FILE};
use ivy_cli::{keys_help, CliError, RawConfig};

#[derive(Debug, Parser)]
#[command(name = "ivy", version, about = "Offline-learned bandwidth-estimator selection", after_help = keys_help())]
struct Cli {
    /// Configuration file of `[section]` headers and `key = value` lines.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Override one key, e.g. `--set train.epochs=50`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the holdout traces (evaluation regimes and nonstationary scenario).
    GenTraces,
    /// Log random-policy calls on fresh training traces into the dataset.
    Collect,
    /// Train the metapolicy on the dataset.
    Train {
        /// Continue from the existing checkpoint for `train.epochs` more epochs.
        #[arg(long)]
        resume: bool,
    },
    /// A/B-evaluate the metapolicy against every baseline on the holdout traces.
    Eval,
    /// Collect, train and evaluate once per `ablation.intervals` entry.
    Ablate,
    /// Summarise the dataset, including the delta-rule sigma.
    Stats,
    /// Print the effective configuration.
    Config,
}

/// Prints to stdout, tolerating a closed pipe (`ivy eval | head`).
fn out(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut raw = RawConfig::default();
    if let Some(path) = &cli.config {
        raw.apply_file(path)?;
    }
    for o in &cli.overrides {
        raw.set_pair(o)?;
    }
    if let Command::Config = cli.command {
        out(&raw.dump());
        return Ok(());
    }
    let cfg = raw.resolve()?;
    match cli.command {
        Command::GenTraces => {
            let n = commands::cmd_gen_traces(&cfg)?;
            println!("wrote {n} traces to {}", cfg.traces_dir.display());
        }
        Command::Collect => {
            let ds = commands::cmd_collect(&cfg)?;
            println!(
                "wrote {} transitions from {} calls to {}",
                ds.len(),
                ds.calls().len(),
                cfg.dataset.display()
            );
        }
        Command::Train { resume } => {
            let (ck, losses) = commands::cmd_train(&cfg, resume)?;
            if let Some(l) = losses.last() {
                println!(
                    "epoch {} loss_v {:.5} loss_q {:.5} loss_pi {:.5}",
                    l.epoch, l.loss_v, l.loss_q, l.loss_pi
                );
            }
            println!(
                "wrote checkpoint ({} epochs) to {}",
                ck.epochs_done,
                cfg.checkpoint.display()
            );
        }
        Command::Eval => {
            let (report, ns) = commands::cmd_eval(&cfg)?;
            out(&report.to_csv());
            out(&ns.to_csv());
            println!("wrote {}", cfg.reports_dir.join(REPORT_FILE).display());
        }
        Command::Ablate => {
            let reports = commands::cmd_ablate(&cfg)?;
            out(&commands::ablation_csv(&reports));
            println!("wrote {}", cfg.reports_dir.join(ABLATION_FILE).display());
        }
        Command::Stats => out(&commands::format_stats(&commands::cmd_stats(&cfg)?)),
        Command::Config => unreachable!("handled before resolving"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
