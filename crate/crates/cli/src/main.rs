use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use exlab::commands::{
    cmd_attack, cmd_diagnose, cmd_report, cmd_steal, cmd_train_target, load_config, RunConfig, SUBSTITUTE_CKPT,
    TARGET_CKPT,
};
use exlab::Error;

/// Data-free model extraction lab.
///
/// Exit codes: 0 success, 1 runtime or numeric failure (including failed
/// diagnostics), 2 usage or configuration error. EXLAB_THREADS sets the
/// worker thread count (default 1).
#[derive(Parser)]
#[command(name = "exlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<(RunConfig, PathBuf), Error> {
        let cfg = load_config(self.config.as_deref(), self.seed)?;
        let out = self.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
        Ok((cfg, out))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the hidden target and write target.ckpt and metrics.txt.
    TrainTarget {
        #[command(flatten)]
        common: Common,
    },
    /// Steal the target; writes the trace, checkpoints, and a sample grid.
    Steal {
        #[command(flatten)]
        common: Common,
        /// Target checkpoint [default: <out>/target.ckpt]
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Transfer attacks crafted on the substitute, scored on the target.
    Attack {
        #[command(flatten)]
        common: Common,
        /// Target checkpoint [default: <out>/target.ckpt]
        #[arg(long)]
        target: Option<PathBuf>,
        /// Substitute checkpoint [default: <out>/substitute.ckpt]
        #[arg(long)]
        substitute: Option<PathBuf>,
    },
    /// Check the convergence properties of a MEGA run directory.
    Diagnose {
        run_dir: PathBuf,
        /// Report directory [default: <run_dir>/diagnostics]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Comparison table over run directories.
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
    },
}

fn or_default(p: &Option<PathBuf>, dir: &Path, name: &str) -> PathBuf {
    p.clone().unwrap_or_else(|| dir.join(name))
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::TrainTarget { common } => {
            let (cfg, out) = common.resolve()?;
            let s = cmd_train_target(&cfg, &out)?;
            println!(
                "target trained: train accuracy {:.4}, held-out accuracy {:.4} -> {}",
                s.train_accuracy,
                s.heldout_accuracy,
                out.join(TARGET_CKPT).display()
            );
        }
        Command::Steal { common, target } => {
            let (cfg, out) = common.resolve()?;
            let s = cmd_steal(&cfg, &or_default(&target, &out, TARGET_CKPT), &out)?;
            println!("{}", s.line());
        }
        Command::Attack {
            common,
            target,
            substitute,
        } => {
            let (cfg, out) = common.resolve()?;
            let s = cmd_attack(
                &cfg,
                &or_default(&substitute, &out, SUBSTITUTE_CKPT),
                &or_default(&target, &out, TARGET_CKPT),
                &out,
            )?;
            println!(
                "{}: untargeted ASR {:.4}, targeted ASR {:.4}, uniform noise {:.4} ({} attack queries)",
                s.kind, s.untargeted, s.targeted, s.noise_untargeted, s.attack_queries
            );
        }
        Command::Diagnose { run_dir, out } => {
            let out = out.unwrap_or_else(|| run_dir.join("diagnostics"));
            let s = cmd_diagnose(&run_dir, &out)?;
            for r in &s.reports {
                println!("{:<22} {}", r.name, if r.passed { "pass" } else { "FAIL" });
            }
            return Ok(s.all_passed());
        }
        Command::Report { run_dirs } => print!("{}", cmd_report(&run_dirs)?),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
