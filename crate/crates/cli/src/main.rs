use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dualgrid_cli::config::ExperimentConfig;
use dualgrid_cli::experiment::{oracle, ratefit_dir, run_experiment, OracleSummary, StageError};
use dualgrid_core::ProblemInstance;
use dualgrid_grid::fixtures;

#[derive(Parser)]
#[command(name = "dualgrid", version, about = "Distributed dual subgradient experiments on grid models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by an INI file.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides `[output] dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Solve a saved problem.json centrally and print the result as JSON.
    Oracle { problem: PathBuf },
    /// Fit the rate exponent over the trace_T*.csv files of a run directory.
    Ratefit { dir: PathBuf },
    /// Write the bundled case files into a directory.
    Fixtures {
        #[arg(default_value = "fixtures")]
        dir: PathBuf,
    },
}

fn fail(stage: &'static str, message: impl ToString) -> StageError {
    StageError {
        stage,
        message: message.to_string(),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dualgrid: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<(), StageError> {
    match cmd {
        Command::Run {
            config,
            seed,
            out,
            threads,
        } => {
            let env: BTreeMap<String, String> = std::env::vars().filter(|(k, _)| k.starts_with("DUALGRID_")).collect();
            let mut cfg = ExperimentConfig::load(&config, &env).map_err(|e| fail("config", e))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = threads {
                cfg.threads = t;
            }
            let out = out.unwrap_or_else(|| cfg.out_dir.clone());
            let s = run_experiment(&cfg, &out)?;
            if let Some(o) = &s.oracle {
                println!("oracle value {:.8e} ({:?})", o.value, o.status);
            }
            for r in &s.runs {
                let rel = r.summary.relative_optimality.map(|v| format!("{v:.3e}")).unwrap_or_else(|| "-".into());
                println!(
                    "T = {:>9}  objective {:.8e}  rel {}  violation {:.3e}  V {:.3e}  {:.1}s",
                    r.horizon, r.summary.final_objective, rel, r.summary.final_violation, r.summary.final_v_metric, r.seconds
                );
            }
            if let Some(rate) = &s.rate {
                println!("rate slope {:.4}", rate.metric.slope);
            }
            for seg in s.tracking.iter().flatten() {
                println!(
                    "segment {}  rel {:.3e}  within threshold from t = {}",
                    seg.index,
                    seg.final_relative,
                    seg.first_within.map(|t| t.to_string()).unwrap_or_else(|| "never".into())
                );
            }
            println!("artifacts in {}", out.display());
            Ok(())
        }
        Command::Oracle { problem } => {
            let text = std::fs::read_to_string(&problem).map_err(|e| fail("read", format!("{}: {e}", problem.display())))?;
            let p = ProblemInstance::from_json(&text).map_err(|e| fail("parse", e))?;
            let o = oracle(&p);
            println!("{}", serde_json::to_string_pretty(&OracleSummary::from(&o)).expect("serializable"));
            if o.is_optimal() {
                Ok(())
            } else {
                Err(fail("oracle", format!("status {:?}", o.status)))
            }
        }
        Command::Ratefit { dir } => {
            let (series, rep) = ratefit_dir(&dir)?;
            for (t, v, _) in &series {
                println!("T = {t:>9}  V = {v:.6e}");
            }
            println!("{}", serde_json::to_string_pretty(&rep).expect("serializable"));
            Ok(())
        }
        Command::Fixtures { dir } => {
            std::fs::create_dir_all(&dir).map_err(|e| fail("write", e))?;
            for (name, text) in fixtures::ALL {
                let path = dir.join(format!("{name}.m"));
                std::fs::write(&path, text).map_err(|e| fail("write", format!("{}: {e}", path.display())))?;
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}
