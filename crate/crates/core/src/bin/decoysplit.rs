use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use decoysplit::experiment::{
    cmd_leakage_oracle, cmd_powers, cmd_show_plan, cmd_sweep, cmd_train, run_validation,
    ClosedForms, ExperimentConfig, ValidationOptions, ValidationReport,
};
use decoysplit::powerstar::HopBudget;
use decoysplit::{Error, Result};

#[derive(Parser)]
#[command(
    name = "decoysplit",
    version,
    about = "Deceptive-signal multi-hop split learning simulator"
)]
struct Cli {
    /// Experiment config (TOML). Built-in reference defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory [default: $DECOYSPLIT_OUT, then the config's output_dir, then ./out]
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the self-check suite; exits non-zero if any check fails.
    Validate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one agent per configured seed.
    Train {
        /// Train even if the self-check suite fails.
        #[arg(long)]
        skip_validate: bool,
        /// Override the configured seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Override the configured episode count.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Score the configured agents along the sweep axis.
    Sweep,
    /// Greedy rollout of a trained checkpoint.
    ShowPlan {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Closed-form leakage against Monte Carlo on random hop sets.
    Oracle {
        #[arg(long, default_value_t = 20)]
        cases: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 3)]
        max_deceivers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Single-deceiver optimal power table for every hop.
    Powers {
        #[arg(long, default_value_t = 1.0)]
        time_budget: f64,
        #[arg(long, default_value_t = 1.0)]
        energy_budget: f64,
        #[arg(long, default_value_t = 4e5)]
        payload_bits: f64,
    },
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn validate(cfg: &ExperimentConfig, seed: u64) -> Result<ValidationReport> {
    let env = cfg.build_env()?;
    Ok(run_validation(
        &env,
        &ValidationOptions {
            seed,
            ..ValidationOptions::default()
        },
        &ClosedForms::default(),
    ))
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let out = cfg.output_root(cli.out.as_deref());
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Validate { seed } => {
            let report = validate(&cfg, seed)?;
            write_json(&out.join("validation.json"), &report)?;
            writeln!(stdout, "{}", serde_json::to_string_pretty(&report)?)?;
            for c in report.failures() {
                eprintln!("FAILED {}: {}", c.name, c.detail);
            }
            Ok(report.passed)
        }
        Command::Train {
            skip_validate,
            seeds,
            episodes,
        } => {
            if !seeds.is_empty() {
                cfg.seeds = seeds;
            }
            if let Some(n) = episodes {
                cfg.train.episodes = n;
            }
            if !skip_validate {
                let report = validate(&cfg, 0)?;
                if !report.passed {
                    let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
                    return Err(Error::Config(format!(
                        "validation failed ({}); pass --skip-validate to train anyway",
                        names.join(", ")
                    )));
                }
            }
            for run in cmd_train(&cfg, &out)? {
                writeln!(stdout, "{}", serde_json::to_string(&run)?)?;
            }
            Ok(true)
        }
        Command::Sweep => {
            for row in cmd_sweep(&cfg, &out)? {
                writeln!(stdout, "{}", serde_json::to_string(&row)?)?;
            }
            Ok(true)
        }
        Command::ShowPlan {
            checkpoint,
            seed,
            json,
        } => {
            let plan = cmd_show_plan(&cfg, &checkpoint, seed)?;
            if json {
                writeln!(stdout, "{}", serde_json::to_string_pretty(&plan)?)?;
            } else {
                write!(stdout, "{}", plan.render())?;
            }
            Ok(plan.plan_valid && plan.hops.iter().all(|h| h.mask_valid))
        }
        Command::Oracle {
            cases,
            samples,
            max_deceivers,
            seed,
        } => {
            let scn = cfg.build_scenario(None)?;
            let rows = cmd_leakage_oracle(
                &scn,
                &cfg.env.power_levels,
                max_deceivers,
                cases,
                samples,
                seed,
            )?;
            std::fs::create_dir_all(&out)?;
            let mut file =
                std::io::BufWriter::new(std::fs::File::create(out.join("oracle.jsonl"))?);
            for row in &rows {
                let line = serde_json::to_string(row)?;
                writeln!(file, "{line}")?;
                writeln!(stdout, "{line}")?;
            }
            file.flush()?;
            Ok(true)
        }
        Command::Powers {
            time_budget,
            energy_budget,
            payload_bits,
        } => {
            let scn = cfg.build_scenario(None)?;
            let budget = HopBudget {
                time_budget,
                energy_budget,
                payload_bits,
            };
            let rows = cmd_powers(&scn, &budget, Some(&out))?;
            writeln!(
                stdout,
                "{} rows written to {}",
                rows.len(),
                out.join("powers.csv").display()
            )?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
