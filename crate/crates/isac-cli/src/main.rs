//! Command-line experiment driver for the secure IRS-ISAC library.

mod plan;
mod run;

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use isac::channel::ScenarioConfig;
use isac::metrics::{audit, read_solution, QosSpec};

#[derive(Parser)]
#[command(name = "isac", version, about = "Secure IRS-ISAC experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment plan (Monte-Carlo sweep over seeds and a parameter).
    Run {
        /// Plan file (TOML).
        #[arg(long, conflicts_with = "from_manifest")]
        plan: Option<PathBuf>,
        /// Re-run a previous experiment from its manifest (JSON).
        #[arg(long)]
        from_manifest: Option<PathBuf>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the base channel seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Sweep the beampattern of a stored solution over an angle window.
    Beampattern {
        /// Solution file (flat text format).
        #[arg(long)]
        solution: PathBuf,
        /// Scenario file (TOML).
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = -90.0)]
        az_start: f64,
        #[arg(long, default_value_t = 90.0)]
        az_end: f64,
        #[arg(long, default_value_t = 181)]
        az_points: usize,
        #[arg(long, default_value_t = 0.0)]
        el_start: f64,
        #[arg(long, default_value_t = 80.0)]
        el_end: f64,
        #[arg(long, default_value_t = 81)]
        el_points: usize,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Audit a stored solution against a scenario and QoS targets.
    Validate {
        #[arg(long)]
        solution: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        sinr_min_db: f64,
        #[arg(long, default_value_t = 0.0)]
        leak_max_db: f64,
        #[arg(long, default_value_t = 40.0)]
        p_max_dbm: f64,
    },
}

fn check_backend() -> Result<()> {
    match std::env::var("ISAC_SOLVER_BACKEND") {
        Ok(v) if v != "bundled" => {
            bail!("unknown solver backend `{v}`; only `bundled` is available")
        }
        _ => Ok(()),
    }
}

fn load_scenario(path: &PathBuf) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading scenario {}", path.display()))?;
    let cfg: ScenarioConfig = toml::from_str(&text).context("parsing scenario TOML")?;
    cfg.validate().map_err(|e| anyhow::anyhow!("scenario: {e}"))?;
    Ok(cfg)
}

fn main() -> Result<()> {
    check_backend()?;
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            plan,
            from_manifest,
            out,
            seed,
            workers,
        } => {
            let mut plan = match (plan, from_manifest) {
                (Some(p), None) => plan::load_plan(&p)?,
                (None, Some(m)) => plan::load_manifest(&m)?.plan,
                _ => bail!("exactly one of --plan or --from-manifest is required"),
            };
            if let Some(out) = out {
                plan.outputs = out;
            }
            if let Some(seed) = seed {
                plan.scenario.rng_seed = seed;
            }
            let dir = run::run_experiment(&plan, workers)?;
            println!("results written to {}", dir.display());
        }
        Command::Beampattern {
            solution,
            scenario,
            az_start,
            az_end,
            az_points,
            el_start,
            el_end,
            el_points,
            out,
        } => {
            let sol_text = std::fs::read_to_string(&solution)
                .with_context(|| format!("reading solution {}", solution.display()))?;
            let sol = read_solution(&sol_text).map_err(|e| anyhow::anyhow!("solution: {e}"))?;
            let scen = load_scenario(&scenario)?;
            let csv = run::beampattern_sweep(
                &sol,
                &scen,
                (az_start, az_end, az_points),
                (el_start, el_end, el_points),
            )?;
            match out {
                Some(path) => std::fs::write(&path, csv)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{csv}"),
            }
        }
        Command::Validate {
            solution,
            scenario,
            sinr_min_db,
            leak_max_db,
            p_max_dbm,
        } => {
            let sol_text = std::fs::read_to_string(&solution)
                .with_context(|| format!("reading solution {}", solution.display()))?;
            let sol = read_solution(&sol_text).map_err(|e| anyhow::anyhow!("solution: {e}"))?;
            let scen = load_scenario(&scenario)?;
            let set = isac::synthesize(&scen).map_err(|e| anyhow::anyhow!("synthesis: {e}"))?;
            let qos = QosSpec::uniform(scen.n_users, sinr_min_db, leak_max_db, p_max_dbm);
            let report = audit(
                &sol,
                &set,
                &qos,
                scen.noise_user_var(),
                scen.noise_target_var(),
            );
            println!("{}", serde_json::to_string_pretty(&report)?);
            if report.worst_violation > 1e-6 {
                std::process::exit(1);
            }
        }
    }
    Ok(())
}
