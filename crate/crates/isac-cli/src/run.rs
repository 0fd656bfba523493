//! Experiment execution: seeds x sweep values fan out to a worker pool, each
//! worker owns its solver state, and results merge deterministically by
//! (sweep index, seed) regardless of completion order.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use isac::baselines::run_baseline;
use isac::channel::{synthesize, ScenarioConfig};
use isac::metrics::{write_solution, FeasibilityAudit};
use isac::penalty::{run as run_penalty, PenaltyConfig, SolveReport};
use isac::robust::{solve_robust, RobustConfig, UncertaintySpec};

use crate::plan::{ExperimentPlan, Manifest, Scheme};

#[derive(Debug, Clone, Serialize)]
struct ResultRow {
    sweep_value: f64,
    seed: u64,
    beampattern_gain: f64,
    sinr_worst_db: f64,
    leak_worst_db: f64,
    power_used: f64,
    iterations: usize,
    wall_time_s: f64,
}

#[derive(Debug, Serialize)]
struct TraceFile {
    scheme: &'static str,
    sweep_value: f64,
    seed: u64,
    converged: bool,
    objective_trace: Vec<f64>,
    xi_trace: Vec<f64>,
    rows: serde_json::Value,
    final_audit: FeasibilityAudit,
}

struct Job {
    scheme: Scheme,
    sweep_idx: usize,
    seed_idx: u64,
}

struct JobOutput {
    row: ResultRow,
    trace_json: String,
    solution_text: Option<String>,
}

/// Derives one channel seed from the base seed and the Monte-Carlo index.
fn derive_seed(base: u64, seed_idx: u64) -> u64 {
    // splitmix64 step over the combined word
    let mut z = base ^ (seed_idx.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn run_job(plan: &ExperimentPlan, job: &Job) -> Result<JobOutput> {
    let sweep_value = plan.sweep.values[job.sweep_idx];
    let (mut scenario, qos_plan) = plan.resolve(sweep_value);
    scenario.rng_seed = derive_seed(plan.scenario.rng_seed, job.seed_idx);
    let set = synthesize(&scenario).map_err(|e| anyhow::anyhow!("synthesis: {e}"))?;
    let qos = qos_plan.to_spec(scenario.n_users);
    let nu = scenario.noise_user_var();
    let nt = scenario.noise_target_var();

    let mut pcfg = PenaltyConfig::default();
    pcfg.init_seed = derive_seed(scenario.rng_seed, 0xBEEF);

    let (solution, report): (isac::Solution, SolveReport) = match job.scheme {
        Scheme::Proposed => run_penalty(&set, &qos, nu, nt, &pcfg)
            .map_err(|e| anyhow::anyhow!("penalty solver: {e}"))?,
        Scheme::Robust => {
            let u = &plan.uncertainty;
            let unc = UncertaintySpec::relative_uniform(scenario.n_users, u.eps_error);
            let mut rcfg = RobustConfig::default();
            rcfg.grid_az = u.grid_az;
            rcfg.grid_el = u.grid_el;
            rcfg.init_seed = pcfg.init_seed;
            let out = solve_robust(&set, &scenario.target, &qos, nu, nt, &unc, &rcfg)
                .map_err(|e| anyhow::anyhow!("robust solver: {e}"))?;
            (out.solution, out.report)
        }
        baseline => {
            let kind = baseline.baseline().expect("baseline scheme");
            run_baseline(kind, &set, &qos, nu, nt, &pcfg)
                .map_err(|e| anyhow::anyhow!("baseline {}: {e}", baseline.tag()))?
        }
    };

    let audit = &report.final_audit;
    let worst_sinr = audit
        .sinr_db
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let worst_leak = audit
        .leak_db
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let row = ResultRow {
        sweep_value,
        seed: job.seed_idx,
        beampattern_gain: audit.beampattern_gain,
        sinr_worst_db: worst_sinr,
        leak_worst_db: worst_leak,
        power_used: audit.power_used,
        iterations: report.xi_trace.len(),
        wall_time_s: if plan.zero_timing {
            0.0
        } else {
            report.wall_time_s
        },
    };
    let trace = TraceFile {
        scheme: job.scheme.tag(),
        sweep_value,
        seed: job.seed_idx,
        converged: report.converged,
        objective_trace: report.objective_trace.clone(),
        xi_trace: report.xi_trace.clone(),
        rows: serde_json::to_value(&report.rows).unwrap_or(serde_json::Value::Null),
        final_audit: report.final_audit.clone(),
    };
    Ok(JobOutput {
        row,
        trace_json: serde_json::to_string_pretty(&trace)?,
        solution_text: plan.save_solutions.then(|| write_solution(&solution)),
    })
}

fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v}")
    }
}

fn write_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut out = String::new();
    out.push_str(
        "sweep_value,seed,beampattern_gain,sinr_worst_db,leak_worst_db,power_used,iterations,wall_time_s\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            fmt_f64(r.sweep_value),
            r.seed,
            fmt_f64(r.beampattern_gain),
            fmt_f64(r.sinr_worst_db),
            fmt_f64(r.leak_worst_db),
            fmt_f64(r.power_used),
            r.iterations,
            fmt_f64(r.wall_time_s),
        );
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Runs the full plan; returns the output directory.
pub fn run_experiment(
    plan: &ExperimentPlan,
    workers: usize,
) -> Result<std::path::PathBuf> {
    plan.validate()?;
    let out_dir = plan.outputs.clone();
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output dir {}", out_dir.display()))?;
    let traces_dir = out_dir.join("traces");
    std::fs::create_dir_all(&traces_dir)?;
    let sol_dir = out_dir.join("solutions");
    if plan.save_solutions {
        std::fs::create_dir_all(&sol_dir)?;
    }

    // enumerate jobs in deterministic order
    let mut jobs = VecDeque::new();
    for scheme in &plan.schemes {
        for sweep_idx in 0..plan.sweep.values.len() {
            for seed_idx in 0..plan.n_seeds {
                jobs.push_back(Job {
                    scheme: *scheme,
                    sweep_idx,
                    seed_idx,
                });
            }
        }
    }
    let total = jobs.len();
    let queue = Mutex::new(jobs);
    let results: Mutex<Vec<Option<(Scheme, usize, u64, JobOutput)>>> =
        Mutex::new((0..total).map(|_| None).collect());
    let order = Mutex::new(0usize);

    let workers = workers.max(1);
    let errors: Mutex<Vec<String>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let job = {
                    let mut q = queue.lock().unwrap();
                    match q.pop_front() {
                        Some(j) => j,
                        None => break,
                    }
                };
                let slot = {
                    let mut o = order.lock().unwrap();
                    let s = *o;
                    *o += 1;
                    s
                };
                match run_job(plan, &job) {
                    Ok(out) => {
                        results.lock().unwrap()[slot] =
                            Some((job.scheme, job.sweep_idx, job.seed_idx, out));
                    }
                    Err(e) => {
                        errors.lock().unwrap().push(format!(
                            "{} sweep {} seed {}: {e}",
                            job.scheme.tag(),
                            job.sweep_idx,
                            job.seed_idx
                        ));
                    }
                }
            });
        }
    });
    let errors = errors.into_inner().unwrap();
    if !errors.is_empty() {
        bail!("{} job(s) failed:\n{}", errors.len(), errors.join("\n"));
    }

    // deterministic merge: key by (scheme order, sweep_idx, seed)
    let mut collected: Vec<(Scheme, usize, u64, JobOutput)> = results
        .into_inner()
        .unwrap()
        .into_iter()
        .flatten()
        .collect();
    collected.sort_by_key(|(scheme, sweep, seed, _)| {
        let scheme_pos = plan.schemes.iter().position(|s| s == scheme).unwrap();
        (scheme_pos, *sweep, *seed)
    });

    let mut aggregate = String::from(
        "scheme,sweep_value,beampattern_gain,sinr_worst_db,leak_worst_db,power_used,iterations,wall_time_s\n",
    );
    for scheme in &plan.schemes {
        let rows: Vec<&(Scheme, usize, u64, JobOutput)> = collected
            .iter()
            .filter(|(s, _, _, _)| s == scheme)
            .collect();
        let mut csv_rows = Vec::new();
        for (_, sweep_idx, seed, out) in &rows {
            csv_rows.push(out.row.clone());
            let name = format!("{}_{}_{}", scheme.tag(), sweep_idx, seed);
            std::fs::write(traces_dir.join(format!("{name}.json")), &out.trace_json)?;
            if let Some(sol) = &out.solution_text {
                std::fs::write(sol_dir.join(format!("{name}.txt")), sol)?;
            }
        }
        write_csv(&out_dir.join(format!("{}.csv", scheme.tag())), &csv_rows)?;

        for (sweep_idx, value) in plan.sweep.values.iter().enumerate() {
            let grp: Vec<&ResultRow> = rows
                .iter()
                .filter(|(_, si, _, _)| *si == sweep_idx)
                .map(|(_, _, _, o)| &o.row)
                .collect();
            if grp.is_empty() {
                continue;
            }
            let mean = |f: &dyn Fn(&ResultRow) -> f64| -> f64 {
                grp.iter().map(|r| f(r)).sum::<f64>() / grp.len() as f64
            };
            let _ = writeln!(
                aggregate,
                "{},{},{},{},{},{},{},{}",
                scheme.tag(),
                fmt_f64(*value),
                fmt_f64(mean(&|r| r.beampattern_gain)),
                fmt_f64(mean(&|r| r.sinr_worst_db)),
                fmt_f64(mean(&|r| r.leak_worst_db)),
                fmt_f64(mean(&|r| r.power_used)),
                fmt_f64(mean(&|r| r.iterations as f64)),
                fmt_f64(mean(&|r| r.wall_time_s)),
            );
        }
    }
    std::fs::write(out_dir.join("aggregate.csv"), aggregate)?;

    let manifest = Manifest {
        version: crate::plan::version_string(),
        plan: plan.clone(),
    };
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(out_dir)
}

/// Sweeps the beampattern of a stored solution over an angle window and
/// writes (azimuth, elevation, gain, normalized_gain_db) rows.
pub fn beampattern_sweep(
    solution: &isac::Solution,
    scenario: &ScenarioConfig,
    az: (f64, f64, usize),
    el: (f64, f64, usize),
) -> Result<String> {
    let set = synthesize(scenario).map_err(|e| anyhow::anyhow!("synthesis: {e}"))?;
    let axis = |(lo, hi, n): (f64, f64, usize)| -> Vec<f64> {
        if n <= 1 {
            vec![lo]
        } else {
            (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect()
        }
    };
    let azs = axis(az);
    let els = axis(el);
    let mut gains = Vec::with_capacity(azs.len() * els.len());
    let mut peak = 0.0f64;
    for a in &azs {
        for e in &els {
            let g = isac::beampattern_at(solution, &set, *a, *e);
            peak = peak.max(g);
            gains.push((*a, *e, g));
        }
    }
    let mut out = String::from("azimuth,elevation,gain,normalized_gain_db\n");
    for (a, e, g) in gains {
        let norm_db = if peak > 0.0 && g > 0.0 {
            (10.0 * (g / peak).log10()).max(-120.0)
        } else {
            -120.0
        };
        let _ = writeln!(out, "{},{},{},{}", fmt_f64(a), fmt_f64(e), fmt_f64(g), fmt_f64(norm_db));
    }
    Ok(out)
}
