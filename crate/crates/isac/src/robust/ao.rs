//! Alternating optimization between the beamformer SDP and the phase SDP.
//!
//! Each iteration re-expands the linearized constraint families at the
//! current point, solves the beamformer subproblem exactly, then the phase
//! subproblem with the square-penalty objective that pushes every phase
//! coefficient onto the unit circle. After convergence the phases are
//! projected exactly onto the circle and the beamformers re-certified once.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;
use thiserror::Error;

use conic::{ConicProgram, ConicSolution, SolveStatus, SolverOptions};

use crate::channel::{ChannelSet, TargetRegion, C64};
use crate::metrics::{audit, QosSpec, Solution};
use crate::penalty::SolveReport;
use crate::robust::lmi::{build_program, Mode, Point, RobustCtx, VarMap};
use crate::robust::{make_grid, AngleGrid, ResolvedRadii, UncertaintySpec};

#[derive(Debug, Error)]
pub enum RobustError {
    #[error("robust subproblem infeasible at the initial point (worst family: {family})")]
    Infeasible { family: String },
    #[error("SDP backend failed ({context}): status {status:?}, residual {residual:.3e}")]
    SolverFailure {
        context: String,
        status: SolveStatus,
        residual: f64,
    },
    #[error("phase penalty failed to reach the unit circle (min |v_m| = {min_mod:.6})")]
    PenaltyStalled { min_mod: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct RobustConfig {
    /// Fractional objective-increase tolerance of the AO loop.
    pub eps: f64,
    pub max_iter: usize,
    pub grid_az: usize,
    pub grid_el: usize,
    /// Square-penalty weight factor: `rho_bar = factor * P_max * ||F_r||_F^2`.
    pub rho_bar_factor: f64,
    /// Feasibility tolerance handed to the SDP backend.
    pub sdp_eps: f64,
    /// Duality-gap tolerance handed to the SDP backend; looser than the
    /// feasibility tolerance because the certificates ride on the primal side
    /// while many ball multipliers are degenerate at the optimum.
    pub sdp_gap: f64,
    pub init_seed: u64,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            max_iter: 40,
            grid_az: 5,
            grid_el: 5,
            rho_bar_factor: 0.1,
            sdp_eps: 1e-7,
            sdp_gap: 1e-5,
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RobustRow {
    pub iteration: usize,
    pub chi: f64,
    pub solver_status: String,
    pub max_residual: f64,
    pub ipm_iterations: usize,
}

#[derive(Debug)]
pub struct RobustOutcome {
    pub solution: Solution,
    pub report: SolveReport,
    pub rows: Vec<RobustRow>,
    /// Certified worst-case beampattern value (noise-normalized units).
    pub chi: f64,
    pub radii: ResolvedRadii,
    pub grid: AngleGrid,
}

fn solve_sdp(
    prog: &ConicProgram,
    eps: f64,
    gap: f64,
    context: &str,
    first_iteration: bool,
) -> Result<ConicSolution, RobustError> {
    let mut opts = SolverOptions {
        eps_feas: eps,
        eps_gap: gap,
        verbose: std::env::var("ISAC_DEBUG_SDP").is_ok(),
        ..SolverOptions::default()
    };
    let mut sol = conic::solve(prog, &opts);
    if sol.status == SolveStatus::Inaccurate {
        opts.eps_feas = eps * 10.0;
        opts.eps_gap = gap * 10.0;
        sol = conic::solve(prog, &opts);
    }
    match sol.status {
        SolveStatus::Optimal => Ok(sol),
        SolveStatus::Infeasible if first_iteration => Err(RobustError::Infeasible {
            family: worst_family(prog, &sol),
        }),
        status => Err(RobustError::SolverFailure {
            context: context.to_string(),
            status,
            residual: sol.max_residual,
        }),
    }
}

/// Names the block family with the largest dual-certificate weight.
fn worst_family(prog: &ConicProgram, sol: &ConicSolution) -> String {
    let mut best = ("unknown".to_string(), 0.0f64);
    for (bi, blk) in prog.blocks().iter().enumerate() {
        if let Some(dual) = sol.block_duals.get(bi) {
            let w = dual.amax();
            if w > best.1 {
                best = (blk.label.clone(), w);
            }
        }
    }
    best.0
}

fn extract_point(vars: &VarMap, x: &DVector<f64>, fixed: &Point) -> Point {
    vars.point_at(x, fixed)
}

/// Solves the bounded-uncertainty design problem end to end.
#[allow(clippy::too_many_arguments)]
pub fn solve_robust(
    set: &ChannelSet,
    region: &TargetRegion,
    qos: &QosSpec,
    noise_user_var: f64,
    noise_target_var: f64,
    uncertainty: &UncertaintySpec,
    cfg: &RobustConfig,
) -> Result<RobustOutcome, RobustError> {
    let start = std::time::Instant::now();
    let set_norm = set.normalized(noise_user_var.sqrt(), noise_target_var.sqrt());
    let radii = uncertainty.resolve(&set_norm);
    let grid = make_grid(region, cfg.grid_az, cfg.grid_el);
    let f_r_dirs: Vec<DMatrix<C64>> = grid
        .directions()
        .map(|(az, el)| set_norm.cascade_at(az, el))
        .collect();
    let r_th = qos.sinr_min_lin();
    let r_e = qos.leak_max_lin();
    let p_max = qos.p_max_watt();

    let n = set_norm.n_bs();
    let k_users = set_norm.n_users();
    let m = set_norm.n_irs();

    // initialization: seeded random phases, matched-filter beams
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.init_seed);
    let v0 = DVector::from_fn(m, |_, _| {
        C64::from_polar(1.0, rng.gen::<f64>() * std::f64::consts::TAU)
    });
    let (h0, g0) = crate::channel::effective_channels(&v0, &set_norm);
    let p_col = 0.9 * p_max / (k_users + n) as f64;
    let mut point = Point {
        w_c: DMatrix::zeros(n, k_users),
        w_r: DMatrix::zeros(n, n),
        v: v0,
    };
    for k in 0..k_users {
        let nrm = h0[k].norm();
        if nrm > 0.0 {
            point
                .w_c
                .set_column(k, &(&h0[k] * Complex64::new(p_col.sqrt() / nrm, 0.0)));
        }
    }
    for nn in 0..n {
        let nrm = g0.norm();
        if nrm > 0.0 {
            point
                .w_r
                .set_column(nn, &(&g0 * Complex64::new(p_col.sqrt() / nrm, 0.0)));
        }
    }

    let fro_fr = set_norm.f_r.iter().map(|e| e.norm_sqr()).sum::<f64>();
    // carried across iterations; doubled whenever the phase block leaves the
    // unit circle, so one run settles the weight once
    let mut rho_bar_base = cfg.rho_bar_factor * p_max * fro_fr;

    let mut rows = Vec::new();
    let mut chi_trace: Vec<f64> = Vec::new();
    let mut residual_trace = Vec::new();
    let mut iter_counts = Vec::new();
    let mut converged = false;

    let mut chi = f64::NEG_INFINITY;
    for it in 0..cfg.max_iter {
        // (a) beamformer subproblem at expansion = current point
        let ctx = RobustCtx {
            set: &set_norm,

            f_r_dirs: &f_r_dirs,
            radii: &radii,
            r_th: &r_th,
            r_e: &r_e,
            p_budget: p_max,
            expansion: &point,
            rho_bar: rho_bar_base,
        };
        let t_build = std::time::Instant::now();
        let (prog, vars) = build_program(&ctx, Mode::Beam);
        let t_built = t_build.elapsed();
        let sol = solve_sdp(&prog, cfg.sdp_eps, cfg.sdp_gap, &format!("beamformer iteration {it}"), it == 0)?;
        if std::env::var("ISAC_DEBUG_SDP_TIME").is_ok() {
            eprintln!(
                "beam it {it}: build {:.3}s solve {:.3}s ({} ipm iters)",
                t_built.as_secs_f64(),
                t_build.elapsed().as_secs_f64() - t_built.as_secs_f64(),
                sol.iterations
            );
        }
        let new_point = extract_point(&vars, &sol.x, &point);
        point.w_c = new_point.w_c;
        point.w_r = new_point.w_r;
        let chi_new = sol.x[vars.chi];
        rows.push(RobustRow {
            iteration: it,
            chi: chi_new,
            solver_status: "optimal".into(),
            max_residual: sol.max_residual,
            ipm_iterations: sol.iterations,
        });
        residual_trace.push(sol.max_residual);
        iter_counts.push(sol.iterations);

        // (b) phase subproblem with escalating square penalty
        let ctx = RobustCtx {
            set: &set_norm,

            f_r_dirs: &f_r_dirs,
            radii: &radii,
            r_th: &r_th,
            r_e: &r_e,
            p_budget: p_max,
            expansion: &point,
            rho_bar: rho_bar_base,
        };
        let (mut prog, vars) = build_program(&ctx, Mode::Phase);
        let mut rho_bar = rho_bar_base;
        let mut accepted = false;
        for _ in 0..=5 {
            rho_bar_base = rho_bar;
            let mut c = DVector::zeros(vars.n_vars);
            c[vars.chi] = 1.0;
            for mi in 0..m {
                c[vars.v_idx(mi, false)] = 2.0 * rho_bar * point.v[mi].re;
                c[vars.v_idx(mi, true)] = 2.0 * rho_bar * point.v[mi].im;
            }
            prog.set_maximize(c).expect("objective length");
            let sol = solve_sdp(&prog, cfg.sdp_eps, cfg.sdp_gap, &format!("phase iteration {it}"), false)?;
            let cand = extract_point(&vars, &sol.x, &point);
            let min_mod = cand.v.iter().map(|e| e.norm()).fold(f64::INFINITY, f64::min);
            if min_mod >= 0.999 {
                point.v = cand.v;
                accepted = true;
                break;
            }
            rho_bar *= 2.0;
        }
        if !accepted {
            // keep phases from the last candidate direction but report loudly
            return Err(RobustError::PenaltyStalled {
                min_mod: point.v.iter().map(|e| e.norm()).fold(f64::INFINITY, f64::min),
            });
        }

        chi_trace.push(chi_new);
        let improved = (chi_new - chi) / chi.abs().max(1e-12);
        let done = it > 0 && improved < cfg.eps;
        chi = chi_new;
        if done {
            converged = true;
            break;
        }
    }

    // exact unit-modulus projection, then one final beamformer certificate
    for mi in 0..m {
        let nrm = point.v[mi].norm();
        point.v[mi] = if nrm == 0.0 {
            Complex64::new(1.0, 0.0)
        } else {
            point.v[mi] / Complex64::new(nrm, 0.0)
        };
    }
    let ctx = RobustCtx {
        set: &set_norm,

        f_r_dirs: &f_r_dirs,
        radii: &radii,
        r_th: &r_th,
        r_e: &r_e,
        p_budget: p_max,
        expansion: &point,
        rho_bar: rho_bar_base,
    };
    let (prog, vars) = build_program(&ctx, Mode::Beam);
    let sol = solve_sdp(&prog, cfg.sdp_eps, cfg.sdp_gap, "final beamformer certificate", false)?;
    let new_point = extract_point(&vars, &sol.x, &point);
    point.w_c = new_point.w_c;
    point.w_r = new_point.w_r;
    chi = sol.x[vars.chi];
    chi_trace.push(chi);
    residual_trace.push(sol.max_residual);
    iter_counts.push(sol.iterations);
    rows.push(RobustRow {
        iteration: rows.len(),
        chi,
        solver_status: "optimal (post-projection)".into(),
        max_residual: sol.max_residual,
        ipm_iterations: sol.iterations,
    });

    let solution = Solution {
        w_c: point.w_c.clone(),
        w_r: point.w_r.clone(),
        v: point.v.clone(),
    };
    let final_audit = audit(&solution, set, qos, noise_user_var, noise_target_var);
    let report = SolveReport {
        objective_trace: chi_trace,
        xi_trace: residual_trace,
        inner_counts: iter_counts,
        converged,
        wall_time_s: start.elapsed().as_secs_f64(),
        final_audit,
        rows: Vec::new(),
    };
    Ok(RobustOutcome {
        solution,
        report,
        rows,
        chi,
        radii,
        grid,
    })
}
