//! Two-layer penalty solver for the perfect-CSI design problem.
//!
//! The coupling products `g^H w` and `h_k^H w` are split off as auxiliary
//! variables, their mismatch is charged to the objective with weight
//! `1/(2 rho)`, and the inner loop cycles exact/majorized block updates
//! (auxiliaries, beamformers, IRS phases) while the outer loop shrinks `rho`
//! geometrically until the largest squared mismatch `xi` falls below the
//! outer tolerance.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;
use thiserror::Error;

use crate::channel::{effective_channels, ChannelSet, C64};
use crate::kernels::{
    self, max_mismatch_sq, mm_phase_update, phase_objective, solve_beamformer_block,
    solve_y_block, solve_z_block, standard_beam_group, AuxiliaryVars, BeamGroup, KernelError,
};
use crate::metrics::{audit, FeasibilityAudit, QosSpec, Solution};

#[derive(Debug, Error)]
pub enum PenaltyError {
    #[error("QoS targets appear infeasible: the SINR block failed for every user repeatedly")]
    InfeasibleQos,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("radar null-space scheme needs more antennas than users (N {n} <= K {k})")]
    Unsupported { n: usize, k: usize },
}

/// Penalty-loop parameters; defaults follow the reference operating point
/// (`rho = 0.1`, `c = 0.85`, inner tolerance `1e-2`, outer `1e-4`).
#[derive(Debug, Clone, Serialize)]
pub struct PenaltyConfig {
    pub rho_init: f64,
    pub scale_c: f64,
    pub eps_inner: f64,
    pub eps_outer: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    /// Relative headroom kept inside the power budget so the final exact-fit
    /// polish cannot push the solution past `P_max`.
    pub power_margin: f64,
    /// Seed for the random-phase initialization.
    pub init_seed: u64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            rho_init: 0.1,
            scale_c: 0.85,
            eps_inner: 1e-2,
            eps_outer: 1e-4,
            max_inner: 200,
            max_outer: 200,
            power_margin: 1e-3,
            init_seed: 0,
        }
    }
}

/// One outer-iteration trace record.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub rho: f64,
    pub objective: f64,
    pub xi: f64,
}

/// Convergence traces plus the final feasibility audit.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    /// Penalized objective after every inner iteration, all outers chained.
    pub objective_trace: Vec<f64>,
    /// `xi` after each outer iteration.
    pub xi_trace: Vec<f64>,
    pub inner_counts: Vec<usize>,
    pub converged: bool,
    pub wall_time_s: f64,
    pub final_audit: FeasibilityAudit,
    pub rows: Vec<TraceRow>,
}

/// Structural switches used by the comparison schemes; the proposed design
/// uses `Variant::default()`.
#[derive(Debug, Clone, Default)]
pub struct Variant {
    /// Keep the initial phase vector fixed (no MM updates).
    pub fix_phase: bool,
    /// No dedicated radar beams: power goes to communication beams only and
    /// the radar columns stay identically zero.
    pub comm_only: bool,
    /// Communication beams confined to the null space of the target channel.
    pub comm_zf: bool,
    /// Radar beams confined to `basis * w_hat` (null space of the users).
    pub radar_basis: Option<DMatrix<C64>>,
}

/// Largest squared mismatch between products and auxiliaries (the outer-loop
/// termination indicator).
pub fn violation_xi(sol: &Solution, aux: &AuxiliaryVars, set: &ChannelSet) -> f64 {
    max_mismatch_sq(&sol.v, &sol.w_c, &sol.w_r, aux, set)
}

/// Builds the default starting point: seeded uniform-random phases and
/// matched-filter beams carrying `0.9 * P_budget` split across the columns.
pub fn initial_solution(
    set_norm: &ChannelSet,
    qos: &QosSpec,
    cfg: &PenaltyConfig,
    variant: &Variant,
) -> Solution {
    let m = set_norm.n_irs();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.init_seed);
    let v = DVector::from_fn(m, |_, _| {
        C64::from_polar(1.0, rng.gen::<f64>() * std::f64::consts::TAU)
    });
    initial_solution_at(set_norm, qos, cfg, variant, v)
}

/// Same construction with a caller-supplied phase vector (fixed-phase
/// comparison schemes pick `v` first).
pub fn initial_solution_at(
    set_norm: &ChannelSet,
    qos: &QosSpec,
    cfg: &PenaltyConfig,
    variant: &Variant,
    v: DVector<C64>,
) -> Solution {
    let n = set_norm.n_bs();
    let k_users = set_norm.n_users();
    let m = set_norm.n_irs();
    let (h, g) = effective_channels(&v, set_norm);
    let p_budget = qos.p_max_watt() * (1.0 - cfg.power_margin);
    let n_cols = if variant.comm_only { k_users } else { k_users + n };
    let p_col = 0.9 * p_budget / n_cols as f64;

    let mut sol = Solution::zeros(n, k_users, m);
    sol.v = v;
    for k in 0..k_users {
        let dir = if variant.comm_zf {
            project_off(&h[k], &g)
        } else {
            h[k].clone()
        };
        let nrm = dir.norm();
        if nrm > 0.0 {
            sol.w_c
                .set_column(k, &(dir * C64::new(p_col.sqrt() / nrm, 0.0)));
        }
    }
    if !variant.comm_only {
        for nn in 0..n {
            let dir = match &variant.radar_basis {
                Some(basis) => {
                    let gt = basis.adjoint() * &g;
                    basis * gt
                }
                None => g.clone(),
            };
            let nrm = dir.norm();
            if nrm > 0.0 {
                sol.w_r
                    .set_column(nn, &(dir * C64::new(p_col.sqrt() / nrm, 0.0)));
            }
        }
    }
    sol
}

fn project_off(x: &DVector<C64>, g: &DVector<C64>) -> DVector<C64> {
    let gg = g.norm_squared();
    if gg == 0.0 {
        return x.clone();
    }
    let coef = (g.adjoint() * x)[0] / Complex64::new(gg, 0.0);
    x - g * coef
}

/// Auxiliaries set to the exact products of the current solution.
fn aux_from_products(sol: &Solution, h: &[DVector<C64>], g: &DVector<C64>) -> AuxiliaryVars {
    let k_users = sol.n_users();
    let n_radar = sol.w_r.ncols();
    let mut aux = AuxiliaryVars::zeros(k_users, n_radar);
    for k in 0..k_users {
        aux.y_c[k] = (g.adjoint() * sol.w_c.column(k))[0];
        for i in 0..k_users {
            aux.z_c[k][i] = (h[k].adjoint() * sol.w_c.column(i))[0];
        }
        for n in 0..n_radar {
            aux.z_r[k][n] = (h[k].adjoint() * sol.w_r.column(n))[0];
        }
    }
    for n in 0..n_radar {
        aux.y_r[n] = (g.adjoint() * sol.w_r.column(n))[0];
    }
    aux
}

/// Runs the proposed penalty algorithm with the default initialization.
pub fn run(
    set: &ChannelSet,
    qos: &QosSpec,
    noise_user_var: f64,
    noise_target_var: f64,
    cfg: &PenaltyConfig,
) -> Result<(Solution, SolveReport), PenaltyError> {
    let set_norm = set.normalized(noise_user_var.sqrt(), noise_target_var.sqrt());
    let variant = Variant::default();
    let init = initial_solution(&set_norm, qos, cfg, &variant);
    run_with(
        set,
        &set_norm,
        qos,
        noise_user_var,
        noise_target_var,
        cfg,
        &variant,
        init,
    )
}

/// Runs the penalty machinery on pre-normalized channels with explicit
/// structural switches; used directly by the comparison schemes.
#[allow(clippy::too_many_arguments)]
pub fn run_with(
    set_raw: &ChannelSet,
    set_norm: &ChannelSet,
    qos: &QosSpec,
    noise_user_var: f64,
    noise_target_var: f64,
    cfg: &PenaltyConfig,
    variant: &Variant,
    init: Solution,
) -> Result<(Solution, SolveReport), PenaltyError> {
    let start = std::time::Instant::now();
    let k_users = set_norm.n_users();
    let n = set_norm.n_bs();
    let r_th = qos.sinr_min_lin();
    let r_e = qos.leak_max_lin();
    let p_budget = qos.p_max_watt() * (1.0 - cfg.power_margin);

    if variant.radar_basis.is_some() && n <= k_users {
        return Err(PenaltyError::Unsupported { n, k: k_users });
    }

    let mut sol = init;
    let (mut h, mut g) = effective_channels(&sol.v, set_norm);
    let mut aux = aux_from_products(&sol, &h, &g);

    // restore the SINR floor on the auxiliaries, then make the leakage
    // expansion point feasible
    for k in 0..k_users {
        let a: Vec<C64> = (0..k_users).map(|i| aux.z_c[k][i]).collect();
        let b = aux.z_r[k].clone();
        if let Ok((zc, zr, _)) =
            solve_z_block(&a, &b, k, r_th[k], 1.0, kernels::BISECT_RESIDUAL_TOL)
        {
            aux.z_c[k] = zc;
            aux.z_r[k] = zr;
        }
    }
    if !variant.comm_zf {
        kernels::project_leakage_feasible(&mut aux.y_c, &aux.y_r, &r_e, 1.0);
    } else {
        aux.y_c.iter_mut().for_each(|y| *y = C64::new(0.0, 0.0));
    }

    let penalized = |sol: &Solution, aux: &AuxiliaryVars, rho: f64| -> f64 {
        let gain: f64 = aux.y_c.iter().map(|y| y.norm_sqr()).sum::<f64>()
            + aux.y_r.iter().map(|y| y.norm_sqr()).sum::<f64>();
        gain - phase_objective(&sol.v, &sol.w_c, &sol.w_r, aux, set_norm) / (2.0 * rho)
    };

    let mut rho = cfg.rho_init;
    let mut objective_trace = Vec::new();
    let mut xi_trace = Vec::new();
    let mut inner_counts = Vec::new();
    let mut rows = Vec::new();
    let mut converged = false;
    let mut infeasible_sweeps = 0usize;

    'outer: for outer in 0..cfg.max_outer {
        let mut prev_obj = penalized(&sol, &aux, rho);
        let mut inners = 0usize;
        for _ in 0..cfg.max_inner {
            // z blocks (independent per user)
            let mut failures = 0usize;
            for k in 0..k_users {
                let a: Vec<C64> = (0..k_users)
                    .map(|i| (h[k].adjoint() * sol.w_c.column(i))[0])
                    .collect();
                let b: Vec<C64> = (0..sol.w_r.ncols())
                    .map(|nn| (h[k].adjoint() * sol.w_r.column(nn))[0])
                    .collect();
                match solve_z_block(&a, &b, k, r_th[k], 1.0, kernels::BISECT_RESIDUAL_TOL) {
                    Ok((zc, zr, _)) => {
                        aux.z_c[k] = zc;
                        aux.z_r[k] = zr;
                    }
                    Err(KernelError::InfeasibleBlock) => failures += 1,
                    Err(e) => return Err(e.into()),
                }
            }
            if failures == k_users {
                infeasible_sweeps += 1;
                if infeasible_sweeps >= 3 {
                    return Err(PenaltyError::InfeasibleQos);
                }
            } else {
                infeasible_sweeps = 0;
            }

            // y block
            let p: Vec<C64> = (0..k_users)
                .map(|k| (g.adjoint() * sol.w_c.column(k))[0])
                .collect();
            let q: Vec<C64> = (0..sol.w_r.ncols())
                .map(|nn| (g.adjoint() * sol.w_r.column(nn))[0])
                .collect();
            if variant.comm_zf {
                // numerators are structurally zero; the cap is inactive and
                // the update is the unconstrained closed form on y_r
                for nn in 0..q.len() {
                    aux.y_r[nn] = q[nn] + aux.y_r[nn] * C64::new(2.0 * rho, 0.0);
                }
            } else {
                let (yc, yr) = solve_y_block(&p, &q, &aux.y_c, &aux.y_r, &r_e, 1.0, rho)?;
                aux.y_c = yc;
                aux.y_r = yr;
            }

            // beamformer block
            let groups = build_groups(&h, &g, &aux, variant);
            let (beams, _) = solve_beamformer_block(&groups, p_budget, kernels::BISECT_RESIDUAL_TOL);
            apply_beams(&mut sol, &beams, variant);

            // phase block
            if !variant.fix_phase {
                sol.v = mm_phase_update(&sol.v, &sol.w_c, &sol.w_r, &aux, set_norm);
                let eff = effective_channels(&sol.v, set_norm);
                h = eff.0;
                g = eff.1;
            }

            inners += 1;
            let obj = penalized(&sol, &aux, rho);
            objective_trace.push(obj);
            let increase = (obj - prev_obj) / prev_obj.abs().max(1e-12);
            prev_obj = obj;
            if increase.abs() < cfg.eps_inner {
                break;
            }
        }

        let xi = violation_xi(&sol, &aux, set_norm);
        xi_trace.push(xi);
        inner_counts.push(inners);
        rows.push(TraceRow {
            iteration: outer,
            rho,
            objective: prev_obj,
            xi,
        });
        if xi < cfg.eps_outer {
            converged = true;
            break 'outer;
        }
        rho *= cfg.scale_c;
    }

    if converged {
        polish_exact_products(&mut sol, &h, &g, &aux, variant, qos.p_max_watt());
    }

    let final_audit = audit(&sol, set_raw, qos, noise_user_var, noise_target_var);
    let report = SolveReport {
        objective_trace,
        xi_trace,
        inner_counts,
        converged,
        wall_time_s: start.elapsed().as_secs_f64(),
        final_audit,
        rows,
    };
    Ok((sol, report))
}

fn build_groups(
    h: &[DVector<C64>],
    g: &DVector<C64>,
    aux: &AuxiliaryVars,
    variant: &Variant,
) -> Vec<BeamGroup> {
    let k_users = h.len();
    let n_radar = aux.y_r.len();
    if variant.comm_zf {
        // communication beams fit only the user products through projected
        // channels; radar beams keep the full structure
        let h_proj: Vec<DVector<C64>> = h.iter().map(|hk| project_off(hk, g)).collect();
        let comm = BeamGroup {
            obs: h_proj,
            coeffs: (0..k_users)
                .map(|k| (0..k_users).map(|i| aux.z_c[i][k]).collect())
                .collect(),
            basis: None,
        };
        let mut radar_obs: Vec<DVector<C64>> = h.to_vec();
        radar_obs.push(g.clone());
        let radar = BeamGroup {
            obs: radar_obs,
            coeffs: (0..n_radar)
                .map(|nn| {
                    let mut c: Vec<C64> = (0..k_users).map(|i| aux.z_r[i][nn]).collect();
                    c.push(aux.y_r[nn]);
                    c
                })
                .collect(),
            basis: None,
        };
        return vec![comm, radar];
    }
    if let Some(basis) = &variant.radar_basis {
        let comm = BeamGroup {
            obs: {
                let mut obs: Vec<DVector<C64>> = h.to_vec();
                obs.push(g.clone());
                obs
            },
            coeffs: (0..k_users)
                .map(|k| {
                    let mut c: Vec<C64> = (0..k_users).map(|i| aux.z_c[i][k]).collect();
                    c.push(aux.y_c[k]);
                    c
                })
                .collect(),
            basis: None,
        };
        // radar beams live in the user null space: only the target channel
        // component survives
        let radar = BeamGroup {
            obs: vec![basis.adjoint() * g],
            coeffs: (0..n_radar).map(|nn| vec![aux.y_r[nn]]).collect(),
            basis: Some(basis.clone()),
        };
        return vec![comm, radar];
    }
    vec![standard_beam_group(h, g, aux)]
}

fn apply_beams(sol: &mut Solution, beams: &[Vec<DVector<C64>>], variant: &Variant) {
    let k_users = sol.n_users();
    if variant.comm_zf || variant.radar_basis.is_some() {
        for k in 0..k_users {
            sol.w_c.set_column(k, &beams[0][k]);
        }
        for nn in 0..sol.w_r.ncols() {
            sol.w_r.set_column(nn, &beams[1][nn]);
        }
    } else {
        for k in 0..k_users {
            sol.w_c.set_column(k, &beams[0][k]);
        }
        for nn in 0..sol.w_r.ncols() {
            sol.w_r.set_column(nn, &beams[0][k_users + nn]);
        }
    }
}

/// After convergence the auxiliaries satisfy the constraints exactly while
/// the true products match them only to `sqrt(xi)`. When each beam has at
/// least as many antennas as fit equations, re-solve the beams so the
/// products equal the auxiliaries exactly; the audit then sees the
/// constraints at the auxiliary accuracy.
fn polish_exact_products(
    sol: &mut Solution,
    h: &[DVector<C64>],
    g: &DVector<C64>,
    aux: &AuxiliaryVars,
    variant: &Variant,
    p_max: f64,
) {
    let groups = build_groups(h, g, aux, variant);
    let mut candidate = sol.clone();
    let mut beams_per_group: Vec<Vec<DVector<C64>>> = Vec::new();
    for grp in &groups {
        let dim = match &grp.basis {
            Some(b) => b.ncols(),
            None => match grp.obs.first() {
                Some(o) => o.len(),
                None => return,
            },
        };
        let rows = grp.obs.len();
        if rows > dim {
            return; // overdetermined fit: no exact polish available
        }
        let mut a = DMatrix::zeros(rows, dim);
        for (r, o) in grp.obs.iter().enumerate() {
            for c in 0..dim {
                a[(r, c)] = o[c].conj();
            }
        }
        let svd = a.svd(true, true);
        let mut beams = Vec::with_capacity(grp.coeffs.len());
        for coef in &grp.coeffs {
            let t = DVector::from_fn(rows, |r, _| coef[r]);
            let w_hat = match svd.solve(&t, 1e-12) {
                Ok(w) => w,
                Err(_) => return,
            };
            let w = match &grp.basis {
                Some(b) => b * w_hat,
                None => w_hat,
            };
            beams.push(w);
        }
        beams_per_group.push(beams);
    }
    apply_beams(&mut candidate, &beams_per_group, variant);
    let power = crate::metrics::total_power(&candidate);
    if power <= p_max {
        let drift = (0..sol.n_users())
            .map(|k| (candidate.w_c.column(k) - sol.w_c.column(k)).norm())
            .chain((0..sol.w_r.ncols()).map(|n| (candidate.w_r.column(n) - sol.w_r.column(n)).norm()))
            .fold(0.0f64, f64::max);
        let scale = crate::metrics::total_power(sol).sqrt().max(1.0);
        if drift <= 0.05 * scale {
            *sol = candidate;
        }
    }
}
