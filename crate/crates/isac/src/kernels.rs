//! Closed-form and small-convex block solvers used inside the penalty
//! algorithm: the per-user auxiliary projection with dual bisection, the
//! leakage-constrained auxiliary update, the semi-closed-form beamformer
//! update with eigendecomposition bisection, and the closed-form phase
//! update built from a linear majorizer.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::channel::{ChannelSet, C64};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("auxiliary block infeasible: |h^H w| = 0 with a positive SINR floor")]
    InfeasibleBlock,
    #[error("small QCQP did not converge: residual {residual:.3e}, comp {comp:.3e}")]
    NoConvergence { residual: f64, comp: f64 },
}

/// Auxiliary variables of the decoupled reformulation: `y_c[k] = g^H w_ck`,
/// `y_r[n] = g^H w_rn`, `z_c[k][i] = h_k^H w_ci`, `z_r[k][n] = h_k^H w_rn`
/// (as targets, not identities, while the penalty is active).
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryVars {
    pub y_c: Vec<C64>,
    pub y_r: Vec<C64>,
    pub z_c: Vec<Vec<C64>>,
    pub z_r: Vec<Vec<C64>>,
}

impl AuxiliaryVars {
    pub fn zeros(k: usize, n: usize) -> Self {
        Self {
            y_c: vec![C64::new(0.0, 0.0); k],
            y_r: vec![C64::new(0.0, 0.0); n],
            z_c: vec![vec![C64::new(0.0, 0.0); k]; k],
            z_r: vec![vec![C64::new(0.0, 0.0); n]; k],
        }
    }
}

/// Outcome of a scalar dual bisection.
#[derive(Debug, Clone, Copy)]
pub struct DualSearchResult {
    pub multiplier: f64,
    pub active: bool,
    pub iterations: usize,
    pub residual: f64,
}

impl DualSearchResult {
    fn inactive() -> Self {
        Self {
            multiplier: 0.0,
            active: false,
            iterations: 0,
            residual: 0.0,
        }
    }
}

pub const BISECT_MAX_ITER: usize = 200;
pub const BISECT_INTERVAL_TOL: f64 = 1e-10;
pub const BISECT_RESIDUAL_TOL: f64 = 1e-8;

/// Solves the per-user auxiliary projection: find the closest `(z_c, z_r)` to
/// the fixed products `(a, b)` subject to the SINR floor
/// `|z_c[k]|^2 >= r_th (sum_{i != k} |z_c[i]|^2 + sum_n |z_r[n]|^2 + noise)`.
///
/// The dual has a single multiplier in `[0, 1)`; the stationary point is
/// `z_c[i] = a_i / (1 + mu r_th)` for `i != k`, `z_c[k] = a_k / (1 - mu)`,
/// `z_r[n] = b_n / (1 + mu r_th)`, with `mu` found by bisection when the
/// constraint is active.
pub fn solve_z_block(
    a: &[C64],
    b: &[C64],
    k: usize,
    r_th: f64,
    noise_var: f64,
    tol: f64,
) -> Result<(Vec<C64>, Vec<C64>, DualSearchResult), KernelError> {
    assert!(k < a.len());
    let interf_at = |mu: f64| -> f64 {
        let d = 1.0 + mu * r_th;
        let mut acc = noise_var;
        for (i, ai) in a.iter().enumerate() {
            if i != k {
                acc += ai.norm_sqr() / (d * d);
            }
        }
        for bn in b {
            acc += bn.norm_sqr() / (d * d);
        }
        acc
    };
    let own_at = |mu: f64| a[k].norm_sqr() / ((1.0 - mu) * (1.0 - mu));
    let gap = |mu: f64| r_th * interf_at(mu) - own_at(mu);

    let scale = r_th * interf_at(0.0) + own_at(0.0);
    let make = |mu: f64, res: DualSearchResult| {
        let d = 1.0 + mu * r_th;
        let zc: Vec<C64> = a
            .iter()
            .enumerate()
            .map(|(i, ai)| {
                if i == k {
                    ai / C64::new(1.0 - mu, 0.0)
                } else {
                    ai / C64::new(d, 0.0)
                }
            })
            .collect();
        let zr: Vec<C64> = b.iter().map(|bn| bn / C64::new(d, 0.0)).collect();
        (zc, zr, res)
    };

    if gap(0.0) <= 0.0 {
        return Ok(make(0.0, DualSearchResult::inactive()));
    }
    if a[k].norm_sqr() <= f64::EPSILON * scale && r_th * noise_var > 0.0 {
        return Err(KernelError::InfeasibleBlock);
    }

    // gap is strictly decreasing on (0, 1) and heads to -inf.
    let (mut lo, mut hi) = (0.0f64, 1.0 - 1e-16);
    let mut iterations = 0;
    let mut mu = 0.5;
    let mut res = gap(mu);
    while iterations < BISECT_MAX_ITER {
        mu = 0.5 * (lo + hi);
        res = gap(mu);
        if res.abs() <= tol * scale || (hi - lo) <= BISECT_INTERVAL_TOL {
            break;
        }
        if res > 0.0 {
            lo = mu;
        } else {
            hi = mu;
        }
        iterations += 1;
    }
    Ok(make(
        mu,
        DualSearchResult {
            multiplier: mu,
            active: true,
            iterations,
            residual: res.abs() / scale,
        },
    ))
}

/// Solves the leakage-constrained auxiliary update around the expansion point
/// `y_prev`: maximize the linearized gain minus the penalty pull toward the
/// fixed products `(p, q)`, subject to per-user leakage caps built from the
/// linearized denominators. A small dense primal-dual interior-point method;
/// the problem has `2 (K + N)` real variables and `K` convex quadratic
/// constraints.
pub fn solve_y_block(
    p: &[C64],
    q: &[C64],
    y_prev_c: &[C64],
    y_prev_r: &[C64],
    r_e_lin: &[f64],
    noise_var_t: f64,
    rho: f64,
) -> Result<(Vec<C64>, Vec<C64>), KernelError> {
    let k_users = p.len();
    let n_radar = q.len();
    let dim = 2 * (k_users + n_radar);

    // reals: [Re y_c, Im y_c, Re y_r, Im y_r] interleaved per entry
    let pack = |c: &[C64], r: &[C64]| {
        let mut u = DVector::zeros(dim);
        for (i, v) in c.iter().enumerate() {
            u[2 * i] = v.re;
            u[2 * i + 1] = v.im;
        }
        for (n, v) in r.iter().enumerate() {
            u[2 * (k_users + n)] = v.re;
            u[2 * (k_users + n) + 1] = v.im;
        }
        u
    };
    let unpack = |u: &DVector<f64>| {
        let yc: Vec<C64> = (0..k_users)
            .map(|i| C64::new(u[2 * i], u[2 * i + 1]))
            .collect();
        let yr: Vec<C64> = (0..n_radar)
            .map(|n| C64::new(u[2 * (k_users + n)], u[2 * (k_users + n) + 1]))
            .collect();
        (yc, yr)
    };

    let prod = pack(p, q);
    let prev = pack(y_prev_c, y_prev_r);

    let unconstrained = r_e_lin.iter().all(|r| !r.is_finite());
    if unconstrained {
        let u = &prod + &prev * (2.0 * rho);
        let (yc, yr) = unpack(&u);
        return Ok((yc, yr));
    }

    // objective: (1/(2 rho)) ||u - prod||^2 - 2 <u, prev>
    let inv_rho = 1.0 / rho;
    let grad_f = |u: &DVector<f64>| (u - &prod) * inv_rho - &prev * 2.0;

    // constraint k: |y_ck|^2 - r_ek (sum_{i!=k} lin_i + sum_n lin_n + sigma) <= 0
    // where lin = 2 <y, y_prev> - |y_prev|^2 for each entry.
    let lin_all = |u: &DVector<f64>| -> f64 {
        // sum over every entry of the linearized |.|^2
        2.0 * u.dot(&prev) - prev.norm_squared()
    };
    let lin_entry = |u: &DVector<f64>, i: usize| -> f64 {
        2.0 * (u[2 * i] * prev[2 * i] + u[2 * i + 1] * prev[2 * i + 1])
            - (prev[2 * i] * prev[2 * i] + prev[2 * i + 1] * prev[2 * i + 1])
    };
    let g_k = |u: &DVector<f64>, k: usize| -> f64 {
        let own = u[2 * k] * u[2 * k] + u[2 * k + 1] * u[2 * k + 1];
        let denom = lin_all(u) - lin_entry(u, k) + noise_var_t;
        own - r_e_lin[k] * denom
    };
    let grad_g = |u: &DVector<f64>, k: usize| -> DVector<f64> {
        let mut g = &prev * (-2.0 * r_e_lin[k]);
        g[2 * k] += 2.0 * r_e_lin[k] * prev[2 * k];
        g[2 * k + 1] += 2.0 * r_e_lin[k] * prev[2 * k + 1];
        g[2 * k] += 2.0 * u[2 * k];
        g[2 * k + 1] += 2.0 * u[2 * k + 1];
        g
    };

    let scale = 1.0 + prod.norm() + prev.norm();
    let mut u = prev.clone();
    let mut s = DVector::from_fn(k_users, |k, _| (-g_k(&u, k)).max(1e-4 * scale * scale));
    let mut lam = DVector::repeat(k_users, 1.0);
    let mut best: Option<(f64, DVector<f64>)> = None;

    for _ in 0..200 {
        let mut r_u = grad_f(&u);
        for k in 0..k_users {
            r_u += grad_g(&u, k) * lam[k];
        }
        let r_s = DVector::from_fn(k_users, |k, _| g_k(&u, k) + s[k]);
        let mu = lam.dot(&s) / k_users as f64;
        let score = r_u.norm().max(r_s.norm()).max(mu);

        // keep the most accurate iterate; endgame steps with slacks near the
        // floating-point floor can bounce the dual residual back up
        match &mut best {
            Some((bs, bu)) => {
                if score < *bs {
                    *bs = score;
                    bu.copy_from(&u);
                } else if score > 1e3 * (*bs + 1e-300) && mu < 1e-12 * scale * scale {
                    break;
                }
            }
            None => best = Some((score, u.clone())),
        }

        let tol_outer = 1e-11 * scale * scale * (1.0 + inv_rho);
        if std::env::var("ISAC_DEBUG_YBLOCK").is_ok() {
            eprintln!(
                "y-block: r_u {:.3e} r_s {:.3e} mu {:.3e}",
                r_u.norm(),
                r_s.norm(),
                mu,
            );
        }
        if score <= tol_outer {
            break;
        }

        // condensed Newton system
        let mut h = DMatrix::identity(dim, dim) * inv_rho;
        for k in 0..k_users {
            // Hessian of g_k: 2 on the (re, im) coords of y_ck
            h[(2 * k, 2 * k)] += 2.0 * lam[k];
            h[(2 * k + 1, 2 * k + 1)] += 2.0 * lam[k];
        }
        let grads: Vec<DVector<f64>> = (0..k_users).map(|k| grad_g(&u, k)).collect();
        for k in 0..k_users {
            let w = lam[k] / s[k];
            h.ger(w, &grads[k], &grads[k], 1.0);
        }
        let solve_dir = |rhs: &DVector<f64>| -> Option<DVector<f64>> {
            nalgebra::Cholesky::new(h.clone()).map(|ch| ch.solve(rhs))
        };

        let step = |sigma_mu: f64| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
            let mut rhs = -r_u.clone();
            for k in 0..k_users {
                let rc = lam[k] * s[k] - sigma_mu;
                rhs -= &grads[k] * ((-rc + lam[k] * r_s[k]) / s[k]);
            }
            let du = solve_dir(&rhs)?;
            let mut ds = DVector::zeros(k_users);
            let mut dl = DVector::zeros(k_users);
            for k in 0..k_users {
                ds[k] = -r_s[k] - grads[k].dot(&du);
                let rc = lam[k] * s[k] - sigma_mu;
                dl[k] = (-rc - lam[k] * ds[k]) / s[k];
            }
            Some((du, ds, dl))
        };

        let frac_to_boundary = |s: &DVector<f64>, ds: &DVector<f64>| -> f64 {
            let mut a = 1.0f64;
            for k in 0..s.len() {
                if ds[k] < 0.0 {
                    a = a.min(-0.99 * s[k] / ds[k]);
                }
            }
            a
        };

        // predictor
        let (_du_a, ds_a, dl_a) = match step(0.0) {
            Some(t) => t,
            None => break,
        };
        let alpha_a = frac_to_boundary(&s, &ds_a).min(frac_to_boundary(&lam, &dl_a));
        let mut mu_aff = 0.0;
        for k in 0..k_users {
            mu_aff += (lam[k] + alpha_a * dl_a[k]) * (s[k] + alpha_a * ds_a[k]);
        }
        mu_aff /= k_users as f64;
        let sigma = (mu_aff / mu.max(1e-300)).clamp(0.0, 1.0).powi(3);

        // corrector
        let (du, ds, dl) = match step(sigma * mu) {
            Some(t) => t,
            None => break,
        };
        let alpha = frac_to_boundary(&s, &ds).min(frac_to_boundary(&lam, &dl));
        u += &du * alpha;
        s += &ds * alpha;
        lam += &dl * alpha;
    }

    // final quality check on the most accurate iterate seen
    let (best_score, u) = match best {
        Some((s, bu)) => (s, bu),
        None => (f64::INFINITY, u),
    };
    let worst_g = (0..k_users)
        .map(|k| g_k(&u, k))
        .fold(f64::NEG_INFINITY, f64::max);
    let tol_final = 1e-7 * scale * scale * (1.0 + inv_rho);
    if best_score > tol_final || worst_g > tol_final {
        return Err(KernelError::NoConvergence {
            residual: best_score,
            comp: worst_g,
        });
    }

    let (yc, yr) = unpack(&u);
    Ok((yc, yr))
}

/// Scales the communication auxiliaries toward zero until every leakage
/// constraint holds strictly; used once at initialization so the expansion
/// point handed to [`solve_y_block`] is feasible.
pub fn project_leakage_feasible(
    y_c: &mut [C64],
    y_r: &[C64],
    r_e_lin: &[f64],
    noise_var_t: f64,
) {
    let d: f64 = y_r.iter().map(|v| v.norm_sqr()).sum::<f64>() + noise_var_t;
    let mut t_sq = 1.0f64;
    for k in 0..y_c.len() {
        if !r_e_lin[k].is_finite() {
            continue;
        }
        let own = y_c[k].norm_sqr();
        let others: f64 = y_c
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .map(|(_, v)| v.norm_sqr())
            .sum();
        let coeff = own - r_e_lin[k] * others;
        if coeff > 0.0 {
            t_sq = t_sq.min(r_e_lin[k] * d / coeff);
        }
    }
    if t_sq < 1.0 {
        let t = (t_sq.sqrt() * 0.999).min(1.0);
        for v in y_c.iter_mut() {
            *v *= C64::new(t, 0.0);
        }
    }
}

/// One group of beams sharing a quadratic data-fit structure: the fit matrix
/// is `S = sum_j obs_j obs_j^H` and each beam's linear term is
/// `t_beam = sum_j coeffs[beam][j] * obs_j`. An optional basis maps the
/// reduced solution back to full antenna space (`w = basis * w_hat`).
pub struct BeamGroup {
    pub obs: Vec<DVector<C64>>,
    pub coeffs: Vec<Vec<C64>>,
    pub basis: Option<DMatrix<C64>>,
}

/// Semi-closed-form beamformer update: each beam solves
/// `(S + mu I)^{-1} t_beam` with the common power multiplier `mu` found by
/// bisection on the eigendecomposition form of the total power. `S` is
/// factored once per group and reused along the bisection path.
pub fn solve_beamformer_block(
    groups: &[BeamGroup],
    p_max: f64,
    tol: f64,
) -> (Vec<Vec<DVector<C64>>>, DualSearchResult) {
    struct Prepared {
        u: DMatrix<C64>,
        eigs: DVector<f64>,
        /// t vectors rotated into the eigenbasis.
        t_rot: Vec<DVector<C64>>,
    }
    let mut prepared = Vec::with_capacity(groups.len());
    for grp in groups {
        let d = grp.obs.first().map(|o| o.len()).unwrap_or(0);
        let mut s = DMatrix::zeros(d, d);
        for o in &grp.obs {
            for r in 0..d {
                for c in 0..d {
                    s[(r, c)] += o[r] * o[c].conj();
                }
            }
        }
        let eig = s.symmetric_eigen();
        let t_rot: Vec<DVector<C64>> = grp
            .coeffs
            .iter()
            .map(|coef| {
                let mut t = DVector::zeros(d);
                for (j, o) in grp.obs.iter().enumerate() {
                    t.axpy(coef[j], o, C64::new(1.0, 0.0));
                }
                eig.eigenvectors.adjoint() * t
            })
            .collect();
        prepared.push(Prepared {
            u: eig.eigenvectors,
            eigs: eig.eigenvalues,
            t_rot,
        });
    }

    // eigenvalue floor against rank-deficient fits at mu = 0
    let ridge: f64 = {
        let tr: f64 = prepared
            .iter()
            .map(|p| p.eigs.iter().sum::<f64>())
            .sum::<f64>()
            .max(1.0);
        1e-12 * tr
    };
    let power_at = |mu: f64| -> f64 {
        let mut acc = 0.0;
        for p in &prepared {
            for t in &p.t_rot {
                for i in 0..t.len() {
                    let d = p.eigs[i].max(ridge) + mu;
                    acc += t[i].norm_sqr() / (d * d);
                }
            }
        }
        acc
    };

    let mut result = DualSearchResult::inactive();
    let mut mu = 0.0;
    if power_at(0.0) > p_max {
        // closed-form upper bound: drop the eigenvalues from the denominator
        let total_t: f64 = prepared
            .iter()
            .map(|p| p.t_rot.iter().map(|t| t.norm_squared()).sum::<f64>())
            .sum();
        let mu_up = (total_t / p_max).sqrt();
        let (mut lo, mut hi) = (0.0f64, mu_up);
        let mut iterations = 0;
        let mut res = 0.0;
        while iterations < BISECT_MAX_ITER {
            mu = 0.5 * (lo + hi);
            res = power_at(mu) - p_max;
            if res.abs() <= tol * p_max || (hi - lo) <= BISECT_INTERVAL_TOL * mu_up.max(1.0) {
                break;
            }
            if res > 0.0 {
                lo = mu;
            } else {
                hi = mu;
            }
            iterations += 1;
        }
        result = DualSearchResult {
            multiplier: mu,
            active: true,
            iterations,
            residual: res.abs() / p_max,
        };
    }

    let mut out = Vec::with_capacity(groups.len());
    for (grp, p) in groups.iter().zip(&prepared) {
        let beams: Vec<DVector<C64>> = p
            .t_rot
            .iter()
            .map(|t| {
                let mut w = DVector::zeros(t.len());
                for i in 0..t.len() {
                    w[i] = t[i] / C64::new(p.eigs[i].max(ridge) + mu, 0.0);
                }
                let w_full = &p.u * w;
                match &grp.basis {
                    Some(b) => b * w_full,
                    None => w_full,
                }
            })
            .collect();
        out.push(beams);
    }
    (out, result)
}

/// Builds the standard beamformer group for the joint design: observation
/// vectors `[h_1, ..., h_K, g]`, communication beam `k` fitting
/// `(z_c[1][k], ..., z_c[K][k], y_c[k])` and radar beam `n` fitting
/// `(z_r[1][n], ..., z_r[K][n], y_r[n])`.
pub fn standard_beam_group(
    h: &[DVector<C64>],
    g: &DVector<C64>,
    aux: &AuxiliaryVars,
) -> BeamGroup {
    let k_users = h.len();
    let n_radar = aux.y_r.len();
    let mut obs: Vec<DVector<C64>> = h.to_vec();
    obs.push(g.clone());
    let mut coeffs = Vec::with_capacity(k_users + n_radar);
    for k in 0..k_users {
        let mut c: Vec<C64> = (0..k_users).map(|i| aux.z_c[i][k]).collect();
        c.push(aux.y_c[k]);
        coeffs.push(c);
    }
    for n in 0..n_radar {
        let mut c: Vec<C64> = (0..k_users).map(|i| aux.z_r[i][n]).collect();
        c.push(aux.y_r[n]);
        coeffs.push(c);
    }
    BeamGroup {
        obs,
        coeffs,
        basis: None,
    }
}

/// Largest eigenvalue of a Hermitian PSD matrix.
pub fn max_eigenvalue(a: &DMatrix<C64>) -> f64 {
    a.symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// The linear majorizer of `v^H A v` at `v_prev` over points with
/// `||v||^2 = len(v)`: `lmax v'v - 2 Re{v^H (lmax I - A) v_prev} +
/// v_prev^H (lmax I - A) v_prev`.
pub fn mm_surrogate(a: &DMatrix<C64>, v: &DVector<C64>, v_prev: &DVector<C64>) -> f64 {
    let lmax = max_eigenvalue(a);
    let av = a * v_prev;
    let lv = v_prev * C64::new(lmax, 0.0);
    let diff = &lv - &av;
    let cross = (v.adjoint() * &diff)[0].re;
    let constant = (v_prev.adjoint() * &diff)[0].re;
    lmax * v.norm_squared() - 2.0 * cross + constant
}

/// The phase-dependent part of the penalized objective: the sum of all four
/// mismatch families `|g^H w - y|^2` and `|h_k^H w - z|^2` as a function of
/// the phase vector.
pub fn phase_objective(
    v: &DVector<C64>,
    w_c: &DMatrix<C64>,
    w_r: &DMatrix<C64>,
    aux: &AuxiliaryVars,
    set: &ChannelSet,
) -> f64 {
    let mut acc = 0.0;
    for (a, c) in phase_terms(w_c, w_r, aux, set) {
        let val = (v.adjoint() * &a)[0] + c;
        acc += val.norm_sqr();
    }
    acc
}

/// Decomposes the phase objective into terms `|v^H a + c|^2`.
fn phase_terms(
    w_c: &DMatrix<C64>,
    w_r: &DMatrix<C64>,
    aux: &AuxiliaryVars,
    set: &ChannelSet,
) -> Vec<(DVector<C64>, C64)> {
    let k_users = w_c.ncols();
    let n_radar = w_r.ncols();
    let mut terms = Vec::with_capacity(k_users + n_radar + k_users * (k_users + n_radar));
    for k in 0..k_users {
        let a = &set.f_r * w_c.column(k);
        terms.push((a, -aux.y_c[k]));
    }
    for n in 0..n_radar {
        let a = &set.f_r * w_r.column(n);
        terms.push((a, -aux.y_r[n]));
    }
    for k in 0..k_users {
        for i in 0..k_users {
            let a = &set.f[k] * w_c.column(i);
            let c = (set.h_d[k].adjoint() * w_c.column(i))[0] - aux.z_c[k][i];
            terms.push((a, c));
        }
        for n in 0..n_radar {
            let a = &set.f[k] * w_r.column(n);
            let c = (set.h_d[k].adjoint() * w_r.column(n))[0] - aux.z_r[k][n];
            terms.push((a, c));
        }
    }
    terms
}

/// Largest squared mismatch between the true products and the auxiliaries,
/// `max |g^H w - y|^2, |h_k^H w - z|^2` over all four families.
pub fn max_mismatch_sq(
    v: &DVector<C64>,
    w_c: &DMatrix<C64>,
    w_r: &DMatrix<C64>,
    aux: &AuxiliaryVars,
    set: &ChannelSet,
) -> f64 {
    let mut worst = 0.0f64;
    for (a, c) in phase_terms(w_c, w_r, aux, set) {
        let val = (v.adjoint() * &a)[0] + c;
        worst = worst.max(val.norm_sqr());
    }
    worst
}

/// Closed-form phase update: majorize each `|v^H a + c|^2` term with its own
/// rank-one top eigenvalue (`||a||^2`) and maximize the resulting linear form
/// over unit-modulus entries, `v_m = exp(j arg(q_m))`. Entries with `q_m = 0`
/// keep their previous phase.
pub fn mm_phase_update(
    v_prev: &DVector<C64>,
    w_c: &DMatrix<C64>,
    w_r: &DMatrix<C64>,
    aux: &AuxiliaryVars,
    set: &ChannelSet,
) -> DVector<C64> {
    let m = v_prev.len();
    let mut q = DVector::zeros(m);
    for (a, c) in phase_terms(w_c, w_r, aux, set) {
        let lmax = a.norm_squared();
        let a_dot_v = (a.adjoint() * v_prev)[0];
        // (lmax I - a a^H) v_prev - a c^*
        q.axpy(C64::new(lmax, 0.0), v_prev, C64::new(1.0, 0.0));
        q.axpy(-a_dot_v, &a, C64::new(1.0, 0.0));
        q.axpy(-c.conj(), &a, C64::new(1.0, 0.0));
    }
    DVector::from_fn(m, |i, _| {
        if q[i].norm() == 0.0 {
            v_prev[i]
        } else {
            C64::from_polar(1.0, q[i].arg())
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{synthesize, ScenarioConfig};
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn rand_c(rng: &mut ChaCha12Rng) -> C64 {
        C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    }

    #[test]
    fn z_block_inactive_when_satisfied() {
        let a = vec![C64::new(10.0, 0.0), C64::new(0.1, 0.0)];
        let b = vec![C64::new(0.2, 0.1)];
        let (zc, zr, res) = solve_z_block(&a, &b, 0, 2.0, 1.0, 1e-10).unwrap();
        assert!(!res.active);
        assert_eq!(zc, a);
        assert_eq!(zr, b);
    }

    #[test]
    fn z_block_scalar_projection() {
        // K=1, N=0: |z|^2 >= r sigma^2 with target a inside the disc; the
        // optimum is the radial projection a * sqrt(r sigma^2) / |a|.
        let a = vec![C64::new(0.3, 0.4)];
        let r_th = 4.0;
        let sigma = 1.0;
        let (zc, _, res) = solve_z_block(&a, &[], 0, r_th, sigma, 1e-12).unwrap();
        assert!(res.active);
        let want = a[0] * C64::new((r_th * sigma).sqrt() / a[0].norm(), 0.0);
        assert!((zc[0] - want).norm() < 1e-6, "{} vs {}", zc[0], want);
    }

    #[test]
    fn z_block_infeasible_when_own_product_zero() {
        let a = vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)];
        let err = solve_z_block(&a, &[], 0, 2.0, 1.0, 1e-10);
        assert!(matches!(err, Err(KernelError::InfeasibleBlock)));
    }

    #[test]
    fn z_block_constraint_active_and_kkt_stationary() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for _ in 0..50 {
            let k_users = 3;
            let n_radar = 2;
            let a: Vec<C64> = (0..k_users).map(|_| rand_c(&mut rng) * C64::new(3.0, 0.0)).collect();
            let b: Vec<C64> = (0..n_radar).map(|_| rand_c(&mut rng) * C64::new(3.0, 0.0)).collect();
            let r_th = 5.0;
            let (zc, zr, res) = match solve_z_block(&a, &b, 0, r_th, 1.0, 1e-10) {
                Ok(t) => t,
                Err(_) => continue,
            };
            let interf: f64 = zc
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != 0)
                .map(|(_, z)| z.norm_sqr())
                .sum::<f64>()
                + zr.iter().map(|z| z.norm_sqr()).sum::<f64>()
                + 1.0;
            let own = zc[0].norm_sqr();
            if res.active {
                // constraint met with equality within tolerance
                assert!((own - r_th * interf).abs() <= 1e-6 * (own + r_th * interf));
                // KKT stationarity of the Lagrangian at the returned point
                let mu = res.multiplier;
                for i in 0..k_users {
                    let grad = if i == 0 {
                        (zc[0] - a[0]) - zc[0] * C64::new(mu, 0.0)
                    } else {
                        (zc[i] - a[i]) + zc[i] * C64::new(mu * r_th, 0.0)
                    };
                    assert!(grad.norm() < 1e-7, "stationarity {i}: {grad}");
                }
                for n in 0..n_radar {
                    let grad = (zr[n] - b[n]) + zr[n] * C64::new(mu * r_th, 0.0);
                    assert!(grad.norm() < 1e-7);
                }
            } else {
                assert!(own >= r_th * interf - 1e-9);
            }
        }
    }

    #[test]
    fn y_block_unconstrained_matches_stationarity() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let p: Vec<C64> = (0..3).map(|_| rand_c(&mut rng)).collect();
        let q: Vec<C64> = (0..2).map(|_| rand_c(&mut rng)).collect();
        let yc: Vec<C64> = (0..3).map(|_| rand_c(&mut rng)).collect();
        let yr: Vec<C64> = (0..2).map(|_| rand_c(&mut rng)).collect();
        let rho = 0.07;
        let r_e = vec![f64::INFINITY; 3];
        let (oc, or) = solve_y_block(&p, &q, &yc, &yr, &r_e, 1.0, rho).unwrap();
        // closed form y = p + 2 rho y_prev, checked via finite differences of
        // the objective around the returned point
        for i in 0..3 {
            let want = p[i] + yc[i] * C64::new(2.0 * rho, 0.0);
            assert!((oc[i] - want).norm() < 1e-8);
        }
        for n in 0..2 {
            let want = q[n] + yr[n] * C64::new(2.0 * rho, 0.0);
            assert!((or[n] - want).norm() < 1e-8);
        }
        // finite-difference stationarity of the surrogate objective
        let obj = |yc_t: &[C64], yr_t: &[C64]| -> f64 {
            let mut acc = 0.0;
            for i in 0..3 {
                acc += 2.0 * (yc_t[i].conj() * yc[i]).re - yc[i].norm_sqr();
                acc -= (p[i] - yc_t[i]).norm_sqr() / (2.0 * rho);
            }
            for n in 0..2 {
                acc += 2.0 * (yr_t[n].conj() * yr[n]).re - yr[n].norm_sqr();
                acc -= (q[n] - yr_t[n]).norm_sqr() / (2.0 * rho);
            }
            acc
        };
        let eps = 1e-6;
        for i in 0..3 {
            let mut plus = oc.clone();
            plus[i] += C64::new(eps, 0.0);
            let mut minus = oc.clone();
            minus[i] -= C64::new(eps, 0.0);
            let d = (obj(&plus, &or) - obj(&minus, &or)) / (2.0 * eps);
            assert!(d.abs() < 1e-8, "gradient re {d}");
            let mut plus = oc.clone();
            plus[i] += C64::new(0.0, eps);
            let mut minus = oc.clone();
            minus[i] -= C64::new(0.0, eps);
            let d = (obj(&plus, &or) - obj(&minus, &or)) / (2.0 * eps);
            assert!(d.abs() < 1e-8, "gradient im {d}");
        }
    }

    #[test]
    fn y_block_fixed_point_when_prev_optimal() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let p: Vec<C64> = (0..2).map(|_| rand_c(&mut rng)).collect();
        let q: Vec<C64> = (0..1).map(|_| rand_c(&mut rng)).collect();
        let r_e = vec![1e4, 1e4];
        let rho = 0.05;
        // run to optimality once, then re-expand there: objective change ~ 0
        let (c1, r1) = solve_y_block(&p, &q, &p, &q, &r_e, 1.0, rho).unwrap();
        let (c2, r2) = solve_y_block(&p, &q, &c1, &r1, &r_e, 1.0, rho).unwrap();
        let (c3, r3) = solve_y_block(&p, &q, &c2, &r2, &r_e, 1.0, rho).unwrap();
        let objective = |yc: &[C64], yr: &[C64], exp_c: &[C64], exp_r: &[C64]| -> f64 {
            let mut acc = 0.0;
            for i in 0..2 {
                acc += 2.0 * (yc[i].conj() * exp_c[i]).re - exp_c[i].norm_sqr()
                    - (p[i] - yc[i]).norm_sqr() / (2.0 * rho);
            }
            acc += 2.0 * (yr[0].conj() * exp_r[0]).re - exp_r[0].norm_sqr()
                - (q[0] - yr[0]).norm_sqr() / (2.0 * rho);
            acc
        };
        let a = objective(&c2, &r2, &c2, &r2);
        let b = objective(&c3, &r3, &c2, &r2);
        assert!(b + 1e-10 >= a, "fixed point drifted: {a} -> {b}");
    }

    #[test]
    fn y_block_matches_conic_oracle() {
        // K=2, N=1 random instances against an SOC encoding of the same QCQP.
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..10 {
            let p: Vec<C64> = (0..2).map(|_| rand_c(&mut rng) * C64::new(2.0, 0.0)).collect();
            let q: Vec<C64> = (0..1).map(|_| rand_c(&mut rng) * C64::new(2.0, 0.0)).collect();
            let mut yc: Vec<C64> = (0..2).map(|_| rand_c(&mut rng)).collect();
            let yr: Vec<C64> = (0..1).map(|_| rand_c(&mut rng)).collect();
            let r_e = vec![0.8, 1.3];
            let rho = 0.11;
            project_leakage_feasible(&mut yc, &yr, &r_e, 1.0);
            let (oc, or) = solve_y_block(&p, &q, &yc, &yr, &r_e, 1.0, rho).unwrap();
            let mine = {
                let mut acc = 0.0;
                for i in 0..2 {
                    acc += 2.0 * (oc[i].conj() * yc[i]).re - yc[i].norm_sqr()
                        - (p[i] - oc[i]).norm_sqr() / (2.0 * rho);
                }
                acc += 2.0 * (or[0].conj() * yr[0]).re - yr[0].norm_sqr()
                    - (q[0] - or[0]).norm_sqr() / (2.0 * rho);
                acc
            };
            let oracle = conic_y_oracle(&p, &q, &yc, &yr, &r_e, 1.0, rho);
            assert!(
                (mine - oracle).abs() <= 1e-6 * (1.0 + oracle.abs()),
                "y-block {mine} vs oracle {oracle}"
            );
        }
    }

    /// Generic conic encoding of the linearized leakage-constrained update:
    /// used only as a test oracle.
    fn conic_y_oracle(
        p: &[C64],
        q: &[C64],
        yc: &[C64],
        yr: &[C64],
        r_e: &[f64],
        noise_t: f64,
        rho: f64,
    ) -> f64 {
        use conic::{ConicProgram, SolverOptions};
        use nalgebra::DVector as V;
        let ku = p.len();
        let nr = q.len();
        let dim = 2 * (ku + nr);
        // vars: u (dim), t (epigraph of ||u - prod||^2)
        let nv = dim + 1;
        let mut prog = ConicProgram::new(nv);
        let mut prev = V::zeros(dim);
        let mut prod = V::zeros(dim);
        for i in 0..ku {
            prev[2 * i] = yc[i].re;
            prev[2 * i + 1] = yc[i].im;
            prod[2 * i] = p[i].re;
            prod[2 * i + 1] = p[i].im;
        }
        for n in 0..nr {
            prev[2 * (ku + n)] = yr[n].re;
            prev[2 * (ku + n) + 1] = yr[n].im;
            prod[2 * (ku + n)] = q[n].re;
            prod[2 * (ku + n) + 1] = q[n].im;
        }
        // maximize 2 <u, prev> - ||prev||^2 - t/(2 rho)
        // -> minimize t/(2 rho) - 2 <u, prev>
        let mut c = V::zeros(nv);
        for i in 0..dim {
            c[i] = -2.0 * prev[i];
        }
        c[dim] = 1.0 / (2.0 * rho);
        prog.set_minimize(c).unwrap();
        // ||u - prod||^2 <= t as SOC: (t+1, t-1, 2(u - prod)) in SOC
        let mut b = V::zeros(dim + 2);
        b[0] = 1.0;
        b[1] = -1.0;
        for i in 0..dim {
            b[2 + i] = -2.0 * prod[i];
        }
        let mut cols = vec![(dim, vec![(0, 1.0), (1, 1.0)])];
        for i in 0..dim {
            cols.push((i, vec![(2 + i, 2.0)]));
        }
        prog.add_soc_block("epigraph", b, cols).unwrap();
        // leakage constraints: |y_ck|^2 <= r_ek (lin denominator)
        // SOC: (d_k + 1, d_k - 1, 2 Re y_ck, 2 Im y_ck) with d_k affine
        for k in 0..ku {
            // d_k = r_ek (sum_{i != k} lin_i + sum_n lin_n + noise)
            let mut d0 = r_e[k] * noise_t;
            let mut dcols: Vec<(usize, f64)> = Vec::new();
            for i in 0..ku {
                if i == k {
                    continue;
                }
                d0 -= r_e[k]
                    * (yc[i].re * yc[i].re + yc[i].im * yc[i].im);
                dcols.push((2 * i, 2.0 * r_e[k] * yc[i].re));
                dcols.push((2 * i + 1, 2.0 * r_e[k] * yc[i].im));
            }
            for n in 0..nr {
                d0 -= r_e[k] * (yr[n].re * yr[n].re + yr[n].im * yr[n].im);
                dcols.push((2 * (ku + n), 2.0 * r_e[k] * yr[n].re));
                dcols.push((2 * (ku + n) + 1, 2.0 * r_e[k] * yr[n].im));
            }
            let mut b = V::zeros(4);
            b[0] = d0 + 1.0;
            b[1] = d0 - 1.0;
            let mut cols: Vec<(usize, Vec<(usize, f64)>)> = Vec::new();
            for (var, val) in &dcols {
                cols.push((*var, vec![(0, *val), (1, *val)]));
            }
            cols.push((2 * k, vec![(2, 2.0)]));
            cols.push((2 * k + 1, vec![(3, 2.0)]));
            prog.add_soc_block(format!("leak-{k}"), b, cols).unwrap();
        }
        let sol = conic::solve(&prog, &SolverOptions::default());
        assert_eq!(sol.status, conic::SolveStatus::Optimal);
        let mut prev_sq = 0.0;
        for i in 0..dim {
            prev_sq += prev[i] * prev[i];
        }
        -sol.objective - prev_sq
    }

    #[test]
    fn beamformer_block_unconstrained_matches_normal_equations() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let n = 4;
        let k_users = 3;
        let h: Vec<DVector<C64>> = (0..k_users)
            .map(|_| DVector::from_fn(n, |_, _| rand_c(&mut rng)))
            .collect();
        let g = DVector::from_fn(n, |_, _| rand_c(&mut rng));
        let mut aux = AuxiliaryVars::zeros(k_users, n);
        for k in 0..k_users {
            aux.y_c[k] = rand_c(&mut rng);
            for i in 0..k_users {
                aux.z_c[k][i] = rand_c(&mut rng);
            }
            for nn in 0..n {
                aux.z_r[k][nn] = rand_c(&mut rng);
            }
        }
        for nn in 0..n {
            aux.y_r[nn] = rand_c(&mut rng);
        }
        let grp = standard_beam_group(&h, &g, &aux);
        let (beams, res) = solve_beamformer_block(&[grp], 1e12, 1e-10);
        assert!(!res.active);
        // unregularized normal equations: (g g^H + sum h h^H) w = t
        let mut s = DMatrix::zeros(n, n);
        for o in h.iter().chain(std::iter::once(&g)) {
            for r in 0..n {
                for c in 0..n {
                    s[(r, c)] += o[r] * o[c].conj();
                }
            }
        }
        for k in 0..k_users {
            let mut t = &g * aux.y_c[k];
            for i in 0..k_users {
                t += &h[i] * aux.z_c[i][k];
            }
            let resid = (&s * &beams[0][k] - &t).norm();
            assert!(resid < 1e-9 * t.norm().max(1.0), "normal eq resid {resid}");
        }
    }

    #[test]
    fn beamformer_power_function_matches_direct_norms_and_decreases() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let n = 4;
        let k_users = 3;
        let h: Vec<DVector<C64>> = (0..k_users)
            .map(|_| DVector::from_fn(n, |_, _| rand_c(&mut rng)))
            .collect();
        let g = DVector::from_fn(n, |_, _| rand_c(&mut rng));
        let mut aux = AuxiliaryVars::zeros(k_users, n);
        for k in 0..k_users {
            aux.y_c[k] = rand_c(&mut rng);
            for i in 0..k_users {
                aux.z_c[k][i] = rand_c(&mut rng);
            }
            for nn in 0..n {
                aux.z_r[k][nn] = rand_c(&mut rng);
            }
        }
        for nn in 0..n {
            aux.y_r[nn] = rand_c(&mut rng);
        }

        // evaluate the eigen form against direct norms on a mu grid,
        // pinning the power by re-solving with p_max = P(mu)
        let mut s = DMatrix::zeros(n, n);
        for o in h.iter().chain(std::iter::once(&g)) {
            for r in 0..n {
                for c in 0..n {
                    s[(r, c)] += o[r] * o[c].conj();
                }
            }
        }
        let mut prev_power = f64::INFINITY;
        for step in 0..100 {
            let mu = 0.05 * step as f64;
            // direct: w = (S + mu I)^{-1} t per beam
            let mut smu = s.clone();
            for d in 0..n {
                smu[(d, d)] += C64::new(mu, 0.0);
            }
            let lu = smu.lu();
            let mut direct_power = 0.0;
            let grp = standard_beam_group(&h, &g, &aux);
            for coef in &grp.coeffs {
                let mut t = DVector::zeros(n);
                for (j, o) in grp.obs.iter().enumerate() {
                    t.axpy(coef[j], o, C64::new(1.0, 0.0));
                }
                let w = lu.solve(&t).unwrap();
                direct_power += w.norm_squared();
            }
            assert!(direct_power < prev_power, "P(mu) must strictly decrease");
            prev_power = direct_power;
            // eigen-form evaluation through the block solver at that mu:
            // solve with p_max equal to direct power; multiplier must match
            if step > 0 && step % 20 == 0 {
                let grp = standard_beam_group(&h, &g, &aux);
                let (_, res) = solve_beamformer_block(&[grp], direct_power, 1e-10);
                assert!(res.active);
                assert!(
                    (res.multiplier - mu).abs() <= 1e-4 * mu.max(1.0),
                    "recovered mu {} vs {}",
                    res.multiplier,
                    mu
                );
            }
        }
    }

    #[test]
    fn beamformer_upper_bound_is_valid() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        for _ in 0..50 {
            let n = 4;
            let k_users = 2;
            let h: Vec<DVector<C64>> = (0..k_users)
                .map(|_| DVector::from_fn(n, |_, _| rand_c(&mut rng)))
                .collect();
            let g = DVector::from_fn(n, |_, _| rand_c(&mut rng));
            let mut aux = AuxiliaryVars::zeros(k_users, n);
            for k in 0..k_users {
                aux.y_c[k] = rand_c(&mut rng);
                for i in 0..k_users {
                    aux.z_c[k][i] = rand_c(&mut rng);
                }
                for nn in 0..n {
                    aux.z_r[k][nn] = rand_c(&mut rng);
                }
            }
            for nn in 0..n {
                aux.y_r[nn] = rand_c(&mut rng);
            }
            let p_max = 0.1 + rng.gen::<f64>();
            let grp = standard_beam_group(&h, &g, &aux);
            let (beams, res) = solve_beamformer_block(&[grp], p_max, 1e-9);
            let power: f64 = beams[0].iter().map(|w| w.norm_squared()).sum();
            assert!(power <= p_max * (1.0 + 1e-7), "power {power} > {p_max}");
            if res.active {
                assert!((power - p_max).abs() <= 1e-6 * p_max);
            }
        }
    }

    #[test]
    fn mm_surrogate_majorizes_quadratic() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let m = 6;
        // PSD matrix from random factors
        let f = DMatrix::from_fn(m, m, |_, _| rand_c(&mut rng));
        let a = &f * f.adjoint();
        let vr = DVector::from_fn(m, |_, _| {
            C64::from_polar(1.0, rng.gen::<f64>() * std::f64::consts::TAU)
        });
        let quad_r = (vr.adjoint() * &a * &vr)[0].re;
        let sur_r = mm_surrogate(&a, &vr, &vr);
        assert!((sur_r - quad_r).abs() <= 1e-10 * quad_r.abs().max(1.0), "tight at expansion");
        for _ in 0..1000 {
            let v = DVector::from_fn(m, |_, _| {
                C64::from_polar(1.0, rng.gen::<f64>() * std::f64::consts::TAU)
            });
            let quad = (v.adjoint() * &a * &v)[0].re;
            let sur = mm_surrogate(&a, &v, &vr);
            assert!(sur + 1e-9 >= quad, "majorization violated: {sur} < {quad}");
        }
    }

    #[test]
    fn max_eigenvalue_cases() {
        let i3 = DMatrix::<C64>::identity(3, 3);
        assert!((max_eigenvalue(&i3) - 1.0).abs() < 1e-12);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![
            C64::new(1.0, 0.0),
            C64::new(5.0, 0.0),
            C64::new(2.0, 0.0),
        ]));
        assert!((max_eigenvalue(&d) - 5.0).abs() < 1e-12);
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let f = DMatrix::from_fn(4, 4, |_, _| rand_c(&mut rng));
        let a = &f * f.adjoint();
        let eigs = a.clone().symmetric_eigen().eigenvalues;
        let want = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((max_eigenvalue(&a) - want).abs() <= 1e-10 * want.abs().max(1.0));
    }

    fn small_instance(seed: u64) -> (ChannelSet, DMatrix<C64>, DMatrix<C64>, AuxiliaryVars) {
        let mut cfg = ScenarioConfig::default();
        cfg.array.m_x = 2;
        cfg.array.m_z = 1;
        cfg.array.n_bs_antennas = 2;
        cfg.n_users = 2;
        cfg.rng_seed = seed;
        let set = synthesize(&cfg).unwrap().normalized(1e-6, 1e-6);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let w_c = DMatrix::from_fn(2, 2, |_, _| rand_c(&mut rng));
        let w_r = DMatrix::from_fn(2, 2, |_, _| rand_c(&mut rng));
        let mut aux = AuxiliaryVars::zeros(2, 2);
        for k in 0..2 {
            aux.y_c[k] = rand_c(&mut rng);
            aux.y_r[k] = rand_c(&mut rng);
            for i in 0..2 {
                aux.z_c[k][i] = rand_c(&mut rng);
                aux.z_r[k][i] = rand_c(&mut rng);
            }
        }
        (set, w_c, w_r, aux)
    }

    #[test]
    fn phase_update_is_all_ones_when_q_real_positive() {
        // craft a single-term instance with q real positive: a = 0 terms except
        // one with v_prev aligned so q = lmax v_prev ... use v_prev = ones and
        // a = 0: q = sum lmax v_prev = positive multiples of ones.
        let (set, w_c, w_r, mut aux) = small_instance(3);
        let m = set.n_irs();
        // make all mismatch terms have a = 0 by zeroing the beamformers; then
        // q = sum lmax v_prev = 0 -> ties keep v_prev. Instead keep beams and
        // verify against the explicit q computation.
        let v_prev = DVector::from_fn(m, |_, _| C64::new(1.0, 0.0));
        let v = mm_phase_update(&v_prev, &w_c, &w_r, &aux, &set);
        for e in v.iter() {
            assert!((e.norm() - 1.0).abs() < 1e-12);
        }
        // all-zero aux and beams: q = 0 everywhere, previous phase kept
        aux = AuxiliaryVars::zeros(2, 2);
        let zero = DMatrix::zeros(2, 2);
        let v2 = mm_phase_update(&v_prev, &zero, &zero, &aux, &set);
        assert_eq!(v2, v_prev);
    }

    #[test]
    fn phase_update_never_increases_objective() {
        for seed in 0..100 {
            let (set, w_c, w_r, aux) = small_instance(seed);
            let m = set.n_irs();
            let mut rng = ChaCha12Rng::seed_from_u64(seed + 999);
            let v_prev = DVector::from_fn(m, |_, _| {
                C64::from_polar(1.0, rng.gen::<f64>() * std::f64::consts::TAU)
            });
            let before = phase_objective(&v_prev, &w_c, &w_r, &aux, &set);
            let v = mm_phase_update(&v_prev, &w_c, &w_r, &aux, &set);
            let after = phase_objective(&v, &w_c, &w_r, &aux, &set);
            assert!(
                after <= before + 1e-9 * before.max(1.0),
                "objective rose {before} -> {after} (seed {seed})"
            );
        }
    }

    #[test]
    fn phase_update_matches_grid_search_single_term() {
        // K=1, N=0, h_d=0, M=2: exhaustive 64-point phase grid per element.
        let mut cfg = ScenarioConfig::default();
        cfg.array.m_x = 2;
        cfg.array.m_z = 1;
        cfg.array.n_bs_antennas = 2;
        cfg.n_users = 1;
        cfg.rng_seed = 17;
        let mut set = synthesize(&cfg).unwrap();
        set.h_d[0] = DVector::zeros(2);
        let mut rng = ChaCha12Rng::seed_from_u64(18);
        let w_c = DMatrix::from_fn(2, 1, |_, _| rand_c(&mut rng));
        let w_r = DMatrix::zeros(2, 0);
        let mut aux = AuxiliaryVars::zeros(1, 0);
        aux.y_c[0] = rand_c(&mut rng);
        aux.z_c[0][0] = rand_c(&mut rng);

        let v_prev = DVector::from_fn(2, |_, _| {
            C64::from_polar(1.0, rng.gen::<f64>() * std::f64::consts::TAU)
        });
        let v = mm_phase_update(&v_prev, &w_c, &w_r, &aux, &set);
        let got = phase_objective(&v, &w_c, &w_r, &aux, &set);

        // exhaustive search over the grid
        let mut best = f64::INFINITY;
        let steps = 64;
        for i in 0..steps {
            for j in 0..steps {
                let vg = DVector::from_vec(vec![
                    C64::from_polar(1.0, std::f64::consts::TAU * i as f64 / steps as f64),
                    C64::from_polar(1.0, std::f64::consts::TAU * j as f64 / steps as f64),
                ]);
                best = best.min(phase_objective(&vg, &w_c, &w_r, &aux, &set));
            }
        }
        // one MM step from a random point is only guaranteed not to increase;
        // iterate it to (near) stationarity and then compare to the grid.
        let mut v_it = v.clone();
        for _ in 0..200 {
            v_it = mm_phase_update(&v_it, &w_c, &w_r, &aux, &set);
        }
        let refined = phase_objective(&v_it, &w_c, &w_r, &aux, &set);
        let grid_res = (std::f64::consts::TAU / steps as f64).powi(2);
        assert!(
            refined <= best + grid_res * got.max(1.0),
            "MM stationary point {refined} worse than grid {best}"
        );
    }

    #[test]
    fn project_leakage_makes_feasible() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        for _ in 0..50 {
            let mut yc: Vec<C64> = (0..3).map(|_| rand_c(&mut rng) * C64::new(4.0, 0.0)).collect();
            let yr: Vec<C64> = (0..2).map(|_| rand_c(&mut rng)).collect();
            let r_e = vec![0.5, 1.0, 2.0];
            project_leakage_feasible(&mut yc, &yr, &r_e, 1.0);
            let d: f64 = yr.iter().map(|v| v.norm_sqr()).sum::<f64>() + 1.0;
            for k in 0..3 {
                let others: f64 = yc
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != k)
                    .map(|(_, v)| v.norm_sqr())
                    .sum();
                assert!(
                    yc[k].norm_sqr() <= r_e[k] * (others + d) + 1e-12,
                    "still infeasible at {k}"
                );
            }
        }
    }
}
