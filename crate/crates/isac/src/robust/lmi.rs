//! Assembly of the robust subproblems as conic programs.
//!
//! Five LMI families are instantiated per user and per grid direction:
//!
//! * user SINR (Taylor lower bound + S-procedure over the channel balls),
//! * user interference (Schur form + sign-definiteness borders),
//! * leakage cap per direction (Schur form + sign-definiteness),
//! * eavesdropper-denominator lower bound per direction (linearized + S-procedure),
//! * objective epigraph per direction (linearized + S-procedure).
//!
//! Small families are lowered by affine probing of the printed block formulas
//! (each active variable is pulsed and the matrix difference becomes its
//! column); the two large per-direction families are hand-assembled in
//! rank-pair form so the interior-point solver can exploit their structure.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use conic::{ConicProgram, HermColumn, HermitianBlockBuilder, PsdBlockData};

use crate::channel::{ChannelSet, C64};
use crate::robust::ResolvedRadii;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Mode {
    Beam,
    Phase,
}

#[derive(Clone)]
pub(crate) struct Point {
    pub w_c: DMatrix<C64>,
    pub w_r: DMatrix<C64>,
    pub v: DVector<C64>,
}

/// Variable layout of one robust subproblem.
pub(crate) struct VarMap {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub mode: Mode,
    base: usize,
    pub beta_c: Vec<usize>,
    pub beta_r: Vec<usize>,
    pub lam1: Vec<usize>,
    pub lam2: Vec<usize>,
    pub lam_b1: Vec<usize>,
    pub lam_b2: Vec<usize>,
    pub lam_leak: Vec<Vec<usize>>,
    pub lam_tgt: Vec<Vec<usize>>,
    pub lam_obj: Vec<usize>,
    pub chi: usize,
    pub n_vars: usize,
}

impl VarMap {
    pub fn new(mode: Mode, n: usize, k: usize, m: usize, n_dirs: usize) -> Self {
        let base = 0usize;
        let mut next = match mode {
            Mode::Beam => 2 * n * (k + n),
            Mode::Phase => 2 * m,
        };
        let mut grab = |count: usize| {
            let start = next;
            next += count;
            (start..start + count).collect::<Vec<usize>>()
        };
        let beta_c = grab(k);
        let beta_r = grab(k);
        let lam1 = grab(k);
        let lam2 = grab(k);
        let lam_b1 = grab(k);
        let lam_b2 = grab(k);
        let lam_leak: Vec<Vec<usize>> = (0..k).map(|_| grab(n_dirs)).collect();
        let lam_tgt: Vec<Vec<usize>> = (0..k).map(|_| grab(n_dirs)).collect();
        let lam_obj = grab(n_dirs);
        let chi = grab(1)[0];
        Self {
            n,
            k,
            m,
            mode,
            base,
            beta_c,
            beta_r,
            lam1,
            lam2,
            lam_b1,
            lam_b2,
            lam_leak,
            lam_tgt,
            lam_obj,
            chi,
            n_vars: next,
        }
    }

    pub fn w_c_idx(&self, row: usize, col: usize, im: bool) -> usize {
        debug_assert_eq!(self.mode, Mode::Beam);
        self.base + 2 * (col * self.n + row) + im as usize
    }

    pub fn w_r_idx(&self, row: usize, col: usize, im: bool) -> usize {
        debug_assert_eq!(self.mode, Mode::Beam);
        self.base + 2 * (self.n * self.k + col * self.n + row) + im as usize
    }

    pub fn v_idx(&self, mi: usize, im: bool) -> usize {
        debug_assert_eq!(self.mode, Mode::Phase);
        self.base + 2 * mi + im as usize
    }

    /// All beamformer (or phase) coordinate variables.
    pub fn structural_vars(&self) -> Vec<usize> {
        match self.mode {
            Mode::Beam => (self.base..self.base + 2 * self.n * (self.k + self.n)).collect(),
            Mode::Phase => (self.base..self.base + 2 * self.m).collect(),
        }
    }

    fn w_col_vars(&self, is_comm: bool, col: usize) -> Vec<usize> {
        (0..self.n)
            .flat_map(|r| {
                let (a, b) = if is_comm {
                    (self.w_c_idx(r, col, false), self.w_c_idx(r, col, true))
                } else {
                    (self.w_r_idx(r, col, false), self.w_r_idx(r, col, true))
                };
                [a, b]
            })
            .collect()
    }

    /// Point with the active block taken from `x` and the other block fixed.
    pub fn point_at(&self, x: &DVector<f64>, fixed: &Point) -> Point {
        let mut pt = fixed.clone();
        match self.mode {
            Mode::Beam => {
                for col in 0..self.k {
                    for row in 0..self.n {
                        pt.w_c[(row, col)] = Complex64::new(
                            x[self.w_c_idx(row, col, false)],
                            x[self.w_c_idx(row, col, true)],
                        );
                    }
                }
                for col in 0..self.n {
                    for row in 0..self.n {
                        pt.w_r[(row, col)] = Complex64::new(
                            x[self.w_r_idx(row, col, false)],
                            x[self.w_r_idx(row, col, true)],
                        );
                    }
                }
            }
            Mode::Phase => {
                for mi in 0..self.m {
                    pt.v[mi] =
                        Complex64::new(x[self.v_idx(mi, false)], x[self.v_idx(mi, true)]);
                }
            }
        }
        pt
    }

    /// All multiplier variables (nonnegative cone members).
    pub fn nonneg_vars(&self) -> Vec<usize> {
        let mut vars = Vec::new();
        vars.extend(&self.beta_c);
        vars.extend(&self.beta_r);
        vars.extend(&self.lam1);
        vars.extend(&self.lam2);
        vars.extend(&self.lam_b1);
        vars.extend(&self.lam_b2);
        for v in &self.lam_leak {
            vars.extend(v);
        }
        for v in &self.lam_tgt {
            vars.extend(v);
        }
        vars.extend(&self.lam_obj);
        vars
    }
}

pub(crate) struct RobustCtx<'a> {
    pub set: &'a ChannelSet,

    pub f_r_dirs: &'a [DMatrix<C64>],
    pub radii: &'a ResolvedRadii,
    pub r_th: &'a [f64],
    pub r_e: &'a [f64],
    pub p_budget: f64,
    /// Expansion point (previous iterate); also supplies the fixed block.
    pub expansion: &'a Point,
    pub rho_bar: f64,
}

fn kron_vec(w: &DVector<C64>, v_conj: &DVector<C64>) -> DVector<C64> {
    let n = w.len();
    let m = v_conj.len();
    let mut out = DVector::zeros(n * m);
    for col in 0..n {
        for row in 0..m {
            out[col * m + row] = w[col] * v_conj[row];
        }
    }
    out
}

/// `[w; w (x) conj(v)]` stacked with a trailing zero slot when `pad_corner`.
fn stacked_h(w: &DVector<C64>, v: &DVector<C64>, pad_corner: bool) -> DVector<C64> {
    let n = w.len();
    let m = v.len();
    let extra = pad_corner as usize;
    let mut out = DVector::zeros(n + n * m + extra);
    for i in 0..n {
        out[i] = w[i];
    }
    let v_conj = v.map(|e| e.conj());
    let kr = kron_vec(w, &v_conj);
    for i in 0..(n * m) {
        out[n + i] = kr[i];
    }
    out
}

/// Lowers an affine Hermitian-matrix-valued map to a block builder by pulsing
/// each active variable. A random-point audit guards against accidentally
/// non-affine assembly.
fn probe_block(
    dim: usize,
    active: &[usize],
    n_vars: usize,
    eval: impl Fn(&DVector<f64>) -> DMatrix<C64>,
    label: &str,
) -> HermitianBlockBuilder {
    let x0 = DVector::zeros(n_vars);
    let m0 = eval(&x0);
    let mut builder = HermitianBlockBuilder::new(dim, m0.clone());
    let mut cols = Vec::with_capacity(active.len());
    for &var in active {
        let mut x = DVector::zeros(n_vars);
        x[var] = 1.0;
        let diff = eval(&x) - &m0;
        cols.push(diff);
    }
    // affineness audit at a deterministic non-trivial point
    if cfg!(debug_assertions) {
        let mut xt = DVector::zeros(n_vars);
        for (j, &var) in active.iter().enumerate() {
            xt[var] = 0.3 + 0.17 * ((j % 7) as f64) * if j % 2 == 0 { 1.0 } else { -1.0 };
        }
        let direct = eval(&xt);
        let mut recon = m0.clone();
        for (j, &var) in active.iter().enumerate() {
            recon += &cols[j] * Complex64::new(xt[var], 0.0);
        }
        let scale = direct.iter().map(|e| e.norm()).fold(1.0f64, f64::max);
        let err = (&direct - &recon).map(|e| e.norm()).max();
        debug_assert!(
            err <= 1e-8 * scale,
            "block `{label}` is not affine in its declared variables (err {err:.3e})"
        );
    }
    for (j, &var) in active.iter().enumerate() {
        let mut col = HermColumn::default();
        for r in 0..dim {
            for c in r..dim {
                let val = cols[j][(r, c)];
                if val.norm() > 0.0 {
                    let val = if r == c {
                        Complex64::new(val.re, 0.0)
                    } else {
                        val
                    };
                    col.entries.push((r, c, val));
                }
            }
        }
        builder.add_column(var, col);
    }
    builder
}

/// Worst-case user-SINR block (Taylor numerator bound + S-procedure), one per
/// user; PSD side `N + MN + 1`.
pub(crate) fn build_user_sinr_lmi(
    ctx: &RobustCtx,
    vars: &VarMap,
    k: usize,
) -> (String, PsdBlockData) {
    let n = vars.n;
    let m = vars.m;
    let dim = n + m * n + 1;
    let f_k = &ctx.set.f[k];
    let h_dk = &ctx.set.h_d[k];
    let vr = &ctx.expansion.v;
    let wr_ck = ctx.expansion.w_c.column(k).into_owned();
    let h_hat_kr = f_k.adjoint() * vr + h_dk;
    let h_ckr = stacked_h(&wr_ck, vr, false);
    let c2 = (h_hat_kr.adjoint() * &wr_ck)[0];
    let eps_d = ctx.radii.eps_dk[k];
    let eps_k = ctx.radii.eps_k[k];
    let r_th = ctx.r_th[k];
    let fixed = ctx.expansion;

    let eval = move |x: &DVector<f64>| -> DMatrix<C64> {
        let pt = vars.point_at(x, fixed);
        let w_ck = pt.w_c.column(k).into_owned();
        let h_hat_k = f_k.adjoint() * &pt.v + h_dk;
        let h_ck = stacked_h(&w_ck, &pt.v, false);
        let s1 = (h_hat_k.adjoint() * &w_ck)[0];
        let beta = x[vars.beta_c[k]];
        let l1 = x[vars.lam1[k]];
        let l2 = x[vars.lam2[k]];

        let mut blk = DMatrix::zeros(dim, dim);
        // TL: H + H^H - H^r with H = h_ckr h_ck^H, plus multiplier padding
        let d_in = n + m * n;
        for r in 0..d_in {
            for c in 0..d_in {
                blk[(r, c)] = h_ckr[r] * h_ck[c].conj() + h_ck[r] * h_ckr[c].conj()
                    - h_ckr[r] * h_ckr[c].conj();
            }
        }
        for r in 0..n {
            blk[(r, r)] += Complex64::new(l1, 0.0);
        }
        for r in n..d_in {
            blk[(r, r)] += Complex64::new(l2, 0.0);
        }
        // border
        let s1c = s1.conj();
        let c2c = c2.conj();
        for r in 0..d_in {
            let b = h_ckr[r] * s1c + h_ck[r] * c2c - h_ckr[r] * c2c;
            blk[(r, d_in)] = b;
            blk[(d_in, r)] = b.conj();
        }
        // corner
        let hbar = 2.0 * (s1.conj() * c2).re - c2.norm_sqr();
        let corner = hbar - beta * r_th - l1 * eps_d * eps_d - l2 * eps_k * eps_k;
        blk[(d_in, d_in)] = Complex64::new(corner, 0.0);
        blk
    };

    let mut active = match vars.mode {
        Mode::Beam => vars.w_col_vars(true, k),
        Mode::Phase => vars.structural_vars(),
    };
    active.push(vars.beta_c[k]);
    active.push(vars.lam1[k]);
    active.push(vars.lam2[k]);
    let label = format!("user-sinr[{k}]");
    let builder = probe_block(dim, &active, vars.n_vars, eval, &label);
    (label, builder.into_psd())
}

/// Worst-case interference block (Schur form with sign-definiteness borders),
/// one per user; PSD side `K + 3N`.
pub(crate) fn build_user_interference_lmi(
    ctx: &RobustCtx,
    vars: &VarMap,
    k: usize,
) -> (String, PsdBlockData) {
    let n = vars.n;
    let ku = vars.k;
    let dim = ku + 3 * n;
    let f_k = &ctx.set.f[k];
    let h_dk = &ctx.set.h_d[k];
    let eps_d = ctx.radii.eps_dk[k];
    let eps_k = ctx.radii.eps_k[k];
    let m_irs = vars.m as f64;
    let fixed = ctx.expansion;

    let eval = move |x: &DVector<f64>| -> DMatrix<C64> {
        let pt = vars.point_at(x, fixed);
        let h_hat_k = f_k.adjoint() * &pt.v + h_dk;
        // W_{-k}: all communication columns except k, then all radar columns
        let cols: Vec<DVector<C64>> = (0..ku)
            .filter(|i| *i != k)
            .map(|i| pt.w_c.column(i).into_owned())
            .chain((0..n).map(|nn| pt.w_r.column(nn).into_owned()))
            .collect();
        let width = cols.len(); // K - 1 + N
        let beta = x[vars.beta_c[k]];
        let lb1 = x[vars.lam_b1[k]];
        let lb2 = x[vars.lam_b2[k]];

        let mut blk = DMatrix::zeros(dim, dim);
        blk[(0, 0)] = Complex64::new(beta - 1.0 - lb1 - lb2 * m_irs, 0.0);
        for (j, wj) in cols.iter().enumerate() {
            let prod = (h_hat_k.adjoint() * wj)[0];
            blk[(0, 1 + j)] = prod;
            blk[(1 + j, 0)] = prod.conj();
        }
        for j in 0..width {
            blk[(1 + j, 1 + j)] = Complex64::new(1.0, 0.0);
        }
        let b1 = 1 + width; // start of the first border block
        let b2 = b1 + n;
        for r in 0..n {
            for (j, wj) in cols.iter().enumerate() {
                let e1 = -Complex64::new(eps_d, 0.0) * wj[r];
                blk[(b1 + r, 1 + j)] = e1;
                blk[(1 + j, b1 + r)] = e1.conj();
                let e2 = -Complex64::new(eps_k, 0.0) * wj[r];
                blk[(b2 + r, 1 + j)] = e2;
                blk[(1 + j, b2 + r)] = e2.conj();
            }
            blk[(b1 + r, b1 + r)] = Complex64::new(lb1, 0.0);
            blk[(b2 + r, b2 + r)] = Complex64::new(lb2, 0.0);
        }
        blk
    };

    let mut active = match vars.mode {
        Mode::Beam => vars.structural_vars(),
        Mode::Phase => vars.structural_vars(),
    };
    active.push(vars.beta_c[k]);
    active.push(vars.lam_b1[k]);
    active.push(vars.lam_b2[k]);
    let label = format!("interference[{k}]");
    let builder = probe_block(dim, &active, vars.n_vars, eval, &label);
    (label, builder.into_psd())
}

/// Worst-case leakage cap (Schur form with sign-definiteness borders), one
/// per user and grid direction; PSD side `N + 2`.
pub(crate) fn build_leakage_lmi(
    ctx: &RobustCtx,
    vars: &VarMap,
    k: usize,
    dir: usize,
) -> (String, PsdBlockData) {
    let n = vars.n;
    let dim = n + 2;
    let f_dir = &ctx.f_r_dirs[dir];
    let eps_r = ctx.radii.eps_r;
    let r_e = ctx.r_e[k];
    let m_irs = vars.m as f64;
    let fixed = ctx.expansion;

    let eval = move |x: &DVector<f64>| -> DMatrix<C64> {
        let pt = vars.point_at(x, fixed);
        let w_ck = pt.w_c.column(k).into_owned();
        let beta_r = x[vars.beta_r[k]];
        let lam = x[vars.lam_leak[k][dir]];
        let g_w = (pt.v.adjoint() * f_dir * &w_ck)[0];
        let mut blk = DMatrix::zeros(dim, dim);
        blk[(0, 0)] = Complex64::new(beta_r * r_e - lam * m_irs, 0.0);
        blk[(0, 1)] = g_w;
        blk[(1, 0)] = g_w.conj();
        blk[(1, 1)] = Complex64::new(1.0, 0.0);
        for r in 0..n {
            let e = -Complex64::new(eps_r, 0.0) * w_ck[r];
            blk[(2 + r, 1)] = e;
            blk[(1, 2 + r)] = e.conj();
            blk[(2 + r, 2 + r)] = Complex64::new(lam, 0.0);
        }
        blk
    };

    let mut active = match vars.mode {
        Mode::Beam => vars.w_col_vars(true, k),
        Mode::Phase => vars.structural_vars(),
    };
    active.push(vars.beta_r[k]);
    active.push(vars.lam_leak[k][dir]);
    let label = format!("leakage[{k}][{dir}]");
    let builder = probe_block(dim, &active, vars.n_vars, eval, &label);
    (label, builder.into_psd())
}

/// Beam reference inside the target-channel families.
#[derive(Clone, Copy)]
struct BeamRef {
    is_comm: bool,
    col: usize,
}

/// Shared core of the denominator-lower-bound и epigraph families: an
/// `(MN+1)`-side block with linearized radiated power over the listed beams,
/// robustified over the target-cascade ball via the S-procedure. Columns are
/// emitted in rank-pair form.
#[allow(clippy::too_many_arguments)]
fn target_family_block(
    ctx: &RobustCtx,
    vars: &VarMap,
    beams: &[BeamRef],
    f_dir: &DMatrix<C64>,
    mult_var: usize,
    corner_vars: &[(usize, f64)],
    corner_const: f64,
    label: &str,
) -> PsdBlockData {
    let n = vars.n;
    let m = vars.m;
    let d_in = m * n;
    let dim = d_in + 1;
    let eps_r = ctx.radii.eps_r;
    let vr = &ctx.expansion.v;
    let vr_conj = vr.map(|e| e.conj());

    let beam_w = |b: &BeamRef| -> DVector<C64> {
        if b.is_comm {
            ctx.expansion.w_c.column(b.col).into_owned()
        } else {
            ctx.expansion.w_r.column(b.col).into_owned()
        }
    };

    // expansion quantities per beam
    let a_vecs: Vec<DVector<C64>> = beams
        .iter()
        .map(|b| {
            let w = beam_w(b);
            let mut a = DVector::zeros(dim);
            let kr = kron_vec(&w, &vr_conj);
            for i in 0..d_in {
                a[i] = kr[i];
            }
            a
        })
        .collect();
    let t2: Vec<C64> = beams
        .iter()
        .map(|b| (vr.adjoint() * f_dir * beam_w(b))[0])
        .collect();

    // constant part
    let mut b_mat = DMatrix::zeros(dim, dim);
    for a in &a_vecs {
        for r in 0..d_in {
            for c in 0..d_in {
                b_mat[(r, c)] -= a[r] * a[c].conj();
            }
        }
    }
    let mut border_const: DVector<C64> = DVector::zeros(dim);
    let mut corner = corner_const;
    for (idx, a) in a_vecs.iter().enumerate() {
        border_const.axpy(-t2[idx].conj(), a, Complex64::new(1.0, 0.0));
        corner -= t2[idx].norm_sqr();
    }
    for r in 0..d_in {
        b_mat[(r, d_in)] += border_const[r];
        b_mat[(d_in, r)] += border_const[r].conj();
    }
    b_mat[(d_in, d_in)] += Complex64::new(corner, 0.0);

    let mut builder = HermitianBlockBuilder::new(dim, b_mat);
    let e_last_idx = {
        let mut e = DVector::zeros(dim);
        e[d_in] = Complex64::new(1.0, 0.0);
        builder.add_pool(e)
    };
    let a_idx: Vec<usize> = a_vecs.iter().map(|a| builder.add_pool(a.clone())).collect();

    match vars.mode {
        Mode::Beam => {
            // shared derivative vectors d(w (x) conj(v^r)) / d w[r]
            let mut d_re_idx = Vec::with_capacity(n);
            let mut d_im_idx = Vec::with_capacity(n);
            for r in 0..n {
                let mut e_r = DVector::zeros(n);
                e_r[r] = Complex64::new(1.0, 0.0);
                let kr = kron_vec(&e_r, &vr_conj);
                let mut dv = DVector::zeros(dim);
                for i in 0..d_in {
                    dv[i] = kr[i];
                }
                d_re_idx.push(builder.add_pool(dv.clone()));
                d_im_idx.push(builder.add_pool(dv * Complex64::new(0.0, 1.0)));
            }
            // phi_r = (v^{rH} F_dir)[r]
            let phi: DVector<C64> = (f_dir.adjoint() * vr).map(|e| e.conj());
            for (bi, beam) in beams.iter().enumerate() {
                for r in 0..n {
                    for im in [false, true] {
                        let var = if beam.is_comm {
                            vars.w_c_idx(r, beam.col, im)
                        } else {
                            vars.w_r_idx(r, beam.col, im)
                        };
                        let dt1 = if im {
                            phi[r] * Complex64::new(0.0, 1.0)
                        } else {
                            phi[r]
                        };
                        let dq_idx = if im { d_im_idx[r] } else { d_re_idx[r] };
                        // border derivative vector
                        let mut dg = &a_vecs[bi] * dt1.conj();
                        let dq_vec = {
                            let mut e_r = DVector::zeros(n);
                            e_r[r] = if im {
                                Complex64::new(0.0, 1.0)
                            } else {
                                Complex64::new(1.0, 0.0)
                            };
                            let kr = kron_vec(&e_r, &vr_conj);
                            let mut dv: DVector<C64> = DVector::zeros(dim);
                            for i in 0..d_in {
                                dv[i] = kr[i];
                            }
                            dv
                        };
                        dg.axpy(t2[bi].conj(), &dq_vec, Complex64::new(1.0, 0.0));
                        let dg_idx = builder.add_pool(dg);
                        let mut col = HermColumn::default();
                        col.pairs.push((1.0, a_idx[bi], dq_idx));
                        col.pairs.push((1.0, dg_idx, e_last_idx));
                        let dc = 2.0 * (dt1.conj() * t2[bi]).re;
                        if dc != 0.0 {
                            col.entries
                                .push((d_in, d_in, Complex64::new(dc, 0.0)));
                        }
                        builder.add_column(var, col);
                    }
                }
            }
        }
        Mode::Phase => {
            // psi_b = F_dir w_b (per beam), dq_{b, m} = w_b (x) e_m
            let psi: Vec<DVector<C64>> = beams.iter().map(|b| f_dir * beam_w(b)).collect();
            let w_vals: Vec<DVector<C64>> = beams.iter().map(beam_w).collect();
            // pool: per beam per element, w_b (x) e_m and its i-rotated copy
            let mut dq_idx = vec![vec![(0usize, 0usize); m]; beams.len()];
            for (bi, w) in w_vals.iter().enumerate() {
                for mi in 0..m {
                    let mut dv = DVector::zeros(dim);
                    for col in 0..n {
                        dv[col * m + mi] = w[col];
                    }
                    let re = builder.add_pool(dv.clone());
                    let im = builder.add_pool(dv * Complex64::new(0.0, -1.0));
                    dq_idx[bi][mi] = (re, im);
                }
            }
            for mi in 0..m {
                for im in [false, true] {
                    let var = vars.v_idx(mi, im);
                    let mut col = HermColumn::default();
                    let mut dg: DVector<C64> = DVector::zeros(dim);
                    let mut dc = 0.0;
                    for (bi, _) in beams.iter().enumerate() {
                        // dq = w_b (x) conj(d v)/d var: Re -> e_m, Im -> -i e_m
                        let dqi = if im { dq_idx[bi][mi].1 } else { dq_idx[bi][mi].0 };
                        col.pairs.push((1.0, a_idx[bi], dqi));
                        // dt1 = d(v^H F w)/d var = psi[mi] (Re) or -i psi[mi] (Im)
                        let dt1 = if im {
                            psi[bi][mi] * Complex64::new(0.0, -1.0)
                        } else {
                            psi[bi][mi]
                        };
                        dg.axpy(dt1.conj(), &a_vecs[bi], Complex64::new(1.0, 0.0));
                        let mut dqv = DVector::zeros(dim);
                        for c in 0..n {
                            dqv[c * m + mi] = if im {
                                w_vals[bi][c] * Complex64::new(0.0, -1.0)
                            } else {
                                w_vals[bi][c]
                            };
                        }
                        dg.axpy(t2[bi].conj(), &dqv, Complex64::new(1.0, 0.0));
                        dc += 2.0 * (dt1.conj() * t2[bi]).re;
                    }
                    let dg_idx = builder.add_pool(dg);
                    col.pairs.push((1.0, dg_idx, e_last_idx));
                    if dc != 0.0 {
                        col.entries.push((d_in, d_in, Complex64::new(dc, 0.0)));
                    }
                    builder.add_column(var, col);
                }
            }
        }
    }

    // multiplier: +I on the vec part, -eps^2 at the corner
    let mut mcol = HermColumn::default();
    for i in 0..d_in {
        mcol.entries.push((i, i, Complex64::new(1.0, 0.0)));
    }
    mcol.entries
        .push((d_in, d_in, Complex64::new(-eps_r * eps_r, 0.0)));
    builder.add_column(mult_var, mcol);
    for (var, coeff) in corner_vars {
        let mut col = HermColumn::default();
        col.entries.push((d_in, d_in, Complex64::new(*coeff, 0.0)));
        builder.add_column(*var, col);
    }
    let _ = label;
    builder.into_psd()
}

/// Eavesdropper-denominator lower bound per user and direction
/// (`beta_r <= worst-case interference + noise`); PSD side `MN + 1`.
pub(crate) fn build_target_power_lower_lmi(
    ctx: &RobustCtx,
    vars: &VarMap,
    k: usize,
    dir: usize,
) -> (String, PsdBlockData) {
    let beams: Vec<BeamRef> = (0..vars.k)
        .filter(|i| *i != k)
        .map(|i| BeamRef {
            is_comm: true,
            col: i,
        })
        .chain((0..vars.n).map(|nn| BeamRef {
            is_comm: false,
            col: nn,
        }))
        .collect();
    let label = format!("target-power[{k}][{dir}]");
    let data = target_family_block(
        ctx,
        vars,
        &beams,
        &ctx.f_r_dirs[dir],
        vars.lam_tgt[k][dir],
        &[(vars.beta_r[k], -1.0)],
        1.0, // unit target noise after normalization
        &label,
    );
    (label, data)
}

/// Robust beampattern epigraph per direction (`chi <= worst-case radiated
/// power`); PSD side `MN + 1`.
pub(crate) fn build_objective_epigraph_lmi(
    ctx: &RobustCtx,
    vars: &VarMap,
    dir: usize,
) -> (String, PsdBlockData) {
    let beams: Vec<BeamRef> = (0..vars.k)
        .map(|i| BeamRef {
            is_comm: true,
            col: i,
        })
        .chain((0..vars.n).map(|nn| BeamRef {
            is_comm: false,
            col: nn,
        }))
        .collect();
    let label = format!("epigraph[{dir}]");
    let data = target_family_block(
        ctx,
        vars,
        &beams,
        &ctx.f_r_dirs[dir],
        vars.lam_obj[dir],
        &[(vars.chi, -1.0)],
        0.0,
        &label,
    );
    (label, data)
}

/// Assembles one robust subproblem as a conic program.
pub(crate) fn build_program(ctx: &RobustCtx, mode: Mode) -> (ConicProgram, VarMap) {
    let n = ctx.set.n_bs();
    let ku = ctx.set.n_users();
    let m = ctx.set.n_irs();
    let n_dirs = ctx.f_r_dirs.len();
    let vars = VarMap::new(mode, n, ku, m, n_dirs);
    let mut prog = ConicProgram::new(vars.n_vars);

    // objective
    let mut c = DVector::zeros(vars.n_vars);
    c[vars.chi] = 1.0;
    if mode == Mode::Phase {
        for mi in 0..m {
            c[vars.v_idx(mi, false)] = 2.0 * ctx.rho_bar * ctx.expansion.v[mi].re;
            c[vars.v_idx(mi, true)] = 2.0 * ctx.rho_bar * ctx.expansion.v[mi].im;
        }
    }
    prog.set_maximize(c).unwrap();

    for k in 0..ku {
        let (label, data) = build_user_sinr_lmi(ctx, &vars, k);
        prog.add_psd_block(label, data).unwrap();
        let (label, data) = build_user_interference_lmi(ctx, &vars, k);
        prog.add_psd_block(label, data).unwrap();
        for dir in 0..n_dirs {
            let (label, data) = build_leakage_lmi(ctx, &vars, k, dir);
            prog.add_psd_block(label, data).unwrap();
            let (label, data) = build_target_power_lower_lmi(ctx, &vars, k, dir);
            prog.add_psd_block(label, data).unwrap();
        }
    }
    for dir in 0..n_dirs {
        let (label, data) = build_objective_epigraph_lmi(ctx, &vars, dir);
        prog.add_psd_block(label, data).unwrap();
    }

    // multipliers in the nonnegative cone
    let nn = vars.nonneg_vars();
    let cols: Vec<(usize, Vec<(usize, f64)>)> = nn
        .iter()
        .enumerate()
        .map(|(row, var)| (*var, vec![(row, 1.0)]))
        .collect();
    prog.add_nonneg_block("multipliers", DVector::zeros(nn.len()), cols)
        .unwrap();

    match mode {
        Mode::Beam => {
            // total power in a second-order cone
            let w_vars = vars.structural_vars();
            let mut b = DVector::zeros(w_vars.len() + 1);
            b[0] = ctx.p_budget.sqrt();
            let cols: Vec<(usize, Vec<(usize, f64)>)> = w_vars
                .iter()
                .enumerate()
                .map(|(row, var)| (*var, vec![(row + 1, 1.0)]))
                .collect();
            prog.add_soc_block("power", b, cols).unwrap();
        }
        Mode::Phase => {
            for mi in 0..m {
                let mut b = DVector::zeros(3);
                b[0] = 1.0;
                prog.add_soc_block(
                    format!("unit-disc[{mi}]"),
                    b,
                    vec![
                        (vars.v_idx(mi, false), vec![(1, 1.0)]),
                        (vars.v_idx(mi, true), vec![(2, 1.0)]),
                    ],
                )
                .unwrap();
            }
        }
    }
    (prog, vars)
}
