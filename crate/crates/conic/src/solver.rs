//! Bundled dense primal-dual interior-point solver.
//!
//! Solves `minimize c'x  s.t.  s_blk = b_blk + T_blk x in K_blk` through the
//! homogeneous self-dual embedding
//!
//! ```text
//!     T'z - c tau          = 0
//!     T x + b tau - s      = 0
//!     -c'x - b'z - kappa   = 0
//!     s in K, z in K*, tau, kappa >= 0
//! ```
//!
//! with Nesterov-Todd scaling and Mehrotra predictor-corrector steps. At a
//! solution either `tau > 0` (optimal point `x/tau`) or `kappa > 0`
//! (infeasibility/unboundedness certificate). The KKT system is reduced to a
//! dense `n x n` Schur complement `H = T' (W'W)^{-1} T`, which is where the
//! rank-pair column structure of PSD blocks pays off.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::cones::{NonNegState, PsdState, SocState};
use crate::program::{BlockData, Cone, ConicProgram};

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Relative primal/dual feasibility tolerance.
    pub eps_feas: f64,
    /// Relative duality-gap tolerance.
    pub eps_gap: f64,
    pub max_iter: usize,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            eps_feas: 1e-8,
            eps_gap: 1e-8,
            max_iter: 150,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    Inaccurate,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: DVector<f64>,
    /// Dual variable per block, flattened (row-major for PSD blocks).
    pub block_duals: Vec<DVector<f64>>,
    /// Primal slack per block, flattened the same way.
    pub block_slacks: Vec<DVector<f64>>,
    pub objective: f64,
    /// Normalized duality gap at exit.
    pub gap: f64,
    /// Max of normalized primal/dual residuals at exit.
    pub max_residual: f64,
    pub iterations: usize,
}

enum State {
    NonNeg(NonNegState),
    Soc(SocState),
    Psd(PsdState),
}

/// Block-shaped value: vector for nonneg/soc, matrix for psd.
#[derive(Clone)]
enum BVec {
    V(DVector<f64>),
    M(DMatrix<f64>),
}

impl BVec {
    fn dot(&self, other: &BVec) -> f64 {
        match (self, other) {
            (BVec::V(a), BVec::V(b)) => a.dot(b),
            (BVec::M(a), BVec::M(b)) => a.dot(b),
            _ => unreachable!(),
        }
    }

    fn axpy(&mut self, alpha: f64, other: &BVec) {
        match (self, other) {
            (BVec::V(a), BVec::V(b)) => a.axpy(alpha, b, 1.0),
            (BVec::M(a), BVec::M(b)) => {
                a.zip_apply(b, |x, y| *x += alpha * y);
            }
            _ => unreachable!(),
        }
    }

    fn scale(&mut self, f: f64) {
        match self {
            BVec::V(a) => *a *= f,
            BVec::M(a) => *a *= f,
        }
    }

    fn norm_sq(&self) -> f64 {
        match self {
            BVec::V(a) => a.norm_squared(),
            BVec::M(a) => a.iter().map(|v| v * v).sum(),
        }
    }

    fn flatten(&self) -> DVector<f64> {
        match self {
            BVec::V(a) => a.clone(),
            BVec::M(a) => {
                DVector::from_iterator(a.nrows() * a.ncols(), a.transpose().iter().cloned())
            }
        }
    }

    fn as_mat(&self) -> &DMatrix<f64> {
        match self {
            BVec::M(m) => m,
            _ => unreachable!(),
        }
    }

    fn as_vec(&self) -> &DVector<f64> {
        match self {
            BVec::V(v) => v,
            _ => unreachable!(),
        }
    }
}

/// Pair terms reoriented around the pool vector with the highest reuse
/// (the anchor), so forward products coalesce into one rank-two update per
/// anchor and adjoint products memoize one matvec per anchor.
struct BlockWork {
    /// For `t_apply`: (anchor, [(var, coeff, other)]).
    groups: Vec<(usize, Vec<(usize, f64, usize)>)>,
    /// For `t_adj_accum`: per column, [(coeff, anchor, other)] aligned with
    /// the block's column list.
    col_pairs: Vec<Vec<(f64, usize, usize)>>,
}

pub fn solve(prog: &ConicProgram, opts: &SolverOptions) -> ConicSolution {
    let (scaled, scales) = equilibrate(prog);
    let mut sol = Ipm::new(&scaled, opts).run();
    scales.unscale(&mut sol);
    sol
}

struct Scales {
    block: Vec<f64>,
    var: Vec<f64>,
    obj: f64,
}

impl Scales {
    fn unscale(&self, sol: &mut ConicSolution) {
        for (j, d) in self.var.iter().enumerate() {
            sol.x[j] *= d;
        }
        for (bi, g) in self.block.iter().enumerate() {
            if let Some(z) = sol.block_duals.get_mut(bi) {
                *z *= *g / self.obj;
            }
            if let Some(s) = sol.block_slacks.get_mut(bi) {
                *s /= *g;
            }
        }
        if sol.objective.is_finite() {
            sol.objective /= self.obj;
        }
    }
}

/// Diagonal data scaling: divides each block by its constant's norm, each
/// variable column by its worst scaled norm, and the objective by its norm.
/// Keeps the homogeneous embedding's tau near one on badly scaled inputs.
fn equilibrate(prog: &ConicProgram) -> (ConicProgram, Scales) {
    let n = prog.n_vars();
    let nblk = prog.blocks().len();
    let mut block = vec![1.0f64; nblk];
    for (bi, blk) in prog.blocks().iter().enumerate() {
        let fro = match &blk.data {
            BlockData::Vec(d) => d.b.norm(),
            BlockData::Psd(d) => d.b.iter().map(|v| v * v).sum::<f64>().sqrt(),
        };
        block[bi] = 1.0 / fro.max(1.0);
    }
    // column norms under block scaling (pair norms bounded by 2|c| ||u|| ||q||)
    let mut col_norm = vec![0.0f64; n];
    for (bi, blk) in prog.blocks().iter().enumerate() {
        match &blk.data {
            BlockData::Vec(d) => {
                for (var, col) in &d.cols {
                    let s: f64 = col.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
                    col_norm[*var] = col_norm[*var].max(block[bi] * s);
                }
            }
            BlockData::Psd(d) => {
                for (var, col) in &d.cols {
                    let mut s: f64 = col.entries.iter().map(|(_, _, v)| v * v).sum::<f64>().sqrt();
                    for p in &col.pairs {
                        s += 2.0 * p.coeff.abs() * d.pool[p.u].norm() * d.pool[p.q].norm();
                    }
                    col_norm[*var] = col_norm[*var].max(block[bi] * s);
                }
            }
        }
    }
    let var: Vec<f64> = col_norm
        .iter()
        .map(|s| (1.0 / s.max(1e-12)).clamp(1e-8, 1e8))
        .collect();

    let mut scaled = prog.clone();
    let mut c = scaled.objective().clone();
    for j in 0..n {
        c[j] *= var[j];
    }
    let obj = 1.0 / c.norm().max(1.0);
    c *= obj;
    scaled.set_minimize(c).expect("same length");
    for (bi, blk) in scaled.blocks_mut().iter_mut().enumerate() {
        let g = block[bi];
        match &mut blk.data {
            BlockData::Vec(d) => {
                d.b *= g;
                for (varj, col) in &mut d.cols {
                    let f = g * var[*varj];
                    for (_, v) in col.iter_mut() {
                        *v *= f;
                    }
                }
            }
            BlockData::Psd(d) => {
                d.b *= g;
                for (varj, col) in &mut d.cols {
                    let f = g * var[*varj];
                    for (_, _, v) in col.entries.iter_mut() {
                        *v *= f;
                    }
                    for p in col.pairs.iter_mut() {
                        p.coeff *= f;
                    }
                }
            }
        }
    }
    (scaled, Scales { block, var, obj })
}

struct Ipm<'a> {
    prog: &'a ConicProgram,
    opts: &'a SolverOptions,
    n: usize,
    deg: usize,
    norm_b: f64,
    norm_c: f64,
    states: Vec<State>,
    work: Vec<BlockWork>,
    x: DVector<f64>,
    tau: f64,
    kappa: f64,
    threads: usize,
}

/// Maps `f` over `0..count` on a few OS threads with striped assignment;
/// results come back in index order, so reductions stay deterministic.
fn par_map<R: Send>(count: usize, threads: usize, f: impl Fn(usize) -> R + Sync) -> Vec<R> {
    if threads <= 1 || count <= 1 {
        return (0..count).map(f).collect();
    }
    let mut out: Vec<Option<R>> = Vec::with_capacity(count);
    out.resize_with(count, || None);
    let chunks: Vec<Vec<usize>> = (0..threads)
        .map(|t| (t..count).step_by(threads).collect())
        .collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for chunk in &chunks {
            let f = &f;
            handles.push(scope.spawn(move || {
                chunk
                    .iter()
                    .map(|&i| (i, f(i)))
                    .collect::<Vec<(usize, R)>>()
            }));
        }
        for h in handles {
            for (i, r) in h.join().expect("solver worker panicked") {
                out[i] = Some(r);
            }
        }
    });
    out.into_iter().map(|r| r.expect("index covered")).collect()
}

impl<'a> Ipm<'a> {
    fn new(prog: &'a ConicProgram, opts: &'a SolverOptions) -> Self {
        let n = prog.n_vars();
        let mut states = Vec::new();
        let mut work = Vec::new();
        let mut norm_b_sq = 0.0;
        for blk in prog.blocks() {
            match (&blk.cone, &blk.data) {
                (Cone::NonNeg(d), BlockData::Vec(data)) => {
                    states.push(State::NonNeg(NonNegState::new(*d)));
                    norm_b_sq += data.b.norm_squared();
                    work.push(BlockWork {
                        groups: Vec::new(),
                        col_pairs: Vec::new(),
                    });
                }
                (Cone::Soc(d), BlockData::Vec(data)) => {
                    states.push(State::Soc(SocState::new(*d)));
                    norm_b_sq += data.b.norm_squared();
                    work.push(BlockWork {
                        groups: Vec::new(),
                        col_pairs: Vec::new(),
                    });
                }
                (Cone::Psd(d), BlockData::Psd(data)) => {
                    states.push(State::Psd(PsdState::new(*d, data.complex_dim)));
                    norm_b_sq += data.b.iter().map(|v| v * v).sum::<f64>();
                    // orient every pair around its most-reused pool vector
                    let mut use_count = vec![0usize; data.pool.len()];
                    for (_, col) in &data.cols {
                        for p in &col.pairs {
                            use_count[p.u] += 1;
                            use_count[p.q] += 1;
                        }
                    }
                    let mut groups: Vec<(usize, Vec<(usize, f64, usize)>)> = Vec::new();
                    let mut col_pairs = Vec::with_capacity(data.cols.len());
                    for (var, col) in &data.cols {
                        let mut oriented = Vec::with_capacity(col.pairs.len());
                        for p in &col.pairs {
                            let (anchor, other) = if use_count[p.u] >= use_count[p.q] {
                                (p.u, p.q)
                            } else {
                                (p.q, p.u)
                            };
                            oriented.push((p.coeff, anchor, other));
                            match groups.iter_mut().find(|(a, _)| *a == anchor) {
                                Some((_, list)) => list.push((*var, p.coeff, other)),
                                None => groups.push((anchor, vec![(*var, p.coeff, other)])),
                            }
                        }
                        col_pairs.push(oriented);
                    }
                    work.push(BlockWork { groups, col_pairs });
                }
                _ => unreachable!("cone/data mismatch"),
            }
        }
        Self {
            prog,
            opts,
            n,
            deg: prog.degree(),
            norm_b: norm_b_sq.sqrt(),
            norm_c: prog.objective().norm(),
            states,
            work,
            x: DVector::zeros(n),
            tau: 1.0,
            kappa: 1.0,
            threads: 1,
        }
    }

    /// Worker threads: only worth it when the PSD congruence work dwarfs the
    /// thread hand-off cost.
    fn pick_threads(&mut self) {
        let work: usize = self
            .prog
            .blocks()
            .iter()
            .map(|b| match b.cone {
                Cone::Psd(d) => d * d * d,
                Cone::NonNeg(d) | Cone::Soc(d) => d * d,
            })
            .sum();
        let hw = std::thread::available_parallelism()
            .map(|p| p.get())
            .unwrap_or(1);
        let auto = if work > 2_000_000 { hw } else { 1 };
        self.threads = std::env::var("CONIC_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(auto)
            .max(1);
    }

    /// `T x` for one block (affine part, no constant).
    fn t_apply(&self, bi: usize, x: &DVector<f64>) -> BVec {
        let blk = &self.prog.blocks()[bi];
        match &blk.data {
            BlockData::Vec(data) => {
                let mut out = DVector::zeros(data.dim);
                for (var, col) in &data.cols {
                    let xv = x[*var];
                    if xv == 0.0 {
                        continue;
                    }
                    for &(row, val) in col {
                        out[row] += xv * val;
                    }
                }
                BVec::V(out)
            }
            BlockData::Psd(data) => {
                let d = data.dim;
                let mut m = DMatrix::zeros(d, d);
                for (var, col) in &data.cols {
                    let xv = x[*var];
                    if xv == 0.0 {
                        continue;
                    }
                    for &(r, c, v) in &col.entries {
                        m[(r, c)] += xv * v;
                    }
                }
                for (anchor, list) in &self.work[bi].groups {
                    let mut acc = DVector::zeros(d);
                    let mut any = false;
                    for &(var, coeff, other) in list {
                        let w = x[var] * coeff;
                        if w != 0.0 {
                            acc.axpy(w, &data.pool[other], 1.0);
                            any = true;
                        }
                    }
                    if any {
                        let u = &data.pool[*anchor];
                        m.ger(1.0, u, &acc, 1.0);
                        m.ger(1.0, &acc, u, 1.0);
                    }
                }
                BVec::M(m)
            }
        }
    }

    /// Accumulates `T' y` into `out`.
    fn t_adj_accum(&self, bi: usize, y: &BVec, out: &mut DVector<f64>) {
        let blk = &self.prog.blocks()[bi];
        match (&blk.data, y) {
            (BlockData::Vec(data), BVec::V(yv)) => {
                for (var, col) in &data.cols {
                    let mut acc = 0.0;
                    for &(row, val) in col {
                        acc += val * yv[row];
                    }
                    out[*var] += acc;
                }
            }
            (BlockData::Psd(data), BVec::M(ym)) => {
                // lazily memoized Y * pool[anchor]; Y is symmetric in every
                // use so <u q' + q u', Y> = 2 u' Y q = 2 (Y anchor)' other
                let mut memo: Vec<Option<DVector<f64>>> = vec![None; data.pool.len()];
                let work = &self.work[bi];
                for (ci, (var, col)) in data.cols.iter().enumerate() {
                    let mut acc = 0.0;
                    for &(r, c, v) in &col.entries {
                        acc += v * ym[(r, c)];
                    }
                    for &(coeff, anchor, other) in &work.col_pairs[ci] {
                        let ya = memo[anchor].get_or_insert_with(|| ym * &data.pool[anchor]);
                        acc += 2.0 * coeff * ya.dot(&data.pool[other]);
                    }
                    out[*var] += acc;
                }
            }
            _ => unreachable!(),
        }
    }

    fn b_of(&self, bi: usize) -> BVec {
        match &self.prog.blocks()[bi].data {
            BlockData::Vec(data) => BVec::V(data.b.clone()),
            BlockData::Psd(data) => BVec::M(data.b.clone()),
        }
    }

    fn s_of(&self, bi: usize) -> BVec {
        match &self.states[bi] {
            State::NonNeg(st) => BVec::V(st.s.clone()),
            State::Soc(st) => BVec::V(st.s.clone()),
            State::Psd(st) => BVec::M(st.s.clone()),
        }
    }

    fn z_of(&self, bi: usize) -> BVec {
        match &self.states[bi] {
            State::NonNeg(st) => BVec::V(st.z.clone()),
            State::Soc(st) => BVec::V(st.z.clone()),
            State::Psd(st) => BVec::M(st.z.clone()),
        }
    }

    fn apply_wtw_inv(&self, bi: usize, y: &BVec) -> BVec {
        match (&self.states[bi], y) {
            (State::NonNeg(st), BVec::V(v)) => {
                BVec::V(DVector::from_fn(v.len(), |i, _| v[i] * st.z[i] / st.s[i]))
            }
            (State::Soc(st), BVec::V(v)) => BVec::V(st.apply_wtw_inv(v)),
            (State::Psd(st), BVec::M(m)) => BVec::M(st.apply_wtw_inv(m)),
            _ => unreachable!(),
        }
    }

    fn apply_wtw(&self, bi: usize, y: &BVec) -> BVec {
        match (&self.states[bi], y) {
            (State::NonNeg(st), BVec::V(v)) => {
                BVec::V(DVector::from_fn(v.len(), |i, _| v[i] * st.w2[i]))
            }
            (State::Soc(st), BVec::V(v)) => BVec::V(st.apply_wtw(v)),
            (State::Psd(st), BVec::M(m)) => BVec::M(st.apply_wtw(m)),
            _ => unreachable!(),
        }
    }

    /// W' applied to a scaled-space value.
    fn apply_w_adj(&self, bi: usize, y: &BVec) -> BVec {
        match (&self.states[bi], y) {
            (State::NonNeg(st), BVec::V(v)) => {
                BVec::V(DVector::from_fn(v.len(), |i, _| v[i] * st.w[i]))
            }
            (State::Soc(st), BVec::V(v)) => BVec::V(st.apply_w(v)),
            (State::Psd(st), BVec::M(m)) => BVec::M(st.apply_w_adj(m)),
            _ => unreachable!(),
        }
    }

    /// Scaled directions `(W^{-T} ds, W dz)`.
    fn scaled_dirs(&self, bi: usize, ds: &BVec, dz: &BVec) -> (BVec, BVec) {
        match (&self.states[bi], ds, dz) {
            (State::NonNeg(st), BVec::V(a), BVec::V(b)) => (
                BVec::V(DVector::from_fn(a.len(), |i, _| a[i] / st.w[i])),
                BVec::V(DVector::from_fn(b.len(), |i, _| b[i] * st.w[i])),
            ),
            (State::Soc(st), BVec::V(a), BVec::V(b)) => {
                (BVec::V(st.apply_w_inv(a)), BVec::V(st.apply_w(b)))
            }
            (State::Psd(st), BVec::M(a), BVec::M(b)) => {
                (BVec::M(st.apply_w_inv_t(a)), BVec::M(st.apply_w(b)))
            }
            _ => unreachable!(),
        }
    }

    fn lambda_vec(&self, bi: usize) -> BVec {
        match &self.states[bi] {
            State::NonNeg(st) => BVec::V(st.lambda.clone()),
            State::Soc(st) => BVec::V(st.lambda.clone()),
            State::Psd(st) => BVec::M(DMatrix::from_diagonal(&st.lambda)),
        }
    }

    /// Jordan product in the scaled space.
    fn jprod(&self, bi: usize, a: &BVec, b: &BVec) -> BVec {
        match (&self.states[bi], a, b) {
            (State::NonNeg(_), BVec::V(x), BVec::V(y)) => {
                BVec::V(DVector::from_fn(x.len(), |i, _| x[i] * y[i]))
            }
            (State::Soc(_), BVec::V(x), BVec::V(y)) => {
                let mut out = DVector::zeros(x.len());
                out[0] = x.dot(y);
                for i in 1..x.len() {
                    out[i] = x[0] * y[i] + y[0] * x[i];
                }
                BVec::V(out)
            }
            (State::Psd(_), BVec::M(x), BVec::M(y)) => BVec::M(0.5 * (x * y + y * x)),
            _ => unreachable!(),
        }
    }

    /// `lambda \ d` (Jordan division by the scaled point).
    fn lambda_div(&self, bi: usize, d: &BVec) -> BVec {
        match (&self.states[bi], d) {
            (State::NonNeg(st), BVec::V(v)) => {
                BVec::V(DVector::from_fn(v.len(), |i, _| v[i] / st.lambda[i]))
            }
            (State::Soc(st), BVec::V(v)) => {
                let lam = &st.lambda;
                let n1sq = lam.rows(1, lam.len() - 1).norm_squared();
                let det = lam[0] * lam[0] - n1sq;
                let mut l1d = 0.0;
                for i in 1..lam.len() {
                    l1d += lam[i] * v[i];
                }
                let u0 = (lam[0] * v[0] - l1d) / det;
                let mut out = DVector::zeros(v.len());
                out[0] = u0;
                for i in 1..v.len() {
                    out[i] = (v[i] - u0 * lam[i]) / lam[0];
                }
                BVec::V(out)
            }
            (State::Psd(st), BVec::M(m)) => BVec::M(st.lambda_div(m)),
            _ => unreachable!(),
        }
    }

    fn identity_e(&self, bi: usize) -> BVec {
        match &self.states[bi] {
            State::NonNeg(st) => BVec::V(DVector::repeat(st.s.len(), 1.0)),
            State::Soc(st) => {
                let mut e = DVector::zeros(st.s.len());
                e[0] = 1.0;
                BVec::V(e)
            }
            State::Psd(st) => BVec::M(DMatrix::identity(st.dim, st.dim)),
        }
    }

    fn update_scalings(&mut self) -> Result<(), ()> {
        let threads = self.threads.min(self.states.len()).max(1);
        let blocks = self.prog.blocks();
        let chunk = self.states.len().div_ceil(threads);
        let ok = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for (ci, states) in self.states.chunks_mut(chunk).enumerate() {
                let offset = ci * chunk;
                handles.push(scope.spawn(move || {
                    for (i, st) in states.iter_mut().enumerate() {
                        let r = match st {
                            State::NonNeg(s) => s.update_scaling(),
                            State::Soc(s) => s.update_scaling(),
                            State::Psd(s) => {
                                let pool = match &blocks[offset + i].data {
                                    BlockData::Psd(d) => &d.pool,
                                    _ => unreachable!(),
                                };
                                s.update_scaling(pool)
                            }
                        };
                        if r.is_err() {
                            return false;
                        }
                    }
                    true
                }));
            }
            handles.into_iter().all(|h| h.join().expect("scaling worker"))
        });
        if ok {
            Ok(())
        } else {
            Err(())
        }
    }

    fn map_blocks<R: Send>(&self, f: impl Fn(usize) -> R + Sync) -> Vec<R> {
        par_map(self.states.len(), self.threads, f)
    }

    /// Assembles the Schur complement `H = T'(W'W)^{-1}T`.
    fn assemble_h(&self) -> DMatrix<f64> {
        let nblk = self.states.len();
        let threads = self.threads.min(nblk).max(1);
        let partials = par_map(threads, threads, |t| {
            let mut h = DMatrix::zeros(self.n, self.n);
            for bi in (t..nblk).step_by(threads) {
                self.accum_block_h(bi, &mut h);
            }
            h
        });
        let mut h = DMatrix::zeros(self.n, self.n);
        for p in partials {
            h += p;
        }
        h
    }

    fn accum_block_h(&self, bi: usize, h: &mut DMatrix<f64>) {
        let blk = &self.prog.blocks()[bi];
        {
            match (&blk.data, &self.states[bi]) {
                (BlockData::Vec(data), state) => {
                    // densify and scale each column, then accumulate dots
                    let scaled: Vec<DVector<f64>> = data
                        .cols
                        .iter()
                        .map(|(_, col)| {
                            let mut v = DVector::zeros(data.dim);
                            for &(row, val) in col {
                                v[row] = val;
                            }
                            match state {
                                State::NonNeg(st) => {
                                    for i in 0..data.dim {
                                        v[i] *= st.z[i] / st.s[i];
                                    }
                                    v
                                }
                                State::Soc(st) => st.apply_wtw_inv(&v),
                                State::Psd(_) => unreachable!(),
                            }
                        })
                        .collect();
                    for (j, (vj, colj)) in data.cols.iter().enumerate() {
                        for (l, (vl, _)) in data.cols.iter().enumerate().take(j + 1) {
                            let mut acc = 0.0;
                            for &(row, val) in colj {
                                acc += val * scaled[l][row];
                            }
                            h[(*vj, *vl)] += acc;
                            if vj != vl {
                                h[(*vl, *vj)] += acc;
                            }
                        }
                    }
                }
                (BlockData::Psd(data), State::Psd(st)) => {
                    let cols = &data.cols;
                    // Columns with many explicit entries go through a dense
                    // congruence once; structured columns use the cached gram.
                    let heavy: Vec<Option<DMatrix<f64>>> = cols
                        .iter()
                        .map(|(_, col)| {
                            if col.entries.len() > data.dim {
                                let dense = col.to_dense(data.dim, &data.pool);
                                Some(st.apply_wtw_inv(&dense))
                            } else {
                                None
                            }
                        })
                        .collect();
                    for (j, (vj, cj)) in cols.iter().enumerate() {
                        for (l, (vl, cl)) in cols.iter().enumerate().take(j + 1) {
                            if let Some(d) = heavy[j]
                                .as_ref()
                                .or_else(|| if j != l { heavy[l].as_ref() } else { None })
                            {
                                // d = Pinv M_heavy Pinv; pair with the other column.
                                let other = if heavy[j].is_some() { cl } else { cj };
                                let mut acc = 0.0;
                                for &(r, c, v) in &other.entries {
                                    acc += v * d[(c, r)];
                                }
                                for p in &other.pairs {
                                    let dq = d * &data.pool[p.q];
                                    acc += 2.0 * p.coeff * data.pool[p.u].dot(&dq);
                                }
                                h[(*vj, *vl)] += acc;
                                if vj != vl {
                                    h[(*vl, *vj)] += acc;
                                }
                                continue;
                            }
                            let mut acc = 0.0;
                            // pair x pair via cached gram
                            for pa in &cj.pairs {
                                for pb in &cl.pairs {
                                    let g = &st.gram;
                                    acc += pa.coeff
                                        * pb.coeff
                                        * (g[(pa.q, pb.u)] * g[(pb.q, pa.u)]
                                            + g[(pa.q, pb.q)] * g[(pb.u, pa.u)]
                                            + g[(pa.u, pb.u)] * g[(pb.q, pa.q)]
                                            + g[(pa.u, pb.q)] * g[(pb.u, pa.q)]);
                                }
                            }
                            // pair x sparse
                            if !cj.entries.is_empty() {
                                for pb in &cl.pairs {
                                    let ut = &st.pinv_pool[pb.u];
                                    let qt = &st.pinv_pool[pb.q];
                                    let mut t = 0.0;
                                    for &(r, c, v) in &cj.entries {
                                        t += v * (ut[c] * qt[r] + qt[c] * ut[r]);
                                    }
                                    acc += pb.coeff * t;
                                }
                            }
                            if !cl.entries.is_empty() {
                                for pa in &cj.pairs {
                                    let ut = &st.pinv_pool[pa.u];
                                    let qt = &st.pinv_pool[pa.q];
                                    let mut t = 0.0;
                                    for &(r, c, v) in &cl.entries {
                                        t += v * (ut[c] * qt[r] + qt[c] * ut[r]);
                                    }
                                    acc += pa.coeff * t;
                                }
                            }
                            // sparse x sparse
                            if !cj.entries.is_empty() && !cl.entries.is_empty() {
                                for &(r1, c1, v1) in &cj.entries {
                                    for &(r2, c2, v2) in &cl.entries {
                                        acc += v1 * v2 * st.pinv[(c1, r2)] * st.pinv[(c2, r1)];
                                    }
                                }
                            }
                            h[(*vj, *vl)] += acc;
                            if vj != vl {
                                h[(*vl, *vj)] += acc;
                            }
                        }
                    }
                }
                _ => unreachable!(),
            }
        }
    }

    /// Solves the 2x2 system `T'q = rx`, `Tp + W'W q = rz`.
    fn solve2(
        &self,
        chol: &Cholesky<f64, nalgebra::Dyn>,
        rx: &DVector<f64>,
        rz: &[BVec],
        refine_tol: f64,
        skip_refine: bool,
    ) -> (DVector<f64>, Vec<BVec>) {
        let (mut p, mut q) = self.solve2_raw(chol, rx, rz);
        if skip_refine {
            return (p, q);
        }
        // Iterative refinement against the unregularized operators when the
        // raw solve lost digits; the Schur factorization carries a diagonal
        // shift and the scaled products degrade near the boundary. The
        // tolerance tightens as the central-path parameter shrinks.
        let rhs_scale = (rx.norm_squared() + rz.iter().map(|v| v.norm_sq()).sum::<f64>())
            .sqrt()
            .max(1.0);
        for _ in 0..2 {
            let parts = self.map_blocks(|bi| {
                let t_adj = self.t_adj_vec(bi, &q[bi]);
                let mut r = rz[bi].clone();
                let tp = self.t_apply(bi, &p);
                r.axpy(-1.0, &tp);
                let wq = self.apply_wtw(bi, &q[bi]);
                r.axpy(-1.0, &wq);
                (t_adj, r)
            });
            let mut r1 = rx.clone();
            let mut r_norm = 0.0;
            let mut r2: Vec<BVec> = Vec::with_capacity(self.states.len());
            for (t_adj, r) in parts {
                r1 -= t_adj;
                r_norm += r.norm_sq();
                r2.push(r);
            }
            r_norm += r1.norm_squared();
            if r_norm.sqrt() <= refine_tol * rhs_scale {
                break;
            }
            let (dp, dq) = self.solve2_raw(chol, &r1, &r2);
            p += dp;
            for bi in 0..self.states.len() {
                q[bi].axpy(1.0, &dq[bi]);
            }
        }
        (p, q)
    }

    fn solve2_raw(
        &self,
        chol: &Cholesky<f64, nalgebra::Dyn>,
        rx: &DVector<f64>,
        rz: &[BVec],
    ) -> (DVector<f64>, Vec<BVec>) {
        let ys = self.map_blocks(|bi| {
            let y = self.apply_wtw_inv(bi, &rz[bi]);
            let t_adj = self.t_adj_vec(bi, &y);
            t_adj
        });
        let mut rhs = -rx.clone();
        for t_adj in ys {
            rhs += t_adj;
        }
        let p = chol.solve(&rhs);
        let q = self.map_blocks(|bi| {
            let tp = self.t_apply(bi, &p);
            let mut resid = rz[bi].clone();
            resid.axpy(-1.0, &tp);
            self.apply_wtw_inv(bi, &resid)
        });
        (p, q)
    }

    /// `T' y` for one block as a standalone vector.
    fn t_adj_vec(&self, bi: usize, y: &BVec) -> DVector<f64> {
        let mut tmp = DVector::zeros(self.n);
        self.t_adj_accum(bi, y, &mut tmp);
        tmp
    }

    /// Scaled directions plus the blockwise maximum cone step, in one
    /// parallel pass.
    fn scaled_dirs_and_step(&self, ds: &[BVec], dz: &[BVec]) -> (Vec<(BVec, BVec)>, f64) {
        let parts = self.map_blocks(|bi| {
            let pair = self.scaled_dirs(bi, &ds[bi], &dz[bi]);
            let a = match &self.states[bi] {
                State::NonNeg(st) => st.max_step(ds[bi].as_vec(), dz[bi].as_vec()),
                State::Soc(st) => st.max_step(ds[bi].as_vec(), dz[bi].as_vec()),
                State::Psd(st) => st
                    .max_step_scaled(pair.0.as_mat())
                    .min(st.max_step_scaled(pair.1.as_mat())),
            };
            (pair, a)
        });
        let mut alpha = f64::INFINITY;
        let mut pairs = Vec::with_capacity(parts.len());
        for (pair, a) in parts {
            alpha = alpha.min(a);
            pairs.push(pair);
        }
        (pairs, alpha)
    }

    fn run(mut self) -> ConicSolution {
        self.pick_threads();
        let nblk = self.states.len();
        let c = self.prog.objective().clone();
        let bs: Vec<BVec> = (0..nblk).map(|bi| self.b_of(bi)).collect();

        let mut best: Option<(f64, ConicSolution)> = None;
        let mut iter = 0;
        let mut stalls = 0;

        while iter < self.opts.max_iter {
            // residuals
            let mut rd = -&c * self.tau;
            for bi in 0..nblk {
                let z = self.z_of(bi);
                self.t_adj_accum(bi, &z, &mut rd);
            }
            let rp_parts = self.map_blocks(|bi| {
                let mut r = self.t_apply(bi, &self.x);
                r.axpy(self.tau, &bs[bi]);
                let s = self.s_of(bi);
                r.axpy(-1.0, &s);
                let z = self.z_of(bi);
                let stats = (r.norm_sq(), s.dot(&z), bs[bi].dot(&z), s.norm_sq(), z.norm_sq());
                (r, stats)
            });
            let mut rp: Vec<BVec> = Vec::with_capacity(nblk);
            let mut gap_sz = 0.0;
            let mut bz = 0.0;
            let mut rp_norm_sq = 0.0;
            let mut s_norm_sq = 0.0;
            let mut z_norm_sq = 0.0;
            for (r, (rn, sz, bzv, sn, zn)) in rp_parts {
                rp_norm_sq += rn;
                gap_sz += sz;
                bz += bzv;
                s_norm_sq += sn;
                z_norm_sq += zn;
                rp.push(r);
            }
            let cx = c.dot(&self.x);
            let rg = -cx - bz - self.kappa;
            let mu = (gap_sz + self.tau * self.kappa) / (self.deg as f64 + 1.0);

            let pcost = cx / self.tau;
            let dcost = -bz / self.tau;
            // Residuals are accepted in either forward-relative form (scaled
            // back by tau against the data norms) or backward-relative form
            // (against the iterate magnitudes); huge multiplier values make
            // the forward measure unattainable in f64 on some instances even
            // though the computed residual sits at the rounding floor.
            let pres_fwd = rp_norm_sq.sqrt() / (self.tau * (1.0 + self.norm_b));
            let pres_bwd = rp_norm_sq.sqrt()
                / (1.0 + self.tau * self.norm_b + s_norm_sq.sqrt() + self.x.norm());
            let pres = pres_fwd.min(pres_bwd);
            let dres_fwd = rd.norm() / (self.tau * (1.0 + self.norm_c));
            let dres_bwd = rd.norm() / (1.0 + self.tau * self.norm_c + z_norm_sq.sqrt());
            let dres = dres_fwd.min(dres_bwd);
            let cost_scale = f64::max(1.0, f64::max(pcost.abs(), dcost.abs()));
            let gap_rel = f64::min(
                gap_sz / (self.tau * self.tau),
                (pcost - dcost).abs(),
            ) / cost_scale;
            let max_res = pres.max(dres);

            if self.opts.verbose {
                eprintln!(
                    "iter {iter:3}  pcost {pcost:+.6e}  dcost {dcost:+.6e}  pres {pres:.2e}  dres {dres:.2e}  gap {gap_rel:.2e}  tau {:.2e}  kappa {:.2e}",
                    self.tau, self.kappa
                );
            }

            let make_solution = |me: &Self, status: SolveStatus| {
                let inv_tau = 1.0 / me.tau;
                ConicSolution {
                    status,
                    x: &me.x * inv_tau,
                    block_duals: (0..nblk)
                        .map(|bi| me.z_of(bi).flatten() * inv_tau)
                        .collect(),
                    block_slacks: (0..nblk)
                        .map(|bi| me.s_of(bi).flatten() * inv_tau)
                        .collect(),
                    objective: pcost,
                    gap: gap_rel,
                    max_residual: max_res,
                    iterations: iter,
                }
            };

            if pres <= self.opts.eps_feas && dres <= self.opts.eps_feas && gap_rel <= self.opts.eps_gap
            {
                return make_solution(&self, SolveStatus::Optimal);
            }

            // Infeasibility certificates.
            if bz < 0.0 {
                let mut tz = DVector::zeros(self.n);
                for bi in 0..nblk {
                    let z = self.z_of(bi);
                    self.t_adj_accum(bi, &z, &mut tz);
                }
                if tz.norm() / (-bz) * (1.0 + self.norm_b) <= self.opts.eps_feas {
                    let inv = -1.0 / bz;
                    return ConicSolution {
                        status: SolveStatus::Infeasible,
                        x: DVector::zeros(self.n),
                        block_duals: (0..nblk).map(|bi| self.z_of(bi).flatten() * inv).collect(),
                        block_slacks: (0..nblk).map(|bi| self.s_of(bi).flatten() * inv).collect(),
                        objective: f64::INFINITY,
                        gap: gap_rel,
                        max_residual: max_res,
                        iterations: iter,
                    };
                }
            }
            if cx < 0.0 {
                let mut unb_sq = 0.0;
                for bi in 0..nblk {
                    let mut r = self.t_apply(bi, &self.x);
                    let s = self.s_of(bi);
                    r.axpy(-1.0, &s);
                    unb_sq += r.norm_sq();
                }
                if unb_sq.sqrt() / (-cx) * (1.0 + self.norm_c) <= self.opts.eps_feas {
                    let inv = -1.0 / cx;
                    return ConicSolution {
                        status: SolveStatus::Unbounded,
                        x: &self.x * inv,
                        block_duals: (0..nblk).map(|_| DVector::zeros(0)).collect(),
                        block_slacks: (0..nblk).map(|bi| self.s_of(bi).flatten() * inv).collect(),
                        objective: f64::NEG_INFINITY,
                        gap: gap_rel,
                        max_residual: max_res,
                        iterations: iter,
                    };
                }
            }

            let score = max_res.max(gap_rel);
            match &mut best {
                Some((bres, _)) if *bres <= score => {
                    // Endgame noise: once residuals blow up far past the best
                    // iterate there is nothing left to gain.
                    if score > 1e3 * (*bres + 1e-14) {
                        break;
                    }
                }
                _ => {
                    best = Some((score, make_solution(&self, SolveStatus::Inaccurate)));
                }
            }

            let t_scale = std::time::Instant::now();
            if self.update_scalings().is_err() {
                break;
            }
            let d_scale = t_scale.elapsed();

            // Schur complement factorization with escalating regularization.
            let t_h = std::time::Instant::now();
            let h = self.assemble_h();
            let d_h = t_h.elapsed();
            if std::env::var("CONIC_PROFILE").is_ok() {
                eprintln!(
                    "profile: scaling {:.1}ms assemble_h {:.1}ms",
                    d_scale.as_secs_f64() * 1e3,
                    d_h.as_secs_f64() * 1e3
                );
            }
            let htr = h.trace().max(1.0);
            let mut reg = 1e-12 * htr / self.n as f64;
            let chol = loop {
                let mut hr = h.clone();
                for i in 0..self.n {
                    hr[(i, i)] += reg;
                }
                match Cholesky::new(hr) {
                    Some(ch) => break Some(ch),
                    None => {
                        reg *= 100.0;
                        if reg > 1e-2 * htr {
                            break None;
                        }
                    }
                }
            };
            let chol = match chol {
                Some(ch) => ch,
                None => break,
            };

            // direction accuracy requirement tightens with the path parameter
            let refine_tol = (1e-6 * mu).clamp(1e-13, 1e-9);
            let skip_refine = mu > 1e-3;

            let t_s2 = std::time::Instant::now();
            let negb: Vec<BVec> = bs
                .iter()
                .map(|b| {
                    let mut nb = b.clone();
                    nb.scale(-1.0);
                    nb
                })
                .collect();
            let (p1, q1) = self.solve2(&chol, &c, &negb, refine_tol, skip_refine);
            if std::env::var("CONIC_PROFILE").is_ok() {
                eprintln!("profile: solve2(c,b) {:.1}ms", t_s2.elapsed().as_secs_f64() * 1e3);
            }
            let mut denom = self.kappa / self.tau - c.dot(&p1);
            for bi in 0..nblk {
                denom -= bs[bi].dot(&q1[bi]);
            }

            // One Newton solve given complementarity targets and residual
            // factor. In the affine phase ds_scaled = -lambda, whose
            // W-adjoint image is exactly -s, so the congruence is skipped.
            let newton = |eta: f64,
                              ds_scaled: &[BVec],
                              affine: bool,
                              d_tk: f64|
             -> (DVector<f64>, Vec<BVec>, Vec<BVec>, f64, f64) {
                let bx = -&rd * eta;
                let bz: Vec<BVec> = self.map_blocks(|bi| {
                    let mut v = rp[bi].clone();
                    v.scale(-eta);
                    if affine {
                        let s = self.s_of(bi);
                        v.axpy(-1.0, &s);
                    } else {
                        let wd = self.apply_w_adj(bi, &ds_scaled[bi]);
                        v.axpy(1.0, &wd);
                    }
                    v
                });
                let btau = -eta * rg + d_tk / self.tau;
                let (p0, q0) = self.solve2(&chol, &bx, &bz, refine_tol, skip_refine);
                let mut num = btau + c.dot(&p0);
                for bi in 0..nblk {
                    num += bs[bi].dot(&q0[bi]);
                }
                let dtau = num / denom;
                let dx = &p0 + &p1 * dtau;
                let mut dz: Vec<BVec> = Vec::with_capacity(nblk);
                // ds from the primal equation T dx + b dtau - ds = -eta rp,
                // which keeps the primal residual contracting exactly even
                // when the scaling is extremely ill-conditioned.
                let ds: Vec<BVec> = self.map_blocks(|bi| {
                    let mut s = self.t_apply(bi, &dx);
                    s.axpy(dtau, &bs[bi]);
                    s.axpy(eta, &rp[bi]);
                    s
                });
                for bi in 0..nblk {
                    let mut z = q0[bi].clone();
                    z.axpy(dtau, &q1[bi]);
                    dz.push(z);
                }
                let dkappa = (d_tk - self.kappa * dtau) / self.tau;
                (dx, dz, ds, dtau, dkappa)
            };

            let t_aff = std::time::Instant::now();
            // Affine (predictor) step: ds_scaled = lambda \ (-lambda o lambda) = -lambda.
            let ds_scaled_aff: Vec<BVec> = (0..nblk)
                .map(|bi| {
                    let mut l = self.lambda_vec(bi);
                    l.scale(-1.0);
                    l
                })
                .collect();
            let (_dx_a, dz_a, ds_a, dtau_a, dkappa_a) =
                newton(1.0, &ds_scaled_aff, true, -self.tau * self.kappa);

            let d_aff = t_aff.elapsed();
            let t_sds = std::time::Instant::now();
            let (scaled_a, step_a) = self.scaled_dirs_and_step(&ds_a, &dz_a);
            let d_sds = t_sds.elapsed();
            let mut alpha_a = step_a;
            if dtau_a < 0.0 {
                alpha_a = alpha_a.min(-self.tau / dtau_a);
            }
            if dkappa_a < 0.0 {
                alpha_a = alpha_a.min(-self.kappa / dkappa_a);
            }
            let alpha_a = alpha_a.min(1.0);

            // sigma from the affine decrease
            let mut gap_aff = 0.0;
            for bi in 0..nblk {
                let s = self.s_of(bi);
                let z = self.z_of(bi);
                let mut snew = s.clone();
                snew.axpy(alpha_a, &ds_a[bi]);
                let mut znew = z.clone();
                znew.axpy(alpha_a, &dz_a[bi]);
                gap_aff += snew.dot(&znew);
            }
            gap_aff += (self.tau + alpha_a * dtau_a) * (self.kappa + alpha_a * dkappa_a);
            let mu_aff = gap_aff / (self.deg as f64 + 1.0);
            let sigma = ((mu_aff / mu).max(0.0).min(1.0)).powi(3);

            let t_corr = std::time::Instant::now();
            // Combined (corrector) step.
            let ds_scaled_comb: Vec<BVec> = self
                .map_blocks(|bi| {
                    let lam = self.lambda_vec(bi);
                    let mut d = self.jprod(bi, &lam, &lam);
                    d.scale(-1.0);
                    let (dsc, dzc) = &scaled_a[bi];
                    let corr = self.jprod(bi, dsc, dzc);
                    d.axpy(-1.0, &corr);
                    let mut e = self.identity_e(bi);
                    e.scale(sigma * mu);
                    d.axpy(1.0, &e);
                    self.lambda_div(bi, &d)
                });
            let d_corr = t_corr.elapsed();
            let t_comb = std::time::Instant::now();
            let d_tk = sigma * mu - self.tau * self.kappa - dtau_a * dkappa_a;
            let (dx, dz, ds, dtau, dkappa) = newton(1.0 - sigma, &ds_scaled_comb, false, d_tk);
            let d_comb = t_comb.elapsed();

            let t_sds2 = std::time::Instant::now();
            let (_scaled_c, step_c) = self.scaled_dirs_and_step(&ds, &dz);
            let mut alpha = step_c;
            if std::env::var("CONIC_PROFILE").is_ok() {
                eprintln!(
                    "profile: newton_aff {:.1}ms sds_a {:.1}ms corr {:.1}ms newton_comb {:.1}ms sds_c {:.1}ms",
                    d_aff.as_secs_f64() * 1e3,
                    d_sds.as_secs_f64() * 1e3,
                    d_corr.as_secs_f64() * 1e3,
                    d_comb.as_secs_f64() * 1e3,
                    t_sds2.elapsed().as_secs_f64() * 1e3
                );
            }
            if dtau < 0.0 {
                alpha = alpha.min(-self.tau / dtau);
            }
            if dkappa < 0.0 {
                alpha = alpha.min(-self.kappa / dkappa);
            }
            let alpha = (0.99 * alpha).min(1.0);

            if !alpha.is_finite() || alpha <= 1e-10 {
                stalls += 1;
                if stalls >= 3 {
                    break;
                }
            } else {
                stalls = 0;
            }

            self.x.axpy(alpha, &dx, 1.0);
            for bi in 0..nblk {
                match &mut self.states[bi] {
                    State::NonNeg(st) => {
                        st.s.axpy(alpha, ds[bi].as_vec(), 1.0);
                        st.z.axpy(alpha, dz[bi].as_vec(), 1.0);
                    }
                    State::Soc(st) => {
                        st.s.axpy(alpha, ds[bi].as_vec(), 1.0);
                        st.z.axpy(alpha, dz[bi].as_vec(), 1.0);
                    }
                    State::Psd(st) => {
                        let dsm = ds[bi].as_mat();
                        let dzm = dz[bi].as_mat();
                        st.s.zip_apply(dsm, |x, y| *x += alpha * y);
                        st.z.zip_apply(dzm, |x, y| *x += alpha * y);
                        // keep exact symmetry
                        let ssym = 0.5 * (&st.s + st.s.transpose());
                        let zsym = 0.5 * (&st.z + st.z.transpose());
                        st.s = ssym;
                        st.z = zsym;
                    }
                }
            }
            self.tau += alpha * dtau;
            self.kappa += alpha * dkappa;
            iter += 1;
        }

        // Loop ended without an in-iteration exit; grade the best iterate.
        match best {
            Some((_, mut sol)) => {
                sol.status = if sol.max_residual <= self.opts.eps_feas
                    && sol.gap <= self.opts.eps_gap
                {
                    SolveStatus::Optimal
                } else {
                    SolveStatus::Inaccurate
                };
                sol.iterations = iter;
                sol
            }
            None => ConicSolution {
                status: SolveStatus::Inaccurate,
                x: DVector::zeros(self.n),
                block_duals: Vec::new(),
                block_slacks: Vec::new(),
                objective: f64::NAN,
                gap: f64::NAN,
                max_residual: f64::NAN,
                iterations: iter,
            },
        }
    }
}
