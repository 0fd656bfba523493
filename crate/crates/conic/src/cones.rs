//! Per-cone state and Nesterov-Todd scaled operations.
//!
//! For each block the solver keeps the primal slack `s`, the dual `z`, and an
//! NT scaling `W` with `W'W z = s`, `lambda = W z = W^{-T} s`. Directions are
//! manipulated both in the original space (for the KKT solve) and in the
//! scaled space (for Mehrotra correctors and step lengths).

use nalgebra::{DMatrix, DVector};

/// Nonnegative-orthant block.
#[derive(Debug, Clone)]
pub(crate) struct NonNegState {
    pub s: DVector<f64>,
    pub z: DVector<f64>,
    /// w_i^2 = s_i / z_i  (W'W diagonal).
    pub w2: DVector<f64>,
    pub w: DVector<f64>,
    pub lambda: DVector<f64>,
}

impl NonNegState {
    pub fn new(dim: usize) -> Self {
        Self {
            s: DVector::repeat(dim, 1.0),
            z: DVector::repeat(dim, 1.0),
            w2: DVector::repeat(dim, 1.0),
            w: DVector::repeat(dim, 1.0),
            lambda: DVector::repeat(dim, 1.0),
        }
    }

    pub fn update_scaling(&mut self) -> Result<(), ()> {
        for i in 0..self.s.len() {
            if self.s[i] <= 0.0 || self.z[i] <= 0.0 {
                return Err(());
            }
            self.w2[i] = self.s[i] / self.z[i];
            self.w[i] = self.w2[i].sqrt();
            self.lambda[i] = (self.s[i] * self.z[i]).sqrt();
        }
        Ok(())
    }

    pub fn max_step(&self, ds: &DVector<f64>, dz: &DVector<f64>) -> f64 {
        let mut a = f64::INFINITY;
        for i in 0..self.s.len() {
            if ds[i] < 0.0 {
                a = a.min(-self.s[i] / ds[i]);
            }
            if dz[i] < 0.0 {
                a = a.min(-self.z[i] / dz[i]);
            }
        }
        a
    }
}

/// Second-order cone block, scaling stored as the Jordan square root `u` of
/// the NT point, so `W = Q_u = 2 u u' - (u'Ju) J` is symmetric and
/// `W'W = Q_{u∘u}`.
#[derive(Debug, Clone)]
pub(crate) struct SocState {
    pub s: DVector<f64>,
    pub z: DVector<f64>,
    pub u: DVector<f64>,
    pub u_inv: DVector<f64>,
    pub lambda: DVector<f64>,
}

fn jdot(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let mut v = a[0] * b[0];
    for i in 1..a.len() {
        v -= a[i] * b[i];
    }
    v
}

fn jmul(a: &DVector<f64>) -> DVector<f64> {
    let mut v = a.clone();
    for i in 1..v.len() {
        v[i] = -v[i];
    }
    v
}

/// Quadratic-representation operator `Q_p x = 2 p (p'x) - (p'Jp) Jx`.
fn quad_rep(p: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
    let det = jdot(p, p);
    let px = p.dot(x);
    let mut out = jmul(x);
    out *= -det;
    out.axpy(2.0 * px, p, 1.0);
    out
}

/// Jordan square root of an interior SOC point.
fn jordan_sqrt(w: &DVector<f64>) -> DVector<f64> {
    let n1 = w.rows(1, w.len() - 1).norm();
    let mu_p = (w[0] + n1).sqrt();
    let mu_m = (w[0] - n1).sqrt();
    let a = 0.5 * (mu_p + mu_m);
    let b = 0.5 * (mu_p - mu_m);
    let mut out = DVector::zeros(w.len());
    out[0] = a;
    if n1 > 0.0 {
        for i in 1..w.len() {
            out[i] = b * w[i] / n1;
        }
    }
    out
}

impl SocState {
    pub fn new(dim: usize) -> Self {
        let mut e = DVector::zeros(dim);
        e[0] = 1.0;
        Self {
            s: e.clone(),
            z: e.clone(),
            u: e.clone(),
            u_inv: e.clone(),
            lambda: e,
        }
    }

    pub fn update_scaling(&mut self) -> Result<(), ()> {
        let res_s = jdot(&self.s, &self.s);
        let res_z = jdot(&self.z, &self.z);
        if res_s <= 0.0 || res_z <= 0.0 || self.s[0] <= 0.0 || self.z[0] <= 0.0 {
            return Err(());
        }
        let sig_s = res_s.sqrt();
        let sig_z = res_z.sqrt();
        let sbar = &self.s / sig_s;
        let zbar = &self.z / sig_z;
        let gamma = ((1.0 + sbar.dot(&zbar)) / 2.0).sqrt();
        // NT point w_tilde = beta * v with v = (sbar + J zbar) / (2 gamma).
        let beta = (sig_s / sig_z).sqrt();
        let mut w_tilde = jmul(&zbar);
        w_tilde += &sbar;
        w_tilde *= beta / (2.0 * gamma);
        self.u = jordan_sqrt(&w_tilde);
        let det_u = jdot(&self.u, &self.u);
        self.u_inv = jmul(&self.u) / det_u;
        self.lambda = self.apply_w(&self.z);
        Ok(())
    }

    pub fn apply_w(&self, x: &DVector<f64>) -> DVector<f64> {
        quad_rep(&self.u, x)
    }

    pub fn apply_w_inv(&self, x: &DVector<f64>) -> DVector<f64> {
        quad_rep(&self.u_inv, x)
    }

    pub fn apply_wtw(&self, x: &DVector<f64>) -> DVector<f64> {
        quad_rep(&self.u, &quad_rep(&self.u, x))
    }

    pub fn apply_wtw_inv(&self, x: &DVector<f64>) -> DVector<f64> {
        quad_rep(&self.u_inv, &quad_rep(&self.u_inv, x))
    }

    pub fn max_step(&self, ds: &DVector<f64>, dz: &DVector<f64>) -> f64 {
        soc_step(&self.s, ds).min(soc_step(&self.z, dz))
    }
}

fn soc_step(s: &DVector<f64>, d: &DVector<f64>) -> f64 {
    let c = jdot(s, s);
    let b = jdot(s, d);
    let a = jdot(d, d);
    let lin = if d[0] < 0.0 {
        -s[0] / d[0]
    } else {
        f64::INFINITY
    };
    let quad = if a < 0.0 {
        let disc = (b * b - a * c).max(0.0);
        (-b - disc.sqrt()) / a
    } else if b < 0.0 {
        let disc = b * b - a * c;
        if disc <= 0.0 {
            f64::INFINITY
        } else if a > 0.0 {
            (-b - disc.sqrt()) / a
        } else {
            -c / (2.0 * b)
        }
    } else {
        f64::INFINITY
    };
    lin.min(quad).max(0.0)
}

/// PSD block; `r`/`rti` are the NT scaling factors with
/// `W(Z) = r' Z r`, `W^{-T}(S) = rti' S rti`, `lambda = diag`.
#[derive(Debug, Clone)]
pub(crate) struct PsdState {
    pub dim: usize,
    /// Complex side length when the block is an embedded Hermitian LMI; the
    /// factorizations then run in the complex domain at half the dimension.
    pub complex_dim: Option<usize>,
    pub s: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub rti: DMatrix<f64>,
    /// p = r r' so W'W(Z) = p Z p.
    pub p: DMatrix<f64>,
    /// pinv = rti rti' so (W'W)^{-1}(Y) = pinv Y pinv.
    pub pinv: DMatrix<f64>,
    pub lambda: DVector<f64>,
    /// Per-iteration cache: pinv * pool[i].
    pub pinv_pool: Vec<DVector<f64>>,
    /// Per-iteration cache: pool[i]' pinv pool[j].
    pub gram: DMatrix<f64>,
}

impl PsdState {
    pub fn new(dim: usize, complex_dim: Option<usize>) -> Self {
        Self {
            dim,
            complex_dim,
            s: DMatrix::identity(dim, dim),
            z: DMatrix::identity(dim, dim),
            r: DMatrix::identity(dim, dim),
            rti: DMatrix::identity(dim, dim),
            p: DMatrix::identity(dim, dim),
            pinv: DMatrix::identity(dim, dim),
            lambda: DVector::repeat(dim, 1.0),
            pinv_pool: Vec::new(),
            gram: DMatrix::zeros(0, 0),
        }
    }

    /// NT scaling from Cholesky factors and one symmetric eigendecomposition:
    /// with S = Ls Ls', Z = Lz Lz' and Ls' Z Ls = V D^2 V',
    /// r = Ls V D^{-1/2}, rti = Lz U D^{-1/2}, U = Lz' Ls V D^{-1}.
    pub fn update_scaling(&mut self, pool: &[DVector<f64>]) -> Result<(), ()> {
        if self.complex_dim.is_some() {
            self.update_scaling_complex()?;
        } else {
            self.update_scaling_real()?;
        }
        self.pinv_pool.clear();
        for v in pool {
            self.pinv_pool.push(&self.pinv * v);
        }
        let np = pool.len();
        self.gram = DMatrix::zeros(np, np);
        for i in 0..np {
            for j in 0..=i {
                let g = pool[i].dot(&self.pinv_pool[j]);
                self.gram[(i, j)] = g;
                self.gram[(j, i)] = g;
            }
        }
        Ok(())
    }

    fn update_scaling_real(&mut self) -> Result<(), ()> {
        let d = self.dim;
        let ls_l = crate::fastla::chol_l(&self.s).ok_or(())?;
        let lz_l = crate::fastla::chol_l(&self.z).ok_or(())?;
        let m = crate::fastla::congruence_t(&ls_l, &self.z);
        let (eigenvalues, eigenvectors) = crate::fastla::sym_eigen(&m).ok_or(())?;
        let mut lam = DVector::zeros(d);
        for i in 0..d {
            if eigenvalues[i] <= 0.0 {
                return Err(());
            }
            lam[i] = eigenvalues[i].sqrt();
        }
        // r = Ls V D^{-1/2}
        let mut v_scaled = eigenvectors.clone();
        for j in 0..d {
            let f = 1.0 / lam[j].sqrt();
            for i in 0..d {
                v_scaled[(i, j)] *= f;
            }
        }
        self.r = crate::fastla::mm(&ls_l, &v_scaled);
        // U = Lz' Ls V D^{-1}
        let mut v_dinv = eigenvectors;
        for j in 0..d {
            let f = 1.0 / lam[j];
            for i in 0..d {
                v_dinv[(i, j)] *= f;
            }
        }
        let mut u = crate::fastla::mm(&lz_l.transpose(), &crate::fastla::mm(&ls_l, &v_dinv));
        for j in 0..d {
            let f = 1.0 / lam[j].sqrt();
            for i in 0..d {
                u[(i, j)] *= f;
            }
        }
        self.rti = crate::fastla::mm(&lz_l, &u);
        self.p = crate::fastla::mm(&self.r, &self.r.transpose());
        self.pinv = crate::fastla::mm(&self.rti, &self.rti.transpose());
        self.lambda = lam;
        Ok(())
    }

    /// Same construction on the complex side of the embedding; real factors
    /// are the embeddings of the complex ones, eigenvalues appear doubled.
    fn update_scaling_complex(&mut self) -> Result<(), ()> {
        use num_complex::Complex64;
        let dc = self.complex_dim.expect("complex path");
        let s_c = crate::fastla::extract_general(&self.s);
        let z_c = crate::fastla::extract_general(&self.z);
        let ls = crate::fastla::c_chol_l(&s_c).ok_or(())?;
        let lz = crate::fastla::c_chol_l(&z_c).ok_or(())?;
        let m = crate::fastla::c_congruence_t(&ls, &z_c);
        let m = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = m.symmetric_eigen();
        let mut lam_c = DVector::zeros(dc);
        for i in 0..dc {
            if eig.eigenvalues[i] <= 0.0 {
                return Err(());
            }
            lam_c[i] = eig.eigenvalues[i].sqrt();
        }
        let mut v_scaled = eig.eigenvectors.clone();
        for j in 0..dc {
            let f = Complex64::new(1.0 / lam_c[j].sqrt(), 0.0);
            for i in 0..dc {
                v_scaled[(i, j)] *= f;
            }
        }
        let r_c = crate::fastla::cmm(&ls, &v_scaled);
        let mut v_dinv = eig.eigenvectors;
        for j in 0..dc {
            let f = Complex64::new(1.0 / lam_c[j], 0.0);
            for i in 0..dc {
                v_dinv[(i, j)] *= f;
            }
        }
        let mut u = crate::fastla::cmm(
            &lz.adjoint(),
            &crate::fastla::cmm(&ls, &v_dinv),
        );
        for j in 0..dc {
            let f = Complex64::new(1.0 / lam_c[j].sqrt(), 0.0);
            for i in 0..dc {
                u[(i, j)] *= f;
            }
        }
        let rti_c = crate::fastla::cmm(&lz, &u);
        self.r = crate::fastla::embed_general(&r_c);
        self.rti = crate::fastla::embed_general(&rti_c);
        self.p = crate::fastla::embed_general(&crate::fastla::cmm(&r_c, &r_c.adjoint()));
        self.pinv = crate::fastla::embed_general(&crate::fastla::cmm(&rti_c, &rti_c.adjoint()));
        let mut lam = DVector::zeros(self.dim);
        for i in 0..dc {
            lam[i] = lam_c[i];
            lam[i + dc] = lam_c[i];
        }
        self.lambda = lam;
        Ok(())
    }

    pub fn apply_w(&self, zm: &DMatrix<f64>) -> DMatrix<f64> {
        crate::fastla::congruence_t(&self.r, zm)
    }

    pub fn apply_w_inv_t(&self, sm: &DMatrix<f64>) -> DMatrix<f64> {
        crate::fastla::congruence_t(&self.rti, sm)
    }

    pub fn apply_w_adj(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        crate::fastla::congruence(&self.r, y)
    }

    pub fn apply_wtw(&self, zm: &DMatrix<f64>) -> DMatrix<f64> {
        crate::fastla::congruence(&self.p, zm)
    }

    pub fn apply_wtw_inv(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        crate::fastla::congruence(&self.pinv, y)
    }

    /// Max step from the scaled direction `d_scaled` against `lambda`:
    /// largest `a` with `Lambda + a * d_scaled >= 0`.
    pub fn max_step_scaled(&self, d_scaled: &DMatrix<f64>) -> f64 {
        let d = self.dim;
        let min_e = if let Some(dc) = self.complex_dim {
            let mut m = crate::fastla::extract_general(d_scaled);
            for i in 0..dc {
                for j in 0..dc {
                    m[(i, j)] /= num_complex::Complex64::new(
                        (self.lambda[i] * self.lambda[j]).sqrt(),
                        0.0,
                    );
                }
            }
            let m = (&m + m.adjoint()) * num_complex::Complex64::new(0.5, 0.0);
            m.symmetric_eigenvalues()
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min)
        } else {
            let mut m = d_scaled.clone();
            for i in 0..d {
                for j in 0..d {
                    m[(i, j)] /= (self.lambda[i] * self.lambda[j]).sqrt();
                }
            }
            let m = 0.5 * (&m + m.transpose());
            match crate::fastla::sym_eigenvalues(&m) {
                Some(eigs) => eigs.iter().cloned().fold(f64::INFINITY, f64::min),
                None => return 0.0,
            }
        };
        if min_e >= 0.0 {
            f64::INFINITY
        } else {
            -1.0 / min_e
        }
    }

    /// `lambda \ d` in the scaled space: `u_ij = 2 d_ij / (lambda_i + lambda_j)`.
    pub fn lambda_div(&self, dm: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.dim;
        let mut out = dm.clone();
        for i in 0..d {
            for j in 0..d {
                out[(i, j)] = 2.0 * dm[(i, j)] / (self.lambda[i] + self.lambda[j]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_spd(rng: &mut ChaCha12Rng, d: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.gen::<f64>() - 0.5);
        &a * a.transpose() + DMatrix::identity(d, d) * 0.3
    }

    #[test]
    fn psd_nt_identities() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..5 {
            let d = 6;
            let mut st = PsdState::new(d, None);
            st.s = random_spd(&mut rng, d);
            st.z = random_spd(&mut rng, d);
            st.update_scaling(&[]).unwrap();
            // W z = W^{-T} s = Lambda
            let wz = st.apply_w(&st.z);
            let wts = st.apply_w_inv_t(&st.s);
            let lam = DMatrix::from_diagonal(&st.lambda);
            assert!((&wz - &lam).abs().max() < 1e-9);
            assert!((&wts - &lam).abs().max() < 1e-9);
            // W'W z = s
            let s2 = st.apply_wtw(&st.z);
            assert!((&s2 - &st.s).abs().max() < 1e-9);
            let z2 = st.apply_wtw_inv(&st.s);
            assert!((&z2 - &st.z).abs().max() < 1e-9);
        }
    }

    #[test]
    fn soc_nt_identities() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for _ in 0..10 {
            let d = 5;
            let mut st = SocState::new(d);
            let mut mk = || {
                let mut v = DVector::from_fn(d, |_, _| rng.gen::<f64>() - 0.5);
                v[0] = v.rows(1, d - 1).norm() + 0.2 + rng.gen::<f64>();
                v
            };
            st.s = mk();
            st.z = mk();
            st.update_scaling().unwrap();
            let wz = st.apply_w(&st.z);
            let wts = st.apply_w_inv(&st.s);
            assert!((&wz - &st.lambda).abs().max() < 1e-10);
            assert!((&wts - &st.lambda).abs().max() < 1e-10);
            let s2 = st.apply_wtw(&st.z);
            assert!((&s2 - &st.s).abs().max() < 1e-10);
            let z2 = st.apply_wtw_inv(&st.s);
            assert!((&z2 - &st.z).abs().max() < 1e-10);
        }
    }

    #[test]
    fn soc_step_hits_boundary() {
        let s = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let d = DVector::from_vec(vec![-1.0, 0.5, 0.0]);
        let a = soc_step(&s, &d);
        // s + a d on boundary: (1-a)^2 = (0.5a)^2 -> a = 2/3
        assert!((a - 2.0 / 3.0).abs() < 1e-12);
    }
}
