//! Complex Hermitian <-> real symmetric embedding.
//!
//! A Hermitian `H` of side `d` embeds as the `2d x 2d` real symmetric matrix
//!
//! ```text
//!     E(H) = [ Re(H)  -Im(H) ]
//!            [ Im(H)   Re(H) ]
//! ```
//!
//! `H >= 0` iff `E(H) >= 0`, every eigenvalue of `H` appears twice in `E(H)`,
//! and `tr(E(A) E(B)) = 2 tr(A B)`. All complex LMIs are routed through this
//! embedding so the solver stays real-valued.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::program::{PsdBlockData, PsdColumn, RankPair};

/// Embeds a complex Hermitian matrix as a real symmetric one of doubled side.
pub fn embed_hermitian(h: &DMatrix<Complex64>) -> DMatrix<f64> {
    let d = h.nrows();
    assert_eq!(d, h.ncols(), "embed_hermitian needs a square matrix");
    let mut m = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        for j in 0..d {
            let re = h[(i, j)].re;
            let im = h[(i, j)].im;
            m[(i, j)] = re;
            m[(i + d, j + d)] = re;
            m[(i, j + d)] = -im;
            m[(i + d, j)] = im;
        }
    }
    m
}

/// Inverse of [`embed_hermitian`]; averages the two copies so that the
/// round-trip is exact for embedded inputs and well-defined for solver output
/// that is only numerically structured.
pub fn extract_hermitian(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    let n = m.nrows();
    assert_eq!(n % 2, 0, "embedded matrix must have even side");
    let d = n / 2;
    let mut h = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let re = 0.5 * (m[(i, j)] + m[(i + d, j + d)]);
            let im = 0.5 * (m[(i + d, j)] - m[(i, j + d)]);
            h[(i, j)] = Complex64::new(re, im);
        }
    }
    h
}

/// Real image `[Re(u); Im(u)]` of a complex vector.
pub fn embed_vector(u: &DVector<Complex64>) -> DVector<f64> {
    let d = u.len();
    let mut v = DVector::zeros(2 * d);
    for i in 0..d {
        v[i] = u[i].re;
        v[i + d] = u[i].im;
    }
    v
}

/// Real image of `i * u`; together with [`embed_vector`] this spans the
/// embedding of a complex rank-one pair.
pub fn embed_vector_rot(u: &DVector<Complex64>) -> DVector<f64> {
    let d = u.len();
    let mut v = DVector::zeros(2 * d);
    for i in 0..d {
        v[i] = -u[i].im;
        v[i + d] = u[i].re;
    }
    v
}

/// Builder for a complex Hermitian LMI block `B + sum_j x[v_j] M_j >= 0`,
/// lowered to [`PsdBlockData`] through the real embedding.
///
/// Columns are expressed with Hermitian-entry triplets (the conjugate mirror
/// is implied) and rank pairs `coeff * (u q^H + q u^H)` over a complex vector
/// pool. Each complex pool vector becomes two real pool vectors.
pub struct HermitianBlockBuilder {
    dim: usize,
    b: DMatrix<Complex64>,
    pool: Vec<DVector<Complex64>>,
    cols: Vec<(usize, HermColumn)>,
}

#[derive(Default, Clone)]
pub struct HermColumn {
    /// Hermitian entries `(r, c, val)` with `r <= c`; `(c, r)` gets `conj(val)`.
    /// Diagonal entries must be real.
    pub entries: Vec<(usize, usize, Complex64)>,
    /// Terms `coeff * (pool[u] pool[q]^H + pool[q] pool[u]^H)`.
    pub pairs: Vec<(f64, usize, usize)>,
}

impl HermitianBlockBuilder {
    pub fn new(dim: usize, b: DMatrix<Complex64>) -> Self {
        assert_eq!(b.nrows(), dim);
        assert_eq!(b.ncols(), dim);
        Self {
            dim,
            b,
            pool: Vec::new(),
            cols: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Registers a complex vector in the pool, returning its index.
    pub fn add_pool(&mut self, v: DVector<Complex64>) -> usize {
        assert_eq!(v.len(), self.dim);
        self.pool.push(v);
        self.pool.len() - 1
    }

    pub fn add_column(&mut self, var: usize, col: HermColumn) {
        self.cols.push((var, col));
    }

    /// Lowers to real PSD block data of side `2 * dim`.
    pub fn into_psd(self) -> PsdBlockData {
        let d = self.dim;
        let mut pool = Vec::with_capacity(2 * self.pool.len());
        for v in &self.pool {
            pool.push(embed_vector(v));
            pool.push(embed_vector_rot(v));
        }
        let mut cols = Vec::with_capacity(self.cols.len());
        for (var, hc) in self.cols {
            let mut col = PsdColumn::default();
            for (r, c, val) in hc.entries {
                debug_assert!(r <= c, "hermitian entries are upper-triangular");
                if r == c {
                    debug_assert!(
                        val.im.abs() <= 1e-12 * (1.0 + val.re.abs()),
                        "diagonal entries must be real"
                    );
                    col.entries.push((r, c, val.re));
                    col.entries.push((r + d, c + d, val.re));
                } else {
                    // E(H) entries for H_rc = a+bi and its mirror H_cr.
                    let (a, bim) = (val.re, val.im);
                    col.entries.push((r, c, a));
                    col.entries.push((c, r, a));
                    col.entries.push((r + d, c + d, a));
                    col.entries.push((c + d, r + d, a));
                    col.entries.push((r, c + d, -bim));
                    col.entries.push((c + d, r, -bim));
                    col.entries.push((c, r + d, bim));
                    col.entries.push((r + d, c, bim));
                }
            }
            for (coeff, u, q) in hc.pairs {
                // c (u q^H + q u^H) embeds as c (zu zq' + zq zu') + c (ju jq' + jq ju')
                // with zu = [Re u; Im u], ju = [-Im u; Re u].
                col.pairs.push(RankPair {
                    coeff,
                    u: 2 * u,
                    q: 2 * q,
                });
                col.pairs.push(RankPair {
                    coeff,
                    u: 2 * u + 1,
                    q: 2 * q + 1,
                });
            }
            cols.push((var, col));
        }
        PsdBlockData {
            dim: 2 * d,
            b: embed_hermitian(&self.b),
            pool,
            cols,
            complex_dim: Some(d),
        }
    }
}

/// Minimum eigenvalue of a real symmetric matrix.
pub fn min_eigenvalue_sym(m: &DMatrix<f64>) -> f64 {
    let sym = 0.5 * (m + m.transpose());
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Minimum eigenvalue of a complex Hermitian matrix.
pub fn min_eigenvalue_hermitian(h: &DMatrix<Complex64>) -> f64 {
    let sym = (h + h.adjoint()) * Complex64::new(0.5, 0.0);
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn embedding_round_trips() {
        let h = DMatrix::from_row_slice(
            2,
            2,
            &[c(2.0, 0.0), c(0.5, -1.25), c(0.5, 1.25), c(3.0, 0.0)],
        );
        let m = embed_hermitian(&h);
        let back = extract_hermitian(&m);
        let err = (&back - &h).map(|z| z.norm()).max();
        assert!(err <= 1e-14, "round-trip error {err}");
    }

    #[test]
    fn embedding_preserves_definiteness() {
        let h = DMatrix::from_row_slice(
            2,
            2,
            &[c(1.0, 0.0), c(0.0, 2.0), c(0.0, -2.0), c(1.0, 0.0)],
        );
        // Eigenvalues of h are -1 and 3.
        let me = min_eigenvalue_hermitian(&h);
        assert!((me + 1.0).abs() < 1e-12);
        let msym = min_eigenvalue_sym(&embed_hermitian(&h));
        assert!((msym + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pair_embedding_matches_dense() {
        let u = DVector::from_vec(vec![c(1.0, 2.0), c(-0.5, 0.25)]);
        let q = DVector::from_vec(vec![c(0.5, -1.0), c(2.0, 0.5)]);
        // dense complex c (u q^H + q u^H)
        let coeff = 0.75;
        let mut herm = DMatrix::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                herm[(i, j)] += coeff * (u[i] * q[j].conj() + q[i] * u[j].conj());
            }
        }
        let dense = embed_hermitian(&herm);

        let mut builder = HermitianBlockBuilder::new(2, DMatrix::zeros(2, 2));
        let iu = builder.add_pool(u);
        let iq = builder.add_pool(q);
        let mut colh = HermColumn::default();
        colh.pairs.push((coeff, iu, iq));
        builder.add_column(0, colh);
        let psd = builder.into_psd();
        let got = psd.cols[0].1.to_dense(4, &psd.pool);
        let err = (&got - &dense).abs().max();
        assert!(err < 1e-13, "pair embedding mismatch {err}");
    }
}
