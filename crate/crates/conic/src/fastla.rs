//! Thin bridge to faer for the dense kernels on the solver's hot path:
//! matrix products, symmetric eigendecompositions and Cholesky factors of
//! the PSD block operators. nalgebra stays the public-facing type; views are
//! zero-copy (both sides are column-major).

use faer::linalg::matmul::matmul;
use faer::{Accum, MatMut, MatRef, Par, Side};
use nalgebra::{DMatrix, DVector};

fn view(m: &DMatrix<f64>) -> MatRef<'_, f64> {
    MatRef::from_column_major_slice(m.as_slice(), m.nrows(), m.ncols())
}

fn view_mut(m: &mut DMatrix<f64>) -> MatMut<'_, f64> {
    let (r, c) = (m.nrows(), m.ncols());
    MatMut::from_column_major_slice_mut(m.as_mut_slice(), r, c)
}

fn to_na(m: faer::Mat<f64>) -> DMatrix<f64> {
    let (r, c) = (m.nrows(), m.ncols());
    DMatrix::from_fn(r, c, |i, j| m[(i, j)])
}

/// `a * b`, written straight into a nalgebra buffer.
pub fn mm(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), b.ncols());
    matmul(view_mut(&mut out), Accum::Replace, view(a), view(b), 1.0, Par::Seq);
    out
}

/// Congruence `a * m * a'`.
pub fn congruence(a: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut am = DMatrix::zeros(a.nrows(), m.ncols());
    matmul(view_mut(&mut am), Accum::Replace, view(a), view(m), 1.0, Par::Seq);
    let mut out = DMatrix::zeros(a.nrows(), a.nrows());
    matmul(
        view_mut(&mut out),
        Accum::Replace,
        view(&am),
        view(a).transpose(),
        1.0,
        Par::Seq,
    );
    out
}

/// Two-sided product `a' * m * a`.
pub fn congruence_t(a: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut am = DMatrix::zeros(a.ncols(), m.ncols());
    matmul(
        view_mut(&mut am),
        Accum::Replace,
        view(a).transpose(),
        view(m),
        1.0,
        Par::Seq,
    );
    let mut out = DMatrix::zeros(a.ncols(), a.ncols());
    matmul(view_mut(&mut out), Accum::Replace, view(&am), view(a), 1.0, Par::Seq);
    out
}

/// Eigendecomposition of a symmetric matrix: (eigenvalues, eigenvectors).
pub fn sym_eigen(m: &DMatrix<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let evd = view(m).self_adjoint_eigen(Side::Lower).ok()?;
    let n = m.nrows();
    let vals = DVector::from_fn(n, |i, _| evd.S()[i]);
    let vecs = DMatrix::from_fn(n, n, |i, j| evd.U()[(i, j)]);
    Some((vals, vecs))
}

/// Eigenvalues of a symmetric matrix.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Option<DVector<f64>> {
    let vals = view(m).self_adjoint_eigenvalues(Side::Lower).ok()?;
    Some(DVector::from_vec(vals))
}

/// Lower Cholesky factor of an SPD matrix.
pub fn chol_l(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let llt = view(m).llt(Side::Lower).ok()?;
    let n = m.nrows();
    let l = llt.L();
    Some(DMatrix::from_fn(n, n, |i, j| if j <= i { l[(i, j)] } else { 0.0 }))
}

use num_complex::Complex64;

fn cview(m: &DMatrix<Complex64>) -> MatRef<'_, Complex64> {
    MatRef::from_column_major_slice(m.as_slice(), m.nrows(), m.ncols())
}

fn cview_mut(m: &mut DMatrix<Complex64>) -> MatMut<'_, Complex64> {
    let (r, c) = (m.nrows(), m.ncols());
    MatMut::from_column_major_slice_mut(m.as_mut_slice(), r, c)
}

/// Complex `a * b`.
pub fn cmm(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let one = Complex64::new(1.0, 0.0);
    let mut out = DMatrix::zeros(a.nrows(), b.ncols());
    matmul(cview_mut(&mut out), Accum::Replace, cview(a), cview(b), one, Par::Seq);
    out
}

/// Complex `a^H * m * a`.
pub fn c_congruence_t(a: &DMatrix<Complex64>, m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let one = Complex64::new(1.0, 0.0);
    let mut am = DMatrix::zeros(a.ncols(), m.ncols());
    matmul(
        cview_mut(&mut am),
        Accum::Replace,
        cview(a).adjoint(),
        cview(m),
        one,
        Par::Seq,
    );
    let mut out = DMatrix::zeros(a.ncols(), a.ncols());
    matmul(cview_mut(&mut out), Accum::Replace, cview(&am), cview(a), one, Par::Seq);
    out
}

/// Lower Cholesky factor of a Hermitian positive-definite matrix.
pub fn c_chol_l(m: &DMatrix<Complex64>) -> Option<DMatrix<Complex64>> {
    let llt = cview(m).llt(Side::Lower).ok()?;
    let n = m.nrows();
    let l = llt.L();
    Some(DMatrix::from_fn(n, n, |i, j| {
        if j <= i {
            l[(i, j)]
        } else {
            Complex64::new(0.0, 0.0)
        }
    }))
}

/// General real embedding [[Re, -Im], [Im, Re]] of any complex matrix.
pub fn embed_general(m: &DMatrix<Complex64>) -> DMatrix<f64> {
    let (r, c) = (m.nrows(), m.ncols());
    let mut out = DMatrix::zeros(2 * r, 2 * c);
    for i in 0..r {
        for j in 0..c {
            let v = m[(i, j)];
            out[(i, j)] = v.re;
            out[(i + r, j + c)] = v.re;
            out[(i, j + c)] = -v.im;
            out[(i + r, j)] = v.im;
        }
    }
    out
}

/// Inverse of [`embed_general`] for matrices known to be embeddings.
pub fn extract_general(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    let r = m.nrows() / 2;
    let c = m.ncols() / 2;
    DMatrix::from_fn(r, c, |i, j| {
        Complex64::new(
            0.5 * (m[(i, j)] + m[(i + r, j + c)]),
            0.5 * (m[(i + r, j)] - m[(i, j + c)]),
        )
    })
}
