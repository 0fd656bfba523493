//! Generic robust-counterpart builders.
//!
//! `s_procedure_block` turns "quadratic form nonnegative over ellipsoidal
//! uncertainty" into one bordered LMI with nonnegative multipliers;
//! `sign_definiteness_block` does the same for matrix inequalities perturbed
//! by norm-bounded factors. Both return the constant base matrix plus one
//! matrix column per multiplier variable, ready to drop into a conic program.

use nalgebra::{DMatrix, DVector};

use crate::channel::C64;

/// Quadratic function data `f(z) = z^H A z + 2 Re{b^H z} + c`.
#[derive(Debug, Clone)]
pub struct QuadForm {
    pub a: DMatrix<C64>,
    pub b: DVector<C64>,
    pub c: f64,
}

impl QuadForm {
    pub fn eval(&self, z: &DVector<C64>) -> f64 {
        let quad = (z.adjoint() * &self.a * z)[0].re;
        let lin = 2.0 * (self.b.adjoint() * z)[0].re;
        quad + lin + self.c
    }

    fn bordered(&self) -> DMatrix<C64> {
        let d = self.a.nrows();
        let mut m = DMatrix::zeros(d + 1, d + 1);
        for r in 0..d {
            for c in 0..d {
                m[(r, c)] = self.a[(r, c)];
            }
            m[(r, d)] = self.b[r];
            m[(d, r)] = self.b[r].conj();
        }
        m[(d, d)] = C64::new(self.c, 0.0);
        m
    }
}

/// Output of the S-procedure: the implication
/// `{f_i(z) >= 0} => f_0(z) >= 0` holds iff there exist `lambda_i >= 0` with
/// `base + sum_i lambda_i * lambda_cols[i] >= 0`.
#[derive(Debug, Clone)]
pub struct SProcedureData {
    pub base: DMatrix<C64>,
    /// `(multiplier variable, matrix column)` pairs.
    pub lambda_cols: Vec<(usize, DMatrix<C64>)>,
    pub dim: usize,
}

/// Builds the S-procedure LMI `[[A0, b0], [b0^H, c0]] - sum_i lambda_i
/// [[A_i, b_i], [b_i^H, c_i]] >= 0` with the `lambda_i` attached to the given
/// variable indices.
pub fn s_procedure_block(f0: &QuadForm, constraints: &[(QuadForm, usize)]) -> SProcedureData {
    let d = f0.a.nrows();
    assert_eq!(f0.a.ncols(), d);
    assert_eq!(f0.b.len(), d);
    for (f, _) in constraints {
        assert_eq!(f.a.nrows(), d, "dimension mismatch in S-procedure data");
        assert_eq!(f.b.len(), d, "dimension mismatch in S-procedure data");
    }
    SProcedureData {
        base: f0.bordered(),
        lambda_cols: constraints
            .iter()
            .map(|(f, var)| (*var, -f.bordered()))
            .collect(),
        dim: d + 1,
    }
}

/// One norm-bounded perturbation term `A^H X B + B^H X^H A`,
/// `||X||_F <= eps`, with `A: r x d`, `X: r x p`, `B: p x d`.
#[derive(Debug, Clone)]
pub struct PerturbationTerm {
    pub a: DMatrix<C64>,
    pub b: DMatrix<C64>,
    pub eps: f64,
    pub var: usize,
}

/// Output of the sign-definiteness lemma: `Q >= sum_i (A_i^H X_i B_i +
/// B_i^H X_i^H A_i)` for all `||X_i||_F <= eps_i` iff there exist
/// `lambda_i >= 0` with `base + sum_i lambda_i * lambda_cols[i] >= 0`.
#[derive(Debug, Clone)]
pub struct SignDefData {
    pub base: DMatrix<C64>,
    pub lambda_cols: Vec<(usize, DMatrix<C64>)>,
    pub dim: usize,
}

/// Builds the bordered sign-definiteness LMI
///
/// ```text
/// [ Q - sum_i l_i B_i^H B_i   -e_1 A_1^H  ...  -e_I A_I^H ]
/// [ -e_1 A_1                   l_1 I                      ]
/// [  ...                                   ...            ]
/// [ -e_I A_I                                      l_I I   ]
/// ```
pub fn sign_definiteness_block(q: &DMatrix<C64>, terms: &[PerturbationTerm]) -> SignDefData {
    let d = q.nrows();
    assert_eq!(q.ncols(), d);
    let rows: Vec<usize> = terms.iter().map(|t| t.a.nrows()).collect();
    for t in terms {
        assert_eq!(t.a.ncols(), d, "A_i column count must match Q");
        assert_eq!(t.b.ncols(), d, "B_i column count must match Q");
    }
    let total = d + rows.iter().sum::<usize>();
    let mut base = DMatrix::zeros(total, total);
    for r in 0..d {
        for c in 0..d {
            base[(r, c)] = q[(r, c)];
        }
    }
    let mut offset = d;
    for t in terms {
        let r_i = t.a.nrows();
        for r in 0..r_i {
            for c in 0..d {
                let val = -C64::new(t.eps, 0.0) * t.a[(r, c)];
                base[(offset + r, c)] = val;
                base[(c, offset + r)] = val.conj();
            }
        }
        offset += r_i;
    }
    let mut lambda_cols = Vec::with_capacity(terms.len());
    let mut offset = d;
    for t in terms {
        let r_i = t.a.nrows();
        let mut col = DMatrix::zeros(total, total);
        let btb = t.b.adjoint() * &t.b;
        for r in 0..d {
            for c in 0..d {
                col[(r, c)] = -btb[(r, c)];
            }
        }
        for r in 0..r_i {
            col[(offset + r, offset + r)] = C64::new(1.0, 0.0);
        }
        lambda_cols.push((t.var, col));
        offset += r_i;
    }
    SignDefData {
        base,
        lambda_cols,
        dim: total,
    }
}
