//! Conic program data model.
//!
//! A program holds `n_vars` free real scalar variables `x`, a linear objective
//! `minimize c'x`, and a list of cone blocks. Each block is an affine map into
//! a cone:
//!
//! ```text
//!     s_blk = b_blk + sum_j x[v_j] * T_{blk,j}    must lie in K_blk
//! ```
//!
//! Cones are nonnegative orthants, second-order cones `s0 >= ||s1..||`, and
//! real symmetric PSD blocks. Complex Hermitian LMIs enter through their real
//! symmetric embedding of doubled dimension (see [`crate::embed`]).
//!
//! PSD columns can be stored either as sparse matrix entries or as symmetric
//! rank-one pair terms `c * (u q' + q u')` referencing a per-block vector
//! pool. The pool form is what makes desk-scale robust-beamforming programs
//! (many structured blocks of dimension ~100) tractable for the dense solver.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Cone tag for one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    /// Componentwise nonnegative, `dim` entries.
    NonNeg(usize),
    /// Second-order cone of total dimension `dim >= 2`: `s[0] >= ||s[1..]||`.
    Soc(usize),
    /// Real symmetric PSD block of side `dim`.
    Psd(usize),
}

impl Cone {
    /// Length of the block as a flat vector.
    pub fn flat_len(&self) -> usize {
        match *self {
            Cone::NonNeg(d) | Cone::Soc(d) => d,
            Cone::Psd(d) => d * d,
        }
    }

    /// Barrier degree used for the central-path parameter.
    pub fn degree(&self) -> usize {
        match *self {
            Cone::NonNeg(d) => d,
            Cone::Soc(_) => 2,
            Cone::Psd(d) => d,
        }
    }
}

/// Symmetric rank-two term `coeff * (u q' + q u')`, `u`/`q` indexing the
/// block's vector pool.
#[derive(Debug, Clone)]
pub struct RankPair {
    pub coeff: f64,
    pub u: usize,
    pub q: usize,
}

/// One PSD column: derivative of the block matrix w.r.t. one variable.
///
/// `entries` are full-matrix entries `(row, col, val)`; symmetric positions
/// must both be listed. `pairs` add `coeff * (u q' + q u')` terms.
#[derive(Debug, Clone, Default)]
pub struct PsdColumn {
    pub entries: Vec<(usize, usize, f64)>,
    pub pairs: Vec<RankPair>,
}

#[derive(Debug, Clone)]
pub struct PsdBlockData {
    pub dim: usize,
    pub b: DMatrix<f64>,
    pub pool: Vec<DVector<f64>>,
    pub cols: Vec<(usize, PsdColumn)>,
    /// When the block is the real embedding of a complex Hermitian LMI, the
    /// complex side length; lets the solver run its dense factorizations in
    /// the complex domain at half the dimension.
    pub complex_dim: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct VecBlockData {
    pub dim: usize,
    pub b: DVector<f64>,
    /// Sparse columns: `(var, [(row, val), ...])`.
    pub cols: Vec<(usize, Vec<(usize, f64)>)>,
}

#[derive(Debug, Clone)]
pub enum BlockData {
    Vec(VecBlockData),
    Psd(PsdBlockData),
}

/// A labelled affine-map-into-cone block.
#[derive(Debug, Clone)]
pub struct ConeBlock {
    pub label: String,
    pub cone: Cone,
    pub data: BlockData,
}

#[derive(Debug, Error)]
pub enum ProgramError {
    #[error("block `{label}`: {msg}")]
    Shape { label: String, msg: String },
    #[error("objective length {got} does not match n_vars {expect}")]
    Objective { got: usize, expect: usize },
}

/// Standard-form conic program, `minimize c'x`.
#[derive(Debug, Clone)]
pub struct ConicProgram {
    n_vars: usize,
    c: DVector<f64>,
    blocks: Vec<ConeBlock>,
}

impl ConicProgram {
    pub fn new(n_vars: usize) -> Self {
        Self {
            n_vars,
            c: DVector::zeros(n_vars),
            blocks: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn objective(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn blocks(&self) -> &[ConeBlock] {
        &self.blocks
    }

    pub(crate) fn blocks_mut(&mut self) -> &mut [ConeBlock] {
        &mut self.blocks
    }

    /// Sets `minimize c'x`.
    pub fn set_minimize(&mut self, c: DVector<f64>) -> Result<(), ProgramError> {
        if c.len() != self.n_vars {
            return Err(ProgramError::Objective {
                got: c.len(),
                expect: self.n_vars,
            });
        }
        self.c = c;
        Ok(())
    }

    /// Sets `maximize c'x` (stored negated).
    pub fn set_maximize(&mut self, c: DVector<f64>) -> Result<(), ProgramError> {
        self.set_minimize(-c)
    }

    /// Adds one objective coefficient in minimize convention.
    pub fn add_min_cost(&mut self, var: usize, coeff: f64) {
        self.c[var] += coeff;
    }

    pub fn add_nonneg_block(
        &mut self,
        label: impl Into<String>,
        b: DVector<f64>,
        cols: Vec<(usize, Vec<(usize, f64)>)>,
    ) -> Result<usize, ProgramError> {
        self.add_vec_block(label.into(), Cone::NonNeg(b.len()), b, cols)
    }

    pub fn add_soc_block(
        &mut self,
        label: impl Into<String>,
        b: DVector<f64>,
        cols: Vec<(usize, Vec<(usize, f64)>)>,
    ) -> Result<usize, ProgramError> {
        let label = label.into();
        if b.len() < 2 {
            return Err(ProgramError::Shape {
                label,
                msg: format!("SOC dimension must be >= 2, got {}", b.len()),
            });
        }
        self.add_vec_block(label, Cone::Soc(b.len()), b, cols)
    }

    fn add_vec_block(
        &mut self,
        label: String,
        cone: Cone,
        b: DVector<f64>,
        cols: Vec<(usize, Vec<(usize, f64)>)>,
    ) -> Result<usize, ProgramError> {
        let dim = b.len();
        for (var, col) in &cols {
            if *var >= self.n_vars {
                return Err(ProgramError::Shape {
                    label,
                    msg: format!("column references var {var} >= n_vars {}", self.n_vars),
                });
            }
            if let Some((row, _)) = col.iter().find(|(row, _)| *row >= dim) {
                return Err(ProgramError::Shape {
                    label,
                    msg: format!("column entry row {row} out of range {dim}"),
                });
            }
        }
        self.blocks.push(ConeBlock {
            label,
            cone,
            data: BlockData::Vec(VecBlockData { dim, b, cols }),
        });
        Ok(self.blocks.len() - 1)
    }

    pub fn add_psd_block(
        &mut self,
        label: impl Into<String>,
        data: PsdBlockData,
    ) -> Result<usize, ProgramError> {
        let label = label.into();
        let d = data.dim;
        if data.b.nrows() != d || data.b.ncols() != d {
            return Err(ProgramError::Shape {
                label,
                msg: format!("b is {}x{}, expected {d}x{d}", data.b.nrows(), data.b.ncols()),
            });
        }
        for v in &data.pool {
            if v.len() != d {
                return Err(ProgramError::Shape {
                    label,
                    msg: format!("pool vector length {} != dim {d}", v.len()),
                });
            }
        }
        for (var, col) in &data.cols {
            if *var >= self.n_vars {
                return Err(ProgramError::Shape {
                    label,
                    msg: format!("column references var {var} >= n_vars {}", self.n_vars),
                });
            }
            for &(r, c, _) in &col.entries {
                if r >= d || c >= d {
                    return Err(ProgramError::Shape {
                        label,
                        msg: format!("entry ({r},{c}) out of range {d}"),
                    });
                }
            }
            for p in &col.pairs {
                if p.u >= data.pool.len() || p.q >= data.pool.len() {
                    return Err(ProgramError::Shape {
                        label,
                        msg: "rank pair references missing pool vector".into(),
                    });
                }
            }
        }
        self.blocks.push(ConeBlock {
            label,
            cone: Cone::Psd(d),
            data: BlockData::Psd(data),
        });
        Ok(self.blocks.len() - 1)
    }

    /// Total barrier degree over all blocks.
    pub fn degree(&self) -> usize {
        self.blocks.iter().map(|b| b.cone.degree()).sum()
    }
}

impl PsdColumn {
    /// Materializes the column as a dense symmetric matrix.
    pub fn to_dense(&self, dim: usize, pool: &[DVector<f64>]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(dim, dim);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        for p in &self.pairs {
            let u = &pool[p.u];
            let q = &pool[p.q];
            for i in 0..dim {
                for j in 0..dim {
                    m[(i, j)] += p.coeff * (u[i] * q[j] + q[i] * u[j]);
                }
            }
        }
        m
    }
}

impl ConeBlock {
    /// Evaluates the block's affine map at `x` as a flat vector
    /// (row-major for PSD blocks).
    pub fn eval_flat(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.data {
            BlockData::Vec(d) => {
                let mut s = d.b.clone();
                for (var, col) in &d.cols {
                    let xv = x[*var];
                    for &(row, val) in col {
                        s[row] += xv * val;
                    }
                }
                s
            }
            BlockData::Psd(d) => {
                let m = self.eval_psd(x);
                DVector::from_iterator(d.dim * d.dim, m.transpose().iter().cloned())
            }
        }
    }

    /// Evaluates a PSD block's affine map at `x` as a dense symmetric matrix.
    pub fn eval_psd(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.data {
            BlockData::Psd(d) => {
                let mut m = d.b.clone();
                for (var, col) in &d.cols {
                    let xv = x[*var];
                    if xv == 0.0 {
                        continue;
                    }
                    for &(r, c, v) in &col.entries {
                        m[(r, c)] += xv * v;
                    }
                    for p in &col.pairs {
                        let u = &d.pool[p.u];
                        let q = &d.pool[p.q];
                        let w = xv * p.coeff;
                        m.ger(w, u, q, 1.0);
                        m.ger(w, q, u, 1.0);
                    }
                }
                m
            }
            BlockData::Vec(_) => panic!("eval_psd on a vector block"),
        }
    }
}
