//! Self-describing text dump of a program: sparse triplet affine maps plus
//! cone tags, intended for cross-checking instances against external solvers.

use std::fmt::Write;

use crate::program::{BlockData, Cone, ConicProgram};

/// Renders the program. Format:
///
/// ```text
/// conic-program v1
/// vars <n>
/// minimize
/// c <var> <val>          # nonzeros only
/// block <idx> <tag> <dim> <label>
/// b <i> [<j>] <val>      # j only for psd blocks
/// a <var> <i> [<j>] <val>
/// end
/// ```
pub fn dump(prog: &ConicProgram) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "conic-program v1");
    let _ = writeln!(out, "vars {}", prog.n_vars());
    let _ = writeln!(out, "minimize");
    for (i, v) in prog.objective().iter().enumerate() {
        if *v != 0.0 {
            let _ = writeln!(out, "c {i} {v:.17e}");
        }
    }
    for (bi, blk) in prog.blocks().iter().enumerate() {
        let (tag, dim) = match blk.cone {
            Cone::NonNeg(d) => ("nonneg", d),
            Cone::Soc(d) => ("soc", d),
            Cone::Psd(d) => ("psd", d),
        };
        let _ = writeln!(out, "block {bi} {tag} {dim} {}", blk.label);
        match &blk.data {
            BlockData::Vec(data) => {
                for (i, v) in data.b.iter().enumerate() {
                    if *v != 0.0 {
                        let _ = writeln!(out, "b {i} {v:.17e}");
                    }
                }
                for (var, col) in &data.cols {
                    for &(row, val) in col {
                        if val != 0.0 {
                            let _ = writeln!(out, "a {var} {row} {val:.17e}");
                        }
                    }
                }
            }
            BlockData::Psd(data) => {
                for i in 0..data.dim {
                    for j in 0..data.dim {
                        let v = data.b[(i, j)];
                        if v != 0.0 {
                            let _ = writeln!(out, "b {i} {j} {v:.17e}");
                        }
                    }
                }
                for (var, col) in &data.cols {
                    let dense = col.to_dense(data.dim, &data.pool);
                    for i in 0..data.dim {
                        for j in 0..data.dim {
                            let v = dense[(i, j)];
                            if v != 0.0 {
                                let _ = writeln!(out, "a {var} {i} {j} {v:.17e}");
                            }
                        }
                    }
                }
            }
        }
    }
    let _ = writeln!(out, "end");
    out
}
