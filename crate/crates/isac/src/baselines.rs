//! Comparison schemes: communication-signal-only, separate beamforming,
//! communication-based zero-forcing, sensing-based zero-forcing, and random
//! phases. All reuse the penalty machinery with structural switches.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{effective_channels, ChannelSet, C64};
use crate::penalty::{
    initial_solution, initial_solution_at, run_with, PenaltyConfig, PenaltyError, SolveReport,
    Variant,
};
use crate::metrics::{QosSpec, Solution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    CommOnly,
    Separate,
    CommZf,
    SensingZf,
    RandomPhase,
}

impl BaselineKind {
    pub fn all() -> [BaselineKind; 5] {
        [
            BaselineKind::CommOnly,
            BaselineKind::Separate,
            BaselineKind::CommZf,
            BaselineKind::SensingZf,
            BaselineKind::RandomPhase,
        ]
    }

    pub fn tag(&self) -> &'static str {
        match self {
            BaselineKind::CommOnly => "comm_only",
            BaselineKind::Separate => "separate",
            BaselineKind::CommZf => "comm_zf",
            BaselineKind::SensingZf => "sensing_zf",
            BaselineKind::RandomPhase => "random_phase",
        }
    }
}

/// Unit-modulus phase vector locally maximizing `||v^H F_r||` by iterating
/// the ascent form of the phase majorizer (`q = F_r F_r^H v`), with a few
/// seeded random restarts.
pub fn maximize_cascaded_norm(f_r: &DMatrix<C64>, seed: u64, restarts: usize) -> DVector<C64> {
    let m = f_r.nrows();
    let a = f_r * f_r.adjoint();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut best: Option<(f64, DVector<C64>)> = None;
    for _ in 0..restarts.max(1) {
        let mut v = DVector::from_fn(m, |_, _| {
            C64::from_polar(1.0, rng.gen::<f64>() * std::f64::consts::TAU)
        });
        let mut obj = (v.adjoint() * &a * &v)[0].re;
        for _ in 0..500 {
            let q = &a * &v;
            let v_new = DVector::from_fn(m, |i, _| {
                if q[i].norm() == 0.0 {
                    v[i]
                } else {
                    C64::from_polar(1.0, q[i].arg())
                }
            });
            let obj_new = (v_new.adjoint() * &a * &v_new)[0].re;
            let stalled = (obj_new - obj) <= 1e-10 * obj.abs().max(1.0);
            v = v_new;
            obj = obj_new;
            if stalled {
                break;
            }
        }
        match &best {
            Some((b, _)) if *b >= obj => {}
            _ => best = Some((obj, v)),
        }
    }
    best.unwrap().1
}

/// Runs one comparison scheme end to end.
pub fn run_baseline(
    kind: BaselineKind,
    set: &ChannelSet,
    qos: &QosSpec,
    noise_user_var: f64,
    noise_target_var: f64,
    cfg: &PenaltyConfig,
) -> Result<(Solution, SolveReport), PenaltyError> {
    let set_norm = set.normalized(noise_user_var.sqrt(), noise_target_var.sqrt());
    let n = set_norm.n_bs();
    let k_users = set_norm.n_users();

    let (variant, init) = match kind {
        BaselineKind::CommOnly => {
            let variant = Variant {
                comm_only: true,
                ..Variant::default()
            };
            let init = initial_solution(&set_norm, qos, cfg, &variant);
            (variant, init)
        }
        BaselineKind::RandomPhase => {
            let variant = Variant {
                fix_phase: true,
                ..Variant::default()
            };
            let init = initial_solution(&set_norm, qos, cfg, &variant);
            (variant, init)
        }
        BaselineKind::Separate => {
            let v = maximize_cascaded_norm(&set_norm.f_r, cfg.init_seed, 5);
            let variant = Variant {
                fix_phase: true,
                ..Variant::default()
            };
            let init = initial_solution_at(&set_norm, qos, cfg, &variant, v);
            (variant, init)
        }
        BaselineKind::CommZf => {
            let v = maximize_cascaded_norm(&set_norm.f_r, cfg.init_seed, 5);
            let variant = Variant {
                fix_phase: true,
                comm_zf: true,
                ..Variant::default()
            };
            let init = initial_solution_at(&set_norm, qos, cfg, &variant, v);
            (variant, init)
        }
        BaselineKind::SensingZf => {
            if n <= k_users {
                return Err(PenaltyError::Unsupported { n, k: k_users });
            }
            let v = maximize_cascaded_norm(&set_norm.f_r, cfg.init_seed, 5);
            let (h, _) = effective_channels(&v, &set_norm);
            let basis = user_null_space(&h, n);
            let variant = Variant {
                fix_phase: true,
                radar_basis: Some(basis),
                ..Variant::default()
            };
            let init = initial_solution_at(&set_norm, qos, cfg, &variant, v);
            (variant, init)
        }
    };
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

/// Orthonormal basis (N x (N-K)) for the null space of the stacked user
/// channels, from the smallest eigenvectors of `sum_k h_k h_k^H`.
fn user_null_space(h: &[DVector<C64>], n: usize) -> DMatrix<C64> {
    let k_users = h.len();
    let mut a = DMatrix::zeros(n, n);
    for hk in h {
        for r in 0..n {
            for c in 0..n {
                a[(r, c)] += hk[r] * hk[c].conj();
            }
        }
    }
    let eig = a.symmetric_eigen();
    // sort eigenpairs ascending, take the N-K smallest
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        let (a, b): (f64, f64) = (eig.eigenvalues[i], eig.eigenvalues[j]);
        a.partial_cmp(&b).unwrap()
    });
    let keep = n - k_users;
    let mut basis = DMatrix::zeros(n, keep);
    for (col, &idx) in order.iter().take(keep).enumerate() {
        basis.set_column(col, &eig.eigenvectors.column(idx));
    }
    basis
}
