//! Robust design under norm-bounded CSI and target-location uncertainty.
//!
//! The channel estimates carry Frobenius-ball errors and the target direction
//! is only known to lie in an angular region. Worst-case SINR, leakage and
//! beampattern constraints are turned into finite lists of LMIs with the
//! S-procedure and the sign-definiteness lemma, sampled over an angle grid,
//! and the resulting SDPs are alternated between the beamformer block and the
//! phase block.

pub mod ao;
pub mod lemmas;
pub mod lmi;

pub use ao::{solve_robust, RobustConfig, RobustError, RobustOutcome, RobustRow};
pub use lemmas::{sign_definiteness_block, s_procedure_block, SProcedureData, SignDefData};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSet, TargetRegion, C64};
use crate::metrics::{QosSpec, Solution};

/// Frobenius-ball radii on the cascaded target channel (`eps_r`), the
/// cascaded user channels (`eps_k`) and the direct user channels (`eps_dk`).
/// With `relative = true` the radii are fractions of the nominal Frobenius
/// norms.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct UncertaintySpec {
    pub eps_r: f64,
    pub eps_k: Vec<f64>,
    pub eps_dk: Vec<f64>,
    pub relative: bool,
}

impl UncertaintySpec {
    pub fn relative_uniform(k: usize, eps_error: f64) -> Self {
        Self {
            eps_r: eps_error,
            eps_k: vec![eps_error; k],
            eps_dk: vec![eps_error; k],
            relative: true,
        }
    }

    /// Absolute radii against a (normalized) channel set.
    pub fn resolve(&self, set: &ChannelSet) -> ResolvedRadii {
        let fro = |m: &DMatrix<C64>| m.iter().map(|e| e.norm_sqr()).sum::<f64>().sqrt();
        if self.relative {
            ResolvedRadii {
                eps_r: self.eps_r * fro(&set.f_r),
                eps_k: set
                    .f
                    .iter()
                    .zip(&self.eps_k)
                    .map(|(f, e)| e * fro(f))
                    .collect(),
                eps_dk: set
                    .h_d
                    .iter()
                    .zip(&self.eps_dk)
                    .map(|(h, e)| e * h.norm())
                    .collect(),
            }
        } else {
            ResolvedRadii {
                eps_r: self.eps_r,
                eps_k: self.eps_k.clone(),
                eps_dk: self.eps_dk.clone(),
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResolvedRadii {
    pub eps_r: f64,
    pub eps_k: Vec<f64>,
    pub eps_dk: Vec<f64>,
}

/// Uniform inclusive grid over the sensing region.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AngleGrid {
    pub azimuths_deg: Vec<f64>,
    pub elevations_deg: Vec<f64>,
}

impl AngleGrid {
    pub fn n_directions(&self) -> usize {
        self.azimuths_deg.len() * self.elevations_deg.len()
    }

    pub fn directions(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.azimuths_deg
            .iter()
            .flat_map(move |az| self.elevations_deg.iter().map(move |el| (*az, *el)))
    }
}

/// Uniform grid inclusive of endpoints; `n = 1` gives the center point.
pub fn make_grid(region: &TargetRegion, n_az: usize, n_el: usize) -> AngleGrid {
    let axis = |center: f64, half: f64, n: usize| -> Vec<f64> {
        if n <= 1 || half == 0.0 {
            return vec![center];
        }
        let lo = center - half;
        let hi = center + half;
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    };
    AngleGrid {
        azimuths_deg: axis(region.azimuth_deg, region.azimuth_halfwidth_deg, n_az),
        elevations_deg: axis(region.elevation_deg, region.elevation_halfwidth_deg, n_el),
    }
}

/// One sampled uncertainty draw.
pub struct UncertaintyDraw {
    pub d_f: Vec<DMatrix<C64>>,
    pub d_hd: Vec<DVector<C64>>,
    pub d_fr: DMatrix<C64>,
}

/// Draws matrices inside (half the draws exactly on) the Frobenius balls.
pub fn sample_uncertainty(
    radii: &ResolvedRadii,
    m: usize,
    n: usize,
    k_users: usize,
    rng: &mut ChaCha12Rng,
    boundary: bool,
) -> UncertaintyDraw {
    let mut mat = |eps: f64, rows: usize, cols: usize| -> DMatrix<C64> {
        let g = DMatrix::from_fn(rows, cols, |_, _| {
            C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        let fro = g.iter().map(|e| e.norm_sqr()).sum::<f64>().sqrt();
        if fro == 0.0 {
            return DMatrix::zeros(rows, cols);
        }
        let dim = 2 * rows * cols;
        let radius = if boundary {
            eps
        } else {
            eps * rng.gen::<f64>().powf(1.0 / dim as f64)
        };
        g * C64::new(radius / fro, 0.0)
    };
    let d_f = (0..k_users).map(|k| mat(radii.eps_k[k], m, n)).collect();
    let d_fr = mat(radii.eps_r, m, n);
    let d_hd = (0..k_users)
        .map(|k| {
            let v = mat(radii.eps_dk[k], n, 1);
            v.column(0).into_owned()
        })
        .collect();
    UncertaintyDraw { d_f, d_hd, d_fr }
}

/// Worst observed constraint violations over sampled uncertainty draws and
/// all grid directions, for a fixed solution.
#[derive(Debug, Clone, Serialize)]
pub struct SamplingAudit {
    pub worst_sinr_shortfall: f64,
    pub worst_leak_excess: f64,
    /// Smallest sampled beampattern value over directions and draws.
    pub min_beampattern: f64,
    pub draws: usize,
}

/// Samples the robust constraints at `sol`: user SINRs under `(dF_k, dh_dk)`
/// draws, leakage and beampattern under `dF_r` draws at every grid direction.
/// Channels and noise must be in the same (normalized) units the solver used.
pub fn sampling_audit(
    sol: &Solution,
    set_norm: &ChannelSet,
    qos: &QosSpec,
    radii: &ResolvedRadii,
    grid: &AngleGrid,
    n_draws: usize,
    seed: u64,
) -> SamplingAudit {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let m = set_norm.n_irs();
    let n = set_norm.n_bs();
    let k_users = set_norm.n_users();
    let r_th = qos.sinr_min_lin();
    let r_e = qos.leak_max_lin();
    let f_r_dirs: Vec<DMatrix<C64>> = grid
        .directions()
        .map(|(az, el)| set_norm.cascade_at(az, el))
        .collect();

    let mut worst_sinr = 0.0f64;
    let mut worst_leak = 0.0f64;
    let mut min_bp = f64::INFINITY;
    for draw_idx in 0..n_draws {
        let draw = sample_uncertainty(radii, m, n, k_users, &mut rng, draw_idx % 2 == 0);
        // user SINRs with perturbed user channels
        for k in 0..k_users {
            let f_pert = &set_norm.f[k] + &draw.d_f[k];
            let hd_pert = &set_norm.h_d[k] + &draw.d_hd[k];
            let hk = f_pert.adjoint() * &sol.v + &hd_pert;
            let sinr = crate::metrics::user_sinr_with(&hk, sol, k, 1.0);
            worst_sinr = worst_sinr.max(r_th[k] - sinr);
        }
        // leakage and beampattern at every direction with perturbed target
        // cascade
        for f_dir in &f_r_dirs {
            let f_pert = f_dir + &draw.d_fr;
            let g = f_pert.adjoint() * &sol.v;
            let mut radiated = 0.0;
            let mut beam_powers = Vec::with_capacity(k_users);
            for i in 0..k_users {
                let p = (g.adjoint() * sol.w_c.column(i))[0].norm_sqr();
                beam_powers.push(p);
                radiated += p;
            }
            for nn in 0..sol.w_r.ncols() {
                radiated += (g.adjoint() * sol.w_r.column(nn))[0].norm_sqr();
            }
            for k in 0..k_users {
                let denom = radiated - beam_powers[k] + 1.0;
                let leak = beam_powers[k] / denom;
                worst_leak = worst_leak.max(leak - r_e[k]);
            }
            min_bp = min_bp.min(radiated);
        }
    }
    SamplingAudit {
        worst_sinr_shortfall: worst_sinr,
        worst_leak_excess: worst_leak,
        min_beampattern: min_bp,
        draws: n_draws,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::TargetRegion;

    #[test]
    fn grid_construction() {
        let region = TargetRegion {
            azimuth_deg: -30.0,
            elevation_deg: 40.0,
            azimuth_halfwidth_deg: 5.0,
            elevation_halfwidth_deg: 5.0,
        };
        let g1 = make_grid(&region, 1, 1);
        assert_eq!(g1.azimuths_deg, vec![-30.0]);
        assert_eq!(g1.elevations_deg, vec![40.0]);
        let g2 = make_grid(&region, 2, 2);
        assert_eq!(g2.azimuths_deg, vec![-35.0, -25.0]);
        assert_eq!(g2.elevations_deg, vec![35.0, 45.0]);
        let g5 = make_grid(&region, 5, 5);
        assert_eq!(g5.azimuths_deg, vec![-35.0, -32.5, -30.0, -27.5, -25.0]);
        // corners included
        assert!(g5.azimuths_deg.contains(&-35.0) && g5.azimuths_deg.contains(&-25.0));
        assert!(g5.elevations_deg.contains(&35.0) && g5.elevations_deg.contains(&45.0));
    }

    #[test]
    fn sampled_draws_stay_in_ball() {
        let radii = ResolvedRadii {
            eps_r: 0.3,
            eps_k: vec![0.2, 0.5],
            eps_dk: vec![0.1, 0.4],
        };
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for i in 0..200 {
            let d = sample_uncertainty(&radii, 6, 3, 2, &mut rng, i % 2 == 0);
            let fro = |m: &DMatrix<C64>| m.iter().map(|e| e.norm_sqr()).sum::<f64>().sqrt();
            assert!(fro(&d.d_fr) <= 0.3 * (1.0 + 1e-12));
            assert!(fro(&d.d_f[0]) <= 0.2 * (1.0 + 1e-12));
            assert!(fro(&d.d_f[1]) <= 0.5 * (1.0 + 1e-12));
            assert!(d.d_hd[0].norm() <= 0.1 * (1.0 + 1e-12));
            assert!(d.d_hd[1].norm() <= 0.4 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn relative_radii_scale_with_nominal_norms() {
        let set = crate::channel::synthesize(&crate::channel::ScenarioConfig::default()).unwrap();
        let spec = UncertaintySpec {
            eps_r: 0.01,
            eps_k: vec![0.01; 3],
            eps_dk: vec![0.01; 3],
            relative: true,
        };
        let radii = spec.resolve(&set);
        let fro_fr = set.f_r.iter().map(|e| e.norm_sqr()).sum::<f64>().sqrt();
        assert!((radii.eps_r - 0.01 * fro_fr).abs() <= 1e-12 * fro_fr);
        assert!((radii.eps_dk[0] - 0.01 * set.h_d[0].norm()).abs() <= 1e-12);
    }
}
