//! Scenario definition and channel synthesis.
//!
//! Produces all the channels of one experiment: the BS-IRS matrix `G`, the
//! IRS-user vectors `h_r[k]`, the direct BS-user vectors `h_d[k]`, the
//! IRS-target steering vector `g_r`, and the cascaded matrices
//! `F[k] = diag(h_r[k]^H) G` and `F_r = diag(g_r^H) G` through which the IRS
//! phase vector enters linearly.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type C64 = Complex64;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("path loss undefined below the 1 m reference distance (got {0} m)")]
    Distance(f64),
    #[error("dimension mismatch: {0}")]
    Shape(String),
}

/// BS linear array plus IRS planar array geometry.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ArrayGeometry {
    pub n_bs_antennas: usize,
    pub m_x: usize,
    pub m_z: usize,
    /// Element spacing over wavelength (d / lambda).
    pub spacing_ratio: f64,
}

impl ArrayGeometry {
    pub fn n_irs_elements(&self) -> usize {
        self.m_x * self.m_z
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.n_bs_antennas == 0 || self.m_x == 0 || self.m_z == 0 {
            return Err(ChannelError::Config("array sizes must be positive".into()));
        }
        if !(self.spacing_ratio > 0.0) {
            return Err(ChannelError::Config("spacing_ratio must be > 0".into()));
        }
        Ok(())
    }
}

/// Angular region of interest for sensing, centered on the nominal target
/// direction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct TargetRegion {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub azimuth_halfwidth_deg: f64,
    pub elevation_halfwidth_deg: f64,
}

impl TargetRegion {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.azimuth_halfwidth_deg < 0.0 || self.elevation_halfwidth_deg < 0.0 {
            return Err(ChannelError::Config("halfwidths must be >= 0".into()));
        }
        for a in [self.azimuth_deg, self.elevation_deg] {
            if !(-90.0..=90.0).contains(&a) {
                return Err(ChannelError::Config(format!("angle {a} outside (-90, 90)")));
            }
        }
        Ok(())
    }
}

/// Full description of one experiment's physical layout and statistics.
/// Angles in degrees, powers in dBm, gains in dB, distances in meters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScenarioConfig {
    pub array: ArrayGeometry,
    pub bs_position: [f64; 3],
    pub irs_position: [f64; 3],
    pub user_center: [f64; 3],
    pub user_circle_radius: f64,
    pub n_users: usize,
    pub target: TargetRegion,
    pub irs_target_distance: f64,
    pub path_loss_ref_db: f64,
    pub exp_bs_irs: f64,
    pub exp_irs_user: f64,
    pub exp_bs_user: f64,
    pub exp_irs_target: f64,
    pub rician_factor_db: f64,
    pub noise_user_dbm: f64,
    pub noise_target_dbm: f64,
    pub rng_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            array: ArrayGeometry {
                n_bs_antennas: 4,
                m_x: 10,
                m_z: 10,
                spacing_ratio: 0.5,
            },
            bs_position: [0.0, 0.0, 2.5],
            irs_position: [20.0, 0.0, 2.5],
            user_center: [20.0, 5.0, 0.0],
            user_circle_radius: 2.0,
            n_users: 3,
            target: TargetRegion {
                azimuth_deg: -30.0,
                elevation_deg: 40.0,
                azimuth_halfwidth_deg: 5.0,
                elevation_halfwidth_deg: 5.0,
            },
            irs_target_distance: 10.0,
            path_loss_ref_db: -30.0,
            exp_bs_irs: 2.2,
            exp_irs_user: 2.2,
            exp_bs_user: 3.6,
            exp_irs_target: 2.0,
            rician_factor_db: 3.0,
            noise_user_dbm: -90.0,
            noise_target_dbm: -90.0,
            rng_seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        self.array.validate()?;
        self.target.validate()?;
        if self.n_users == 0 {
            return Err(ChannelError::Config("need at least one user".into()));
        }
        if !(self.user_circle_radius >= 0.0) {
            return Err(ChannelError::Config("user radius must be >= 0".into()));
        }
        if !(self.irs_target_distance > 0.0) {
            return Err(ChannelError::Config("irs_target_distance must be > 0".into()));
        }
        for e in [
            self.exp_bs_irs,
            self.exp_irs_user,
            self.exp_bs_user,
            self.exp_irs_target,
        ] {
            if !(e > 0.0) {
                return Err(ChannelError::Config("path-loss exponents must be > 0".into()));
            }
        }
        Ok(())
    }

    pub fn noise_user_var(&self) -> f64 {
        dbm_to_watt(self.noise_user_dbm)
    }

    pub fn noise_target_var(&self) -> f64 {
        dbm_to_watt(self.noise_target_dbm)
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

pub fn dbm_to_watt(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// All synthesized channels of one realization. `f[k]` and `f_r` are kept in
/// sync with the raw channels by [`cascade`].
#[derive(Debug, Clone)]
pub struct ChannelSet {
    /// BS -> IRS, M x N.
    pub g_mat: DMatrix<C64>,
    /// IRS -> user k, length M each.
    pub h_r: Vec<DVector<C64>>,
    /// BS -> user k, length N each.
    pub h_d: Vec<DVector<C64>>,
    /// IRS -> target steering with large-scale gain folded in, length M.
    pub g_r: DVector<C64>,
    /// Cascaded user channels diag(h_r[k]^H) G, M x N.
    pub f: Vec<DMatrix<C64>>,
    /// Cascaded target channel diag(g_r^H) G, M x N.
    pub f_r: DMatrix<C64>,
    /// Geometry snapshot for per-direction cascades.
    pub geometry: ArrayGeometry,
    /// sqrt path loss of the IRS-target link (the steering gain), kept for
    /// probing other directions.
    pub target_gain: f64,
    pub user_positions: Vec<[f64; 3]>,
}

impl ChannelSet {
    pub fn n_bs(&self) -> usize {
        self.g_mat.ncols()
    }

    pub fn n_irs(&self) -> usize {
        self.g_mat.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.h_r.len()
    }

    /// Divides all user channels by `sigma_user` and the target cascade by
    /// `sigma_target`, so the solvers see unit noise variances. Cascades are
    /// recomputed to keep the `F = diag(h^H) G` invariant exact.
    pub fn normalized(&self, sigma_user: f64, sigma_target: f64) -> ChannelSet {
        let mut out = self.clone();
        for k in 0..out.h_r.len() {
            out.h_r[k] /= C64::new(sigma_user, 0.0);
            out.h_d[k] /= C64::new(sigma_user, 0.0);
        }
        out.g_r /= C64::new(sigma_target, 0.0);
        out.target_gain /= sigma_target;
        cascade(&mut out).expect("shapes preserved");
        out
    }

    /// Cascaded target channel toward an arbitrary probe direction.
    pub fn cascade_at(&self, azimuth_deg: f64, elevation_deg: f64) -> DMatrix<C64> {
        let steer = steering_vector(azimuth_deg, elevation_deg, &self.geometry, self.target_gain);
        let m = self.n_irs();
        let mut f = DMatrix::zeros(m, self.n_bs());
        for i in 0..m {
            // row i of diag(g^H) G = steer_i * G_i (steer holds the row entries
            // of g^H directly).
            for j in 0..self.n_bs() {
                f[(i, j)] = steer[i] * self.g_mat[(i, j)];
            }
        }
        f
    }
}

/// IRS steering row entries of Eq-style planar response: entry (ix, iz)
/// equals `alpha_r * exp(-j 2 pi (d/lambda) [ix sinT cosP + iz sinT sinP])`,
/// ordered x-axis factor Kronecker z-axis factor.
pub fn steering_vector(
    azimuth_deg: f64,
    elevation_deg: f64,
    geometry: &ArrayGeometry,
    alpha_r: f64,
) -> DVector<C64> {
    let theta = azimuth_deg.to_radians();
    let phi = elevation_deg.to_radians();
    let kx = -2.0 * std::f64::consts::PI * geometry.spacing_ratio * theta.sin() * phi.cos();
    let kz = -2.0 * std::f64::consts::PI * geometry.spacing_ratio * theta.sin() * phi.sin();
    let m = geometry.n_irs_elements();
    let mut v = DVector::zeros(m);
    let mut idx = 0;
    for ix in 0..geometry.m_x {
        for iz in 0..geometry.m_z {
            let phase = kx * ix as f64 + kz * iz as f64;
            v[idx] = C64::from_polar(alpha_r, phase);
            idx += 1;
        }
    }
    v
}

/// Linear power gain `10^(ref_db/10) * d^(-exponent)`; the reference distance
/// is 1 m and shorter links are out of the model's validity range.
pub fn path_loss(distance_m: f64, exponent: f64, ref_db: f64) -> Result<f64, ChannelError> {
    if !(distance_m >= 1.0) {
        return Err(ChannelError::Distance(distance_m));
    }
    Ok(db_to_linear(ref_db) * distance_m.powf(-exponent))
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Azimuth/elevation of `to` as seen from the IRS at `from`, matching the
/// steering parametrization: unit direction (sinT cosP, cosT, sinT sinP).
fn angles_from(from: &[f64; 3], to: &[f64; 3]) -> (f64, f64) {
    let d = [to[0] - from[0], to[1] - from[1], to[2] - from[2]];
    let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if r == 0.0 {
        return (0.0, 0.0);
    }
    let theta = (d[1] / r).clamp(-1.0, 1.0).acos();
    let phi = d[2].atan2(d[0]);
    (theta.to_degrees(), phi.to_degrees())
}

fn complex_gaussian(rng: &mut ChaCha12Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) / C64::new(2f64.sqrt(), 0.0)
}

/// Synthesizes a full channel realization; deterministic given
/// `config.rng_seed`.
pub fn synthesize(config: &ScenarioConfig) -> Result<ChannelSet, ChannelError> {
    config.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(config.rng_seed);
    let n = config.array.n_bs_antennas;
    let m = config.array.n_irs_elements();
    let k_users = config.n_users;

    // user positions: uniform over the disc via polar sampling
    let mut user_positions = Vec::with_capacity(k_users);
    for _ in 0..k_users {
        let r = config.user_circle_radius * rng.gen::<f64>().sqrt();
        let ang = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
        user_positions.push([
            config.user_center[0] + r * ang.cos(),
            config.user_center[1] + r * ang.sin(),
            config.user_center[2],
        ]);
    }

    let kappa = db_to_linear(config.rician_factor_db);
    let los_w = (kappa / (1.0 + kappa)).sqrt();
    let nlos_w = (1.0 / (1.0 + kappa)).sqrt();

    // BS -> IRS: Rician with rank-one broadside LoS
    let d_bi = dist(&config.bs_position, &config.irs_position);
    let pl_bi = path_loss(d_bi, config.exp_bs_irs, config.path_loss_ref_db)?.sqrt();
    let mut g_mat = DMatrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            let nlos = complex_gaussian(&mut rng);
            g_mat[(i, j)] = C64::new(pl_bi * los_w, 0.0) + nlos * C64::new(pl_bi * nlos_w, 0.0);
        }
    }

    // IRS -> users: Rician with geometric steering LoS
    let mut h_r = Vec::with_capacity(k_users);
    for pos in &user_positions {
        let d_iu = dist(&config.irs_position, pos);
        let pl = path_loss(d_iu, config.exp_irs_user, config.path_loss_ref_db)?.sqrt();
        let (az, el) = angles_from(&config.irs_position, pos);
        let steer = steering_vector(az, el, &config.array, 1.0);
        let mut h = DVector::zeros(m);
        for i in 0..m {
            let nlos = complex_gaussian(&mut rng);
            // column vector whose conjugate transpose is the steering row
            h[i] = steer[i].conj() * C64::new(pl * los_w, 0.0)
                + nlos * C64::new(pl * nlos_w, 0.0);
        }
        h_r.push(h);
    }

    // BS -> users: Rayleigh
    let mut h_d = Vec::with_capacity(k_users);
    for pos in &user_positions {
        let d_bu = dist(&config.bs_position, pos);
        let pl = path_loss(d_bu, config.exp_bs_user, config.path_loss_ref_db)?.sqrt();
        let mut h = DVector::zeros(n);
        for j in 0..n {
            h[j] = complex_gaussian(&mut rng) * C64::new(pl, 0.0);
        }
        h_d.push(h);
    }

    // IRS -> target: deterministic steering scaled by sqrt path loss
    let target_gain = path_loss(
        config.irs_target_distance,
        config.exp_irs_target,
        config.path_loss_ref_db,
    )?
    .sqrt();
    let steer = steering_vector(
        config.target.azimuth_deg,
        config.target.elevation_deg,
        &config.array,
        target_gain,
    );
    let g_r = steer.map(|v| v.conj());

    let mut set = ChannelSet {
        g_mat,
        h_r,
        h_d,
        g_r,
        f: Vec::new(),
        f_r: DMatrix::zeros(m, n),
        geometry: config.array.clone(),
        target_gain,
        user_positions,
    };
    cascade(&mut set)?;
    Ok(set)
}

/// Fills the cascaded matrices: `F[k]` row i = conj(h_r[k][i]) * G row i,
/// `F_r` row i = conj(g_r[i]) * G row i.
pub fn cascade(set: &mut ChannelSet) -> Result<(), ChannelError> {
    let m = set.g_mat.nrows();
    let n = set.g_mat.ncols();
    if set.g_r.len() != m {
        return Err(ChannelError::Shape(format!(
            "g_r length {} != {}",
            set.g_r.len(),
            m
        )));
    }
    for h in &set.h_r {
        if h.len() != m {
            return Err(ChannelError::Shape(format!("h_r length {} != {}", h.len(), m)));
        }
    }
    set.f = set
        .h_r
        .iter()
        .map(|h| {
            let mut f = DMatrix::zeros(m, n);
            for i in 0..m {
                let c = h[i].conj();
                for j in 0..n {
                    f[(i, j)] = c * set.g_mat[(i, j)];
                }
            }
            f
        })
        .collect();
    let mut f_r = DMatrix::zeros(m, n);
    for i in 0..m {
        let c = set.g_r[i].conj();
        for j in 0..n {
            f_r[(i, j)] = c * set.g_mat[(i, j)];
        }
    }
    set.f_r = f_r;
    Ok(())
}

/// Effective downlink channels for a phase vector `v`:
/// `h[k]^H = v^H F[k] + h_d[k]^H` and `g^H = v^H F_r`.
///
/// Returned as column vectors (`h[k]`, `g`), so `h[k] = F[k]^H v + h_d[k]`.
pub fn effective_channels(
    v: &DVector<C64>,
    set: &ChannelSet,
) -> (Vec<DVector<C64>>, DVector<C64>) {
    let h: Vec<DVector<C64>> = set
        .f
        .iter()
        .zip(&set.h_d)
        .map(|(f, hd)| f.adjoint() * v + hd)
        .collect();
    let g = set.f_r.adjoint() * v;
    (h, g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(mx: usize, mz: usize) -> ArrayGeometry {
        ArrayGeometry {
            n_bs_antennas: 4,
            m_x: mx,
            m_z: mz,
            spacing_ratio: 0.5,
        }
    }

    #[test]
    fn steering_broadside_is_all_ones() {
        let v = steering_vector(0.0, 0.0, &geom(3, 4), 1.0);
        for e in v.iter() {
            assert!((e - C64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn steering_single_element() {
        let v = steering_vector(25.0, -40.0, &geom(1, 1), 0.5);
        assert_eq!(v.len(), 1);
        assert!((v[0] - C64::new(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn steering_matches_scalar_loop() {
        // independent 4-term evaluation of the planar response
        let g = geom(2, 2);
        let (theta, phi) = (-30f64.to_radians(), 40f64.to_radians());
        let v = steering_vector(-30.0, 40.0, &g, 1.0);
        let mut idx = 0;
        for ix in 0..2 {
            for iz in 0..2 {
                let arg = -2.0
                    * std::f64::consts::PI
                    * 0.5
                    * (ix as f64 * theta.sin() * phi.cos() + iz as f64 * theta.sin() * phi.sin());
                let expect = C64::from_polar(1.0, arg);
                assert!((v[idx] - expect).norm() < 1e-12);
                idx += 1;
            }
        }
    }

    #[test]
    fn steering_magnitudes_equal_alpha() {
        let v = steering_vector(-17.0, 62.0, &geom(4, 5), 0.73);
        for e in v.iter() {
            assert!((e.norm() - 0.73).abs() < 1e-14);
        }
    }

    #[test]
    fn path_loss_reference_values() {
        assert!((path_loss(1.0, 2.0, -30.0).unwrap() - 1e-3).abs() < 1e-18);
        assert!((path_loss(10.0, 2.0, -30.0).unwrap() - 1e-5).abs() < 1e-19);
        let want = 1e-3 * 20f64.powf(-3.6);
        assert!((path_loss(20.0, 3.6, -30.0).unwrap() - want).abs() < 1e-18);
        assert!(path_loss(0.5, 2.0, -30.0).is_err());
    }

    #[test]
    fn synthesize_is_deterministic() {
        let cfg = ScenarioConfig::default();
        let a = synthesize(&cfg).unwrap();
        let b = synthesize(&cfg).unwrap();
        assert_eq!(a.g_mat, b.g_mat);
        assert_eq!(a.h_d[0], b.h_d[0]);
        assert_eq!(a.g_r, b.g_r);
        assert_eq!(a.user_positions, b.user_positions);
    }

    #[test]
    fn rician_limit_reduces_to_los() {
        let mut cfg = ScenarioConfig::default();
        cfg.rician_factor_db = 300.0;
        let set = synthesize(&cfg).unwrap();
        let d_bi = dist(&cfg.bs_position, &cfg.irs_position);
        let pl = path_loss(d_bi, cfg.exp_bs_irs, cfg.path_loss_ref_db).unwrap().sqrt();
        for e in set.g_mat.iter() {
            assert!(
                (e - C64::new(pl, 0.0)).norm() <= 1e-9 * pl,
                "LoS limit violated: {e}"
            );
        }
    }

    #[test]
    fn direct_link_second_moment_matches_path_loss() {
        // Monte-Carlo moment oracle over 1e5 draws of h_d entries.
        let mut cfg = ScenarioConfig::default();
        cfg.n_users = 1;
        cfg.user_circle_radius = 0.0;
        let d_bu = dist(&cfg.bs_position, &cfg.user_center);
        let pl = path_loss(d_bu, cfg.exp_bs_user, cfg.path_loss_ref_db).unwrap();
        let mut acc = 0.0;
        let mut count = 0usize;
        let draws = 100_000 / cfg.array.n_bs_antennas + 1;
        for seed in 0..draws {
            cfg.rng_seed = seed as u64;
            let set = synthesize(&cfg).unwrap();
            for e in set.h_d[0].iter() {
                acc += e.norm_sqr();
                count += 1;
            }
        }
        let mean = acc / count as f64;
        let rel = (mean - pl).abs() / pl;
        assert!(rel < 0.02, "second moment off by {rel}");
    }

    #[test]
    fn cascade_identity_like() {
        let mut cfg = ScenarioConfig::default();
        cfg.array.m_x = 2;
        cfg.array.m_z = 2;
        cfg.array.n_bs_antennas = 4;
        let mut set = synthesize(&cfg).unwrap();
        // all-ones h_r with identity-like G -> F = G
        set.g_mat = DMatrix::identity(4, 4).map(|v| C64::new(v, 0.0));
        set.h_r[0] = DVector::repeat(4, C64::new(1.0, 0.0));
        cascade(&mut set).unwrap();
        assert_eq!(set.f[0], set.g_mat);
        // zero h_r -> zero F
        set.h_r[1] = DVector::zeros(4);
        cascade(&mut set).unwrap();
        assert!(set.f[1].iter().all(|e| e.norm() == 0.0));
    }

    #[test]
    fn cascade_matches_theta_product() {
        // v^H F_k == h_r^H Theta G for 100 random unit-modulus v.
        let mut cfg = ScenarioConfig::default();
        cfg.array.m_x = 3;
        cfg.array.m_z = 1;
        cfg.array.n_bs_antennas = 2;
        cfg.rng_seed = 5;
        let set = synthesize(&cfg).unwrap();
        let m = set.n_irs();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..100 {
            let v = DVector::from_fn(m, |_, _| {
                C64::from_polar(1.0, rng.gen::<f64>() * std::f64::consts::TAU)
            });
            let lhs = set.f[0].adjoint() * &v; // (v^H F)^H
            // h_r^H Theta G with Theta = diag of the row entries of v^H
            let mut rhs = DVector::zeros(set.n_bs());
            for j in 0..set.n_bs() {
                let mut acc = C64::new(0.0, 0.0);
                for i in 0..m {
                    acc += set.h_r[0][i].conj() * v[i].conj() * set.g_mat[(i, j)];
                }
                rhs[j] = acc.conj();
            }
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn cascade_exactness_invariant() {
        let set = synthesize(&ScenarioConfig::default()).unwrap();
        for k in 0..set.n_users() {
            for i in 0..set.n_irs() {
                for j in 0..set.n_bs() {
                    let want = set.h_r[k][i].conj() * set.g_mat[(i, j)];
                    assert_eq!(set.f[k][(i, j)], want);
                }
            }
        }
        for i in 0..set.n_irs() {
            for j in 0..set.n_bs() {
                assert_eq!(set.f_r[(i, j)], set.g_r[i].conj() * set.g_mat[(i, j)]);
            }
        }
    }

    #[test]
    fn effective_channels_zero_phase() {
        let set = synthesize(&ScenarioConfig::default()).unwrap();
        let v = DVector::zeros(set.n_irs());
        let (h, g) = effective_channels(&v, &set);
        for k in 0..set.n_users() {
            assert_eq!(h[k], set.h_d[k]);
        }
        assert!(g.norm() == 0.0);
    }

    #[test]
    fn effective_channels_match_scalar_expansion() {
        let mut cfg = ScenarioConfig::default();
        cfg.array.m_x = 2;
        cfg.array.m_z = 1;
        cfg.array.n_bs_antennas = 2;
        cfg.n_users = 1;
        let set = synthesize(&cfg).unwrap();
        let v = DVector::from_vec(vec![C64::new(0.6, 0.8), C64::new(-1.0, 0.5)]);
        let (h, g) = effective_channels(&v, &set);
        for j in 0..2 {
            let mut hj = set.h_d[0][j];
            let mut gj = C64::new(0.0, 0.0);
            for i in 0..2 {
                hj += set.f[0][(i, j)].conj() * v[i];
                gj += set.f_r[(i, j)].conj() * v[i];
            }
            assert!((h[0][j] - hj).norm() < 1e-12);
            assert!((g[j] - gj).norm() < 1e-12);
        }
    }

    #[test]
    fn common_phase_with_zero_direct_link() {
        let mut cfg = ScenarioConfig::default();
        cfg.rng_seed = 3;
        let mut set = synthesize(&cfg).unwrap();
        let m = set.n_irs();
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let v = DVector::from_fn(m, |_, _| {
            C64::from_polar(1.0, rng.gen::<f64>() * std::f64::consts::TAU)
        });
        let w = DVector::from_fn(set.n_bs(), |_, _| complex_gaussian(&mut rng));
        let rot = C64::from_polar(1.0, 0.9);
        let v_rot = v.map(|e| e * rot);

        // with direct link present, |h^H w| changes under a common phase
        let (h1, g1) = effective_channels(&v, &set);
        let (h2, g2) = effective_channels(&v_rot, &set);
        assert!((g1.adjoint() * &w)[0].norm() - (g2.adjoint() * &w)[0].norm() < 1e-12);
        assert!(((h1[0].adjoint() * &w)[0].norm() - (h2[0].adjoint() * &w)[0].norm()).abs() > 1e-6);

        // with h_d = 0 both magnitudes are invariant
        for k in 0..set.n_users() {
            set.h_d[k] = DVector::zeros(set.n_bs());
        }
        let (h1, g1) = effective_channels(&v, &set);
        let (h2, g2) = effective_channels(&v_rot, &set);
        assert!(((h1[0].adjoint() * &w)[0].norm() - (h2[0].adjoint() * &w)[0].norm()).abs() < 1e-12);
        assert!(((g1.adjoint() * &w)[0].norm() - (g2.adjoint() * &w)[0].norm()).abs() < 1e-12);
    }

    #[test]
    fn normalization_scales_cascades_consistently() {
        let cfg = ScenarioConfig::default();
        let set = synthesize(&cfg).unwrap();
        let norm = set.normalized(1e-6, 1e-6);
        for i in 0..set.n_irs() {
            for j in 0..set.n_bs() {
                let want = norm.h_r[0][i].conj() * norm.g_mat[(i, j)];
                assert_eq!(norm.f[0][(i, j)], want);
            }
        }
        // f_r scaled by 1/sigma_t
        let scale = set.f_r[(0, 0)] / norm.f_r[(0, 0)];
        assert!((scale - C64::new(1e-6, 0.0)).norm() < 1e-18);
    }

    #[test]
    fn rician_power_preserved() {
        // E[|entry|^2] of h_r should equal its path loss within 2%.
        let mut cfg = ScenarioConfig::default();
        cfg.n_users = 1;
        cfg.user_circle_radius = 0.0;
        let d_iu = dist(&cfg.irs_position, &cfg.user_center);
        let pl = path_loss(d_iu, cfg.exp_irs_user, cfg.path_loss_ref_db).unwrap();
        let mut acc = 0.0;
        let mut count = 0usize;
        for seed in 0..1500 {
            cfg.rng_seed = seed;
            let set = synthesize(&cfg).unwrap();
            for e in set.h_r[0].iter() {
                acc += e.norm_sqr();
                count += 1;
            }
        }
        let mean = acc / count as f64;
        assert!((mean - pl).abs() / pl < 0.02, "rician power {mean} vs {pl}");
    }
}
