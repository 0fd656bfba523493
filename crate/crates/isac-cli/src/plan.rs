//! Experiment plans and run manifests.
//!
//! A plan is a TOML file holding the scenario, uniform QoS targets, one swept
//! parameter with its value list, the schemes to run, and the seed count.
//! The manifest written next to the results embeds the fully resolved plan so
//! a run can be reproduced from it alone.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use isac::baselines::BaselineKind;
use isac::channel::ScenarioConfig;
use isac::metrics::QosSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    PMaxDbm,
    MElements,
    SinrMinDb,
    LeakMaxDb,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sweep {
    pub parameter: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Proposed,
    Robust,
    CommOnly,
    Separate,
    CommZf,
    SensingZf,
    RandomPhase,
}

impl Scheme {
    pub fn tag(&self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Robust => "robust",
            Scheme::CommOnly => "comm_only",
            Scheme::Separate => "separate",
            Scheme::CommZf => "comm_zf",
            Scheme::SensingZf => "sensing_zf",
            Scheme::RandomPhase => "random_phase",
        }
    }

    pub fn baseline(&self) -> Option<BaselineKind> {
        match self {
            Scheme::CommOnly => Some(BaselineKind::CommOnly),
            Scheme::Separate => Some(BaselineKind::Separate),
            Scheme::CommZf => Some(BaselineKind::CommZf),
            Scheme::SensingZf => Some(BaselineKind::SensingZf),
            Scheme::RandomPhase => Some(BaselineKind::RandomPhase),
            _ => None,
        }
    }
}

/// Uniform per-user QoS targets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QosPlan {
    pub sinr_min_db: f64,
    pub leak_max_db: f64,
    pub p_max_dbm: f64,
}

impl QosPlan {
    pub fn to_spec(&self, k: usize) -> QosSpec {
        QosSpec::uniform(k, self.sinr_min_db, self.leak_max_db, self.p_max_dbm)
    }
}

fn default_grid() -> usize {
    5
}

fn default_eps_error() -> f64 {
    0.01
}

/// Robust-scheme settings: relative CSI error level and angle-grid density.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UncertaintyPlan {
    #[serde(default = "default_eps_error")]
    pub eps_error: f64,
    #[serde(default = "default_grid")]
    pub grid_az: usize,
    #[serde(default = "default_grid")]
    pub grid_el: usize,
}

impl Default for UncertaintyPlan {
    fn default() -> Self {
        Self {
            eps_error: default_eps_error(),
            grid_az: default_grid(),
            grid_el: default_grid(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub scenario: ScenarioConfig,
    pub qos: QosPlan,
    pub sweep: Sweep,
    pub schemes: Vec<Scheme>,
    pub n_seeds: u64,
    pub outputs: PathBuf,
    #[serde(default)]
    pub uncertainty: UncertaintyPlan,
    /// Write wall_time_s columns as zero for byte-reproducible outputs.
    #[serde(default)]
    pub zero_timing: bool,
    /// Also write one solution file per run.
    #[serde(default)]
    pub save_solutions: bool,
}

impl ExperimentPlan {
    /// Reference perfect-CSI operating point: N=4, K=3, M=100,
    /// P_max=40 dBm, SINR floor 10 dB, leakage cap 0 dB.
    pub fn default_perfect() -> Self {
        let scenario = ScenarioConfig::default();
        Self {
            scenario,
            qos: QosPlan {
                sinr_min_db: 10.0,
                leak_max_db: 0.0,
                p_max_dbm: 40.0,
            },
            sweep: Sweep {
                parameter: SweepParam::PMaxDbm,
                values: vec![30.0, 35.0, 40.0],
            },
            schemes: vec![Scheme::Proposed, Scheme::CommOnly, Scheme::RandomPhase],
            n_seeds: 10,
            outputs: PathBuf::from("results"),
            uncertainty: UncertaintyPlan::default(),
            zero_timing: false,
            save_solutions: false,
        }
    }

    /// Reference bounded-uncertainty operating point: M=20, N=3, K=2,
    /// P_max=46 dBm, leakage cap 5 dB.
    pub fn default_robust() -> Self {
        let mut scenario = ScenarioConfig::default();
        scenario.array.m_x = 4;
        scenario.array.m_z = 5;
        scenario.array.n_bs_antennas = 3;
        scenario.n_users = 2;
        Self {
            scenario,
            qos: QosPlan {
                sinr_min_db: 10.0,
                leak_max_db: 5.0,
                p_max_dbm: 46.0,
            },
            sweep: Sweep {
                parameter: SweepParam::PMaxDbm,
                values: vec![46.0],
            },
            schemes: vec![Scheme::Robust],
            n_seeds: 1,
            outputs: PathBuf::from("results"),
            uncertainty: UncertaintyPlan::default(),
            zero_timing: false,
            save_solutions: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario
            .validate()
            .map_err(|e| anyhow::anyhow!("scenario: {e}"))?;
        if self.n_seeds == 0 {
            bail!("n_seeds must be >= 1");
        }
        if self.sweep.values.is_empty() {
            bail!("sweep needs at least one value");
        }
        if !self.sweep.values.windows(2).all(|w| w[0] < w[1]) {
            bail!("sweep values must be strictly increasing");
        }
        if self.schemes.is_empty() {
            bail!("at least one scheme required");
        }
        if self.sweep.parameter == SweepParam::MElements {
            for v in &self.sweep.values {
                if *v < 1.0 || v.fract() != 0.0 {
                    bail!("m_elements sweep values must be positive integers");
                }
            }
        }
        Ok(())
    }

    /// Applies one sweep value, returning the resolved scenario and QoS plan.
    pub fn resolve(&self, value: f64) -> (ScenarioConfig, QosPlan) {
        let mut scenario = self.scenario.clone();
        let mut qos = self.qos.clone();
        match self.sweep.parameter {
            SweepParam::PMaxDbm => qos.p_max_dbm = value,
            SweepParam::SinrMinDb => qos.sinr_min_db = value,
            SweepParam::LeakMaxDb => qos.leak_max_db = value,
            SweepParam::MElements => {
                let m = value as usize;
                let (mx, mz) = factor_elements(m);
                scenario.array.m_x = mx;
                scenario.array.m_z = mz;
            }
        }
        (scenario, qos)
    }
}

/// Splits an element count into the most-square planar grid.
pub fn factor_elements(m: usize) -> (usize, usize) {
    let mut best = (1, m);
    let mut d = 1;
    while d * d <= m {
        if m % d == 0 {
            best = (d, m / d);
        }
        d += 1;
    }
    best
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub plan: ExperimentPlan,
}

pub fn version_string() -> String {
    format!(
        "isac-cli {} ({})",
        env!("CARGO_PKG_VERSION"),
        option_env!("ISAC_GIT_DESCRIBE").unwrap_or("untagged")
    )
}

pub fn load_plan(path: &std::path::Path) -> Result<ExperimentPlan> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading plan {}", path.display()))?;
    let plan: ExperimentPlan = toml::from_str(&text).context("parsing plan TOML")?;
    plan.validate()?;
    Ok(plan)
}

pub fn load_manifest(path: &std::path::Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading manifest {}", path.display()))?;
    let manifest: Manifest = serde_json::from_str(&text).context("parsing manifest JSON")?;
    manifest.plan.validate()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factoring_is_most_square() {
        assert_eq!(factor_elements(16), (4, 4));
        assert_eq!(factor_elements(32), (4, 8));
        assert_eq!(factor_elements(64), (8, 8));
        assert_eq!(factor_elements(50), (5, 10));
        assert_eq!(factor_elements(100), (10, 10));
        assert_eq!(factor_elements(20), (4, 5));
        assert_eq!(factor_elements(7), (1, 7));
    }

    #[test]
    fn plan_round_trips_through_toml() {
        let plan = ExperimentPlan::default_perfect();
        let text = toml::to_string_pretty(&plan).unwrap();
        let back: ExperimentPlan = toml::from_str(&text).unwrap();
        assert_eq!(back.n_seeds, plan.n_seeds);
        assert_eq!(back.schemes, plan.schemes);
        assert_eq!(back.scenario, plan.scenario);
    }

    #[test]
    fn validation_rejects_bad_sweeps() {
        let mut plan = ExperimentPlan::default_perfect();
        plan.sweep.values = vec![40.0, 35.0];
        assert!(plan.validate().is_err());
        plan.sweep.values = vec![];
        assert!(plan.validate().is_err());
        plan.sweep.values = vec![30.0];
        plan.n_seeds = 0;
        assert!(plan.validate().is_err());
    }
}
