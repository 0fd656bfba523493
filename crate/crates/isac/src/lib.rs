//! Joint transmit-beamformer and IRS phase-shift optimization for a secure
//! integrated sensing-and-communication downlink.
//!
//! One base station serves `K` single-antenna users and probes a sensing
//! target through an IRS; the target is a potential eavesdropper, so the
//! design maximizes the beampattern gain toward it subject to per-user SINR
//! floors, per-user leakage ceilings and a transmit power budget.
//!
//! * [`channel`] - scenario definition and channel synthesis.
//! * [`metrics`] - problem data model, SINR/beampattern/power metrics, audit.
//! * [`kernels`] - closed-form and small-convex block solvers.
//! * [`penalty`] - the penalty-based solver for the perfect-CSI case.
//! * [`robust`] - the LMI/SDP alternating solver for bounded CSI uncertainty.
//! * [`baselines`] - comparison schemes.

pub mod baselines;
pub mod channel;
pub mod kernels;
pub mod metrics;
pub mod penalty;
pub mod robust;

pub use channel::{
    cascade, effective_channels, path_loss, steering_vector, synthesize, ArrayGeometry,
    ChannelError, ChannelSet, ScenarioConfig, TargetRegion, C64,
};
pub use metrics::{
    audit, beampattern_at, beampattern_gain, eavesdrop_sinr, total_power, user_sinr,
    FeasibilityAudit, QosSpec, Solution,
};
