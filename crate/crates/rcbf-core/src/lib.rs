//! Safe-control library built around robustified control barrier function
//! filters: plain and robust constraint builders, input-to-state-safety and
//! measurement-robust variants, closed-loop simulation under state-estimate
//! and actuation uncertainty, grid certification of validity conditions, and
//! the experiment harness behind the `rcbf` CLI.
//!
//! The data-parallel pieces (sweeps, sampled estimates, grid certification)
//! run on rayon via the default `parallel` feature; build with
//! `--no-default-features` for a fully sequential library.

pub mod barrier;
pub mod classk;
pub mod config;
pub mod error;
pub mod exec;
pub mod filter;
pub mod metrics;
pub mod output;
pub mod robustness;
pub mod sim;
pub mod sweep;
pub mod system;
pub mod systems;
pub mod uncertainty;

pub use barrier::{grid_box, linspace, validate_barrier, Barrier, BarrierReport};
pub use classk::{ClassKappa, CustomInverse};
pub use error::{Error, Result};
pub use filter::{
    apply_filter, cbf_filter, certify_mrcbf, certify_rcbf, estimate_lipschitz, halfspace_qp,
    issf_filter, mrcbf_filter, rcbf_filter, tunable_rcbf_filter, BoxRegion, FilterKind,
    FilterResult, MrcbfCertReport, MrcbfParams, RcbfCertReport,
};
pub use output::{emit_svg_plot, read_csv, write_csv, Series};
pub use metrics::{
    compute_metrics, estimate_sigma_beta, predicted_inflation_actuation,
    predicted_inflation_measurement, thresholds, Metrics, Thresholds,
};
pub use robustness::{rho_epsilon, rho_eval, zeta, RobustnessFunction};
pub use sim::{
    nominal_linear, nominal_zero, rk4_step, simulate, Controller, Outcome, SimConfig, Trajectory,
};
pub use system::{lie_derivatives, ControlAffineSystem, Input, State};
pub use systems::{default_segway_gain, scalar_example, segway, SegwayParams};
pub use uncertainty::{corrupt_estimate, sample_disturbance, DisturbanceModel, EstimateModel};
