//! Data-driven dynamic event-triggered control.
//!
//! From sampled input/state data of an unknown, disturbed linear plant this
//! crate designs a state-feedback gain and the parameters of a dynamic
//! event-triggering mechanism by solving two small LMIs, evaluates the
//! closed-form stability and inter-event-time certificates, and checks them
//! against closed-loop simulation (optionally with uniform or logarithmic
//! state quantization).
//!
//! Module map:
//! - [`system`]: ground-truth plant, disturbances, RK4.
//! - [`data`]: excitation experiment and data matrices.
//! - [`lmi`]: dense LMI feasibility solver.
//! - [`synthesis`]: gain and trigger design plus certificates.
//! - [`etm`]: triggering function, resets and quantizers.
//! - [`sim`]: closed-loop simulation and trace analysis.

pub mod data;
pub mod error;
pub mod etm;
pub mod format;
pub mod linalg;
pub mod lmi;
pub mod sim;
pub mod synthesis;
pub mod system;

pub use data::{
    bound_delta, build_matrices, check_rank, run_experiment, DataMatrices, ExperimentConfig, RawSamples, X1Mode,
};
pub use error::{Error, LmiStage, Result};
pub use etm::{quantize, quantize_log, quantize_uniform, EtmConfig, EtmState, QuantMode, TriggerWeights};
pub use linalg::spectral_abscissa;
pub use lmi::{is_negative_semidefinite, AffineLmi, FeasibilityResult, LmiProblem, Objective, Status};
pub use sim::{analyze_trace, fit_exponential, run_closed_loop, AnalysisReport, Scenario, SimFailure, SimulationTrace};
pub use synthesis::{certificates, miet_bound, synthesize, Certificates, DesignOptions, SynthesisResult};
pub use system::{Disturbance, DisturbanceKind, DisturbanceSpec, LinearSystem, Signal};

/// Crate version embedded in every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
