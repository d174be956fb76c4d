//! Shared fixtures for the benchmarks.

use detec_core::{
    bound_delta, build_matrices, run_experiment, DataMatrices, DesignOptions, DisturbanceSpec, EtmConfig,
    ExperimentConfig, LinearSystem, QuantMode, Scenario, SynthesisResult, X1Mode,
};
use nalgebra::DVector;

/// Aircraft data at `d̄ = 0.1` with `Δ = √τ·d̄·I`.
pub fn reference_data(seed: u64) -> DataMatrices {
    let raw = run_experiment(&LinearSystem::aircraft(), &ExperimentConfig::reference(0.1, seed)).unwrap();
    build_matrices(&raw, X1Mode::Exact)
        .unwrap()
        .with_delta(bound_delta(0.1, 10, 3).unwrap())
        .unwrap()
}

pub fn reference_options() -> DesignOptions {
    DesignOptions::with_omega_scale(3, 7.0)
}

/// Five-second disturbed run of the given design from `10·(1, −1, 1)`.
pub fn reference_scenario(synth: &SynthesisResult) -> Scenario {
    Scenario {
        sys: LinearSystem::aircraft(),
        synth: synth.clone(),
        etm: EtmConfig {
            f_bar: 100.0,
            alpha: synth.alpha,
            beta: synth.beta,
            mode: QuantMode::Plain,
            theta: 0.0,
        },
        x0: DVector::from_column_slice(&[10.0, -10.0, 10.0]),
        horizon: 5.0,
        h_sim: 1e-3,
        disturbance: DisturbanceSpec::piecewise_random(0.1, 0xd157),
        tol_event: 1e-9,
    }
}
