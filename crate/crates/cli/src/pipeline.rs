//! In-process pipeline shared by the commands and the sweep.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use detec_core::format::{inf_as_null, matrix_rows};
use detec_core::synthesis::{ground_truth_checks, DesignObjective, TriggerObjective};
use detec_core::{
    analyze_trace, build_matrices, check_rank, run_closed_loop, run_experiment, spectral_abscissa, AnalysisReport,
    Certificates, DataMatrices, DisturbanceKind, EtmConfig, LinearSystem, QuantMode, RawSamples, Scenario,
    SimulationTrace, SynthesisResult, VERSION,
};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Provenance stamped into every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Meta {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            tool: "detec".into(),
            version: VERSION.into(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
        }
    }

    /// Comment block for CSV outputs.
    pub fn comment(&self) -> String {
        format!("{} {} config_sha256={} seed={}", self.tool, self.version, self.config_hash, self.seed)
    }
}

/// `synthesis.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisFile {
    pub meta: Meta,
    pub d_bar: f64,
    pub synthesis: SynthesisResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub design: f64,
    pub x0y: f64,
    pub trigger: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IssFit {
    pub c1: f64,
    #[serde(with = "inf_as_null")]
    pub c2: f64,
}

/// Seeds, tolerances and design choices behind a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub experiment_seed: u64,
    pub experiment_disturbance_seed: u64,
    pub scenario_disturbance_seed: u64,
    pub disturbance: DisturbanceKind,
    pub disturbance_hold: f64,
    pub horizon: f64,
    pub h_sim: f64,
    pub tol_event: f64,
    pub x0: Vec<f64>,
    pub design_objective: DesignObjective,
    pub trigger_objective: TriggerObjective,
    pub gamma_reoptimized: bool,
}

/// `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryReport {
    pub meta: Meta,
    pub d_bar: f64,
    pub mode: QuantMode,
    pub theta: f64,
    pub f_bar: f64,
    pub margins: Margins,
    #[serde(with = "matrix_rows")]
    pub k: DMatrix<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub gamma: f64,
    pub certificates: Certificates,
    /// Largest real part of eig(A+BK) for the configured plant.
    pub spectral_abscissa: f64,
    pub event_count: usize,
    #[serde(with = "inf_as_null")]
    pub miet_observed: f64,
    pub miet_bound: f64,
    pub e_sup: f64,
    pub iss_fit: IssFit,
    pub lyapunov_violation: f64,
    pub max_v: f64,
    #[serde(with = "inf_as_null")]
    pub final_norm_ratio: f64,
    pub final_residual: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub metadata: RunMetadata,
    pub warnings: Vec<String>,
}

/// Runs the excitation experiment on the configured plant.
pub fn collect(cfg: &RunConfig) -> CliResult<(LinearSystem, RawSamples)> {
    let sys = cfg.plant.system()?;
    let raw = run_experiment(&sys, &cfg.experiment_config())?;
    Ok((sys, raw))
}

/// Data matrices with Δ attached. Fails when `[U0; X0]` lacks full row rank.
pub fn data_matrices(cfg: &RunConfig, raw: &RawSamples) -> CliResult<DataMatrices> {
    let dm = build_matrices(raw, cfg.experiment.x1)?;
    let delta = cfg.delta_matrix(dm.tau(), dm.n())?;
    let dm = dm.with_delta(delta)?;
    if !check_rank(&dm) {
        return Err(detec_core::Error::RankDeficient {
            rank: detec_core::data::stacked_rank(&dm),
            required: dm.n() + dm.m(),
        }
        .into());
    }
    Ok(dm)
}

pub fn synthesize(cfg: &RunConfig, dm: &DataMatrices) -> CliResult<SynthesisResult> {
    let opts = cfg.design_options(dm.n())?;
    Ok(detec_core::synthesize(dm, &opts)?)
}

pub fn scenario(cfg: &RunConfig, sys: &LinearSystem, synth: &SynthesisResult) -> Scenario {
    let s = &cfg.scenario;
    Scenario {
        sys: sys.clone(),
        synth: synth.clone(),
        etm: EtmConfig {
            f_bar: s.f_bar,
            alpha: synth.alpha,
            beta: synth.beta,
            mode: s.mode,
            theta: s.theta,
        },
        x0: cfg.x0(sys.n()),
        horizon: s.horizon,
        h_sim: s.h_sim,
        disturbance: cfg.scenario_disturbance(),
        tol_event: s.tol_event,
    }
}

/// Result of a closed-loop run. `failure` is set when the simulator aborted;
/// the trace then holds everything recorded before the abort.
pub struct SimOutcome {
    pub trace: SimulationTrace,
    pub report: Option<AnalysisReport>,
    pub warnings: Vec<String>,
    pub failure: Option<String>,
}

pub fn simulate(cfg: &RunConfig, sys: &LinearSystem, synth: &SynthesisResult) -> CliResult<SimOutcome> {
    synth.validate()?;
    if synth.n != sys.n() || synth.m != sys.m() {
        return Err(CliError::Config(format!(
            "synthesis is for n={}, m={} but the plant has n={}, m={}",
            synth.n,
            synth.m,
            sys.n(),
            sys.m()
        )));
    }
    let sc = scenario(cfg, sys, synth);
    sc.validate()?;
    let mut warnings = Vec::new();
    let theta_max = synth.certificates.theta_max;
    if sc.etm.mode == QuantMode::Logarithmic && sc.etm.theta > theta_max {
        let w = format!("θ = {} exceeds the certified θ_max = {theta_max:e}; running anyway", sc.etm.theta);
        log::warn!("{w}");
        warnings.push(w);
    }
    match run_closed_loop(&sc) {
        Ok(trace) => {
            let report = analyze_trace(&trace, synth, &synth.certificates)?;
            Ok(SimOutcome {
                trace,
                report: Some(report),
                warnings,
                failure: None,
            })
        }
        Err(f) => Ok(SimOutcome {
            failure: Some(f.to_string()),
            trace: *f.trace,
            report: None,
            warnings,
        }),
    }
}

pub fn summary(
    cfg: &RunConfig,
    sys: &LinearSystem,
    synth: &SynthesisResult,
    r: &AnalysisReport,
    warnings: Vec<String>,
) -> CliResult<SummaryReport> {
    let acl = sys.closed_loop(&synth.k)?;
    let exp = cfg.experiment_config();
    let dist = cfg.scenario_disturbance();
    Ok(SummaryReport {
        meta: Meta::new(cfg),
        d_bar: cfg.d_bar,
        mode: cfg.scenario.mode,
        theta: cfg.scenario.theta,
        f_bar: cfg.scenario.f_bar,
        margins: Margins {
            design: synth.design_margin,
            x0y: synth.x0y_margin,
            trigger: synth.trigger_margin,
        },
        k: synth.k.clone(),
        alpha: synth.alpha,
        beta: synth.beta,
        delta: synth.delta,
        gamma: synth.gamma,
        certificates: synth.certificates,
        spectral_abscissa: spectral_abscissa(&acl)?,
        event_count: r.event_count,
        miet_observed: r.miet_observed,
        miet_bound: r.miet_bound,
        e_sup: r.e_sup,
        iss_fit: IssFit {
            c1: r.iss_c1,
            c2: r.iss_c2,
        },
        lyapunov_violation: r.lyapunov_violation,
        max_v: r.max_v,
        final_norm_ratio: r.final_norm_ratio,
        final_residual: r.final_residual,
        f_min: r.f_min,
        f_max: r.f_max,
        metadata: RunMetadata {
            experiment_seed: exp.seed,
            experiment_disturbance_seed: exp.disturbance.seed,
            scenario_disturbance_seed: dist.seed,
            disturbance: dist.kind,
            disturbance_hold: dist.hold,
            horizon: cfg.scenario.horizon,
            h_sim: cfg.scenario.h_sim,
            tol_event: cfg.scenario.tol_event,
            x0: cfg.x0(sys.n()).iter().copied().collect(),
            design_objective: synth.design_objective,
            trigger_objective: synth.trigger_objective,
            gamma_reoptimized: synth.gamma_reoptimized,
        },
        warnings,
    })
}

/// Checks that need the realized disturbance samples, available only when
/// the data came straight from the simulator.
pub fn ground_truth(
    sys: &LinearSystem,
    dm: &DataMatrices,
    synth: &SynthesisResult,
) -> CliResult<Option<detec_core::synthesis::GroundTruthChecks>> {
    match &dm.d0 {
        Some(d0) => Ok(Some(ground_truth_checks(sys.a(), sys.b(), d0, synth)?)),
        None => Ok(None),
    }
}
