//! Run configuration (TOML). Every section and key is optional except where
//! noted; unknown keys are rejected.
//!
//! ```toml
//! seed = 0              # drives every random draw in the run
//! output_dir = "out"
//! d_bar = 0.1           # disturbance bound: experiment, Δ and closed loop
//!
//! [plant]
//! preset = "aircraft_vi"          # or a = [[...]] and b = [[...]]
//!
//! [experiment]
//! sampling_period = 0.1
//! samples = 10
//! input_range = [-1.0, 1.0]
//! x0_range = [-10.0, 10.0]
//! substeps = 100
//! disturbance = "piecewise_random"
//! x1 = "exact"                    # or "euler"
//!
//! [design]
//! omega = 7.0                     # Ω = ω·I, or omega_matrix = [[...]]
//! alpha_min = 1e-6
//! bound = 1e6
//! gamma_range = [1e4, 1e6]
//! delta_range = [1e-3, 1e6]
//! objective = "max_decay"         # max_decay | min_gamma | max_margin
//! trigger_objective = "min_beta"  # min_beta | max_margin
//! reoptimize_gamma = false
//! gain_bound = 3.0                # ≤ 0 disables the ‖K‖ cap
//! # delta_scale = 1e6             # Δ = delta_scale·I instead of √τ·d̄·I
//!
//! [scenario]
//! x0 = [10.0, -10.0, 10.0]
//! horizon = 5.0
//! h_sim = 1e-3
//! tol_event = 1e-9
//! f_bar = 100.0
//! mode = "plain"                  # plain | uniform | logarithmic
//! theta = 0.0
//! disturbance = "piecewise_random"
//! hold = 0.01
//! frequency = 1.0
//!
//! [sweep]                         # grid = Cartesian product, d_bar slowest
//! d_bar = [0.1, 0.2, 0.3]
//! theta = []
//! f_bar = []
//! ```

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use detec_core::data::X1Mode;
use detec_core::synthesis::{DesignObjective, TriggerObjective, DEFAULT_GAIN_BOUND, DEFAULT_GAMMA_FLOOR};
use detec_core::system::{DEFAULT_DISTURBANCE_HOLD, DEFAULT_H_SIM};
use detec_core::{
    bound_delta, DesignOptions, DisturbanceKind, DisturbanceSpec, ExperimentConfig, LinearSystem, QuantMode,
};

use crate::error::{CliError, CliResult};

/// Offsets that derive independent stream seeds from the run seed.
const EXPERIMENT_DISTURBANCE_SALT: u64 = 0x5eed;
const SCENARIO_DISTURBANCE_SALT: u64 = 0xd157;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub d_bar: f64,
    pub plant: PlantConfig,
    pub experiment: ExperimentSection,
    pub design: DesignSection,
    pub scenario: ScenarioSection,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            d_bar: 0.1,
            plant: PlantConfig::default(),
            experiment: ExperimentSection::default(),
            design: DesignSection::default(),
            scenario: ScenarioSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            preset: Some("aircraft_vi".into()),
            a: None,
            b: None,
        }
    }
}

impl PlantConfig {
    pub fn system(&self) -> CliResult<LinearSystem> {
        match (&self.preset, &self.a, &self.b) {
            (Some(name), None, None) => match name.as_str() {
                "aircraft_vi" => Ok(LinearSystem::aircraft()),
                other => Err(CliError::Config(format!("unknown plant preset `{other}`"))),
            },
            (None, Some(a), Some(b)) => {
                let a = matrix(a, "plant.a")?;
                let b = matrix(b, "plant.b")?;
                Ok(LinearSystem::new(a, b)?)
            }
            _ => Err(CliError::Config(
                "plant needs exactly one source: `preset`, or both `a` and `b`".into(),
            )),
        }
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> CliResult<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(CliError::Config(format!("{what} is empty")));
    }
    detec_core::format::matrix_rows::from_rows(rows).map_err(|e| CliError::Config(format!("{what}: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub sampling_period: f64,
    pub samples: usize,
    pub input_range: [f64; 2],
    pub x0_range: [f64; 2],
    pub substeps: usize,
    pub disturbance: DisturbanceKind,
    pub x1: X1Mode,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let r = ExperimentConfig::reference(0.0, 0);
        Self {
            sampling_period: r.sampling_period,
            samples: r.samples,
            input_range: r.input_range,
            x0_range: r.x0_range,
            substeps: r.substeps,
            disturbance: DisturbanceKind::PiecewiseRandom,
            x1: X1Mode::Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignSection {
    pub omega: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_matrix: Option<Vec<Vec<f64>>>,
    pub alpha_min: f64,
    pub bound: f64,
    pub gamma_range: [f64; 2],
    pub delta_range: [f64; 2],
    pub objective: DesignObjective,
    pub trigger_objective: TriggerObjective,
    pub reoptimize_gamma: bool,
    pub gain_bound: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_scale: Option<f64>,
}

impl Default for DesignSection {
    fn default() -> Self {
        let d = DesignOptions::with_omega_scale(1, 7.0);
        Self {
            omega: 7.0,
            omega_matrix: None,
            alpha_min: d.alpha_min,
            bound: d.bound,
            gamma_range: [DEFAULT_GAMMA_FLOOR, d.gamma_range.1],
            delta_range: [d.delta_range.0, d.delta_range.1],
            objective: d.design_objective,
            trigger_objective: d.trigger_objective,
            reoptimize_gamma: d.reoptimize_gamma,
            gain_bound: DEFAULT_GAIN_BOUND,
            delta_scale: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    pub horizon: f64,
    pub h_sim: f64,
    pub tol_event: f64,
    pub f_bar: f64,
    pub mode: QuantMode,
    pub theta: f64,
    pub disturbance: DisturbanceKind,
    pub hold: f64,
    pub frequency: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            x0: None,
            horizon: 5.0,
            h_sim: DEFAULT_H_SIM,
            tol_event: 1e-9,
            f_bar: 100.0,
            mode: QuantMode::Plain,
            theta: 0.0,
            disturbance: DisturbanceKind::PiecewiseRandom,
            hold: DEFAULT_DISTURBANCE_HOLD,
            frequency: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub d_bar: Vec<f64>,
    pub theta: Vec<f64>,
    pub f_bar: Vec<f64>,
}

/// One grid point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub index: usize,
    pub d_bar: f64,
    pub theta: f64,
    pub f_bar: f64,
}

/// Default initial state `10·(1, −1, 1, …)`.
pub fn default_x0(n: usize) -> DVector<f64> {
    DVector::from_fn(n, |i, _| if i % 2 == 0 { 10.0 } else { -10.0 })
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> CliResult<()> {
        let sys = self.plant.system()?;
        if !(self.d_bar >= 0.0 && self.d_bar.is_finite()) {
            return Err(CliError::Config("d_bar must be finite and ≥ 0".into()));
        }
        if let Some(x0) = &self.scenario.x0 {
            if x0.len() != sys.n() {
                return Err(CliError::Config(format!(
                    "scenario.x0 has {} entries, the plant has {} states",
                    x0.len(),
                    sys.n()
                )));
            }
        }
        self.experiment_config().validate()?;
        self.design_options(sys.n())?.validate(sys.n())?;
        Ok(())
    }

    /// Canonical JSON of the resolved configuration.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of [`Self::canonical`], hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn experiment_config(&self) -> ExperimentConfig {
        let e = &self.experiment;
        ExperimentConfig {
            sampling_period: e.sampling_period,
            samples: e.samples,
            input_range: e.input_range,
            x0_range: e.x0_range,
            seed: self.seed,
            disturbance: disturbance(
                e.disturbance,
                self.d_bar,
                self.seed.wrapping_add(EXPERIMENT_DISTURBANCE_SALT),
                DEFAULT_DISTURBANCE_HOLD,
                1.0,
            ),
            substeps: e.substeps,
        }
    }

    pub fn design_options(&self, n: usize) -> CliResult<DesignOptions> {
        let d = &self.design;
        let mut opts = DesignOptions::with_omega_scale(n, d.omega);
        if let Some(rows) = &d.omega_matrix {
            opts.omega = matrix(rows, "design.omega_matrix")?;
        }
        opts.alpha_min = d.alpha_min;
        opts.bound = d.bound;
        opts.gamma_range = (d.gamma_range[0], d.gamma_range[1]);
        opts.delta_range = (d.delta_range[0], d.delta_range[1]);
        opts.design_objective = d.objective;
        opts.trigger_objective = d.trigger_objective;
        opts.reoptimize_gamma = d.reoptimize_gamma;
        opts.gain_bound = (d.gain_bound > 0.0).then_some(d.gain_bound);
        Ok(opts)
    }

    /// Uncertainty bound Δ for `tau` samples of an `n`-state plant.
    pub fn delta_matrix(&self, tau: usize, n: usize) -> CliResult<DMatrix<f64>> {
        match self.design.delta_scale {
            Some(s) if s.is_finite() && s >= 0.0 => Ok(DMatrix::identity(n, n) * s),
            Some(_) => Err(CliError::Config("design.delta_scale must be finite and ≥ 0".into())),
            None => Ok(bound_delta(self.d_bar, tau, n)?),
        }
    }

    pub fn scenario_disturbance(&self) -> DisturbanceSpec {
        let s = &self.scenario;
        disturbance(
            s.disturbance,
            self.d_bar,
            self.seed.wrapping_add(SCENARIO_DISTURBANCE_SALT),
            s.hold,
            s.frequency,
        )
    }

    pub fn x0(&self, n: usize) -> DVector<f64> {
        match &self.scenario.x0 {
            Some(v) => DVector::from_column_slice(v),
            None => default_x0(n),
        }
    }

    /// Grid points in index order; empty axes fall back to the base value.
    pub fn grid(&self) -> CliResult<Vec<GridPoint>> {
        let s = &self.sweep;
        if s.d_bar.is_empty() && s.theta.is_empty() && s.f_bar.is_empty() {
            return Err(CliError::Config("sweep grid is empty: set at least one of sweep.d_bar, sweep.theta, sweep.f_bar".into()));
        }
        let axis = |v: &[f64], base: f64| if v.is_empty() { vec![base] } else { v.to_vec() };
        let mut out = Vec::new();
        for &d_bar in &axis(&s.d_bar, self.d_bar) {
            for &theta in &axis(&s.theta, self.scenario.theta) {
                for &f_bar in &axis(&s.f_bar, self.scenario.f_bar) {
                    out.push(GridPoint {
                        index: out.len(),
                        d_bar,
                        theta,
                        f_bar,
                    });
                }
            }
        }
        Ok(out)
    }

    /// The configuration of one grid point.
    pub fn at(&self, p: &GridPoint) -> RunConfig {
        let mut c = self.clone();
        c.d_bar = p.d_bar;
        c.scenario.theta = p.theta;
        c.scenario.f_bar = p.f_bar;
        c.sweep = SweepSection::default();
        c
    }
}

fn disturbance(kind: DisturbanceKind, d_bar: f64, seed: u64, hold: f64, frequency: f64) -> DisturbanceSpec {
    DisturbanceSpec {
        kind,
        d_bar: if kind == DisturbanceKind::Zero { 0.0 } else { d_bar },
        seed,
        hold,
        frequency,
    }
}
