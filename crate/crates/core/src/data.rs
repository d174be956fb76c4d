//! Off-line data collection and the data matrices X0, X1, U0 (and D0 when the
//! simulator knows it).
//!
//! Column `i` of every matrix belongs to sample instant `t_i`. Samples are
//! usually periodic (`t_i = i·ς`) but explicit times are kept so aperiodic
//! data sets load the same way.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, invalid, Error, Result};
use crate::format::fmt17;
use crate::linalg::{lambda_max, numerical_rank};
use crate::system::{DisturbanceSpec, LinearSystem};

/// Singular-value cutoff (relative to σ_max) used by [`check_rank`].
pub const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Sampling period ς (s).
    pub sampling_period: f64,
    /// Number of samples τ.
    pub samples: usize,
    pub input_range: [f64; 2],
    pub x0_range: [f64; 2],
    pub seed: u64,
    pub disturbance: DisturbanceSpec,
    /// Integrator sub-steps per sampling interval.
    pub substeps: usize,
}

impl ExperimentConfig {
    /// The reference protocol: ς = 0.1 s, τ = 10, u ∈ [−1, 1], x0 ∈ [−10, 10].
    pub fn reference(d_bar: f64, seed: u64) -> Self {
        Self {
            sampling_period: 0.1,
            samples: 10,
            input_range: [-1.0, 1.0],
            x0_range: [-10.0, 10.0],
            seed,
            disturbance: DisturbanceSpec::piecewise_random(d_bar, seed.wrapping_add(0x5eed)),
            substeps: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sampling_period > 0.0 && self.sampling_period.is_finite()) {
            return Err(invalid("sampling period must be positive"));
        }
        if self.samples == 0 {
            return Err(invalid("at least one sample is required"));
        }
        if self.substeps == 0 {
            return Err(invalid("substeps must be ≥ 1"));
        }
        for (name, r) in [("input_range", self.input_range), ("x0_range", self.x0_range)] {
            if !(r[0] <= r[1] && r[0].is_finite() && r[1].is_finite()) {
                return Err(invalid(format!("{name} must be an ordered finite interval")));
            }
        }
        self.disturbance.validate()
    }
}

/// Raw experiment output, one entry per sample instant.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSamples {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Measured derivatives; absent for data sets that only carry states.
    pub derivatives: Option<Vec<DVector<f64>>>,
    pub inputs: Vec<DVector<f64>>,
    /// Realized disturbance at each sample; only the simulator knows it.
    pub disturbances: Option<Vec<DVector<f64>>>,
}

impl RawSamples {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n(&self) -> usize {
        self.states.first().map_or(0, |x| x.len())
    }

    pub fn m(&self) -> usize {
        self.inputs.first().map_or(0, |u| u.len())
    }
}

/// Runs the excitation experiment: random initial state, random input held
/// over each sampling interval, RK4 sub-steps in between.
pub fn run_experiment(sys: &LinearSystem, cfg: &ExperimentConfig) -> Result<RawSamples> {
    cfg.validate()?;
    let (n, m) = (sys.n(), sys.m());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let [xlo, xhi] = cfg.x0_range;
    let [ulo, uhi] = cfg.input_range;
    let mut draw = |lo: f64, hi: f64| if lo == hi { lo } else { rng.random_range(lo..=hi) };

    let mut x = DVector::from_fn(n, |_, _| draw(xlo, xhi));
    let inputs: Vec<DVector<f64>> = (0..cfg.samples).map(|_| DVector::from_fn(m, |_, _| draw(ulo, uhi))).collect();
    let d = cfg.disturbance.signal(n)?;
    let h = cfg.sampling_period / cfg.substeps as f64;

    let mut out = RawSamples {
        times: Vec::with_capacity(cfg.samples),
        states: Vec::with_capacity(cfg.samples),
        derivatives: Some(Vec::with_capacity(cfg.samples)),
        inputs: Vec::with_capacity(cfg.samples),
        disturbances: Some(Vec::with_capacity(cfg.samples)),
    };
    for (i, u) in inputs.into_iter().enumerate() {
        let t = i as f64 * cfg.sampling_period;
        let di = crate::system::Signal::eval(&d, t);
        let dx = sys.derivative(&x, &u, &di)?;
        out.times.push(t);
        out.states.push(x.clone());
        out.derivatives.as_mut().unwrap().push(dx);
        out.disturbances.as_mut().unwrap().push(di);
        if i + 1 < cfg.samples {
            for j in 0..cfg.substeps {
                x = sys.rk4_step(&x, &u, &d, t + j as f64 * h, h)?;
            }
        }
        out.inputs.push(u);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum X1Mode {
    /// X1 holds the measured derivatives.
    Exact,
    /// X1 holds forward differences of consecutive states.
    Euler,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrices {
    pub x0: DMatrix<f64>,
    pub x1: DMatrix<f64>,
    pub u0: DMatrix<f64>,
    pub d0: Option<DMatrix<f64>>,
    /// Disturbance-energy bound Δ with D0·D0ᵀ ⪯ Δ·Δᵀ.
    pub delta: DMatrix<f64>,
    pub times: Vec<f64>,
    pub x1_mode: X1Mode,
}

impl DataMatrices {
    pub fn n(&self) -> usize {
        self.x0.nrows()
    }

    pub fn m(&self) -> usize {
        self.u0.nrows()
    }

    pub fn tau(&self) -> usize {
        self.x0.ncols()
    }

    /// Mean sampling period ς.
    pub fn sampling_period(&self) -> f64 {
        match self.times.len() {
            0 | 1 => 0.0,
            k => (self.times[k - 1] - self.times[0]) / (k - 1) as f64,
        }
    }

    pub fn with_delta(mut self, delta: DMatrix<f64>) -> Result<Self> {
        check_dims("Δ", (self.n(), self.n()), delta.shape())?;
        self.delta = delta;
        Ok(self)
    }

    /// Energy-bound check D0·D0ᵀ ⪯ Δ·Δᵀ (true when D0 is unknown).
    pub fn disturbance_bound_holds(&self) -> bool {
        match &self.d0 {
            None => true,
            Some(d0) => {
                let gap = d0 * d0.transpose() - &self.delta * self.delta.transpose();
                lambda_max(&gap) <= 1e-12 * (1.0 + self.delta.norm_squared())
            }
        }
    }
}

/// Arranges raw samples into the data matrices. Δ starts at zero; set it with
/// [`DataMatrices::with_delta`].
pub fn build_matrices(raw: &RawSamples, mode: X1Mode) -> Result<DataMatrices> {
    let tau = raw.len();
    if tau == 0 {
        return Err(invalid("empty data set"));
    }
    let (n, m) = (raw.n(), raw.m());
    if raw.states.len() != tau || raw.inputs.len() != tau {
        return Err(invalid("sample channels have different lengths"));
    }
    let cols = |vs: &[DVector<f64>], rows: usize, count: usize| -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(rows, count);
        for (j, v) in vs.iter().take(count).enumerate() {
            check_dims("data sample", (rows, 1), v.shape())?;
            out.set_column(j, v);
        }
        Ok(out)
    };
    match mode {
        X1Mode::Exact => {
            let xd = raw
                .derivatives
                .as_ref()
                .ok_or_else(|| invalid("exact mode needs measured derivatives; use euler mode"))?;
            if xd.len() != tau {
                return Err(invalid("derivative channel has the wrong length"));
            }
            Ok(DataMatrices {
                x0: cols(&raw.states, n, tau)?,
                x1: cols(xd, n, tau)?,
                u0: cols(&raw.inputs, m, tau)?,
                d0: raw.disturbances.as_deref().map(|d| cols(d, n, tau)).transpose()?,
                delta: DMatrix::zeros(n, n),
                times: raw.times.clone(),
                x1_mode: mode,
            })
        }
        X1Mode::Euler => {
            if tau < 2 {
                return Err(invalid("euler mode needs at least two samples"));
            }
            let k = tau - 1;
            let mut x1 = DMatrix::zeros(n, k);
            for i in 0..k {
                let dt = raw.times[i + 1] - raw.times[i];
                if !(dt > 0.0) {
                    return Err(invalid("sample times must be strictly increasing"));
                }
                x1.set_column(i, &((&raw.states[i + 1] - &raw.states[i]) / dt));
            }
            Ok(DataMatrices {
                x0: cols(&raw.states, n, k)?,
                x1,
                u0: cols(&raw.inputs, m, k)?,
                d0: raw.disturbances.as_deref().map(|d| cols(d, n, k)).transpose()?,
                delta: DMatrix::zeros(n, n),
                times: raw.times[..k].to_vec(),
                x1_mode: mode,
            })
        }
    }
}

/// Whether `[U0; X0]` has full row rank `m + n`.
pub fn check_rank(dm: &DataMatrices) -> bool {
    stacked_rank(dm) == dm.m() + dm.n()
}

pub fn stacked_rank(dm: &DataMatrices) -> usize {
    let stacked = stack_rows(&dm.u0, &dm.x0);
    numerical_rank(&stacked, RANK_TOL)
}

pub(crate) fn stack_rows(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    s.rows_mut(0, top.nrows()).copy_from(top);
    s.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    s
}

/// `Δ = √τ · d̄ · I`: each disturbance sample has norm ≤ d̄, so the sum of τ
/// outer products is bounded by τ·d̄²·I.
pub fn bound_delta(d_bar: f64, tau: usize, n: usize) -> Result<DMatrix<f64>> {
    if !(d_bar >= 0.0 && d_bar.is_finite()) || tau == 0 {
        return Err(invalid("bound_delta needs d̄ ≥ 0 and τ ≥ 1"));
    }
    Ok(DMatrix::identity(n, n) * ((tau as f64).sqrt() * d_bar))
}

/// Writes the data-set CSV: `i,t,x_1..x_n,xdot_1..xdot_n,u_1..u_m`.
/// Lines starting with `#` are comments.
pub fn write_csv<W: Write>(raw: &RawSamples, comment: Option<&str>, mut w: W) -> Result<()> {
    let (n, m) = (raw.n(), raw.m());
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(w, "# {line}")?;
        }
    }
    let mut header = vec!["i".to_string(), "t".to_string()];
    header.extend((1..=n).map(|k| format!("x_{k}")));
    if raw.derivatives.is_some() {
        header.extend((1..=n).map(|k| format!("xdot_{k}")));
    }
    header.extend((1..=m).map(|k| format!("u_{k}")));
    writeln!(w, "{}", header.join(","))?;
    for i in 0..raw.len() {
        let mut row = vec![i.to_string(), fmt17(raw.times[i])];
        row.extend(raw.states[i].iter().map(|&v| fmt17(v)));
        if let Some(xd) = &raw.derivatives {
            row.extend(xd[i].iter().map(|&v| fmt17(v)));
        }
        row.extend(raw.inputs[i].iter().map(|&v| fmt17(v)));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Parses the data-set CSV written by [`write_csv`]. Columns are located by
/// header name, so `xdot_*` may be omitted.
pub fn read_csv<R: Read>(r: R) -> Result<RawSamples> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r);
    let headers = rdr.headers()?.clone();
    let find = |prefix: &str| -> Vec<usize> {
        let mut idx = Vec::new();
        for k in 1.. {
            match headers.iter().position(|h| h == format!("{prefix}{k}")) {
                Some(p) => idx.push(p),
                None => break,
            }
        }
        idx
    };
    let t_col = headers
        .iter()
        .position(|h| h == "t")
        .ok_or_else(|| Error::Parse("missing column `t`".into()))?;
    let x_cols = find("x_");
    let xd_cols = find("xdot_");
    let u_cols = find("u_");
    if x_cols.is_empty() || u_cols.is_empty() {
        return Err(Error::Parse("data set needs x_1.. and u_1.. columns".into()));
    }
    if !xd_cols.is_empty() && xd_cols.len() != x_cols.len() {
        return Err(Error::Parse("xdot columns must match x columns".into()));
    }
    let known = 1 + usize::from(headers.iter().any(|h| h == "i")) + x_cols.len() + xd_cols.len() + u_cols.len();
    if known != headers.len() {
        return Err(Error::Parse(format!("unexpected columns in header: {:?}", headers)));
    }

    let mut raw = RawSamples {
        times: Vec::new(),
        states: Vec::new(),
        derivatives: (!xd_cols.is_empty()).then(Vec::new),
        inputs: Vec::new(),
        disturbances: None,
    };
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64> {
            let s = rec.get(c).ok_or_else(|| Error::Parse(format!("row {line}: missing field")))?;
            let v: f64 = s
                .parse()
                .map_err(|_| Error::Parse(format!("row {line}: `{s}` is not a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Parse(format!("row {line}: non-finite value")))
            }
        };
        let vec = |cols: &[usize]| -> Result<DVector<f64>> {
            Ok(DVector::from_vec(cols.iter().map(|&c| num(c)).collect::<Result<Vec<_>>>()?))
        };
        raw.times.push(num(t_col)?);
        raw.states.push(vec(&x_cols)?);
        if let Some(xd) = raw.derivatives.as_mut() {
            xd.push(vec(&xd_cols)?);
        }
        raw.inputs.push(vec(&u_cols)?);
    }
    if raw.is_empty() {
        return Err(Error::Parse("data set has no rows".into()));
    }
    if raw.times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parse("sample times must be strictly increasing".into()));
    }
    Ok(raw)
}
