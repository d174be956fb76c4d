//! Closed-loop event-triggered simulation and trace analysis.
//!
//! The plant state and the triggering function are integrated together by
//! fixed-step RK4 with the input held between events. When `f` crosses zero
//! inside a step the crossing is localized by bisection on the sub-step
//! length, the event is applied, and integration resumes from the event time.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, invalid, Error, Result};
use crate::etm::{quantize, EtmConfig, EtmState, QuantMode, TriggerWeights};
use crate::format::{fmt17, inf_as_null};
use crate::synthesis::{miet_bound, Certificates, SynthesisResult};
use crate::system::{rk4, DisturbanceSpec, LinearSystem, Signal};

pub const DEFAULT_TOL_EVENT: f64 = 1e-9;
/// Two events closer than this are treated as a Zeno-suspect event storm.
pub const ZENO_GAP: f64 = 1e-12;
/// Pre-reset values of `f` are driven to within this of zero.
const F_CROSSING_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Scenario {
    pub sys: LinearSystem,
    pub synth: SynthesisResult,
    pub etm: EtmConfig,
    pub x0: DVector<f64>,
    pub horizon: f64,
    pub h_sim: f64,
    pub disturbance: DisturbanceSpec,
    pub tol_event: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.sys.n(), self.sys.m());
        check_dims("x0", (n, 1), self.x0.shape())?;
        check_dims("gain K", (m, n), self.synth.k.shape())?;
        check_dims("P", (n, n), self.synth.p.shape())?;
        self.etm.validate()?;
        self.disturbance.validate()?;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("horizon T must be positive"));
        }
        if !(self.h_sim > 0.0 && self.h_sim <= self.horizon) {
            return Err(invalid("need 0 < h_sim ≤ T"));
        }
        if !(self.tol_event > 0.0 && self.tol_event <= self.h_sim) {
            return Err(invalid("need 0 < tol_event ≤ h_sim"));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(invalid("x0 must be finite"));
        }
        Ok(())
    }
}

/// Recorded closed-loop run. Rows are the integration grid plus every event
/// instant; event rows carry post-reset values.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    /// Transmitted sample in force at each row.
    pub held: Vec<DVector<f64>>,
    pub f_values: Vec<f64>,
    pub v_values: Vec<f64>,
    pub d_norms: Vec<f64>,
    pub event_rows: Vec<bool>,
    pub event_times: Vec<f64>,
    /// Value of `f` just before each reset (`f̄` for the initial event).
    pub event_f_pre: Vec<f64>,
    /// Largest ‖e‖ seen at any integrator stage.
    pub e_sup_stages: f64,
    pub mode: QuantMode,
    pub theta: f64,
    pub f_bar: f64,
}

impl SimulationTrace {
    fn new(etm: &EtmConfig) -> Self {
        Self {
            times: Vec::new(),
            states: Vec::new(),
            inputs: Vec::new(),
            held: Vec::new(),
            f_values: Vec::new(),
            v_values: Vec::new(),
            d_norms: Vec::new(),
            event_rows: Vec::new(),
            event_times: Vec::new(),
            event_f_pre: Vec::new(),
            e_sup_stages: 0.0,
            mode: etm.mode,
            theta: etm.theta,
            f_bar: etm.f_bar,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Effective state used by the trigger: `x` or `q(x)`.
    pub fn effective(&self, x: &DVector<f64>) -> DVector<f64> {
        quantize(self.mode, x, self.theta)
    }

    /// Trace CSV: `t,x_1..x_n,u_1..u_m,f,V,d_norm,event`.
    pub fn write_csv<W: Write>(&self, comment: Option<&str>, mut w: W) -> Result<()> {
        write_comment(&mut w, comment)?;
        let n = self.states.first().map_or(0, |x| x.len());
        let m = self.inputs.first().map_or(0, |u| u.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|k| format!("x_{k}")));
        header.extend((1..=m).map(|k| format!("u_{k}")));
        header.extend(["f", "V", "d_norm", "event"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut row = vec![fmt17(self.times[i])];
            row.extend(self.states[i].iter().map(|&v| fmt17(v)));
            row.extend(self.inputs[i].iter().map(|&v| fmt17(v)));
            row.push(fmt17(self.f_values[i]));
            row.push(fmt17(self.v_values[i]));
            row.push(fmt17(self.d_norms[i]));
            row.push(if self.event_rows[i] { "1" } else { "0" }.to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// One event time per line.
    pub fn write_events<W: Write>(&self, comment: Option<&str>, mut w: W) -> Result<()> {
        write_comment(&mut w, comment)?;
        for &t in &self.event_times {
            writeln!(w, "{}", fmt17(t))?;
        }
        Ok(())
    }
}

fn write_comment<W: Write>(w: &mut W, comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(w, "# {line}")?;
        }
    }
    Ok(())
}

/// A failed run together with everything recorded before the failure.
#[derive(Debug)]
pub struct SimFailure {
    pub error: Error,
    pub zeno_suspect: bool,
    pub trace: Box<SimulationTrace>,
}

impl std::fmt::Display for SimFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.zeno_suspect {
            write!(f, "Zeno-suspect event storm: {}", self.error)
        } else {
            write!(f, "simulation failed: {}", self.error)
        }
    }
}

impl std::error::Error for SimFailure {}

struct Loop<'a> {
    sys: &'a LinearSystem,
    k: &'a DMatrix<f64>,
    p: &'a DMatrix<f64>,
    delta: f64,
    etm: EtmConfig,
    weights: TriggerWeights,
    dist: &'a dyn Signal,
    n: usize,
    /// Largest ‖e‖ at the stages of the step in progress.
    e_step: f64,
}

impl Loop<'_> {
    fn rhs(&mut self, t: f64, left: bool, y: &DVector<f64>, u: &DVector<f64>, held: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let x = y.rows(0, n).into_owned();
        let f = y[n];
        let d = self.dist.sample(t, left);
        let dx = self.sys.a() * &x + self.sys.b() * u + d;
        let x_eff = quantize(self.etm.mode, &x, self.etm.theta);
        let e = held - &x_eff;
        let en = e.norm();
        if en > self.e_step {
            self.e_step = en;
        }
        let df = self.weights.quadratic(&x_eff, &e).min(0.0) - f;
        let mut out = DVector::zeros(n + 1);
        out.rows_mut(0, n).copy_from(&dx);
        out[n] = df;
        out
    }

    /// One RK4 step; also returns the largest ‖e‖ over its stages.
    fn step(&mut self, y: &DVector<f64>, t: f64, h: f64, u: &DVector<f64>, held: &DVector<f64>) -> (DVector<f64>, f64) {
        self.e_step = 0.0;
        let out = rk4(y, t, h, |s, left, z| self.rhs(s, left, z, u, held));
        (out, self.e_step)
    }

    fn lyapunov(&self, x: &DVector<f64>, f: f64) -> f64 {
        (x.transpose() * self.p * x)[(0, 0)] + f / self.delta
    }
}

fn augmented(x: &DVector<f64>, f: f64) -> DVector<f64> {
    let n = x.len();
    let mut y = DVector::zeros(n + 1);
    y.rows_mut(0, n).copy_from(x);
    y[n] = f;
    y
}

/// Runs the event-triggered closed loop.
pub fn run_closed_loop(sc: &Scenario) -> std::result::Result<SimulationTrace, SimFailure> {
    let n = sc.sys.n();
    let mut trace = SimulationTrace::new(&sc.etm);
    let fail = |error: Error, zeno: bool, trace: SimulationTrace| SimFailure {
        error,
        zeno_suspect: zeno,
        trace: Box::new(trace),
    };
    if let Err(e) = sc.validate() {
        return Err(fail(e, false, trace));
    }
    let dist = match sc.disturbance.signal(n) {
        Ok(d) => d,
        Err(e) => return Err(fail(e, false, trace)),
    };
    let mut lp = Loop {
        sys: &sc.sys,
        k: &sc.synth.k,
        p: &sc.synth.p,
        delta: sc.synth.delta,
        etm: sc.etm,
        weights: sc.etm.weights(),
        dist: &dist,
        n,
        e_step: 0.0,
    };
    let mut e_sup = 0.0f64;

    let record = |trace: &mut SimulationTrace, lp: &Loop, t: f64, y: &DVector<f64>, st: &EtmState, event: bool| {
        let x = y.rows(0, lp.n).into_owned();
        trace.times.push(t);
        trace.inputs.push(lp.k * &st.x_held);
        trace.v_values.push(lp.lyapunov(&x, y[lp.n]));
        trace.f_values.push(y[lp.n]);
        trace.d_norms.push(lp.dist.eval(t).norm());
        trace.held.push(st.x_held.clone());
        trace.states.push(x);
        trace.event_rows.push(event);
    };

    // Initial event at t = 0.
    let mut st = EtmState::initial(&sc.etm, &sc.x0, 0.0);
    let mut u = &sc.synth.k * &st.x_held;
    let mut y = augmented(&sc.x0, st.f);
    trace.event_times.push(0.0);
    trace.event_f_pre.push(sc.etm.f_bar);
    record(&mut trace, &lp, 0.0, &y, &st, true);

    let steps = (sc.horizon / sc.h_sim).round().max(1.0) as usize;
    let mut tc = 0.0;
    for i in 1..=steps {
        let t_next = if i == steps { sc.horizon } else { i as f64 * sc.h_sim };
        while tc < t_next {
            let h = t_next - tc;
            let (y_full, e_full) = lp.step(&y, tc, h, &u, &st.x_held);
            if y_full.iter().any(|v| !v.is_finite()) {
                trace.e_sup_stages = e_sup;
                return Err(fail(
                    Error::NonFinite {
                        context: "closed-loop state",
                        time: t_next,
                    },
                    false,
                    trace,
                ));
            }
            if y_full[n] > 0.0 {
                e_sup = e_sup.max(e_full);
                y = y_full;
                tc = t_next;
                st.f = y[n];
                record(&mut trace, &lp, tc, &y, &st, false);
                break;
            }
            // f is strictly decreasing while positive, so the crossing in
            // (tc, t_next] is unique.
            let (mut lo, mut hi, mut y_hi, mut e_hi) = (0.0, h, y_full, e_full);
            loop {
                let width = hi - lo;
                let settled = width <= sc.tol_event && y_hi[n] >= -F_CROSSING_TOL;
                if settled || width <= 4.0 * f64::EPSILON * tc.abs().max(h) {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                let (y_mid, e_mid) = lp.step(&y, tc, mid, &u, &st.x_held);
                if y_mid[n] > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                    y_hi = y_mid;
                    e_hi = e_mid;
                }
            }
            let t_event = if hi == h { t_next } else { tc + hi };
            let last = *trace.event_times.last().unwrap_or(&0.0);
            if t_event - last < ZENO_GAP {
                trace.e_sup_stages = e_sup;
                return Err(fail(
                    invalid(format!("events at {last} and {t_event} are closer than {ZENO_GAP:e} s")),
                    true,
                    trace,
                ));
            }
            e_sup = e_sup.max(e_hi);
            let x_event = y_hi.rows(0, n).into_owned();
            trace.event_f_pre.push(y_hi[n]);
            st.reset(&sc.etm, quantize(sc.etm.mode, &x_event, sc.etm.theta), t_event);
            u = &sc.synth.k * &st.x_held;
            y = augmented(&x_event, st.f);
            tc = t_event;
            trace.event_times.push(t_event);
            record(&mut trace, &lp, tc, &y, &st, true);
        }
    }
    trace.e_sup_stages = e_sup;
    Ok(trace)
}

/// Least-squares fit of `ln‖x‖ = ln c1 − c2·t`. Non-positive norms are skipped;
/// all-zero input gives `(1, ∞)`.
pub fn fit_exponential(times: &[f64], norms: &[f64]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(norms)
        .filter(|(_, &v)| v > 0.0 && v.is_finite())
        .map(|(&t, &v)| (t, v.ln()))
        .collect();
    match pts.len() {
        0 => (1.0, f64::INFINITY),
        1 => (pts[0].1.exp(), 0.0),
        k => {
            let kf = k as f64;
            let tm = pts.iter().map(|p| p.0).sum::<f64>() / kf;
            let lm = pts.iter().map(|p| p.1).sum::<f64>() / kf;
            let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
            if sxx == 0.0 {
                return (lm.exp(), 0.0);
            }
            let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - lm)).sum();
            let slope = sxy / sxx;
            ((lm - slope * tm).exp(), -slope)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub event_count: usize,
    #[serde(with = "inf_as_null")]
    pub miet_observed: f64,
    pub miet_bound: f64,
    /// Observed sup ‖e‖ (trace rows, pre-event left limits and integrator stages).
    pub e_sup: f64,
    /// max of V̇ + λV − ι‖d‖² (− ε̄ᵤ in uniform mode) over interior grid rows.
    pub lyapunov_violation: f64,
    pub max_v: f64,
    pub lyapunov_rows: usize,
    pub iss_c1: f64,
    #[serde(with = "inf_as_null")]
    pub iss_c2: f64,
    #[serde(with = "inf_as_null")]
    pub final_norm_ratio: f64,
    /// Mean ‖x‖ over the final 10 % of the horizon.
    pub final_residual: f64,
    pub f_min: f64,
    pub f_max: f64,
    /// Smallest gap minus the MIET bound (≥ −tol_event when the bound holds).
    #[serde(with = "inf_as_null")]
    pub miet_slack: f64,
}

/// Post-hoc checks of a trace against the certificates.
pub fn analyze_trace(trace: &SimulationTrace, synth: &SynthesisResult, cert: &Certificates) -> Result<AnalysisReport> {
    let len = trace.len();
    if len < 3 {
        return Err(invalid("trace needs at least three samples"));
    }
    let ev = &trace.event_times;
    let miet_observed = ev.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);

    // e = held − x_eff on every row, plus the left limit before each reset.
    let mut e_sup = trace.e_sup_stages;
    for i in 0..len {
        let x_eff = trace.effective(&trace.states[i]);
        e_sup = e_sup.max((&trace.held[i] - &x_eff).norm());
        if trace.event_rows[i] && i > 0 {
            e_sup = e_sup.max((&trace.held[i - 1] - &x_eff).norm());
        }
    }
    let bound = miet_bound(trace.f_bar, synth.beta, e_sup);

    let lambda = cert.decay_rate(trace.mode);
    let allowance = if trace.mode == QuantMode::Uniform { cert.eps_u(trace.theta) } else { 0.0 };
    let max_v = trace.v_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut violation = f64::NEG_INFINITY;
    let mut rows = 0;
    for i in 1..len - 1 {
        if trace.event_rows[i - 1] || trace.event_rows[i] || trace.event_rows[i + 1] {
            continue;
        }
        let (h1, h2) = (trace.times[i] - trace.times[i - 1], trace.times[i + 1] - trace.times[i]);
        if (h1 - h2).abs() > 1e-9 * h1.max(h2) {
            continue;
        }
        let vdot = (trace.v_values[i + 1] - trace.v_values[i - 1]) / (h1 + h2);
        let d2 = trace.d_norms[i - 1].max(trace.d_norms[i]).powi(2);
        let g = vdot + lambda * trace.v_values[i] - cert.iota * d2 - allowance;
        violation = violation.max(g);
        rows += 1;
    }

    let norms: Vec<f64> = trace.states.iter().map(|x| x.norm()).collect();
    let t_end = *trace.times.last().unwrap_or(&0.0);
    let tail_start = 0.9 * t_end;
    let tail: Vec<f64> = trace
        .times
        .iter()
        .zip(&norms)
        .filter(|(&t, _)| t >= tail_start)
        .map(|(_, &v)| v)
        .collect();
    let final_residual = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    // Fit over the transient: up to the first time ‖x‖ drops to 10× the residual.
    let settle = norms
        .iter()
        .position(|&v| v <= 10.0 * final_residual)
        .unwrap_or(len);
    let (iss_c1, iss_c2) = if settle >= 3 {
        fit_exponential(&trace.times[..settle], &norms[..settle])
    } else {
        fit_exponential(&trace.times, &norms)
    };
    let n0 = norms[0];
    let nt = norms[len - 1];
    let final_norm_ratio = if n0 > 0.0 {
        nt / n0
    } else if nt == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let f_min = trace
        .f_values
        .iter()
        .chain(&trace.event_f_pre)
        .copied()
        .fold(f64::INFINITY, f64::min);
    let f_max = trace
        .f_values
        .iter()
        .chain(&trace.event_f_pre)
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);

    Ok(AnalysisReport {
        event_count: ev.len(),
        miet_observed,
        miet_bound: bound,
        e_sup,
        lyapunov_violation: if rows > 0 { violation } else { 0.0 },
        max_v,
        lyapunov_rows: rows,
        iss_c1,
        iss_c2,
        final_norm_ratio,
        final_residual,
        f_min,
        f_max,
        miet_slack: miet_observed - bound,
    })
}
