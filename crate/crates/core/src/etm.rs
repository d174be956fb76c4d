//! Dynamic event-triggering mechanism and state quantizers.
//!
//! The triggering function `f` obeys
//! `ḟ = min{−zᵀΦz, 0} − f` between events with `z = [x_eff; e]`, and is reset
//! to `f̄` whenever it reaches zero. `Φ = blockdiag(−a·I, β·I)` where the
//! state weight `a` depends on the quantization mode.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QuantMode {
    #[default]
    Plain,
    Uniform,
    Logarithmic,
}

impl std::fmt::Display for QuantMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            QuantMode::Plain => "plain",
            QuantMode::Uniform => "uniform",
            QuantMode::Logarithmic => "logarithmic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtmConfig {
    /// Reset value f̄.
    pub f_bar: f64,
    pub alpha: f64,
    pub beta: f64,
    pub mode: QuantMode,
    /// Quantizer parameter θ (ignored in plain mode).
    pub theta: f64,
}

impl EtmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_bar > 0.0 && self.f_bar.is_finite()) {
            return Err(invalid("f̄ must be positive"));
        }
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(invalid("α and β must be positive"));
        }
        if self.mode != QuantMode::Plain && !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(invalid("quantizer parameter θ must be positive"));
        }
        Ok(())
    }

    pub fn weights(&self) -> TriggerWeights {
        TriggerWeights::new(self.alpha, self.beta, self.mode, self.theta)
    }
}

/// Diagonal weights of `Φ`: the state block is `−x_weight·I`, the error block
/// `e_weight·I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerWeights {
    pub x_weight: f64,
    pub e_weight: f64,
}

impl TriggerWeights {
    pub fn new(alpha: f64, beta: f64, mode: QuantMode, theta: f64) -> Self {
        let x_weight = match mode {
            QuantMode::Plain => alpha,
            QuantMode::Uniform => alpha / 2.0,
            QuantMode::Logarithmic => (-theta).exp() * alpha,
        };
        Self { x_weight, e_weight: beta }
    }

    /// The `2n × 2n` matrix `Φ`.
    pub fn matrix(&self, n: usize) -> DMatrix<f64> {
        let mut phi = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            phi[(i, i)] = -self.x_weight;
            phi[(n + i, n + i)] = self.e_weight;
        }
        phi
    }

    /// `−zᵀΦz` for `z = [x_eff; e]`.
    pub fn quadratic(&self, x_eff: &DVector<f64>, e: &DVector<f64>) -> f64 {
        self.x_weight * x_eff.norm_squared() - self.e_weight * e.norm_squared()
    }
}

/// `Φ` for the given mode.
pub fn phi_matrix(alpha: f64, beta: f64, mode: QuantMode, theta: f64, n: usize) -> DMatrix<f64> {
    TriggerWeights::new(alpha, beta, mode, theta).matrix(n)
}

/// `ḟ = min{−zᵀΦz, 0} − f`.
pub fn f_derivative(f: f64, x_eff: &DVector<f64>, e: &DVector<f64>, w: &TriggerWeights) -> f64 {
    w.quadratic(x_eff, e).min(0.0) - f
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtmState {
    pub f: f64,
    /// Last transmitted sample (quantized in quantized modes).
    pub x_held: DVector<f64>,
    pub t_last: f64,
}

impl EtmState {
    /// State right after the initial event at `t`.
    pub fn initial(cfg: &EtmConfig, x: &DVector<f64>, t: f64) -> Self {
        Self {
            f: cfg.f_bar,
            x_held: quantize(cfg.mode, x, cfg.theta),
            t_last: t,
        }
    }

    /// Events fire when `f ≤ 0`.
    pub fn should_trigger(&self) -> bool {
        self.f <= 0.0
    }

    /// Measurement error `e = x_held − x_eff`.
    pub fn error(&self, x_eff: &DVector<f64>) -> DVector<f64> {
        &self.x_held - x_eff
    }

    /// Event reset: new held sample, `f = f̄`, so `e = 0` immediately after.
    pub fn reset(&mut self, cfg: &EtmConfig, x_new_held: DVector<f64>, t: f64) {
        self.f = cfg.f_bar;
        self.x_held = x_new_held;
        self.t_last = t;
    }
}

/// Round to nearest with exact halves going toward +∞ (so ½ ↦ 1).
fn round_half_up(y: f64) -> f64 {
    (y + 0.5).floor()
}

/// Componentwise `θ·round(x_i/θ)`.
pub fn quantize_uniform(x: &DVector<f64>, theta: f64) -> DVector<f64> {
    x.map(|v| theta * round_half_up(v / theta))
}

/// Componentwise `sign(x_i)·exp(θ·round(ln|x_i|/θ))`, with `0 ↦ 0`.
pub fn quantize_log(x: &DVector<f64>, theta: f64) -> DVector<f64> {
    x.map(|v| {
        if v == 0.0 {
            0.0
        } else {
            v.signum() * (theta * round_half_up(v.abs().ln() / theta)).exp()
        }
    })
}

pub fn quantize(mode: QuantMode, x: &DVector<f64>, theta: f64) -> DVector<f64> {
    match mode {
        QuantMode::Plain => x.clone(),
        QuantMode::Uniform => quantize_uniform(x, theta),
        QuantMode::Logarithmic => quantize_log(x, theta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn phi_examples() {
        let plain = phi_matrix(1.0, 2.0, QuantMode::Plain, 0.3, 1);
        assert_eq!(plain, DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 2.0]));
        assert_eq!(phi_matrix(1.0, 2.0, QuantMode::Logarithmic, 0.0, 1), plain);
        let uni = phi_matrix(1.0, 2.0, QuantMode::Uniform, 0.3, 1);
        assert_eq!(uni, DMatrix::from_row_slice(2, 2, &[-0.5, 0.0, 0.0, 2.0]));
    }

    #[test]
    fn weights_match_quadratic_form() {
        let w = TriggerWeights::new(0.7, 3.0, QuantMode::Uniform, 0.2);
        let (x, e) = (v(&[1.0, -2.0]), v(&[0.5, 0.1]));
        let z = v(&[1.0, -2.0, 0.5, 0.1]);
        let zphiz = (z.transpose() * w.matrix(2) * &z)[(0, 0)];
        assert!((w.quadratic(&x, &e) + zphiz).abs() < 1e-14);
    }

    #[test]
    fn f_derivative_examples() {
        let w = TriggerWeights::new(1.0, 3.0, QuantMode::Plain, 0.0);
        assert_eq!(f_derivative(2.5, &v(&[4.0, 1.0]), &v(&[0.0, 0.0]), &w), -2.5);
        assert_eq!(f_derivative(1.0, &v(&[0.0]), &v(&[1.0]), &w), -4.0);
        assert_eq!(f_derivative(0.0, &v(&[0.3]), &v(&[0.0]), &w), 0.0);
    }

    #[test]
    fn trigger_and_reset() {
        let cfg = EtmConfig {
            f_bar: 100.0,
            alpha: 1.0,
            beta: 1.0,
            mode: QuantMode::Uniform,
            theta: 0.5,
        };
        let mut s = EtmState::initial(&cfg, &v(&[0.3, -0.2]), 0.0);
        assert!(!s.should_trigger());
        s.f = 0.0;
        assert!(s.should_trigger());
        s.f = -1e-12;
        assert!(s.should_trigger());
        let x = v(&[0.74, 1.3]);
        s.reset(&cfg, quantize(cfg.mode, &x, cfg.theta), 1.5);
        assert_eq!(s.f, 100.0);
        assert_eq!(s.x_held, v(&[0.5, 1.5]));
        assert_eq!(s.t_last, 1.5);

        let plain = EtmConfig { mode: QuantMode::Plain, ..cfg };
        let mut p = EtmState::initial(&plain, &x, 0.0);
        p.reset(&plain, quantize(plain.mode, &x, plain.theta), 2.0);
        assert_eq!(p.x_held, x);
        assert_eq!(p.error(&x), v(&[0.0, 0.0]));
    }

    #[test]
    fn uniform_examples() {
        assert_eq!(quantize_uniform(&v(&[0.5]), 1.0)[0], 1.0);
        assert_eq!(quantize_uniform(&v(&[-0.5]), 1.0)[0], 0.0);
        assert_eq!(quantize_uniform(&v(&[0.0]), 0.37)[0], 0.0);
        assert!((quantize_uniform(&v(&[0.26]), 0.1)[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn log_examples() {
        assert_eq!(quantize_log(&v(&[1.0]), 0.7)[0], 1.0);
        let e = std::f64::consts::E;
        assert!((quantize_log(&v(&[e]), 1.0)[0] - e).abs() < 1e-15);
        assert_eq!(quantize_log(&v(&[-(0.4f64).exp()]), 1.0)[0], -1.0);
        assert_eq!(quantize_log(&v(&[0.0]), 1.0)[0], 0.0);
    }

    #[test]
    fn trigger_function_decays_exponentially_without_error() {
        // e ≡ 0: f(t) = f̄·e^{−t}
        let w = TriggerWeights::new(0.5, 10.0, QuantMode::Plain, 0.0);
        let x = v(&[1.0, 2.0]);
        let e = v(&[0.0, 0.0]);
        let (mut f, h) = (100.0, 1e-3);
        for _ in 0..2000 {
            let k1 = f_derivative(f, &x, &e, &w);
            let k2 = f_derivative(f + 0.5 * h * k1, &x, &e, &w);
            let k3 = f_derivative(f + 0.5 * h * k2, &x, &e, &w);
            let k4 = f_derivative(f + h * k3, &x, &e, &w);
            f += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        assert!((f - 100.0 * (-2.0f64).exp()).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn uniform_error_bound(xs in prop::collection::vec(-50.0..50.0f64, 1..6), theta in 1e-3..2.0f64) {
            let x = DVector::from_vec(xs);
            let err = (quantize_uniform(&x, theta) - &x).norm();
            prop_assert!(err <= (x.len() as f64).sqrt() * theta / 2.0 * (1.0 + 1e-12));
        }

        #[test]
        fn log_error_bound_and_oddness(xs in prop::collection::vec(-50.0..50.0f64, 1..6), theta in 1e-3..2.0f64) {
            let x = DVector::from_vec(xs);
            let q = quantize_log(&x, theta);
            prop_assert!((&q - &x).norm() <= ((theta / 2.0).exp() - 1.0) * x.norm() * (1.0 + 1e-12));
            prop_assert_eq!(quantize_log(&(-&x), theta), -q);
        }

        #[test]
        fn derivative_bounds(f in 0.0..100.0f64, xs in prop::collection::vec(-5.0..5.0f64, 3), es in prop::collection::vec(-5.0..5.0f64, 3)) {
            let w = TriggerWeights::new(0.2, 7.0, QuantMode::Plain, 0.0);
            let (x, e) = (DVector::from_vec(xs), DVector::from_vec(es));
            let fd = f_derivative(f, &x, &e, &w);
            prop_assert!(fd <= -f);
            prop_assert!(fd >= -7.0 * e.norm_squared() - 100.0);
        }
    }
}
