//! Ground-truth plant `ẋ = A·x + B·u + d`, bounded disturbance generators and
//! the fixed-step integrator shared by data collection and closed-loop runs.
//!
//! Synthesis never sees a [`LinearSystem`]; it is only used to generate data
//! and to check results against the true model.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, invalid, Error, Result};

/// Default integration step for closed-loop runs (s).
pub const DEFAULT_H_SIM: f64 = 1e-3;
/// Default hold interval of the piecewise-random disturbance (s).
pub const DEFAULT_DISTURBANCE_HOLD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || b.ncols() == 0 {
            return Err(invalid("plant needs n ≥ 1 and m ≥ 1"));
        }
        check_dims("plant A", (n, n), a.shape())?;
        check_dims("plant B", (n, b.ncols()), b.shape())?;
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("plant matrices must be finite"));
        }
        Ok(Self { a, b })
    }

    /// Linearized longitudinal aircraft model used in the reference experiments.
    pub fn aircraft() -> Self {
        #[rustfmt::skip]
        let a = DMatrix::from_row_slice(3, 3, &[
            -0.277, 1.0, -0.0002,
            -17.1, -0.178, -12.2,
            0.0, 0.0, -6.67,
        ]);
        let b = DMatrix::from_row_slice(3, 1, &[0.0, 0.0, 6.67]);
        Self { a, b }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// `A·x + B·u + d`.
    pub fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>, d: &DVector<f64>) -> Result<DVector<f64>> {
        check_dims("derivative x", (self.n(), 1), x.shape())?;
        check_dims("derivative u", (self.m(), 1), u.shape())?;
        check_dims("derivative d", (self.n(), 1), d.shape())?;
        Ok(&self.a * x + &self.b * u + d)
    }

    /// One classical RK4 step of length `h` from `(t, x)` with `u` held.
    pub fn rk4_step(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        d: &dyn Signal,
        t: f64,
        h: f64,
    ) -> Result<DVector<f64>> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid(format!("step size must be positive, got {h}")));
        }
        check_dims("rk4 x", (self.n(), 1), x.shape())?;
        check_dims("rk4 u", (self.m(), 1), u.shape())?;
        let bu = &self.b * u;
        let next = rk4(x, t, h, |s, left, y| &self.a * y + &bu + d.sample(s, left));
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "plant state", time: t + h });
        }
        Ok(next)
    }

    /// `A + B·K`.
    pub fn closed_loop(&self, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dims("gain K", (self.m(), self.n()), k.shape())?;
        Ok(&self.a + &self.b * k)
    }
}

/// Classical fourth-order Runge–Kutta step. The right-hand side receives the
/// stage time and whether that time is the right end of the step, so
/// piecewise-constant inputs can be evaluated by their left limit there.
pub(crate) fn rk4<F>(y: &DVector<f64>, t: f64, h: f64, mut rhs: F) -> DVector<f64>
where
    F: FnMut(f64, bool, &DVector<f64>) -> DVector<f64>,
{
    let k1 = rhs(t, false, y);
    let k2 = rhs(t + 0.5 * h, false, &(y + &k1 * (0.5 * h)));
    let k3 = rhs(t + 0.5 * h, false, &(y + &k2 * (0.5 * h)));
    let k4 = rhs(t + h, true, &(y + &k3 * h));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// A vector-valued, piecewise-continuous function of time.
pub trait Signal {
    fn dim(&self) -> usize;

    /// Value at `t`; right-continuous at jumps.
    fn eval(&self, t: f64) -> DVector<f64>;

    /// Left limit at `t`. Continuous signals can keep the default.
    fn eval_left(&self, t: f64) -> DVector<f64> {
        self.eval(t)
    }

    fn sample(&self, t: f64, left: bool) -> DVector<f64> {
        if left {
            self.eval_left(t)
        } else {
            self.eval(t)
        }
    }
}

/// Signal that is identically zero.
#[derive(Debug, Clone, Copy)]
pub struct ZeroSignal(pub usize);

impl Signal for ZeroSignal {
    fn dim(&self) -> usize {
        self.0
    }

    fn eval(&self, _t: f64) -> DVector<f64> {
        DVector::zeros(self.0)
    }
}

/// Signal that is constant in time.
#[derive(Debug, Clone)]
pub struct ConstantSignal(pub DVector<f64>);

impl Signal for ConstantSignal {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn eval(&self, _t: f64) -> DVector<f64> {
        self.0.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceKind {
    Zero,
    Constant,
    Sinusoid,
    PiecewiseRandom,
}

/// Bounded disturbance: every sample satisfies `‖d(t)‖ ≤ d_bar`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    pub kind: DisturbanceKind,
    pub d_bar: f64,
    pub seed: u64,
    /// Resampling interval of `piecewise_random` (s).
    pub hold: f64,
    /// Frequency of `sinusoid` (Hz).
    pub frequency: f64,
}

impl DisturbanceSpec {
    pub fn zero() -> Self {
        Self {
            kind: DisturbanceKind::Zero,
            d_bar: 0.0,
            seed: 0,
            hold: DEFAULT_DISTURBANCE_HOLD,
            frequency: 1.0,
        }
    }

    pub fn piecewise_random(d_bar: f64, seed: u64) -> Self {
        Self {
            kind: DisturbanceKind::PiecewiseRandom,
            d_bar,
            seed,
            hold: DEFAULT_DISTURBANCE_HOLD,
            frequency: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_bar >= 0.0 && self.d_bar.is_finite()) {
            return Err(invalid("disturbance bound d_bar must be finite and ≥ 0"));
        }
        if !(self.hold > 0.0 && self.hold.is_finite()) {
            return Err(invalid("disturbance hold must be positive"));
        }
        if !(self.frequency >= 0.0 && self.frequency.is_finite()) {
            return Err(invalid("disturbance frequency must be finite and ≥ 0"));
        }
        Ok(())
    }

    /// Binds the disturbance to a state dimension.
    pub fn signal(&self, n: usize) -> Result<Disturbance> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let direction = unit_vector(&mut rng, n);
        let phases = DVector::from_fn(n, |_, _| rng.random::<f64>() * std::f64::consts::TAU);
        Ok(Disturbance {
            spec: self.clone(),
            n,
            direction,
            phases,
        })
    }
}

/// A [`DisturbanceSpec`] bound to a dimension; evaluation is a pure function of `t`.
#[derive(Debug, Clone)]
pub struct Disturbance {
    spec: DisturbanceSpec,
    n: usize,
    direction: DVector<f64>,
    phases: DVector<f64>,
}

impl Disturbance {
    pub fn spec(&self) -> &DisturbanceSpec {
        &self.spec
    }

    fn piece(&self, index: i64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(index as u64);
        // uniform in the d_bar-ball
        let dir = unit_vector(&mut rng, self.n);
        let radius = self.spec.d_bar * rng.random::<f64>().powf(1.0 / self.n as f64);
        dir * radius
    }

    fn at(&self, t: f64, left: bool) -> DVector<f64> {
        let s = &self.spec;
        match s.kind {
            DisturbanceKind::Zero => DVector::zeros(self.n),
            DisturbanceKind::Constant => &self.direction * s.d_bar,
            DisturbanceKind::Sinusoid => {
                let w = std::f64::consts::TAU * s.frequency;
                let amp = s.d_bar / (self.n as f64).sqrt();
                DVector::from_fn(self.n, |i, _| amp * (w * t + self.phases[i]).sin())
            }
            DisturbanceKind::PiecewiseRandom => {
                let q = t / s.hold;
                let index = if left && t > 0.0 { q.ceil() - 1.0 } else { q.floor() };
                self.piece(index.max(0.0) as i64)
            }
        }
    }
}

impl Signal for Disturbance {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, t: f64) -> DVector<f64> {
        self.at(t, false)
    }

    fn eval_left(&self, t: f64) -> DVector<f64> {
        self.at(t, true)
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
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
    fn aircraft_derivative_columns() {
        let sys = LinearSystem::aircraft();
        let dx = sys.derivative(&v(&[1.0, 0.0, 0.0]), &v(&[0.0]), &v(&[0.0; 3])).unwrap();
        assert_eq!(dx, v(&[-0.277, -17.1, 0.0]));
        let du = sys.derivative(&v(&[0.0; 3]), &v(&[1.0]), &v(&[0.0; 3])).unwrap();
        assert_eq!(du, v(&[0.0, 0.0, 6.67]));
        let dd = sys.derivative(&v(&[0.0; 3]), &v(&[0.0]), &v(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(dd, v(&[1.0, 2.0, 3.0]));
    }

    #[test]
    fn derivative_rejects_bad_dims() {
        let sys = LinearSystem::aircraft();
        assert!(matches!(
            sys.derivative(&v(&[1.0, 0.0]), &v(&[0.0]), &v(&[0.0; 3])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn rk4_constant_field_is_exact() {
        let sys = LinearSystem::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1)).unwrap();
        let c = ConstantSignal(v(&[0.5, -2.0]));
        let x = sys.rk4_step(&v(&[1.0, 1.0]), &v(&[3.0]), &c, 0.0, 0.25).unwrap();
        assert!((x - v(&[1.125, 0.5])).norm() < 1e-15);
    }

    #[test]
    fn rk4_scalar_exponential() {
        let sys = LinearSystem::new(DMatrix::from_element(1, 1, -1.0), DMatrix::zeros(1, 1)).unwrap();
        let x = sys.rk4_step(&v(&[1.0]), &v(&[0.0]), &ZeroSignal(1), 0.0, 0.1).unwrap();
        assert!((x[0] - (-0.1_f64).exp()).abs() < 1e-6);
        assert!((x[0] - 0.9048375).abs() < 1e-6);
    }

    #[test]
    fn rk4_equilibrium_and_order() {
        let sys = LinearSystem::new(DMatrix::from_element(1, 1, -1.0), DMatrix::zeros(1, 1)).unwrap();
        let z = sys.rk4_step(&v(&[0.0]), &v(&[0.0]), &ZeroSignal(1), 0.0, 0.1).unwrap();
        assert_eq!(z[0], 0.0);
        let err = |h: f64| {
            let x = sys.rk4_step(&v(&[1.0]), &v(&[0.0]), &ZeroSignal(1), 0.0, h).unwrap();
            (x[0] - (-h).exp()).abs()
        };
        // local error is O(h^5): halving h must shrink it by at least 2^4
        assert!(err(0.2) / err(0.1) >= 16.0);
    }

    #[test]
    fn rk4_rejects_nonpositive_step() {
        let sys = LinearSystem::aircraft();
        assert!(sys.rk4_step(&v(&[0.0; 3]), &v(&[0.0]), &ZeroSignal(3), 0.0, 0.0).is_err());
    }

    #[test]
    fn rk4_flags_nonfinite_state() {
        let sys = LinearSystem::new(DMatrix::from_element(1, 1, 1e308), DMatrix::zeros(1, 1)).unwrap();
        let r = sys.rk4_step(&v(&[1e308]), &v(&[0.0]), &ZeroSignal(1), 0.0, 1.0);
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn disturbance_bound_holds_on_many_draws() {
        for kind in [
            DisturbanceKind::Zero,
            DisturbanceKind::Constant,
            DisturbanceKind::Sinusoid,
            DisturbanceKind::PiecewiseRandom,
        ] {
            let spec = DisturbanceSpec { kind, ..DisturbanceSpec::piecewise_random(0.3, 11) };
            let d = spec.signal(3).unwrap();
            for i in 0..10_000 {
                let t = i as f64 * 0.00731;
                assert!(d.eval(t).norm() <= 0.3 * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn piecewise_random_is_deterministic_and_held() {
        let d = DisturbanceSpec::piecewise_random(0.1, 5).signal(3).unwrap();
        let again = DisturbanceSpec::piecewise_random(0.1, 5).signal(3).unwrap();
        assert_eq!(d.eval(0.013), again.eval(0.013));
        assert_eq!(d.eval(0.011), d.eval(0.019));
        assert_ne!(d.eval(0.009), d.eval(0.011));
        // left limit at a jump belongs to the previous piece
        assert_eq!(d.eval_left(0.02), d.eval(0.015));
        assert_eq!(d.eval(0.02), d.eval(0.025));
    }

    proptest! {
        #[test]
        fn derivative_is_linear(
            x1 in prop::collection::vec(-10.0..10.0f64, 3),
            x2 in prop::collection::vec(-10.0..10.0f64, 3),
            u1 in -5.0..5.0f64, u2 in -5.0..5.0f64,
            d1 in prop::collection::vec(-1.0..1.0f64, 3),
            d2 in prop::collection::vec(-1.0..1.0f64, 3),
        ) {
            let sys = LinearSystem::aircraft();
            let (x1, x2, d1, d2) = (v(&x1), v(&x2), v(&d1), v(&d2));
            let sum = sys.derivative(&(&x1 + &x2), &v(&[u1 + u2]), &(&d1 + &d2)).unwrap();
            let parts = sys.derivative(&x1, &v(&[u1]), &d1).unwrap()
                + sys.derivative(&x2, &v(&[u2]), &d2).unwrap();
            prop_assert!((sum - parts).norm() < 1e-10);
        }
    }
}
