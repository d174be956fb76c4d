//! Small dense LMI feasibility solver.
//!
//! A constraint is an affine symmetric matrix map
//! `M(v) = C + Σ v_i·A_i` that must satisfy `M(v) ⪯ −ε·I`, where `ε` is the
//! constraint's required margin. Variables live in a finite box.
//!
//! The solver is a primal log-barrier interior-point method with Newton steps.
//! Phase one maximizes a common margin `t` with `M_j(v) + ε_j·I + t·I ⪯ 0`;
//! the problem is feasible iff that margin can be made positive. Phase two,
//! when an objective other than the margin is requested, starts from the
//! phase-one point and optimizes the objective over the interior.
//!
//! Problems here are tiny (blocks of a dozen rows, a few dozen variables), so
//! dense Hessians are assembled exactly at every step.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::linalg::{ensure_symmetric, lambda_max};

/// Relative factor for strict inequalities: `≺ 0` becomes `⪯ −STRICT_REL·scale·I`.
pub const STRICT_REL: f64 = 1e-6;
/// Default symmetric bound on unbounded variables.
pub const DEFAULT_BOUND: f64 = 1e6;

/// An affine matrix-valued map that must be negative semidefinite with a margin.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLmi {
    pub label: String,
    pub constant: DMatrix<f64>,
    pub terms: Vec<(usize, DMatrix<f64>)>,
    /// Required margin ε: the constraint is `M(v) ⪯ −ε·I`.
    pub required_margin: f64,
}

impl AffineLmi {
    pub fn new(label: impl Into<String>, constant: DMatrix<f64>) -> Result<Self> {
        ensure_symmetric(&constant)?;
        Ok(Self {
            label: label.into(),
            constant,
            terms: Vec::new(),
            required_margin: 0.0,
        })
    }

    pub fn size(&self) -> usize {
        self.constant.nrows()
    }

    /// Adds `v[var]·block`. Blocks for the same variable accumulate.
    pub fn term(mut self, var: usize, block: DMatrix<f64>) -> Result<Self> {
        if block.shape() != self.constant.shape() {
            return Err(invalid(format!(
                "LMI `{}`: block is {}×{}, expected {}×{}",
                self.label,
                block.nrows(),
                block.ncols(),
                self.size(),
                self.size()
            )));
        }
        ensure_symmetric(&block)?;
        match self.terms.iter_mut().find(|(v, _)| *v == var) {
            Some((_, b)) => *b += block,
            None => self.terms.push((var, block)),
        }
        Ok(self)
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.required_margin = margin.max(0.0);
        self
    }

    /// Strict inequality: margin `STRICT_REL · scale`.
    pub fn strict(self) -> Self {
        let m = STRICT_REL * self.scale();
        self.with_margin(m)
    }

    /// Largest Frobenius norm over the constant and coefficient blocks.
    pub fn scale(&self) -> f64 {
        self.terms
            .iter()
            .map(|(_, b)| b.norm())
            .fold(self.constant.norm(), f64::max)
    }

    pub fn evaluate(&self, v: &[f64]) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (i, b) in &self.terms {
            m += b * v[*i];
        }
        m
    }

    /// Largest `t` with `M(v) ⪯ −t·I`.
    pub fn margin_at(&self, v: &[f64]) -> f64 {
        -lambda_max(&self.evaluate(v))
    }

    /// Multiplies every block by `c > 0` (the verdict is scale invariant).
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            label: self.label.clone(),
            constant: &self.constant * c,
            terms: self.terms.iter().map(|(i, b)| (*i, b * c)).collect(),
            required_margin: self.required_margin * c,
        }
    }
}

/// `λ_max(M) ≤ −margin`.
pub fn is_negative_semidefinite(m: &DMatrix<f64>, margin: f64) -> Result<bool> {
    ensure_symmetric(m)?;
    Ok(lambda_max(m) <= -margin)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    MaxMargin,
    Minimize(usize),
    Maximize(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Feasible,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityResult {
    pub variables: Vec<f64>,
    /// `min_j −λ_max(M_j(v))` over all constraints.
    pub margin: f64,
    pub status: Status,
    /// Variables that finished within `1e-6` (relative) of a bound.
    pub boundary_hits: Vec<usize>,
    pub newton_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Relative duality-gap target of the barrier path.
    pub gap_tol: f64,
    pub max_newton: usize,
    /// Barrier weight growth per outer iteration.
    pub mu: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            gap_tol: 1e-9,
            max_newton: 2_000,
            mu: 10.0,
        }
    }
}

/// A set of LMIs over a common box-bounded variable vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiProblem {
    pub bounds: Vec<(f64, f64)>,
    pub constraints: Vec<AffineLmi>,
    pub settings: SolverSettings,
}

impl LmiProblem {
    pub fn new(num_vars: usize) -> Self {
        Self {
            bounds: vec![(-DEFAULT_BOUND, DEFAULT_BOUND); num_vars],
            constraints: Vec::new(),
            settings: SolverSettings::default(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.bounds.len()
    }

    pub fn bound(&mut self, var: usize, lo: f64, hi: f64) -> &mut Self {
        self.bounds[var] = (lo, hi);
        self
    }

    pub fn push(&mut self, lmi: AffineLmi) -> &mut Self {
        self.constraints.push(lmi);
        self
    }

    fn validate(&self) -> Result<()> {
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(invalid(format!("variable {i}: bounds [{lo}, {hi}] must be finite with lo < hi")));
            }
        }
        for c in &self.constraints {
            if let Some((i, _)) = c.terms.iter().find(|(i, _)| *i >= self.num_vars()) {
                return Err(invalid(format!("LMI `{}` references unknown variable {i}", c.label)));
            }
        }
        Ok(())
    }

    /// Worst margin over the constraints at `v`, each offset by its required margin.
    pub fn shifted_margin(&self, v: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.margin_at(v) - c.required_margin)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn solve(&self, objective: Objective) -> Result<FeasibilityResult> {
        self.validate()?;
        if let Objective::Minimize(i) | Objective::Maximize(i) = objective {
            if i >= self.num_vars() {
                return Err(invalid(format!("objective references unknown variable {i}")));
            }
        }
        let mut steps = 0usize;
        let v0: Vec<f64> = self.bounds.iter().map(|&(lo, hi)| interior_start(lo, hi)).collect();

        if self.constraints.is_empty() {
            return Ok(self.finish(v0, Status::Feasible, steps));
        }

        // Phase one: maximize the common margin t.
        let p = self.num_vars();
        let m0 = self.shifted_margin(&v0);
        let t0 = m0 - 1.0 - 1e-3 * m0.abs();
        let mut w: Vec<f64> = v0.iter().copied().chain(std::iter::once(t0)).collect();
        let mut cost = vec![0.0; p + 1];
        cost[p] = -1.0;
        let stop_early = objective != Objective::MaxMargin;
        let phase1 = Barrier { problem: self, with_margin: true };
        let outcome = phase1.run(&mut w, &cost, &mut steps, |w, gap| {
            let t = w[p];
            if t + gap < 0.0 {
                Some(PathStop::Infeasible)
            } else if stop_early && t > 0.0 {
                Some(PathStop::Done)
            } else {
                None
            }
        });
        let v: Vec<f64> = w[..p].to_vec();
        match outcome {
            PathOutcome::Stopped(PathStop::Infeasible) => return Ok(self.finish(v, Status::Infeasible, steps)),
            PathOutcome::IterationCap => {
                let status = if self.shifted_margin(&v) > 0.0 { Status::Feasible } else { Status::MaxIter };
                if objective == Objective::MaxMargin || status == Status::MaxIter {
                    return Ok(self.finish(v, status, steps));
                }
            }
            PathOutcome::Converged | PathOutcome::Stopped(PathStop::Done) => {}
        }
        if self.shifted_margin(&v) <= 0.0 {
            return Ok(self.finish(v, Status::Infeasible, steps));
        }
        if objective == Objective::MaxMargin {
            return Ok(self.finish(v, Status::Feasible, steps));
        }

        // Phase two: optimize the requested variable over the interior.
        let anchor = v.clone();
        let mut w = v;
        let mut cost = vec![0.0; p];
        match objective {
            Objective::Minimize(i) => cost[i] = 1.0,
            Objective::Maximize(i) => cost[i] = -1.0,
            Objective::MaxMargin => unreachable!(),
        }
        let phase2 = Barrier { problem: self, with_margin: false };
        let outcome = phase2.run(&mut w, &cost, &mut steps, |_, _| None);
        if self.shifted_margin(&w) <= 0.0 {
            // the path ends within rounding of the boundary; retreat toward the phase-one point
            for k in (1..=12).rev() {
                let s = 1.0 - 10f64.powi(-k);
                let trial: Vec<f64> = anchor.iter().zip(&w).map(|(a, b)| a + s * (b - a)).collect();
                if self.shifted_margin(&trial) > 0.0 {
                    w = trial;
                    break;
                }
            }
        }
        let status = match outcome {
            PathOutcome::IterationCap if self.shifted_margin(&w) <= 0.0 => Status::MaxIter,
            _ if self.shifted_margin(&w) > 0.0 => Status::Feasible,
            _ => Status::MaxIter,
        };
        Ok(self.finish(w, status, steps))
    }

    fn finish(&self, v: Vec<f64>, status: Status, newton_steps: usize) -> FeasibilityResult {
        let margin = self
            .constraints
            .iter()
            .map(|c| c.margin_at(&v))
            .fold(f64::INFINITY, f64::min);
        let boundary_hits = self
            .bounds
            .iter()
            .enumerate()
            .filter(|(i, &(lo, hi))| {
                let tol = 1e-6 * (hi - lo).abs().max(1.0).min(1.0 + lo.abs().max(hi.abs()));
                v[*i] - lo <= tol || hi - v[*i] <= tol
            })
            .map(|(i, _)| i)
            .collect();
        FeasibilityResult {
            variables: v,
            margin,
            status,
            boundary_hits,
            newton_steps,
        }
    }
}

fn interior_start(lo: f64, hi: f64) -> f64 {
    if lo < 0.0 && hi > 0.0 {
        let span = hi.min(-lo);
        // stay well inside so the box barrier starts flat
        0.0_f64.clamp(lo + 1e-3 * span, hi - 1e-3 * span)
    } else if lo > 0.0 && hi / lo > 1e3 {
        (lo * hi).sqrt()
    } else if hi < 0.0 && lo / hi > 1e3 {
        -(lo * hi).sqrt()
    } else {
        0.5 * (lo + hi)
    }
}

enum PathStop {
    Done,
    Infeasible,
}

enum PathOutcome {
    Converged,
    Stopped(PathStop),
    IterationCap,
}

/// Log-barrier over the box and the LMIs; optionally with the extra margin
/// variable `t` appended to the variable vector.
struct Barrier<'a> {
    problem: &'a LmiProblem,
    with_margin: bool,
}

struct Local {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

impl Barrier<'_> {
    fn dim(&self) -> usize {
        self.problem.num_vars() + usize::from(self.with_margin)
    }

    /// Barrier degree (sum of block sizes plus two per box variable).
    fn degree(&self) -> f64 {
        let lmis: usize = self.problem.constraints.iter().map(AffineLmi::size).sum();
        (lmis + 2 * self.problem.num_vars()) as f64
    }

    /// Slack matrix `S = −(M + ε·I + t·I)`.
    fn slack(&self, c: &AffineLmi, w: &[f64]) -> DMatrix<f64> {
        let t = if self.with_margin { w[self.problem.num_vars()] } else { 0.0 };
        let mut s = -c.evaluate(w);
        for i in 0..s.nrows() {
            s[(i, i)] -= c.required_margin + t;
        }
        s
    }

    /// Barrier value only; `None` outside the domain.
    fn value(&self, w: &[f64]) -> Option<f64> {
        let mut phi = 0.0;
        for (i, &(lo, hi)) in self.problem.bounds.iter().enumerate() {
            let (a, b) = (w[i] - lo, hi - w[i]);
            if !(a > 0.0 && b > 0.0) {
                return None;
            }
            phi -= a.ln() + b.ln();
        }
        for c in &self.problem.constraints {
            let chol = Cholesky::new(self.slack(c, w))?;
            let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
            if !logdet.is_finite() {
                return None;
            }
            phi -= logdet;
        }
        Some(phi)
    }

    fn local(&self, w: &[f64]) -> Option<Local> {
        let p = self.problem.num_vars();
        let dim = self.dim();
        let value = self.value(w)?;
        let mut grad = DVector::zeros(dim);
        let mut hess = DMatrix::zeros(dim, dim);
        for (i, &(lo, hi)) in self.problem.bounds.iter().enumerate() {
            let (a, b) = (w[i] - lo, hi - w[i]);
            grad[i] += -1.0 / a + 1.0 / b;
            hess[(i, i)] += 1.0 / (a * a) + 1.0 / (b * b);
        }
        for c in &self.problem.constraints {
            let sinv = Cholesky::new(self.slack(c, w))?.inverse();
            // ∂S/∂w_k = −B_k, so ∇(−log det S)_k = tr(S⁻¹B_k) and
            // ∇²_kl = tr(S⁻¹B_k S⁻¹B_l).
            let mut blocks: Vec<(usize, DMatrix<f64>)> =
                c.terms.iter().map(|(i, b)| (*i, &sinv * b)).collect();
            if self.with_margin {
                blocks.push((p, sinv.clone()));
            }
            for (a, (ia, wa)) in blocks.iter().enumerate() {
                grad[*ia] += wa.trace();
                for (ib, wb) in blocks.iter().skip(a) {
                    let h = trace_of_product(wa, wb);
                    hess[(*ia, *ib)] += h;
                    if ia != ib {
                        hess[(*ib, *ia)] += h;
                    }
                }
            }
        }
        Some(Local { value, grad, hess })
    }

    fn run<F>(&self, w: &mut Vec<f64>, cost: &[f64], steps: &mut usize, mut stop: F) -> PathOutcome
    where
        F: FnMut(&[f64], f64) -> Option<PathStop>,
    {
        let settings = self.problem.settings;
        let degree = self.degree();
        let cost = DVector::from_column_slice(cost);
        let objective = |w: &[f64]| cost.dot(&DVector::from_column_slice(w));
        let mut weight = 1.0 / objective(w).abs().max(1.0);
        loop {
            // centering: minimize weight·cᵀw + φ(w)
            let mut inner = 0;
            loop {
                if *steps >= settings.max_newton {
                    return PathOutcome::IterationCap;
                }
                let Some(local) = self.local(w) else {
                    return PathOutcome::IterationCap;
                };
                *steps += 1;
                inner += 1;
                let g = &cost * weight + &local.grad;
                let dw = newton_direction(&local.hess, &g);
                let decrement = -g.dot(&dw);
                if !(decrement.is_finite()) || decrement <= 0.0 {
                    break;
                }
                if decrement / 2.0 <= 1e-10 {
                    break;
                }
                let f0 = weight * objective(w) + local.value;
                let mut step = 1.0;
                let mut accepted = false;
                while step > 1e-14 {
                    let trial: Vec<f64> = w.iter().zip(dw.iter()).map(|(a, d)| a + step * d).collect();
                    if let Some(phi) = self.value(&trial) {
                        let f1 = weight * objective(&trial) + phi;
                        if f1 <= f0 - 0.25 * step * decrement {
                            *w = trial;
                            accepted = true;
                            break;
                        }
                    }
                    step *= 0.5;
                }
                if !accepted || inner > 200 {
                    break;
                }
            }
            let gap = degree / weight;
            if let Some(s) = stop(w, gap) {
                return PathOutcome::Stopped(s);
            }
            if gap <= settings.gap_tol * objective(w).abs().max(1.0) {
                return PathOutcome::Converged;
            }
            weight *= settings.mu;
        }
    }
}

fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += a[(i, j)] * b[(j, i)];
        }
    }
    s
}

/// Solves `H·d = −g` after a Jacobi rescaling, adding a ridge if `H` is
/// numerically singular.
fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let dim = h.nrows();
    let d = DVector::from_fn(dim, |i, _| {
        let hii = h[(i, i)];
        if hii > 0.0 && hii.is_finite() {
            1.0 / hii.sqrt()
        } else {
            1.0
        }
    });
    let hs = DMatrix::from_fn(dim, dim, |i, j| d[i] * h[(i, j)] * d[j]);
    let gs = g.component_mul(&d);
    let mut ridge = 0.0;
    for _ in 0..12 {
        let mut hr = hs.clone();
        for i in 0..dim {
            hr[(i, i)] += ridge;
        }
        if let Some(ch) = Cholesky::new(hr) {
            let y = ch.solve(&(-&gs));
            if y.iter().all(|v| v.is_finite()) {
                return y.component_mul(&d);
            }
        }
        ridge = if ridge == 0.0 { 1e-14 } else { ridge * 100.0 };
    }
    -gs.component_mul(&d)
}
