//! Off-line design: gain LMI, trigger LMI and closed-form certificates.
//!
//! Stage one searches `Y ∈ ℝ^{τ×n}` and `γ > 0` with
//!
//! ```text
//! [ X1·Y + (X1·Y)ᵀ + Ω + γ·Δ·Δᵀ   Yᵀ   ]
//! [ Y                             −γ·I ]  ≺ 0,      X0·Y ≻ 0.
//! ```
//!
//! `X0·Y` must be symmetric for the second inequality to make sense, so `Y` is
//! restricted to the subspace where `X0·Y = (X0·Y)ᵀ` and written in a basis of
//! it. Stage two searches `(α, β, δ)` for the 3×3-block trigger LMI.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{stack_rows, DataMatrices, RANK_TOL};
use crate::error::{check_dims, invalid, Error, LmiStage, Result};
use crate::etm::{QuantMode, TriggerWeights};
use crate::format::{inf_as_null, matrix_rows};
use crate::linalg::{ensure_spd, lambda_max, lambda_min, numerical_rank, set_sym_block, spectral_norm, symmetrize};
use crate::lmi::{AffineLmi, LmiProblem, Objective, Status, DEFAULT_BOUND};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DesignObjective {
    /// Largest decay certificate `λ_min(PΩP)/λ_max(P)`, found by a
    /// one-dimensional search over a floor on `X0·Y`.
    #[default]
    MaxDecay,
    /// Smallest γ that keeps both gain inequalities strict.
    MinGamma,
    /// Largest common margin over the box.
    MaxMargin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TriggerObjective {
    #[default]
    MinBeta,
    MaxMargin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignOptions {
    pub omega: DMatrix<f64>,
    pub alpha_min: f64,
    /// Symmetric bound on Y coordinates, β and α.
    pub bound: f64,
    pub gamma_range: (f64, f64),
    pub delta_range: (f64, f64),
    pub design_objective: DesignObjective,
    pub trigger_objective: TriggerObjective,
    /// Re-optimize γ in the trigger LMI instead of reusing the gain-stage value.
    pub reoptimize_gamma: bool,
    /// Upper bound on `‖K‖` imposed by the max-decay search.
    pub gain_bound: Option<f64>,
}

/// Lower end of the default γ range.
pub const DEFAULT_GAMMA_FLOOR: f64 = 1e4;
/// Default `‖K‖` cap for the max-decay search.
pub const DEFAULT_GAIN_BOUND: f64 = 3.0;

impl DesignOptions {
    /// `Ω = ω·I` with the remaining defaults.
    pub fn with_omega_scale(n: usize, omega: f64) -> Self {
        Self {
            omega: DMatrix::identity(n, n) * omega,
            alpha_min: 1e-6,
            bound: DEFAULT_BOUND,
            gamma_range: (DEFAULT_GAMMA_FLOOR, 1e6),
            delta_range: (1e-3, 1e6),
            design_objective: DesignObjective::default(),
            trigger_objective: TriggerObjective::default(),
            reoptimize_gamma: false,
            gain_bound: Some(DEFAULT_GAIN_BOUND),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        check_dims("Ω", (n, n), self.omega.shape())?;
        ensure_spd(&self.omega, "Ω")?;
        let ok_range = |(lo, hi): (f64, f64)| lo > 0.0 && hi > lo && hi.is_finite();
        if !(self.alpha_min > 0.0 && self.bound > self.alpha_min && self.bound.is_finite()) {
            return Err(invalid("need 0 < α_min < bound"));
        }
        if !ok_range(self.gamma_range) || !ok_range(self.delta_range) {
            return Err(invalid("γ and δ ranges must satisfy 0 < lo < hi < ∞"));
        }
        Ok(())
    }
}

/// Stage-one solution.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSolution {
    pub y: DMatrix<f64>,
    pub gamma: f64,
    /// Margin of the Ω inequality.
    pub margin: f64,
    /// `λ_min(X0·Y)`.
    pub x0y_margin: f64,
    pub boundary_hits: usize,
}

/// Stage-two solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerSolution {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub gamma: f64,
    pub margin: f64,
}

/// Basis of `{Y : X0·Y symmetric}`, as τ×n matrices.
fn symmetric_product_basis(x0: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let (n, tau) = (x0.nrows(), x0.ncols());
    let dim = tau * n;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    // Row r of L maps vec(Y) to (X0·Y)_{ij} − (X0·Y)_{ji}; column-major vec.
    let mut l = DMatrix::zeros(pairs.len().max(1), dim);
    for (r, &(i, j)) in pairs.iter().enumerate() {
        for k in 0..tau {
            l[(r, j * tau + k)] += x0[(i, k)];
            l[(r, i * tau + k)] -= x0[(j, k)];
        }
    }
    let eig = (l.transpose() * &l).symmetric_eigen();
    let ev: &DVector<f64> = &eig.eigenvalues;
    let top = ev.amax();
    let cut = 1e-10 * top.max(f64::MIN_POSITIVE);
    let mut idx: Vec<usize> = (0..dim).filter(|&c| ev[c] <= cut).collect();
    idx.sort_by(|&a, &b| ev[a].total_cmp(&ev[b]).then(a.cmp(&b)));
    idx.iter()
        .map(|&c| DMatrix::from_column_slice(tau, n, eig.eigenvectors.column(c).as_slice()))
        .collect()
}

/// Golden-section steps of the floor search.
const FLOOR_SEARCH_STEPS: usize = 16;
/// Floor search range, relative to the unconstrained smallest `λ_max(X0·Y)`.
const FLOOR_SEARCH_RANGE: (f64, f64) = (1e-4, 1e4);

/// With `floor = Some(t)` the problem gains a scale variable `s` and
/// `t·I ⪯ X0·Y ⪯ s·I`.
fn design_problem(
    dm: &DataMatrices,
    opts: &DesignOptions,
    floor: Option<f64>,
) -> Result<(LmiProblem, Vec<DMatrix<f64>>)> {
    let (n, tau) = (dm.n(), dm.tau());
    let basis = symmetric_product_basis(&dm.x0);
    let r = basis.len();
    let g = r;
    let size = n + tau;

    let mut c = DMatrix::zeros(size, size);
    c.view_mut((0, 0), (n, n)).copy_from(&opts.omega);
    let mut main = AffineLmi::new("gain decay", c)?;
    let t = floor.unwrap_or(0.0);
    let mut pos = AffineLmi::new("X0·Y positive", DMatrix::identity(n, n) * t)?;
    for (k, yk) in basis.iter().enumerate() {
        let mut blk = DMatrix::zeros(size, size);
        let xy = &dm.x1 * yk;
        blk.view_mut((0, 0), (n, n)).copy_from(&(&xy + xy.transpose()));
        set_sym_block(&mut blk, n, 0, yk);
        main = main.term(k, blk)?;
        pos = pos.term(k, -symmetrize(&(&dm.x0 * yk)))?;
    }
    let mut gblk = DMatrix::zeros(size, size);
    gblk.view_mut((0, 0), (n, n))
        .copy_from(&(&dm.delta * dm.delta.transpose()));
    for i in n..size {
        gblk[(i, i)] = -1.0;
    }
    main = main.term(g, gblk)?;

    let mut prob = LmiProblem::new(r + 1 + usize::from(floor.is_some()));
    for k in 0..r {
        prob.bound(k, -opts.bound, opts.bound);
    }
    prob.bound(g, opts.gamma_range.0, opts.gamma_range.1);
    prob.push(main.strict()).push(pos.strict());
    if let (Some(t), Some(k_max)) = (floor.filter(|&t| t > 0.0), opts.gain_bound) {
        // [k_max²·t·I, U0·Y; (U0·Y)ᵀ, X0·Y] ⪰ 0 gives ‖K‖ ≤ k_max once X0·Y ⪰ t·I.
        let m = dm.m();
        let mut c = DMatrix::zeros(m + n, m + n);
        c.view_mut((0, 0), (m, m)).fill_diagonal(-k_max * k_max * t);
        let mut gain = AffineLmi::new("gain bounded", c)?;
        for (k, yk) in basis.iter().enumerate() {
            let mut blk = DMatrix::zeros(m + n, m + n);
            blk.view_mut((m, m), (n, n)).copy_from(&-symmetrize(&(&dm.x0 * yk)));
            set_sym_block(&mut blk, 0, m, &-(&dm.u0 * yk));
            gain = gain.term(k, blk)?;
        }
        prob.push(gain);
    }
    if floor.is_some() {
        let mut cap = AffineLmi::new("X0·Y bounded", DMatrix::zeros(n, n))?;
        for (k, yk) in basis.iter().enumerate() {
            cap = cap.term(k, symmetrize(&(&dm.x0 * yk)))?;
        }
        cap = cap.term(g + 1, -DMatrix::identity(n, n))?;
        prob.bound(g + 1, 1e-9, opts.bound);
        prob.push(cap);
    }
    Ok((prob, basis))
}

fn solve_design_once(
    dm: &DataMatrices,
    opts: &DesignOptions,
    floor: Option<f64>,
    objective: DesignObjective,
) -> Result<DesignSolution> {
    let (prob, basis) = design_problem(dm, opts, floor)?;
    let g = basis.len();
    let objective = match (floor, objective) {
        (Some(_), _) => Objective::Minimize(g + 1),
        (None, DesignObjective::MaxMargin) => Objective::MaxMargin,
        (None, _) => Objective::Minimize(g),
    };
    let res = prob.solve(objective)?;
    match res.status {
        Status::Feasible => {}
        Status::Infeasible => {
            return Err(Error::Infeasible {
                stage: LmiStage::Design,
                margin: res.margin,
            })
        }
        Status::MaxIter => return Err(Error::SolverLimit { stage: LmiStage::Design }),
    }
    let v = &res.variables;
    let mut y = DMatrix::zeros(dm.tau(), dm.n());
    for (k, yk) in basis.iter().enumerate() {
        y += yk * v[k];
    }
    let hits = res.boundary_hits.iter().filter(|&&i| i < g).count();
    Ok(DesignSolution {
        margin: prob.constraints[0].margin_at(v),
        x0y_margin: lambda_min(&symmetrize(&(&dm.x0 * &y))),
        y,
        gamma: v[g],
        boundary_hits: hits,
    })
}

/// `λ_min(PΩP)/λ_max(P)` for `P = (X0·Y)⁻¹`, or −∞ when `P` is unusable.
fn decay_score(dm: &DataMatrices, omega: &DMatrix<f64>, sol: &DesignSolution) -> f64 {
    match compute_gain(dm, &sol.y) {
        Ok((_, p)) => lambda_min(&symmetrize(&(&p * omega * &p))) / lambda_max(&p),
        Err(_) => f64::NEG_INFINITY,
    }
}

fn max_decay_design(dm: &DataMatrices, opts: &DesignOptions) -> Result<DesignSolution> {
    let first = solve_design_once(dm, opts, Some(0.0), DesignObjective::MaxDecay)?;
    let s0 = lambda_max(&symmetrize(&(&dm.x0 * &first.y)));
    let mut best = (decay_score(dm, &opts.omega, &first), first);
    let eval = |u: f64, best: &mut (f64, DesignSolution)| -> f64 {
        match solve_design_once(dm, opts, Some(u.exp()), DesignObjective::MaxDecay) {
            Ok(sol) => {
                let score = decay_score(dm, &opts.omega, &sol);
                log::debug!("floor {:.3e}: decay score {score:.3e}", u.exp());
                if score > best.0 {
                    *best = (score, sol);
                }
                score
            }
            Err(e) => {
                log::debug!("floor {:.3e}: {e}", u.exp());
                f64::NEG_INFINITY
            }
        }
    };
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = ((s0 * FLOOR_SEARCH_RANGE.0).ln(), (s0 * FLOOR_SEARCH_RANGE.1).ln());
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = eval(c, &mut best);
    let mut fd = eval(d, &mut best);
    for _ in 2..FLOOR_SEARCH_STEPS {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = eval(c, &mut best);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = eval(d, &mut best);
        }
    }
    Ok(best.1)
}

/// Solves the gain-synthesis LMI pair for `(Y, γ)`.
pub fn solve_design_lmi(dm: &DataMatrices, opts: &DesignOptions) -> Result<DesignSolution> {
    opts.validate(dm.n())?;
    let sol = match opts.design_objective {
        DesignObjective::MaxDecay => max_decay_design(dm, opts)?,
        obj => solve_design_once(dm, opts, None, obj)?,
    };
    if sol.boundary_hits > 0 {
        log::warn!("{} Y coordinates finished on the search box", sol.boundary_hits);
    }
    Ok(sol)
}

/// `K = U0·Y·(X0·Y)⁻¹` and `P = (X0·Y)⁻¹`.
pub fn compute_gain(dm: &DataMatrices, y: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_dims("Y", (dm.tau(), dm.n()), y.shape())?;
    let x0y = &dm.x0 * y;
    let p = x0y.try_inverse().ok_or(Error::Singular("X0·Y"))?;
    if !p.iter().all(|v| v.is_finite()) {
        return Err(Error::Singular("X0·Y"));
    }
    if crate::linalg::max_asymmetry(&p) > 1e-9 * p.norm().max(1.0) {
        return Err(Error::NotPositiveDefinite("(X0·Y)⁻¹"));
    }
    let p = symmetrize(&p);
    ensure_spd(&p, "(X0·Y)⁻¹")?;
    let k = &dm.u0 * (y * &p);
    Ok((k, p))
}

/// Minimum-norm `Q` with `[U0; X0]·Q = [K; 0]`.
pub fn solve_q(dm: &DataMatrices, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, m) = (dm.n(), dm.m());
    check_dims("K", (m, n), k.shape())?;
    let s = stack_rows(&dm.u0, &dm.x0);
    let rank = numerical_rank(&s, RANK_TOL);
    if rank < n + m {
        return Err(Error::RankDeficient { rank, required: n + m });
    }
    let rhs = stack_rows(k, &DMatrix::zeros(n, n));
    let svd = s.clone().svd(true, true);
    let eps = RANK_TOL * svd.singular_values.max();
    let q = svd.solve(&rhs, eps).map_err(|e| invalid(e.to_string()))?;
    let residual = (&s * &q - &rhs).norm();
    let tol = 1e-8 * (1.0 + k.norm());
    if residual > tol {
        return Err(Error::Verification {
            what: "[U0; X0]·Q = [K; 0]",
            residual,
            tolerance: tol,
        });
    }
    Ok(q)
}

/// `G = Y·P`, checked against `U0·G = K` and `X0·G = I`.
pub fn compute_g(dm: &DataMatrices, y: &DMatrix<f64>, p: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let g = y * p;
    let n = dm.n();
    let r1 = (&dm.u0 * &g - k).norm();
    let t1 = 1e-8 * k.norm().max(f64::MIN_POSITIVE);
    if r1 > t1 {
        return Err(Error::Verification {
            what: "U0·G = K",
            residual: r1,
            tolerance: t1,
        });
    }
    let r2 = (&dm.x0 * &g - DMatrix::identity(n, n)).norm();
    if r2 > 1e-8 {
        return Err(Error::Verification {
            what: "X0·G = I",
            residual: r2,
            tolerance: 1e-8,
        });
    }
    Ok(g)
}

/// Constant and coefficient blocks of the trigger LMI in `(α, β, δ, γ)`.
struct TriggerBlocks {
    alpha: DMatrix<f64>,
    beta: DMatrix<f64>,
    delta: DMatrix<f64>,
    gamma: DMatrix<f64>,
}

fn trigger_blocks(
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    x1: &DMatrix<f64>,
    delta_mat: &DMatrix<f64>,
    omega: &DMatrix<f64>,
) -> TriggerBlocks {
    let n = p.nrows();
    let size = 3 * n;
    let eye = DMatrix::<f64>::identity(n, n);
    let mut a = DMatrix::zeros(size, size);
    a.view_mut((0, 0), (n, n)).copy_from(&eye);
    let mut b = DMatrix::zeros(size, size);
    b.view_mut((n, n), (n, n)).copy_from(&(-&eye));
    let mut d = DMatrix::zeros(size, size);
    d.view_mut((0, 0), (n, n))
        .copy_from(&(symmetrize(&(p * omega * p)) * (-1.0 / 8.0)));
    set_sym_block(&mut d, 0, n, &(p * x1 * q));
    set_sym_block(&mut d, 0, 2 * n, &(p * delta_mat));
    let mut g = DMatrix::zeros(size, size);
    g.view_mut((n, n), (n, n))
        .copy_from(&symmetrize(&(q.transpose() * q)));
    g.view_mut((2 * n, 2 * n), (n, n)).copy_from(&(-&eye));
    TriggerBlocks {
        alpha: a,
        beta: b,
        delta: d,
        gamma: g,
    }
}

/// The 3n×3n trigger matrix evaluated at a point.
#[allow(clippy::too_many_arguments)]
pub fn trigger_matrix(
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    x1: &DMatrix<f64>,
    delta_mat: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    alpha: f64,
    beta: f64,
    delta: f64,
    gamma: f64,
) -> DMatrix<f64> {
    let t = trigger_blocks(p, q, x1, delta_mat, omega);
    t.alpha * alpha + t.beta * beta + t.delta * delta + t.gamma * gamma
}

/// Solves the trigger LMI for `(α, β, δ)` (and γ when re-optimized).
#[allow(clippy::too_many_arguments)]
pub fn solve_trigger_lmi(
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    x1: &DMatrix<f64>,
    delta_mat: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    gamma: f64,
    opts: &DesignOptions,
) -> Result<TriggerSolution> {
    let n = p.nrows();
    check_dims("Q", (x1.ncols(), n), q.shape())?;
    check_dims("Δ", (n, n), delta_mat.shape())?;
    ensure_spd(p, "P")?;
    ensure_spd(omega, "Ω")?;
    let t = trigger_blocks(p, q, x1, delta_mat, omega);
    let free_gamma = opts.reoptimize_gamma;
    let size = 3 * n;
    let constant = if free_gamma { DMatrix::zeros(size, size) } else { &t.gamma * gamma };
    let mut lmi = AffineLmi::new("trigger", constant)?
        .term(0, t.alpha)?
        .term(1, t.beta)?
        .term(2, t.delta)?;
    let mut prob = LmiProblem::new(if free_gamma { 4 } else { 3 });
    if free_gamma {
        lmi = lmi.term(3, t.gamma)?;
        prob.bound(3, opts.gamma_range.0, opts.gamma_range.1);
    }
    prob.bound(0, opts.alpha_min, opts.bound)
        .bound(1, opts.alpha_min, opts.bound)
        .bound(2, opts.delta_range.0, opts.delta_range.1)
        .push(lmi);
    let objective = match opts.trigger_objective {
        TriggerObjective::MinBeta => Objective::Minimize(1),
        TriggerObjective::MaxMargin => Objective::MaxMargin,
    };
    let res = prob.solve(objective)?;
    match res.status {
        Status::Feasible => {}
        Status::Infeasible => {
            return Err(Error::Infeasible {
                stage: LmiStage::Trigger,
                margin: res.margin,
            })
        }
        Status::MaxIter => return Err(Error::SolverLimit { stage: LmiStage::Trigger }),
    }
    let v = &res.variables;
    Ok(TriggerSolution {
        alpha: v[0],
        beta: v[1],
        delta: v[2],
        gamma: if free_gamma { v[3] } else { gamma },
        margin: res.margin,
    })
}

/// Closed-form constants from the stability and inter-event-time proofs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificates {
    /// Decay rate λ̄ of V between events.
    pub lambda_bar: f64,
    /// Disturbance gain ι.
    pub iota: f64,
    /// ε̄ᵤ(θ) = eps_u_coeff·θ².
    pub eps_u_coeff: f64,
    pub lambda_u: f64,
    pub lambda_l: f64,
    /// Largest logarithmic-quantizer θ covered by the stability proof.
    #[serde(with = "inf_as_null")]
    pub theta_max: f64,
}

impl Certificates {
    pub fn eps_u(&self, theta: f64) -> f64 {
        self.eps_u_coeff * theta * theta
    }

    /// The decay rate that applies in the given mode.
    pub fn decay_rate(&self, mode: QuantMode) -> f64 {
        match mode {
            QuantMode::Plain => self.lambda_bar,
            QuantMode::Uniform => self.lambda_u,
            QuantMode::Logarithmic => self.lambda_l,
        }
    }
}

/// Lower bound on inter-event times: `f̄ / (β·ē² + f̄)`.
pub fn miet_bound(f_bar: f64, beta: f64, e_bar: f64) -> f64 {
    f_bar / (beta * e_bar * e_bar + f_bar)
}

#[allow(clippy::too_many_arguments)]
pub fn certificates(
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    x1: &DMatrix<f64>,
    delta_mat: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    alpha: f64,
    delta: f64,
    n: usize,
) -> Result<Certificates> {
    ensure_spd(p, "P")?;
    ensure_spd(omega, "Ω")?;
    if !(alpha > 0.0 && delta > 0.0) {
        return Err(invalid("α and δ must be positive"));
    }
    let pop = symmetrize(&(p * omega * p));
    let lm_pop = lambda_min(&pop);
    let lmax_p = lambda_max(p);
    let iota = 8.0 * lambda_max(&symmetrize(&(p * p))) / lm_pop;
    let qn2 = spectral_norm(q).powi(2);
    let data2 = spectral_norm(x1).powi(2) + spectral_norm(delta_mat).powi(2);
    let nf = n as f64;
    let spread = iota * qn2 * data2;
    let theta_max = if spread > 0.0 {
        2.0 * (1.0 + 0.25 * (lm_pop / spread).sqrt()).ln()
    } else {
        f64::INFINITY
    };
    Ok(Certificates {
        lambda_bar: (0.75 * lm_pop / lmax_p).min(1.0),
        iota,
        eps_u_coeff: iota * nf * qn2 * data2 / 2.0 + alpha * nf / (4.0 * delta),
        lambda_u: (0.625 * lm_pop / lmax_p).min(1.0),
        lambda_l: (0.5 * lm_pop / lmax_p).min(1.0),
        theta_max,
    })
}

/// Complete off-line design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub n: usize,
    pub m: usize,
    pub tau: usize,
    #[serde(with = "matrix_rows")]
    pub k: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub y: DMatrix<f64>,
    pub gamma: f64,
    #[serde(with = "matrix_rows")]
    pub p: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub q: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub g: DMatrix<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    /// γ used in the trigger LMI (equal to `gamma` unless re-optimized).
    pub trigger_gamma: f64,
    #[serde(with = "matrix_rows")]
    pub omega: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub x1: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub delta_matrix: DMatrix<f64>,
    pub design_margin: f64,
    pub x0y_margin: f64,
    pub trigger_margin: f64,
    pub certificates: Certificates,
    pub gamma_reoptimized: bool,
    pub design_objective: DesignObjective,
    pub trigger_objective: TriggerObjective,
}

impl SynthesisResult {
    pub fn weights(&self, mode: QuantMode, theta: f64) -> TriggerWeights {
        TriggerWeights::new(self.alpha, self.beta, mode, theta)
    }

    /// `V = xᵀPx + f/δ`.
    pub fn lyapunov(&self, x: &DVector<f64>, f: f64) -> f64 {
        (x.transpose() * &self.p * x)[(0, 0)] + f / self.delta
    }

    /// The trigger LMI matrix at the stored solution.
    pub fn trigger_matrix(&self) -> DMatrix<f64> {
        trigger_matrix(
            &self.p,
            &self.q,
            &self.x1,
            &self.delta_matrix,
            &self.omega,
            self.alpha,
            self.beta,
            self.delta,
            self.trigger_gamma,
        )
    }

    /// Shape and positivity checks after loading from a file.
    pub fn validate(&self) -> Result<()> {
        let (n, m, tau) = (self.n, self.m, self.tau);
        check_dims("K", (m, n), self.k.shape())?;
        check_dims("P", (n, n), self.p.shape())?;
        check_dims("Ω", (n, n), self.omega.shape())?;
        check_dims("Δ", (n, n), self.delta_matrix.shape())?;
        check_dims("Q", (tau, n), self.q.shape())?;
        check_dims("G", (tau, n), self.g.shape())?;
        check_dims("Y", (tau, n), self.y.shape())?;
        check_dims("X1", (n, tau), self.x1.shape())?;
        ensure_spd(&self.p, "P")?;
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.delta > 0.0 && self.gamma > 0.0) {
            return Err(invalid("α, β, δ and γ must be positive"));
        }
        Ok(())
    }
}

/// Residuals that need the ground truth (A, B, D0); only the simulator side
/// can compute them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthChecks {
    /// `‖(A+BK) − (X1−D0)·G‖`.
    pub closed_loop_residual: f64,
    pub closed_loop_norm: f64,
    /// `λ_max((X1−D0)·Y + Yᵀ(X1−D0)ᵀ + Ω)`.
    pub perturbed_decay_lambda_max: f64,
    /// `λ_max(δ·Λ − Φ)` with Λ built from the true D0.
    pub trigger_lambda_max: f64,
    /// Frobenius scale of `δ·Λ` and `Φ`.
    pub trigger_scale: f64,
    pub spectral_abscissa: f64,
}

pub fn ground_truth_checks(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    d0: &DMatrix<f64>,
    s: &SynthesisResult,
) -> Result<GroundTruthChecks> {
    let n = s.n;
    check_dims("D0", s.x1.shape(), d0.shape())?;
    let acl = a + b * &s.k;
    let xd = &s.x1 - d0;
    let closed_loop_residual = spectral_norm(&(&acl - &xd * &s.g));
    let xy = &xd * &s.y;
    let perturbed = symmetrize(&(&xy + xy.transpose() + &s.omega));

    let mut lam = DMatrix::zeros(2 * n, 2 * n);
    lam.view_mut((0, 0), (n, n))
        .copy_from(&(symmetrize(&(&s.p * &s.omega * &s.p)) * (-1.0 / 8.0)));
    set_sym_block(&mut lam, 0, n, &(&s.p * &xd * &s.q));
    let phi = s.weights(QuantMode::Plain, 0.0).matrix(n);
    let dl = lam * s.delta;
    let trigger_scale = dl.norm().max(phi.norm());
    Ok(GroundTruthChecks {
        closed_loop_residual,
        closed_loop_norm: spectral_norm(&acl),
        perturbed_decay_lambda_max: lambda_max(&perturbed),
        trigger_lambda_max: lambda_max(&(dl - phi)),
        trigger_scale,
        spectral_abscissa: crate::linalg::spectral_abscissa(&acl)?,
    })
}

/// Runs both design stages and evaluates the certificates.
pub fn synthesize(dm: &DataMatrices, opts: &DesignOptions) -> Result<SynthesisResult> {
    let (n, m, tau) = (dm.n(), dm.m(), dm.tau());
    opts.validate(n)?;
    let rank = crate::data::stacked_rank(dm);
    if rank < n + m {
        return Err(Error::RankDeficient { rank, required: n + m });
    }
    let design = solve_design_lmi(dm, opts)?;
    let (k, p) = compute_gain(dm, &design.y)?;
    let q = solve_q(dm, &k)?;
    let g = compute_g(dm, &design.y, &p, &k)?;
    let trig = solve_trigger_lmi(&p, &q, &dm.x1, &dm.delta, &opts.omega, design.gamma, opts)?;
    let certificates = certificates(&p, &q, &dm.x1, &dm.delta, &opts.omega, trig.alpha, trig.delta, n)?;
    Ok(SynthesisResult {
        n,
        m,
        tau,
        k,
        y: design.y,
        gamma: design.gamma,
        p,
        q,
        g,
        alpha: trig.alpha,
        beta: trig.beta,
        delta: trig.delta,
        trigger_gamma: trig.gamma,
        omega: opts.omega.clone(),
        x1: dm.x1.clone(),
        delta_matrix: dm.delta.clone(),
        design_margin: design.margin,
        x0y_margin: design.x0y_margin,
        trigger_margin: trig.margin,
        certificates,
        gamma_reoptimized: opts.reoptimize_gamma,
        design_objective: opts.design_objective,
        trigger_objective: opts.trigger_objective,
    })
}
