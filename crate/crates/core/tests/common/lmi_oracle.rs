//! Brute-force grid oracle for small LMI feasibility problems, plus a seeded
//! generator of random instances whose verdict is unambiguous at grid
//! resolution.

use detec_core::{AffineLmi, LmiProblem};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRID_STEP: f64 = 1e-2;
/// Instances whose grid margin lies within this band of zero are redrawn.
pub const AMBIGUITY_BAND: f64 = 0.05;

/// Random instance over the box `[-1, 1]^vars`.
pub struct Instance {
    pub vars: usize,
    pub lmis: Vec<AffineLmi>,
}

impl Instance {
    pub fn problem(&self) -> LmiProblem {
        let mut p = LmiProblem::new(self.vars);
        for k in 0..self.vars {
            p.bound(k, -1.0, 1.0);
        }
        for l in &self.lmis {
            p.push(l.clone());
        }
        p
    }
}

/// Cholesky test of `−(M + shift·I) ≻ 0` on a dense row-major block, no allocation.
fn negative_definite(m: &[f64], s: usize, shift: f64) -> bool {
    let mut l = [0.0f64; 16];
    for i in 0..s {
        for j in 0..=i {
            let mut sum = -m[i * s + j] - if i == j { shift } else { 0.0 };
            for k in 0..j {
                sum -= l[i * 4 + k] * l[j * 4 + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return false;
                }
                l[i * 4 + i] = sum.sqrt();
            } else {
                l[i * 4 + j] = sum / l[j * 4 + j];
            }
        }
    }
    true
}

struct Dense {
    s: usize,
    c: Vec<f64>,
    a: Vec<Vec<f64>>,
}

fn dense(l: &AffineLmi, vars: usize) -> Dense {
    let s = l.size();
    let flat = |m: &DMatrix<f64>| (0..s * s).map(|k| m[(k / s, k % s)]).collect::<Vec<_>>();
    let mut a = vec![vec![0.0; s * s]; vars];
    for (i, b) in &l.terms {
        a[*i] = flat(b);
    }
    Dense { s, c: flat(&l.constant), a }
}

/// Whether some grid point `v` gives `M_j(v) ⪯ −shift·I` strictly for every `j`.
pub fn grid_feasible(inst: &Instance, shift: f64) -> bool {
    let ds: Vec<Dense> = inst.lmis.iter().map(|l| dense(l, inst.vars)).collect();
    let steps = (2.0 / GRID_STEP).round() as usize + 1;
    let total = steps.pow(inst.vars as u32);
    let mut v = vec![0.0; inst.vars];
    let mut buf = [0.0f64; 16];
    'points: for idx in 0..total {
        let mut r = idx;
        for x in v.iter_mut() {
            *x = -1.0 + (r % steps) as f64 * GRID_STEP;
            r /= steps;
        }
        for d in &ds {
            let n = d.s * d.s;
            buf[..n].copy_from_slice(&d.c);
            for (k, a) in d.a.iter().enumerate() {
                for e in 0..n {
                    buf[e] += v[k] * a[e];
                }
            }
            if !negative_definite(&buf[..n], d.s, shift) {
                continue 'points;
            }
        }
        return true;
    }
    false
}

fn random_sym(rng: &mut ChaCha8Rng, s: usize, scale: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(s, s, |_, _| rng.random_range(-1.0..1.0) * scale);
    (&m + m.transpose()) * 0.5
}

/// Draws instances until one is unambiguous; returns it with the grid verdict.
pub fn draw(rng: &mut ChaCha8Rng) -> (Instance, bool) {
    loop {
        let vars = rng.random_range(1..=3usize);
        let count = rng.random_range(1..=2usize);
        let mut lmis = Vec::new();
        for j in 0..count {
            let s = rng.random_range(1..=4usize);
            let offset = rng.random_range(-1.5..1.0);
            let c = random_sym(rng, s, 1.0) + DMatrix::identity(s, s) * offset;
            let mut l = AffineLmi::new(format!("random {j}"), c).unwrap();
            for k in 0..vars {
                l = l.term(k, random_sym(rng, s, 1.0)).unwrap();
            }
            lmis.push(l);
        }
        let inst = Instance { vars, lmis };
        let robust_yes = grid_feasible(&inst, AMBIGUITY_BAND);
        let any = robust_yes || grid_feasible(&inst, -AMBIGUITY_BAND);
        if robust_yes {
            return (inst, true);
        }
        if !any {
            return (inst, false);
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
