//! Augmented-Lagrangian solver for the transcribed transfer.
//!
//! Decision variables are the flat `[u_0, .., u_{n-1}, m_f/m0]` vector. The
//! seven match-point defects are equality constraints, `‖u_i‖² ≤ 1` are
//! inequality constraints, and the component boxes are enforced by
//! projection in the inner solver. Derivatives come from central differences
//! exploiting the leg structure: perturbing control `i` only re-flies that
//! leg from segment `i` onward.
//!
//! The inner solver takes projected, trust-region-limited Newton steps on the
//! free coordinates. Its model Hessian is the exact Gauss-Newton part of the
//! penalty terms plus a damped BFGS estimate of the constraint curvature.
//! Defects are scaled by one segment's full-throttle Δv.
//!
//! The propellant burn depends on ‖u_i‖, which has a kink at `u_i = 0`.
//! Zero control blocks are treated like a group-L1 term: their
//! pseudo-gradient is the smooth gradient shrunk by the kink coefficient, and
//! line-search steps that would flip a block through zero stop at zero.

use serde::{Deserialize, Serialize};

use crate::astro::Vec3;
use crate::error::{Error, Result};
use crate::sft::{
    backward_from, backward_start, decision_bounds, defect_between, forward_from, forward_start,
    DecisionVector, MatchDefect, SfProblem,
};
use crate::units::{km_s_to_vu, G0_M_S2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    /// Bound on ‖defect‖∞ and on the ‖u‖ ≤ 1 violation.
    pub feas_tol: f64,
    /// Bound on the ∞-norm of the projected (pseudo-)gradient.
    pub opt_tol: f64,
    pub max_major_iters: usize,
    pub max_minor_iters: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    /// Relative central-difference step.
    pub fd_step: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-6,
            opt_tol: 1e-4,
            max_major_iters: 30,
            max_minor_iters: 200,
            penalty_init: 10.0,
            penalty_growth: 5.0,
            fd_step: 1e-7,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.feas_tol,
            self.opt_tol,
            self.penalty_init,
            self.penalty_growth,
            self.fd_step,
        ]
        .iter()
        .all(|v| *v > 0.0 && v.is_finite());
        if !positive || self.max_major_iters == 0 || self.max_minor_iters == 0 {
            return Err(Error::Config("solver options must be positive".into()));
        }
        if self.penalty_growth <= 1.0 {
            return Err(Error::Config("penalty_growth must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    IterationLimit,
    /// The defect stopped improving while the penalty kept growing.
    Stalled,
    PropagationFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub decision: DecisionVector,
    pub converged: bool,
    pub status: SolveStatus,
    pub defect_norm: f64,
    pub stationarity: f64,
    pub final_mass: f64,
    pub major_iters: usize,
    pub minor_iters: usize,
    pub objective_history: Vec<f64>,
    pub defect_history: Vec<f64>,
}

/// Central-difference gradient with per-coordinate step `step·max(1, |x_j|)`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            let h = step * x[j].abs().max(1.0);
            probe[j] = x[j] + h;
            let plus = f(&probe);
            probe[j] = x[j] - h;
            let minus = f(&probe);
            probe[j] = x[j];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Zero controls and the rocket-equation mass after the impulsive ΔV,
/// clamped to `[m_dry, m0]`.
pub fn lambert_guess(problem: &SfProblem, lambert_dv_km_s: f64) -> DecisionVector {
    let ve = problem.spacecraft.isp_s * G0_M_S2 / 1000.0;
    let m_f = (problem.m0 * (-lambert_dv_km_s.max(0.0) / ve).exp())
        .clamp(problem.spacecraft.m_dry, problem.m0);
    DecisionVector::ballistic(problem.n_segments, m_f)
}

const N_DEFECT: usize = 7;
type Defect = [f64; N_DEFECT];

/// Blocks with a norm below this are snapped to exactly zero.
const ZERO_SNAP: f64 = 1e-7;
/// Initial scale of the secant curvature estimate.
const CURVATURE_INIT: f64 = 1e-2;
const ARMIJO_C1: f64 = 1e-4;
const INITIAL_RADIUS: f64 = 0.1;
const MAX_RADIUS: f64 = 2.0;
const MIN_RADIUS: f64 = 1e-12;
const MAX_BACKTRACKS: usize = 40;
const MAX_PENALTY: f64 = 1e12;

struct Transcription<'a> {
    problem: &'a SfProblem,
    n: usize,
    nf: usize,
    step: f64,
    /// Defects are divided by this (one segment's full-throttle Δv in
    /// canonical units) so that the Jacobian is O(1).
    scale: f64,
}

struct Linearization {
    c: Defect,
    jac: Vec<Defect>,
    /// (c(x+h) + c(x−h) − 2c(x)) / 2h per coordinate; the one-sided slope
    /// jump at a kink, O(h) elsewhere.
    kink: Vec<Defect>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

impl<'a> Transcription<'a> {
    fn new(problem: &'a SfProblem, step: f64) -> Self {
        Self {
            problem,
            n: problem.n_segments,
            nf: problem.n_forward(),
            step,
            scale: km_s_to_vu(
                problem.spacecraft.t_max_n * problem.seg_dt_s() / problem.m0 / 1000.0,
            ),
        }
    }

    fn dim(&self) -> usize {
        3 * self.n + 1
    }

    fn controls(&self, x: &[f64]) -> Vec<Vec3> {
        (0..self.n)
            .map(|i| Vec3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]))
            .collect()
    }

    fn m_f(&self, x: &[f64]) -> f64 {
        x[3 * self.n] * self.problem.m0
    }

    fn defect(&self, x: &[f64]) -> Result<Defect> {
        let p = self.problem;
        let controls = self.controls(x);
        let fwd = forward_from(p, &controls, 0, forward_start(p)?, None)?;
        let bwd = backward_from(p, &controls, self.n - 1, backward_start(p, self.m_f(x))?, None)?;
        Ok(self.scaled(&defect_between(p, &fwd, &bwd)))
    }

    fn scaled(&self, d: &MatchDefect) -> Defect {
        d.as_array().map(|v| v / self.scale)
    }

    fn linearize(&self, x: &[f64]) -> Result<Linearization> {
        let p = self.problem;
        let mut controls = self.controls(x);
        let mut fwd_mid = Vec::with_capacity(self.nf);
        let mut bwd_mid = Vec::with_capacity(self.n - self.nf);
        let fwd = forward_from(p, &controls, 0, forward_start(p)?, Some(&mut fwd_mid))?;
        let bwd = backward_from(
            p,
            &controls,
            self.n - 1,
            backward_start(p, self.m_f(x))?,
            Some(&mut bwd_mid),
        )?;
        let c0 = self.scaled(&defect_between(p, &fwd, &bwd));

        let dim = self.dim();
        let mut jac = vec![[0.0; N_DEFECT]; dim];
        let mut kink = vec![[0.0; N_DEFECT]; dim];
        for i in 0..self.n {
            for k in 0..3 {
                let j = 3 * i + k;
                let h = self.step * x[j].abs().max(1.0);
                let base = controls[i][k];
                let mut eval = |delta: f64| -> Result<Defect> {
                    controls[i][k] = base + delta;
                    let out = if i < self.nf {
                        forward_from(p, &controls, i, fwd_mid[i], None)
                            .map(|end| self.scaled(&defect_between(p, &end, &bwd)))
                    } else {
                        backward_from(p, &controls, i, bwd_mid[self.n - 1 - i], None)
                            .map(|end| self.scaled(&defect_between(p, &fwd, &end)))
                    };
                    controls[i][k] = base;
                    out
                };
                let plus = eval(h);
                let minus = eval(-h);
                (jac[j], kink[j]) = difference(&c0, plus, minus, h)?;
            }
        }
        let j = dim - 1;
        let h = self.step * x[j].abs().max(1.0);
        let eval = |delta: f64| -> Result<Defect> {
            let start = backward_start(p, (x[j] + delta) * p.m0)?;
            backward_from(p, &controls, self.n - 1, start, None)
                .map(|end| self.scaled(&defect_between(p, &fwd, &end)))
        };
        (jac[j], kink[j]) = difference(&c0, eval(h), eval(-h), h)?;
        Ok(Linearization { c: c0, jac, kink })
    }
}

fn difference(c0: &Defect, plus: Result<Defect>, minus: Result<Defect>, h: f64) -> Result<(Defect, Defect)> {
    match (plus, minus) {
        (Ok(p), Ok(m)) => Ok((
            std::array::from_fn(|k| (p[k] - m[k]) / (2.0 * h)),
            std::array::from_fn(|k| (p[k] + m[k] - 2.0 * c0[k]) / (2.0 * h)),
        )),
        (Ok(p), Err(_)) => Ok((std::array::from_fn(|k| (p[k] - c0[k]) / h), [0.0; N_DEFECT])),
        (Err(_), Ok(m)) => Ok((std::array::from_fn(|k| (c0[k] - m[k]) / h), [0.0; N_DEFECT])),
        (Err(e), Err(_)) => Err(e),
    }
}

/// Multiplier and penalty state of the augmented Lagrangian.
#[derive(Debug, Clone)]
struct Multipliers {
    eq: Defect,
    ineq: Vec<f64>,
    rho: f64,
}

impl Multipliers {
    fn merit(&self, tr: &Transcription, x: &[f64], c: &Defect) -> f64 {
        let mut phi = -x[3 * tr.n];
        for k in 0..N_DEFECT {
            phi += self.eq[k] * c[k] + 0.5 * self.rho * c[k] * c[k];
        }
        for i in 0..tr.n {
            let g = block_norm_sq(x, i) - 1.0;
            let mu = self.ineq[i];
            let t = (mu + self.rho * g).max(0.0);
            phi += (t * t - mu * mu) / (2.0 * self.rho);
        }
        phi
    }

    /// Pseudo-gradient of the merit: the gradient at smooth points and the
    /// minimum-norm element of the generalized gradient on zero blocks.
    fn pseudo_gradient(&self, tr: &Transcription, x: &[f64], lin: &Linearization) -> Vec<f64> {
        let w: Defect = std::array::from_fn(|k| self.eq[k] + self.rho * lin.c[k]);
        let dim = tr.dim();
        let mut g: Vec<f64> = (0..dim).map(|j| dot(&lin.jac[j], &w)).collect();
        g[dim - 1] -= 1.0;
        for i in 0..tr.n {
            let t = (self.ineq[i] + self.rho * (block_norm_sq(x, i) - 1.0)).max(0.0);
            for k in 0..3 {
                g[3 * i + k] += 2.0 * t * x[3 * i + k];
            }
            if block_norm_sq(x, i) == 0.0 {
                let kappa = (0..3).map(|k| dot(&lin.kink[3 * i + k], &w)).sum::<f64>() / 3.0;
                let block = [g[3 * i], g[3 * i + 1], g[3 * i + 2]];
                let nrm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
                let scale = if nrm > 0.0 { (1.0 - kappa / nrm).max(0.0) } else { 0.0 };
                for k in 0..3 {
                    g[3 * i + k] = block[k] * scale;
                }
            }
        }
        g
    }
}

fn block_norm_sq(x: &[f64], i: usize) -> f64 {
    x[3 * i] * x[3 * i] + x[3 * i + 1] * x[3 * i + 1] + x[3 * i + 2] * x[3 * i + 2]
}

fn snap_small_blocks(x: &mut [f64], n: usize) {
    for i in 0..n {
        if block_norm_sq(x, i) < ZERO_SNAP * ZERO_SNAP {
            x[3 * i..3 * i + 3].fill(0.0);
        }
    }
}

/// Zeroes gradient components that point out of the box at active bounds.
fn project_gradient(g: &[f64], x: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    g.iter()
        .enumerate()
        .map(|(j, &gj)| {
            if (x[j] <= lo[j] && gj > 0.0) || (x[j] >= hi[j] && gj < 0.0) {
                0.0
            } else {
                gj
            }
        })
        .collect()
}

#[derive(Debug)]
struct InnerOutcome {
    iters: usize,
    stationarity: f64,
    #[cfg_attr(not(test), allow(dead_code))]
    merit_trace: Vec<f64>,
    failed: bool,
}

type Matrix = nalgebra::DMatrix<f64>;

/// Coordinates the next step may move: not pinned at a bound and not a
/// zero block held by its kink.
fn free_mask(tr: &Transcription, x: &[f64], pg: &[f64], lo: &[f64], hi: &[f64]) -> Vec<bool> {
    let mut free: Vec<bool> = (0..x.len())
        .map(|j| !(pg[j] == 0.0 && (x[j] <= lo[j] || x[j] >= hi[j])))
        .collect();
    for i in 0..tr.n {
        let r = 3 * i..3 * i + 3;
        if block_norm_sq(x, i) == 0.0 && pg[r.clone()].iter().all(|v| *v == 0.0) {
            free[r].fill(false);
        }
    }
    free
}

/// Model Hessian of the merit: exact Gauss-Newton penalty and hinge terms
/// plus the secant estimate `b` of the constraint curvature.
fn model_hessian(tr: &Transcription, x: &[f64], lin: &Linearization, mult: &Multipliers, b: &Matrix) -> Matrix {
    let dim = tr.dim();
    let jac = Matrix::from_fn(N_DEFECT, dim, |k, j| lin.jac[j][k]);
    let mut h = b + mult.rho * jac.transpose() * &jac;
    for i in 0..tr.n {
        let t = mult.ineq[i] + mult.rho * (block_norm_sq(x, i) - 1.0);
        if t > 0.0 {
            for p in 0..3 {
                for q in 0..3 {
                    h[(3 * i + p, 3 * i + q)] += 4.0 * mult.rho * x[3 * i + p] * x[3 * i + q];
                }
                h[(3 * i + p, 3 * i + p)] += 2.0 * t;
            }
        }
    }
    h
}

/// Regularized Newton direction on the free coordinates: the shift grows
/// until the reduced model is positive definite and the step fits inside
/// the trust radius (∞-norm).
///
/// The flag reports whether the radius limited the step.
fn newton_direction(h: &Matrix, pg: &[f64], free: &[bool], radius: f64) -> (Vec<f64>, bool) {
    let idx: Vec<usize> = (0..pg.len()).filter(|&j| free[j]).collect();
    let mut d = vec![0.0; pg.len()];
    if idx.is_empty() {
        return (d, false);
    }
    let mut limited = false;
    let hf = Matrix::from_fn(idx.len(), idx.len(), |a, b| h[(idx[a], idx[b])]);
    let g = nalgebra::DVector::from_iterator(idx.len(), idx.iter().map(|&j| pg[j]));
    let scale = hf.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-12);
    let mut shift = 0.0;
    for _ in 0..80 {
        let mut m = hf.clone();
        for a in 0..idx.len() {
            m[(a, a)] += shift;
        }
        if let Some(ch) = m.cholesky() {
            let step = ch.solve(&g);
            if step.amax() <= radius {
                for (a, &j) in idx.iter().enumerate() {
                    d[j] = -step[a];
                }
                return (d, limited);
            }
            limited = true;
            if shift == 0.0 {
                shift = (g.amax() / radius).max(1e-10 * scale);
                continue;
            }
        } else if shift == 0.0 {
            shift = 1e-10 * scale;
            continue;
        }
        shift *= 4.0;
    }
    let gmax = g.amax().max(f64::MIN_POSITIVE);
    for &j in &idx {
        d[j] = -pg[j] / gmax * radius;
    }
    (d, true)
}

/// Powell-damped BFGS update.
fn bfgs_update(b: &mut Matrix, s: &[f64], y: &[f64]) {
    let sv = nalgebra::DVector::from_column_slice(s);
    let yv = nalgebra::DVector::from_column_slice(y);
    let bs = &*b * &sv;
    let sbs = sv.dot(&bs);
    if !(sbs > 1e-20) {
        return;
    }
    let sy = sv.dot(&yv);
    let theta = if sy >= 0.2 * sbs { 1.0 } else { 0.8 * sbs / (sbs - sy) };
    let r = theta * yv + (1.0 - theta) * &bs;
    let sr = sv.dot(&r);
    if !(sr > 1e-20) {
        return;
    }
    *b += &r * r.transpose() / sr - &bs * bs.transpose() / sbs;
}

#[allow(clippy::too_many_arguments)]
fn minimize_merit(
    tr: &Transcription,
    x: &mut Vec<f64>,
    mult: &Multipliers,
    curvature: &mut Matrix,
    tol: f64,
    max_iters: usize,
    lo: &[f64],
    hi: &[f64],
) -> InnerOutcome {
    let dim = tr.dim();
    snap_small_blocks(x, tr.n);
    let Ok(mut lin) = tr.linearize(x) else {
        return InnerOutcome {
            iters: 0,
            stationarity: f64::INFINITY,
            merit_trace: vec![],
            failed: true,
        };
    };
    let mut phi = mult.merit(tr, x, &lin.c);
    let mut pg = project_gradient(&mult.pseudo_gradient(tr, x, &lin), x, lo, hi);
    let mut trace = vec![phi];
    let mut iters = 0;
    let mut radius = INITIAL_RADIUS;

    while iters < max_iters && inf_norm(&pg) > tol {
        iters += 1;
        let free = free_mask(tr, x, &pg, lo, hi);
        let h = model_hessian(tr, x, &lin, mult, curvature);

        let mut accepted = None;
        for attempt in 0..2 {
            let (mut d, limited) = if attempt == 0 {
                newton_direction(&h, &pg, &free, radius)
            } else {
                let d = pg.iter().zip(&free).map(|(g, f)| if *f { -g } else { 0.0 }).collect();
                (d, false)
            };
            // zero blocks may only leave along −pg
            for i in 0..tr.n {
                if block_norm_sq(x, i) == 0.0 {
                    let r = 3 * i..3 * i + 3;
                    if dot(&d[r.clone()], &pg[r.clone()]) >= 0.0 {
                        d[r].fill(0.0);
                    }
                }
            }
            if !(dot(&d, &pg) < 0.0) {
                continue;
            }
            let dmax = inf_norm(&d);
            let mut alpha: f64 = if attempt == 0 { 1.0 } else { 0.1 };
            alpha = alpha.min(1.0 / dmax);
            for bt in 0..MAX_BACKTRACKS {
                let mut y: Vec<f64> = (0..dim)
                    .map(|j| (x[j] + alpha * d[j]).clamp(lo[j], hi[j]))
                    .collect();
                for i in 0..tr.n {
                    let r = 3 * i..3 * i + 3;
                    if block_norm_sq(x, i) > 0.0 && dot(&x[r.clone()], &y[r.clone()]) <= 0.0 {
                        y[r].fill(0.0);
                    }
                }
                snap_small_blocks(&mut y, tr.n);
                let step: Vec<f64> = y.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
                let decrease = dot(&pg, &step);
                if decrease < 0.0 {
                    if let Ok(c) = tr.defect(&y) {
                        let phi_new = mult.merit(tr, &y, &c);
                        if phi_new <= phi + ARMIJO_C1 * decrease {
                            if bt == 0 && limited {
                                radius = (4.0 * radius).min(MAX_RADIUS);
                            } else if bt > 0 && attempt == 0 {
                                radius = (alpha * dmax).max(0.01 * radius).max(MIN_RADIUS);
                            }
                            accepted = Some((y, phi_new));
                            break;
                        }
                    }
                }
                alpha *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }

        let Some((y, phi_new)) = accepted else {
            break;
        };
        // a point whose derivatives cannot be formed is treated like a
        // rejected step
        let Ok(new_lin) = tr.linearize(&y) else {
            break;
        };
        // secant pair for Σ w_k ∇²c_k, holding the weights at the new point
        let w: Defect = std::array::from_fn(|k| mult.eq[k] + mult.rho * new_lin.c[k]);
        let s: Vec<f64> = y.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let yl: Vec<f64> = (0..dim)
            .map(|j| (0..N_DEFECT).map(|k| w[k] * (new_lin.jac[j][k] - lin.jac[j][k])).sum())
            .collect();
        bfgs_update(curvature, &s, &yl);

        *x = y;
        lin = new_lin;
        phi = phi_new;
        pg = project_gradient(&mult.pseudo_gradient(tr, x, &lin), x, lo, hi);
        trace.push(phi);
    }
    InnerOutcome {
        iters,
        stationarity: inf_norm(&pg),
        merit_trace: trace,
        failed: false,
    }
}

/// Number of recent major iterations over which the defect must improve
/// while the penalty is being raised.
const STALL_WINDOW: usize = 4;
const MIN_RAISES_BEFORE_STALL: usize = 3;
/// Runs this close to feasibility are never declared stalled.
const STALL_DEFECT_FLOOR: f64 = 1e-4;

/// Maximizes arrival mass subject to the match-point and thrust constraints.
///
/// Never fails on numerical trouble inside the iteration: propagation errors
/// reject line-search steps, and persistent trouble ends the solve with
/// `converged = false`.
pub fn solve(problem: &SfProblem, guess: &DecisionVector, opts: &SolveOptions) -> Result<SolveResult> {
    opts.validate()?;
    problem.validate()?;
    if guess.controls.len() != problem.n_segments {
        return Err(Error::Shape {
            expected: problem.n_segments,
            got: guess.controls.len(),
        });
    }
    let tr = Transcription::new(problem, opts.fd_step);
    let (lo, hi) = decision_bounds(problem);
    let mut x: Vec<f64> = guess
        .encode(problem.m0)
        .iter()
        .enumerate()
        .map(|(j, v)| if v.is_finite() { v.clamp(lo[j], hi[j]) } else { 0.0 })
        .collect();

    let mut mult = Multipliers {
        eq: [0.0; N_DEFECT],
        ineq: vec![0.0; tr.n],
        rho: opts.penalty_init,
    };
    let mut omega = (1.0 / mult.rho).max(opts.opt_tol);
    // feasibility targets live in scaled units
    let eta_floor = opts.feas_tol / tr.scale;
    let mut eta = (0.1 / mult.rho.powf(0.1)).max(eta_floor);

    let mut curvature = Matrix::identity(tr.dim(), tr.dim()) * CURVATURE_INIT;
    let mut objective_history = Vec::new();
    let mut defect_history = Vec::new();
    let mut minor_iters = 0;
    let mut status = SolveStatus::IterationLimit;
    let mut converged = false;
    let mut stationarity = f64::INFINITY;
    let mut defect_norm = f64::INFINITY;
    let mut major = 0;
    let mut penalty_raises = 0;

    while major < opts.max_major_iters {
        major += 1;
        let inner = minimize_merit(
            &tr,
            &mut x,
            &mult,
            &mut curvature,
            omega,
            opts.max_minor_iters,
            &lo,
            &hi,
        );
        minor_iters += inner.iters;
        stationarity = inner.stationarity;
        let c = match tr.defect(&x) {
            Ok(c) => c,
            Err(_) => {
                status = SolveStatus::PropagationFailure;
                break;
            }
        };
        if inner.failed {
            status = SolveStatus::PropagationFailure;
            defect_norm = inf_norm(&c) * tr.scale;
            break;
        }
        let ineq: Vec<f64> = (0..tr.n).map(|i| block_norm_sq(&x, i) - 1.0).collect();
        defect_norm = inf_norm(&c) * tr.scale;
        let ineq_violation = ineq.iter().fold(0.0_f64, |m, g| m.max(*g));
        let violation = inf_norm(&c).max(ineq_violation);
        objective_history.push(-x[tr.dim() - 1]);
        defect_history.push(defect_norm);

        if defect_norm <= opts.feas_tol
            && ineq_violation <= opts.feas_tol
            && stationarity <= opts.opt_tol
        {
            converged = true;
            status = SolveStatus::Converged;
            break;
        }
        if violation <= eta {
            for k in 0..N_DEFECT {
                mult.eq[k] += mult.rho * c[k];
            }
            for (mu, g) in mult.ineq.iter_mut().zip(&ineq) {
                *mu = (*mu + mult.rho * g).max(0.0);
            }
            eta = (eta / mult.rho.powf(0.9)).max(eta_floor);
            omega = (omega / mult.rho).max(opts.opt_tol);
        } else {
            mult.rho *= opts.penalty_growth;
            eta = (0.1 / mult.rho.powf(0.1)).max(eta_floor);
            omega = (1.0 / mult.rho).max(opts.opt_tol);
            penalty_raises += 1;
            if mult.rho > MAX_PENALTY
                || (penalty_raises >= MIN_RAISES_BEFORE_STALL
                    && defect_norm > STALL_DEFECT_FLOOR
                    && stalled(&defect_history))
            {
                status = SolveStatus::Stalled;
                break;
            }
        }
    }

    let decision = DecisionVector::decode(&x, problem.m0)?;
    Ok(SolveResult {
        final_mass: decision.m_f,
        decision,
        converged,
        status,
        defect_norm,
        stationarity,
        major_iters: major,
        minor_iters,
        objective_history,
        defect_history,
    })
}

fn stalled(history: &[f64]) -> bool {
    if history.len() <= STALL_WINDOW {
        return false;
    }
    let recent = history[history.len() - 1];
    let before = history[history.len() - 1 - STALL_WINDOW];
    recent > 0.5 * before
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::astro::{elements_to_state, kepler_propagate, ClassicalElements};
    use crate::sft::{match_defect, Spacecraft};
    use crate::units::days_to_tu;

    fn departure() -> crate::astro::StateVector {
        elements_to_state(&ClassicalElements {
            a: 2.5,
            e: 0.1,
            i: 0.05,
            raan: 0.3,
            argp: 0.9,
            nu: 1.1,
        })
        .unwrap()
    }

    fn self_transfer(n: usize) -> SfProblem {
        let dep = departure();
        let arr = kepler_propagate(&dep, days_to_tu(500.0)).unwrap();
        SfProblem::new(dep, arr, 60000.0, 2500.0, 500.0, n, Spacecraft::default()).unwrap()
    }

    #[test]
    fn gradient_of_quadratic() {
        let g = fd_gradient(|x| x[0] * x[0] + x[1] * x[1], &[1.0, 2.0], 1e-7);
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
        let g = fd_gradient(|x| 3.0 * x[0] - 0.5 * x[1] + 7.0, &[10.0, -4.0], 1e-7);
        assert!((g[0] - 3.0).abs() < 1e-7 && (g[1] + 0.5).abs() < 1e-7);
    }

    #[test]
    fn merit_gradient_against_richardson() {
        use rand::{Rng, SeedableRng};
        let p = self_transfer(8);
        let tr = Transcription::new(&p, 1e-7);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let mut x: Vec<f64> = (0..24).map(|_| rng.random_range(-0.6..0.6)).collect();
            x.push(rng.random_range(0.7..0.95));
            let lam: Defect = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let merit = |x: &[f64]| {
                let c = tr.defect(x).unwrap().map(|v| v * tr.scale);
                c.iter().zip(&lam).map(|(a, b)| a * b).sum::<f64>() + 5.0 * dot(&c, &c)
            };
            let g = fd_gradient(merit, &x, 1e-7);
            let f0 = merit(&x);
            for j in 0..x.len() {
                let h = 1e-5 * x[j].abs().max(1.0);
                let fwd = |h: f64| {
                    let mut y = x.clone();
                    y[j] += h;
                    (merit(&y) - f0) / h
                };
                let rich = 2.0 * fwd(h / 2.0) - fwd(h);
                let scale = rich.abs().max(1e-3);
                assert!((g[j] - rich).abs() / scale < 1e-4, "j={j}: {} vs {}", g[j], rich);
            }
        }
    }

    #[test]
    fn structured_jacobian_matches_plain_differences() {
        let p = self_transfer(6);
        let tr = Transcription::new(&p, 1e-7);
        let mut x: Vec<f64> = (0..18).map(|j| 0.05 * (j as f64 - 9.0)).collect();
        x.push(0.9);
        let lin = tr.linearize(&x).unwrap();
        for k in 0..N_DEFECT {
            let g = fd_gradient(|y| tr.defect(y).unwrap()[k], &x, 1e-7);
            for j in 0..x.len() {
                assert!((g[j] - lin.jac[j][k]).abs() < 1e-6, "k={k} j={j}");
            }
        }
    }

    #[test]
    fn ballistic_guess_converges_immediately() {
        for n in [2, 10, 20] {
            let p = self_transfer(n);
            let guess = DecisionVector::ballistic(n, p.m0);
            let r = solve(&p, &guess, &SolveOptions::default()).unwrap();
            assert!(r.converged, "n={n}: {:?}", r.status);
            assert!(r.major_iters <= 2);
            assert!(r.defect_norm < 1e-9);
            assert_eq!(r.final_mass, p.m0);
        }
    }

    #[test]
    fn low_mass_guess_recovers_full_mass() {
        let p = self_transfer(10);
        let guess = DecisionVector::ballistic(10, 0.9 * p.m0);
        let r = solve(&p, &guess, &SolveOptions::default()).unwrap();
        assert!(r.converged, "{:?} defect {}", r.status, r.defect_norm);
        assert!((r.final_mass - p.m0).abs() < 1e-6 * p.m0, "{}", r.final_mass);
        for w in r.defect_history.windows(2) {
            assert!(w[1] <= w[0].max(1e-6) * 1.01, "{:?}", r.defect_history);
        }
    }

    #[test]
    fn inner_line_search_is_monotone() {
        let dep = departure();
        let arr = kepler_propagate(&dep, days_to_tu(400.0)).unwrap();
        let mut arr = arr;
        arr.position *= 1.01;
        let p = SfProblem::new(dep, arr, 60000.0, 2500.0, 400.0, 8, Spacecraft::default()).unwrap();
        let tr = Transcription::new(&p, 1e-7);
        let (lo, hi) = decision_bounds(&p);
        let mult = Multipliers {
            eq: [0.0; N_DEFECT],
            ineq: vec![0.0; 8],
            rho: 100.0,
        };
        let mut x = DecisionVector::ballistic(8, 0.95 * p.m0).encode(p.m0);
        let mut b = Matrix::identity(25, 25) * CURVATURE_INIT;
        let out = minimize_merit(&tr, &mut x, &mult, &mut b, 1e-6, 50, &lo, &hi);
        assert!(out.iters > 0);
        for w in out.merit_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn reachable_offset_converges_and_closes() {
        // Shift the arrival by ~0.005 AU: well within the thrust budget.
        let dep = departure();
        let mut arr = kepler_propagate(&dep, days_to_tu(300.0)).unwrap();
        arr.position += Vec3::new(0.004, -0.003, 0.001);
        let p = SfProblem::new(dep, arr, 60000.0, 2500.0, 300.0, 10, Spacecraft::default()).unwrap();
        let guess = DecisionVector::ballistic(10, p.m0);
        let r = solve(&p, &guess, &SolveOptions::default()).unwrap();
        assert!(r.converged, "{:?} defect {:e} stat {:e}", r.status, r.defect_norm, r.stationarity);
        let d = match_defect(&p, &r.decision).unwrap();
        assert!(d.inf_norm() <= 1e-6);
        assert!(r.final_mass < p.m0 && r.final_mass > p.spacecraft.m_dry);
        assert!(r.decision.controls.iter().all(|u| u.norm() <= 1.0 + 1e-6));
        // determinism
        let again = solve(&p, &guess, &SolveOptions::default()).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn one_day_transfer_is_infeasible() {
        let dep = departure();
        let arr = elements_to_state(&ClassicalElements {
            a: 3.1,
            e: 0.2,
            i: 0.2,
            raan: 2.0,
            argp: 0.1,
            nu: 3.0,
        })
        .unwrap();
        let p = SfProblem::new(dep, arr, 60000.0, 2500.0, 1.0, 20, Spacecraft::default()).unwrap();
        let guess = DecisionVector::ballistic(20, p.m0);
        let r = solve(&p, &guess, &SolveOptions::default()).unwrap();
        assert!(!r.converged);
        assert!(r.defect_norm > 1e-3);
    }

    #[test]
    fn invalid_options_rejected() {
        let p = self_transfer(4);
        let g = DecisionVector::ballistic(4, p.m0);
        let opts = SolveOptions {
            penalty_growth: 1.0,
            ..Default::default()
        };
        assert!(solve(&p, &g, &opts).is_err());
        assert!(solve(&p, &DecisionVector::ballistic(3, p.m0), &SolveOptions::default()).is_err());
    }
}
