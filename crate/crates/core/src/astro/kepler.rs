use std::f64::consts::{PI, TAU};

use super::StateVector;
use crate::error::{Error, Result};
use crate::units::MU;

const MAX_UNIVERSAL_ITERS: usize = 100;
const MAX_KEPLER_ITERS: usize = 50;
const SERIES_LIMIT: f64 = 1.0;

/// Stumpff function C(z).
pub fn stumpff_c(z: f64) -> f64 {
    if z.abs() < SERIES_LIMIT {
        // sum_k (-z)^k / (2k+2)!
        let mut term = 0.5;
        let mut sum = term;
        for k in 1..14 {
            let k = k as f64;
            term *= -z / ((2.0 * k + 1.0) * (2.0 * k + 2.0));
            sum += term;
        }
        sum
    } else if z > 0.0 {
        let half = 0.5 * z.sqrt();
        2.0 * half.sin().powi(2) / z
    } else {
        let half = 0.5 * (-z).sqrt();
        2.0 * half.sinh().powi(2) / -z
    }
}

/// Stumpff function S(z).
pub fn stumpff_s(z: f64) -> f64 {
    if z.abs() < SERIES_LIMIT {
        // sum_k (-z)^k / (2k+3)!
        let mut term = 1.0 / 6.0;
        let mut sum = term;
        for k in 1..14 {
            let k = k as f64;
            term *= -z / ((2.0 * k + 2.0) * (2.0 * k + 3.0));
            sum += term;
        }
        sum
    } else if z > 0.0 {
        let x = z.sqrt();
        (x - x.sin()) / (x * z)
    } else {
        let x = (-z).sqrt();
        (x.sinh() - x) / (x * -z)
    }
}

/// Two-body propagation by `dt` canonical time units using the universal
/// variable formulation. Negative `dt` propagates backward.
pub fn kepler_propagate(state: &StateVector, dt: f64) -> Result<StateVector> {
    if dt == 0.0 {
        return Ok(*state);
    }
    let r0v = state.position;
    let v0v = state.velocity;
    let r0 = r0v.norm();
    let v0_sq = v0v.norm_squared();
    let sqrt_mu = MU.sqrt();
    let sigma0 = r0v.dot(&v0v) / sqrt_mu;
    let alpha = 2.0 / r0 - v0_sq / MU;

    if !(r0 > 0.0) || !dt.is_finite() || !alpha.is_finite() {
        return Err(Error::Input("kepler_propagate: invalid state or time step".into()));
    }
    if r0v.cross(&v0v).norm() <= 1e-14 * r0 * v0_sq.sqrt() {
        return Err(Error::UnsupportedOrbit("rectilinear orbit".into()));
    }

    // Whole revolutions of an ellipse are dropped so the iteration always
    // works on less than half a period.
    let mut dt_eff = dt;
    if alpha > 1e-12 {
        let period = TAU / (MU * alpha.powi(3)).sqrt();
        if dt_eff.abs() > 0.5 * period {
            dt_eff -= period * (dt_eff / period).round();
        }
    }

    let mut chi = initial_chi(r0, sigma0, alpha, dt_eff);
    let one_minus_ar0 = 1.0 - alpha * r0;
    let target = sqrt_mu * dt_eff;
    let n: f64 = 5.0;
    let mut converged = false;
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_UNIVERSAL_ITERS {
        let z = alpha * chi * chi;
        let c = stumpff_c(z);
        let s = stumpff_s(z);
        let f = sigma0 * chi * chi * c + one_minus_ar0 * chi.powi(3) * s + r0 * chi - target;
        let df = sigma0 * chi * (1.0 - z * s) + one_minus_ar0 * chi * chi * c + r0;
        let ddf = sigma0 * (1.0 - z * c) + one_minus_ar0 * chi * (1.0 - z * s);
        residual = f.abs();
        // residual already at the roundoff floor of the terms
        let scale = (sigma0 * chi * chi * c).abs() + (one_minus_ar0 * chi.powi(3) * s).abs() + (r0 * chi).abs() + target.abs();
        if residual <= 32.0 * f64::EPSILON * scale {
            converged = true;
            break;
        }
        let disc = ((n - 1.0).powi(2) * df * df - n * (n - 1.0) * f * ddf).abs().sqrt();
        let denom = df + df.signum() * disc;
        let delta = if denom != 0.0 { n * f / denom } else { f / df };
        if !delta.is_finite() {
            break;
        }
        chi -= delta;
        if delta.abs() <= 4.0 * f64::EPSILON * chi.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NumericalFailure {
            context: "universal Kepler iteration",
            residual,
        });
    }

    let z = alpha * chi * chi;
    let c = stumpff_c(z);
    let s = stumpff_s(z);
    let f = 1.0 - chi * chi * c / r0;
    let g = dt_eff - chi.powi(3) * s / sqrt_mu;
    let rv = r0v * f + v0v * g;
    let r = rv.norm();
    let fdot = sqrt_mu / (r * r0) * chi * (z * s - 1.0);
    let gdot = 1.0 - chi * chi * c / r;
    let vv = r0v * fdot + v0v * gdot;
    Ok(StateVector::new(rv, vv, state.mass))
}

fn initial_chi(r0: f64, sigma0: f64, alpha: f64, dt: f64) -> f64 {
    let sqrt_mu = MU.sqrt();
    if alpha > 1e-12 {
        return sqrt_mu * alpha * dt;
    }
    if alpha < -1e-12 {
        let a = 1.0 / alpha;
        let s = dt.signum();
        let arg = -2.0 * MU * alpha * dt
            / (sigma0 * sqrt_mu + s * (-MU * a).sqrt() * (1.0 - r0 * alpha));
        if arg > 0.0 && arg.is_finite() {
            return s * (-a).sqrt() * arg.ln();
        }
    }
    sqrt_mu * dt / r0
}

/// Solves Kepler's equation `E - e sin E = M` for an ellipse.
pub fn solve_kepler_elliptic(mean_anomaly: f64, e: f64) -> Result<f64> {
    let m = mean_anomaly.rem_euclid(TAU);
    let mut ecc_anom = if e < 0.8 { m + e * m.sin() } else { PI };
    for _ in 0..MAX_KEPLER_ITERS {
        let f = ecc_anom - e * ecc_anom.sin() - m;
        let df = 1.0 - e * ecc_anom.cos();
        let step = f / df;
        ecc_anom -= step;
        if step.abs() <= 1e-15 * ecc_anom.abs().max(1.0) {
            return Ok(ecc_anom);
        }
    }
    let residual = (ecc_anom - e * ecc_anom.sin() - m).abs();
    if residual < 1e-13 {
        return Ok(ecc_anom);
    }
    Err(Error::NumericalFailure {
        context: "Kepler equation",
        residual,
    })
}
