use std::f64::consts::{PI, TAU};

use nalgebra::Matrix3;

use super::{kepler_propagate, stumpff_c, stumpff_s, StateVector, Vec3};
use crate::error::{Error, Result};
use crate::units::MU;

const DEGENERATE_SIN: f64 = 1e-10;
const MAX_BRACKET_DOUBLINGS: usize = 12;
const MAX_BISECTIONS: usize = 400;
const MAX_POLISH_STEPS: usize = 3;
/// Relative closure below which no Newton polish is attempted.
const CLOSURE_TOL: f64 = 1e-12;

/// Zero-revolution Lambert solver in universal variables.
///
/// Returns the departure and arrival velocities of the conic through `r1`
/// and `r2` with time of flight `tof` (canonical units). `prograde` selects
/// the transfer whose angular momentum has a positive z component.
pub fn lambert_solve(r1: &Vec3, r2: &Vec3, tof: f64, prograde: bool) -> Result<(Vec3, Vec3)> {
    if !(tof > 0.0) || !tof.is_finite() {
        return Err(Error::Input(format!("Lambert time of flight {tof} must be positive")));
    }
    let r1n = r1.norm();
    let r2n = r2.norm();
    if !(r1n > 0.0 && r2n > 0.0) {
        return Err(Error::Input("Lambert endpoints must be away from the origin".into()));
    }
    let cross = r1.cross(r2);
    let sin_mag = cross.norm() / (r1n * r2n);
    if sin_mag < DEGENERATE_SIN {
        return Err(Error::DegenerateGeometry(
            "transfer angle is 0 or π; the transfer plane is undefined".into(),
        ));
    }
    let cos_dth = (r1.dot(r2) / (r1n * r2n)).clamp(-1.0, 1.0);
    let mut dtheta = cos_dth.acos();
    if (prograde && cross.z < 0.0) || (!prograde && cross.z >= 0.0) {
        dtheta = TAU - dtheta;
    }
    let a = dtheta.sin() * (r1n * r2n / (1.0 - cos_dth)).sqrt();
    let sqrt_mu = MU.sqrt();

    let y_of = |z: f64| r1n + r2n + a * (z * stumpff_s(z) - 1.0) / stumpff_c(z).sqrt();
    let time_of = |z: f64| {
        let y = y_of(z);
        if y <= 0.0 {
            return 0.0;
        }
        let c = stumpff_c(z);
        ((y / c).powf(1.5) * stumpff_s(z) + a * y.sqrt()) / sqrt_mu
    };

    // Approach the z = 4π² pole only as far as needed; very close to it
    // y(z) loses all digits to cancellation.
    let pole = 4.0 * PI * PI;
    let mut gap = 1e-2;
    let mut hi = pole * (1.0 - gap);
    while time_of(hi) < tof && gap > 1e-11 {
        gap *= 0.1;
        hi = pole * (1.0 - gap);
    }
    let mut lo = -4.0 * PI * PI;
    let mut doublings = 0;
    while time_of(lo) > tof {
        doublings += 1;
        if doublings > MAX_BRACKET_DOUBLINGS {
            return Err(Error::NumericalFailure {
                context: "Lambert bracket (time of flight too short)",
                residual: time_of(lo) - tof,
            });
        }
        lo *= 2.0;
    }
    if time_of(hi) < tof {
        return Err(Error::NumericalFailure {
            context: "Lambert bracket (no zero-revolution arc on this branch)",
            residual: tof - time_of(hi),
        });
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if time_of(mid) > tof {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // pick whichever bracket end is closer in time
    let z = if (time_of(lo) - tof).abs() <= (time_of(hi) - tof).abs() {
        lo
    } else {
        hi
    };
    let y = y_of(z);
    if !(y > 0.0) {
        return Err(Error::NumericalFailure {
            context: "Lambert iteration",
            residual: (time_of(z) - tof).abs(),
        });
    }
    let f = 1.0 - y / r1n;
    let g = a * (y / MU).sqrt();
    let gdot = 1.0 - y / r2n;
    let v1 = (r2 - r1 * f) / g;
    let v2 = (r2 * gdot - r1) / g;
    if !(v1.iter().chain(v2.iter()).all(|x| x.is_finite())) {
        return Err(Error::NumericalFailure {
            context: "Lambert velocities",
            residual: f64::NAN,
        });
    }
    Ok(polish(r1, r2, tof, v1).unwrap_or((v1, v2)))
}

/// Newton correction of `v1` on the propagated closure. Near-degenerate
/// geometry (transfer angle close to 0 or 2π) makes `y` a small difference
/// of large terms; one or two steps recover the lost digits. `None` when
/// the closure is already tight or the correction does not help.
fn polish(r1: &Vec3, r2: &Vec3, tof: f64, v1: Vec3) -> Option<(Vec3, Vec3)> {
    let end = |v: &Vec3| kepler_propagate(&StateVector::new(*r1, *v, 1.0), tof).ok();
    let mut v = v1;
    let mut s = end(&v)?;
    let mut err = (s.position - r2).norm();
    if err <= CLOSURE_TOL * r2.norm() {
        return None;
    }
    let mut improved = false;
    for _ in 0..MAX_POLISH_STEPS {
        let h = 1e-6 * v.norm();
        let mut jac = Matrix3::zeros();
        for k in 0..3 {
            let mut dv = Vec3::zeros();
            dv[k] = h;
            let col = (end(&(v + dv))?.position - end(&(v - dv))?.position) / (2.0 * h);
            jac.set_column(k, &col);
        }
        let step = jac.lu().solve(&(s.position - r2))?;
        let trial = v - step;
        let ts = end(&trial)?;
        let terr = (ts.position - r2).norm();
        if !(terr < err) {
            break;
        }
        (v, s, err) = (trial, ts, terr);
        improved = true;
        if err <= CLOSURE_TOL * r2.norm() {
            break;
        }
    }
    improved.then_some((v, s.velocity))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::astro::{elements_to_state, kepler_propagate, ClassicalElements, StateVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn quarter_arc_of_unit_circle() {
        let (v1, v2) =
            lambert_solve(&Vec3::x(), &Vec3::y(), FRAC_PI_2, true).unwrap();
        assert!((v1 - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-9);
        assert!((v2 - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn retrograde_goes_the_long_way() {
        let (v1, _) = lambert_solve(&Vec3::x(), &Vec3::y(), 3.0, false).unwrap();
        assert!(Vec3::x().cross(&v1).z < 0.0);
        let s = StateVector::new(Vec3::x(), v1, 1.0);
        let end = kepler_propagate(&s, 3.0).unwrap();
        assert!((end.position - Vec3::y()).norm() < 1e-9);
    }

    #[test]
    fn near_hohmann_transfer() {
        // Exactly opposite endpoints are degenerate; a small offset keeps the
        // plane defined while staying close to the Hohmann ellipse.
        let ang = PI - 1e-4;
        let r2 = Vec3::new(1.5 * ang.cos(), 1.5 * ang.sin(), 0.0);
        let tof = PI * 1.25f64.powf(1.5);
        let (v1, _) = lambert_solve(&Vec3::x(), &r2, tof, true).unwrap();
        let expected = (2.0 * 1.5 / 2.5f64).sqrt();
        assert!((v1.norm() - expected).abs() < 1e-3, "{}", v1.norm());
        assert!(v1.x.abs() / v1.norm() < 1e-3, "not tangential: {v1:?}");
    }

    #[test]
    fn degenerate_geometry() {
        let r2 = Vec3::new(-2.0, 0.0, 0.0);
        assert!(matches!(
            lambert_solve(&Vec3::x(), &r2, 3.0, true),
            Err(Error::DegenerateGeometry(_))
        ));
        assert!(matches!(
            lambert_solve(&Vec3::x(), &(Vec3::x() * 2.0), 3.0, true),
            Err(Error::DegenerateGeometry(_))
        ));
        assert!(lambert_solve(&Vec3::x(), &Vec3::y(), -1.0, true).is_err());
    }

    #[test]
    fn propagation_closure_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        while checked < 300 {
            let coe = ClassicalElements {
                a: rng.random_range(0.6..4.0),
                e: rng.random_range(0.0..0.7),
                i: rng.random_range(0.0..1.2),
                raan: rng.random_range(0.0..TAU),
                argp: rng.random_range(0.0..TAU),
                nu: rng.random_range(0.0..TAU),
            };
            let s = elements_to_state(&coe).unwrap();
            let tof = rng.random_range(0.05..15.0);
            let r2 = kepler_propagate(&s, tof).unwrap().position;
            let r1 = s.position;
            if r1.cross(&r2).norm() / (r1.norm() * r2.norm()) < 1e-3 {
                continue;
            }
            let (v1, _) = lambert_solve(&r1, &r2, tof, true).unwrap();
            let end = kepler_propagate(&StateVector::new(r1, v1, 1.0), tof).unwrap();
            let rel = (end.position - r2).norm() / r2.norm();
            assert!(rel < 1e-8, "closure {rel:e} for tof {tof}");
            checked += 1;
        }
    }
}
