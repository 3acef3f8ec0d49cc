use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::{wrap_two_pi, StateVector, Vec3};
use crate::error::{Error, Result};
use crate::units::MU;

/// Tolerance below which eccentricity or node-vector magnitude is treated as
/// zero when choosing angle conventions.
const SINGULAR_TOL: f64 = 1e-11;
const PARABOLIC_TOL: f64 = 1e-12;

/// Classical orbital elements. Angles are radians wrapped to [0, 2π).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalElements {
    pub a: f64,
    pub e: f64,
    pub i: f64,
    pub raan: f64,
    pub argp: f64,
    pub nu: f64,
}

impl ClassicalElements {
    pub fn as_array(&self) -> [f64; 6] {
        [self.a, self.e, self.i, self.raan, self.argp, self.nu]
    }
}

/// Converts elements to a heliocentric state with unit placeholder mass.
pub fn elements_to_state(coe: &ClassicalElements) -> Result<StateVector> {
    if (coe.e - 1.0).abs() < PARABOLIC_TOL {
        return Err(Error::UnsupportedOrbit("parabolic elements".into()));
    }
    if coe.e < 0.0 {
        return Err(Error::Input(format!("negative eccentricity {}", coe.e)));
    }
    let p = coe.a * (1.0 - coe.e * coe.e);
    if !(p > 0.0) {
        return Err(Error::UnsupportedOrbit(format!(
            "semi-latus rectum {p} from a={} e={}",
            coe.a, coe.e
        )));
    }
    let (sn, cn) = coe.nu.sin_cos();
    let denom = 1.0 + coe.e * cn;
    if denom <= 0.0 {
        return Err(Error::UnsupportedOrbit("true anomaly beyond hyperbolic asymptote".into()));
    }
    let r = p / denom;
    let r_pf = Vec3::new(r * cn, r * sn, 0.0);
    let vscale = (MU / p).sqrt();
    let v_pf = Vec3::new(-vscale * sn, vscale * (coe.e + cn), 0.0);
    let rot = perifocal_to_inertial(coe.raan, coe.i, coe.argp);
    Ok(StateVector::new(rot * r_pf, rot * v_pf, 1.0))
}

fn perifocal_to_inertial(raan: f64, i: f64, argp: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), raan)
        * Rotation3::from_axis_angle(&Vector3::x_axis(), i)
        * Rotation3::from_axis_angle(&Vector3::z_axis(), argp)
}

/// Angle from `from` to `to` measured positively about `axis`.
fn signed_angle(from: &Vec3, to: &Vec3, axis: &Vec3) -> f64 {
    wrap_two_pi(from.cross(to).dot(axis).atan2(from.dot(to)))
}

/// Converts a state to classical elements.
///
/// Circular orbits (e below 1e-11) report `argp = 0` and put the argument of
/// latitude in `nu`; equatorial orbits report `raan = 0` and measure from the
/// x axis.
pub fn state_to_elements(state: &StateVector) -> Result<ClassicalElements> {
    let r = state.position;
    let v = state.velocity;
    let rn = r.norm();
    let h = r.cross(&v);
    let hn = h.norm();
    if hn <= 1e-14 * rn * v.norm() {
        return Err(Error::UnsupportedOrbit("rectilinear orbit".into()));
    }
    let h_hat = h / hn;
    let e_vec = ((v.norm_squared() - MU / rn) * r - r.dot(&v) * v) / MU;
    let e = e_vec.norm();
    if (e - 1.0).abs() < PARABOLIC_TOL {
        return Err(Error::UnsupportedOrbit("parabolic state".into()));
    }
    let energy = 0.5 * v.norm_squared() - MU / rn;
    let a = -MU / (2.0 * energy);
    let i = (h.x.hypot(h.y)).atan2(h.z);
    let node = Vec3::new(-h.y, h.x, 0.0);
    let nn = node.norm();

    let equatorial = nn <= SINGULAR_TOL * hn;
    let circular = e <= SINGULAR_TOL;
    let (raan, reference) = if equatorial {
        (0.0, Vec3::x())
    } else {
        (wrap_two_pi(node.y.atan2(node.x)), node / nn)
    };
    let (argp, nu) = if circular {
        (0.0, signed_angle(&reference, &r, &h_hat))
    } else {
        (
            signed_angle(&reference, &e_vec, &h_hat),
            signed_angle(&e_vec, &r, &h_hat),
        )
    };
    Ok(ClassicalElements {
        a,
        e,
        i,
        raan,
        argp,
        nu,
    })
}
