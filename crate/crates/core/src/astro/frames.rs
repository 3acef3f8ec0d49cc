//! Alternative representations of a heliocentric state.

use serde::{Deserialize, Serialize};

use super::{wrap_two_pi, StateVector, Vec3};
use crate::error::{Error, Result};
use crate::units::MU;

/// Modified equinoctial elements (p in AU, L in radians wrapped to [0, 2π)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquinoctialElements {
    pub p: f64,
    pub f: f64,
    pub g: f64,
    pub h: f64,
    pub k: f64,
    pub l: f64,
}

/// Spherical position plus velocity components along the local
/// (radial, azimuthal, elevation) unit vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spherical {
    pub r: f64,
    pub azimuth: f64,
    pub elevation: f64,
    pub v_r: f64,
    pub v_az: f64,
    pub v_el: f64,
}

/// Cylindrical position plus velocity components along the local
/// (radial, tangential, axial) unit vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cylindrical {
    pub rho: f64,
    pub theta: f64,
    pub z: f64,
    pub v_rho: f64,
    pub v_theta: f64,
    pub v_z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frames {
    pub mee: EquinoctialElements,
    pub spherical: Spherical,
    pub cylindrical: Cylindrical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitScalars {
    pub h_mag: f64,
    pub energy: f64,
    pub r_sun: f64,
}

impl EquinoctialElements {
    pub fn as_array(&self) -> [f64; 6] {
        [self.p, self.f, self.g, self.h, self.k, self.l]
    }

    /// Computes elements directly from position and velocity. Retrograde
    /// equatorial orbits (i = π) are the singular set and are rejected.
    pub fn from_state(state: &StateVector) -> Result<Self> {
        let r = state.position;
        let v = state.velocity;
        let rn = r.norm();
        let hv = r.cross(&v);
        let hn = hv.norm();
        if hn <= 1e-14 * rn * v.norm() {
            return Err(Error::UnsupportedOrbit("rectilinear orbit".into()));
        }
        let h_hat = hv / hn;
        let denom = 1.0 + h_hat.z;
        if denom <= 1e-12 {
            return Err(Error::UnsupportedOrbit(
                "retrograde equatorial orbit has no equinoctial elements".into(),
            ));
        }
        let k = h_hat.x / denom;
        let h = -h_hat.y / denom;
        let (f_hat, g_hat) = equinoctial_basis(h, k);
        let e_vec = v.cross(&hv) / MU - r / rn;
        let p = hn * hn / MU;
        let l = wrap_two_pi(r.dot(&g_hat).atan2(r.dot(&f_hat)));
        Ok(Self {
            p,
            f: e_vec.dot(&f_hat),
            g: e_vec.dot(&g_hat),
            h,
            k,
            l,
        })
    }

    pub fn to_state(&self) -> Result<StateVector> {
        let Self { p, f, g, h, k, l } = *self;
        if !(p > 0.0) {
            return Err(Error::UnsupportedOrbit(format!("semi-latus rectum {p}")));
        }
        let (sl, cl) = l.sin_cos();
        let w = 1.0 + f * cl + g * sl;
        if w <= 0.0 {
            return Err(Error::UnsupportedOrbit("true longitude beyond asymptote".into()));
        }
        let r = p / w;
        let alpha2 = h * h - k * k;
        let s2 = 1.0 + h * h + k * k;
        let hk = h * k;
        let pos = Vec3::new(
            r / s2 * (cl + alpha2 * cl + 2.0 * hk * sl),
            r / s2 * (sl - alpha2 * sl + 2.0 * hk * cl),
            2.0 * r / s2 * (h * sl - k * cl),
        );
        let vs = (MU / p).sqrt() / s2;
        let vel = Vec3::new(
            -vs * (sl + alpha2 * sl - 2.0 * hk * cl + g - 2.0 * f * hk + alpha2 * g),
            -vs * (-cl + alpha2 * cl + 2.0 * hk * sl - f + 2.0 * g * hk + alpha2 * f),
            2.0 * vs * (h * cl + k * sl + f * h + g * k),
        );
        Ok(StateVector::new(pos, vel, 1.0))
    }
}

fn equinoctial_basis(h: f64, k: f64) -> (Vec3, Vec3) {
    let s2 = 1.0 + h * h + k * k;
    let f_hat = Vec3::new(1.0 - k * k + h * h, 2.0 * k * h, -2.0 * k) / s2;
    let g_hat = Vec3::new(2.0 * k * h, 1.0 + k * k - h * h, 2.0 * h) / s2;
    (f_hat, g_hat)
}

impl Spherical {
    /// Azimuth is wrapped to [0, 2π). On the z axis the azimuth is undefined
    /// and reported as 0.
    pub fn from_state(state: &StateVector) -> Self {
        let p = state.position;
        let v = state.velocity;
        let r = p.norm();
        let azimuth = if p.x == 0.0 && p.y == 0.0 {
            0.0
        } else {
            wrap_two_pi(p.y.atan2(p.x))
        };
        let elevation = p.z.atan2(p.x.hypot(p.y));
        let (e_r, e_az, e_el) = spherical_basis(azimuth, elevation);
        Self {
            r,
            azimuth,
            elevation,
            v_r: v.dot(&e_r),
            v_az: v.dot(&e_az),
            v_el: v.dot(&e_el),
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.r, self.azimuth, self.elevation, self.v_r, self.v_az, self.v_el]
    }

    pub fn to_cartesian(&self) -> (Vec3, Vec3) {
        let (e_r, e_az, e_el) = spherical_basis(self.azimuth, self.elevation);
        (
            e_r * self.r,
            e_r * self.v_r + e_az * self.v_az + e_el * self.v_el,
        )
    }
}

fn spherical_basis(azimuth: f64, elevation: f64) -> (Vec3, Vec3, Vec3) {
    let (sa, ca) = azimuth.sin_cos();
    let (se, ce) = elevation.sin_cos();
    (
        Vec3::new(ce * ca, ce * sa, se),
        Vec3::new(-sa, ca, 0.0),
        Vec3::new(-se * ca, -se * sa, ce),
    )
}

impl Cylindrical {
    /// Angle wrapped to [0, 2π); 0 by convention on the z axis.
    pub fn from_state(state: &StateVector) -> Self {
        let p = state.position;
        let v = state.velocity;
        let rho = p.x.hypot(p.y);
        let theta = if rho == 0.0 {
            0.0
        } else {
            wrap_two_pi(p.y.atan2(p.x))
        };
        let (st, ct) = theta.sin_cos();
        Self {
            rho,
            theta,
            z: p.z,
            v_rho: v.x * ct + v.y * st,
            v_theta: -v.x * st + v.y * ct,
            v_z: v.z,
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.rho, self.theta, self.z, self.v_rho, self.v_theta, self.v_z]
    }

    pub fn to_cartesian(&self) -> (Vec3, Vec3) {
        let (st, ct) = self.theta.sin_cos();
        (
            Vec3::new(self.rho * ct, self.rho * st, self.z),
            Vec3::new(
                self.v_rho * ct - self.v_theta * st,
                self.v_rho * st + self.v_theta * ct,
                self.v_z,
            ),
        )
    }
}

/// Equinoctial, spherical and cylindrical views of one state.
pub fn state_to_frames(state: &StateVector) -> Result<Frames> {
    if !(state.position.norm() > 0.0) {
        return Err(Error::Input("state position is at the origin".into()));
    }
    Ok(Frames {
        mee: EquinoctialElements::from_state(state)?,
        spherical: Spherical::from_state(state),
        cylindrical: Cylindrical::from_state(state),
    })
}

/// Angular momentum magnitude, specific energy and heliocentric distance.
pub fn orbit_scalars(state: &StateVector) -> OrbitScalars {
    let r = state.position.norm();
    OrbitScalars {
        h_mag: state.position.cross(&state.velocity).norm(),
        energy: 0.5 * state.velocity.norm_squared() - MU / r,
        r_sun: r,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::astro::{elements_to_state, wrap_pi, ClassicalElements};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, TAU};

    fn state(p: [f64; 3], v: [f64; 3]) -> StateVector {
        StateVector::new(Vec3::from(p), Vec3::from(v), 1.0)
    }

    #[test]
    fn unit_circle_views() {
        let s = state([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let f = state_to_frames(&s).unwrap();
        assert_eq!(f.spherical.r, 1.0);
        assert_eq!(f.spherical.azimuth, 0.0);
        assert_eq!(f.spherical.elevation, 0.0);
        assert!((f.mee.p - 1.0).abs() < 1e-15);
        assert!(f.mee.f.abs() < 1e-15 && f.mee.g.abs() < 1e-15);

        let s = state([0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]);
        let c = Cylindrical::from_state(&s);
        assert!((c.rho - 1.0).abs() < 1e-15);
        assert!((c.theta - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(c.z, 0.0);
        assert!((c.v_theta - 1.0).abs() < 1e-15);
    }

    #[test]
    fn z_axis_azimuth_is_zero() {
        let s = state([0.0, 0.0, 2.0], [1.0, 0.0, 0.0]);
        assert_eq!(Spherical::from_state(&s).azimuth, 0.0);
        assert_eq!(Cylindrical::from_state(&s).theta, 0.0);
        let (p, v) = Spherical::from_state(&s).to_cartesian();
        assert!((p - s.position).norm() < 1e-15);
        assert!((v - s.velocity).norm() < 1e-15);
    }

    #[test]
    fn scalars() {
        let s = state([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let o = orbit_scalars(&s);
        assert_eq!((o.h_mag, o.energy, o.r_sun), (1.0, -0.5, 1.0));

        let v = (0.5f64).sqrt();
        let o = orbit_scalars(&state([2.0, 0.0, 0.0], [0.0, v, 0.0]));
        assert!((o.energy + 0.25).abs() < 1e-15);

        assert_eq!(orbit_scalars(&state([1.0, 2.0, 3.0], [0.0; 3])).h_mag, 0.0);
    }

    #[test]
    fn retrograde_equatorial_has_no_mee() {
        let s = state([1.0, 0.0, 0.0], [0.0, -1.0, 0.0]);
        assert!(EquinoctialElements::from_state(&s).is_err());
    }

    #[test]
    fn mee_matches_classical_definition() {
        let coe = ClassicalElements {
            a: 2.2,
            e: 0.15,
            i: 0.3,
            raan: 1.2,
            argp: 0.4,
            nu: 2.0,
        };
        let mee = EquinoctialElements::from_state(&elements_to_state(&coe).unwrap()).unwrap();
        let lp = coe.raan + coe.argp;
        let t = (coe.i / 2.0).tan();
        assert!((mee.p - coe.a * (1.0 - coe.e * coe.e)).abs() < 1e-13);
        assert!((mee.f - coe.e * lp.cos()).abs() < 1e-13);
        assert!((mee.g - coe.e * lp.sin()).abs() < 1e-13);
        assert!((mee.h - t * coe.raan.cos()).abs() < 1e-13);
        assert!((mee.k - t * coe.raan.sin()).abs() < 1e-13);
        assert!(wrap_pi(mee.l - (lp + coe.nu)).abs() < 1e-13);
    }

    fn random_state(rng: &mut ChaCha8Rng) -> StateVector {
        let coe = ClassicalElements {
            a: rng.random_range(0.5..5.0),
            e: rng.random_range(0.0..0.9),
            i: rng.random_range(0.0..3.0),
            raan: rng.random_range(0.0..TAU),
            argp: rng.random_range(0.0..TAU),
            nu: rng.random_range(0.0..TAU),
        };
        elements_to_state(&coe).unwrap()
    }

    #[test]
    fn thousand_state_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let s = random_state(&mut rng);
            let f = state_to_frames(&s).unwrap();
            let scale = s.position.norm().max(s.velocity.norm());

            let m = f.mee.to_state().unwrap();
            assert!((m.position - s.position).norm() < 1e-10 * scale);
            assert!((m.velocity - s.velocity).norm() < 1e-10 * scale);
            let (p, v) = f.spherical.to_cartesian();
            assert!((p - s.position).norm() < 1e-10 * scale);
            assert!((v - s.velocity).norm() < 1e-10 * scale);
            let (p, v) = f.cylindrical.to_cartesian();
            assert!((p - s.position).norm() < 1e-10 * scale);
            assert!((v - s.velocity).norm() < 1e-10 * scale);

            // frames -> Cartesian -> frames
            let g = state_to_frames(&m).unwrap();
            for (x, y) in f.mee.as_array().iter().zip(g.mee.as_array()) {
                assert!(wrap_pi(x - y).abs().min((x - y).abs()) < 1e-10 * x.abs().max(1.0));
            }
        }
    }
}
