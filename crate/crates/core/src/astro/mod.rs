//! Two-body astrodynamics in canonical heliocentric units (mu = 1).

mod catalog;
mod elements;
mod frames;
mod kepler;
mod lambert;

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use catalog::{
    default_synth_catalog, ephemeris_at, read_catalog, synth_catalog, write_catalog, BodyRecord,
    Catalog, SynthOptions, DEFAULT_SYNTH_BODIES, DEFAULT_SYNTH_SEED,
};
pub use elements::{elements_to_state, state_to_elements, ClassicalElements};
pub use frames::{
    orbit_scalars, state_to_frames, Cylindrical, EquinoctialElements, Frames, OrbitScalars,
    Spherical,
};
pub use kepler::{kepler_propagate, solve_kepler_elliptic, stumpff_c, stumpff_s};
pub use lambert::lambert_solve;

pub type Vec3 = Vector3<f64>;

/// Heliocentric position (AU), velocity (canonical) and mass (kg).
///
/// Ballistic propagation never touches `mass`. Body ephemerides carry a unit
/// placeholder mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub position: Vec3,
    pub velocity: Vec3,
    pub mass: f64,
}

impl StateVector {
    pub fn new(position: Vec3, velocity: Vec3, mass: f64) -> Self {
        Self {
            position,
            velocity,
            mass,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.position.iter().chain(self.velocity.iter()).all(|x| x.is_finite());
        if !finite {
            return Err(Error::Input("state has non-finite components".into()));
        }
        if self.position.norm() <= 0.0 {
            return Err(Error::Input("state position is at the origin".into()));
        }
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::Input(format!("state mass {} is not positive", self.mass)));
        }
        Ok(())
    }

    pub fn with_mass(mut self, mass: f64) -> Self {
        self.mass = mass;
        self
    }
}

/// Wraps an angle to [0, 2π).
pub fn wrap_two_pi(angle: f64) -> f64 {
    let w = angle.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Wraps an angle to (−π, π].
pub fn wrap_pi(angle: f64) -> f64 {
    let w = wrap_two_pi(angle);
    if w > PI {
        w - TAU
    } else {
        w
    }
}
