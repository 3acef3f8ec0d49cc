//! Keplerian body catalog and two-body ephemerides.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs::File;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{elements_to_state, solve_kepler_elliptic, wrap_two_pi, ClassicalElements, StateVector};
use crate::error::{Error, Result};
use crate::units::{days_to_tu, MJD_2020, MU};

/// One catalog body. `elements.nu` holds the mean anomaly M0 at `epoch_mjd`.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyRecord {
    pub id: i64,
    pub name: String,
    pub epoch_mjd: f64,
    pub elements: ClassicalElements,
}

impl BodyRecord {
    pub fn mean_anomaly(&self) -> f64 {
        self.elements.nu
    }

    pub fn mean_motion(&self) -> f64 {
        (MU / self.elements.a.powi(3)).sqrt()
    }

    pub fn period_days(&self) -> f64 {
        crate::units::tu_to_days(TAU / self.mean_motion())
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.elements.e;
        if !(0.0..1.0).contains(&e) || !(self.elements.a > 0.0) || !self.epoch_mjd.is_finite() {
            return Err(Error::Input(format!(
                "body {} is not a bound elliptic orbit (a={}, e={})",
                self.id, self.elements.a, e
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CatalogRow {
    id: i64,
    name: String,
    epoch_mjd: f64,
    a_au: f64,
    e: f64,
    i_deg: f64,
    raan_deg: f64,
    argp_deg: f64,
    #[serde(rename = "M0_deg")]
    m0_deg: f64,
}

impl From<&BodyRecord> for CatalogRow {
    fn from(b: &BodyRecord) -> Self {
        let el = &b.elements;
        CatalogRow {
            id: b.id,
            name: b.name.clone(),
            epoch_mjd: b.epoch_mjd,
            a_au: el.a,
            e: el.e,
            i_deg: el.i.to_degrees(),
            raan_deg: el.raan.to_degrees(),
            argp_deg: el.argp.to_degrees(),
            m0_deg: el.nu.to_degrees(),
        }
    }
}

impl CatalogRow {
    fn into_record(self) -> BodyRecord {
        BodyRecord {
            id: self.id,
            name: self.name,
            epoch_mjd: self.epoch_mjd,
            elements: ClassicalElements {
                a: self.a_au,
                e: self.e,
                i: self.i_deg.to_radians(),
                raan: wrap_two_pi(self.raan_deg.to_radians()),
                argp: wrap_two_pi(self.argp_deg.to_radians()),
                nu: wrap_two_pi(self.m0_deg.to_radians()),
            },
        }
    }
}

/// Bodies keyed by id, iterated in ascending id order.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    bodies: BTreeMap<i64, BodyRecord>,
}

impl Catalog {
    pub fn new(bodies: impl IntoIterator<Item = BodyRecord>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for b in bodies {
            b.validate()?;
            if map.insert(b.id, b).is_some() {
                return Err(Error::Input("duplicate body id in catalog".into()));
            }
        }
        Ok(Self { bodies: map })
    }

    pub fn get(&self, id: i64) -> Result<&BodyRecord> {
        self.bodies.get(&id).ok_or(Error::CatalogMiss(id))
    }

    pub fn len(&self) -> usize {
        self.bodies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bodies.is_empty()
    }

    pub fn ids(&self) -> Vec<i64> {
        self.bodies.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &BodyRecord> {
        self.bodies.values()
    }
}

pub fn read_catalog(path: &Path) -> Result<Catalog> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut bodies = Vec::new();
    for row in reader.deserialize::<CatalogRow>() {
        bodies.push(row?.into_record());
    }
    Catalog::new(bodies)
}

pub fn write_catalog(catalog: &Catalog, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    for b in catalog.iter() {
        writer.serialize(CatalogRow::from(b))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Element ranges of the synthetic main-belt-like catalog.
#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub a_range: (f64, f64),
    pub e_max: f64,
    pub i_max_deg: f64,
    pub epoch_mjd: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            a_range: (2.0, 3.5),
            e_max: 0.3,
            i_max_deg: 20.0,
            epoch_mjd: MJD_2020,
        }
    }
}

/// Size and seed of the catalog used when no catalog file is configured.
pub const DEFAULT_SYNTH_BODIES: usize = 200;
pub const DEFAULT_SYNTH_SEED: u64 = 1;

pub fn default_synth_catalog() -> Catalog {
    synth_catalog(DEFAULT_SYNTH_BODIES, DEFAULT_SYNTH_SEED, &SynthOptions::default())
}

pub fn synth_catalog(n: usize, seed: u64, opts: &SynthOptions) -> Catalog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bodies = (0..n).map(|k| {
        let elements = ClassicalElements {
            a: rng.random_range(opts.a_range.0..=opts.a_range.1),
            e: rng.random_range(0.0..=opts.e_max),
            i: rng.random_range(0.0..=opts.i_max_deg).to_radians(),
            raan: rng.random_range(0.0..TAU),
            argp: rng.random_range(0.0..TAU),
            nu: rng.random_range(0.0..TAU),
        };
        BodyRecord {
            id: k as i64 + 1,
            name: format!("SYN-{:05}", k + 1),
            epoch_mjd: opts.epoch_mjd,
            elements,
        }
    });
    Catalog::new(bodies).expect("synthetic elements are valid")
}

/// Two-body state of a catalog body at `epoch_mjd` (unit placeholder mass).
pub fn ephemeris_at(body: &BodyRecord, epoch_mjd: f64) -> Result<StateVector> {
    if !epoch_mjd.is_finite() {
        return Err(Error::Input(format!("epoch {epoch_mjd} is not finite")));
    }
    let el = &body.elements;
    let dt = days_to_tu(epoch_mjd - body.epoch_mjd);
    let mean = wrap_two_pi(body.mean_anomaly() + body.mean_motion() * dt);
    let ecc_anom = solve_kepler_elliptic(mean, el.e)?;
    let nu = 2.0
        * ((1.0 + el.e).sqrt() * (0.5 * ecc_anom).sin())
            .atan2((1.0 - el.e).sqrt() * (0.5 * ecc_anom).cos());
    elements_to_state(&ClassicalElements {
        nu: wrap_two_pi(nu),
        ..*el
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::astro::kepler_propagate;

    fn body(e: f64) -> BodyRecord {
        BodyRecord {
            id: 1,
            name: "test".into(),
            epoch_mjd: 60000.0,
            elements: ClassicalElements {
                a: 2.4,
                e,
                i: 0.2,
                raan: 1.0,
                argp: 2.0,
                nu: 0.7,
            },
        }
    }

    #[test]
    fn at_own_epoch_matches_elements() {
        let b = body(0.0);
        let s = ephemeris_at(&b, b.epoch_mjd).unwrap();
        let direct = elements_to_state(&b.elements).unwrap();
        assert!((s.position - direct.position).norm() < 1e-12);
        assert!((s.velocity - direct.velocity).norm() < 1e-12);

        let b = body(0.25);
        let s = ephemeris_at(&b, b.epoch_mjd).unwrap();
        let ecc = solve_kepler_elliptic(0.7, 0.25).unwrap();
        let nu = 2.0 * ((1.25f64).sqrt() * (ecc / 2.0).tan() / (0.75f64).sqrt()).atan();
        let direct = elements_to_state(&ClassicalElements { nu, ..b.elements }).unwrap();
        assert!((s.position - direct.position).norm() < 1e-12);
    }

    #[test]
    fn periodic_after_one_period() {
        let b = body(0.2);
        let s0 = ephemeris_at(&b, 61000.0).unwrap();
        let s1 = ephemeris_at(&b, 61000.0 + b.period_days()).unwrap();
        assert!((s0.position - s1.position).norm() < 1e-9);
        assert!((s0.velocity - s1.velocity).norm() < 1e-9);
    }

    #[test]
    fn circular_radius_constant() {
        let b = body(0.0);
        for k in 0..50 {
            let s = ephemeris_at(&b, 58000.0 + 97.3 * k as f64).unwrap();
            assert!((s.position.norm() - 2.4).abs() < 1e-12);
        }
    }

    #[test]
    fn agrees_with_universal_propagation() {
        let b = body(0.15);
        let s0 = ephemeris_at(&b, b.epoch_mjd).unwrap();
        let s1 = ephemeris_at(&b, b.epoch_mjd + 400.0).unwrap();
        let p = kepler_propagate(&s0, days_to_tu(400.0)).unwrap();
        assert!((p.position - s1.position).norm() < 1e-10);
    }

    #[test]
    fn csv_round_trip() {
        let cat = synth_catalog(12, 5, &SynthOptions::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cat.csv");
        write_catalog(&cat, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("id,name,epoch_mjd,a_au,e,i_deg,raan_deg,argp_deg,M0_deg\n"));
        let back = read_catalog(&path).unwrap();
        assert_eq!(back.len(), 12);
        for (a, b) in cat.iter().zip(back.iter()) {
            assert_eq!(a.id, b.id);
            for (x, y) in a.elements.as_array().iter().zip(b.elements.as_array()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn synthetic_ranges() {
        let cat = synth_catalog(200, 1, &SynthOptions::default());
        for b in cat.iter() {
            assert!((2.0..=3.5).contains(&b.elements.a));
            assert!((0.0..=0.3).contains(&b.elements.e));
            assert!(b.elements.i <= 20f64.to_radians() + 1e-15);
        }
        assert!(matches!(cat.get(999), Err(Error::CatalogMiss(999))));
    }
}
