//! The 103-column feature vector of a transfer, column standardization and
//! top-k column selection.
//!
//! Layout: `[m_i, tof, tof_ini, lambert_dv | COE | MEE | PV | Sph | Cyl | R | E | H]`
//! where every six-element group appears as body 1, body 2 and their
//! difference, and the three scalar groups likewise. Both bodies are evaluated
//! at the departure epoch. Differences of angles are wrapped to (−π, π].

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::astro::{
    ephemeris_at, orbit_scalars, state_to_elements, state_to_frames, wrap_pi, Catalog, StateVector,
};
use crate::datagen::{Label, LabeledTransfer, TransferRecord, TransferScenario};
use crate::error::{Error, Result};

pub const FEATURE_COUNT: usize = 103;
pub const DEFAULT_TOP_K: usize = 60;

const SCENARIO_NAMES: [&str; 4] = ["m_i", "tof", "tof_ini", "lambert_dv"];

/// Six-element groups: prefix, component names and which components are angles.
const VECTOR_GROUPS: [(&str, [&str; 6], [bool; 6]); 5] = [
    (
        "coe",
        ["a", "e", "i", "raan", "argp", "nu"],
        [false, false, true, true, true, true],
    ),
    (
        "mee",
        ["p", "f", "g", "h", "k", "l"],
        [false, false, false, false, false, true],
    ),
    (
        "pv",
        ["x", "y", "z", "vx", "vy", "vz"],
        [false; 6],
    ),
    (
        "sph",
        ["r", "az", "el", "vr", "vaz", "vel"],
        [false, true, true, false, false, false],
    ),
    (
        "cyl",
        ["rho", "theta", "z", "vrho", "vtheta", "vz"],
        [false, true, false, false, false, false],
    ),
];

const SCALAR_GROUPS: [&str; 3] = ["r", "energy", "h"];

/// Frozen column names, in output order.
pub fn feature_names() -> Vec<String> {
    let mut names: Vec<String> = SCENARIO_NAMES.iter().map(|s| s.to_string()).collect();
    for (prefix, comps, _) in VECTOR_GROUPS {
        for tag in ["1", "2", "d"] {
            names.extend(comps.iter().map(|c| format!("{prefix}{tag}_{c}")));
        }
    }
    for name in SCALAR_GROUPS {
        names.extend(["1", "2", "d"].iter().map(|tag| format!("{name}{tag}")));
    }
    debug_assert_eq!(names.len(), FEATURE_COUNT);
    names
}

fn push_triple(out: &mut Vec<f64>, a: [f64; 6], b: [f64; 6], angular: [bool; 6]) {
    out.extend_from_slice(&a);
    out.extend_from_slice(&b);
    for k in 0..6 {
        let d = a[k] - b[k];
        out.push(if angular[k] { wrap_pi(d) } else { d });
    }
}

/// Features from two explicit heliocentric states.
pub fn features_from_states(
    m_i: f64,
    tof_days: f64,
    tof_ini_days: f64,
    lambert_dv_kms: f64,
    body1: &StateVector,
    body2: &StateVector,
) -> Result<Vec<f64>> {
    let coe1 = state_to_elements(body1)?;
    let coe2 = state_to_elements(body2)?;
    let f1 = state_to_frames(body1)?;
    let f2 = state_to_frames(body2)?;
    let pv = |s: &StateVector| {
        [
            s.position.x,
            s.position.y,
            s.position.z,
            s.velocity.x,
            s.velocity.y,
            s.velocity.z,
        ]
    };

    let mut out = Vec::with_capacity(FEATURE_COUNT);
    out.extend_from_slice(&[m_i, tof_days, tof_ini_days, lambert_dv_kms]);
    let groups = [
        (coe1.as_array(), coe2.as_array()),
        (f1.mee.as_array(), f2.mee.as_array()),
        (pv(body1), pv(body2)),
        (f1.spherical.as_array(), f2.spherical.as_array()),
        (f1.cylindrical.as_array(), f2.cylindrical.as_array()),
    ];
    for ((a, b), (_, _, angular)) in groups.into_iter().zip(VECTOR_GROUPS) {
        push_triple(&mut out, a, b, angular);
    }
    let s1 = orbit_scalars(body1);
    let s2 = orbit_scalars(body2);
    for (a, b) in [
        (s1.r_sun, s2.r_sun),
        (s1.energy, s2.energy),
        (s1.h_mag, s2.h_mag),
    ] {
        out.extend_from_slice(&[a, b, a - b]);
    }

    if let Some(k) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure {
            context: "feature construction",
            residual: out[k],
        });
    }
    Ok(out)
}

/// Features of a scenario; both bodies are evaluated at its departure epoch.
pub fn scenario_features(scenario: &TransferScenario, catalog: &Catalog) -> Result<Vec<f64>> {
    let b1 = ephemeris_at(catalog.get(scenario.body1_id)?, scenario.epoch_mjd)?;
    let b2 = ephemeris_at(catalog.get(scenario.body2_id)?, scenario.epoch_mjd)?;
    features_from_states(
        scenario.m0,
        scenario.tof_days,
        scenario.tof_ini_days,
        scenario.lambert_dv_kms,
        &b1,
        &b2,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub values: Vec<f64>,
    pub names: Vec<String>,
    pub label: Label,
}

pub fn build_features(record: &LabeledTransfer, catalog: &Catalog) -> Result<FeatureRecord> {
    Ok(FeatureRecord {
        values: scenario_features(&record.scenario, catalog)?,
        names: feature_names(),
        label: record.label,
    })
}

/// A labeled feature matrix. Rows are samples; `labels` holds class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl FeatureTable {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        let table = Self {
            names,
            rows,
            labels,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.len() != self.labels.len() {
            return Err(Error::Shape {
                expected: self.rows.len(),
                got: self.labels.len(),
            });
        }
        for row in &self.rows {
            if row.len() != self.names.len() {
                return Err(Error::Shape {
                    expected: self.names.len(),
                    got: row.len(),
                });
            }
        }
        if self.labels.iter().any(|&y| y > 1) {
            return Err(Error::Input("labels must be 0 or 1".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let pos = self.labels.iter().filter(|&&y| y == 1).count();
        [self.labels.len() - pos, pos]
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Keeps the named columns, in the given order.
    pub fn select_columns(&self, names: &[String]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| {
                self.names
                    .iter()
                    .position(|m| m == n)
                    .ok_or_else(|| Error::Input(format!("unknown feature column {n}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            names: names.to_vec(),
            rows: self
                .rows
                .iter()
                .map(|r| idx.iter().map(|&j| r[j]).collect())
                .collect(),
            labels: self.labels.clone(),
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let mut header = self.names.clone();
        header.push("label".into());
        w.write_record(&header)?;
        for (row, y) in self.rows.iter().zip(&self.labels) {
            let mut fields: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            fields.push(y.to_string());
            w.write_record(&fields)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = csv::Reader::from_reader(BufReader::new(file));
        let header = r.headers()?.clone();
        let width = header.len();
        if width < 2 || &header[width - 1] != "label" {
            return Err(Error::Input(format!(
                "{}: last column must be `label`",
                path.display()
            )));
        }
        let names: Vec<String> = header.iter().take(width - 1).map(String::from).collect();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (lineno, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| {
                Error::Input(format!("{}:{}: {what}", path.display(), lineno + 2))
            };
            let row = rec
                .iter()
                .take(width - 1)
                .map(|f| f.trim().parse::<f64>().map_err(|_| bad("non-numeric feature")))
                .collect::<Result<Vec<_>>>()?;
            if row.iter().any(|v| !v.is_finite()) {
                return Err(bad("non-finite feature"));
            }
            let label = match rec[width - 1].trim() {
                "1" | "feasible" => 1,
                "0" | "infeasible" => 0,
                _ => return Err(bad("label must be 0/1")),
            };
            rows.push(row);
            labels.push(label);
        }
        Self::new(names, rows, labels)
    }
}

/// Builds the full table for a dataset, one row per record.
pub fn build_feature_table(records: &[TransferRecord], catalog: &Catalog) -> Result<FeatureTable> {
    let rows = records
        .par_iter()
        .map(|r| scenario_features(&r.scenario(), catalog))
        .collect::<Result<Vec<_>>>()?;
    FeatureTable::new(
        feature_names(),
        rows,
        records.iter().map(|r| r.label.as_class()).collect(),
    )
}

/// Per-column affine standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub names: Vec<String>,
    pub mu_x: Vec<f64>,
    pub sigma_x: Vec<f64>,
    pub mu_y: f64,
    pub sigma_y: f64,
}

impl Scaler {
    /// Column means and sample (n−1) standard deviations.
    pub fn fit(names: &[String], rows: &[Vec<f64>], mu_y: f64, sigma_y: f64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Input("cannot fit a scaler on zero rows".into()));
        }
        if !(mu_y.is_finite() && sigma_y.is_finite()) {
            return Err(Error::Config("scaler target must be finite".into()));
        }
        let width = names.len();
        if let Some(r) = rows.iter().find(|r| r.len() != width) {
            return Err(Error::Shape {
                expected: width,
                got: r.len(),
            });
        }
        let n = rows.len() as f64;
        let mut mu_x = vec![0.0; width];
        for r in rows {
            for (m, v) in mu_x.iter_mut().zip(r) {
                *m += v;
            }
        }
        mu_x.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; width];
        for r in rows {
            for j in 0..width {
                let d = r[j] - mu_x[j];
                var[j] += d * d;
            }
        }
        let sigma_x = var
            .into_iter()
            .map(|s| if rows.len() > 1 { (s / (n - 1.0)).sqrt() } else { 0.0 })
            .collect();
        Ok(Self {
            names: names.to_vec(),
            mu_x,
            sigma_x,
            mu_y,
            sigma_y,
        })
    }

    pub fn fit_table(table: &FeatureTable) -> Result<Self> {
        Self::fit(&table.names, &table.rows, 0.0, 1.0)
    }

    pub fn width(&self) -> usize {
        self.mu_x.len()
    }

    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.width() {
            return Err(Error::Shape {
                expected: self.width(),
                got: row.len(),
            });
        }
        Ok(row
            .iter()
            .enumerate()
            .map(|(j, &x)| {
                let s = self.sigma_x[j];
                if s > 0.0 {
                    (x - self.mu_x[j]) / s * self.sigma_y + self.mu_y
                } else {
                    self.mu_y
                }
            })
            .collect())
    }

    pub fn apply(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.transform_row(r)).collect()
    }

    pub fn apply_table(&self, table: &FeatureTable) -> Result<FeatureTable> {
        if table.names != self.names {
            return Err(Error::Input(
                "scaler column names do not match the table".into(),
            ));
        }
        Ok(FeatureTable {
            names: table.names.clone(),
            rows: self.apply(&table.rows)?,
            labels: table.labels.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let s: Self = serde_json::from_reader(BufReader::new(file))?;
        if s.sigma_x.len() != s.mu_x.len() || s.names.len() != s.mu_x.len() {
            return Err(Error::Input(format!(
                "{}: scaler arrays have inconsistent lengths",
                path.display()
            )));
        }
        Ok(s)
    }
}

/// The first `k` columns of `ranking`, in ranking order.
pub fn select_top_k(table: &FeatureTable, ranking: &[String], k: usize) -> Result<FeatureTable> {
    if k == 0 || k > table.width() {
        return Err(Error::Config(format!(
            "k must be in 1..={}, got {k}",
            table.width()
        )));
    }
    let mut sorted_rank = ranking.to_vec();
    sorted_rank.sort();
    let mut sorted_names = table.names.clone();
    sorted_names.sort();
    if sorted_rank != sorted_names {
        return Err(Error::Input(
            "ranking is not a permutation of the table columns".into(),
        ));
    }
    table.select_columns(&ranking[..k])
}
