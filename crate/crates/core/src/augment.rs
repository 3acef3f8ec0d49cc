//! ADASYN oversampling of the minority class.
//!
//! Minority points with more majority neighbors receive more synthetic
//! samples. Each synthetic sample lies on the segment between a minority
//! point and one of its minority neighbors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::check_xy;
use crate::datagen::record_seed;
use crate::error::{Error, Result};
use crate::features::{FeatureTable, Scaler};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdasynParams {
    pub k: usize,
    pub beta: f64,
    pub seed: u64,
}

impl Default for AdasynParams {
    fn default() -> Self {
        Self {
            k: 5,
            beta: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
    pub minority: usize,
    /// Number of rows appended after the originals.
    pub n_synthetic: usize,
}

/// Splits `total` over `weights` (summing to 1) so the parts sum to `total`
/// exactly; leftover units go to the largest fractional parts, ties to the
/// lower index.
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut parts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = parts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        parts[i] += 1;
    }
    parts
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Indices of the `k` nearest `candidates` to `query` (excluding `query`
/// itself), nearest first, ties by lower index.
fn nearest(z: &[Vec<f64>], query: usize, candidates: &[usize], k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|&&j| j != query)
        .map(|&j| (sq_dist(&z[query], &z[j]), j))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.truncate(k);
    d.into_iter().map(|(_, j)| j).collect()
}

pub fn adasyn(x: &[Vec<f64>], y: &[usize], params: &AdasynParams) -> Result<Augmented> {
    check_xy(x, y)?;
    if !(params.beta > 0.0 && params.beta <= 1.0) {
        return Err(Error::Config("beta must lie in (0, 1]".into()));
    }
    let pos = y.iter().filter(|&&c| c == 1).count();
    let counts = [y.len() - pos, pos];
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::Input("ADASYN needs both classes present".into()));
    }
    let minority = usize::from(counts[1] < counts[0]);
    let m_s = counts[minority];
    let m_l = counts[1 - minority];
    if params.k == 0 || params.k >= m_s {
        return Err(Error::Config(format!(
            "k must be in 1..{m_s} for {m_s} minority samples"
        )));
    }
    let g_total = ((m_l - m_s) as f64 * params.beta).round() as usize;
    let mut out = Augmented {
        x: x.to_vec(),
        y: y.to_vec(),
        minority,
        n_synthetic: 0,
    };
    if g_total == 0 {
        return Ok(out);
    }

    // neighbor search on standardized columns
    let names: Vec<String> = (0..x[0].len()).map(|j| j.to_string()).collect();
    let z = Scaler::fit(&names, x, 0.0, 1.0)?.apply(x)?;
    let all: Vec<usize> = (0..x.len()).collect();
    let minority_idx: Vec<usize> = all.iter().copied().filter(|&i| y[i] == minority).collect();

    let ratios: Vec<f64> = minority_idx
        .par_iter()
        .map(|&i| {
            let nn = nearest(&z, i, &all, params.k);
            nn.iter().filter(|&&j| y[j] != minority).count() as f64 / params.k as f64
        })
        .collect();
    let sum: f64 = ratios.iter().sum();
    let weights: Vec<f64> = if sum > 0.0 {
        ratios.iter().map(|r| r / sum).collect()
    } else {
        vec![1.0 / m_s as f64; m_s]
    };
    let quota = largest_remainder(&weights, g_total);

    let synthetic: Vec<Vec<Vec<f64>>> = minority_idx
        .par_iter()
        .zip(&quota)
        .map(|(&i, &g)| {
            if g == 0 {
                return Vec::new();
            }
            let nn = nearest(&z, i, &minority_idx, params.k);
            let mut rng = ChaCha8Rng::seed_from_u64(record_seed(params.seed, i as u64));
            (0..g)
                .map(|_| {
                    let zi = nn[rng.random_range(0..nn.len())];
                    let lambda: f64 = rng.random();
                    x[i].iter()
                        .zip(&x[zi])
                        .map(|(a, b)| a + lambda * (b - a))
                        .collect()
                })
                .collect()
        })
        .collect();
    for rows in synthetic {
        out.n_synthetic += rows.len();
        out.y.extend(std::iter::repeat_n(minority, rows.len()));
        out.x.extend(rows);
    }
    Ok(out)
}

pub fn adasyn_table(table: &FeatureTable, params: &AdasynParams) -> Result<FeatureTable> {
    let a = adasyn(&table.rows, &table.labels, params)?;
    FeatureTable::new(table.names.clone(), a.x, a.y)
}
