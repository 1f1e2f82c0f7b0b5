//! Synthetic stand-ins with the shape of the SECOM and Tennessee Eastman
//! benchmarks, for demos and for running the pipeline where the real files
//! are not available.
//!
//! Both generators draw rows from a small set of latent process factors that
//! are mixed into many redundant, noisy sensor columns; faults displace some
//! factors. The SECOM stand-in also reproduces the benchmark's column
//! pathologies: constant sensors, pure-noise sensors, wildly different
//! scales, and a block of mostly-missing columns.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::loaders::TEP_VARIABLES;
use super::{TabularDataset, FAILURE, SUCCESS};
use crate::error::{ClaireError, Result};
use crate::numerics::{Matrix, RngStream};

#[derive(Debug, Clone)]
pub struct SecomLikeConfig {
    pub rows: usize,
    pub columns: usize,
    pub failures: usize,
    pub factors: usize,
    pub constant_columns: usize,
    pub noise_columns: usize,
    pub sparse_columns: usize,
    pub sensor_noise: f64,
}

impl Default for SecomLikeConfig {
    fn default() -> Self {
        Self {
            rows: 1567,
            columns: 590,
            failures: 104,
            factors: 10,
            constant_columns: 20,
            noise_columns: 100,
            sparse_columns: 28,
            sensor_noise: 0.8,
        }
    }
}

/// SECOM-shaped dataset with raw NaNs; labels use 1 = pass, 0 = fail.
pub fn secom_like(cfg: &SecomLikeConfig, seed: u64) -> TabularDataset {
    let root = RngStream::new(seed);
    let mut rng = root.substream("structure");
    let k = cfg.factors;
    let d = cfg.columns;

    // column kinds: 0 constant, 1 noise, 2 process
    let mut kinds = vec![2u8; d];
    let perm = rng.permutation(d);
    for &j in &perm[..cfg.constant_columns] {
        kinds[j] = 0;
    }
    for &j in &perm[cfg.constant_columns..cfg.constant_columns + cfg.noise_columns] {
        kinds[j] = 1;
    }
    let scale: Vec<f64> = (0..d).map(|_| (2.0 * rng.normal()).exp()).collect();
    let offset: Vec<f64> = (0..d).map(|j| 10.0 * rng.normal() * scale[j]).collect();
    let loadings: Vec<Vec<(usize, f64)>> = (0..d)
        .map(|_| (0..3).map(|_| (rng.below(k), rng.normal())).collect())
        .collect();
    let mut missing_rate = vec![0.0; d];
    let sparse = rng.permutation(d);
    for (pos, &j) in sparse.iter().enumerate() {
        missing_rate[j] = if pos < cfg.sparse_columns {
            rng.uniform_range(0.45, 0.95)
        } else if rng.bernoulli(0.5) {
            rng.uniform_range(0.0, 0.03)
        } else {
            0.0
        };
    }
    let mut fault_shift = vec![0.0; k];
    fault_shift[0] = 1.0;
    fault_shift[1] = -0.8;
    fault_shift[2] = 0.6;

    let mut rows_rng = root.substream("rows");
    let failing: Vec<usize> = rows_rng.permutation(cfg.rows)[..cfg.failures].to_vec();
    let mut labels = vec![SUCCESS; cfg.rows];
    for &i in &failing {
        labels[i] = FAILURE;
    }
    let mut data = Vec::with_capacity(cfg.rows * d);
    let mut f = vec![0.0; k];
    for &label in &labels {
        for (t, v) in f.iter_mut().enumerate() {
            *v = rows_rng.normal();
            if label == FAILURE {
                *v += fault_shift[t];
                if t == 3 {
                    *v *= 1.5;
                }
            }
        }
        for j in 0..d {
            let raw = match kinds[j] {
                0 => 0.0,
                1 => rows_rng.normal(),
                _ => {
                    let s: f64 = loadings[j].iter().map(|&(t, w)| w * f[t]).sum::<f64>() / 3f64.sqrt();
                    s.tanh() + cfg.sensor_noise * rows_rng.normal()
                }
            };
            let v = offset[j] + scale[j] * raw;
            data.push(if rows_rng.bernoulli(missing_rate[j]) {
                f64::NAN
            } else {
                v
            });
        }
    }
    let features = Matrix::from_vec(cfg.rows, d, data).expect("sized above");
    let names = (0..d).map(|j| format!("feature_{j}")).collect();
    TabularDataset::new(features, labels, names).expect("consistent by construction")
}

/// Writes a dataset in the UCI SECOM two-file layout.
pub fn write_secom(ds: &TabularDataset, features_path: &Path, labels_path: &Path) -> Result<()> {
    let mut body = String::new();
    for r in ds.features.iter_rows() {
        let line: Vec<String> = r
            .iter()
            .map(|v| if v.is_nan() { "NaN".to_string() } else { format!("{v}") })
            .collect();
        body.push_str(&line.join(" "));
        body.push('\n');
    }
    fs::write(features_path, body).map_err(|e| ClaireError::io(features_path, e))?;
    let mut labels = String::new();
    for (i, &l) in ds.labels.iter().enumerate() {
        let code = if l == SUCCESS { -1 } else { 1 };
        let _ = writeln!(labels, "{code} \"01/01/2008 {:02}:{:02}:00\"", (i / 60) % 24, i % 60);
    }
    fs::write(labels_path, labels).map_err(|e| ClaireError::io(labels_path, e))
}

#[derive(Debug, Clone)]
pub struct TepLikeConfig {
    pub normal_rows: usize,
    pub rows_per_fault: usize,
    pub faults: u32,
    pub factors: usize,
    pub sensor_noise: f64,
}

impl Default for TepLikeConfig {
    fn default() -> Self {
        Self {
            normal_rows: 600,
            rows_per_fault: 200,
            faults: 3,
            factors: 8,
            sensor_noise: 0.5,
        }
    }
}

/// Tennessee-Eastman-shaped records `(fault class, 52 variables)`.
///
/// Fault 1 is a step in one factor, fault 2 inflates the variance of two
/// factors, fault 3 is a bias on a few sensors; further faults cycle.
pub fn tep_like(cfg: &TepLikeConfig, seed: u64) -> Vec<(u32, Vec<f64>)> {
    let root = RngStream::new(seed);
    let mut rng = root.substream("structure");
    let k = cfg.factors;
    let mixing: Vec<Vec<f64>> = (0..TEP_VARIABLES)
        .map(|_| (0..k).map(|_| rng.normal() / (k as f64).sqrt()).collect())
        .collect();
    let level: Vec<f64> = (0..TEP_VARIABLES).map(|_| 50.0 + 20.0 * rng.normal()).collect();
    let spread: Vec<f64> = (0..TEP_VARIABLES).map(|_| (0.5 * rng.normal()).exp()).collect();
    let biased: Vec<usize> = rng.permutation(TEP_VARIABLES)[..4].to_vec();

    let mut rows_rng = root.substream("rows");
    let mut classes: Vec<u32> = vec![0; cfg.normal_rows];
    for c in 1..=cfg.faults {
        classes.extend(std::iter::repeat_n(c, cfg.rows_per_fault));
    }
    rows_rng.shuffle(&mut classes);
    classes
        .into_iter()
        .map(|class| {
            let mut f: Vec<f64> = (0..k).map(|_| rows_rng.normal()).collect();
            match class {
                0 => {}
                c if c % 3 == 1 => f[0] += 1.5,
                c if c % 3 == 2 => {
                    f[1] *= 2.5;
                    f[2] *= 2.5;
                }
                _ => {}
            }
            let mut x: Vec<f64> = (0..TEP_VARIABLES)
                .map(|j| {
                    let s: f64 = mixing[j].iter().zip(&f).map(|(w, v)| w * v).sum();
                    s + cfg.sensor_noise * rows_rng.normal()
                })
                .collect();
            if class != 0 && class % 3 == 0 {
                for &j in &biased {
                    x[j] += 1.0;
                }
            }
            let values = x.iter().enumerate().map(|(j, v)| level[j] + spread[j] * v).collect();
            (class, values)
        })
        .collect()
}

/// Writes TEP-like records with a `faultNumber,xmeas_1..41,xmv_1..11` header.
pub fn write_tep(records: &[(u32, Vec<f64>)], path: &Path) -> Result<()> {
    let mut body = String::from("faultNumber");
    for j in 1..=41 {
        let _ = write!(body, ",xmeas_{j}");
    }
    for j in 1..=11 {
        let _ = write!(body, ",xmv_{j}");
    }
    body.push('\n');
    for (class, values) in records {
        let _ = write!(body, "{class}");
        for v in values {
            let _ = write!(body, ",{v}");
        }
        body.push('\n');
    }
    fs::write(path, body).map_err(|e| ClaireError::io(path, e))
}
