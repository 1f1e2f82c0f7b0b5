//! Kernel SHAP attributions of input features to each latent dimension of a
//! frozen encoder, plus the aggregate views built on them.
//!
//! The explained function is treated as a black box mapping `rows x d` to
//! `rows x k`. Absent features are filled from every background row and the
//! outputs averaged (independent masker). Shapley values come from the
//! Shapley-kernel weighted regression over coalitions, with
//! `sum_i phi_i = f(x) - E_bg[f]` imposed by eliminating the last feature.

use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::{TabularDataset, FAILURE, SUCCESS};
use crate::error::{ClaireError, Result};
use crate::network::{encoder_forward, NetworkParams};
use crate::numerics::{solve_weighted_least_squares, Matrix, RngStream};

/// Up to this many features every coalition is enumerated.
pub const EXHAUSTIVE_MAX_FEATURES: usize = 12;

/// Rows per black-box call when evaluating masked inputs.
const EVAL_CHUNK_ROWS: usize = 8192;

/// Samples solved together in one regression.
const SAMPLES_PER_SOLVE: usize = 32;

pub fn default_coalitions(d: usize) -> usize {
    2 * d + 2048
}

/// Shapley values `values[(j * d + i) * k + l]` for sample `j`, feature `i`,
/// output `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionTensor {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_outputs: usize,
    pub values: Vec<f64>,
    /// Mean output over the background rows.
    pub base_values: Vec<f64>,
    /// The explained function at each evaluated sample.
    pub outputs: Matrix,
    pub feature_names: Vec<String>,
    /// Whether every coalition was enumerated.
    pub exhaustive: bool,
}

impl AttributionTensor {
    pub fn get(&self, sample: usize, feature: usize, output: usize) -> f64 {
        self.values[(sample * self.n_features + feature) * self.n_outputs + output]
    }

    /// Largest `|base + sum_i phi_i - f(x)|` over samples and outputs.
    pub fn additivity_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..self.n_samples {
            for l in 0..self.n_outputs {
                let s: f64 = (0..self.n_features).map(|i| self.get(j, i, l)).sum();
                worst = worst.max((self.base_values[l] + s - self.outputs[(j, l)]).abs());
            }
        }
        worst
    }
}

/// Coalitions as feature masks with regression weights summing to one.
struct Coalitions {
    masks: Vec<Vec<bool>>,
    weights: Vec<f64>,
    exhaustive: bool,
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Total Shapley-kernel mass of all coalitions of size `s`:
/// `C(d,s) * (d-1) / (C(d,s) s (d-s))`.
fn size_mass(d: usize, s: usize) -> f64 {
    (d - 1) as f64 / (s * (d - s)) as f64
}

fn subsets_of_size(d: usize, s: usize) -> Vec<Vec<bool>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..s).collect();
    loop {
        let mut m = vec![false; d];
        idx.iter().for_each(|&i| m[i] = true);
        out.push(m);
        let mut p = s;
        loop {
            if p == 0 {
                return out;
            }
            p -= 1;
            if idx[p] < d - s + p {
                break;
            }
        }
        idx[p] += 1;
        for q in p + 1..s {
            idx[q] = idx[q - 1] + 1;
        }
    }
}

fn build_coalitions(d: usize, n_coalitions: usize, rng: &mut RngStream) -> Result<Coalitions> {
    let mut masks = Vec::new();
    let mut weights = Vec::new();
    let exhaustive = d <= EXHAUSTIVE_MAX_FEATURES;
    if exhaustive {
        for s in 1..d {
            let per = size_mass(d, s) / binomial(d, s);
            for m in subsets_of_size(d, s) {
                masks.push(m);
                weights.push(per);
            }
        }
    } else {
        if n_coalitions < d + 2 {
            return Err(ClaireError::Config(format!(
                "n_coalitions must be at least d + 2 = {}, got {n_coalitions}",
                d + 2
            )));
        }
        // sizes by decreasing mass: 1, d-1, 2, d-2, ...
        let mut order = Vec::new();
        for s in 1..=d / 2 {
            order.push(s);
            if d - s != s {
                order.push(d - s);
            }
        }
        let mut budget = n_coalitions as f64;
        let mut mass_left: f64 = (1..d).map(|s| size_mass(d, s)).sum();
        let mut sampled_from = order.len();
        for (pos, &s) in order.iter().enumerate() {
            let count = binomial(d, s);
            if count > budget * size_mass(d, s) / mass_left {
                sampled_from = pos;
                break;
            }
            let per = size_mass(d, s) / count;
            for m in subsets_of_size(d, s) {
                masks.push(m);
                weights.push(per);
            }
            budget -= count;
            mass_left -= size_mass(d, s);
        }
        for &s in &order[sampled_from..] {
            let share = budget * size_mass(d, s) / mass_left;
            let count = (share.round() as usize).max(1);
            let mut seen = HashSet::new();
            while seen.len() < count {
                let mut m = vec![false; d];
                rng.permutation(d)[..s].iter().for_each(|&i| m[i] = true);
                if seen.insert(m.clone()) {
                    masks.push(m);
                    weights.push(size_mass(d, s) / count as f64);
                }
            }
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(Coalitions {
        masks,
        weights,
        exhaustive,
    })
}

/// Calls `f` and checks it returns one row per input row and `k` columns.
fn call<F>(f: &F, x: &Matrix, k: Option<usize>) -> Result<Matrix>
where
    F: Fn(&Matrix) -> Result<Matrix>,
{
    let out = f(x)?;
    if out.rows() != x.rows() {
        return Err(ClaireError::Interface(format!(
            "function returned {} rows for {} inputs",
            out.rows(),
            x.rows()
        )));
    }
    if let Some(k) = k {
        if out.cols() != k {
            return Err(ClaireError::Interface(format!(
                "function output width changed from {k} to {}",
                out.cols()
            )));
        }
    }
    Ok(out)
}

/// Mean of `f` over the background completions of every coalition, for one
/// sample: a `n_coalitions x k` matrix.
fn coalition_values<F>(f: &F, x: &[f64], background: &Matrix, masks: &[Vec<bool>], k: usize) -> Result<Matrix>
where
    F: Fn(&Matrix) -> Result<Matrix>,
{
    let (n_bg, d) = background.shape();
    let mut values = Matrix::zeros(masks.len(), k);
    let per_chunk = (EVAL_CHUNK_ROWS / n_bg).max(1);
    for (c, chunk) in masks.chunks(per_chunk).enumerate() {
        let mut rows = Vec::with_capacity(chunk.len() * n_bg * d);
        for m in chunk {
            for b in background.iter_rows() {
                rows.extend((0..d).map(|i| if m[i] { x[i] } else { b[i] }));
            }
        }
        let out = call(f, &Matrix::from_vec(chunk.len() * n_bg, d, rows)?, Some(k))?;
        for (q, _) in chunk.iter().enumerate() {
            let row = values.row_mut(c * per_chunk + q);
            for r in 0..n_bg {
                for (v, o) in row.iter_mut().zip(out.row(q * n_bg + r)) {
                    *v += o;
                }
            }
            row.iter_mut().for_each(|v| *v /= n_bg as f64);
        }
    }
    Ok(values)
}

/// Kernel SHAP for every row of `x_eval` against `background`.
///
/// `n_coalitions` is only used when `d` exceeds
/// [`EXHAUSTIVE_MAX_FEATURES`]; sizes whose coalitions all fit in their
/// share of the budget are enumerated, the rest sampled without replacement.
pub fn kernel_shap<F>(
    f: F,
    background: &Matrix,
    x_eval: &Matrix,
    n_coalitions: usize,
    seed: u64,
) -> Result<AttributionTensor>
where
    F: Fn(&Matrix) -> Result<Matrix>,
{
    let d = background.cols();
    if background.rows() == 0 {
        return Err(ClaireError::EmptyInput("background set is empty".into()));
    }
    if d == 0 {
        return Err(ClaireError::EmptyInput("no features to explain".into()));
    }
    if x_eval.cols() != d {
        return Err(ClaireError::Shape {
            op: "kernel_shap",
            left: x_eval.shape(),
            right: background.shape(),
        });
    }
    let bg_out = call(&f, background, None)?;
    let k = bg_out.cols();
    let base_values: Vec<f64> = (0..k)
        .map(|l| bg_out.column(l).iter().sum::<f64>() / background.rows() as f64)
        .collect();
    let outputs = call(&f, x_eval, Some(k))?;
    let m = x_eval.rows();
    let mut values = vec![0.0; m * d * k];

    if d == 1 {
        for j in 0..m {
            for l in 0..k {
                values[j * k + l] = outputs[(j, l)] - base_values[l];
            }
        }
        return Ok(AttributionTensor {
            n_samples: m,
            n_features: d,
            n_outputs: k,
            values,
            base_values,
            outputs,
            feature_names: (0..d).map(|i| format!("f{i}")).collect(),
            exhaustive: true,
        });
    }

    let coalitions = build_coalitions(d, n_coalitions, &mut RngStream::new(seed))?;
    let nc = coalitions.masks.len();
    // phi_d = delta - sum_{i<d} phi_i, so the row for mask z is (z_i - z_d)_{i<d}
    let mut design = Matrix::zeros(nc, d - 1);
    for (r, mask) in coalitions.masks.iter().enumerate() {
        let zd = f64::from(u8::from(mask[d - 1]));
        for (i, v) in design.row_mut(r).iter_mut().enumerate() {
            *v = f64::from(u8::from(mask[i])) - zd;
        }
    }
    for start in (0..m).step_by(SAMPLES_PER_SOLVE) {
        let group: Vec<usize> = (start..(start + SAMPLES_PER_SOLVE).min(m)).collect();
        let mut targets = Matrix::zeros(nc, group.len() * k);
        for (g, &j) in group.iter().enumerate() {
            let v = coalition_values(&f, x_eval.row(j), background, &coalitions.masks, k)?;
            for (r, mask) in coalitions.masks.iter().enumerate() {
                let zd = f64::from(u8::from(mask[d - 1]));
                for l in 0..k {
                    let delta = outputs[(j, l)] - base_values[l];
                    targets[(r, g * k + l)] = v[(r, l)] - base_values[l] - zd * delta;
                }
            }
        }
        let beta = solve_weighted_least_squares(&design, &targets, &coalitions.weights)?;
        for (g, &j) in group.iter().enumerate() {
            for l in 0..k {
                let delta = outputs[(j, l)] - base_values[l];
                let mut rest = 0.0;
                for i in 0..d - 1 {
                    let phi = beta[(i, g * k + l)];
                    values[(j * d + i) * k + l] = phi;
                    rest += phi;
                }
                values[(j * d + d - 1) * k + l] = delta - rest;
            }
        }
    }
    Ok(AttributionTensor {
        n_samples: m,
        n_features: d,
        n_outputs: k,
        values,
        base_values,
        outputs,
        feature_names: (0..d).map(|i| format!("f{i}")).collect(),
        exhaustive: coalitions.exhaustive,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub n_background: usize,
    pub n_eval: usize,
    /// Defaults to `2 d + 2048`.
    #[serde(default)]
    pub n_coalitions: Option<usize>,
    pub beeswarm_dims: Vec<usize>,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            n_background: 100,
            n_eval: 100,
            n_coalitions: None,
            beeswarm_dims: vec![0, 5, 10, 15],
        }
    }
}

/// Attributions of the inference-mode encoder: background is the first
/// `n_background` training rows, evaluation the first `n_eval` test rows.
pub fn explain_encoder(
    params: &NetworkParams,
    train: &TabularDataset,
    test: &TabularDataset,
    cfg: &ExplainConfig,
    seed: u64,
) -> Result<AttributionTensor> {
    if cfg.n_background == 0 || cfg.n_background > train.len() {
        return Err(ClaireError::Bounds(format!(
            "n_background = {} but the training split has {} rows",
            cfg.n_background,
            train.len()
        )));
    }
    if cfg.n_eval == 0 || cfg.n_eval > test.len() {
        return Err(ClaireError::Bounds(format!(
            "n_eval = {} but the test split has {} rows",
            cfg.n_eval,
            test.len()
        )));
    }
    if train.feature_names != test.feature_names || train.n_features() != params.input_dim {
        return Err(ClaireError::Schema(
            "splits and encoder disagree on input columns".into(),
        ));
    }
    let bg = train.features.select_rows(&(0..cfg.n_background).collect::<Vec<_>>());
    let x = test.features.select_rows(&(0..cfg.n_eval).collect::<Vec<_>>());
    let n_coal = cfg
        .n_coalitions
        .unwrap_or_else(|| default_coalitions(train.n_features()));
    let mut attr = kernel_shap(|m: &Matrix| encoder_forward(params, m), &bg, &x, n_coal, seed)?;
    attr.feature_names = train.feature_names.clone();
    Ok(attr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub index: usize,
    pub feature: String,
    /// Mean |SHAP| over samples and latent dimensions ("MSV").
    pub score: f64,
    /// Mean |SHAP| over samples, per latent dimension.
    pub per_dim: Vec<f64>,
}

/// Features by non-increasing score; ties keep column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    pub entries: Vec<RankedFeature>,
}

fn importance_over(attr: &AttributionTensor, samples: &[usize]) -> ImportanceRanking {
    let (d, k) = (attr.n_features, attr.n_outputs);
    let n = samples.len().max(1) as f64;
    let mut entries: Vec<RankedFeature> = (0..d)
        .map(|i| {
            let per_dim: Vec<f64> = (0..k)
                .map(|l| samples.iter().map(|&j| attr.get(j, i, l).abs()).sum::<f64>() / n)
                .collect();
            RankedFeature {
                index: i,
                feature: attr.feature_names[i].clone(),
                score: per_dim.iter().sum::<f64>() / k.max(1) as f64,
                per_dim,
            }
        })
        .collect();
    entries.sort_by(|a, b| b.score.total_cmp(&a.score));
    ImportanceRanking { entries }
}

pub fn global_importance(attr: &AttributionTensor) -> ImportanceRanking {
    importance_over(attr, &(0..attr.n_samples).collect::<Vec<_>>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastEntry {
    pub index: usize,
    pub feature: String,
    pub failure: f64,
    pub success: f64,
    /// `failure - success`.
    pub contrast: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassConditionalImportance {
    pub failure: ImportanceRanking,
    pub success: ImportanceRanking,
    /// By non-increasing contrast.
    pub contrast: Vec<ContrastEntry>,
}

/// Importance over failure rows (label 0) and success rows (label 1).
pub fn class_conditional_importance(attr: &AttributionTensor, labels: &[u8]) -> Result<ClassConditionalImportance> {
    if labels.len() != attr.n_samples {
        return Err(ClaireError::Alignment(format!(
            "{} labels for {} explained samples",
            labels.len(),
            attr.n_samples
        )));
    }
    let fail: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] == FAILURE).collect();
    let succ: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] == SUCCESS).collect();
    if fail.is_empty() || succ.is_empty() {
        return Err(ClaireError::ClassCoverage(
            "class-conditional importance needs both classes among the explained samples".into(),
        ));
    }
    let failure = importance_over(attr, &fail);
    let success = importance_over(attr, &succ);
    let mut by_index = vec![(0.0, 0.0); attr.n_features];
    for e in &failure.entries {
        by_index[e.index].0 = e.score;
    }
    for e in &success.entries {
        by_index[e.index].1 = e.score;
    }
    let mut contrast: Vec<ContrastEntry> = by_index
        .iter()
        .enumerate()
        .map(|(i, &(f, s))| ContrastEntry {
            index: i,
            feature: attr.feature_names[i].clone(),
            failure: f,
            success: s,
            contrast: f - s,
        })
        .collect();
    contrast.sort_by(|a, b| b.contrast.total_cmp(&a.contrast));
    Ok(ClassConditionalImportance {
        failure,
        success,
        contrast,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DependenceDim {
    Latent(usize),
    /// Mean signed attribution over latent dimensions.
    Aggregate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DependenceRow {
    pub feature_value: f64,
    pub shap_value: f64,
    pub color_value: f64,
}

/// `(x_i, SHAP_i, x_j)` per explained sample.
pub fn dependence_export(
    attr: &AttributionTensor,
    x_eval: &Matrix,
    feature: usize,
    color_feature: usize,
    dim: DependenceDim,
) -> Result<Vec<DependenceRow>> {
    let d = attr.n_features;
    if feature >= d || color_feature >= d {
        return Err(ClaireError::Bounds(format!(
            "feature indices {feature}, {color_feature} out of range for {d} features"
        )));
    }
    if let DependenceDim::Latent(l) = dim {
        if l >= attr.n_outputs {
            return Err(ClaireError::Bounds(format!(
                "latent dimension {l} out of range for {} outputs",
                attr.n_outputs
            )));
        }
    }
    if x_eval.shape() != (attr.n_samples, d) {
        return Err(ClaireError::Shape {
            op: "dependence_export",
            left: x_eval.shape(),
            right: (attr.n_samples, d),
        });
    }
    Ok((0..attr.n_samples)
        .map(|j| DependenceRow {
            feature_value: x_eval[(j, feature)],
            shap_value: match dim {
                DependenceDim::Latent(l) => attr.get(j, feature, l),
                DependenceDim::Aggregate => {
                    (0..attr.n_outputs).map(|l| attr.get(j, feature, l)).sum::<f64>() / attr.n_outputs as f64
                }
            },
            color_value: x_eval[(j, color_feature)],
        })
        .collect())
}

fn flush<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| ClaireError::io("<csv output>", e))
}

pub fn write_dependence_csv<W: Write>(rows: &[DependenceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    flush(w)
}

pub fn read_dependence_csv<R: Read>(input: R) -> Result<Vec<DependenceRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(ClaireError::from)).collect()
}

/// Long format: `sample,feature,latent_dim,value`.
pub fn write_attributions_csv<W: Write>(attr: &AttributionTensor, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample", "feature", "latent_dim", "value"])?;
    for j in 0..attr.n_samples {
        for i in 0..attr.n_features {
            for l in 0..attr.n_outputs {
                w.write_record([
                    j.to_string(),
                    attr.feature_names[i].clone(),
                    l.to_string(),
                    attr.get(j, i, l).to_string(),
                ])?;
            }
        }
    }
    flush(w)
}

pub fn write_base_values_csv<W: Write>(attr: &AttributionTensor, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["latent_dim", "base_value"])?;
    for (l, b) in attr.base_values.iter().enumerate() {
        w.write_record([l.to_string(), b.to_string()])?;
    }
    flush(w)
}

/// One latent dimension: `sample,feature,feature_value,shap_value`.
pub fn write_beeswarm_csv<W: Write>(attr: &AttributionTensor, x_eval: &Matrix, dim: usize, out: W) -> Result<()> {
    if dim >= attr.n_outputs {
        return Err(ClaireError::Bounds(format!(
            "latent dimension {dim} out of range for {} outputs",
            attr.n_outputs
        )));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample", "feature", "feature_value", "shap_value"])?;
    for j in 0..attr.n_samples {
        for i in 0..attr.n_features {
            w.write_record([
                j.to_string(),
                attr.feature_names[i].clone(),
                x_eval[(j, i)].to_string(),
                attr.get(j, i, dim).to_string(),
            ])?;
        }
    }
    flush(w)
}

/// `rank,feature,dim_<l>...,msv` with one column per requested dimension.
pub fn write_ranking_csv<W: Write>(ranking: &ImportanceRanking, dims: &[usize], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["rank".to_string(), "feature".to_string()];
    header.extend(dims.iter().map(|l| format!("dim_{l}")));
    header.push("msv".into());
    w.write_record(&header)?;
    for (r, e) in ranking.entries.iter().enumerate() {
        let mut rec = vec![(r + 1).to_string(), e.feature.clone()];
        for &l in dims {
            let v = e
                .per_dim
                .get(l)
                .ok_or_else(|| ClaireError::Bounds(format!("latent dimension {l} out of range")))?;
            rec.push(v.to_string());
        }
        rec.push(e.score.to_string());
        w.write_record(&rec)?;
    }
    flush(w)
}

pub fn write_contrast_csv<W: Write>(cc: &ClassConditionalImportance, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "feature", "failure_msv", "success_msv", "contrast"])?;
    for (r, e) in cc.contrast.iter().enumerate() {
        w.write_record([
            (r + 1).to_string(),
            e.feature.clone(),
            e.failure.to_string(),
            e.success.to_string(),
            e.contrast.to_string(),
        ])?;
    }
    flush(w)
}
