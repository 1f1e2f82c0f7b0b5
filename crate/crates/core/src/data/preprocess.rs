//! Missing-data policy, min-max scaling, stratified splitting and
//! minority oversampling, plus the fixed pipeline that chains them.

use serde::{Deserialize, Serialize};

use super::{Split, TabularDataset, FAILURE, SUCCESS};
use crate::error::{ClaireError, Result};
use crate::numerics::{median, Matrix, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub failure: usize,
    pub success: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedColumn {
    pub name: String,
    pub missing_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedColumn {
    pub name: String,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub drop_threshold: f64,
    pub dropped_columns: Vec<DroppedColumn>,
    pub imputed_columns: Vec<ImputedColumn>,
    pub retained_columns: usize,
    pub class_counts_before: Option<ClassCounts>,
    pub class_counts_after: Option<ClassCounts>,
    pub train_rows: Option<usize>,
    pub test_rows: Option<usize>,
    /// No outlier procedure is applied; recorded so reports say so explicitly.
    pub outlier_detection: String,
}

/// Column drop decisions and imputation medians, fitted on one dataset and
/// replayable on any dataset with the same source columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingPolicy {
    pub drop_threshold: f64,
    pub source_columns: Vec<String>,
    pub retained: Vec<usize>,
    /// Median per retained column, in `retained` order.
    pub medians: Vec<f64>,
    pub dropped: Vec<DroppedColumn>,
}

impl MissingPolicy {
    pub fn fit(ds: &TabularDataset, drop_threshold: f64) -> Result<Self> {
        ds.require_fit_allowed("missing-data policy")?;
        if !(0.0..=1.0).contains(&drop_threshold) {
            return Err(ClaireError::Config(format!(
                "drop threshold {drop_threshold} outside [0, 1]"
            )));
        }
        if ds.is_empty() {
            return Err(ClaireError::EmptyInput(
                "cannot fit missing-data policy on zero rows".into(),
            ));
        }
        let n = ds.len() as f64;
        let mut retained = Vec::new();
        let mut medians = Vec::new();
        let mut dropped = Vec::new();
        for j in 0..ds.n_features() {
            let col = ds.features.column(j);
            let present: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
            let fraction = (col.len() - present.len()) as f64 / n;
            match median(&present) {
                Some(m) if fraction <= drop_threshold => {
                    retained.push(j);
                    medians.push(m);
                }
                _ => dropped.push(DroppedColumn {
                    name: ds.feature_names[j].clone(),
                    missing_fraction: fraction,
                }),
            }
        }
        if retained.is_empty() {
            return Err(ClaireError::DegenerateDataset(format!(
                "every column exceeds the missing fraction {drop_threshold}"
            )));
        }
        Ok(Self {
            drop_threshold,
            source_columns: ds.feature_names.clone(),
            retained,
            medians,
            dropped,
        })
    }

    /// Drops and imputes. The input must carry exactly the source columns.
    pub fn apply(&self, ds: &TabularDataset) -> Result<TabularDataset> {
        if ds.feature_names != self.source_columns {
            return Err(ClaireError::Schema(format!(
                "dataset has {} columns, policy was fitted on {} different columns",
                ds.n_features(),
                self.source_columns.len()
            )));
        }
        let mut features = ds.features.select_columns(&self.retained);
        for i in 0..features.rows() {
            for (v, &m) in features.row_mut(i).iter_mut().zip(&self.medians) {
                if v.is_nan() {
                    *v = m;
                }
            }
        }
        Ok(TabularDataset {
            features,
            labels: ds.labels.clone(),
            feature_names: self.retained.iter().map(|&j| self.source_columns[j].clone()).collect(),
            split: ds.split,
        })
    }

    fn imputed_columns(&self, ds: &TabularDataset) -> Vec<ImputedColumn> {
        self.retained
            .iter()
            .zip(&self.medians)
            .filter(|(&j, _)| (0..ds.len()).any(|i| ds.features[(i, j)].is_nan()))
            .map(|(&j, &m)| ImputedColumn {
                name: self.source_columns[j].clone(),
                median: m,
            })
            .collect()
    }

    fn report(&self, imputed: Vec<ImputedColumn>) -> PreprocessReport {
        PreprocessReport {
            drop_threshold: self.drop_threshold,
            dropped_columns: self.dropped.clone(),
            imputed_columns: imputed,
            retained_columns: self.retained.len(),
            class_counts_before: None,
            class_counts_after: None,
            train_rows: None,
            test_rows: None,
            outlier_detection: "not applied".into(),
        }
    }
}

/// Drops columns whose missing fraction exceeds `drop_threshold` and replaces
/// the remaining NaNs by the column median over non-missing entries.
pub fn handle_missing(ds: &TabularDataset, drop_threshold: f64) -> Result<(TabularDataset, PreprocessReport)> {
    let policy = MissingPolicy::fit(ds, drop_threshold)?;
    let out = policy.apply(ds)?;
    let report = policy.report(policy.imputed_columns(ds));
    Ok((out, report))
}

/// Per-column min-max scaler onto `[0, 1]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalerState {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub fitted: bool,
}

impl ScalerState {
    pub fn transform(&self, m: &Matrix) -> Result<Matrix> {
        if !self.fitted {
            return Err(ClaireError::State("scaler applied before fit".into()));
        }
        if m.cols() != self.min.len() {
            return Err(ClaireError::Schema(format!(
                "scaler fitted on {} columns, got {}",
                self.min.len(),
                m.cols()
            )));
        }
        let mut out = m.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                let (lo, hi) = (self.min[j], self.max[j]);
                *v = if hi > lo {
                    ((*v - lo) / (hi - lo)).clamp(0.0, 1.0)
                } else {
                    0.5
                };
            }
        }
        Ok(out)
    }
}

pub fn fit_scaler(train: &TabularDataset) -> Result<ScalerState> {
    train.require_fit_allowed("scaler")?;
    if train.is_empty() {
        return Err(ClaireError::EmptyInput("cannot fit scaler on zero rows".into()));
    }
    let d = train.n_features();
    let mut min = vec![f64::INFINITY; d];
    let mut max = vec![f64::NEG_INFINITY; d];
    for r in train.features.iter_rows() {
        for j in 0..d {
            if r[j].is_nan() {
                return Err(ClaireError::State("scaler input still contains NaN".into()));
            }
            min[j] = min[j].min(r[j]);
            max[j] = max[j].max(r[j]);
        }
    }
    Ok(ScalerState { min, max, fitted: true })
}

pub fn apply_scaler(state: &ScalerState, ds: &TabularDataset) -> Result<TabularDataset> {
    Ok(TabularDataset {
        features: state.transform(&ds.features)?,
        labels: ds.labels.clone(),
        feature_names: ds.feature_names.clone(),
        split: ds.split,
    })
}

/// Splits each class separately, sending `round(n_c · test_fraction)`
/// (clamped to `1..n_c`) of its rows to the test side. Both outputs keep
/// the original row order.
pub fn stratified_split(
    ds: &TabularDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(TabularDataset, TabularDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(ClaireError::Config(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let mut rng = RngStream::new(seed);
    let mut test_mask = vec![false; ds.len()];
    for class in [FAILURE, SUCCESS] {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(ClaireError::Stratification(format!(
                "class {class} has {} sample(s); at least 2 are needed",
                idx.len()
            )));
        }
        let n = idx.len();
        let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
        rng.shuffle(&mut idx);
        for &i in &idx[..n_test] {
            test_mask[i] = true;
        }
    }
    let train_idx: Vec<usize> = (0..ds.len()).filter(|&i| !test_mask[i]).collect();
    let test_idx: Vec<usize> = (0..ds.len()).filter(|&i| test_mask[i]).collect();
    Ok((
        ds.select_rows(&train_idx).with_split(Split::Train),
        ds.select_rows(&test_idx).with_split(Split::Test),
    ))
}

/// Appends uniformly drawn (with replacement) copies of minority rows until
/// both classes have the same count.
pub fn oversample_minority(train: &TabularDataset, seed: u64) -> Result<TabularDataset> {
    train.require_fit_allowed("oversampling")?;
    let counts = train.class_counts();
    if counts.failure == 0 || counts.success == 0 {
        return Err(ClaireError::Imbalance(format!(
            "oversampling needs two classes, found {counts:?}"
        )));
    }
    let (minority, deficit) = if counts.failure < counts.success {
        (FAILURE, counts.success - counts.failure)
    } else {
        (SUCCESS, counts.failure - counts.success)
    };
    if deficit == 0 {
        return Ok(train.clone());
    }
    let pool: Vec<usize> = (0..train.len()).filter(|&i| train.labels[i] == minority).collect();
    let mut rng = RngStream::new(seed);
    let mut idx: Vec<usize> = (0..train.len()).collect();
    idx.extend((0..deficit).map(|_| pool[rng.below(pool.len())]));
    Ok(train.select_rows(&idx))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub drop_threshold: f64,
    pub test_fraction: f64,
    pub oversample: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            drop_threshold: 0.3,
            test_fraction: 0.2,
            oversample: true,
        }
    }
}

/// Fitted preprocessing state applied to raw rows at prediction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub missing: MissingPolicy,
    pub scaler: ScalerState,
}

impl Preprocessor {
    pub fn transform(&self, raw: &TabularDataset) -> Result<TabularDataset> {
        apply_scaler(&self.scaler, &self.missing.apply(raw)?)
    }

    pub fn output_names(&self) -> Vec<String> {
        self.missing
            .retained
            .iter()
            .map(|&j| self.missing.source_columns[j].clone())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: TabularDataset,
    pub test: TabularDataset,
    pub preprocessor: Preprocessor,
    pub report: PreprocessReport,
}

/// Full pipeline: stratified split, missing-data policy fitted on the train
/// split, oversampling of the train split, min-max scaler fitted on the
/// (oversampled) train split, then both splits transformed.
///
/// The split uses only labels, so splitting first gives the same rows as
/// splitting after column handling while keeping every fitted statistic
/// free of test rows.
pub fn prepare(raw: &TabularDataset, cfg: &PreprocessConfig, seed: u64) -> Result<PreparedData> {
    let root = RngStream::new(seed);
    let (train_raw, test_raw) = stratified_split(raw, cfg.test_fraction, root.substream("split").seed())?;
    let missing = MissingPolicy::fit(&train_raw, cfg.drop_threshold)?;
    let imputed = missing.imputed_columns(&train_raw);
    let train = missing.apply(&train_raw)?;
    let test = missing.apply(&test_raw)?;
    let before = train.class_counts();
    let train = if cfg.oversample {
        oversample_minority(&train, root.substream("oversample").seed())?
    } else {
        train
    };
    let scaler = fit_scaler(&train)?;
    let train = apply_scaler(&scaler, &train)?;
    let test = apply_scaler(&scaler, &test)?;

    let mut report = missing.report(imputed);
    report.class_counts_before = Some(before);
    report.class_counts_after = Some(train.class_counts());
    report.train_rows = Some(train.len());
    report.test_rows = Some(test.len());
    Ok(PreparedData {
        train,
        test,
        preprocessor: Preprocessor { missing, scaler },
        report,
    })
}
