//! Tabular datasets, file loaders and the preprocessing pipeline.
//!
//! Labels follow the convention `1 = success / normal`, `0 = failure / fault`.

mod loaders;
mod preprocess;
pub mod synth;

use serde::{Deserialize, Serialize};

pub use loaders::{load_csv, load_secom, load_tep, FaultSelection, TEP_VARIABLES};
pub use preprocess::{
    apply_scaler, fit_scaler, handle_missing, oversample_minority, prepare, stratified_split, ClassCounts,
    DroppedColumn, ImputedColumn, MissingPolicy, PreparedData, PreprocessConfig, PreprocessReport, Preprocessor,
    ScalerState,
};

use crate::error::{ClaireError, Result};
use crate::numerics::Matrix;

pub const FAILURE: u8 = 0;
pub const SUCCESS: u8 = 1;

/// Which part of the data a dataset came from. Fitting routines refuse
/// anything tagged [`Split::Test`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Full,
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub features: Matrix,
    pub labels: Vec<u8>,
    pub feature_names: Vec<String>,
    pub split: Split,
}

impl TabularDataset {
    pub fn new(features: Matrix, labels: Vec<u8>, feature_names: Vec<String>) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(ClaireError::Alignment(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        if feature_names.len() != features.cols() {
            return Err(ClaireError::Schema(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.cols()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(ClaireError::Selection(format!("label {bad} is not 0 or 1")));
        }
        Ok(Self {
            features,
            labels,
            feature_names,
            split: Split::Full,
        })
    }

    /// Dataset with generated names `f0, f1, ...`.
    pub fn unnamed(features: Matrix, labels: Vec<u8>) -> Result<Self> {
        let names = (0..features.cols()).map(|j| format!("f{j}")).collect();
        Self::new(features, labels, names)
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    /// `(failures, successes)`.
    pub fn class_counts(&self) -> ClassCounts {
        let ones = self.labels.iter().filter(|&&l| l == SUCCESS).count();
        ClassCounts {
            failure: self.labels.len() - ones,
            success: ones,
        }
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            split: self.split,
        }
    }

    pub(crate) fn require_fit_allowed(&self, what: &str) -> Result<()> {
        if self.split == Split::Test {
            return Err(ClaireError::Leakage(format!(
                "{what} must not be fitted on the test split"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_invariants_are_checked() {
        let m = Matrix::zeros(2, 2);
        assert!(TabularDataset::unnamed(m.clone(), vec![0]).is_err());
        assert!(TabularDataset::unnamed(m.clone(), vec![0, 2]).is_err());
        assert!(TabularDataset::new(m.clone(), vec![0, 1], vec!["a".into()]).is_err());
        let ds = TabularDataset::unnamed(m, vec![0, 1]).unwrap();
        assert_eq!(ds.class_counts(), ClassCounts { failure: 1, success: 1 });
    }
}
