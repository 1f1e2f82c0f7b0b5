//! End-to-end fitting and the serialized model bundle.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    load_csv, load_secom, load_tep, prepare, FaultSelection, PreparedData, PreprocessConfig, PreprocessReport,
    Preprocessor, TabularDataset,
};
use crate::error::{ClaireError, Result};
use crate::network::NetworkParams;
use crate::numerics::{Matrix, RngStream};
use crate::svm::SvmModel;
use crate::training::{
    extract_latent, predict, train_phase1, train_phase2, EpochLog, LatentDataset, SvmSettings, TrainConfig, TrainMode,
};

pub const MODEL_FORMAT: &str = "claire-model/1";

/// Where raw rows come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// UCI layout: whitespace-separated features, `label timestamp` lines.
    Secom {
        features: PathBuf,
        labels: PathBuf,
    },
    Tep {
        path: PathBuf,
        #[serde(default = "all_faults")]
        faults: FaultSelection,
    },
    Csv {
        path: PathBuf,
        label_column: String,
    },
}

fn all_faults() -> FaultSelection {
    FaultSelection::All
}

impl DatasetSpec {
    pub fn load(&self) -> Result<TabularDataset> {
        match self {
            DatasetSpec::Secom { features, labels } => load_secom(features, labels),
            DatasetSpec::Tep { path, faults } => load_tep(path, faults),
            DatasetSpec::Csv { path, label_column } => load_csv(path, label_column),
        }
    }
}

/// Everything needed to refit a model from raw data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub svm: SvmSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBundle {
    pub format: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub preprocessor: Preprocessor,
    pub report: PreprocessReport,
    /// Absent for the raw-feature SVM baseline.
    pub network: Option<NetworkParams>,
    pub svm: SvmModel,
    /// Columns seen by the encoder (or SVM), after preprocessing.
    pub feature_names: Vec<String>,
}

impl ModelBundle {
    pub fn mode(&self) -> TrainMode {
        self.config.train.mode
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(MODEL_FORMAT) => {}
            other => {
                return Err(ClaireError::Schema(format!(
                    "expected model format {MODEL_FORMAT}, found {}",
                    other.unwrap_or("none")
                )))
            }
        }
        let bundle: ModelBundle = serde_json::from_value(value)?;
        if let Some(net) = &bundle.network {
            net.validate()?;
        }
        if (bundle.network.is_some()) == (bundle.mode() == TrainMode::RawSvm) {
            return Err(ClaireError::Schema(
                "network section does not match the training mode".into(),
            ));
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| ClaireError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| ClaireError::io(path, e))?)
    }

    /// Inputs to the SVM: latent codes, or the preprocessed rows themselves
    /// for the raw baseline.
    pub fn svm_inputs(&self, ds: &TabularDataset) -> Result<LatentDataset> {
        match &self.network {
            Some(p) => extract_latent(p, ds),
            None => Ok(LatentDataset {
                codes: ds.features.clone(),
                labels: ds.labels.clone(),
            }),
        }
    }

    /// Labels for already preprocessed rows.
    pub fn predict_prepared(&self, x: &Matrix) -> Result<Vec<u8>> {
        predict(self.network.as_ref(), &self.svm, x)
    }

    /// Recreates the train/test splits this model was fitted on, and checks
    /// the refitted preprocessing matches the stored one.
    pub fn reprepare(&self, raw: &TabularDataset) -> Result<PreparedData> {
        let prepared = prepare(raw, &self.config.preprocess, self.seed)?;
        if prepared.preprocessor != self.preprocessor {
            return Err(ClaireError::Schema(
                "dataset does not reproduce the model's preprocessing; was it trained on different data?".into(),
            ));
        }
        Ok(prepared)
    }
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub bundle: ModelBundle,
    /// Empty for the raw-feature SVM.
    pub logs: Vec<EpochLog>,
    pub prepared: PreparedData,
}

/// Preprocess, train the selected mode and fit the SVM. The root seed drives
/// the split and oversampling, network training and SMO via named substreams.
pub fn fit_pipeline(raw: &TabularDataset, config: &PipelineConfig, seed: u64) -> Result<FitOutput> {
    let prepared = prepare(raw, &config.preprocess, seed)?;
    fit_prepared(prepared, config, seed)
}

/// Same as [`fit_pipeline`] on splits that are already prepared.
pub fn fit_prepared(prepared: PreparedData, config: &PipelineConfig, seed: u64) -> Result<FitOutput> {
    let mut config = config.clone();
    config.train.seed = seed;
    let smo_seed = RngStream::new(seed).substream("smo").seed();
    let (network, logs) = match config.train.mode {
        TrainMode::RawSvm => (None, Vec::new()),
        TrainMode::Claire | TrainMode::PlainAe => {
            let out = train_phase1(&prepared.train, &config.train)?;
            (Some(out.params), out.logs)
        }
    };
    let inputs = match &network {
        Some(p) => extract_latent(p, &prepared.train)?,
        None => LatentDataset {
            codes: prepared.train.features.clone(),
            labels: prepared.train.labels.clone(),
        },
    };
    let svm = train_phase2(&inputs, &config.svm, smo_seed)?;
    let bundle = ModelBundle {
        format: MODEL_FORMAT.into(),
        seed,
        config,
        preprocessor: prepared.preprocessor.clone(),
        report: prepared.report.clone(),
        network,
        svm,
        feature_names: prepared.train.feature_names.clone(),
    };
    Ok(FitOutput { bundle, logs, prepared })
}
