//! Commands behind the `claire` binary. Each command reads a [`RunConfig`],
//! writes its artifacts under the output directory and returns their paths.

use std::fs;
use std::path::{Path, PathBuf};

use claire::data::synth::{secom_like, tep_like, write_secom, write_tep, SecomLikeConfig, TepLikeConfig};
use claire::data::{FaultSelection, PreprocessConfig, TabularDataset};
use claire::evaluate::{compute_metrics, lda_fit, project_export, write_projection_csv, LdaSummary};
use claire::explain::{
    class_conditional_importance, dependence_export, explain_encoder, global_importance, write_attributions_csv,
    write_base_values_csv, write_beeswarm_csv, write_contrast_csv, write_dependence_csv, write_ranking_csv,
    DependenceDim, ExplainConfig,
};
use claire::pipeline::{fit_pipeline, DatasetSpec, ModelBundle, PipelineConfig};
use claire::training::{write_epoch_logs, SvmSettings, TrainConfig, TrainMode};
use claire::{ClaireError, Result};
use serde::{Deserialize, Serialize};

pub const CONFIG_FORMAT: &str = "claire-config/1";

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

pub fn exit_code(err: &ClaireError) -> i32 {
    match err {
        ClaireError::Divergence { .. } | ClaireError::NonFinite { .. } => EXIT_DIVERGENCE,
        ClaireError::State(_) => EXIT_INTERNAL,
        _ => EXIT_INPUT,
    }
}

/// One dependence table: attributions of `feature` coloured by `color`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DependenceRequest {
    pub feature: String,
    pub color: String,
    #[serde(default = "aggregate")]
    pub dim: DependenceDim,
}

fn aggregate() -> DependenceDim {
    DependenceDim::Aggregate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainSection {
    pub n_background: usize,
    pub n_eval: usize,
    /// Defaults to `2 d + 2048`.
    pub n_coalitions: Option<usize>,
    pub beeswarm_dims: Vec<usize>,
    /// When empty, the two globally most important features are paired.
    pub dependence: Vec<DependenceRequest>,
}

impl Default for ExplainSection {
    fn default() -> Self {
        let d = ExplainConfig::default();
        Self {
            n_background: d.n_background,
            n_eval: d.n_eval,
            n_coalitions: d.n_coalitions,
            beeswarm_dims: d.beeswarm_dims,
            dependence: Vec::new(),
        }
    }
}

impl ExplainSection {
    pub fn knobs(&self) -> ExplainConfig {
        ExplainConfig {
            n_background: self.n_background,
            n_eval: self.n_eval,
            n_coalitions: self.n_coalitions,
            beeswarm_dims: self.beeswarm_dims.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format: String,
    #[serde(default)]
    pub dataset: Option<DatasetSpec>,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    /// Defaults to the preset for the dataset kind.
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub svm: SvmSettings,
    #[serde(default)]
    pub explain: ExplainSection,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_out() -> PathBuf {
    PathBuf::from("claire-out")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format: CONFIG_FORMAT.into(),
            dataset: None,
            preprocess: PreprocessConfig::default(),
            train: None,
            svm: SvmSettings::default(),
            explain: ExplainSection::default(),
            out: default_out(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        if cfg.format != CONFIG_FORMAT {
            return Err(ClaireError::Config(format!(
                "expected config format {CONFIG_FORMAT}, found {}",
                cfg.format
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| ClaireError::io(path, e))?)
    }

    pub fn dataset(&self) -> Result<&DatasetSpec> {
        self.dataset
            .as_ref()
            .ok_or_else(|| ClaireError::Config("no dataset given; use --dataset or the config file".into()))
    }

    pub fn pipeline(&self) -> PipelineConfig {
        let train = self.train.clone().unwrap_or_else(|| match self.dataset {
            Some(DatasetSpec::Tep { .. }) => TrainConfig::tep(),
            _ => TrainConfig::secom(),
        });
        PipelineConfig {
            preprocess: self.preprocess.clone(),
            train,
            svm: self.svm.clone(),
        }
    }

    /// Sets the training mode, materialising the preset if needed.
    pub fn set_mode(&mut self, mode: TrainMode) {
        let mut train = self.pipeline().train;
        train.mode = mode;
        self.train = Some(train);
    }
}

/// Parses `secom:FEATURES,LABELS`, `tep:PATH[:FAULT,FAULT...]` or
/// `csv:PATH[:LABEL_COLUMN]`.
pub fn parse_dataset(spec: &str) -> Result<DatasetSpec> {
    let bad = || ClaireError::Config(format!("cannot parse dataset `{spec}`"));
    let (kind, rest) = spec.split_once(':').ok_or_else(bad)?;
    match kind {
        "secom" => {
            let (f, l) = rest.split_once(',').ok_or_else(bad)?;
            Ok(DatasetSpec::Secom {
                features: f.into(),
                labels: l.into(),
            })
        }
        "tep" => {
            let (path, faults) = match rest.rsplit_once(':') {
                Some((p, list)) if !list.is_empty() && list.split(',').all(|s| s.trim().parse::<u32>().is_ok()) => (
                    p,
                    FaultSelection::Classes(list.split(',').map(|s| s.trim().parse().unwrap_or(0)).collect()),
                ),
                _ => (rest, FaultSelection::All),
            };
            Ok(DatasetSpec::Tep {
                path: path.into(),
                faults,
            })
        }
        "csv" => {
            let (path, label) = match rest.rsplit_once(':') {
                Some((p, l)) if !l.contains(['/', '\\', '.']) => (p, l),
                _ => (rest, "label"),
            };
            Ok(DatasetSpec::Csv {
                path: path.into(),
                label_column: label.into(),
            })
        }
        _ => Err(bad()),
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| ClaireError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| ClaireError::io(path, e))
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| ClaireError::io(path, e))
}

fn write_dataset_csv(ds: &TabularDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = ds.feature_names.clone();
    header.push("label".into());
    w.write_record(&header)?;
    for (row, label) in ds.features.iter_rows().zip(&ds.labels) {
        let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
        rec.push(label.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| ClaireError::io(path, e))
}

pub fn model_path(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("model.json")
}

/// Split, clean and scale; writes `train.csv`, `test.csv`,
/// `preprocess_report.json` and `preprocessor.json`.
pub fn cmd_preprocess(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let raw = cfg.dataset()?.load()?;
    let prepared = claire::data::prepare(&raw, &cfg.preprocess, cfg.seed)?;
    ensure_dir(&cfg.out)?;
    let paths = ["train.csv", "test.csv", "preprocess_report.json", "preprocessor.json"].map(|p| cfg.out.join(p));
    write_dataset_csv(&prepared.train, &paths[0])?;
    write_dataset_csv(&prepared.test, &paths[1])?;
    write_json(&paths[2], &prepared.report)?;
    write_json(&paths[3], &prepared.preprocessor)?;
    Ok(paths.to_vec())
}

/// Fits the configured mode; writes `model.json`, `loss.csv` (network
/// modes only) and the resolved `run_config.json`.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let raw = cfg.dataset()?.load()?;
    let pipeline = cfg.pipeline();
    pipeline.train.validate()?;
    let fit = fit_pipeline(&raw, &pipeline, cfg.seed)?;
    ensure_dir(&cfg.out)?;
    let mut paths = vec![model_path(cfg)];
    fit.bundle.save(&paths[0])?;
    if !fit.logs.is_empty() {
        let p = cfg.out.join("loss.csv");
        write_epoch_logs(&fit.logs, create(&p)?)?;
        paths.push(p);
    }
    let archived = RunConfig {
        train: Some(fit.bundle.config.train.clone()),
        ..cfg.clone()
    };
    let p = cfg.out.join("run_config.json");
    write_json(&p, &archived)?;
    paths.push(p);
    Ok(paths)
}

fn load_model(cfg: &RunConfig, model: Option<&Path>) -> Result<ModelBundle> {
    ModelBundle::load(&model.map(Path::to_path_buf).unwrap_or_else(|| model_path(cfg)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: TrainMode,
    pub test: claire::evaluate::MetricsReport,
    pub train: claire::evaluate::MetricsReport,
}

/// Scores the model on the train and test splits it was fitted on; writes
/// `metrics.json`.
pub fn cmd_eval(cfg: &RunConfig, model: Option<&Path>) -> Result<(EvalReport, PathBuf)> {
    let bundle = load_model(cfg, model)?;
    let prepared = bundle.reprepare(&cfg.dataset()?.load()?)?;
    let test_pred = bundle.predict_prepared(&prepared.test.features)?;
    let train_pred = bundle.predict_prepared(&prepared.train.features)?;
    let report = EvalReport {
        mode: bundle.mode(),
        test: compute_metrics(&prepared.test.labels, &test_pred)?,
        train: compute_metrics(&prepared.train.labels, &train_pred)?,
    };
    ensure_dir(&cfg.out)?;
    let p = cfg.out.join("metrics.json");
    write_json(&p, &report)?;
    Ok((report, p))
}

fn feature_index(names: &[String], name: &str) -> Result<usize> {
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| ClaireError::Bounds(format!("unknown feature `{name}`")))
}

/// Kernel SHAP on the encoder; writes everything under `explain/`.
pub fn cmd_explain(cfg: &RunConfig, model: Option<&Path>) -> Result<Vec<PathBuf>> {
    let bundle = load_model(cfg, model)?;
    let params = bundle
        .network
        .as_ref()
        .ok_or_else(|| ClaireError::Config("the raw-feature SVM has no encoder to explain".into()))?;
    let prepared = bundle.reprepare(&cfg.dataset()?.load()?)?;
    let knobs = &cfg.explain.knobs();
    if let Some(&l) = knobs.beeswarm_dims.iter().find(|&&l| l >= params.latent_dim) {
        return Err(ClaireError::Bounds(format!(
            "beeswarm dimension {l} out of range for latent size {}",
            params.latent_dim
        )));
    }
    let shap_seed = claire::numerics::RngStream::new(cfg.seed).substream("shap").seed();
    let attr = explain_encoder(params, &prepared.train, &prepared.test, knobs, shap_seed)?;
    let x_eval = prepared
        .test
        .features
        .select_rows(&(0..knobs.n_eval).collect::<Vec<_>>());
    let labels = &prepared.test.labels[..knobs.n_eval];

    let dir = cfg.out.join("explain");
    ensure_dir(&dir)?;
    let mut paths = Vec::new();
    let mut emit = |name: String| {
        let p = dir.join(name);
        paths.push(p.clone());
        p
    };
    write_attributions_csv(&attr, create(&emit("attributions.csv".into()))?)?;
    write_base_values_csv(&attr, create(&emit("base_values.csv".into()))?)?;
    for &l in &knobs.beeswarm_dims {
        write_beeswarm_csv(&attr, &x_eval, l, create(&emit(format!("beeswarm_dim_{l}.csv")))?)?;
    }
    let ranking = global_importance(&attr);
    write_ranking_csv(&ranking, &knobs.beeswarm_dims, create(&emit("ranking.csv".into()))?)?;
    match class_conditional_importance(&attr, labels) {
        Ok(cc) => write_contrast_csv(&cc, create(&emit("class_contrast.csv".into()))?)?,
        // a single-class evaluation slice is legitimate; the contrast is just not defined
        Err(ClaireError::ClassCoverage(_)) => {}
        Err(e) => return Err(e),
    }
    let requests = if cfg.explain.dependence.is_empty() && ranking.entries.len() >= 2 {
        vec![DependenceRequest {
            feature: ranking.entries[0].feature.clone(),
            color: ranking.entries[1].feature.clone(),
            dim: DependenceDim::Aggregate,
        }]
    } else {
        cfg.explain.dependence.clone()
    };
    for r in &requests {
        let i = feature_index(&attr.feature_names, &r.feature)?;
        let j = feature_index(&attr.feature_names, &r.color)?;
        let rows = dependence_export(&attr, &x_eval, i, j, r.dim)?;
        let dim = match r.dim {
            DependenceDim::Latent(l) => format!("dim_{l}"),
            DependenceDim::Aggregate => "aggregate".into(),
        };
        write_dependence_csv(
            &rows,
            create(&emit(format!("dependence_{}_{}_{dim}.csv", r.feature, r.color)))?,
        )?;
    }
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSummary {
    pub mode: TrainMode,
    pub direction: Vec<f64>,
    /// Statistics of the (oversampled) training rows the direction was fitted on.
    pub train: LdaSummary,
    /// Held-out rows along the same direction and threshold.
    pub test: LdaSummary,
}

/// Fisher projection of the SVM inputs; writes `projection_train.csv`,
/// `projection_test.csv` and `lda_summary.json`.
pub fn cmd_project(cfg: &RunConfig, model: Option<&Path>) -> Result<(ProjectionSummary, Vec<PathBuf>)> {
    let bundle = load_model(cfg, model)?;
    let prepared = bundle.reprepare(&cfg.dataset()?.load()?)?;
    let train = bundle.svm_inputs(&prepared.train)?;
    let test = bundle.svm_inputs(&prepared.test)?;
    let proj = lda_fit(&train.codes, &train.labels)?;
    ensure_dir(&cfg.out)?;
    let paths: Vec<PathBuf> = ["projection_train.csv", "projection_test.csv", "lda_summary.json"]
        .iter()
        .map(|p| cfg.out.join(p))
        .collect();
    write_projection_csv(&project_export(&proj, &train.codes, &train.labels)?, create(&paths[0])?)?;
    write_projection_csv(&project_export(&proj, &test.codes, &test.labels)?, create(&paths[1])?)?;
    let summary = ProjectionSummary {
        mode: bundle.mode(),
        direction: proj.direction.clone(),
        train: proj.summary,
        test: proj.summarize(&test.codes, &test.labels)?,
    };
    write_json(&paths[2], &summary)?;
    Ok((summary, paths))
}

/// Writes surrogate SECOM-shaped and TEP-shaped files for trying the tool
/// without the real benchmarks.
pub fn cmd_synth(out: &Path, seed: u64) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let paths: Vec<PathBuf> = ["secom_features.txt", "secom_labels.txt", "tep.csv"]
        .iter()
        .map(|p| out.join(p))
        .collect();
    write_secom(&secom_like(&SecomLikeConfig::default(), seed), &paths[0], &paths[1])?;
    write_tep(&tep_like(&TepLikeConfig::default(), seed), &paths[2])?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_shorthand() {
        assert_eq!(
            parse_dataset("secom:a.txt,b.txt").unwrap(),
            DatasetSpec::Secom {
                features: "a.txt".into(),
                labels: "b.txt".into()
            }
        );
        assert_eq!(
            parse_dataset("tep:/d/t.csv:1,4").unwrap(),
            DatasetSpec::Tep {
                path: "/d/t.csv".into(),
                faults: FaultSelection::Classes(vec![1, 4])
            }
        );
        assert_eq!(
            parse_dataset("tep:/d/t.csv").unwrap(),
            DatasetSpec::Tep {
                path: "/d/t.csv".into(),
                faults: FaultSelection::All
            }
        );
        assert_eq!(
            parse_dataset("csv:x.csv:fault").unwrap(),
            DatasetSpec::Csv {
                path: "x.csv".into(),
                label_column: "fault".into()
            }
        );
        assert!(parse_dataset("parquet:x").is_err());
    }

    #[test]
    fn config_round_trip_and_presets() {
        let mut cfg = RunConfig {
            dataset: Some(parse_dataset("tep:t.csv").unwrap()),
            ..RunConfig::default()
        };
        assert_eq!(cfg.pipeline().train.latent_dim, 32);
        cfg.set_mode(TrainMode::PlainAe);
        assert_eq!(cfg.pipeline().train.epochs, 30);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
        assert!(RunConfig::from_json(&text.replace(CONFIG_FORMAT, "claire-config/2")).is_err());
        assert!(RunConfig::from_json(r#"{"format":"claire-config/1","bogus":1}"#).is_err());
    }
}
