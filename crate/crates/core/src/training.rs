//! Two-phase training: joint autoencoder/classifier optimisation, then an
//! SVM on the frozen encoder's latent codes. Also drives the two baselines
//! (plain autoencoder, SVM on scaled raw features).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{TabularDataset, SUCCESS};
use crate::error::{ClaireError, Result};
use crate::network::{
    adam_step, backward, corrupt, encoder_forward, evaluate_losses, forward, total_loss, AdamConfig, AdamState,
    Architecture, LossWeights, MaskSource, Mode, NetworkParams, BN_EPSILON, LEAKY_SLOPE,
};
use crate::numerics::{Matrix, RngStream};
use crate::svm::{predict_labels, signed_labels, smo_train, KernelChoice, KernelSpec, SmoConfig, SvmModel};

/// Any loss term above this aborts training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Claire,
    PlainAe,
    RawSvm,
}

impl std::str::FromStr for TrainMode {
    type Err = ClaireError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "claire" => Ok(TrainMode::Claire),
            "plain_ae" | "plainae" | "ae" => Ok(TrainMode::PlainAe),
            "raw_svm" | "rawsvm" | "svm" => Ok(TrainMode::RawSvm),
            other => Err(ClaireError::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    /// Drop probability; units are kept with probability `1 - dropout_rate`.
    pub dropout_rate: f64,
    pub bn_momentum: f64,
    pub corruption_std: f64,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::secom()
    }
}

impl TrainConfig {
    pub fn secom() -> Self {
        Self {
            mode: TrainMode::Claire,
            epochs: 40,
            batch_size: 64,
            learning_rate: 1e-3,
            weights: LossWeights::default(),
            dropout_rate: 0.3,
            bn_momentum: 0.9,
            corruption_std: 0.1,
            hidden: vec![128, 64],
            latent_dim: 64,
            seed: 0,
        }
    }

    pub fn tep() -> Self {
        Self {
            epochs: 30,
            latent_dim: 32,
            ..Self::secom()
        }
    }

    /// The configuration actually trained: the plain autoencoder baseline
    /// zeroes every auxiliary weight and the corruption.
    pub fn effective(&self) -> TrainConfig {
        let mut c = self.clone();
        if c.mode == TrainMode::PlainAe {
            c.weights = LossWeights::ZERO;
            c.corruption_std = 0.0;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(ClaireError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(ClaireError::Config(
                "batch_size must be at least 2 for batch norm".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ClaireError::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ClaireError::Config("dropout_rate must lie in [0, 1)".into()));
        }
        if !(self.corruption_std >= 0.0 && self.corruption_std.is_finite()) {
            return Err(ClaireError::Config("corruption_std must be >= 0".into()));
        }
        self.weights.validate()
    }

    pub fn architecture(&self, input_dim: usize) -> Architecture {
        Architecture {
            input_dim,
            hidden: self.hidden.clone(),
            latent_dim: self.latent_dim,
            leaky_slope: LEAKY_SLOPE,
            keep_probability: 1.0 - self.dropout_rate,
            bn_momentum: self.bn_momentum,
            bn_epsilon: BN_EPSILON,
        }
    }
}

/// Row-weighted epoch means of the unweighted terms, and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_recon: f64,
    pub l_latent: f64,
    pub l_clf: f64,
    pub l_ent: f64,
    pub l_total: f64,
}

pub fn write_epoch_logs<W: Write>(logs: &[EpochLog], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for log in logs {
        w.serialize(log)?;
    }
    w.flush().map_err(|e| ClaireError::io("<epoch log>", e))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Phase1Output {
    pub params: NetworkParams,
    pub logs: Vec<EpochLog>,
    pub steps: usize,
}

fn check_unit_range(ds: &TabularDataset) -> Result<()> {
    if ds.features.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(ClaireError::Bounds(
            "training features must be preprocessed into [0, 1] without NaN".into(),
        ));
    }
    Ok(())
}

/// Mini-batch training of encoder, decoder and classifier head.
///
/// Each epoch draws a fresh permutation; a trailing batch of one row is
/// dropped because batch norm needs two.
pub fn train_phase1(train: &TabularDataset, cfg: &TrainConfig) -> Result<Phase1Output> {
    train.require_fit_allowed("the autoencoder")?;
    cfg.validate()?;
    check_unit_range(train)?;
    let n = train.len();
    if n < 2 {
        return Err(ClaireError::BatchSize(format!(
            "need at least 2 training rows, got {n}"
        )));
    }
    let cfg = cfg.effective();
    let root = RngStream::new(cfg.seed);
    let mut init_rng = root.substream("init");
    let mut shuffle_rng = root.substream("shuffle");
    let mut dropout_rng = root.substream("dropout");
    let mut corruption_rng = root.substream("corruption");

    let mut params = NetworkParams::init(&cfg.architecture(train.n_features()), &mut init_rng)?;
    let adam_cfg = AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::for_params(adam_cfg, &params);
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    for epoch in 1..=cfg.epochs {
        let order = shuffle_rng.permutation(n);
        let mut sums = [0.0; 4];
        let mut rows_seen = 0usize;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let x = train.features.select_rows(idx);
            let y: Vec<u8> = idx.iter().map(|&i| train.labels[i]).collect();
            let x_in = corrupt(&x, cfg.corruption_std, &mut corruption_rng);
            let trace = forward(
                &params,
                &x_in,
                &mut Mode::Training(&mut MaskSource::Sample(&mut dropout_rng)),
            )?;
            let parts = evaluate_losses(&trace, &x, &y)?;
            let diverged = |term: &'static str, value: f64| ClaireError::Divergence {
                epoch,
                batch: batch + 1,
                term,
                value,
            };
            let total = total_loss(&parts, &cfg.weights).map_err(|e| match e {
                ClaireError::NonFinite { term, value } => diverged(term, value),
                other => other,
            })?;
            for (term, value) in parts.terms().into_iter().chain([("l_total", total)]) {
                if !value.is_finite() || value.abs() > DIVERGENCE_LIMIT {
                    return Err(diverged(term, value));
                }
            }
            let grads = backward(&params, &trace, &x, &y, &cfg.weights)?;
            params.commit_batch_stats(&trace)?;
            adam_step(&mut adam, &mut params, &grads)?;
            if !params.tensors().iter().all(|t| t.iter().all(|v| v.is_finite())) {
                return Err(diverged("parameters", f64::NAN));
            }
            steps += 1;
            let m = idx.len() as f64;
            for (s, (_, v)) in sums.iter_mut().zip(parts.terms()) {
                *s += m * v;
            }
            rows_seen += idx.len();
        }
        let r = rows_seen as f64;
        let (l_recon, l_latent, l_clf, l_ent) = (sums[0] / r, sums[1] / r, sums[2] / r, sums[3] / r);
        let w = cfg.weights;
        logs.push(EpochLog {
            epoch,
            l_recon,
            l_latent,
            l_clf,
            l_ent,
            l_total: l_recon + w.lambda * l_latent + w.alpha * l_clf + w.beta * l_ent,
        });
    }
    Ok(Phase1Output { params, logs, steps })
}

/// Latent codes with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDataset {
    pub codes: Matrix,
    pub labels: Vec<u8>,
}

/// Inference-mode encoding of a preprocessed dataset.
pub fn extract_latent(params: &NetworkParams, ds: &TabularDataset) -> Result<LatentDataset> {
    if ds.n_features() != params.input_dim {
        return Err(ClaireError::Schema(format!(
            "dataset has {} features, encoder expects {}",
            ds.n_features(),
            params.input_dim
        )));
    }
    Ok(LatentDataset {
        codes: encoder_forward(params, &ds.features)?,
        labels: ds.labels.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmSettings {
    pub kernel: KernelChoice,
    /// Overrides the RBF "scale" default when set.
    #[serde(default)]
    pub gamma: Option<f64>,
    pub c: f64,
    pub tol: f64,
    pub max_passes: usize,
}

impl Default for SvmSettings {
    fn default() -> Self {
        Self {
            kernel: KernelChoice::Rbf,
            gamma: None,
            c: 1.0,
            tol: 1e-3,
            max_passes: 100,
        }
    }
}

impl SvmSettings {
    pub fn kernel_for(&self, x: &Matrix) -> Result<KernelSpec> {
        match (self.kernel, self.gamma) {
            (KernelChoice::Rbf, Some(gamma)) => Ok(KernelSpec::Rbf { gamma }),
            (choice, _) => KernelSpec::resolve(choice, x),
        }
    }

    fn smo(&self) -> SmoConfig {
        SmoConfig {
            c: self.c,
            tol: self.tol,
            max_passes: self.max_passes,
            ..SmoConfig::default()
        }
    }
}

/// Fits the SVM on latent codes with labels mapped {0,1} -> {-1,+1}.
pub fn train_phase2(latents: &LatentDataset, settings: &SvmSettings, seed: u64) -> Result<SvmModel> {
    if !latents.codes.is_finite() {
        return Err(ClaireError::Bounds("latent codes contain non-finite values".into()));
    }
    let kernel = settings.kernel_for(&latents.codes)?;
    smo_train(
        &latents.codes,
        &signed_labels(&latents.labels),
        kernel,
        &settings.smo(),
        seed,
    )
}

/// Preprocessed rows -> latent codes (if an encoder is given) -> SVM labels
/// in {0,1}; a zero decision value maps to 1.
pub fn predict(params: Option<&NetworkParams>, svm: &SvmModel, x: &Matrix) -> Result<Vec<u8>> {
    let codes = match params {
        Some(p) => {
            if x.cols() != p.input_dim {
                return Err(ClaireError::Schema(format!(
                    "{} input columns, encoder expects {}",
                    x.cols(),
                    p.input_dim
                )));
            }
            encoder_forward(p, x)?
        }
        None => x.clone(),
    };
    if codes.cols() != svm.n_features() {
        return Err(ClaireError::Schema(format!(
            "{} columns, SVM expects {}",
            codes.cols(),
            svm.n_features()
        )));
    }
    predict_labels(svm, &codes)
}

/// Share of successes, used to sanity-check balanced training splits.
pub fn success_fraction(labels: &[u8]) -> f64 {
    labels.iter().filter(|&&l| l == SUCCESS).count() as f64 / labels.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::network::{forward as net_forward, loss_reconstruction};

    /// Two Gaussian clusters in [0,1]^d, separated along every coordinate.
    fn two_gaussians(n: usize, d: usize, seed: u64) -> TabularDataset {
        let mut rng = RngStream::new(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = u8::from(i % 2 == 0);
            let centre = if label == 1 { 0.35 } else { 0.65 };
            rows.push(
                (0..d)
                    .map(|_| (centre + 0.08 * rng.normal()).clamp(0.0, 1.0))
                    .collect::<Vec<_>>(),
            );
            labels.push(label);
        }
        TabularDataset::unnamed(Matrix::from_rows(&rows).unwrap(), labels)
            .unwrap()
            .with_split(Split::Train)
    }

    fn small_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 32,
            hidden: vec![16, 8],
            latent_dim: 4,
            seed: 7,
            ..TrainConfig::secom()
        }
    }

    fn recon_of(params: &NetworkParams, ds: &TabularDataset) -> f64 {
        let t = net_forward(params, &ds.features, &mut Mode::Inference).unwrap();
        loss_reconstruction(&ds.features, &t.reconstruction).unwrap()
    }

    #[test]
    fn reconstruction_halves_on_two_gaussians() {
        let ds = two_gaussians(200, 10, 1);
        let out = train_phase1(&ds, &small_cfg(40)).unwrap();
        assert_eq!(out.logs.len(), 40);
        let first = out.logs[0].l_recon;
        let last = out.logs[39].l_recon;
        assert!(last < 0.5 * first, "{first} -> {last}");
        assert!(recon_of(&out.params, &ds).is_finite());
    }

    #[test]
    fn training_is_deterministic() {
        let ds = two_gaussians(60, 5, 2);
        let a = train_phase1(&ds, &small_cfg(3)).unwrap();
        let b = train_phase1(&ds, &small_cfg(3)).unwrap();
        assert_eq!(a.logs, b.logs);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn oversized_batch_gives_one_step() {
        let ds = two_gaussians(30, 4, 3);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 64,
            ..small_cfg(1)
        };
        assert_eq!(train_phase1(&ds, &cfg).unwrap().steps, 1);
        // 33 rows in batches of 16: the trailing single row is skipped
        let ds = two_gaussians(33, 4, 3);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            ..small_cfg(1)
        };
        assert_eq!(train_phase1(&ds, &cfg).unwrap().steps, 4);
    }

    #[test]
    fn phase1_refuses_bad_inputs() {
        let ds = two_gaussians(20, 3, 4);
        assert!(matches!(
            train_phase1(&ds.clone().with_split(Split::Test), &small_cfg(1)),
            Err(ClaireError::Leakage(_))
        ));
        let mut raw = ds.clone();
        raw.features.as_mut_slice()[0] = 3.0;
        assert!(matches!(train_phase1(&raw, &small_cfg(1)), Err(ClaireError::Bounds(_))));
        assert!(train_phase1(
            &ds,
            &TrainConfig {
                batch_size: 1,
                ..small_cfg(1)
            }
        )
        .is_err());
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let ds = two_gaussians(64, 6, 5);
        let cfg = TrainConfig {
            learning_rate: 1e4,
            weights: LossWeights {
                lambda: 10.0,
                ..Default::default()
            },
            ..small_cfg(30)
        };
        match train_phase1(&ds, &cfg) {
            Err(ClaireError::Divergence { epoch, term, .. }) => assert!(epoch >= 1 && !term.is_empty()),
            other => panic!("expected divergence, got {:?}", other.map(|o| o.logs.last().copied())),
        }
    }

    #[test]
    fn plain_ae_zeroes_auxiliary_terms() {
        let cfg = TrainConfig {
            mode: TrainMode::PlainAe,
            ..TrainConfig::secom()
        }
        .effective();
        assert_eq!(cfg.weights, LossWeights::ZERO);
        assert_eq!(cfg.corruption_std, 0.0);
        assert_eq!(TrainConfig::tep().epochs, 30);
        assert_eq!(TrainConfig::tep().latent_dim, 32);
    }

    #[test]
    fn latent_extraction_is_deterministic_and_batch_independent() {
        let ds = two_gaussians(40, 6, 6);
        let params = train_phase1(&ds, &small_cfg(2)).unwrap().params;
        let a = extract_latent(&params, &ds).unwrap();
        assert_eq!(a.codes.shape(), (40, 4));
        assert_eq!(a, extract_latent(&params, &ds).unwrap());
        let single = extract_latent(&params, &ds.select_rows(&[7])).unwrap();
        assert_eq!(single.codes.row(0), a.codes.row(7));
        let wrong = TabularDataset::unnamed(Matrix::zeros(2, 5), vec![0, 1]).unwrap();
        assert!(matches!(extract_latent(&params, &wrong), Err(ClaireError::Schema(_))));
    }

    #[test]
    fn phase2_recovers_separable_training_labels() {
        let ds = two_gaussians(80, 6, 8);
        let params = train_phase1(&ds, &small_cfg(10)).unwrap().params;
        let latents = extract_latent(&params, &ds).unwrap();
        let svm = train_phase2(&latents, &SvmSettings::default(), 1).unwrap();
        let pred = predict(Some(&params), &svm, &ds.features).unwrap();
        let direct = predict_labels(&svm, &latents.codes).unwrap();
        assert_eq!(pred, direct);
        let acc = pred.iter().zip(&ds.labels).filter(|(a, b)| a == b).count() as f64 / 80.0;
        assert!(acc > 0.95, "{acc}");
        let dup = ds.features.select_rows(&[3, 3]);
        let p = predict(Some(&params), &svm, &dup).unwrap();
        assert_eq!(p[0], p[1]);
        assert!(predict(Some(&params), &svm, &Matrix::zeros(1, 5)).is_err());
    }

    #[test]
    fn epoch_log_csv_has_header_and_rows() {
        let log = EpochLog {
            epoch: 1,
            l_recon: 0.5,
            l_latent: 0.25,
            l_clf: 0.7,
            l_ent: 0.6,
            l_total: 1.0,
        };
        let mut buf = Vec::new();
        write_epoch_logs(&[log, EpochLog { epoch: 2, ..log }], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,l_recon,l_latent,l_clf,l_ent,l_total");
        assert_eq!(lines.len(), 3);
        assert_eq!(success_fraction(&[1, 0, 1, 1]), 0.75);
    }
}
