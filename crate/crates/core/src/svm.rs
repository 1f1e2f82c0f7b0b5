//! Binary soft-margin kernel SVM trained with simplified SMO.
//!
//! The solver keeps an error cache `E_i = f(x_i) - y_i` and updates one pair
//! of multipliers at a time: `i` sweeps over KKT violators, `j` is drawn from
//! a seeded stream. When the drawn `j` cannot move the pair, the remaining
//! candidates are scanned from a random start, so a sweep with no accepted
//! update means no pair involving a violator can make progress.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{ClaireError, Result};
use crate::numerics::{Matrix, RngStream};

/// Multipliers at or below this are dropped from the stored model.
pub const ALPHA_THRESHOLD: f64 = 1e-10;

/// Gram matrices up to this many rows are precomputed.
const GRAM_CACHE_ROWS: usize = 6000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Linear,
    Polynomial { c: f64, degree: u32 },
    Rbf { gamma: f64 },
    Sigmoid { alpha: f64, beta: f64 },
}

/// Kernel family with data-dependent defaults resolved at fit time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelChoice {
    Linear,
    Polynomial,
    Rbf,
    Sigmoid,
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Rbf { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                Err(ClaireError::Config(format!("RBF gamma must be positive, got {gamma}")))
            }
            KernelSpec::Polynomial { degree, .. } if degree < 1 => {
                Err(ClaireError::Config("polynomial degree must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Defaults for `x`: RBF `gamma = 1 / (k * mean column variance)`,
    /// polynomial `(u.v + 1)^3`, sigmoid `tanh(u.v / k)`.
    pub fn resolve(choice: KernelChoice, x: &Matrix) -> Result<KernelSpec> {
        let k = x.cols().max(1) as f64;
        Ok(match choice {
            KernelChoice::Linear => KernelSpec::Linear,
            KernelChoice::Polynomial => KernelSpec::Polynomial { c: 1.0, degree: 3 },
            KernelChoice::Sigmoid => KernelSpec::Sigmoid {
                alpha: 1.0 / k,
                beta: 0.0,
            },
            KernelChoice::Rbf => {
                let (_, var) = crate::numerics::column_mean_var(x)?;
                let mean_var = var.iter().sum::<f64>() / k;
                // constant data: fall back to gamma = 1 / k
                let gamma = if mean_var > 0.0 { 1.0 / (k * mean_var) } else { 1.0 / k };
                KernelSpec::Rbf { gamma }
            }
        })
    }
}

pub fn kernel_eval(spec: &KernelSpec, u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(ClaireError::Shape {
            op: "kernel_eval",
            left: (1, u.len()),
            right: (1, v.len()),
        });
    }
    Ok(kernel_unchecked(spec, u, v))
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn kernel_unchecked(spec: &KernelSpec, u: &[f64], v: &[f64]) -> f64 {
    match *spec {
        KernelSpec::Linear => dot(u, v),
        KernelSpec::Polynomial { c, degree } => (dot(u, v) + c).powi(degree as i32),
        KernelSpec::Rbf { gamma } => {
            let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            (-gamma * d2).exp()
        }
        KernelSpec::Sigmoid { alpha, beta } => (alpha * dot(u, v) + beta).tanh(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoConfig {
    pub c: f64,
    pub tol: f64,
    /// Consecutive sweeps without an accepted update before stopping.
    pub max_passes: usize,
    /// Hard cap on sweeps; hitting it leaves a warning on the model.
    pub max_sweeps: usize,
    /// Keep the dual objective after every accepted update.
    #[serde(default)]
    pub record_dual: bool,
}

impl Default for SmoConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-3,
            max_passes: 100,
            max_sweeps: 100_000,
            record_dual: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SvmDiagnostics {
    pub updates: usize,
    pub sweeps: usize,
    /// Largest KKT violation at the returned multipliers and bias.
    pub max_kkt_violation: f64,
    pub warning: Option<String>,
    #[serde(skip)]
    pub dual_objective_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: KernelSpec,
    pub c: f64,
    pub support_vectors: Matrix,
    /// `alpha_i * y_i` per support vector.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    /// Row of each support vector in the training matrix.
    pub support_indices: Vec<usize>,
    pub diagnostics: SvmDiagnostics,
}

impl SvmModel {
    pub fn n_features(&self) -> usize {
        self.support_vectors.cols()
    }

    /// Multiplier of every training row (zero for non-support vectors).
    pub fn alphas(&self, n_train: usize) -> Vec<f64> {
        let mut a = vec![0.0; n_train];
        for (&i, c) in self.support_indices.iter().zip(&self.dual_coef) {
            a[i] = c.abs();
        }
        a
    }
}

struct Gram<'a> {
    x: &'a Matrix,
    kernel: KernelSpec,
    full: Option<Vec<f64>>,
    diag: Vec<f64>,
}

impl<'a> Gram<'a> {
    fn new(x: &'a Matrix, kernel: KernelSpec) -> Self {
        let n = x.rows();
        let diag = (0..n).map(|i| kernel_unchecked(&kernel, x.row(i), x.row(i))).collect();
        let full = (n <= GRAM_CACHE_ROWS).then(|| {
            let mut g = vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let v = kernel_unchecked(&kernel, x.row(i), x.row(j));
                    g[i * n + j] = v;
                    g[j * n + i] = v;
                }
            }
            g
        });
        Self { x, kernel, full, diag }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        match &self.full {
            Some(g) => g[i * self.x.rows() + j],
            None => kernel_unchecked(&self.kernel, self.x.row(i), self.x.row(j)),
        }
    }

    fn row(&self, i: usize) -> Cow<'_, [f64]> {
        let n = self.x.rows();
        match &self.full {
            Some(g) => Cow::Borrowed(&g[i * n..(i + 1) * n]),
            None => Cow::Owned((0..n).map(|j| self.at(i, j)).collect()),
        }
    }
}

struct Solver<'a> {
    gram: Gram<'a>,
    y: &'a [f64],
    alpha: Vec<f64>,
    errors: Vec<f64>,
    b: f64,
    c: f64,
    dual: f64,
    history: Option<Vec<f64>>,
}

impl Solver<'_> {
    fn violates(&self, i: usize, tol: f64) -> bool {
        let r = self.y[i] * self.errors[i];
        (r < -tol && self.alpha[i] < self.c) || (r > tol && self.alpha[i] > 0.0)
    }

    fn snap(&self, a: f64) -> f64 {
        let eps = 1e-12 * self.c.max(1.0);
        if a < eps {
            0.0
        } else if a > self.c - eps {
            self.c
        } else {
            a
        }
    }

    /// Analytic step on the pair `(i, j)`; false if the pair cannot move.
    fn take_step(&mut self, i: usize, j: usize) -> bool {
        if i == j {
            return false;
        }
        let (yi, yj) = (self.y[i], self.y[j]);
        let (ai, aj) = (self.alpha[i], self.alpha[j]);
        let (lo, hi) = if yi != yj {
            ((aj - ai).max(0.0), (self.c + aj - ai).min(self.c))
        } else {
            ((ai + aj - self.c).max(0.0), (ai + aj).min(self.c))
        };
        if hi - lo < 1e-12 {
            return false;
        }
        let (kii, kjj, kij) = (self.gram.diag[i], self.gram.diag[j], self.gram.at(i, j));
        let eta = 2.0 * kij - kii - kjj;
        if eta >= -1e-12 {
            return false;
        }
        let (ei, ej) = (self.errors[i], self.errors[j]);
        let aj_new = self.snap((aj - yj * (ei - ej) / eta).clamp(lo, hi));
        if (aj_new - aj).abs() < 1e-12 * (aj_new + aj + 1e-12) {
            return false;
        }
        let ai_new = self.snap(ai + yi * yj * (aj - aj_new));
        let (di, dj) = (ai_new - ai, aj_new - aj);

        if self.history.is_some() {
            // W(alpha) = sum(alpha) - 1/2 sum alpha_i alpha_j y_i y_j K_ij,
            // with y_i (f_i - b) = y_i (E_i + y_i - b)
            let gi = yi * (ei + yi - self.b);
            let gj = yj * (ej + yj - self.b);
            self.dual +=
                di + dj - (di * gi + dj * gj) - 0.5 * (di * di * kii + dj * dj * kjj + 2.0 * di * dj * yi * yj * kij);
        }

        let b1 = self.b - ei - yi * di * kii - yj * dj * kij;
        let b2 = self.b - ej - yi * di * kij - yj * dj * kjj;
        let b_new = if ai_new > 0.0 && ai_new < self.c {
            b1
        } else if aj_new > 0.0 && aj_new < self.c {
            b2
        } else {
            0.5 * (b1 + b2)
        };
        let db = b_new - self.b;
        let (row_i, row_j) = (self.gram.row(i), self.gram.row(j));
        for (k, e) in self.errors.iter_mut().enumerate() {
            *e += yi * di * row_i[k] + yj * dj * row_j[k] + db;
        }
        self.alpha[i] = ai_new;
        self.alpha[j] = aj_new;
        self.b = b_new;
        if let Some(h) = &mut self.history {
            h.push(self.dual);
        }
        true
    }

    /// `sum_j alpha_j y_j K(x_j, x_i)`, i.e. `f(x_i) - b`.
    fn margins_without_bias(&self) -> Vec<f64> {
        self.errors.iter().zip(self.y).map(|(e, y)| e + y - self.b).collect()
    }

    /// Average over free multipliers of `y_i - g_i`, else the midpoint of
    /// the interval the bound multipliers allow.
    fn final_bias(&self) -> f64 {
        let g = self.margins_without_bias();
        let free: Vec<usize> = (0..self.alpha.len())
            .filter(|&i| self.alpha[i] > ALPHA_THRESHOLD && self.alpha[i] < self.c - ALPHA_THRESHOLD)
            .collect();
        if !free.is_empty() {
            return free.iter().map(|&i| self.y[i] - g[i]).sum::<f64>() / free.len() as f64;
        }
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..self.alpha.len() {
            let edge = self.y[i] - g[i];
            let at_zero = self.alpha[i] <= ALPHA_THRESHOLD;
            // alpha = 0 needs y f >= 1; alpha = C needs y f <= 1
            if (self.y[i] > 0.0) == at_zero {
                lo = lo.max(edge);
            } else {
                hi = hi.min(edge);
            }
        }
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (true, false) => lo,
            (false, true) => hi,
            (false, false) => self.b,
        }
    }
}

/// Largest violation of the KKT conditions for multipliers `alpha`, labels
/// `y` in {-1,+1} and decision values `f` at the training points.
pub fn kkt_violation(alpha: &[f64], y: &[f64], f: &[f64], c: f64) -> f64 {
    let mut worst = 0.0f64;
    for ((&a, &yi), &fi) in alpha.iter().zip(y).zip(f) {
        let m = yi * fi;
        let v = if a <= ALPHA_THRESHOLD {
            1.0 - m
        } else if a >= c - ALPHA_THRESHOLD {
            m - 1.0
        } else {
            (m - 1.0).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Maps labels {0,1} to {-1,+1}.
pub fn signed_labels(labels: &[u8]) -> Vec<f64> {
    labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect()
}

pub fn smo_train(x: &Matrix, y: &[f64], kernel: KernelSpec, cfg: &SmoConfig, seed: u64) -> Result<SvmModel> {
    let n = x.rows();
    if y.len() != n {
        return Err(ClaireError::Alignment(format!("{} labels for {n} rows", y.len())));
    }
    if n == 0 {
        return Err(ClaireError::EmptyInput("no training rows".into()));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(ClaireError::Selection("SVM labels must be -1 or +1".into()));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(ClaireError::DegenerateLabels("SVM training needs both classes".into()));
    }
    if !(cfg.c > 0.0 && cfg.c.is_finite()) {
        return Err(ClaireError::Config(format!("C must be positive, got {}", cfg.c)));
    }
    if !x.is_finite() {
        return Err(ClaireError::Bounds("SVM input contains non-finite values".into()));
    }
    kernel.validate()?;

    let mut s = Solver {
        gram: Gram::new(x, kernel),
        y,
        alpha: vec![0.0; n],
        errors: y.iter().map(|v| -v).collect(),
        b: 0.0,
        c: cfg.c,
        dual: 0.0,
        history: cfg.record_dual.then(Vec::new),
    };
    let mut rng = RngStream::new(seed);
    let (mut sweeps, mut updates) = (0, 0);
    let mut passes;
    // The final bias differs from the running one, so the returned solution
    // can miss `tol` slightly; tighten the working tolerance until it holds.
    let mut working_tol = cfg.tol;
    let (bias, max_kkt_violation) = loop {
        passes = 0;
        while passes < cfg.max_passes && sweeps < cfg.max_sweeps {
            sweeps += 1;
            let mut changed = 0;
            for i in 0..n {
                if !s.violates(i, working_tol) {
                    continue;
                }
                let j = (i + 1 + rng.below(n - 1)) % n;
                let mut moved = s.take_step(i, j);
                if !moved {
                    let start = rng.below(n);
                    moved = (0..n).map(|o| (start + o) % n).any(|j| s.take_step(i, j));
                }
                if moved {
                    changed += 1;
                }
            }
            updates += changed;
            passes = if changed == 0 { passes + 1 } else { 0 };
        }
        let bias = s.final_bias();
        let f: Vec<f64> = s.margins_without_bias().iter().map(|v| v + bias).collect();
        let violation = kkt_violation(&s.alpha, y, &f, cfg.c);
        if violation <= cfg.tol || sweeps >= cfg.max_sweeps || working_tol < cfg.tol * 1e-3 {
            break (bias, violation);
        }
        working_tol /= 2.0;
    };
    let warning = if sweeps >= cfg.max_sweeps && passes < cfg.max_passes {
        Some(format!("SMO stopped after {sweeps} sweeps without converging"))
    } else if max_kkt_violation > cfg.tol {
        Some(format!("KKT violation {max_kkt_violation:.3e} exceeds tol {}", cfg.tol))
    } else {
        None
    };

    let support_indices: Vec<usize> = (0..n).filter(|&i| s.alpha[i] > ALPHA_THRESHOLD).collect();
    Ok(SvmModel {
        kernel,
        c: cfg.c,
        support_vectors: x.select_rows(&support_indices),
        dual_coef: support_indices.iter().map(|&i| s.alpha[i] * y[i]).collect(),
        bias,
        support_indices,
        diagnostics: SvmDiagnostics {
            updates,
            sweeps,
            max_kkt_violation,
            warning,
            dual_objective_history: s.history.unwrap_or_default(),
        },
    })
}

pub fn decision_function(model: &SvmModel, z: &[f64]) -> Result<f64> {
    if z.len() != model.n_features() {
        return Err(ClaireError::Shape {
            op: "decision_function",
            left: (1, z.len()),
            right: model.support_vectors.shape(),
        });
    }
    let s: f64 = model
        .support_vectors
        .iter_rows()
        .zip(&model.dual_coef)
        .map(|(sv, c)| c * kernel_unchecked(&model.kernel, sv, z))
        .sum();
    Ok(s + model.bias)
}

pub fn decision_values(model: &SvmModel, z: &Matrix) -> Result<Vec<f64>> {
    z.iter_rows().map(|r| decision_function(model, r)).collect()
}

/// Labels in {0,1}; a decision value of exactly 0 maps to 1.
pub fn predict_labels(model: &SvmModel, z: &Matrix) -> Result<Vec<u8>> {
    Ok(decision_values(model, z)?
        .into_iter()
        .map(|v| u8::from(v >= 0.0))
        .collect())
}
