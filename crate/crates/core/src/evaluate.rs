//! Classification metrics and the one-dimensional Fisher projection used to
//! measure how well a latent space separates the two classes.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::{FAILURE, SUCCESS};
use crate::error::{ClaireError, Result};
use crate::numerics::{cholesky, cholesky_solve, mean, variance, Matrix};

/// Ridge added to the pooled within-class scatter before solving.
pub const LDA_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// Mean of the per-class F1 scores.
    pub macro_f1: f64,
    /// F1 with label 1 as the positive class.
    pub f1_positive: f64,
    /// F1 with label 0 as the positive class.
    pub f1_negative: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Confusion counts use label 1 as positive.
pub fn compute_metrics(y_true: &[u8], y_pred: &[u8]) -> Result<MetricsReport> {
    if y_true.is_empty() {
        return Err(ClaireError::EmptyInput("no labels to score".into()));
    }
    if y_true.len() != y_pred.len() {
        return Err(ClaireError::Alignment(format!(
            "{} true labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t > 1 || p > 1 {
            return Err(ClaireError::DegenerateLabels(format!(
                "label {} is not 0 or 1",
                t.max(p)
            )));
        }
        match (t, p) {
            (1, 1) => tp += 1,
            (0, 1) => fp += 1,
            (0, 0) => tn += 1,
            _ => fn_ += 1,
        }
    }
    let f1_positive = f1(tp, fp, fn_);
    let f1_negative = f1(tn, fn_, fp);
    Ok(MetricsReport {
        accuracy: (tp + tn) as f64 / y_true.len() as f64,
        macro_f1: (f1_positive + f1_negative) / 2.0,
        f1_positive,
        f1_negative,
        tp,
        fp,
        tn,
        fn_,
    })
}

/// Unit direction `w` with class-1 projections above class-0 projections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaProjection {
    pub direction: Vec<f64>,
    #[serde(flatten)]
    pub summary: LdaSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdaSummary {
    pub mu0: f64,
    pub mu1: f64,
    /// Population standard deviations of the projected classes.
    pub sigma0: f64,
    pub sigma1: f64,
    /// Midpoint of the projected means.
    pub tau: f64,
    pub dprime: f64,
}

/// `|mu1 - mu0| / sqrt((s0^2 + s1^2) / 2)`.
pub fn dprime(mu0: f64, mu1: f64, sigma0: f64, sigma1: f64) -> f64 {
    (mu1 - mu0).abs() / ((sigma0 * sigma0 + sigma1 * sigma1) / 2.0).sqrt()
}

impl LdaProjection {
    pub fn project(&self, z: &Matrix) -> Result<Vec<f64>> {
        if z.cols() != self.direction.len() {
            return Err(ClaireError::Shape {
                op: "lda_project",
                left: z.shape(),
                right: (self.direction.len(), 1),
            });
        }
        Ok(z.iter_rows()
            .map(|r| r.iter().zip(&self.direction).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Class statistics of other rows along the fitted direction; `tau`
    /// stays the fitted threshold.
    pub fn summarize(&self, z: &Matrix, labels: &[u8]) -> Result<LdaSummary> {
        if z.rows() != labels.len() {
            return Err(ClaireError::Alignment(format!(
                "{} latent rows vs {} labels",
                z.rows(),
                labels.len()
            )));
        }
        let p = self.project(z)?;
        let p0: Vec<f64> = p
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == FAILURE)
            .map(|(v, _)| *v)
            .collect();
        let p1: Vec<f64> = p
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == SUCCESS)
            .map(|(v, _)| *v)
            .collect();
        if p0.is_empty() || p1.is_empty() {
            return Err(ClaireError::ClassCoverage(
                "projection summary needs both classes".into(),
            ));
        }
        let (mu0, mu1) = (mean(&p0), mean(&p1));
        let (sigma0, sigma1) = (variance(&p0).sqrt(), variance(&p1).sqrt());
        Ok(LdaSummary {
            mu0,
            mu1,
            sigma0,
            sigma1,
            tau: self.summary.tau,
            dprime: dprime(mu0, mu1, sigma0, sigma1),
        })
    }
}

pub fn lda_fit(z: &Matrix, labels: &[u8]) -> Result<LdaProjection> {
    if z.rows() != labels.len() {
        return Err(ClaireError::Alignment(format!(
            "{} latent rows vs {} labels",
            z.rows(),
            labels.len()
        )));
    }
    let idx0: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == FAILURE).collect();
    let idx1: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == SUCCESS).collect();
    if idx0.len() < 2 || idx1.len() < 2 {
        return Err(ClaireError::ClassCoverage(format!(
            "LDA needs at least 2 rows per class, got {} and {}",
            idx0.len(),
            idx1.len()
        )));
    }
    let k = z.cols();
    let class_mean = |idx: &[usize]| -> Vec<f64> {
        (0..k)
            .map(|c| idx.iter().map(|&i| z[(i, c)]).sum::<f64>() / idx.len() as f64)
            .collect()
    };
    let m0 = class_mean(&idx0);
    let m1 = class_mean(&idx1);
    let mut scatter = Matrix::zeros(k, k);
    for (idx, m) in [(&idx0, &m0), (&idx1, &m1)] {
        for &i in idx.iter() {
            let row = z.row(i);
            for a in 0..k {
                let da = row[a] - m[a];
                for b in 0..=a {
                    scatter[(a, b)] += da * (row[b] - m[b]);
                }
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            scatter[(b, a)] = scatter[(a, b)];
        }
        scatter[(a, a)] += LDA_RIDGE;
    }
    let l = cholesky(&scatter)
        .map_err(|_| ClaireError::Conditioning("within-class scatter is singular even after ridge".into()))?;
    let diff = Matrix::from_vec(k, 1, m1.iter().zip(&m0).map(|(a, b)| a - b).collect())?;
    let mut w = cholesky_solve(&l, &diff)?.into_vec();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(ClaireError::Conditioning("discriminant direction is not finite".into()));
    }
    if norm == 0.0 {
        // coincident class means: any axis separates equally badly
        w = (0..k).map(|c| f64::from(u8::from(c == 0))).collect();
    } else {
        w.iter_mut().for_each(|v| *v /= norm);
    }
    let mut proj = LdaProjection {
        direction: w,
        summary: LdaSummary {
            mu0: 0.0,
            mu1: 0.0,
            sigma0: 0.0,
            sigma1: 0.0,
            tau: 0.0,
            dprime: 0.0,
        },
    };
    let p = proj.project(z)?;
    let mut p0: Vec<f64> = idx0.iter().map(|&i| p[i]).collect();
    let mut p1: Vec<f64> = idx1.iter().map(|&i| p[i]).collect();
    if mean(&p1) < mean(&p0) {
        proj.direction.iter_mut().for_each(|v| *v = -*v);
        p0.iter_mut().for_each(|v| *v = -*v);
        p1.iter_mut().for_each(|v| *v = -*v);
    }
    let (mu0, mu1) = (mean(&p0), mean(&p1));
    let (sigma0, sigma1) = (variance(&p0).sqrt(), variance(&p1).sqrt());
    if sigma0 == 0.0 && sigma1 == 0.0 {
        return Err(ClaireError::Conditioning(
            "both projected classes have zero spread; d' is unbounded".into(),
        ));
    }
    proj.summary = LdaSummary {
        mu0,
        mu1,
        sigma0,
        sigma1,
        tau: (mu0 + mu1) / 2.0,
        dprime: dprime(mu0, mu1, sigma0, sigma1),
    };
    Ok(proj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedRow {
    pub projection: f64,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionExport {
    pub rows: Vec<ProjectedRow>,
    pub summary: LdaSummary,
}

pub fn project_export(proj: &LdaProjection, z: &Matrix, labels: &[u8]) -> Result<ProjectionExport> {
    if z.rows() != labels.len() {
        return Err(ClaireError::Alignment(format!(
            "{} latent rows vs {} labels",
            z.rows(),
            labels.len()
        )));
    }
    Ok(ProjectionExport {
        rows: proj
            .project(z)?
            .into_iter()
            .zip(labels)
            .map(|(projection, &label)| ProjectedRow { projection, label })
            .collect(),
        summary: proj.summary,
    })
}

/// Data rows `projection,label`.
pub fn write_projection_csv<W: Write>(export: &ProjectionExport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in &export.rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| ClaireError::io("<csv output>", e))
}

pub fn read_projection_csv<R: Read>(input: R) -> Result<Vec<ProjectedRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(ClaireError::from))
        .collect()
}
