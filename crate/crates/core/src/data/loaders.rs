//! SECOM, Tennessee Eastman and generic CSV readers.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TabularDataset, FAILURE, SUCCESS};
use crate::error::{ClaireError, Result};
use crate::numerics::Matrix;

/// Number of process variables in a Tennessee Eastman record.
pub const TEP_VARIABLES: usize = 52;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| ClaireError::io(path, e))
}

fn parse_value(token: &str, path: &Path, line: usize) -> Result<f64> {
    let t = token.trim().trim_matches('"');
    if t.is_empty() || t.eq_ignore_ascii_case("nan") || t.eq_ignore_ascii_case("na") {
        return Ok(f64::NAN);
    }
    t.parse::<f64>().map_err(|_| ClaireError::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("non-numeric token `{t}`"),
    })
}

/// Reads the UCI SECOM pair: whitespace-separated feature rows (`NaN` for
/// missing) and a label file whose rows start with `-1` (pass) or `1` (fail)
/// followed by a timestamp. Pass maps to label 1, fail to label 0.
pub fn load_secom(features_path: &Path, labels_path: &Path) -> Result<TabularDataset> {
    let text = read(features_path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| parse_value(t, features_path, lineno + 1))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(ClaireError::Parse {
                    path: features_path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("expected {} values, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }

    let text = read(labels_path)?;
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let Some(token) = line.split_whitespace().next() else {
            continue;
        };
        let v = parse_value(token, labels_path, lineno + 1)?;
        let label = if v == -1.0 {
            SUCCESS
        } else if v == 1.0 {
            FAILURE
        } else {
            return Err(ClaireError::Parse {
                path: labels_path.to_path_buf(),
                line: lineno + 1,
                message: format!("label must be -1 or 1, found `{token}`"),
            });
        };
        labels.push(label);
    }

    if labels.len() != rows.len() {
        return Err(ClaireError::Alignment(format!(
            "{} has {} rows but {} has {}",
            features_path.display(),
            rows.len(),
            labels_path.display(),
            labels.len()
        )));
    }
    let features = Matrix::from_rows(&rows)?;
    let names = (0..features.cols()).map(|j| format!("feature_{j}")).collect();
    TabularDataset::new(features, labels, names)
}

/// Which Tennessee Eastman fault classes count as the fault label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultSelection {
    /// Every nonzero fault class.
    All,
    /// Only the listed classes; rows of other fault classes are skipped.
    Classes(Vec<u32>),
}

enum Delim {
    Comma,
    Tab,
    Whitespace,
}

fn split_line<'a>(line: &'a str, delim: &Delim) -> Vec<&'a str> {
    match delim {
        Delim::Comma => line.split(',').map(str::trim).collect(),
        Delim::Tab => line.split('\t').map(str::trim).collect(),
        Delim::Whitespace => line.split_whitespace().collect(),
    }
}

const FAULT_COLUMN_NAMES: &[&str] = &["faultnumber", "fault_number", "fault", "fault_class", "class", "label"];
const IGNORED_COLUMN_NAMES: &[&str] = &["simulationrun", "simulation_run", "sample", "time", "index"];

/// Reads a delimited Tennessee Eastman table with 52 process variables and
/// one integer fault-class column.
///
/// The delimiter (comma, tab or whitespace) and an optional header row are
/// detected from the first line. With a header, the fault column is the one
/// named `faultNumber`, `fault`, `class` or `label`, and run/sample index
/// columns are skipped. Without a header the fault class is the last column.
/// Fault class 0 maps to label 1 (normal), selected fault classes to label 0.
pub fn load_tep(path: &Path, selection: &FaultSelection) -> Result<TabularDataset> {
    let text = read(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .peekable();
    let Some(&(_, first)) = lines.peek() else {
        return Err(ClaireError::EmptyInput(format!("{} is empty", path.display())));
    };
    let delim = if first.contains(',') {
        Delim::Comma
    } else if first.contains('\t') {
        Delim::Tab
    } else {
        Delim::Whitespace
    };
    let first_tokens = split_line(first, &delim);
    let has_header = first_tokens
        .iter()
        .any(|t| t.trim_matches('"').parse::<f64>().is_err() && !t.is_empty());

    let (fault_col, var_cols, names): (usize, Vec<usize>, Vec<String>) = if has_header {
        lines.next();
        let header: Vec<String> = first_tokens.iter().map(|t| t.trim_matches('"').to_string()).collect();
        let lower: Vec<String> = header.iter().map(|h| h.to_ascii_lowercase()).collect();
        let fault_col = FAULT_COLUMN_NAMES
            .iter()
            .find_map(|name| lower.iter().position(|h| h == name))
            .ok_or_else(|| ClaireError::Schema(format!("{}: no fault-class column in header", path.display())))?;
        let var_cols: Vec<usize> = (0..header.len())
            .filter(|&j| j != fault_col && !IGNORED_COLUMN_NAMES.contains(&lower[j].as_str()))
            .collect();
        let names = var_cols.iter().map(|&j| header[j].clone()).collect();
        (fault_col, var_cols, names)
    } else {
        let n = first_tokens.len();
        if n == 0 {
            return Err(ClaireError::Schema("empty first row".into()));
        }
        let var_cols: Vec<usize> = (0..n - 1).collect();
        let names = (0..n - 1).map(|j| format!("var_{}", j + 1)).collect();
        (n - 1, var_cols, names)
    };
    if var_cols.len() != TEP_VARIABLES {
        return Err(ClaireError::Schema(format!(
            "{}: expected {TEP_VARIABLES} process variables, found {}",
            path.display(),
            var_cols.len()
        )));
    }

    let mut records: Vec<(u32, Vec<f64>)> = Vec::new();
    let width = first_tokens.len();
    for (lineno, line) in lines {
        let tokens = split_line(line, &delim);
        if tokens.len() != width {
            return Err(ClaireError::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("expected {width} columns, found {}", tokens.len()),
            });
        }
        let fault = parse_value(tokens[fault_col], path, lineno + 1)?;
        if !(fault >= 0.0) || fault.fract() != 0.0 {
            return Err(ClaireError::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("fault class must be a nonnegative integer, found {fault}"),
            });
        }
        let values = var_cols
            .iter()
            .map(|&j| parse_value(tokens[j], path, lineno + 1))
            .collect::<Result<Vec<_>>>()?;
        records.push((fault as u32, values));
    }

    let present: BTreeSet<u32> = records.iter().map(|(c, _)| *c).collect();
    let wanted: Option<BTreeSet<u32>> = match selection {
        FaultSelection::All => None,
        FaultSelection::Classes(classes) => {
            if let Some(c) = classes.iter().find(|c| **c == 0 || !present.contains(c)) {
                return Err(ClaireError::Selection(format!(
                    "fault class {c} is not a fault class present in {} (present: {:?})",
                    path.display(),
                    present
                )));
            }
            Some(classes.iter().copied().collect())
        }
    };

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (class, values) in records {
        let keep = class == 0 || wanted.as_ref().is_none_or(|w| w.contains(&class));
        if keep {
            labels.push(if class == 0 { SUCCESS } else { FAILURE });
            rows.push(values);
        }
    }
    if rows.is_empty() {
        return Err(ClaireError::EmptyInput("no rows after fault selection".into()));
    }
    TabularDataset::new(Matrix::from_rows(&rows)?, labels, names)
}

/// Reads a comma-separated table with a header row and a 0/1 label column.
/// Empty cells and `NaN` are missing values.
pub fn load_csv(path: &Path, label_column: &str) -> Result<TabularDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => ClaireError::io(path, std::io::Error::other(e.to_string())),
            _ => ClaireError::Csv(e),
        })?;
    let header = reader.headers()?.clone();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| ClaireError::Schema(format!("{}: no `{label_column}` column", path.display())))?;
    let names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let label = parse_value(&record[label_idx], path, line)?;
        if label != 0.0 && label != 1.0 {
            return Err(ClaireError::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("label must be 0 or 1, found {label}"),
            });
        }
        labels.push(label as u8);
        rows.push(
            record
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != label_idx)
                .map(|(_, t)| parse_value(t, path, line))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    let features = if rows.is_empty() {
        Matrix::zeros(0, names.len())
    } else {
        Matrix::from_rows(&rows)?
    };
    TabularDataset::new(features, labels, names)
}
