//! Text formats: correspondences, priors, ground truth, outlier labels, and
//! the pose / point-cloud / report outputs.
//!
//! All formats are UTF-8 and line oriented. Everything after `#` is a comment
//! and blank lines are ignored. The first remaining line is a versioned header.

mod correspondences;
mod ground_truth;
mod labels;
mod outputs;
mod priors;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use self::correspondences::{parse_correspondences, write_correspondences, Correspondences};
pub use self::ground_truth::{
    convert_gps_to_local, parse_ground_truth, write_ground_truth, Geodetic, GroundTruth,
    GroundTruthRecord,
};
pub use self::labels::{parse_labels, write_labels, OutlierLabels};
pub use self::outputs::{
    parse_poses, write_ply, write_poses, write_report, PoseRecord, RunSummary,
};
pub use self::priors::{parse_priors, write_priors};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

impl IngestError {
    pub(crate) fn at(line: usize, message: impl Into<String>) -> Self {
        IngestError::Malformed {
            line,
            message: message.into(),
        }
    }

    /// Line number of a format error.
    pub fn line(&self) -> Option<usize> {
        match self {
            IngestError::Malformed { line, .. } => Some(*line),
            IngestError::Io { .. } => None,
        }
    }
}

pub fn read_file(path: &Path) -> Result<String, IngestError> {
    std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), IngestError> {
    std::fs::write(path, contents).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Non-empty lines with comments stripped, as `(line_number, tokens)`.
pub(crate) fn tokenized(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let content = raw.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = content.split_whitespace().collect();
        (!tokens.is_empty()).then_some((i + 1, tokens))
    })
}

/// Checks the header and returns the remaining lines. An input with no
/// content lines at all is accepted when `allow_empty` is set.
pub(crate) fn body<'a>(
    text: &'a str,
    magic: &str,
    allow_empty: bool,
) -> Result<Vec<(usize, Vec<&'a str>)>, IngestError> {
    let mut lines = tokenized(text);
    match lines.next() {
        None if allow_empty => Ok(Vec::new()),
        None => Err(IngestError::at(1, format!("missing header '{magic} 1'"))),
        Some((n, tokens)) => {
            if tokens.len() != 2 || tokens[0] != magic {
                return Err(IngestError::at(n, format!("expected header '{magic} 1'")));
            }
            if tokens[1] != "1" {
                return Err(IngestError::at(
                    n,
                    format!("unsupported {magic} version '{}'", tokens[1]),
                ));
            }
            Ok(lines.collect())
        }
    }
}

pub(crate) fn field<T: std::str::FromStr>(
    tokens: &[&str],
    i: usize,
    line: usize,
    what: &str,
) -> Result<T, IngestError> {
    let s = tokens
        .get(i)
        .ok_or_else(|| IngestError::at(line, format!("missing field '{what}'")))?;
    s.parse()
        .map_err(|_| IngestError::at(line, format!("invalid {what} '{s}'")))
}

pub(crate) fn finite(v: f64, line: usize, what: &str) -> Result<f64, IngestError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(IngestError::at(line, format!("{what} is not finite")))
    }
}

pub(crate) fn arity(tokens: &[&str], allowed: &[usize], line: usize) -> Result<(), IngestError> {
    if allowed.contains(&tokens.len()) {
        Ok(())
    } else {
        Err(IngestError::at(
            line,
            format!("'{}' record has {} fields", tokens[0], tokens.len() - 1),
        ))
    }
}
