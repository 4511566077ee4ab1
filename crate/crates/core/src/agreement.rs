//! Annotator × category count matrices and their per-row sample standard
//! deviations.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flaw::FlawKind;
use crate::ids::AnnotatorId;
use crate::lexicon::{Language, Lexicon};
use crate::model::{Hierarchy, PathIndex};
use crate::pipeline::{AnnotationStore, Assignment, Mode};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgreementError {
    #[error("sample standard deviation needs at least 2 values, got {0}")]
    Arity(usize),
    #[error("unknown annotator {0}")]
    UnknownAnnotator(AnnotatorId),
    #[error("replacement column has {got} entries, matrix has {expected} rows")]
    LengthMismatch { expected: usize, got: usize },
    #[error("count grid line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Bessel-corrected sample standard deviation.
pub fn sample_std_dev(counts: &[u64]) -> Result<f64, AgreementError> {
    let n = counts.len();
    if n < 2 {
        return Err(AgreementError::Arity(n));
    }
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n as f64;
    let ss: f64 = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum();
    Ok((ss / (n - 1) as f64).sqrt())
}

/// A matrix row: a hierarchy node or the "Unrecognized" escape.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Node(PathIndex),
    Unrecognized,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Category::Node(p) => write!(f, "{p}"),
            Category::Unrecognized => f.write_str("unrecognized"),
        }
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() || s.eq_ignore_ascii_case("unrecognized") {
            return Ok(Category::Unrecognized);
        }
        s.parse().map(Category::Node).map_err(|e: crate::model::ModelError| e.to_string())
    }
}

impl Serialize for Category {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementMatrix {
    pub rows: Vec<MatrixRow>,
    pub columns: Vec<AnnotatorId>,
    /// `counts[row][column]`
    pub counts: Vec<Vec<u64>>,
    pub mode: Option<Mode>,
}

impl AgreementMatrix {
    pub fn row(&self, category: &Category) -> Option<&[u64]> {
        self.rows
            .iter()
            .position(|r| &r.category == category)
            .map(|i| self.counts[i].as_slice())
    }

    pub fn column(&self, annotator: &AnnotatorId) -> Option<Vec<u64>> {
        let j = self.columns.iter().position(|a| a == annotator)?;
        Some(self.counts.iter().map(|r| r[j]).collect())
    }

    pub fn column_total(&self, annotator: &AnnotatorId) -> Option<u64> {
        self.column(annotator).map(|c| c.iter().sum())
    }

    /// Fills row names from a lexicon (first lemma in `language`).
    pub fn with_names(mut self, lexicon: &Lexicon, language: &Language) -> Self {
        for row in &mut self.rows {
            row.name = match &row.category {
                Category::Node(p) => lexicon.synonyms(p, language).into_iter().next(),
                Category::Unrecognized => Some("Unrecognized".into()),
            };
        }
        self
    }

    /// Parses a count grid: header `index,<annotator>...`, then one row
    /// per category with the category index in the first column.
    pub fn from_csv(text: &str, mode: Option<Mode>) -> Result<Self, AgreementError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| AgreementError::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        if header.len() < 2 {
            return Err(AgreementError::Parse {
                line: 1,
                message: "expected an index column and at least one annotator".into(),
            });
        }
        let columns: Vec<AnnotatorId> = header.iter().skip(1).map(AnnotatorId::new).collect();
        let mut rows = Vec::new();
        let mut counts = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| AgreementError::Parse {
                line,
                message: e.to_string(),
            })?;
            if rec.len() != columns.len() + 1 {
                return Err(AgreementError::Parse {
                    line,
                    message: format!("expected {} fields, found {}", columns.len() + 1, rec.len()),
                });
            }
            let category: Category = rec[0].parse().map_err(|message| AgreementError::Parse { line, message })?;
            let row = rec
                .iter()
                .skip(1)
                .map(|v| {
                    v.parse::<u64>().map_err(|e| AgreementError::Parse {
                        line,
                        message: format!("`{v}`: {e}"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(MatrixRow { category, name: None });
            counts.push(row);
        }
        Ok(Self {
            rows,
            columns,
            counts,
            mode,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["index".to_string()];
        header.extend(self.columns.iter().map(ToString::to_string));
        w.write_record(&header).expect("in-memory write");
        for (row, counts) in self.rows.iter().zip(&self.counts) {
            let mut rec = vec![row.category.to_string()];
            rec.extend(counts.iter().map(ToString::to_string));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

/// Counts records per (category, annotator). Rows follow the hierarchy in
/// preorder plus a final "Unrecognized" row, which also absorbs pending
/// label annotations. Columns are `annotators` in the given order followed
/// by any other annotator seen in scope.
pub fn count_matrix(
    store: &AnnotationStore,
    hierarchy: &Hierarchy,
    scope: Option<FlawKind>,
    mode: Option<Mode>,
    annotators: &[AnnotatorId],
) -> AgreementMatrix {
    let mut rows: Vec<MatrixRow> = hierarchy
        .paths()
        .into_iter()
        .map(|p| MatrixRow {
            category: Category::Node(p),
            name: None,
        })
        .collect();
    rows.push(MatrixRow {
        category: Category::Unrecognized,
        name: None,
    });
    let row_ix: BTreeMap<Category, usize> = rows.iter().enumerate().map(|(i, r)| (r.category.clone(), i)).collect();
    let unrecognized = rows.len() - 1;

    let mut columns: Vec<AnnotatorId> = annotators.to_vec();
    let mut counts = vec![vec![0u64; columns.len()]; rows.len()];
    for rec in store.records() {
        if mode.is_some_and(|m| rec.mode != m) {
            continue;
        }
        if let Some(kind) = scope {
            if store.media_of_record(rec).and_then(|m| m.flaw) != Some(kind) {
                continue;
            }
        }
        let j = match columns.iter().position(|a| a == &rec.annotator) {
            Some(j) => j,
            None => {
                columns.push(rec.annotator.clone());
                for row in &mut counts {
                    row.push(0);
                }
                columns.len() - 1
            }
        };
        let i = match &rec.assignment {
            Assignment::Node { node } => row_ix
                .get(&Category::Node(node.clone()))
                .copied()
                .unwrap_or(unrecognized),
            Assignment::Unrecognized | Assignment::Pending { .. } => unrecognized,
        };
        counts[i][j] += 1;
    }
    AgreementMatrix {
        rows,
        columns,
        counts,
        mode,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowDeviation {
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub annotators: usize,
    pub rows: Vec<RowDeviation>,
    /// Arithmetic mean of the per-row standard deviations.
    pub mean_of_row_sds: f64,
}

impl AgreementReport {
    pub fn sd(&self, category: &Category) -> Option<f64> {
        self.rows.iter().find(|r| &r.category == category).map(|r| r.sd)
    }
}

impl fmt::Display for AgreementReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rows {
            writeln!(
                f,
                "{:<14} {:<22} {:>10.4}",
                r.category.to_string(),
                r.name.as_deref().unwrap_or(""),
                r.sd
            )?;
        }
        writeln!(f, "{:<37} {:>10.4}", "mean-of-row-SDs", self.mean_of_row_sds)
    }
}

pub fn agreement_report(matrix: &AgreementMatrix) -> Result<AgreementReport, AgreementError> {
    let rows = matrix
        .rows
        .iter()
        .zip(&matrix.counts)
        .map(|(row, counts)| {
            Ok(RowDeviation {
                category: row.category.clone(),
                name: row.name.clone(),
                sd: sample_std_dev(counts)?,
            })
        })
        .collect::<Result<Vec<_>, AgreementError>>()?;
    let mean = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.sd).sum::<f64>() / rows.len() as f64
    };
    Ok(AgreementReport {
        annotators: matrix.columns.len(),
        rows,
        mean_of_row_sds: mean,
    })
}

/// Copy of `matrix` with one annotator's column replaced.
pub fn substitute_column(
    matrix: &AgreementMatrix,
    annotator: &AnnotatorId,
    replacement: &[u64],
) -> Result<AgreementMatrix, AgreementError> {
    let j = matrix
        .columns
        .iter()
        .position(|a| a == annotator)
        .ok_or_else(|| AgreementError::UnknownAnnotator(annotator.clone()))?;
    if replacement.len() != matrix.rows.len() {
        return Err(AgreementError::LengthMismatch {
            expected: matrix.rows.len(),
            got: replacement.len(),
        });
    }
    let mut out = matrix.clone();
    for (row, &v) in out.counts.iter_mut().zip(replacement) {
        row[j] = v;
    }
    Ok(out)
}

/// The annotator whose column, replaced row by row with the rounded mean of
/// the other annotators' counts, lowers the mean of row SDs the most.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierCandidate {
    pub annotator: AnnotatorId,
    pub replacement: Vec<u64>,
    pub mean_of_row_sds_after: f64,
    pub reduction: f64,
}

/// Leave-one-out outlier search; needs at least three annotators so that
/// the replacement is itself an agreement of several people. Ties go to
/// the earlier column.
pub fn outlier_column(matrix: &AgreementMatrix) -> Result<Option<OutlierCandidate>, AgreementError> {
    let n = matrix.columns.len();
    if n < 3 || matrix.rows.is_empty() {
        return Ok(None);
    }
    let before = agreement_report(matrix)?.mean_of_row_sds;
    let mut best: Option<OutlierCandidate> = None;
    for (j, annotator) in matrix.columns.iter().enumerate() {
        let replacement: Vec<u64> = matrix
            .counts
            .iter()
            .map(|row| {
                let others: u64 = row.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, v)| v).sum();
                (others as f64 / (n - 1) as f64).round() as u64
            })
            .collect();
        let after = agreement_report(&substitute_column(matrix, annotator, &replacement)?)?.mean_of_row_sds;
        if best.as_ref().is_none_or(|b| after < b.mean_of_row_sds_after) {
            best = Some(OutlierCandidate {
                annotator: annotator.clone(),
                replacement,
                mean_of_row_sds_after: after,
                reduction: before - after,
            });
        }
    }
    Ok(best)
}
