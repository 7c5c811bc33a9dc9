//! Short-answer grading benchmark: grade normalization, graders, and plain
//! and bin-weighted error metrics.

pub mod asag2024;
mod graders;
mod metrics;
mod report;

pub use graders::{
    grade_all, GradePrediction, Graded, Grader, LlmGrader, MeanBaseline, RemoteGrader, SimilarityGrader,
    QUESTION_UNAVAILABLE,
};
pub use metrics::{bin_index, bin_weights, mae, rmsd, wmae, wrmsd, BinWeights, BINS};
pub use report::{baseline_means_table, evaluate, MetricReport, MetricRow, FAILURE_FLAG_RATE};

use thiserror::Error;

use crate::docmodel::Dataset;

/// A grade as it appears in a source dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum RawGrade {
    Numeric(f64),
    /// Categorical verdict, lower-cased and trimmed.
    Label(String),
}

impl RawGrade {
    pub fn from_cell(cell: &str) -> Self {
        let s = cell.trim();
        match s.parse::<f64>() {
            Ok(v) => RawGrade::Numeric(v),
            Err(_) => RawGrade::Label(s.to_lowercase()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GradeError {
    #[error("unknown grade label '{label}' for {dataset}")]
    UnknownLabel { dataset: Dataset, label: String },

    #[error("invalid grade scale: {0}")]
    InvalidScale(String),

    /// Entries on a scale the benchmark leaves out.
    #[error("excluded grade scale: {0}")]
    ExcludedScale(String),

    #[error("{0}")]
    OutOfRange(String),
}

/// Categorical verdicts of the Beetle and SciEntsBank collections on a 0-3
/// scale.
pub fn label_points(label: &str) -> Option<f64> {
    let l = label.trim().to_lowercase().replace(['_', '-'], " ");
    match l.as_str() {
        "non domain" | "irrelevant" => Some(0.0),
        "contradictory" => Some(1.0),
        "partially correct" | "partially correct incomplete" | "incomplete" => Some(2.0),
        "correct" => Some(3.0),
        _ => None,
    }
}

fn native_scale(dataset: Dataset) -> f64 {
    match dataset {
        Dataset::Mohler => 5.0,
        Dataset::Beetle | Dataset::SciEntsBank => 3.0,
        _ => 1.0,
    }
}

/// Maps a raw grade onto [0, 1].
///
/// `scale_max` is the declared top of the source scale; without it the
/// dataset's native scale applies (Mohler 5, Beetle/SciEntsBank 3, others 1,
/// meaning already normalized). Category labels are only meaningful for
/// Beetle and SciEntsBank. SAF rows on the later 0-3.5 scale are excluded,
/// and DigiKlausur is only accepted pre-normalized.
pub fn normalize_grade(dataset: Dataset, raw: &RawGrade, scale_max: Option<f64>) -> Result<f64, GradeError> {
    let (value, scale) = match raw {
        RawGrade::Label(label) => {
            if !matches!(dataset, Dataset::Beetle | Dataset::SciEntsBank) {
                return Err(GradeError::UnknownLabel {
                    dataset,
                    label: label.clone(),
                });
            }
            let points = label_points(label).ok_or_else(|| GradeError::UnknownLabel {
                dataset,
                label: label.clone(),
            })?;
            (points, 3.0)
        }
        RawGrade::Numeric(v) => (*v, scale_max.unwrap_or_else(|| native_scale(dataset))),
    };
    if !value.is_finite() {
        return Err(GradeError::OutOfRange(format!(
            "{dataset}: grade is not a finite number"
        )));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(GradeError::InvalidScale(format!(
            "{dataset}: scale maximum {scale} is not positive"
        )));
    }
    match dataset {
        Dataset::Saf if scale == 3.5 => {
            return Err(GradeError::ExcludedScale(format!("{dataset}: 0-3.5 scale")));
        }
        Dataset::DigiKlausur if scale != 1.0 => {
            return Err(GradeError::InvalidScale(format!(
                "{dataset}: only pre-normalized grades (scale maximum 1) are accepted, got {scale}"
            )));
        }
        _ => {}
    }
    if value < 0.0 || value > scale {
        return Err(GradeError::OutOfRange(format!(
            "{dataset}: grade {value} outside declared range [0, {scale}]"
        )));
    }
    Ok(value / scale)
}
