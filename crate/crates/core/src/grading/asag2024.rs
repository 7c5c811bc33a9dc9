//! Conversion of the published combined benchmark into grading entries.
//!
//! Rows are expected to carry `data_source`, `question`,
//! `reference_answer`, `provided_answer` and `normalized_grade` (or a raw
//! `grade` on the source's native scale).

use std::path::Path;
use std::time::Duration;

use serde::Deserialize;
use serde_json::Value;

use super::{normalize_grade, GradeError, RawGrade};
use crate::docmodel::{Dataset, GradingEntry};
use crate::error::{Error, ProviderError, Result};
use crate::http::{self, RetryPolicy};

pub const DEFAULT_ROWS_URL: &str =
    "https://datasets-server.huggingface.co/rows?dataset=Meyerger%2FASAG2024&config=default&split=train";

const PAGE: usize = 100;

fn text(row: &Value, key: &str) -> Option<String> {
    match row.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Null => None,
        other => Some(other.to_string()),
    }
}

fn number(row: &Value, key: &str) -> Option<RawGrade> {
    match row.get(key)? {
        Value::Number(n) => n.as_f64().map(RawGrade::Numeric),
        Value::String(s) if !s.trim().is_empty() => Some(RawGrade::from_cell(s)),
        _ => None,
    }
}

/// Turns one source row into an entry. `Ok(None)` means the row sits on an
/// excluded scale.
pub fn convert_row(row: &Value) -> Result<Option<GradingEntry>> {
    let source = text(row, "data_source")
        .or_else(|| text(row, "dataset"))
        .ok_or_else(|| Error::InvalidInput("row has no data_source".into()))?;
    let dataset: Dataset = source.parse()?;
    let grade = if let Some(g) = number(row, "normalized_grade") {
        normalize_grade(dataset, &g, Some(1.0))
    } else {
        let raw = number(row, "grade").ok_or_else(|| Error::InvalidInput("row has no grade".into()))?;
        normalize_grade(dataset, &raw, None)
    };
    let grade = match grade {
        Ok(g) => g,
        Err(GradeError::ExcludedScale(_)) => return Ok(None),
        Err(e) => return Err(Error::Range(e.to_string())),
    };
    let question = text(row, "question").filter(|q| !q.trim().is_empty());
    let reference_answer = text(row, "reference_answer").unwrap_or_default();
    if reference_answer.trim().is_empty() {
        return Err(Error::InvalidInput("row has no reference answer".into()));
    }
    Ok(Some(GradingEntry {
        dataset,
        question,
        reference_answer,
        provided_answer: text(row, "provided_answer").unwrap_or_default(),
        grade,
    }))
}

/// Converts rows, skipping excluded and unusable ones with a warning.
pub fn convert_rows<'a>(rows: impl IntoIterator<Item = &'a Value>) -> Vec<GradingEntry> {
    let mut out = Vec::new();
    let (mut excluded, mut rejected) = (0usize, 0usize);
    for (i, row) in rows.into_iter().enumerate() {
        match convert_row(row) {
            Ok(Some(e)) => out.push(e),
            Ok(None) => excluded += 1,
            Err(e) => {
                rejected += 1;
                log::warn!("row {i}: {e}");
            }
        }
    }
    if excluded + rejected > 0 {
        log::warn!("skipped {excluded} rows on excluded scales and {rejected} unusable rows");
    }
    out
}

/// Reads a local copy: a CSV with a header row, or JSON Lines.
pub fn read_local(path: &Path) -> Result<Vec<GradingEntry>> {
    let rows: Vec<Value> = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let mut r =
            csv::Reader::from_path(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        r.deserialize::<serde_json::Map<String, Value>>()
            .map(|rec| {
                rec.map(Value::Object)
                    .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
            })
            .collect::<Result<_>>()?
    } else {
        crate::docmodel::read_jsonl(path)?
    };
    Ok(convert_rows(&rows))
}

#[derive(Deserialize)]
struct RowsPage {
    rows: Vec<RowItem>,
    num_rows_total: Option<usize>,
}

#[derive(Deserialize)]
struct RowItem {
    row: Value,
}

/// Pages through a rows endpoint (`&offset=..&length=..` appended) until a
/// short page or the advertised total.
pub fn download_rows(url: &str) -> Result<Vec<Value>> {
    let client = http::client(Duration::from_secs(60));
    let retry = RetryPolicy::default();
    let mut rows = Vec::new();
    loop {
        let page_url = format!("{url}&offset={}&length={PAGE}", rows.len());
        let page: RowsPage = retry.run(|| {
            let resp = client
                .get(&page_url)
                .send()
                .map_err(|e| ProviderError::Transient(format!("{page_url}: {e}")))?;
            let status = resp.status();
            if status.is_server_error() || status.as_u16() == 429 {
                return Err(ProviderError::Transient(format!("{page_url}: HTTP {status}")));
            }
            if !status.is_success() {
                return Err(ProviderError::Fatal(format!("{page_url}: HTTP {status}")));
            }
            resp.json()
                .map_err(|e| ProviderError::Malformed(format!("{page_url}: {e}")))
        })?;
        let n = page.rows.len();
        rows.extend(page.rows.into_iter().map(|r| r.row));
        log::info!("fetched {} rows", rows.len());
        let done = n < PAGE || page.num_rows_total.is_some_and(|t| rows.len() >= t);
        if done {
            return Ok(rows);
        }
    }
}
