use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::graders::{GradePrediction, MeanBaseline};
use super::metrics::{bin_weights, mae, rmsd, wmae, wrmsd};
use crate::docmodel::{Dataset, GradingEntry};
use crate::error::{Error, Result};

/// A grader failing on more than this share of entries is flagged.
pub const FAILURE_FLAG_RATE: f64 = 0.05;

pub const MEAN_ROW: &str = "Mean";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    /// Dataset name, or `Mean` for the average over datasets.
    pub dataset: String,
    pub grader: String,
    pub entries: usize,
    pub failed: usize,
    /// `None` when every entry failed.
    pub mae: Option<f64>,
    pub wmae: Option<f64>,
    pub rmsd: Option<f64>,
    pub wrmsd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub graders: Vec<String>,
    pub datasets: Vec<Dataset>,
    /// Per (dataset, grader), datasets in canonical order, then the Mean
    /// rows.
    pub rows: Vec<MetricRow>,
    /// Graders whose failed share exceeds [`FAILURE_FLAG_RATE`].
    pub flagged: Vec<String>,
    /// Per-entry bin weights of each dataset, over the entries the
    /// respective grader scored.
    #[serde(skip)]
    pub weights: BTreeMap<(String, Dataset), Vec<(usize, f64)>>,
}

type Metric = fn(&MetricRow) -> Option<f64>;

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Scores each grader's predictions against the entries, dataset by
/// dataset. Failed predictions are left out of the metrics and counted;
/// bin weights are computed over the scored entries of each dataset. The
/// Mean row is the unweighted mean of the dataset rows.
pub fn evaluate(entries: &[GradingEntry], predictions: &[GradePrediction]) -> Result<MetricReport> {
    if entries.is_empty() {
        return Err(Error::InvalidInput("no grading entries".into()));
    }
    let mut by_grader: BTreeMap<&str, Vec<&GradePrediction>> = BTreeMap::new();
    let mut graders: Vec<String> = Vec::new();
    for p in predictions {
        let e = entries.get(p.entry_id).ok_or_else(|| {
            Error::Integrity(format!(
                "prediction for entry {} but the dataset has {}",
                p.entry_id,
                entries.len()
            ))
        })?;
        if e.dataset != p.dataset {
            return Err(Error::Integrity(format!(
                "prediction for entry {} says {} but the entry is from {}",
                p.entry_id, p.dataset, e.dataset
            )));
        }
        if !by_grader.contains_key(p.grader_id.as_str()) {
            graders.push(p.grader_id.clone());
        }
        by_grader.entry(p.grader_id.as_str()).or_default().push(p);
    }
    if graders.is_empty() {
        return Err(Error::InvalidInput("no predictions".into()));
    }
    let datasets: Vec<Dataset> = Dataset::ALL
        .into_iter()
        .filter(|d| entries.iter().any(|e| e.dataset == *d))
        .collect();

    let mut rows = Vec::new();
    let mut means = Vec::new();
    let mut flagged = Vec::new();
    let mut weights = BTreeMap::new();
    for g in &graders {
        let preds = &by_grader[g.as_str()];
        let mut seen = vec![false; entries.len()];
        for p in preds {
            if std::mem::replace(&mut seen[p.entry_id], true) {
                return Err(Error::Integrity(format!(
                    "grader {g} has two predictions for entry {}",
                    p.entry_id
                )));
            }
        }
        let mut grader_rows = Vec::new();
        for &d in &datasets {
            let in_set: Vec<&&GradePrediction> = preds.iter().filter(|p| p.dataset == d).collect();
            let scored: Vec<(usize, f64)> = in_set
                .iter()
                .filter_map(|p| p.predicted.map(|v| (p.entry_id, v)))
                .collect();
            let failed = in_set.len() - scored.len();
            let mut row = MetricRow {
                dataset: d.name().to_string(),
                grader: g.clone(),
                entries: in_set.len(),
                failed,
                mae: None,
                wmae: None,
                rmsd: None,
                wrmsd: None,
            };
            if !scored.is_empty() {
                let y: Vec<f64> = scored.iter().map(|(i, _)| entries[*i].grade).collect();
                let y_hat: Vec<f64> = scored.iter().map(|(_, v)| *v).collect();
                let w = bin_weights(&y)?.weights;
                row.mae = Some(mae(&y, &y_hat)?);
                row.rmsd = Some(rmsd(&y, &y_hat)?);
                row.wmae = Some(wmae(&y, &y_hat, &w)?);
                row.wrmsd = Some(wrmsd(&y, &y_hat, &w)?);
                weights.insert((g.clone(), d), scored.iter().map(|(i, _)| *i).zip(w).collect());
            }
            grader_rows.push(row);
        }
        let total: usize = grader_rows.iter().map(|r| r.entries).sum();
        let failed: usize = grader_rows.iter().map(|r| r.failed).sum();
        if total > 0 && failed as f64 / total as f64 > FAILURE_FLAG_RATE {
            log::warn!("grader {g} failed on {failed} of {total} entries");
            flagged.push(g.clone());
        }
        means.push(MetricRow {
            dataset: MEAN_ROW.to_string(),
            grader: g.clone(),
            entries: total,
            failed,
            mae: mean_of(grader_rows.iter().map(|r| r.mae)),
            wmae: mean_of(grader_rows.iter().map(|r| r.wmae)),
            rmsd: mean_of(grader_rows.iter().map(|r| r.rmsd)),
            wrmsd: mean_of(grader_rows.iter().map(|r| r.wrmsd)),
        });
        rows.extend(grader_rows);
    }
    // dataset-major order, graders in first-seen order
    let order = |r: &MetricRow| {
        let d = datasets
            .iter()
            .position(|d| d.name() == r.dataset)
            .unwrap_or(datasets.len());
        let g = graders.iter().position(|g| *g == r.grader).unwrap_or(0);
        (d, g)
    };
    rows.sort_by_key(order);
    rows.extend(means);
    Ok(MetricReport {
        graders,
        datasets,
        rows,
        flagged,
        weights,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

fn table(title: &str, header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = format!("{title}\n{}\n", line(header));
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

impl MetricReport {
    pub fn row(&self, dataset: &str, grader: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.dataset == dataset && r.grader == grader)
    }

    pub fn is_flagged(&self) -> bool {
        !self.flagged.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,grader,entries,failed,mae,wmae,rmsd,wrmsd\n");
        let num = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        for r in &self.rows {
            let grader = if r.grader.contains([',', '"']) {
                format!("\"{}\"", r.grader.replace('"', "\"\""))
            } else {
                r.grader.clone()
            };
            let _ = writeln!(
                out,
                "{},{grader},{},{},{},{},{},{}",
                r.dataset,
                r.entries,
                r.failed,
                num(r.mae),
                num(r.wmae),
                num(r.rmsd),
                num(r.wrmsd)
            );
        }
        out
    }

    /// One table per metric with datasets as rows and graders as columns.
    pub fn to_text(&self) -> String {
        let metrics: [(&str, Metric); 4] = [
            ("Mean Absolute Error (MAE)", |r| r.mae),
            ("Weighted MAE (wMAE)", |r| r.wmae),
            ("Root Mean Squared Deviation (RMSD)", |r| r.rmsd),
            ("Weighted RMSD (wRMSD)", |r| r.wrmsd),
        ];
        let mut header = vec!["Dataset".to_string()];
        header.extend(self.graders.iter().cloned());
        let names: Vec<&str> = self
            .datasets
            .iter()
            .map(|d| d.name())
            .chain(std::iter::once(MEAN_ROW))
            .collect();
        let mut out = String::new();
        for (title, get) in metrics {
            let rows: Vec<Vec<String>> = names
                .iter()
                .map(|d| {
                    std::iter::once(d.to_string())
                        .chain(self.graders.iter().map(|g| cell(self.row(d, g).and_then(get))))
                        .collect()
                })
                .collect();
            out.push_str(&table(title, &header, &rows));
            out.push('\n');
        }
        let failed: Vec<Vec<String>> = self
            .graders
            .iter()
            .filter_map(|g| self.row(MEAN_ROW, g))
            .map(|r| {
                vec![
                    r.grader.clone(),
                    r.failed.to_string(),
                    r.entries.to_string(),
                    if self.flagged.contains(&r.grader) {
                        "FLAGGED"
                    } else {
                        ""
                    }
                    .to_string(),
                ]
            })
            .collect();
        let header: Vec<String> = ["Grader", "Failed", "Entries", ""].map(String::from).to_vec();
        out.push_str(&table("Failed entries", &header, &failed));
        out
    }
}

/// The average normalized grade per dataset, which is what the mean
/// baseline predicts.
pub fn baseline_means_table(entries: &[GradingEntry]) -> Result<String> {
    let b = MeanBaseline::fit(entries)?;
    let rows: Vec<Vec<String>> = Dataset::ALL
        .iter()
        .filter_map(|d| b.mean(*d).map(|m| vec![d.name().to_string(), format!("{m:.2}")]))
        .collect();
    Ok(table(
        "Average grade per dataset",
        &["Dataset".to_string(), "Average grade".to_string()],
        &rows,
    ))
}

#[cfg(test)]
mod tests {
    use super::super::graders::{grade_all, Grader, MeanBaseline};
    use super::*;

    fn entry(dataset: Dataset, grade: f64) -> GradingEntry {
        GradingEntry {
            dataset,
            question: Some("q".into()),
            reference_answer: "r".into(),
            provided_answer: "p".into(),
            grade,
        }
    }

    fn pred(entry_id: usize, dataset: Dataset, grader: &str, predicted: Option<f64>) -> GradePrediction {
        GradePrediction {
            entry_id,
            grader_id: grader.into(),
            dataset,
            predicted,
            feedback: None,
            raw_response: None,
            error: predicted.is_none().then(|| "boom".to_string()),
        }
    }

    /// Independent oracle: bins by integer tenths with the top bin closed.
    fn oracle(y: &[f64], y_hat: &[f64]) -> (f64, f64, f64, f64) {
        let n = y.len() as f64;
        let bin = |g: f64| {
            if g >= 0.9 {
                9
            } else {
                (0..9).find(|&b| g < (b + 1) as f64 / 10.0).unwrap()
            }
        };
        let mut counts = [0.0; 10];
        for &g in y {
            counts[bin(g)] += 1.0;
        }
        let k = counts.iter().filter(|&&c| c > 0.0).count() as f64;
        let (mut a, mut s, mut wa, mut ws) = (0.0, 0.0, 0.0, 0.0);
        for (&t, &p) in y.iter().zip(y_hat) {
            let w = 1.0 / k / counts[bin(t)];
            a += (t - p).abs();
            s += (t - p) * (t - p);
            wa += w * (t - p).abs();
            ws += w * (t - p) * (t - p);
        }
        (a / n, wa, (s / n).sqrt(), ws.sqrt())
    }

    #[test]
    fn baseline_on_ten_entries_matches_oracle() {
        let grades = [0.0, 0.2, 0.2, 0.5, 0.8, 0.8, 0.8, 1.0, 1.0, 1.0];
        let es: Vec<GradingEntry> = grades.iter().map(|&g| entry(Dataset::Stita, g)).collect();
        let b = MeanBaseline::fit(&es).unwrap();
        let report = evaluate(&es, &grade_all(&es, &b, 2)).unwrap();
        let mean = grades.iter().sum::<f64>() / 10.0;
        let (m, wm, r, wr) = oracle(&grades, &[mean; 10]);
        let row = report.row("Stita", "baseline").unwrap();
        assert!((row.mae.unwrap() - m).abs() < 1e-12);
        assert!((row.wmae.unwrap() - wm).abs() < 1e-12);
        assert!((row.rmsd.unwrap() - r).abs() < 1e-12);
        assert!((row.wrmsd.unwrap() - wr).abs() < 1e-12);
        assert_eq!(report.row(MEAN_ROW, "baseline").unwrap().mae, row.mae);
    }

    #[test]
    fn mean_row_and_identical_graders() {
        let es = [
            entry(Dataset::Mohler, 0.2),
            entry(Dataset::Mohler, 0.6),
            entry(Dataset::Saf, 1.0),
            entry(Dataset::Saf, 0.0),
        ];
        let mut ps = Vec::new();
        for g in ["a", "b"] {
            ps.extend([
                pred(0, Dataset::Mohler, g, Some(0.4)),
                pred(1, Dataset::Mohler, g, Some(0.4)),
                pred(2, Dataset::Saf, g, Some(1.0)),
                pred(3, Dataset::Saf, g, Some(1.0)),
            ]);
        }
        let r = evaluate(&es, &ps).unwrap();
        let (ma, mb) = (r.row(MEAN_ROW, "a").unwrap(), r.row(MEAN_ROW, "b").unwrap());
        assert_eq!(ma.mae, mb.mae);
        let mohler = r.row("Mohler", "a").unwrap().mae.unwrap();
        let saf = r.row("SAF", "a").unwrap().mae.unwrap();
        assert!((mohler - 0.2).abs() < 1e-12 && (saf - 0.5).abs() < 1e-12);
        assert!((ma.mae.unwrap() - (mohler + saf) / 2.0).abs() < 1e-12);
        assert_eq!(r.rows.len(), 6);
        let text = r.to_text();
        assert!(text.contains("Mohler") && text.contains("Mean") && text.contains("Weighted RMSD"));
        assert!(r
            .to_csv()
            .starts_with("dataset,grader,entries,failed,mae,wmae,rmsd,wrmsd\nMohler,a,2,0,0.200000"));
    }

    #[test]
    fn failures_are_counted_and_flagged() {
        let es: Vec<GradingEntry> = (0..10).map(|i| entry(Dataset::Beetle, i as f64 / 10.0)).collect();
        let ps: Vec<GradePrediction> = (0..10)
            .map(|i| pred(i, Dataset::Beetle, "g", (i != 3).then_some(0.5)))
            .collect();
        let r = evaluate(&es, &ps).unwrap();
        let row = r.row("Beetle", "g").unwrap();
        assert_eq!((row.entries, row.failed), (10, 1));
        assert_eq!(r.flagged, ["g"]);
        let w = &r.weights[&("g".to_string(), Dataset::Beetle)];
        assert_eq!(w.len(), 9);
        assert!((w.iter().map(|(_, w)| w).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_grader_never_loses_to_baseline() {
        struct Oracle;
        impl Grader for Oracle {
            fn id(&self) -> &str {
                "oracle"
            }
            fn grade(&self, e: &GradingEntry) -> Result<super::super::Graded> {
                Ok(super::super::Graded {
                    predicted: e.grade,
                    feedback: None,
                    raw_response: None,
                })
            }
        }
        let es: Vec<GradingEntry> = [0.1, 0.4, 0.4, 0.9]
            .iter()
            .map(|&g| entry(Dataset::Mohler, g))
            .collect();
        let mut ps = grade_all(&es, &Oracle, 1);
        ps.extend(grade_all(&es, &MeanBaseline::fit(&es).unwrap(), 1));
        let r = evaluate(&es, &ps).unwrap();
        let (o, b) = (r.row(MEAN_ROW, "oracle").unwrap(), r.row(MEAN_ROW, "baseline").unwrap());
        assert_eq!(
            (o.mae, o.wmae, o.rmsd, o.wrmsd),
            (Some(0.0), Some(0.0), Some(0.0), Some(0.0))
        );
        assert!(b.mae.unwrap() > 0.0 && b.wrmsd.unwrap() > 0.0);
    }

    #[test]
    fn integrity_checks() {
        let es = [entry(Dataset::Mohler, 0.2)];
        assert!(evaluate(&es, &[pred(5, Dataset::Mohler, "g", Some(0.1))]).is_err());
        assert!(evaluate(&es, &[pred(0, Dataset::Saf, "g", Some(0.1))]).is_err());
        assert!(evaluate(
            &es,
            &[
                pred(0, Dataset::Mohler, "g", Some(0.1)),
                pred(0, Dataset::Mohler, "g", Some(0.1))
            ]
        )
        .is_err());
        assert!(evaluate(&es, &[]).is_err());
    }

    #[test]
    fn means_table() {
        let es = [
            entry(Dataset::Mohler, 0.5),
            entry(Dataset::Mohler, 1.0),
            entry(Dataset::CuNlp, 0.28),
        ];
        let t = baseline_means_table(&es).unwrap();
        assert!(t.contains("CU-NLP") && t.contains("0.28") && t.contains("0.75"));
        assert!(t.find("CU-NLP").unwrap() < t.find("Mohler").unwrap());
    }
}
