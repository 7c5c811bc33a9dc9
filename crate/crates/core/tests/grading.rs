use std::path::Path;
use std::thread;

use proptest::prelude::*;
use studykit::docmodel::{read_grading_dataset, Dataset, GradingEntry};
use studykit::grading::{bin_weights, evaluate, grade_all, mae, rmsd, wmae, wrmsd, MeanBaseline, RemoteGrader};
use studykit::http::RetryPolicy;

/// Groups grades by tenth without the floor trick: grade g is in bin b when
/// b/10 <= g < (b+1)/10, with 1.0 in the last bin.
fn oracle_bin(g: f64) -> usize {
    (0..10).rev().find(|&b| g + 1e-9 >= b as f64 / 10.0).unwrap()
}

fn oracle_weighted(y: &[f64], y_hat: &[f64], err: impl Fn(f64) -> f64) -> f64 {
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); 10];
    for (a, b) in y.iter().zip(y_hat) {
        bins[oracle_bin(*a)].push(err(a - b));
    }
    let filled: Vec<&Vec<f64>> = bins.iter().filter(|b| !b.is_empty()).collect();
    filled
        .iter()
        .map(|b| b.iter().sum::<f64>() / b.len() as f64)
        .sum::<f64>()
        / filled.len() as f64
}

fn grades() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0u32..=20, 0.0f64..=1.0), 1..60)
        .prop_map(|v| v.into_iter().map(|(g, p)| (g as f64 / 20.0, p)).collect())
}

proptest! {
    #[test]
    fn weighted_metrics_match_the_bin_oracle(pairs in grades()) {
        let (y, y_hat): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let w = bin_weights(&y).unwrap();
        prop_assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let got = wmae(&y, &y_hat, &w.weights).unwrap();
        prop_assert!((got - oracle_weighted(&y, &y_hat, f64::abs)).abs() < 1e-9);
        let got = wrmsd(&y, &y_hat, &w.weights).unwrap();
        prop_assert!((got - oracle_weighted(&y, &y_hat, |e| e * e).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn rmsd_bounds_mae(pairs in grades()) {
        let (y, y_hat): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let m = mae(&y, &y_hat).unwrap();
        let r = rmsd(&y, &y_hat).unwrap();
        prop_assert!(m <= r + 1e-12);
        prop_assert!(r <= 1.0);
    }

    #[test]
    fn perfect_predictions_score_zero(pairs in grades()) {
        let y: Vec<f64> = pairs.into_iter().map(|p| p.0).collect();
        let w = bin_weights(&y).unwrap();
        prop_assert_eq!(wmae(&y, &y, &w.weights).unwrap(), 0.0);
        prop_assert_eq!(rmsd(&y, &y).unwrap(), 0.0);
    }
}

fn dataset() -> Vec<GradingEntry> {
    read_grading_dataset(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/grading.csv")).unwrap()
}

#[test]
fn fixture_dataset_normalizes_every_scale() {
    let entries = dataset();
    assert_eq!(entries.len(), 10, "the SAF row on a 3.5 scale is dropped");
    let grade = |d: Dataset, q: &str| {
        entries
            .iter()
            .find(|e| e.dataset == d && e.question.as_deref() == Some(q))
            .unwrap()
            .grade
    };
    assert_eq!(grade(Dataset::Mohler, "What is a pointer?"), 0.8);
    assert_eq!(grade(Dataset::Mohler, "What is a stack?"), 0.3);
    assert_eq!(grade(Dataset::Stita, "Name a sorting algorithm."), 0.75);
    assert_eq!(grade(Dataset::Beetle, "Why does the bulb light?"), 1.0);
    assert!(entries
        .iter()
        .filter(|e| e.dataset == Dataset::CuNlp)
        .all(|e| e.question.is_none()));
}

#[test]
fn baseline_report_has_a_row_per_dataset_and_a_mean() {
    let entries = dataset();
    let baseline = MeanBaseline::fit(&entries).unwrap();
    let preds = grade_all(&entries, &baseline, 2);
    assert!(preds.iter().all(|p| !p.failed()));
    let report = evaluate(&entries, &preds).unwrap();
    let mohler = report.row("Mohler", "baseline").unwrap();
    assert!((mohler.mae.unwrap() - 0.25).abs() < 1e-12);
    let mean = report.row("Mean", "baseline").unwrap();
    let rows: Vec<f64> = report
        .rows
        .iter()
        .filter(|r| r.dataset != "Mean")
        .map(|r| r.mae.unwrap())
        .collect();
    assert!((mean.mae.unwrap() - rows.iter().sum::<f64>() / rows.len() as f64).abs() < 1e-12);
    assert!(report.flagged.is_empty());
}

fn stub(responses: Vec<(u16, &'static str)>) -> String {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}/grade", server.server_addr().to_ip().unwrap());
    thread::spawn(move || {
        for (status, body) in responses {
            let Ok(mut req) = server.recv() else { return };
            let mut sink = String::new();
            let _ = req.as_reader().read_to_string(&mut sink);
            let resp = tiny_http::Response::from_string(body)
                .with_status_code(status)
                .with_header("Content-Type: application/json".parse::<tiny_http::Header>().unwrap());
            let _ = req.respond(resp);
        }
    });
    url
}

#[test]
fn remote_grader_retries_then_clamps() {
    let url = stub(vec![(503, "{}"), (200, r#"{"grade": 1.4, "feedback": "generous"}"#)]);
    let grader = RemoteGrader::new(url).with_retry(RetryPolicy::no_delay(3));
    let entries = &dataset()[..1];
    let preds = grade_all(entries, &grader, 1);
    assert_eq!(preds[0].predicted, Some(1.0));
    assert_eq!(preds[0].feedback.as_deref(), Some("generous"));
}

#[test]
fn remote_grader_failures_keep_their_slot() {
    let url = stub(vec![(200, "not json"), (500, "{}"), (500, "{}")]);
    let grader = RemoteGrader::new(url).with_retry(RetryPolicy::no_delay(1));
    let entries = &dataset()[..2];
    let preds = grade_all(entries, &grader, 1);
    assert_eq!(preds.len(), 2);
    assert!(preds.iter().all(|p| p.failed() && p.error.is_some()));
    let report = evaluate(entries, &preds).unwrap();
    assert!(!report.flagged.is_empty());
}
