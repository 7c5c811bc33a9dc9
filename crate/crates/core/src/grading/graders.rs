use std::collections::{BTreeMap, HashMap};
use std::sync::LazyLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::docmodel::{Dataset, GradingEntry};
use crate::error::{Error, ProviderError, Result};
use crate::http::{self, RetryPolicy};
use crate::parallel::map_bounded;
use crate::qagen::{GenerationParams, GenerationProvider, PromptTemplate, DEFAULT_GRADING_TEMPLATE};
use crate::topics::{cosine_similarity, EmbeddingProvider};

/// Stands in for the question of entries that have none.
pub const QUESTION_UNAVAILABLE: &str = "(question unavailable)";

pub const GRADING_SLOTS: [&str; 3] = ["question", "reference_answer", "provided_answer"];

/// A grader's verdict on one entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Graded {
    pub predicted: f64,
    pub feedback: Option<String>,
    pub raw_response: Option<String>,
}

impl Graded {
    fn plain(predicted: f64) -> Self {
        Self {
            predicted,
            feedback: None,
            raw_response: None,
        }
    }
}

pub trait Grader: Send + Sync {
    fn id(&self) -> &str;

    fn grade(&self, entry: &GradingEntry) -> Result<Graded>;
}

/// One line of `predictions.jsonl`. Failed entries keep their slot with
/// `predicted` unset and the reason in `error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradePrediction {
    /// Position of the entry in its grading dataset.
    pub entry_id: usize,
    pub grader_id: String,
    pub dataset: Dataset,
    pub predicted: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl GradePrediction {
    pub fn failed(&self) -> bool {
        self.predicted.is_none()
    }
}

fn clamp_unit(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Grades every entry with at most `parallelism` calls in flight; results
/// come back in entry order.
pub fn grade_all(entries: &[GradingEntry], grader: &dyn Grader, parallelism: usize) -> Vec<GradePrediction> {
    map_bounded(
        entries,
        parallelism,
        |i, e| {
            let base = GradePrediction {
                entry_id: i,
                grader_id: grader.id().to_string(),
                dataset: e.dataset,
                predicted: None,
                feedback: None,
                raw_response: None,
                error: None,
            };
            match grader.grade(e) {
                Ok(g) if g.predicted.is_finite() => GradePrediction {
                    predicted: Some(clamp_unit(g.predicted)),
                    feedback: g.feedback,
                    raw_response: g.raw_response,
                    ..base
                },
                Ok(g) => GradePrediction {
                    error: Some(format!("non-finite grade {}", g.predicted)),
                    raw_response: g.raw_response,
                    ..base
                },
                Err(err) => {
                    log::warn!("entry {i}: grading failed: {err}");
                    let raw_response = match &err {
                        Error::OutputParse { raw, .. } => Some(raw.clone()),
                        _ => None,
                    };
                    GradePrediction {
                        error: Some(err.to_string()),
                        raw_response,
                        ..base
                    }
                }
            }
        },
        |_| false,
    )
    .into_iter()
    .map(|p| p.expect("every entry is attempted"))
    .collect()
}

/// Always predicts the mean grade of the entry's dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanBaseline {
    means: BTreeMap<Dataset, f64>,
}

impl MeanBaseline {
    pub fn fit(entries: &[GradingEntry]) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidInput(
                "cannot fit a mean baseline on an empty dataset".into(),
            ));
        }
        let mut sums: BTreeMap<Dataset, (f64, usize)> = BTreeMap::new();
        for e in entries {
            let s = sums.entry(e.dataset).or_default();
            s.0 += e.grade;
            s.1 += 1;
        }
        Ok(Self {
            means: sums.into_iter().map(|(d, (sum, n))| (d, sum / n as f64)).collect(),
        })
    }

    pub fn mean(&self, dataset: Dataset) -> Option<f64> {
        self.means.get(&dataset).copied()
    }

    pub fn means(&self) -> &BTreeMap<Dataset, f64> {
        &self.means
    }
}

impl Grader for MeanBaseline {
    fn id(&self) -> &str {
        "baseline"
    }

    fn grade(&self, entry: &GradingEntry) -> Result<Graded> {
        self.mean(entry.dataset)
            .map(Graded::plain)
            .ok_or_else(|| Error::InvalidInput(format!("baseline was not fitted on {}", entry.dataset)))
    }
}

/// Cosine similarity of the reference and provided answers, negatives
/// clamped to zero.
pub struct SimilarityGrader<'a> {
    provider: &'a dyn EmbeddingProvider,
    id: String,
}

impl<'a> SimilarityGrader<'a> {
    pub fn new(provider: &'a dyn EmbeddingProvider) -> Self {
        Self {
            id: format!("similarity:{}", provider.model_id()),
            provider,
        }
    }
}

impl Grader for SimilarityGrader<'_> {
    fn id(&self) -> &str {
        &self.id
    }

    fn grade(&self, entry: &GradingEntry) -> Result<Graded> {
        let v = self
            .provider
            .embed(&[entry.reference_answer.clone(), entry.provided_answer.clone()])?;
        if v.len() != 2 {
            return Err(ProviderError::Malformed(format!("expected 2 vectors, got {}", v.len())).into());
        }
        Ok(Graded::plain(clamp_unit(cosine_similarity(
            &v[0].values,
            &v[1].values,
        )?)))
    }
}

static GRADE_FIELD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\bGRADE[*_]*[ \t]*[:=][ \t*_]*(-?(?:\d+(?:\.\d*)?|\.\d+))").expect("static regex")
});
static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?(?:\d+(?:\.\d*)?|\.\d+)").expect("static regex"));
static FEEDBACK_FIELD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?im)^[ \t*_]*FEEDBACK[*_]*[ \t]*:[ \t*_]*(.+)$").expect("static regex"));

/// The number in a `GRADE:` field, else the last number in the text,
/// clamped to [0, 1].
pub fn parse_grade(response: &str) -> Option<f64> {
    let token = GRADE_FIELD
        .captures(response)
        .and_then(|c| c.get(1))
        .or_else(|| NUMBER.find_iter(response).last())?;
    token
        .as_str()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(clamp_unit)
}

/// Prompts a text-generation model with one fixed template for every entry.
pub struct LlmGrader<'a> {
    provider: &'a dyn GenerationProvider,
    template: PromptTemplate,
    params: GenerationParams,
    id: String,
}

impl<'a> LlmGrader<'a> {
    pub fn new(provider: &'a dyn GenerationProvider) -> Result<Self> {
        Self::with_template(provider, PromptTemplate::parse(DEFAULT_GRADING_TEMPLATE)?)
    }

    /// The template must have exactly the `question`, `reference_answer`
    /// and `provided_answer` slots.
    pub fn with_template(provider: &'a dyn GenerationProvider, template: PromptTemplate) -> Result<Self> {
        template.require(&GRADING_SLOTS, &[])?;
        Ok(Self {
            id: format!("llm:{}", provider.model_id()),
            provider,
            template,
            params: GenerationParams {
                temperature: 0.0,
                max_tokens: 256,
                seed: None,
            },
        })
    }

    pub fn with_params(mut self, params: GenerationParams) -> Self {
        self.params = params;
        self
    }

    pub fn prompt(&self, entry: &GradingEntry) -> Result<String> {
        let values = HashMap::from([
            (
                "question",
                entry
                    .question
                    .clone()
                    .unwrap_or_else(|| QUESTION_UNAVAILABLE.to_string()),
            ),
            ("reference_answer", entry.reference_answer.clone()),
            ("provided_answer", entry.provided_answer.clone()),
        ]);
        self.template.render(&values)
    }
}

impl Grader for LlmGrader<'_> {
    fn id(&self) -> &str {
        &self.id
    }

    /// A response without a number earns one more call.
    fn grade(&self, entry: &GradingEntry) -> Result<Graded> {
        let prompt = self.prompt(entry)?;
        let mut last = String::new();
        for attempt in 1..=2 {
            last = self.provider.complete(&prompt, &self.params)?;
            if let Some(g) = parse_grade(&last) {
                return Ok(Graded {
                    predicted: g,
                    feedback: FEEDBACK_FIELD.captures(&last).map(|c| c[1].trim().to_string()),
                    raw_response: Some(last),
                });
            }
            log::debug!("attempt {attempt}: no grade in response");
        }
        Err(Error::OutputParse {
            message: "no grade in model response".into(),
            raw: last,
        })
    }
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    question: Option<&'a str>,
    reference_answer: &'a str,
    provided_answer: &'a str,
}

#[derive(Deserialize)]
struct RemoteResponse {
    grade: f64,
    feedback: Option<String>,
}

/// Client for an external grading service speaking
/// `{question?, reference_answer, provided_answer} -> {grade, feedback?}`.
pub struct RemoteGrader {
    url: String,
    id: String,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl RemoteGrader {
    pub fn new(url: impl Into<String>) -> Self {
        let url = url.into();
        Self {
            id: format!("remote:{url}"),
            url,
            retry: RetryPolicy::default(),
            client: http::client(Duration::from_secs(120)),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

impl Grader for RemoteGrader {
    fn id(&self) -> &str {
        &self.id
    }

    fn grade(&self, entry: &GradingEntry) -> Result<Graded> {
        let body = RemoteRequest {
            question: entry.question.as_deref(),
            reference_answer: &entry.reference_answer,
            provided_answer: &entry.provided_answer,
        };
        let resp: RemoteResponse = self
            .retry
            .run(|| http::post_json(&self.client, &self.url, None, &body))?;
        if !resp.grade.is_finite() {
            return Err(ProviderError::Malformed(format!("grade {} is not a number", resp.grade)).into());
        }
        Ok(Graded {
            predicted: clamp_unit(resp.grade),
            feedback: resp.feedback,
            raw_response: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qagen::ScriptedProvider;
    use crate::topics::StaticEmbeddingProvider;

    fn entry(dataset: Dataset, grade: f64) -> GradingEntry {
        GradingEntry {
            dataset,
            question: Some("What is a key?".into()),
            reference_answer: "ref".into(),
            provided_answer: "given".into(),
            grade,
        }
    }

    #[test]
    fn baseline_predicts_dataset_mean() {
        let es = [
            entry(Dataset::Mohler, 0.5),
            entry(Dataset::Mohler, 1.0),
            entry(Dataset::Saf, 0.2),
        ];
        let b = MeanBaseline::fit(&es).unwrap();
        assert_eq!(b.grade(&es[0]).unwrap().predicted, 0.75);
        assert_eq!(b.grade(&es[2]).unwrap().predicted, 0.2);
        assert!(b.grade(&entry(Dataset::Stita, 0.1)).is_err());
        assert!(MeanBaseline::fit(&[]).is_err());
    }

    #[test]
    fn similarity_examples() {
        let p = StaticEmbeddingProvider::new([
            ("same", vec![0.3, 0.4]),
            ("x", vec![1.0, 0.0]),
            ("y", vec![0.0, 1.0]),
            ("xy", vec![1.0, 1.0]),
            ("-x", vec![-1.0, 0.0]),
        ]);
        let g = SimilarityGrader::new(&p);
        let sim = |r: &str, a: &str| {
            g.grade(&GradingEntry {
                reference_answer: r.into(),
                provided_answer: a.into(),
                ..entry(Dataset::Mohler, 0.0)
            })
        };
        assert!((sim("same", "same").unwrap().predicted - 1.0).abs() < 1e-12);
        assert_eq!(sim("x", "y").unwrap().predicted, 0.0);
        assert!((sim("x", "xy").unwrap().predicted - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(sim("x", "-x").unwrap().predicted, 0.0);
        assert!(sim("x", "unknown").is_err());
    }

    #[test]
    fn grade_parsing() {
        assert_eq!(parse_grade("GRADE: 0.75"), Some(0.75));
        assert_eq!(parse_grade("**Grade**: .5 out of 1"), Some(0.5));
        assert_eq!(parse_grade("1.4"), Some(1.0));
        assert_eq!(parse_grade("I'd say 0.2, no wait, 0.3"), Some(0.3));
        assert_eq!(parse_grade("GRADE: -2"), Some(0.0));
        assert_eq!(parse_grade("great answer!"), None);
    }

    #[test]
    fn llm_grader_retries_once_then_fails() {
        let p = ScriptedProvider::ok(["great answer!", "GRADE: 0.75"]);
        let g = LlmGrader::new(&p).unwrap();
        assert_eq!(g.grade(&entry(Dataset::Mohler, 0.0)).unwrap().predicted, 0.75);

        let p = ScriptedProvider::ok(["great answer!", "still great!", "GRADE: 1"]);
        let g = LlmGrader::new(&p).unwrap();
        let preds = grade_all(&[entry(Dataset::Mohler, 0.0)], &g, 1);
        assert!(preds[0].failed());
        assert_eq!(preds[0].raw_response.as_deref(), Some("still great!"));
        assert_eq!(p.prompts().len(), 2);
    }

    #[test]
    fn llm_prompt_marks_missing_question() {
        let p = ScriptedProvider::ok(["GRADE: 1.4\nFEEDBACK: fine"]);
        let g = LlmGrader::new(&p).unwrap();
        let e = GradingEntry {
            question: None,
            ..entry(Dataset::CuNlp, 0.0)
        };
        let graded = g.grade(&e).unwrap();
        assert_eq!(graded.predicted, 1.0);
        assert_eq!(graded.feedback.as_deref(), Some("fine"));
        let prompt = &p.prompts()[0];
        assert!(prompt.contains(QUESTION_UNAVAILABLE));
        assert!(prompt.contains("ref") && prompt.contains("given"));
    }

    #[test]
    fn llm_template_needs_exactly_three_slots() {
        let p = ScriptedProvider::default();
        let extra = PromptTemplate::parse("{question} {reference_answer} {provided_answer} {rubric}").unwrap();
        assert!(LlmGrader::with_template(&p, extra).is_err());
        let short = PromptTemplate::parse("{question} {provided_answer}").unwrap();
        assert!(LlmGrader::with_template(&p, short).is_err());
    }

    #[test]
    fn predictions_keep_entry_order() {
        let es: Vec<GradingEntry> = (0..20).map(|i| entry(Dataset::Stita, i as f64 / 20.0)).collect();
        let b = MeanBaseline::fit(&es).unwrap();
        let preds = grade_all(&es, &b, 4);
        assert!(preds.iter().enumerate().all(|(i, p)| p.entry_id == i && !p.failed()));
        let line = serde_json::to_string(&GradePrediction {
            predicted: Some(0.5),
            ..preds[0].clone()
        })
        .unwrap();
        assert_eq!(
            line,
            r#"{"entry_id":0,"grader_id":"baseline","dataset":"Stita","predicted":0.5}"#
        );
        assert!((preds[0].predicted.unwrap() - 0.475).abs() < 1e-12);
    }
}
