//! Study-question and reference-answer generation grounded in chunks.

mod pipeline;
mod provider;
mod template;

pub use pipeline::{write_review_csv, GenerationConfig, QuestionGenerator, QuestionSet, REVIEW_COLUMNS};
pub use provider::{
    GenerationParams, GenerationProvider, HttpGenerationProvider, MockGenerationProvider, ScriptedProvider,
};
pub use template::PromptTemplate;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::chunking::Chunk;
use crate::docmodel::TopicSpec;
use crate::error::{Error, Result};
use crate::topics::IRRELEVANT;

pub const DEFAULT_QUESTION_TEMPLATE: &str = include_str!("../../templates/question.txt");
pub const DEFAULT_ANSWER_TEMPLATE: &str = include_str!("../../templates/answer.txt");
pub const DEFAULT_GRADING_TEMPLATE: &str = include_str!("../../templates/grading.txt");

pub const QUESTION_SLOTS: [&str; 5] = ["chunk", "objectives", "bloom_levels", "language", "format"];
pub const QUESTION_OPTIONAL_SLOTS: [&str; 1] = ["topic"];
pub const ANSWER_SLOTS: [&str; 4] = ["question", "chunk", "language", "format"];

/// Output instructions filled into the question template's `{format}` slot.
pub const QUESTION_FORMAT: &str = r#"Respond with a JSON list inside a ```json fenced code block and nothing else.
Each element must have exactly two fields: "level" (one of "Remember", "Understand", "Apply") and "question".
Example:
```json
[{"level": "Remember", "question": "..."}, {"level": "Apply", "question": "..."}]
```"#;

/// Output instructions filled into the answer template's `{format}` slot.
pub const ANSWER_FORMAT: &str = "Respond in exactly this format:\nREASONING: <evidence from the DOCUMENT, then your step-by-step thinking>\nANSWER: <the reference answer>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BloomLevel {
    Remember,
    Understand,
    Apply,
    Analyse,
    Evaluate,
    Create,
}

impl BloomLevel {
    pub const ALL: [BloomLevel; 6] = [
        BloomLevel::Remember,
        BloomLevel::Understand,
        BloomLevel::Apply,
        BloomLevel::Analyse,
        BloomLevel::Evaluate,
        BloomLevel::Create,
    ];

    /// The levels questions are generated for.
    pub const GENERATED: [BloomLevel; 3] = [BloomLevel::Remember, BloomLevel::Understand, BloomLevel::Apply];

    pub fn rank(self) -> u8 {
        self as u8 + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            BloomLevel::Remember => "Remember",
            BloomLevel::Understand => "Understand",
            BloomLevel::Apply => "Apply",
            BloomLevel::Analyse => "Analyse",
            BloomLevel::Evaluate => "Evaluate",
            BloomLevel::Create => "Create",
        }
    }

    pub fn descriptor(self) -> &'static str {
        match self {
            BloomLevel::Remember => "Retrieve relevant knowledge from long-term memory",
            BloomLevel::Understand => {
                "Construct meaning from instructional messages, including oral, written, and graphic communication"
            }
            BloomLevel::Apply => "Carry out or use a procedure in a given situation",
            BloomLevel::Analyse => {
                "Break material into its constituent parts and determine how the parts relate to one another and to an overall structure or purpose"
            }
            BloomLevel::Evaluate => "Make judgements based on criteria and standards",
            BloomLevel::Create => {
                "Put elements together to form a coherent or functional whole; reorganise elements into a new pattern or structure"
            }
        }
    }

    fn guidance(self) -> &'static str {
        match self {
            BloomLevel::Remember => "ask the student to recall a fact, term or definition from the document",
            BloomLevel::Understand => "ask the student to explain, summarise or compare ideas in their own words",
            BloomLevel::Apply => "ask the student to use a method from the document on a small concrete case",
            _ => "",
        }
    }

    pub fn is_generated(self) -> bool {
        self.rank() <= 3
    }
}

impl fmt::Display for BloomLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BloomLevel {
    type Err = Error;

    /// Accepts level names in any case (`Analyze` too) and ranks 1-6.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_lowercase();
        let level = match t.as_str() {
            "remember" | "1" => BloomLevel::Remember,
            "understand" | "2" => BloomLevel::Understand,
            "apply" | "3" => BloomLevel::Apply,
            "analyse" | "analyze" | "4" => BloomLevel::Analyse,
            "evaluate" | "5" => BloomLevel::Evaluate,
            "create" | "6" => BloomLevel::Create,
            _ => return Err(Error::InvalidInput(format!("unknown Bloom level '{s}'"))),
        };
        Ok(level)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedQuestion {
    pub id: String,
    pub chunk_id: String,
    pub topic_index: usize,
    pub bloom_level: BloomLevel,
    pub question: String,
    pub language: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceAnswer {
    pub question_id: String,
    pub reasoning: String,
    pub answer: String,
}

/// A question as read from model output, before ids are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedQuestion {
    pub level: BloomLevel,
    pub question: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// Unassigned or marked irrelevant by topic classification.
    Irrelevant,
    TooShort,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QuestionPrompt {
    Ready { prompt: String, topic_index: usize },
    Skip(SkipReason),
}

pub fn bloom_guidance() -> String {
    BloomLevel::GENERATED
        .iter()
        .map(|l| {
            format!(
                "{}. {}: {}. Usage: {}.",
                l.rank(),
                l.name(),
                l.descriptor(),
                l.guidance()
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Fills the question template for one chunk, or says why the chunk gets
/// no questions.
pub fn build_question_prompt(
    template: &PromptTemplate,
    chunk: &Chunk,
    topics: &[TopicSpec],
    language: &str,
    min_tokens: usize,
) -> Result<QuestionPrompt> {
    let topic_index = match chunk.topic {
        None => return Ok(QuestionPrompt::Skip(SkipReason::Irrelevant)),
        Some(t) if t == IRRELEVANT => return Ok(QuestionPrompt::Skip(SkipReason::Irrelevant)),
        Some(t) => t,
    };
    let topic = topics
        .iter()
        .find(|t| t.index as i64 == topic_index)
        .ok_or_else(|| Error::Integrity(format!("chunk '{}' refers to unknown topic {topic_index}", chunk.id)))?;
    if chunk.token_count < min_tokens || chunk.text.trim().is_empty() {
        return Ok(QuestionPrompt::Skip(SkipReason::TooShort));
    }
    let objectives = topic
        .objectives
        .iter()
        .map(|o| format!("- {o}"))
        .collect::<Vec<_>>()
        .join("\n");
    let values = HashMap::from([
        ("chunk", chunk.text.clone()),
        ("objectives", objectives),
        ("bloom_levels", bloom_guidance()),
        ("language", language.to_string()),
        ("format", QUESTION_FORMAT.to_string()),
        ("topic", topic.title.clone()),
    ]);
    Ok(QuestionPrompt::Ready {
        prompt: template.render(&values)?,
        topic_index: topic.index,
    })
}

static FENCE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)```[A-Za-z]*[ \t]*\r?\n(.*?)```").expect("static regex"));

fn json_candidates(output: &str) -> Vec<&str> {
    let mut out: Vec<&str> = FENCE
        .captures_iter(output)
        .filter_map(|c| c.get(1).map(|m| m.as_str()))
        .collect();
    out.push(output.trim());
    if let (Some(a), Some(b)) = (output.find('['), output.rfind(']')) {
        if a < b {
            out.push(&output[a..=b]);
        }
    }
    out
}

#[derive(Deserialize)]
struct RawQuestion {
    level: serde_json::Value,
    question: Option<String>,
}

/// Reads the fenced JSON question list from model output.
///
/// Entries with an unknown level, a level above Apply, or no question text
/// are dropped one by one; an output with no usable entry is an error.
pub fn parse_questions(output: &str) -> Result<Vec<ParsedQuestion>> {
    let entries = json_candidates(output)
        .into_iter()
        .find_map(|c| serde_json::from_str::<Vec<serde_json::Value>>(c).ok())
        .ok_or_else(|| Error::OutputParse {
            message: "no JSON question list found".into(),
            raw: output.to_string(),
        })?;
    let mut out = Vec::new();
    for e in entries {
        let Ok(raw) = serde_json::from_value::<RawQuestion>(e.clone()) else {
            log::warn!("dropping malformed question entry {e}");
            continue;
        };
        let level_text = match &raw.level {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(n) => n.to_string(),
            other => other.to_string(),
        };
        let level = match level_text.parse::<BloomLevel>() {
            Ok(l) if l.is_generated() => l,
            Ok(l) => {
                log::warn!("dropping question at level {l}: only Remember, Understand and Apply are generated");
                continue;
            }
            Err(_) => {
                log::warn!("dropping question with unknown level {level_text:?}");
                continue;
            }
        };
        match raw.question.map(|q| q.trim().to_string()) {
            Some(q) if !q.is_empty() => out.push(ParsedQuestion { level, question: q }),
            _ => log::warn!("dropping entry without question text"),
        }
    }
    if out.is_empty() {
        return Err(Error::OutputParse {
            message: "no valid questions in output".into(),
            raw: output.to_string(),
        });
    }
    Ok(out)
}

pub fn build_answer_prompt(template: &PromptTemplate, question: &str, chunk: &Chunk, language: &str) -> Result<String> {
    let values = HashMap::from([
        ("question", question.to_string()),
        ("chunk", chunk.text.clone()),
        ("language", language.to_string()),
        ("format", ANSWER_FORMAT.to_string()),
    ]);
    template.render(&values)
}

static REASONING: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^[ \t#>*_]*REASONING[*_]*[ \t]*:[*_]*").expect("static regex"));
static ANSWER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^[ \t#>*_]*ANSWER[*_]*[ \t]*:[*_]*").expect("static regex"));

/// Splits model output into its REASONING and ANSWER fields. An ANSWER
/// without REASONING is accepted with an empty reasoning.
pub fn parse_answer(question_id: &str, output: &str) -> Result<ReferenceAnswer> {
    let fail = |message: &str| Error::OutputParse {
        message: message.into(),
        raw: output.to_string(),
    };
    let answer_at = ANSWER.find_iter(output).last().ok_or_else(|| fail("no ANSWER field"))?;
    let answer = output[answer_at.end()..].trim().to_string();
    if answer.is_empty() {
        return Err(fail("empty ANSWER field"));
    }
    let reasoning = match REASONING.find(&output[..answer_at.start()]) {
        Some(m) => output[m.end()..answer_at.start()].trim().to_string(),
        None => {
            log::warn!("{question_id}: answer has no REASONING field");
            String::new()
        }
    };
    Ok(ReferenceAnswer {
        question_id: question_id.to_string(),
        reasoning,
        answer,
    })
}
