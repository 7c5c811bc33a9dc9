use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    build_answer_prompt, build_question_prompt, parse_answer, parse_questions, BloomLevel, GeneratedQuestion,
    GenerationParams, GenerationProvider, PromptTemplate, QuestionPrompt, ReferenceAnswer, SkipReason, ANSWER_SLOTS,
    DEFAULT_ANSWER_TEMPLATE, DEFAULT_QUESTION_TEMPLATE, QUESTION_OPTIONAL_SLOTS, QUESTION_SLOTS,
};
use crate::chunking::Chunk;
use crate::docmodel::TopicSpec;
use crate::error::{Error, Result};
use crate::parallel::map_bounded;

/// Columns of the manual review sheet; the last four are left for judges.
pub const REVIEW_COLUMNS: [&str; 9] = [
    "id",
    "chunk_id",
    "bloom_level",
    "question",
    "answer",
    "Bloom",
    "Grounded",
    "Relevant",
    "Correct",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub language: String,
    /// Chunks with fewer tokens get no questions.
    pub min_tokens: usize,
    pub params: GenerationParams,
    /// Provider calls in flight at once.
    pub parallelism: usize,
    /// Sample down to the same number of questions per level.
    pub balanced: bool,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            language: "English".into(),
            min_tokens: 30,
            params: GenerationParams::default(),
            parallelism: 4,
            balanced: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuestionSet {
    pub questions: Vec<GeneratedQuestion>,
    pub skipped: Vec<(String, SkipReason)>,
    /// Chunks answered from the checkpoint without a provider call.
    pub resumed: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointRecord {
    chunk_id: String,
    questions: Vec<GeneratedQuestion>,
}

pub struct QuestionGenerator<'a> {
    provider: &'a dyn GenerationProvider,
    question_template: PromptTemplate,
    answer_template: PromptTemplate,
    config: GenerationConfig,
}

/// Loads completed chunks and rewrites the file without a torn last line.
fn load_checkpoint(path: &Path) -> Result<BTreeMap<String, Vec<GeneratedQuestion>>> {
    let mut done = BTreeMap::new();
    if !path.exists() {
        return Ok(done);
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))?;
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut kept = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<CheckpointRecord>(line) {
            Ok(r) => {
                kept.push(line.clone());
                done.insert(r.chunk_id, r.questions);
            }
            Err(e) if Some(i) == last => log::warn!("{}: ignoring incomplete last record: {e}", path.display()),
            Err(e) => return Err(Error::parse(path, i + 1, e.to_string())),
        }
    }
    let mut body = kept.join("\n");
    if !body.is_empty() {
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
    Ok(done)
}

impl<'a> QuestionGenerator<'a> {
    pub fn new(provider: &'a dyn GenerationProvider, config: GenerationConfig) -> Result<Self> {
        Self::with_templates(
            provider,
            config,
            PromptTemplate::parse(DEFAULT_QUESTION_TEMPLATE)?,
            PromptTemplate::parse(DEFAULT_ANSWER_TEMPLATE)?,
        )
    }

    pub fn with_templates(
        provider: &'a dyn GenerationProvider,
        config: GenerationConfig,
        question_template: PromptTemplate,
        answer_template: PromptTemplate,
    ) -> Result<Self> {
        question_template.require(&QUESTION_SLOTS, &QUESTION_OPTIONAL_SLOTS)?;
        answer_template.require(&ANSWER_SLOTS, &[])?;
        Ok(Self {
            provider,
            question_template,
            answer_template,
            config,
        })
    }

    pub fn config(&self) -> &GenerationConfig {
        &self.config
    }

    /// Calls the provider, re-prompting once when the output does not parse.
    fn complete_parsed<T>(&self, prompt: &str, parse: impl Fn(&str) -> Result<T>) -> Result<T> {
        let first = self.provider.complete(prompt, &self.config.params)?;
        match parse(&first) {
            Err(Error::OutputParse { message, .. }) => {
                log::warn!("unusable model output ({message}); prompting once more");
                let second = self.provider.complete(prompt, &self.config.params)?;
                parse(&second)
            }
            other => other,
        }
    }

    fn questions_for(&self, chunk: &Chunk, prompt: &str, topic_index: usize) -> Result<Vec<GeneratedQuestion>> {
        let parsed = self.complete_parsed(prompt, parse_questions)?;
        Ok(parsed
            .into_iter()
            .enumerate()
            .map(|(n, q)| GeneratedQuestion {
                id: format!("{}-q{}", chunk.id, n + 1),
                chunk_id: chunk.id.clone(),
                topic_index,
                bloom_level: q.level,
                question: q.question,
                language: self.config.language.clone(),
            })
            .collect())
    }

    /// Generates questions for every eligible chunk, one provider call per
    /// chunk and never more than one chunk per prompt.
    ///
    /// With a checkpoint path, each finished chunk is appended to that file
    /// right away and chunks already in it are not sent again, so an
    /// interrupted run can be resumed.
    pub fn generate_question_set(
        &self,
        chunks: &[Chunk],
        topics: &[TopicSpec],
        checkpoint: Option<&Path>,
    ) -> Result<QuestionSet> {
        let mut done = match checkpoint {
            Some(p) => load_checkpoint(p)?,
            None => BTreeMap::new(),
        };
        let mut skipped = Vec::new();
        let mut pending = Vec::new();
        let mut resumed = 0;
        for c in chunks {
            match build_question_prompt(
                &self.question_template,
                c,
                topics,
                &self.config.language,
                self.config.min_tokens,
            )? {
                QuestionPrompt::Skip(reason) => skipped.push((c.id.clone(), reason)),
                QuestionPrompt::Ready { .. } if done.contains_key(&c.id) => resumed += 1,
                QuestionPrompt::Ready { prompt, topic_index } => pending.push((c, prompt, topic_index)),
            }
        }
        if resumed > 0 {
            log::info!("resuming: {resumed} chunks already done, {} to go", pending.len());
        }

        let sink = match checkpoint {
            Some(p) => Some(Mutex::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| Error::io(p, e))?,
            )),
            None => None,
        };
        let results = map_bounded(
            &pending,
            self.config.parallelism,
            |_, (chunk, prompt, topic)| {
                let qs = self.questions_for(chunk, prompt, *topic)?;
                if let (Some(sink), Some(path)) = (&sink, checkpoint) {
                    let record = CheckpointRecord {
                        chunk_id: chunk.id.clone(),
                        questions: qs.clone(),
                    };
                    let mut line = serde_json::to_string(&record).expect("questions serialize");
                    line.push('\n');
                    let mut f = sink.lock().expect("checkpoint lock poisoned");
                    f.write_all(line.as_bytes())
                        .and_then(|_| f.flush())
                        .map_err(|e| Error::io(path, e))?;
                }
                Ok(qs)
            },
            |r: &Result<Vec<GeneratedQuestion>>| r.is_err(),
        );
        let mut first_error = None;
        for ((chunk, _, _), r) in pending.iter().zip(results) {
            match r {
                Some(Ok(qs)) => {
                    done.insert(chunk.id.clone(), qs);
                }
                Some(Err(e)) => {
                    log::error!("chunk {}: {e}", chunk.id);
                    first_error.get_or_insert(e);
                }
                None => {}
            }
        }
        if let Some(e) = first_error {
            return Err(e);
        }

        let mut questions: Vec<GeneratedQuestion> = chunks
            .iter()
            .filter_map(|c| done.get(&c.id))
            .flatten()
            .cloned()
            .collect();
        if self.config.balanced {
            questions = balance(questions, self.config.seed);
        }
        let mut seen = HashSet::new();
        if let Some(q) = questions.iter().find(|q| !seen.insert(q.id.as_str())) {
            return Err(Error::Integrity(format!("duplicate question id '{}'", q.id)));
        }
        Ok(QuestionSet {
            questions,
            skipped,
            resumed,
        })
    }

    /// One provider call per question, each grounded in that question's
    /// own chunk.
    pub fn generate_answers(&self, questions: &[GeneratedQuestion], chunks: &[Chunk]) -> Result<Vec<ReferenceAnswer>> {
        let by_id: HashMap<&str, &Chunk> = chunks.iter().map(|c| (c.id.as_str(), c)).collect();
        let jobs = questions
            .iter()
            .map(|q| {
                let chunk = by_id.get(q.chunk_id.as_str()).ok_or_else(|| {
                    Error::Integrity(format!("question '{}' refers to unknown chunk '{}'", q.id, q.chunk_id))
                })?;
                Ok((
                    q.id.as_str(),
                    build_answer_prompt(&self.answer_template, &q.question, chunk, &q.language)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        map_bounded(
            &jobs,
            self.config.parallelism,
            |_, (id, prompt)| self.complete_parsed(prompt, |out| parse_answer(id, out)),
            |r| r.is_err(),
        )
        .into_iter()
        .flatten()
        .collect()
    }
}

/// Keeps the same number of questions for each generated level, chosen
/// with a seeded sampler, in original order.
fn balance(questions: Vec<GeneratedQuestion>, seed: u64) -> Vec<GeneratedQuestion> {
    let mut by_level: BTreeMap<BloomLevel, Vec<usize>> =
        BloomLevel::GENERATED.iter().map(|&l| (l, Vec::new())).collect();
    for (i, q) in questions.iter().enumerate() {
        by_level.entry(q.bloom_level).or_default().push(i);
    }
    let per_level = by_level.values().map(Vec::len).min().unwrap_or(0);
    if per_level == 0 {
        log::warn!("balanced sampling found a level without questions; the set is empty");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: Vec<usize> = Vec::new();
    for members in by_level.values() {
        keep.extend(
            sample(&mut rng, members.len(), per_level)
                .into_iter()
                .map(|k| members[k]),
        );
    }
    keep.sort_unstable();
    let mut questions: Vec<Option<GeneratedQuestion>> = questions.into_iter().map(Some).collect();
    keep.into_iter().filter_map(|i| questions[i].take()).collect()
}

/// Writes the manual review sheet, with reference answers where known.
pub fn write_review_csv<W: Write>(w: W, questions: &[GeneratedQuestion], answers: &[ReferenceAnswer]) -> Result<()> {
    let answer: HashMap<&str, &str> = answers
        .iter()
        .map(|a| (a.question_id.as_str(), a.answer.as_str()))
        .collect();
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::InvalidInput(format!("writing review sheet: {e}"));
    out.write_record(REVIEW_COLUMNS).map_err(io)?;
    for q in questions {
        out.write_record([
            q.id.as_str(),
            q.chunk_id.as_str(),
            q.bloom_level.name(),
            q.question.as_str(),
            answer.get(q.id.as_str()).copied().unwrap_or(""),
            "",
            "",
            "",
            "",
        ])
        .map_err(io)?;
    }
    out.flush()
        .map_err(|e| Error::InvalidInput(format!("writing review sheet: {e}")))
}
