use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use studykit::chunking::{chunk_by_annotation, context_loss, Chunk, Chunker, ContextLoss, SmallChunkAction};
use studykit::classification::ClassificationReport;
use studykit::docmodel::{self, Block};
use studykit::grading::{
    self, asag2024, GradePrediction, Grader, LlmGrader, MeanBaseline, RemoteGrader, SimilarityGrader,
};
use studykit::layout;
use studykit::qagen::{self, write_review_csv, GeneratedQuestion, PromptTemplate, QuestionGenerator, ReferenceAnswer};
use studykit::topics::{self, IRRELEVANT};

use crate::config::{pick, PipelineConfig};
use crate::providers::Resolved;
use crate::store::{csv_twin, require, with_suffix, write_atomic};
use crate::{Cli, Command, SmallChunk, Strategy};

struct Ctx {
    cfg: PipelineConfig,
    providers: Resolved,
}

impl Ctx {
    /// Logs the configuration a command actually runs with.
    fn announce(&self, command: &str) {
        log::info!("{command}: {}", self.providers.describe());
        log::info!("{command}: resolved config\n{}", self.cfg.to_toml());
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let providers = Resolved::new(&cli.providers, &cfg.providers)?;
    let mut ctx = Ctx { cfg, providers };
    match cli.command {
        Command::Associate {
            blocks,
            instances,
            out,
            annotations,
            report,
        } => {
            let blocks = pick(&blocks, &ctx.cfg.paths.blocks, "blocks")?;
            let instances = pick(&instances, &ctx.cfg.paths.instances, "instances")?;
            ctx.announce("associate");
            associate(&blocks, &instances, &out, annotations.as_deref().zip(report.as_deref()))
        }
        Command::InferHeadings {
            blocks,
            out,
            levels,
            annotations,
            report,
        } => {
            ctx.announce("infer-headings");
            infer_headings(
                &ctx,
                &blocks,
                &out,
                levels.as_deref(),
                annotations.as_deref().zip(report.as_deref()),
            )
        }
        Command::Chunk {
            blocks,
            out,
            strategy,
            max_tokens,
            min_tokens,
            small_chunk,
            window,
            pages,
        } => {
            let c = &mut ctx.cfg.chunking;
            if let Some(v) = max_tokens {
                c.max_tokens = v;
            }
            if let Some(v) = min_tokens {
                c.min_tokens = v;
            }
            if let Some(v) = small_chunk {
                c.small_chunk_action = match v {
                    SmallChunk::Merge => SmallChunkAction::MergePrevious,
                    SmallChunk::Delete => SmallChunkAction::Delete,
                };
            }
            let out = pick(&out, &ctx.cfg.paths.chunks, "out")?;
            ctx.announce("chunk");
            chunk(&ctx, &blocks, &out, strategy, window, pages)
        }
        Command::EvalChunking {
            blocks,
            annotations,
            report,
        } => {
            let annotations = pick(&annotations, &ctx.cfg.paths.annotations, "annotations")?;
            ctx.announce("eval-chunking");
            eval_chunking(&ctx, &blocks, &annotations, &report)
        }
        Command::Classify {
            chunks,
            topics,
            out,
            z_threshold,
            annotations,
            blocks,
        } => {
            if let Some(z) = z_threshold {
                ctx.cfg.topics.z_threshold = z;
            }
            let chunks = pick(&chunks, &ctx.cfg.paths.chunks, "chunks")?;
            let topics = pick(&topics, &ctx.cfg.paths.topics, "topics")?;
            ctx.announce("classify");
            classify(
                &ctx,
                &chunks,
                &topics,
                &out,
                annotations.as_deref().zip(blocks.as_deref()),
            )
        }
        Command::GenerateQuestions {
            chunks,
            topics,
            out,
            review,
            checkpoint,
            balanced,
            language,
            min_tokens,
            parallelism,
            seed,
            template,
        } => {
            let g = &mut ctx.cfg.generation;
            g.balanced |= balanced;
            if let Some(v) = language {
                g.language = v;
            }
            if let Some(v) = min_tokens {
                g.min_tokens = v;
            }
            if let Some(v) = parallelism {
                g.parallelism = v;
            }
            if let Some(v) = seed {
                g.seed = v;
            }
            let chunks = pick(&chunks, &ctx.cfg.paths.chunks, "chunks")?;
            let topics = pick(&topics, &ctx.cfg.paths.topics, "topics")?;
            let out = pick(&out, &ctx.cfg.paths.questions, "out")?;
            let checkpoint = checkpoint.unwrap_or_else(|| with_suffix(&out, ".checkpoint.jsonl"));
            let template = template.or_else(|| ctx.cfg.paths.question_template.clone());
            ctx.announce("generate-questions");
            generate_questions(
                &ctx,
                &chunks,
                &topics,
                &out,
                review.as_deref(),
                &checkpoint,
                template.as_deref(),
            )
        }
        Command::GenerateAnswers {
            questions,
            chunks,
            out,
            review,
            parallelism,
            template,
        } => {
            if let Some(v) = parallelism {
                ctx.cfg.generation.parallelism = v;
            }
            let questions = pick(&questions, &ctx.cfg.paths.questions, "questions")?;
            let chunks = pick(&chunks, &ctx.cfg.paths.chunks, "chunks")?;
            let out = pick(&out, &ctx.cfg.paths.answers, "out")?;
            let template = template.or_else(|| ctx.cfg.paths.answer_template.clone());
            ctx.announce("generate-answers");
            generate_answers(&ctx, &questions, &chunks, &out, review.as_deref(), template.as_deref())
        }
        Command::FetchAsag2024 { out, url, from_local } => {
            ctx.announce("fetch-asag2024");
            fetch_asag2024(&out, &url, from_local.as_deref())
        }
        Command::Grade {
            dataset,
            grader,
            out,
            parallelism,
            template,
        } => {
            if let Some(v) = parallelism {
                ctx.cfg.grading.parallelism = v;
            }
            let dataset = pick(&dataset, &ctx.cfg.paths.dataset, "dataset")?;
            let out = pick(&out, &ctx.cfg.paths.predictions, "out")?;
            let template = template.or_else(|| ctx.cfg.paths.grading_template.clone());
            ctx.announce("grade");
            grade(&ctx, &dataset, &grader, &out, template.as_deref())
        }
        Command::Evaluate {
            dataset,
            predictions,
            report,
        } => {
            let dataset = pick(&dataset, &ctx.cfg.paths.dataset, "dataset")?;
            let predictions = if predictions.is_empty() {
                ctx.cfg.paths.predictions.clone().into_iter().collect()
            } else {
                predictions
            };
            ctx.announce("evaluate");
            evaluate(&dataset, &predictions, &report)
        }
        Command::Report {
            blocks,
            annotations,
            out,
        } => {
            let annotations = pick(&annotations, &ctx.cfg.paths.annotations, "annotations")?;
            ctx.announce("report");
            report(&blocks, &annotations, &out)
        }
    }
}

fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

fn blocks_bytes(blocks: &[Block]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    docmodel::write_blocks(&mut buf, blocks)?;
    Ok(buf)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_blocks(path: &Path, producer: Option<&str>) -> Result<Vec<Block>> {
    require(path, "blocks", producer)?;
    Ok(docmodel::read_blocks(path)?)
}

fn load_chunks(path: &Path) -> Result<Vec<Chunk>> {
    require(path, "chunks", Some("chunk"))?;
    Ok(docmodel::read_chunks(path)?)
}

fn chunks_bytes(chunks: &[Chunk]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    docmodel::write_chunks(&mut buf, chunks)?;
    Ok(buf)
}

/// Aligned plain-text table; the first column is left-aligned.
fn text_table(title: &str, header: &[&str], rows: &[Vec<String>]) -> String {
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
    };
    let mut s = format!("{title}\n");
    s.push_str(line(&header.iter().map(|h| h.to_string()).collect::<Vec<_>>()).trim_end());
    s.push('\n');
    for r in rows {
        s.push_str(line(r).trim_end());
        s.push('\n');
    }
    s
}

/// Text and CSV forms of named classification reports, written to `out`
/// and its CSV twin.
fn write_reports(out: &Path, reports: &[(&str, &ClassificationReport)]) -> Result<()> {
    let mut text = String::new();
    let mut csv = String::from("report,label,precision,recall,f1,support\n");
    for (i, (name, r)) in reports.iter().enumerate() {
        if i > 0 {
            text.push('\n');
        }
        let _ = writeln!(text, "{name}");
        text.push_str(&r.to_text());
        for line in r.to_csv().lines().skip(1) {
            let _ = writeln!(csv, "{name},{line}");
        }
    }
    write_atomic(out, text.as_bytes())?;
    write_atomic(&csv_twin(out), csv.as_bytes())?;
    print!("{text}");
    Ok(())
}

const LAYOUT_TITLE: &str = "Layout classification";
const HEADING_TITLE: &str = "Heading levels";

fn associate(blocks: &Path, instances: &Path, out: &Path, eval: Option<(&Path, &Path)>) -> Result<()> {
    let blocks = load_blocks(blocks, None)?;
    require(instances, "instances", None)?;
    let instances = docmodel::read_instances(instances)?;
    let typed = layout::associate_blocks(&blocks, &instances);
    let unmatched = typed.iter().filter(|t| !t.associated).count();
    let blocks: Vec<Block> = typed.into_iter().map(|t| t.block).collect();
    write_atomic(out, &blocks_bytes(&blocks)?)?;
    println!(
        "typed {} blocks ({unmatched} without an overlapping instance) -> {}",
        blocks.len(),
        out.display()
    );
    if let Some((ann, report)) = eval {
        require(ann, "annotations", None)?;
        let anns = docmodel::read_annotations(ann, &blocks)?;
        let r = layout::layout_classification_report(&blocks, &anns)?;
        write_reports(report, &[(LAYOUT_TITLE, &r)])?;
    }
    Ok(())
}

fn infer_headings(
    ctx: &Ctx,
    blocks: &Path,
    out: &Path,
    levels: Option<&Path>,
    eval: Option<(&Path, &Path)>,
) -> Result<()> {
    let blocks = load_blocks(blocks, Some("associate"))?;
    if blocks.iter().all(|b| b.block_type.is_none()) {
        bail!("blocks carry no types: run associate first");
    }
    let (map, blocks) = layout::infer_heading_levels(&blocks, &ctx.cfg.headings);
    write_atomic(out, &blocks_bytes(&blocks)?)?;
    if let Some(p) = levels {
        write_atomic(p, &json_bytes(&map)?)?;
    }
    println!("{} heading levels -> {}", map.depth(), out.display());
    if let Some((ann, report)) = eval {
        require(ann, "annotations", None)?;
        let anns = docmodel::read_annotations(ann, &blocks)?;
        let r = layout::heading_level_report(&blocks, &anns)?;
        write_reports(report, &[(HEADING_TITLE, &r)])?;
    }
    Ok(())
}

fn chunk(
    ctx: &Ctx,
    blocks: &Path,
    out: &Path,
    strategy: Strategy,
    window: Option<usize>,
    pages: Option<u32>,
) -> Result<()> {
    let blocks = load_blocks(blocks, Some("infer-headings"))?;
    let chunker = Chunker::new(ctx.cfg.chunking.clone())?;
    let chunks = match strategy {
        Strategy::Dla => chunker.dla(&blocks),
        Strategy::Page => chunker.per_pages(&blocks, pages.unwrap_or(1))?,
        Strategy::Pages3 => chunker.per_pages(&blocks, 3)?,
        Strategy::Fixed => chunker.fixed_window(&blocks, window.unwrap_or(ctx.cfg.chunking.fallback_window_tokens))?,
    };
    write_atomic(out, &chunks_bytes(&chunks)?)?;
    println!("{} chunks -> {}", chunks.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct StrategyRow<'a> {
    strategy: &'a str,
    #[serde(flatten)]
    loss: ContextLoss,
}

fn eval_chunking(ctx: &Ctx, blocks: &Path, annotations: &Path, report: &Path) -> Result<()> {
    let blocks = load_blocks(blocks, Some("infer-headings"))?;
    require(annotations, "annotations", None)?;
    let anns = docmodel::read_annotations(annotations, &blocks)?;
    let chunker = Chunker::new(ctx.cfg.chunking.clone())?;
    let runs = [
        (
            "Optimal Chunking",
            chunk_by_annotation(&blocks, &anns, chunker.tokenizer())?,
        ),
        ("DLA Chunking", chunker.dla(&blocks)),
        ("Per Page Chunking", chunker.per_pages(&blocks, 1)?),
        ("Per 3 Pages Chunking", chunker.per_pages(&blocks, 3)?),
    ];
    let mut rows = Vec::new();
    for (name, chunks) in &runs {
        rows.push(StrategyRow {
            strategy: name,
            loss: context_loss(chunks, &anns)?,
        });
    }
    let text = text_table(
        "Chunking strategies",
        &["Chunking Strategy", "Lost Contexts", "Average Tokens per Chunk"],
        &rows
            .iter()
            .map(|r| {
                vec![
                    r.strategy.to_string(),
                    r.loss.lost_count.to_string(),
                    format!("{:.2}", r.loss.avg_tokens_per_chunk),
                ]
            })
            .collect::<Vec<_>>(),
    );
    let mut csv = String::from("strategy,lost_contexts,units,chunks,avg_tokens_per_chunk\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{:.6}",
            r.strategy, r.loss.lost_count, r.loss.units, r.loss.chunks, r.loss.avg_tokens_per_chunk
        );
    }
    write_atomic(report, text.as_bytes())?;
    write_atomic(&csv_twin(report), csv.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn classify(ctx: &Ctx, chunks: &Path, topics: &Path, out: &Path, eval: Option<(&Path, &Path)>) -> Result<()> {
    let chunks = load_chunks(chunks)?;
    require(topics, "topics", None)?;
    let specs = docmodel::read_topics(topics)?;
    let provider = ctx.providers.embedder()?;
    let centroids = topics::build_centroids(&specs, provider.as_ref())?;
    let (chunks, _) = topics::classify_chunks(&chunks, &centroids, provider.as_ref(), ctx.cfg.topics.z_threshold)?;
    write_atomic(out, &chunks_bytes(&chunks)?)?;
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for c in &chunks {
        *counts.entry(c.topic.unwrap_or(IRRELEVANT)).or_default() += 1;
    }
    let summary = counts
        .iter()
        .map(|(t, n)| format!("{t}: {n}"))
        .collect::<Vec<_>>()
        .join(", ");
    println!("classified {} chunks ({summary}) -> {}", chunks.len(), out.display());
    if let Some((ann, blocks)) = eval {
        let blocks = load_blocks(blocks, None)?;
        require(ann, "annotations", None)?;
        let anns = docmodel::read_annotations(ann, &blocks)?;
        let f1 = topics::topic_f1(&chunks, &anns, false)?;
        let adjusted = topics::topic_f1(&chunks, &anns, true)?;
        println!("topic F1 {f1:.4}, adjusted F1 {adjusted:.4}");
    }
    Ok(())
}

fn load_template(path: Option<&Path>, default: &str) -> Result<PromptTemplate> {
    Ok(match path {
        Some(p) => PromptTemplate::from_file(p)?,
        None => PromptTemplate::parse(default)?,
    })
}

fn generate_questions(
    ctx: &Ctx,
    chunks: &Path,
    topics: &Path,
    out: &Path,
    review: Option<&Path>,
    checkpoint: &Path,
    template: Option<&Path>,
) -> Result<()> {
    let chunks = load_chunks(chunks)?;
    if !chunks.is_empty() && chunks.iter().all(|c| c.topic.is_none()) {
        bail!("chunks carry no topics: run classify first");
    }
    require(topics, "topics", None)?;
    let specs = docmodel::read_topics(topics)?;
    let provider = ctx.providers.generator()?;
    let generator = QuestionGenerator::with_templates(
        &provider,
        ctx.cfg.generation.clone(),
        load_template(template, qagen::DEFAULT_QUESTION_TEMPLATE)?,
        PromptTemplate::parse(qagen::DEFAULT_ANSWER_TEMPLATE)?,
    )?;
    let set = generator.generate_question_set(&chunks, &specs, Some(checkpoint))?;
    write_atomic(out, &json_bytes(&set.questions)?)?;
    if let Some(r) = review {
        let mut buf = Vec::new();
        write_review_csv(&mut buf, &set.questions, &[])?;
        write_atomic(r, &buf)?;
    }
    let mut per_level: BTreeMap<&str, usize> = BTreeMap::new();
    for q in &set.questions {
        *per_level.entry(q.bloom_level.name()).or_default() += 1;
    }
    println!(
        "{} questions ({}) from {} chunks; {} skipped, {} resumed, {} provider calls -> {}",
        set.questions.len(),
        per_level
            .iter()
            .map(|(l, n)| format!("{l} {n}"))
            .collect::<Vec<_>>()
            .join(", "),
        chunks.len(),
        set.skipped.len(),
        set.resumed,
        provider.calls(),
        out.display()
    );
    Ok(())
}

fn generate_answers(
    ctx: &Ctx,
    questions: &Path,
    chunks: &Path,
    out: &Path,
    review: Option<&Path>,
    template: Option<&Path>,
) -> Result<()> {
    require(questions, "questions", Some("generate-questions"))?;
    let questions: Vec<GeneratedQuestion> = read_json(questions)?;
    let chunks = load_chunks(chunks)?;
    let provider = ctx.providers.generator()?;
    let generator = QuestionGenerator::with_templates(
        &provider,
        ctx.cfg.generation.clone(),
        PromptTemplate::parse(qagen::DEFAULT_QUESTION_TEMPLATE)?,
        load_template(template, qagen::DEFAULT_ANSWER_TEMPLATE)?,
    )?;
    let answers: Vec<ReferenceAnswer> = generator.generate_answers(&questions, &chunks)?;
    write_atomic(out, &json_bytes(&answers)?)?;
    if let Some(r) = review {
        let mut buf = Vec::new();
        write_review_csv(&mut buf, &questions, &answers)?;
        write_atomic(r, &buf)?;
    }
    println!(
        "{} reference answers, {} provider calls -> {}",
        answers.len(),
        provider.calls(),
        out.display()
    );
    Ok(())
}

fn fetch_asag2024(out: &Path, url: &str, from_local: Option<&Path>) -> Result<()> {
    let entries = match from_local {
        Some(p) => {
            require(p, "local dataset copy", None)?;
            asag2024::read_local(p)?
        }
        None => asag2024::convert_rows(&asag2024::download_rows(url)?),
    };
    if entries.is_empty() {
        bail!("no usable grading entries found");
    }
    let mut buf = Vec::new();
    docmodel::write_grading_dataset(&mut buf, &entries)?;
    write_atomic(out, &buf)?;
    println!("{} grading entries -> {}", entries.len(), out.display());
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Vec<docmodel::GradingEntry>> {
    require(path, "grading dataset", Some("fetch-asag2024"))?;
    Ok(docmodel::read_grading_dataset(path)?)
}

fn grade(ctx: &Ctx, dataset: &Path, grader: &str, out: &Path, template: Option<&Path>) -> Result<()> {
    let entries = load_dataset(dataset)?;
    let parallelism = ctx.cfg.grading.parallelism;
    let run = |g: &dyn Grader| grading::grade_all(&entries, g, parallelism);
    let predictions: Vec<GradePrediction> = match grader {
        "baseline" => run(&MeanBaseline::fit(&entries)?),
        "similarity" => {
            let p = ctx.providers.embedder()?;
            run(&SimilarityGrader::new(p.as_ref()))
        }
        "llm" => {
            let p = ctx.providers.generator()?;
            let t = load_template(template, qagen::DEFAULT_GRADING_TEMPLATE)?;
            run(&LlmGrader::with_template(&p, t)?.with_params(ctx.cfg.generation.params.clone()))
        }
        other => match other.strip_prefix("remote:") {
            Some(url) if !url.is_empty() => run(&RemoteGrader::new(url)),
            _ => bail!("unknown grader '{other}': expected baseline, similarity, llm or remote:URL"),
        },
    };
    let mut buf = Vec::new();
    docmodel::write_jsonl(&mut buf, &predictions)?;
    write_atomic(out, &buf)?;
    let failed: Vec<&GradePrediction> = predictions.iter().filter(|p| p.failed()).collect();
    println!(
        "graded {} entries, {} failed -> {}",
        predictions.len(),
        failed.len(),
        out.display()
    );
    if !predictions.is_empty() && failed.len() == predictions.len() {
        let reason = failed[0].error.clone().unwrap_or_default();
        return Err(studykit::Error::Provider(studykit::ProviderError::Fatal(format!(
            "every entry failed; first error: {reason}"
        ))))
        .context("grading");
    }
    Ok(())
}

fn evaluate(dataset: &Path, predictions: &[PathBuf], report: &Path) -> Result<()> {
    if predictions.is_empty() {
        bail!("no predictions given: run grade first");
    }
    let entries = load_dataset(dataset)?;
    let mut all = Vec::new();
    for p in predictions {
        require(p, "predictions", Some("grade"))?;
        all.extend(docmodel::read_jsonl::<GradePrediction>(p)?);
    }
    let r = grading::evaluate(&entries, &all)?;
    let mut text = r.to_text();
    text.push('\n');
    text.push_str(&grading::baseline_means_table(&entries)?);
    write_atomic(&report.with_extension("csv"), r.to_csv().as_bytes())?;
    write_atomic(&report.with_extension("txt"), text.as_bytes())?;
    print!("{text}");
    for g in &r.flagged {
        log::warn!(
            "grader {g} failed on more than {:.0}% of entries",
            grading::FAILURE_FLAG_RATE * 100.0
        );
    }
    Ok(())
}

fn report(blocks: &Path, annotations: &Path, out: &Path) -> Result<()> {
    let blocks = load_blocks(blocks, Some("infer-headings"))?;
    require(annotations, "annotations", None)?;
    let anns = docmodel::read_annotations(annotations, &blocks)?;
    if blocks.iter().all(|b| b.block_type.is_none()) {
        return Err(anyhow!("blocks carry no types: run associate and infer-headings first"));
    }
    let layout_report = layout::layout_classification_report(&blocks, &anns)?;
    let heading_report = layout::heading_level_report(&blocks, &anns)?;
    write_reports(out, &[(LAYOUT_TITLE, &layout_report), (HEADING_TITLE, &heading_report)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_aligns_columns() {
        let t = text_table("T", &["A", "Long header"], &[vec!["xx".into(), "1".into()]]);
        assert_eq!(t, "T\nA   Long header\nxx            1\n");
    }
}
