//! Readers and writers for the interchange files.
//!
//! JSON Lines for blocks, instances, chunks and predictions; CSV for
//! annotations and grading datasets; a JSON array for topics.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    default_block_order, parse_heading_level, Annotation, Block, BlockType, BoundingBox, ChunkLabel, Dataset,
    GradingEntry, LayoutInstance, TopicSpec,
};
use crate::chunking::Chunk;
use crate::error::{Error, Result};
use crate::grading::{normalize_grade, GradeError, RawGrade};

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

/// Parses JSON Lines, skipping blank lines. Errors carry the 1-based line.
pub fn parse_jsonl<T: DeserializeOwned, R: Read>(reader: R, source: &Path) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
        out.push((i + 1, value));
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    Ok(parse_jsonl(open(path)?, path)?.into_iter().map(|(_, v)| v).collect())
}

pub fn write_jsonl<T: Serialize, W: Write>(mut w: W, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[derive(Deserialize)]
struct BlockRecord {
    id: String,
    page: u32,
    bbox: BoundingBox,
    text: String,
    #[serde(default)]
    order: Option<usize>,
    #[serde(default)]
    block_type: Option<BlockType>,
    #[serde(default)]
    heading_level: Option<u32>,
}

/// Reads `blocks.jsonl`.
///
/// Blocks come back sorted by `order` with `order` renumbered gapless. If any
/// record lacks `order`, the whole document falls back to
/// [`default_block_order`].
pub fn read_blocks(path: &Path) -> Result<Vec<Block>> {
    parse_blocks(open(path)?, path)
}

pub fn parse_blocks<R: Read>(reader: R, source: &Path) -> Result<Vec<Block>> {
    let records: Vec<(usize, BlockRecord)> = parse_jsonl(reader, source)?;
    let mut seen = HashSet::new();
    for (line, r) in &records {
        if r.page == 0 {
            return Err(Error::parse(
                source,
                *line,
                format!("block '{}': page must be >= 1", r.id),
            ));
        }
        if r.heading_level == Some(0) {
            return Err(Error::parse(
                source,
                *line,
                format!("block '{}': heading_level must be >= 1", r.id),
            ));
        }
        if !seen.insert(r.id.clone()) {
            return Err(Error::Integrity(format!("duplicate block id '{}' (line {line})", r.id)));
        }
    }
    let all_ordered = records.iter().all(|(_, r)| r.order.is_some());
    let mut blocks: Vec<Block> = records
        .into_iter()
        .map(|(_, r)| Block {
            id: r.id,
            page: r.page,
            bbox: r.bbox,
            text: r.text,
            order: r.order.unwrap_or(0),
            block_type: r.block_type,
            heading_level: r.heading_level,
        })
        .collect();
    if !all_ordered {
        return Ok(default_block_order(blocks));
    }
    blocks.sort_by_key(|b| b.order);
    if let Some(w) = blocks.windows(2).find(|w| w[0].order == w[1].order) {
        return Err(Error::Integrity(format!(
            "blocks '{}' and '{}' share order {}",
            w[0].id, w[1].id, w[0].order
        )));
    }
    for (i, b) in blocks.iter_mut().enumerate() {
        b.order = i;
    }
    Ok(blocks)
}

pub fn write_blocks<W: Write>(w: W, blocks: &[Block]) -> std::io::Result<()> {
    write_jsonl(w, blocks)
}

pub fn read_instances(path: &Path) -> Result<Vec<LayoutInstance>> {
    parse_instances(open(path)?, path)
}

pub fn parse_instances<R: Read>(reader: R, source: &Path) -> Result<Vec<LayoutInstance>> {
    let records: Vec<(usize, LayoutInstance)> = parse_jsonl(reader, source)?;
    for (line, inst) in &records {
        if inst.page == 0 {
            return Err(Error::parse(source, *line, "page must be >= 1"));
        }
        if !(0.0..=1.0).contains(&inst.confidence) {
            return Err(Error::parse(
                source,
                *line,
                format!("confidence {} outside [0, 1]", inst.confidence),
            ));
        }
    }
    Ok(records.into_iter().map(|(_, i)| i).collect())
}

pub fn write_instances<W: Write>(w: W, instances: &[LayoutInstance]) -> std::io::Result<()> {
    write_jsonl(w, instances)
}

#[derive(Deserialize, Serialize)]
struct AnnotationRow {
    block_id: String,
    #[serde(rename = "type")]
    block_type: String,
    topic: String,
    chunk: String,
    heading_level: String,
}

/// Reads `annotations.csv`, checking that every row names a known block.
pub fn read_annotations(path: &Path, blocks: &[Block]) -> Result<Vec<Annotation>> {
    parse_annotations(open(path)?, path, blocks)
}

pub fn parse_annotations<R: Read>(reader: R, source: &Path, blocks: &[Block]) -> Result<Vec<Annotation>> {
    let known: HashSet<&str> = blocks.iter().map(|b| b.id.as_str()).collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, row) in csv_rows::<AnnotationRow, R>(reader, source)? {
        let field = |name: &str, e: Error| Error::parse(source, line, format!("field `{name}`: {e}"));
        let block_type: BlockType = row.block_type.parse().map_err(|e| field("type", e))?;
        let topic: i64 = row
            .topic
            .trim()
            .parse()
            .map_err(|_| Error::parse(source, line, format!("field `topic`: not an integer: '{}'", row.topic)))?;
        if topic < -1 {
            return Err(Error::parse(source, line, format!("field `topic`: {topic} < -1")));
        }
        let chunk: ChunkLabel = row.chunk.parse().map_err(|e| field("chunk", e))?;
        let heading_level = parse_heading_level(&row.heading_level).map_err(|e| field("heading_level", e))?;
        if !known.contains(row.block_id.as_str()) {
            return Err(Error::Integrity(format!(
                "annotation on line {line} references unknown block '{}'",
                row.block_id
            )));
        }
        if !seen.insert(row.block_id.clone()) {
            return Err(Error::Integrity(format!("block '{}' annotated twice", row.block_id)));
        }
        out.push(Annotation {
            block_id: row.block_id,
            block_type,
            topic,
            chunk,
            heading_level,
        });
    }
    Ok(out)
}

pub fn write_annotations<W: Write>(w: W, annotations: &[Annotation]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for a in annotations {
        wtr.serialize(AnnotationRow {
            block_id: a.block_id.clone(),
            block_type: a.block_type.to_string(),
            topic: a.topic.to_string(),
            chunk: a.chunk.to_string(),
            heading_level: a.heading_level.map_or_else(|| "none".to_string(), |l| l.to_string()),
        })
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    wtr.flush().map_err(|e| Error::InvalidInput(e.to_string()))
}

fn csv_error(source: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::parse(source, line, e.to_string())
}

/// Deserializes every CSV record, pairing it with the line it starts on.
fn csv_rows<T: DeserializeOwned, R: Read>(reader: R, source: &Path) -> Result<Vec<(usize, T)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_error(source, e))?.clone();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(source, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let row = rec
            .deserialize(Some(&headers))
            .map_err(|e| Error::parse(source, line, e.to_string()))?;
        out.push((line, row));
    }
    Ok(out)
}

/// Reads `topics.json`; indices must be unique and contiguous from 0.
pub fn read_topics(path: &Path) -> Result<Vec<TopicSpec>> {
    let mut topics: Vec<TopicSpec> = serde_json::from_reader(BufReader::new(open(path)?))
        .map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
    validate_topics(&mut topics)?;
    Ok(topics)
}

/// Sorts by index and checks the topic invariants.
pub fn validate_topics(topics: &mut [TopicSpec]) -> Result<()> {
    topics.sort_by_key(|t| t.index);
    for (i, t) in topics.iter().enumerate() {
        if t.index != i {
            return Err(Error::Integrity(format!(
                "topic indices must be unique and contiguous from 0; found {} at position {i}",
                t.index
            )));
        }
        if t.objectives.is_empty() {
            return Err(Error::InvalidInput(format!(
                "topic {} has no learning objectives",
                t.index
            )));
        }
        if t.objectives.iter().any(|o| o.trim().is_empty()) {
            return Err(Error::InvalidInput(format!(
                "topic {} has an empty learning objective",
                t.index
            )));
        }
    }
    Ok(())
}

pub fn write_topics<W: Write>(w: W, topics: &[TopicSpec]) -> Result<()> {
    serde_json::to_writer_pretty(w, topics).map_err(|e| Error::InvalidInput(e.to_string()))
}

#[derive(Deserialize, Serialize)]
struct GradingRow {
    dataset: String,
    question: String,
    reference_answer: String,
    provided_answer: String,
    grade_raw: String,
    grade_scale_max: String,
}

/// Reads `grading.csv`, normalizing every grade onto [0, 1].
///
/// Rows on a scale the benchmark excludes (later-version SAF, 0-3.5) are
/// dropped and logged; any other normalization failure is an error.
pub fn read_grading_dataset(path: &Path) -> Result<Vec<GradingEntry>> {
    parse_grading_dataset(open(path)?, path)
}

pub fn parse_grading_dataset<R: Read>(reader: R, source: &Path) -> Result<Vec<GradingEntry>> {
    let mut out = Vec::new();
    let mut excluded = 0usize;
    for (line, row) in csv_rows::<GradingRow, R>(reader, source)? {
        let dataset: Dataset = row
            .dataset
            .parse()
            .map_err(|e: Error| Error::parse(source, line, format!("field `dataset`: {e}")))?;
        let scale_max = match row.grade_scale_max.trim() {
            "" => None,
            s => Some(
                s.parse::<f64>()
                    .map_err(|_| Error::parse(source, line, format!("field `grade_scale_max`: not a number: '{s}'")))?,
            ),
        };
        let raw = RawGrade::from_cell(&row.grade_raw);
        let grade = match normalize_grade(dataset, &raw, scale_max) {
            Ok(g) => g,
            Err(GradeError::ExcludedScale(_)) => {
                excluded += 1;
                continue;
            }
            Err(GradeError::OutOfRange(msg)) => {
                return Err(Error::Range(format!("{}:{line}: {msg}", source.display())))
            }
            Err(e) => return Err(Error::parse(source, line, format!("field `grade_raw`: {e}"))),
        };
        let question = Some(row.question).filter(|q| !q.trim().is_empty());
        if question.is_none() && dataset != Dataset::CuNlp {
            return Err(Error::parse(
                source,
                line,
                format!("field `question`: empty, but only CU-NLP entries may omit the question ({dataset})"),
            ));
        }
        if row.reference_answer.trim().is_empty() {
            return Err(Error::parse(source, line, "field `reference_answer`: empty"));
        }
        out.push(GradingEntry {
            dataset,
            question,
            reference_answer: row.reference_answer,
            provided_answer: row.provided_answer,
            grade,
        });
    }
    if excluded > 0 {
        log::warn!(
            "{}: skipped {excluded} entries on an excluded grade scale",
            source.display()
        );
    }
    Ok(out)
}

/// Writes pre-normalized entries (`grade_scale_max` = 1).
pub fn write_grading_dataset<W: Write>(w: W, entries: &[GradingEntry]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for e in entries {
        wtr.serialize(GradingRow {
            dataset: e.dataset.to_string(),
            question: e.question.clone().unwrap_or_default(),
            reference_answer: e.reference_answer.clone(),
            provided_answer: e.provided_answer.clone(),
            grade_raw: format!("{}", e.grade),
            grade_scale_max: "1".into(),
        })
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    wtr.flush().map_err(|e| Error::InvalidInput(e.to_string()))
}

pub fn read_chunks(path: &Path) -> Result<Vec<Chunk>> {
    read_jsonl(path)
}

pub fn write_chunks<W: Write>(w: W, chunks: &[Chunk]) -> std::io::Result<()> {
    write_jsonl(w, chunks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn src() -> PathBuf {
        PathBuf::from("test.jsonl")
    }

    const THREE: &str = r#"{"id":"b0","page":1,"bbox":[0,0,10,10],"text":"a","order":0}
{"id":"b2","page":1,"bbox":[0,40,10,50],"text":"c","order":2}
{"id":"b1","page":1,"bbox":[0,20,10,30],"text":"b","order":1}
"#;

    #[test]
    fn reads_blocks_in_order() {
        let blocks = parse_blocks(THREE.as_bytes(), &src()).unwrap();
        assert_eq!(blocks.iter().map(|b| b.order).collect::<Vec<_>>(), [0, 1, 2]);
        assert_eq!(
            blocks.iter().map(|b| b.id.as_str()).collect::<Vec<_>>(),
            ["b0", "b1", "b2"]
        );
    }

    #[test]
    fn missing_bbox_names_line_and_field() {
        let input =
            "{\"id\":\"b0\",\"page\":1,\"bbox\":[0,0,1,1],\"text\":\"\"}\n{\"id\":\"b1\",\"page\":1,\"text\":\"x\"}\n";
        let err = parse_blocks(input.as_bytes(), &src()).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("bbox"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_block_id_is_integrity_error() {
        let input = r#"{"id":"b1","page":1,"bbox":[0,0,1,1],"text":"x"}
{"id":"b1","page":1,"bbox":[0,2,1,3],"text":"y"}"#;
        assert!(matches!(
            parse_blocks(input.as_bytes(), &src()),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn missing_order_triggers_default_order() {
        let input = r#"{"id":"low","page":1,"bbox":[0,100,1,110],"text":"x"}
{"id":"high","page":1,"bbox":[0,50,1,60],"text":"y"}"#;
        let blocks = parse_blocks(input.as_bytes(), &src()).unwrap();
        assert_eq!(blocks[0].id, "high");
        assert_eq!(blocks[1].order, 1);
    }

    #[test]
    fn instances_validate_label_and_confidence() {
        let ok = r#"{"page":1,"bbox":[0,0,1,1],"label":"list","confidence":0.9}
{"page":1,"bbox":[0,0,1,1],"label":"heading","confidence":1.0}
{"page":2,"bbox":[0,0,1,1],"label":"text","confidence":0.0}"#;
        assert_eq!(parse_instances(ok.as_bytes(), &src()).unwrap().len(), 3);

        let bad_label = r#"{"page":1,"bbox":[0,0,1,1],"label":"formula","confidence":0.9}"#;
        assert!(matches!(
            parse_instances(bad_label.as_bytes(), &src()),
            Err(Error::Parse { .. })
        ));

        let bad_conf = r#"{"page":1,"bbox":[0,0,1,1],"label":"text","confidence":1.2}"#;
        assert!(matches!(
            parse_instances(bad_conf.as_bytes(), &src()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn annotation_row_maps_fields() {
        let blocks = parse_blocks(THREE.as_bytes(), &src()).unwrap();
        let csv = "block_id,type,topic,chunk,heading_level\nb1,heading,0,1.1,1\nb2,text,-1,1.2,none\n";
        let anns = parse_annotations(csv.as_bytes(), &src(), &blocks).unwrap();
        assert_eq!(anns[0].block_type, BlockType::Heading);
        assert_eq!(anns[0].chunk, ChunkLabel { major: 1, minor: 1 });
        assert_eq!(anns[0].heading_level, Some(1));
        assert_eq!(anns[1].topic, -1);
        assert_eq!(anns[1].heading_level, None);
    }

    #[test]
    fn dangling_annotation_is_integrity_error() {
        let blocks = parse_blocks(THREE.as_bytes(), &src()).unwrap();
        let csv = "block_id,type,topic,chunk,heading_level\nzz,text,0,1.1,none\n";
        assert!(matches!(
            parse_annotations(csv.as_bytes(), &src(), &blocks),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn grading_rows_normalize_on_read() {
        let csv = "dataset,question,reference_answer,provided_answer,grade_raw,grade_scale_max\n\
Mohler,What is a stack?,LIFO structure,a pile,4,5\n\
CU-NLP,,tokenization splits text,it splits,0.5,1\n\
Beetle,Why?,Because,dunno,partially correct,\n\
SAF,Q,R,P,3,3.5\n";
        let entries = parse_grading_dataset(csv.as_bytes(), &src()).unwrap();
        assert_eq!(entries.len(), 3, "later-version SAF row is excluded");
        assert!((entries[0].grade - 0.8).abs() < 1e-12);
        assert_eq!(entries[1].question, None);
        assert!((entries[2].grade - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn grade_outside_declared_range_is_range_error() {
        let csv = "dataset,question,reference_answer,provided_answer,grade_raw,grade_scale_max\nMohler,Q,R,P,7,5\n";
        assert!(matches!(
            parse_grading_dataset(csv.as_bytes(), &src()),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn only_cu_nlp_may_omit_question() {
        let csv = "dataset,question,reference_answer,provided_answer,grade_raw,grade_scale_max\nMohler,,R,P,3,5\n";
        assert!(parse_grading_dataset(csv.as_bytes(), &src()).is_err());
    }

    #[test]
    fn topics_must_be_contiguous_with_objectives() {
        let mut ok = vec![
            TopicSpec {
                index: 1,
                title: "b".into(),
                objectives: vec!["y".into()],
            },
            TopicSpec {
                index: 0,
                title: "a".into(),
                objectives: vec!["x".into()],
            },
        ];
        validate_topics(&mut ok).unwrap();
        assert_eq!(ok[0].index, 0);

        let mut gap = vec![TopicSpec {
            index: 1,
            title: "b".into(),
            objectives: vec!["y".into()],
        }];
        assert!(validate_topics(&mut gap).is_err());

        let mut empty = vec![TopicSpec {
            index: 0,
            title: "a".into(),
            objectives: vec![],
        }];
        assert!(validate_topics(&mut empty).is_err());
    }
}
