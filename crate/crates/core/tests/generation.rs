use std::path::{Path, PathBuf};

use studykit::chunking::{Chunk, ChunkConfig, Chunker};
use studykit::docmodel::{read_blocks, read_instances, read_topics, TopicSpec};
use studykit::layout::{associate_blocks, infer_heading_levels, HeadingConfig};
use studykit::qagen::{GenerationConfig, MockGenerationProvider, QuestionGenerator, ScriptedProvider};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn topical_chunks() -> (Vec<Chunk>, Vec<TopicSpec>) {
    let blocks = read_blocks(&fixture("blocks.jsonl")).unwrap();
    let instances = read_instances(&fixture("instances.jsonl")).unwrap();
    let typed: Vec<_> = associate_blocks(&blocks, &instances)
        .into_iter()
        .map(|t| t.block)
        .collect();
    let (_, headed) = infer_heading_levels(&typed, &HeadingConfig::default());
    let chunks = Chunker::new(ChunkConfig::default())
        .unwrap()
        .dla(&headed)
        .into_iter()
        .enumerate()
        .map(|(i, c)| Chunk {
            topic: Some(i as i64 % 3),
            ..c
        })
        .collect();
    (chunks, read_topics(&fixture("topics.json")).unwrap())
}

fn config() -> GenerationConfig {
    GenerationConfig {
        parallelism: 2,
        ..GenerationConfig::default()
    }
}

#[test]
fn interrupted_runs_resume_from_the_checkpoint() {
    let (chunks, topics) = topical_chunks();
    let dir = tempfile::tempdir().unwrap();
    let checkpoint = dir.path().join("q.checkpoint.jsonl");

    let mock = MockGenerationProvider::new(3);
    let full = QuestionGenerator::new(&mock, config())
        .unwrap()
        .generate_question_set(&chunks, &topics, Some(&checkpoint))
        .unwrap();
    let calls = mock.calls();
    assert!(calls > 1);
    assert_eq!(full.resumed, 0);

    let offline = ScriptedProvider::ok(Vec::<String>::new());
    let again = QuestionGenerator::new(&offline, config())
        .unwrap()
        .generate_question_set(&chunks, &topics, Some(&checkpoint))
        .unwrap();
    assert!(offline.prompts().is_empty());
    assert_eq!(again.resumed, calls);
    assert_eq!(again.questions, full.questions);

    let text = std::fs::read_to_string(&checkpoint).unwrap();
    let first = text.lines().next().unwrap();
    std::fs::write(&checkpoint, format!("{first}\n{{\"chunk_id\": \"torn")).unwrap();
    let mock = MockGenerationProvider::new(3);
    let resumed = QuestionGenerator::new(&mock, config())
        .unwrap()
        .generate_question_set(&chunks, &topics, Some(&checkpoint))
        .unwrap();
    assert_eq!(resumed.resumed, 1);
    assert_eq!(mock.calls(), calls - 1);
    assert_eq!(resumed.questions, full.questions);
}

#[test]
fn answers_quote_their_own_chunk() {
    let (chunks, topics) = topical_chunks();
    let mock = MockGenerationProvider::new(9);
    let generator = QuestionGenerator::new(&mock, config()).unwrap();
    let set = generator.generate_question_set(&chunks, &topics, None).unwrap();
    let answers = generator.generate_answers(&set.questions, &chunks).unwrap();
    assert_eq!(answers.len(), set.questions.len());
    for (q, a) in set.questions.iter().zip(&answers) {
        assert_eq!(a.question_id, q.id);
        let chunk = chunks.iter().find(|c| c.id == q.chunk_id).unwrap();
        let normalized: String = chunk.text.split_whitespace().collect::<Vec<_>>().join(" ");
        assert!(normalized.contains(&a.answer), "{}", a.answer);
    }
}
