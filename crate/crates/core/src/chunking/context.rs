use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use super::{Body, Chunk, Tokenizer};
use crate::docmodel::{Annotation, Block, ChunkLabel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContextLoss {
    /// Annotated minimal units whose blocks ended up in more than one chunk,
    /// or partly dropped.
    pub lost_count: usize,
    pub units: usize,
    pub chunks: usize,
    pub avg_tokens_per_chunk: f64,
}

/// Counts minimal semantic units (blocks sharing one exact `major.minor`
/// label, headers and footers excluded) that a chunking tore apart.
///
/// A unit is lost when its blocks land in two or more chunks, or when some
/// of its blocks are in a chunk and others in none.
pub fn context_loss(chunks: &[Chunk], annotations: &[Annotation]) -> Result<ContextLoss> {
    let annotated: HashMap<&str, &Annotation> = annotations.iter().map(|a| (a.block_id.as_str(), a)).collect();
    let mut home: HashMap<&str, BTreeSet<usize>> = HashMap::new();
    for (ci, c) in chunks.iter().enumerate() {
        for id in &c.block_ids {
            if !annotated.contains_key(id.as_str()) {
                return Err(Error::Integrity(format!(
                    "chunk '{}' contains block '{id}' which has no annotation",
                    c.id
                )));
            }
            home.entry(id.as_str()).or_default().insert(ci);
        }
    }

    let mut units: BTreeMap<ChunkLabel, Vec<&str>> = BTreeMap::new();
    for a in annotations.iter().filter(|a| !a.block_type.is_page_furniture()) {
        units.entry(a.chunk).or_default().push(a.block_id.as_str());
    }

    let lost_count = units
        .values()
        .filter(|members| {
            let mut holders = BTreeSet::new();
            let mut absent = 0;
            for id in members.iter() {
                match home.get(id) {
                    Some(cs) => holders.extend(cs.iter().copied()),
                    None => absent += 1,
                }
            }
            holders.len() >= 2 || (absent > 0 && !holders.is_empty())
        })
        .count();

    let avg_tokens_per_chunk = if chunks.is_empty() {
        0.0
    } else {
        chunks.iter().map(|c| c.token_count as f64).sum::<f64>() / chunks.len() as f64
    };
    Ok(ContextLoss {
        lost_count,
        units: units.len(),
        chunks: chunks.len(),
        avg_tokens_per_chunk,
    })
}

/// The reference chunking: one chunk per annotated `major` group, in
/// document order, headers and footers excluded.
pub fn chunk_by_annotation(
    blocks: &[Block],
    annotations: &[Annotation],
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<Chunk>> {
    let major: HashMap<&str, u32> = annotations
        .iter()
        .filter(|a| !a.block_type.is_page_furniture())
        .map(|a| (a.block_id.as_str(), a.chunk.major))
        .collect();
    // Annotated furniture is dropped even when the block itself is untyped.
    let furniture: BTreeSet<&str> = annotations
        .iter()
        .filter(|a| a.block_type.is_page_furniture())
        .map(|a| a.block_id.as_str())
        .collect();
    let kept: Vec<Block> = blocks
        .iter()
        .filter(|b| !furniture.contains(b.id.as_str()))
        .cloned()
        .collect();
    let body = Body::new(&kept, tokenizer);

    let mut order: Vec<u32> = Vec::new();
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, b) in body.blocks.iter().enumerate() {
        let m = *major
            .get(b.id.as_str())
            .ok_or_else(|| Error::Integrity(format!("block '{}' has no annotation", b.id)))?;
        if !groups.contains_key(&m) {
            order.push(m);
        }
        groups.entry(m).or_default().push(i);
    }
    Ok(body.assemble(order.iter().map(|m| groups[m].as_slice()), tokenizer))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::super::{ChunkConfig, Chunker, WhitespaceTokenizer};
    use super::*;
    use crate::docmodel::BlockType::{self, *};

    fn ann(id: &str, t: BlockType, label: &str) -> Annotation {
        Annotation {
            block_id: id.into(),
            block_type: t,
            topic: 0,
            chunk: label.parse().unwrap(),
            heading_level: None,
        }
    }

    fn chunk(ids: &[&str], tokens: usize) -> Chunk {
        Chunk {
            id: ids.join("+"),
            block_ids: ids.iter().map(|s| s.to_string()).collect(),
            text: String::new(),
            token_count: tokens,
            heading_path: vec![],
            page_span: (1, 1),
            topic: None,
        }
    }

    #[test]
    fn exact_units_lose_nothing() {
        let anns = [ann("a", Text, "1.1"), ann("b", Text, "1.1"), ann("c", Text, "1.2")];
        let r = context_loss(&[chunk(&["a", "b"], 10), chunk(&["c"], 20)], &anns).unwrap();
        assert_eq!(r.lost_count, 0);
        assert_eq!(r.avg_tokens_per_chunk, 15.0);
    }

    #[test]
    fn split_unit_is_lost() {
        let anns = [ann("a", Text, "1.1"), ann("b", Text, "1.1"), ann("c", Text, "1.2")];
        let r = context_loss(&[chunk(&["a"], 1), chunk(&["b", "c"], 1)], &anns).unwrap();
        assert_eq!(r.lost_count, 1);
    }

    #[test]
    fn partly_dropped_unit_is_lost_fully_dropped_is_not() {
        let anns = [ann("a", Text, "1.1"), ann("b", Text, "1.1"), ann("c", Text, "2.1")];
        let r = context_loss(&[chunk(&["a"], 1)], &anns).unwrap();
        assert_eq!(r.lost_count, 1);
    }

    #[test]
    fn furniture_is_ignored() {
        let anns = [ann("a", Text, "1.1"), ann("f", Footer, "1.1"), ann("b", Text, "1.1")];
        let r = context_loss(&[chunk(&["a", "b"], 1)], &anns).unwrap();
        assert_eq!(r.lost_count, 0);
    }

    #[test]
    fn unannotated_block_is_integrity_error() {
        let anns = [ann("a", Text, "1.1")];
        assert!(matches!(
            context_loss(&[chunk(&["a", "zz"], 1)], &anns),
            Err(Error::Integrity(_))
        ));
    }

    /// Three units, the second running from page 1 onto page 2.
    #[test]
    fn page_spanning_unit_per_page_vs_dla() {
        let blocks = ordered(vec![
            blk("h", 1, Heading, Some(1), 3),
            blk("p1", 1, Text, None, 40),
            blk("l1", 1, List, None, 15),
            blk("f1", 1, Footer, None, 2),
            blk("l2", 2, List, None, 15),
            blk("p3", 2, Text, None, 40),
        ]);
        let anns = [
            ann("h", Heading, "1.1"),
            ann("p1", Text, "1.1"),
            ann("l1", List, "1.2"),
            ann("f1", Footer, "0.0"),
            ann("l2", List, "1.2"),
            ann("p3", Text, "1.3"),
        ];
        // brute force: unit -> set of chunk indices holding its members
        let lost = |chunks: &[Chunk]| {
            let mut lost = 0;
            for label in ["1.1", "1.2", "1.3"] {
                let members: Vec<&str> = anns
                    .iter()
                    .filter(|a| a.chunk.to_string() == label)
                    .map(|a| a.block_id.as_str())
                    .collect();
                let mut holders: Vec<usize> = Vec::new();
                for (ci, c) in chunks.iter().enumerate() {
                    if c.block_ids.iter().any(|id| members.contains(&id.as_str())) {
                        holders.push(ci);
                    }
                }
                if holders.len() > 1 {
                    lost += 1;
                }
            }
            lost
        };
        let chunker = Chunker::new(ChunkConfig::default()).unwrap();
        let per_page = chunker.per_pages(&blocks, 1).unwrap();
        let dla = chunker.dla(&blocks);
        assert_eq!(lost(&per_page), 1);
        assert_eq!(lost(&dla), 0);
        assert_eq!(context_loss(&per_page, &anns).unwrap().lost_count, 1);
        assert_eq!(context_loss(&dla, &anns).unwrap().lost_count, 0);
    }

    #[test]
    fn annotation_chunks_group_by_major() {
        let blocks = ordered(vec![
            blk("a", 1, Text, None, 5),
            blk("f", 1, Footer, None, 2),
            blk("b", 2, Text, None, 5),
            blk("c", 2, Text, None, 5),
        ]);
        let anns = [
            ann("a", Text, "1.1"),
            ann("f", Footer, "0.0"),
            ann("b", Text, "1.2"),
            ann("c", Text, "2.1"),
        ];
        let chunks = chunk_by_annotation(&blocks, &anns, &WhitespaceTokenizer).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].block_ids, ["a", "b"]);
        assert_eq!(context_loss(&chunks, &anns).unwrap().lost_count, 0);
    }
}
