//! Block typing from detector instances and heading-level inference.

mod headings;

pub use headings::{infer_heading_levels, HeadingConfig, HeadingLevel, HeadingLevelMap};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::classification::ClassificationReport;
use crate::docmodel::{heading_label, Annotation, Block, BlockType, BoundingBox, LayoutInstance};
use crate::error::{Error, Result};

/// Label given to blocks that overlap no instance on their page.
pub const FALLBACK_TYPE: BlockType = BlockType::Text;

/// Intersection over union of two boxes; 0 when disjoint or degenerate.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// A block after association. `block.block_type` is always set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypedBlock {
    pub block: Block,
    pub associated: bool,
    pub association_iou: f64,
}

/// Gives each block the label of the same-page instance it overlaps best.
///
/// Ties on IoU go to the higher confidence, then to the earlier instance.
/// Blocks with no overlap get [`FALLBACK_TYPE`].
pub fn associate_blocks(blocks: &[Block], instances: &[LayoutInstance]) -> Vec<TypedBlock> {
    let mut by_page: HashMap<u32, Vec<&LayoutInstance>> = HashMap::new();
    for inst in instances {
        by_page.entry(inst.page).or_default().push(inst);
    }

    blocks
        .iter()
        .map(|block| {
            let mut best: Option<(f64, &LayoutInstance)> = None;
            for inst in by_page.get(&block.page).into_iter().flatten() {
                let score = iou(&block.bbox, &inst.bbox);
                if score <= 0.0 {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((s, b)) => score > s || (score == s && inst.confidence > b.confidence),
                };
                if better {
                    best = Some((score, inst));
                }
            }
            let mut block = block.clone();
            match best {
                Some((score, inst)) => {
                    block.block_type = Some(inst.label);
                    TypedBlock {
                        block,
                        associated: true,
                        association_iou: score,
                    }
                }
                None => {
                    block.block_type = Some(FALLBACK_TYPE);
                    TypedBlock {
                        block,
                        associated: false,
                        association_iou: 0.0,
                    }
                }
            }
        })
        .collect()
}

fn paired<'a, F>(predicted: &'a [Block], annotations: &'a [Annotation], mut label: F) -> Result<Vec<(String, String)>>
where
    F: FnMut(&'a Block, &'a Annotation) -> (String, String),
{
    if predicted.is_empty() || annotations.is_empty() {
        return Err(Error::InvalidInput(
            "layout report needs predicted blocks and annotations".into(),
        ));
    }
    let by_id: HashMap<&str, &Annotation> = annotations.iter().map(|a| (a.block_id.as_str(), a)).collect();
    if by_id.len() != predicted.len() {
        return Err(Error::Integrity(format!(
            "{} predicted blocks but {} annotations",
            predicted.len(),
            by_id.len()
        )));
    }
    predicted
        .iter()
        .map(|b| {
            by_id
                .get(b.id.as_str())
                .map(|a| label(b, a))
                .ok_or_else(|| Error::Integrity(format!("block '{}' has no annotation", b.id)))
        })
        .collect()
}

/// Block-type classification report against annotations.
pub fn layout_classification_report(predicted: &[Block], annotations: &[Annotation]) -> Result<ClassificationReport> {
    let pairs = paired(predicted, annotations, |b, a| {
        let p = b.block_type.map_or("untyped", |t| t.as_str());
        (a.block_type.to_string(), p.to_string())
    })?;
    let order: Vec<&str> = BlockType::ALL.iter().map(|t| t.as_str()).collect();
    let present: Vec<&str> = order
        .into_iter()
        .filter(|l| pairs.iter().any(|(t, p)| t == l || p == l))
        .collect();
    ClassificationReport::from_pairs(&pairs, &present)
}

/// Heading-level report (`none`, `H1`, `H2`, ...) against annotations.
pub fn heading_level_report(predicted: &[Block], annotations: &[Annotation]) -> Result<ClassificationReport> {
    let pairs = paired(predicted, annotations, |b, a| {
        (heading_label(a.heading_level), heading_label(b.heading_level))
    })?;
    let max_level = pairs
        .iter()
        .flat_map(|(t, p)| [t, p])
        .filter_map(|l| l.strip_prefix('H').and_then(|n| n.parse::<u32>().ok()))
        .max()
        .unwrap_or(0);
    let labels: Vec<String> = std::iter::once("none".to_string())
        .chain((1..=max_level).map(|l| format!("H{l}")))
        .collect();
    let order: Vec<&str> = labels.iter().map(String::as_str).collect();
    ClassificationReport::from_pairs(&pairs, &order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::docmodel::ChunkLabel;

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn block(id: &str, page: u32, bbox: BoundingBox) -> Block {
        Block {
            id: id.into(),
            page,
            bbox,
            text: String::new(),
            order: 0,
            block_type: None,
            heading_level: None,
        }
    }

    fn inst(page: u32, bbox: BoundingBox, label: BlockType, confidence: f64) -> LayoutInstance {
        LayoutInstance {
            page,
            bbox,
            label,
            confidence,
        }
    }

    #[test]
    fn iou_examples() {
        let a = bb(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bb(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert_eq!(iou(&a, &bb(1.0, 0.0, 3.0, 2.0)), 1.0 / 3.0);
        // touching edges and zero-area boxes
        assert_eq!(iou(&a, &bb(2.0, 0.0, 4.0, 2.0)), 0.0);
        let z = bb(1.0, 1.0, 1.0, 1.0);
        assert_eq!(iou(&z, &z), 0.0);
    }

    #[test]
    fn block_inside_single_instance() {
        let blocks = [block("b", 1, bb(10.0, 10.0, 90.0, 20.0))];
        let typed = associate_blocks(&blocks, &[inst(1, bb(5.0, 5.0, 95.0, 60.0), BlockType::List, 0.8)]);
        assert_eq!(typed[0].block.block_type, Some(BlockType::List));
        assert!(typed[0].associated);
        assert!(typed[0].association_iou > 0.0);
    }

    #[test]
    fn highest_iou_wins() {
        // block (0,0,10,10); heading instance IoU 0.6, text instance IoU 0.2
        let blocks = [block("b", 1, bb(0.0, 0.0, 10.0, 10.0))];
        let heading = inst(1, bb(0.0, 0.0, 10.0, 6.0), BlockType::Heading, 0.5);
        let text = inst(1, bb(0.0, 0.0, 10.0, 2.0), BlockType::Text, 0.99);
        assert!((iou(&blocks[0].bbox, &heading.bbox) - 0.6).abs() < 1e-12);
        assert!((iou(&blocks[0].bbox, &text.bbox) - 0.2).abs() < 1e-12);
        let typed = associate_blocks(&blocks, &[text, heading]);
        assert_eq!(typed[0].block.block_type, Some(BlockType::Heading));
        assert!((typed[0].association_iou - 0.6).abs() < 1e-12);
    }

    #[test]
    fn no_overlap_falls_back_to_text() {
        let blocks = [block("b", 1, bb(0.0, 0.0, 10.0, 10.0))];
        let other_page = inst(2, bb(0.0, 0.0, 10.0, 10.0), BlockType::Table, 0.9);
        let far = inst(1, bb(50.0, 50.0, 60.0, 60.0), BlockType::Table, 0.9);
        let typed = associate_blocks(&blocks, &[other_page, far]);
        assert_eq!(typed[0].block.block_type, Some(BlockType::Text));
        assert!(!typed[0].associated);
        assert_eq!(typed[0].association_iou, 0.0);
    }

    #[test]
    fn ties_prefer_confidence_then_input_order() {
        let blocks = [block("b", 1, bb(0.0, 0.0, 10.0, 10.0))];
        let same = bb(0.0, 0.0, 10.0, 10.0);
        let typed = associate_blocks(
            &blocks,
            &[inst(1, same, BlockType::Text, 0.4), inst(1, same, BlockType::List, 0.9)],
        );
        assert_eq!(typed[0].block.block_type, Some(BlockType::List));

        let typed = associate_blocks(
            &blocks,
            &[
                inst(1, same, BlockType::Table, 0.7),
                inst(1, same, BlockType::List, 0.7),
            ],
        );
        assert_eq!(typed[0].block.block_type, Some(BlockType::Table));
    }

    fn ann(id: &str, t: BlockType, level: Option<u32>) -> Annotation {
        Annotation {
            block_id: id.into(),
            block_type: t,
            topic: 0,
            chunk: ChunkLabel { major: 0, minor: 0 },
            heading_level: level,
        }
    }

    #[test]
    fn reports_against_annotations() {
        let mut b1 = block("b1", 1, bb(0.0, 0.0, 1.0, 1.0));
        b1.block_type = Some(BlockType::Heading);
        b1.heading_level = Some(1);
        let mut b2 = block("b2", 1, bb(0.0, 2.0, 1.0, 3.0));
        b2.block_type = Some(BlockType::Text);
        let anns = [ann("b1", BlockType::Heading, Some(1)), ann("b2", BlockType::List, None)];

        let r = layout_classification_report(&[b1.clone(), b2.clone()], &anns).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.class("list").unwrap().recall, 0.0);
        assert_eq!(r.class("text").unwrap().precision, 0.0);

        let h = heading_level_report(&[b1, b2], &anns).unwrap();
        assert_eq!(h.accuracy, 1.0);
        assert_eq!(
            h.classes.iter().map(|c| c.label.as_str()).collect::<Vec<_>>(),
            ["none", "H1"]
        );
    }

    #[test]
    fn report_rejects_missing_annotation() {
        let mut b = block("b1", 1, bb(0.0, 0.0, 1.0, 1.0));
        b.block_type = Some(BlockType::Text);
        assert!(layout_classification_report(&[b.clone()], &[ann("zz", BlockType::Text, None)]).is_err());
        assert!(layout_classification_report(&[], &[]).is_err());
    }
}
