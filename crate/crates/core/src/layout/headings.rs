use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::docmodel::{Block, BlockType};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadingConfig {
    /// Heights are rounded to the nearest multiple of this many points.
    pub rounding_step: f64,
    /// Height groups seen fewer times than this are folded into a
    /// neighbouring group instead of forming a level of their own.
    pub min_support: usize,
}

impl Default for HeadingConfig {
    fn default() -> Self {
        Self {
            rounding_step: 1.0,
            min_support: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadingLevel {
    pub rounded_height: f64,
    /// 1-based; 1 is the largest heading.
    pub level: u32,
    /// Heading blocks assigned to this level, including folded groups.
    pub support: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HeadingLevelMap {
    pub levels: Vec<HeadingLevel>,
}

impl HeadingLevelMap {
    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }
}

fn height_key(block: &Block, step: f64) -> i64 {
    (block.bbox.height() / step).round() as i64
}

/// Numbers heading sizes from the largest (H1) down.
///
/// Heading heights are rounded to `rounding_step` and grouped. Groups with
/// fewer than `min_support` members join the nearest surviving larger
/// group, or the nearest smaller one when nothing larger survives. If no
/// group reaches `min_support`, every group is kept. Non-heading blocks get
/// `heading_level = None`.
pub fn infer_heading_levels(blocks: &[Block], config: &HeadingConfig) -> (HeadingLevelMap, Vec<Block>) {
    let step = if config.rounding_step > 0.0 {
        config.rounding_step
    } else {
        1.0
    };
    let is_heading = |b: &Block| b.block_type == Some(BlockType::Heading);

    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for b in blocks.iter().filter(|b| is_heading(b)) {
        *counts.entry(height_key(b, step)).or_default() += 1;
    }

    let mut surviving: Vec<i64> = counts
        .iter()
        .filter(|(_, &c)| c >= config.min_support)
        .map(|(&k, _)| k)
        .collect();
    if surviving.is_empty() {
        surviving = counts.keys().copied().collect();
    }
    // largest first
    surviving.reverse();

    let target = |key: i64| -> i64 {
        if surviving.contains(&key) {
            return key;
        }
        surviving
            .iter()
            .rev()
            .copied()
            .find(|&s| s > key)
            .or_else(|| surviving.iter().copied().find(|&s| s < key))
            .unwrap_or(key)
    };

    let level_of: BTreeMap<i64, u32> = surviving.iter().enumerate().map(|(i, &k)| (k, i as u32 + 1)).collect();

    let mut support: BTreeMap<i64, usize> = BTreeMap::new();
    for (&k, &c) in &counts {
        *support.entry(target(k)).or_default() += c;
    }

    let map = HeadingLevelMap {
        levels: surviving
            .iter()
            .map(|&k| HeadingLevel {
                rounded_height: k as f64 * step,
                level: level_of[&k],
                support: support.get(&k).copied().unwrap_or(0),
            })
            .collect(),
    };

    let leveled = blocks
        .iter()
        .map(|b| {
            let mut b = b.clone();
            b.heading_level = if is_heading(&b) {
                Some(level_of[&target(height_key(&b, step))])
            } else {
                None
            };
            b
        })
        .collect();
    (map, leveled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::docmodel::BoundingBox;
    use proptest::prelude::*;

    fn headings(spec: &[(f64, usize)]) -> Vec<Block> {
        let mut out = Vec::new();
        let mut y = 0.0;
        for &(h, n) in spec {
            for _ in 0..n {
                out.push(Block {
                    id: format!("b{}", out.len()),
                    page: 1,
                    bbox: BoundingBox::new(0.0, y, 100.0, y + h).unwrap(),
                    text: String::new(),
                    order: out.len(),
                    block_type: Some(BlockType::Heading),
                    heading_level: None,
                });
                y += h + 1.0;
            }
        }
        out
    }

    fn levels_of(map: &HeadingLevelMap) -> Vec<(f64, u32, usize)> {
        map.levels
            .iter()
            .map(|l| (l.rounded_height, l.level, l.support))
            .collect()
    }

    #[test]
    fn three_sizes_three_levels() {
        let blocks = headings(&[(14.0, 20), (24.0, 5), (18.0, 12)]);
        let (map, out) = infer_heading_levels(&blocks, &HeadingConfig::default());
        assert_eq!(levels_of(&map), [(24.0, 1, 5), (18.0, 2, 12), (14.0, 3, 20)]);
        assert_eq!(out[0].heading_level, Some(3));
        assert_eq!(out[20].heading_level, Some(1));
        assert_eq!(out[25].heading_level, Some(2));
    }

    #[test]
    fn single_height_is_all_h1() {
        let (map, out) = infer_heading_levels(&headings(&[(20.0, 7)]), &HeadingConfig::default());
        assert_eq!(levels_of(&map), [(20.0, 1, 7)]);
        assert!(out.iter().all(|b| b.heading_level == Some(1)));
    }

    #[test]
    fn rare_height_folds_into_larger_group() {
        let blocks = headings(&[(24.0, 5), (23.0, 1)]);
        let (map, out) = infer_heading_levels(&blocks, &HeadingConfig::default());
        assert_eq!(levels_of(&map), [(24.0, 1, 6)]);
        assert_eq!(out[5].heading_level, Some(1));
    }

    #[test]
    fn rare_largest_height_folds_into_next_smaller() {
        let blocks = headings(&[(30.0, 1), (20.0, 4), (16.0, 3)]);
        let (map, out) = infer_heading_levels(&blocks, &HeadingConfig::default());
        assert_eq!(levels_of(&map), [(20.0, 1, 5), (16.0, 2, 3)]);
        assert_eq!(out[0].heading_level, Some(1));
    }

    #[test]
    fn heights_round_to_step() {
        let blocks = headings(&[(17.6, 3), (18.4, 3)]);
        let (map, _) = infer_heading_levels(&blocks, &HeadingConfig::default());
        assert_eq!(levels_of(&map), [(18.0, 1, 6)]);
    }

    #[test]
    fn no_headings_gives_empty_map() {
        let mut blocks = headings(&[(12.0, 3)]);
        for b in &mut blocks {
            b.block_type = Some(BlockType::Text);
            b.heading_level = Some(2);
        }
        let (map, out) = infer_heading_levels(&blocks, &HeadingConfig::default());
        assert!(map.is_empty());
        assert!(out.iter().all(|b| b.heading_level.is_none()));
    }

    proptest! {
        #[test]
        fn larger_heading_never_gets_deeper_level(
            heights in prop::collection::vec(4.0f64..40.0, 1..40),
            min_support in 1usize..5,
        ) {
            let spec: Vec<(f64, usize)> = heights.iter().map(|&h| (h, 1)).collect();
            let blocks = headings(&spec);
            let config = HeadingConfig { rounding_step: 1.0, min_support };
            let (map, out) = infer_heading_levels(&blocks, &config);
            for w in map.levels.windows(2) {
                prop_assert!(w[0].rounded_height > w[1].rounded_height);
                prop_assert_eq!(w[0].level + 1, w[1].level);
            }
            prop_assert_eq!(map.levels.iter().map(|l| l.support).sum::<usize>(), blocks.len());
            for a in &out {
                for b in &out {
                    if a.bbox.height().round() > b.bbox.height().round() {
                        prop_assert!(a.heading_level <= b.heading_level);
                    }
                }
            }
        }
    }
}
