//! Layout-aware chunking.
//!
//! Blocks are first grouped into indivisible units: a heading, a paragraph,
//! or a run of consecutive list (or table) blocks. Pictures and captions
//! ride along with the unit before them, so a picture inside a list does
//! not break the run, and runs continue across page breaks because headers
//! and footers are gone before grouping.
//!
//! The document is then cut at every top-level heading. Sections over
//! `max_tokens` are cut again at the next deeper heading level present,
//! and once no deeper level remains they are packed into fixed windows of
//! whole units. Finally, sections under `min_tokens` are merged into their
//! predecessor or dropped.

use std::ops::Range;

use super::{pack, Body, Chunk, Chunker, SmallChunkAction};
use crate::docmodel::{Block, BlockType};

#[derive(Debug, Clone)]
struct Unit {
    blocks: Range<usize>,
    tokens: usize,
    heading: Option<u32>,
    run: Option<BlockType>,
}

fn build_units(body: &Body<'_>) -> Vec<Unit> {
    let mut units: Vec<Unit> = Vec::new();
    for (i, b) in body.blocks.iter().enumerate() {
        let kind = b.block_type.unwrap_or(BlockType::Text);
        let extend = match kind {
            BlockType::List | BlockType::Table => units.last().is_some_and(|u| u.run == Some(kind)),
            BlockType::Picture | BlockType::Caption => !units.is_empty(),
            _ => false,
        };
        if extend {
            let u = units.last_mut().expect("checked non-empty");
            u.blocks.end = i + 1;
            u.tokens += body.tokens[i];
            continue;
        }
        units.push(Unit {
            blocks: i..i + 1,
            tokens: body.tokens[i],
            heading: match kind {
                BlockType::Heading => b.heading_level,
                _ => None,
            },
            run: matches!(kind, BlockType::List | BlockType::Table).then_some(kind),
        });
    }
    units
}

fn tokens(units: &[Unit], r: &Range<usize>) -> usize {
    units[r.clone()].iter().map(|u| u.tokens).sum()
}

impl Chunker {
    /// Layout-aware chunking of typed and leveled blocks.
    pub fn dla(&self, blocks: &[Block]) -> Vec<Chunk> {
        let body = Body::new(blocks, self.tokenizer());
        if body.blocks.is_empty() {
            return Vec::new();
        }
        let units = build_units(&body);

        let mut sections = Vec::new();
        self.split(&units, 0..units.len(), 0, true, &mut sections);
        let sections = self.absorb_small(&units, sections);

        let groups: Vec<Vec<usize>> = sections
            .into_iter()
            .map(|r| (units[r.start].blocks.start..units[r.end - 1].blocks.end).collect())
            .collect();
        body.assemble(groups.iter().map(|g| g.as_slice()), self.tokenizer())
    }

    /// Cuts `range` at the shallowest heading level deeper than `level`.
    /// The root call always cuts; nested calls only when over budget.
    fn split(&self, units: &[Unit], range: Range<usize>, level: u32, root: bool, out: &mut Vec<Range<usize>>) {
        let max = self.config.max_tokens;
        let size = tokens(units, &range);
        if !root && size <= max {
            out.push(range);
            return;
        }
        let next = units[range.clone()]
            .iter()
            .filter_map(|u| u.heading)
            .filter(|&l| l > level)
            .min();
        let Some(next) = next else {
            if size <= max {
                out.push(range);
            } else {
                self.window(units, range, out);
            }
            return;
        };

        let mut start = range.start;
        for i in range.clone() {
            if units[i].heading == Some(next) && i > start {
                self.split_piece(units, start..i, level, next, out);
                start = i;
            }
        }
        self.split_piece(units, start..range.end, level, next, out);
    }

    fn split_piece(&self, units: &[Unit], piece: Range<usize>, parent: u32, next: u32, out: &mut Vec<Range<usize>>) {
        let level = if units[piece.start].heading == Some(next) {
            next
        } else {
            parent
        };
        self.split(units, piece, level, false, out);
    }

    fn window(&self, units: &[Unit], range: Range<usize>, out: &mut Vec<Range<usize>>) {
        let sizes: Vec<usize> = units[range.clone()].iter().map(|u| u.tokens).collect();
        for r in pack(&sizes, self.config.fallback_window_tokens) {
            out.push(range.start + r.start..range.start + r.end);
        }
    }

    /// Applies the small-chunk rule. A merge never pushes a section over
    /// `max_tokens`: a small section that does not fit its predecessor is
    /// carried into its successor instead, and kept alone if that fails too.
    fn absorb_small(&self, units: &[Unit], sections: Vec<Range<usize>>) -> Vec<Range<usize>> {
        let (min, max) = (self.config.min_tokens, self.config.max_tokens);
        let mut out: Vec<Range<usize>> = Vec::new();
        let mut pending: Option<Range<usize>> = None;
        for mut seg in sections {
            if let Some(p) = pending.take() {
                if tokens(units, &p) + tokens(units, &seg) <= max {
                    seg = p.start..seg.end;
                } else {
                    out.push(p);
                }
            }
            let size = tokens(units, &seg);
            if size >= min {
                out.push(seg);
                continue;
            }
            match self.config.small_chunk_action {
                SmallChunkAction::Delete => {}
                SmallChunkAction::MergePrevious => match out.last_mut() {
                    Some(last) if last.end == seg.start && tokens(units, last) + size <= max => {
                        last.end = seg.end;
                    }
                    _ => pending = Some(seg),
                },
            }
        }
        out.extend(pending);
        out
    }
}
