//! Splitting typed, leveled blocks into chunks.
//!
//! [`Chunker::dla`] is the layout-aware strategy; [`Chunker::per_pages`] and
//! [`Chunker::fixed_window`] are the naive baselines it is measured against
//! with [`context_loss`].

mod context;
mod dla;

pub use context::{chunk_by_annotation, context_loss, ContextLoss};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::docmodel::{Block, BlockType};
use crate::error::{Error, Result};

/// Counts tokens in chunk text.
pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Whitespace-delimited word count.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub block_ids: Vec<String>,
    /// Member texts in order, separated by a blank line.
    pub text: String,
    pub token_count: usize,
    /// Active headings at the chunk start, from H1 downward.
    pub heading_path: Vec<String>,
    /// First and last page touched by the member blocks.
    pub page_span: (u32, u32),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmallChunkAction {
    MergePrevious,
    Delete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkConfig {
    pub max_tokens: usize,
    pub min_tokens: usize,
    pub small_chunk_action: SmallChunkAction,
    pub fallback_window_tokens: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            max_tokens: 1024,
            min_tokens: 64,
            small_chunk_action: SmallChunkAction::MergePrevious,
            fallback_window_tokens: 512,
        }
    }
}

impl ChunkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_tokens == 0 || self.min_tokens >= self.max_tokens {
            return Err(Error::InvalidInput(format!(
                "need 0 < min_tokens < max_tokens, got min {} max {}",
                self.min_tokens, self.max_tokens
            )));
        }
        if self.fallback_window_tokens == 0 || self.fallback_window_tokens > self.max_tokens {
            return Err(Error::InvalidInput(format!(
                "need 0 < fallback_window_tokens <= max_tokens, got {} (max {})",
                self.fallback_window_tokens, self.max_tokens
            )));
        }
        Ok(())
    }
}

/// Chunking strategies sharing one configuration and tokenizer.
#[derive(Clone)]
pub struct Chunker {
    config: ChunkConfig,
    tokenizer: Arc<dyn Tokenizer>,
}

impl std::fmt::Debug for Chunker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Chunker")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Chunker {
    pub fn new(config: ChunkConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            tokenizer: Arc::new(WhitespaceTokenizer),
        })
    }

    pub fn with_tokenizer(mut self, tokenizer: Arc<dyn Tokenizer>) -> Self {
        self.tokenizer = tokenizer;
        self
    }

    pub fn config(&self) -> &ChunkConfig {
        &self.config
    }

    pub fn tokenizer(&self) -> &dyn Tokenizer {
        self.tokenizer.as_ref()
    }

    /// One chunk per window of `n` consecutive pages; empty windows are dropped.
    pub fn per_pages(&self, blocks: &[Block], n: u32) -> Result<Vec<Chunk>> {
        if n == 0 {
            return Err(Error::InvalidInput("pages per chunk must be >= 1".into()));
        }
        let doc = Body::new(blocks, self.tokenizer());
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut current_window = None;
        for (i, b) in doc.blocks.iter().enumerate() {
            let window = (b.page - 1) / n;
            if current_window != Some(window) {
                groups.push(Vec::new());
                current_window = Some(window);
            }
            groups.last_mut().expect("group pushed").push(i);
        }
        Ok(doc.assemble(groups.iter().map(|g| g.as_slice()), self.tokenizer()))
    }

    /// Greedily packs whole blocks up to `window_tokens`; a block longer than
    /// the window becomes a chunk of its own.
    pub fn fixed_window(&self, blocks: &[Block], window_tokens: usize) -> Result<Vec<Chunk>> {
        if window_tokens == 0 {
            return Err(Error::InvalidInput("window must be >= 1 token".into()));
        }
        let doc = Body::new(blocks, self.tokenizer());
        let groups = pack(&doc.tokens, window_tokens);
        let groups: Vec<Vec<usize>> = groups.into_iter().map(|r| r.collect()).collect();
        Ok(doc.assemble(groups.iter().map(|g| g.as_slice()), self.tokenizer()))
    }
}

/// Greedy packing of consecutive items into ranges of at most `window`
/// tokens. An item larger than `window` gets a range of its own.
pub(crate) fn pack(tokens: &[usize], window: usize) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut acc = 0;
    for (i, &t) in tokens.iter().enumerate() {
        if i > start && acc + t > window {
            out.push(start..i);
            start = i;
            acc = 0;
        }
        acc += t;
    }
    if start < tokens.len() {
        out.push(start..tokens.len());
    }
    out
}

/// The chunkable part of a document: blocks minus headers and footers,
/// with per-block token counts and heading context.
pub(crate) struct Body<'a> {
    pub blocks: Vec<&'a Block>,
    pub tokens: Vec<usize>,
    /// Heading stack in effect at each block (the block itself included).
    paths: Vec<Vec<String>>,
}

impl<'a> Body<'a> {
    pub fn new(blocks: &'a [Block], tokenizer: &dyn Tokenizer) -> Self {
        let mut sorted: Vec<&Block> = blocks.iter().filter(|b| !b.is_page_furniture()).collect();
        sorted.sort_by_key(|b| b.order);
        let tokens = sorted.iter().map(|b| tokenizer.count(contributed_text(b))).collect();
        let mut stack: Vec<(u32, String)> = Vec::new();
        let paths = sorted
            .iter()
            .map(|b| {
                if let (Some(BlockType::Heading), Some(level)) = (b.block_type, b.heading_level) {
                    while stack.last().is_some_and(|(l, _)| *l >= level) {
                        stack.pop();
                    }
                    stack.push((level, b.text.trim().to_string()));
                }
                stack.iter().map(|(_, t)| t.clone()).collect()
            })
            .collect();
        Self {
            blocks: sorted,
            tokens,
            paths,
        }
    }

    pub fn assemble<'g>(&self, groups: impl Iterator<Item = &'g [usize]>, tokenizer: &dyn Tokenizer) -> Vec<Chunk> {
        groups
            .filter(|g| !g.is_empty())
            .enumerate()
            .map(|(n, g)| {
                let members: Vec<&Block> = g.iter().map(|&i| self.blocks[i]).collect();
                let text = members
                    .iter()
                    .map(|b| contributed_text(b).trim())
                    .filter(|t| !t.is_empty())
                    .collect::<Vec<_>>()
                    .join("\n\n");
                let first = members.iter().map(|b| b.page).min().unwrap_or(1);
                let last = members.iter().map(|b| b.page).max().unwrap_or(first);
                Chunk {
                    id: format!("chunk-{n:04}"),
                    block_ids: members.iter().map(|b| b.id.clone()).collect(),
                    token_count: tokenizer.count(&text),
                    text,
                    heading_path: self.paths[g[0]].clone(),
                    page_span: (first, last),
                    topic: None,
                }
            })
            .collect()
    }
}

/// Pictures contribute no text to a chunk.
fn contributed_text(b: &Block) -> &str {
    if b.block_type == Some(BlockType::Picture) {
        ""
    } else {
        &b.text
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use crate::docmodel::{Block, BlockType, BoundingBox};

    /// Builds a block whose text has exactly `words` whitespace tokens.
    pub fn blk(id: &str, page: u32, t: BlockType, level: Option<u32>, words: usize) -> Block {
        let text = (0..words).map(|i| format!("{id}w{i}")).collect::<Vec<_>>().join(" ");
        Block {
            id: id.into(),
            page,
            bbox: BoundingBox::new(0.0, 0.0, 100.0, 10.0).unwrap(),
            text,
            order: 0,
            block_type: Some(t),
            heading_level: level,
        }
    }

    pub fn ordered(mut blocks: Vec<Block>) -> Vec<Block> {
        for (i, b) in blocks.iter_mut().enumerate() {
            b.order = i;
        }
        blocks
    }
}
