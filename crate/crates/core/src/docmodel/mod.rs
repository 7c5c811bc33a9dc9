//! Document and benchmark data model.
//!
//! Coordinates are page points with a top-left origin and `y` growing
//! downward. Extractors working in PDF user space (bottom-left origin)
//! convert before emitting blocks.

mod io;

pub use io::*;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle `[x0, y0, x1, y1]` in page points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoundingBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        if ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "bounding box has non-finite coordinate: [{x0}, {y0}, {x1}, {y1}]"
            )));
        }
        if x0 > x1 || y0 > y1 {
            return Err(Error::InvalidInput(format!(
                "bounding box corners out of order: [{x0}, {y0}, {x1}, {y1}]"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Area of the overlap with `other`, 0 when disjoint or only touching.
    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x1.min(other.x1) - self.x0.max(other.x0);
        let h = self.y1.min(other.y1) - self.y0.max(other.y0);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

/// Layout category shared by detector instances, typed blocks and annotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockType {
    Caption,
    Footer,
    Header,
    Heading,
    List,
    Picture,
    Table,
    Text,
}

impl BlockType {
    pub const ALL: [BlockType; 8] = [
        BlockType::Caption,
        BlockType::Footer,
        BlockType::Header,
        BlockType::Heading,
        BlockType::List,
        BlockType::Picture,
        BlockType::Table,
        BlockType::Text,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BlockType::Caption => "caption",
            BlockType::Footer => "footer",
            BlockType::Header => "header",
            BlockType::Heading => "heading",
            BlockType::List => "list",
            BlockType::Picture => "picture",
            BlockType::Table => "table",
            BlockType::Text => "text",
        }
    }

    /// Page furniture that never belongs to a chunk.
    pub fn is_page_furniture(&self) -> bool {
        matches!(self, BlockType::Header | BlockType::Footer)
    }
}

impl fmt::Display for BlockType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BlockType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let needle = s.trim().to_ascii_lowercase();
        BlockType::ALL
            .into_iter()
            .find(|t| t.as_str() == needle)
            .ok_or_else(|| Error::InvalidInput(format!("unknown block type '{s}'")))
    }
}

/// Renders a heading level the way the classification reports label it:
/// `H1`, `H2`, ... or `none`.
pub fn heading_label(level: Option<u32>) -> String {
    match level {
        Some(l) => format!("H{l}"),
        None => "none".to_string(),
    }
}

/// Parses `none`, an empty cell, `3` or `H3`.
pub fn parse_heading_level(s: &str) -> Result<Option<u32>> {
    let t = s.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let digits = t.strip_prefix(['H', 'h']).unwrap_or(t);
    match digits.parse::<u32>() {
        Ok(l) if l >= 1 => Ok(Some(l)),
        _ => Err(Error::InvalidInput(format!(
            "heading level must be a positive integer or 'none', got '{s}'"
        ))),
    }
}

/// One text region extracted from a PDF page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub id: String,
    /// 1-based page number.
    pub page: u32,
    pub bbox: BoundingBox,
    pub text: String,
    /// Reading order within the document, 0-based and gapless.
    pub order: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_type: Option<BlockType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading_level: Option<u32>,
}

impl Block {
    pub fn is_page_furniture(&self) -> bool {
        self.block_type.is_some_and(|t| t.is_page_furniture())
    }
}

/// One detector prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutInstance {
    pub page: u32,
    pub bbox: BoundingBox,
    pub label: BlockType,
    pub confidence: f64,
}

/// `major.minor` chunk label: `major` is the ideal chunk group, `minor` the
/// smallest sub-unit that still keeps its context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChunkLabel {
    pub major: u32,
    pub minor: u32,
}

impl fmt::Display for ChunkLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.major, self.minor)
    }
}

impl FromStr for ChunkLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let (major, minor) = t.split_once('.').unwrap_or((t, "0"));
        match (major.parse::<u32>(), minor.parse::<u32>()) {
            (Ok(major), Ok(minor)) => Ok(ChunkLabel { major, minor }),
            _ => Err(Error::InvalidInput(format!(
                "chunk label must look like 'major.minor', got '{s}'"
            ))),
        }
    }
}

/// Manual ground truth for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub block_id: String,
    pub block_type: BlockType,
    /// Topic index, or -1 for irrelevant content.
    pub topic: i64,
    pub chunk: ChunkLabel,
    pub heading_level: Option<u32>,
}

/// A course topic and its learning objectives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSpec {
    pub index: usize,
    pub title: String,
    pub objectives: Vec<String>,
}

/// Source dataset of a benchmark entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dataset {
    Beetle,
    #[serde(rename = "CU-NLP")]
    CuNlp,
    DigiKlausur,
    Mohler,
    #[serde(rename = "SAF")]
    Saf,
    SciEntsBank,
    Stita,
}

impl Dataset {
    pub const ALL: [Dataset; 7] = [
        Dataset::Beetle,
        Dataset::CuNlp,
        Dataset::DigiKlausur,
        Dataset::Mohler,
        Dataset::Saf,
        Dataset::SciEntsBank,
        Dataset::Stita,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Dataset::Beetle => "Beetle",
            Dataset::CuNlp => "CU-NLP",
            Dataset::DigiKlausur => "DigiKlausur",
            Dataset::Mohler => "Mohler",
            Dataset::Saf => "SAF",
            Dataset::SciEntsBank => "SciEntsBank",
            Dataset::Stita => "Stita",
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dataset {
    type Err = Error;

    /// Accepts the canonical names plus the spellings used by the upstream
    /// sources (`BeetleII`, `cu_nlp`, `SciEntBank`, ...).
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        let ds = match key.as_str() {
            "beetle" | "beetleii" | "beetle2" => Dataset::Beetle,
            "cunlp" => Dataset::CuNlp,
            "digiklausur" => Dataset::DigiKlausur,
            "mohler" => Dataset::Mohler,
            "saf" | "shortanswerfeedback" => Dataset::Saf,
            "scientsbank" | "scientbank" => Dataset::SciEntsBank,
            "stita" => Dataset::Stita,
            _ => return Err(Error::InvalidInput(format!("unknown dataset '{s}'"))),
        };
        Ok(ds)
    }
}

/// One (dataset, question, reference answer, provided answer, grade) entry.
#[derive(Debug, Clone, PartialEq)]
pub struct GradingEntry {
    pub dataset: Dataset,
    pub question: Option<String>,
    pub reference_answer: String,
    pub provided_answer: String,
    /// Normalized to [0, 1].
    pub grade: f64,
}

/// Sorts blocks by `(page, y0, x0)` and reassigns a gapless `order`.
///
/// The sort is stable, so blocks sharing a position keep their input order.
pub fn default_block_order(mut blocks: Vec<Block>) -> Vec<Block> {
    blocks.sort_by(|a, b| {
        a.page
            .cmp(&b.page)
            .then(a.bbox.y0.total_cmp(&b.bbox.y0))
            .then(a.bbox.x0.total_cmp(&b.bbox.x0))
    });
    for (i, b) in blocks.iter_mut().enumerate() {
        b.order = i;
    }
    blocks
}
