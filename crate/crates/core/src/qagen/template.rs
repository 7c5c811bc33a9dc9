use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Piece {
    Text(String),
    Slot(String),
}

/// Prompt text with `{slot}` placeholders. `{{` and `}}` stand for literal
/// braces. Rendering is a single pass, so substituted values may contain
/// braces freely.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    source: String,
    pieces: Vec<Piece>,
}

fn is_slot_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

impl PromptTemplate {
    pub fn parse(source: &str) -> Result<Self> {
        let mut pieces = Vec::new();
        let mut text = String::new();
        let mut chars = source.char_indices().peekable();
        while let Some((pos, c)) = chars.next() {
            match c {
                '{' if chars.peek().map(|&(_, n)| n) == Some('{') => {
                    chars.next();
                    text.push('{');
                }
                '}' if chars.peek().map(|&(_, n)| n) == Some('}') => {
                    chars.next();
                    text.push('}');
                }
                '{' => {
                    let mut name = String::new();
                    loop {
                        match chars.next() {
                            Some((_, '}')) => break,
                            Some((_, n)) if is_slot_char(n) => name.push(n),
                            _ => {
                                return Err(Error::Template(format!(
                                    "malformed placeholder at byte {pos}; write '{{{{' for a literal brace"
                                )))
                            }
                        }
                    }
                    if name.is_empty() {
                        return Err(Error::Template(format!("empty placeholder at byte {pos}")));
                    }
                    if !text.is_empty() {
                        pieces.push(Piece::Text(std::mem::take(&mut text)));
                    }
                    pieces.push(Piece::Slot(name));
                }
                '}' => {
                    return Err(Error::Template(format!(
                        "unmatched '}}' at byte {pos}; write '}}}}' for a literal brace"
                    )))
                }
                _ => text.push(c),
            }
        }
        if !text.is_empty() {
            pieces.push(Piece::Text(text));
        }
        Ok(Self {
            source: source.to_string(),
            pieces,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Template(format!("{}: {e}", path.display())))
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn slots(&self) -> BTreeSet<&str> {
        self.pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(s.as_str()),
                Piece::Text(_) => None,
            })
            .collect()
    }

    /// Fails unless every slot in `required` appears and no slot outside
    /// `required` and `optional` does.
    pub fn require(&self, required: &[&str], optional: &[&str]) -> Result<()> {
        let slots = self.slots();
        let missing: Vec<&str> = required.iter().copied().filter(|s| !slots.contains(s)).collect();
        if !missing.is_empty() {
            return Err(Error::Template(format!(
                "template lacks required slots: {}",
                missing.join(", ")
            )));
        }
        let unknown: Vec<&str> = slots
            .iter()
            .copied()
            .filter(|s| !required.contains(s) && !optional.contains(s))
            .collect();
        if !unknown.is_empty() {
            return Err(Error::Template(format!(
                "template has unknown slots: {}",
                unknown.join(", ")
            )));
        }
        Ok(())
    }

    pub fn render(&self, values: &HashMap<&str, String>) -> Result<String> {
        let mut out = String::with_capacity(self.source.len());
        for p in &self.pieces {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(s) => out.push_str(
                    values
                        .get(s.as_str())
                        .ok_or_else(|| Error::Template(format!("no value for placeholder {{{s}}}")))?,
                ),
            }
        }
        Ok(out)
    }
}
