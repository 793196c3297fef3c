use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CoinError, Result};

/// A source sentence X and its correction Y, aligned character by character.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    source: Vec<char>,
    target: Vec<char>,
}

impl SentencePair {
    pub fn new(source: Vec<char>, target: Vec<char>) -> Result<Self> {
        if source.len() != target.len() {
            return Err(CoinError::InvalidPair(format!(
                "source has {} characters, target has {}",
                source.len(),
                target.len()
            )));
        }
        if source.is_empty() {
            return Err(CoinError::InvalidPair("empty sentence".into()));
        }
        Ok(SentencePair { source, target })
    }

    pub fn from_strs(source: &str, target: &str) -> Result<Self> {
        Self::new(source.chars().collect(), target.chars().collect())
    }

    pub fn source(&self) -> &[char] {
        &self.source
    }

    pub fn target(&self) -> &[char] {
        &self.target
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    /// Positions where source and target differ.
    pub fn gold_errors(&self) -> Vec<usize> {
        self.source
            .iter()
            .zip(&self.target)
            .enumerate()
            .filter(|(_, (x, y))| x != y)
            .map(|(i, _)| i)
            .collect()
    }

    /// Gold errors as a 0/1 vector over positions.
    pub fn error_mask(&self) -> Vec<bool> {
        self.source
            .iter()
            .zip(&self.target)
            .map(|(x, y)| x != y)
            .collect()
    }

    pub fn has_errors(&self) -> bool {
        self.source != self.target
    }

    pub fn source_string(&self) -> String {
        self.source.iter().collect()
    }

    pub fn target_string(&self) -> String {
        self.target.iter().collect()
    }
}

/// Parses tab-separated `source<TAB>target` lines.
///
/// `origin` is only used in error messages.
pub fn parse_parallel_tsv(text: &str, origin: &Path) -> Result<Vec<SentencePair>> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return Ok(Vec::new());
    }
    let mut pairs = Vec::new();
    for (idx, raw) in body.split('\n').enumerate() {
        let line = idx + 1;
        let row = raw.strip_suffix('\r').unwrap_or(raw);
        let malformed = |reason: &str| CoinError::MalformedLine {
            path: origin.to_path_buf(),
            line,
            reason: reason.to_string(),
        };
        let mut fields = row.split('\t');
        let (Some(src), Some(tgt), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(malformed("expected exactly two tab-separated fields"));
        };
        let source: Vec<char> = src.chars().collect();
        let target: Vec<char> = tgt.chars().collect();
        if source.len() != target.len() {
            return Err(CoinError::LengthMismatch {
                path: origin.to_path_buf(),
                line,
                source_len: source.len(),
                target_len: target.len(),
            });
        }
        if source.is_empty() {
            return Err(malformed("empty sentence"));
        }
        pairs.push(SentencePair { source, target });
    }
    Ok(pairs)
}

pub fn load_parallel_tsv(path: impl AsRef<Path>) -> Result<Vec<SentencePair>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CoinError::io(path, e))?;
    parse_parallel_tsv(&text, path)
}

pub fn to_tsv_string(pairs: &[SentencePair]) -> String {
    let mut out = String::new();
    for p in pairs {
        let _ = writeln!(out, "{}\t{}", p.source_string(), p.target_string());
    }
    out
}

pub fn write_parallel_tsv(path: impl AsRef<Path>, pairs: &[SentencePair]) -> Result<()> {
    let path: PathBuf = path.as_ref().to_path_buf();
    fs::write(&path, to_tsv_string(pairs)).map_err(|e| CoinError::io(path, e))
}
