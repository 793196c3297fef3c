use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{CoinError, Result};
use crate::text::Vocab;

/// Per-character lists of confusable replacements.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfusionSet {
    entries: BTreeMap<char, Vec<char>>,
}

impl ConfusionSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `candidates` for `key`. Duplicates are dropped; an empty list or a
    /// candidate equal to its key is rejected.
    pub fn insert(&mut self, key: char, candidates: impl IntoIterator<Item = char>) -> Result<()> {
        let mut list: Vec<char> = Vec::new();
        for c in candidates {
            if c == key {
                return Err(CoinError::InvalidConfig(format!(
                    "confusion candidate {c:?} equals its key"
                )));
            }
            if !list.contains(&c) {
                list.push(c);
            }
        }
        if list.is_empty() {
            return Err(CoinError::InvalidConfig(format!(
                "confusion entry {key:?} has no candidates"
            )));
        }
        self.entries.insert(key, list);
        Ok(())
    }

    pub fn candidates(&self, c: char) -> Option<&[char]> {
        self.entries.get(&c).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (char, &[char])> {
        self.entries.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    /// Checks that every key and candidate is a content symbol of `vocab`.
    pub fn validate_against(&self, vocab: &Vocab) -> Result<()> {
        for (k, cands) in self.iter() {
            for c in std::iter::once(k).chain(cands.iter().copied()) {
                if vocab.lookup(c).is_none() {
                    return Err(CoinError::InvalidConfig(format!(
                        "confusion symbol {c:?} is not in the vocabulary"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Random confusion set: each symbol gets `per_symbol` distinct other symbols.
    pub fn random<R: Rng + ?Sized>(symbols: &[char], per_symbol: usize, rng: &mut R) -> Result<Self> {
        if symbols.len() <= per_symbol {
            return Err(CoinError::InvalidConfig(format!(
                "{per_symbol} candidates need more than {} symbols",
                symbols.len()
            )));
        }
        let mut set = ConfusionSet::new();
        for (i, &key) in symbols.iter().enumerate() {
            let picks = sample(rng, symbols.len() - 1, per_symbol);
            let cands = picks.iter().map(|j| symbols[if j >= i { j + 1 } else { j }]);
            set.insert(key, cands)?;
        }
        Ok(set)
    }

    /// Parses `key<TAB>candidates` lines; candidates are a contiguous character run.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut set = ConfusionSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.is_empty() {
                continue;
            }
            let malformed = |reason: String| CoinError::MalformedLine {
                path: origin.to_path_buf(),
                line,
                reason,
            };
            let (key, cands) = raw
                .split_once('\t')
                .ok_or_else(|| malformed("expected key<TAB>candidates".into()))?;
            let mut key_chars = key.chars();
            let (Some(k), None) = (key_chars.next(), key_chars.next()) else {
                return Err(malformed(format!("key {key:?} is not a single character")));
            };
            set.insert(k, cands.chars())
                .map_err(|e| malformed(e.to_string()))?;
        }
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CoinError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (k, cands) in self.iter() {
            let run: String = cands.iter().collect();
            let _ = writeln!(out, "{k}\t{run}");
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_file_string()).map_err(|e| CoinError::io(path, e))
    }
}
