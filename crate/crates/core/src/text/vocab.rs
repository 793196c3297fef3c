use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const SEP: usize = 2;
pub const MASK: usize = 3;
pub const UNK: usize = 4;

/// Number of reserved ids preceding the content symbols.
pub const NUM_SPECIALS: usize = 5;

const SPECIAL_NAMES: [&str; NUM_SPECIALS] = ["[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"];

/// A symbol in the vocabulary: either a reserved token or a content character.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symbol {
    Special(usize),
    Char(char),
}

/// Character vocabulary with the five reserved tokens at ids 0..5.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    symbols: String,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        Vocab::from_chars(r.symbols.chars())
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            symbols: v.chars.iter().collect(),
        }
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::from_chars(std::iter::empty())
    }
}

impl Vocab {
    /// Builds a vocabulary from content characters, keeping first-occurrence order.
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let mut vocab = Vocab {
            chars: Vec::new(),
            index: HashMap::new(),
        };
        for c in chars {
            vocab.insert(c);
        }
        vocab
    }

    fn insert(&mut self, c: char) {
        if !self.index.contains_key(&c) {
            self.index.insert(c, NUM_SPECIALS + self.chars.len());
            self.chars.push(c);
        }
    }

    pub fn len(&self) -> usize {
        NUM_SPECIALS + self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of content (non-special) symbols.
    pub fn num_content(&self) -> usize {
        self.chars.len()
    }

    pub fn content_chars(&self) -> &[char] {
        &self.chars
    }

    pub fn lookup(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    /// Id of `c`, falling back to `UNK`.
    pub fn id(&self, c: char) -> usize {
        self.lookup(c).unwrap_or(UNK)
    }

    pub fn encode(&self, text: &[char]) -> Vec<usize> {
        text.iter().map(|&c| self.id(c)).collect()
    }

    pub fn symbol_of(&self, id: usize) -> Option<Symbol> {
        if id < NUM_SPECIALS {
            Some(Symbol::Special(id))
        } else {
            self.chars.get(id - NUM_SPECIALS).map(|&c| Symbol::Char(c))
        }
    }

    pub fn char_of(&self, id: usize) -> Option<char> {
        match self.symbol_of(id)? {
            Symbol::Char(c) => Some(c),
            Symbol::Special(_) => None,
        }
    }

    pub fn special_name(id: usize) -> Option<&'static str> {
        SPECIAL_NAMES.get(id).copied()
    }

    pub fn is_special(id: usize) -> bool {
        id < NUM_SPECIALS
    }
}

/// Collects every distinct character in `corpus`: specials first, then
/// content characters in first-occurrence order.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S]) -> Vocab {
    Vocab::from_chars(corpus.iter().flat_map(|s| s.as_ref().chars().collect::<Vec<_>>()))
}
