//! Characters, sentence pairs, confusion sets and synthetic data.

mod confusion;
mod pair;
mod synth;
mod vocab;

pub use confusion::ConfusionSet;
pub use pair::{load_parallel_tsv, parse_parallel_tsv, to_tsv_string, write_parallel_tsv, SentencePair};
pub use synth::{synthesize_pair, MarkovLanguage, MarkovOrder, SynthConfig, SyntheticTask};
pub use vocab::{build_vocab, Symbol, Vocab, CLS, MASK, NUM_SPECIALS, PAD, SEP, UNK};
