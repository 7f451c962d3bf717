//! Fixed 64-token closed vocabulary.
//!
//! Every instruction, reasoning phrase, question, and answer the simulator
//! emits tokenizes against this list without unknowns. User text (chat) may
//! contain out-of-vocabulary words; those are reported, not mapped.

use std::collections::HashMap;
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

use super::SimError;

pub const PAD: usize = 0;
pub const EOS: usize = 1;

const WORDS: [&str; 64] = [
    "<pad>", "<eos>", // specials
    "answer", "based", "on", "question", // understanding system prompt
    "predict", "robot", "action", // control system prompt
    "the", "a", "is", "at", "in", "to", "of", "it", "i", "will", "there", "and", // glue
    "what", "color", "how", "many", "where", // question words
    "yes", "no", // existence answers
    "zero", "one", "two", "three", // digit words
    "red", "green", "blue", "yellow", // colors
    "cube", "ball", "block", // shapes
    "box", "basket", "drawer", // receptacles
    "row", "col", // cell coordinates
    "left", "right", "top", "bottom", // spatial words
    "pick", "place", "push", "stack", "sort", "open", "close", "move", "put", // verbs
    "toy", "toys", "target", ".", // nouns + sentence break
    "are", "blocks", "that", // fillers for instruction grammar
];

pub struct Vocab {
    index: HashMap<&'static str, usize>,
}

impl Vocab {
    fn new() -> Vocab {
        let mut index = HashMap::new();
        for (i, w) in WORDS.iter().enumerate() {
            index.insert(*w, i);
        }
        assert_eq!(index.len(), 64, "vocabulary words must be unique");
        Vocab { index }
    }

    pub fn size(&self) -> usize {
        WORDS.len()
    }

    pub fn word(&self, id: usize) -> &'static str {
        WORDS[id]
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Tokenize text. Case-insensitive; `.` is its own token; `?`, `!` and
    /// `,` are ignored. Unknown words fail with the full offending list.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>, SimError> {
        let mut ids = Vec::new();
        let mut unknown = Vec::new();
        for word in normalize(text).split_whitespace() {
            match self.index.get(word) {
                Some(&id) => ids.push(id),
                None => unknown.push(word.to_string()),
            }
        }
        if unknown.is_empty() {
            Ok(ids)
        } else {
            Err(SimError::UnknownWords(unknown))
        }
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&id| WORDS[id])
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Stable content hash of the vocabulary, carried by dataset files and
    /// checkpoints so mismatched artifacts are rejected at load time.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(WORDS.join("\n").as_bytes());
        hex(&hasher.finalize())
    }
}

fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 8);
    for c in text.chars() {
        match c {
            '.' => out.push_str(" . "),
            '?' | '!' | ',' => out.push(' '),
            _ => out.extend(c.to_lowercase()),
        }
    }
    out
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// The process-wide vocabulary instance.
pub fn vocab() -> &'static Vocab {
    static VOCAB: OnceLock<Vocab> = OnceLock::new();
    VOCAB.get_or_init(Vocab::new)
}
