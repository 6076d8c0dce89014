use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::Example;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Character vocabulary. Ids `0` and `1` are reserved for padding and unknown
/// characters; the rest are assigned in codepoint order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    chars: String,
}

impl TryFrom<VocabFile> for Vocabulary {
    type Error = Error;

    fn try_from(f: VocabFile) -> Result<Self> {
        let chars: Vec<char> = f.chars.chars().collect();
        let set: BTreeSet<char> = chars.iter().copied().collect();
        if set.len() != chars.len() {
            return Err(Error::Checkpoint("vocabulary lists a character twice".into()));
        }
        Ok(Self::from_chars(chars))
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile { chars: v.chars.iter().collect() }
    }
}

impl Vocabulary {
    fn from_chars(chars: Vec<char>) -> Self {
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i + 2)).collect();
        Self { chars, index }
    }

    pub fn build<'a>(examples: impl IntoIterator<Item = &'a Example>) -> Self {
        let mut set = BTreeSet::new();
        for ex in examples {
            for s in &ex.doc.sentences {
                set.extend(s.chars());
            }
        }
        Self::from_chars(set.into_iter().collect())
    }

    /// Includes the two reserved ids.
    pub fn len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, s: &str) -> Vec<usize> {
        s.chars().map(|c| self.id(c)).collect()
    }

    /// Character for a regular id; `None` for the reserved ids.
    pub fn char(&self, id: usize) -> Option<char> {
        id.checked_sub(2).and_then(|i| self.chars.get(i)).copied()
    }

    pub fn fingerprint(&self) -> String {
        let s: String = self.chars.iter().collect();
        crate::fingerprint(s.as_bytes())
    }
}

/// Vocabulary covering every character of `examples`.
pub fn build_vocab(examples: &[Example]) -> Vocabulary {
    Vocabulary::build(examples)
}
