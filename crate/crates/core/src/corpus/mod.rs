//! Documents, event schemas, gold annotations and their JSONL form.
//!
//! Text is handled at the character (Unicode scalar) level throughout: sentence
//! lengths, spans and vocabulary entries all count `char`s, never bytes.

mod io;
mod synth;
mod vocab;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use io::{
    load_corpus, load_predictions, load_schema, parse_corpus, read_corpus_str, write_corpus, write_predictions,
    write_schema, LoadOptions, Loaded,
};
pub use synth::{generate_synthetic, EventsPerDoc, ScatterDist, SynthConfig};
pub use vocab::{build_vocab, Vocabulary, PAD, UNK};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_SENTENCES: usize = 64;
pub const DEFAULT_MAX_SENTENCE_LEN: usize = 128;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<String>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, sentences: Vec<String>) -> Self {
        Self { doc_id: doc_id.into(), sentences }
    }

    pub fn sentence_chars(&self, j: usize) -> Vec<char> {
        self.sentences[j].chars().collect()
    }

    pub fn sentence_len(&self, j: usize) -> usize {
        self.sentences[j].chars().count()
    }

    /// Characters `span` of sentence `sentence`, or `None` when out of range.
    pub fn slice(&self, sentence: usize, span: (usize, usize)) -> Option<String> {
        let s = self.sentences.get(sentence)?;
        let n = s.chars().count();
        if span.0 >= span.1 || span.1 > n {
            return None;
        }
        Some(s.chars().skip(span.0).take(span.1 - span.0).collect())
    }
}

/// Event types with their ordered role inventories. Role order is the
/// extraction order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaFile", into = "SchemaFile")]
pub struct EventSchema {
    types: Vec<String>,
    roles: Vec<Vec<String>>,
    type_index: HashMap<String, usize>,
    role_index: Vec<HashMap<String, usize>>,
}

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    types: Vec<String>,
    roles: std::collections::BTreeMap<String, Vec<String>>,
}

impl TryFrom<SchemaFile> for EventSchema {
    type Error = Error;

    fn try_from(f: SchemaFile) -> Result<Self> {
        let mut roles = Vec::with_capacity(f.types.len());
        for t in &f.types {
            let r = f.roles.get(t).ok_or_else(|| Error::Schema(format!("no role list for event type {t:?}")))?;
            roles.push(r.clone());
        }
        if let Some(extra) = f.roles.keys().find(|k| !f.types.contains(k)) {
            return Err(Error::Schema(format!("roles given for undeclared event type {extra:?}")));
        }
        EventSchema::new(f.types, roles)
    }
}

impl From<EventSchema> for SchemaFile {
    fn from(s: EventSchema) -> Self {
        SchemaFile { roles: s.types.iter().cloned().zip(s.roles.iter().cloned()).collect(), types: s.types }
    }
}

impl EventSchema {
    pub fn new(types: Vec<String>, roles: Vec<Vec<String>>) -> Result<Self> {
        if types.is_empty() {
            return Err(Error::Schema("schema declares no event types".into()));
        }
        if types.len() != roles.len() {
            return Err(Error::Schema("one role list per event type is required".into()));
        }
        let mut type_index = HashMap::new();
        for (i, t) in types.iter().enumerate() {
            if type_index.insert(t.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate event type {t:?}")));
            }
        }
        let mut role_index = Vec::new();
        for (t, rs) in types.iter().zip(&roles) {
            if rs.is_empty() {
                return Err(Error::Schema(format!("event type {t:?} has no roles")));
            }
            let mut idx = HashMap::new();
            for (i, r) in rs.iter().enumerate() {
                if idx.insert(r.clone(), i).is_some() {
                    return Err(Error::Schema(format!("duplicate role {r:?} in event type {t:?}")));
                }
            }
            role_index.push(idx);
        }
        Ok(Self { types, roles, type_index, role_index })
    }

    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    pub fn type_name(&self, t: usize) -> &str {
        &self.types[t]
    }

    pub fn type_names(&self) -> &[String] {
        &self.types
    }

    pub fn roles(&self, t: usize) -> &[String] {
        &self.roles[t]
    }

    pub fn num_roles(&self, t: usize) -> usize {
        self.roles[t].len()
    }

    pub fn type_id(&self, name: &str) -> Option<usize> {
        self.type_index.get(name).copied()
    }

    pub fn role_id(&self, t: usize, name: &str) -> Option<usize> {
        self.role_index[t].get(name).copied()
    }

    /// Canonical JSON used for hashing and for the schema file.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("schema serializes")
    }

    pub fn fingerprint(&self) -> String {
        crate::fingerprint(self.to_json().as_bytes())
    }
}

/// Where a gold argument sits in its document.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ArgProvenance {
    pub text: String,
    pub sentence: usize,
    /// Half-open character range within the sentence.
    pub span: (usize, usize),
}

/// A gold event record: one optional provenance-carrying argument per role, in
/// schema role order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldRecord {
    pub event_type: usize,
    pub args: Vec<Option<ArgProvenance>>,
}

impl GoldRecord {
    pub fn filled(&self) -> usize {
        self.args.iter().flatten().count()
    }

    pub fn to_event_record(&self) -> EventRecord {
        EventRecord {
            event_type: self.event_type,
            args: self.args.iter().map(|a| a.as_ref().map(|p| p.text.clone())).collect(),
        }
    }

    /// Number of distinct sentences holding this record's arguments.
    pub fn sentence_spread(&self) -> usize {
        let mut s: Vec<usize> = self.args.iter().flatten().map(|a| a.sentence).collect();
        s.sort_unstable();
        s.dedup();
        s.len()
    }

    /// Sort key for teacher forcing: earliest argument sentence, then earliest
    /// span start there, then argument strings in role order.
    pub fn canonical_key(&self) -> (usize, usize, Vec<Option<&str>>) {
        let first = self.args.iter().flatten().map(|a| (a.sentence, a.span.0)).min().unwrap_or((usize::MAX, usize::MAX));
        (first.0, first.1, self.args.iter().map(|a| a.as_ref().map(|p| p.text.as_str())).collect())
    }
}

/// An extracted (or gold-projected) event record without provenance.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct EventRecord {
    pub event_type: usize,
    pub args: Vec<Option<String>>,
}

impl EventRecord {
    pub fn filled(&self) -> usize {
        self.args.iter().flatten().count()
    }
}

/// A document together with its gold records.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub doc: Document,
    pub gold: Vec<GoldRecord>,
}

impl Example {
    /// Gold records of type `t` in canonical order.
    pub fn records_of_type(&self, t: usize) -> Vec<&GoldRecord> {
        let mut v: Vec<&GoldRecord> = self.gold.iter().filter(|r| r.event_type == t).collect();
        v.sort_by(|a, b| a.canonical_key().cmp(&b.canonical_key()));
        v
    }

    /// Checks every provenance span against the text and every record against
    /// the schema.
    pub fn validate(&self, schema: &EventSchema) -> Result<()> {
        for r in &self.gold {
            if r.event_type >= schema.num_types() || r.args.len() != schema.num_roles(r.event_type) {
                return Err(Error::Schema(format!("{}: record does not fit the schema", self.doc.doc_id)));
            }
            if r.filled() == 0 {
                return Err(Error::Data(format!("{}: gold record with no filled role", self.doc.doc_id)));
            }
            for a in r.args.iter().flatten() {
                if self.doc.slice(a.sentence, a.span).as_deref() != Some(a.text.as_str()) {
                    return Err(Error::Data(format!(
                        "{}: span {:?} of sentence {} does not reproduce {:?}",
                        self.doc.doc_id, a.span, a.sentence, a.text
                    )));
                }
            }
        }
        Ok(())
    }
}
