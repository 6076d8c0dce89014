//! Inference over whole documents, teacher-forced training and checkpoints.
//!
//! Inference is written once against the [`Reader`] trait, which supplies the
//! model's probability outputs; the loop itself makes every discrete decision
//! (threshold, argmax, STOP, caps). [`NeuralReader`] is the trained model;
//! [`OracleReader`] answers from gold annotations and exercises the same loop.

mod checkpoint;
mod neural;
mod oracle;
mod train;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainState};
pub use neural::{extract_corpus, extract_document, NeuralReader, NeuralSession};
pub use oracle::OracleReader;
pub use train::{
    corpus_f1, document_loss, forced_detections, total_loss, train, training_step, Adam, EpochSummary, LossParts, StepLog, TrainConfig, TrainOutcome,
};

use crate::corpus::{Document, EventRecord, EventSchema};
use crate::elaborate_reading::{copy_loop, CopyTrace, SentenceLocation};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    /// A record is read only while the detection probability exceeds this.
    pub threshold: f64,
    /// Cap on records read per (document, type).
    pub max_rounds: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { threshold: 0.5, max_rounds: 8 }
    }
}

/// The probabilistic side of the model, as seen by the inference loop.
pub trait Reader {
    /// Per-document state, such as the encoded document.
    type Session;
    type Memory: Clone;
    /// Whatever detection hands on to sentence location for one record.
    type Summary;
    type Query;
    /// A located sentence made ready for copying.
    type Prepared;

    fn open(&self, doc: &Document) -> Result<Self::Session>;
    fn init_memory(&self, s: &mut Self::Session, event_type: usize) -> Self::Memory;
    fn detect(&self, s: &mut Self::Session, m: &Self::Memory) -> (f64, Self::Summary);
    fn query(&self, s: &mut Self::Session, m: &Self::Memory, role: usize) -> Self::Query;
    /// `N + 1` probabilities, the last for "no argument".
    fn locate(&self, s: &mut Self::Session, summary: &Self::Summary, q: &Self::Query) -> Vec<f64>;
    fn prepare(&self, s: &mut Self::Session, q: &Self::Query, event_type: usize, role: usize, sentence: usize) -> Self::Prepared;
    /// `n + 1` probabilities over the sentence's characters and STOP, after
    /// copying `prev` (`None` at the first step).
    fn copy_scores(&self, s: &mut Self::Session, p: &Self::Prepared, prev: Option<usize>) -> Vec<f64>;
    fn update_memory(&self, s: &mut Self::Session, m: &Self::Memory, sentence: usize, indices: &[usize]) -> Self::Memory;
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoleTrace {
    pub role: usize,
    pub location: SentenceLocation,
    pub copy: Option<CopyTrace>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecordTrace {
    pub event_type: usize,
    pub detection: f64,
    pub roles: Vec<RoleTrace>,
    /// False when no role was filled and the record was dropped.
    pub emitted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExtractionOutput {
    pub doc_id: String,
    /// Grouped by event type in schema order.
    pub records: Vec<EventRecord>,
    pub traces: Vec<RecordTrace>,
    /// Every detection probability, per event type.
    pub detections: Vec<Vec<f64>>,
    pub seconds: f64,
}

/// Reads one document: per event type, detect, then extract role by role
/// until detection fails or the round cap is reached.
///
/// A round that fills no role leaves the memory unchanged, so every later
/// round of that type would repeat it; reading of the type stops there.
pub fn extract_with<R: Reader>(reader: &R, doc: &Document, schema: &EventSchema, cfg: &InferenceConfig) -> Result<ExtractionOutput> {
    let start = Instant::now();
    let mut s = reader.open(doc)?;
    let chars: Vec<Vec<char>> = (0..doc.sentences.len()).map(|j| doc.sentence_chars(j)).collect();
    let mut out = ExtractionOutput { doc_id: doc.doc_id.clone(), records: Vec::new(), traces: Vec::new(), detections: Vec::new(), seconds: 0.0 };
    for t in 0..schema.num_types() {
        let mut memory = reader.init_memory(&mut s, t);
        let mut probs = Vec::new();
        for _ in 0..cfg.max_rounds {
            let (p, summary) = reader.detect(&mut s, &memory);
            probs.push(p);
            if p <= cfg.threshold {
                break;
            }
            let mut record = EventRecord { event_type: t, args: vec![None; schema.num_roles(t)] };
            let mut trace = RecordTrace { event_type: t, detection: p, roles: Vec::new(), emitted: false };
            for role in 0..schema.num_roles(t) {
                let q = reader.query(&mut s, &memory, role);
                let location = SentenceLocation::from_scores(reader.locate(&mut s, &summary, &q));
                if location.is_null() {
                    trace.roles.push(RoleTrace { role, location, copy: None });
                    continue;
                }
                let j = location.chosen;
                let prepared = reader.prepare(&mut s, &q, t, role, j);
                let copy = copy_loop(chars[j].len(), |prev| reader.copy_scores(&mut s, &prepared, prev));
                if !copy.is_empty() {
                    record.args[role] = Some(copy.indices.iter().map(|&k| chars[j][k]).collect());
                    memory = reader.update_memory(&mut s, &memory, j, &copy.indices);
                }
                trace.roles.push(RoleTrace { role, location, copy: Some(copy) });
            }
            trace.emitted = record.filled() > 0;
            let emitted = trace.emitted;
            out.traces.push(trace);
            if !emitted {
                break;
            }
            out.records.push(record);
        }
        out.detections.push(probs);
    }
    out.seconds = start.elapsed().as_secs_f64();
    Ok(out)
}
