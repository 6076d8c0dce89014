use rayon::prelude::*;

use super::{extract_with, ExtractionOutput, InferenceConfig, Reader};
use crate::backbone::{encode_document, DocInput, EncodedDocument, ModelParams};
use crate::corpus::{Document, EventSchema, Vocabulary};
use crate::elaborate_reading::{argument_repr, attend, locate_sentence, prepare_sentence, redundancy_gate};
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::memory::{build_query, init_memory, role_embedding, update_memory, MemoryTensor};
use crate::rough_reading::detect_event;

/// The trained model behind the [`Reader`] interface.
pub struct NeuralReader<'p> {
    pub params: &'p ModelParams,
    pub vocab: &'p Vocabulary,
}

pub struct NeuralSession<'p> {
    pub graph: Graph<'p>,
    pub encoded: EncodedDocument,
}

impl NeuralSession<'_> {
    fn sentence_mask(&self) -> Option<&[bool]> {
        let m = &self.encoded.sentence_mask;
        (!m.iter().all(|&v| v)).then_some(&m[..])
    }
}

impl<'p> Reader for NeuralReader<'p> {
    type Session = NeuralSession<'p>;
    type Memory = MemoryTensor;
    /// Gated sentence matrix for the record being read.
    type Summary = Var;
    type Query = Var;
    /// Enriched sentence and the query.
    type Prepared = (Var, Var);

    fn open(&self, doc: &Document) -> Result<Self::Session> {
        let mut graph = Graph::new(&self.params.store);
        let encoded = encode_document(&mut graph, self.params, &DocInput::from_document(doc, self.vocab))?;
        Ok(NeuralSession { graph, encoded })
    }

    fn init_memory(&self, s: &mut Self::Session, event_type: usize) -> MemoryTensor {
        init_memory(&mut s.graph, self.params, event_type)
    }

    fn detect(&self, s: &mut Self::Session, m: &MemoryTensor) -> (f64, Var) {
        let d = detect_event(&mut s.graph, self.params, s.encoded.doc_repr, m);
        let gated = redundancy_gate(&mut s.graph, self.params, d.summary, s.encoded.sent_reprs);
        (d.prob(&s.graph), gated)
    }

    fn query(&self, s: &mut Self::Session, m: &MemoryTensor, role: usize) -> Var {
        build_query(&mut s.graph, self.params, m, role)
    }

    fn locate(&self, s: &mut Self::Session, gated: &Var, q: &Var) -> Vec<f64> {
        let mask = s.sentence_mask().map(<[bool]>::to_vec);
        let z = locate_sentence(&mut s.graph, self.params, *q, *gated, mask.as_deref());
        s.graph.value(z).row(0).to_vec()
    }

    fn prepare(&self, s: &mut Self::Session, q: &Var, event_type: usize, role: usize, sentence: usize) -> (Var, Var) {
        let r = role_embedding(&mut s.graph, self.params, event_type, role);
        let enriched = prepare_sentence(&mut s.graph, self.params, s.encoded.char_reprs[sentence], *q, r);
        (enriched, *q)
    }

    fn copy_scores(&self, s: &mut Self::Session, &(enriched, q): &(Var, Var), prev: Option<usize>) -> Vec<f64> {
        let v = match prev {
            None => q,
            Some(k) => s.graph.row(enriched, k),
        };
        let p = attend(&mut s.graph, v, enriched, None);
        s.graph.value(p).row(0).to_vec()
    }

    fn update_memory(&self, s: &mut Self::Session, m: &MemoryTensor, sentence: usize, indices: &[usize]) -> MemoryTensor {
        let arg = argument_repr(&mut s.graph, s.encoded.char_reprs[sentence], indices);
        let sent = s.graph.row(s.encoded.sent_reprs, sentence);
        update_memory(&mut s.graph, m, arg, sent)
    }
}

pub fn extract_document(
    params: &ModelParams,
    vocab: &Vocabulary,
    schema: &EventSchema,
    doc: &Document,
    cfg: &InferenceConfig,
) -> Result<ExtractionOutput> {
    extract_with(&NeuralReader { params, vocab }, doc, schema, cfg)
}

/// Extracts every document, in parallel, keeping input order.
pub fn extract_corpus(
    params: &ModelParams,
    vocab: &Vocabulary,
    schema: &EventSchema,
    docs: &[&Document],
    cfg: &InferenceConfig,
) -> Result<Vec<ExtractionOutput>> {
    docs.par_iter().map(|d| extract_document(params, vocab, schema, d, cfg)).collect()
}
