//! Event-occurrence detection against the memory.

use crate::backbone::ModelParams;
use crate::graph::{Graph, Var};
use crate::memory::{summarize_memory, MemoryTensor};

/// Probability clamp applied before every logarithm in the losses.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug)]
pub struct DetectionResult {
    /// `1 × 1` probability that an unextracted record of the type remains.
    pub p: Var,
    /// `1 × d`, the document vector minus the summarized memory.
    pub redundancy_aware_doc: Var,
    /// `1 × d` summarized memory.
    pub summary: Var,
}

impl DetectionResult {
    pub fn prob(&self, g: &Graph) -> f64 {
        g.scalar(self.p)
    }
}

pub fn detect_event(g: &mut Graph, params: &ModelParams, doc_repr: Var, m: &MemoryTensor) -> DetectionResult {
    let summary = summarize_memory(g, params, m);
    detect_with_summary(g, params, doc_repr, summary, m.event_type)
}

/// Detection given an already summarized memory.
pub fn detect_with_summary(g: &mut Graph, params: &ModelParams, doc_repr: Var, summary: Var, event_type: usize) -> DetectionResult {
    let ids = &params.ids;
    let d_hat = if params.config.ablations.memory_in_detection { g.sub(doc_repr, summary) } else { doc_repr };
    let e = g.gather(ids.type_embed, &[event_type]);
    let (w_d, w_t, w_s) = (g.param(ids.w_d), g.param(ids.w_t), g.param(ids.w_s));
    let a = g.matmul_nt(d_hat, w_d);
    let b = g.matmul_nt(e, w_t);
    let h = g.add(a, b);
    let h = g.tanh(h);
    let logit = g.matmul_nt(h, w_s);
    let p = g.sigmoid(logit);
    DetectionResult { p, redundancy_aware_doc: d_hat, summary }
}

/// Summed binary cross-entropy over `(probability, label)` rounds.
pub fn rough_reading_loss(g: &mut Graph, rounds: &[(Var, f64)]) -> Var {
    let terms: Vec<Var> = rounds.iter().map(|&(p, y)| g.bce(p, y, PROB_CLAMP)).collect();
    g.sum_scalars(&terms)
}
