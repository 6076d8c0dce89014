//! Per-role argument extraction: gate, locate, enrich, copy.

use serde::Serialize;

use crate::backbone::ModelParams;
use crate::graph::{Graph, Var};
use crate::rough_reading::PROB_CLAMP;
use crate::tensor::Matrix;

/// Gated sentence vectors `s − s ⊙ σ([m̂ ; s] · W_lᵀ)`, `N × d`.
pub fn redundancy_gate(g: &mut Graph, params: &ModelParams, summary: Var, sent_reprs: Var) -> Var {
    if !params.config.ablations.redundancy_gate {
        return sent_reprs;
    }
    let n = g.shape(sent_reprs).0;
    let m = g.broadcast_rows(summary, n);
    let x = g.concat_cols(m, sent_reprs);
    let w = g.param(params.ids.w_l);
    let pre = g.matmul_nt(x, w);
    let gate = g.sigmoid(pre);
    let filtered = g.mul(sent_reprs, gate);
    g.sub(sent_reprs, filtered)
}

/// `softmax(v · rowsᵀ / √d)` as a `1 × rows` probability row.
pub fn attend(g: &mut Graph, v: Var, rows: Var, valid: Option<&[bool]>) -> Var {
    let d = g.shape(v).1 as f64;
    let s = g.matmul_nt(v, rows);
    let s = g.scale(s, 1.0 / d.sqrt());
    g.softmax(s, valid, None)
}

/// Lowest index among the maximal entries.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SentenceLocation {
    /// `N + 1` probabilities; the last entry is the null sentence.
    pub scores: Vec<f64>,
    /// In `0..=N`; `N` means the role stays empty.
    pub chosen: usize,
}

impl SentenceLocation {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        Self { chosen: argmax(&scores), scores }
    }

    pub fn is_null(&self) -> bool {
        self.chosen + 1 == self.scores.len()
    }
}

/// Location distribution over the gated sentences plus the null sentence.
/// Returns the `1 × (N+1)` probability node.
pub fn locate_sentence(g: &mut Graph, params: &ModelParams, query: Var, gated: Var, sentence_mask: Option<&[bool]>) -> Var {
    let null = g.param(params.ids.null_sentence);
    let rows = g.concat_rows(&[gated, null]);
    let valid: Option<Vec<bool>> = sentence_mask.map(|m| m.iter().copied().chain([true]).collect());
    attend(g, query, rows, valid.as_deref())
}

/// Enriched sentence: each character row plus the query, then the STOP row
/// (the raw role embedding). `(n+1) × d`.
pub fn prepare_sentence(g: &mut Graph, params: &ModelParams, chars: Var, query: Var, role_embed: Var) -> Var {
    let rows = if params.config.ablations.query_enrichment { g.add_row(chars, query) } else { chars };
    g.concat_rows(&[rows, role_embed])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CopyTrace {
    /// Copied character positions, in copy order.
    pub indices: Vec<usize>,
    pub terminated_by_stop: bool,
    pub step_scores: Vec<Vec<f64>>,
}

impl CopyTrace {
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Greedy copy over a sentence of `n` characters whose STOP position is `n`.
/// `scores(prev)` gives the step distribution after copying `prev` (`None`
/// at the first step). Stops on STOP or after `n + 1` steps.
pub fn copy_loop(n: usize, mut scores: impl FnMut(Option<usize>) -> Vec<f64>) -> CopyTrace {
    let mut trace = CopyTrace { indices: Vec::new(), terminated_by_stop: false, step_scores: Vec::new() };
    let mut prev = None;
    for _ in 0..=n {
        let s = scores(prev);
        let k = argmax(&s);
        trace.step_scores.push(s);
        if k == n {
            trace.terminated_by_stop = true;
            break;
        }
        trace.indices.push(k);
        prev = Some(k);
    }
    trace
}

/// Copy driven directly by an enriched sentence matrix: the first step
/// attends with `query`, every later step with the row just copied.
/// `valid` masks padded characters (it has `n + 1` entries, STOP included).
pub fn copy_argument(query: &[f64], enriched: &Matrix, valid: Option<&[bool]>) -> CopyTrace {
    let n = enriched.rows() - 1;
    let scale = 1.0 / (enriched.cols() as f64).sqrt();
    copy_loop(n, |prev| {
        let v = prev.map_or(query, |k| enriched.row(k));
        let logits: Vec<f64> = (0..=n).map(|r| dot(v, enriched.row(r)) * scale).collect();
        masked_softmax(&logits, valid)
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn masked_softmax(logits: &[f64], valid: Option<&[bool]>) -> Vec<f64> {
    let ok = |i: usize| valid.is_none_or(|m| m[i]);
    let max = (0..logits.len()).filter(|&i| ok(i)).map(|i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = (0..logits.len()).map(|i| if ok(i) { (logits[i] - max).exp() } else { 0.0 }).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractedArgument {
    pub role: String,
    pub text: String,
    pub sentence_index: usize,
    pub filled: bool,
}

impl ExtractedArgument {
    pub fn from_trace(role: &str, sentence: &[char], sentence_index: usize, trace: &CopyTrace) -> Self {
        let text: String = trace.indices.iter().map(|&k| sentence[k]).collect();
        Self { role: role.to_string(), filled: !text.is_empty(), text, sentence_index }
    }
}

/// Element-wise maximum of the original character rows at `indices`.
/// Panics on an empty index list.
pub fn argument_repr(g: &mut Graph, chars: Var, indices: &[usize]) -> Var {
    assert!(!indices.is_empty(), "argument representation of an empty copy");
    let contiguous = indices.windows(2).all(|w| w[1] == w[0] + 1);
    let rows = if contiguous {
        g.slice_rows(chars, indices[0], indices[indices.len() - 1] + 1)
    } else {
        let parts: Vec<Var> = indices.iter().map(|&k| g.row(chars, k)).collect();
        g.concat_rows(&parts)
    };
    g.max_pool_rows(rows, None)
}

/// Summed `−ln z[gold]` over located roles.
pub fn sentence_location_loss(g: &mut Graph, locations: &[(Var, usize)]) -> Var {
    pick_loss(g, locations)
}

/// Summed `−ln score[gold]` over teacher-forced copy steps.
pub fn copy_loss(g: &mut Graph, steps: &[(Var, usize)]) -> Var {
    pick_loss(g, steps)
}

fn pick_loss(g: &mut Graph, items: &[(Var, usize)]) -> Var {
    let terms: Vec<Var> = items.iter().map(|&(p, i)| g.neg_log_pick(p, i, PROB_CLAMP)).collect();
    g.sum_scalars(&terms)
}

/// Teacher-forced copy over gold positions `span` followed by STOP: returns
/// one `(scores, gold index)` pair per step.
pub fn forced_copy_steps(g: &mut Graph, query: Var, enriched: Var, span: (usize, usize), valid: Option<&[bool]>) -> Vec<(Var, usize)> {
    let stop = g.shape(enriched).0 - 1;
    let mut v = query;
    let mut steps = Vec::with_capacity(span.1 - span.0 + 1);
    for gold in (span.0..span.1).chain([stop]) {
        let p = attend(g, v, enriched, valid);
        steps.push((p, gold));
        if gold != stop {
            v = g.row(enriched, gold);
        }
    }
    steps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::ModelConfig;
    use crate::corpus::EventSchema;
    use crate::graph::sigmoid;
    use proptest::prelude::*;

    fn params(dim: usize) -> ModelParams {
        let schema = EventSchema::new(vec!["A".into()], vec![vec!["x".into()]]).unwrap();
        ModelParams::init(ModelConfig { seed: 9, ..ModelConfig::new(dim, 1, 1, 4, &schema) }).unwrap()
    }

    #[test]
    fn zero_gate_weights_halve_sentences() {
        let mut p = params(3);
        *p.store.get_mut(p.ids.w_l) = Matrix::zeros(3, 6);
        let mut g = Graph::new(&p.store);
        let m = g.constant(Matrix::row_vector(vec![5.0, -1.0, 2.0]));
        let s = g.constant(Matrix::from_rows(&[vec![2.0, -4.0, 1.0], vec![0.0, 6.0, 3.0]]));
        let out = redundancy_gate(&mut g, &p, m, s);
        assert_eq!(g.value(out), &Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.0, 3.0, 1.5]]));
    }

    #[test]
    fn scalar_gate() {
        // W_l = [0, 1] so the pre-activation is s itself; pick s = ln 3.
        let mut p = params(1);
        *p.store.get_mut(p.ids.w_l) = Matrix::row_vector(vec![1.0, 0.0]);
        let mut g = Graph::new(&p.store);
        let m = g.constant(Matrix::scalar(3f64.ln()));
        let s = g.constant(Matrix::scalar(2.0));
        let out = redundancy_gate(&mut g, &p, m, s);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        assert!((g.scalar(out) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn closed_gate_keeps_sentence() {
        let mut p = params(1);
        *p.store.get_mut(p.ids.w_l) = Matrix::row_vector(vec![0.0, -1.0]);
        let mut g = Graph::new(&p.store);
        let m = g.constant(Matrix::scalar(0.0));
        let s = g.constant(Matrix::scalar(40.0));
        let out = redundancy_gate(&mut g, &p, m, s);
        assert!((g.scalar(out) - 40.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_location() {
        let p = params(1);
        let mut g = Graph::new(&p.store);
        let q = g.constant(Matrix::scalar(2.0));
        let rows = g.constant(Matrix::from_rows(&[vec![1.0], vec![3.0]]));
        let z = attend(&mut g, q, rows, None);
        let loc = SentenceLocation::from_scores(g.value(z).row(0).to_vec());
        let want0 = 1.0 / (1.0 + 4f64.exp());
        assert!((loc.scores[0] - want0).abs() < 1e-12);
        assert!((loc.scores[0] - 0.018).abs() < 1e-3);
        assert_eq!(loc.chosen, 1);
    }

    #[test]
    fn null_row_is_appended_and_masked_sentences_get_zero() {
        let mut p = params(2);
        *p.store.get_mut(p.ids.null_sentence) = Matrix::zeros(1, 2);
        let mut g = Graph::new(&p.store);
        let q = g.constant(Matrix::row_vector(vec![1.0, 0.0]));
        let s = g.constant(Matrix::from_rows(&[vec![3.0, 0.0], vec![9.0, 0.0]]));
        let z = locate_sentence(&mut g, &p, q, s, Some(&[true, false]));
        let loc = SentenceLocation::from_scores(g.value(z).row(0).to_vec());
        assert_eq!(loc.scores.len(), 3);
        assert_eq!(loc.scores[1], 0.0);
        assert_eq!(loc.chosen, 0);
        assert!(!loc.is_null());
    }

    #[test]
    fn identical_rows_tie_to_first() {
        let p = params(2);
        let mut g = Graph::new(&p.store);
        let q = g.constant(Matrix::row_vector(vec![1.0, 1.0]));
        let rows = g.constant(Matrix::filled(3, 2, 0.7));
        let z = attend(&mut g, q, rows, None);
        let loc = SentenceLocation::from_scores(g.value(z).row(0).to_vec());
        for s in &loc.scores {
            assert!((s - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(loc.chosen, 0);
    }

    #[test]
    fn prepared_sentence_shape_and_stop_row() {
        let p = params(2);
        let mut g = Graph::new(&p.store);
        let chars = g.constant(Matrix::from_rows(&[vec![1.0, 2.0]]));
        let q = g.constant(Matrix::zeros(1, 2));
        let r = g.constant(Matrix::row_vector(vec![7.0, 8.0]));
        let s = prepare_sentence(&mut g, &p, chars, q, r);
        assert_eq!(g.value(s), &Matrix::from_rows(&[vec![1.0, 2.0], vec![7.0, 8.0]]));
    }

    #[test]
    fn immediate_stop_gives_empty_argument() {
        let enriched = Matrix::from_rows(&[vec![0.0, 1.0], vec![5.0, 0.0]]);
        let t = copy_argument(&[1.0, 0.0], &enriched, None);
        assert!(t.is_empty() && t.terminated_by_stop);
        let arg = ExtractedArgument::from_trace("x", &['a'], 0, &t);
        assert!(!arg.filled && arg.text.is_empty());
    }

    #[test]
    fn crafted_rows_copy_two_then_stop() {
        // query·row2 = 1; row2·row3 = 3 > row2·row2 = 2; row3·STOP = 11 > row3·row3 = 10.
        let enriched = Matrix::from_rows(&[
            vec![0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0],
            vec![1.0, 1.0, 0.0, 0.0],
            vec![0.0, 3.0, 1.0, 0.0],
            vec![0.0, 0.0, 11.0, 0.0],
        ]);
        let t = copy_argument(&[1.0, 0.0, 0.0, 0.0], &enriched, None);
        assert_eq!(t.indices, vec![2, 3]);
        assert!(t.terminated_by_stop);
        assert_eq!(t.step_scores.len(), 3);
    }

    #[test]
    fn cycling_rows_hit_the_cap() {
        let enriched = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0]]);
        let t = copy_argument(&[1.0, 0.0], &enriched, None);
        assert!(!t.terminated_by_stop);
        assert_eq!(t.indices.len(), 3);
    }

    #[test]
    fn argument_repr_pools_original_rows() {
        let p = params(2);
        let mut g = Graph::new(&p.store);
        let chars = g.constant(Matrix::from_rows(&[vec![1.0, -1.0], vec![0.0, 5.0], vec![3.0, 2.0]]));
        let one = argument_repr(&mut g, chars, &[1]);
        assert_eq!(g.value(one).row(0), &[0.0, 5.0]);
        let two = argument_repr(&mut g, chars, &[2, 0]);
        assert_eq!(g.value(two).row(0), &[3.0, 2.0]);
        let span = argument_repr(&mut g, chars, &[0, 1, 2]);
        assert_eq!(g.value(span).row(0), &[3.0, 5.0]);
    }

    #[test]
    fn losses() {
        let p = params(1);
        let mut g = Graph::new(&p.store);
        let uniform = g.constant(Matrix::row_vector(vec![0.5, 0.5]));
        let l = sentence_location_loss(&mut g, &[(uniform, 0)]);
        assert!((g.scalar(l) - 2f64.ln()).abs() < 1e-15);
        let l2 = sentence_location_loss(&mut g, &[(uniform, 0), (uniform, 1)]);
        assert!((g.scalar(l2) - 2.0 * 2f64.ln()).abs() < 1e-15);
        let peaked = g.constant(Matrix::row_vector(vec![0.0, 1.0]));
        let l3 = copy_loss(&mut g, &[(peaked, 1)]);
        assert_eq!(g.scalar(l3), 0.0);
    }

    #[test]
    fn one_char_argument_has_two_copy_terms() {
        let p = params(2);
        let mut g = Graph::new(&p.store);
        let q = g.constant(Matrix::row_vector(vec![0.1, 0.2]));
        let s = g.constant(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]));
        let steps = forced_copy_steps(&mut g, q, s, (1, 2), None);
        assert_eq!(steps.iter().map(|s| s.1).collect::<Vec<_>>(), vec![1, 2]);
    }

    proptest! {
        #[test]
        fn copy_terminates_within_cap(rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 2..8), q in prop::collection::vec(-5.0f64..5.0, 3)) {
            let m = Matrix::from_rows(&rows);
            let t = copy_argument(&q, &m, None);
            prop_assert!(t.step_scores.len() <= m.rows());
            prop_assert!(t.indices.iter().all(|&k| k < m.rows() - 1));
            for s in &t.step_scores {
                prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn argmax_is_shift_invariant(logits in prop::collection::vec(-20.0f64..20.0, 1..9), c in -50.0f64..50.0) {
            let a = masked_softmax(&logits, None);
            let shifted: Vec<f64> = logits.iter().map(|x| x + c).collect();
            let b = masked_softmax(&shifted, None);
            prop_assert_eq!(argmax(&a), argmax(&logits));
            prop_assert_eq!(argmax(&a), argmax(&b));
        }

        #[test]
        fn gate_shrinks_nonnegative_sentences(s in prop::collection::vec(0.0f64..10.0, 4), m in prop::collection::vec(-3.0f64..3.0, 4)) {
            let p = params(4);
            let mut g = Graph::new(&p.store);
            let sv = g.constant(Matrix::row_vector(s.clone()));
            let mv = g.constant(Matrix::row_vector(m));
            let out = redundancy_gate(&mut g, &p, mv, sv);
            for (o, x) in g.value(out).row(0).iter().zip(&s) {
                prop_assert!(*o >= 0.0 && *o <= *x);
            }
        }

        #[test]
        fn text_matches_trace(chars in prop::collection::vec(prop::char::range('a', 'z'), 1..8), seed in 0u64..100) {
            let n = chars.len();
            let rows: Vec<Vec<f64>> = (0..=n).map(|r| (0..3).map(|c| (((r * 7 + c * 3) as u64 + seed) % 11) as f64 - 5.0).collect()).collect();
            let t = copy_argument(&[1.0, -1.0, 0.5], &Matrix::from_rows(&rows), None);
            let arg = ExtractedArgument::from_trace("x", &chars, 0, &t);
            let want: String = t.indices.iter().map(|&k| chars[k]).collect();
            prop_assert_eq!(arg.text, want);
        }
    }
}
