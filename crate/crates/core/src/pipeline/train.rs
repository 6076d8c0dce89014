use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{extract_corpus, InferenceConfig, TrainState};
use crate::backbone::{encode_document, DocInput, ModelParams};
use crate::corpus::{EventSchema, Example, Vocabulary};
use crate::elaborate_reading::{
    argument_repr, copy_loss, forced_copy_steps, locate_sentence, prepare_sentence, redundancy_gate, sentence_location_loss,
};
use crate::error::{Error, Result};
use crate::evaluation::evaluate;
use crate::graph::{Gradients, Graph, ParamStore, Var};
use crate::memory::{build_query, init_memory, role_embedding, update_memory};
use crate::rough_reading::{detect_event, rough_reading_loss};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda_rr: f64,
    pub lambda_sl: f64,
    pub lambda_ae: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub inference: InferenceConfig,
    /// Rescale the batch gradient to at most this global norm.
    pub clip_norm: Option<f64>,
    /// Stop after this many epochs without a better dev F1.
    pub patience: Option<usize>,
    /// Stop as soon as dev F1 reaches this value.
    pub target_f1: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_rr: 1.0,
            lambda_sl: 1.0,
            lambda_ae: 0.9,
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 4,
            seed: 0,
            inference: InferenceConfig::default(),
            clip_norm: Some(5.0),
            patience: None,
            target_f1: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if [self.lambda_rr, self.lambda_sl, self.lambda_ae].iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.inference.max_rounds == 0 {
            return Err(Error::Config("max_rounds must be positive".into()));
        }
        Ok(())
    }
}

/// `λ_rr·L_rr + λ_sl·L_sl + λ_ae·L_ae`
pub fn total_loss(l_rr: f64, l_sl: f64, l_ae: f64, cfg: &TrainConfig) -> f64 {
    cfg.lambda_rr * l_rr + cfg.lambda_sl * l_sl + cfg.lambda_ae * l_ae
}

/// The three loss terms of one document as `1 × 1` graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub rr: Var,
    pub sl: Var,
    pub ae: Var,
}

impl LossParts {
    pub fn weighted(&self, g: &mut Graph, cfg: &TrainConfig) -> Var {
        let a = g.scale(self.rr, cfg.lambda_rr);
        let b = g.scale(self.sl, cfg.lambda_sl);
        let c = g.scale(self.ae, cfg.lambda_ae);
        g.sum_scalars(&[a, b, c])
    }
}

/// Teacher-forced losses of one document. For each type with `G` gold
/// records, detection is supervised for `G + 1` rounds (positive, then one
/// negative) with the memory holding the gold arguments of the records
/// before; each gold record supervises location for every role and copying
/// for every filled role.
pub fn document_loss(g: &mut Graph, params: &ModelParams, vocab: &Vocabulary, ex: &Example) -> Result<LossParts> {
    let f = forced_pass(g, params, vocab, ex)?;
    Ok(LossParts {
        rr: rough_reading_loss(g, &f.rounds),
        sl: sentence_location_loss(g, &f.locations),
        ae: copy_loss(g, &f.copies),
    })
}

/// Teacher-forced detection probabilities with their round labels, in type
/// order.
pub fn forced_detections(params: &ModelParams, vocab: &Vocabulary, ex: &Example) -> Result<Vec<(f64, bool)>> {
    let mut g = Graph::new(&params.store);
    let f = forced_pass(&mut g, params, vocab, ex)?;
    Ok(f.rounds.iter().map(|&(p, y)| (g.scalar(p), y == 1.0)).collect())
}

struct ForcedPass {
    rounds: Vec<(Var, f64)>,
    locations: Vec<(Var, usize)>,
    copies: Vec<(Var, usize)>,
}

fn forced_pass(g: &mut Graph, params: &ModelParams, vocab: &Vocabulary, ex: &Example) -> Result<ForcedPass> {
    let enc = encode_document(g, params, &DocInput::from_document(&ex.doc, vocab))?;
    let mask: Option<Vec<bool>> = (!enc.sentence_mask.iter().all(|&m| m)).then(|| enc.sentence_mask.clone());
    let n = enc.num_sentences();
    let mut rounds = Vec::new();
    let mut locations = Vec::new();
    let mut copies = Vec::new();
    for t in 0..params.config.num_types() {
        let records = ex.records_of_type(t);
        let mut memory = init_memory(g, params, t);
        for k in 0..=records.len() {
            let det = detect_event(g, params, enc.doc_repr, &memory);
            rounds.push((det.p, if k < records.len() { 1.0 } else { 0.0 }));
            let Some(record) = records.get(k) else { break };
            let gated = redundancy_gate(g, params, det.summary, enc.sent_reprs);
            for (role, arg) in record.args.iter().enumerate() {
                let q = build_query(g, params, &memory, role);
                let z = locate_sentence(g, params, q, gated, mask.as_deref());
                locations.push((z, arg.as_ref().map_or(n, |a| a.sentence)));
                let Some(arg) = arg else { continue };
                let chars = enc.char_reprs[arg.sentence];
                let r = role_embedding(g, params, t, role);
                let enriched = prepare_sentence(g, params, chars, q, r);
                copies.extend(forced_copy_steps(g, q, enriched, arg.span, None));
                let indices: Vec<usize> = (arg.span.0..arg.span.1).collect();
                let a = argument_repr(g, chars, &indices);
                let s = g.row(enc.sent_reprs, arg.sentence);
                memory = update_memory(g, &memory, a, s);
            }
        }
    }
    Ok(ForcedPass { rounds, locations, copies })
}

/// Adaptive-moment optimizer over a whole [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl Adam {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        let zeros: Vec<Matrix> = store.iter().map(|(_, _, m)| Matrix::zeros(m.rows(), m.cols())).collect();
        Self { learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8, steps: 0, m: zeros.clone(), v: zeros }
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(grad) = grads.get(id) else { continue };
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let p = store.get_mut(id);
            for (((w, &gr), mi), vi) in p.data_mut().iter_mut().zip(grad.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gr;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gr * gr;
                *w -= self.learning_rate * (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    #[serde(rename = "L_rr")]
    pub l_rr: f64,
    #[serde(rename = "L_sl")]
    pub l_sl: f64,
    #[serde(rename = "L_ae")]
    pub l_ae: f64,
    #[serde(rename = "L_all")]
    pub l_all: f64,
}

/// One optimizer step on `batch`: per-document losses are summed over their
/// terms, averaged over the batch, and differentiated.
pub fn training_step(
    params: &mut ModelParams,
    adam: &mut Adam,
    batch: &[&Example],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    step: u64,
) -> Result<StepLog> {
    if batch.is_empty() {
        return Err(Error::Data("empty training batch".into()));
    }
    let p: &ModelParams = params;
    let per_doc: Vec<Result<([f64; 3], Gradients)>> = batch
        .par_iter()
        .map(|ex| {
            let mut g = Graph::new(&p.store);
            let parts = document_loss(&mut g, p, vocab, ex)?;
            let all = parts.weighted(&mut g, cfg);
            let values = [g.scalar(parts.rr), g.scalar(parts.sl), g.scalar(parts.ae)];
            if !g.scalar(all).is_finite() {
                return Err(Error::NonFinite(format!("loss of document {:?} is {:?}", ex.doc.doc_id, values)));
            }
            Ok((values, g.backward(all)))
        })
        .collect();
    let mut grads = Gradients::zeros_like(&params.store);
    let mut sums = [0.0; 3];
    for r in per_doc {
        let (v, gr) = r?;
        grads.accumulate(&gr);
        for (s, x) in sums.iter_mut().zip(v) {
            *s += x;
        }
    }
    let b = batch.len() as f64;
    grads.scale(1.0 / b);
    if let Some(id) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of {} at step {step}", params.store.name(id))));
    }
    if let Some(max) = cfg.clip_norm {
        let norm = grads.global_norm();
        if norm > max {
            grads.scale(max / norm);
        }
    }
    adam.update(&mut params.store, &grads);
    if !params.all_finite() {
        return Err(Error::NonFinite(format!("parameters after step {step}")));
    }
    let [rr, sl, ae] = sums.map(|s| s / b);
    Ok(StepLog { step, l_rr: rr, l_sl: sl, l_ae: ae, l_all: total_loss(rr, sl, ae, cfg) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev_f1: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochSummary>,
    pub best_dev_f1: Option<f64>,
    pub stopped_early: bool,
}

/// Event-level F1 of the current parameters on `examples`.
pub fn corpus_f1(params: &ModelParams, vocab: &Vocabulary, schema: &EventSchema, examples: &[Example], cfg: &InferenceConfig) -> Result<f64> {
    let docs: Vec<_> = examples.iter().map(|e| &e.doc).collect();
    let outs = extract_corpus(params, vocab, schema, &docs, cfg)?;
    let preds: Vec<_> = outs.into_iter().map(|o| (o.doc_id, o.records)).collect();
    Ok(evaluate(&preds, examples, schema)?.overall.f1)
}

/// Runs epochs from `state.epoch` up to `cfg.epochs`. Each epoch visits the
/// training set in an order fixed by the seed and the epoch number, so a
/// resumed run sees the same batches as an uninterrupted one. With a dev set,
/// the parameters of the best dev epoch are kept.
#[allow(clippy::too_many_arguments)]
pub fn train(
    params: &mut ModelParams,
    adam: &mut Adam,
    state: &mut TrainState,
    examples: &[Example],
    dev: Option<&[Example]>,
    vocab: &Vocabulary,
    schema: &EventSchema,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepLog),
    mut on_epoch: impl FnMut(&EpochSummary, &ModelParams, &Adam, &TrainState),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Data("no training documents".into()));
    }
    let mut outcome = TrainOutcome { epochs: Vec::new(), best_dev_f1: state.best_dev_f1, stopped_early: false };
    let mut best: Option<ParamStore> = None;
    let mut since_best = 0;
    while state.epoch < cfg.epochs {
        let start = std::time::Instant::now();
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(state.epoch as u64)));
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            state.step += 1;
            let log = training_step(params, adam, &batch, vocab, cfg, state.step)?;
            total += log.l_all;
            batches += 1;
            on_step(&log);
        }
        state.epoch += 1;
        let dev_f1 = dev.map(|d| corpus_f1(params, vocab, schema, d, &cfg.inference)).transpose()?;
        let summary = EpochSummary { epoch: state.epoch, mean_loss: total / batches as f64, dev_f1, seconds: start.elapsed().as_secs_f64() };
        if let Some(f1) = dev_f1 {
            if state.best_dev_f1.is_none_or(|b| f1 > b) {
                state.best_dev_f1 = Some(f1);
                best = Some(params.store.clone());
                since_best = 0;
            } else {
                since_best += 1;
            }
        }
        on_epoch(&summary, params, adam, state);
        outcome.epochs.push(summary);
        if cfg.target_f1.is_some_and(|t| dev_f1.is_some_and(|f| f >= t)) || cfg.patience.is_some_and(|p| since_best >= p) {
            outcome.stopped_early = state.epoch < cfg.epochs;
            break;
        }
    }
    if let Some(store) = best {
        params.store = store;
    }
    outcome.best_dev_f1 = state.best_dev_f1;
    Ok(outcome)
}
