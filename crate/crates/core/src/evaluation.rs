//! Event-level scoring over role slots.
//!
//! Predicted and gold records of the same type are paired one-to-one so that
//! the total number of agreeing `(role, argument)` slots is maximal. Each
//! agreeing slot of a pair is a true positive; every other filled predicted
//! slot is a false positive and every other filled gold slot a false negative.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::corpus::{EventRecord, EventSchema, Example};
use crate::error::{Error, Result};

/// Largest side handled by the exact matcher; larger instances fall back to
/// [`greedy_match`].
pub const EXACT_MATCH_LIMIT: usize = 16;

pub fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Number of roles both records fill with the same (normalized) string.
pub fn slot_agreement(pred: &EventRecord, gold: &EventRecord) -> usize {
    pred.args
        .iter()
        .zip(&gold.args)
        .filter(|(p, g)| matches!((p, g), (Some(p), Some(g)) if normalize(p) == normalize(g)))
        .count()
}

fn overlaps(preds: &[EventRecord], golds: &[EventRecord]) -> Vec<Vec<usize>> {
    preds.iter().map(|p| golds.iter().map(|g| slot_agreement(p, g)).collect()).collect()
}

/// One-to-one pairing of predicted with gold records of one type, maximizing
/// the total slot agreement. Entry `i` is the gold partner of prediction `i`.
/// Among optimal pairings the one that gives each prediction, in order, the
/// lowest-indexed partner is returned; predictions agreeing on no slot stay
/// unpaired.
pub fn match_records(preds: &[EventRecord], golds: &[EventRecord]) -> Vec<Option<usize>> {
    let w = overlaps(preds, golds);
    if preds.len() > EXACT_MATCH_LIMIT && golds.len() > EXACT_MATCH_LIMIT {
        return greedy_from(&w, preds.len(), golds.len());
    }
    if golds.len() <= preds.len() {
        exact(&w, preds.len(), golds.len())
    } else {
        // Enumerate subsets of the predictions instead, then invert.
        let wt: Vec<Vec<usize>> = (0..golds.len()).map(|j| (0..preds.len()).map(|i| w[i][j]).collect()).collect();
        let by_gold = exact(&wt, golds.len(), preds.len());
        let total: usize = by_gold.iter().enumerate().filter_map(|(j, p)| p.map(|i| w[i][j])).sum();
        canonical(&w, preds.len(), golds.len(), total)
    }
}

/// Exact assignment where the partner side `m` is small enough to enumerate
/// as a bitmask.
fn exact(w: &[Vec<usize>], n: usize, m: usize) -> Vec<Option<usize>> {
    let best = best_table(w, n, m);
    reconstruct(w, n, m, &best)
}

/// `best[i][mask]`: maximal agreement of rows `i..` given partners `mask` taken.
fn best_table(w: &[Vec<usize>], n: usize, m: usize) -> Vec<Vec<usize>> {
    let full = 1usize << m;
    let mut best = vec![vec![0usize; full]; n + 1];
    for i in (0..n).rev() {
        for mask in 0..full {
            let mut b = best[i + 1][mask];
            for j in 0..m {
                if mask & (1 << j) == 0 && w[i][j] > 0 {
                    b = b.max(w[i][j] + best[i + 1][mask | (1 << j)]);
                }
            }
            best[i][mask] = b;
        }
    }
    best
}

fn reconstruct(w: &[Vec<usize>], n: usize, m: usize, best: &[Vec<usize>]) -> Vec<Option<usize>> {
    let mut mask = 0usize;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let target = best[i][mask];
        let pick = (0..m).find(|&j| mask & (1 << j) == 0 && w[i][j] > 0 && w[i][j] + best[i + 1][mask | (1 << j)] == target);
        if let Some(j) = pick {
            mask |= 1 << j;
        }
        out.push(pick);
    }
    out
}

/// Canonical pairing reaching `total` when the prediction side is the small
/// one: a depth-first search in prediction order, lowest partner first.
fn canonical(w: &[Vec<usize>], n: usize, m: usize, total: usize) -> Vec<Option<usize>> {
    // Upper bound of what rows i.. can still add, ignoring conflicts.
    let mut rest = vec![0usize; n + 1];
    for i in (0..n).rev() {
        rest[i] = rest[i + 1] + w[i].iter().copied().max().unwrap_or(0);
    }
    fn go(i: usize, acc: usize, used: &mut Vec<bool>, out: &mut Vec<Option<usize>>, w: &[Vec<usize>], rest: &[usize], total: usize) -> bool {
        if acc + rest[i] < total {
            return false;
        }
        if i == w.len() {
            return acc == total;
        }
        for j in 0..used.len() {
            if !used[j] && w[i][j] > 0 {
                used[j] = true;
                out.push(Some(j));
                if go(i + 1, acc + w[i][j], used, out, w, rest, total) {
                    return true;
                }
                out.pop();
                used[j] = false;
            }
        }
        out.push(None);
        if go(i + 1, acc, used, out, w, rest, total) {
            return true;
        }
        out.pop();
        false
    }
    let mut out = Vec::with_capacity(n);
    let found = go(0, 0, &mut vec![false; m], &mut out, w, &rest, total);
    debug_assert!(found);
    out
}

/// Repeatedly pairs the prediction and gold record with the most agreeing
/// slots (ties to the lower prediction, then the lower gold index). Not
/// always optimal; kept for reference and as the fallback for large inputs.
pub fn greedy_match(preds: &[EventRecord], golds: &[EventRecord]) -> Vec<Option<usize>> {
    greedy_from(&overlaps(preds, golds), preds.len(), golds.len())
}

fn greedy_from(w: &[Vec<usize>], n: usize, m: usize) -> Vec<Option<usize>> {
    let mut out = vec![None; n];
    let mut pred_used = vec![false; n];
    let mut gold_used = vec![false; m];
    loop {
        let mut best: Option<(usize, usize, usize)> = None;
        for i in (0..n).filter(|&i| !pred_used[i]) {
            for j in (0..m).filter(|&j| !gold_used[j]) {
                if w[i][j] > 0 && best.is_none_or(|(_, _, b)| w[i][j] > b) {
                    best = Some((i, j, w[i][j]));
                }
            }
        }
        let Some((i, j, _)) = best else { break };
        out[i] = Some(j);
        pred_used[i] = true;
        gold_used[j] = true;
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn metrics(self) -> Metrics {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let p = ratio(self.tp, self.tp + self.fp);
        let r = ratio(self.tp, self.tp + self.fn_);
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        Metrics { precision: p, recall: r, f1, counts: self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(flatten)]
    pub counts: Counts,
}

/// Slot counts for one type within one document.
pub fn score_records(preds: &[EventRecord], golds: &[EventRecord]) -> Counts {
    let pairs = match_records(preds, golds);
    let tp: usize = pairs.iter().enumerate().filter_map(|(i, j)| j.map(|j| slot_agreement(&preds[i], &golds[j]))).sum();
    let pred_slots: usize = preds.iter().map(EventRecord::filled).sum();
    let gold_slots: usize = golds.iter().map(EventRecord::filled).sum();
    Counts { tp, fp: pred_slots - tp, fn_: gold_slots - tp }
}

/// Per-type slot counts for one document.
pub fn score_document(preds: &[EventRecord], gold: &Example, num_types: usize) -> Vec<Counts> {
    (0..num_types)
        .map(|t| {
            let p: Vec<EventRecord> = preds.iter().filter(|r| r.event_type == t).cloned().collect();
            let g: Vec<EventRecord> = gold.gold.iter().filter(|r| r.event_type == t).map(|r| r.to_event_record()).collect();
            score_records(&p, &g)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Single,
    Multi,
}

/// `Single` for exactly one gold record, `Multi` for two or more, `None` for
/// documents without gold records.
pub fn split_of(ex: &Example) -> Option<Split> {
    match ex.gold.len() {
        0 => None,
        1 => Some(Split::Single),
        _ => Some(Split::Multi),
    }
}

pub fn split_single_multi(examples: &[Example]) -> (Vec<usize>, Vec<usize>) {
    let mut single = Vec::new();
    let mut multi = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        match split_of(ex) {
            Some(Split::Single) => single.push(i),
            Some(Split::Multi) => multi.push(i),
            None => {}
        }
    }
    (single, multi)
}

pub const BUCKET_LABELS: [&str; 5] = ["1", "2", "3", "4", ">=5"];

/// Mean number of distinct sentences per gold record.
pub fn scatter_degree(ex: &Example) -> Option<f64> {
    if ex.gold.is_empty() {
        return None;
    }
    Some(ex.gold.iter().map(|r| r.sentence_spread() as f64).sum::<f64>() / ex.gold.len() as f64)
}

/// Bucket index into [`BUCKET_LABELS`]: the floor of the scatter degree, with
/// everything from 5 up in the last bucket.
pub fn scatter_bucket(ex: &Example) -> Option<usize> {
    scatter_degree(ex).map(|v| (v.floor() as usize).clamp(1, 5) - 1)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupScore {
    pub label: String,
    pub docs: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreReport {
    pub documents: usize,
    pub overall: Metrics,
    pub per_type: Vec<GroupScore>,
    pub splits: Vec<GroupScore>,
    pub buckets: Vec<GroupScore>,
    /// Documents per second of the extraction run, when known.
    pub throughput: Option<f64>,
}

/// Scores predictions, keyed by document id, against gold examples. Gold
/// documents without predictions count as predicting nothing.
pub fn evaluate(predictions: &[(String, Vec<EventRecord>)], gold: &[Example], schema: &EventSchema) -> Result<ScoreReport> {
    let mut by_id: HashMap<&str, &[EventRecord]> = HashMap::new();
    for (id, recs) in predictions {
        if by_id.insert(id.as_str(), recs).is_some() {
            return Err(Error::Data(format!("duplicate predictions for document {id:?}")));
        }
    }
    let gold_ids: std::collections::HashSet<&str> = gold.iter().map(|e| e.doc.doc_id.as_str()).collect();
    if let Some((id, _)) = predictions.iter().find(|(id, _)| !gold_ids.contains(id.as_str())) {
        return Err(Error::Data(format!("prediction for unknown document {id:?}")));
    }
    let nt = schema.num_types();
    let mut per_type = vec![Counts::default(); nt];
    let mut splits = [(0usize, Counts::default()); 2];
    let mut buckets = [(0usize, Counts::default()); 5];
    let mut overall = Counts::default();
    for ex in gold {
        let preds = by_id.get(ex.doc.doc_id.as_str()).copied().unwrap_or(&[]);
        for r in preds {
            if r.event_type >= nt || r.args.len() != schema.num_roles(r.event_type) {
                return Err(Error::Schema(format!("{}: predicted record does not fit the schema", ex.doc.doc_id)));
            }
        }
        let counts = score_document(preds, ex, nt);
        let mut doc = Counts::default();
        for (t, c) in counts.into_iter().enumerate() {
            per_type[t].add(c);
            doc.add(c);
        }
        overall.add(doc);
        if let Some(s) = split_of(ex) {
            let slot = &mut splits[s as usize];
            slot.0 += 1;
            slot.1.add(doc);
        }
        if let Some(b) = scatter_bucket(ex) {
            buckets[b].0 += 1;
            buckets[b].1.add(doc);
        }
    }
    let group = |label: &str, docs: usize, c: Counts| GroupScore { label: label.to_string(), docs, metrics: c.metrics() };
    Ok(ScoreReport {
        documents: gold.len(),
        overall: overall.metrics(),
        per_type: per_type.iter().enumerate().map(|(t, &c)| group(schema.type_name(t), gold.iter().filter(|e| e.gold.iter().any(|r| r.event_type == t)).count(), c)).collect(),
        splits: vec![group("single", splits[0].0, splits[0].1), group("multi", splits[1].0, splits[1].1)],
        buckets: BUCKET_LABELS.iter().zip(buckets).map(|(l, (n, c))| group(l, n, c)).collect(),
        throughput: None,
    })
}

impl ScoreReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Fixed-width text rendering with the same numbers as the JSON form.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let row = |s: &mut String, name: &str, docs: usize, m: &Metrics| {
            let _ = writeln!(
                s,
                "{:<16} {:>6} {:>8.4} {:>8.4} {:>8.4} {:>7} {:>7} {:>7}",
                name, docs, m.precision, m.recall, m.f1, m.counts.tp, m.counts.fp, m.counts.fn_
            );
        };
        let header = format!("{:<16} {:>6} {:>8} {:>8} {:>8} {:>7} {:>7} {:>7}\n", "group", "docs", "P", "R", "F1", "TP", "FP", "FN");
        s.push_str(&header);
        row(&mut s, "overall", self.documents, &self.overall);
        s.push_str("-- per type\n");
        for g in &self.per_type {
            row(&mut s, &g.label, g.docs, &g.metrics);
        }
        s.push_str("-- single/multi\n");
        for g in &self.splits {
            row(&mut s, &g.label, g.docs, &g.metrics);
        }
        s.push_str("-- sentences per record\n");
        for g in &self.buckets {
            row(&mut s, &g.label, g.docs, &g.metrics);
        }
        if let Some(t) = self.throughput {
            let _ = writeln!(s, "throughput {t:.2} docs/sec");
        }
        s
    }
}
