//! Deterministic synthetic corpus with exact gold provenance.
//!
//! Documents are sequences of CJK-range characters drawn from disjoint pools:
//! filler characters, argument characters, one cue character per (type, role)
//! and one trigger character per type. Each record occupies its own block of
//! `scattering degree` sentences; the block's first sentence opens with the
//! type trigger and each argument is written right after its role cue.
//! Argument-free filler sentences are sprinkled between blocks. Blocks appear
//! in record order, so generation order is also the canonical record order.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ArgProvenance, Document, EventSchema, Example, GoldRecord, DEFAULT_MAX_SENTENCES, DEFAULT_MAX_SENTENCE_LEN};
use crate::error::{Error, Result};

const FILLER_BASE: u32 = 0x4E00;
const ENTITY_BASE: u32 = 0x5E00;
const CUE_BASE: u32 = 0x6E00;
const TRIGGER_BASE: u32 = 0x7E00;
const POOL_LIMIT: usize = 0x1000;
const SENTENCE_END: char = '。';

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EventsPerDoc {
    Fixed(usize),
    /// One record with probability `1 - multi_fraction`, otherwise a uniform
    /// count in `2..=max_events`.
    Mixed { multi_fraction: f64, max_events: usize },
}

impl EventsPerDoc {
    fn max(&self) -> usize {
        match *self {
            EventsPerDoc::Fixed(n) => n,
            EventsPerDoc::Mixed { max_events, .. } => max_events,
        }
    }
}

/// Number of distinct sentences one record's arguments are spread over.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScatterDist {
    Fixed(usize),
    Uniform { min: usize, max: usize },
}

impl ScatterDist {
    fn bounds(&self) -> (usize, usize) {
        match *self {
            ScatterDist::Fixed(k) => (k, k),
            ScatterDist::Uniform { min, max } => (min, max),
        }
    }

    pub fn mean(&self) -> f64 {
        let (a, b) = self.bounds();
        (a + b) as f64 / 2.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub docs: usize,
    pub num_types: usize,
    pub roles_per_type: usize,
    /// Distinct filler characters.
    pub filler_chars: usize,
    /// Distinct argument characters.
    pub entity_chars: usize,
    pub events_per_doc: EventsPerDoc,
    /// All records of a document share one event type.
    pub same_type_records: bool,
    pub scatter: ScatterDist,
    pub role_fill_prob: f64,
    /// Inclusive argument length range, in characters.
    pub arg_len: (usize, usize),
    /// Inclusive range of filler characters before each argument segment.
    pub filler_len: (usize, usize),
    /// Inclusive range of argument-free sentences per document.
    pub extra_sentences: (usize, usize),
    pub max_sentences: usize,
    pub max_sentence_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            docs: 1000,
            num_types: 3,
            roles_per_type: 4,
            filler_chars: 40,
            entity_chars: 30,
            events_per_doc: EventsPerDoc::Mixed { multi_fraction: 0.29, max_events: 3 },
            same_type_records: false,
            scatter: ScatterDist::Uniform { min: 1, max: 4 },
            role_fill_prob: 0.9,
            arg_len: (2, 3),
            filler_len: (1, 3),
            extra_sentences: (0, 2),
            max_sentences: DEFAULT_MAX_SENTENCES,
            max_sentence_len: DEFAULT_MAX_SENTENCE_LEN,
        }
    }
}

impl SynthConfig {
    pub fn schema(&self) -> EventSchema {
        let types = (0..self.num_types).map(|t| format!("Type{t}")).collect();
        let roles = (0..self.num_types).map(|_| (0..self.roles_per_type).map(|r| format!("Role{r}")).collect()).collect();
        EventSchema::new(types, roles).expect("generated schema is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_types == 0 || self.roles_per_type == 0 {
            return bad("need at least one event type and one role".into());
        }
        if self.filler_chars == 0 || self.filler_chars > POOL_LIMIT || self.entity_chars == 0 || self.entity_chars > POOL_LIMIT {
            return bad(format!("character pools must hold 1..={POOL_LIMIT} characters"));
        }
        if self.num_types * self.roles_per_type > POOL_LIMIT {
            return bad("too many (type, role) cue characters".into());
        }
        if !(0.0..=1.0).contains(&self.role_fill_prob) {
            return bad("role_fill_prob must lie in [0, 1]".into());
        }
        if let EventsPerDoc::Mixed { multi_fraction, max_events } = self.events_per_doc {
            if !(0.0..=1.0).contains(&multi_fraction) || max_events < 2 {
                return bad("mixed events need multi_fraction in [0, 1] and max_events >= 2".into());
            }
        }
        let (smin, smax) = self.scatter.bounds();
        if smin == 0 || smin > smax {
            return bad(format!("scatter range {smin}..={smax} is empty or starts at zero"));
        }
        if smax > self.roles_per_type {
            return bad(format!("scatter degree {smax} exceeds the {} roles available", self.roles_per_type));
        }
        if self.arg_len.0 == 0 || self.arg_len.0 > self.arg_len.1 || self.filler_len.0 > self.filler_len.1 {
            return bad("argument and filler length ranges must be non-empty".into());
        }
        if self.extra_sentences.0 > self.extra_sentences.1 {
            return bad("extra sentence range is empty".into());
        }
        let worst_sentences = self.events_per_doc.max() * smax + self.extra_sentences.1;
        if worst_sentences.max(1) > self.max_sentences {
            return bad(format!(
                "documents may need {worst_sentences} sentences but max_sentences is {}",
                self.max_sentences
            ));
        }
        // trigger + every role in one sentence + trailing filler + terminator
        let worst_len = 1 + self.roles_per_type * (self.filler_len.1 + 1 + self.arg_len.1) + self.filler_len.1 + 1;
        if worst_len > self.max_sentence_len {
            return bad(format!(
                "a sentence may need {worst_len} characters but max_sentence_len is {}",
                self.max_sentence_len
            ));
        }
        Ok(())
    }
}

fn pool_char(base: u32, i: usize) -> char {
    char::from_u32(base + i as u32).expect("pool stays inside the CJK block")
}

struct Segment {
    role: usize,
    arg: Vec<char>,
}

/// Generates `cfg.docs` documents. Identical `(cfg, seed)` gives identical output.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<Vec<Example>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cfg.docs).map(|i| generate_doc(cfg, &mut rng, format!("synth-{seed}-{i:05}"))).collect()
}

fn generate_doc(cfg: &SynthConfig, rng: &mut ChaCha8Rng, doc_id: String) -> Result<Example> {
    let n_events = match cfg.events_per_doc {
        EventsPerDoc::Fixed(n) => n,
        EventsPerDoc::Mixed { multi_fraction, max_events } => {
            if rng.gen_bool(multi_fraction) {
                rng.gen_range(2..=max_events)
            } else {
                1
            }
        }
    };
    let doc_type = rng.gen_range(0..cfg.num_types);
    let mut used_args: Vec<Vec<char>> = Vec::new();
    let filler = |rng: &mut ChaCha8Rng, lo: usize, hi: usize| -> Vec<char> {
        let n = rng.gen_range(lo..=hi);
        (0..n).map(|_| pool_char(FILLER_BASE, rng.gen_range(0..cfg.filler_chars))).collect()
    };

    // (sentence chars, per-argument (record, role, start, len))
    let mut sentences: Vec<(Vec<char>, Vec<(usize, usize, usize, usize)>)> = Vec::new();
    let mut record_types = Vec::with_capacity(n_events);
    for rec in 0..n_events {
        let t = if cfg.same_type_records { doc_type } else { rng.gen_range(0..cfg.num_types) };
        record_types.push(t);
        let mut filled: Vec<usize> = (0..cfg.roles_per_type).filter(|_| rng.gen_bool(cfg.role_fill_prob)).collect();
        if filled.is_empty() {
            filled.push(rng.gen_range(0..cfg.roles_per_type));
        }
        let (smin, smax) = cfg.scatter.bounds();
        let degree = rng.gen_range(smin..=smax).min(filled.len());

        let mut order = filled.clone();
        order.shuffle(rng);
        let mut per_sentence: Vec<Vec<Segment>> = (0..degree).map(|_| Vec::new()).collect();
        for (k, &role) in order.iter().enumerate() {
            let slot = if k < degree { k } else { rng.gen_range(0..degree) };
            let arg = loop {
                let len = rng.gen_range(cfg.arg_len.0..=cfg.arg_len.1);
                let cand: Vec<char> = (0..len).map(|_| pool_char(ENTITY_BASE, rng.gen_range(0..cfg.entity_chars))).collect();
                if !used_args.contains(&cand) {
                    break cand;
                }
            };
            used_args.push(arg.clone());
            per_sentence[slot].push(Segment { role, arg });
        }
        for (k, mut segs) in per_sentence.into_iter().enumerate() {
            segs.sort_by_key(|s| s.role);
            let mut chars = Vec::new();
            if k == 0 {
                chars.push(pool_char(TRIGGER_BASE, t));
            }
            let mut spans = Vec::new();
            for s in segs {
                chars.extend(filler(rng, cfg.filler_len.0, cfg.filler_len.1));
                chars.push(pool_char(CUE_BASE, t * cfg.roles_per_type + s.role));
                spans.push((rec, s.role, chars.len(), s.arg.len()));
                chars.extend(&s.arg);
            }
            chars.extend(filler(rng, cfg.filler_len.0, cfg.filler_len.1));
            chars.push(SENTENCE_END);
            sentences.push((chars, spans));
        }
    }
    let extra = rng.gen_range(cfg.extra_sentences.0..=cfg.extra_sentences.1);
    for _ in 0..extra {
        let at = rng.gen_range(0..=sentences.len());
        let mut chars = filler(rng, 3, 3 + 2 * cfg.filler_len.1.max(1));
        chars.push(SENTENCE_END);
        sentences.insert(at, (chars, Vec::new()));
    }
    if sentences.is_empty() {
        let mut chars = filler(rng, 3, 3 + 2 * cfg.filler_len.1.max(1));
        chars.push(SENTENCE_END);
        sentences.push((chars, Vec::new()));
    }

    let mut gold: Vec<GoldRecord> =
        record_types.iter().map(|&t| GoldRecord { event_type: t, args: vec![None; cfg.roles_per_type] }).collect();
    for (j, (chars, spans)) in sentences.iter().enumerate() {
        for &(rec, role, start, len) in spans {
            gold[rec].args[role] = Some(ArgProvenance {
                text: chars[start..start + len].iter().collect(),
                sentence: j,
                span: (start, start + len),
            });
        }
    }
    let doc = Document::new(doc_id, sentences.into_iter().map(|(c, _)| c.into_iter().collect()).collect());
    Ok(Example { doc, gold })
}
