use super::Reader;
use crate::corpus::{Document, Example, GoldRecord};
use crate::error::{Error, Result};

/// Answers every query from gold annotations: detection fires while gold
/// records of the type remain, location and copy put all mass on the gold
/// sentence and characters. Records are read in canonical order.
pub struct OracleReader<'a> {
    examples: std::collections::HashMap<&'a str, &'a Example>,
}

impl<'a> OracleReader<'a> {
    pub fn new(examples: &'a [Example]) -> Self {
        Self { examples: examples.iter().map(|e| (e.doc.doc_id.as_str(), e)).collect() }
    }
}

pub struct OracleSession<'a> {
    example: &'a Example,
    n_sentences: usize,
    /// Record chosen by the latest detection.
    current: usize,
}

/// Event type and number of arguments appended so far.
#[derive(Clone, Copy, Debug)]
pub struct OracleMemory {
    event_type: usize,
    appended: usize,
}

fn one_hot(len: usize, at: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[at] = 1.0;
    v
}

impl<'a> OracleSession<'a> {
    fn records(&self, t: usize) -> Vec<&'a GoldRecord> {
        self.example.records_of_type(t)
    }

    /// Records fully read, recovered from the memory size.
    fn done(&self, m: &OracleMemory) -> usize {
        let mut acc = 0;
        for (k, r) in self.records(m.event_type).iter().enumerate() {
            if acc == m.appended {
                return k;
            }
            acc += r.filled();
        }
        self.records(m.event_type).len()
    }
}

impl<'a> Reader for OracleReader<'a> {
    type Session = OracleSession<'a>;
    type Memory = OracleMemory;
    /// Index of the record being read.
    type Summary = (usize, usize);
    type Query = usize;
    /// Gold span and sentence length.
    type Prepared = ((usize, usize), usize);

    fn open(&self, doc: &Document) -> Result<Self::Session> {
        let example = self.examples.get(doc.doc_id.as_str()).ok_or_else(|| Error::Data(format!("no gold for {:?}", doc.doc_id)))?;
        Ok(OracleSession { example, n_sentences: doc.sentences.len(), current: 0 })
    }

    fn init_memory(&self, _: &mut Self::Session, event_type: usize) -> OracleMemory {
        OracleMemory { event_type, appended: 0 }
    }

    fn detect(&self, s: &mut Self::Session, m: &OracleMemory) -> (f64, (usize, usize)) {
        let done = s.done(m);
        s.current = done;
        let p = if done < s.records(m.event_type).len() { 1.0 } else { 0.0 };
        (p, (m.event_type, done))
    }

    fn query(&self, _: &mut Self::Session, _: &OracleMemory, role: usize) -> usize {
        role
    }

    fn locate(&self, s: &mut Self::Session, &(t, k): &(usize, usize), &role: &usize) -> Vec<f64> {
        let at = s.records(t)[k].args[role].as_ref().map_or(s.n_sentences, |a| a.sentence);
        one_hot(s.n_sentences + 1, at)
    }

    fn prepare(&self, s: &mut Self::Session, _: &usize, event_type: usize, role: usize, sentence: usize) -> Self::Prepared {
        let arg = s.records(event_type)[s.current].args[role].as_ref().expect("oracle located an empty role");
        debug_assert_eq!(arg.sentence, sentence);
        (arg.span, s.example.doc.sentence_len(sentence))
    }

    fn copy_scores(&self, _: &mut Self::Session, &((a, b), n): &Self::Prepared, prev: Option<usize>) -> Vec<f64> {
        let next = match prev {
            None => a,
            Some(k) if k + 1 < b => k + 1,
            Some(_) => n,
        };
        one_hot(n + 1, next)
    }

    fn update_memory(&self, _: &mut Self::Session, m: &OracleMemory, _: usize, _: &[usize]) -> OracleMemory {
        OracleMemory { event_type: m.event_type, appended: m.appended + 1 }
    }
}
