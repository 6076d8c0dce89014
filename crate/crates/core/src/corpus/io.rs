//! JSONL corpus format.
//!
//! One document per line:
//! `{"doc_id": str, "sentences": [str], "events": [{"type": str, "args": {role: {"text": str, "sent": int, "span": [int, int]} | null}}]}`.
//! Spans count characters. Prediction files use the same shape without
//! `sent`/`span`; for convenience a bare string is also accepted as an argument.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::warn;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use super::{
    ArgProvenance, Document, EventRecord, EventSchema, Example, GoldRecord, DEFAULT_MAX_SENTENCES,
    DEFAULT_MAX_SENTENCE_LEN,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoadOptions {
    pub max_sentences: usize,
    pub max_sentence_len: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { max_sentences: DEFAULT_MAX_SENTENCES, max_sentence_len: DEFAULT_MAX_SENTENCE_LEN }
    }
}

/// Loaded examples plus the truncation warnings raised while loading.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Loaded {
    pub examples: Vec<Example>,
    pub warnings: Vec<String>,
}

#[derive(Deserialize)]
struct DocLine {
    doc_id: String,
    sentences: Vec<String>,
    #[serde(default)]
    events: Vec<EventLine>,
}

#[derive(Deserialize)]
struct EventLine {
    #[serde(rename = "type")]
    event_type: String,
    args: BTreeMap<String, Option<ArgValue>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ArgValue {
    Text(String),
    Full { text: String, sent: Option<usize>, span: Option<[usize; 2]> },
}

impl ArgValue {
    fn parts(&self) -> (&str, Option<usize>, Option<[usize; 2]>) {
        match self {
            ArgValue::Text(t) => (t, None, None),
            ArgValue::Full { text, sent, span } => (text, *sent, *span),
        }
    }
}

pub fn load_corpus(path: &Path, schema: &EventSchema, opts: LoadOptions) -> Result<Loaded> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file), schema, opts).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_corpus_str(text: &str, schema: &EventSchema, opts: LoadOptions) -> Result<Loaded> {
    parse_corpus(text.as_bytes(), schema, opts)
}

pub fn parse_corpus(reader: impl BufRead, schema: &EventSchema, opts: LoadOptions) -> Result<Loaded> {
    let mut out = Loaded::default();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<corpus>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let parsed: DocLine = serde_json::from_str(&line).map_err(|source| Error::Json { line: lineno, source })?;
        if !seen.insert(parsed.doc_id.clone()) {
            return Err(Error::Data(format!("line {lineno}: duplicate doc_id {:?}", parsed.doc_id)));
        }
        out.examples.push(convert(parsed, schema, opts, lineno, &mut out.warnings)?);
    }
    Ok(out)
}

fn convert(line: DocLine, schema: &EventSchema, opts: LoadOptions, lineno: usize, warnings: &mut Vec<String>) -> Result<Example> {
    let id = line.doc_id;
    if line.sentences.is_empty() {
        return Err(Error::Data(format!("line {lineno}: document {id:?} has no sentences")));
    }
    if let Some(j) = line.sentences.iter().position(|s| s.is_empty()) {
        return Err(Error::Data(format!("line {lineno}: document {id:?} has an empty sentence at index {j}")));
    }
    let mut warn_push = |msg: String| {
        warn!("{msg}");
        warnings.push(msg);
    };
    if line.sentences.len() > opts.max_sentences {
        warn_push(format!("{id}: truncated from {} to {} sentences", line.sentences.len(), opts.max_sentences));
    }
    let sentences: Vec<String> = line
        .sentences
        .iter()
        .take(opts.max_sentences)
        .map(|s| s.chars().take(opts.max_sentence_len).collect())
        .collect();
    let doc = Document::new(id.clone(), sentences);

    let mut gold = Vec::new();
    for ev in line.events {
        let t = schema
            .type_id(&ev.event_type)
            .ok_or_else(|| Error::Schema(format!("line {lineno}: unknown event type {:?}", ev.event_type)))?;
        let mut args = vec![None; schema.num_roles(t)];
        for (role, value) in &ev.args {
            let r = schema.role_id(t, role).ok_or_else(|| {
                Error::Schema(format!("line {lineno}: unknown role {role:?} for event type {:?}", ev.event_type))
            })?;
            let Some(value) = value else { continue };
            let (text, sent, span) = value.parts();
            if text.is_empty() {
                continue;
            }
            let prov = match (sent, span) {
                (Some(s), Some([a, b])) => {
                    if s >= opts.max_sentences || b > opts.max_sentence_len {
                        warn_push(format!("{id}: argument {text:?} for role {role:?} lies beyond truncation, dropped"));
                        continue;
                    }
                    let found = doc.slice(s, (a, b));
                    if found.as_deref() != Some(text) {
                        return Err(Error::Data(format!(
                            "line {lineno}: span [{a}, {b}) of sentence {s} is {found:?}, not {text:?}"
                        )));
                    }
                    ArgProvenance { text: text.to_string(), sentence: s, span: (a, b) }
                }
                (None, None) => match locate_text(&doc, text) {
                    Some(p) => p,
                    None => {
                        warn_push(format!("{id}: argument {text:?} for role {role:?} not found in text, dropped"));
                        continue;
                    }
                },
                _ => {
                    return Err(Error::Data(format!("line {lineno}: argument {text:?} has only one of sent/span")));
                }
            };
            args[r] = Some(prov);
        }
        let rec = GoldRecord { event_type: t, args };
        if rec.filled() == 0 {
            warn_push(format!("{id}: {} record left without arguments, dropped", ev.event_type));
            continue;
        }
        gold.push(rec);
    }
    Ok(Example { doc, gold })
}

/// Earliest occurrence of `text`: lowest sentence, then lowest start.
fn locate_text(doc: &Document, text: &str) -> Option<ArgProvenance> {
    let needle: Vec<char> = text.chars().collect();
    for (j, s) in doc.sentences.iter().enumerate() {
        let hay: Vec<char> = s.chars().collect();
        if let Some(start) = hay.windows(needle.len()).position(|w| w == needle.as_slice()) {
            return Some(ArgProvenance { text: text.to_string(), sentence: j, span: (start, start + needle.len()) });
        }
    }
    None
}

struct ArgsOut<'a> {
    roles: &'a [String],
    values: Vec<Option<ArgOut<'a>>>,
}

#[derive(Serialize)]
struct ArgOut<'a> {
    text: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    sent: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    span: Option<[usize; 2]>,
}

impl Serialize for ArgsOut<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.roles.len()))?;
        for (r, v) in self.roles.iter().zip(&self.values) {
            map.serialize_entry(r, v)?;
        }
        map.end()
    }
}

#[derive(Serialize)]
struct EventOut<'a> {
    #[serde(rename = "type")]
    event_type: &'a str,
    args: ArgsOut<'a>,
}

#[derive(Serialize)]
struct DocOut<'a> {
    doc_id: &'a str,
    sentences: &'a [String],
    events: Vec<EventOut<'a>>,
}

/// One canonical JSONL line for `ex`: roles in schema order, unfilled roles as `null`.
pub fn example_line(ex: &Example, schema: &EventSchema) -> String {
    let events = ex
        .gold
        .iter()
        .map(|r| EventOut {
            event_type: schema.type_name(r.event_type),
            args: ArgsOut {
                roles: schema.roles(r.event_type),
                values: r
                    .args
                    .iter()
                    .map(|a| {
                        a.as_ref().map(|p| ArgOut { text: &p.text, sent: Some(p.sentence), span: Some([p.span.0, p.span.1]) })
                    })
                    .collect(),
            },
        })
        .collect();
    serde_json::to_string(&DocOut { doc_id: &ex.doc.doc_id, sentences: &ex.doc.sentences, events }).expect("serializable")
}

pub fn prediction_line(doc: &Document, records: &[EventRecord], schema: &EventSchema) -> String {
    let events = records
        .iter()
        .map(|r| EventOut {
            event_type: schema.type_name(r.event_type),
            args: ArgsOut {
                roles: schema.roles(r.event_type),
                values: r.args.iter().map(|a| a.as_deref().map(|text| ArgOut { text, sent: None, span: None })).collect(),
            },
        })
        .collect();
    serde_json::to_string(&DocOut { doc_id: &doc.doc_id, sentences: &doc.sentences, events }).expect("serializable")
}

fn write_lines(path: &Path, lines: impl Iterator<Item = String>) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for l in lines {
        writeln!(f, "{l}").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn write_corpus(path: &Path, examples: &[Example], schema: &EventSchema) -> Result<()> {
    write_lines(path, examples.iter().map(|e| example_line(e, schema)))
}

pub fn write_predictions(path: &Path, predictions: &[(Document, Vec<EventRecord>)], schema: &EventSchema) -> Result<()> {
    write_lines(path, predictions.iter().map(|(d, r)| prediction_line(d, r, schema)))
}

/// Predicted records keyed by document, in file order.
pub fn load_predictions(path: &Path, schema: &EventSchema) -> Result<Vec<(String, Vec<EventRecord>)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DocLine = serde_json::from_str(&line).map_err(|source| Error::Json { line: i + 1, source })?;
        let mut records = Vec::new();
        for ev in parsed.events {
            let t = schema
                .type_id(&ev.event_type)
                .ok_or_else(|| Error::Schema(format!("line {}: unknown event type {:?}", i + 1, ev.event_type)))?;
            let mut args = vec![None; schema.num_roles(t)];
            for (role, v) in &ev.args {
                let r = schema
                    .role_id(t, role)
                    .ok_or_else(|| Error::Schema(format!("line {}: unknown role {role:?}", i + 1)))?;
                args[r] = v.as_ref().map(|v| v.parts().0.to_string()).filter(|s| !s.is_empty());
            }
            records.push(EventRecord { event_type: t, args });
        }
        out.push((parsed.doc_id, records));
    }
    Ok(out)
}

pub fn load_schema(path: &Path) -> Result<EventSchema> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

pub fn write_schema(path: &Path, schema: &EventSchema) -> Result<()> {
    fs::write(path, schema.to_json() + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> EventSchema {
        EventSchema::new(vec!["T".into()], vec![vec!["R".into(), "Q".into()]]).unwrap()
    }

    #[test]
    fn minimal_line() {
        let text = r#"{"doc_id":"d1","sentences":["ab"],"events":[{"type":"T","args":{"R":{"text":"a","sent":0,"span":[0,1]}}}]}"#;
        let loaded = read_corpus_str(text, &schema(), LoadOptions::default()).unwrap();
        assert_eq!(loaded.examples.len(), 1);
        let ex = &loaded.examples[0];
        assert_eq!(ex.doc.sentences, vec!["ab".to_string()]);
        assert_eq!(ex.gold.len(), 1);
        assert_eq!(ex.gold[0].args[0].as_ref().unwrap().span, (0, 1));
        assert_eq!(ex.gold[0].args[1], None);
        assert!(loaded.warnings.is_empty());
    }

    #[test]
    fn out_of_bounds_argument_is_dropped_with_warning() {
        let sentences: Vec<String> = (0..71).map(|i| format!("s{i}")).collect();
        let line = serde_json::json!({
            "doc_id": "d", "sentences": sentences,
            "events": [{"type": "T", "args": {
                "R": {"text": "s7", "sent": 70, "span": [0, 2]},
                "Q": {"text": "s1", "sent": 1, "span": [0, 2]}}}]
        });
        let loaded = read_corpus_str(&line.to_string(), &schema(), LoadOptions::default()).unwrap();
        let ex = &loaded.examples[0];
        assert_eq!(ex.doc.sentences.len(), 64);
        assert_eq!(ex.gold[0].args[0], None);
        assert!(ex.gold[0].args[1].is_some());
        assert!(loaded.warnings.iter().any(|w| w.contains("beyond truncation")));
    }

    #[test]
    fn record_emptied_by_truncation_is_dropped() {
        let line = r#"{"doc_id":"d","sentences":["abc"],"events":[{"type":"T","args":{"R":{"text":"c","sent":0,"span":[2,3]}}}]}"#;
        let opts = LoadOptions { max_sentences: 64, max_sentence_len: 2 };
        let loaded = read_corpus_str(line, &schema(), opts).unwrap();
        assert_eq!(loaded.examples[0].doc.sentences, vec!["ab".to_string()]);
        assert!(loaded.examples[0].gold.is_empty());
        assert_eq!(loaded.warnings.len(), 2);
    }

    #[test]
    fn errors_name_the_problem() {
        let bad_json = "{\"doc_id\":\"a\",\"sentences\":[\"x\"]}\n{oops";
        let e = read_corpus_str(bad_json, &schema(), LoadOptions::default()).unwrap_err();
        assert!(matches!(e, Error::Json { line: 2, .. }), "{e}");

        let bad_type = r#"{"doc_id":"d","sentences":["ab"],"events":[{"type":"Nope","args":{}}]}"#;
        let e = read_corpus_str(bad_type, &schema(), LoadOptions::default()).unwrap_err();
        assert!(e.to_string().contains("Nope"), "{e}");

        let bad_role = r#"{"doc_id":"d","sentences":["ab"],"events":[{"type":"T","args":{"Zed":null}}]}"#;
        let e = read_corpus_str(bad_role, &schema(), LoadOptions::default()).unwrap_err();
        assert!(e.to_string().contains("Zed"), "{e}");

        let bad_span = r#"{"doc_id":"d","sentences":["ab"],"events":[{"type":"T","args":{"R":{"text":"b","sent":0,"span":[0,1]}}}]}"#;
        assert!(read_corpus_str(bad_span, &schema(), LoadOptions::default()).is_err());

        let dup = "{\"doc_id\":\"a\",\"sentences\":[\"x\"]}\n{\"doc_id\":\"a\",\"sentences\":[\"y\"]}";
        assert!(read_corpus_str(dup, &schema(), LoadOptions::default()).is_err());
    }

    #[test]
    fn missing_provenance_resolves_to_earliest_mention() {
        let line = r#"{"doc_id":"d","sentences":["xab","abab"],"events":[{"type":"T","args":{"R":{"text":"ab"},"Q":"b"}}]}"#;
        let loaded = read_corpus_str(line, &schema(), LoadOptions::default()).unwrap();
        let r = &loaded.examples[0].gold[0];
        assert_eq!(r.args[0].as_ref().map(|a| (a.sentence, a.span)), Some((0, (1, 3))));
        assert_eq!(r.args[1].as_ref().map(|a| (a.sentence, a.span)), Some((0, (2, 3))));
    }

    #[test]
    fn canonical_lines_round_trip() {
        let line = r#"{"doc_id":"d1","sentences":["ab","c"],"events":[{"type":"T","args":{"R":{"text":"a","sent":0,"span":[0,1]},"Q":null}}]}"#;
        let loaded = read_corpus_str(line, &schema(), LoadOptions::default()).unwrap();
        assert_eq!(example_line(&loaded.examples[0], &schema()), line);
    }

    #[test]
    fn predictions_accept_strings_and_objects() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pred.jsonl");
        let doc = Document::new("d", vec!["ab".into()]);
        let recs = vec![EventRecord { event_type: 0, args: vec![Some("a".into()), None] }];
        write_predictions(&p, &[(doc, recs.clone())], &schema()).unwrap();
        let back = load_predictions(&p, &schema()).unwrap();
        assert_eq!(back, vec![("d".to_string(), recs)]);

        fs::write(&p, r#"{"doc_id":"e","sentences":["x"],"events":[{"type":"T","args":{"Q":"x"}}]}"#).unwrap();
        let back = load_predictions(&p, &schema()).unwrap();
        assert_eq!(back[0].1[0].args, vec![None, Some("x".to_string())]);
    }
}
