use std::collections::BTreeMap;

use docee_core::corpus::{generate_synthetic, load_corpus, write_corpus, EventsPerDoc, LoadOptions, ScatterDist, SynthConfig};
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn generated_file_round_trips() {
    let cfg = SynthConfig { docs: 10, ..SynthConfig::default() };
    let examples = generate_synthetic(&cfg, 3).unwrap();
    let schema = cfg.schema();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.jsonl");
    write_corpus(&p, &examples, &schema).unwrap();
    let loaded = load_corpus(&p, &schema, LoadOptions::default()).unwrap();
    assert!(loaded.warnings.is_empty());
    assert_eq!(loaded.examples, examples);
    let q = dir.path().join("d.jsonl");
    write_corpus(&q, &loaded.examples, &schema).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
}

#[test]
fn arguments_sit_at_their_provenance() {
    let cfg = SynthConfig { docs: 200, scatter: ScatterDist::Uniform { min: 1, max: 4 }, ..SynthConfig::default() };
    for ex in generate_synthetic(&cfg, 11).unwrap() {
        for r in &ex.gold {
            let sents: Vec<usize> = r.args.iter().flatten().map(|a| a.sentence).collect();
            for a in r.args.iter().flatten() {
                assert_eq!(ex.doc.slice(a.sentence, a.span).as_deref(), Some(a.text.as_str()));
            }
            let distinct: std::collections::BTreeSet<_> = sents.iter().collect();
            assert_eq!(distinct.len(), r.sentence_spread());
        }
    }
}

#[test]
fn generator_statistics_match_the_configuration() {
    let cfg = SynthConfig {
        docs: 2000,
        events_per_doc: EventsPerDoc::Mixed { multi_fraction: 0.29, max_events: 3 },
        scatter: ScatterDist::Uniform { min: 1, max: 4 },
        role_fill_prob: 1.0,
        ..SynthConfig::default()
    };
    let examples = generate_synthetic(&cfg, 5).unwrap();
    let multi = examples.iter().filter(|e| e.gold.len() > 1).count() as f64 / examples.len() as f64;
    assert!((multi - 0.29).abs() <= 0.05, "multi-event fraction {multi}");

    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for r in examples.iter().flat_map(|e| &e.gold) {
        *counts.entry(r.sentence_spread()).or_default() += 1;
    }
    let n: usize = counts.values().sum();
    let mean = counts.iter().map(|(k, c)| k * c).sum::<usize>() as f64 / n as f64;
    assert!((mean - cfg.scatter.mean()).abs() <= 0.05 * cfg.scatter.mean(), "mean scatter {mean}");
    let expected = n as f64 / 4.0;
    let chi2: f64 = (1..=4).map(|k| (counts.get(&k).copied().unwrap_or(0) as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(3.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "scatter degrees not uniform: chi2 {chi2}, p {p}");
}
