use docee_core::backbone::{ModelConfig, ModelParams};
use docee_core::corpus::{build_vocab, generate_synthetic, EventsPerDoc, Example, SynthConfig, Vocabulary};
use docee_core::pipeline::{
    extract_corpus, extract_document, forced_detections, load_checkpoint, save_checkpoint, training_step, Adam, Checkpoint,
    InferenceConfig, TrainConfig, TrainState,
};

fn setup(cfg: &SynthConfig, seed: u64, dim: usize) -> (Vec<Example>, Vocabulary, ModelParams) {
    let examples = generate_synthetic(cfg, seed).unwrap();
    let vocab = build_vocab(&examples);
    let params = ModelParams::init(ModelConfig { seed, ..ModelConfig::new(dim, 1, 2, vocab.len(), &cfg.schema()) }).unwrap();
    (examples, vocab, params)
}

#[test]
fn loss_strictly_decreases_over_50_steps() {
    let synth = SynthConfig { docs: 4, num_types: 2, ..SynthConfig::default() };
    let (examples, vocab, mut params) = setup(&synth, 13, 16);
    let cfg = TrainConfig { learning_rate: 1e-3, ..TrainConfig::default() };
    let mut adam = Adam::new(&params.store, cfg.learning_rate);
    let batch: Vec<&Example> = examples.iter().collect();
    let mut losses = Vec::new();
    for step in 1..=51 {
        losses.push(training_step(&mut params, &mut adam, &batch, &vocab, &cfg, step).unwrap().l_all);
    }
    for (k, w) in losses.windows(2).enumerate() {
        assert!(w[1] < w[0], "loss rose at step {}: {} -> {}", k + 2, w[0], w[1]);
    }
}

#[test]
fn detection_alone_fits_single_type_data() {
    let synth = SynthConfig {
        docs: 32,
        num_types: 1,
        events_per_doc: EventsPerDoc::Mixed { multi_fraction: 0.5, max_events: 3 },
        ..SynthConfig::default()
    };
    let (examples, vocab, mut params) = setup(&synth, 17, 16);
    let cfg = TrainConfig { lambda_sl: 0.0, lambda_ae: 0.0, learning_rate: 3e-3, ..TrainConfig::default() };
    let mut adam = Adam::new(&params.store, cfg.learning_rate);
    let accuracy = |params: &ModelParams| {
        let (mut right, mut total) = (0, 0);
        for ex in &examples {
            for (p, y) in forced_detections(params, &vocab, ex).unwrap() {
                right += usize::from((p > 0.5) == y);
                total += 1;
            }
        }
        right as f64 / total as f64
    };
    let mut step = 0;
    let mut acc = accuracy(&params);
    for _ in 0..60 {
        for chunk in examples.chunks(cfg.batch_size) {
            step += 1;
            let batch: Vec<&Example> = chunk.iter().collect();
            training_step(&mut params, &mut adam, &batch, &vocab, &cfg, step).unwrap();
        }
        acc = accuracy(&params);
        if acc >= 0.99 {
            break;
        }
    }
    assert!(acc >= 0.99, "round accuracy {acc}");
}

#[test]
fn inference_is_deterministic_and_survives_checkpointing() {
    let synth = SynthConfig { docs: 6, num_types: 2, ..SynthConfig::default() };
    let (examples, vocab, params) = setup(&synth, 19, 16);
    let schema = synth.schema();
    let cfg = InferenceConfig { threshold: 0.3, ..InferenceConfig::default() };
    let docs: Vec<_> = examples.iter().map(|e| &e.doc).collect();
    let strip = |outs: Vec<docee_core::pipeline::ExtractionOutput>| {
        outs.into_iter().map(|mut o| {
            o.seconds = 0.0;
            o
        }).collect::<Vec<_>>()
    };
    let a = strip(extract_corpus(&params, &vocab, &schema, &docs, &cfg).unwrap());
    let b = strip(extract_corpus(&params, &vocab, &schema, &docs, &cfg).unwrap());
    assert_eq!(a, b);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let ck = Checkpoint { params, vocab, schema: schema.clone(), train_config: None, state: TrainState::default(), optimizer: None };
    save_checkpoint(&ck, &path).unwrap();
    let back = load_checkpoint(&path, Some(&schema)).unwrap();
    for (ex, want) in examples.iter().zip(&a) {
        let mut got = extract_document(&back.params, &back.vocab, &schema, &ex.doc, &cfg).unwrap();
        got.seconds = 0.0;
        assert_eq!(&got, want);
    }
}
