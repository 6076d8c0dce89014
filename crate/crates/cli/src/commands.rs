use std::cell::RefCell;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use docee_core::backbone::{ModelConfig, ModelParams};
use docee_core::corpus::{
    build_vocab, generate_synthetic, load_corpus, load_predictions, load_schema, write_corpus, write_predictions, write_schema,
    EventSchema, EventsPerDoc, Example, LoadOptions, ScatterDist, SynthConfig,
};
use docee_core::evaluation::evaluate;
use docee_core::pipeline::{extract_corpus, load_checkpoint, save_checkpoint, train as run_training, Adam, Checkpoint, InferenceConfig, TrainConfig, TrainState};

use crate::config::Resolver;
use crate::{CliError, EvalArgs, ExtractArgs, GenArgs, TrainArgs};

fn make_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn set_workers(n: usize) {
    // Fails only when a pool already exists, which then keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

fn load_examples(path: &Path, schema: &EventSchema) -> Result<Vec<Example>, CliError> {
    let loaded = load_corpus(path, schema, LoadOptions::default())?;
    for w in &loaded.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(loaded.examples)
}

pub fn gen(a: GenArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(a.config.as_deref())?;
    let out = r.require_path("out", a.out)?;
    let d = SynthConfig::default();
    let docs = r.pick("docs", a.docs, d.docs)?;
    let seed = r.pick("seed", a.seed, 0u64)?;
    let num_types = r.pick("types", a.types, d.num_types)?;
    let roles_per_type = r.pick("roles", a.roles, d.roles_per_type)?;
    let multi_fraction = r.pick("multi-fraction", a.multi_fraction, 0.29)?;
    let max_events = r.pick("max-events", a.max_events, 3usize)?;
    let fixed = r.pick_opt("events-per-doc", a.events_per_doc, None)?;
    let same_type_records = r.pick("same-type", a.same_type, d.same_type_records)?;
    let smin = r.pick("scatter-min", a.scatter_min, 1usize)?;
    let smax = r.pick("scatter-max", a.scatter_max, 4usize)?;
    let role_fill_prob = r.pick("role-fill-prob", a.role_fill_prob, d.role_fill_prob)?;
    let resolved = r.finish()?;
    if docs == 0 {
        return Err(CliError::Usage("--docs must be at least 1".into()));
    }
    let cfg = SynthConfig {
        docs,
        num_types,
        roles_per_type,
        events_per_doc: match fixed {
            Some(n) => EventsPerDoc::Fixed(n),
            None => EventsPerDoc::Mixed { multi_fraction, max_events },
        },
        same_type_records,
        scatter: ScatterDist::Uniform { min: smin, max: smax },
        role_fill_prob,
        ..d
    };
    let examples = generate_synthetic(&cfg, seed)?;
    let schema = cfg.schema();
    make_dir(&out)?;
    write_corpus(&out.join("corpus.jsonl"), &examples, &schema)?;
    write_schema(&out.join("schema.json"), &schema)?;
    resolved.echo(&out)?;
    log::info!("wrote {} documents to {}", examples.len(), out.display());
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(a.config.as_deref())?;
    let train_path = r.require_path("train", a.train)?;
    let schema_path = r.require_path("schema", a.schema)?;
    let dev_path = r.opt_path("dev", a.dev);
    let out = r.require_path("out", a.out)?;
    let resume = r.opt_path("resume", a.resume);
    let dim = r.pick("dim", a.dim, 64usize)?;
    let layers = r.pick("layers", a.layers, 2usize)?;
    let heads = r.pick("heads", a.heads, 4usize)?;
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: r.pick("epochs", a.epochs, d.epochs)?,
        batch_size: r.pick("batch-size", a.batch_size, d.batch_size)?,
        learning_rate: r.pick("learning-rate", a.learning_rate, d.learning_rate)?,
        seed: r.pick("seed", a.seed, d.seed)?,
        lambda_rr: r.pick("lambda-rr", a.lambda_rr, d.lambda_rr)?,
        lambda_sl: r.pick("lambda-sl", a.lambda_sl, d.lambda_sl)?,
        lambda_ae: r.pick("lambda-ae", a.lambda_ae, d.lambda_ae)?,
        clip_norm: r.pick_opt("clip-norm", a.clip_norm, d.clip_norm)?,
        patience: r.pick_opt("patience", a.patience, d.patience)?,
        target_f1: r.pick_opt("target-f1", a.target_f1, d.target_f1)?,
        inference: InferenceConfig {
            threshold: r.pick("threshold", a.threshold, d.inference.threshold)?,
            max_rounds: r.pick("max-rounds", a.max_rounds, d.inference.max_rounds)?,
        },
    };
    let workers = r.pick("workers", a.workers, 0usize)?;
    let resolved = r.finish()?;
    cfg.validate()?;
    set_workers(workers);

    let schema = load_schema(&schema_path)?;
    let examples = load_examples(&train_path, &schema)?;
    let dev = dev_path.as_deref().map(|p| load_examples(p, &schema)).transpose()?;
    let (mut params, vocab, mut adam, mut state) = match &resume {
        Some(p) => {
            let ck = load_checkpoint(p, Some(&schema))?;
            log::info!("resuming {} at epoch {}, step {}", p.display(), ck.state.epoch, ck.state.step);
            let mut adam = ck.optimizer.unwrap_or_else(|| Adam::new(&ck.params.store, cfg.learning_rate));
            adam.learning_rate = cfg.learning_rate;
            (ck.params, ck.vocab, adam, ck.state)
        }
        None => {
            let vocab = build_vocab(&examples);
            let model = ModelConfig { seed: cfg.seed, ..ModelConfig::new(dim, layers, heads, vocab.len(), &schema) };
            let params = ModelParams::init(model)?;
            let adam = Adam::new(&params.store, cfg.learning_rate);
            (params, vocab, adam, TrainState::default())
        }
    };
    log::info!("{} training documents, {} parameters, vocabulary {}", examples.len(), params.num_scalars(), vocab.len());

    make_dir(&out)?;
    resolved.echo(&out)?;
    let ckpt_path = out.join("model.ckpt");
    let log_path = out.join("train_log.jsonl");
    let epochs_path = out.join("epochs.jsonl");
    let open = |p: &Path| {
        fs::OpenOptions::new()
            .create(true)
            .append(resume.is_some())
            .write(true)
            .truncate(resume.is_none())
            .open(p)
            .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
    };
    let step_log = RefCell::new(std::io::BufWriter::new(open(&log_path)?));
    let mut epoch_log = open(&epochs_path)?;
    let io_error: RefCell<Option<CliError>> = RefCell::new(None);
    let keep = |res: Result<(), CliError>| {
        if let Err(e) = res {
            io_error.borrow_mut().get_or_insert(e);
        }
    };
    let outcome = run_training(
        &mut params,
        &mut adam,
        &mut state,
        &examples,
        dev.as_deref(),
        &vocab,
        &schema,
        &cfg,
        |s| {
            let line = serde_json::to_string(s).expect("step log serializes");
            keep(writeln!(step_log.borrow_mut(), "{line}").map_err(|e| CliError::Data(format!("{}: {e}", log_path.display()))));
        },
        |e, p, opt, st| {
            let dev_f1 = e.dev_f1.map_or("none".to_string(), |f| format!("{f:.4}"));
            log::info!("epoch {} mean loss {:.4} dev F1 {dev_f1} ({:.1} s)", e.epoch, e.mean_loss, e.seconds);
            let line = serde_json::to_string(e).expect("epoch summary serializes");
            keep(
                step_log
                    .borrow_mut()
                    .flush()
                    .and_then(|_| writeln!(epoch_log, "{line}"))
                    .map_err(|err| CliError::Data(format!("{}: {err}", epochs_path.display()))),
            );
            let ck = Checkpoint {
                params: p.clone(),
                vocab: vocab.clone(),
                schema: schema.clone(),
                train_config: Some(cfg.clone()),
                state: st.clone(),
                optimizer: Some(opt.clone()),
            };
            keep(save_checkpoint(&ck, &ckpt_path).map_err(CliError::from));
        },
    );
    drop(step_log);
    if let Some(e) = io_error.into_inner() {
        return Err(e);
    }
    let outcome = outcome?;
    let ck = Checkpoint { params, vocab, schema, train_config: Some(cfg), state, optimizer: Some(adam) };
    save_checkpoint(&ck, &ckpt_path)?;
    if let (Some(f1), Some(_)) = (outcome.best_dev_f1, &dev) {
        log::info!("best dev F1 {f1:.4}");
    }
    log::info!("checkpoint written to {}", ckpt_path.display());
    Ok(())
}

pub fn extract(a: ExtractArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(a.config.as_deref())?;
    let ckpt_path = r.require_path("checkpoint", a.checkpoint)?;
    let input = r.require_path("input", a.input)?;
    let out = r.require_path("out", a.out)?;
    let ck = load_checkpoint(&ckpt_path, None)?;
    let d = ck.train_config.as_ref().map(|c| c.inference.clone()).unwrap_or_default();
    let cfg = InferenceConfig {
        threshold: r.pick("threshold", a.threshold, d.threshold)?,
        max_rounds: r.pick("max-rounds", a.max_rounds, d.max_rounds)?,
    };
    let workers = r.pick("workers", a.workers, 0usize)?;
    let resolved = r.finish()?;
    if cfg.max_rounds == 0 {
        return Err(CliError::Usage("--max-rounds must be positive".into()));
    }
    set_workers(workers);
    let examples = load_examples(&input, &ck.schema)?;
    let docs: Vec<_> = examples.iter().map(|e| &e.doc).collect();
    let start = Instant::now();
    let outputs = extract_corpus(&ck.params, &ck.vocab, &ck.schema, &docs, &cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    let docs_per_sec = docs.len() as f64 / seconds.max(1e-9);
    let preds: Vec<_> = examples.iter().zip(outputs).map(|(e, o)| (e.doc.clone(), o.records)).collect();
    make_dir(&out)?;
    write_predictions(&out.join("predictions.jsonl"), &preds, &ck.schema)?;
    let tp = serde_json::json!({ "docs": docs.len(), "seconds": seconds, "docs_per_sec": docs_per_sec });
    let tp_path = out.join("throughput.json");
    fs::write(&tp_path, format!("{tp:#}\n")).map_err(|e| CliError::Data(format!("{}: {e}", tp_path.display())))?;
    resolved.echo(&out)?;
    println!("throughput: {} docs in {seconds:.3} s, {docs_per_sec:.2} docs/sec", docs.len());
    Ok(())
}

fn read_throughput(path: &Path) -> Result<f64, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    v.get("docs_per_sec")
        .and_then(|x| x.as_f64())
        .ok_or_else(|| CliError::Data(format!("{}: no docs_per_sec field", path.display())))
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let mut r = Resolver::new(a.config.as_deref())?;
    let pred_path = r.require_path("pred", a.pred)?;
    let gold_path = r.require_path("gold", a.gold)?;
    let schema_path = r.require_path("schema", a.schema)?;
    let out = r.require_path("out", a.out)?;
    let tp_path = r.opt_path("throughput", a.throughput);
    let resolved = r.finish()?;
    let schema = load_schema(&schema_path)?;
    let gold = load_examples(&gold_path, &schema)?;
    let preds = load_predictions(&pred_path, &schema)?;
    let mut report = evaluate(&preds, &gold, &schema)?;
    report.throughput = tp_path.as_deref().map(read_throughput).transpose()?;
    make_dir(&out)?;
    let write = |name: &str, text: String| {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
    };
    write("report.json", report.to_json() + "\n")?;
    let table = report.to_table();
    write("report.txt", table.clone())?;
    resolved.echo(&out)?;
    print!("{table}");
    Ok(())
}
