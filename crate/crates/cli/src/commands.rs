//! The five pipeline commands. Each writes its artifacts plus a `config.toml`
//! echo into its output directory and reports progress as `key=value` lines.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use dcan::data::{encode_split, generate_synthetic, load_dataset, save_dataset, Document, LabelSpace, LabeledExample};
use dcan::metrics::top_k;
use dcan::model::{receptive_field, Dcan};
use dcan::textpipe::{build_vocab, encode, preprocess, Vocabulary};
use dcan::training::{evaluate_model, model_input, Checkpoint, EpochRecord, TrainState, Trainer};
use dcan::{Error, Result};
use serde::Serialize;

use crate::config::RunConfig;

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];
pub const HISTORY_HEADER: &str =
    "epoch\tstep\ttrain_loss\tdev_micro_f1\tdev_macro_f1\tdev_micro_auc\tdev_macro_auc\tdev_precision_at_k";

fn io_context(path: &Path, e: Error) -> Error {
    match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| io_context(path, e.into()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_context(path, e.into()))
}

fn json_line<T: Serialize>(out: &mut impl Write, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, value).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn write_examples(path: &Path, examples: &[LabeledExample]) -> Result<()> {
    let mut out = create(path)?;
    for e in examples {
        json_line(&mut out, e)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_examples(path: &Path) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex = serde_json::from_str(&line).map_err(|e| Error::Parse {
            position: format!("{} line {}", path.display(), i + 1),
            message: e.to_string(),
        })?;
        out.push(ex);
    }
    Ok(out)
}

fn read_vocab(dir: &Path) -> Result<Vocabulary> {
    let path = dir.join("vocab.txt");
    Vocabulary::read(open(&path)?)
}

fn read_labels(dir: &Path) -> Result<LabelSpace> {
    let path = dir.join("labels.txt");
    LabelSpace::read(open(&path)?)
}

/// Writes the synthetic splits and the rule manifest.
pub fn cmd_synth(cfg: &RunConfig, log: &mut dyn Write) -> Result<()> {
    let dir = &cfg.paths.data_dir;
    let corpus = generate_synthetic(&cfg.synth)?;
    fs::create_dir_all(dir).map_err(|e| io_context(dir, e.into()))?;
    for (name, docs) in SPLITS.iter().zip([&corpus.train, &corpus.dev, &corpus.test]) {
        let path = dir.join(format!("{name}.jsonl"));
        save_dataset(&path, docs).map_err(|e| io_context(&path, e))?;
        writeln!(log, "split={name} docs={}", docs.len())?;
    }
    let manifest = serde_json::to_string_pretty(&corpus.manifest).map_err(std::io::Error::from)?;
    fs::write(dir.join("manifest.json"), manifest + "\n")?;
    writeln!(
        log,
        "labels={} long_range={} gap={}",
        corpus.manifest.labels.len(),
        corpus.manifest.long_range_codes().len(),
        cfg.synth.gap
    )?;
    cfg.echo_into(dir)
}

/// Builds the vocabulary and label list and caches every split as token ids.
pub fn cmd_preprocess(cfg: &RunConfig, log: &mut dyn Write) -> Result<()> {
    let max_len = cfg.model.max_len;
    let mut splits: Vec<(&str, Vec<Document>)> = Vec::new();
    for name in SPLITS {
        let path = cfg.paths.data_dir.join(format!("{name}.jsonl"));
        if name == "test" && !path.exists() {
            continue;
        }
        splits.push((name, load_dataset(&path).map_err(|e| io_context(&path, e))?));
    }
    let train_tokens: Vec<Vec<String>> = splits[0].1.iter().map(|d| preprocess(&d.text, max_len)).collect();
    let vocab = build_vocab(&train_tokens, cfg.text.min_frequency)?;
    let all: Vec<Document> = splits.iter().flat_map(|(_, d)| d.iter().cloned()).collect();
    let labels = LabelSpace::from_documents(&all);
    if labels.is_empty() {
        return Err(Error::Config("no label codes in the dataset".into()));
    }

    let dir = &cfg.paths.prep_dir;
    fs::create_dir_all(dir).map_err(|e| io_context(dir, e.into()))?;
    let mut out = create(&dir.join("vocab.txt"))?;
    vocab.write(&mut out)?;
    out.flush()?;
    let mut out = create(&dir.join("labels.txt"))?;
    labels.write(&mut out)?;
    out.flush()?;
    writeln!(log, "vocab_size={} labels={} min_frequency={}", vocab.len(), labels.len(), cfg.text.min_frequency)?;
    for (name, docs) in &splits {
        let (examples, truncated) = encode_split(docs, &vocab, &labels, max_len)?;
        write_examples(&dir.join(format!("{name}.ids.jsonl")), &examples)?;
        writeln!(log, "split={name} docs={} truncated={truncated} max_len={max_len}", docs.len())?;
    }
    cfg.echo_into(dir)
}

fn history_row(r: &EpochRecord) -> String {
    let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| x.to_string());
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        r.epoch,
        r.step,
        opt(r.train_loss),
        r.dev.micro_f1,
        r.dev.macro_f1,
        opt(r.dev.micro_auc),
        opt(r.dev.macro_auc),
        r.dev.precision_at_k
    )
}

/// Parameter counts per component, as `component\tcount` lines ending with the total.
pub fn param_report(model: &Dcan) -> String {
    let mut out = String::from("component\tparameters\n");
    for (name, n) in model.params.param_counts() {
        out.push_str(&format!("{name}\t{n}\n"));
    }
    out.push_str(&format!("total\t{}\n", model.params.num_params()));
    out
}

/// Trains from the preprocessed cache, or resumes from `run_dir/last.ckpt`.
pub fn cmd_train(cfg: &RunConfig, log: &mut dyn Write) -> Result<()> {
    let prep = &cfg.paths.prep_dir;
    let vocab = read_vocab(prep)?;
    let labels = read_labels(prep)?;
    let train = read_examples(&prep.join("train.ids.jsonl"))?;
    let dev = read_examples(&prep.join("dev.ids.jsonl"))?;
    let model_cfg = cfg.model.to_model_config(vocab.len(), labels.len())?;

    let dir = &cfg.paths.run_dir;
    fs::create_dir_all(dir).map_err(|e| io_context(dir, e.into()))?;
    let last_path = dir.join("last.ckpt");
    let best_path = dir.join("best.ckpt");
    let history_path = dir.join("history.tsv");

    let state = if cfg.paths.resume {
        let ck = Checkpoint::load(&last_path).map_err(|e| io_context(&last_path, e))?;
        ck.check_compatible(&model_cfg, labels.codes())?;
        let mut state = ck.state;
        state.adam.hyper.lr = cfg.train.lr;
        writeln!(log, "resume_epoch={} resume_step={}", state.epoch, state.adam.step())?;
        state
    } else {
        let model = Dcan::new(model_cfg.clone(), cfg.train.seed)?;
        fs::write(&history_path, format!("{HISTORY_HEADER}\n"))?;
        TrainState::fresh(model, cfg.train.lr)
    };
    cfg.echo_into(dir)?;

    let report = param_report(&state.model);
    fs::write(dir.join("params.tsv"), &report)?;
    for line in report.lines().skip(1) {
        let (name, n) = line.split_once('\t').unwrap_or((line, ""));
        writeln!(log, "params component={name} count={n}")?;
    }
    writeln!(log, "receptive_field={}", receptive_field(&model_cfg))?;

    let mut history = fs::OpenOptions::new()
        .append(true)
        .create(true)
        .open(&history_path)
        .map_err(|e| io_context(&history_path, e.into()))?;
    let trainer = Trainer {
        cfg: &cfg.train,
        train: &train,
        dev: &dev,
        labels: labels.codes(),
    };
    let checkpoint = |state: &TrainState| Checkpoint {
        state: state.clone(),
        train_config: cfg.train.clone(),
        labels: labels.codes().to_vec(),
    };
    let outcome = trainer.train(state, |rec, state, improved| {
        writeln!(history, "{}", history_row(rec))?;
        writeln!(log, "{}{}", rec.log_line(), if improved { " best=1" } else { "" })?;
        let ck = checkpoint(state);
        if improved {
            ck.save(&best_path)?;
        }
        ck.save(&last_path)
    })?;
    writeln!(
        log,
        "done epochs={} step={} best_epoch={} best_{}={}",
        outcome.last.epoch,
        outcome.last.adam.step(),
        outcome.last.best_epoch,
        serde_json::to_value(cfg.train.selection_metric)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
        outcome.last.best_score
    )?;
    Ok(())
}

fn load_checkpoint_for(cfg: &RunConfig) -> Result<(Checkpoint, Vocabulary, LabelSpace)> {
    let path = cfg.paths.checkpoint_path();
    let ck = Checkpoint::load(&path).map_err(|e| io_context(&path, e))?;
    let vocab = read_vocab(&cfg.paths.prep_dir)?;
    let labels = read_labels(&cfg.paths.prep_dir)?;
    if ck.labels != labels.codes() {
        return Err(Error::Config(format!(
            "label space mismatch: checkpoint has {} labels, dataset has {}",
            ck.labels.len(),
            labels.len()
        )));
    }
    if ck.model().config.vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "vocabulary mismatch: checkpoint expects {} entries, vocab.txt has {}",
            ck.model().config.vocab_size,
            vocab.len()
        )));
    }
    Ok((ck, vocab, labels))
}

/// Scores one encoded split and writes `report.txt` and `report.json`.
pub fn cmd_evaluate(cfg: &RunConfig, log: &mut dyn Write) -> Result<()> {
    let (ck, _, labels) = load_checkpoint_for(cfg)?;
    let split = &cfg.paths.eval_split;
    let examples = read_examples(&cfg.paths.prep_dir.join(format!("{split}.ids.jsonl")))?;
    let report = evaluate_model(ck.model(), &examples, labels.codes(), &cfg.train)?;

    let dir = &cfg.paths.report_dir;
    fs::create_dir_all(dir).map_err(|e| io_context(dir, e.into()))?;
    fs::write(dir.join("report.txt"), format!("split={split}\ndocs={}\n{}", examples.len(), report.to_kv()))?;
    let json = serde_json::to_string_pretty(&report).map_err(std::io::Error::from)?;
    fs::write(dir.join("report.json"), json + "\n")?;
    cfg.echo_into(dir)?;
    let opt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| x.to_string());
    writeln!(
        log,
        "split={split} docs={} micro_f1={} macro_f1={} micro_auc={} macro_auc={} precision_at_{}={}",
        examples.len(),
        report.micro_f1,
        report.macro_f1,
        opt(report.micro_auc),
        opt(report.macro_auc),
        report.k,
        report.precision_at_k
    )?;
    Ok(())
}

#[derive(Serialize)]
struct ScoredCode<'a> {
    code: &'a str,
    prob: f64,
}

#[derive(Serialize)]
struct Prediction<'a> {
    id: &'a str,
    codes: Vec<ScoredCode<'a>>,
}

/// Ranks codes for every document of the input file.
pub fn cmd_predict(cfg: &RunConfig, log: &mut dyn Write) -> Result<()> {
    let (ck, vocab, labels) = load_checkpoint_for(cfg)?;
    let input = if cfg.predict.input.is_empty() {
        cfg.paths.data_dir.join(format!("{}.jsonl", cfg.paths.eval_split))
    } else {
        cfg.predict.input.clone().into()
    };
    let docs = load_dataset(&input).map_err(|e| io_context(&input, e))?;
    let model = ck.model();
    let k = cfg.predict.k.min(labels.len());
    if k == 0 {
        return Err(Error::Config("predict.k must be positive".into()));
    }

    let dir = &cfg.paths.predict_dir;
    fs::create_dir_all(dir).map_err(|e| io_context(dir, e.into()))?;
    let mut out = create(&dir.join("predictions.jsonl"))?;
    let mut empty = 0;
    for d in &docs {
        let ids = encode(&preprocess(&d.text, model.config.max_len), &vocab);
        empty += usize::from(ids.is_empty());
        let probs = model.predict(model_input(&ids), None)?;
        let codes = top_k(&probs, k)
            .into_iter()
            .map(|j| ScoredCode {
                code: &labels.codes()[j],
                prob: probs[j],
            })
            .collect();
        json_line(&mut out, &Prediction { id: &d.id, codes })?;
    }
    out.flush()?;
    cfg.echo_into(dir)?;
    writeln!(log, "docs={} k={k} empty_docs={empty} input={}", docs.len(), input.display())?;
    Ok(())
}
