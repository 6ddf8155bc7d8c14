use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::loss::smooth_labels;
use crate::data::{make_batches, LabeledExample};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport, Metric};
use crate::model::Dcan;
use crate::numcore::RngStream;
use crate::textpipe::UNK_ID;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Label smoothing coefficient.
    pub smoothing: f64,
    /// Epochs without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub selection_metric: Metric,
    /// Probability at or above which a label counts as predicted.
    pub threshold: f64,
    /// `k` for precision@k.
    pub k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            lr: 0.003,
            smoothing: 0.05,
            patience: 5,
            seed: 1,
            selection_metric: Metric::MicroF1,
            threshold: 0.5,
            k: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.k == 0 {
            return Err(Error::Config("epochs, batch_size and k must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.smoothing) {
            return Err(Error::Config(format!("smoothing {} outside [0, 1]", self.smoothing)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }
}

/// One line of training history. Epoch 0 describes the untrained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub train_loss: Option<f64>,
    pub dev: EvalReport,
}

impl EpochRecord {
    /// Tab-free `key=value` log line with a fixed field order.
    pub fn log_line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| x.to_string());
        let mut s = String::new();
        write!(
            s,
            "epoch={} step={} train_loss={} dev_micro_f1={} dev_macro_f1={} dev_micro_auc={} dev_macro_auc={} dev_p_at_{}={}",
            self.epoch,
            self.step,
            opt(self.train_loss),
            self.dev.micro_f1,
            self.dev.macro_f1,
            opt(self.dev.micro_auc),
            opt(self.dev.macro_auc),
            self.dev.k,
            self.dev.precision_at_k,
        )
        .unwrap();
        s
    }
}

/// Everything needed to continue training where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: Dcan,
    pub adam: AdamState,
    /// Last completed epoch.
    pub epoch: usize,
    pub best_epoch: usize,
    pub best_score: f64,
    /// Epochs since the last improvement.
    pub stale: usize,
}

impl TrainState {
    pub fn fresh(model: Dcan, lr: f64) -> Self {
        let adam = AdamState::new(model.params.named().into_iter().map(|(_, t)| t), lr);
        TrainState {
            model,
            adam,
            epoch: 0,
            best_epoch: 0,
            best_score: f64::MIN,
            stale: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: Dcan,
    pub last: TrainState,
    pub history: Vec<EpochRecord>,
}

/// Token ids fed to the model; an empty document becomes a single UNK.
pub fn model_input(token_ids: &[usize]) -> &[usize] {
    if token_ids.is_empty() {
        &[UNK_ID]
    } else {
        token_ids
    }
}

/// Probabilities for every example, in inference mode.
pub fn predict_all(model: &Dcan, examples: &[LabeledExample]) -> Result<Vec<Vec<f64>>> {
    examples
        .iter()
        .map(|e| model.predict(model_input(&e.token_ids), None))
        .collect()
}

pub fn evaluate_model(
    model: &Dcan,
    examples: &[LabeledExample],
    labels: &[String],
    cfg: &TrainConfig,
) -> Result<EvalReport> {
    let scores = predict_all(model, examples)?;
    let truth: Vec<Vec<bool>> = examples.iter().map(|e| e.labels.clone()).collect();
    evaluate(labels, &truth, &scores, cfg.threshold, cfg.k)
}

/// Minibatch training with dev-set model selection and early stopping.
pub struct Trainer<'a> {
    pub cfg: &'a TrainConfig,
    pub train: &'a [LabeledExample],
    pub dev: &'a [LabeledExample],
    pub labels: &'a [String],
}

impl Trainer<'_> {
    fn check(&self, model: &Dcan) -> Result<()> {
        self.cfg.validate()?;
        if self.train.is_empty() || self.dev.is_empty() {
            return Err(Error::invalid("train and dev splits must be non-empty"));
        }
        let m = model.config.num_labels;
        if self.labels.len() != m {
            return Err(Error::Config(format!(
                "{} label names for a model with {m} labels",
                self.labels.len()
            )));
        }
        if let Some(e) = self.train.iter().chain(self.dev).find(|e| e.labels.len() != m) {
            return Err(Error::Config(format!(
                "example {} has {} labels, model has {m}",
                e.id,
                e.labels.len()
            )));
        }
        Ok(())
    }

    /// One pass over the training split; returns the mean per-example loss.
    pub fn run_epoch(&self, state: &mut TrainState) -> Result<f64> {
        let epoch = state.epoch + 1;
        let root = RngStream::new(self.cfg.seed);
        let mut shuffle_rng = root.fork(&[1, epoch as u64]);
        let batches = make_batches(self.train, self.cfg.batch_size, &mut shuffle_rng, true)?;
        let mut total = 0.0;
        for batch in &batches {
            let step = state.adam.step() + 1;
            state.model.params.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for r in 0..batch.len() {
                let targets = smooth_labels(&batch.labels[r], self.cfg.smoothing)?;
                let mut dropout_rng = root.fork(&[2, step, r as u64]);
                let ids = model_input(batch.row_tokens(r));
                let eg = state.model.loss_and_grads(ids, &targets, true, &mut dropout_rng)?;
                total += eg.loss;
                for (t, g) in state.model.params.tensors_mut().into_iter().zip(&eg.grads) {
                    t.accumulate_grad(g, scale)?;
                }
            }
            adam_step(&mut state.model.params.tensors_mut(), &mut state.adam)?;
        }
        state.epoch = epoch;
        Ok(total / self.train.len() as f64)
    }

    /// Trains until `cfg.epochs` or early stopping. `on_epoch` sees every history record
    /// as it is produced, including the epoch-0 baseline of a fresh run.
    pub fn train(
        &self,
        mut state: TrainState,
        mut on_epoch: impl FnMut(&EpochRecord, &TrainState, bool) -> Result<()>,
    ) -> Result<TrainOutcome> {
        self.check(&state.model)?;
        let metric = self.cfg.selection_metric;
        let mut history = Vec::new();
        let mut best = state.model.clone();
        if state.epoch == 0 {
            let dev = evaluate_model(&state.model, self.dev, self.labels, self.cfg)?;
            state.best_score = dev.get(metric);
            state.best_epoch = 0;
            let rec = EpochRecord {
                epoch: 0,
                step: state.adam.step(),
                train_loss: None,
                dev,
            };
            on_epoch(&rec, &state, true)?;
            history.push(rec);
        }
        while state.epoch < self.cfg.epochs && state.stale < self.cfg.patience.max(1) {
            let loss = self.run_epoch(&mut state)?;
            let dev = evaluate_model(&state.model, self.dev, self.labels, self.cfg)?;
            let score = dev.get(metric);
            let improved = score > state.best_score;
            if improved {
                state.best_score = score;
                state.best_epoch = state.epoch;
                state.stale = 0;
                best = state.model.clone();
            } else {
                state.stale += 1;
            }
            let rec = EpochRecord {
                epoch: state.epoch,
                step: state.adam.step(),
                train_loss: Some(loss),
                dev,
            };
            on_epoch(&rec, &state, improved)?;
            history.push(rec);
        }
        Ok(TrainOutcome {
            best,
            last: state,
            history,
        })
    }
}
