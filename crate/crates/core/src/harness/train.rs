//! Minibatch training on `L = L_lm + beta·L_qase`.

use std::fmt::Write as _;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::Optimizer;
use crate::data::{assemble_prompt, build_vocab, PromptTemplate, RawExample, TokenizedExample, Vocab};
use crate::error::{Error, Result};
use crate::model::QaseModel;
use crate::numcore::Graph;
use crate::qase::HeadKind;
use crate::rng::Prng;

/// Stream id of the epoch-shuffle generator, kept apart from initialization.
const SHUFFLE_STREAM: u64 = 0x5348_5546;

/// Losses of one optimizer step, averaged over its batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub loss_lm: f64,
    pub loss_qase: f64,
    pub loss_total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub log: Vec<LogRow>,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

impl TrainSummary {
    pub fn steps(&self) -> usize {
        self.log.len()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.log.last().map(|r| r.loss_total)
    }

    /// `step,loss_lm,loss_qase,loss_total` with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss_lm,loss_qase,loss_total\n");
        for r in &self.log {
            writeln!(out, "{},{},{},{}", r.step, r.loss_lm, r.loss_qase, r.loss_total).expect("string write");
        }
        out
    }
}

/// Everything a checkpoint persists.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub model: QaseModel,
    pub optimizer: Optimizer,
    pub step: u64,
}

impl TrainState {
    /// Fresh model and optimizer with a vocabulary built from `corpus`.
    pub fn init(config: &TrainConfig, corpus: &[RawExample]) -> Result<Self> {
        config.validate()?;
        let vocab = build_vocab(corpus, &config.template());
        Self::with_vocab(config, vocab)
    }

    pub fn with_vocab(config: &TrainConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        let model = QaseModel::new(config.model_config(vocab.len()))?;
        let optimizer = Optimizer::new(config.optimizer, config.lr, &model.store);
        Ok(TrainState {
            config: config.clone(),
            vocab,
            model,
            optimizer,
            step: 0,
        })
    }

    pub fn template(&self) -> PromptTemplate {
        self.config.template()
    }

    /// Tokenizes `corpus` with this state's vocabulary and template.
    pub fn prepare(&self, corpus: &[RawExample]) -> Result<Vec<TokenizedExample>> {
        prepare(corpus, &self.template(), &self.vocab)
    }

    /// One optimizer step over `batch`; returns its mean losses.
    pub fn step(&mut self, batch: &[&TokenizedExample]) -> Result<LogRow> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let scale = 1.0 / batch.len() as f64;
        self.model.store.zero_grad();
        let (mut lm, mut lq, mut total) = (0.0, 0.0, 0.0);
        for ex in batch {
            let mut g = Graph::new();
            let f = self.model.forward(&mut g, ex, self.config.beta)?;
            lm += g.scalar(f.lm);
            lq += f.qase.map_or(0.0, |v| g.scalar(v));
            total += g.scalar(f.total);
            g.backward(f.total)?;
            g.accumulate_grads(&mut self.model.store, scale);
        }
        self.optimizer.step(&mut self.model.store);
        self.step += 1;
        Ok(LogRow {
            step: self.step,
            loss_lm: lm * scale,
            loss_qase: lq * scale,
            loss_total: total * scale,
        })
    }

    /// Runs the configured epochs over `examples`, calling `on_step` after
    /// every update.
    pub fn fit(&mut self, examples: &[TokenizedExample], mut on_step: impl FnMut(&LogRow)) -> Result<TrainSummary> {
        if examples.is_empty() {
            return Err(Error::config("training corpus is empty"));
        }
        let cfg = self.config.clone();
        let mut rng = Prng::derived(cfg.seed, SHUFFLE_STREAM);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut summary = TrainSummary {
            log: Vec::new(),
            epochs_run: 0,
            stopped_early: false,
        };
        'epochs: for epoch in 0..cfg.epochs {
            rng.shuffle(&mut order);
            summary.epochs_run = epoch + 1;
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&TokenizedExample> = chunk.iter().map(|&i| &examples[i]).collect();
                let row = self.step(&batch)?;
                debug!("step {} loss {:.6}", row.step, row.loss_total);
                on_step(&row);
                summary.log.push(row);
                if cfg.max_steps > 0 && summary.log.len() >= cfg.max_steps {
                    break 'epochs;
                }
                if plateaued(&summary.log, cfg.early_stop_window, cfg.early_stop_delta) {
                    summary.stopped_early = true;
                    break 'epochs;
                }
            }
        }
        // grads are scratch; a finished state matches its reloaded checkpoint
        self.model.store.zero_grad();
        info!(
            "trained {} steps over {} epochs, final loss {:.6}",
            summary.steps(),
            summary.epochs_run,
            summary.final_loss().unwrap_or(f64::NAN)
        );
        Ok(summary)
    }
}

/// True once the last `window` steps improve on the `window` before them by
/// less than `delta` in mean total loss.
pub fn plateaued(log: &[LogRow], window: usize, delta: f64) -> bool {
    if window == 0 || log.len() < 2 * window {
        return false;
    }
    let mean = |rows: &[LogRow]| rows.iter().map(|r| r.loss_total).sum::<f64>() / rows.len() as f64;
    let n = log.len();
    mean(&log[n - 2 * window..n - window]) - mean(&log[n - window..]) < delta
}

pub fn prepare(corpus: &[RawExample], template: &PromptTemplate, vocab: &Vocab) -> Result<Vec<TokenizedExample>> {
    corpus.iter().map(|ex| assemble_prompt(ex, template, vocab)).collect()
}

/// Builds a model for `corpus` and trains it.
pub fn train(config: &TrainConfig, corpus: &[RawExample]) -> Result<(TrainState, TrainSummary)> {
    train_with(config, corpus, |_| {})
}

pub fn train_with(
    config: &TrainConfig,
    corpus: &[RawExample],
    on_step: impl FnMut(&LogRow),
) -> Result<(TrainState, TrainSummary)> {
    if corpus.is_empty() {
        return Err(Error::config("training corpus is empty"));
    }
    if config.head != HeadKind::None {
        if let Some(ex) = corpus.iter().find(|e| e.gold_spans.is_empty()) {
            return Err(Error::config(format!(
                "example {} has no gold spans but head `{}` needs tags",
                ex.id, config.head
            )));
        }
    }
    let mut state = TrainState::init(config, corpus)?;
    let examples = state.prepare(corpus)?;
    let summary = state.fit(&examples, on_step)?;
    Ok((state, summary))
}
