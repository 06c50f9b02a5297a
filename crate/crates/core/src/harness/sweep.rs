//! Grid search over `beta` and learning rate.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::evaluate::evaluate;
use super::train::train;
use crate::data::{DatasetKind, RawExample};
use crate::error::{Error, Result};
use crate::rng::mix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub betas: Vec<f64>,
    pub lrs: Vec<f64>,
}

impl Default for SweepGrid {
    /// `beta` from 0.5 to 2.0 in steps of 0.1, five learning rates.
    fn default() -> Self {
        SweepGrid {
            betas: (5..=20).map(|i| i as f64 / 10.0).collect(),
            lrs: vec![1e-5, 5e-5, 1e-4, 5e-4, 1e-3],
        }
    }
}

impl SweepGrid {
    /// Cells in row-major order, betas outermost.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.betas
            .iter()
            .flat_map(|&b| self.lrs.iter().map(move |&lr| (b, lr)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: usize,
    pub beta: f64,
    pub lr: f64,
    pub seed: u64,
    /// EM for SQuAD-style kinds, exact-match set F1 for multi-span.
    pub score: f64,
    /// Token F1, or overlap F1 for multi-span.
    pub secondary: f64,
    pub final_loss: f64,
    pub steps: usize,
}

/// Trains one run per cell on the first `fraction` of `train_set`, scores it
/// on `eval_set` and returns rows ranked best first. Cell `i` trains with
/// seed `mix(base.seed, i)`.
pub fn sweep(
    base: &TrainConfig,
    grid: &SweepGrid,
    train_set: &[RawExample],
    eval_set: &[RawExample],
    kind: DatasetKind,
    fraction: f64,
) -> Result<Vec<SweepRow>> {
    if grid.betas.is_empty() || grid.lrs.is_empty() {
        return Err(Error::config("sweep grids must be non-empty"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!("corpus fraction must be in (0, 1], got {fraction}")));
    }
    let n = ((train_set.len() as f64 * fraction).ceil() as usize).clamp(1, train_set.len().max(1));
    let subset = &train_set[..n.min(train_set.len())];
    let mut rows: Vec<SweepRow> = grid
        .cells()
        .into_par_iter()
        .enumerate()
        .map(|(cell, (beta, lr))| {
            let cfg = TrainConfig {
                beta,
                lr,
                seed: mix(base.seed, cell as u64),
                ..base.clone()
            };
            let (state, summary) = train(&cfg, subset)?;
            let report = evaluate(&state, eval_set, kind)?;
            Ok(SweepRow {
                cell,
                beta,
                lr,
                seed: cfg.seed,
                score: report.em.or(report.em_f1).unwrap_or(0.0),
                secondary: report.f1.or(report.overlap_f1).unwrap_or(0.0),
                final_loss: summary.final_loss().unwrap_or(f64::NAN),
                steps: summary.steps(),
            })
        })
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(b.secondary.total_cmp(&a.secondary))
            .then(a.cell.cmp(&b.cell))
    });
    Ok(rows)
}

pub fn format_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("rank  beta  lr       score   second  loss      steps\n");
    for (i, r) in rows.iter().enumerate() {
        writeln!(
            out,
            "{:<5} {:<5.1} {:<8.0e} {:<7.2} {:<7.2} {:<9.5} {}",
            i + 1,
            r.beta,
            r.lr,
            r.score,
            r.secondary,
            r.final_loss,
            r.steps
        )
        .expect("string write");
    }
    out
}
