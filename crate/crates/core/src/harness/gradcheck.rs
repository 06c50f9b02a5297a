//! Finite-difference check of every parameter gradient of the combined loss.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{PromptOrder, Segment, TokenizedExample, EOS, SPECIALS};
use crate::error::{Error, Result};
use crate::model::{forward_with, ModelConfig, QaseModel};
use crate::numcore::gradcheck::{check_params, GradCheck, FD_STEP};
use crate::plm::PlmConfig;
use crate::qase::{HeadConfig, HeadKind};
use crate::rng::Prng;
use crate::spans::IoTag;

/// Largest model the check agrees to perturb element by element.
pub const MAX_PARAMS: usize = 5000;
pub const TOLERANCE: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSpec {
    pub hidden_dim: usize,
    pub proj_dim: usize,
    pub num_heads: usize,
    pub context_tokens: usize,
    pub question_tokens: usize,
    pub answer_tokens: usize,
    pub vocab_size: usize,
    pub beta: f64,
    pub head: HeadKind,
}

impl Default for GradcheckSpec {
    fn default() -> Self {
        GradcheckSpec {
            hidden_dim: 8,
            proj_dim: 8,
            num_heads: 2,
            context_tokens: 5,
            question_tokens: 3,
            answer_tokens: 3,
            vocab_size: 16,
            beta: 1.0,
            head: HeadKind::Qase,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub checks: Vec<GradCheck>,
    pub max_rel_err: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }

    /// One line per parameter tensor, then a summary line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            writeln!(
                out,
                "{:<28} n={:<5} max_rel={:.3e} max_abs={:.3e}",
                c.name, c.numel, c.max_rel_err, c.max_abs_err
            )
            .expect("string write");
        }
        let verdict = if self.passed() { "ok" } else { "FAILED" };
        writeln!(out, "max relative error {:.3e} (tolerance {TOLERANCE:e}): {verdict}", self.max_rel_err)
            .expect("string write");
        out
    }
}

/// A random model and example with the requested dimensions.
pub fn fixture(spec: &GradcheckSpec, seed: u64) -> Result<(QaseModel, TokenizedExample)> {
    if spec.vocab_size <= SPECIALS.len() {
        return Err(Error::config("vocab_size must exceed the reserved ids"));
    }
    let config = ModelConfig {
        plm: PlmConfig {
            vocab_size: spec.vocab_size,
            hidden_dim: spec.hidden_dim,
            ff_dim: 2 * spec.hidden_dim,
            num_encoder_layers: 1,
            num_decoder_layers: 1,
            num_heads: spec.num_heads,
            max_seq_len: spec.context_tokens + spec.question_tokens + spec.answer_tokens + 1,
            seed,
        },
        head: HeadConfig {
            kind: spec.head,
            proj_dim: spec.proj_dim,
            num_heads: spec.num_heads,
        },
    };
    let model = QaseModel::new(config)?;
    if model.store.numel() > MAX_PARAMS {
        return Err(Error::config(format!(
            "{} parameters exceed the gradcheck limit of {MAX_PARAMS}",
            model.store.numel()
        )));
    }
    let mut rng = Prng::derived(seed, 0x4743);
    let n = spec.context_tokens + spec.question_tokens;
    let word = |rng: &mut Prng| SPECIALS.len() + rng.below(spec.vocab_size - SPECIALS.len());
    let ids: Vec<usize> = (0..n).map(|_| word(&mut rng)).collect();
    let mut segments = vec![Segment::Context; spec.context_tokens];
    segments.extend(vec![Segment::Question; spec.question_tokens]);
    let gold_tags = (0..spec.context_tokens)
        .map(|_| if rng.below(2) == 1 { IoTag::I } else { IoTag::O })
        .collect();
    let mut answer: Vec<usize> = (0..spec.answer_tokens).map(|_| word(&mut rng)).collect();
    answer.push(EOS);
    let example = TokenizedExample {
        id: "gradcheck".into(),
        prompt: String::new(),
        prompt_token_ids: ids,
        prompt_token_offsets: (0..n).map(|i| (i, i + 1)).collect(),
        segment_labels: segments,
        context_char_base: 0,
        gold_tags,
        answer_token_ids: answer,
        prompt_order: PromptOrder::ContextFirst,
    };
    Ok((model, example))
}

pub fn run(spec: &GradcheckSpec, seed: u64) -> Result<GradcheckReport> {
    let (mut model, example) = fixture(spec, seed)?;
    let ids: Vec<_> = model.store.ids().collect();
    let (plm, head) = (model.plm.clone(), model.head.clone());
    let checks = check_params(&mut model.store, &ids, FD_STEP, |g, store| {
        Ok(forward_with(&plm, head.as_ref(), g, store, &example, spec.beta)?.total)
    })?;
    let max_rel_err = checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    Ok(GradcheckReport { checks, max_rel_err })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::gradcheck::analytic_grads;
    use crate::numcore::Graph;

    #[test]
    fn default_dims_pass_with_one_line_per_tensor() {
        let spec = GradcheckSpec::default();
        let report = run(&spec, 1).unwrap();
        let (model, _) = fixture(&spec, 1).unwrap();
        assert_eq!(report.checks.len(), model.store.len());
        assert!(report.passed(), "{}", report.render());
        assert_eq!(report.render().lines().count(), model.store.len() + 1);
    }

    #[test]
    fn zero_beta_leaves_head_untouched() {
        let spec = GradcheckSpec {
            beta: 0.0,
            ..GradcheckSpec::default()
        };
        let (model, ex) = fixture(&spec, 4).unwrap();
        let head_ids = model.head_param_ids();
        let grads = analytic_grads(&model.store, &head_ids, &|g: &mut Graph, s| {
            Ok(forward_with(&model.plm, model.head.as_ref(), g, s, &ex, 0.0)?.total)
        })
        .unwrap();
        assert!(grads.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn oversized_models_rejected() {
        let spec = GradcheckSpec {
            hidden_dim: 32,
            proj_dim: 32,
            ..GradcheckSpec::default()
        };
        assert!(matches!(run(&spec, 0), Err(Error::Config(_))));
    }
}
