//! Question-attended span extraction head.
//!
//! Hidden states are projected with `z = relu(v·W_proj + b_proj)`. Context
//! rows of `z` then attend over the question rows (context as queries,
//! question as keys and values), so the attention output has one row per
//! context token. A linear layer and softmax give `p_i = [P(O), P(I)]` per
//! context token, trained with mean cross-entropy against the gold IO tags.
//!
//! The baseline head skips the attention and tags the projected context rows
//! directly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Segment;
use crate::error::{Error, Result};
use crate::nn::{init_param, multi_head_attention, AttentionIds, AttentionOutput};
use crate::numcore::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::plm::EncoderOutput;
use crate::rng::Prng;
use crate::spans::IoTag;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Qase,
    Baseline,
    None,
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Qase => "qase",
            HeadKind::Baseline => "baseline",
            HeadKind::None => "none",
        })
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qase" => Ok(HeadKind::Qase),
            "baseline" => Ok(HeadKind::Baseline),
            "none" => Ok(HeadKind::None),
            other => Err(Error::config(format!("unknown head `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub kind: HeadKind,
    /// Width of the projected embeddings `z`; also the attention width.
    pub proj_dim: usize,
    pub num_heads: usize,
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kind == HeadKind::None {
            return Ok(());
        }
        if self.proj_dim == 0 || self.num_heads == 0 || !self.proj_dim.is_multiple_of(self.num_heads) {
            return Err(Error::config(format!(
                "head proj_dim {} must be a positive multiple of num_heads {}",
                self.proj_dim, self.num_heads
            )));
        }
        Ok(())
    }
}

/// Parameter layout of a tagging head (QASE or baseline).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaseHead {
    pub config: HeadConfig,
    pub input_dim: usize,
    pub w_proj: ParamId,
    pub b_proj: ParamId,
    /// Present for the QASE head, absent for the baseline.
    pub attn: Option<AttentionIds>,
    pub w_lin: ParamId,
    pub b_lin: ParamId,
}

/// Per-context-token class probabilities and thresholded tags.
#[derive(Clone, Debug)]
pub struct TagPrediction {
    /// `n_ctx × 2`; column 0 is O, column 1 is I.
    pub probs: Var,
    pub hard_tags: Vec<IoTag>,
}

impl TagPrediction {
    fn from_probs(g: &Graph, probs: Var) -> Self {
        let hard_tags = g
            .value(probs)
            .chunks(2)
            .map(|row| if row[1] >= 0.5 { IoTag::I } else { IoTag::O })
            .collect();
        TagPrediction { probs, hard_tags }
    }

    pub fn probs_tensor(&self, g: &Graph) -> Tensor {
        g.to_tensor(self.probs)
    }
}

fn positions(segments: &[Segment], want: Segment) -> Vec<usize> {
    segments
        .iter()
        .enumerate()
        .filter(|(_, s)| **s == want)
        .map(|(i, _)| i)
        .collect()
}

fn require(segments: &[Segment], want: Segment, name: &str) -> Result<Vec<usize>> {
    let pos = positions(segments, want);
    if pos.is_empty() {
        return Err(Error::contract(format!("no {name} tokens in the prompt")));
    }
    Ok(pos)
}

impl QaseHead {
    /// Registers the head's parameters. Returns `None` for [`HeadKind::None`].
    pub fn register(config: HeadConfig, input_dim: usize, store: &mut ParamStore, rng: &mut Prng) -> Result<Option<Self>> {
        config.validate()?;
        if config.kind == HeadKind::None {
            return Ok(None);
        }
        let p = config.proj_dim;
        let w_proj = init_param(store, rng, "head.proj.w", &[input_dim, p]);
        let b_proj = init_param(store, rng, "head.proj.b", &[p]);
        let attn = (config.kind == HeadKind::Qase).then(|| AttentionIds::register(store, rng, "head.mha", p));
        let w_lin = init_param(store, rng, "head.lin.w", &[p, 2]);
        let b_lin = init_param(store, rng, "head.lin.b", &[2]);
        Ok(Some(QaseHead {
            config,
            input_dim,
            w_proj,
            b_proj,
            attn,
            w_lin,
            b_lin,
        }))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.w_proj, self.b_proj];
        if let Some(a) = &self.attn {
            ids.extend(a.ids());
        }
        ids.extend([self.w_lin, self.b_lin]);
        ids
    }

    /// `relu(v·W_proj + b_proj)` for every token.
    pub fn project(&self, g: &mut Graph, store: &ParamStore, enc: &EncoderOutput) -> Result<Var> {
        let width = g.dims(enc.hidden).1;
        if width != self.input_dim {
            return Err(Error::Dimension {
                op: "project",
                left: g.shape(enc.hidden).to_vec(),
                right: store.get(self.w_proj).shape().to_vec(),
            });
        }
        let w = g.param(store, self.w_proj);
        let b = g.param(store, self.b_proj);
        let h = g.matmul(enc.hidden, w)?;
        let h = g.add_row(h, b)?;
        Ok(g.relu(h))
    }

    /// Context rows of `z` attend over its question rows. Instruction and
    /// separator tokens take no part.
    pub fn question_attend(&self, g: &mut Graph, store: &ParamStore, z: Var, segments: &[Segment]) -> Result<AttentionOutput> {
        let attn = self
            .attn
            .as_ref()
            .ok_or_else(|| Error::contract("baseline head has no attention block"))?;
        let ctx = require(segments, Segment::Context, "context")?;
        let qst = require(segments, Segment::Question, "question")?;
        let queries = g.gather_rows(z, &ctx)?;
        let memory = g.gather_rows(z, &qst)?;
        multi_head_attention(g, store, attn, queries, memory, self.config.num_heads, false)
    }

    /// `softmax(x·W_lin + b_lin)` per row; a row is tagged I when
    /// `P(I) >= 0.5`.
    pub fn tag(&self, g: &mut Graph, store: &ParamStore, attended: Var) -> Result<TagPrediction> {
        let w = g.param(store, self.w_lin);
        let b = g.param(store, self.b_lin);
        let logits = g.matmul(attended, w)?;
        let logits = g.add_row(logits, b)?;
        let probs = g.softmax_rows(logits)?;
        Ok(TagPrediction::from_probs(g, probs))
    }

    /// Ablation head: tags the projected context rows without attention.
    pub fn baseline_tag(&self, g: &mut Graph, store: &ParamStore, z: Var, segments: &[Segment]) -> Result<TagPrediction> {
        let ctx = require(segments, Segment::Context, "context")?;
        let rows = g.gather_rows(z, &ctx)?;
        self.tag(g, store, rows)
    }

    /// Full head forward for this head's kind.
    pub fn predict(&self, g: &mut Graph, store: &ParamStore, enc: &EncoderOutput) -> Result<TagPrediction> {
        let z = self.project(g, store, enc)?;
        match self.config.kind {
            HeadKind::Qase => {
                let a = self.question_attend(g, store, z, &enc.segments)?;
                self.tag(g, store, a.output)
            }
            _ => self.baseline_tag(g, store, z, &enc.segments),
        }
    }
}

/// Mean per-token cross-entropy of the tagger over the context tokens.
pub fn qase_loss(g: &mut Graph, pred: &TagPrediction, gold: &[IoTag]) -> Result<Var> {
    if pred.hard_tags.len() != gold.len() {
        return Err(Error::contract(format!(
            "{} predicted tags for {} gold tags",
            pred.hard_tags.len(),
            gold.len()
        )));
    }
    let targets: Vec<usize> = gold.iter().map(|t| t.class()).collect();
    g.cross_entropy(pred.probs, &targets)
}

/// `l_lm + beta·l_qase`.
pub fn combined_loss(g: &mut Graph, l_lm: Var, l_qase: Var, beta: f64) -> Result<Var> {
    if beta.is_nan() || beta < 0.0 {
        return Err(Error::contract(format!("beta must be non-negative, got {beta}")));
    }
    let weighted = g.scale(l_qase, beta);
    g.add(l_lm, weighted)
}
