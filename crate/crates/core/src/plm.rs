//! Tiny encoder-decoder language model.
//!
//! Token embeddings are scaled by `sqrt(hidden_dim)` and summed with
//! sinusoidal positions. Encoder blocks are `x + attn(x)` followed by
//! `h + ff(h)`; decoder blocks add a cross-attention sublayer over the
//! encoder output between the causal self-attention and the feed-forward.
//! No layer normalization.

use serde::{Deserialize, Serialize};

use crate::data::{Segment, TokenizedExample, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::nn::{init_param, multi_head_attention, positional_encoding, AttentionIds, FeedForwardIds};
use crate::numcore::{Graph, ParamId, ParamStore, Var};
use crate::rng::Prng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlmConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub ff_dim: usize,
    pub num_encoder_layers: usize,
    pub num_decoder_layers: usize,
    pub num_heads: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl PlmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("hidden_dim", self.hidden_dim),
            ("ff_dim", self.ff_dim),
            ("num_encoder_layers", self.num_encoder_layers),
            ("num_decoder_layers", self.num_decoder_layers),
            ("num_heads", self.num_heads),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            return Err(Error::config(format!(
                "hidden_dim {} not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.vocab_size < 4 {
            return Err(Error::config("vocab_size must be at least 4 (pad, bos, eos, unk)"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub attn: AttentionIds,
    pub ff: FeedForwardIds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderLayer {
    pub self_attn: AttentionIds,
    pub cross_attn: AttentionIds,
    pub ff: FeedForwardIds,
}

/// Parameter layout of the language model inside a [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plm {
    pub config: PlmConfig,
    pub embed: ParamId,
    pub encoder: Vec<EncoderLayer>,
    pub decoder: Vec<DecoderLayer>,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// `seq_len × hidden_dim`.
    pub hidden: Var,
    pub segments: Vec<Segment>,
}

impl Plm {
    /// Registers every parameter, drawing initial values from `rng` in
    /// registration order.
    pub fn register(config: PlmConfig, store: &mut ParamStore, rng: &mut Prng) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_dim;
        let embed = init_param(store, rng, "plm.embed", &[config.vocab_size, d]);
        let encoder = (0..config.num_encoder_layers)
            .map(|i| EncoderLayer {
                attn: AttentionIds::register(store, rng, &format!("plm.enc{i}.attn"), d),
                ff: FeedForwardIds::register(store, rng, &format!("plm.enc{i}.ff"), d, config.ff_dim),
            })
            .collect();
        let decoder = (0..config.num_decoder_layers)
            .map(|i| DecoderLayer {
                self_attn: AttentionIds::register(store, rng, &format!("plm.dec{i}.self_attn"), d),
                cross_attn: AttentionIds::register(store, rng, &format!("plm.dec{i}.cross_attn"), d),
                ff: FeedForwardIds::register(store, rng, &format!("plm.dec{i}.ff"), d, config.ff_dim),
            })
            .collect();
        let out_w = init_param(store, rng, "plm.out.w", &[d, config.vocab_size]);
        let out_b = init_param(store, rng, "plm.out.b", &[config.vocab_size]);
        Ok(Plm {
            config,
            embed,
            encoder,
            decoder,
            out_w,
            out_b,
        })
    }

    fn embed_with_positions(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        let v = self.config.vocab_size;
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::Index {
                what: "token id",
                index: bad,
                bound: v,
            });
        }
        if ids.len() > self.config.max_seq_len {
            return Err(Error::Truncation {
                len: ids.len(),
                limit: self.config.max_seq_len,
            });
        }
        let d = self.config.hidden_dim;
        let table = g.param(store, self.embed);
        let tokens = g.gather_rows(table, ids)?;
        let tokens = g.scale(tokens, (d as f64).sqrt());
        let pe = g.constant(vec![ids.len(), d], positional_encoding(ids.len(), d))?;
        g.add(tokens, pe)
    }

    /// One hidden state per prompt token.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, example: &TokenizedExample) -> Result<EncoderOutput> {
        let mut x = self.embed_with_positions(g, store, &example.prompt_token_ids)?;
        for layer in &self.encoder {
            let a = multi_head_attention(g, store, &layer.attn, x, x, self.config.num_heads, false)?;
            let h = g.add(x, a.output)?;
            let f = layer.ff.forward(g, store, h)?;
            x = g.add(h, f)?;
        }
        Ok(EncoderOutput {
            hidden: x,
            segments: example.segment_labels.clone(),
        })
    }

    /// Next-token logits, `prefix.len() × vocab_size`, for a decoder fed
    /// `prefix` and attending over `memory`.
    pub fn decode_logits(&self, g: &mut Graph, store: &ParamStore, memory: Var, prefix: &[usize]) -> Result<Var> {
        let heads = self.config.num_heads;
        let mut y = self.embed_with_positions(g, store, prefix)?;
        for layer in &self.decoder {
            let s = multi_head_attention(g, store, &layer.self_attn, y, y, heads, true)?;
            let h = g.add(y, s.output)?;
            let c = multi_head_attention(g, store, &layer.cross_attn, h, memory, heads, false)?;
            let h = g.add(h, c.output)?;
            let f = layer.ff.forward(g, store, h)?;
            y = g.add(h, f)?;
        }
        let w = g.param(store, self.out_w);
        let b = g.param(store, self.out_b);
        let logits = g.matmul(y, w)?;
        g.add_row(logits, b)
    }

    /// Teacher-forced cross-entropy averaged over the answer tokens.
    pub fn lm_loss(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        example: &TokenizedExample,
        enc: &EncoderOutput,
    ) -> Result<Var> {
        let answer = &example.answer_token_ids;
        if answer.is_empty() {
            return Err(Error::contract(format!("example {} has an empty answer", example.id)));
        }
        if answer.last() != Some(&EOS) {
            return Err(Error::contract(format!("answer of {} is not EOS-terminated", example.id)));
        }
        let prefix: Vec<usize> = std::iter::once(BOS).chain(answer[..answer.len() - 1].iter().copied()).collect();
        let logits = self.decode_logits(g, store, enc.hidden, &prefix)?;
        let probs = g.softmax_rows(logits)?;
        g.cross_entropy(probs, answer)
    }

    /// Greedy decoding from `BOS` until `EOS` or `max_new_tokens`. The
    /// returned ids exclude the final `EOS`; `PAD` is never emitted and ties
    /// go to the lowest id.
    pub fn generate(&self, store: &ParamStore, example: &TokenizedExample, max_new_tokens: usize) -> Result<Vec<usize>> {
        let mut g = Graph::new();
        let enc = self.encode(&mut g, store, example)?;
        let mut prefix = vec![BOS];
        let mut out = Vec::new();
        let v = self.config.vocab_size;
        while out.len() < max_new_tokens && prefix.len() <= self.config.max_seq_len {
            let logits = self.decode_logits(&mut g, store, enc.hidden, &prefix)?;
            let last = &g.value(logits)[(prefix.len() - 1) * v..];
            let next = argmax_skipping_pad(last);
            if next == EOS {
                break;
            }
            out.push(next);
            prefix.push(next);
        }
        Ok(out)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.embed];
        for l in &self.encoder {
            ids.extend(l.attn.ids());
            ids.extend([l.ff.w1, l.ff.b1, l.ff.w2, l.ff.b2]);
        }
        for l in &self.decoder {
            ids.extend(l.self_attn.ids());
            ids.extend(l.cross_attn.ids());
            ids.extend([l.ff.w1, l.ff.b1, l.ff.w2, l.ff.b2]);
        }
        ids.extend([self.out_w, self.out_b]);
        ids
    }
}

fn argmax_skipping_pad(logits: &[f64]) -> usize {
    let mut best = usize::MAX;
    for (id, &x) in logits.iter().enumerate() {
        if id == PAD {
            continue;
        }
        if best == usize::MAX || x > logits[best] {
            best = id;
        }
    }
    best
}

#[cfg(test)]
mod tests;
