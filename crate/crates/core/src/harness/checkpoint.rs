//! Checkpoint container.
//!
//! ```text
//! QASE-CHECKPOINT\n
//! {one-line JSON header}\n
//! f64 little-endian payload
//! ```
//!
//! The payload holds every parameter tensor in registration order (the order
//! of `header.tensors`), followed by Adam's first moments and then its second
//! moments in the same order when the optimizer is Adam.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{OptimizerKind, TrainConfig};
use super::optim::Optimizer;
use super::train::TrainState;
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, QaseModel};

pub const MAGIC: &[u8] = b"QASE-CHECKPOINT\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model: ModelConfig,
    train: TrainConfig,
    step: u64,
    optimizer: Optimizer,
    tensors: Vec<TensorEntry>,
    vocab: Vocab,
}

pub fn to_bytes(state: &TrainState) -> Vec<u8> {
    let store = &state.model.store;
    let header = Header {
        format_version: FORMAT_VERSION,
        model: state.model.config,
        train: state.config.clone(),
        step: state.step,
        optimizer: state.optimizer.clone(),
        tensors: store
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
            })
            .collect(),
        vocab: state.vocab.clone(),
    };
    let mut out = MAGIC.to_vec();
    serde_json::to_writer(&mut out, &header).expect("header serializes");
    out.push(b'\n');
    let values = store.iter().flat_map(|p| p.tensor.values().iter().copied());
    for x in values.chain(state.optimizer.moments()) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn from_bytes(bytes: &[u8]) -> Result<TrainState> {
    let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| bad("not a checkpoint (bad magic line)"))?;
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header =
        serde_json::from_slice(&rest[..nl]).map_err(|e| bad(format!("unreadable header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad(format!(
            "format version {} is not supported (expected {FORMAT_VERSION})",
            header.format_version
        )));
    }
    let expected = header.train.model_config(header.vocab.len());
    if header.model != expected {
        return Err(bad(format!(
            "model dims {:?} disagree with the training config and vocabulary ({:?})",
            header.model, expected
        )));
    }

    let mut model = QaseModel::new(header.model)?;
    if model.store.len() != header.tensors.len() {
        return Err(bad(format!(
            "checkpoint lists {} tensors, the model has {}",
            header.tensors.len(),
            model.store.len()
        )));
    }
    for (p, e) in model.store.iter().zip(&header.tensors) {
        if p.name != e.name || p.tensor.shape() != e.shape.as_slice() {
            return Err(bad(format!(
                "tensor {} {:?} does not match the model's {} {:?}",
                e.name,
                e.shape,
                p.name,
                p.tensor.shape()
            )));
        }
    }

    let payload = &rest[nl + 1..];
    if payload.len() % 8 != 0 {
        return Err(bad("payload is not a whole number of f64 values"));
    }
    let mut floats = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let numel = model.store.numel();
    let moments = if header.optimizer.kind == OptimizerKind::Adam { 2 * numel } else { 0 };
    if payload.len() / 8 != numel + moments {
        return Err(bad(format!(
            "payload holds {} values, expected {}",
            payload.len() / 8,
            numel + moments
        )));
    }
    for p in model.store.iter_mut() {
        for w in p.tensor.values_mut() {
            *w = floats.next().expect("length checked");
        }
    }
    let mut optimizer = header.optimizer;
    if optimizer.kind == OptimizerKind::Adam {
        let lens: Vec<usize> = model.store.iter().map(|p| p.tensor.len()).collect();
        let mut take = |n: usize| -> Vec<f64> { floats.by_ref().take(n).collect() };
        optimizer.m = lens.iter().map(|&n| take(n)).collect();
        optimizer.v = lens.iter().map(|&n| take(n)).collect();
    }
    Ok(TrainState {
        config: header.train,
        vocab: header.vocab,
        model,
        optimizer,
        step: header.step,
    })
}

pub fn save(state: &TrainState, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(state)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_corpus, SynthOptions};

    fn small() -> TrainConfig {
        TrainConfig {
            hidden_dim: 8,
            ff_dim: 8,
            num_heads: 2,
            max_steps: 3,
            ..TrainConfig::default()
        }
    }

    fn trained(cfg: &TrainConfig) -> TrainState {
        let corpus = synth_corpus(4, 1, &SynthOptions::default());
        super::super::train(cfg, &corpus).unwrap().0
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        for optimizer in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            let state = trained(&TrainConfig { optimizer, ..small() });
            let bytes = to_bytes(&state);
            let back = from_bytes(&bytes).unwrap();
            assert_eq!(back, state);
            assert_eq!(to_bytes(&back), bytes);
        }
    }

    #[test]
    fn rejects_version_and_layout_mismatches() {
        let bytes = to_bytes(&trained(&small()));
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let swap = |from: &str, to: &str| -> Vec<u8> {
            let nl = MAGIC.len() + bytes[MAGIC.len()..].iter().position(|&b| b == b'\n').unwrap();
            let header = String::from_utf8(bytes[..nl].to_vec()).unwrap().replacen(from, to, 1);
            [header.as_bytes(), &bytes[nl..]].concat()
        };
        assert!(text.contains("\"format_version\":1"));
        let err = from_bytes(&swap("\"format_version\":1", "\"format_version\":9")).unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
        let err = from_bytes(&swap("\"hidden_dim\":8", "\"hidden_dim\":16")).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
        assert!(from_bytes(&bytes[..bytes.len() - 8]).is_err());
        assert!(from_bytes(b"garbage").is_err());
    }
}
