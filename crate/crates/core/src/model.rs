//! Language model plus optional tagging head sharing one parameter store.

use serde::{Deserialize, Serialize};

use crate::data::TokenizedExample;
use crate::error::{Error, Result};
use crate::numcore::{Graph, ParamId, ParamStore, Var};
use crate::plm::{Plm, PlmConfig};
use crate::qase::{combined_loss, qase_loss, HeadConfig, HeadKind, QaseHead, TagPrediction};
use crate::rng::Prng;
use crate::spans::IoTag;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub plm: PlmConfig,
    pub head: HeadConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QaseModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub plm: Plm,
    pub head: Option<QaseHead>,
}

/// Losses recorded for one example.
#[derive(Clone, Debug)]
pub struct Forward {
    pub lm: Var,
    pub qase: Option<Var>,
    pub total: Var,
    pub tags: Option<TagPrediction>,
}

impl QaseModel {
    /// Fresh model; language-model parameters are drawn first, then the head,
    /// from one stream seeded by `config.plm.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut rng = Prng::new(config.plm.seed);
        let mut store = ParamStore::new();
        let plm = Plm::register(config.plm, &mut store, &mut rng)?;
        let head = QaseHead::register(config.head, config.plm.hidden_dim, &mut store, &mut rng)?;
        Ok(QaseModel {
            config,
            store,
            plm,
            head,
        })
    }

    pub fn head_kind(&self) -> HeadKind {
        self.config.head.kind
    }

    /// Parameters that only the tagging loss reaches.
    pub fn head_param_ids(&self) -> Vec<ParamId> {
        self.head.as_ref().map(QaseHead::param_ids).unwrap_or_default()
    }

    /// Records `L = L_lm + beta·L_qase` (or `L_lm` alone without a head).
    pub fn forward(&self, g: &mut Graph, example: &TokenizedExample, beta: f64) -> Result<Forward> {
        forward_with(&self.plm, self.head.as_ref(), g, &self.store, example, beta)
    }

    pub fn generate(&self, example: &TokenizedExample, max_new_tokens: usize) -> Result<Vec<usize>> {
        self.plm.generate(&self.store, example, max_new_tokens)
    }

    /// Hard tags from the head, or `None` without one.
    pub fn predict_tags(&self, example: &TokenizedExample) -> Result<Option<Vec<IoTag>>> {
        let Some(head) = &self.head else { return Ok(None) };
        let mut g = Graph::new();
        let enc = self.plm.encode(&mut g, &self.store, example)?;
        Ok(Some(head.predict(&mut g, &self.store, &enc)?.hard_tags))
    }
}

/// [`QaseModel::forward`] against an arbitrary store, for finite-difference
/// checks that perturb parameters.
pub fn forward_with(
    plm: &Plm,
    head: Option<&QaseHead>,
    g: &mut Graph,
    store: &ParamStore,
    example: &TokenizedExample,
    beta: f64,
) -> Result<Forward> {
    let enc = plm.encode(g, store, example)?;
    let lm = plm.lm_loss(g, store, example, &enc)?;
    let Some(head) = head else {
        return Ok(Forward {
            lm,
            qase: None,
            total: lm,
            tags: None,
        });
    };
    let ctx_tokens = example.positions(crate::data::Segment::Context).len();
    if example.gold_tags.len() != ctx_tokens {
        return Err(Error::config(format!(
            "example {} lacks gold tags for its {ctx_tokens} context tokens",
            example.id
        )));
    }
    let tags = head.predict(g, store, &enc)?;
    let lq = qase_loss(g, &tags, &example.gold_tags)?;
    let total = combined_loss(g, lm, lq, beta)?;
    Ok(Forward {
        lm,
        qase: Some(lq),
        total,
        tags: Some(tags),
    })
}
