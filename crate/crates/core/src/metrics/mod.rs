//! SQuAD exact match / token F1 and multi-span set metrics.

pub mod assignment;

use std::collections::{HashMap, HashSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use assignment::{greedy_assignment, optimal_assignment, total_credit};

/// ASCII punctuation removed during normalization (Python's
/// `string.punctuation`).
pub const PUNCTUATION: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

static ARTICLES: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(a|an|the)\b").expect("valid regex"));

/// Lowercase, strip ASCII punctuation, drop the articles a/an/the, collapse
/// whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lower = text.to_lowercase();
    let no_punct: String = lower.chars().filter(|c| !PUNCTUATION.contains(*c)).collect();
    let no_articles = ARTICLES.replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn norm_tokens(text: &str) -> Vec<String> {
    normalize_answer(text).split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect()
}

/// Bag-of-tokens F1 between two normalized token lists, counting
/// multiplicity. Two empty lists score 1.
fn bag_f1(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Token-bag F1 of two raw strings after normalization.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    bag_f1(&norm_tokens(pred), &norm_tokens(gold))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SquadScore {
    pub em: f64,
    pub f1: f64,
}

/// Best exact match and token F1 of `pred` over the gold alternatives.
pub fn squad_score(pred: &str, golds: &[String]) -> Result<SquadScore> {
    if golds.is_empty() {
        return Err(Error::contract("squad_score needs at least one gold answer"));
    }
    let p = normalize_answer(pred);
    let p_tokens = norm_tokens(pred);
    let em = golds.iter().any(|g| normalize_answer(g) == p);
    let f1 = golds
        .iter()
        .map(|g| bag_f1(&p_tokens, &norm_tokens(g)))
        .fold(0.0, f64::max);
    Ok(SquadScore {
        em: if em { 1.0 } else { 0.0 },
        f1,
    })
}

/// An id with its answer strings (one per span, or one per alternative).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answers {
    pub id: String,
    pub answers: Vec<String>,
}

impl Answers {
    pub fn new(id: impl Into<String>, answers: Vec<String>) -> Self {
        Answers {
            id: id.into(),
            answers,
        }
    }
}

/// Pairs predictions with golds by id; both sides must cover the same ids.
fn pair_up<'a>(preds: &'a [Answers], golds: &'a [Answers]) -> Result<Vec<(&'a Answers, &'a Answers)>> {
    let by_id: HashMap<&str, &Answers> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    if by_id.len() != preds.len() || preds.len() != golds.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} gold examples (or duplicate ids)",
            preds.len(),
            golds.len()
        )));
    }
    golds
        .iter()
        .map(|g| {
            by_id
                .get(g.id.as_str())
                .map(|p| (*p, g))
                .ok_or_else(|| Error::contract(format!("no prediction for id {}", g.id)))
        })
        .collect()
}

/// Corpus-level SQuAD EM and F1 as percentages.
pub fn squad_corpus(preds: &[Answers], golds: &[Answers]) -> Result<(f64, f64)> {
    let pairs = pair_up(preds, golds)?;
    if pairs.is_empty() {
        return Err(Error::contract("empty corpus"));
    }
    let mut em = 0.0;
    let mut f1 = 0.0;
    for (p, g) in &pairs {
        let s = squad_score(p.answers.first().map_or("", String::as_str), &g.answers)?;
        em += s.em;
        f1 += s.f1;
    }
    let n = pairs.len() as f64;
    Ok((100.0 * em / n, 100.0 * f1 / n))
}

fn credit_matrix(preds: &[String], golds: &[String], exact: bool) -> Vec<Vec<f64>> {
    let p: Vec<Vec<String>> = preds.iter().map(|s| norm_tokens(s)).collect();
    let g: Vec<Vec<String>> = golds.iter().map(|s| norm_tokens(s)).collect();
    p.iter()
        .map(|pt| {
            g.iter()
                .map(|gt| {
                    if exact {
                        f64::from(u8::from(pt == gt))
                    } else {
                        bag_f1(pt, gt)
                    }
                })
                .collect()
        })
        .collect()
}

/// Pooled credit and span counts over a corpus.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SetCounts {
    pub credit: f64,
    pub predicted: usize,
    pub gold: usize,
}

impl SetCounts {
    /// Micro F1 as a percentage.
    pub fn f1(&self) -> f64 {
        if self.predicted == 0 && self.gold == 0 {
            return 100.0;
        }
        if self.predicted == 0 || self.gold == 0 || self.credit == 0.0 {
            return 0.0;
        }
        let precision = self.credit / self.predicted as f64;
        let recall = self.credit / self.gold as f64;
        100.0 * 2.0 * precision * recall / (precision + recall)
    }
}

fn set_counts(preds: &[Answers], golds: &[Answers], exact: bool) -> Result<SetCounts> {
    let mut counts = SetCounts::default();
    for (p, g) in pair_up(preds, golds)? {
        let credit = credit_matrix(&p.answers, &g.answers, exact);
        let pairs = if exact {
            greedy_assignment(&credit)
        } else {
            optimal_assignment(&credit)
        };
        counts.credit += total_credit(&credit, &pairs);
        counts.predicted += p.answers.len();
        counts.gold += g.answers.len();
    }
    Ok(counts)
}

/// Micro-averaged exact-match set F1 over normalized span strings.
pub fn multispan_em_f1(preds: &[Answers], golds: &[Answers]) -> Result<f64> {
    Ok(set_counts(preds, golds, true)?.f1())
}

/// Like [`multispan_em_f1`] with partial credit: each matched pair scores
/// its token F1 and the matching maximizes total credit.
pub fn multispan_overlap_f1(preds: &[Answers], golds: &[Answers]) -> Result<f64> {
    Ok(set_counts(preds, golds, false)?.f1())
}

/// Exact `(start, end)` span-set F1 used for tagger diagnostics.
pub fn span_set_f1(pred: &[Vec<(usize, usize)>], gold: &[Vec<(usize, usize)>]) -> f64 {
    let mut counts = SetCounts::default();
    for (p, g) in pred.iter().zip(gold) {
        let gs: HashSet<_> = g.iter().collect();
        counts.credit += p.iter().filter(|s| gs.contains(s)).count() as f64;
        counts.predicted += p.len();
        counts.gold += g.len();
    }
    counts.f1()
}

/// Tagger quality on the context tokens; reported alongside but separate
/// from the answer metrics, since answers come from generation alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggerDiagnostics {
    pub token_accuracy: f64,
    pub span_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub id: String,
    pub prediction: String,
    pub em: f64,
    pub f1: f64,
}

/// Evaluation result for one dataset. Percentages in `[0, 100]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub n_examples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tagger_diagnostics: Option<TaggerDiagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_example: Option<Vec<ExampleScore>>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
