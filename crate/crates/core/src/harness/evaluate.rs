//! Greedy generation, tagging output and dataset scoring.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::TrainState;
use crate::data::{split_spans, AnswerStyle, DatasetKind, RawExample, TokenizedExample};
use crate::error::{Error, Result};
use crate::metrics::{
    multispan_em_f1, multispan_overlap_f1, span_set_f1, squad_score, Answers, ExampleScore, MetricReport,
    TaggerDiagnostics,
};
use crate::spans::{tags_to_spans, CharSpan};

/// One line of a predictions file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub answer: String,
}

/// One line of a tagger output file; offsets are char indices into the
/// example's context.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSpans {
    pub id: String,
    pub spans: Vec<CharSpan>,
}

/// Greedy answers for every example. Examples are decoded in parallel and
/// returned in input order.
pub fn predict(state: &TrainState, examples: &[TokenizedExample]) -> Result<Vec<Prediction>> {
    let max_new = state.config.max_new_tokens;
    examples
        .par_iter()
        .map(|ex| {
            let ids = state.model.generate(ex, max_new)?;
            Ok(Prediction {
                id: ex.id.clone(),
                answer: state.vocab.decode(&ids),
            })
        })
        .collect()
}

/// Context spans decoded from the head's hard tags; `None` without a head.
pub fn tag(state: &TrainState, corpus: &[RawExample], examples: &[TokenizedExample]) -> Result<Option<Vec<TaggedSpans>>> {
    if state.model.head.is_none() {
        return Ok(None);
    }
    corpus
        .par_iter()
        .zip(examples)
        .map(|(raw, ex)| {
            let tags = state.model.predict_tags(ex)?.expect("head present");
            let spans = tags_to_spans(&raw.context, &tags, &ex.context_offsets())?;
            Ok(TaggedSpans {
                id: ex.id.clone(),
                spans: spans.spans().to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Token accuracy and exact span-set F1 of the head's tags against the gold
/// tags. Diagnostic only: answers come from generation.
pub fn tagger_diagnostics(
    state: &TrainState,
    corpus: &[RawExample],
    examples: &[TokenizedExample],
) -> Result<Option<TaggerDiagnostics>> {
    if state.model.head.is_none() {
        return Ok(None);
    }
    type Counts = (usize, usize, Vec<(usize, usize)>, Vec<(usize, usize)>);
    let per: Vec<Counts> = corpus
        .par_iter()
        .zip(examples)
        .map(|(raw, ex)| {
            let tags = state.model.predict_tags(ex)?.expect("head present");
            let offsets = ex.context_offsets();
            let correct = tags.iter().zip(&ex.gold_tags).filter(|(a, b)| a == b).count();
            let pred = tags_to_spans(&raw.context, &tags, &offsets)?.ranges();
            let gold = tags_to_spans(&raw.context, &ex.gold_tags, &offsets)?.ranges();
            Ok((correct, tags.len(), pred, gold))
        })
        .collect::<Result<_>>()?;
    let correct: usize = per.iter().map(|p| p.0).sum();
    let total: usize = per.iter().map(|p| p.1).sum();
    let (pred, gold): (Vec<_>, Vec<_>) = per.into_iter().map(|p| (p.2, p.3)).unzip();
    Ok(Some(TaggerDiagnostics {
        token_accuracy: if total == 0 { 100.0 } else { 100.0 * correct as f64 / total as f64 },
        span_f1: span_set_f1(&pred, &gold),
    }))
}

fn expected_style(kind: DatasetKind) -> AnswerStyle {
    match kind {
        DatasetKind::Squad => AnswerStyle::Alternatives,
        _ => AnswerStyle::SpanList,
    }
}

/// Scores `predictions` against `corpus` with `kind`'s convention: SQuAD EM
/// and F1 for squad and quoref, the multi-span set metrics for multispanqa,
/// and both for synth.
pub fn score(kind: DatasetKind, corpus: &[RawExample], predictions: &[Prediction]) -> Result<MetricReport> {
    if corpus.is_empty() {
        return Err(Error::config("evaluation corpus is empty"));
    }
    if let Some(ex) = corpus.iter().find(|e| e.style != expected_style(kind)) {
        return Err(Error::config(format!(
            "example {} has {:?} answers, which `{kind}` does not score",
            ex.id, ex.style
        )));
    }
    let by_id: std::collections::HashMap<&str, &str> =
        predictions.iter().map(|p| (p.id.as_str(), p.answer.as_str())).collect();
    if by_id.len() != predictions.len() || predictions.len() != corpus.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} examples (or duplicate ids)",
            predictions.len(),
            corpus.len()
        )));
    }
    let answer_of = |ex: &RawExample| {
        by_id
            .get(ex.id.as_str())
            .copied()
            .ok_or_else(|| Error::contract(format!("no prediction for id {}", ex.id)))
    };

    let squad_like = matches!(kind, DatasetKind::Squad | DatasetKind::Quoref | DatasetKind::Synth);
    let set_like = matches!(kind, DatasetKind::MultiSpanQa | DatasetKind::Synth);
    let mut per_example = Vec::with_capacity(corpus.len());
    let (mut pred_sets, mut gold_sets) = (Vec::new(), Vec::new());
    for ex in corpus {
        let answer = answer_of(ex)?;
        let (em, f1) = if squad_like {
            let golds = match ex.style {
                AnswerStyle::Alternatives => ex.answers.clone(),
                AnswerStyle::SpanList => vec![ex.target_text()],
            };
            let s = squad_score(answer, &golds)?;
            (s.em, s.f1)
        } else {
            let p = [Answers::new(ex.id.clone(), split_spans(answer))];
            let g = [Answers::new(ex.id.clone(), ex.answers.clone())];
            (multispan_em_f1(&p, &g)? / 100.0, multispan_overlap_f1(&p, &g)? / 100.0)
        };
        if set_like {
            pred_sets.push(Answers::new(ex.id.clone(), split_spans(answer)));
            gold_sets.push(Answers::new(ex.id.clone(), ex.answers.clone()));
        }
        per_example.push(ExampleScore {
            id: ex.id.clone(),
            prediction: answer.to_string(),
            em,
            f1,
        });
    }
    let n = corpus.len() as f64;
    let mean = |f: fn(&ExampleScore) -> f64| 100.0 * per_example.iter().map(f).sum::<f64>() / n;
    let (em, f1) = if squad_like {
        (Some(mean(|s| s.em)), Some(mean(|s| s.f1)))
    } else {
        (None, None)
    };
    let (em_f1, overlap_f1) = if set_like {
        (
            Some(multispan_em_f1(&pred_sets, &gold_sets)?),
            Some(multispan_overlap_f1(&pred_sets, &gold_sets)?),
        )
    } else {
        (None, None)
    };
    Ok(MetricReport {
        dataset: kind.name().to_string(),
        n_examples: corpus.len(),
        em,
        f1,
        em_f1,
        overlap_f1,
        tagger_diagnostics: None,
        per_example: Some(per_example),
    })
}

/// Generates, scores and attaches tagger diagnostics.
pub fn evaluate(state: &TrainState, corpus: &[RawExample], kind: DatasetKind) -> Result<MetricReport> {
    if let Some(ex) = corpus.iter().find(|e| e.style != expected_style(kind)) {
        return Err(Error::config(format!(
            "example {} has {:?} answers, which `{kind}` does not score",
            ex.id, ex.style
        )));
    }
    let examples = state.prepare(corpus)?;
    let predictions = predict(state, &examples)?;
    let mut report = score(kind, corpus, &predictions)?;
    report.tagger_diagnostics = tagger_diagnostics(state, corpus, &examples)?;
    Ok(report)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut out: W, rows: &[T]) -> std::io::Result<()> {
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_predictions<R: BufRead>(input: R) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<predictions>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: format!("<predictions line {}>", n + 1).into(),
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_corpus, SynthOptions};
    use crate::spans::SpanSet;

    fn squad_example(id: &str, answers: &[&str]) -> RawExample {
        RawExample {
            id: id.into(),
            context: "Paris is big".into(),
            question: "What is big?".into(),
            answers: answers.iter().map(|s| s.to_string()).collect(),
            gold_spans: SpanSet::from_ranges("Paris is big", &[(0, 5)]).unwrap(),
            style: AnswerStyle::Alternatives,
        }
    }

    fn pred(id: &str, answer: &str) -> Prediction {
        Prediction {
            id: id.into(),
            answer: answer.into(),
        }
    }

    #[test]
    fn empty_predictions_score_zero() {
        let corpus = synth_corpus(6, 2, &SynthOptions::default());
        let preds: Vec<_> = corpus.iter().map(|e| pred(&e.id, "")).collect();
        let r = score(DatasetKind::Synth, &corpus, &preds).unwrap();
        assert_eq!(r.em, Some(0.0));
        assert_eq!(r.em_f1, Some(0.0));
        let back: MetricReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn gold_predictions_score_full() {
        let corpus = synth_corpus(6, 2, &SynthOptions::default());
        let preds: Vec<_> = corpus.iter().map(|e| pred(&e.id, &e.target_text())).collect();
        let r = score(DatasetKind::Synth, &corpus, &preds).unwrap();
        assert_eq!((r.em, r.f1, r.em_f1, r.overlap_f1), (Some(100.0), Some(100.0), Some(100.0), Some(100.0)));
        let r = score(DatasetKind::MultiSpanQa, &corpus, &preds).unwrap();
        assert_eq!(r.em, None);
        assert_eq!(r.overlap_f1, Some(100.0));
    }

    #[test]
    fn squad_uses_best_alternative() {
        let corpus = [squad_example("a", &["Paris", "the city of Paris"]), squad_example("b", &["x"])];
        let r = score(DatasetKind::Squad, &corpus, &[pred("b", "y"), pred("a", "city of paris")]).unwrap();
        assert_eq!(r.em, Some(50.0));
        assert!(r.em_f1.is_none());
    }

    #[test]
    fn kind_mismatch_is_config_error() {
        let corpus = [squad_example("a", &["Paris"])];
        assert!(matches!(
            score(DatasetKind::MultiSpanQa, &corpus, &[pred("a", "Paris")]),
            Err(Error::Config(_))
        ));
        assert!(matches!(score(DatasetKind::Squad, &corpus, &[pred("z", "Paris")]), Err(Error::Contract(_))));
    }

    #[test]
    fn predictions_jsonl_roundtrip() {
        let rows = vec![pred("a", "x; y"), pred("b", "")];
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &rows).unwrap();
        assert_eq!(read_predictions(&buf[..]).unwrap(), rows);
    }
}
