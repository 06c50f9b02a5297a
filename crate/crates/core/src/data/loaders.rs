use std::collections::HashSet;
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{AnswerStyle, DatasetKind, RawExample};
use crate::error::{Error, Result};
use crate::spans::{char_slice, SpanSet};

/// Result of loading one dataset file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Loaded {
    pub examples: Vec<RawExample>,
    /// Ids of questions dropped because no gold span could be recovered or
    /// required text was empty.
    pub rejected: Vec<String>,
    /// Answers whose offset was wrong but whose text was found elsewhere.
    pub recovered: usize,
    /// Answers discarded because their text was not in the context.
    pub dropped: usize,
}

pub fn load(path: &Path, kind: DatasetKind) -> Result<Loaded> {
    match kind {
        DatasetKind::Squad => load_squad(path),
        DatasetKind::MultiSpanQa => load_multispanqa(path),
        DatasetKind::Quoref | DatasetKind::Synth => load_quoref(path),
    }
}

/// SQuAD v1.1 layout; annotator answers are alternatives.
pub fn load_squad(path: &Path) -> Result<Loaded> {
    parse_squad_layout(&read(path)?, path, AnswerStyle::Alternatives)
}

/// Quoref ships in the SQuAD layout, with each listed answer being one span.
pub fn load_quoref(path: &Path) -> Result<Loaded> {
    parse_squad_layout(&read(path)?, path, AnswerStyle::SpanList)
}

pub fn load_multispanqa(path: &Path) -> Result<Loaded> {
    parse_multispanqa(&read(path)?, path)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadFile {
    #[serde(default)]
    version: Option<String>,
    data: Vec<SquadArticle>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadArticle {
    #[serde(default)]
    title: String,
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadQa {
    id: String,
    question: String,
    answers: Vec<SquadAnswer>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadAnswer {
    text: String,
    answer_start: usize,
}

fn parse_error(path: &Path, e: impl ToString) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

pub(crate) fn parse_squad_layout(text: &str, path: &Path, style: AnswerStyle) -> Result<Loaded> {
    let file: SquadFile = serde_json::from_str(text).map_err(|e| parse_error(path, e))?;
    let mut out = Loaded::default();
    let mut seen = HashSet::new();
    for article in file.data {
        for para in article.paragraphs {
            let ctx_chars: Vec<char> = para.context.chars().collect();
            for qa in para.qas {
                if !seen.insert(qa.id.clone()) {
                    return Err(Error::Ingest {
                        id: qa.id,
                        reason: "duplicate id".into(),
                    });
                }
                let mut ranges = Vec::new();
                let mut answers = Vec::new();
                for ans in &qa.answers {
                    let len = ans.text.chars().count();
                    if len == 0 {
                        out.dropped += 1;
                        continue;
                    }
                    let start = ans.answer_start;
                    let at_offset = start + len <= ctx_chars.len()
                        && ctx_chars[start..start + len].iter().copied().eq(ans.text.chars());
                    if at_offset {
                        ranges.push((start, start + len));
                    } else if let Some(found) = find_chars(&ctx_chars, &ans.text) {
                        warn!("{}: answer_start {start} does not match {:?}; recovered at {found}", qa.id, ans.text);
                        out.recovered += 1;
                        ranges.push((found, found + len));
                    } else {
                        warn!("{}: answer {:?} not found in context; dropped", qa.id, ans.text);
                        out.dropped += 1;
                        continue;
                    }
                    if !answers.contains(&ans.text) || style == AnswerStyle::Alternatives {
                        answers.push(ans.text.clone());
                    }
                }
                push_example(&mut out, qa.id, &para.context, qa.question, answers, &ranges, style)?;
            }
        }
    }
    if out.dropped > 0 || !out.rejected.is_empty() {
        warn!(
            "{}: {} answers dropped, {} questions rejected",
            path.display(),
            out.dropped,
            out.rejected.len()
        );
    }
    Ok(out)
}

fn push_example(
    out: &mut Loaded,
    id: String,
    context: &str,
    question: String,
    answers: Vec<String>,
    ranges: &[(usize, usize)],
    style: AnswerStyle,
) -> Result<()> {
    if ranges.is_empty() || context.trim().is_empty() || question.trim().is_empty() {
        warn!("{id}: rejected (no recoverable gold span or empty text)");
        out.rejected.push(id);
        return Ok(());
    }
    let gold_spans = SpanSet::from_ranges(context, ranges).map_err(|e| Error::Ingest {
        id: id.clone(),
        reason: e.to_string(),
    })?;
    debug_assert!(gold_spans
        .spans()
        .iter()
        .all(|s| char_slice(context, s.start, s.end) == s.text));
    out.examples.push(RawExample {
        id,
        context: context.to_string(),
        question,
        answers,
        gold_spans,
        style,
    });
    Ok(())
}

/// First char index of `needle` in `haystack`.
fn find_chars(haystack: &[char], needle: &str) -> Option<usize> {
    let needle: Vec<char> = needle.chars().collect();
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle.as_slice())
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum TextOrTokens {
    Text(String),
    Tokens(Vec<String>),
}

impl TextOrTokens {
    /// Joined text plus the char range of every token.
    fn layout(&self) -> (String, Vec<(usize, usize)>) {
        match self {
            TextOrTokens::Text(t) => (t.clone(), Vec::new()),
            TextOrTokens::Tokens(toks) => {
                let mut text = String::new();
                let mut offsets = Vec::with_capacity(toks.len());
                let mut cursor = 0;
                for (i, tok) in toks.iter().enumerate() {
                    if i > 0 {
                        text.push(' ');
                        cursor += 1;
                    }
                    let n = tok.chars().count();
                    offsets.push((cursor, cursor + n));
                    text.push_str(tok);
                    cursor += n;
                }
                (text, offsets)
            }
        }
    }
}

#[derive(Debug, Deserialize)]
struct MultiSpanFile {
    data: Vec<MultiSpanItem>,
}

#[derive(Debug, Deserialize)]
struct MultiSpanItem {
    #[serde(default)]
    id: Option<String>,
    context: TextOrTokens,
    question: TextOrTokens,
    #[serde(default)]
    label: Option<Vec<String>>,
    #[serde(default)]
    answers: Option<Vec<String>>,
}

/// MultiSpanQA release layout: tokenized context and question with a BIO
/// label per context token. Items carrying an `answers` list of strings
/// instead are located by substring search.
pub(crate) fn parse_multispanqa(text: &str, path: &Path) -> Result<Loaded> {
    let file: MultiSpanFile = serde_json::from_str(text).map_err(|e| parse_error(path, e))?;
    let mut out = Loaded::default();
    let mut seen = HashSet::new();
    for (n, item) in file.data.into_iter().enumerate() {
        let id = item.id.clone().unwrap_or_else(|| format!("{n}"));
        if !seen.insert(id.clone()) {
            return Err(Error::Ingest {
                id,
                reason: "duplicate id".into(),
            });
        }
        let (context, offsets) = item.context.layout();
        let (question, _) = item.question.layout();
        let mut ranges = Vec::new();
        if let Some(labels) = &item.label {
            if labels.len() != offsets.len() {
                warn!("{id}: {} labels for {} context tokens", labels.len(), offsets.len());
                out.rejected.push(id);
                continue;
            }
            let mut run: Option<(usize, usize)> = None;
            for (label, &(s, e)) in labels.iter().zip(&offsets) {
                match (label.as_str(), run.as_mut()) {
                    ("B", _) => {
                        ranges.extend(run.take());
                        run = Some((s, e));
                    }
                    ("I", Some(r)) => r.1 = e,
                    ("I", None) => run = Some((s, e)),
                    _ => ranges.extend(run.take()),
                }
            }
            ranges.extend(run);
        } else if let Some(answers) = &item.answers {
            let chars: Vec<char> = context.chars().collect();
            for ans in answers {
                match find_chars(&chars, ans) {
                    Some(s) => ranges.push((s, s + ans.chars().count())),
                    None => {
                        warn!("{id}: answer {ans:?} not found in context; dropped");
                        out.dropped += 1;
                    }
                }
            }
        }
        let answers = ranges.iter().map(|&(s, e)| char_slice(&context, s, e)).collect();
        push_example(&mut out, id, &context, question, answers, &ranges, AnswerStyle::SpanList)?;
    }
    Ok(out)
}

/// Writes examples in the SQuAD v1.1 layout, one paragraph per example.
pub fn write_squad_layout(examples: &[RawExample]) -> String {
    let data = vec![SquadArticle {
        title: "synthetic".into(),
        paragraphs: examples
            .iter()
            .map(|ex| SquadParagraph {
                context: ex.context.clone(),
                qas: vec![SquadQa {
                    id: ex.id.clone(),
                    question: ex.question.clone(),
                    answers: ex
                        .gold_spans
                        .spans()
                        .iter()
                        .map(|s| SquadAnswer {
                            text: s.text.clone(),
                            answer_start: s.start,
                        })
                        .collect(),
                }],
            })
            .collect(),
    }];
    let file = SquadFile {
        version: Some("1.1".into()),
        data,
    };
    serde_json::to_string_pretty(&file).expect("serializable")
}
