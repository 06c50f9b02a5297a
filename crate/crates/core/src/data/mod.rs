//! Dataset ingestion, tokenization, prompt assembly and the synthetic corpus.

mod loaders;
mod prompt;
mod synth;
mod tokenize;
mod vocab;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use loaders::{load, load_multispanqa, load_quoref, load_squad, write_squad_layout, Loaded};
pub use prompt::{
    assemble_prompt, build_vocab, read_tokenized_jsonl, write_tokenized_jsonl, PromptOrder, PromptTemplate,
    RenderedPrompt, Segment, TokenizedExample, INSTRUCTION, MULTI_SPAN_CLAUSE,
};
pub use synth::{synth_corpus, SynthOptions};
pub use tokenize::{detokenize, tokenize, Token};
pub use vocab::{Vocab, BOS, EOS, PAD, SEP, SPECIALS, UNK};

use crate::error::Error;
use crate::spans::SpanSet;

/// Separator between spans in a multi-span generation target.
pub const SPAN_DELIMITER: &str = ";";

/// How the `answers` of a [`RawExample`] relate to each other.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerStyle {
    /// Independent annotations of one answer (SQuAD); the first is the target.
    Alternatives,
    /// Every answer is one span of a multi-span answer.
    SpanList,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawExample {
    pub id: String,
    pub context: String,
    pub question: String,
    pub answers: Vec<String>,
    pub gold_spans: SpanSet,
    pub style: AnswerStyle,
}

impl RawExample {
    /// The string the decoder is trained to generate.
    pub fn target_text(&self) -> String {
        match self.style {
            AnswerStyle::Alternatives => self.answers.first().cloned().unwrap_or_default(),
            AnswerStyle::SpanList => self.answers.join(&format!("{SPAN_DELIMITER} ")),
        }
    }
}

/// Splits generated text into spans on [`SPAN_DELIMITER`].
pub fn split_spans(text: &str) -> Vec<String> {
    text.split(SPAN_DELIMITER)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Input format and scoring convention of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Squad,
    MultiSpanQa,
    Quoref,
    Synth,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Squad => "squad",
            DatasetKind::MultiSpanQa => "multispanqa",
            DatasetKind::Quoref => "quoref",
            DatasetKind::Synth => "synth",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "squad" => Ok(DatasetKind::Squad),
            "multispanqa" => Ok(DatasetKind::MultiSpanQa),
            "quoref" => Ok(DatasetKind::Quoref),
            "synth" => Ok(DatasetKind::Synth),
            other => Err(Error::config(format!("unknown dataset kind `{other}`"))),
        }
    }
}
