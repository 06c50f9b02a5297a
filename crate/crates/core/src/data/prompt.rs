use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tokenize::tokenize;
use super::vocab::{Vocab, EOS, SEP, SPECIALS};
use super::RawExample;
use crate::error::{Error, Result};
use crate::spans::{align, IoTag};

pub const INSTRUCTION: &str =
    "Using the provided context, answer the question with exact phrases and avoid explanations.";
pub const MULTI_SPAN_CLAUSE: &str = " Format the response as follows: [\"answer1\", \"answer2\", ...].";
const RULE: &str = "- - -";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptOrder {
    ContextFirst,
    QuestionFirst,
}

impl fmt::Display for PromptOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptOrder::ContextFirst => "context_first",
            PromptOrder::QuestionFirst => "question_first",
        })
    }
}

impl FromStr for PromptOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "context_first" => Ok(PromptOrder::ContextFirst),
            "question_first" => Ok(PromptOrder::QuestionFirst),
            other => Err(Error::config(format!("unknown prompt order `{other}`"))),
        }
    }
}

/// Region of the assembled prompt a token came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Instruction,
    Context,
    Question,
    Separator,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub order: PromptOrder,
    pub multi_span_format_clause: bool,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            order: PromptOrder::ContextFirst,
            multi_span_format_clause: false,
        }
    }
}

/// Rendered prompt text plus the char range and segment of each piece.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedPrompt {
    pub text: String,
    pub pieces: Vec<Piece>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Piece {
    pub segment: Segment,
    pub start: usize,
    pub end: usize,
}

impl PromptTemplate {
    pub fn new(order: PromptOrder) -> Self {
        PromptTemplate {
            order,
            ..Self::default()
        }
    }

    pub fn instruction(&self) -> String {
        let mut s = format!("Instruction: {INSTRUCTION}");
        if self.multi_span_format_clause {
            s.push_str(MULTI_SPAN_CLAUSE);
        }
        s
    }

    /// Context-first:
    ///
    /// ```text
    /// Instruction: <instruction>
    /// - - -
    /// Context: <context>
    /// - - -
    /// Question: <question>
    /// - - -
    /// Answer:
    /// ```
    ///
    /// Question-first swaps the blocks and puts a `[SEP]` line between the
    /// question and the context.
    pub fn render(&self, context: &str, question: &str) -> RenderedPrompt {
        use Segment::*;
        let head = self.instruction();
        let parts: Vec<(Segment, String)> = match self.order {
            PromptOrder::ContextFirst => vec![
                (Instruction, format!("{head}\n{RULE}\nContext: ")),
                (Context, context.to_string()),
                (Instruction, format!("\n{RULE}\nQuestion: ")),
                (Question, question.to_string()),
                (Instruction, format!("\n{RULE}\nAnswer:")),
            ],
            PromptOrder::QuestionFirst => vec![
                (Instruction, format!("{head}\n{RULE}\nQuestion: ")),
                (Question, question.to_string()),
                (Instruction, "\n".to_string()),
                (Separator, SPECIALS[SEP].to_string()),
                (Instruction, "\nContext: ".to_string()),
                (Context, context.to_string()),
                (Instruction, format!("\n{RULE}\nAnswer:")),
            ],
        };
        let mut text = String::new();
        let mut pieces = Vec::with_capacity(parts.len());
        let mut cursor = 0;
        for (segment, s) in parts {
            let len = s.chars().count();
            text.push_str(&s);
            pieces.push(Piece {
                segment,
                start: cursor,
                end: cursor + len,
            });
            cursor += len;
        }
        RenderedPrompt { text, pieces }
    }
}

/// A prompt ready for the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenizedExample {
    pub id: String,
    pub prompt: String,
    pub prompt_token_ids: Vec<usize>,
    pub prompt_token_offsets: Vec<(usize, usize)>,
    pub segment_labels: Vec<Segment>,
    /// Char offset of the context inside `prompt`.
    pub context_char_base: usize,
    /// IO tags over the context tokens only.
    pub gold_tags: Vec<IoTag>,
    /// Target sequence, terminated by `EOS`.
    pub answer_token_ids: Vec<usize>,
    pub prompt_order: PromptOrder,
}

impl TokenizedExample {
    pub fn len(&self) -> usize {
        self.prompt_token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompt_token_ids.is_empty()
    }

    pub fn positions(&self, segment: Segment) -> Vec<usize> {
        self.segment_labels
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == segment)
            .map(|(i, _)| i)
            .collect()
    }

    /// Context token offsets relative to the context string.
    pub fn context_offsets(&self) -> Vec<(usize, usize)> {
        self.positions(Segment::Context)
            .into_iter()
            .map(|i| {
                let (s, e) = self.prompt_token_offsets[i];
                (s - self.context_char_base, e - self.context_char_base)
            })
            .collect()
    }
}

/// Renders `example` and maps every token to an id; gold tags come from
/// aligning the example's spans with the context tokens.
pub fn assemble_prompt(example: &RawExample, template: &PromptTemplate, vocab: &Vocab) -> Result<TokenizedExample> {
    let rendered = template.render(&example.context, &example.question);
    let chars: Vec<char> = rendered.text.chars().collect();
    let mut ids = Vec::new();
    let mut offsets = Vec::new();
    let mut segments = Vec::new();
    let mut context_base = None;
    let mut context_offsets = Vec::new();

    for piece in &rendered.pieces {
        if piece.segment == Segment::Separator {
            ids.push(SEP);
            offsets.push((piece.start, piece.end));
            segments.push(Segment::Separator);
            continue;
        }
        let text: String = chars[piece.start..piece.end].iter().collect();
        if piece.segment == Segment::Context {
            context_base = Some(piece.start);
        }
        for tok in tokenize(&text) {
            ids.push(vocab.id(&tok.text));
            offsets.push((piece.start + tok.start, piece.start + tok.end));
            segments.push(piece.segment);
            if piece.segment == Segment::Context {
                context_offsets.push((tok.start, tok.end));
            }
        }
    }
    if context_offsets.is_empty() {
        return Err(Error::contract(format!(
            "example {}: context segment is empty after tokenization",
            example.id
        )));
    }
    let gold_tags = align(&example.context, &example.gold_spans, &context_offsets).map_err(|e| Error::Ingest {
        id: example.id.clone(),
        reason: e.to_string(),
    })?;
    let mut answer_token_ids: Vec<usize> = tokenize(&example.target_text())
        .iter()
        .map(|t| vocab.id(&t.text))
        .collect();
    answer_token_ids.push(EOS);

    Ok(TokenizedExample {
        id: example.id.clone(),
        prompt: rendered.text,
        prompt_token_ids: ids,
        prompt_token_offsets: offsets,
        segment_labels: segments,
        context_char_base: context_base.expect("context piece present"),
        gold_tags,
        answer_token_ids,
        prompt_order: template.order,
    })
}

/// Vocabulary over every prompt and target token of `examples`.
pub fn build_vocab(examples: &[RawExample], template: &PromptTemplate) -> Vocab {
    let mut words = Vec::new();
    for order in [PromptOrder::ContextFirst, PromptOrder::QuestionFirst] {
        let t = PromptTemplate { order, ..*template };
        words.extend(tokenize(&t.render("", "").text).into_iter().map(|t| t.text));
    }
    for ex in examples {
        for text in [&ex.context, &ex.question, &ex.target_text()] {
            words.extend(tokenize(text).into_iter().map(|t| t.text));
        }
    }
    Vocab::from_tokens(words)
}

/// One JSON object per line, fields in declaration order.
pub fn write_tokenized_jsonl<W: Write>(mut out: W, examples: &[TokenizedExample]) -> std::io::Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut out, ex)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_tokenized_jsonl<R: BufRead>(input: R) -> Result<Vec<TokenizedExample>> {
    input
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(n, line)| {
            let line = line.map_err(|e| Error::io("<jsonl>", e))?;
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: format!("<jsonl line {}>", n + 1).into(),
                reason: e.to_string(),
            })
        })
        .collect()
}
