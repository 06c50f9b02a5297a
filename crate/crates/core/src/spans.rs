//! Conversions between answer text, character spans and IO tag sequences.
//!
//! All positions are `char` indices (Unicode scalar values), end exclusive.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inside/outside label for one token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IoTag {
    O,
    I,
}

impl IoTag {
    /// Class index used by the tagger: `O = 0`, `I = 1`.
    pub fn class(self) -> usize {
        match self {
            IoTag::O => 0,
            IoTag::I => 1,
        }
    }
}

impl fmt::Display for IoTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IoTag::O => "O",
            IoTag::I => "I",
        })
    }
}

/// A `[start, end)` character range with the text it covers.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

impl CharSpan {
    /// Span over `context[start..end]`; fails when the range is empty or
    /// leaves the context.
    pub fn new(context: &str, start: usize, end: usize) -> Result<Self> {
        let len = context.chars().count();
        if start >= end || end > len {
            return Err(Error::contract(format!(
                "span ({start}, {end}) outside context of length {len}"
            )));
        }
        Ok(CharSpan {
            start,
            end,
            text: char_slice(context, start, end),
        })
    }

    fn overlaps(&self, range: (usize, usize)) -> bool {
        self.start < range.1 && range.0 < self.end
    }
}

/// Spans sorted by start with overlapping members merged.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpanSet {
    spans: Vec<CharSpan>,
}

impl SpanSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Normalizes raw `(start, end)` ranges over `context`: sorts them and
    /// merges any that share at least one character.
    pub fn from_ranges(context: &str, ranges: &[(usize, usize)]) -> Result<Self> {
        let len = context.chars().count();
        let mut sorted = ranges.to_vec();
        sorted.sort_unstable();
        let mut merged: Vec<(usize, usize)> = Vec::with_capacity(sorted.len());
        for (s, e) in sorted {
            if s >= e || e > len {
                return Err(Error::contract(format!(
                    "span ({s}, {e}) outside context of length {len}"
                )));
            }
            match merged.last_mut() {
                Some(last) if s < last.1 => last.1 = last.1.max(e),
                _ => merged.push((s, e)),
            }
        }
        let spans = merged
            .into_iter()
            .map(|(s, e)| CharSpan {
                start: s,
                end: e,
                text: char_slice(context, s, e),
            })
            .collect();
        Ok(SpanSet { spans })
    }

    pub fn spans(&self) -> &[CharSpan] {
        &self.spans
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn texts(&self) -> Vec<String> {
        self.spans.iter().map(|s| s.text.clone()).collect()
    }

    pub fn ranges(&self) -> Vec<(usize, usize)> {
        self.spans.iter().map(|s| (s.start, s.end)).collect()
    }
}

/// Gold IO tags: a token is `I` iff its range shares at least one character
/// with some span.
pub fn align(context: &str, spans: &SpanSet, token_offsets: &[(usize, usize)]) -> Result<Vec<IoTag>> {
    let len = context.chars().count();
    if let Some(bad) = spans.spans().iter().find(|s| s.end > len) {
        return Err(Error::contract(format!(
            "span ({}, {}) outside context of length {len}",
            bad.start, bad.end
        )));
    }
    Ok(token_offsets
        .iter()
        .map(|&range| {
            if spans.spans().iter().any(|s| s.overlaps(range)) {
                IoTag::I
            } else {
                IoTag::O
            }
        })
        .collect())
}

/// Each maximal run of `I` tokens becomes one span from the run's first
/// token start to its last token end.
pub fn tags_to_spans(context: &str, tags: &[IoTag], token_offsets: &[(usize, usize)]) -> Result<SpanSet> {
    if tags.len() != token_offsets.len() {
        return Err(Error::Dimension {
            op: "tags_to_spans",
            left: vec![tags.len()],
            right: vec![token_offsets.len()],
        });
    }
    let mut ranges = Vec::new();
    let mut run: Option<(usize, usize)> = None;
    for (&tag, &(s, e)) in tags.iter().zip(token_offsets) {
        match (tag, run.as_mut()) {
            (IoTag::I, Some(r)) => r.1 = e,
            (IoTag::I, None) => run = Some((s, e)),
            (IoTag::O, _) => ranges.extend(run.take()),
        }
    }
    ranges.extend(run);
    SpanSet::from_ranges(context, &ranges)
}

/// Whether `spans` survive an align/decode round trip unchanged.
pub fn roundtrip_check(context: &str, spans: &SpanSet, token_offsets: &[(usize, usize)]) -> bool {
    align(context, spans, token_offsets)
        .and_then(|tags| tags_to_spans(context, &tags, token_offsets))
        .is_ok_and(|decoded| &decoded == spans)
}

/// Substring by char indices.
pub fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end - start).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    use IoTag::{I, O};

    #[test]
    fn exact_overlap() {
        let ctx = "a b c";
        let spans = SpanSet::from_ranges(ctx, &[(2, 3)]).unwrap();
        let tags = align(ctx, &spans, &[(0, 1), (2, 3), (4, 5)]).unwrap();
        assert_eq!(tags, vec![O, I, O]);
    }

    #[test]
    fn empty_set_is_all_outside() {
        let tags = align("a b c", &SpanSet::empty(), &[(0, 1), (2, 3), (4, 5)]).unwrap();
        assert_eq!(tags, vec![O, O, O]);
    }

    /// Brute-force oracle: enumerate every character of every token.
    fn overlap_oracle(spans: &[(usize, usize)], tokens: &[(usize, usize)]) -> Vec<IoTag> {
        tokens
            .iter()
            .map(|&(ts, te)| {
                let hit = (ts..te).any(|c| spans.iter().any(|&(s, e)| (s..e).contains(&c)));
                if hit {
                    I
                } else {
                    O
                }
            })
            .collect()
    }

    #[test]
    fn partial_overlap_counts() {
        let ctx = "ab cd";
        let tokens = [(0, 2), (3, 5)];
        let spans = SpanSet::from_ranges(ctx, &[(1, 4)]).unwrap();
        let tags = align(ctx, &spans, &tokens).unwrap();
        assert_eq!(tags, vec![I, I]);
        assert_eq!(tags, overlap_oracle(&[(1, 4)], &tokens));

        for s in 0..5 {
            for e in s + 1..=5 {
                let set = SpanSet::from_ranges(ctx, &[(s, e)]).unwrap();
                assert_eq!(
                    align(ctx, &set, &tokens).unwrap(),
                    overlap_oracle(&[(s, e)], &tokens),
                    "span ({s},{e})"
                );
            }
        }
    }

    #[test]
    fn out_of_bounds_span_rejected() {
        let mut set = SpanSet::from_ranges("abcdef", &[(2, 6)]).unwrap();
        assert!(align("abc", &set, &[(0, 3)]).is_err());
        assert!(SpanSet::from_ranges("abc", &[(2, 6)]).is_err());
        set.spans.clear();
        assert!(align("abc", &set, &[(0, 3)]).is_ok());
    }

    #[test]
    fn single_run_decodes() {
        let ctx = "a b c d";
        let toks = [(0, 1), (2, 3), (4, 5), (6, 7)];
        let set = tags_to_spans(ctx, &[O, I, I, O], &toks).unwrap();
        assert_eq!(set.ranges(), vec![(2, 5)]);
        assert_eq!(set.texts(), vec!["b c"]);
        assert!(tags_to_spans(ctx, &[O; 4], &toks).unwrap().is_empty());
        assert!(tags_to_spans(ctx, &[O; 3], &toks).is_err());
    }

    #[test]
    fn adjacent_spans_merge() {
        let ctx = "a b c";
        let toks = [(0, 1), (2, 3), (4, 5)];
        let gold = SpanSet::from_ranges(ctx, &[(2, 3), (4, 5)]).unwrap();
        assert_eq!(gold.len(), 2);
        let tags = align(ctx, &gold, &toks).unwrap();
        assert_eq!(&tags[1..], &[I, I]);
        let decoded = tags_to_spans(ctx, &tags, &toks).unwrap();
        assert_eq!(decoded.ranges(), vec![(2, 5)]);
        assert!(!roundtrip_check(ctx, &gold, &toks));
    }

    #[test]
    fn overlapping_ranges_merge_on_ingest() {
        let ctx = "new york city";
        let set = SpanSet::from_ranges(ctx, &[(4, 13), (0, 8)]).unwrap();
        assert_eq!(set.ranges(), vec![(0, 13)]);
        // touching but not overlapping spans stay apart
        let set = SpanSet::from_ranges(ctx, &[(0, 3), (3, 8)]).unwrap();
        assert_eq!(set.len(), 2);
    }

    type Layout = (String, Vec<(usize, usize)>, Vec<(usize, usize)>);

    /// Token layout of `n` single-letter tokens separated by spaces, plus a
    /// random subset of token runs chosen so no two runs are adjacent.
    fn layout_and_spans() -> impl Strategy<Value = Layout> {
        (1usize..20, prop::collection::vec(any::<u8>(), 20)).prop_map(|(n, coins)| {
            let ctx: String = (0..n).map(|_| "x").collect::<Vec<_>>().join(" ");
            let tokens: Vec<(usize, usize)> = (0..n).map(|i| (2 * i, 2 * i + 1)).collect();
            let mut spans = Vec::new();
            let mut i = 0;
            while i < n {
                if coins[i] % 3 == 0 {
                    let run = 1 + (coins[i] as usize / 3) % 3;
                    let end = (i + run).min(n);
                    spans.push((tokens[i].0, tokens[end - 1].1));
                    i = end + 1;
                } else {
                    i += 1;
                }
            }
            (ctx, tokens, spans)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn roundtrip_identity_for_non_adjacent((ctx, tokens, ranges) in layout_and_spans()) {
            let set = SpanSet::from_ranges(&ctx, &ranges).unwrap();
            prop_assert!(roundtrip_check(&ctx, &set, &tokens));
        }

        #[test]
        fn decoded_spans_sorted_disjoint_non_adjacent(tags in prop::collection::vec(any::<bool>(), 1..30)) {
            let n = tags.len();
            let ctx: String = vec!["y"; n].join(" ");
            let tokens: Vec<(usize, usize)> = (0..n).map(|i| (2 * i, 2 * i + 1)).collect();
            let tags: Vec<IoTag> = tags.into_iter().map(|b| if b { I } else { O }).collect();
            let set = tags_to_spans(&ctx, &tags, &tokens).unwrap();
            for w in set.spans().windows(2) {
                // a gap of at least one token (3 chars here) separates runs
                prop_assert!(w[0].end + 1 < w[1].start);
            }
        }

        #[test]
        fn align_is_monotone(extra_start in 0usize..10, extra_len in 1usize..5) {
            let ctx = "aa bb cc dd ee";
            let tokens = [(0, 2), (3, 5), (6, 8), (9, 11), (12, 14)];
            let base = SpanSet::from_ranges(ctx, &[(3, 5)]).unwrap();
            let end = (extra_start + extra_len).min(14);
            let bigger = SpanSet::from_ranges(ctx, &[(3, 5), (extra_start, end)]).unwrap();
            let before = align(ctx, &base, &tokens).unwrap();
            let after = align(ctx, &bigger, &tokens).unwrap();
            for (b, a) in before.iter().zip(&after) {
                prop_assert!(!(*b == I && *a == O));
            }
        }
    }
}
