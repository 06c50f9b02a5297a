use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SEP: usize = 4;

/// Surface forms of the reserved ids, in id order.
pub const SPECIALS: [&str; 5] = ["[PAD]", "[BOS]", "[EOS]", "[UNK]", "[SEP]"];

/// Token-to-id map. Ids `0..5` are reserved; corpus tokens follow in
/// lexicographic order so the mapping only depends on the token set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = tokens
            .into_iter()
            .map(|t| t.as_ref().to_string())
            .filter(|t| !SPECIALS.contains(&t.as_str()))
            .collect();
        let all: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).chain(set).collect();
        Vocab::from(all)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(SPECIALS[UNK], String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Text for generated ids, skipping reserved tokens.
    pub fn decode(&self, ids: &[usize]) -> String {
        let words: Vec<&str> = ids
            .iter()
            .filter(|&&id| id >= SPECIALS.len())
            .map(|&id| self.token(id))
            .collect();
        super::tokenize::detokenize(&words)
    }
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_and_unk_fallback() {
        let v = Vocab::from_tokens(["zeta", "alpha", "alpha", "[EOS]"]);
        assert_eq!(v.len(), 7);
        assert_eq!(v.id("[EOS]"), EOS);
        assert_eq!(v.id("alpha"), 5);
        assert_eq!(v.id("zeta"), 6);
        assert_eq!(v.id("missing"), UNK);
        assert_eq!(v.decode(&[BOS, 5, 6, EOS]), "alpha zeta");
    }
}
