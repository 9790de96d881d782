use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Polarity, Sentence};

/// The 17 Universal POS tags.
pub const UPOS_TAGS: [&str; 17] = [
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN",
    "PUNCT", "SCONJ", "SYM", "VERB", "X",
];

/// Size of the POS embedding table: the UPOS tags plus `<pad>` at id 0.
pub const POS_VOCAB_SIZE: usize = UPOS_TAGS.len() + 1;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
const POLARITY_BASE: usize = 4;

const RESERVED: [&str; 7] = [
    "<pad>",
    "<unk>",
    "<s>",
    "</s>",
    "<neutral>",
    "<positive>",
    "<negative>",
];

pub fn pos_id(tag: &str) -> usize {
    UPOS_TAGS
        .iter()
        .position(|t| *t == tag)
        .map_or(0, |i| i + 1)
}

/// Word vocabulary with stable reserved ids; the three polarity class
/// tokens live in the same table so the decoder can embed them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from(RESERVED.iter().map(|s| s.to_string()).collect::<Vec<_>>())
    }
}

impl Vocabulary {
    /// Reserved ids, then every token in first-seen order.
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> Self {
        let mut v = Self::default();
        for s in sentences {
            for t in &s.tokens {
                v.insert(t);
            }
        }
        v
    }

    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Unknown words map to `<unk>`.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn polarity_id(&self, p: Polarity) -> usize {
        POLARITY_BASE + p.class_id()
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// `[<s>, ids..., </s>]`
    pub fn encode_with_specials(&self, tokens: &[String]) -> Vec<usize> {
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        ids.push(BOS);
        ids.extend(tokens.iter().map(|t| self.id(t)));
        ids.push(EOS);
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_stable() {
        let v = Vocabulary::default();
        assert_eq!(v.id("<pad>"), PAD);
        assert_eq!(v.id("<unk>"), UNK);
        assert_eq!(v.id("<s>"), BOS);
        assert_eq!(v.id("</s>"), EOS);
        assert_eq!(v.polarity_id(Polarity::Neutral), v.id("<neutral>"));
        assert_eq!(v.polarity_id(Polarity::Positive), v.id("<positive>"));
        assert_eq!(v.polarity_id(Polarity::Negative), v.id("<negative>"));
    }

    #[test]
    fn unknown_maps_to_unk_and_save_load_keeps_ids() {
        let mut v = Vocabulary::default();
        let food = v.insert("Food");
        assert_eq!(v.insert("Food"), food);
        assert_eq!(v.id("pizza"), UNK);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id("Food"), food);
    }

    #[test]
    fn pos_ids_are_dense() {
        let ids: Vec<usize> = UPOS_TAGS.iter().map(|t| pos_id(t)).collect();
        assert_eq!(ids, (1..=17).collect::<Vec<_>>());
        assert_eq!(pos_id("???"), 0);
    }
}
