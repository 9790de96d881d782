use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::vocab::UPOS_TAGS;
use crate::error::{Error, Result};

/// Inclusive 1-based token range, serialized as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn single(i: usize) -> Self {
        Self { start: i, end: i }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn positions(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

impl From<(usize, usize)> for Span {
    fn from((start, end): (usize, usize)) -> Self {
        Self { start, end }
    }
}

impl From<Span> for (usize, usize) {
    fn from(s: Span) -> Self {
        (s.start, s.end)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.start, self.end)
    }
}

/// Sentiment classes in candidate-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Neutral,
    Positive,
    Negative,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Neutral, Polarity::Positive, Polarity::Negative];

    pub fn class_id(self) -> usize {
        self as usize
    }

    pub fn from_class_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Neutral => "neutral",
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        }
    }
}

impl FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "neutral" => Ok(Polarity::Neutral),
            "positive" => Ok(Polarity::Positive),
            "negative" => Ok(Polarity::Negative),
            other => Err(format!("unknown polarity `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldTriplet {
    pub aspect: Span,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opinion: Option<Span>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polarity: Option<Polarity>,
}

/// One annotated example: tokens, POS tags, dependency edges and gold.
#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    /// 0-based position in its source file.
    pub id: usize,
    pub tokens: Vec<String>,
    pub pos_tags: Vec<String>,
    /// `(head, dependent)`; head 0 is the root.
    pub dep_edges: Vec<(usize, usize)>,
    pub gold: Vec<GoldTriplet>,
}

#[derive(Serialize, Deserialize)]
struct RawSentence {
    tokens: Vec<String>,
    pos: Vec<String>,
    deps: Vec<[usize; 2]>,
    #[serde(default)]
    triplets: Vec<RawTriplet>,
}

#[derive(Serialize, Deserialize)]
struct RawTriplet {
    aspect: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    opinion: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    polarity: Option<String>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Parses one JSON line; `line` is 1-based and only used for messages.
    pub fn from_json_line(text: &str, line: usize) -> Result<Self> {
        let raw: RawSentence = serde_json::from_str(text).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let mut gold = Vec::with_capacity(raw.triplets.len());
        for t in raw.triplets {
            let polarity = t
                .polarity
                .map(|p| p.parse::<Polarity>())
                .transpose()
                .map_err(|message| Error::Validation {
                    line,
                    field: "polarity",
                    message,
                })?;
            gold.push(GoldTriplet {
                aspect: Span::new(t.aspect[0], t.aspect[1]),
                opinion: t.opinion.map(|o| Span::new(o[0], o[1])),
                polarity,
            });
        }
        let s = Sentence {
            id: line.saturating_sub(1),
            tokens: raw.tokens,
            pos_tags: raw.pos,
            dep_edges: raw.deps.into_iter().map(|[h, d]| (h, d)).collect(),
            gold,
        };
        s.validate(line)?;
        Ok(s)
    }

    pub fn to_json_line(&self) -> String {
        let raw = RawSentence {
            tokens: self.tokens.clone(),
            pos: self.pos_tags.clone(),
            deps: self.dep_edges.iter().map(|&(h, d)| [h, d]).collect(),
            triplets: self
                .gold
                .iter()
                .map(|g| RawTriplet {
                    aspect: [g.aspect.start, g.aspect.end],
                    opinion: g.opinion.map(|o| [o.start, o.end]),
                    polarity: g.polarity.map(|p| p.as_str().to_string()),
                })
                .collect(),
        };
        serde_json::to_string(&raw).expect("plain data serializes")
    }

    /// Checks lengths, POS inventory, tree shape and gold span bounds.
    pub fn validate(&self, line: usize) -> Result<()> {
        let invalid = |field: &'static str, message: String| Error::Validation {
            line,
            field,
            message,
        };
        let n = self.tokens.len();
        if n == 0 {
            return Err(invalid("tokens", "sentence has no tokens".into()));
        }
        if self.pos_tags.len() != n {
            return Err(invalid(
                "pos",
                format!("{} tags for {} tokens", self.pos_tags.len(), n),
            ));
        }
        if let Some(tag) = self.pos_tags.iter().find(|t| !UPOS_TAGS.contains(&t.as_str())) {
            return Err(invalid("pos", format!("`{tag}` is not a Universal POS tag")));
        }

        let mut head_of = vec![None; n + 1];
        let mut roots = 0;
        for &(h, d) in &self.dep_edges {
            if d == 0 || d > n {
                return Err(invalid("deps", format!("dependent {d} outside 1..={n}")));
            }
            if h > n {
                return Err(invalid("deps", format!("head {h} outside 0..={n}")));
            }
            if h == d {
                return Err(invalid("deps", format!("self edge at {d}")));
            }
            if head_of[d].replace(h).is_some() {
                return Err(invalid("deps", format!("word {d} has two heads")));
            }
            if h == 0 {
                roots += 1;
            }
        }
        if let Some(orphan) = (1..=n).find(|&d| head_of[d].is_none()) {
            return Err(invalid("deps", format!("word {orphan} has no head")));
        }
        if roots != 1 {
            return Err(invalid("deps", format!("{roots} root edges, expected 1")));
        }
        for start in 1..=n {
            let mut cur = start;
            let mut hops = 0;
            while cur != 0 {
                cur = head_of[cur].expect("all heads present");
                hops += 1;
                if hops > n {
                    return Err(invalid("deps", format!("cycle through word {start}")));
                }
            }
        }

        for g in &self.gold {
            let spans = std::iter::once(("aspect", g.aspect))
                .chain(g.opinion.map(|o| ("opinion", o)));
            for (field, span) in spans {
                if span.start < 1 || span.start > span.end || span.end > n {
                    return Err(invalid(field, format!("span {span} invalid for n = {n}")));
                }
            }
        }
        Ok(())
    }
}

/// Reads a JSONL dataset. Blank lines are skipped.
pub fn parse_dataset(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset_str(&text)
}

pub fn parse_dataset_str(text: &str) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut s = Sentence::from_json_line(line, i + 1)?;
        s.id = out.len();
        out.push(s);
    }
    Ok(out)
}

pub fn write_dataset(path: impl AsRef<Path>, sentences: &[Sentence]) -> Result<()> {
    let path = path.as_ref();
    let mut body = String::new();
    for s in sentences {
        body.push_str(&s.to_json_line());
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIGURE_ONE: &str = r#"{"tokens":["Food","is","always","fresh","and","hot","ready","to","eat","!"],"pos":["NOUN","AUX","ADV","ADJ","CCONJ","ADJ","ADJ","PART","VERB","PUNCT"],"deps":[[4,1],[4,2],[4,3],[0,4],[6,5],[4,6],[6,7],[9,8],[7,9],[4,10]],"triplets":[{"aspect":[1,1],"opinion":[6,6],"polarity":"positive"}]}"#;

    #[test]
    fn parses_the_food_sentence() {
        let s = Sentence::from_json_line(FIGURE_ONE, 1).unwrap();
        assert_eq!(s.len(), 10);
        assert_eq!(s.gold.len(), 1);
        assert_eq!(s.gold[0].polarity, Some(Polarity::Positive));
        assert_eq!(s.gold[0].opinion, Some(Span::single(6)));
    }

    #[test]
    fn pos_length_mismatch_is_rejected() {
        let bad = FIGURE_ONE.replace(r#","PUNCT"]"#, "]");
        match Sentence::from_json_line(&bad, 3).unwrap_err() {
            Error::Validation { line, field, .. } => {
                assert_eq!(line, 3);
                assert_eq!(field, "pos");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_input_gives_empty_list() {
        assert!(parse_dataset_str("").unwrap().is_empty());
        assert!(parse_dataset_str("\n  \n").unwrap().is_empty());
    }

    #[test]
    fn malformed_json_reports_line() {
        let text = format!("{FIGURE_ONE}\n{{not json\n");
        match parse_dataset_str(&text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tree_violations() {
        let base = |deps: &str| {
            format!(r#"{{"tokens":["a","b","c"],"pos":["DET","NOUN","VERB"],"deps":{deps}}}"#)
        };
        assert!(Sentence::from_json_line(&base("[[2,1],[0,2],[2,3]]"), 1).is_ok());
        for deps in [
            "[[2,1],[0,2]]",
            "[[2,1],[0,2],[0,3]]",
            "[[2,1],[0,2],[2,3],[1,3]]",
            "[[3,1],[1,3],[0,2]]",
            "[[2,1],[0,2],[3,3]]",
            "[[2,1],[0,2],[9,3]]",
        ] {
            let err = Sentence::from_json_line(&base(deps), 1).unwrap_err();
            assert!(
                matches!(err, Error::Validation { field: "deps", .. }),
                "{deps}: {err:?}"
            );
        }
    }

    #[test]
    fn gold_spans_are_bounded() {
        let line = r#"{"tokens":["a","b"],"pos":["NOUN","ADJ"],"deps":[[0,2],[2,1]],"triplets":[{"aspect":[1,3]}]}"#;
        assert!(matches!(
            Sentence::from_json_line(line, 1).unwrap_err(),
            Error::Validation { field: "aspect", .. }
        ));
        let line = r#"{"tokens":["a","b"],"pos":["NOUN","ADJ"],"deps":[[0,2],[2,1]],"triplets":[{"aspect":[1,1],"opinion":[2,1]}]}"#;
        assert!(matches!(
            Sentence::from_json_line(line, 1).unwrap_err(),
            Error::Validation { field: "opinion", .. }
        ));
    }

    #[test]
    fn unknown_polarity_is_rejected() {
        let line = r#"{"tokens":["a"],"pos":["NOUN"],"deps":[[0,1]],"triplets":[{"aspect":[1,1],"polarity":"meh"}]}"#;
        assert!(matches!(
            Sentence::from_json_line(line, 1).unwrap_err(),
            Error::Validation { field: "polarity", .. }
        ));
    }

    #[test]
    fn json_line_round_trip() {
        let s = Sentence::from_json_line(FIGURE_ONE, 1).unwrap();
        let again = Sentence::from_json_line(&s.to_json_line(), 1).unwrap();
        assert_eq!(s, again);
    }
}
