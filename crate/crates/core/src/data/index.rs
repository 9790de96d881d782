use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{GoldTriplet, Polarity, Sentence, Span};
use crate::error::{Error, Result};

/// The compound subtasks and their prediction frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubtaskKind {
    /// `[a_s, a_e, polarity]`
    Aesc,
    /// `[a_s, a_e, o_s, o_e]`
    Pair,
    /// `[a_s, a_e, o_s, o_e, polarity]`
    Triplet,
}

impl SubtaskKind {
    pub const ALL: [SubtaskKind; 3] = [SubtaskKind::Aesc, SubtaskKind::Pair, SubtaskKind::Triplet];

    pub fn frame_len(self) -> usize {
        match self {
            SubtaskKind::Aesc => 3,
            SubtaskKind::Pair => 4,
            SubtaskKind::Triplet => 5,
        }
    }

    pub fn has_opinion(self) -> bool {
        !matches!(self, SubtaskKind::Aesc)
    }

    pub fn has_polarity(self) -> bool {
        !matches!(self, SubtaskKind::Pair)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SubtaskKind::Aesc => "aesc",
            SubtaskKind::Pair => "pair",
            SubtaskKind::Triplet => "triplet",
        }
    }

    /// What each slot of a frame holds.
    pub fn slots(self) -> &'static [Slot] {
        use Slot::*;
        match self {
            SubtaskKind::Aesc => &[AspectStart, AspectEnd, Sentiment],
            SubtaskKind::Pair => &[AspectStart, AspectEnd, OpinionStart, OpinionEnd],
            SubtaskKind::Triplet => &[AspectStart, AspectEnd, OpinionStart, OpinionEnd, Sentiment],
        }
    }
}

impl fmt::Display for SubtaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SubtaskKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "aesc" => Ok(SubtaskKind::Aesc),
            "pair" => Ok(SubtaskKind::Pair),
            "triplet" => Ok(SubtaskKind::Triplet),
            other => Err(format!("unknown subtask `{other}` (aesc, pair, triplet)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    AspectStart,
    AspectEnd,
    OpinionStart,
    OpinionEnd,
    Sentiment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexKind {
    Bos,
    /// 1-based token position.
    Pointer(usize),
    Eos,
    Polarity(Polarity),
}

/// Decoder output space for an `n`-token sentence: `<s>` at 0, pointers at
/// `1..=n`, `</s>` at `n+1`, then neutral/positive/negative at `n+2..=n+4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CandidateIndexSpace {
    n: usize,
}

impl CandidateIndexSpace {
    pub fn new(n: usize) -> Self {
        Self { n }
    }

    pub fn for_sentence(s: &Sentence) -> Self {
        Self::new(s.len())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn total(&self) -> usize {
        self.n + 5
    }

    pub fn bos(&self) -> usize {
        0
    }

    pub fn eos(&self) -> usize {
        self.n + 1
    }

    pub fn pointer(&self, position: usize) -> usize {
        debug_assert!((1..=self.n).contains(&position));
        position
    }

    pub fn polarity(&self, p: Polarity) -> usize {
        self.n + 2 + p.class_id()
    }

    pub fn kind(&self, y: usize) -> Result<IndexKind> {
        let n = self.n;
        Ok(match y {
            0 => IndexKind::Bos,
            y if y <= n => IndexKind::Pointer(y),
            y if y == n + 1 => IndexKind::Eos,
            y if y <= n + 4 => IndexKind::Polarity(
                Polarity::from_class_id(y - (n + 2)).expect("three classes"),
            ),
            y => {
                return Err(Error::Range {
                    what: "candidate index",
                    index: y,
                    limit: n + 5,
                })
            }
        })
    }

    pub fn is_pointer(&self, y: usize) -> bool {
        (1..=self.n).contains(&y)
    }
}

pub fn index_kind(y: usize, space: CandidateIndexSpace) -> Result<IndexKind> {
    space.kind(y)
}

/// One decoded or gold tuple projected onto a subtask's fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Prediction {
    pub aspect: Span,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub opinion: Option<Span>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub polarity: Option<Polarity>,
}

impl Prediction {
    pub fn frame(&self, k: SubtaskKind, space: CandidateIndexSpace) -> Vec<usize> {
        let mut out = vec![self.aspect.start, self.aspect.end];
        if let (true, Some(o)) = (k.has_opinion(), self.opinion) {
            out.extend([o.start, o.end]);
        }
        if let (true, Some(p)) = (k.has_polarity(), self.polarity) {
            out.push(space.polarity(p));
        }
        out
    }
}

impl GoldTriplet {
    /// Keeps only the fields `k` predicts; errors if one is missing.
    pub fn project(&self, k: SubtaskKind, sentence: usize, triplet: usize) -> Result<Prediction> {
        let missing = |field| Error::IncompleteGold {
            sentence,
            triplet,
            field,
            subtask: k.as_str(),
        };
        let opinion = if k.has_opinion() {
            Some(self.opinion.ok_or_else(|| missing("opinion"))?)
        } else {
            None
        };
        let polarity = if k.has_polarity() {
            Some(self.polarity.ok_or_else(|| missing("polarity"))?)
        } else {
            None
        };
        Ok(Prediction {
            aspect: self.aspect,
            opinion,
            polarity,
        })
    }
}

/// Sorted, de-duplicated gold tuples for `k`.
pub fn gold_predictions(s: &Sentence, k: SubtaskKind) -> Result<Vec<Prediction>> {
    let mut out = s
        .gold
        .iter()
        .enumerate()
        .map(|(i, g)| g.project(k, s.id, i))
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

/// Gold target sequence: sorted frames followed by `</s>`.
pub fn linearize_targets(s: &Sentence, k: SubtaskKind) -> Result<Vec<usize>> {
    let space = CandidateIndexSpace::for_sentence(s);
    Ok(linearize_predictions(&gold_predictions(s, k)?, k, space))
}

pub fn linearize_predictions(
    preds: &[Prediction],
    k: SubtaskKind,
    space: CandidateIndexSpace,
) -> Vec<usize> {
    let mut out: Vec<usize> = preds.iter().flat_map(|p| p.frame(k, space)).collect();
    out.push(space.eos());
    out
}

/// Teacher-forcing input: the target shifted right behind `<s>`.
pub fn decoder_input(target: &[usize]) -> Vec<usize> {
    let mut input = Vec::with_capacity(target.len());
    input.push(0);
    input.extend_from_slice(&target[..target.len().saturating_sub(1)]);
    input
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn food_sentence_targets() {
        let s = fixtures::food_sentence();
        assert_eq!(
            linearize_targets(&s, SubtaskKind::Triplet).unwrap(),
            vec![1, 1, 6, 6, 13, 11]
        );
        assert_eq!(
            linearize_targets(&s, SubtaskKind::Aesc).unwrap(),
            vec![1, 1, 13, 11]
        );
        assert_eq!(
            linearize_targets(&s, SubtaskKind::Pair).unwrap(),
            vec![1, 1, 6, 6, 11]
        );
        assert_eq!(decoder_input(&[1, 1, 13, 11]), vec![0, 1, 1, 13]);
    }

    #[test]
    fn missing_fields_are_reported() {
        let mut s = fixtures::food_sentence();
        s.gold[0].opinion = None;
        assert!(linearize_targets(&s, SubtaskKind::Aesc).is_ok());
        assert!(matches!(
            linearize_targets(&s, SubtaskKind::Pair).unwrap_err(),
            Error::IncompleteGold { field: "opinion", .. }
        ));
        s.gold[0].polarity = None;
        assert!(matches!(
            linearize_targets(&s, SubtaskKind::Aesc).unwrap_err(),
            Error::IncompleteGold { field: "polarity", .. }
        ));
    }

    #[test]
    fn frames_are_sorted_by_aspect() {
        let mut s = fixtures::food_sentence();
        s.gold.insert(
            0,
            GoldTriplet {
                aspect: Span::new(9, 9),
                opinion: Some(Span::single(7)),
                polarity: Some(Polarity::Neutral),
            },
        );
        let t = linearize_targets(&s, SubtaskKind::Triplet).unwrap();
        assert_eq!(t, vec![1, 1, 6, 6, 13, 9, 9, 7, 7, 12, 11]);
    }

    #[test]
    fn kind_layout() {
        let space = CandidateIndexSpace::new(10);
        assert_eq!(space.kind(0).unwrap(), IndexKind::Bos);
        assert_eq!(space.kind(1).unwrap(), IndexKind::Pointer(1));
        assert_eq!(space.kind(11).unwrap(), IndexKind::Eos);
        assert_eq!(space.kind(13).unwrap(), IndexKind::Polarity(Polarity::Positive));
        assert!(matches!(space.kind(15), Err(Error::Range { .. })));
    }

    #[test]
    fn kinds_partition_the_space() {
        for n in 1..20 {
            let space = CandidateIndexSpace::new(n);
            let (mut b, mut p, mut e, mut c) = (0, 0, 0, 0);
            for y in 0..space.total() {
                match space.kind(y).unwrap() {
                    IndexKind::Bos => b += 1,
                    IndexKind::Pointer(i) => {
                        assert_eq!(i, y);
                        p += 1
                    }
                    IndexKind::Eos => e += 1,
                    IndexKind::Polarity(_) => c += 1,
                }
            }
            assert_eq!((b, p, e, c), (1, n, 1, 3));
            assert!(space.kind(space.total()).is_err());
        }
    }
}
