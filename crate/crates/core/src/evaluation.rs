//! Exact-match span F1 and the aspect→opinion attention-gap study.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{gold_predictions, Prediction, Sentence, Span, SubtaskKind};
use crate::encoder::{encode, EncoderInput};
use crate::error::{Error, Result};
use crate::inference::{decode_corpus, DecodeOptions};
use crate::model::{average_heads, SynGen};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub subtask: SubtaskKind,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub predicted: usize,
    pub gold: usize,
    pub correct: usize,
}

impl EvalReport {
    pub fn from_counts(subtask: SubtaskKind, predicted: usize, gold: usize, correct: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            subtask,
            precision,
            recall,
            f1,
            predicted,
            gold,
            correct,
        }
    }
}

/// Drops fields `k` does not score.
fn restrict(p: &Prediction, k: SubtaskKind) -> Prediction {
    Prediction {
        aspect: p.aspect,
        opinion: p.opinion.filter(|_| k.has_opinion()),
        polarity: p.polarity.filter(|_| k.has_polarity()),
    }
}

/// Micro-averaged exact-match scores over sentence-aligned prediction and
/// gold lists. Duplicates within a sentence count once.
pub fn span_f1(preds: &[Vec<Prediction>], gold: &[Vec<Prediction>], k: SubtaskKind) -> Result<EvalReport> {
    if preds.len() != gold.len() {
        return Err(Error::Alignment {
            pred: preds.len(),
            gold: gold.len(),
        });
    }
    let (mut np, mut ng, mut nc) = (0, 0, 0);
    for (p, g) in preds.iter().zip(gold) {
        let p: BTreeSet<_> = p.iter().map(|x| restrict(x, k)).collect();
        let g: BTreeSet<_> = g.iter().map(|x| restrict(x, k)).collect();
        np += p.len();
        ng += g.len();
        nc += p.intersection(&g).count();
    }
    Ok(EvalReport::from_counts(k, np, ng, nc))
}

/// Decodes `sentences` and scores them against their gold annotations.
pub fn evaluate_model(
    model: &SynGen,
    sentences: &[Sentence],
    k: SubtaskKind,
    opts: &DecodeOptions,
) -> Result<EvalReport> {
    let gold = sentences
        .iter()
        .map(|s| gold_predictions(s, k))
        .collect::<Result<Vec<_>>>()?;
    let preds: Vec<_> = decode_corpus(model, sentences, k, opts)?
        .into_iter()
        .map(|r| r.predictions)
        .collect();
    span_f1(&preds, &gold, k)
}

/// Head-averaged self-attention of the last semantic-encoder layer,
/// `(n+2) × (n+2)`, taken from the model's configured fused forward pass.
pub fn attention_extract(model: &SynGen, s: &Sentence) -> Result<Tensor> {
    let view = model.view();
    let input = EncoderInput::new(s, view.vocab)?;
    let mut tape = Tape::new();
    let enc = encode(&mut tape, view, &input, view.config.ablation, view.config.node_init)?;
    let last = enc
        .attention
        .last()
        .ok_or_else(|| Error::Config("model has no encoder layers".into()))?;
    Ok(average_heads(&tape, last))
}

/// `(A_ours - A_baseline) / A_ours`, undefined when `A_ours == 0`.
pub fn prop(a_ours: f64, a_baseline: f64) -> Option<f64> {
    (a_ours != 0.0).then(|| (a_ours - a_baseline) / a_ours)
}

/// Mean over aspect rows of the attention mass placed on the opinion tokens.
pub fn aspect_opinion_mass(m: &Tensor, aspect: Span, opinion: Span) -> f64 {
    let total: f64 = aspect
        .positions()
        .map(|i| opinion.positions().map(|j| m.at(i, j)).sum::<f64>())
        .sum();
    total / aspect.len() as f64
}

/// Mean 0-based rank of the opinion tokens in row `row`, ranking token
/// positions `1..=n` by descending weight (ties by position), divided by
/// `n - 1`.
pub fn opinion_rank(m: &Tensor, row: usize, opinion: Span) -> f64 {
    let n = m.cols() - 2;
    if n <= 1 {
        return 0.0;
    }
    let mut order: Vec<usize> = (1..=n).collect();
    order.sort_by(|&a, &b| m.at(row, b).total_cmp(&m.at(row, a)).then(a.cmp(&b)));
    let mut rank = vec![0usize; n + 1];
    for (r, &j) in order.iter().enumerate() {
        rank[j] = r;
    }
    let sum: usize = opinion.positions().map(|j| rank[j]).sum();
    sum as f64 / opinion.len() as f64 / (n - 1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairGap {
    pub sentence_id: usize,
    pub aspect: Span,
    pub opinion: Span,
    pub a_ours: f64,
    pub a_baseline: f64,
    pub value: f64,
    pub rank: f64,
    pub prop: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionGapReport {
    pub value_gap: f64,
    pub rank_gap: f64,
    pub prop: f64,
    pub pairs: usize,
    /// Pairs left out of `prop` because `A_ours` was zero.
    pub excluded: usize,
    pub per_pair: Vec<PairGap>,
}

fn check_same_shape(ours: &Tensor, baseline: &Tensor) -> Result<()> {
    let square = matches!(ours.shape(), [r, c] if r == c && *r >= 3);
    if !square || ours.shape() != baseline.shape() {
        return Err(Error::Shape {
            op: "attention_gap",
            left: ours.shape().to_vec(),
            right: baseline.shape().to_vec(),
        });
    }
    Ok(())
}

/// Gap for one (aspect, opinion) pair.
pub fn pair_gap(ours: &Tensor, baseline: &Tensor, sentence_id: usize, aspect: Span, opinion: Span) -> Result<PairGap> {
    check_same_shape(ours, baseline)?;
    let n = ours.cols() - 2;
    for span in [aspect, opinion] {
        if span.start < 1 || span.end > n || span.start > span.end {
            return Err(Error::Range {
                what: "attention span",
                index: span.end,
                limit: n,
            });
        }
    }
    let a_ours = aspect_opinion_mass(ours, aspect, opinion);
    let a_baseline = aspect_opinion_mass(baseline, aspect, opinion);
    let rank = aspect
        .positions()
        .map(|i| opinion_rank(baseline, i, opinion) - opinion_rank(ours, i, opinion))
        .sum::<f64>()
        / aspect.len() as f64;
    Ok(PairGap {
        sentence_id,
        aspect,
        opinion,
        a_ours,
        a_baseline,
        value: a_ours - a_baseline,
        rank,
        prop: prop(a_ours, a_baseline),
    })
}

pub fn summarize(per_pair: Vec<PairGap>) -> AttentionGapReport {
    let mean = |xs: &mut dyn Iterator<Item = f64>| {
        let (s, c) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
        if c == 0 {
            0.0
        } else {
            s / c as f64
        }
    };
    let props: Vec<f64> = per_pair.iter().filter_map(|p| p.prop).collect();
    AttentionGapReport {
        value_gap: mean(&mut per_pair.iter().map(|p| p.value)),
        rank_gap: mean(&mut per_pair.iter().map(|p| p.rank)),
        prop: mean(&mut props.iter().copied()),
        pairs: per_pair.len(),
        excluded: per_pair.len() - props.len(),
        per_pair,
    }
}

/// Gap report for one sentence's matrices over the given pairs.
pub fn attention_gap(ours: &Tensor, baseline: &Tensor, pairs: &[(Span, Span)]) -> Result<AttentionGapReport> {
    let per_pair = pairs
        .iter()
        .map(|&(a, o)| pair_gap(ours, baseline, 0, a, o))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(per_pair))
}

/// Per-sentence attention of both models plus the corpus-level report over
/// every gold triplet that carries an opinion.
pub struct CorpusAttention {
    pub ours: Vec<Tensor>,
    pub baseline: Vec<Tensor>,
    pub report: AttentionGapReport,
}

pub fn attention_gap_corpus(ours: &SynGen, baseline: &SynGen, sentences: &[Sentence]) -> Result<CorpusAttention> {
    if ours.vocab != baseline.vocab {
        return Err(Error::Incompatible(
            "the two checkpoints use different vocabularies".into(),
        ));
    }
    let mut out = CorpusAttention {
        ours: Vec::with_capacity(sentences.len()),
        baseline: Vec::with_capacity(sentences.len()),
        report: summarize(Vec::new()),
    };
    let mut per_pair = Vec::new();
    for s in sentences {
        let mo = attention_extract(ours, s)?;
        let mb = attention_extract(baseline, s)?;
        for g in &s.gold {
            if let Some(o) = g.opinion {
                per_pair.push(pair_gap(&mo, &mb, s.id, g.aspect, o)?);
            }
        }
        out.ours.push(mo);
        out.baseline.push(mb);
    }
    out.report = summarize(per_pair);
    Ok(out)
}

/// Row and column labels for an attention matrix.
pub fn matrix_labels(s: &Sentence) -> Vec<String> {
    let mut labels = Vec::with_capacity(s.len() + 2);
    labels.push("<s>".to_string());
    labels.extend(s.tokens.iter().cloned());
    labels.push("</s>".to_string());
    labels
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Matrix as CSV: a header of column labels, then one labelled row per
/// query position.
pub fn matrix_csv(m: &Tensor, labels: &[String]) -> String {
    let mut out = String::from("token");
    for l in labels {
        out.push(',');
        out.push_str(&csv_field(l));
    }
    out.push('\n');
    for (r, l) in labels.iter().enumerate() {
        out.push_str(&csv_field(l));
        for v in m.row_slice(r) {
            write!(out, ",{v}").expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

pub fn matrix_difference(ours: &Tensor, baseline: &Tensor) -> Result<Tensor> {
    check_same_shape(ours, baseline)?;
    let data = ours.data().iter().zip(baseline.data()).map(|(a, b)| a - b).collect();
    Tensor::new(ours.shape().to_vec(), data)
}

/// `x y value` triples with blank lines between rows (gnuplot `matrix`-free
/// `splot ... with image` layout).
pub fn heatmap_data(m: &Tensor, labels: &[String]) -> String {
    let mut out = String::from("# row col weight row_token col_token\n");
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            writeln!(out, "{r} {c} {} {} {}", m.at(r, c), labels[r], labels[c]).expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

impl AttentionGapReport {
    /// Single-row summary with the `Value,Rank,Prop` columns.
    pub fn summary_csv(&self) -> String {
        format!(
            "Value,Rank,Prop,pairs,excluded\n{},{},{},{},{}\n",
            self.value_gap, self.rank_gap, self.prop, self.pairs, self.excluded
        )
    }

    pub fn per_pair_csv(&self) -> String {
        let mut out = String::from("sentence_id,aspect,opinion,A_ours,A_baseline,Value,Rank,Prop\n");
        for p in &self.per_pair {
            let prop = p.prop.map(|x| x.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{}-{},{}-{},{},{},{},{},{}",
                p.sentence_id,
                p.aspect.start,
                p.aspect.end,
                p.opinion.start,
                p.opinion.end,
                p.a_ours,
                p.a_baseline,
                p.value,
                p.rank,
                prop
            )
            .expect("writing to a String");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Polarity;

    fn pred(a: usize, o: usize, p: Polarity) -> Prediction {
        Prediction {
            aspect: Span::single(a),
            opinion: Some(Span::single(o)),
            polarity: Some(p),
        }
    }

    #[test]
    fn four_sevenths_fixture() {
        use Polarity::*;
        let gold = vec![vec![pred(1, 2, Positive), pred(3, 4, Negative), pred(5, 6, Neutral), pred(7, 8, Positive)]];
        let preds = vec![vec![pred(1, 2, Positive), pred(3, 4, Negative), pred(5, 6, Positive)]];
        let r = span_f1(&preds, &gold, SubtaskKind::Triplet).unwrap();
        assert_eq!((r.correct, r.predicted, r.gold), (2, 3, 4));
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.recall - 0.5).abs() < 1e-15);
        assert!((r.f1 - 4.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn empty_and_mismatched() {
        let r = span_f1(&[vec![]], &[vec![]], SubtaskKind::Pair).unwrap();
        assert_eq!(r.f1, 0.0);
        assert!(matches!(
            span_f1(&[vec![]], &[], SubtaskKind::Pair),
            Err(Error::Alignment { pred: 1, gold: 0 })
        ));
    }

    #[test]
    fn prop_fixture_is_exact() {
        assert_eq!(prop(0.5, 0.3), Some(0.4));
        assert_eq!(prop(0.0, 0.3), None);
    }

    #[test]
    fn rank_orders_by_weight() {
        // n = 3, row 1 attends most to token 3, then 2, then 1
        let m = Tensor::from_rows(&[
            vec![0.2; 5],
            vec![0.1, 0.1, 0.2, 0.5, 0.1],
            vec![0.2; 5],
            vec![0.2; 5],
            vec![0.2; 5],
        ])
        .unwrap();
        assert_eq!(opinion_rank(&m, 1, Span::single(3)), 0.0);
        assert_eq!(opinion_rank(&m, 1, Span::single(2)), 0.5);
        assert_eq!(opinion_rank(&m, 1, Span::single(1)), 1.0);
    }

    #[test]
    fn identical_matrices_give_zero_gap() {
        let m = Tensor::from_rows(&[vec![0.25; 4], vec![0.1, 0.2, 0.3, 0.4], vec![0.4, 0.3, 0.2, 0.1], vec![0.25; 4]]).unwrap();
        let r = attention_gap(&m, &m, &[(Span::single(1), Span::single(2))]).unwrap();
        assert_eq!((r.value_gap, r.rank_gap, r.prop), (0.0, 0.0, 0.0));
    }
}
