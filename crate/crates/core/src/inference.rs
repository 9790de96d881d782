//! Greedy and beam-search decoding over the candidate index space.
//!
//! Search is written against [`StepModel`], which only has to return
//! log-probabilities over the `n + 5` candidates for a given prefix. The
//! trained network implements it through [`ModelScorer`]; the seeded stubs in
//! [`stub`] implement it for oracle tests.

use serde::{Deserialize, Serialize};

use crate::data::{CandidateIndexSpace, IndexKind, Polarity, Prediction, Sentence, Slot, Span, SubtaskKind};
use crate::decoder::{candidate_states, decoder_forward, indices_to_tokens, last_state};
use crate::encoder::{encode, EncoderInput};
use crate::error::{Error, Result};
use crate::model::{ModelView, SynGen};
use crate::tensor::{Tape, Tensor};

/// Next-step scorer over a fixed candidate space.
pub trait StepModel {
    fn space(&self) -> CandidateIndexSpace;

    /// Log-probabilities for the next index given `prefix`, which starts with
    /// `<s>` (index 0). Must have length `space().total()`.
    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeOptions {
    pub beam: usize,
    /// Defaults to enough steps for `min(n, 8)` frames plus `</s>`.
    pub max_steps: Option<usize>,
    pub constrained: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            beam: 4,
            max_steps: None,
            constrained: false,
        }
    }
}

impl DecodeOptions {
    pub fn steps_for(&self, k: SubtaskKind, space: CandidateIndexSpace) -> usize {
        self.max_steps
            .unwrap_or_else(|| k.frame_len() * space.n().clamp(1, 8) + 1)
    }
}

/// A finished or truncated hypothesis. `indices` excludes the leading `<s>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub indices: Vec<usize>,
    pub score: f64,
    pub finished: bool,
}

/// Keep-mask for the slot at `position` within the current frame.
///
/// `partial` holds the indices already emitted for this frame. Frame starts
/// allow pointers and `</s>`, span ends allow pointers at or after the
/// pending start, polarity slots allow the three classes.
pub fn constrained_mask(
    position: usize,
    k: SubtaskKind,
    space: CandidateIndexSpace,
    partial: &[usize],
) -> Vec<bool> {
    let mut mask = vec![false; space.total()];
    let n = space.n();
    match k.slots()[position] {
        Slot::AspectStart => {
            mask[1..=n].iter_mut().for_each(|m| *m = true);
            mask[space.eos()] = true;
        }
        Slot::OpinionStart => mask[1..=n].iter_mut().for_each(|m| *m = true),
        Slot::AspectEnd | Slot::OpinionEnd => {
            let start = partial
                .get(position - 1)
                .copied()
                .filter(|&s| space.is_pointer(s))
                .unwrap_or(1);
            mask[start..=n].iter_mut().for_each(|m| *m = true);
        }
        Slot::Sentiment => {
            for p in Polarity::ALL {
                mask[space.polarity(p)] = true;
            }
        }
    }
    mask
}

/// Mask for the next step after `generated` (no `<s>`), with `remaining`
/// steps left including this one. Forces `</s>` once a whole frame no longer
/// fits.
pub fn grammar_mask(
    generated: &[usize],
    k: SubtaskKind,
    space: CandidateIndexSpace,
    remaining: usize,
) -> Vec<bool> {
    let position = generated.len() % k.frame_len();
    if position == 0 && remaining < k.frame_len() + 1 && remaining > 0 {
        // a frame would be cut off by the step limit
        let mut only_eos = vec![false; space.total()];
        only_eos[space.eos()] = true;
        return only_eos;
    }
    let frame_start = generated.len() - position;
    constrained_mask(position, k, space, &generated[frame_start..])
}

/// Renormalizes `log_probs` over the allowed entries; the rest become `-inf`.
pub fn renormalize(log_probs: &[f64], allowed: &[bool]) -> Vec<f64> {
    let max = log_probs
        .iter()
        .zip(allowed)
        .filter(|(_, &a)| a)
        .fold(f64::NEG_INFINITY, |m, (&x, _)| m.max(x));
    let lse = max
        + log_probs
            .iter()
            .zip(allowed)
            .filter(|(_, &a)| a)
            .map(|(&x, _)| (x - max).exp())
            .sum::<f64>()
            .ln();
    log_probs
        .iter()
        .zip(allowed)
        .map(|(&x, &a)| if a { x - lse } else { f64::NEG_INFINITY })
        .collect()
}

fn step_scores(
    model: &dyn StepModel,
    prefix: &[usize],
    k: SubtaskKind,
    constrained: bool,
    remaining: usize,
) -> Result<Vec<f64>> {
    let lp = model.log_probs(prefix)?;
    let space = model.space();
    if lp.len() != space.total() {
        return Err(Error::Shape {
            op: "step_model",
            left: vec![lp.len()],
            right: vec![space.total()],
        });
    }
    if constrained {
        Ok(renormalize(&lp, &grammar_mask(&prefix[1..], k, space, remaining)))
    } else {
        Ok(lp)
    }
}

/// Index of the largest value; ties go to the lowest index.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn greedy_decode(
    model: &dyn StepModel,
    k: SubtaskKind,
    max_steps: usize,
    constrained: bool,
) -> Result<Hypothesis> {
    let eos = model.space().eos();
    let mut prefix = vec![0];
    let mut score = 0.0;
    for step in 0..max_steps {
        let lp = step_scores(model, &prefix, k, constrained, max_steps - step)?;
        let y = argmax(&lp);
        score += lp[y];
        prefix.push(y);
        if y == eos {
            return Ok(Hypothesis {
                indices: prefix.split_off(1),
                score,
                finished: true,
            });
        }
    }
    Ok(Hypothesis {
        indices: prefix.split_off(1),
        score,
        finished: false,
    })
}

/// Length-synchronous beam search with raw log-probability scores.
///
/// Finished hypotheses stay in the beam and compete with live ones for the
/// `beam` slots; the search stops when every kept hypothesis is finished or
/// after `max_steps` steps. The best finished hypothesis wins, falling back to
/// the best unfinished one.
pub fn beam_search(
    model: &dyn StepModel,
    k: SubtaskKind,
    beam: usize,
    max_steps: usize,
    constrained: bool,
) -> Result<Hypothesis> {
    if beam == 0 {
        return Err(Error::InvalidArgument("beam width must be at least 1".into()));
    }
    let eos = model.space().eos();
    let mut hyps = vec![Hypothesis {
        indices: Vec::new(),
        score: 0.0,
        finished: false,
    }];
    for step in 0..max_steps {
        if hyps.iter().all(|h| h.finished) {
            break;
        }
        let mut pool = Vec::with_capacity(hyps.len() * model.space().total());
        for h in &hyps {
            if h.finished {
                pool.push(h.clone());
                continue;
            }
            let mut prefix = Vec::with_capacity(h.indices.len() + 1);
            prefix.push(0);
            prefix.extend_from_slice(&h.indices);
            let lp = step_scores(model, &prefix, k, constrained, max_steps - step)?;
            for (y, &l) in lp.iter().enumerate() {
                if l == f64::NEG_INFINITY {
                    continue;
                }
                let mut indices = h.indices.clone();
                indices.push(y);
                pool.push(Hypothesis {
                    indices,
                    score: h.score + l,
                    finished: y == eos,
                });
            }
        }
        // stable: equal scores keep parent order, then candidate order
        pool.sort_by(|a, b| b.score.total_cmp(&a.score));
        pool.truncate(beam);
        hyps = pool;
    }
    // `hyps` is sorted best-first
    let best = hyps
        .iter()
        .find(|h| h.finished)
        .unwrap_or(&hyps[0])
        .clone();
    Ok(best)
}

pub fn decode(model: &dyn StepModel, k: SubtaskKind, opts: &DecodeOptions) -> Result<Hypothesis> {
    let steps = opts.steps_for(k, model.space());
    if opts.beam == 1 {
        greedy_decode(model, k, steps, opts.constrained)
    } else {
        beam_search(model, k, opts.beam, steps, opts.constrained)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParsedSequence {
    pub predictions: Vec<Prediction>,
    pub malformed_frames: usize,
}

/// Splits an index sequence into frames and keeps the well-formed ones.
pub fn parse_sequence(indices: &[usize], k: SubtaskKind, space: CandidateIndexSpace) -> ParsedSequence {
    let body = match indices.iter().position(|&y| y == space.eos()) {
        Some(end) => &indices[..end],
        None => indices,
    };
    let mut out = ParsedSequence::default();
    for frame in body.chunks(k.frame_len()) {
        match parse_frame(frame, k, space) {
            Some(p) => out.predictions.push(p),
            None => out.malformed_frames += 1,
        }
    }
    out.predictions.sort();
    out.predictions.dedup();
    out
}

fn parse_frame(frame: &[usize], k: SubtaskKind, space: CandidateIndexSpace) -> Option<Prediction> {
    if frame.len() != k.frame_len() {
        return None;
    }
    let pointer = |y: usize| space.is_pointer(y).then_some(y);
    let span = |s: usize, e: usize| {
        let (s, e) = (pointer(s)?, pointer(e)?);
        (s <= e).then(|| Span::new(s, e))
    };
    let aspect = span(frame[0], frame[1])?;
    let opinion = if k.has_opinion() {
        Some(span(frame[2], frame[3])?)
    } else {
        None
    };
    let polarity = if k.has_polarity() {
        match space.kind(frame[frame.len() - 1]).ok()? {
            IndexKind::Polarity(p) => Some(p),
            _ => return None,
        }
    } else {
        None
    };
    Some(Prediction {
        aspect,
        opinion,
        polarity,
    })
}

/// Scores prefixes with the trained network. The encoder runs once; each
/// call re-runs the decoder over the prefix.
pub struct ModelScorer<'a> {
    view: ModelView<'a>,
    space: CandidateIndexSpace,
    word_ids: Vec<usize>,
    h_e: Tensor,
    /// Transposed candidate matrix, `d × (n+5)`.
    candidates_t: Tensor,
}

impl<'a> ModelScorer<'a> {
    pub fn new(view: ModelView<'a>, s: &Sentence) -> Result<Self> {
        let input = EncoderInput::new(s, view.vocab)?;
        let mut tape = Tape::new();
        let enc = encode(&mut tape, view, &input, view.config.ablation, view.config.node_init)?;
        let cands = candidate_states(&mut tape, view, enc.h_e, enc.e_se)?;
        let ct = tape.transpose(cands.all)?;
        Ok(Self {
            view,
            space: CandidateIndexSpace::for_sentence(s),
            word_ids: input.word_ids().to_vec(),
            h_e: tape.value(enc.h_e).clone(),
            candidates_t: tape.value(ct).clone(),
        })
    }
}

impl StepModel for ModelScorer<'_> {
    fn space(&self) -> CandidateIndexSpace {
        self.space
    }

    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let tokens = indices_to_tokens(prefix, &self.word_ids, self.space, self.view.vocab)?;
        let mut tape = Tape::new();
        let h_e = tape.constant(self.h_e.clone());
        let dec = decoder_forward(&mut tape, self.view, h_e, &tokens)?;
        let last = last_state(&mut tape, &dec)?;
        let ct = tape.constant(self.candidates_t.clone());
        let scores = tape.matmul(last, ct)?;
        let s = tape.value(scores).data();
        let max = s.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let lse = max + s.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        Ok(s.iter().map(|x| x - lse).collect())
    }
}

/// One line of `decode` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub sentence_id: usize,
    pub predictions: Vec<Prediction>,
    pub malformed_frames: usize,
    pub score: f64,
    pub indices: Vec<usize>,
}

pub fn decode_sentence(model: &SynGen, s: &Sentence, k: SubtaskKind, opts: &DecodeOptions) -> Result<DecodeRecord> {
    let scorer = ModelScorer::new(model.view(), s)?;
    let hyp = decode(&scorer, k, opts)?;
    let parsed = parse_sequence(&hyp.indices, k, scorer.space);
    Ok(DecodeRecord {
        sentence_id: s.id,
        predictions: parsed.predictions,
        malformed_frames: parsed.malformed_frames,
        score: hyp.score,
        indices: hyp.indices,
    })
}

/// Decodes every sentence in parallel; output order follows `sentences`.
pub fn decode_corpus(
    model: &SynGen,
    sentences: &[Sentence],
    k: SubtaskKind,
    opts: &DecodeOptions,
) -> Result<Vec<DecodeRecord>> {
    use rayon::prelude::*;
    sentences
        .par_iter()
        .map(|s| decode_sentence(model, s, k, opts))
        .collect()
}

/// Seeded scorers used by the search oracles.
pub mod stub {
    use std::cell::Cell;
    use std::hash::{DefaultHasher, Hash, Hasher};

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Each prefix gets its own pseudo-random distribution, derived from a
    /// hash of `(seed, prefix)`, so the model is a fixed random tree.
    #[derive(Debug, Clone)]
    pub struct RandomStub {
        pub space: CandidateIndexSpace,
        pub seed: u64,
        /// Logits are drawn from `[-spread, spread]`.
        pub spread: f64,
        calls: Cell<usize>,
    }

    impl RandomStub {
        pub fn new(n: usize, seed: u64) -> Self {
            Self {
                space: CandidateIndexSpace::new(n),
                seed,
                spread: 3.0,
                calls: Cell::new(0),
            }
        }

        pub fn calls(&self) -> usize {
            self.calls.get()
        }
    }

    impl StepModel for RandomStub {
        fn space(&self) -> CandidateIndexSpace {
            self.space
        }

        fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
            self.calls.set(self.calls.get() + 1);
            let mut h = DefaultHasher::new();
            (self.seed, prefix).hash(&mut h);
            let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
            let logits: Vec<f64> = (0..self.space.total())
                .map(|_| rng.gen_range(-self.spread..=self.spread))
                .collect();
            Ok(log_softmax(&logits))
        }
    }

    /// Puts probability `mass` on `script[t]` at step `t` (and on `</s>`
    /// past the end), spreading the rest uniformly.
    #[derive(Debug, Clone)]
    pub struct ScriptedStub {
        pub space: CandidateIndexSpace,
        pub script: Vec<usize>,
        pub mass: f64,
    }

    impl StepModel for ScriptedStub {
        fn space(&self) -> CandidateIndexSpace {
            self.space
        }

        fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
            let total = self.space.total();
            let target = self
                .script
                .get(prefix.len() - 1)
                .copied()
                .unwrap_or(self.space.eos());
            let rest = ((1.0 - self.mass) / (total - 1) as f64).ln();
            Ok((0..total)
                .map(|y| if y == target { self.mass.ln() } else { rest })
                .collect())
        }
    }

    pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
        let max = logits.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        logits.iter().map(|x| x - lse).collect()
    }

    /// Best finished sequence by brute force over every sequence of at most
    /// `max_steps` indices, plus its score.
    pub fn exhaustive_best(model: &dyn StepModel, max_steps: usize) -> Result<(Vec<usize>, f64)> {
        fn walk(
            model: &dyn StepModel,
            prefix: &mut Vec<usize>,
            score: f64,
            left: usize,
            best: &mut Option<(Vec<usize>, f64)>,
        ) -> Result<()> {
            if left == 0 {
                return Ok(());
            }
            let eos = model.space().eos();
            let lp = model.log_probs(prefix)?;
            for (y, &l) in lp.iter().enumerate() {
                let s = score + l;
                prefix.push(y);
                if y == eos {
                    if best.as_ref().map_or(true, |(_, b)| s > *b) {
                        *best = Some((prefix[1..].to_vec(), s));
                    }
                } else {
                    walk(model, prefix, s, left - 1, best)?;
                }
                prefix.pop();
            }
            Ok(())
        }
        let mut best = None;
        walk(model, &mut vec![0], 0.0, max_steps, &mut best)?;
        best.ok_or_else(|| Error::InvalidArgument("no finished sequence".into()))
    }
}
