//! Pointer-network decoder.
//!
//! Previous output indices are mapped back to vocabulary tokens, run through
//! a causal transformer decoder with cross-attention over the fused encoder
//! states, and the resulting hidden state is scored by inner product against
//! `n + 5` candidate vectors: the blended encoder rows for `<s>`, the words
//! and `</s>`, followed by the three polarity token embeddings.

use crate::data::{CandidateIndexSpace, IndexKind, Vocabulary, BOS, EOS};
use crate::error::{Error, Result};
use crate::model::layers::{feed_forward, layer_norm, linear, multi_head_attention};
use crate::model::ModelView;
use crate::tensor::{Tape, Var};

/// Vocabulary id fed back to the decoder for candidate index `y`.
/// `word_ids` are the sentence's token ids without specials.
pub fn index_to_token(
    y: usize,
    word_ids: &[usize],
    space: CandidateIndexSpace,
    vocab: &Vocabulary,
) -> Result<usize> {
    Ok(match space.kind(y)? {
        IndexKind::Bos => BOS,
        IndexKind::Eos => EOS,
        IndexKind::Pointer(i) => word_ids[i - 1],
        IndexKind::Polarity(p) => vocab.polarity_id(p),
    })
}

pub fn indices_to_tokens(
    indices: &[usize],
    word_ids: &[usize],
    space: CandidateIndexSpace,
    vocab: &Vocabulary,
) -> Result<Vec<usize>> {
    indices
        .iter()
        .map(|&y| index_to_token(y, word_ids, space, vocab))
        .collect()
}

pub struct DecoderOutput {
    /// `T × d`, one row per decoder position.
    pub states: Var,
    /// `[layer][head]`, each `T × (n+2)`.
    pub cross_attention: Vec<Vec<Var>>,
    pub self_attention: Vec<Vec<Var>>,
}

/// Runs the decoder stack over already-converted token ids.
pub fn decoder_forward(
    tape: &mut Tape,
    view: ModelView<'_>,
    h_e: Var,
    token_ids: &[usize],
) -> Result<DecoderOutput> {
    let len = token_ids.len();
    if len == 0 {
        return Err(Error::InvalidArgument(
            "decoder input must start with <s>".into(),
        ));
    }
    if len > view.config.max_positions {
        return Err(Error::Range {
            what: "decoder length",
            index: len,
            limit: view.config.max_positions,
        });
    }
    let ids = view.ids;
    let heads = view.config.heads;
    let table = tape.param(view.store, ids.token_embed);
    let emb = tape.embedding(table, token_ids)?;
    let positions = tape.param(view.store, ids.decoder_positions);
    let pos_idx: Vec<usize> = (0..len).collect();
    let p = tape.embedding(positions, &pos_idx)?;
    let mut x = tape.add(emb, p)?;

    let mut cross_attention = Vec::with_capacity(ids.decoder.len());
    let mut self_attention = Vec::with_capacity(ids.decoder.len());
    for layer in &ids.decoder {
        let (a, sp) = multi_head_attention(tape, view.store, &layer.self_attn, heads, x, x, true)?;
        let r = tape.add(x, a)?;
        x = layer_norm(tape, view.store, &layer.self_norm, r)?;
        let (c, cp) =
            multi_head_attention(tape, view.store, &layer.cross_attn, heads, x, h_e, false)?;
        let r = tape.add(x, c)?;
        x = layer_norm(tape, view.store, &layer.cross_norm, r)?;
        let f = feed_forward(tape, view.store, &layer.ffn, x)?;
        let r = tape.add(x, f)?;
        x = layer_norm(tape, view.store, &layer.ffn_norm, r)?;
        self_attention.push(sp);
        cross_attention.push(cp);
    }
    Ok(DecoderOutput {
        states: x,
        cross_attention,
        self_attention,
    })
}

/// Hidden state of the final decoder position, `1 × d`.
pub fn last_state(tape: &mut Tape, out: &DecoderOutput) -> Result<Var> {
    let t = tape.value(out.states).rows();
    tape.slice_rows(out.states, t - 1, t)
}

pub struct Candidates {
    /// `(n+2) × d` blended encoder rows.
    pub h_bar: Var,
    /// `3 × d` polarity embeddings.
    pub polarity: Var,
    /// `(n+5) × d`, rows in candidate-index order.
    pub all: Var,
}

/// Two-layer MLP `d → d → d` with a GELU in between.
pub fn pointer_mlp(tape: &mut Tape, view: ModelView<'_>, h_e: Var) -> Result<Var> {
    let (w1, b1) = view.ids.mlp_hidden;
    let (w2, b2) = view.ids.mlp_out;
    let h = linear(tape, view.store, h_e, w1, Some(b1))?;
    let h = tape.gelu(h);
    linear(tape, view.store, h, w2, Some(b2))
}

/// `alpha * h_hat + (1 - alpha) * e_se`
pub fn blend(tape: &mut Tape, h_hat: Var, e_se: Var, alpha: f64) -> Result<Var> {
    let a = tape.scale(h_hat, alpha);
    let b = tape.scale(e_se, 1.0 - alpha);
    tape.add(a, b)
}

pub fn candidate_states(tape: &mut Tape, view: ModelView<'_>, h_e: Var, e_se: Var) -> Result<Candidates> {
    let h_hat = pointer_mlp(tape, view, h_e)?;
    let h_bar = blend(tape, h_hat, e_se, view.config.blend_alpha)?;
    let table = tape.param(view.store, view.ids.token_embed);
    let class_ids: Vec<usize> = crate::data::Polarity::ALL
        .iter()
        .map(|p| view.vocab.polarity_id(*p))
        .collect();
    let polarity = tape.embedding(table, &class_ids)?;
    let all = tape.concat(&[h_bar, polarity], 0)?;
    Ok(Candidates {
        h_bar,
        polarity,
        all,
    })
}

/// Row-wise softmax of `states · candidatesᵀ`: `T × (n+5)`.
pub fn step_distribution(
    tape: &mut Tape,
    candidates: Var,
    states: Var,
    allowed: Option<&[bool]>,
) -> Result<Var> {
    let ct = tape.transpose(candidates)?;
    let scores = tape.matmul(states, ct)?;
    tape.softmax(scores, 1, allowed)
}
