//! Transformer building blocks shared by the semantic channel and the
//! decoder.

use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct AttentionIds {
    pub q: ParamId,
    pub q_bias: ParamId,
    // no key bias: it only shifts each score row by a constant
    pub k: ParamId,
    pub v: ParamId,
    pub v_bias: ParamId,
    pub o: ParamId,
    pub o_bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct NormIds {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct FeedForwardIds {
    pub w_in: ParamId,
    pub b_in: ParamId,
    pub w_out: ParamId,
    pub b_out: ParamId,
}

pub(crate) fn linear(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    weight: ParamId,
    bias: Option<ParamId>,
) -> Result<Var> {
    let w = tape.param(store, weight);
    let y = tape.matmul(x, w)?;
    match bias {
        Some(b) => {
            let b = tape.param(store, b);
            tape.add_row(y, b)
        }
        None => Ok(y),
    }
}

pub(crate) fn layer_norm(tape: &mut Tape, store: &ParamStore, ids: &NormIds, x: Var) -> Result<Var> {
    let n = tape.layer_norm(x)?;
    let g = tape.param(store, ids.gain);
    let b = tape.param(store, ids.bias);
    let scaled = tape.mul_row(n, g)?;
    tape.add_row(scaled, b)
}

pub(crate) fn feed_forward(
    tape: &mut Tape,
    store: &ParamStore,
    ids: &FeedForwardIds,
    x: Var,
) -> Result<Var> {
    let h = linear(tape, store, x, ids.w_in, Some(ids.b_in))?;
    let h = tape.gelu(h);
    linear(tape, store, h, ids.w_out, Some(ids.b_out))
}

/// Lower-triangular keep-mask for `len` query/key positions.
pub(crate) fn causal_mask(len: usize) -> Vec<bool> {
    (0..len * len).map(|k| k % len <= k / len).collect()
}

/// Multi-head scaled dot-product attention of `query` rows over `memory`
/// rows. Returns the projected output and one probability matrix per head.
pub(crate) fn multi_head_attention(
    tape: &mut Tape,
    store: &ParamStore,
    ids: &AttentionIds,
    heads: usize,
    query: Var,
    memory: Var,
    causal: bool,
) -> Result<(Var, Vec<Var>)> {
    let d = tape.value(query).cols();
    let (tq, tk) = (tape.value(query).rows(), tape.value(memory).rows());
    let dh = d / heads;
    let q = linear(tape, store, query, ids.q, Some(ids.q_bias))?;
    let k = linear(tape, store, memory, ids.k, None)?;
    let v = linear(tape, store, memory, ids.v, Some(ids.v_bias))?;
    let mask = causal.then(|| causal_mask(tq));
    debug_assert!(!causal || tq == tk);
    let scale = 1.0 / (dh as f64).sqrt();

    let mut outputs = Vec::with_capacity(heads);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.narrow(q, 1, h * dh, dh)?;
        let kh = tape.narrow(k, 1, h * dh, dh)?;
        let vh = tape.narrow(v, 1, h * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let p = tape.softmax(scores, 1, mask.as_deref())?;
        outputs.push(tape.matmul(p, vh)?);
        probs.push(p);
    }
    let joined = if heads == 1 {
        outputs[0]
    } else {
        tape.concat(&outputs, 1)?
    };
    let out = linear(tape, store, joined, ids.o, Some(ids.o_bias))?;
    Ok((out, probs))
}

/// Element-wise mean of per-head attention matrices.
pub fn average_heads(tape: &Tape, probs: &[Var]) -> Tensor {
    let first = tape.value(probs[0]);
    let mut acc = vec![0.0; first.numel()];
    for p in probs {
        acc.iter_mut()
            .zip(tape.value(*p).data())
            .for_each(|(a, b)| *a += b);
    }
    let h = probs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= h);
    Tensor::new(first.shape().to_vec(), acc).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn causal_mask_is_lower_triangular() {
        let m = causal_mask(3);
        assert_eq!(
            m,
            vec![true, false, false, true, true, false, true, true, true]
        );
    }
}
