//! Dual-channel encoder.
//!
//! The semantic channel is a post-norm transformer encoder over
//! `<s> x_1 .. x_n </s>`. The syntactic channel runs two single-head GAT
//! layers over the dependency graph, starting from POS embeddings (or token
//! states, see [`NodeInit`]), and pads the result with zero rows at the two
//! special positions. A per-position sigmoid gate computed from the semantic
//! states scales the syntactic states before they are added:
//!
//! ```text
//! g_i   = sigmoid(H_se[i] · w + b)
//! H_e_i = H_se[i] + g_i * H_sy[i]
//! ```

use crate::data::{build_adjacency, pos_id, AdjacencyMatrix, Sentence, Vocabulary};
use crate::error::{Error, Result};
use crate::model::layers::{feed_forward, layer_norm, multi_head_attention};
use crate::model::{Ablation, ModelView, NodeInit};
use crate::tensor::{Tape, Tensor, Var};

/// Everything the encoder needs from one sentence.
#[derive(Debug, Clone)]
pub struct EncoderInput {
    /// `[<s>, x_1 .. x_n, </s>]` vocabulary ids.
    pub token_ids: Vec<usize>,
    pub pos_ids: Vec<usize>,
    pub adjacency: AdjacencyMatrix,
}

impl EncoderInput {
    pub fn new(s: &Sentence, vocab: &Vocabulary) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::InvalidArgument("cannot encode an empty sentence".into()));
        }
        Ok(Self {
            token_ids: vocab.encode_with_specials(&s.tokens),
            pos_ids: s.pos_tags.iter().map(|t| pos_id(t)).collect(),
            adjacency: build_adjacency(s),
        })
    }

    pub fn n(&self) -> usize {
        self.pos_ids.len()
    }

    /// Word ids without the special tokens.
    pub fn word_ids(&self) -> &[usize] {
        &self.token_ids[1..self.token_ids.len() - 1]
    }
}

pub struct SemanticOutput {
    pub h_se: Var,
    /// Token embeddings of the input, before positions are added.
    pub e_se: Var,
    /// `[layer][head]` self-attention probabilities.
    pub attention: Vec<Vec<Var>>,
}

pub struct GatOutput {
    pub out: Var,
    pub alpha: Var,
}

pub struct SyntacticOutput {
    pub h_sy: Var,
    pub alphas: Vec<Var>,
    pub gat_calls: usize,
}

pub struct Encoded {
    pub h_e: Var,
    pub h_se: Var,
    pub h_sy: Var,
    pub e_se: Var,
    /// `(n+2) × 1` gate values; absent when the gate is ablated.
    pub gate: Option<Var>,
    pub attention: Vec<Vec<Var>>,
    pub gat_alpha: Vec<Var>,
    pub gat_calls: usize,
}

pub fn semantic_forward(tape: &mut Tape, view: ModelView<'_>, token_ids: &[usize]) -> Result<SemanticOutput> {
    let len = token_ids.len();
    if len < 3 {
        return Err(Error::InvalidArgument("semantic channel needs n >= 1 tokens".into()));
    }
    if len > view.config.max_positions {
        return Err(Error::Range {
            what: "sentence length",
            index: len - 2,
            limit: view.config.max_positions - 2,
        });
    }
    let ids = view.ids;
    let table = tape.param(view.store, ids.token_embed);
    let e_se = tape.embedding(table, token_ids)?;
    let positions = tape.param(view.store, ids.encoder_positions);
    let pos_idx: Vec<usize> = (0..len).collect();
    let p = tape.embedding(positions, &pos_idx)?;
    let mut x = tape.add(e_se, p)?;

    let mut attention = Vec::with_capacity(ids.encoder.len());
    for layer in &ids.encoder {
        let (a, probs) =
            multi_head_attention(tape, view.store, &layer.attn, view.config.heads, x, x, false)?;
        let r = tape.add(x, a)?;
        x = layer_norm(tape, view.store, &layer.attn_norm, r)?;
        let f = feed_forward(tape, view.store, &layer.ffn, x)?;
        let r = tape.add(x, f)?;
        x = layer_norm(tape, view.store, &layer.ffn_norm, r)?;
        attention.push(probs);
    }
    Ok(SemanticOutput {
        h_se: x,
        e_se,
        attention,
    })
}

/// One single-head GAT layer over `h` (`n × d`):
///
/// ```text
/// e_ij  = LeakyReLU([h_i W || h_j W] · a)   for j in N(i)
/// alpha = softmax_j(e_ij)
/// out_i = sum_j alpha_ij h_j W
/// ```
pub fn gat_layer_forward(
    tape: &mut Tape,
    h: Var,
    adjacency: &AdjacencyMatrix,
    weight: Var,
    attn: Var,
    slope: f64,
) -> Result<GatOutput> {
    let (n, _) = tape.value(h).dims2("gat_layer_forward")?;
    if n != adjacency.n() {
        return Err(Error::Shape {
            op: "gat_layer_forward",
            left: tape.value(h).shape().to_vec(),
            right: vec![adjacency.n(), adjacency.n()],
        });
    }
    let hw = tape.matmul(h, weight)?;
    let d = tape.value(hw).cols();
    let a_src = tape.narrow(attn, 1, 0, d)?;
    let a_dst = tape.narrow(attn, 1, d, d)?;
    let a_src_t = tape.transpose(a_src)?;
    let a_dst_t = tape.transpose(a_dst)?;
    let src = tape.matmul(hw, a_src_t)?; // n × 1
    let dst = tape.matmul(hw, a_dst_t)?; // n × 1

    let e = tape.pair_scores(src, dst, adjacency.bits(), slope)?;
    let alpha = tape.softmax(e, 1, Some(adjacency.bits()))?;
    let out = tape.matmul(alpha, hw)?;
    Ok(GatOutput { out, alpha })
}

fn pad_special_rows(tape: &mut Tape, h: Var) -> Result<Var> {
    let d = tape.value(h).cols();
    let z_top = tape.constant(Tensor::zeros(&[1, d]));
    let z_bottom = tape.constant(Tensor::zeros(&[1, d]));
    tape.concat(&[z_top, h, z_bottom], 0)
}

/// Syntactic channel output `[0; H^L; 0]`, `(n+2) × d`.
///
/// `token_states` are rows `1..=n` of the semantic output and are required
/// unless `node_init` is [`NodeInit::PosOnly`]. With `use_graph == false`
/// the initial node states are padded and returned without any GAT layer.
pub fn syntactic_forward(
    tape: &mut Tape,
    view: ModelView<'_>,
    pos_ids: &[usize],
    adjacency: &AdjacencyMatrix,
    token_states: Option<Var>,
    node_init: NodeInit,
    use_graph: bool,
) -> Result<SyntacticOutput> {
    let pos_states = |tape: &mut Tape| -> Result<Var> {
        let table = tape.param(view.store, view.ids.pos_embed);
        tape.embedding(table, pos_ids)
    };
    let tokens = || {
        token_states.ok_or_else(|| {
            Error::Config(format!("node init `{node_init}` needs semantic token states"))
        })
    };
    let h0 = match node_init {
        NodeInit::PosOnly => pos_states(tape)?,
        NodeInit::TokenOnly => tokens()?,
        NodeInit::PosPlusToken => {
            let t = tokens()?;
            let p = pos_states(tape)?;
            tape.add(p, t)?
        }
    };

    let mut h = h0;
    let mut alphas = Vec::new();
    let mut gat_calls = 0;
    if use_graph {
        for layer in &view.ids.gat {
            let w = tape.param(view.store, layer.weight);
            let a = tape.param(view.store, layer.attn);
            let out = gat_layer_forward(tape, h, adjacency, w, a, view.config.leaky_slope)?;
            gat_calls += 1;
            h = out.out;
            alphas.push(out.alpha);
        }
    }
    Ok(SyntacticOutput {
        h_sy: pad_special_rows(tape, h)?,
        alphas,
        gat_calls,
    })
}

/// Learned gate: returns `(H_e, g)` with `g` of shape `(n+2) × 1`.
pub fn gate_fuse(tape: &mut Tape, view: ModelView<'_>, h_se: Var, h_sy: Var) -> Result<(Var, Var)> {
    let w = tape.param(view.store, view.ids.gate_weight);
    let b = tape.param(view.store, view.ids.gate_bias);
    let logits = tape.matmul(h_se, w)?;
    let logits = tape.add_row(logits, b)?;
    let g = tape.sigmoid(logits);
    Ok((apply_gate(tape, h_se, h_sy, g)?, g))
}

/// `H_se + g ⊙ H_sy` with the `(n+2) × 1` column `g` broadcast across `d`.
pub fn apply_gate(tape: &mut Tape, h_se: Var, h_sy: Var, g: Var) -> Result<Var> {
    if tape.value(h_se).shape() != tape.value(h_sy).shape() {
        return Err(Error::Shape {
            op: "gate_fuse",
            left: tape.value(h_se).shape().to_vec(),
            right: tape.value(h_sy).shape().to_vec(),
        });
    }
    let d = tape.value(h_se).cols();
    let ones = tape.constant(Tensor::full(&[1, d], 1.0));
    let spread = tape.matmul(g, ones)?;
    let scaled = tape.hadamard(spread, h_sy)?;
    tape.add(h_se, scaled)
}

/// Fusion with a constant gate value at every position.
pub fn gate_fuse_fixed(tape: &mut Tape, h_se: Var, h_sy: Var, g: f64) -> Result<Var> {
    let rows = tape.value(h_se).rows();
    let col = tape.constant(Tensor::full(&[rows, 1], g));
    apply_gate(tape, h_se, h_sy, col)
}

/// Full encoder under the given ablation.
pub fn encode(
    tape: &mut Tape,
    view: ModelView<'_>,
    input: &EncoderInput,
    ablation: Ablation,
    node_init: NodeInit,
) -> Result<Encoded> {
    let n = input.n();
    let sem = semantic_forward(tape, view, &input.token_ids)?;
    let token_states = if node_init.needs_token_states() {
        Some(tape.slice_rows(sem.h_se, 1, n + 1)?)
    } else {
        None
    };
    let syn = syntactic_forward(
        tape,
        view,
        &input.pos_ids,
        &input.adjacency,
        token_states,
        node_init,
        ablation.uses_graph(),
    )?;
    let (h_e, gate) = if ablation.uses_gate() {
        let (h, g) = gate_fuse(tape, view, sem.h_se, syn.h_sy)?;
        (h, Some(g))
    } else {
        (tape.add(sem.h_se, syn.h_sy)?, None)
    };
    Ok(Encoded {
        h_e,
        h_se: sem.h_se,
        h_sy: syn.h_sy,
        e_se: sem.e_se,
        gate,
        attention: sem.attention,
        gat_alpha: syn.alphas,
        gat_calls: syn.gat_calls,
    })
}
