//! Parameter layout, initialization and checkpointing for the full
//! encoder–decoder.

pub(crate) mod layers;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use layers::{average_heads, AttentionIds, FeedForwardIds, NormIds};

use crate::data::{Vocabulary, POS_VOCAB_SIZE};
use crate::error::{Error, Result};
use crate::tensor::{ParamGroup, ParamId, ParamStore, Tensor};

/// Which parts of the dual-channel encoder are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Syntactic channel without the GAT: zero-padded initial node states.
    NoGraph,
    /// Plain addition of the two channels.
    NoGate,
    NoGraphNoGate,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::NoGraph,
        Ablation::NoGate,
        Ablation::NoGraphNoGate,
    ];

    pub fn uses_graph(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoGate)
    }

    pub fn uses_gate(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoGraph)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoGraph => "no_graph",
            Ablation::NoGate => "no_gate",
            Ablation::NoGraphNoGate => "no_graph_no_gate",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown ablation `{s}` (full, no_graph, no_gate, no_graph_no_gate)"))
    }
}

/// How GAT node states are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NodeInit {
    #[default]
    PosOnly,
    TokenOnly,
    PosPlusToken,
}

impl NodeInit {
    pub const ALL: [NodeInit; 3] = [NodeInit::PosOnly, NodeInit::TokenOnly, NodeInit::PosPlusToken];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeInit::PosOnly => "pos_only",
            NodeInit::TokenOnly => "token_only",
            NodeInit::PosPlusToken => "pos_plus_token",
        }
    }

    pub fn needs_token_states(self) -> bool {
        !matches!(self, NodeInit::PosOnly)
    }
}

impl fmt::Display for NodeInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeInit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown node init `{s}` (pos_only, token_only, pos_plus_token)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub gat_layers: usize,
    pub leaky_slope: f64,
    pub blend_alpha: f64,
    pub node_init: NodeInit,
    pub ablation: Ablation,
}

impl ModelConfig {
    /// Desk-scale defaults: d = 64, 2 + 2 layers, 4 heads, FFN 4d.
    pub fn new(vocab_size: usize) -> Self {
        Self::with_width(vocab_size, 64)
    }

    pub fn with_width(vocab_size: usize, d: usize) -> Self {
        Self {
            vocab_size,
            d,
            heads: if d % 4 == 0 { 4 } else { 1 },
            encoder_layers: 2,
            decoder_layers: 2,
            ffn_dim: 4 * d,
            max_positions: 64,
            gat_layers: 2,
            leaky_slope: 0.2,
            blend_alpha: 0.5,
            node_init: NodeInit::PosOnly,
            ablation: Ablation::Full,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d < 4 {
            return bad(format!("d = {} must be at least 4", self.d));
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return bad(format!("d = {} not divisible into {} heads", self.d, self.heads));
        }
        if self.gat_layers != 2 {
            return bad(format!("gat_layers = {}, the syntactic channel uses 2", self.gat_layers));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) || self.leaky_slope == 0.0 {
            return bad(format!("leaky_slope {} outside (0, 1)", self.leaky_slope));
        }
        if !(0.0..=1.0).contains(&self.blend_alpha) {
            return bad(format!("blend_alpha {} outside [0, 1]", self.blend_alpha));
        }
        if self.vocab_size < 7 {
            return bad("vocabulary smaller than its reserved tokens".into());
        }
        if self.max_positions < 3 {
            return bad("max_positions must allow at least one token".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayerIds {
    pub attn: AttentionIds,
    pub attn_norm: NormIds,
    pub ffn: FeedForwardIds,
    pub ffn_norm: NormIds,
}

#[derive(Debug, Clone)]
pub struct DecoderLayerIds {
    pub self_attn: AttentionIds,
    pub self_norm: NormIds,
    pub cross_attn: AttentionIds,
    pub cross_norm: NormIds,
    pub ffn: FeedForwardIds,
    pub ffn_norm: NormIds,
}

#[derive(Debug, Clone)]
pub struct GatIds {
    pub weight: ParamId,
    pub attn: ParamId,
}

#[derive(Debug, Clone)]
pub struct ParamIds {
    pub token_embed: ParamId,
    pub encoder_positions: ParamId,
    pub encoder: Vec<EncoderLayerIds>,
    pub pos_embed: ParamId,
    pub gat: Vec<GatIds>,
    pub gate_weight: ParamId,
    pub gate_bias: ParamId,
    pub decoder_positions: ParamId,
    pub decoder: Vec<DecoderLayerIds>,
    pub mlp_hidden: (ParamId, ParamId),
    pub mlp_out: (ParamId, ParamId),
}

/// Parameters plus the handles the forward pass uses to find them.
#[derive(Debug, Clone)]
pub struct SynGen {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    pub ids: ParamIds,
}

/// Borrowed architecture plus the parameter values to run it with.
#[derive(Clone, Copy)]
pub struct ModelView<'a> {
    pub config: &'a ModelConfig,
    pub vocab: &'a Vocabulary,
    pub ids: &'a ParamIds,
    pub store: &'a ParamStore,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape matches")
    }

    /// Xavier-uniform `fan_in × fan_out` matrix.
    fn weight(&mut self, name: String, group: ParamGroup, fan_in: usize, fan_out: usize) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let t = self.uniform(&[fan_in, fan_out], bound);
        self.store.register(name, group, t)
    }

    fn embedding(&mut self, name: String, rows: usize, d: usize) -> ParamId {
        // uniform with standard deviation d^-1/2
        let bound = (3.0 / d as f64).sqrt();
        let t = self.uniform(&[rows, d], bound);
        self.store.register(name, ParamGroup::Other, t)
    }

    fn bias(&mut self, name: String, width: usize) -> ParamId {
        self.store.register(name, ParamGroup::Other, Tensor::zeros(&[1, width]))
    }

    fn gain(&mut self, name: String, width: usize) -> ParamId {
        self.store.register(name, ParamGroup::Other, Tensor::full(&[1, width], 1.0))
    }

    fn attention(&mut self, prefix: &str, d: usize) -> AttentionIds {
        AttentionIds {
            q: self.weight(format!("{prefix}.q.weight"), ParamGroup::Other, d, d),
            q_bias: self.bias(format!("{prefix}.q.bias"), d),
            k: self.weight(format!("{prefix}.k.weight"), ParamGroup::Other, d, d),
            v: self.weight(format!("{prefix}.v.weight"), ParamGroup::Other, d, d),
            v_bias: self.bias(format!("{prefix}.v.bias"), d),
            o: self.weight(format!("{prefix}.o.weight"), ParamGroup::Other, d, d),
            o_bias: self.bias(format!("{prefix}.o.bias"), d),
        }
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIds {
        NormIds {
            gain: self.gain(format!("{prefix}.gain"), d),
            bias: self.bias(format!("{prefix}.bias"), d),
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, f: usize) -> FeedForwardIds {
        FeedForwardIds {
            w_in: self.weight(format!("{prefix}.in.weight"), ParamGroup::Other, d, f),
            b_in: self.bias(format!("{prefix}.in.bias"), f),
            w_out: self.weight(format!("{prefix}.out.weight"), ParamGroup::Other, f, d),
            b_out: self.bias(format!("{prefix}.out.bias"), d),
        }
    }
}

impl SynGen {
    /// Fresh model with seeded initialization.
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        if config.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "vocab_size {} but vocabulary has {} entries",
                config.vocab_size,
                vocab.len()
            )));
        }
        config.validate()?;
        let (d, f) = (config.d, config.ffn_dim);
        let mut store = ParamStore::new();
        let mut init = Init {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };

        let token_embed = init.embedding("embed.tokens".into(), config.vocab_size, d);
        let encoder_positions = init.embedding("encoder.positions".into(), config.max_positions, d);
        let encoder = (0..config.encoder_layers)
            .map(|l| EncoderLayerIds {
                attn: init.attention(&format!("encoder.{l}.attn"), d),
                attn_norm: init.norm(&format!("encoder.{l}.attn_norm"), d),
                ffn: init.ffn(&format!("encoder.{l}.ffn"), d, f),
                ffn_norm: init.norm(&format!("encoder.{l}.ffn_norm"), d),
            })
            .collect();

        let pos_embed = init.embedding("syntax.pos_embed".into(), POS_VOCAB_SIZE, d);
        let gat = (0..config.gat_layers)
            .map(|l| GatIds {
                weight: init.weight(format!("syntax.gat.{l}.weight"), ParamGroup::Gat, d, d),
                attn: {
                    let bound = (6.0 / (1 + 2 * d) as f64).sqrt();
                    let t = init.uniform(&[1, 2 * d], bound);
                    init.store.register(format!("syntax.gat.{l}.attn"), ParamGroup::Gat, t)
                },
            })
            .collect();

        let gate_weight = {
            let t = init.uniform(&[d, 1], 0.02);
            init.store.register("gate.weight", ParamGroup::Other, t)
        };
        let gate_bias = init.bias("gate.bias".into(), 1);

        let decoder_positions = init.embedding("decoder.positions".into(), config.max_positions, d);
        let decoder = (0..config.decoder_layers)
            .map(|l| DecoderLayerIds {
                self_attn: init.attention(&format!("decoder.{l}.self_attn"), d),
                self_norm: init.norm(&format!("decoder.{l}.self_norm"), d),
                cross_attn: init.attention(&format!("decoder.{l}.cross_attn"), d),
                cross_norm: init.norm(&format!("decoder.{l}.cross_norm"), d),
                ffn: init.ffn(&format!("decoder.{l}.ffn"), d, f),
                ffn_norm: init.norm(&format!("decoder.{l}.ffn_norm"), d),
            })
            .collect();
        let mlp_hidden = (
            init.weight("pointer.mlp.0.weight".into(), ParamGroup::Other, d, d),
            init.bias("pointer.mlp.0.bias".into(), d),
        );
        let mlp_out = (
            init.weight("pointer.mlp.1.weight".into(), ParamGroup::Other, d, d),
            init.bias("pointer.mlp.1.bias".into(), d),
        );

        let ids = ParamIds {
            token_embed,
            encoder_positions,
            encoder,
            pos_embed,
            gat,
            gate_weight,
            gate_bias,
            decoder_positions,
            decoder,
            mlp_hidden,
            mlp_out,
        };
        Ok(Self {
            config,
            vocab,
            params: store,
            ids,
        })
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    pub fn view(&self) -> ModelView<'_> {
        self.view_with(&self.params)
    }

    /// The same architecture evaluated against another parameter store
    /// (perturbed copies during gradient checking).
    pub fn view_with<'a>(&'a self, store: &'a ParamStore) -> ModelView<'a> {
        ModelView {
            config: &self.config,
            vocab: &self.vocab,
            ids: &self.ids,
            store,
        }
    }

    /// Longest sentence the positional tables admit.
    pub fn max_tokens(&self) -> usize {
        self.config.max_positions - 2
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let doc = Checkpoint {
            model: self.config.clone(),
            vocab: self.vocab.clone(),
            params: self.params.to_stored(),
        };
        let text = serde_json::to_string(&doc)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: Checkpoint = serde_json::from_str(&text)?;
        let mut model = SynGen::new(doc.model, doc.vocab, 0)?;
        model.params.load_stored(&doc.params)?;
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    model: ModelConfig,
    vocab: Vocabulary,
    params: BTreeMap<String, crate::tensor::StoredTensor>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SynGen {
        let vocab = Vocabulary::build([&crate::fixtures::food_sentence()]);
        SynGen::new(ModelConfig::with_width(vocab.len(), 8), vocab, 3).unwrap()
    }

    #[test]
    fn groups_partition_parameters() {
        let m = tiny();
        let gat = m.params.ids_in(ParamGroup::Gat);
        let other = m.params.ids_in(ParamGroup::Other);
        assert_eq!(gat.len(), 4);
        assert_eq!(gat.len() + other.len(), m.params.len());
        for id in gat {
            assert!(m.params.get(id).name.starts_with("syntax.gat."));
        }
    }

    #[test]
    fn checkpoint_reload_is_byte_exact() {
        let m = tiny();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        m.save(&path).unwrap();
        let back = SynGen::load(&path).unwrap();
        for ((_, a), (_, b)) in m.params.iter().zip(back.params.iter()) {
            assert_eq!(a.name, b.name);
            let bits_a: Vec<u64> = a.tensor.data().iter().map(|x| x.to_bits()).collect();
            let bits_b: Vec<u64> = b.tensor.data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
        assert_eq!(back.vocab, m.vocab);
    }

    #[test]
    fn same_seed_same_init() {
        let (a, b) = (tiny(), tiny());
        for ((_, x), (_, y)) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(x.tensor.data(), y.tensor.data());
        }
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::with_width(10, 8);
        assert!(c.validate().is_ok());
        c.d = 2;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::with_width(10, 8);
        c.gat_layers = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::with_width(10, 8);
        c.blend_alpha = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn parse_names() {
        for a in Ablation::ALL {
            assert_eq!(a.as_str().parse::<Ablation>().unwrap(), a);
        }
        for n in NodeInit::ALL {
            assert_eq!(n.as_str().parse::<NodeInit>().unwrap(), n);
        }
    }
}
