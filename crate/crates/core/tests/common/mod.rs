//! Random models, sentences and gold sets shared by the integration suites.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use syngen::data::{GoldTriplet, Polarity, Sentence, Span, Vocabulary};
use syngen::model::{Ablation, ModelConfig, NodeInit, SynGen};
use syngen::synth::random_sentence;

/// A small model with randomly chosen width, depth, ablation and node
/// initialisation, plus `count` random sentences it can encode.
pub fn random_setup(rng: &mut ChaCha8Rng, count: usize) -> (SynGen, Vec<Sentence>) {
    let sentences: Vec<Sentence> = (0..count)
        .map(|_| {
            let n = rng.gen_range(1..=9);
            random_sentence(n, rng)
        })
        .collect();
    let vocab = Vocabulary::build(&sentences);
    let d = *[4, 6, 8, 12, 16].choose(rng).unwrap();
    let mut cfg = ModelConfig::with_width(vocab.len(), d);
    cfg.encoder_layers = rng.gen_range(1..=2);
    cfg.decoder_layers = rng.gen_range(1..=2);
    cfg.ablation = *Ablation::ALL.choose(rng).unwrap();
    cfg.node_init = *NodeInit::ALL.choose(rng).unwrap();
    cfg.blend_alpha = rng.gen();
    let model = SynGen::new(cfg, vocab, rng.gen()).expect("valid random config");
    (model, sentences)
}

pub fn random_span(rng: &mut impl Rng, n: usize) -> Span {
    let s = rng.gen_range(1..=n);
    Span::new(s, rng.gen_range(s..=n.min(s + 3)))
}

/// A sentence with 0 to 4 fully annotated triplets, possibly repeated.
pub fn random_gold_sentence(rng: &mut ChaCha8Rng) -> Sentence {
    let n = rng.gen_range(1..=12);
    let mut s = random_sentence(n, rng);
    let m = rng.gen_range(0..=4);
    s.gold = (0..m)
        .map(|_| GoldTriplet {
            aspect: random_span(rng, n),
            opinion: Some(random_span(rng, n)),
            polarity: Some(Polarity::ALL[rng.gen_range(0..3)]),
        })
        .collect();
    if m >= 2 && rng.gen_bool(0.3) {
        let dup = s.gold[0].clone();
        s.gold.push(dup);
    }
    s
}

pub fn row_sums(t: &syngen::tensor::Tensor) -> Vec<f64> {
    t.to_rows().iter().map(|r| r.iter().sum()).collect()
}
