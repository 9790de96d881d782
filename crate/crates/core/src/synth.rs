//! Template-based synthetic ABSA data with random dependency trees.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{GoldTriplet, Polarity, Sentence, Span, UPOS_TAGS};

const ASPECTS: &[&[&str]] = &[
    &["food"],
    &["service"],
    &["staff"],
    &["pizza"],
    &["sushi"],
    &["wine"],
    &["menu"],
    &["decor"],
    &["music"],
    &["dessert"],
    &["battery", "life"],
    &["screen", "quality"],
    &["delivery", "time"],
    &["wine", "list"],
    &["customer", "service"],
];

const POSITIVE: &[&str] = &["great", "fresh", "delicious", "friendly", "excellent", "tasty"];
const NEGATIVE: &[&str] = &["slow", "rude", "terrible", "bland", "awful", "overpriced"];
const NEUTRAL: &[&str] = &["average", "okay", "ordinary", "standard"];

/// Template pieces: fixed words with their tags, or slots filled per sentence.
#[derive(Clone, Copy)]
enum Piece {
    Word(&'static str, &'static str),
    Aspect(usize),
    Opinion(usize),
}

use Piece::*;

const TEMPLATES: &[&[Piece]] = &[
    &[Word("the", "DET"), Aspect(0), Word("is", "AUX"), Opinion(0), Word(".", "PUNCT")],
    &[Word("i", "PRON"), Word("found", "VERB"), Word("the", "DET"), Opinion(0), Aspect(0), Word(".", "PUNCT")],
    &[Aspect(0), Word("was", "AUX"), Word("really", "ADV"), Opinion(0), Word("!", "PUNCT")],
    &[
        Word("the", "DET"),
        Aspect(0),
        Word("was", "AUX"),
        Opinion(0),
        Word("but", "CCONJ"),
        Word("the", "DET"),
        Aspect(1),
        Word("was", "AUX"),
        Opinion(1),
        Word(".", "PUNCT"),
    ],
    &[
        Word("they", "PRON"),
        Word("have", "VERB"),
        Opinion(0),
        Aspect(0),
        Word("and", "CCONJ"),
        Opinion(1),
        Aspect(1),
        Word(".", "PUNCT"),
    ],
];

fn pick_opinion(rng: &mut ChaCha8Rng) -> (&'static str, Polarity) {
    let polarity = [Polarity::Positive, Polarity::Negative, Polarity::Neutral][rng.gen_range(0..3)];
    let pool = match polarity {
        Polarity::Positive => POSITIVE,
        Polarity::Negative => NEGATIVE,
        Polarity::Neutral => NEUTRAL,
    };
    (pool.choose(rng).copied().expect("non-empty"), polarity)
}

/// Uniformly random rooted tree over `n` nodes as `(head, dependent)` pairs,
/// 1-based with head 0 for the root.
pub fn random_tree(n: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (1..=n).collect();
    order.shuffle(rng);
    let mut edges = Vec::with_capacity(n);
    edges.push((0, order[0]));
    for i in 1..n {
        let head = order[rng.gen_range(0..i)];
        edges.push((head, order[i]));
    }
    edges.sort_by_key(|&(_, d)| d);
    edges
}

/// One sentence from a random template.
pub fn synth_sentence(id: usize, rng: &mut ChaCha8Rng) -> Sentence {
    let template = TEMPLATES.choose(rng).expect("templates");
    let slots = 1 + template
        .iter()
        .filter_map(|p| match p {
            Aspect(i) => Some(*i),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    let mut aspects: Vec<&[&str]> = Vec::new();
    while aspects.len() < slots {
        let a = *ASPECTS.choose(rng).expect("aspects");
        if !aspects.contains(&a) {
            aspects.push(a);
        }
    }
    let opinions: Vec<_> = (0..slots).map(|_| pick_opinion(rng)).collect();

    let mut tokens = Vec::new();
    let mut pos_tags = Vec::new();
    let mut aspect_spans = vec![Span::single(1); slots];
    let mut opinion_spans = vec![Span::single(1); slots];
    for piece in template.iter() {
        match *piece {
            Word(w, tag) => {
                tokens.push(w.to_string());
                pos_tags.push(tag.to_string());
            }
            Aspect(i) => {
                let start = tokens.len() + 1;
                for w in aspects[i] {
                    tokens.push(w.to_string());
                    pos_tags.push("NOUN".to_string());
                }
                aspect_spans[i] = Span::new(start, tokens.len());
            }
            Opinion(i) => {
                tokens.push(opinions[i].0.to_string());
                pos_tags.push("ADJ".to_string());
                opinion_spans[i] = Span::single(tokens.len());
            }
        }
    }
    debug_assert!(pos_tags.iter().all(|t| UPOS_TAGS.contains(&t.as_str())));
    let dep_edges = random_tree(tokens.len(), rng);
    let gold = (0..slots)
        .map(|i| GoldTriplet {
            aspect: aspect_spans[i],
            opinion: Some(opinion_spans[i]),
            polarity: Some(opinions[i].1),
        })
        .collect();
    Sentence {
        id,
        tokens,
        pos_tags,
        dep_edges,
        gold,
    }
}

/// `count` sentences, reproducible from `seed`.
pub fn synth_dataset(count: usize, seed: u64) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|i| synth_sentence(i, &mut rng)).collect()
}

/// A sentence of exactly `n` tokens with random tags, a random tree and a
/// single triplet; used by gradient checks.
pub fn random_sentence(n: usize, rng: &mut impl Rng) -> Sentence {
    assert!(n >= 1);
    let tokens: Vec<String> = (0..n).map(|i| format!("w{}", rng.gen_range(0..n.max(2)) + i)).collect();
    let pos_tags = (0..n)
        .map(|_| UPOS_TAGS[rng.gen_range(0..UPOS_TAGS.len())].to_string())
        .collect();
    let dep_edges = random_tree(n, rng);
    let span = |rng: &mut dyn rand::RngCore| {
        let s = rng.gen_range(1..=n);
        Span::new(s, rng.gen_range(s..=n))
    };
    let gold = vec![GoldTriplet {
        aspect: span(rng),
        opinion: Some(span(rng)),
        polarity: Some(Polarity::ALL[rng.gen_range(0..3)]),
    }];
    Sentence {
        id: 0,
        tokens,
        pos_tags,
        dep_edges,
        gold,
    }
}
