//! Small hand-annotated sentences used by tests and examples.

use crate::data::{GoldTriplet, Polarity, Sentence, Span};

fn sentence(tokens: &str, pos: &str, deps: &[(usize, usize)], gold: Vec<GoldTriplet>) -> Sentence {
    let s = Sentence {
        id: 0,
        tokens: tokens.split_whitespace().map(str::to_string).collect(),
        pos_tags: pos.split_whitespace().map(str::to_string).collect(),
        dep_edges: deps.to_vec(),
        gold,
    };
    s.validate(0).expect("fixture is well formed");
    s
}

/// "Food is always fresh and hot ready to eat !" with gold
/// `(Food, hot, positive)`.
pub fn food_sentence() -> Sentence {
    sentence(
        "Food is always fresh and hot ready to eat !",
        "NOUN AUX ADV ADJ CCONJ ADJ ADJ PART VERB PUNCT",
        &[
            (4, 1),
            (4, 2),
            (4, 3),
            (0, 4),
            (6, 5),
            (4, 6),
            (6, 7),
            (9, 8),
            (7, 9),
            (4, 10),
        ],
        vec![GoldTriplet {
            aspect: Span::single(1),
            opinion: Some(Span::single(6)),
            polarity: Some(Polarity::Positive),
        }],
    )
}

/// "This place has the best sushi in the city ." with gold
/// `(sushi, best, positive)`.
pub fn sushi_sentence() -> Sentence {
    sentence(
        "This place has the best sushi in the city .",
        "DET NOUN VERB DET ADJ NOUN ADP DET NOUN PUNCT",
        &[
            (2, 1),
            (3, 2),
            (0, 3),
            (6, 4),
            (6, 5),
            (3, 6),
            (9, 7),
            (9, 8),
            (6, 9),
            (3, 10),
        ],
        vec![GoldTriplet {
            aspect: Span::single(6),
            opinion: Some(Span::single(5)),
            polarity: Some(Polarity::Positive),
        }],
    )
}
