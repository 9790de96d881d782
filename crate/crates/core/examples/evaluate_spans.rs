//! Exact-match span scoring: three predictions, two correct, four gold
//! tuples, scored under each subtask.
//!
//! ```text
//! cargo run --example evaluate_spans
//! ```

use syngen::data::{Polarity, Prediction, Span, SubtaskKind};
use syngen::evaluation::span_f1;

fn t(aspect: usize, opinion: usize, polarity: Polarity) -> Prediction {
    Prediction {
        aspect: Span::single(aspect),
        opinion: Some(Span::single(opinion)),
        polarity: Some(polarity),
    }
}

fn main() -> syngen::Result<()> {
    use Polarity::*;
    let gold = vec![
        vec![t(1, 2, Positive), t(3, 4, Negative)],
        vec![t(1, 2, Neutral), t(5, 6, Positive)],
    ];
    let preds = vec![vec![t(1, 2, Positive), t(3, 4, Positive)], vec![t(5, 6, Positive)]];
    for k in SubtaskKind::ALL {
        let r = span_f1(&preds, &gold, k)?;
        println!(
            "{:<8} P {:.4}  R {:.4}  F1 {:.4}  ({} predicted, {} gold, {} correct)",
            k.as_str(),
            r.precision,
            r.recall,
            r.f1,
            r.predicted,
            r.gold,
            r.correct
        );
    }
    Ok(())
}
