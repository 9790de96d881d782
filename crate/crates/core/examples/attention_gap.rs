//! Attention comparison on "This place has the best sushi in the city .":
//! trains a gated model and a plain baseline on the sentence, then prints
//! the aspect row of both attention maps and the Value / Rank / Prop gap.
//!
//! ```text
//! cargo run --release --example attention_gap
//! ```

use syngen::data::Span;
use syngen::evaluation::{attention_extract, attention_gap, matrix_difference, matrix_labels};
use syngen::fixtures::sushi_sentence;
use syngen::model::Ablation;
use syngen::training::{train, TrainConfig};

fn main() -> syngen::Result<()> {
    let s = sushi_sentence();
    let data = vec![s.clone()];
    let fit = |ablation| {
        let cfg = TrainConfig {
            epochs: 40,
            d: 16,
            ablation,
            ..TrainConfig::default()
        };
        train(&data, &cfg).map(|(m, _)| m)
    };
    let ours = fit(Ablation::Full)?;
    let base = fit(Ablation::NoGraphNoGate)?;
    let (a_ours, a_base) = (attention_extract(&ours, &s)?, attention_extract(&base, &s)?);
    let diff = matrix_difference(&a_ours, &a_base)?;

    let labels = matrix_labels(&s);
    let (aspect, opinion) = (Span::single(6), Span::single(5));
    println!("row `{}`:", labels[aspect.start]);
    println!("{:<8} {:>9} {:>9} {:>9}", "key", "ours", "baseline", "diff");
    for (j, l) in labels.iter().enumerate() {
        println!(
            "{:<8} {:>9.4} {:>9.4} {:>+9.4}",
            l,
            a_ours.at(aspect.start, j),
            a_base.at(aspect.start, j),
            diff.at(aspect.start, j)
        );
    }
    let report = attention_gap(&a_ours, &a_base, &[(aspect, opinion)])?;
    print!("{}", report.summary_csv());
    Ok(())
}
