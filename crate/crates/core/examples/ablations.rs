//! Trains the four encoder variants on the same synthetic data and compares
//! training loss and F1.
//!
//! ```text
//! cargo run --release --example ablations -- [epochs]
//! ```

use syngen::data::SubtaskKind;
use syngen::evaluation::evaluate_model;
use syngen::inference::DecodeOptions;
use syngen::model::Ablation;
use syngen::synth::synth_dataset;
use syngen::training::{train, TrainConfig};

fn main() -> syngen::Result<()> {
    let epochs = std::env::args().nth(1).map_or(60, |a| a.parse().expect("epochs"));
    let train_set = synth_dataset(12, 3);
    let held_out = synth_dataset(6, 4);
    println!("{:<17} {:>10} {:>9} {:>9}", "ablation", "final loss", "train F1", "other F1");
    for ablation in Ablation::ALL {
        let cfg = TrainConfig {
            epochs,
            d: 32,
            ablation,
            ..TrainConfig::default()
        };
        let (model, stats) = train(&train_set, &cfg)?;
        // Held-out words the model never saw map to <unk>.
        let other = evaluate_model(&model, &held_out, SubtaskKind::Triplet, &DecodeOptions::default())?;
        println!(
            "{:<17} {:>10.4} {:>9.3} {:>9.3}",
            ablation.as_str(),
            stats.losses().last().copied().unwrap_or(f64::NAN),
            stats.final_train_f1,
            other.f1
        );
    }
    Ok(())
}
