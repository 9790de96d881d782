//! Overfits eight synthetic sentences on the triplet task and reports the
//! training-set F1.
//!
//! ```text
//! cargo run --release --example overfit_triplet -- [epochs] [lr_gat_scale]
//! ```

use syngen::data::SubtaskKind;
use syngen::synth::synth_dataset;
use syngen::training::{train, TrainConfig};

fn main() -> syngen::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(300, |a| a.parse().expect("epochs"));
    let scale: f64 = args.next().map_or(1.0, |a| a.parse().expect("scale"));
    let data = synth_dataset(8, 1);
    for s in &data {
        println!("{}", s.tokens.join(" "));
    }
    let cfg = TrainConfig {
        subtask: SubtaskKind::Triplet,
        epochs,
        d: 32,
        lr_gat: 1e-5 * scale,
        eval_every: 25,
        ..TrainConfig::default()
    };
    let (_, stats) = train(&data, &cfg)?;
    for e in stats.epochs.iter().filter(|e| e.f1.is_some()) {
        println!("epoch {:>4}  loss {:.5}  f1 {:.3}", e.epoch, e.loss, e.f1.unwrap_or(0.0));
    }
    println!(
        "final training F1 {:.4} after {} epochs ({:.1}s)",
        stats.final_train_f1,
        stats.epochs.len(),
        stats.wall_clock_secs
    );
    Ok(())
}
