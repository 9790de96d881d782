//! Train, save a checkpoint, reload it, and decode with several search
//! settings.
//!
//! ```text
//! cargo run --release --example checkpoint_decode
//! ```

use syngen::data::SubtaskKind;
use syngen::inference::{decode_sentence, DecodeOptions};
use syngen::synth::synth_dataset;
use syngen::training::{train, TrainConfig};
use syngen::SynGen;

fn main() -> syngen::Result<()> {
    let data = synth_dataset(6, 21);
    let cfg = TrainConfig {
        epochs: 150,
        d: 32,
        ..TrainConfig::default()
    };
    let (model, stats) = train(&data, &cfg)?;
    println!("trained {} epochs, training F1 {:.3}", stats.epochs.len(), stats.final_train_f1);

    let path = std::env::temp_dir().join("syngen_example_checkpoint.json");
    model.save(&path)?;
    let model = SynGen::load(&path)?;

    let settings = [
        ("greedy", DecodeOptions { beam: 1, ..DecodeOptions::default() }),
        ("beam 4", DecodeOptions::default()),
        ("beam 4 constrained", DecodeOptions { constrained: true, ..DecodeOptions::default() }),
    ];
    for s in data.iter().take(3) {
        println!("\n{}", s.tokens.join(" "));
        for (name, opts) in &settings {
            let r = decode_sentence(&model, s, SubtaskKind::Triplet, opts)?;
            let shown: Vec<String> = r
                .predictions
                .iter()
                .map(|p| {
                    let words = |sp: syngen::data::Span| s.tokens[sp.start - 1..sp.end].join(" ");
                    format!(
                        "({}, {}, {})",
                        words(p.aspect),
                        p.opinion.map(words).unwrap_or_default(),
                        p.polarity.map(|x| x.as_str()).unwrap_or("")
                    )
                })
                .collect();
            println!("  {name:<19} {:?} score {:.3}  {}", r.indices, r.score, shown.join(" "));
        }
    }
    Ok(())
}
