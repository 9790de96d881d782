//! Synthetic data generation: template sentences with random dependency
//! trees, written as JSON lines and read back.
//!
//! ```text
//! cargo run --example synth_data
//! ```

use syngen::data::{linearize_targets, parse_dataset, write_dataset, SubtaskKind};
use syngen::synth::synth_dataset;

fn main() -> syngen::Result<()> {
    let data = synth_dataset(5, 7);
    for s in &data {
        println!("{}", s.tokens.join(" "));
        println!("  deps    {:?}", s.dep_edges);
        for g in &s.gold {
            println!("  gold    {:?}", g);
        }
        println!("  target  {:?}", linearize_targets(s, SubtaskKind::Triplet)?);
    }
    let path = std::env::temp_dir().join("syngen_synth_example.jsonl");
    write_dataset(&path, &data)?;
    let back = parse_dataset(&path)?;
    assert_eq!(back, data);
    println!("wrote and re-read {} sentences at {}", back.len(), path.display());
    Ok(())
}
