//! Greedy and beam decoding against a seeded random scorer on which greedy
//! search is suboptimal, checked against brute-force enumeration, then constrained decoding on the same scorer.
//!
//! ```text
//! cargo run --release --example beam_search
//! ```

use syngen::data::SubtaskKind;
use syngen::inference::stub::{exhaustive_best, RandomStub};
use syngen::inference::{beam_search, greedy_decode, parse_sequence, StepModel};

fn main() -> syngen::Result<()> {
    let k = SubtaskKind::Triplet;
    let steps = 4;
    // First seeded scorer on which greedy search misses the optimum.
    let (stub, best, best_score, g) = (0..)
        .find_map(|seed| {
            let stub = RandomStub::new(3, seed);
            let (best, score) = exhaustive_best(&stub, steps).ok()?;
            let g = greedy_decode(&stub, k, steps, false).ok()?;
            (g.indices != best).then_some((stub, best, score, g))
        })
        .expect("some seed separates greedy from the optimum");
    println!("scorer seed {}, candidates 0..{}", stub.seed, stub.space().total());
    println!("enumeration: {best:?} score {best_score:.4}");
    println!("greedy:      {:?} score {:.4} finished {}", g.indices, g.score, g.finished);
    for beam in [2, 8, 64, 4096] {
        let h = beam_search(&stub, k, beam, steps, false)?;
        println!(
            "beam {beam:>4}:   {:?} score {:.4} finished {}{}",
            h.indices,
            h.score,
            h.finished,
            if h.indices == best { "  (matches enumeration)" } else { "" }
        );
    }

    // With the grammar mask every frame is well formed.
    let steps = 2 * k.frame_len() + 1;
    for beam in [1, 4] {
        let h = beam_search(&stub, k, beam, steps, true)?;
        let parsed = parse_sequence(&h.indices, k, stub.space());
        println!(
            "constrained beam {beam}: {:?} -> {} tuple(s), {} malformed",
            h.indices,
            parsed.predictions.len(),
            parsed.malformed_frames
        );
    }
    println!("scorer calls: {}", stub.calls());
    Ok(())
}
