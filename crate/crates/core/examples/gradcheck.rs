//! Finite-difference check of the full model under every ablation and
//! node-initialisation setting.
//!
//! ```text
//! cargo run --release --example gradcheck
//! ```

use std::time::Instant;

use syngen::model::{Ablation, NodeInit};
use syngen::training::{gradient_check, GradCheckConfig};

fn main() -> syngen::Result<()> {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for ablation in Ablation::ALL {
        for node_init in NodeInit::ALL {
            let cfg = GradCheckConfig {
                ablation,
                node_init,
                ..GradCheckConfig::default()
            };
            let r = gradient_check(&cfg)?;
            println!(
                "{:<17} {:<15} max_rel_err {:.3e}  worst {}[{}] analytic {:.3e} numeric {:.3e}  ({} entries)",
                ablation.as_str(),
                node_init.as_str(),
                r.max_rel_err,
                r.worst_param,
                r.worst_index,
                r.worst_analytic,
                r.worst_numeric,
                r.entries_checked
            );
            worst = worst.max(r.max_rel_err);
        }
    }
    println!("overall max_rel_err {worst:.3e} in {:.1?}", started.elapsed());
    Ok(())
}
