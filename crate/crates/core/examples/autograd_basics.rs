//! The tape-based autodiff engine on its own: build a small graph, run
//! reverse mode, and confirm the result with central differences.
//!
//! ```text
//! cargo run --example autograd_basics
//! ```

use syngen::tensor::{finite_diff_check, ParamGroup, ParamStore, Tape, Tensor};

fn main() -> syngen::Result<()> {
    let mut store = ParamStore::new();
    let x = store.register("x", ParamGroup::Other, Tensor::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]])?);
    let w = store.register("w", ParamGroup::Other, Tensor::from_rows(&[vec![1.0, 0.3], vec![-0.7, 0.9]])?);

    // loss = mean(log softmax_rows(gelu(x · w)))
    let forward = |s: &ParamStore| -> syngen::Result<_> {
        let mut tape = Tape::new();
        let xv = tape.param(s, x);
        let wv = tape.param(s, w);
        let h = tape.matmul(xv, wv)?;
        let h = tape.gelu(h);
        let p = tape.softmax(h, 1, None)?;
        let l = tape.log(p);
        let loss = tape.mean(l);
        Ok((tape, loss))
    };

    let (tape, loss) = forward(&store)?;
    println!("loss = {:.6}", tape.value(loss).item());
    let mut with_grads = store.clone();
    tape.backward_into(loss, &mut with_grads, 1.0)?;
    for (_, p) in with_grads.iter() {
        println!("d loss / d {} = {:?}", p.name, p.tensor.grad().unwrap());
    }

    let report = finite_diff_check(&store, forward, 1e-5)?;
    println!(
        "finite-difference check: max relative error {:.2e} over {} entries",
        report.max_rel_err, report.entries_checked
    );
    Ok(())
}
