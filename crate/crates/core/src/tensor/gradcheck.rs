//! Central-difference gradient oracle.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{ParamGroup, ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    /// Worst relative error per parameter group.
    pub per_group: BTreeMap<ParamGroup, f64>,
    pub entries_checked: usize,
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Compares reverse-mode gradients of `forward` against
/// `(f(θ+ε) − f(θ−ε)) / 2ε` for every entry of every trainable parameter.
///
/// `forward` builds a fresh tape and returns it along with the scalar loss;
/// it must be deterministic.
pub fn finite_diff_check<F>(store: &ParamStore, forward: F, epsilon: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(Tape, Var)> + Sync,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    let eval = |s: &ParamStore| -> Result<f64> {
        let (tape, loss) = forward(s)?;
        Ok(tape.value(loss).item())
    };
    let first = eval(store)?;
    let second = eval(store)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut analytic = store.clone();
    analytic.zero_grads();
    let (tape, loss) = forward(&analytic)?;
    tape.backward_into(loss, &mut analytic, 1.0)?;

    let ids: Vec<_> = store
        .iter()
        .filter(|(_, p)| p.tensor.requires_grad())
        .map(|(id, _)| id)
        .collect();

    let per_param: Vec<(usize, f64, usize, f64, f64)> = ids
        .par_iter()
        .map(|&id| -> Result<(usize, f64, usize, f64, f64)> {
            let grad = analytic.tensor(id).grad().expect("zeroed above").to_vec();
            let mut probe = store.clone();
            let mut worst = (0.0, 0, 0.0, 0.0);
            for (k, &a) in grad.iter().enumerate() {
                let orig = probe.tensor(id).data()[k];
                probe.tensor_mut(id).data_mut()[k] = orig + epsilon;
                let plus = eval(&probe)?;
                probe.tensor_mut(id).data_mut()[k] = orig - epsilon;
                let minus = eval(&probe)?;
                probe.tensor_mut(id).data_mut()[k] = orig;
                let numeric = (plus - minus) / (2.0 * epsilon);
                let err = rel_err(a, numeric);
                if err > worst.0 || err.is_nan() {
                    worst = (err, k, a, numeric);
                }
            }
            Ok((id.index(), worst.0, worst.1, worst.2, worst.3))
        })
        .collect::<Result<_>>()?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        per_group: BTreeMap::new(),
        entries_checked: ids.iter().map(|id| store.tensor(*id).numel()).sum(),
    };
    for (idx, err, k, a, n) in per_param {
        let (id, p) = store.iter().nth(idx).expect("index from this store");
        debug_assert_eq!(id.index(), idx);
        let slot = report.per_group.entry(p.group).or_insert(0.0);
        *slot = slot.max(err);
        if err > report.max_rel_err || report.worst_param.is_empty() {
            report.max_rel_err = err;
            report.worst_param = p.name.clone();
            report.worst_index = k;
            report.worst_analytic = a;
            report.worst_numeric = n;
        }
    }
    Ok(report)
}
