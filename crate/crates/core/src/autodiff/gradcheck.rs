//! Central finite-difference gradient verification.
//!
//! The numeric side evaluates the loss as a pure forward function of the
//! parameter values (no tape), so it is independent of the backward rules
//! it checks.

use super::{backward, collect_grads, ParamStore, Tape, TapeParams, Tensor};
use crate::Result;

/// Worst-case deviation between analytic and numeric gradients.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Total parameter coordinates checked.
    pub coords: usize,
}

/// Compares tape gradients of `build`'s scalar output against central
/// finite differences with step `h`.
///
/// Relative error uses `|a - n| / max(|a|, |n|, 1e-6)` so near-zero
/// gradients are judged by absolute deviation.
pub fn gradcheck<F>(store: &ParamStore, build: F, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&TapeParams) -> Result<Tensor>,
{
    // Analytic gradients.
    let tape = Tape::new();
    let bound = store.leaves(&tape)?;
    let loss = build(&bound)?;
    let grads = backward(&loss)?;
    let analytic = collect_grads(store, &bound, &grads);

    // Numeric gradients via perturbed constant evaluation.
    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        coords: 0,
    };
    for p in 0..store.len() {
        for i in 0..store.entries()[p].data.len() {
            let original = work.entries()[p].data[i];
            work.entries_mut()[p].data[i] = original + h;
            let plus = build(&work.constants()?)?.value();
            work.entries_mut()[p].data[i] = original - h;
            let minus = build(&work.constants()?)?.value();
            work.entries_mut()[p].data[i] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[p][i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(1e-6);
            report.max_abs_err = report.max_abs_err.max(abs);
            report.max_rel_err = report.max_rel_err.max(rel);
            report.coords += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_passes_gradcheck() {
        let mut store = ParamStore::new();
        store.register("x", &[3], vec![0.4, -0.9, 1.3]).unwrap();
        let report = gradcheck(
            &store,
            |tp| {
                let x = tp.get("x")?;
                x.mul(x)?.sum()
            },
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-8, "rel err {}", report.max_rel_err);
        assert_eq!(report.coords, 3);
    }
}
