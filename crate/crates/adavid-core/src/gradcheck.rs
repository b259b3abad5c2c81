//! Central finite-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tape, Var};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_entry: usize,
    pub entries_checked: usize,
    pub pass: bool,
}

/// Compare analytic gradients of a scalar function against central
/// differences over every parameter entry.
///
/// `f` builds the loss on the given tape from the current store contents;
/// it must be deterministic (it is evaluated twice at the base point and
/// any mismatch is an error). Relative error per entry is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
pub fn grad_check<F>(f: F, store: &mut ParamStore, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    assert!(step > 0.0, "step must be positive");

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = f(store, &mut tape)?;
        Ok(tape.value(loss)[0])
    };

    let base = eval(store)?;
    let again = eval(store)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::NonDeterministic(format!(
            "loss changed between evaluations: {base} vs {again}"
        )));
    }

    // Analytic gradients.
    store.zero_grads();
    {
        let mut tape = Tape::new();
        let loss = f(store, &mut tape)?;
        tape.backward(loss)?;
        tape.flush_grads(store);
    }
    let analytic: Vec<Vec<f64>> = store.iter().map(|(_, p)| p.grad.clone()).collect();

    let mut max_rel = 0.0f64;
    let mut worst_param = String::new();
    let mut worst_entry = 0;
    let mut checked = 0;

    let n_params = store.len();
    for pi in 0..n_params {
        let entries = store.iter().nth(pi).unwrap().1.data.len();
        for ei in 0..entries {
            let orig = store.iter().nth(pi).unwrap().1.data[ei];

            store.iter_mut().nth(pi).unwrap().1.data[ei] = orig + step;
            let plus = eval(store)?;
            store.iter_mut().nth(pi).unwrap().1.data[ei] = orig - step;
            let minus = eval(store)?;
            store.iter_mut().nth(pi).unwrap().1.data[ei] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[pi][ei];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            checked += 1;
            if rel > max_rel {
                max_rel = rel;
                worst_param = store.iter().nth(pi).unwrap().1.name.clone();
                worst_entry = ei;
            }
        }
    }

    Ok(GradCheckReport {
        max_rel_err: max_rel,
        worst_param,
        worst_entry,
        entries_checked: checked,
        pass: max_rel < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn quadratic_is_exact() {
        // f(w) = w^2 at w = 2: analytic 4, central difference exact for quadratics.
        let mut store = ParamStore::new();
        store.add("w", 1, 1, vec![2.0]);
        let report = grad_check(
            |s, t| {
                let w = t.param(s, crate::tensor::ParamId(0));
                let sq = t.mul(w, w)?;
                Ok(t.sum_all(sq))
            },
            &mut store,
            1e-5,
            1e-9,
        )
        .unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
        assert!(report.max_rel_err < 1e-9);
    }

    #[test]
    fn detects_non_determinism() {
        let calls = Cell::new(0u64);
        let mut store = ParamStore::new();
        store.add("w", 1, 1, vec![1.0]);
        let err = grad_check(
            |s, t| {
                calls.set(calls.get() + 1);
                let w = t.param(s, crate::tensor::ParamId(0));
                let noisy = t.scale(w, 1.0 + calls.get() as f64 * 1e-3);
                Ok(t.sum_all(noisy))
            },
            &mut store,
            1e-5,
            1e-4,
        );
        assert!(matches!(err, Err(Error::NonDeterministic(_))));
    }
}
