use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Central differences at h = 1e-5 on O(1) losses carry roughly 1e-11 of
/// rounding noise, so gradients below this magnitude are compared absolutely.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub probed: usize,
    /// Parameter name, flat index, analytic and central-difference values at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

fn evaluate<F>(params: &ParamStore, loss_fn: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, params)?;
    let value = tape.value(loss);
    if !value.is_scalar() {
        return Err(Error::Shape {
            op: "finite_diff_check",
            detail: format!("loss must be scalar, got {:?}", value.shape()),
        });
    }
    Ok(value.item())
}

/// Compares tape gradients against central differences on `probe_count`
/// randomly chosen coordinates (all of them when `probe_count` covers the store).
///
/// The per-coordinate error is `|analytic - central| / max(|analytic|, |central|, MAGNITUDE_FLOOR)`.
pub fn finite_diff_check<F>(
    params: &ParamStore,
    loss_fn: F,
    probe_count: usize,
    step_size: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let first = evaluate(params, &loss_fn)?;
    let second = evaluate(params, &loss_fn)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Numeric(format!(
            "loss function is not deterministic ({first} vs {second})"
        )));
    }

    let mut analytic_store = params.values_only();
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, &analytic_store)?;
    tape.backward_into(loss, &mut analytic_store)?;

    let coords: Vec<(String, usize)> = params
        .iter()
        .flat_map(|(name, t)| (0..t.len()).map(move |i| (name.to_string(), i)))
        .collect();
    let chosen: Vec<usize> = if probe_count >= coords.len() {
        (0..coords.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, coords.len(), probe_count).into_vec();
        picked.sort_unstable();
        picked
    };

    let mut perturbed = params.values_only();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        probed: chosen.len(),
        worst: None,
    };
    for idx in chosen {
        let (name, i) = &coords[idx];
        let original = params.get(name).expect("coordinate from store").data()[*i];
        perturbed.value_mut(name).expect("present").data_mut()[*i] = original + step_size;
        let plus = evaluate(&perturbed, &loss_fn)?;
        perturbed.value_mut(name).expect("present").data_mut()[*i] = original - step_size;
        let minus = evaluate(&perturbed, &loss_fn)?;
        perturbed.value_mut(name).expect("present").data_mut()[*i] = original;

        let central = (plus - minus) / (2.0 * step_size);
        let analytic = analytic_store.grad(name).expect("grads ensured").data()[*i];
        let denom = analytic.abs().max(central.abs()).max(MAGNITUDE_FLOOR);
        let err = (analytic - central).abs() / denom;
        if report.worst.is_none() || err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst = Some((name.clone(), *i, analytic, central));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use std::cell::Cell;

    fn store() -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::vector(vec![0.3, -1.1, 2.5])).unwrap();
        p.insert("b", Tensor::vector(vec![0.7])).unwrap();
        p
    }

    #[test]
    fn linear_loss_is_exact() {
        let report = finite_diff_check(
            &store(),
            |t, p| {
                let w = t.param(p, "w")?;
                let c = t.constant(Tensor::vector(vec![1.0, -2.0, 0.5]))?;
                let wc = t.mul(w, c)?;
                let s = t.sum(wc)?;
                let b = t.param(p, "b")?;
                let b = t.sum(b)?;
                t.add(s, b)
            },
            100,
            1e-5,
            0,
        )
        .unwrap();
        assert_eq!(report.probed, 4);
        assert!(report.max_relative_error < 1e-8, "{report:?}");
    }

    #[test]
    fn logistic_cross_entropy_matches() {
        // -log sigmoid(w.x) for a positive label
        let report = finite_diff_check(
            &store(),
            |t, p| {
                let w = t.param(p, "w")?;
                let x = t.constant(Tensor::vector(vec![0.4, 0.2, -0.3]))?;
                let wx = t.mul(w, x)?;
                let z = t.sum(wx)?;
                let ls = t.log_sigmoid(z)?;
                t.scale(ls, -1.0)
            },
            100,
            1e-5,
            0,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn corrupted_backward_is_flagged() {
        let report = finite_diff_check(
            &store(),
            |t, p| {
                let w = t.param(p, "w")?;
                let w = t.grad_scale(w, 2.0)?;
                let ww = t.mul(w, w)?;
                t.sum(ww)
            },
            100,
            1e-5,
            0,
        )
        .unwrap();
        assert!((report.max_relative_error - 0.5).abs() < 1e-6, "{report:?}");
    }

    #[test]
    fn nondeterministic_loss_rejected() {
        let counter = Cell::new(0.0);
        let err = finite_diff_check(
            &store(),
            |t, p| {
                counter.set(counter.get() + 1.0);
                let w = t.param(p, "w")?;
                let s = t.sum(w)?;
                let c = t.constant(Tensor::scalar(counter.get()))?;
                t.add(s, c)
            },
            10,
            1e-5,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn probe_subset_is_seeded() {
        let loss = |t: &mut Tape, p: &ParamStore| {
            let w = t.param(p, "w")?;
            let ww = t.mul(w, w)?;
            t.sum(ww)
        };
        let a = finite_diff_check(&store(), loss, 2, 1e-5, 9).unwrap();
        assert_eq!(a.probed, 2);
    }
}
