//! Central-difference verification of analytic gradients.

use crate::error::{Error, Result};

use super::{ParamStore, Real, Tape, Var};

/// Outcome for one named parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Element with the largest error among the smooth elements.
    pub worst_index: usize,
    /// Elements where one-sided differences disagree: non-differentiable points.
    pub kinks: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn kink_count(&self) -> usize {
        self.params.iter().map(|p| p.kinks.len()).sum()
    }
}

/// Relative error `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub const REL_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the backward-pass gradient of `loss_fn` against
/// `(f(p+eps) − f(p−eps)) / (2·eps)` for every element of every parameter.
///
/// `loss_fn` records a scalar loss on the given tape; it must be
/// deterministic in the parameter values. Gradients already in `store` are
/// discarded.
pub fn finite_diff_check<T, F>(store: &mut ParamStore<T>, mut loss_fn: F, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    T: Real,
    F: FnMut(&mut Tape<T>, &mut ParamStore<T>) -> Result<Var>,
{
    let mut reports = finite_diff_check_many(store, |tape, store| Ok(vec![loss_fn(tape, store)?]), eps, tol)?;
    Ok(reports.remove(0))
}

/// [`finite_diff_check`] for several scalar outputs of one forward pass,
/// sharing the perturbed evaluations. Returns one report per output.
pub fn finite_diff_check_many<T, F>(
    store: &mut ParamStore<T>,
    mut loss_fn: F,
    eps: f64,
    tol: f64,
) -> Result<Vec<GradCheckReport>>
where
    T: Real,
    F: FnMut(&mut Tape<T>, &mut ParamStore<T>) -> Result<Vec<Var>>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let losses = loss_fn(&mut tape, store)?;
    let base: Vec<f64> = losses.iter().map(|&l| tape.scalar(l).f64()).collect();
    if base.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("loss at unperturbed parameters".into()));
    }
    // analytic[output][param][element]
    let mut analytic = Vec::with_capacity(losses.len());
    for &l in &losses {
        tape.backward(l, store)?;
        analytic.push(store.ids().map(|id| store.grad(id).to_f64()).collect::<Vec<_>>());
        store.zero_grad();
    }

    let mut eval = |store: &mut ParamStore<T>, name: &str, k: usize| -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let losses = loss_fn(&mut tape, store)?;
        let v: Vec<f64> = losses.iter().map(|&l| tape.scalar(l).f64()).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("loss with `{name}`[{k}] perturbed")));
        }
        Ok(v)
    };

    let ids: Vec<_> = store.ids().collect();
    let mut params: Vec<Vec<ParamCheck>> = vec![Vec::with_capacity(ids.len()); losses.len()];
    for (pi, id) in ids.into_iter().enumerate() {
        let name = store.name(id).to_string();
        let mut checks: Vec<ParamCheck> = (0..losses.len())
            .map(|_| ParamCheck {
                name: name.clone(),
                max_rel_err: 0.0,
                worst_index: 0,
                kinks: Vec::new(),
            })
            .collect();
        for k in 0..store.value(id).numel() {
            let orig = store.value(id).data()[k];
            let h = T::of(eps);
            store.value_mut(id).data_mut()[k] = orig + h;
            let up = eval(store, &name, k)?;
            store.value_mut(id).data_mut()[k] = orig - h;
            let down = eval(store, &name, k);
            store.value_mut(id).data_mut()[k] = orig;
            let down = down?;
            // effective step after rounding in T
            let step = ((orig + h).f64() - (orig - h).f64()) / 2.0;
            for (o, check) in checks.iter_mut().enumerate() {
                let numeric = (up[o] - down[o]) / (2.0 * step);
                let forward = (up[o] - base[o]) / step;
                let backward = (base[o] - down[o]) / step;
                if (forward - backward).abs() > eps.sqrt() * numeric.abs().max(1.0) {
                    check.kinks.push(k);
                    continue;
                }
                let err = relative_error(analytic[o][pi][k], numeric);
                if err > check.max_rel_err {
                    check.max_rel_err = err;
                    check.worst_index = k;
                }
            }
        }
        for (o, c) in checks.into_iter().enumerate() {
            params[o].push(c);
        }
    }
    Ok(params
        .into_iter()
        .map(|params| {
            let max_rel_err = params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max);
            GradCheckReport {
                params,
                max_rel_err,
                tol,
                passed: max_rel_err <= tol,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numgrad::Tensor;

    #[test]
    fn quadratic_passes() {
        let mut store = ParamStore::<f64>::new(0);
        let p = store.add("p", Tensor::scalar(3.0)).unwrap();
        let report = finite_diff_check(
            &mut store,
            |tape, store| {
                let v = tape.param(store, p);
                let sq = tape.mul(v, v)?;
                Ok(tape.sum(sq))
            },
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.kink_count(), 0);
    }

    #[test]
    fn abs_at_zero_is_flagged_not_failed() {
        let mut store = ParamStore::<f64>::new(0);
        let p = store.add("p", Tensor::scalar(0.0)).unwrap();
        let report = finite_diff_check(
            &mut store,
            |tape, store| {
                let v = tape.param(store, p);
                let a = tape.abs(v);
                Ok(tape.sum(a))
            },
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(report.passed);
        assert_eq!(report.params[0].kinks, vec![0]);
    }

    #[test]
    fn wrong_gradient_fails() {
        // the second factor is fed as a constant, so the tape reports half the true slope of p²
        let mut store = ParamStore::<f64>::new(0);
        let p = store.add("p", Tensor::scalar(1.0)).unwrap();
        let report = finite_diff_check(
            &mut store,
            |tape, store| {
                let v = tape.param(store, p);
                let c = tape.input(store.value(p).clone());
                let y = tape.mul(v, c)?;
                Ok(tape.sum(y))
            },
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn non_finite_loss_names_parameter() {
        let mut store = ParamStore::<f64>::new(0);
        let p = store.add("weight_p", Tensor::scalar(1e-6)).unwrap();
        let err = finite_diff_check(
            &mut store,
            |tape, store| {
                let v = tape.param(store, p);
                let one = tape.input(Tensor::scalar(1.0));
                let inv = tape.div(one, v)?;
                let x = tape.input(Tensor::scalar(if store.value(p).item() < 1e-6 { f64::NAN } else { 1.0 }));
                let y = tape.mul(inv, x)?;
                Ok(tape.sum(y))
            },
            1e-7,
            1e-5,
        )
        .unwrap_err();
        assert!(err.to_string().contains("weight_p"), "{err}");
    }

    #[test]
    fn many_matches_single() {
        let mut store = ParamStore::<f64>::new(3);
        let p = store.add_uniform("p", &[3], 3).unwrap();
        let f = |tape: &mut Tape<f64>, store: &mut ParamStore<f64>, which: usize| {
            let v = tape.param(store, p);
            let t = tape.tanh(v);
            let y = if which == 0 { tape.mul(t, v).unwrap() } else { tape.sigmoid(v) };
            tape.sum(y)
        };
        let both = finite_diff_check_many(&mut store, |tape, store| Ok(vec![f(tape, store, 0), f(tape, store, 1)]), 1e-6, 1e-6)
            .unwrap();
        for (which, many) in both.iter().enumerate() {
            let one = finite_diff_check(&mut store, |tape, store| Ok(f(tape, store, which)), 1e-6, 1e-6).unwrap();
            assert!(many.passed);
            assert_eq!(many.max_rel_err, one.max_rel_err);
        }
    }
}
