use super::{Graph, ParamStore, Var};
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of `loss_fn` against central finite
/// differences over every scalar in `params`.
///
/// The difference quotient uses the fourth-order central stencil
/// `(8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`, which keeps
/// truncation error small at step sizes large enough to suppress round-off.
///
/// Returns `max |g - g_fd| / max(|g|, |g_fd|, 1e-8)`. The loss is evaluated
/// twice up front; any bitwise difference is reported as a determinism
/// error.
pub fn grad_check<F>(params: &ParamStore, eps: f64, loss_fn: F) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::config(format!("grad_check step {eps} outside (0, 1e-2]")));
    }
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(store);
        let l = loss_fn(&mut g)?;
        Ok(g.value(l).item())
    };

    let first = eval(params)?;
    let second = eval(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Determinism { first, second });
    }

    let analytic = {
        let mut g = Graph::new(params);
        let l = loss_fn(&mut g)?;
        g.backward(l)?
    };

    let mut work = params.clone();
    let mut worst: f64 = 0.0;
    for (id, p) in params.iter() {
        for k in 0..p.value.len() {
            let orig = p.value.data()[k];
            let mut at = |offset: f64| -> Result<f64> {
                work.get_mut(id).value.data_mut()[k] = orig + offset;
                eval(&work)
            };
            let (up2, up, down, down2) = (at(2.0 * eps)?, at(eps)?, at(-eps)?, at(-2.0 * eps)?);
            work.get_mut(id).value.data_mut()[k] = orig;

            let numeric = (8.0 * (up - down) - (up2 - down2)) / (12.0 * eps);
            let exact = analytic.get(id).map_or(0.0, |g| g.data()[k]);
            let denom = exact.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((exact - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use std::cell::Cell;

    #[test]
    fn quadratic() {
        let mut s = ParamStore::new();
        let x = s.add("x", Tensor::scalar(3.0));
        let err = grad_check(&s, 1e-5, |g| {
            let v = g.param(x);
            let sq = g.mul(v, v)?;
            Ok(g.sum(sq))
        })
        .unwrap();
        assert!(err < 1e-8, "{err}");
        let mut gr = Graph::new(&s);
        let v = gr.param(x);
        let sq = gr.mul(v, v).unwrap();
        let l = gr.sum(sq);
        assert_eq!(gr.backward(l).unwrap().get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let mut s = ParamStore::new();
        s.add("x", Tensor::row(vec![1.0, 2.0]));
        let err = grad_check(&s, 1e-5, |g| Ok(g.constant(Tensor::scalar(4.2)))).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn detects_non_determinism() {
        let mut s = ParamStore::new();
        s.add("x", Tensor::scalar(1.0));
        let calls = Cell::new(0.0);
        let res = grad_check(&s, 1e-5, |g| {
            calls.set(calls.get() + 1.0);
            Ok(g.constant(Tensor::scalar(calls.get())))
        });
        assert!(matches!(res, Err(Error::Determinism { .. })));
    }

    #[test]
    fn rejects_bad_step() {
        let s = ParamStore::new();
        assert!(grad_check(&s, 0.1, |g| Ok(g.constant(Tensor::scalar(0.0)))).is_err());
    }
}
