//! Central finite differences, used as the reference for `Tape::backward`.

use super::tape::{Gradients, ParamId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Anything exposing an ordered list of trainable tensors. The position in
/// the list is the tensor's [`ParamId`].
pub trait Parameterized {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;
}

impl Parameterized for Vec<Tensor> {
    fn tensors(&self) -> Vec<&Tensor> {
        self.iter().collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.iter_mut().collect()
    }
}

/// `(f(p + eps) - f(p - eps)) / (2 eps)` for every coordinate of every
/// parameter. `params` is restored bit-exactly after each probe.
pub fn finite_difference_gradients<P, F>(mut loss_fn: F, params: &mut P, eps: f64) -> Result<Gradients>
where
    P: Parameterized,
    F: FnMut(&P) -> Result<f64>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidTensor(format!("eps must be positive, got {eps}")));
    }
    let first = loss_fn(params)?;
    let second = loss_fn(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let count = params.tensors().len();
    let mut out = Gradients::default();
    for pi in 0..count {
        let (rows, cols, numel) = {
            let t = params.tensors()[pi];
            (t.rows(), t.cols(), t.numel())
        };
        let mut grad = Tensor::zeros(rows, cols);
        for i in 0..numel {
            let orig = params.tensors()[pi].data()[i];
            params.tensors_mut()[pi].data_mut()[i] = orig + eps;
            let plus = loss_fn(params)?;
            params.tensors_mut()[pi].data_mut()[i] = orig - eps;
            let minus = loss_fn(params)?;
            params.tensors_mut()[pi].data_mut()[i] = orig;
            grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
        }
        out.insert(ParamId(pi), grad);
    }
    Ok(out)
}

/// Largest `|a - n| / max(1e-8, |a| + |n|)` over all coordinates present in
/// both gradient sets, together with where it occurred.
pub fn max_relative_error(analytic: &Gradients, numeric: &Gradients) -> (f64, Option<(ParamId, usize)>) {
    let mut worst = (0.0, None);
    for (id, n) in numeric.iter() {
        let Some(a) = analytic.get(id) else {
            return (f64::INFINITY, Some((id, 0)));
        };
        for (i, (&x, &y)) in a.data().iter().zip(n.data()).enumerate() {
            let rel = (x - y).abs() / (x.abs() + y.abs()).max(1e-8);
            if rel > worst.0 || rel.is_nan() {
                worst = (rel, Some((id, i)));
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn square_at_three() {
        let mut p = vec![Tensor::scalar(3.0)];
        let g = finite_difference_gradients(|p: &Vec<Tensor>| Ok(p[0].item().powi(2)), &mut p, 1e-3).unwrap();
        assert!((g.get(ParamId(0)).unwrap().item() - 6.0).abs() < 1e-6);
        assert_eq!(p[0].item(), 3.0);
    }

    #[test]
    fn constant_gives_zeros() {
        let mut p = vec![Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]])];
        let g = finite_difference_gradients(|_: &Vec<Tensor>| Ok(5.0), &mut p, 1e-3).unwrap();
        assert!(g.get(ParamId(0)).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn detects_non_determinism() {
        let calls = Cell::new(0.0);
        let mut p = vec![Tensor::scalar(1.0)];
        let r = finite_difference_gradients(
            |_: &Vec<Tensor>| {
                calls.set(calls.get() + 1.0);
                Ok(calls.get())
            },
            &mut p,
            1e-3,
        );
        assert!(matches!(r, Err(Error::NonDeterministic { .. })));
    }
}
