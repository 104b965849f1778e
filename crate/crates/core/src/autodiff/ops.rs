//! Tape-free forward kernels. The tape records these and adds the
//! matching gradient rules.

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

fn require_matrix(op: &'static str, t: &Tensor) -> Result<()> {
    if t.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            op,
            left: t.shape().to_vec(),
            right: vec![],
        });
    }
    Ok(())
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_matrix("matmul", a)?;
    require_matrix("matmul", b)?;
    if a.cols() != b.rows() {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(m, n);
    gemm(m, k, n, 1.0, a.data(), false, b.data(), false, 0.0, out.data_mut());
    Ok(out)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    require_matrix("softmax_rows", logits)?;
    if !logits.all_finite() {
        return Err(Error::NonFinite { op: "softmax_rows" });
    }
    let mut out = logits.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    let inv = 1.0 / total;
    row.iter_mut().for_each(|x| *x *= inv);
}

/// `log Σ exp(row)`, stabilized by the row maximum.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = row.iter().map(|&x| (x - max).exp()).sum();
    max + total.ln()
}

fn check_targets(logits: &Tensor, targets: &[usize]) -> Result<()> {
    require_matrix("cross_entropy_from_logits", logits)?;
    if targets.len() != logits.rows() {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy_from_logits",
            left: logits.shape().to_vec(),
            right: vec![targets.len()],
        });
    }
    let classes = logits.cols();
    if let Some((row, &target)) = targets.iter().enumerate().find(|(_, &t)| t >= classes) {
        return Err(Error::TargetOutOfRange { row, target, classes });
    }
    Ok(())
}

/// Per-row negative log-likelihood `lse(row) - row[target]`.
pub fn row_nll(logits: &Tensor, targets: &[usize]) -> Result<Vec<f64>> {
    check_targets(logits, targets)?;
    Ok(targets
        .iter()
        .enumerate()
        .map(|(r, &t)| {
            let row = logits.row(r);
            log_sum_exp(row) - row[t]
        })
        .collect())
}

/// Mean over rows of `-log softmax(logits)[target]`.
pub fn cross_entropy_from_logits(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    let nll = row_nll(logits, targets)?;
    Ok(nll.iter().sum::<f64>() / nll.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_times_matrix() {
        let a = Tensor::from_rows(&[[1.5, -2.0], [0.25, 7.0]]);
        let out = matmul(&Tensor::identity(2), &a).unwrap();
        assert!(out.bit_eq(&a));
    }

    #[test]
    fn one_by_one_product() {
        let out = matmul(&Tensor::scalar(2.0), &Tensor::scalar(3.0)).unwrap();
        assert_eq!(out.item(), 6.0);
    }

    #[test]
    fn matmul_reports_both_shapes() {
        let a = Tensor::zeros(2, 3);
        match matmul(&a, &a) {
            Err(Error::ShapeMismatch { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn softmax_closed_forms() {
        let p = softmax_rows(&Tensor::from_rows(&[[0.0, 0.0, 0.0]])).unwrap();
        for &v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax_rows(&Tensor::from_rows(&[[2f64.ln(), 0.0]])).unwrap();
        assert!((p.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let x = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = x.iter().map(|v| v + 700.0).collect();
        let a = softmax_rows(&Tensor::from_rows(&[x])).unwrap();
        let b = softmax_rows(&Tensor::from_rows(&[shifted])).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let t = Tensor::from_rows(&[[0.0, f64::NAN]]);
        assert!(matches!(softmax_rows(&t), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let perfect = Tensor::from_rows(&[[1e4, 0.0, 0.0]]);
        assert!(cross_entropy_from_logits(&perfect, &[0]).unwrap().abs() < 1e-6);

        let n = 7;
        let uniform = Tensor::zeros(3, n);
        let ce = cross_entropy_from_logits(&uniform, &[0, 3, 6]).unwrap();
        assert!((ce - (n as f64).ln()).abs() < 1e-12);

        let half = Tensor::from_rows(&[[0.0, 0.0]]);
        let ce = cross_entropy_from_logits(&half, &[1]).unwrap();
        assert!((ce - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_reports_bad_row() {
        let logits = Tensor::zeros(3, 4);
        match cross_entropy_from_logits(&logits, &[0, 1, 4]) {
            Err(Error::TargetOutOfRange { row, target, .. }) => {
                assert_eq!((row, target), (2, 4));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
