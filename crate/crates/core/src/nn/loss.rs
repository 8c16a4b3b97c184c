use super::Matrix;
use crate::{Error, Result};

/// Row-wise softmax.
pub fn softmax(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let r = out.row_mut(i);
        let mx = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in r.iter_mut() {
            *v = (*v - mx).exp();
            s += *v;
        }
        for v in r.iter_mut() {
            *v /= s;
        }
    }
    out
}

/// Mean cross-entropy of row-wise softmax against class indices, and its
/// gradient with respect to the logits.
pub fn softmax_xent(logits: &Matrix, targets: &[usize]) -> Result<(f64, Matrix)> {
    if targets.len() != logits.rows() {
        return Err(Error::shape(format!(
            "{} targets for {} rows",
            targets.len(),
            logits.rows()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= logits.cols()) {
        return Err(Error::shape(format!("target {t} outside {} classes", logits.cols())));
    }
    let mut p = softmax(logits);
    let n = logits.rows().max(1) as f64;
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let r = p.row_mut(i);
        loss -= r[t].max(f64::MIN_POSITIVE).ln();
        r[t] -= 1.0;
        for v in r.iter_mut() {
            *v /= n;
        }
    }
    Ok((loss / n, p))
}

/// Mean squared error over all entries, and its gradient.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    let n = pred.data().len().max(1) as f64;
    let diff = pred.zip_map(target, |a, b| a - b)?;
    let loss = diff.frobenius2() / n;
    Ok((loss, diff.map(|d| 2.0 * d / n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{max_rel_error, numeric_gradient, FD_STEP, REL_TOL};

    #[test]
    fn xent_gradient_matches_fd() {
        let logits = Matrix::from_fn(3, 4, |i, j| ((i * 4 + j) as f64 * 0.7).sin());
        let t = [0, 3, 1];
        let (_, g) = softmax_xent(&logits, &t).unwrap();
        let num = numeric_gradient(logits.data(), FD_STEP, |v| {
            softmax_xent(&Matrix::from_vec(3, 4, v.to_vec()).unwrap(), &t)
                .unwrap()
                .0
        });
        assert!(max_rel_error(g.data(), &num) <= REL_TOL);
    }

    #[test]
    fn xent_of_confident_prediction_vanishes() {
        let mut l = Matrix::zeros(1, 3);
        l[(0, 2)] = 60.0;
        assert!(softmax_xent(&l, &[2]).unwrap().0 < 1e-20);
        assert!(softmax_xent(&l, &[3]).is_err());
    }

    #[test]
    fn mse_gradient_matches_fd() {
        let p = Matrix::from_fn(2, 3, |i, j| (i + 2 * j) as f64 * 0.3);
        let t = Matrix::from_fn(2, 3, |i, j| (i * j) as f64 * 0.1);
        let (l, g) = mse_loss(&p, &t).unwrap();
        assert!(l > 0.0);
        let num = numeric_gradient(p.data(), FD_STEP, |v| {
            mse_loss(&Matrix::from_vec(2, 3, v.to_vec()).unwrap(), &t).unwrap().0
        });
        assert!(max_rel_error(g.data(), &num) <= REL_TOL);
        assert_eq!(mse_loss(&t, &t).unwrap().0, 0.0);
    }
}
