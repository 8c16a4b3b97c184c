use serde::{Deserialize, Serialize};

use crate::nn::{softmax_xent, Activation, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Meta cross-entropy.
    pub lambda1: f64,
    /// Token mean squared error.
    pub lambda2: f64,
    /// Sweep-feasibility penalty.
    pub lambda3: f64,
    pub leaky_slope: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1e-3,
            lambda2: 1.0,
            lambda3: 1e-6,
            leaky_slope: 0.01,
        }
    }
}

/// Per-sample loss terms and their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerms {
    pub ce: f64,
    pub mse: f64,
    pub auxi: f64,
    pub recon: f64,
    pub d_logits: Matrix,
    pub g_y: Vec<f64>,
    pub g_r: Vec<f64>,
}

/// `L_recon = l1 * CE(meta) + l2 * MSE(tokens)` and
/// `L_auxi = l3 * sum_i LeakyReLU(dr^2 - dx^2 - dy^2)`.
///
/// `logits` has one row per meta entry; token slices are the decoded and
/// target spine heights and radii.
pub fn loss_total(
    logits: &Matrix,
    bins: &[usize],
    pred: (&[f64], &[f64]),
    target: (&[f64], &[f64]),
    delta_x: f64,
    w: &LossWeights,
) -> Result<LossTerms> {
    let (py, pr) = pred;
    let (ty, tr) = target;
    let n = py.len();
    if pr.len() != n || ty.len() != n || tr.len() != n || n < 2 {
        return Err(Error::shape(format!(
            "token lengths {}/{} vs {}/{}",
            py.len(),
            pr.len(),
            ty.len(),
            tr.len()
        )));
    }
    let (ce, mut d_logits) = softmax_xent(logits, bins)?;
    d_logits.scale(w.lambda1);

    let m = 2.0 * n as f64;
    let mut mse = 0.0;
    let mut g_y = vec![0.0; n];
    let mut g_r = vec![0.0; n];
    for i in 0..n {
        let (ey, er) = (py[i] - ty[i], pr[i] - tr[i]);
        mse += (ey * ey + er * er) / m;
        g_y[i] = w.lambda2 * 2.0 * ey / m;
        g_r[i] = w.lambda2 * 2.0 * er / m;
    }

    let act = Activation::LeakyRelu(w.leaky_slope);
    let mut auxi = 0.0;
    for i in 0..n - 1 {
        let dy = py[i + 1] - py[i];
        let dr = pr[i + 1] - pr[i];
        let s = dr * dr - delta_x * delta_x - dy * dy;
        auxi += act.apply(s);
        let d = w.lambda3 * act.derivative(s);
        g_r[i + 1] += d * 2.0 * dr;
        g_r[i] -= d * 2.0 * dr;
        g_y[i + 1] -= d * 2.0 * dy;
        g_y[i] += d * 2.0 * dy;
    }
    Ok(LossTerms {
        ce,
        mse,
        auxi: w.lambda3 * auxi,
        recon: w.lambda1 * ce + w.lambda2 * mse,
        d_logits,
        g_y,
        g_r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{max_rel_error, numeric_gradient};

    #[test]
    fn paper_weights() {
        let w = LossWeights::default();
        assert_eq!(
            (w.lambda1, w.lambda2, w.lambda3, w.leaky_slope),
            (1e-3, 1.0, 1e-6, 0.01)
        );
    }

    #[test]
    fn perfect_tokens_have_zero_mse_and_negative_penalty() {
        let mut logits = Matrix::zeros(16, 4);
        for k in 0..16 {
            logits[(k, 1)] = 50.0;
        }
        let y = [0.0, 0.01, 0.015, 0.016];
        let r = [0.02, 0.025, 0.027, 0.026];
        let t = loss_total(&logits, &[1; 16], (&y, &r), (&y, &r), 0.01, &LossWeights::default()).unwrap();
        assert_eq!(t.mse, 0.0);
        assert!(t.ce < 1e-15);
        assert!(t.auxi < 0.0);
    }

    #[test]
    fn token_gradients_match_fd() {
        let w = LossWeights {
            lambda3: 0.5,
            ..LossWeights::default()
        };
        let logits = Matrix::zeros(16, 2);
        let ty = [0.0, 0.1, 0.15, 0.1];
        let tr = [0.1, 0.2, 0.3, 0.1];
        // Steep radius steps make the penalty active on some pairs.
        let x0 = [0.02, 0.08, 0.2, 0.12, 0.05, 0.3, 0.05, 0.1];
        let f = |x: &[f64]| {
            loss_total(&logits, &[0; 16], (&x[..4], &x[4..]), (&ty, &tr), 0.05, &w)
                .map(|t| t.recon + t.auxi)
                .unwrap()
        };
        let t = loss_total(&logits, &[0; 16], (&x0[..4], &x0[4..]), (&ty, &tr), 0.05, &w).unwrap();
        let analytic: Vec<f64> = t.g_y.iter().chain(&t.g_r).copied().collect();
        let num = numeric_gradient(&x0, 1e-7, f);
        assert!(max_rel_error(&analytic, &num) <= 1e-4);
    }
}
