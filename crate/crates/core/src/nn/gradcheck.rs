//! Central finite-difference gradient checks.

use super::{randn, Matrix, Parameterized};
use crate::rng::Rng;
use crate::Result;

pub const FD_STEP: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely.
pub const ABS_FLOOR: f64 = 1e-6;

/// Largest relative error between two gradient vectors.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(ABS_FLOOR))
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `x`.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let fp = f(&p);
            p[i] = orig - h;
            let fm = f(&p);
            p[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Relative errors of a layer's parameter and input gradients under the
/// random linear loss `sum(R * y)`.
pub fn layer_errors<L: Parameterized + Clone>(
    layer: &L,
    rows: usize,
    cols: usize,
    rng: &mut Rng,
    fwd: impl Fn(&L, &Matrix) -> Result<Matrix>,
    bwd: impl Fn(&L, &Matrix, &Matrix, &mut L) -> Result<Matrix>,
) -> (f64, f64) {
    let x = randn(rng, rows, cols, 1.0);
    let y = fwd(layer, &x).expect("forward");
    let r = randn(rng, y.rows(), y.cols(), 1.0);
    let loss = |l: &L, x: &Matrix| -> f64 {
        let y = fwd(l, x).expect("forward");
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };
    let mut grad = layer.zeros_like();
    let dx = bwd(layer, &x, &r, &mut grad).expect("backward");

    let theta = layer.flatten();
    let mut probe = layer.clone();
    let num_p = numeric_gradient(&theta, FD_STEP, |p| {
        probe.load_flat(p).expect("params");
        loss(&probe, &x)
    });
    let num_x = numeric_gradient(x.data(), FD_STEP, |v| {
        let xm = Matrix::from_vec(rows, cols, v.to_vec()).expect("shape");
        loss(layer, &xm)
    });
    (max_rel_error(&grad.flatten(), &num_p), max_rel_error(dx.data(), &num_x))
}

/// Asserts [`layer_errors`] are within [`REL_TOL`].
pub fn check_layer<L: Parameterized + Clone>(
    layer: &L,
    rows: usize,
    cols: usize,
    rng: &mut Rng,
    fwd: impl Fn(&L, &Matrix) -> Result<Matrix>,
    bwd: impl Fn(&L, &Matrix, &Matrix, &mut L) -> Result<Matrix>,
) {
    let (ep, ex) = layer_errors(layer, rows, cols, rng, fwd, bwd);
    assert!(ep <= REL_TOL, "parameter gradient rel err {ep:.3e}");
    assert!(ex <= REL_TOL, "input gradient rel err {ex:.3e}");
}
