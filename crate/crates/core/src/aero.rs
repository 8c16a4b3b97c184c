//! Surrogate aerodynamics: thin-airfoil lift and form-factor drag at zero
//! incidence, and the performance-class grid built from labelled data.

use serde::{Deserialize, Serialize};

use crate::geometry::CsRep;
use crate::{Error, Result};

/// Default Reynolds number for labelling.
pub const REYNOLDS: f64 = 2e6;
/// Midpoint nodes in θ for the zero-lift-angle integral.
pub const QUAD_NODES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AeroLabel {
    pub cl: f64,
    pub cd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PerformanceClass {
    /// Unconditional model.
    Null,
    Id(usize),
}

impl PerformanceClass {
    pub fn class_id(self) -> Option<usize> {
        match self {
            PerformanceClass::Null => None,
            PerformanceClass::Id(k) => Some(k),
        }
    }

    /// Row in a class-embedding table; row 0 is the null class.
    pub fn embedding_row(self) -> usize {
        match self {
            PerformanceClass::Null => 0,
            PerformanceClass::Id(k) => k + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGrid {
    pub cl_edges: Vec<f64>,
    pub cd_edges: Vec<f64>,
}

fn check_edges(edges: &[f64], what: &str) -> Result<()> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::domain(format!("{what} edges must be strictly ascending")));
    }
    Ok(())
}

fn bin_of(v: f64, edges: &[f64]) -> usize {
    let bins = edges.len() - 1;
    // Half-open bins, last bin closed, out-of-range clamps.
    edges[1..bins].iter().take_while(|&&e| v >= e).count()
}

impl ClassGrid {
    pub fn new(cl_edges: Vec<f64>, cd_edges: Vec<f64>) -> Result<Self> {
        check_edges(&cl_edges, "cl")?;
        check_edges(&cd_edges, "cd")?;
        if cl_edges.len() != cd_edges.len() {
            return Err(Error::shape("cl and cd grids need the same bin count"));
        }
        Ok(Self { cl_edges, cd_edges })
    }

    pub fn bins(&self) -> usize {
        self.cl_edges.len() - 1
    }

    pub fn num_classes(&self) -> usize {
        self.bins() * self.bins()
    }

    /// `(cl_bin, cd_bin)` of a class id.
    pub fn cell(&self, class_id: usize) -> (usize, usize) {
        (class_id / self.bins(), class_id % self.bins())
    }

    /// Centre of a cell in (cl, cd).
    pub fn cell_center(&self, class_id: usize) -> AeroLabel {
        let (i, j) = self.cell(class_id);
        AeroLabel {
            cl: 0.5 * (self.cl_edges[i] + self.cl_edges[i + 1]),
            cd: 0.5 * (self.cd_edges[j] + self.cd_edges[j + 1]),
        }
    }
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Zero-incidence lift and drag of a cs-rep; the spine is the camber line
/// and twice the largest radius is the thickness ratio.
pub fn eval_surrogate(rep: &CsRep, reynolds: f64) -> Result<AeroLabel> {
    rep.check_shape()?;
    let n = rep.len();
    if rep.radii[..n - 1].iter().any(|&r| r <= 0.0) {
        return Err(Error::domain("radii must be positive before the tail"));
    }
    if !(reynolds > 0.0) {
        return Err(Error::domain("reynolds number must be positive"));
    }
    let slopes: Vec<f64> = rep.spine_y.windows(2).map(|w| (w[1] - w[0]) / rep.delta_x).collect();
    let span = (n - 1) as f64;
    let h = std::f64::consts::PI / QUAD_NODES as f64;
    let mut integral = 0.0;
    for k in 0..QUAD_NODES {
        let theta = (k as f64 + 0.5) * h;
        let s = 0.5 * (1.0 - theta.cos()) * span;
        let j = (s.floor() as usize).min(n - 2);
        integral += slopes[j] * (theta.cos() - 1.0);
    }
    let alpha_l0 = -integral * h / std::f64::consts::PI;
    let cl = -2.0 * std::f64::consts::PI * alpha_l0;
    let t = 2.0 * rep.max_radius();
    let cf = 0.074 * reynolds.powf(-0.2);
    let cd = 2.0 * cf * (1.0 + 2.0 * t + 60.0 * t.powi(4));
    Ok(AeroLabel { cl, cd })
}

/// Equal-width bins between the 1st and 99th percentiles of each coefficient.
pub fn build_grid(labels: &[AeroLabel], bins: usize) -> Result<ClassGrid> {
    if bins < 1 {
        return Err(Error::domain("need at least one bin"));
    }
    if labels.len() < bins * bins {
        return Err(Error::domain(format!(
            "need at least {} labels for a {bins}x{bins} grid, got {}",
            bins * bins,
            labels.len()
        )));
    }
    let edges = |vals: Vec<f64>, what: &str| -> Result<Vec<f64>> {
        let mut v = vals;
        v.sort_by(f64::total_cmp);
        let lo = percentile(&v, 0.01);
        let hi = percentile(&v, 0.99);
        if !(hi > lo) {
            return Err(Error::domain(format!("degenerate {what} range [{lo}, {hi}]")));
        }
        let mut e: Vec<f64> = (0..bins).map(|k| lo + (hi - lo) * k as f64 / bins as f64).collect();
        e.push(hi);
        Ok(e)
    };
    ClassGrid::new(
        edges(labels.iter().map(|l| l.cl).collect(), "cl")?,
        edges(labels.iter().map(|l| l.cd).collect(), "cd")?,
    )
}

pub fn classify(label: AeroLabel, grid: &ClassGrid) -> PerformanceClass {
    let i = bin_of(label.cl, &grid.cl_edges);
    let j = bin_of(label.cd, &grid.cd_edges);
    PerformanceClass::Id(grid.bins() * i + j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Naca4;
    use proptest::prelude::*;

    fn rep_from(f: impl Fn(f64) -> f64, n: usize, t: f64) -> CsRep {
        let dx = 1.0 / (n - 1) as f64;
        let y: Vec<f64> = (0..n).map(|i| f(i as f64 * dx)).collect();
        let mut r = vec![t / 2.0; n];
        r[n - 1] = 1e-4;
        CsRep::new(0.0, dx, y, r).unwrap()
    }

    #[test]
    fn flat_spine_has_zero_lift() {
        let rep = rep_from(|_| 0.0, 64, 0.12);
        assert_eq!(eval_surrogate(&rep, REYNOLDS).unwrap().cl, 0.0);
    }

    #[test]
    fn naca2412_lift_matches_fine_trapezoid() {
        let naca = Naca4::new(0.02, 0.4, 0.12).unwrap();
        let rep = rep_from(|x| naca.camber(x).0, 1001, 0.12);
        let cl = eval_surrogate(&rep, REYNOLDS).unwrap().cl;
        // 10,000-interval trapezoid on the exact camber slope.
        let m = 10_000;
        let h = std::f64::consts::PI / m as f64;
        let g = |th: f64| naca.camber(0.5 * (1.0 - th.cos())).1 * (th.cos() - 1.0);
        let mut s = 0.5 * (g(0.0) + g(std::f64::consts::PI));
        for k in 1..m {
            s += g(k as f64 * h);
        }
        let oracle = 2.0 * s * h;
        assert!((cl - oracle).abs() <= 1e-4, "{cl} vs {oracle}");
    }

    #[test]
    fn drag_formula() {
        let rep = rep_from(|_| 0.0, 16, 0.12);
        let cd = eval_surrogate(&rep, 2e6).unwrap().cd;
        let t: f64 = 0.12;
        let expect = 2.0 * 0.074 * 2e6f64.powf(-0.2) * (1.0 + 0.24 + 60.0 * t.powi(4));
        assert!((cd - expect).abs() < 1e-15);
    }

    #[test]
    fn grid_on_uniform_labels() {
        let labels: Vec<AeroLabel> = (0..=1000)
            .map(|k| AeroLabel {
                cl: k as f64 / 1000.0,
                cd: 0.01 + k as f64 / 1e5,
            })
            .collect();
        let g = build_grid(&labels, 5).unwrap();
        let expect = [0.01, 0.206, 0.402, 0.598, 0.794, 0.99];
        for (e, x) in g.cl_edges.iter().zip(expect) {
            assert!((e - x).abs() < 1e-12);
        }
        for l in &labels {
            assert!(classify(*l, &g).class_id().unwrap() < 25);
        }
    }

    #[test]
    fn outlier_does_not_move_edges() {
        let mut labels: Vec<AeroLabel> = (0..200)
            .map(|k| AeroLabel {
                cl: k as f64 / 199.0,
                cd: 0.01 + k as f64 * 1e-5,
            })
            .collect();
        let before = build_grid(&labels, 5).unwrap();
        labels[199].cl = 100.0;
        let after = build_grid(&labels, 5).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn classify_edges_and_clamping() {
        let g = ClassGrid::new(vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0], vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        assert_eq!(classify(AeroLabel { cl: 0.0, cd: 0.0 }, &g), PerformanceClass::Id(0));
        assert_eq!(classify(AeroLabel { cl: 0.2, cd: 0.0 }, &g), PerformanceClass::Id(5));
        assert_eq!(classify(AeroLabel { cl: 1.0, cd: 0.5 }, &g), PerformanceClass::Id(24));
        assert_eq!(classify(AeroLabel { cl: 9.0, cd: 9.0 }, &g), PerformanceClass::Id(24));
        assert_eq!(classify(AeroLabel { cl: -9.0, cd: 0.15 }, &g), PerformanceClass::Id(1));
    }

    #[test]
    fn degenerate_range_rejected() {
        let labels = vec![AeroLabel { cl: 0.3, cd: 0.01 }; 30];
        assert!(build_grid(&labels, 5).is_err());
    }

    proptest! {
        #[test]
        fn lift_shift_invariant_and_odd(c in -0.05f64..0.05, m in 0.0f64..0.08, shift in -1.0f64..1.0) {
            let a = rep_from(|x| m * x * (1.0 - x) + c * x * x, 40, 0.1);
            let mut b = a.clone();
            b.spine_y.iter_mut().for_each(|y| *y += shift);
            let mut neg = a.clone();
            neg.spine_y.iter_mut().for_each(|y| *y = -*y);
            let la = eval_surrogate(&a, REYNOLDS).unwrap().cl;
            let lb = eval_surrogate(&b, REYNOLDS).unwrap().cl;
            let ln = eval_surrogate(&neg, REYNOLDS).unwrap().cl;
            prop_assert!((la - lb).abs() < 1e-12);
            prop_assert_eq!(la, -ln);
        }

        #[test]
        fn drag_increases_with_thickness(t1 in 0.01f64..0.3, dt in 1e-4f64..0.1) {
            let a = eval_surrogate(&rep_from(|_| 0.0, 16, t1), REYNOLDS).unwrap().cd;
            let b = eval_surrogate(&rep_from(|_| 0.0, 16, t1 + dt), REYNOLDS).unwrap().cd;
            prop_assert!(b > a);
        }
    }
}
