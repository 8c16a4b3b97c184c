//! Point-set distances and distribution metrics over generated shapes.

use rayon::prelude::*;

use crate::aero::{classify, AeroLabel, ClassGrid, PerformanceClass};
use crate::geometry::{Point2, Profile};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub points: Vec<Point2>,
}

impl PointSet {
    pub fn new(points: Vec<Point2>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::domain("point set is empty"));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl From<&Profile> for PointSet {
    fn from(p: &Profile) -> Self {
        Self {
            points: p.points.clone(),
        }
    }
}

/// Uniform bucket grid for exact nearest-neighbour distances.
struct Grid<'a> {
    pts: &'a [Point2],
    x0: f64,
    y0: f64,
    cell: f64,
    nx: usize,
    ny: usize,
    start: Vec<usize>,
    items: Vec<usize>,
}

impl<'a> Grid<'a> {
    /// Grid over `bounds` (which must contain every query point).
    fn new(pts: &'a [Point2], bounds: (f64, f64, f64, f64)) -> Self {
        let (x0, y0, x1, y1) = bounds;
        let side = (pts.len() as f64).sqrt().ceil().max(1.0);
        let extent = (x1 - x0).max(y1 - y0);
        let cell = if extent > 0.0 { extent / side } else { 1.0 };
        let nx = (((x1 - x0) / cell).floor() as usize + 1).max(1);
        let ny = (((y1 - y0) / cell).floor() as usize + 1).max(1);
        let mut counts = vec![0usize; nx * ny + 1];
        let key = |p: &Point2| {
            let i = (((p.x - x0) / cell).floor() as usize).min(nx - 1);
            let j = (((p.y - y0) / cell).floor() as usize).min(ny - 1);
            j * nx + i
        };
        for p in pts {
            counts[key(p) + 1] += 1;
        }
        for k in 1..counts.len() {
            counts[k] += counts[k - 1];
        }
        let mut fill = counts.clone();
        let mut items = vec![0; pts.len()];
        for (idx, p) in pts.iter().enumerate() {
            let k = key(p);
            items[fill[k]] = idx;
            fill[k] += 1;
        }
        Self {
            pts,
            x0,
            y0,
            cell,
            nx,
            ny,
            start: counts,
            items,
        }
    }

    /// Squared distance to the nearest point, identical to a linear scan.
    fn nearest2(&self, p: Point2) -> f64 {
        let fx = (p.x - self.x0) / self.cell;
        let fy = (p.y - self.y0) / self.cell;
        let ci = (fx.floor().max(0.0) as usize).min(self.nx - 1) as isize;
        let cj = (fy.floor().max(0.0) as usize).min(self.ny - 1) as isize;
        let mut best = f64::INFINITY;
        let (nx, ny) = (self.nx as isize, self.ny as isize);
        let mut k: isize = 0;
        loop {
            for j in (cj - k)..=(cj + k) {
                if j < 0 || j >= ny {
                    continue;
                }
                let on_edge_row = j == cj - k || j == cj + k;
                let mut i = ci - k;
                while i <= ci + k {
                    if i >= 0 && i < nx {
                        let c = (j * nx + i) as usize;
                        for &idx in &self.items[self.start[c]..self.start[c + 1]] {
                            best = best.min(p.dist2(self.pts[idx]));
                        }
                    }
                    i += if on_edge_row || k == 0 { 1 } else { 2 * k };
                }
            }
            let covers = ci - k <= 0 && cj - k <= 0 && ci + k >= nx - 1 && cj + k >= ny - 1;
            if covers {
                return best;
            }
            // Cells outside the visited block lie at least this far away.
            let mut bound = f64::INFINITY;
            if ci - k > 0 {
                bound = bound.min(p.x - (self.x0 + (ci - k) as f64 * self.cell));
            }
            if ci + k < nx - 1 {
                bound = bound.min(self.x0 + (ci + k + 1) as f64 * self.cell - p.x);
            }
            if cj - k > 0 {
                bound = bound.min(p.y - (self.y0 + (cj - k) as f64 * self.cell));
            }
            if cj + k < ny - 1 {
                bound = bound.min(self.y0 + (cj + k + 1) as f64 * self.cell - p.y);
            }
            let bound = bound.max(0.0);
            if best < bound * bound * (1.0 - 1e-12) {
                return best;
            }
            k += 1;
        }
    }
}

fn bounds(a: &[Point2], b: &[Point2]) -> (f64, f64, f64, f64) {
    a.iter().chain(b).fold(
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        |(x0, y0, x1, y1), p| (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y)),
    )
}

fn check_pair(p: &PointSet, q: &PointSet) -> Result<()> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::domain("point set is empty"));
    }
    Ok(())
}

/// Nearest distances from each point of `from` to `to`, in order.
fn nearest_all(from: &[Point2], to: &[Point2], grid_bounds: (f64, f64, f64, f64)) -> Vec<f64> {
    let grid = Grid::new(to, grid_bounds);
    from.iter().map(|&p| grid.nearest2(p).sqrt()).collect()
}

fn directed(p: &PointSet, q: &PointSet) -> (Vec<f64>, Vec<f64>) {
    let b = bounds(&p.points, &q.points);
    (
        nearest_all(&p.points, &q.points, b),
        nearest_all(&q.points, &p.points, b),
    )
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// Symmetric mean nearest-neighbour distance.
pub fn chamfer(p: &PointSet, q: &PointSet) -> Result<f64> {
    check_pair(p, q)?;
    let (pq, qp) = directed(p, q);
    Ok(0.5 * (mean(&pq) + mean(&qp)))
}

pub fn hausdorff(p: &PointSet, q: &PointSet) -> Result<f64> {
    check_pair(p, q)?;
    let (pq, qp) = directed(p, q);
    Ok(max(&pq).max(max(&qp)))
}

/// Mean over generated shapes of the Hausdorff distance to the closest
/// dataset shape.
pub fn fidelity(generated: &[PointSet], dataset: &[PointSet]) -> Result<f64> {
    if generated.is_empty() || dataset.is_empty() {
        return Err(Error::domain("fidelity needs non-empty generated and dataset lists"));
    }
    let per: Vec<f64> = generated
        .par_iter()
        .map(|g| {
            dataset
                .iter()
                .try_fold(f64::INFINITY, |best, d| Ok::<_, Error>(best.min(hausdorff(g, d)?)))
        })
        .collect::<Result<_>>()?;
    Ok(mean(&per))
}

/// Mean Hausdorff distance over unordered pairs of generated shapes.
pub fn diversity(generated: &[PointSet]) -> Result<f64> {
    let n = generated.len();
    if n < 2 {
        return Err(Error::domain("diversity needs at least two samples"));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let vals: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| hausdorff(&generated[i], &generated[j]))
        .collect::<Result<_>>()?;
    Ok(mean(&vals))
}

/// Fraction of labels that classify into `target`.
pub fn conditional_accuracy(labels: &[AeroLabel], target: PerformanceClass, grid: &ClassGrid) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = labels.iter().filter(|&&l| classify(l, grid) == target).count();
    hits as f64 / labels.len() as f64
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ps(v: &[(f64, f64)]) -> PointSet {
        PointSet::new(v.iter().map(|&(x, y)| Point2::new(x, y)).collect()).unwrap()
    }

    #[test]
    fn small_examples() {
        let a = ps(&[(0.0, 0.0)]);
        let b = ps(&[(1.0, 0.0)]);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert_eq!(chamfer(&a, &b).unwrap(), 1.0);
        assert_eq!(chamfer(&ps(&[(0.0, 0.0), (2.0, 0.0)]), &b).unwrap(), 1.0);
        assert_eq!(hausdorff(&ps(&[(0.0, 0.0), (2.0, 0.0)]), &a).unwrap(), 2.0);
        assert!(PointSet::new(vec![]).is_err());
    }

    #[test]
    fn fidelity_and_diversity_examples() {
        let a = ps(&[(0.0, 0.0), (1.0, 0.0)]);
        let b = ps(&[(0.0, 1.0), (1.0, 1.0)]);
        assert_eq!(
            fidelity(std::slice::from_ref(&a), &[a.clone(), b.clone()]).unwrap(),
            0.0
        );
        assert_eq!(
            fidelity(std::slice::from_ref(&a), std::slice::from_ref(&b)).unwrap(),
            1.0
        );
        assert_eq!(diversity(&[a.clone(), a.clone()]).unwrap(), 0.0);
        assert_eq!(diversity(&[a.clone(), b.clone()]).unwrap(), 1.0);
        assert!(diversity(&[a]).is_err());
    }

    #[test]
    fn accuracy_extremes() {
        let g = ClassGrid::new(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 2.0]).unwrap();
        let l = vec![AeroLabel { cl: 0.5, cd: 0.5 }; 4];
        assert_eq!(conditional_accuracy(&l, PerformanceClass::Id(0), &g), 1.0);
        assert_eq!(conditional_accuracy(&l, PerformanceClass::Id(3), &g), 0.0);
    }

    fn cloud() -> impl Strategy<Value = Vec<Point2>> {
        prop::collection::vec((-2.0f64..2.0, -1.0f64..1.0), 1..50)
            .prop_map(|v| v.into_iter().map(|(x, y)| Point2::new(x, y)).collect())
    }

    proptest! {
        #[test]
        fn matches_brute_force_exactly(p in cloud(), q in cloud()) {
            let (a, b) = (PointSet::new(p.clone()).unwrap(), PointSet::new(q.clone()).unwrap());
            prop_assert_eq!(chamfer(&a, &b).unwrap(), oracle::chamfer(&p, &q));
            prop_assert_eq!(hausdorff(&a, &b).unwrap(), oracle::hausdorff(&p, &q));
        }

        #[test]
        fn symmetric_and_scale_equivariant(p in cloud(), q in cloud()) {
            let (a, b) = (PointSet::new(p.clone()).unwrap(), PointSet::new(q.clone()).unwrap());
            let c = chamfer(&a, &b).unwrap();
            let h = hausdorff(&a, &b).unwrap();
            prop_assert!((c - chamfer(&b, &a).unwrap()).abs() <= 1e-15 * (1.0 + c));
            prop_assert_eq!(h, hausdorff(&b, &a).unwrap());
            prop_assert!(c >= 0.0 && h >= c);
            let s = 4.0;
            let sa = PointSet::new(p.iter().map(|x| x.scale(s)).collect()).unwrap();
            let sb = PointSet::new(q.iter().map(|x| x.scale(s)).collect()).unwrap();
            prop_assert!((chamfer(&sa, &sb).unwrap() - s * c).abs() <= 1e-12 * (1.0 + c));
            prop_assert!((hausdorff(&sa, &sb).unwrap() - s * h).abs() <= 1e-12 * (1.0 + h));
        }
    }
}
