//! Maximal inscribed circles along vertical stations.

use super::validity::crossing_pairs;
use super::{CsRep, Point2, Profile, R_EPS};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractOptions {
    /// Golden-section iterations per station.
    pub golden_iters: usize,
    /// Stations are dropped from the nose while the radius grows faster
    /// than this slope (the circle is still pinned by the nose itself).
    pub nose_slope: f64,
    /// Radius assigned to the trailing anchor.
    pub r_eps: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            golden_iters: 60,
            nose_slope: 0.9,
            r_eps: R_EPS,
        }
    }
}

/// Edge buckets over x for distance queries.
struct EdgeIndex {
    edges: Vec<(Point2, Point2)>,
    x0: f64,
    width: f64,
    buckets: Vec<Vec<usize>>,
}

impl EdgeIndex {
    fn new(profile: &Profile, width: f64) -> Self {
        let edges: Vec<_> = profile.edges().filter(|(a, b)| a != b).collect();
        let (x0, x1) = profile.x_range();
        let nb = (((x1 - x0) / width).floor() as usize + 1).max(1);
        let mut buckets = vec![Vec::new(); nb];
        for (k, (a, b)) in edges.iter().enumerate() {
            let lo = ((a.x.min(b.x) - x0) / width).floor().max(0.0) as usize;
            let hi = (((a.x.max(b.x) - x0) / width).floor() as usize).min(nb - 1);
            for bucket in &mut buckets[lo.min(nb - 1)..=hi] {
                bucket.push(k);
            }
        }
        Self {
            edges,
            x0,
            width,
            buckets,
        }
    }

    /// Distance from `p` to the boundary, given that it is at most `bound`.
    fn distance(&self, p: Point2, bound: f64) -> f64 {
        let nb = self.buckets.len();
        let lo = ((p.x - bound - self.x0) / self.width).floor().max(0.0) as usize;
        let hi = ((p.x + bound - self.x0) / self.width).floor();
        let hi = if hi < 0.0 { 0 } else { (hi as usize).min(nb - 1) };
        let mut best2 = bound * bound;
        for bucket in &self.buckets[lo.min(nb - 1)..=hi] {
            for &k in bucket {
                let (a, b) = self.edges[k];
                best2 = best2.min(point_segment_dist2(p, a, b));
            }
        }
        best2.sqrt()
    }
}

pub(crate) fn point_segment_dist2(p: Point2, a: Point2, b: Point2) -> f64 {
    let (ex, ey) = (b.x - a.x, b.y - a.y);
    let len2 = ex * ex + ey * ey;
    let t = if len2 > 0.0 {
        (((p.x - a.x) * ex + (p.y - a.y) * ey) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.dist2(Point2::new(a.x + t * ex, a.y + t * ey))
}

/// Sorted y values where the vertical line at `x` crosses the boundary.
fn crossings(profile: &Profile, x: f64) -> Vec<f64> {
    let mut ys: Vec<f64> = profile
        .edges()
        .filter_map(|(a, b)| {
            let (lo, hi) = if a.x <= b.x { (a, b) } else { (b, a) };
            if lo.x <= x && x < hi.x {
                let t = (x - lo.x) / (hi.x - lo.x);
                Some(lo.y + t * (hi.y - lo.y))
            } else {
                None
            }
        })
        .collect();
    ys.sort_by(f64::total_cmp);
    ys
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

impl ExtractOptions {
    pub fn extract(&self, profile: &Profile, delta_x: f64) -> Result<CsRep> {
        if !(delta_x > 0.0 && delta_x.is_finite()) {
            return Err(Error::domain("station spacing must be positive"));
        }
        if let Some(&(i, j)) = crossing_pairs(&profile.points, 1).first() {
            return Err(Error::domain(format!(
                "profile is not simple: edges {i} and {j} intersect"
            )));
        }
        let (x_min, x_max) = profile.x_range();
        let tail = profile
            .points
            .iter()
            .copied()
            .max_by(|a, b| a.x.total_cmp(&b.x))
            .expect("profile has points");
        let n_grid = ((x_max - x_min) / delta_x).round() as usize;
        if n_grid < CsRep::MIN_LEN {
            return Err(Error::domain(format!("spacing {delta_x} gives only {n_grid} stations")));
        }
        let index = EdgeIndex::new(profile, delta_x);
        let mut ys = Vec::with_capacity(n_grid + 1);
        let mut rs = Vec::with_capacity(n_grid + 1);
        let mut prev_y: Option<f64> = None;
        for i in 1..n_grid {
            let x = x_min + i as f64 * delta_x;
            let cross = crossings(profile, x);
            let intervals: Vec<(f64, f64)> = cross.chunks_exact(2).map(|c| (c[0], c[1])).collect();
            let pick = match prev_y {
                Some(py) => intervals.iter().copied().find(|&(lo, hi)| lo <= py && py <= hi),
                None => None,
            }
            .or_else(|| {
                intervals
                    .iter()
                    .copied()
                    .max_by(|a, b| (a.1 - a.0).total_cmp(&(b.1 - b.0)))
            });
            let Some((lo, hi)) = pick.filter(|(lo, hi)| hi > lo) else {
                return Err(Error::Extraction {
                    x,
                    reason: "no interior interval on the vertical line".into(),
                });
            };
            let dist = |y: f64| index.distance(Point2::new(x, y), (y - lo).min(hi - y));
            let y = golden_max(dist, lo, hi, self.golden_iters);
            ys.push(y);
            rs.push(dist(y));
            prev_y = Some(y);
        }
        // Drop stations whose circle is still pinned by the nose.
        let start = (0..rs.len().saturating_sub(1))
            .find(|&i| (rs[i + 1] - rs[i]) / delta_x < self.nose_slope)
            .unwrap_or(0);
        let x0 = x_min + (start + 1) as f64 * delta_x;
        let mut spine_y = ys.split_off(start);
        let mut radii = rs.split_off(start);
        spine_y.push(tail.y);
        radii.push(self.r_eps);
        CsRep::new(x0, delta_x, spine_y, radii)
    }
}

/// Cs-rep of a simple closed profile with stations spaced `delta_x` apart.
pub fn extract_csrep(profile: &Profile, delta_x: f64) -> Result<CsRep> {
    ExtractOptions::default().extract(profile, delta_x)
}
