//! Boundary resampling with equal spacing between consecutive samples.
//!
//! Samples lie on the input polyline and consecutive samples (including the
//! closing pair) are the same straight-line distance apart. A polygon that
//! already has equal edges is a fixed point, so resampling is idempotent.

use super::{Point2, Profile};
use crate::{Error, Result};

struct Walker<'a> {
    pts: &'a [Point2],
}

impl Walker<'_> {
    fn vertex(&self, i: usize) -> Point2 {
        self.pts[i % self.pts.len()]
    }

    /// Marches `n - 1` chords of length `c` from vertex 0. `None` if the walk
    /// runs past the starting vertex.
    fn march(&self, c: f64, n: usize) -> Option<Vec<Point2>> {
        let nv = self.pts.len();
        let mut out = Vec::with_capacity(n);
        let mut cur = self.pts[0];
        out.push(cur);
        let (mut seg, mut t0) = (0usize, 0.0f64);
        let c2 = c * c;
        while out.len() < n {
            let mut found = None;
            while seg < nv {
                let a = self.vertex(seg);
                let b = self.vertex(seg + 1);
                let d = Point2::new(b.x - a.x, b.y - a.y);
                let f = Point2::new(a.x - cur.x, a.y - cur.y);
                let qa = d.x * d.x + d.y * d.y;
                if qa > 0.0 {
                    let qb = 2.0 * (f.x * d.x + f.y * d.y);
                    let qc = f.x * f.x + f.y * f.y - c2;
                    let disc = qb * qb - 4.0 * qa * qc;
                    if disc >= 0.0 {
                        let tau = (-qb + disc.sqrt()) / (2.0 * qa);
                        if tau >= t0 && tau <= 1.0 {
                            found = Some((seg, tau, Point2::new(a.x + tau * d.x, a.y + tau * d.y)));
                            break;
                        }
                    }
                }
                seg += 1;
                t0 = 0.0;
            }
            let (s, tau, p) = found?;
            seg = s;
            t0 = tau;
            cur = p;
            out.push(p);
        }
        Some(out)
    }
}

/// Resamples a closed profile to `n_pts` equally spaced points, starting at
/// the profile's first point and keeping its orientation.
pub fn resample_arclength(profile: &Profile, n_pts: usize) -> Result<Profile> {
    if n_pts < 3 {
        return Err(Error::domain(format!(
            "resampling needs at least 3 points, got {n_pts}"
        )));
    }
    let perimeter = profile.perimeter();
    if !(perimeter > 0.0) || !perimeter.is_finite() {
        return Err(Error::domain("degenerate profile with zero perimeter"));
    }
    let walker = Walker { pts: &profile.points };
    let start = profile.points[0];
    // gap(c) - c is decreasing in c: positive for tiny chords, negative once
    // the walk cannot fit n - 1 chords before closing.
    let excess = |c: f64| match walker.march(c, n_pts) {
        Some(pts) => pts[n_pts - 1].dist(start) - c,
        None => -c,
    };
    let mut lo = 0.0;
    let mut hi = 2.0 * perimeter / n_pts as f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Prefer whichever end of the bracket closes the polygon best.
    let pick = [lo, hi]
        .into_iter()
        .filter_map(|c| walker.march(c, n_pts).map(|p| (c, p)))
        .min_by(|(ca, pa), (cb, pb)| {
            let ea = (pa[n_pts - 1].dist(start) - ca).abs();
            let eb = (pb[n_pts - 1].dist(start) - cb).abs();
            ea.total_cmp(&eb)
        })
        .ok_or_else(|| Error::domain("resampling failed to fit the requested count"))?;
    Profile::new(pick.1)
}
