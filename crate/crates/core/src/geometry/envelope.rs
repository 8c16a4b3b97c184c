use std::f64::consts::TAU;

use super::{CsRep, Point2, Profile};
use crate::{Error, Result};

/// Per-station envelope directions `(d_plus, d_minus)`; unit vectors.
pub(crate) fn envelope_directions(rep: &CsRep) -> Result<Vec<(Point2, Point2)>> {
    rep.check_shape()?;
    let n = rep.len();
    (0..n)
        .map(|i| {
            let (a, b, w) = match i {
                0 => (0, 1, 1.0),
                _ if i == n - 1 => (n - 2, n - 1, 1.0),
                _ => (i - 1, i + 1, 0.5),
            };
            let dcx = w * (rep.x(b) - rep.x(a));
            let dcy = w * (rep.spine_y[b] - rep.spine_y[a]);
            let dr = w * (rep.radii[b] - rep.radii[a]);
            let norm2 = dcx * dcx + dcy * dcy;
            if dr * dr > norm2 || norm2 == 0.0 {
                return Err(Error::Envelope {
                    index: i,
                    dr: dr.abs(),
                    dc: norm2.sqrt(),
                });
            }
            let norm = norm2.sqrt();
            let along = -dr / norm;
            let across = (1.0 - dr * dr / norm2).max(0.0).sqrt();
            let (tx, ty) = (dcx / norm, dcy / norm);
            let (ex, ey) = (-ty, tx);
            let plus = Point2::new(along * tx + across * ex, along * ty + across * ey);
            let minus = Point2::new(along * tx - across * ex, along * ty - across * ey);
            Ok((plus, minus))
        })
        .collect()
}

fn arc_points(center: Point2, r: f64, from: f64, to: f64, spacing: f64, out: &mut Vec<Point2>) {
    let sweep = (to - from).rem_euclid(TAU);
    let segments = ((r * sweep) / spacing).ceil().clamp(2.0, 64.0) as usize;
    for k in 1..segments {
        let a = from + sweep * k as f64 / segments as f64;
        out.push(Point2::new(center.x + r * a.cos(), center.y + r * a.sin()));
    }
}

/// Boundary of the swept circle family as a closed counter-clockwise profile.
///
/// Output order: upper branch from tail to nose, nose cap on the first
/// circle, lower branch from nose to tail, tail cap on the last circle. The
/// first point is the upper tangency at the last station.
pub fn sweep_envelope(rep: &CsRep) -> Result<Profile> {
    let dirs = envelope_directions(rep)?;
    let n = rep.len();
    let spacing = 0.5 * rep.delta_x;
    let mut pts = Vec::with_capacity(2 * n + 32);
    for i in (0..n).rev() {
        let c = rep.center(i);
        let r = rep.radii[i];
        pts.push(Point2::new(c.x + r * dirs[i].0.x, c.y + r * dirs[i].0.y));
    }
    let angle = |d: Point2| d.y.atan2(d.x);
    arc_points(
        rep.center(0),
        rep.radii[0],
        angle(dirs[0].0),
        angle(dirs[0].1),
        spacing,
        &mut pts,
    );
    for (i, dir) in dirs.iter().enumerate() {
        let c = rep.center(i);
        let r = rep.radii[i];
        pts.push(Point2::new(c.x + r * dir.1.x, c.y + r * dir.1.y));
    }
    arc_points(
        rep.center(n - 1),
        rep.radii[n - 1],
        angle(dirs[n - 1].1),
        angle(dirs[n - 1].0),
        spacing,
        &mut pts,
    );
    Profile::new(pts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stadium() -> CsRep {
        CsRep::new(0.1, 0.1, vec![0.0; 9], vec![0.1; 9]).unwrap()
    }

    #[test]
    fn straight_spine_constant_radius() {
        let rep = stadium();
        let prof = sweep_envelope(&rep).unwrap();
        // First n points are the upper branch (tail to nose).
        for (k, p) in prof.points.iter().take(9).enumerate() {
            assert!((p.y - 0.1).abs() < 1e-15);
            assert!((p.x - rep.x(8 - k)).abs() < 1e-15);
        }
        let lower_start = prof.points.iter().position(|p| (p.y + 0.1).abs() < 1e-15).unwrap();
        for (i, p) in prof.points[lower_start..lower_start + 9].iter().enumerate() {
            assert!((p.x - rep.x(i)).abs() < 1e-15);
        }
        // Caps lie on the end circles and reach the spine tips.
        let min_x = prof.points.iter().map(|p| p.x).fold(f64::MAX, f64::min);
        let max_x = prof.points.iter().map(|p| p.x).fold(f64::MIN, f64::max);
        // Arc chords stay within one sagitta of the true caps.
        let sag = 0.1 * (1.0 - (std::f64::consts::PI / 14.0).cos());
        assert!(min_x >= -1e-12 && min_x <= sag + 1e-12, "{min_x}");
        assert!(max_x <= 1.0 + 1e-12 && max_x >= 1.0 - sag - 1e-12, "{max_x}");
        assert!(prof.signed_area() > 0.0);
    }

    #[test]
    fn boundary_points_sit_on_their_circles() {
        let rep = CsRep::new(
            0.02,
            0.05,
            (0..12).map(|i| 0.01 * (i as f64 * 0.4).sin()).collect(),
            (0..12)
                .map(|i| 0.02 + 0.03 * (i as f64 / 11.0) * (1.0 - i as f64 / 11.0) * 3.0)
                .collect(),
        )
        .unwrap();
        let dirs = envelope_directions(&rep).unwrap();
        for (i, (p, m)) in dirs.iter().enumerate() {
            let c = rep.center(i);
            let r = rep.radii[i];
            let up = Point2::new(c.x + r * p.x, c.y + r * p.y);
            let lo = Point2::new(c.x + r * m.x, c.y + r * m.y);
            assert!((up.dist(c) - r).abs() < 1e-12);
            assert!((lo.dist(c) - r).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_commutes() {
        let rep = stadium();
        let s = 2.5;
        let a = sweep_envelope(&rep.scaled(s)).unwrap();
        let b = sweep_envelope(&rep).unwrap().scaled(s);
        assert_eq!(a.len(), b.len());
        for (p, q) in a.points.iter().zip(&b.points) {
            assert!(p.dist(*q) < 1e-12);
        }
    }

    #[test]
    fn infeasible_radius_slope_reports_index() {
        let mut r = vec![0.05; 10];
        r[4] = 0.3;
        let rep = CsRep::new(0.0, 0.05, vec![0.0; 10], r).unwrap();
        match sweep_envelope(&rep) {
            Err(Error::Envelope { index, .. }) => assert_eq!(index, 3),
            other => panic!("expected envelope error, got {other:?}"),
        }
    }
}
