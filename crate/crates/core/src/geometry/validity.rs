//! Executable checks for the four airfoil characteristics:
//! 1. single, closed, simple boundary;
//! 2. rounded nose and sharp tail;
//! 3. strictly increasing spine abscissae;
//! 4. bounded spine curvature steps and radius steps, one extremum each.

use serde::{Deserialize, Serialize};

use super::{CsRep, Point2, Profile, R_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessThresholds {
    /// Bound on `|Δ²y|`.
    pub thres_y: f64,
    /// Bound on `|Δr|`.
    pub thres_r: f64,
    /// Floor for interior cumulative-product coefficients.
    pub a_tilde_min: f64,
    /// Smallest admissible leading radius.
    pub r_nose_min: f64,
    /// Largest admissible trailing radius.
    pub r_eps: f64,
}

impl SmoothnessThresholds {
    pub fn for_spacing(delta_x: f64) -> Self {
        Self {
            thres_y: 0.1 * delta_x,
            thres_r: delta_x,
            a_tilde_min: 0.5,
            r_nose_min: 5e-3,
            r_eps: R_EPS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckId {
    SimpleClosed,
    NoseTail,
    Monotone,
    Smooth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub check: CheckId,
    pub index: usize,
    pub magnitude: f64,
    /// Second segment of a crossing pair.
    pub partner: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub simple_closed: bool,
    pub rounded_nose_sharp_tail: bool,
    pub monotone_progression: bool,
    pub smooth_unimodal_thickness: bool,
    pub violations: Vec<Violation>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn from_violations(violations: Vec<Violation>) -> Self {
        let ok = |c: CheckId| !violations.iter().any(|v| v.check == c);
        Self {
            simple_closed: ok(CheckId::SimpleClosed),
            rounded_nose_sharp_tail: ok(CheckId::NoseTail),
            monotone_progression: ok(CheckId::Monotone),
            smooth_unimodal_thickness: ok(CheckId::Smooth),
            violations,
        }
    }
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: Point2, b: Point2, p: Point2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test, including touching and collinear overlap.
pub fn segments_intersect(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// Crossing pairs of non-adjacent edges, found by sweeping edges in order
/// of their left end and keeping only x-overlapping edges active.
pub(crate) fn crossing_pairs(points: &[Point2], limit: usize) -> Vec<(usize, usize)> {
    let n = points.len();
    let seg = |i: usize| (points[i], points[(i + 1) % n]);
    let mut order: Vec<usize> = (0..n).collect();
    let xmin = |i: usize| {
        let (a, b) = seg(i);
        a.x.min(b.x)
    };
    let xmax = |i: usize| {
        let (a, b) = seg(i);
        a.x.max(b.x)
    };
    order.sort_by(|&a, &b| xmin(a).total_cmp(&xmin(b)).then(a.cmp(&b)));
    let mut active: Vec<usize> = Vec::new();
    let mut found = Vec::new();
    for &i in &order {
        let x = xmin(i);
        active.retain(|&j| xmax(j) >= x);
        let (a, b) = seg(i);
        for &j in &active {
            let adjacent = (i + 1) % n == j || (j + 1) % n == i;
            let (c, d) = seg(j);
            if adjacent {
                // Shared vertex; only a collinear fold back counts.
                let (p, v, q) = if (i + 1) % n == j { (a, b, d) } else { (c, d, b) };
                let cross = orient(p, v, q);
                let dot = (v.x - p.x) * (q.x - v.x) + (v.y - p.y) * (q.y - v.y);
                if cross == 0.0 && dot < 0.0 && n > 3 {
                    found.push((i.min(j), i.max(j)));
                }
            } else if segments_intersect(a, b, c, d) {
                found.push((i.min(j), i.max(j)));
            }
            if found.len() >= limit {
                return found;
            }
        }
        active.push(i);
    }
    found.sort_unstable();
    found
}

fn dedup_closed(points: &[Point2]) -> Vec<Point2> {
    let mut out: Vec<Point2> = Vec::with_capacity(points.len());
    for &p in points {
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    while out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    out
}

fn sign_changes(values: &[f64], tol: f64) -> (usize, Option<usize>) {
    let mut last = 0.0f64;
    let mut count = 0;
    let mut second = None;
    for (j, &v) in values.iter().enumerate() {
        if v.abs() <= tol {
            continue;
        }
        if last != 0.0 && v.signum() != last {
            count += 1;
            if count == 2 {
                second = Some(j);
            }
        }
        last = v.signum();
    }
    (count, second)
}

fn profile_violations(profile: &Profile, out: &mut Vec<Violation>) {
    let pts = dedup_closed(&profile.points);
    if pts.len() < 3 || pts.iter().any(|p| !p.is_finite()) {
        out.push(Violation {
            check: CheckId::SimpleClosed,
            index: 0,
            magnitude: pts.len() as f64,
            partner: None,
        });
        return;
    }
    for (i, j) in crossing_pairs(&pts, 16) {
        out.push(Violation {
            check: CheckId::SimpleClosed,
            index: i,
            magnitude: 1.0,
            partner: Some(j),
        });
    }
}

fn csrep_violations(rep: &CsRep, th: &SmoothnessThresholds, out: &mut Vec<Violation>) {
    let n = rep.len();
    if n < 2 {
        out.push(Violation {
            check: CheckId::Monotone,
            index: 0,
            magnitude: n as f64,
            partner: None,
        });
        return;
    }
    if rep.radii[0] < th.r_nose_min {
        out.push(Violation {
            check: CheckId::NoseTail,
            index: 0,
            magnitude: th.r_nose_min - rep.radii[0],
            partner: None,
        });
    }
    if rep.radii[n - 1] > th.r_eps * (1.0 + 1e-9) {
        out.push(Violation {
            check: CheckId::NoseTail,
            index: n - 1,
            magnitude: rep.radii[n - 1] - th.r_eps,
            partner: None,
        });
    }
    if let Some(i) = rep.radii[..n - 1].iter().position(|&r| r <= 0.0) {
        out.push(Violation {
            check: CheckId::NoseTail,
            index: i,
            magnitude: -rep.radii[i],
            partner: None,
        });
    }
    if !(rep.delta_x > 0.0) {
        out.push(Violation {
            check: CheckId::Monotone,
            index: 0,
            magnitude: rep.delta_x,
            partner: None,
        });
    } else if let Some(i) = (1..n).find(|&i| rep.x(i) <= rep.x(i - 1)) {
        out.push(Violation {
            check: CheckId::Monotone,
            index: i,
            magnitude: rep.x(i - 1) - rep.x(i),
            partner: None,
        });
    }

    let dy: Vec<f64> = rep.spine_y.windows(2).map(|w| w[1] - w[0]).collect();
    let d2y: Vec<f64> = dy.windows(2).map(|w| w[1] - w[0]).collect();
    let dr: Vec<f64> = rep.radii.windows(2).map(|w| w[1] - w[0]).collect();
    let smooth = |index: usize, magnitude: f64| Violation {
        check: CheckId::Smooth,
        index,
        magnitude,
        partner: None,
    };
    for (j, v) in d2y.iter().enumerate() {
        if v.abs() >= th.thres_y {
            out.push(smooth(j, v.abs()));
        }
    }
    for (j, v) in dr.iter().enumerate() {
        if v.abs() >= th.thres_r {
            out.push(smooth(j, v.abs()));
        }
    }
    let (cy, at) = sign_changes(&d2y, 1e-9 * th.thres_y);
    if cy > 1 {
        out.push(smooth(at.unwrap_or(0), cy as f64));
    }
    let (cr, at) = sign_changes(&dr, 1e-9 * th.thres_r);
    if cr > 1 {
        out.push(smooth(at.unwrap_or(0), cr as f64));
    }
}

/// Checks a profile and the cs-rep that produced it. Never fails; problems
/// are listed in the report.
pub fn validate(profile: &Profile, rep: &CsRep, thresholds: &SmoothnessThresholds) -> ValidityReport {
    let mut violations = Vec::new();
    profile_violations(profile, &mut violations);
    csrep_violations(rep, thresholds, &mut violations);
    ValidityReport::from_violations(violations)
}

impl ValidityReport {
    /// Profile-only check (#1).
    pub fn for_profile(profile: &Profile) -> Self {
        let mut violations = Vec::new();
        profile_violations(profile, &mut violations);
        Self::from_violations(violations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sweep_envelope;

    fn stadium() -> CsRep {
        let mut r = vec![0.1; 9];
        r[8] = R_EPS;
        CsRep::new(0.1, 0.1, vec![0.0; 9], r).unwrap()
    }

    fn brute_pairs(pts: &[Point2]) -> Vec<(usize, usize)> {
        let n = pts.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                if segments_intersect(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n]) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    #[test]
    fn stadium_like_shape_is_valid() {
        // Constant radius with the tail snapped to r_eps; the tail drop is
        // steeper than thres_r, so use thresholds scaled for this shape.
        let rep = CsRep::new(0.1, 0.1, vec![0.0; 9], vec![0.1; 9]).unwrap();
        let prof = sweep_envelope(&rep).unwrap();
        let th = SmoothnessThresholds {
            r_eps: 0.1,
            ..SmoothnessThresholds::for_spacing(0.1)
        };
        let report = validate(&prof, &rep, &th);
        assert!(report.is_valid(), "{:?}", report.violations);
        assert!(report.simple_closed && report.monotone_progression);
    }

    #[test]
    fn snapped_stadium_flags_only_the_tail_step() {
        let rep = stadium();
        let prof = sweep_envelope(&rep).unwrap();
        let report = validate(&prof, &rep, &SmoothnessThresholds::for_spacing(0.1));
        assert!(report.simple_closed && report.rounded_nose_sharp_tail && report.monotone_progression);
    }

    #[test]
    fn figure_eight_reports_crossing_pair() {
        let pts = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 1.0),
        ];
        let prof = Profile::new(pts).unwrap();
        let report = ValidityReport::for_profile(&prof);
        assert!(!report.simple_closed);
        let v = &report.violations[0];
        assert_eq!((v.index, v.partner), (0, Some(2)));
    }

    #[test]
    fn wavy_radius_fails_unimodality() {
        let mut radii = vec![0.02, 0.08, 0.03, 0.06, 0.05, 0.04, 0.03, 0.02, 0.01, R_EPS];
        radii[9] = R_EPS;
        let rep = CsRep::new(0.0, 0.1, vec![0.0; 10], radii).unwrap();
        let th = SmoothnessThresholds::for_spacing(0.1);
        let prof = sweep_envelope(&rep).unwrap();
        let report = validate(&prof, &rep, &th);
        assert!(!report.smooth_unimodal_thickness);
        assert!(report
            .violations
            .iter()
            .any(|v| v.check == CheckId::Smooth && v.magnitude >= 2.0));
    }

    #[test]
    fn nose_and_tail_radius_checks() {
        let th = SmoothnessThresholds::for_spacing(0.1);
        let rep = CsRep::new(
            0.0,
            0.1,
            vec![0.0; 8],
            vec![0.001, 0.01, 0.02, 0.02, 0.02, 0.02, 0.01, 0.05],
        )
        .unwrap();
        let prof = sweep_envelope(&rep).unwrap();
        let report = validate(&prof, &rep, &th);
        assert!(!report.rounded_nose_sharp_tail);
        let idx: Vec<usize> = report
            .violations
            .iter()
            .filter(|v| v.check == CheckId::NoseTail)
            .map(|v| v.index)
            .collect();
        assert_eq!(idx, vec![0, 7]);
    }

    #[test]
    fn sweep_matches_brute_force_on_random_polygons() {
        use rand::Rng;
        let mut rng = crate::rng::stream(11, 0);
        for _ in 0..200 {
            let n = rng.gen_range(4..24);
            let pts: Vec<Point2> = (0..n)
                .map(|_| Point2::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)))
                .collect();
            let mut fast = crossing_pairs(&pts, usize::MAX);
            fast.retain(|(i, j)| !((i + 1) % n == *j || (j + 1) % n == *i));
            assert_eq!(fast, brute_pairs(&pts));
        }
    }
}
