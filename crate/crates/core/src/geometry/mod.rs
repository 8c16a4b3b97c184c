//! Profiles, circle-sweep shapes and the conversions between them.

mod envelope;
pub mod io;
mod medial;
mod naca;
mod resample;
mod validity;

pub use envelope::sweep_envelope;
pub use medial::{extract_csrep, ExtractOptions};
pub use naca::{naca4_profile, naca5_constants, naca5_profile, Naca4, Naca5};
pub use resample::resample_arclength;
pub use validity::{segments_intersect, validate, CheckId, SmoothnessThresholds, ValidityReport, Violation};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Trailing-edge radius (chord units) substituted for a zero radius.
pub const R_EPS: f64 = 1e-4;
/// Default station spacing; at most 128 stations on a unit chord.
pub const DEFAULT_DELTA_X: f64 = 1.0 / 127.0;
/// Default number of boundary samples per profile.
pub const DEFAULT_PROFILE_LEN: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, o: Point2) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    pub fn dist2(self, o: Point2) -> f64 {
        let dx = self.x - o.x;
        let dy = self.y - o.y;
        dx * dx + dy * dy
    }

    pub fn scale(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Closed polyline, counter-clockwise, last point implicitly joined to the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub points: Vec<Point2>,
}

impl Profile {
    pub fn new(points: Vec<Point2>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::domain(format!(
                "profile needs at least 3 points, got {}",
                points.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::domain(format!("non-finite profile point at {i}")));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Edges `(p_i, p_{i+1})` including the closing edge.
    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.points.len();
        (0..n).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }

    pub fn perimeter(&self) -> f64 {
        self.edges().map(|(a, b)| a.dist(b)).sum()
    }

    /// Shoelace area; positive for counter-clockwise orientation.
    pub fn signed_area(&self) -> f64 {
        0.5 * self.edges().map(|(a, b)| a.x * b.y - b.x * a.y).sum::<f64>()
    }

    pub fn scaled(&self, s: f64) -> Profile {
        Profile {
            points: self.points.iter().map(|p| p.scale(s)).collect(),
        }
    }

    pub fn x_range(&self) -> (f64, f64) {
        self.points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.x), hi.max(p.x))
            })
    }
}

/// Circle-sweep shape: spine points on a uniform x grid with one radius each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsRep {
    pub x0: f64,
    pub delta_x: f64,
    pub spine_y: Vec<f64>,
    pub radii: Vec<f64>,
}

impl CsRep {
    /// Minimum number of spine points.
    pub const MIN_LEN: usize = 8;

    pub fn new(x0: f64, delta_x: f64, spine_y: Vec<f64>, radii: Vec<f64>) -> Result<Self> {
        let rep = Self {
            x0,
            delta_x,
            spine_y,
            radii,
        };
        rep.check_shape()?;
        Ok(rep)
    }

    /// Structural checks only; geometric validity lives in [`validate`].
    pub fn check_shape(&self) -> Result<()> {
        if self.spine_y.len() != self.radii.len() {
            return Err(Error::shape(format!(
                "spine has {} points but {} radii",
                self.spine_y.len(),
                self.radii.len()
            )));
        }
        if self.spine_y.len() < Self::MIN_LEN {
            return Err(Error::domain(format!(
                "cs-rep needs at least {} spine points, got {}",
                Self::MIN_LEN,
                self.spine_y.len()
            )));
        }
        if !(self.delta_x > 0.0 && self.delta_x.is_finite() && self.x0.is_finite()) {
            return Err(Error::domain("spine spacing must be positive and finite"));
        }
        if self.spine_y.iter().chain(&self.radii).any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite spine or radius value"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.spine_y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spine_y.is_empty()
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.delta_x
    }

    pub fn center(&self, i: usize) -> Point2 {
        Point2::new(self.x(i), self.spine_y[i])
    }

    pub fn max_radius(&self) -> f64 {
        self.radii.iter().copied().fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> CsRep {
        CsRep {
            x0: self.x0 * s,
            delta_x: self.delta_x * s,
            spine_y: self.spine_y.iter().map(|v| v * s).collect(),
            radii: self.radii.iter().map(|v| v * s).collect(),
        }
    }
}
