//! NACA 4- and 5-digit section generators.
//!
//! The thickness polynomial uses the closed-trailing-edge coefficient
//! (-0.1036) so the two surfaces meet in a single point at x = 1.

use std::f64::consts::PI;

use super::{Point2, Profile};
use crate::{Error, Result};

const THICKNESS_COEFFS: [f64; 5] = [0.2969, -0.1260, -0.3516, 0.2843, -0.1036];

/// Half-thickness of a NACA section with thickness fraction `t` at chord station `x`.
pub fn half_thickness(t: f64, x: f64) -> f64 {
    let [a0, a1, a2, a3, a4] = THICKNESS_COEFFS;
    5.0 * t * (a0 * x.sqrt() + x * (a1 + x * (a2 + x * (a3 + x * a4))))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Naca4 {
    /// Maximum camber (chord fraction).
    pub m: f64,
    /// Location of maximum camber (chord fraction).
    pub p: f64,
    /// Maximum thickness (chord fraction).
    pub t: f64,
}

impl Naca4 {
    pub fn new(m: f64, p: f64, t: f64) -> Result<Self> {
        if !(0.0..=0.1).contains(&m) {
            return Err(Error::domain(format!("NACA-4 camber {m} outside [0, 0.1]")));
        }
        if m > 0.0 && !(p > 0.0 && p < 1.0) {
            return Err(Error::domain(format!("NACA-4 camber position {p} outside (0, 1)")));
        }
        if !(t > 0.0 && t <= 0.4) {
            return Err(Error::domain(format!("NACA-4 thickness {t} outside (0, 0.4]")));
        }
        Ok(Self { m, p, t })
    }

    /// Decodes a four-digit designation such as `"2412"`.
    pub fn from_code(code: &str) -> Result<Self> {
        let digits: Vec<u32> = code
            .trim()
            .chars()
            .map(|c| c.to_digit(10))
            .collect::<Option<_>>()
            .filter(|d: &Vec<u32>| d.len() == 4)
            .ok_or_else(|| Error::domain(format!("'{code}' is not a 4-digit NACA code")))?;
        let m = f64::from(digits[0]) / 100.0;
        let p = f64::from(digits[1]) / 10.0;
        let t = f64::from(digits[2] * 10 + digits[3]) / 100.0;
        Self::new(m, p, t)
    }

    pub fn camber(&self, x: f64) -> (f64, f64) {
        let (m, p) = (self.m, self.p);
        if m == 0.0 {
            return (0.0, 0.0);
        }
        if x < p {
            (m / (p * p) * (2.0 * p * x - x * x), 2.0 * m / (p * p) * (p - x))
        } else {
            let q = (1.0 - p) * (1.0 - p);
            (m / q * ((1.0 - 2.0 * p) + 2.0 * p * x - x * x), 2.0 * m / q * (p - x))
        }
    }
}

/// Supported NACA 5-digit section (first digit = design lift / 0.15).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Naca5 {
    pub design_digit: u32,
    pub position_digit: u32,
    pub reflex: bool,
    pub t: f64,
    /// Camber-line transition point.
    pub m: f64,
    pub k1: f64,
    /// `k2 / k1`; zero for non-reflexed sections.
    pub k21: f64,
}

/// Tabulated `(m, k1, k2/k1)` for design lift 0.3, indexed by position digit.
#[allow(clippy::approx_constant)]
pub fn naca5_constants(position_digit: u32, reflex: bool) -> Option<(f64, f64, f64)> {
    match (position_digit, reflex) {
        (1, false) => Some((0.0580, 361.400, 0.0)),
        (2, false) => Some((0.1260, 51.640, 0.0)),
        (3, false) => Some((0.2025, 15.957, 0.0)),
        (4, false) => Some((0.2900, 6.643, 0.0)),
        (5, false) => Some((0.3910, 3.230, 0.0)),
        (2, true) => Some((0.1300, 51.990, 0.000764)),
        (3, true) => Some((0.2170, 15.793, 0.00677)),
        (4, true) => Some((0.3180, 6.520, 0.0303)),
        (5, true) => Some((0.4410, 3.191, 0.1355)),
        _ => None,
    }
}

impl Naca5 {
    pub fn from_code(code: &str) -> Result<Self> {
        let unsupported = || Error::domain(format!("unsupported NACA 5-digit code '{code}'"));
        let d: Vec<u32> = code
            .trim()
            .chars()
            .map(|c| c.to_digit(10))
            .collect::<Option<_>>()
            .filter(|d: &Vec<u32>| d.len() == 5)
            .ok_or_else(unsupported)?;
        let reflex = match d[2] {
            0 => false,
            1 => true,
            _ => return Err(unsupported()),
        };
        if !(1..=6).contains(&d[0]) {
            return Err(unsupported());
        }
        let (m, k1, k21) = naca5_constants(d[1], reflex).ok_or_else(unsupported)?;
        let t = f64::from(d[3] * 10 + d[4]) / 100.0;
        if !(t > 0.0 && t <= 0.4) {
            return Err(unsupported());
        }
        Ok(Self {
            design_digit: d[0],
            position_digit: d[1],
            reflex,
            t,
            m,
            k1,
            k21,
        })
    }

    pub fn camber(&self, x: f64) -> (f64, f64) {
        let (m, k1, k21) = (self.m, self.k1, self.k21);
        let scale = f64::from(self.design_digit) / 2.0;
        let (y, dy) = if !self.reflex {
            if x < m {
                (
                    k1 / 6.0 * (x.powi(3) - 3.0 * m * x * x + m * m * (3.0 - m) * x),
                    k1 / 6.0 * (3.0 * x * x - 6.0 * m * x + m * m * (3.0 - m)),
                )
            } else {
                (k1 * m.powi(3) / 6.0 * (1.0 - x), -k1 * m.powi(3) / 6.0)
            }
        } else {
            let tail = k21 * (1.0 - m).powi(3);
            if x < m {
                (
                    k1 / 6.0 * ((x - m).powi(3) - tail * x - m.powi(3) * x + m.powi(3)),
                    k1 / 6.0 * (3.0 * (x - m).powi(2) - tail - m.powi(3)),
                )
            } else {
                (
                    k1 / 6.0 * (k21 * (x - m).powi(3) - tail * x - m.powi(3) * x + m.powi(3)),
                    k1 / 6.0 * (3.0 * k21 * (x - m).powi(2) - tail - m.powi(3)),
                )
            }
        };
        (y * scale, dy * scale)
    }
}

fn build_profile(n_pts: usize, t: f64, camber: impl Fn(f64) -> (f64, f64)) -> Result<Profile> {
    if n_pts < 32 {
        return Err(Error::domain(format!("profile needs at least 32 samples, got {n_pts}")));
    }
    // Parameter s runs once around the section: s = 0 at the trailing edge,
    // s = pi at the nose; cosine spacing clusters samples at both ends.
    let points = (0..n_pts)
        .map(|k| {
            let s = 2.0 * PI * k as f64 / n_pts as f64;
            let x = 0.5 * (1.0 + s.cos());
            let yt = half_thickness(t, x);
            let (yc, slope) = camber(x);
            let theta = slope.atan();
            let sign = if s <= PI { 1.0 } else { -1.0 };
            Point2::new(x - sign * yt * theta.sin(), yc + sign * yt * theta.cos())
        })
        .collect();
    Profile::new(points)
}

/// Closed counter-clockwise NACA 4-digit profile starting at the trailing edge.
pub fn naca4_profile(m: f64, p: f64, t: f64, n_pts: usize) -> Result<Profile> {
    let section = Naca4::new(m, p, t)?;
    build_profile(n_pts, t, |x| section.camber(x))
}

pub fn naca5_profile(code: &str, n_pts: usize) -> Result<Profile> {
    let section = Naca5::from_code(code)?;
    build_profile(n_pts, section.t, |x| section.camber(x))
}
