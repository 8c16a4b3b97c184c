use super::Matrix;
use crate::geometry::Profile;
use crate::{Error, Result};

/// Sinusoidal table: entry `(pos, 2i)` is `sin(pos / 10000^(2i/dim))` and
/// `(pos, 2i+1)` the matching cosine.
pub fn positional_encoding(length: usize, dim: usize) -> Result<Matrix> {
    if !dim.is_multiple_of(2) || dim == 0 {
        return Err(Error::domain(format!(
            "encoding dimension {dim} must be even and positive"
        )));
    }
    Ok(Matrix::from_fn(length, dim, |pos, j| {
        let i = (j / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * i / dim as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}

/// Row `i` holds the `k` points centered at `i` (cyclic), flattened as
/// `x, y` pairs.
pub fn gather_neighbors(profile: &Profile, k: usize) -> Result<Matrix> {
    if k.is_multiple_of(2) {
        return Err(Error::domain(format!("neighbourhood size {k} must be odd")));
    }
    let pts = &profile.points;
    let n = pts.len();
    let half = k / 2;
    Ok(Matrix::from_fn(n, 2 * k, |i, j| {
        let p = pts[((i + j / 2) as isize - half as isize).rem_euclid(n as isize) as usize];
        if j % 2 == 0 {
            p.x
        } else {
            p.y
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point2;
    use std::collections::HashSet;

    fn hexagon() -> Profile {
        Profile::new(
            (0..6)
                .map(|i| {
                    let a = i as f64 * std::f64::consts::PI / 3.0;
                    Point2::new(a.cos(), a.sin())
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn encoding_basics() {
        let pe = positional_encoding(100, 8).unwrap();
        for j in 0..8 {
            assert_eq!(pe[(0, j)], if j % 2 == 0 { 0.0 } else { 1.0 });
        }
        assert!(pe.data().iter().all(|v| v.abs() <= 1.0));
        assert!(positional_encoding(4, 3).is_err());
    }

    #[test]
    fn encoding_rows_are_distinct() {
        let pe = positional_encoding(10_000, 16).unwrap();
        let rows: HashSet<Vec<u64>> = (0..pe.rows())
            .map(|i| pe.row(i).iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(rows.len(), 10_000);
    }

    #[test]
    fn neighbours_wrap() {
        let p = hexagon();
        let o = gather_neighbors(&p, 5).unwrap();
        assert_eq!(o.shape(), (6, 10));
        let expect = [4, 5, 0, 1, 2];
        for (slot, &k) in expect.iter().enumerate() {
            assert_eq!(o[(0, 2 * slot)], p.points[k].x);
            assert_eq!(o[(0, 2 * slot + 1)], p.points[k].y);
        }
        let o1 = gather_neighbors(&p, 1).unwrap();
        assert_eq!(o1.row(3), &[p.points[3].x, p.points[3].y]);
        assert!(gather_neighbors(&p, 4).is_err());
    }

    #[test]
    fn neighbours_are_cyclically_equivariant() {
        let p = hexagon();
        let mut shifted = p.points.clone();
        shifted.rotate_left(2);
        let q = Profile::new(shifted).unwrap();
        let a = gather_neighbors(&p, 3).unwrap();
        let b = gather_neighbors(&q, 3).unwrap();
        for i in 0..6 {
            assert_eq!(b.row(i), a.row((i + 2) % 6));
        }
    }
}
