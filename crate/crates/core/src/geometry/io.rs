//! Profile CSV and cs-rep JSON files.

use std::fs;
use std::path::Path;

use super::{CsRep, Point2, Profile};
use crate::{Error, Result};

/// Two-column CSV, one `x,y` pair per line, 17 significant digits.
pub fn profile_to_csv(profile: &Profile) -> String {
    let mut s = String::with_capacity(profile.len() * 50);
    for p in &profile.points {
        s.push_str(&format!("{:.16e},{:.16e}\n", p.x, p.y));
    }
    s
}

pub fn profile_from_csv(text: &str) -> Result<Profile> {
    let mut pts = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split(',').map(|v| v.trim().parse::<f64>());
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(x)), Some(Ok(y)), None) => pts.push(Point2::new(x, y)),
            _ => return Err(Error::Format(format!("line {}: expected `x,y`, got `{line}`", ln + 1))),
        }
    }
    Profile::new(pts)
}

pub fn write_profile_csv(path: &Path, profile: &Profile) -> Result<()> {
    fs::write(path, profile_to_csv(profile)).map_err(|e| Error::io(path, e))
}

pub fn read_profile_csv(path: &Path) -> Result<Profile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    profile_from_csv(&text)
}

pub fn write_csrep_json(path: &Path, rep: &CsRep) -> Result<()> {
    let text = serde_json::to_string(rep)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_csrep_json(path: &Path) -> Result<CsRep> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rep: CsRep = serde_json::from_str(&text)?;
    rep.check_shape()?;
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::naca4_profile;

    #[test]
    fn csv_round_trip_is_exact() {
        let prof = naca4_profile(0.02, 0.4, 0.12, 64).unwrap();
        let back = profile_from_csv(&profile_to_csv(&prof)).unwrap();
        assert_eq!(prof, back);
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(profile_from_csv("0,0\n1,x\n2,2\n").is_err());
        assert!(profile_from_csv("0,0,0\n").is_err());
    }

    #[test]
    fn csrep_json_shape() {
        let rep = CsRep::new(0.0, 0.5, vec![0.0; 8], vec![0.1; 8]).unwrap();
        let v: serde_json::Value = serde_json::to_value(&rep).unwrap();
        for key in ["x0", "delta_x", "spine_y", "radii"] {
            assert!(v.get(key).is_some());
        }
    }
}
