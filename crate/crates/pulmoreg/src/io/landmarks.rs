//! Landmark CSV files: one `x,y,z` line per point (mm), one file per
//! image, row-aligned pairs.

use crate::error::{Error, Result};
use crate::keypoints::CorrespondenceSet;
use std::fs;
use std::path::Path;

/// Corresponding expert landmarks in the fixed and moving images.
#[derive(Debug, Clone, Default)]
pub struct LandmarkList {
    pub fixed: Vec<[f64; 3]>,
    pub moving: Vec<[f64; 3]>,
}

impl LandmarkList {
    pub fn new(fixed: Vec<[f64; 3]>, moving: Vec<[f64; 3]>) -> Result<Self> {
        if fixed.len() != moving.len() {
            return Err(Error::validation(format!(
                "landmark counts differ: {} fixed vs {} moving",
                fixed.len(),
                moving.len()
            )));
        }
        if fixed.iter().chain(moving.iter()).any(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::validation("landmarks contain non-finite coordinates"));
        }
        Ok(Self { fixed, moving })
    }

    pub fn len(&self) -> usize {
        self.fixed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixed.is_empty()
    }
}

pub fn read_landmarks(path: impl AsRef<Path>) -> Result<Vec<[f64; 3]>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split(',').map(str::trim);
        let parse = |s: Option<&str>| -> Result<f64> {
            s.and_then(|v| v.parse().ok()).ok_or_else(|| {
                Error::validation(format!(
                    "{}:{}: expected 'x,y,z', got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })
        };
        let p = [parse(it.next())?, parse(it.next())?, parse(it.next())?];
        if it.next().is_some() {
            return Err(Error::validation(format!(
                "{}:{}: extra fields in {line:?}",
                path.display(),
                lineno + 1
            )));
        }
        out.push(p);
    }
    Ok(out)
}

pub fn write_landmarks(path: impl AsRef<Path>, points: &[[f64; 3]]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for p in points {
        text.push_str(&format!("{},{},{}\n", p[0], p[1], p[2]));
    }
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_landmark_pairs(
    fixed_path: impl AsRef<Path>,
    moving_path: impl AsRef<Path>,
) -> Result<LandmarkList> {
    LandmarkList::new(read_landmarks(fixed_path)?, read_landmarks(moving_path)?)
}

/// Debug dump of refined correspondences: `x,y,z,dx,dy,dz,energy` per
/// line, displacements from source to target in mm.
pub fn write_correspondences_csv(
    path: impl AsRef<Path>,
    corr: &CorrespondenceSet,
) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for c in &corr.items {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.source[0],
            c.source[1],
            c.source[2],
            c.target[0] - c.source[0],
            c.target[1] - c.source[1],
            c.target[2] - c.source[2],
            c.energy
        ));
    }
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
