use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::RefModelError;
use crate::correspond::Observation;
use crate::geometry::{ply, TriangleMesh};
use crate::spatial::PointHash;
use crate::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct LibraryEntry<T: Real> {
    pub name: String,
    pub mesh: TriangleMesh<T>,
}

/// Reference meshes of the object, one per demonstrated deformation state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelLibrary<T: Real> {
    entries: Vec<LibraryEntry<T>>,
}

impl<T: Real> ModelLibrary<T> {
    pub fn new(entries: Vec<LibraryEntry<T>>) -> Result<Self, RefModelError> {
        if entries.is_empty() {
            return Err(RefModelError::EmptyLibrary);
        }
        for (i, e) in entries.iter().enumerate() {
            if entries[..i].iter().any(|o| o.name == e.name) {
                return Err(RefModelError::DuplicateName(e.name.clone()));
            }
            if e.mesh.is_empty() {
                return Err(RefModelError::Geometry(crate::geometry::GeometryError::EmptyMesh));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[LibraryEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&LibraryEntry<T>> {
        self.entries.get(i)
    }
}

/// One line of the library manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub mesh_path: PathBuf,
}

/// Reads a manifest (JSON list of `{name, mesh_path}`); relative mesh paths
/// resolve against the manifest's directory.
pub fn load_library<T: Real>(manifest: &Path) -> Result<ModelLibrary<T>, RefModelError> {
    let text = std::fs::read_to_string(manifest)?;
    let list: Vec<ManifestEntry> =
        serde_json::from_str(&text).map_err(|e| RefModelError::Manifest(format!("{}: {e}", manifest.display())))?;
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let entries = list
        .into_iter()
        .map(|e| {
            let path = if e.mesh_path.is_absolute() { e.mesh_path.clone() } else { base.join(&e.mesh_path) };
            let mesh = ply::load_ply(&path)
                .map_err(|err| RefModelError::Manifest(format!("entry '{}' ({}): {err}", e.name, path.display())))?;
            Ok(LibraryEntry { name: e.name, mesh })
        })
        .collect::<Result<Vec<_>, RefModelError>>()?;
    ModelLibrary::new(entries)
}

/// Writes every mesh next to the manifest as `<name>.ply` plus the manifest.
pub fn save_library<T: Real>(library: &ModelLibrary<T>, manifest: &Path) -> Result<(), RefModelError> {
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut list = Vec::new();
    for e in library.entries() {
        let file = PathBuf::from(format!("{}.ply", e.name));
        ply::save_ply(&e.mesh, &base.join(&file))?;
        list.push(ManifestEntry {
            name: e.name.clone(),
            mesh_path: file,
        });
    }
    let text = serde_json::to_string_pretty(&list).map_err(|e| RefModelError::Manifest(e.to_string()))?;
    std::fs::write(manifest, text)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    /// Observations with fewer valid points are rejected.
    pub min_points: usize,
    /// Upper bound on observation points used for the cost.
    pub max_samples: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            min_points: 100,
            max_samples: 2000,
        }
    }
}

/// Centroid-aligned mean nearest-neighbor distance from the (subsampled)
/// observation to each library mesh; returns the index with the lowest cost
/// (lowest index on ties) together with all costs.
pub fn select_reference<T: Real>(
    library: &ModelLibrary<T>,
    observation: &Observation<T>,
    cfg: &SelectionConfig,
) -> Result<(usize, Vec<T>), RefModelError> {
    let pts: Vec<Vector3<T>> = observation.points.iter().flatten().copied().collect();
    if pts.len() < cfg.min_points.max(1) {
        return Err(RefModelError::TooFewPoints {
            found: pts.len(),
            required: cfg.min_points.max(1),
        });
    }
    let stride = pts.len().div_ceil(cfg.max_samples.max(1));
    let sample: Vec<Vector3<T>> = pts.into_iter().step_by(stride).collect();
    let obs_centroid = sample.iter().fold(Vector3::zeros(), |a, p| a + p) / T::from_usize_lossy(sample.len());

    let costs: Vec<T> = library
        .entries()
        .par_iter()
        .map(|e| {
            let c = e.mesh.centroid().unwrap_or_else(Vector3::zeros);
            let (lo, hi) = e.mesh.bounding_box().unwrap_or((c, c));
            let cell = ((hi - lo).max() / T::lit(32.0)).max(T::lit(1e-6));
            let hash = PointHash::new(e.mesh.vertices().to_vec(), cell);
            let total = sample.iter().fold(T::zero(), |acc, q| {
                let aligned = q - obs_centroid + c;
                acc + hash.nearest(&aligned).map(|(_, d)| d).unwrap_or(T::zero())
            });
            total / T::from_usize_lossy(sample.len())
        })
        .collect();
    let mut best = 0;
    for (i, c) in costs.iter().enumerate() {
        if *c < costs[best] {
            best = i;
        }
    }
    Ok((best, costs))
}
