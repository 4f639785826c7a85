use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::RefModelError;
use crate::geometry::{anchor_point, StaticGrid, TrilinearAnchor};
use crate::Real;

/// A named point of interest bound to the deformation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PoiDefinition<T: Real> {
    pub name: String,
    pub anchor: TrilinearAnchor<T>,
    pub rest_position: Vector3<T>,
}

/// Record of the POI file: a name and a reference-frame position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoiSpec {
    pub name: String,
    pub position: [f64; 3],
}

/// Anchors `surface_point` to `grid`. Fails if the point leaves the grid box
/// or the name is already taken in `existing`.
pub fn define_poi<T: Real>(
    name: &str,
    surface_point: &Vector3<T>,
    grid: &StaticGrid<T>,
    existing: &[PoiDefinition<T>],
) -> Result<PoiDefinition<T>, RefModelError> {
    if existing.iter().any(|p| p.name == name) {
        return Err(RefModelError::DuplicatePoi(name.to_string()));
    }
    let anchor = anchor_point(surface_point, grid).map_err(|_| RefModelError::PoiOutsideGrid(name.to_string()))?;
    Ok(PoiDefinition {
        name: name.to_string(),
        anchor,
        rest_position: anchor.rest_position(grid),
    })
}

/// Anchors every record of a POI file against `grid`.
pub fn define_pois<T: Real>(specs: &[PoiSpec], grid: &StaticGrid<T>) -> Result<Vec<PoiDefinition<T>>, RefModelError> {
    let mut out = Vec::with_capacity(specs.len());
    for s in specs {
        let p = Vector3::new(T::lit(s.position[0]), T::lit(s.position[1]), T::lit(s.position[2]));
        let def = define_poi(&s.name, &p, grid, &out)?;
        out.push(def);
    }
    Ok(out)
}

pub fn load_poi_file(path: &Path) -> Result<Vec<PoiSpec>, RefModelError> {
    let text = std::fs::read_to_string(path)?;
    let specs: Vec<PoiSpec> =
        serde_json::from_str(&text).map_err(|e| RefModelError::PoiFile(format!("{}: {e}", path.display())))?;
    if let Some(bad) = specs.iter().find(|s| !s.position.iter().all(|c| c.is_finite())) {
        return Err(RefModelError::PoiFile(format!("POI '{}' has a non-finite position", bad.name)));
    }
    Ok(specs)
}

pub fn save_poi_file(specs: &[PoiSpec], path: &Path) -> Result<(), RefModelError> {
    let text = serde_json::to_string_pretty(specs).map_err(|e| RefModelError::PoiFile(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> StaticGrid<f64> {
        StaticGrid::new(Vector3::zeros(), 0.1, [4, 4, 4]).unwrap()
    }

    #[test]
    fn gridpoint_and_center() {
        let g = grid();
        let p = define_poi("a", &Vector3::new(0.1, 0.2, 0.1), &g, &[]).unwrap();
        assert_eq!(p.anchor.weights.iter().filter(|&&w| w == 1.0).count(), 1);
        let q = define_poi("b", &Vector3::new(0.15, 0.15, 0.15), &g, &[p]).unwrap();
        assert!(q.anchor.weights.iter().all(|&w| (w - 0.125).abs() < 1e-12));
    }

    #[test]
    fn reconstruction_and_errors() {
        let g = grid();
        let x = Vector3::new(0.0123, 0.2871, 0.1999);
        let p = define_poi("x", &x, &g, &[]).unwrap();
        assert!((p.rest_position - x).norm() < 1e-9);
        assert!(matches!(define_poi("x", &x, &g, &[p]), Err(RefModelError::DuplicatePoi(_))));
        assert!(matches!(
            define_poi("far", &Vector3::new(1.0, 0.0, 0.0), &g, &[]),
            Err(RefModelError::PoiOutsideGrid(n)) if n == "far"
        ));
    }

    #[test]
    fn poi_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pois.json");
        let specs = vec![PoiSpec { name: "tip".into(), position: [0.1, 0.2, 0.3] }];
        save_poi_file(&specs, &path).unwrap();
        assert_eq!(load_poi_file(&path).unwrap(), specs);
        std::fs::write(&path, r#"[{"name":"a","position":[0,0,0],"extra":1}]"#).unwrap();
        assert!(load_poi_file(&path).is_err());
    }
}
