use nalgebra::Vector3;
use rayon::prelude::*;

use super::mc_tables::{EDGE_TABLE, TRI_TABLE};
use super::{RefModelError, TsdfVolume};
use crate::geometry::TriangleMesh;
use crate::Real;

const CORNER_OFFSETS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGE_CORNERS: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Extracts the zero iso-surface of a TSDF volume with Marching Cubes.
///
/// Only cells whose 8 corners all carry positive weight are polygonized.
/// Vertices are shared between neighboring cells (one per crossed lattice
/// edge), placed by linear interpolation, and carry the normalized TSDF
/// gradient as normal. Output order is independent of thread scheduling.
pub fn extract_mesh<T: Real>(volume: &TsdfVolume<T>) -> Result<TriangleMesh<T>, RefModelError> {
    let [nx, ny, nz] = volume.dims();
    let values = volume.values();
    let weights = volume.weights();

    // lattice edge key: 3 * (lower voxel index) + axis
    let edge_key = |ci: usize, cj: usize, ck: usize, e: usize| -> usize {
        let [a, b] = EDGE_CORNERS[e];
        let (oa, ob) = (CORNER_OFFSETS[a], CORNER_OFFSETS[b]);
        let axis = (0..3).find(|&k| oa[k] != ob[k]).unwrap_or(0);
        let lo = [0, 1, 2].map(|k| oa[k].min(ob[k]));
        3 * volume.index(ci + lo[0], cj + lo[1], ck + lo[2]) + axis
    };

    let slabs: Vec<Vec<[usize; 3]>> = (0..nz - 1)
        .into_par_iter()
        .map(|ck| {
            let mut tris = Vec::new();
            for cj in 0..ny - 1 {
                for ci in 0..nx - 1 {
                    let mut case = 0usize;
                    let mut observed = true;
                    for (c, off) in CORNER_OFFSETS.iter().enumerate() {
                        let idx = volume.index(ci + off[0], cj + off[1], ck + off[2]);
                        if weights[idx] <= T::zero() {
                            observed = false;
                            break;
                        }
                        if values[idx] < T::zero() {
                            case |= 1 << c;
                        }
                    }
                    if !observed || EDGE_TABLE[case] == 0 {
                        continue;
                    }
                    let row = &TRI_TABLE[case];
                    let mut t = 0;
                    while t + 2 < 16 && row[t] >= 0 {
                        // the table winds clockwise seen from the positive side
                        tris.push([
                            edge_key(ci, cj, ck, row[t] as usize),
                            edge_key(ci, cj, ck, row[t + 2] as usize),
                            edge_key(ci, cj, ck, row[t + 1] as usize),
                        ]);
                        t += 3;
                    }
                }
            }
            tris
        })
        .collect();

    let mut key_to_vertex = vec![u32::MAX; 3 * values.len()];
    let mut keys = Vec::new();
    let mut triangles = Vec::with_capacity(slabs.iter().map(Vec::len).sum());
    for tri in slabs.into_iter().flatten() {
        let mut out = [0usize; 3];
        for (o, &k) in out.iter_mut().zip(&tri) {
            if key_to_vertex[k] == u32::MAX {
                key_to_vertex[k] = keys.len() as u32;
                keys.push(k);
            }
            *o = key_to_vertex[k] as usize;
        }
        triangles.push(out);
    }
    if triangles.is_empty() {
        return Err(RefModelError::NoSurface);
    }

    let (vertices, normals): (Vec<_>, Vec<_>) = keys
        .par_iter()
        .map(|&key| {
            let (voxel, axis) = (key / 3, key % 3);
            let a = [voxel % nx, (voxel / nx) % ny, voxel / (nx * ny)];
            let mut b = a;
            b[axis] += 1;
            let va = volume.value(a[0], a[1], a[2]);
            let vb = volume.value(b[0], b[1], b[2]);
            let denom = va - vb;
            let t = if denom != T::zero() { (va / denom).clamp(T::zero(), T::one()) } else { T::lit(0.5) };
            let pa = volume.position_of(a[0], a[1], a[2]);
            let pb = volume.position_of(b[0], b[1], b[2]);
            let p = pa + (pb - pa) * t;
            let g = gradient(volume, a) * (T::one() - t) + gradient(volume, b) * t;
            (p, g.try_normalize(T::lit(1e-20)).unwrap_or_else(Vector3::zeros))
        })
        .unzip();

    let mesh = TriangleMesh::new(vertices, Some(normals), triangles)?;
    Ok(mesh.without_unreferenced())
}

/// Central-difference TSDF gradient (one-sided at the volume boundary),
/// pointing towards increasing distance, i.e. out of the surface.
fn gradient<T: Real>(v: &TsdfVolume<T>, c: [usize; 3]) -> Vector3<T> {
    let dims = v.dims();
    let mut g = Vector3::zeros();
    for axis in 0..3 {
        let mut lo = c;
        let mut hi = c;
        if c[axis] > 0 {
            lo[axis] -= 1;
        }
        if c[axis] + 1 < dims[axis] {
            hi[axis] += 1;
        }
        let span = T::from_usize_lossy(hi[axis] - lo[axis]) * v.voxel_size();
        g[axis] = (v.value(hi[0], hi[1], hi[2]) - v.value(lo[0], lo[1], lo[2])) / span;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::face_normal;

    fn sphere_volume(r: f64, voxel: f64) -> TsdfVolume<f64> {
        let half = r + 6.0 * voxel;
        let n = (2.0 * half / voxel).ceil() as usize + 1;
        TsdfVolume::from_sdf(Vector3::repeat(-half), voxel, [n, n, n], 4.0 * voxel, |p| p.norm() - r).unwrap()
    }

    #[test]
    fn sphere_is_closed_and_accurate() {
        let (r, voxel) = (0.05, 0.004);
        let m = extract_mesh(&sphere_volume(r, voxel)).unwrap();
        assert_eq!(m.euler_characteristic(), 2);
        for (p, n) in m.vertices().iter().zip(m.normals()) {
            assert!((p.norm() - r).abs() < voxel);
            assert!(n.dot(&p.normalize()) > 0.9);
        }
        // winding agrees with the outward normals
        for t in m.triangles() {
            let c = (m.vertices()[t[0]] + m.vertices()[t[1]] + m.vertices()[t[2]]) / 3.0;
            assert!(face_normal(m.vertices(), t).dot(&c) > 0.0);
        }
    }

    #[test]
    fn flipped_volume_flips_normals() {
        let v = sphere_volume(0.03, 0.004);
        let a = extract_mesh(&v).unwrap();
        let b = extract_mesh(&v.negated()).unwrap();
        assert_eq!(a.len(), b.len());
        let mut pa: Vec<_> = a.vertices().iter().zip(a.normals()).map(|(p, n)| (p.x, p.y, p.z, n)).collect();
        let mut pb: Vec<_> = b.vertices().iter().zip(b.normals()).map(|(p, n)| (p.x, p.y, p.z, n)).collect();
        let key = |x: &(f64, f64, f64, &Vector3<f64>)| (x.0, x.1, x.2);
        pa.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
        pb.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
        for (x, y) in pa.iter().zip(&pb) {
            assert!((x.0 - y.0).abs() < 1e-12 && (x.1 - y.1).abs() < 1e-12 && (x.2 - y.2).abs() < 1e-12);
            assert!((x.3 + y.3).norm() < 1e-9);
        }
    }

    #[test]
    fn uniform_volume_has_no_surface() {
        let v = TsdfVolume::from_sdf(Vector3::zeros(), 0.01, [5, 5, 5], 0.05, |_| 0.05f64).unwrap();
        assert!(matches!(extract_mesh(&v), Err(RefModelError::NoSurface)));
    }
}
