//! Uniform hash grid for radius and nearest-neighbor queries on point sets.

use std::collections::HashMap;

use nalgebra::Vector3;

use crate::Real;

type CellKey = [i64; 3];

#[derive(Debug, Clone)]
pub struct PointHash<T: Real> {
    cell: T,
    points: Vec<Vector3<T>>,
    cells: HashMap<CellKey, Vec<usize>>,
    lo: CellKey,
    hi: CellKey,
}

impl<T: Real> PointHash<T> {
    /// Buckets `points` into cubes of edge `cell` (must be positive).
    pub fn new(points: Vec<Vector3<T>>, cell: T) -> Self {
        assert!(cell > T::zero(), "hash cell size must be positive");
        let mut cells: HashMap<CellKey, Vec<usize>> = HashMap::new();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for (i, p) in points.iter().enumerate() {
            let k = key(p, cell);
            for a in 0..3 {
                lo[a] = lo[a].min(k[a]);
                hi[a] = hi[a].max(k[a]);
            }
            cells.entry(k).or_default().push(i);
        }
        Self {
            cell,
            points,
            cells,
            lo,
            hi,
        }
    }

    pub fn points(&self) -> &[Vector3<T>] {
        &self.points
    }

    /// Indices of all points within `radius` of `p`, in ascending index order.
    pub fn within_radius(&self, p: &Vector3<T>, radius: T) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(p, radius, |i, _| out.push(i));
        out.sort_unstable();
        out
    }

    /// Calls `f(index, squared distance)` for every point within `radius` of
    /// `p`, in unspecified order.
    pub fn for_each_within(&self, p: &Vector3<T>, radius: T, mut f: impl FnMut(usize, T)) {
        let reach = (radius / self.cell).ceil().to_f64_lossy() as i64;
        let c = key(p, self.cell);
        let r2 = radius * radius;
        for dz in -reach..=reach {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    if let Some(bucket) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        for &i in bucket {
                            let d = (self.points[i] - p).norm_squared();
                            if d <= r2 {
                                f(i, d);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Nearest stored point and its distance; ties go to the lower index.
    pub fn nearest(&self, p: &Vector3<T>) -> Option<(usize, T)> {
        if self.points.is_empty() {
            return None;
        }
        let c = key(p, self.cell);
        // rings beyond this cannot add cells that hold points
        let max_ring = (0..3)
            .map(|a| (c[a] - self.lo[a]).abs().max((c[a] - self.hi[a]).abs()))
            .max()
            .unwrap_or(0);
        let mut best: Option<(usize, T)> = None;
        for ring in 0..=max_ring {
            for dz in -ring..=ring {
                for dy in -ring..=ring {
                    for dx in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        let Some(bucket) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else { continue };
                        for &i in bucket {
                            let d = (self.points[i] - p).norm_squared();
                            let better = match best {
                                None => true,
                                Some((bi, bd)) => d < bd || (d == bd && i < bi),
                            };
                            if better {
                                best = Some((i, d));
                            }
                        }
                    }
                }
            }
            if let Some((_, bd)) = best {
                // every unvisited cell is at least `ring` cells away
                let reach = self.cell * T::from_usize_lossy(ring as usize);
                if bd <= reach * reach {
                    break;
                }
            }
        }
        best.map(|(i, d)| (i, d.sqrt()))
    }
}

#[inline]
fn key<T: Real>(p: &Vector3<T>, cell: T) -> CellKey {
    [0, 1, 2].map(|a| (p[a] / cell).floor().to_f64_lossy() as i64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vector3<f64>> = (0..500)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.1..0.1)))
            .collect();
        let h = PointHash::new(pts.clone(), 0.07);
        for _ in 0..200 {
            let q = Vector3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-0.5..0.5));
            let (bi, bd) = h.nearest(&q).unwrap();
            let brute = pts
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (p - q).norm()))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap();
            assert_eq!(bi, brute.0);
            assert!((bd - brute.1).abs() < 1e-12);
            let r = 0.15;
            let expect: Vec<usize> = (0..pts.len()).filter(|&i| (pts[i] - q).norm() <= r).collect();
            assert_eq!(h.within_radius(&q, r), expect);
        }
    }
}
