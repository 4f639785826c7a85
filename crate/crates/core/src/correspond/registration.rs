use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::CorrespondError;
use crate::geometry::RigidTransform;
use crate::spatial::PointHash;
use crate::Real;

/// Prerejective RANSAC settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RansacConfig {
    /// Minimum ratio between corresponding edge lengths of a sample triangle.
    pub similarity: f64,
    /// Inlier distance (m). `None` resolves to 1.5 grid spacings.
    pub inlier_distance: Option<f64>,
    /// A hypothesis needs at least this fraction of inliers.
    pub min_inlier_fraction: f64,
    pub max_iterations: usize,
    pub seed: u64,
    /// Surface distance (m) for overlap scoring.
    pub overlap_distance: f64,
    /// Spacing (m) of the surface samples scored for overlap. Dense samples
    /// are what tell apart similar parts of different length.
    pub overlap_spacing: f64,
    /// Largest normal disagreement (degrees) for overlap scoring.
    pub max_normal_angle_deg: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            similarity: 0.9,
            inlier_distance: None,
            min_inlier_fraction: 0.25,
            max_iterations: 50_000,
            seed: 0,
            overlap_distance: 0.01,
            overlap_spacing: 0.008,
            max_normal_angle_deg: 30.0,
        }
    }
}

/// Result of [`fixed_registration`]: `transform` maps model to observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Registration<T: Real> {
    pub transform: RigidTransform<T>,
    /// Indices into the match list.
    pub inliers: Vec<usize>,
    pub inlier_fraction: T,
    /// Hypotheses that survived prerejection.
    pub hypotheses: usize,
}

/// Least-squares rigid transform mapping `src[i]` onto `dst[i]`.
pub fn kabsch<T: Real>(src: &[Vector3<T>], dst: &[Vector3<T>]) -> Option<RigidTransform<T>> {
    if src.len() != dst.len() || src.len() < 3 {
        return None;
    }
    let n = T::from_usize_lossy(src.len());
    let cs = src.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let cd = dst.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let v = vt.transpose();
    let mut fix = Matrix3::identity();
    if (v * u.transpose()).determinant() < T::zero() {
        fix[(2, 2)] = -T::one();
    }
    let rotation = v * fix * u.transpose();
    if !rotation.iter().all(|x| x.is_finite()) {
        return None;
    }
    Some(RigidTransform {
        rotation,
        translation: cd - rotation * cs,
    })
}

fn edges_similar<T: Real>(a: [Vector3<T>; 3], b: [Vector3<T>; 3], similarity: T) -> bool {
    for (i, j) in [(0, 1), (1, 2), (2, 0)] {
        let la = (a[i] - a[j]).norm();
        let lb = (b[i] - b[j]).norm();
        let (lo, hi) = if la < lb { (la, lb) } else { (lb, la) };
        if !(hi > T::zero()) || lo / hi < similarity {
            return false;
        }
    }
    true
}

fn inliers<T: Real>(tf: &RigidTransform<T>, model: &[Vector3<T>], observed: &[Vector3<T>], pairs: &[(usize, usize)], tol2: T) -> Vec<usize> {
    pairs
        .iter()
        .enumerate()
        .filter(|(_, &(m, o))| (tf.apply(&model[m]) - observed[o]).norm_squared() <= tol2)
        .map(|(k, _)| k)
        .collect()
}

struct Hypothesis<T: Real> {
    score: usize,
    iteration: usize,
    transform: RigidTransform<T>,
}

fn check_inputs<T: Real>(
    model: &[Vector3<T>],
    observed: &[Vector3<T>],
    pairs: &[(usize, usize)],
    cfg: &RansacConfig,
    inlier_distance: T,
) -> Result<(), CorrespondError> {
    if pairs.len() < 3 {
        return Err(CorrespondError::TooFewMatches { found: pairs.len(), required: 3 });
    }
    if let Some(&(m, o)) = pairs.iter().find(|&&(m, o)| m >= model.len() || o >= observed.len()) {
        return Err(CorrespondError::IndexOutOfRange(m.max(o)));
    }
    if !(inlier_distance > T::zero()) || cfg.similarity <= 0.0 || cfg.similarity > 1.0 {
        return Err(CorrespondError::InvalidConfig("RANSAC thresholds out of range"));
    }
    Ok(())
}

/// Samples triangles of pairs from a seeded stream, prerejects those whose
/// edge lengths disagree and scores the rest. Returns up to `keep`
/// hypotheses, best first (highest score, earliest iteration on ties), each
/// at least [`DISTINCT_ANGLE`] or [`DISTINCT_OFFSET`] away from every better
/// one, and the number scored.
fn consensus<T: Real>(
    model: &[Vector3<T>],
    observed: &[Vector3<T>],
    pairs: &[(usize, usize)],
    cfg: &RansacConfig,
    min_area: T,
    keep: usize,
    score: impl Fn(&RigidTransform<T>) -> usize + Sync,
) -> (Vec<Hypothesis<T>>, usize) {
    let n = pairs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples: Vec<[usize; 3]> = (0..cfg.max_iterations)
        .map(|_| {
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            let mut c = rng.random_range(0..n - 2);
            for x in [a.min(b), a.max(b)] {
                if c >= x {
                    c += 1;
                }
            }
            [a, b, c]
        })
        .collect();
    let similarity = T::lit(cfg.similarity);
    let scored: Vec<Option<Hypothesis<T>>> = samples
        .par_iter()
        .enumerate()
        .map(|(iteration, s)| {
            let src = s.map(|k| model[pairs[k].0]);
            let dst = s.map(|k| observed[pairs[k].1]);
            if !edges_similar(src, dst, similarity) {
                return None;
            }
            let area = (src[1] - src[0]).cross(&(src[2] - src[0])).norm();
            if !(area > min_area) {
                return None;
            }
            let transform = kabsch(&src, &dst)?;
            Some(Hypothesis {
                score: score(&transform),
                iteration,
                transform,
            })
        })
        .collect();
    let mut ranked: Vec<Hypothesis<T>> = scored.into_iter().flatten().collect();
    let hypotheses = ranked.len();
    ranked.sort_by(|a, b| b.score.cmp(&a.score).then(a.iteration.cmp(&b.iteration)));
    let (angle, offset) = (T::lit(DISTINCT_ANGLE.to_radians()), T::lit(DISTINCT_OFFSET));
    let mut kept: Vec<Hypothesis<T>> = Vec::with_capacity(keep);
    for h in ranked {
        if kept.len() == keep {
            break;
        }
        let duplicate = kept.iter().any(|k| {
            k.transform.rotation_angle_to(&h.transform) < angle && k.transform.translation_distance_to(&h.transform) < offset
        });
        if !duplicate {
            kept.push(h);
        }
    }
    (kept, hypotheses)
}

/// Rigid model-to-observation alignment from putative `(model, observed)`
/// keypoint pairs. Samples are drawn from a seeded stream so the result does
/// not depend on thread scheduling; the best hypothesis (most inliers, earliest
/// on ties) is refined by least squares over its inliers.
pub fn fixed_registration<T: Real>(
    model: &[Vector3<T>],
    observed: &[Vector3<T>],
    pairs: &[(usize, usize)],
    cfg: &RansacConfig,
    inlier_distance: T,
) -> Result<Registration<T>, CorrespondError> {
    check_inputs(model, observed, pairs, cfg, inlier_distance)?;
    let n = pairs.len();
    let tol2 = inlier_distance * inlier_distance;
    let (ranked, hypotheses) = consensus(model, observed, pairs, cfg, tol2, 1, |tf| {
        inliers(tf, model, observed, pairs, tol2).len()
    });
    let best = ranked.into_iter().next().ok_or(CorrespondError::NoConsensus { best: 0, total: n })?;

    let min_count = (cfg.min_inlier_fraction * n as f64).ceil() as usize;
    if best.score < min_count.max(3) {
        return Err(CorrespondError::NoConsensus { best: best.score, total: n });
    }
    let mut tf = best.transform;
    let mut set = inliers(&tf, model, observed, pairs, tol2);
    for _ in 0..3 {
        let src: Vec<_> = set.iter().map(|&k| model[pairs[k].0]).collect();
        let dst: Vec<_> = set.iter().map(|&k| observed[pairs[k].1]).collect();
        let Some(refined) = kabsch(&src, &dst) else { break };
        let next = inliers(&refined, model, observed, pairs, tol2);
        if next.len() < 3 {
            break;
        }
        tf = refined;
        if next == set {
            break;
        }
        set = next;
    }
    Ok(Registration {
        transform: tf,
        inlier_fraction: T::from_usize_lossy(set.len()) / T::from_usize_lossy(n),
        inliers: set,
        hypotheses,
    })
}

/// Oriented cloud with a subset of sample indices.
#[derive(Debug, Clone)]
struct OrientedSide<T: Real> {
    hash: PointHash<T>,
    normals: Vec<Vector3<T>>,
    samples: Vec<usize>,
}

impl<T: Real> OrientedSide<T> {
    fn new(points: Vec<Vector3<T>>, normals: Vec<Vector3<T>>, samples: Vec<usize>, cell: T) -> Result<Self, CorrespondError> {
        if points.len() != normals.len() {
            return Err(CorrespondError::MissingNormals);
        }
        if let Some(&k) = samples.iter().find(|&&k| k >= points.len()) {
            return Err(CorrespondError::IndexOutOfRange(k));
        }
        Ok(Self {
            hash: PointHash::new(points, cell),
            normals,
            samples,
        })
    }

    /// Closest point within `tol` of `q` whose normal agrees with `n`; ties
    /// go to the lower index.
    fn closest(&self, q: &Vector3<T>, n: &Vector3<T>, tol: T, min_cos: T) -> Option<usize> {
        let mut best: Option<(usize, T)> = None;
        self.hash.for_each_within(q, tol, |i, d| {
            if self.normals[i].dot(n) < min_cos {
                return;
            }
            if best.is_none_or(|(bi, bd)| d < bd || (d == bd && i < bi)) {
                best = Some((i, d));
            }
        });
        best.map(|(i, _)| i)
    }
}

/// Two-sided surface agreement between an oriented model cloud and an
/// oriented observed cloud (camera frame, camera at the origin). Under a pose,
/// an observed sample is explained when a model point lies within
/// `tolerance` with a normal within `max_normal_angle` of its own; a model
/// sample facing the camera is explained likewise by an observed point.
/// Counting both directions separates poses that lay a short part of the
/// observation onto a longer part of the model.
#[derive(Debug, Clone)]
pub struct SurfaceOverlap<T: Real> {
    model: OrientedSide<T>,
    observed: OrientedSide<T>,
    tolerance: T,
    min_cos: T,
}

impl<T: Real> SurfaceOverlap<T> {
    /// `model_samples` and `observed_samples` index into their clouds.
    pub fn new(
        model: (Vec<Vector3<T>>, Vec<Vector3<T>>),
        model_samples: Vec<usize>,
        observed: (Vec<Vector3<T>>, Vec<Vector3<T>>),
        observed_samples: Vec<usize>,
        tolerance: T,
        max_normal_angle: T,
    ) -> Result<Self, CorrespondError> {
        if !(tolerance > T::zero()) || !tolerance.is_finite() || !(max_normal_angle >= T::zero()) {
            return Err(CorrespondError::InvalidConfig("overlap tolerance must be positive"));
        }
        Ok(Self {
            model: OrientedSide::new(model.0, model.1, model_samples, tolerance)?,
            observed: OrientedSide::new(observed.0, observed.1, observed_samples, tolerance)?,
            tolerance,
            min_cos: max_normal_angle.cos(),
        })
    }

    /// Largest attainable [`count`](Self::count).
    pub fn samples(&self) -> usize {
        self.model.samples.len() + self.observed.samples.len()
    }

    /// Explained `(model point, observed point)` pairs, model-frame and
    /// camera-frame positions respectively, over every `stride`-th sample.
    fn explained(&self, tf: &RigidTransform<T>, stride: usize) -> Vec<(Vector3<T>, Vector3<T>)> {
        let inv = tf.inverse();
        let (mp, op) = (self.model.hash.points(), self.observed.hash.points());
        let from_observed = self.observed.samples.iter().step_by(stride).filter_map(|&s| {
            let q = inv.apply(&op[s]);
            let n = inv.rotation * self.observed.normals[s];
            self.model
                .closest(&q, &n, self.tolerance, self.min_cos)
                .map(|i| (mp[i], op[s]))
        });
        let from_model = self.model.samples.iter().step_by(stride).filter_map(|&s| {
            let q = tf.apply(&mp[s]);
            let n = tf.rotation * self.model.normals[s];
            if n.dot(&q) >= T::zero() {
                return None;
            }
            self.observed
                .closest(&q, &n, self.tolerance, self.min_cos)
                .map(|i| (mp[s], op[i]))
        });
        from_observed.chain(from_model).collect()
    }

    pub fn count(&self, tf: &RigidTransform<T>) -> usize {
        self.explained(tf, 1).len()
    }
}

/// Hypotheses polished by [`overlap_registration`].
const POLISHED: usize = 8;
const POLISH_ITERS: usize = 8;
/// Hypotheses closer than both of these count as the same pose.
const DISTINCT_ANGLE: f64 = 10.0;
const DISTINCT_OFFSET: f64 = 0.02;
/// Every this many samples enter the ranking of raw hypotheses.
const PRESCREEN_STRIDE: usize = 4;

/// Nearest-point iterations on the explained pairs while their count does
/// not drop.
fn polish<T: Real>(overlap: &SurfaceOverlap<T>, mut tf: RigidTransform<T>) -> (RigidTransform<T>, usize) {
    let mut pairs = overlap.explained(&tf, 1);
    for _ in 0..POLISH_ITERS {
        let (src, dst): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
        let Some(next) = kabsch(&src, &dst) else { break };
        let next_pairs = overlap.explained(&next, 1);
        if next_pairs.len() < pairs.len() {
            break;
        }
        let settled = next.rotation_angle_to(&tf) < T::lit(1e-9) && next.translation_distance_to(&tf) < T::lit(1e-9);
        tf = next;
        pairs = next_pairs;
        if settled {
            break;
        }
    }
    (tf, pairs.len())
}

/// Like [`fixed_registration`], but hypotheses are scored by how many
/// surface samples they explain (see [`SurfaceOverlap`]) instead of by
/// agreeing pairs, and the winner is polished by nearest-point iterations on
/// the explained samples. `pairs` may hold several candidates per observed
/// keypoint. `inlier_fraction` is the explained fraction of all samples.
pub fn overlap_registration<T: Real>(
    model: &[Vector3<T>],
    observed: &[Vector3<T>],
    pairs: &[(usize, usize)],
    cfg: &RansacConfig,
    inlier_distance: T,
    overlap: &SurfaceOverlap<T>,
) -> Result<Registration<T>, CorrespondError> {
    check_inputs(model, observed, pairs, cfg, inlier_distance)?;
    let total = overlap.samples();
    // hypotheses are ranked on a subset of the samples; polishing counts all
    let (ranked, hypotheses) = consensus(model, observed, pairs, cfg, inlier_distance * inlier_distance, POLISHED, |tf| {
        overlap.explained(tf, PRESCREEN_STRIDE).len()
    });
    let min_count = ((cfg.min_inlier_fraction * total as f64).ceil() as usize).max(3);
    // the best raw score may belong to a coarse hypothesis of the wrong pose
    // while a runner-up polishes into the right one
    let (tf, score) = ranked
        .into_iter()
        .map(|h| polish(overlap, h.transform))
        .fold(None, |best: Option<(RigidTransform<T>, usize)>, cand| match best {
            Some(b) if b.1 >= cand.1 => Some(b),
            _ => Some(cand),
        })
        .ok_or(CorrespondError::NoConsensus { best: 0, total })?;
    if score < min_count {
        return Err(CorrespondError::NoConsensus { best: score, total });
    }
    let tol2 = inlier_distance * inlier_distance;
    Ok(Registration {
        inliers: inliers(&tf, model, observed, pairs, tol2),
        transform: tf,
        inlier_fraction: T::from_usize_lossy(score) / T::from_usize_lossy(total.max(1)),
        hypotheses,
    })
}
