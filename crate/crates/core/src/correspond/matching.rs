use nalgebra::Vector3;
use rayon::prelude::*;

use super::shot::ShotDescriptor;
use super::CorrespondError;
use crate::geometry::TrilinearAnchor;
use crate::Real;

/// Descriptor match between model keypoint `model` and observed keypoint
/// `observed` (indices into the descriptor slices).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescriptorMatch<T: Real> {
    pub model: usize,
    pub observed: usize,
    pub distance: T,
}

/// Feature pair used by the solver's feature residual. `model_point` is the
/// reference-frame position of `vertex`; `weight` scales the residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureCorrespondence<T: Real> {
    pub vertex: usize,
    pub anchor: TrilinearAnchor<T>,
    pub model_point: Vector3<T>,
    pub observed_point: Vector3<T>,
    pub descriptor_distance: T,
    pub weight: T,
}

/// Nearest-neighbor matching in descriptor space with the ratio test
/// (`best < ratio · second`) and a mutual-best cross-check. Invalid
/// descriptors never match. Output is ordered by model index.
pub fn match_features<T: Real>(
    model: &[ShotDescriptor<T>],
    observed: &[ShotDescriptor<T>],
    ratio: T,
) -> Result<Vec<DescriptorMatch<T>>, CorrespondError> {
    if !(ratio > T::zero()) || ratio > T::one() {
        return Err(CorrespondError::InvalidConfig("ratio must lie in (0, 1]"));
    }
    if model.iter().chain(observed).any(|d| d.bins.len() != model.first().map_or(0, |m| m.bins.len())) {
        return Err(CorrespondError::InvalidConfig("descriptor lengths differ"));
    }
    let dist: Vec<Vec<Option<T>>> = model
        .par_iter()
        .map(|m| {
            observed
                .iter()
                .map(|o| (m.valid && o.valid).then(|| m.distance(o)))
                .collect()
        })
        .collect();

    // best model per observed column, lowest index on ties
    let mut col_best: Vec<Option<(usize, T)>> = vec![None; observed.len()];
    for (i, row) in dist.iter().enumerate() {
        for (j, d) in row.iter().enumerate() {
            if let Some(d) = *d {
                if col_best[j].is_none_or(|(_, b)| d < b) {
                    col_best[j] = Some((i, d));
                }
            }
        }
    }

    let mut out = Vec::new();
    for (i, row) in dist.iter().enumerate() {
        let mut best: Option<(usize, T)> = None;
        let mut second: Option<T> = None;
        for (j, d) in row.iter().enumerate() {
            let Some(d) = *d else { continue };
            match best {
                Some((_, b)) if d >= b => {
                    if second.is_none_or(|s| d < s) {
                        second = Some(d);
                    }
                }
                _ => {
                    second = best.map(|(_, b)| b);
                    best = Some((j, d));
                }
            }
        }
        let Some((j, b)) = best else { continue };
        if let Some(s) = second {
            if !(b < ratio * s) {
                continue;
            }
        }
        if col_best[j].map(|(mi, _)| mi) != Some(i) {
            continue;
        }
        out.push(DescriptorMatch {
            model: i,
            observed: j,
            distance: b,
        });
    }
    Ok(out)
}

/// The `k` nearest valid model descriptors of every valid observed
/// descriptor, without ratio test or cross-check. Output is ordered by
/// observed index, then by distance (lower model index on ties).
pub fn nearest_candidates<T: Real>(
    model: &[ShotDescriptor<T>],
    observed: &[ShotDescriptor<T>],
    k: usize,
) -> Result<Vec<DescriptorMatch<T>>, CorrespondError> {
    if k == 0 {
        return Err(CorrespondError::InvalidConfig("candidate count must be positive"));
    }
    if model.iter().chain(observed).any(|d| d.bins.len() != model.first().map_or(0, |m| m.bins.len())) {
        return Err(CorrespondError::InvalidConfig("descriptor lengths differ"));
    }
    let per_obs: Vec<Vec<DescriptorMatch<T>>> = observed
        .par_iter()
        .enumerate()
        .map(|(j, o)| {
            if !o.valid {
                return Vec::new();
            }
            let mut ds: Vec<(T, usize)> = model
                .iter()
                .enumerate()
                .filter(|(_, m)| m.valid)
                .map(|(i, m)| (m.distance(o), i))
                .collect();
            ds.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
            ds.into_iter()
                .take(k)
                .map(|(distance, model)| DescriptorMatch {
                    model,
                    observed: j,
                    distance,
                })
                .collect()
        })
        .collect();
    Ok(per_obs.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspond::shot::SHOT_LEN;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng) -> ShotDescriptor<f64> {
        let mut v: Vec<f64> = (0..SHOT_LEN).map(|_| rng.random::<f64>()).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        ShotDescriptor { bins: v, radius: 1.0, valid: true }
    }

    #[test]
    fn identical_sets_match_one_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<_> = (0..40).map(|_| random_unit(&mut rng)).collect();
        let m = match_features(&a, &a, 0.8).unwrap();
        // positive random vectors are close to each other, so the ratio test
        // is what makes identity matches stand out (distance 0)
        assert_eq!(m.len(), 40);
        assert!(m.iter().all(|x| x.model == x.observed && x.distance == 0.0));
    }

    #[test]
    fn random_descriptors_rarely_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<_> = (0..200).map(|_| random_unit(&mut rng)).collect();
        let b: Vec<_> = (0..200).map(|_| random_unit(&mut rng)).collect();
        let m = match_features(&a, &b, 0.8).unwrap();
        assert!(m.len() * 20 < 200, "{} spurious matches", m.len());
    }

    #[test]
    fn candidates_are_nearest_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut model: Vec<_> = (0..12).map(|_| random_unit(&mut rng)).collect();
        model[4].valid = false;
        let mut observed: Vec<_> = (0..5).map(|_| random_unit(&mut rng)).collect();
        observed[1].valid = false;
        let c = nearest_candidates(&model, &observed, 3).unwrap();
        assert_eq!(c.len(), 4 * 3);
        for (j, group) in c.chunks(3).enumerate() {
            let o = if j == 0 { 0 } else { j + 1 };
            assert!(group.iter().all(|m| m.observed == o && m.model != 4));
            assert!(group.windows(2).all(|w| w[0].distance <= w[1].distance));
            let others = (0..12)
                .filter(|&i| i != 4 && group.iter().all(|m| m.model != i))
                .map(|i| model[i].distance(&observed[o]));
            assert!(others.fold(f64::INFINITY, f64::min) >= group[2].distance);
        }
        assert!(nearest_candidates(&model, &observed, 0).is_err());
    }

    #[test]
    fn invalid_descriptors_never_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut a: Vec<_> = (0..5).map(|_| random_unit(&mut rng)).collect();
        a[2].valid = false;
        let m = match_features(&a, &a, 0.8).unwrap();
        assert!(m.iter().all(|x| x.model != 2 && x.observed != 2));
        assert!(match_features(&a, &a, 1.5).is_err());
    }
}
