//! Data association between the deformed reference mesh and a depth frame:
//! projective point pairs, SHOT feature matches and the prerejective RANSAC
//! used for the initial rigid alignment.

mod matching;
mod observation;
mod projective;
mod registration;
pub mod shot;

pub use matching::{match_features, nearest_candidates, DescriptorMatch, FeatureCorrespondence};
pub use observation::{make_observation, make_observation_with, Observation, ObservationConfig};
pub use projective::{correspondence_weight, find_projective, Correspondence, WeightCaps};
pub use registration::{fixed_registration, kabsch, overlap_registration, RansacConfig, Registration, SurfaceOverlap};
pub use shot::{compute_shot, uniform_keypoints, voxel_downsample, ShotDescriptor, SHOT_LEN};

use crate::refmodel::RefModelError;

#[derive(Debug, thiserror::Error)]
pub enum CorrespondError {
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("point and normal counts differ")]
    MissingNormals,
    #[error("index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("{found} matches, at least {required} required")]
    TooFewMatches { found: usize, required: usize },
    #[error("no consensus: best hypothesis has {best} of {total} inliers")]
    NoConsensus { best: usize, total: usize },
    #[error(transparent)]
    RefModel(#[from] RefModelError),
}
