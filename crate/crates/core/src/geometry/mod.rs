//! SE(3) arithmetic, point clouds, neighbor search and local PCA geometry.

mod cloud;
mod kdtree;
mod pose;

use thiserror::Error;

pub use cloud::{
    farthest_point_sample, knn_indices, local_frames, pca_normals, LocalFrame, NeighborTable,
    PointCloud, DEGENERATE_RANK_TOL,
};
pub use kdtree::KdTree;
pub use pose::{
    hat, random_in_ball, random_unit_vector, rotation_angle, rotation_error_deg, se3_exp,
    se3_log, so3_exp, translation_error, vee, LogError, Pose, Twist, NEAR_PI_TRACE_MARGIN,
    SMALL_ANGLE,
};

pub type Vec3 = nalgebra::Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("need more than {k} points for a {k}-neighborhood, got {points}")]
    TooFewPoints { points: usize, k: usize },
    #[error("PCA needs at least 3 neighbors, got {k}")]
    NeighborhoodTooSmall { k: usize },
    #[error("{labels} labels for {points} points")]
    LabelCount { points: usize, labels: usize },
}
