//! Direct-sum equivariant point features `x ⊕ f`.
//!
//! Every point carries its coordinate `x` and `C` steerable 3-vector channels
//! `f`. A pose `(R, t)` maps `x -> R x + t` and every channel `f_c -> R f_c`.
//! Channels come either from local PCA geometry ([`handcrafted_features`]) or
//! from the trainable graph encoder ([`encoder_forward`]).

mod encoder;
mod weights_io;

use thiserror::Error;

use crate::geometry::{local_frames, GeometryError, PointCloud, Pose, Vec3};

pub use encoder::{
    encoder_forward, encoder_forward_traced, graph_conv_layer, normalize_channel,
    vn_nonlinearity, EncoderTrace, EncoderWeights, LayerTrace, LayerWeights, Matrix,
    DIRECTION_NORM_EPS,
};
pub use weights_io::{read_weights, write_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("channel count must be at least 1")]
    NoChannels,
    #[error("weight file: {0}")]
    WeightFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Points with `n_channels` steerable vectors and one scalar label each.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCloud {
    points: Vec<Vec3>,
    channels: Vec<Vec3>,
    n_channels: usize,
    labels: Vec<f64>,
}

impl FeatureCloud {
    /// `channels` is row-major: point `i` owns `channels[i*C..(i+1)*C]`.
    pub fn new(
        points: Vec<Vec3>,
        channels: Vec<Vec3>,
        n_channels: usize,
        labels: Vec<f64>,
    ) -> Result<Self, FeatureError> {
        if n_channels == 0 {
            return Err(FeatureError::NoChannels);
        }
        if channels.len() != points.len() * n_channels || labels.len() != points.len() {
            return Err(FeatureError::ShapeMismatch(format!(
                "{} points, {} labels, {} channel vectors for C = {}",
                points.len(),
                labels.len(),
                channels.len(),
                n_channels
            )));
        }
        Ok(Self {
            points,
            channels,
            n_channels,
            labels,
        })
    }

    /// Feature cloud whose channels are all zero.
    pub fn zeros(cloud: &PointCloud, n_channels: usize) -> Result<Self, FeatureError> {
        Self::new(
            cloud.points().to_vec(),
            vec![Vec3::zeros(); cloud.len() * n_channels],
            n_channels,
            cloud.labels().to_vec(),
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn all_channels(&self) -> &[Vec3] {
        &self.channels
    }

    /// Channels of point `i`.
    pub fn channels(&self, i: usize) -> &[Vec3] {
        &self.channels[i * self.n_channels..(i + 1) * self.n_channels]
    }

    pub fn point_cloud(&self) -> PointCloud {
        PointCloud::with_labels(self.points.clone(), self.labels.clone())
            .expect("labels match points")
    }

    /// Reorders rows so that row `i` of the result is row `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let c = self.n_channels;
        Self {
            points: perm.iter().map(|&i| self.points[i]).collect(),
            channels: perm
                .iter()
                .flat_map(|&i| self.channels[i * c..(i + 1) * c].iter().copied())
                .collect(),
            n_channels: c,
            labels: perm.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Largest coordinate or channel difference against `other` (same shape).
    pub fn max_abs_diff(&self, other: &FeatureCloud) -> f64 {
        assert_eq!(self.points.len(), other.points.len());
        assert_eq!(self.n_channels, other.n_channels);
        let pts = self
            .points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| (a - b).amax());
        let chans = self
            .channels
            .iter()
            .zip(&other.channels)
            .map(|(a, b)| (a - b).amax());
        pts.chain(chans).fold(0.0, f64::max)
    }
}

/// `R(x ⊕ f) = Rx + t ⊕ Rf`; labels are untouched.
pub fn apply_pose_features(pose: &Pose, fc: &FeatureCloud) -> FeatureCloud {
    FeatureCloud {
        points: fc.points.iter().map(|p| pose.apply(p)).collect(),
        channels: fc.channels.iter().map(|f| pose.rotate(f)).collect(),
        n_channels: fc.n_channels,
        labels: fc.labels.clone(),
    }
}

/// Length of the handcrafted channels: a unit vector after the encoder's
/// output squashing `f / (1 + |f|)`. Keeps `1 + f·g` within `[0.75, 1.25]`,
/// where tanh is close to linear.
pub const HANDCRAFTED_MAGNITUDE: f64 = 0.5;

/// Training-free channels from local PCA: channel 0 is the oriented normal,
/// channel 1 the oriented middle-variance tangent, the rest zero, all scaled
/// to [`HANDCRAFTED_MAGNITUDE`]. Degenerate neighborhoods get all-zero
/// channels.
pub fn handcrafted_features(
    cloud: &PointCloud,
    k: usize,
    n_channels: usize,
) -> Result<FeatureCloud, FeatureError> {
    if n_channels == 0 {
        return Err(FeatureError::NoChannels);
    }
    let frames = local_frames(cloud, k)?;
    let mut channels = vec![Vec3::zeros(); cloud.len() * n_channels];
    for (i, frame) in frames.iter().enumerate() {
        if frame.degenerate {
            continue;
        }
        channels[i * n_channels] = frame.normal * HANDCRAFTED_MAGNITUDE;
        if n_channels > 1 {
            channels[i * n_channels + 1] = frame.tangent * HANDCRAFTED_MAGNITUDE;
        }
    }
    FeatureCloud::new(
        cloud.points().to_vec(),
        channels,
        n_channels,
        cloud.labels().to_vec(),
    )
}
