//! Vector-channel graph convolution encoder.
//!
//! A layer maps per-point channels `f` (N x C_in vectors) to
//! `σ(f W + Σ_k (f_k - f) W_k)`, where the weight matrices mix channels only and
//! `σ` is the vector rectifier: for each output channel a direction
//! `q_c = Σ_d f_d D[d, c]` is formed and the component of `f_c` along `-q_c` is
//! removed when `⟨f_c, q_c⟩ < 0`. All three operations commute with rotations,
//! so the encoder is SO(3)-equivariant in its channels and passes coordinates
//! through untouched.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{FeatureCloud, FeatureError};
use crate::geometry::{knn_indices, local_frames, NeighborTable, PointCloud, Vec3};

pub type Matrix = DMatrix<f64>;

/// Norm guard for the rectifier direction.
pub const DIRECTION_NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    /// C_in x C_out
    pub self_weight: Matrix,
    /// C_in x C_out
    pub neighbor_weight: Matrix,
    /// C_out x C_out
    pub directions: Matrix,
}

impl LayerWeights {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        Self {
            self_weight: Matrix::zeros(c_in, c_out),
            neighbor_weight: Matrix::zeros(c_in, c_out),
            directions: Matrix::zeros(c_out, c_out),
        }
    }

    pub fn c_in(&self) -> usize {
        self.self_weight.nrows()
    }

    pub fn c_out(&self) -> usize {
        self.self_weight.ncols()
    }

    fn check(&self) -> Result<(), FeatureError> {
        let (ci, co) = self.self_weight.shape();
        if self.neighbor_weight.shape() != (ci, co) || self.directions.shape() != (co, co) {
            return Err(FeatureError::ShapeMismatch(format!(
                "layer shapes self {:?}, neighbor {:?}, directions {:?}",
                self.self_weight.shape(),
                self.neighbor_weight.shape(),
                self.directions.shape()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub layers: Vec<LayerWeights>,
    /// Neighbor count for both the seed normals and the graph.
    pub k: usize,
}

impl EncoderWeights {
    /// Default desk-scale architecture: channels 1 -> 8 -> 16 -> 16, k = 16.
    pub const DEFAULT_CHANNELS: [usize; 4] = [1, 8, 16, 16];
    pub const DEFAULT_K: usize = 16;

    pub fn zeros(channels: &[usize], k: usize) -> Self {
        Self {
            layers: channels
                .windows(2)
                .map(|w| LayerWeights::zeros(w[0], w[1]))
                .collect(),
            k,
        }
    }

    /// Gaussian init with standard deviation `1/sqrt(fan_in)` per matrix.
    pub fn random<R: Rng + ?Sized>(channels: &[usize], k: usize, rng: &mut R) -> Self {
        let mut gauss = |rows: usize, cols: usize, fan_in: usize| {
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).unwrap();
            Matrix::from_fn(rows, cols, |_, _| normal.sample(rng))
        };
        let layers = channels
            .windows(2)
            .map(|w| LayerWeights {
                self_weight: gauss(w[0], w[1], w[0]),
                neighbor_weight: gauss(w[0], w[1], w[0] * k),
                directions: gauss(w[1], w[1], w[1]),
            })
            .collect();
        Self { layers, k }
    }

    /// Channel widths `[1, c_1, ..., c_L]`.
    pub fn channels(&self) -> Vec<usize> {
        let mut out = vec![self.layers.first().map_or(1, |l| l.c_in())];
        out.extend(self.layers.iter().map(|l| l.c_out()));
        out
    }

    pub fn output_channels(&self) -> usize {
        self.layers.last().map_or(1, |l| l.c_out())
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.self_weight.len() + l.neighbor_weight.len() + l.directions.len())
            .sum()
    }

    /// Flattened parameter view, layer by layer: self, neighbor, directions.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.self_weight.iter());
            out.extend(l.neighbor_weight.iter());
            out.extend(l.directions.iter());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_params());
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for m in [&mut l.self_weight, &mut l.neighbor_weight, &mut l.directions] {
                for v in m.iter_mut() {
                    *v = it.next().unwrap();
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.layers.is_empty() {
            return Err(FeatureError::ShapeMismatch("encoder has no layers".into()));
        }
        if self.layers[0].c_in() != 1 {
            return Err(FeatureError::ShapeMismatch(format!(
                "first layer takes {} channels, expected the single seed channel",
                self.layers[0].c_in()
            )));
        }
        for l in &self.layers {
            l.check()?;
        }
        for w in self.layers.windows(2) {
            if w[0].c_out() != w[1].c_in() {
                return Err(FeatureError::ShapeMismatch(format!(
                    "layer output {} feeds layer input {}",
                    w[0].c_out(),
                    w[1].c_in()
                )));
            }
        }
        if self.params().iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::ShapeMismatch("non-finite weight".into()));
        }
        Ok(())
    }
}

/// Rectifier applied per point over `n_channels` channels.
pub fn vn_nonlinearity(channels: &[Vec3], n_channels: usize, directions: &Matrix) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(channels.len());
    for row in channels.chunks_exact(n_channels) {
        for c in 0..n_channels {
            let q: Vec3 = row
                .iter()
                .enumerate()
                .map(|(d, f)| f * directions[(d, c)])
                .sum();
            out.push(rectify(&row[c], &q));
        }
    }
    out
}

fn rectify(f: &Vec3, q: &Vec3) -> Vec3 {
    if f.dot(q) >= 0.0 {
        *f
    } else {
        let u = q / q.norm().max(DIRECTION_NORM_EPS);
        f - u * f.dot(&u)
    }
}

/// `f W + Σ_k (f_k - f) W_k` for every point.
fn linear_part(input: &[Vec3], neighbors: &NeighborTable, layer: &LayerWeights) -> Vec<Vec3> {
    let (ci, co) = (layer.c_in(), layer.c_out());
    let n = input.len() / ci;
    let mut pre = vec![Vec3::zeros(); n * co];
    let mut diff = vec![Vec3::zeros(); ci];
    for i in 0..n {
        let fi = &input[i * ci..(i + 1) * ci];
        diff.iter_mut().for_each(|d| *d = Vec3::zeros());
        for &j in neighbors.row(i) {
            let fj = &input[j * ci..(j + 1) * ci];
            for a in 0..ci {
                diff[a] += fj[a] - fi[a];
            }
        }
        let out = &mut pre[i * co..(i + 1) * co];
        for (b, o) in out.iter_mut().enumerate() {
            for a in 0..ci {
                *o += fi[a] * layer.self_weight[(a, b)] + diff[a] * layer.neighbor_weight[(a, b)];
            }
        }
    }
    pre
}

/// One graph convolution. Coordinates and labels pass through.
pub fn graph_conv_layer(
    fc: &FeatureCloud,
    neighbors: &NeighborTable,
    layer: &LayerWeights,
) -> Result<FeatureCloud, FeatureError> {
    layer.check()?;
    if fc.n_channels() != layer.c_in() {
        return Err(FeatureError::ShapeMismatch(format!(
            "cloud has {} channels, layer expects {}",
            fc.n_channels(),
            layer.c_in()
        )));
    }
    if neighbors.len() != fc.len() {
        return Err(FeatureError::ShapeMismatch(format!(
            "neighbor table has {} rows for {} points",
            neighbors.len(),
            fc.len()
        )));
    }
    let pre = linear_part(fc.all_channels(), neighbors, layer);
    let out = vn_nonlinearity(&pre, layer.c_out(), &layer.directions);
    FeatureCloud::new(fc.points().to_vec(), out, layer.c_out(), fc.labels().to_vec())
}

/// Output squashing `f / (1 + |f|)`.
pub fn normalize_channel(f: &Vec3) -> Vec3 {
    f / (1.0 + f.norm())
}

/// Intermediate values of one layer, kept for reverse accumulation.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub input: Vec<Vec3>,
    pub pre: Vec<Vec3>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    pub neighbors: NeighborTable,
    pub layers: Vec<LayerTrace>,
    /// Final layer output before squashing.
    pub raw_output: Vec<Vec3>,
}

fn seed_channel(cloud: &PointCloud, k: usize) -> Result<Vec<Vec3>, FeatureError> {
    Ok(local_frames(cloud, k)?
        .into_iter()
        .map(|f| if f.degenerate { Vec3::zeros() } else { f.normal })
        .collect())
}

pub fn encoder_forward_traced(
    cloud: &PointCloud,
    weights: &EncoderWeights,
) -> Result<(FeatureCloud, EncoderTrace), FeatureError> {
    weights.validate()?;
    let neighbors = knn_indices(cloud.points(), weights.k)?;
    let mut current = seed_channel(cloud, weights.k.max(3))?;
    let mut layers = Vec::with_capacity(weights.layers.len());
    for layer in &weights.layers {
        let pre = linear_part(&current, &neighbors, layer);
        let out = vn_nonlinearity(&pre, layer.c_out(), &layer.directions);
        layers.push(LayerTrace {
            input: std::mem::replace(&mut current, out),
            pre,
        });
    }
    let channels = current.iter().map(normalize_channel).collect();
    let fc = FeatureCloud::new(
        cloud.points().to_vec(),
        channels,
        weights.output_channels(),
        cloud.labels().to_vec(),
    )?;
    Ok((
        fc,
        EncoderTrace {
            neighbors,
            layers,
            raw_output: current,
        },
    ))
}

/// Seeds one channel with oriented PCA normals, runs every layer, squashes.
pub fn encoder_forward(
    cloud: &PointCloud,
    weights: &EncoderWeights,
) -> Result<FeatureCloud, FeatureError> {
    encoder_forward_traced(cloud, weights).map(|(fc, _)| fc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::apply_pose_features;
    use crate::geometry::{random_unit_vector, se3_exp, Pose, Twist};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob(n: usize, rng: &mut ChaCha8Rng) -> PointCloud {
        let axes = Vec3::new(0.5, 0.3, 0.2);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    let d = random_unit_vector(rng).component_mul(&axes);
                    d * (1.0 + 0.2 * (3.0 * d.x).sin())
                })
                .collect(),
        )
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        se3_exp(&Twist::new(
            Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            random_unit_vector(rng) * rng.gen_range(0.0..3.0),
        ))
    }

    fn mat(rows: usize, cols: usize, v: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn rectifier_aligned_direction_passes_through() {
        let f = vec![Vec3::new(0.3, -1.2, 0.5)];
        assert_eq!(vn_nonlinearity(&f, 1, &mat(1, 1, &[1.0])), f);
    }

    #[test]
    fn rectifier_removes_opposing_component() {
        // q = -f: f - <f, q^> q^ = (1,0,0) - (-1)(-1,0,0) = 0
        let out = vn_nonlinearity(&[Vec3::x()], 1, &mat(1, 1, &[-1.0]));
        assert_eq!(out[0], Vec3::zeros());
        // Only the part along q is removed.
        let out = vn_nonlinearity(
            &[Vec3::new(1.0, 1.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)],
            2,
            &mat(2, 2, &[0.0, 0.0, 1.0, 1.0]),
        );
        // channel 0 direction: q_0 = f_1 = (-1,0,0); <f_0, q_0> < 0 -> (0, 1, 0)
        assert!((out[0] - Vec3::y()).norm() < 1e-15);
        assert_eq!(out[1], Vec3::new(-1.0, 0.0, 0.0));
    }

    #[test]
    fn rectifier_is_rotation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = 5;
        let dirs = Matrix::from_fn(c, c, |_, _| rng.gen_range(-1.0..1.0));
        let f: Vec<Vec3> = (0..40 * c).map(|_| random_in_box(&mut rng)).collect();
        let pose = random_pose(&mut rng);
        let rotated: Vec<Vec3> = f.iter().map(|v| pose.rotate(v)).collect();
        let a = vn_nonlinearity(&rotated, c, &dirs);
        let b = vn_nonlinearity(&f, c, &dirs);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - pose.rotate(y)).norm() < 1e-9);
        }
    }

    fn random_in_box(rng: &mut ChaCha8Rng) -> Vec3 {
        Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn zero_channels_stay_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cloud = blob(60, &mut rng);
        let fc = FeatureCloud::zeros(&cloud, 3).unwrap();
        let nb = knn_indices(cloud.points(), 6).unwrap();
        let w = EncoderWeights::random(&[3, 4], 6, &mut rng);
        let out = graph_conv_layer(&fc, &nb, &w.layers[0]).unwrap();
        assert!(out.all_channels().iter().all(|v| *v == Vec3::zeros()));
    }

    #[test]
    fn identity_layer_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cloud = blob(60, &mut rng);
        let fc = crate::features::handcrafted_features(&cloud, 8, 2).unwrap();
        let nb = knn_indices(cloud.points(), 6).unwrap();
        let layer = LayerWeights {
            self_weight: Matrix::identity(2, 2),
            neighbor_weight: Matrix::zeros(2, 2),
            directions: Matrix::identity(2, 2),
        };
        assert_eq!(graph_conv_layer(&fc, &nb, &layer).unwrap(), fc);
    }

    #[test]
    fn layer_rejects_wrong_channel_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cloud = blob(30, &mut rng);
        let fc = FeatureCloud::zeros(&cloud, 2).unwrap();
        let nb = knn_indices(cloud.points(), 4).unwrap();
        let layer = LayerWeights::zeros(3, 4);
        assert!(matches!(
            graph_conv_layer(&fc, &nb, &layer),
            Err(FeatureError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn layer_is_se3_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let cloud = blob(80, &mut rng);
            let fc = crate::features::handcrafted_features(&cloud, 8, 2).unwrap();
            let w = EncoderWeights::random(&[2, 6], 8, &mut rng);
            let pose = random_pose(&mut rng);
            let moved = apply_pose_features(&pose, &fc);
            let nb = knn_indices(fc.points(), 8).unwrap();
            let nb_moved = knn_indices(moved.points(), 8).unwrap();
            let a = graph_conv_layer(&moved, &nb_moved, &w.layers[0]).unwrap();
            let b = apply_pose_features(&pose, &graph_conv_layer(&fc, &nb, &w.layers[0]).unwrap());
            assert!(a.max_abs_diff(&b) < 1e-6);
        }
    }

    #[test]
    fn zero_encoder_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cloud = blob(50, &mut rng);
        let w = EncoderWeights::zeros(&EncoderWeights::DEFAULT_CHANNELS, 8);
        let fc = encoder_forward(&cloud, &w).unwrap();
        assert_eq!(fc.n_channels(), 16);
        assert!(fc.all_channels().iter().all(|v| *v == Vec3::zeros()));
    }

    #[test]
    fn encoder_is_deterministic_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cloud = blob(120, &mut rng);
        let w = EncoderWeights::random(&EncoderWeights::DEFAULT_CHANNELS, 16, &mut rng);
        let a = encoder_forward(&cloud, &w).unwrap();
        let b = encoder_forward(&cloud, &w).unwrap();
        assert_eq!(a, b);
        assert!(a.all_channels().iter().all(|v| v.norm() < 1.0));
        assert_eq!(a.labels(), cloud.labels());
    }

    #[test]
    fn encoder_commutes_with_point_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cloud = blob(90, &mut rng);
        let w = EncoderWeights::random(&[1, 4, 4], 8, &mut rng);
        let mut perm: Vec<usize> = (0..cloud.len()).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let a = encoder_forward(&cloud.select(&perm), &w).unwrap();
        let b = encoder_forward(&cloud, &w).unwrap().permuted(&perm);
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn weight_validation() {
        let mut w = EncoderWeights::zeros(&[1, 4, 4], 8);
        assert!(w.validate().is_ok());
        w.layers[1] = LayerWeights::zeros(3, 4);
        assert!(w.validate().is_err());
        let w = EncoderWeights::zeros(&[2, 4], 8);
        assert!(w.validate().is_err());
    }

    #[test]
    fn params_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = EncoderWeights::random(&[1, 3, 5], 4, &mut rng);
        let mut z = EncoderWeights::zeros(&[1, 3, 5], 4);
        z.set_params(&w.params());
        assert_eq!(z, w);
        assert_eq!(w.num_params(), 3 + 3 + 9 + 15 + 15 + 25);
    }
}
