//! Unsupervised outer loop: encoder weights are trained through the RKHS
//! distance at the pose the inner loop converged to.
//!
//! Each step registers a batch of pairs with the current encoder, freezes the
//! recovered pose `ĥ` and lengthscale `ℓ̂`, and descends the pair-normalized
//! distance `d / (Σ l_X Σ l_Z)` with respect to the weights. The gradient is
//! accumulated by hand through the kernel sums and the encoder layers. Ground
//! truth poses are sealed in [`GroundTruth`] and only read while computing
//! validation metrics.

use std::sync::atomic::{AtomicU8, AtomicUsize, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::features::{
    encoder_forward, encoder_forward_traced, EncoderTrace, EncoderWeights, FeatureCloud,
    FeatureError, LayerWeights, DIRECTION_NORM_EPS,
};
use crate::geometry::{
    random_in_ball, random_unit_vector, rotation_error_deg, so3_exp, translation_error,
    NeighborTable, Pose, PointCloud, Vec3,
};
use crate::registration::{register, RegistrationConfig, RegistrationError};
use crate::rkhs::{feature_gradients, KernelError, KernelParams};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumSchedule {
    /// Maximum initial rotation per stage, degrees, strictly increasing.
    pub stages: Vec<f64>,
    pub epochs_per_stage: usize,
    /// Promote once the validation rotation error drops below
    /// `stage * promotion_fraction`.
    pub promotion_fraction: f64,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        Self {
            stages: vec![1.0, 10.0, 20.0, 30.0, 45.0],
            epochs_per_stage: 20,
            promotion_fraction: 0.1,
        }
    }
}

impl CurriculumSchedule {
    pub fn new(stages: Vec<f64>, epochs_per_stage: usize) -> Result<Self, TrainError> {
        let s = Self {
            stages,
            epochs_per_stage,
            ..Default::default()
        };
        s.validate()?;
        Ok(s)
    }

    /// Single stage at `max_angle_deg`.
    pub fn direct(max_angle_deg: f64, epochs: usize) -> Result<Self, TrainError> {
        Self::new(vec![max_angle_deg], epochs)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.stages.is_empty() {
            return Err(TrainError::InvalidSchedule("no stages".into()));
        }
        if self.stages.iter().any(|s| !(0.0..=180.0).contains(s)) {
            return Err(TrainError::InvalidSchedule(
                "stage angles must lie in [0, 180]".into(),
            ));
        }
        if self.stages.windows(2).any(|w| w[1] <= w[0]) {
            return Err(TrainError::InvalidSchedule(
                "stages must be strictly increasing".into(),
            ));
        }
        if self.epochs_per_stage == 0 {
            return Err(TrainError::InvalidSchedule("epochs_per_stage is 0".into()));
        }
        Ok(())
    }

    pub fn promotion_threshold(&self, stage_deg: f64) -> f64 {
        stage_deg * self.promotion_fraction
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub outer_lr: f64,
    pub batch_size: usize,
    pub inner: RegistrationConfig,
    pub seed: u64,
    /// Total epoch budget. When set, the last stage keeps training until the
    /// budget is spent, so runs with different schedules see equal compute.
    pub max_epochs: Option<usize>,
    /// Points drawn (independently for X and Z) from each dataset cloud.
    pub points_per_cloud: usize,
    /// Radius of the random translation; 0 gives rotation-only pairs.
    pub translation_radius: f64,
    pub validation_fraction: f64,
    pub validation_pairs_per_shape: usize,
    pub grad_clip: f64,
    /// Encoder widths `[1, c_1, ..., c_L]` and neighbor count for a fresh
    /// encoder.
    pub encoder_channels: Vec<usize>,
    pub k: usize,
    /// Mean per-point norm of the raw encoder output that a fresh encoder is
    /// rescaled to. Matches the handcrafted features at 0.5 after squashing
    /// when set to 1.
    pub init_output_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            outer_lr: 1e-2,
            batch_size: 8,
            inner: RegistrationConfig::default(),
            seed: 0,
            max_epochs: None,
            points_per_cloud: 1024,
            translation_radius: 0.1,
            validation_fraction: 0.2,
            validation_pairs_per_shape: 2,
            grad_clip: 1.0,
            encoder_channels: EncoderWeights::DEFAULT_CHANNELS.to_vec(),
            k: EncoderWeights::DEFAULT_K,
            init_output_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if !(self.outer_lr >= 0.0 && self.outer_lr.is_finite()) {
            return bad("outer_lr must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size is 0");
        }
        if self.points_per_cloud <= self.k {
            return bad("points_per_cloud must exceed k");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        if self.validation_pairs_per_shape == 0 {
            return bad("validation_pairs_per_shape is 0");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive");
        }
        if !(self.init_output_norm > 0.0) {
            return bad("init_output_norm must be positive");
        }
        Ok(())
    }

    /// Seeded random encoder whose output scale is calibrated on `clouds`.
    pub fn initial_weights(&self, clouds: &[PointCloud]) -> Result<EncoderWeights, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_e1c0);
        let mut weights = EncoderWeights::random(&self.encoder_channels, self.k, &mut rng);
        calibrate_output_norm(&mut weights, clouds, self.init_output_norm)?;
        Ok(weights)
    }
}

/// Rescales the last layer so the mean per-point raw output norm over
/// `clouds` equals `target`. Every layer is positively homogeneous in its
/// linear weights, so this scales the raw output exactly.
pub fn calibrate_output_norm(
    weights: &mut EncoderWeights,
    clouds: &[PointCloud],
    target: f64,
) -> Result<(), TrainError> {
    let c = weights.output_channels();
    let (mut total, mut count) = (0.0, 0usize);
    for cloud in clouds {
        let (_, trace) = encoder_forward_traced(cloud, weights)?;
        for row in trace.raw_output.chunks_exact(c) {
            total += row.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
            count += 1;
        }
    }
    let mean = total / count.max(1) as f64;
    if mean > 0.0 {
        let last = weights.layers.last_mut().expect("validated encoder has layers");
        last.self_weight *= target / mean;
        last.neighbor_weight *= target / mean;
    }
    Ok(())
}

/// Random subset of `n` points (all of them when the cloud is smaller).
pub fn subsample<R: Rng + ?Sized>(cloud: &PointCloud, n: usize, rng: &mut R) -> PointCloud {
    let n = n.min(cloud.len());
    let mut idx = rand::seq::index::sample(rng, cloud.len(), n).into_vec();
    idx.sort_unstable();
    cloud.select(&idx)
}

/// Draws a training pair from one shape: `X` and `Z` are independent
/// subsamples and `Z = truth⁻¹ · subsample`. The rotation angle is uniform in
/// `[0, max_angle_deg]` about a uniform axis and the translation uniform in a
/// ball of `translation_radius`.
pub fn make_training_pair<R: Rng + ?Sized>(
    cloud: &PointCloud,
    max_angle_deg: f64,
    points: usize,
    translation_radius: f64,
    rng: &mut R,
) -> (PointCloud, PointCloud, Pose) {
    let x = subsample(cloud, points, rng);
    let z_src = subsample(cloud, points, rng);
    let angle = rng.gen_range(0.0..=max_angle_deg).to_radians();
    let rotation = so3_exp(&(random_unit_vector(rng) * angle));
    let translation = if translation_radius > 0.0 {
        random_in_ball(rng, translation_radius)
    } else {
        Vec3::zeros()
    };
    let truth = Pose::new(rotation, translation);
    let z = z_src.transformed(&truth.inverse());
    (x, z, truth)
}

const PHASE_TRAINING: u8 = 0;
const PHASE_VALIDATION: u8 = 1;

/// Counts ground-truth reads made during training and validation phases.
#[derive(Debug, Default)]
pub struct TruthAudit {
    phase: AtomicU8,
    training_reads: AtomicUsize,
    validation_reads: AtomicUsize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct TruthReads {
    pub training: usize,
    pub validation: usize,
}

impl TruthAudit {
    fn set_validation(&self, on: bool) {
        let phase = if on { PHASE_VALIDATION } else { PHASE_TRAINING };
        self.phase.store(phase, Ordering::SeqCst);
    }

    pub fn reads(&self) -> TruthReads {
        TruthReads {
            training: self.training_reads.load(Ordering::SeqCst),
            validation: self.validation_reads.load(Ordering::SeqCst),
        }
    }
}

/// A ground-truth pose that records every read in its audit.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pose: Pose,
    audit: Arc<TruthAudit>,
}

impl GroundTruth {
    pub fn new(pose: Pose, audit: Arc<TruthAudit>) -> Self {
        Self { pose, audit }
    }

    pub fn reveal(&self) -> &Pose {
        let counter = if self.audit.phase.load(Ordering::SeqCst) == PHASE_VALIDATION {
            &self.audit.validation_reads
        } else {
            &self.audit.training_reads
        };
        counter.fetch_add(1, Ordering::SeqCst);
        &self.pose
    }
}

/// Gradient of the pair-normalized distance with respect to every weight,
/// holding the pose and lengthscale fixed. Returns `(loss, gradient)`.
pub fn encoder_gradient(
    weights: &EncoderWeights,
    x: &PointCloud,
    z: &PointCloud,
    pose: &Pose,
    params: &KernelParams,
) -> Result<(f64, EncoderWeights), TrainError> {
    let (fx, trace_x) = encoder_forward_traced(x, weights)?;
    let (fz, trace_z) = encoder_forward_traced(z, weights)?;
    gradient_from_traces(weights, &fx, &trace_x, &fz, &trace_z, pose, params)
}

fn gradient_from_traces(
    weights: &EncoderWeights,
    fx: &FeatureCloud,
    trace_x: &EncoderTrace,
    fz: &FeatureCloud,
    trace_z: &EncoderTrace,
    pose: &Pose,
    params: &KernelParams,
) -> Result<(f64, EncoderWeights), TrainError> {
    let fg = feature_gradients(fx, fz, pose, params)?;
    let norm = pair_normalizer(fx, fz);
    let scale = |g: Vec<Vec3>| g.into_iter().map(|v| v / norm).collect::<Vec<_>>();
    let mut grad = zeros_like(weights);
    backward_encoder(weights, trace_x, &scale(fg.d_x), &mut grad);
    backward_encoder(weights, trace_z, &scale(fg.d_z), &mut grad);
    Ok((fg.value / norm, grad))
}

fn pair_normalizer(fx: &FeatureCloud, fz: &FeatureCloud) -> f64 {
    let n = fx.labels().iter().sum::<f64>() * fz.labels().iter().sum::<f64>();
    if n.abs() > 0.0 {
        n.abs()
    } else {
        1.0
    }
}

fn zeros_like(weights: &EncoderWeights) -> EncoderWeights {
    EncoderWeights::zeros(&weights.channels(), weights.k)
}

/// Accumulates weight gradients given the gradient on the squashed outputs.
fn backward_encoder(
    weights: &EncoderWeights,
    trace: &EncoderTrace,
    grad_out: &[Vec3],
    grads: &mut EncoderWeights,
) {
    // Through f / (1 + |f|).
    let mut g: Vec<Vec3> = trace
        .raw_output
        .iter()
        .zip(grad_out)
        .map(|(f, go)| {
            let n = f.norm();
            let s = 1.0 + n;
            if n > 0.0 {
                go / s - f * (f.dot(go) / (n * s * s))
            } else {
                *go
            }
        })
        .collect();
    for (l, (layer, lt)) in weights.layers.iter().zip(&trace.layers).enumerate().rev() {
        let g_pre = backward_rectifier(&lt.pre, &g, layer, &mut grads.layers[l]);
        g = backward_linear(&lt.input, &trace.neighbors, layer, &g_pre, &mut grads.layers[l]);
    }
}

/// Reverse of the vector rectifier; returns the gradient on its input and
/// accumulates the direction-matrix gradient.
fn backward_rectifier(
    pre: &[Vec3],
    g_out: &[Vec3],
    layer: &LayerWeights,
    grads: &mut LayerWeights,
) -> Vec<Vec3> {
    let co = layer.c_out();
    let d = &layer.directions;
    let mut g_pre = g_out.to_vec();
    for (row, (g_row, gp_row)) in pre
        .chunks_exact(co)
        .zip(g_out.chunks_exact(co).zip(g_pre.chunks_exact_mut(co)))
    {
        for c in 0..co {
            let q: Vec3 = row.iter().enumerate().map(|(k, f)| f * d[(k, c)]).sum();
            let f = row[c];
            if f.dot(&q) >= 0.0 {
                continue;
            }
            let go = g_row[c];
            let qn = q.norm();
            let denom = qn.max(DIRECTION_NORM_EPS);
            let u = q / denom;
            // out = f - u (f·u); gp_row[c] already holds go.
            gp_row[c] -= u * u.dot(&go);
            let g_u = -(go * f.dot(&u) + f * go.dot(&u));
            let g_q = if qn > DIRECTION_NORM_EPS {
                (g_u - u * u.dot(&g_u)) / qn
            } else {
                g_u / DIRECTION_NORM_EPS
            };
            for (k, fk) in row.iter().enumerate() {
                gp_row[k] += g_q * d[(k, c)];
                grads.directions[(k, c)] += fk.dot(&g_q);
            }
        }
    }
    g_pre
}

/// Reverse of `f W + Σ_k (f_k - f) W_k`; returns the gradient on the layer input.
fn backward_linear(
    input: &[Vec3],
    neighbors: &NeighborTable,
    layer: &LayerWeights,
    g_pre: &[Vec3],
    grads: &mut LayerWeights,
) -> Vec<Vec3> {
    let (ci, co) = (layer.c_in(), layer.c_out());
    let n = input.len() / ci;
    let mut g_in = vec![Vec3::zeros(); input.len()];
    let mut diff = vec![Vec3::zeros(); ci];
    let mut g_diff = vec![Vec3::zeros(); ci];
    for i in 0..n {
        let fi = &input[i * ci..(i + 1) * ci];
        let gi = &g_pre[i * co..(i + 1) * co];
        diff.iter_mut().for_each(|v| *v = Vec3::zeros());
        let row = neighbors.row(i);
        for &j in row {
            for a in 0..ci {
                diff[a] += input[j * ci + a] - fi[a];
            }
        }
        for a in 0..ci {
            let mut g_self = Vec3::zeros();
            g_diff[a] = Vec3::zeros();
            for b in 0..co {
                grads.self_weight[(a, b)] += fi[a].dot(&gi[b]);
                grads.neighbor_weight[(a, b)] += diff[a].dot(&gi[b]);
                g_self += gi[b] * layer.self_weight[(a, b)];
                g_diff[a] += gi[b] * layer.neighbor_weight[(a, b)];
            }
            g_in[i * ci + a] += g_self - g_diff[a] * row.len() as f64;
        }
        for &j in row {
            for a in 0..ci {
                g_in[j * ci + a] += g_diff[a];
            }
        }
    }
    g_in
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ValidationMetrics {
    pub rot_err_deg: f64,
    pub trans_err: f64,
    /// Mean pair-normalized distance at the recovered poses.
    pub distance: f64,
    pub ell_mean: f64,
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub stage_deg: f64,
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_rot_err_deg: f64,
    pub val_trans_err: f64,
    pub ell_mean: f64,
    #[serde(skip)]
    pub val_distance: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub weights: EncoderWeights,
    pub log: Vec<EpochLog>,
    /// Validation metrics of the initial weights on the first stage.
    pub initial_validation: ValidationMetrics,
    pub truth_reads: TruthReads,
}

struct ValidationPair {
    x: PointCloud,
    z: PointCloud,
    truth: GroundTruth,
}

struct PairOutcome {
    loss: f64,
    ell: f64,
    grad: EncoderWeights,
}

/// Trains a fresh encoder built from `config`.
pub fn train(
    dataset: &[PointCloud],
    schedule: &CurriculumSchedule,
    config: &TrainConfig,
) -> Result<TrainOutput, TrainError> {
    let weights = config.initial_weights(dataset)?;
    train_from(dataset, weights, schedule, config, |_| {})
}

/// Trains `initial`, calling `on_epoch` after every epoch with its log row.
pub fn train_from(
    dataset: &[PointCloud],
    initial: EncoderWeights,
    schedule: &CurriculumSchedule,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutput, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    schedule.validate()?;
    config.validate()?;
    initial.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (train_set, val_set) = split_dataset(dataset, config.validation_fraction, &mut rng);
    let audit = Arc::new(TruthAudit::default());
    let mut weights = initial;
    let mut log = Vec::new();
    let mut epoch = 0;
    let mut initial_validation = None;

    for (stage_idx, &stage) in schedule.stages.iter().enumerate() {
        let last = stage_idx + 1 == schedule.stages.len();
        // Keyed by angle so different schedules validate on the same pairs.
        let mut val_rng = ChaCha8Rng::seed_from_u64(config.seed ^ stage.to_bits());
        let val_pairs: Vec<ValidationPair> = val_set
            .iter()
            .flat_map(|c| std::iter::repeat_n(*c, config.validation_pairs_per_shape))
            .map(|c| {
                let (x, z, truth) = make_training_pair(
                    c,
                    stage,
                    config.points_per_cloud,
                    config.translation_radius,
                    &mut val_rng,
                );
                ValidationPair {
                    x,
                    z,
                    truth: GroundTruth::new(truth, audit.clone()),
                }
            })
            .collect();
        if initial_validation.is_none() {
            initial_validation = Some(validate(&weights, &val_pairs, config, &audit)?);
        }

        let mut stage_epochs = 0;
        loop {
            let budget_left = config.max_epochs.is_none_or(|m| epoch < m);
            let stage_left = stage_epochs < schedule.epochs_per_stage
                || (last && config.max_epochs.is_some());
            if !budget_left || !stage_left {
                break;
            }
            let (mean_loss, ell_mean) =
                run_epoch(&mut weights, &train_set, stage, config, &mut rng)?;
            let metrics = validate(&weights, &val_pairs, config, &audit)?;
            epoch += 1;
            stage_epochs += 1;
            let row = EpochLog {
                stage_deg: stage,
                epoch,
                mean_loss,
                val_rot_err_deg: metrics.rot_err_deg,
                val_trans_err: metrics.trans_err,
                ell_mean,
                val_distance: metrics.distance,
            };
            on_epoch(&row);
            log.push(row);
            if !last && metrics.rot_err_deg < schedule.promotion_threshold(stage) {
                break;
            }
        }
        if config.max_epochs.is_some_and(|m| epoch >= m) {
            break;
        }
    }

    Ok(TrainOutput {
        weights,
        log,
        initial_validation: initial_validation.unwrap_or_default(),
        truth_reads: audit.reads(),
    })
}

/// Seeded split; both halves are non-empty whenever the dataset has two or
/// more clouds. A single cloud serves as both.
fn split_dataset<'a, R: Rng + ?Sized>(
    dataset: &'a [PointCloud],
    fraction: f64,
    rng: &mut R,
) -> (Vec<&'a PointCloud>, Vec<&'a PointCloud>) {
    let mut all: Vec<&PointCloud> = dataset.iter().collect();
    if all.len() == 1 {
        return (all.clone(), all);
    }
    all.shuffle(rng);
    let n_val = ((all.len() as f64 * fraction).ceil() as usize).clamp(1, all.len() - 1);
    let val = all.split_off(all.len() - n_val);
    (all, val)
}

fn run_epoch(
    weights: &mut EncoderWeights,
    train_set: &[&PointCloud],
    stage: f64,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64), TrainError> {
    let mut order: Vec<&PointCloud> = train_set.to_vec();
    order.shuffle(rng);
    let (mut loss_sum, mut ell_sum, mut count) = (0.0, 0.0, 0usize);
    for batch in order.chunks(config.batch_size) {
        // The truth is dropped here: training never sees it.
        let pairs: Vec<(PointCloud, PointCloud)> = batch
            .iter()
            .map(|c| {
                let (x, z, _) = make_training_pair(
                    c,
                    stage,
                    config.points_per_cloud,
                    config.translation_radius,
                    rng,
                );
                (x, z)
            })
            .collect();
        let current: &EncoderWeights = weights;
        let outcomes: Vec<PairOutcome> = pairs
            .par_iter()
            .map(|(x, z)| pair_step(current, x, z, &config.inner))
            .collect::<Result<_, _>>()?;
        let mut grad = zeros_like(weights);
        let mut flat = grad.params();
        for o in &outcomes {
            for (acc, v) in flat.iter_mut().zip(o.grad.params()) {
                *acc += v / outcomes.len() as f64;
            }
            loss_sum += o.loss;
            ell_sum += o.ell;
            count += 1;
        }
        let gnorm = flat.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm > config.grad_clip {
            flat.iter_mut().for_each(|v| *v *= config.grad_clip / gnorm);
        }
        grad.set_params(&flat);
        let updated: Vec<f64> = weights
            .params()
            .iter()
            .zip(grad.params())
            .map(|(w, g)| w - config.outer_lr * g)
            .collect();
        weights.set_params(&updated);
    }
    let c = count.max(1) as f64;
    Ok((loss_sum / c, ell_sum / c))
}

fn pair_step(
    weights: &EncoderWeights,
    x: &PointCloud,
    z: &PointCloud,
    inner: &RegistrationConfig,
) -> Result<PairOutcome, TrainError> {
    let (fx, trace_x) = encoder_forward_traced(x, weights)?;
    let (fz, trace_z) = encoder_forward_traced(z, weights)?;
    let res = register(&fx, &fz, inner)?;
    let params = inner.kernel_params(res.final_ell);
    let (loss, grad) = gradient_from_traces(weights, &fx, &trace_x, &fz, &trace_z, &res.pose, &params)?;
    Ok(PairOutcome {
        loss,
        ell: res.final_ell,
        grad,
    })
}

fn validate(
    weights: &EncoderWeights,
    pairs: &[ValidationPair],
    config: &TrainConfig,
    audit: &TruthAudit,
) -> Result<ValidationMetrics, TrainError> {
    let results: Vec<(Pose, f64, f64)> = pairs
        .par_iter()
        .map(|p| {
            let fx = encoder_forward(&p.x, weights)?;
            let fz = encoder_forward(&p.z, weights)?;
            let res = register(&fx, &fz, &config.inner)?;
            let d = res.objective_trace.last().copied().unwrap_or(0.0) / pair_normalizer(&fx, &fz);
            Ok((res.pose, d, res.final_ell))
        })
        .collect::<Result<_, TrainError>>()?;
    audit.set_validation(true);
    let n = pairs.len().max(1) as f64;
    let mut m = ValidationMetrics::default();
    for (p, (pose, d, ell)) in pairs.iter().zip(&results) {
        let truth = p.truth.reveal();
        m.rot_err_deg += rotation_error_deg(pose, truth) / n;
        m.trans_err += translation_error(pose, truth) / n;
        m.distance += d / n;
        m.ell_mean += ell / n;
    }
    audit.set_validation(false);
    Ok(m)
}
