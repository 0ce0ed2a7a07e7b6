//! Perturbations, the ICP baseline and experiment sweeps.
//!
//! A sweep is a full factorial over methods and cells (initial angle and
//! perturbation). Trial `t` of a cell uses shape `t mod S` and a seed derived
//! from `(trial, cell)`, so every method in a cell sees the same inputs. The
//! moving cloud is `Z = truth⁻¹ · X` on the same sampled points, then
//! perturbed in the order noise, outliers, crop. `X` is left clean.

mod icp;
mod perturb;

use std::io::{Read, Write};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{encoder_forward, handcrafted_features, EncoderWeights, FeatureCloud, FeatureError};
use crate::geometry::{
    random_in_ball, random_unit_vector, rotation_error_deg, so3_exp, translation_error,
    GeometryError, PointCloud, Pose,
};
use crate::io::{normalize_mesh, procedural_shape, sample_mesh_surface, IoError, MeshShape, SHAPE_NAMES};
use crate::registration::{register, RegistrationConfig, RegistrationError, RegistrationResult};
use crate::rkhs::KernelMode;
use crate::training::{train, CurriculumSchedule, TrainConfig, TrainError};

pub use icp::{icp_baseline, kabsch, DEFAULT_ICP_MAX_ITERS, DEFAULT_ICP_TOL};
pub use perturb::{
    add_gaussian_normal_noise, add_uniform_outliers, crop_along, crop_along_axis,
    PerturbationSpec, DEFAULT_OUTLIER_RANGE, PERTURB_NORMAL_K,
};

/// Rotation error recorded for a failed trial.
pub const FAILED_ROT_ERR_DEG: f64 = 180.0;
pub const HANDCRAFTED_K: usize = 16;
pub const HANDCRAFTED_CHANNELS: usize = 1;

pub const PERTURBATION_ORDER_NOTE: &str =
    "perturbations applied to Z only, in the order noise -> outliers -> crop";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid perturbation: {0}")]
    InvalidSpec(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("ICP needs at least 3 points per cloud")]
    TooFewPoints,
    #[error("cross-covariance rank below 2")]
    DegenerateConfiguration(Box<RegistrationResult>),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone)]
pub enum FeatureSource {
    Handcrafted { k: usize, channels: usize },
    Encoder(Arc<EncoderWeights>),
}

impl FeatureSource {
    pub fn handcrafted() -> Self {
        FeatureSource::Handcrafted {
            k: HANDCRAFTED_K,
            channels: HANDCRAFTED_CHANNELS,
        }
    }

    pub fn features(&self, cloud: &PointCloud) -> Result<FeatureCloud, FeatureError> {
        match self {
            FeatureSource::Handcrafted { k, channels } => handcrafted_features(cloud, *k, *channels),
            FeatureSource::Encoder(w) => encoder_forward(cloud, w),
        }
    }
}

#[derive(Debug, Clone)]
pub enum MethodKind {
    Rkhs {
        features: FeatureSource,
        config: RegistrationConfig,
    },
    Icp {
        max_iters: usize,
        tol: f64,
    },
}

#[derive(Debug, Clone)]
pub struct Method {
    pub name: String,
    pub kind: MethodKind,
}

impl Method {
    /// RKHS registration with handcrafted features and the given lengthscale.
    pub fn equivalign(ell_init: f64) -> Self {
        Self::rkhs("equivalign", KernelMode::RbfTanh, ell_init)
    }

    pub fn rkhs(name: &str, mode: KernelMode, ell_init: f64) -> Self {
        Self {
            name: name.to_string(),
            kind: MethodKind::Rkhs {
                features: FeatureSource::handcrafted(),
                config: RegistrationConfig {
                    ell_init,
                    mode,
                    ..Default::default()
                },
            },
        }
    }

    pub fn icp() -> Self {
        Self {
            name: "icp".into(),
            kind: MethodKind::Icp {
                max_iters: DEFAULT_ICP_MAX_ITERS,
                tol: DEFAULT_ICP_TOL,
            },
        }
    }

    /// Estimated pose and iteration count; `Err` marks a failed trial.
    fn run(&self, x: &PointCloud, z: &PointCloud) -> Result<(Pose, usize), BenchError> {
        match &self.kind {
            MethodKind::Rkhs { features, config } => {
                let fx = features.features(x)?;
                let fz = features.features(z)?;
                let res = register(&fx, &fz, config)?;
                Ok((res.pose, res.iterations))
            }
            MethodKind::Icp { max_iters, tol } => {
                let res = icp_baseline(x, z, &Pose::identity(), *max_iters, *tol)?;
                Ok((res.pose, res.iterations))
            }
        }
    }
}

/// How the initial rotation angle of a trial is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AngleSpec {
    Fixed(f64),
    /// Uniform in `[0, max]`.
    UpTo(f64),
}

impl AngleSpec {
    pub fn max_deg(&self) -> f64 {
        match *self {
            AngleSpec::Fixed(a) | AngleSpec::UpTo(a) => a,
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            AngleSpec::Fixed(a) => a,
            AngleSpec::UpTo(a) => rng.gen_range(0.0..=a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchCell {
    pub angle: AngleSpec,
    pub spec: PerturbationSpec,
}

#[derive(Debug, Clone)]
pub enum ShapeSource {
    Mesh(MeshShape),
    Cloud(PointCloud),
}

#[derive(Debug, Clone)]
pub struct BenchShape {
    pub name: String,
    pub source: ShapeSource,
}

impl BenchShape {
    /// Named procedural mesh, normalized to unit diagonal.
    pub fn procedural(name: &str) -> Result<Self, BenchError> {
        Ok(Self {
            name: name.to_string(),
            source: ShapeSource::Mesh(normalize_mesh(&procedural_shape(name)?)),
        })
    }

    pub fn standard_set() -> Result<Vec<Self>, BenchError> {
        SHAPE_NAMES.iter().map(|n| Self::procedural(n)).collect()
    }

    /// `n` surface samples from a mesh, or a random subset of a cloud.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<PointCloud, BenchError> {
        match &self.source {
            ShapeSource::Mesh(m) => Ok(sample_mesh_surface(m, n, rng)?),
            ShapeSource::Cloud(c) => Ok(crate::training::subsample(c, n, rng)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchPlan {
    pub name: String,
    pub shapes: Vec<BenchShape>,
    pub methods: Vec<Method>,
    pub cells: Vec<BenchCell>,
    pub trials: usize,
    pub points: usize,
    pub seed: u64,
    pub translation_radius: f64,
    /// Record wall times; off gives bit-reproducible reports.
    pub record_timing: bool,
}

impl BenchPlan {
    pub fn new(name: &str, shapes: Vec<BenchShape>, methods: Vec<Method>, cells: Vec<BenchCell>) -> Self {
        Self {
            name: name.to_string(),
            shapes,
            methods,
            cells,
            trials: 30,
            points: 512,
            seed: 0,
            translation_radius: 0.1,
            record_timing: true,
        }
    }

    fn validate(&self) -> Result<(), BenchError> {
        if self.shapes.is_empty() {
            return Err(BenchError::InvalidPlan("no shapes".into()));
        }
        if self.methods.is_empty() {
            return Err(BenchError::InvalidPlan("no methods".into()));
        }
        if self.points < HANDCRAFTED_K + 1 {
            return Err(BenchError::InvalidPlan(format!(
                "need more than {HANDCRAFTED_K} points per cloud"
            )));
        }
        for c in &self.cells {
            c.spec.validate()?;
        }
        Ok(())
    }
}

/// Seed of one trial, mixed from the plan seed, cell and trial index.
pub fn trial_seed(seed: u64, cell: usize, trial: usize) -> u64 {
    let mut z = seed ^ ((cell as u64) << 32 | trial as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub shape: String,
    /// Nominal angle of the cell (the bound for uniform draws).
    pub init_angle_deg: f64,
    pub sampled_angle_deg: f64,
    pub sigma: f64,
    pub outlier_ratio: f64,
    pub crop_ratio: f64,
    pub trial: usize,
    pub rot_err_deg: f64,
    /// NaN for failed trials.
    pub trans_err: f64,
    pub iters: usize,
    pub wall_time_s: f64,
    pub failed: bool,
}

/// Aggregate of one (method, angle, perturbation) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub method: String,
    pub init_angle_deg: f64,
    pub sigma: f64,
    pub outlier_ratio: f64,
    pub crop_ratio: f64,
    pub trials: usize,
    pub failures: usize,
    pub mean_rot_err_deg: f64,
    pub std_rot_err_deg: f64,
    pub median_rot_err_deg: f64,
    /// Over successful trials only.
    pub mean_trans_err: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub name: String,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// Summaries in first-appearance order of their cells.
    pub fn summaries(&self) -> Vec<CellSummary> {
        let key = |r: &BenchRow| {
            (
                r.method.clone(),
                r.init_angle_deg.to_bits(),
                r.sigma.to_bits(),
                r.outlier_ratio.to_bits(),
                r.crop_ratio.to_bits(),
            )
        };
        let mut keys = Vec::new();
        for r in &self.rows {
            let k = key(r);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|k| {
                let rows: Vec<&BenchRow> = self.rows.iter().filter(|r| key(r) == k).collect();
                let rot: Vec<f64> = rows.iter().map(|r| r.rot_err_deg).collect();
                let trans: Vec<f64> = rows.iter().filter(|r| !r.failed).map(|r| r.trans_err).collect();
                let (mean, std) = mean_std(&rot);
                let first = rows[0];
                CellSummary {
                    method: first.method.clone(),
                    init_angle_deg: first.init_angle_deg,
                    sigma: first.sigma,
                    outlier_ratio: first.outlier_ratio,
                    crop_ratio: first.crop_ratio,
                    trials: rows.len(),
                    failures: rows.iter().filter(|r| r.failed).count(),
                    mean_rot_err_deg: mean,
                    std_rot_err_deg: std,
                    median_rot_err_deg: median(&rot),
                    mean_trans_err: mean_std(&trans).0,
                }
            })
            .collect()
    }

    pub fn rows_for(&self, method: &str) -> impl Iterator<Item = &BenchRow> {
        let method = method.to_string();
        self.rows.iter().filter(move |r| r.method == method)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), BenchError> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(name: &str, r: R) -> Result<Self, BenchError> {
        let rows = csv::Reader::from_reader(r)
            .deserialize()
            .collect::<Result<Vec<BenchRow>, _>>()?;
        Ok(Self {
            name: name.to_string(),
            rows,
        })
    }

    /// Text table with one line per cell.
    pub fn summary_table(&self) -> String {
        let mut out = format!("# {}\n# {}\n", self.name, PERTURBATION_ORDER_NOTE);
        out.push_str(&format!(
            "{:<24} {:>7} {:>6} {:>6} {:>6} {:>6} {:>5} {:>10} {:>10} {:>10} {:>10}\n",
            "method", "angle", "sigma", "gamma", "crop", "trials", "fail", "mean_rot", "std_rot", "median_rot", "mean_trans"
        ));
        for s in self.summaries() {
            out.push_str(&format!(
                "{:<24} {:>7.1} {:>6.3} {:>6.2} {:>6.2} {:>6} {:>5} {:>10.3} {:>10.3} {:>10.3} {:>10.4}\n",
                s.method,
                s.init_angle_deg,
                s.sigma,
                s.outlier_ratio,
                s.crop_ratio,
                s.trials,
                s.failures,
                s.mean_rot_err_deg,
                s.std_rot_err_deg,
                s.median_rot_err_deg,
                s.mean_trans_err
            ));
        }
        out
    }
}

struct TrialInput {
    shape: String,
    x: PointCloud,
    z: PointCloud,
    truth: Pose,
    angle_deg: f64,
}

fn trial_input(plan: &BenchPlan, cell_idx: usize, trial: usize) -> Result<TrialInput, BenchError> {
    let cell = &plan.cells[cell_idx];
    let shape = &plan.shapes[trial % plan.shapes.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(plan.seed, cell_idx, trial));
    let x = shape.sample(plan.points, &mut rng)?;
    let angle_deg = cell.angle.draw(&mut rng);
    let rotation = so3_exp(&(random_unit_vector(&mut rng) * angle_deg.to_radians()));
    let truth = Pose::new(rotation, random_in_ball(&mut rng, plan.translation_radius));
    let z = cell.spec.apply(&x.transformed(&truth.inverse()), &mut rng)?;
    Ok(TrialInput {
        shape: shape.name.clone(),
        x,
        z,
        truth,
        angle_deg,
    })
}

/// Runs every method on every (cell, trial). Method errors become failed
/// rows with [`FAILED_ROT_ERR_DEG`]; input generation errors abort the run.
pub fn run_benchmark(plan: &BenchPlan) -> Result<BenchReport, BenchError> {
    plan.validate()?;
    let tasks: Vec<(usize, usize)> = (0..plan.cells.len())
        .flat_map(|c| (0..plan.trials).map(move |t| (c, t)))
        .collect();
    let per_task: Vec<Vec<BenchRow>> = tasks
        .par_iter()
        .map(|&(cell_idx, trial)| {
            let input = trial_input(plan, cell_idx, trial)?;
            let cell = &plan.cells[cell_idx];
            Ok(plan
                .methods
                .iter()
                .map(|m| {
                    let start = Instant::now();
                    let outcome = m.run(&input.x, &input.z);
                    let wall = if plan.record_timing {
                        start.elapsed().as_secs_f64()
                    } else {
                        0.0
                    };
                    let (rot, trans, iters, failed) = match outcome {
                        Ok((pose, iters)) => (
                            rotation_error_deg(&pose, &input.truth),
                            translation_error(&pose, &input.truth),
                            iters,
                            false,
                        ),
                        Err(_) => (FAILED_ROT_ERR_DEG, f64::NAN, 0, true),
                    };
                    BenchRow {
                        method: m.name.clone(),
                        shape: input.shape.clone(),
                        init_angle_deg: cell.angle.max_deg(),
                        sampled_angle_deg: input.angle_deg,
                        sigma: cell.spec.gaussian_sigma,
                        outlier_ratio: cell.spec.outlier_ratio,
                        crop_ratio: cell.spec.crop_ratio,
                        trial,
                        rot_err_deg: rot,
                        trans_err: trans,
                        iters,
                        wall_time_s: wall,
                        failed,
                    }
                })
                .collect())
        })
        .collect::<Result<_, BenchError>>()?;
    Ok(BenchReport {
        name: plan.name.clone(),
        rows: per_task.into_iter().flatten().collect(),
    })
}

/// Curriculum-versus-direct training comparison on a toy shape set.
#[derive(Debug, Clone)]
pub struct CurriculumAblation {
    pub curriculum: Vec<f64>,
    pub direct_angle: f64,
    /// Equal epoch budget for both arms.
    pub epochs: usize,
    pub seeds: usize,
    pub first_seed: u64,
    pub shapes: usize,
    /// Points stored per toy shape; pairs subsample `config.points_per_cloud`.
    pub shape_points: usize,
    pub config: TrainConfig,
    pub record_timing: bool,
}

impl Default for CurriculumAblation {
    fn default() -> Self {
        Self {
            curriculum: vec![1.0, 10.0, 20.0, 30.0, 45.0],
            direct_angle: 45.0,
            epochs: 20,
            seeds: 5,
            first_seed: 0,
            shapes: 20,
            shape_points: 128,
            config: TrainConfig {
                points_per_cloud: 64,
                encoder_channels: vec![1, 4, 4],
                k: 8,
                inner: RegistrationConfig {
                    max_iters: 100,
                    ..Default::default()
                },
                ..Default::default()
            },
            record_timing: true,
        }
    }
}

/// The named procedural shapes followed by as many random convex shapes as
/// needed, each sampled once with `points` surface points.
pub fn toy_dataset(shapes: usize, points: usize, seed: u64) -> Result<Vec<PointCloud>, BenchError> {
    let extra = SHAPE_NAMES.iter().filter(|n| n.starts_with("convex-")).count();
    let names: Vec<String> = SHAPE_NAMES
        .iter()
        .map(|s| s.to_string())
        .chain((extra..).map(|i| format!("convex-{i}")))
        .take(shapes)
        .collect();
    names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let shape = BenchShape::procedural(name)?;
            shape.sample(points, &mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64)))
        })
        .collect()
}

/// One row per (arm, seed) with the final validation errors at the direct
/// angle.
pub fn run_curriculum_ablation(plan: &CurriculumAblation) -> Result<BenchReport, BenchError> {
    let data = toy_dataset(plan.shapes, plan.shape_points, 0)?;
    let per_stage = plan.epochs.div_ceil(plan.curriculum.len()).max(1);
    let arms = [
        ("curriculum", CurriculumSchedule::new(plan.curriculum.clone(), per_stage)?),
        ("direct", CurriculumSchedule::direct(plan.direct_angle, plan.epochs)?),
    ];
    let mut rows = Vec::new();
    for trial in 0..plan.seeds {
        for (name, schedule) in &arms {
            let config = TrainConfig {
                seed: plan.first_seed + trial as u64,
                max_epochs: Some(plan.epochs),
                ..plan.config.clone()
            };
            let start = Instant::now();
            let out = train(&data, schedule, &config)?;
            let last = out.log.last().expect("at least one epoch");
            rows.push(BenchRow {
                method: name.to_string(),
                shape: format!("toy-{}", plan.shapes),
                init_angle_deg: last.stage_deg,
                sampled_angle_deg: last.stage_deg,
                sigma: 0.0,
                outlier_ratio: 0.0,
                crop_ratio: 0.0,
                trial,
                rot_err_deg: last.val_rot_err_deg,
                trans_err: last.val_trans_err,
                iters: last.epoch,
                wall_time_s: if plan.record_timing {
                    start.elapsed().as_secs_f64()
                } else {
                    0.0
                },
                failed: false,
            });
        }
    }
    Ok(BenchReport {
        name: "ablation-curriculum".into(),
        rows,
    })
}

#[derive(Debug, Clone)]
pub enum Experiment {
    Sweep(BenchPlan),
    Curriculum(CurriculumAblation),
}

#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub experiment: Experiment,
}

impl Preset {
    /// Overrides the trial count (the seed count for the curriculum study).
    pub fn with_trials(mut self, trials: usize) -> Self {
        match &mut self.experiment {
            Experiment::Sweep(p) => p.trials = trials,
            Experiment::Curriculum(c) => c.seeds = trials,
        }
        self
    }

    /// Base seed of the sweep, or of the first training seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self.experiment {
            Experiment::Sweep(p) => p.seed = seed,
            Experiment::Curriculum(c) => c.first_seed = seed,
        }
        self
    }

    /// Points per benchmark cloud; ignored by the curriculum study.
    pub fn with_points(mut self, points: usize) -> Self {
        if let Experiment::Sweep(p) = &mut self.experiment {
            p.points = points;
        }
        self
    }

    pub fn with_timing(mut self, record: bool) -> Self {
        match &mut self.experiment {
            Experiment::Sweep(p) => p.record_timing = record,
            Experiment::Curriculum(c) => c.record_timing = record,
        }
        self
    }

    pub fn run(&self) -> Result<BenchReport, BenchError> {
        match &self.experiment {
            Experiment::Sweep(p) => run_benchmark(p),
            Experiment::Curriculum(c) => run_curriculum_ablation(c),
        }
    }
}

pub const PRESET_NAMES: [&str; 5] = [
    "paper45",
    "paper90",
    "ablation-kernel",
    "ablation-ell",
    "ablation-curriculum",
];

pub const ELL_SWEEP: [f64; 4] = [0.1, 0.3, 0.5, 1.0];

fn robustness_cells(angle: f64) -> Vec<BenchCell> {
    [
        PerturbationSpec::clean(),
        PerturbationSpec::noise(0.01),
        PerturbationSpec::noise_and_outliers(0.01, 0.2),
        PerturbationSpec::crop(0.05),
        PerturbationSpec::crop(0.1),
        PerturbationSpec::crop(0.2),
    ]
    .into_iter()
    .map(|spec| BenchCell {
        angle: AngleSpec::Fixed(angle),
        spec,
    })
    .collect()
}

fn clean_cell(angle: f64) -> BenchCell {
    BenchCell {
        angle: AngleSpec::Fixed(angle),
        spec: PerturbationSpec::clean(),
    }
}

pub fn preset(name: &str) -> Result<Preset, BenchError> {
    let shapes = BenchShape::standard_set;
    let ell_for = RegistrationConfig::ell_init_for_angle;
    let (description, experiment) = match name {
        "paper45" => (
            "handcrafted RKHS vs ICP at 45 deg, noise/outlier/crop cells",
            Experiment::Sweep(BenchPlan::new(
                name,
                shapes()?,
                vec![Method::equivalign(ell_for(45.0)), Method::icp()],
                robustness_cells(45.0),
            )),
        ),
        "paper90" => (
            "handcrafted RKHS vs ICP at 90 deg, noise/outlier/crop cells",
            Experiment::Sweep(BenchPlan::new(
                name,
                shapes()?,
                vec![Method::equivalign(ell_for(90.0)), Method::icp()],
                robustness_cells(90.0),
            )),
        ),
        "ablation-kernel" => (
            "RBF x tanh kernel vs RBF only at 45 deg",
            Experiment::Sweep(BenchPlan::new(
                name,
                shapes()?,
                vec![
                    Method::rkhs("rbf-tanh", KernelMode::RbfTanh, ell_for(45.0)),
                    Method::rkhs("rbf-only", KernelMode::RbfOnly, ell_for(45.0)),
                ],
                vec![clean_cell(45.0)],
            )),
        ),
        "ablation-ell" => (
            "initial lengthscale sweep at 45 and 90 deg",
            Experiment::Sweep(BenchPlan::new(
                name,
                shapes()?,
                ELL_SWEEP
                    .iter()
                    .map(|&ell| Method::rkhs(&format!("ell-{ell}"), KernelMode::RbfTanh, ell))
                    .collect(),
                vec![clean_cell(45.0), clean_cell(90.0)],
            )),
        ),
        "ablation-curriculum" => (
            "curriculum 1,10,20,30,45 vs direct 45 deg training at equal epochs",
            Experiment::Curriculum(CurriculumAblation::default()),
        ),
        other => return Err(BenchError::UnknownPreset(other.to_string())),
    };
    let name = PRESET_NAMES
        .iter()
        .find(|n| **n == name)
        .expect("matched above");
    Ok(Preset {
        name,
        description,
        experiment,
    })
}

pub fn ablation_presets() -> Result<Vec<Preset>, BenchError> {
    PRESET_NAMES.iter().map(|n| preset(n)).collect()
}

/// Method with the lowest mean rotation error in each angle cell:
/// `(init_angle_deg, method)`.
pub fn best_method_per_angle(report: &BenchReport) -> Vec<(f64, String)> {
    let mut best: Vec<(f64, String, f64)> = Vec::new();
    for s in report.summaries() {
        match best.iter_mut().find(|b| b.0 == s.init_angle_deg) {
            Some(b) if s.mean_rot_err_deg < b.2 => {
                b.1 = s.method.clone();
                b.2 = s.mean_rot_err_deg;
            }
            Some(_) => {}
            None => best.push((s.init_angle_deg, s.method.clone(), s.mean_rot_err_deg)),
        }
    }
    best.into_iter().map(|(a, m, _)| (a, m)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_plan(trials: usize) -> BenchPlan {
        BenchPlan {
            trials,
            points: 128,
            record_timing: false,
            ..BenchPlan::new(
                "test",
                vec![BenchShape::procedural("l-bracket").unwrap()],
                vec![Method::equivalign(0.3), Method::icp()],
                vec![BenchCell {
                    angle: AngleSpec::UpTo(20.0),
                    spec: PerturbationSpec::noise(0.005),
                }],
            )
        }
    }

    #[test]
    fn row_count_and_determinism() {
        let mut plan = small_plan(3);
        plan.methods.truncate(1);
        let a = run_benchmark(&plan).unwrap();
        assert_eq!(a.rows.len(), 3);
        let b = run_benchmark(&plan).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn methods_share_inputs() {
        let plan = small_plan(2);
        let a = trial_input(&plan, 0, 1).unwrap();
        let b = trial_input(&plan, 0, 1).unwrap();
        assert_eq!(a.z, b.z);
        assert_eq!(a.truth, b.truth);
        let report = run_benchmark(&plan).unwrap();
        for pair in report.rows.chunks(2) {
            assert_eq!(pair[0].sampled_angle_deg, pair[1].sampled_angle_deg);
            assert_eq!(pair[0].trial, pair[1].trial);
        }
    }

    #[test]
    fn summaries_recompute_from_csv() {
        let report = run_benchmark(&small_plan(3)).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let back = BenchReport::read_csv("test", buf.as_slice()).unwrap();
        assert_eq!(back.rows.len(), report.rows.len());
        assert_eq!(back.summaries(), report.summaries());
        let table = report.summary_table();
        assert!(table.contains(PERTURBATION_ORDER_NOTE));
        assert_eq!(table.lines().count(), 3 + 2);
    }

    #[test]
    fn failed_trials_use_the_convention() {
        let mut plan = small_plan(2);
        // Crop leaves too few points for a 16-neighborhood.
        plan.points = 18;
        plan.cells[0].spec = PerturbationSpec::crop(0.2);
        plan.methods.truncate(1);
        let report = run_benchmark(&plan).unwrap();
        assert!(report.rows.iter().all(|r| r.failed && r.rot_err_deg == FAILED_ROT_ERR_DEG));
        let s = &report.summaries()[0];
        assert_eq!(s.failures, 2);
        assert_eq!(s.mean_rot_err_deg, FAILED_ROT_ERR_DEG);
    }

    #[test]
    fn presets_are_well_formed() {
        let presets = ablation_presets().unwrap();
        assert_eq!(presets.len(), 5);
        let kernel = preset("ablation-kernel").unwrap().with_trials(5);
        let Experiment::Sweep(plan) = &kernel.experiment else {
            panic!("kernel ablation is a sweep")
        };
        assert_eq!(plan.methods.len() * plan.cells.len() * plan.trials, 10);
        let ell = preset("ablation-ell").unwrap();
        let Experiment::Sweep(plan) = &ell.experiment else {
            panic!("lengthscale ablation is a sweep")
        };
        assert_eq!(plan.methods.len(), ELL_SWEEP.len());
        assert!(matches!(preset("nope"), Err(BenchError::UnknownPreset(_))));
    }

    #[test]
    fn trial_seeds_differ() {
        let mut seen = std::collections::BTreeSet::new();
        for c in 0..10 {
            for t in 0..100 {
                assert!(seen.insert(trial_seed(7, c, t)));
            }
        }
    }

    #[test]
    fn median_and_best_method() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let row = |m: &str, a: f64, e: f64| BenchRow {
            method: m.into(),
            shape: "s".into(),
            init_angle_deg: a,
            sampled_angle_deg: a,
            sigma: 0.0,
            outlier_ratio: 0.0,
            crop_ratio: 0.0,
            trial: 0,
            rot_err_deg: e,
            trans_err: 0.0,
            iters: 1,
            wall_time_s: 0.0,
            failed: false,
        };
        let report = BenchReport {
            name: "t".into(),
            rows: vec![row("a", 45.0, 1.0), row("b", 45.0, 0.5), row("a", 90.0, 2.0), row("b", 90.0, 3.0)],
        };
        assert_eq!(
            best_method_per_angle(&report),
            vec![(45.0, "b".to_string()), (90.0, "a".to_string())]
        );
    }

    #[test]
    fn toy_dataset_has_requested_size() {
        let data = toy_dataset(12, 50, 0).unwrap();
        assert_eq!(data.len(), 12);
        assert!(data.iter().all(|c| c.len() == 50));
    }
}
