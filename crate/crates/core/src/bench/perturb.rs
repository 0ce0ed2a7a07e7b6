//! Perturbations applied to the moving cloud.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::geometry::{pca_normals, random_unit_vector, PointCloud, Vec3};

/// Neighborhood size for the normals that noise and outliers move along.
pub const PERTURB_NORMAL_K: usize = 16;
/// Default outlier displacement range on unit-diagonal shapes.
pub const DEFAULT_OUTLIER_RANGE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// Scale of the along-normal Gaussian noise.
    pub gaussian_sigma: f64,
    /// Fraction of points displaced as outliers.
    pub outlier_ratio: f64,
    /// Fraction of points removed by the axis crop.
    pub crop_ratio: f64,
}

impl PerturbationSpec {
    pub fn clean() -> Self {
        Self::default()
    }

    pub fn noise(sigma: f64) -> Self {
        Self {
            gaussian_sigma: sigma,
            ..Self::default()
        }
    }

    pub fn noise_and_outliers(sigma: f64, ratio: f64) -> Self {
        Self {
            gaussian_sigma: sigma,
            outlier_ratio: ratio,
            ..Self::default()
        }
    }

    pub fn crop(ratio: f64) -> Self {
        Self {
            crop_ratio: ratio,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if !(self.gaussian_sigma >= 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(BenchError::InvalidSpec("sigma must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.outlier_ratio) {
            return Err(BenchError::InvalidSpec("outlier ratio must lie in [0, 1]".into()));
        }
        if !(0.0..=0.2).contains(&self.crop_ratio) {
            return Err(BenchError::InvalidSpec("crop ratio must lie in [0, 0.2]".into()));
        }
        Ok(())
    }

    pub fn is_clean(&self) -> bool {
        *self == Self::default()
    }

    /// Noise, then outliers, then crop.
    pub fn apply<R: Rng + ?Sized>(&self, cloud: &PointCloud, rng: &mut R) -> Result<PointCloud, BenchError> {
        self.validate()?;
        let mut out = add_gaussian_normal_noise(cloud, self.gaussian_sigma, rng)?;
        out = add_uniform_outliers(&out, self.outlier_ratio, DEFAULT_OUTLIER_RANGE, rng)?;
        crop_along_axis(&out, self.crop_ratio, rng)
    }
}

fn normals(cloud: &PointCloud) -> Result<Vec<Vec3>, BenchError> {
    let k = PERTURB_NORMAL_K.min(cloud.len().saturating_sub(1)).max(3);
    Ok(pca_normals(cloud, k)?.0)
}

fn displaced(cloud: &PointCloud, offsets: impl Iterator<Item = (usize, Vec3)>) -> PointCloud {
    let (mut points, labels) = cloud.clone().into_parts();
    for (i, d) in offsets {
        points[i] += d;
    }
    PointCloud::with_labels(points, labels).expect("label count unchanged")
}

/// Moves each point along its unit normal by `ε ~ N(0, sigma)`.
pub fn add_gaussian_normal_noise<R: Rng + ?Sized>(
    cloud: &PointCloud,
    sigma: f64,
    rng: &mut R,
) -> Result<PointCloud, BenchError> {
    if sigma == 0.0 {
        return Ok(cloud.clone());
    }
    let dist = Normal::new(0.0, sigma).map_err(|e| BenchError::InvalidSpec(e.to_string()))?;
    let n = normals(cloud)?;
    Ok(displaced(
        cloud,
        n.iter().enumerate().map(|(i, ni)| (i, ni * dist.sample(rng))),
    ))
}

/// Moves `⌊ratio·N⌋` random points along their normals by
/// `Uniform(-range, range)`.
pub fn add_uniform_outliers<R: Rng + ?Sized>(
    cloud: &PointCloud,
    ratio: f64,
    range: f64,
    rng: &mut R,
) -> Result<PointCloud, BenchError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(BenchError::InvalidSpec("outlier ratio must lie in [0, 1]".into()));
    }
    let count = (ratio * cloud.len() as f64).floor() as usize;
    if count == 0 {
        return Ok(cloud.clone());
    }
    let n = normals(cloud)?;
    let chosen = rand::seq::index::sample(rng, cloud.len(), count).into_vec();
    let dist = Uniform::new_inclusive(-range, range);
    let offsets: Vec<(usize, Vec3)> = chosen
        .into_iter()
        .map(|i| (i, n[i] * dist.sample(rng)))
        .collect();
    Ok(displaced(cloud, offsets.into_iter()))
}

/// Drops the `⌊ratio·N⌋` points furthest along a random axis.
pub fn crop_along_axis<R: Rng + ?Sized>(
    cloud: &PointCloud,
    ratio: f64,
    rng: &mut R,
) -> Result<PointCloud, BenchError> {
    if ratio == 0.0 {
        return Ok(cloud.clone());
    }
    let axis = random_unit_vector(rng);
    crop_along(cloud, ratio, &axis)
}

pub fn crop_along(cloud: &PointCloud, ratio: f64, axis: &Vec3) -> Result<PointCloud, BenchError> {
    if !(0.0..0.5).contains(&ratio) {
        return Err(BenchError::InvalidSpec("crop ratio must lie in [0, 0.5)".into()));
    }
    let remove = (ratio * cloud.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    let key = |i: usize| cloud.points()[i].dot(axis);
    order.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
    let mut keep = order[..cloud.len() - remove].to_vec();
    keep.sort_unstable();
    Ok(cloud.select(&keep))
}
