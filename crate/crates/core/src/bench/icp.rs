//! Point-to-point ICP, the classical baseline.

use nalgebra::Matrix3;

use super::BenchError;
use crate::geometry::{KdTree, PointCloud, Pose, Vec3};
use crate::registration::RegistrationResult;

pub const DEFAULT_ICP_MAX_ITERS: usize = 100;
pub const DEFAULT_ICP_TOL: f64 = 1e-8;

/// Relative size below which a singular value of the cross-covariance counts
/// as zero.
const RANK_TOL: f64 = 1e-10;

/// Least-squares rigid pose `h` minimizing `Σ |h·src_i − dst_i|²`, with the
/// reflection guard. `None` when the cross-covariance has rank below 2.
pub fn kabsch(src: &[Vec3], dst: &[Vec3]) -> Option<Pose> {
    let n = src.len().min(dst.len());
    if n == 0 {
        return None;
    }
    let cs = src[..n].iter().sum::<Vec3>() / n as f64;
    let cd = dst[..n].iter().sum::<Vec3>() / n as f64;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[0] <= 0.0 || sv[1] <= RANK_TOL * sv[0] {
        return None;
    }
    let u = svd.u?;
    let v = svd.v_t?.transpose();
    let mut d = Matrix3::identity();
    d[(2, 2)] = (v * u.transpose()).determinant().signum();
    let rotation = v * d * u.transpose();
    Some(Pose::new(rotation, cd - rotation * cs))
}

/// Aligns `z` onto `x` starting from `init`. The objective trace holds the
/// mean nearest-neighbor distance before each update; iteration stops once it
/// changes by less than `tol`.
pub fn icp_baseline(
    x: &PointCloud,
    z: &PointCloud,
    init: &Pose,
    max_iters: usize,
    tol: f64,
) -> Result<RegistrationResult, BenchError> {
    if x.len() < 3 || z.len() < 3 {
        return Err(BenchError::TooFewPoints);
    }
    let tree = KdTree::new(x.points());
    let mut pose = *init;
    let mut trace = Vec::new();
    let mut matched = vec![Vec3::zeros(); z.len()];
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let mut residual = 0.0;
        for (m, p) in matched.iter_mut().zip(z.points()) {
            let q = pose.apply(p);
            *m = x.points()[tree.knn(&q, 1, None)[0]];
            residual += (q - *m).norm();
        }
        residual /= z.len() as f64;
        let settled = trace.last().is_some_and(|&prev: &f64| (prev - residual).abs() < tol);
        trace.push(residual);
        if settled {
            converged = true;
            break;
        }
        if iterations == max_iters {
            break;
        }
        let Some(next) = kabsch(z.points(), &matched) else {
            return Err(BenchError::DegenerateConfiguration(Box::new(RegistrationResult {
                pose,
                final_ell: 0.0,
                iterations,
                objective_trace: trace,
                converged: false,
            })));
        };
        pose = next;
        iterations += 1;
    }
    Ok(RegistrationResult {
        pose,
        final_ell: 0.0,
        iterations,
        objective_trace: trace,
        converged,
    })
}
