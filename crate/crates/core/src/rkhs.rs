//! Kernel and RKHS inner products between feature clouds.
//!
//! Each feature cloud `X` induces the function `f_X = Σ_i l_i k((x_i ⊕ f_i), ·)`
//! with the product kernel
//!
//! ```text
//! k(x ⊕ f, z ⊕ g) = exp(-|x - z|² / 2ℓ²) · tanh(1 + Σ_c ⟨f_c, g_c⟩)
//! ```
//!
//! Inner products expand into pair sums `Σ_ij l_i l_j k(...)`. Pairs farther
//! apart than `prune_factor · ℓ` are skipped; the skipped mass is below
//! `exp(-prune_factor² / 2)` per pair.
//!
//! Pair loops run in parallel over one cloud and reduce serially in index
//! order, so results do not depend on the worker count.

use rayon::prelude::*;
use thiserror::Error;

use crate::features::{apply_pose_features, FeatureCloud};
use crate::geometry::{KdTree, Pose, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("channel count mismatch: {0} vs {1}")]
    ChannelMismatch(usize, usize),
}

/// Which kernel multiplies the RBF term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelMode {
    /// RBF on coordinates times tanh on channel dot products.
    RbfTanh,
    /// RBF on coordinates alone; channels are ignored.
    RbfOnly,
}

impl KernelMode {
    pub fn name(&self) -> &'static str {
        match self {
            KernelMode::RbfTanh => "rbf-tanh",
            KernelMode::RbfOnly => "rbf-only",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub lengthscale: f64,
    /// Pairs beyond `prune_factor * lengthscale` contribute nothing.
    pub prune_factor: f64,
    pub mode: KernelMode,
}

impl KernelParams {
    pub const DEFAULT_PRUNE_FACTOR: f64 = 3.0;

    pub fn new(lengthscale: f64) -> Self {
        Self {
            lengthscale,
            prune_factor: Self::DEFAULT_PRUNE_FACTOR,
            mode: KernelMode::RbfTanh,
        }
    }

    pub fn with_prune_factor(mut self, prune_factor: f64) -> Self {
        self.prune_factor = prune_factor;
        self
    }

    pub fn with_mode(mut self, mode: KernelMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_lengthscale(mut self, lengthscale: f64) -> Self {
        self.lengthscale = lengthscale;
        self
    }

    pub fn radius(&self) -> f64 {
        self.prune_factor * self.lengthscale
    }
}

/// Lengthscale clamp, in units of the cloud's bounding-box diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LengthscaleBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for LengthscaleBounds {
    fn default() -> Self {
        Self { min: 0.01, max: 2.0 }
    }
}

impl LengthscaleBounds {
    pub fn scaled(&self, scale: f64) -> Self {
        Self {
            min: self.min * scale,
            max: self.max * scale,
        }
    }

    pub fn clamp(&self, ell: f64) -> f64 {
        ell.clamp(self.min, self.max)
    }
}

pub fn rbf(x: &Vec3, z: &Vec3, lengthscale: f64) -> f64 {
    (-(x - z).norm_squared() / (2.0 * lengthscale * lengthscale)).exp()
}

#[inline]
fn channel_dot(f: &[Vec3], g: &[Vec3]) -> f64 {
    f.iter().zip(g).map(|(a, b)| a.dot(b)).sum()
}

/// `tanh` through one `exp`; several times cheaper than the libm call and
/// within a few ulps for the arguments the kernel sees.
#[inline]
fn tanh_exp(u: f64) -> f64 {
    if u.abs() > 20.0 {
        return u.signum();
    }
    let e = (-2.0 * u).exp();
    (1.0 - e) / (1.0 + e)
}

/// Feature factor of the kernel: `tanh(1 + f·g)` or 1 in RBF-only mode.
#[inline]
pub fn feature_factor(f: &[Vec3], g: &[Vec3], mode: KernelMode) -> f64 {
    match mode {
        KernelMode::RbfTanh => tanh_exp(1.0 + channel_dot(f, g)),
        KernelMode::RbfOnly => 1.0,
    }
}

/// `k(x ⊕ f, z ⊕ g)`; symmetric in its two arguments.
pub fn kernel_eval(
    x: &Vec3,
    f: &[Vec3],
    z: &Vec3,
    g: &[Vec3],
    params: &KernelParams,
) -> Result<f64, KernelError> {
    if f.len() != g.len() {
        return Err(KernelError::ChannelMismatch(f.len(), g.len()));
    }
    Ok(rbf(x, z, params.lengthscale) * feature_factor(f, g, params.mode))
}

/// A cross-term pair sum and its derivatives.
///
/// `grad_rho`/`grad_omega` are derivatives of `value` with respect to a left
/// twist `exp(ξ)` applied to the moving cloud; `d_ell` is `∂value/∂ℓ`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairSum {
    pub value: f64,
    pub grad_rho: Vec3,
    pub grad_omega: Vec3,
    pub d_ell: f64,
}

impl PairSum {
    fn add(mut self, o: &PairSum) -> Self {
        self.value += o.value;
        self.grad_rho += o.grad_rho;
        self.grad_omega += o.grad_omega;
        self.d_ell += o.d_ell;
        self
    }
}

fn check_channels(a: &FeatureCloud, b: &FeatureCloud) -> Result<(), KernelError> {
    if a.n_channels() != b.n_channels() {
        return Err(KernelError::ChannelMismatch(a.n_channels(), b.n_channels()));
    }
    Ok(())
}

/// `Σ_ij l_i l_j k(x_i ⊕ f_i, z_j ⊕ g_j)` for an already-posed `moved`, with
/// twist and lengthscale derivatives when `with_grad` is set. `tree` indexes
/// `fixed.points()`.
pub fn cross_sum(
    fixed: &FeatureCloud,
    tree: &KdTree<'_>,
    moved: &FeatureCloud,
    params: &KernelParams,
    with_grad: bool,
) -> Result<PairSum, KernelError> {
    check_channels(fixed, moved)?;
    let ell2 = params.lengthscale * params.lengthscale;
    let inv_2ell2 = 0.5 / ell2;
    let inv_ell3 = 1.0 / (ell2 * params.lengthscale);
    let radius = params.radius();
    let c = moved.n_channels();
    let tanh_mode = params.mode == KernelMode::RbfTanh;
    let partials: Vec<PairSum> = (0..moved.len())
        .into_par_iter()
        .map(|j| {
            let z = moved.points()[j];
            let g = moved.channels(j);
            let lz = moved.labels()[j];
            let mut value = 0.0;
            let mut coord = Vec3::zeros();
            let mut d_ell = 0.0;
            let mut chan_acc = vec![Vec3::zeros(); if with_grad && tanh_mode { c } else { 0 }];
            tree.for_each_within(&z, radius, |i, s| {
                let w = fixed.labels()[i] * lz;
                let e = (-s * inv_2ell2).exp();
                let f = fixed.channels(i);
                let t = feature_factor(f, g, params.mode);
                let wk = w * e * t;
                value += wk;
                if with_grad {
                    coord += (fixed.points()[i] - z) * (wk / ell2);
                    d_ell += wk * s * inv_ell3;
                    if tanh_mode {
                        let dt = w * e * (1.0 - t * t);
                        for (acc, fc) in chan_acc.iter_mut().zip(f) {
                            *acc += fc * dt;
                        }
                    }
                }
            });
            let mut grad_omega = z.cross(&coord);
            for (gc, acc) in g.iter().zip(&chan_acc) {
                grad_omega += gc.cross(acc);
            }
            PairSum {
                value,
                grad_rho: coord,
                grad_omega,
                d_ell,
            }
        })
        .collect();
    Ok(partials.iter().fold(PairSum::default(), |a, p| a.add(p)))
}

/// `⟨f_X, f_X⟩` and its lengthscale derivative. `tree` indexes `fc.points()`.
pub fn self_sum(fc: &FeatureCloud, tree: &KdTree<'_>, params: &KernelParams) -> (f64, f64) {
    let ell2 = params.lengthscale * params.lengthscale;
    let inv_2ell2 = 0.5 / ell2;
    let inv_ell3 = 1.0 / (ell2 * params.lengthscale);
    let radius = params.radius();
    let partials: Vec<(f64, f64)> = (0..fc.len())
        .into_par_iter()
        .map(|i| {
            let x = fc.points()[i];
            let f = fc.channels(i);
            let li = fc.labels()[i];
            let (mut v, mut d) = (0.0, 0.0);
            tree.for_each_within(&x, radius, |j, s| {
                // Each unordered pair once, doubled; the diagonal once.
                let mult = match j.cmp(&i) {
                    std::cmp::Ordering::Less => return,
                    std::cmp::Ordering::Equal => 1.0,
                    std::cmp::Ordering::Greater => 2.0,
                };
                let wk = mult
                    * li
                    * fc.labels()[j]
                    * (-s * inv_2ell2).exp()
                    * feature_factor(f, fc.channels(j), params.mode);
                v += wk;
                d += wk * s * inv_ell3;
            });
            (v, d)
        })
        .collect();
    partials
        .iter()
        .fold((0.0, 0.0), |(v, d), p| (v + p.0, d + p.1))
}

// Self-pair tables beyond this many pairs fall back to tree queries.
const SELF_PAIR_LIMIT: usize = 1 << 23;
const PAIR_CHUNK: usize = 4096;

/// All unordered pairs of one cloud with their pose-independent parts
/// precomputed: squared distance and `multiplicity · l_i l_j · tanh(...)`,
/// sorted by distance. Self terms then cost one `exp` per pair in range.
pub struct SelfPairs {
    dist2: Vec<f64>,
    weight: Vec<f64>,
}

impl SelfPairs {
    /// `None` when the cloud has too many pairs to tabulate.
    pub fn build(fc: &FeatureCloud, mode: KernelMode) -> Option<Self> {
        let n = fc.len();
        if n * (n + 1) / 2 > SELF_PAIR_LIMIT {
            return None;
        }
        let rows: Vec<Vec<(f64, f64)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = fc.points()[i];
                let f = fc.channels(i);
                let li = fc.labels()[i];
                (i..n)
                    .map(|j| {
                        let mult = if i == j { 1.0 } else { 2.0 };
                        let w = mult * li * fc.labels()[j] * feature_factor(f, fc.channels(j), mode);
                        ((fc.points()[j] - x).norm_squared(), w)
                    })
                    .collect()
            })
            .collect();
        let mut pairs: Vec<(f64, f64)> = rows.into_iter().flatten().collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (dist2, weight) = pairs.into_iter().unzip();
        Some(Self { dist2, weight })
    }

    /// Same value and lengthscale derivative as [`self_sum`], up to rounding.
    pub fn sum(&self, params: &KernelParams) -> (f64, f64) {
        let ell2 = params.lengthscale * params.lengthscale;
        let inv_2ell2 = 0.5 / ell2;
        let inv_ell3 = 1.0 / (ell2 * params.lengthscale);
        let r = params.radius();
        let end = self.dist2.partition_point(|&s| s <= r * r);
        let partials: Vec<(f64, f64)> = self.dist2[..end]
            .par_chunks(PAIR_CHUNK)
            .zip(self.weight[..end].par_chunks(PAIR_CHUNK))
            .map(|(ds, ws)| {
                let (mut v, mut d) = (0.0, 0.0);
                for (&s, &w) in ds.iter().zip(ws) {
                    let wk = w * (-s * inv_2ell2).exp();
                    v += wk;
                    d += wk * s;
                }
                (v, d * inv_ell3)
            })
            .collect();
        partials
            .iter()
            .fold((0.0, 0.0), |(v, d), p| (v + p.0, d + p.1))
    }
}

/// `⟨f_X, f_{hZ}⟩` with pruning.
pub fn cross_inner_product(
    fc_x: &FeatureCloud,
    fc_z: &FeatureCloud,
    pose: &Pose,
    params: &KernelParams,
) -> Result<f64, KernelError> {
    let tree = KdTree::new(fc_x.points());
    let moved = apply_pose_features(pose, fc_z);
    Ok(cross_sum(fc_x, &tree, &moved, params, false)?.value)
}

/// `⟨f_X, f_X⟩` with the same pruning as the cross term.
pub fn self_inner_product(fc: &FeatureCloud, params: &KernelParams) -> f64 {
    let tree = KdTree::new(fc.points());
    self_sum(fc, &tree, params).0
}

/// `‖f_X − f_{hZ}‖²`, clamped at zero. The self terms are evaluated without
/// the pose: the kernel only sees distances and channel dot products.
pub fn rkhs_distance(
    fc_x: &FeatureCloud,
    fc_z: &FeatureCloud,
    pose: &Pose,
    params: &KernelParams,
) -> Result<f64, KernelError> {
    let cross = cross_inner_product(fc_x, fc_z, pose, params)?;
    let d = self_inner_product(fc_x, params) + self_inner_product(fc_z, params) - 2.0 * cross;
    Ok(d.max(0.0))
}

/// Derivatives of `d(f_X, f_{hZ})` with respect to every channel vector of `X`
/// and of the unposed `Z`, at fixed pose and lengthscale.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGradients {
    pub value: f64,
    pub d_x: Vec<Vec3>,
    pub d_z: Vec<Vec3>,
}

/// `Σ_j w_ij e_ij (1 - t_ij²) g_j` per channel of every `a` point, where the
/// pairs run over `b` (indexed by `tree_b`). With `same` the sum is the
/// derivative of the self term and is doubled.
fn channel_pull(
    a: &FeatureCloud,
    b: &FeatureCloud,
    tree_b: &KdTree<'_>,
    params: &KernelParams,
) -> (f64, Vec<Vec3>) {
    let c = a.n_channels();
    let inv_2ell2 = 0.5 / (params.lengthscale * params.lengthscale);
    let radius = params.radius();
    let partials: Vec<(f64, Vec<Vec3>)> = (0..a.len())
        .into_par_iter()
        .map(|i| {
            let x = a.points()[i];
            let f = a.channels(i);
            let li = a.labels()[i];
            let mut v = 0.0;
            let mut acc = vec![Vec3::zeros(); c];
            tree_b.for_each_within(&x, radius, |j, s| {
                let w = li * b.labels()[j];
                let e = (-s * inv_2ell2).exp();
                let g = b.channels(j);
                let t = feature_factor(f, g, params.mode);
                v += w * e * t;
                if params.mode == KernelMode::RbfTanh {
                    let dt = w * e * (1.0 - t * t);
                    for (ac, gc) in acc.iter_mut().zip(g) {
                        *ac += gc * dt;
                    }
                }
            });
            (v, acc)
        })
        .collect();
    let mut value = 0.0;
    let mut out = Vec::with_capacity(a.len() * c);
    for (v, acc) in partials {
        value += v;
        out.extend(acc);
    }
    (value, out)
}

pub fn feature_gradients(
    fc_x: &FeatureCloud,
    fc_z: &FeatureCloud,
    pose: &Pose,
    params: &KernelParams,
) -> Result<FeatureGradients, KernelError> {
    check_channels(fc_x, fc_z)?;
    let moved = apply_pose_features(pose, fc_z);
    let tree_x = KdTree::new(fc_x.points());
    let tree_z = KdTree::new(fc_z.points());
    let tree_moved = KdTree::new(moved.points());

    let (sxx, pull_xx) = channel_pull(fc_x, fc_x, &tree_x, params);
    let (szz, pull_zz) = channel_pull(fc_z, fc_z, &tree_z, params);
    let (sxz, pull_xz) = channel_pull(fc_x, &moved, &tree_moved, params);
    let (_, pull_zx) = channel_pull(&moved, fc_x, &tree_x, params);

    let rt = pose.rotation.transpose();
    let d_x = pull_xx
        .iter()
        .zip(&pull_xz)
        .map(|(a, b)| a * 2.0 - b * 2.0)
        .collect();
    let d_z = pull_zz
        .iter()
        .zip(&pull_zx)
        .map(|(a, b)| a * 2.0 - rt * b * 2.0)
        .collect();
    Ok(FeatureGradients {
        value: sxx + szz - 2.0 * sxz,
        d_x,
        d_z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{random_unit_vector, se3_exp, Twist};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TANH1: f64 = 0.7615941559557649;

    fn single(x: Vec3, f: Vec<Vec3>) -> FeatureCloud {
        let c = f.len();
        FeatureCloud::new(vec![x], f, c, vec![1.0]).unwrap()
    }

    fn random_cloud(n: usize, c: usize, rng: &mut ChaCha8Rng) -> FeatureCloud {
        let pts = (0..n)
            .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let ch = (0..n * c)
            .map(|_| random_unit_vector(rng) * rng.gen_range(0.0..0.9))
            .collect();
        let labels = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
        FeatureCloud::new(pts, ch, c, labels).unwrap()
    }

    /// Unpruned double sum straight from the definition.
    fn brute_inner(a: &FeatureCloud, b: &FeatureCloud, params: &KernelParams) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            for j in 0..b.len() {
                s += a.labels()[i]
                    * b.labels()[j]
                    * kernel_eval(&a.points()[i], a.channels(i), &b.points()[j], b.channels(j), params)
                        .unwrap();
            }
        }
        s
    }

    #[test]
    fn rbf_values() {
        let x = Vec3::new(0.2, -0.3, 0.9);
        assert_eq!(rbf(&x, &x, 0.4), 1.0);
        let ell = 0.25;
        let z = x + random_unit_vector(&mut ChaCha8Rng::seed_from_u64(0)) * (ell * 2f64.sqrt());
        assert!((rbf(&x, &z, ell) - (-1f64).exp()).abs() < 1e-12);
        let far = x + Vec3::x() * (10.0 * ell);
        assert!((rbf(&x, &far, ell) - 1.9287498479639178e-22).abs() < 1e-30);
        // Beyond prune_factor * ell the pruned sum drops the pair entirely.
        let params = KernelParams::new(ell);
        let a = single(x, vec![Vec3::zeros()]);
        let b = single(far, vec![Vec3::zeros()]);
        assert_eq!(cross_inner_product(&a, &b, &Pose::identity(), &params).unwrap(), 0.0);
    }

    #[test]
    fn kernel_values_and_symmetry() {
        let p = KernelParams::new(0.3);
        let x = Vec3::new(1.0, 2.0, 3.0);
        let zero = [Vec3::zeros()];
        assert!((kernel_eval(&x, &zero, &x, &zero, &p).unwrap() - TANH1).abs() < 1e-15);
        let e = [Vec3::x()];
        assert!((kernel_eval(&x, &e, &x, &e, &p).unwrap() - 0.9640275800758169).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let f: Vec<Vec3> = (0..4).map(|_| random_unit_vector(&mut rng) * 0.7).collect();
            let g: Vec<Vec3> = (0..4).map(|_| random_unit_vector(&mut rng) * 0.7).collect();
            let z = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            assert_eq!(
                kernel_eval(&x, &f, &z, &g, &p).unwrap(),
                kernel_eval(&z, &g, &x, &f, &p).unwrap()
            );
        }
        assert_eq!(
            kernel_eval(&x, &[Vec3::x()], &x, &[Vec3::x(), Vec3::y()], &p),
            Err(KernelError::ChannelMismatch(1, 2))
        );
    }

    #[test]
    fn kernel_is_bounded_for_bounded_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for c in 1..5 {
            let p = KernelParams::new(0.2);
            for _ in 0..200 {
                let f: Vec<Vec3> = (0..c).map(|_| random_unit_vector(&mut rng) * rng.gen_range(0.0..0.999)).collect();
                let g: Vec<Vec3> = (0..c).map(|_| random_unit_vector(&mut rng) * rng.gen_range(0.0..0.999)).collect();
                let x = Vec3::new(rng.gen(), rng.gen(), rng.gen()) * 0.3;
                let k = kernel_eval(&x, &f, &Vec3::zeros(), &g, &p).unwrap();
                assert!(k.abs() < (1.0 + c as f64).tanh());
                if c == 1 {
                    assert!(k > 0.0);
                }
            }
        }
    }

    #[test]
    fn single_point_cross_term() {
        let a = single(Vec3::new(0.1, 0.2, 0.3), vec![Vec3::zeros()]);
        let v = cross_inner_product(&a, &a, &Pose::identity(), &KernelParams::new(0.5)).unwrap();
        assert!((v - TANH1).abs() < 1e-15);
    }

    #[test]
    fn empty_moving_cloud_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_cloud(20, 2, &mut rng);
        let empty = FeatureCloud::new(vec![], vec![], 2, vec![]).unwrap();
        assert_eq!(cross_inner_product(&a, &empty, &Pose::identity(), &KernelParams::new(0.3)).unwrap(), 0.0);
    }

    #[test]
    fn pruned_sums_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for mode in [KernelMode::RbfTanh, KernelMode::RbfOnly] {
            // Unit-diagonal clouds with unit labels.
            let unit = |rng: &mut ChaCha8Rng| {
                let fc = random_cloud(100, 3, rng);
                let pts = fc.points().iter().map(|p| p / 3f64.sqrt()).collect();
                FeatureCloud::new(pts, fc.all_channels().to_vec(), 3, vec![1.0; 100]).unwrap()
            };
            let x = unit(&mut rng);
            let z = unit(&mut rng);
            let pose = se3_exp(&Twist::new(Vec3::new(0.05, 0.0, -0.1), random_unit_vector(&mut rng) * 0.4));
            let params = KernelParams::new(0.12).with_prune_factor(6.0).with_mode(mode);
            let fast = cross_inner_product(&x, &z, &pose, &params).unwrap();
            let slow = brute_inner(&x, &apply_pose_features(&pose, &z), &params);
            assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
            let fast = self_inner_product(&x, &params);
            let slow = brute_inner(&x, &x, &params);
            assert!((fast - slow).abs() < 1e-6);
        }
    }

    #[test]
    fn self_pair_table_matches_tree_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_cloud(150, 2, &mut rng);
        let tree = KdTree::new(x.points());
        for mode in [KernelMode::RbfTanh, KernelMode::RbfOnly] {
            let table = SelfPairs::build(&x, mode).unwrap();
            for ell in [0.05, 0.2, 0.7] {
                let p = KernelParams::new(ell).with_mode(mode);
                let (a, da) = self_sum(&x, &tree, &p);
                let (b, db) = table.sum(&p);
                assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
                assert!((da - db).abs() < 1e-9 * da.abs().max(1.0));
            }
        }
    }

    #[test]
    fn exp_based_tanh_is_accurate() {
        for i in -400..400 {
            let u = i as f64 * 0.0625;
            assert!((tanh_exp(u) - u.tanh()).abs() < 4e-16, "{u}");
        }
    }

    #[test]
    fn distance_of_identical_clouds_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_cloud(80, 2, &mut rng);
        let d = rkhs_distance(&x, &x, &Pose::identity(), &KernelParams::new(0.2)).unwrap();
        assert!(d.abs() < 1e-9);
    }

    #[test]
    fn two_point_distance_closed_form() {
        let ell = 0.3;
        for r in [0.0, 0.1, 0.25, 0.6] {
            let a = single(Vec3::zeros(), vec![Vec3::zeros()]);
            let b = single(Vec3::new(0.0, r, 0.0), vec![Vec3::zeros()]);
            let d = rkhs_distance(&a, &b, &Pose::identity(), &KernelParams::new(ell).with_prune_factor(10.0)).unwrap();
            let expected = 2.0 * TANH1 * (1.0 - (-r * r / (2.0 * ell * ell)).exp());
            assert!((d - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn distance_with_pose_equals_distance_of_moved_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_cloud(60, 2, &mut rng);
        let z = random_cloud(60, 2, &mut rng);
        let pose = se3_exp(&Twist::new(Vec3::new(0.1, 0.2, -0.1), random_unit_vector(&mut rng)));
        let p = KernelParams::new(0.25);
        let a = rkhs_distance(&x, &z, &pose, &p).unwrap();
        let b = rkhs_distance(&x, &apply_pose_features(&pose, &z), &Pose::identity(), &p).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn self_term_is_pose_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = random_cloud(90, 3, &mut rng);
        let p = KernelParams::new(0.2);
        let base = self_inner_product(&z, &p);
        for _ in 0..10 {
            let pose = se3_exp(&Twist::new(random_unit_vector(&mut rng), random_unit_vector(&mut rng) * 2.5));
            let moved = self_inner_product(&apply_pose_features(&pose, &z), &p);
            assert!((moved - base).abs() < 1e-9);
        }
    }

    #[test]
    fn feature_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_cloud(25, 2, &mut rng);
        let z = random_cloud(25, 2, &mut rng);
        let pose = se3_exp(&Twist::new(Vec3::new(0.02, 0.0, 0.01), random_unit_vector(&mut rng) * 0.2));
        let p = KernelParams::new(0.3).with_prune_factor(8.0);
        let g = feature_gradients(&x, &z, &pose, &p).unwrap();
        let d = |x: &FeatureCloud, z: &FeatureCloud| {
            let cross = cross_inner_product(x, z, &pose, &p).unwrap();
            self_inner_product(x, &p) + self_inner_product(z, &p) - 2.0 * cross
        };
        assert!((g.value - d(&x, &z)).abs() < 1e-9);
        let h = 1e-6;
        let perturb = |fc: &FeatureCloud, idx: usize, axis: usize, delta: f64| {
            let mut ch = fc.all_channels().to_vec();
            ch[idx][axis] += delta;
            FeatureCloud::new(fc.points().to_vec(), ch, fc.n_channels(), fc.labels().to_vec()).unwrap()
        };
        for idx in [0, 7, 19, 33] {
            for axis in 0..3 {
                let num = (d(&perturb(&x, idx, axis, h), &z) - d(&perturb(&x, idx, axis, -h), &z)) / (2.0 * h);
                assert!((num - g.d_x[idx][axis]).abs() < 1e-6 * (1.0 + num.abs()));
                let num = (d(&x, &perturb(&z, idx, axis, h)) - d(&x, &perturb(&z, idx, axis, -h))) / (2.0 * h);
                assert!((num - g.d_z[idx][axis]).abs() < 1e-6 * (1.0 + num.abs()));
            }
        }
    }
}
