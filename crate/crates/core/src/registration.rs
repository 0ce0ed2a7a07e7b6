//! Inner loop: joint gradient descent on pose and lengthscale.
//!
//! The moving cloud `Z` is posed by `h` and compared to the fixed cloud `X`
//! through `d(h, ℓ) = ⟨f_X,f_X⟩ + ⟨f_Z,f_Z⟩ − 2⟨f_X, f_{hZ}⟩`. Pose updates are
//! left-multiplicative, `h ← exp(−η ∇ξ) h`, with `∇ξ` the derivative with
//! respect to a twist applied on the left at `ξ = 0`.
//!
//! Gradients are divided by `Σ l_X · Σ l_Z` before stepping so the step sizes
//! do not depend on the point counts. The first step is `−pose_step ∇ξ`; later
//! twist steps follow an L-BFGS direction built from recent steps and gradient
//! changes. The hard pruning cutoff makes `d` jump by a few kernel values
//! whenever a pair crosses the radius, and plain gradient steps in a stiff
//! valley stall against those jumps well before the minimum. The lengthscale
//! keeps the fixed rate
//! `pose_step / ell_lr_ratio`: minimizing `d` over `ℓ` alone drifts towards
//! large `ℓ`, and the slow rate keeps `ℓ` near its initial value. A trial step
//! that raises the objective is halved (at most [`MAX_HALVINGS`] times), so
//! accepted values never increase.

use std::collections::VecDeque;

use thiserror::Error;

use crate::features::{apply_pose_features, FeatureCloud};
use crate::geometry::{se3_exp, KdTree, Pose, Twist};
use crate::rkhs::{cross_sum, self_sum, KernelMode, KernelParams, LengthscaleBounds, SelfPairs};

pub const MAX_HALVINGS: usize = 8;


#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistrationError {
    #[error("empty point cloud")]
    EmptyCloud,
    #[error("channel count mismatch: {0} vs {1}")]
    ChannelMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationConfig {
    pub max_iters: usize,
    /// Base step on the pair-normalized twist gradient.
    pub pose_step: f64,
    /// The lengthscale step is `pose_step / ell_lr_ratio`.
    pub ell_lr_ratio: f64,
    pub ell_init: f64,
    pub ell_bounds: LengthscaleBounds,
    pub prune_factor: f64,
    pub mode: KernelMode,
    /// Stop once an accepted twist step is shorter than this.
    pub convergence_eps: f64,
    /// Upper bound on the norm of a single twist step.
    pub max_step: f64,
    /// Number of step/gradient-change pairs kept for the quasi-Newton
    /// direction; 0 gives plain gradient descent.
    pub memory: usize,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            max_iters: 300,
            pose_step: 0.05,
            ell_lr_ratio: 100.0,
            ell_init: 0.3,
            ell_bounds: LengthscaleBounds::default(),
            prune_factor: KernelParams::DEFAULT_PRUNE_FACTOR,
            mode: KernelMode::RbfTanh,
            convergence_eps: 1e-6,
            max_step: 0.25,
            memory: 8,
        }
    }
}

impl RegistrationConfig {
    /// Default lengthscale for a given bound on the initial rotation error.
    pub fn ell_init_for_angle(max_angle_deg: f64) -> f64 {
        if max_angle_deg > 45.0 {
            0.5
        } else {
            0.3
        }
    }

    pub fn lengthscale_step(&self) -> f64 {
        self.pose_step / self.ell_lr_ratio
    }

    pub fn kernel_params(&self, lengthscale: f64) -> KernelParams {
        KernelParams::new(lengthscale)
            .with_prune_factor(self.prune_factor)
            .with_mode(self.mode)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Estimate of the pose taking `Z` onto `X`.
    pub pose: Pose,
    pub final_ell: f64,
    /// Objective at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
    /// Number of accepted steps.
    pub iterations: usize,
    pub converged: bool,
}

/// Objective value and derivatives at one `(pose, ℓ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub grad: Twist,
    pub d_ell: f64,
}

/// Cached evaluation state for one `(X, Z)` pair.
pub struct Objective<'a> {
    x: &'a FeatureCloud,
    z: &'a FeatureCloud,
    tree_x: KdTree<'a>,
    tree_z: KdTree<'a>,
    pairs_x: Option<SelfPairs>,
    pairs_z: Option<SelfPairs>,
    prune_factor: f64,
    mode: KernelMode,
    normalizer: f64,
}

impl<'a> Objective<'a> {
    pub fn new(
        x: &'a FeatureCloud,
        z: &'a FeatureCloud,
        prune_factor: f64,
        mode: KernelMode,
    ) -> Result<Self, RegistrationError> {
        if x.is_empty() || z.is_empty() {
            return Err(RegistrationError::EmptyCloud);
        }
        if x.n_channels() != z.n_channels() {
            return Err(RegistrationError::ChannelMismatch(
                x.n_channels(),
                z.n_channels(),
            ));
        }
        let lx: f64 = x.labels().iter().sum();
        let lz: f64 = z.labels().iter().sum();
        let normalizer = (lx * lz).abs();
        Ok(Self {
            x,
            z,
            tree_x: KdTree::new(x.points()),
            tree_z: KdTree::new(z.points()),
            pairs_x: SelfPairs::build(x, mode),
            pairs_z: SelfPairs::build(z, mode),
            prune_factor,
            mode,
            normalizer: if normalizer > 0.0 { normalizer } else { 1.0 },
        })
    }

    /// `Σ l_X · Σ l_Z`, the scale the solver divides gradients by.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    fn params(&self, ell: f64) -> KernelParams {
        KernelParams::new(ell)
            .with_prune_factor(self.prune_factor)
            .with_mode(self.mode)
    }

    /// Unclamped `d(h, ℓ)` with its twist and lengthscale derivatives. The
    /// pruned pair set is the one seen at `(pose, ell)`.
    pub fn evaluate(&self, pose: &Pose, ell: f64) -> Evaluation {
        let params = self.params(ell);
        let moved = apply_pose_features(pose, self.z);
        let cross = cross_sum(self.x, &self.tree_x, &moved, &params, true)
            .expect("channel counts checked in new");
        let (sxx, dxx) = match &self.pairs_x {
            Some(t) => t.sum(&params),
            None => self_sum(self.x, &self.tree_x, &params),
        };
        let (szz, dzz) = match &self.pairs_z {
            Some(t) => t.sum(&params),
            None => self_sum(self.z, &self.tree_z, &params),
        };
        Evaluation {
            value: sxx + szz - 2.0 * cross.value,
            grad: Twist::new(cross.grad_rho * -2.0, cross.grad_omega * -2.0),
            d_ell: dxx + dzz - 2.0 * cross.d_ell,
        }
    }
}

/// `(d, ∇ξ d, ∂d/∂ℓ)` at `pose`, with `ℓ` taken from `params`.
///
/// The value is the raw pair-sum expression; with the tanh factor the kernel
/// is not positive definite and it can dip slightly below zero.
pub fn objective_and_gradient(
    fc_x: &FeatureCloud,
    fc_z: &FeatureCloud,
    pose: &Pose,
    params: &KernelParams,
) -> Result<(f64, Twist, f64), RegistrationError> {
    let obj = Objective::new(fc_x, fc_z, params.prune_factor, params.mode)?;
    let e = obj.evaluate(pose, params.lengthscale);
    Ok((e.value, e.grad, e.d_ell))
}

/// Registers `Z` onto `X` starting from the identity.
pub fn register(
    fc_x: &FeatureCloud,
    fc_z: &FeatureCloud,
    config: &RegistrationConfig,
) -> Result<RegistrationResult, RegistrationError> {
    register_from(fc_x, fc_z, &Pose::identity(), config)
}

pub fn register_from(
    fc_x: &FeatureCloud,
    fc_z: &FeatureCloud,
    init: &Pose,
    config: &RegistrationConfig,
) -> Result<RegistrationResult, RegistrationError> {
    let obj = Objective::new(fc_x, fc_z, config.prune_factor, config.mode)?;
    let norm = obj.normalizer();

    let mut pose = *init;
    let mut ell = config.ell_bounds.clamp(config.ell_init);
    let mut current = obj.evaluate(&pose, ell);
    let mut trace = vec![current.value];
    let mut history: VecDeque<([f64; 6], [f64; 6])> = VecDeque::new();
    let mut converged = false;

    while trace.len() <= config.max_iters {
        let g = current.grad.scaled(1.0 / norm);
        let g_ell = current.d_ell / norm;
        if config.pose_step * g.norm() < config.convergence_eps {
            converged = true;
            break;
        }
        let search = |direction: Twist| {
            // Cap the twist length; halving then acts on the capped step.
            let direction = direction.scaled((config.max_step / direction.norm()).min(1.0));
            let mut shrink = 1.0;
            for _ in 0..=MAX_HALVINGS {
                let step = direction.scaled(shrink);
                let trial_pose = se3_exp(&step).compose(&pose);
                let trial_ell = config
                    .ell_bounds
                    .clamp(ell - config.lengthscale_step() * shrink * g_ell);
                let trial = obj.evaluate(&trial_pose, trial_ell);
                if trial.value <= current.value {
                    return Some((step, trial_pose, trial_ell, trial, shrink));
                }
                shrink *= 0.5;
            }
            None
        };
        let steepest = g.scaled(-config.pose_step);
        let mut accepted = None;
        if !history.is_empty() {
            let direction = lbfgs_direction(&g, &history);
            if dot(&direction.to_array(), &g.to_array()) < 0.0 {
                accepted = search(direction);
            }
        }
        if accepted.is_none() {
            history.clear();
            accepted = search(steepest);
        }
        let Some((step, trial_pose, trial_ell, trial, shrink)) = accepted else {
            break;
        };
        let g_new = trial.grad.scaled(1.0 / norm);
        pose = trial_pose;
        ell = trial_ell;
        current = trial;
        trace.push(current.value);
        // A step cut short by the line search says nothing about convergence.
        if shrink == 1.0 && step.norm() < config.convergence_eps {
            converged = true;
            break;
        }
        let s = step.to_array();
        let y: [f64; 6] = std::array::from_fn(|k| g_new.to_array()[k] - g.to_array()[k]);
        // Steps are taken at the new pose, so the pair is only approximately
        // consistent; skip it when the curvature estimate is not positive.
        if config.memory > 0 && dot(&s, &y) > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if history.len() == config.memory {
                history.pop_front();
            }
            history.push_back((s, y));
        }
    }

    Ok(RegistrationResult {
        pose,
        final_ell: ell,
        iterations: trace.len() - 1,
        objective_trace: trace,
        converged,
    })
}

fn dot(a: &[f64; 6], b: &[f64; 6]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two-loop recursion: `−H g` for the inverse-Hessian estimate built from
/// `(s, y)` pairs, oldest first.
fn lbfgs_direction(g: &Twist, history: &VecDeque<([f64; 6], [f64; 6])>) -> Twist {
    let mut q = g.to_array();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y) in history.iter().rev() {
        let rho = 1.0 / dot(s, y);
        let alpha = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qk, yk)| *qk -= alpha * yk);
        alphas.push((alpha, rho));
    }
    let (s, y) = history.back().expect("non-empty history");
    let gamma = dot(s, y) / dot(y, y);
    q.iter_mut().for_each(|v| *v *= gamma);
    for ((s, y), (alpha, rho)) in history.iter().zip(alphas.into_iter().rev()) {
        let beta = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qk, sk)| *qk += (alpha - beta) * sk);
    }
    Twist::from_array(q).scaled(-1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::handcrafted_features;
    use crate::geometry::Vec3;
    use crate::io::{normalize_mesh, procedural_shape, sample_mesh_surface};
    use crate::geometry::{random_unit_vector, rotation_error_deg, translation_error, PointCloud};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_fc(n: usize, c: usize, rng: &mut ChaCha8Rng) -> FeatureCloud {
        let pts = (0..n)
            .map(|_| Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)))
            .collect();
        let ch = (0..n * c)
            .map(|_| random_unit_vector(rng) * rng.gen_range(0.1..0.9))
            .collect();
        FeatureCloud::new(pts, ch, c, vec![1.0; n]).unwrap()
    }

    /// Ellipsoid-like blob with bumps: no rotational symmetry.
    fn lumpy(n: usize, rng: &mut ChaCha8Rng) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| {
                    let u = random_unit_vector(rng);
                    let r = 1.0 + 0.25 * (3.0 * u.x).sin() * (2.0 * u.y).cos() + 0.15 * u.z * u.x;
                    u.component_mul(&Vec3::new(0.45, 0.3, 0.2)) * r
                })
                .collect(),
        )
    }

    #[test]
    fn lengthscale_step_ratio() {
        let c = RegistrationConfig::default();
        assert_eq!(c.lengthscale_step(), c.pose_step / 100.0);
        assert_eq!(RegistrationConfig::ell_init_for_angle(45.0), 0.3);
        assert_eq!(RegistrationConfig::ell_init_for_angle(90.0), 0.5);
    }

    #[test]
    fn single_pair_lengthscale_derivative() {
        let ell = 0.3;
        for r in [0.05, 0.2, 0.5] {
            let a = FeatureCloud::new(vec![Vec3::zeros()], vec![Vec3::zeros()], 1, vec![1.0]).unwrap();
            let b = FeatureCloud::new(vec![Vec3::new(r, 0.0, 0.0)], vec![Vec3::zeros()], 1, vec![1.0]).unwrap();
            let params = KernelParams::new(ell).with_prune_factor(10.0);
            let (_, _, d_ell) = objective_and_gradient(&a, &b, &Pose::identity(), &params).unwrap();
            let expected = -2.0 * 1f64.tanh() * (-r * r / (2.0 * ell * ell)).exp() * r * r / ell.powi(3);
            assert!((d_ell - expected).abs() < 1e-13, "{d_ell} vs {expected}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let mode = if trial % 4 == 3 { KernelMode::RbfOnly } else { KernelMode::RbfTanh };
            let x = random_fc(50, 2, &mut rng);
            let z = random_fc(50, 2, &mut rng);
            let pose = se3_exp(&Twist::new(random_unit_vector(&mut rng) * 0.05, random_unit_vector(&mut rng) * 0.3));
            let ell = rng.gen_range(0.15..0.4);
            // Radius beyond the cloud extent so the pair set cannot change.
            let params = KernelParams::new(ell).with_prune_factor(20.0).with_mode(mode);
            let (_, grad, d_ell) = objective_and_gradient(&x, &z, &pose, &params).unwrap();
            let analytic = grad.to_array();
            let h = 1e-5;
            let f = |p: &Pose, l: f64| objective_and_gradient(&x, &z, p, &params.with_lengthscale(l)).unwrap().0;
            for k in 0..6 {
                let mut e = [0.0; 6];
                e[k] = h;
                let plus = se3_exp(&Twist::from_array(e)).compose(&pose);
                e[k] = -h;
                let minus = se3_exp(&Twist::from_array(e)).compose(&pose);
                let num = (f(&plus, ell) - f(&minus, ell)) / (2.0 * h);
                let rel = (num - analytic[k]).abs() / num.abs().max(analytic[k].abs()).max(1e-3);
                assert!(rel < 1e-4, "trial {trial} coord {k}: {num} vs {}", analytic[k]);
            }
            let num = (f(&pose, ell + h) - f(&pose, ell - h)) / (2.0 * h);
            let rel = (num - d_ell).abs() / num.abs().max(1e-3);
            assert!(rel < 1e-4, "trial {trial} ell: {num} vs {d_ell}");
        }
    }

    #[test]
    fn identical_clouds_are_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = handcrafted_features(&lumpy(300, &mut rng), 10, 2).unwrap();
        let (d, grad, _) = objective_and_gradient(&x, &x, &Pose::identity(), &KernelParams::new(0.2)).unwrap();
        assert!(d.abs() < 1e-9);
        assert!(grad.norm() < 1e-6, "{}", grad.norm());
    }

    #[test]
    fn gradient_vanishes_at_true_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cloud = lumpy(400, &mut rng);
        let truth = se3_exp(&Twist::new(Vec3::new(0.05, -0.02, 0.03), random_unit_vector(&mut rng) * 0.6));
        let x = handcrafted_features(&cloud, 10, 2).unwrap();
        let z = handcrafted_features(&cloud.transformed(&truth.inverse()), 10, 2).unwrap();
        let (_, grad, _) = objective_and_gradient(&x, &z, &truth, &KernelParams::new(0.2)).unwrap();
        assert!(grad.norm() < 1e-5 * 400.0, "{}", grad.norm());
    }

    #[test]
    fn recovers_small_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for name in ["l-bracket", "chair", "convex-1"] {
            let mesh = normalize_mesh(&procedural_shape(name).unwrap());
            let cloud = sample_mesh_surface(&mesh, 300, &mut rng).unwrap();
            let truth = Pose::from_axis_angle(&random_unit_vector(&mut rng), 10f64.to_radians());
            let x = handcrafted_features(&cloud, 16, 1).unwrap();
            let z = handcrafted_features(&cloud.transformed(&truth.inverse()), 16, 1).unwrap();
            let config = RegistrationConfig { max_iters: 200, ..Default::default() };
            let res = register(&x, &z, &config).unwrap();
            let err = rotation_error_deg(&res.pose, &truth);
            assert!(err < 0.5, "{name}: rotation error {err}");
            assert!(translation_error(&res.pose, &truth) < 0.01);
            assert!(res.iterations <= 200);
            assert_eq!(res.objective_trace.len(), res.iterations + 1);
        }
    }

    #[test]
    fn identical_input_converges_immediately() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = handcrafted_features(&lumpy(200, &mut rng), 10, 2).unwrap();
        let config = RegistrationConfig::default();
        let res = register(&x, &x, &config).unwrap();
        assert!(res.iterations <= 1, "{} iterations", res.iterations);
        assert!(res.pose.rotation_angle() < 1e-6);
        assert!(res.pose.translation.norm() < 1e-6);
    }

    #[test]
    fn objective_trace_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..20 {
            let cloud = lumpy(150, &mut rng);
            let truth = se3_exp(&Twist::new(random_unit_vector(&mut rng) * 0.05, random_unit_vector(&mut rng) * rng.gen_range(0.0..0.8)));
            let x = handcrafted_features(&cloud, 10, 2).unwrap();
            let z = handcrafted_features(&lumpy(150, &mut rng).transformed(&truth.inverse()), 10, 2).unwrap();
            let config = RegistrationConfig { max_iters: 60, ..Default::default() };
            let res = register(&x, &z, &config).unwrap();
            for w in res.objective_trace.windows(2) {
                assert!(w[1] <= w[0]);
            }
            assert!(res.final_ell >= config.ell_bounds.min && res.final_ell <= config.ell_bounds.max);
            if res.converged {
                assert!(res.iterations <= config.max_iters);
            }
        }
    }

    #[test]
    fn solver_is_conjugation_covariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cloud = lumpy(400, &mut rng);
        let truth = Pose::from_axis_angle(&random_unit_vector(&mut rng), 20f64.to_radians());
        let q = se3_exp(&Twist::new(Vec3::new(0.1, 0.3, -0.2), random_unit_vector(&mut rng) * 1.2));
        let x_cloud = cloud.clone();
        let z_cloud = cloud.transformed(&truth.inverse());
        let config = RegistrationConfig { max_iters: 300, ..Default::default() };

        let x = handcrafted_features(&x_cloud, 10, 2).unwrap();
        let z = handcrafted_features(&z_cloud, 10, 2).unwrap();
        let h = register(&x, &z, &config).unwrap().pose;

        // Both clouds moved by q; start from the conjugated identity, which is
        // the identity, but the solver sees a different origin.
        let xq = handcrafted_features(&x_cloud.transformed(&q), 10, 2).unwrap();
        let zq = handcrafted_features(&z_cloud.transformed(&q), 10, 2).unwrap();
        let hq = register(&xq, &zq, &config).unwrap().pose;
        let expected = q.compose(&h).compose(&q.inverse());
        assert!(rotation_error_deg(&hq, &expected) < 1.0);
        assert!(translation_error(&hq, &expected) < 1e-2);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let a = random_fc(10, 2, &mut rng);
        let b = random_fc(10, 3, &mut rng);
        let empty = FeatureCloud::new(vec![], vec![], 2, vec![]).unwrap();
        let c = RegistrationConfig::default();
        assert_eq!(register(&a, &b, &c).unwrap_err(), RegistrationError::ChannelMismatch(2, 3));
        assert_eq!(register(&a, &empty, &c).unwrap_err(), RegistrationError::EmptyCloud);
    }
}
