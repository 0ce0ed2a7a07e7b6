//! Rigid motions and their tangent coordinates.
//!
//! A [`Pose`] acts on points as `x -> R x + t`. Tangent vectors are [`Twist`]s
//! ordered `(rho, omega)` with `rho` the translational part. The exponential
//! map uses the closed-form Rodrigues rotation and the `V` matrix that couples
//! rotation into translation.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use thiserror::Error;

use super::Vec3;

/// Below this rotation angle the Rodrigues coefficients switch to their series.
pub const SMALL_ANGLE: f64 = 1e-8;

/// `se3_log` refuses rotations whose trace is within this of -1.
pub const NEAR_PI_TRACE_MARGIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum LogError {
    #[error("rotation angle too close to pi for a well-defined logarithm (trace = {trace})")]
    AngleNearPi { trace: f64 },
}

/// Element of se(3): `rho` translational, `omega` rotational (radians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub rho: Vec3,
    pub omega: Vec3,
}

impl Twist {
    pub fn new(rho: Vec3, omega: Vec3) -> Self {
        Self { rho, omega }
    }

    pub fn zero() -> Self {
        Self::new(Vec3::zeros(), Vec3::zeros())
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]))
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.rho.x,
            self.rho.y,
            self.rho.z,
            self.omega.x,
            self.omega.y,
            self.omega.z,
        ]
    }

    pub fn norm(&self) -> f64 {
        (self.rho.norm_squared() + self.omega.norm_squared()).sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.rho * s, self.omega * s)
    }
}

/// Rigid motion `x -> rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    /// Rotation by `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        Self::new(so3_exp(&(axis * (angle / n))), Vec3::zeros())
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }

    /// Row-major homogeneous 4x4 matrix.
    pub fn to_matrix4(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    /// Geodesic rotation angle of this pose, radians in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    /// Frobenius distance of `R^T R` from the identity and `det R - 1`.
    pub fn orthonormality_defect(&self) -> (f64, f64) {
        let r = &self.rotation;
        (
            (r.transpose() * r - Matrix3::identity()).norm(),
            r.determinant() - 1.0,
        )
    }
}

pub fn hat(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn vee(m: &Matrix3<f64>) -> Vec3 {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues coefficients `sin(t)/t`, `(1-cos t)/t^2`, `(t - sin t)/t^3`.
fn rodrigues_coefficients(theta: f64) -> (f64, f64, f64) {
    let t2 = theta * theta;
    if theta < SMALL_ANGLE {
        return (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0);
    }
    let half_sin = (0.5 * theta).sin();
    let b = 2.0 * half_sin * half_sin / t2;
    // theta - sin(theta) cancels badly well above SMALL_ANGLE.
    let c = if theta < 1e-3 {
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    } else {
        (theta - theta.sin()) / (t2 * theta)
    };
    (theta.sin() / theta, b, c)
}

pub fn so3_exp(omega: &Vec3) -> Matrix3<f64> {
    let theta = omega.norm();
    let (a, b, _) = rodrigues_coefficients(theta);
    let w = hat(omega);
    Matrix3::identity() + w * a + w * w * b
}

/// Angle of a rotation matrix, robust near both 0 and pi.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin = 0.5 * vee(&(r - r.transpose())).norm();
    sin.atan2(cos)
}

fn so3_log_unchecked(r: &Matrix3<f64>) -> Vec3 {
    let w = vee(&(r - r.transpose()));
    let theta = rotation_angle(r);
    if theta < SMALL_ANGLE {
        w * (0.5 * (1.0 + theta * theta / 6.0))
    } else {
        w * (theta / (2.0 * theta.sin()))
    }
}

pub fn se3_exp(xi: &Twist) -> Pose {
    let theta = xi.omega.norm();
    let (a, b, c) = rodrigues_coefficients(theta);
    let w = hat(&xi.omega);
    let w2 = w * w;
    let rotation = Matrix3::identity() + w * a + w2 * b;
    let v = Matrix3::identity() + w * b + w2 * c;
    Pose::new(rotation, v * xi.rho)
}

pub fn se3_log(p: &Pose) -> Result<Twist, LogError> {
    let trace = p.rotation.trace();
    if trace <= -1.0 + NEAR_PI_TRACE_MARGIN {
        return Err(LogError::AngleNearPi { trace });
    }
    let omega = so3_log_unchecked(&p.rotation);
    let theta = omega.norm();
    let w = hat(&omega);
    // V^{-1} = I - W/2 + k W^2
    let t2 = theta * theta;
    let k = if theta < 1e-3 {
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half / half.tan()) / t2
    };
    let v_inv = Matrix3::identity() - w * 0.5 + w * w * k;
    Ok(Twist::new(v_inv * p.translation, omega))
}

/// Rotation error in degrees: angle of `estimate * truth^-1`.
pub fn rotation_error_deg(estimate: &Pose, truth: &Pose) -> f64 {
    let rel = estimate.rotation * truth.rotation.transpose();
    rotation_angle(&rel).to_degrees()
}

/// Euclidean distance between the translation parts.
pub fn translation_error(estimate: &Pose, truth: &Pose) -> f64 {
    (estimate.translation - truth.translation).norm()
}

/// Uniform direction on the unit sphere.
pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Uniform point in the ball of the given radius.
pub fn random_in_ball<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Vec3 {
    let u: f64 = rng.gen();
    random_unit_vector(rng) * (radius * u.cbrt())
}
