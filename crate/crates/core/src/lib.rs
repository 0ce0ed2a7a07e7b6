//! Correspondence-free rigid registration of point clouds.
//!
//! Each cloud is lifted to a function in a reproducing kernel Hilbert space
//! built over per-point equivariant features (coordinate plus rotating vector
//! channels). The pose and the kernel lengthscale are found by gradient descent
//! on the RKHS distance between the two functions, and the feature encoder can
//! be trained without pose labels through an inner/outer loop.
//!
//! Module map:
//! - [`geometry`]: poses, exp/log, point clouds, kd-tree, PCA normals.
//! - [`features`]: equivariant feature clouds, handcrafted features, the
//!   vector-channel graph encoder and its weight files.
//! - [`rkhs`]: the RBF x tanh kernel and pruned RKHS inner products.
//! - [`registration`]: the inner-loop pose/lengthscale solver.
//! - [`training`]: unsupervised curriculum training of the encoder.
//! - [`bench`]: perturbations, the ICP baseline and experiment sweeps.
//! - [`io`]: mesh/cloud file formats, procedural shapes, pose JSON.

pub mod bench;
pub mod features;
pub mod geometry;
pub mod io;
pub mod registration;
pub mod rkhs;
pub mod training;

pub use geometry::{Pose, PointCloud, Twist, Vec3};
