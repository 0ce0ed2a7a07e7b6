//! File formats, procedural shapes and pose files.

mod formats;
mod mesh;
mod shapes;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, PointCloud};

pub use formats::{read_off, read_ply, read_xyz, write_ply};
pub use mesh::{
    cloud_normalization, mesh_normalization, normalize_cloud, normalize_mesh,
    sample_mesh_surface, sample_triangle, MeshShape, Normalization, MIN_TRIANGLE_AREA,
};
pub use shapes::{box_mesh, convex_hull, procedural_shape, random_convex, SHAPE_NAMES};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("unknown shape {0:?}")]
    UnknownShape(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeFormat {
    Off,
    PlyAscii,
    Xyz,
}

impl ShapeFormat {
    pub fn from_path(path: &Path) -> Result<Self, IoError> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        match ext.as_str() {
            "off" => Ok(ShapeFormat::Off),
            "ply" => Ok(ShapeFormat::PlyAscii),
            "xyz" | "txt" => Ok(ShapeFormat::Xyz),
            _ => Err(IoError::UnsupportedFormat(format!(
                "cannot infer format of {}",
                path.display()
            ))),
        }
    }
}

/// What a file held: OFF gives meshes, PLY and XYZ give clouds.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Mesh(MeshShape),
    Cloud(PointCloud),
}

/// Loads a shape; `format` defaults to the file extension.
pub fn load_shape(path: &Path, format: Option<ShapeFormat>) -> Result<Shape, IoError> {
    let format = match format {
        Some(f) => f,
        None => ShapeFormat::from_path(path)?,
    };
    let reader = BufReader::new(File::open(path)?);
    Ok(match format {
        ShapeFormat::Off => Shape::Mesh(read_off(reader)?),
        ShapeFormat::PlyAscii => Shape::Cloud(read_ply(reader)?),
        ShapeFormat::Xyz => Shape::Cloud(read_xyz(reader)?),
    })
}

/// Loads a point cloud, sampling `mesh_samples` surface points from meshes.
pub fn load_cloud<R: rand::Rng + ?Sized>(
    path: &Path,
    mesh_samples: usize,
    rng: &mut R,
) -> Result<PointCloud, IoError> {
    match load_shape(path, None)? {
        Shape::Cloud(c) => Ok(c),
        Shape::Mesh(m) => sample_mesh_surface(&m, mesh_samples, rng),
    }
}

pub fn save_ply(path: &Path, cloud: &PointCloud) -> Result<(), IoError> {
    write_ply(BufWriter::new(File::create(path)?), cloud)
}

/// Registration output as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    /// Row-major 3x3 rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rot_err_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trans_err: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_ell: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
}

impl PoseRecord {
    pub fn from_pose(pose: &Pose) -> Self {
        let r = &pose.rotation;
        Self {
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: pose.translation.into(),
            rot_err_deg: None,
            trans_err: None,
            final_ell: None,
            iterations: None,
            normalization: None,
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(
            nalgebra::Matrix3::from_row_slice(&self.rotation),
            self.translation.into(),
        )
    }
}

pub fn write_pose_json(path: &Path, record: &PoseRecord) -> Result<(), IoError> {
    let w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(w, record)?;
    Ok(())
}

pub fn read_pose_json(path: &Path) -> Result<PoseRecord, IoError> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}
