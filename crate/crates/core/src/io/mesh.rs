use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::IoError;
use crate::geometry::{PointCloud, Pose, Vec3};

/// Triangle mesh. Triangles index into `vertices`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeshShape {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

// Triangles with less area than this are dropped on load.
pub const MIN_TRIANGLE_AREA: f64 = 1e-14;

impl MeshShape {
    /// Builds a mesh, dropping zero-area triangles. Out-of-range indices are
    /// rejected.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self, IoError> {
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= vertices.len())) {
            return Err(IoError::InvalidMesh(format!(
                "triangle {t:?} indexes past {} vertices",
                vertices.len()
            )));
        }
        let mut mesh = Self {
            vertices,
            triangles,
        };
        mesh.drop_degenerate();
        Ok(mesh)
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    fn drop_degenerate(&mut self) {
        let keep: Vec<[usize; 3]> = (0..self.triangles.len())
            .filter(|&t| self.triangle_area(t) > MIN_TRIANGLE_AREA)
            .map(|t| self.triangles[t])
            .collect();
        self.triangles = keep;
    }

    /// Appends another mesh, offsetting its indices.
    pub fn append(&mut self, other: &MeshShape) {
        let off = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles.extend(
            other
                .triangles
                .iter()
                .map(|t| [t[0] + off, t[1] + off, t[2] + off]),
        );
    }

    pub fn transformed(&self, pose: &Pose) -> MeshShape {
        MeshShape {
            vertices: self.vertices.iter().map(|v| pose.apply(v)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Area-weighted centroid of the surface.
    pub fn surface_centroid(&self) -> Option<Vec3> {
        let mut acc = Vec3::zeros();
        let mut total = 0.0;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.triangle(t);
            let w = self.triangle_area(t);
            acc += (a + b + c) * (w / 3.0);
            total += w;
        }
        (total > 0.0).then(|| acc / total)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        PointCloud::new(self.vertices.clone()).bbox_diagonal()
    }
}

/// Similarity `x -> (x - center) * scale` used to bring shapes to unit
/// bounding-box diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: [f64; 3],
    pub scale: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            center: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p - self.center()) * self.scale
    }

    pub fn apply_cloud(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud::with_labels(
            cloud.points().iter().map(|p| self.apply(p)).collect(),
            cloud.labels().to_vec(),
        )
        .expect("labels unchanged")
    }

    pub fn apply_mesh(&self, mesh: &MeshShape) -> MeshShape {
        MeshShape {
            vertices: mesh.vertices.iter().map(|p| self.apply(p)).collect(),
            triangles: mesh.triangles.clone(),
        }
    }

    /// Maps a pose estimated between normalized clouds back to original
    /// units: `t = c - R c + t' / s`.
    pub fn denormalize_pose(&self, pose: &Pose) -> Pose {
        let c = self.center();
        Pose::new(
            pose.rotation,
            c - pose.rotation * c + pose.translation / self.scale,
        )
    }

    fn from_center_and_diagonal(center: Vec3, diagonal: f64) -> Self {
        Self {
            center: center.into(),
            scale: if diagonal > 0.0 { 1.0 / diagonal } else { 1.0 },
        }
    }
}

/// Normalization centering a cloud at its mean with unit bbox diagonal.
pub fn cloud_normalization(cloud: &PointCloud) -> Normalization {
    if cloud.is_empty() {
        return Normalization::identity();
    }
    Normalization::from_center_and_diagonal(cloud.centroid(), cloud.bbox_diagonal())
}

/// Normalization centering a mesh at its surface centroid with unit bbox
/// diagonal.
pub fn mesh_normalization(mesh: &MeshShape) -> Normalization {
    match mesh.surface_centroid() {
        Some(c) => Normalization::from_center_and_diagonal(c, mesh.bbox_diagonal()),
        None => Normalization::identity(),
    }
}

pub fn normalize_mesh(mesh: &MeshShape) -> MeshShape {
    mesh_normalization(mesh).apply_mesh(mesh)
}

pub fn normalize_cloud(cloud: &PointCloud) -> PointCloud {
    cloud_normalization(cloud).apply_cloud(cloud)
}

/// Uniform point on a triangle from two uniforms.
pub fn sample_triangle<R: Rng + ?Sized>(tri: &[Vec3; 3], rng: &mut R) -> Vec3 {
    let r1: f64 = rng.gen();
    let r2: f64 = rng.gen();
    let s = r1.sqrt();
    tri[0] * (1.0 - s) + tri[1] * (s * (1.0 - r2)) + tri[2] * (s * r2)
}

/// `n` points uniform over the surface: triangles drawn by area, then a
/// uniform point inside.
pub fn sample_mesh_surface<R: Rng + ?Sized>(
    mesh: &MeshShape,
    n: usize,
    rng: &mut R,
) -> Result<PointCloud, IoError> {
    if mesh.triangles.is_empty() {
        return Err(IoError::EmptyMesh);
    }
    let areas: Vec<f64> = (0..mesh.triangles.len())
        .map(|t| mesh.triangle_area(t))
        .collect();
    let pick = WeightedIndex::new(&areas).map_err(|_| IoError::EmptyMesh)?;
    let points = (0..n)
        .map(|_| sample_triangle(&mesh.triangle(pick.sample(rng)), rng))
        .collect();
    Ok(PointCloud::new(points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tri(a: Vec3, b: Vec3, c: Vec3) -> MeshShape {
        MeshShape::new(vec![a, b, c], vec![[0, 1, 2]]).unwrap()
    }

    fn barycentric(p: Vec3, [a, b, c]: [Vec3; 3]) -> (f64, f64, f64) {
        let v0 = b - a;
        let v1 = c - a;
        let v2 = p - a;
        let (d00, d01, d11) = (v0.dot(&v0), v0.dot(&v1), v1.dot(&v1));
        let (d20, d21) = (v2.dot(&v0), v2.dot(&v1));
        let den = d00 * d11 - d01 * d01;
        let v = (d11 * d20 - d01 * d21) / den;
        let w = (d00 * d21 - d01 * d20) / den;
        (1.0 - v - w, v, w)
    }

    #[test]
    fn samples_lie_inside_single_triangle() {
        let t = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(2.0, 0.1, 0.0), Vec3::new(0.3, 1.0, 0.5)];
        let mesh = tri(t[0], t[1], t[2]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cloud = sample_mesh_surface(&mesh, 2000, &mut rng).unwrap();
        for p in cloud.points() {
            let (u, v, w) = barycentric(*p, t);
            assert!(u >= -1e-12 && v >= -1e-12 && w >= -1e-12);
            let n = (t[1] - t[0]).cross(&(t[2] - t[0]));
            assert!((p - t[0]).dot(&n).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_counts_follow_area() {
        // Areas 1 and 3.
        let mesh = MeshShape::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(2.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(10.0, 0.0, 0.0),
                Vec3::new(13.0, 0.0, 0.0),
                Vec3::new(10.0, 2.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let cloud = sample_mesh_surface(&mesh, n, &mut rng).unwrap();
        let first = cloud.points().iter().filter(|p| p.x < 5.0).count() as f64;
        let expected = [n as f64 * 0.25, n as f64 * 0.75];
        let observed = [first, n as f64 - first];
        let chi2: f64 = observed
            .iter()
            .zip(&expected)
            .map(|(o, e)| (o - e) * (o - e) / e)
            .sum();
        // 1% critical value, one degree of freedom.
        assert!(chi2 < 6.635, "chi2 = {chi2}");
    }

    #[test]
    fn uniform_within_triangle() {
        // Split the unit right triangle into 4 congruent sub-triangles.
        let mesh = tri(Vec3::zeros(), Vec3::x(), Vec3::y());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 8000;
        let cloud = sample_mesh_surface(&mesh, n, &mut rng).unwrap();
        let mut counts = [0.0; 4];
        for p in cloud.points() {
            let k = if p.x > 0.5 {
                0
            } else if p.y > 0.5 {
                1
            } else if p.x + p.y < 0.5 {
                2
            } else {
                3
            };
            counts[k] += 1.0;
        }
        let e = n as f64 / 4.0;
        let chi2: f64 = counts.iter().map(|o| (o - e) * (o - e) / e).sum();
        // 1% critical value, three degrees of freedom.
        assert!(chi2 < 11.345, "chi2 = {chi2}");
    }

    #[test]
    fn sampling_is_seeded() {
        let mesh = tri(Vec3::zeros(), Vec3::x(), Vec3::y());
        let a = sample_mesh_surface(&mesh, 100, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = sample_mesh_surface(&mesh, 100, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_mesh_is_an_error() {
        let mesh = MeshShape::default();
        assert!(matches!(
            sample_mesh_surface(&mesh, 5, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(IoError::EmptyMesh)
        ));
    }

    #[test]
    fn degenerate_triangles_are_dropped() {
        let mesh = MeshShape::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0, Vec3::y()],
            vec![[0, 1, 2], [0, 1, 3]],
        )
        .unwrap();
        assert_eq!(mesh.triangles, vec![[0, 1, 3]]);
        assert!(MeshShape::new(vec![Vec3::zeros()], vec![[0, 0, 1]]).is_err());
    }

    #[test]
    fn normalization_gives_unit_diagonal() {
        let mesh = tri(Vec3::new(1.0, 2.0, 3.0), Vec3::new(5.0, 2.0, 3.0), Vec3::new(1.0, 5.0, 3.0));
        let n = normalize_mesh(&mesh);
        assert!((n.bbox_diagonal() - 1.0).abs() < 1e-12);
        assert!(n.surface_centroid().unwrap().norm() < 1e-12);
    }

    #[test]
    fn denormalized_pose_matches_original_units() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cloud = PointCloud::new((0..50).map(|_| Vec3::new(rng.gen(), rng.gen::<f64>() * 3.0, 7.0 + rng.gen::<f64>())).collect());
        let norm = cloud_normalization(&cloud);
        let rel = Pose::new(
            crate::geometry::so3_exp(&Vec3::new(0.1, -0.4, 0.3)),
            Vec3::new(0.05, 0.0, -0.02),
        );
        let orig = norm.denormalize_pose(&rel);
        for p in cloud.points() {
            let via_norm = rel.apply(&norm.apply(p));
            let direct = norm.apply(&orig.apply(p));
            assert!((via_norm - direct).norm() < 1e-12);
        }
    }
}
