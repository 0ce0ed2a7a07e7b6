use nalgebra::{Matrix3, SymmetricEigen};

use super::{GeometryError, KdTree, Pose, Vec3};

/// Points with a pose-invariant scalar label each.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    labels: Vec<f64>,
}

impl PointCloud {
    /// Cloud with every label set to 1.
    pub fn new(points: Vec<Vec3>) -> Self {
        let labels = vec![1.0; points.len()];
        Self { points, labels }
    }

    pub fn with_labels(points: Vec<Vec3>, labels: Vec<f64>) -> Result<Self, GeometryError> {
        if points.len() != labels.len() {
            return Err(GeometryError::LabelCount {
                points: points.len(),
                labels: labels.len(),
            });
        }
        Ok(Self { points, labels })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_parts(self) -> (Vec<Vec3>, Vec<f64>) {
        (self.points, self.labels)
    }

    pub fn transformed(&self, pose: &Pose) -> Self {
        Self {
            points: self.points.iter().map(|p| pose.apply(p)).collect(),
            labels: self.labels.clone(),
        }
    }

    /// Sub-cloud with the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn centroid(&self) -> Vec3 {
        if self.points.is_empty() {
            return Vec3::zeros();
        }
        self.points.iter().sum::<Vec3>() / self.points.len() as f64
    }

    /// Axis-aligned bounds `(min, max)`; `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.points.first()?;
        Some(
            self.points
                .iter()
                .fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))),
        )
    }

    pub fn bbox_diagonal(&self) -> f64 {
        self.bounds().map_or(0.0, |(lo, hi)| (hi - lo).norm())
    }
}

/// Greedy farthest point sampling seeded at index 0.
pub fn farthest_point_sample(cloud: &PointCloud, n: usize) -> Result<PointCloud, GeometryError> {
    if cloud.is_empty() {
        return Err(GeometryError::EmptyCloud);
    }
    if n >= cloud.len() {
        return Ok(cloud.clone());
    }
    let pts = cloud.points();
    let mut chosen = Vec::with_capacity(n);
    let mut min_d2 = vec![f64::INFINITY; pts.len()];
    let mut next = 0usize;
    for _ in 0..n {
        chosen.push(next);
        let c = pts[next];
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, p) in pts.iter().enumerate() {
            let d2 = (p - c).norm_squared();
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
            if min_d2[i] > best.0 {
                best = (min_d2[i], i);
            }
        }
        next = best.1;
    }
    Ok(cloud.select(&chosen))
}

/// Neighbor table: row `i` lists the `k` nearest other points of point `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborTable {
    k: usize,
    indices: Vec<usize>,
}

impl NeighborTable {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.indices.len() / self.k
        }
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }
}

pub fn knn_indices(points: &[Vec3], k: usize) -> Result<NeighborTable, GeometryError> {
    if points.len() <= k {
        return Err(GeometryError::TooFewPoints { points: points.len(), k });
    }
    let tree = KdTree::new(points);
    let mut indices = Vec::with_capacity(points.len() * k);
    for (i, p) in points.iter().enumerate() {
        indices.extend(tree.knn(p, k, Some(i)));
    }
    Ok(NeighborTable { k, indices })
}

/// Per-point PCA frame of the neighborhood `{p} ∪ knn(p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    /// Least-variance direction, oriented away from the cloud centroid.
    pub normal: Vec3,
    /// Middle-variance direction, same orientation rule.
    pub tangent: Vec3,
    /// Covariance rank below 2; `normal` and `tangent` are placeholders.
    pub degenerate: bool,
}

/// Rank test for neighborhood covariances, relative to the largest eigenvalue.
pub const DEGENERATE_RANK_TOL: f64 = 1e-12;

fn orient(v: Vec3, outward: &Vec3) -> Vec3 {
    if v.dot(outward) < 0.0 {
        -v
    } else {
        v
    }
}

pub fn local_frames(cloud: &PointCloud, k: usize) -> Result<Vec<LocalFrame>, GeometryError> {
    let table = knn_indices(cloud.points(), k)?;
    let pts = cloud.points();
    let centroid = cloud.centroid();
    let frames = (0..pts.len())
        .map(|i| {
            let row = table.row(i);
            let count = (row.len() + 1) as f64;
            let mean = (pts[i] + row.iter().map(|&j| pts[j]).sum::<Vec3>()) / count;
            let mut cov = Matrix3::zeros();
            for p in std::iter::once(&pts[i]).chain(row.iter().map(|&j| &pts[j])) {
                let d = p - mean;
                cov += d * d.transpose();
            }
            cov /= count;
            let eig = SymmetricEigen::new(cov);
            let mut order = [0usize, 1, 2];
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let largest = eig.eigenvalues[order[2]];
            let middle = eig.eigenvalues[order[1]];
            if largest <= 0.0 || middle <= DEGENERATE_RANK_TOL * largest {
                return LocalFrame {
                    normal: Vec3::z(),
                    tangent: Vec3::zeros(),
                    degenerate: true,
                };
            }
            let outward = pts[i] - centroid;
            let normal = eig.eigenvectors.column(order[0]).normalize();
            let tangent = eig.eigenvectors.column(order[1]).normalize();
            LocalFrame {
                normal: orient(normal, &outward),
                tangent: orient(tangent, &outward),
                degenerate: false,
            }
        })
        .collect();
    Ok(frames)
}

/// Oriented unit normals plus a per-point degeneracy flag. Degenerate points
/// carry the placeholder normal `(0, 0, 1)`.
pub fn pca_normals(cloud: &PointCloud, k: usize) -> Result<(Vec<Vec3>, Vec<bool>), GeometryError> {
    if k < 3 {
        return Err(GeometryError::NeighborhoodTooSmall { k });
    }
    let frames = local_frames(cloud, k)?;
    Ok(frames.iter().map(|f| (f.normal, f.degenerate)).unzip())
}
