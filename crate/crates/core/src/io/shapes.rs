//! Procedural test meshes.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{IoError, MeshShape};
use crate::geometry::{random_unit_vector, Vec3};

/// Names accepted by [`procedural_shape`]. `convex-<seed>` also works for any
/// integer seed.
pub const SHAPE_NAMES: [&str; 10] = [
    "box",
    "mug",
    "l-bracket",
    "torus-knot",
    "chair",
    "convex-0",
    "convex-1",
    "convex-2",
    "convex-3",
    "convex-4",
];

pub fn procedural_shape(name: &str) -> Result<MeshShape, IoError> {
    let mesh = match name {
        "box" => box_mesh(Vec3::zeros(), Vec3::new(1.0, 0.6, 0.35)),
        "mug" => mug(),
        "l-bracket" => l_bracket(),
        "torus-knot" => torus_knot(2, 3, 0.12, 160, 12),
        "chair" => chair(),
        other => match other.strip_prefix("convex-").map(str::parse::<u64>) {
            Some(Ok(seed)) => random_convex(seed, 12),
            _ => return Err(IoError::UnknownShape(other.to_string())),
        },
    };
    Ok(mesh)
}

/// Axis-aligned box with outward-wound faces.
pub fn box_mesh(min: Vec3, max: Vec3) -> MeshShape {
    let v = |i: usize| {
        Vec3::new(
            if i & 1 == 0 { min.x } else { max.x },
            if i & 2 == 0 { min.y } else { max.y },
            if i & 4 == 0 { min.z } else { max.z },
        )
    };
    let quads = [
        [0, 2, 3, 1],
        [4, 5, 7, 6],
        [0, 1, 5, 4],
        [2, 6, 7, 3],
        [0, 4, 6, 2],
        [1, 3, 7, 5],
    ];
    let mut triangles = Vec::new();
    for q in quads {
        triangles.push([q[0], q[1], q[2]]);
        triangles.push([q[0], q[2], q[3]]);
    }
    MeshShape {
        vertices: (0..8).map(v).collect(),
        triangles,
    }
}

/// Closed tube of circular cross-section around a closed or open polyline.
fn tube(path: &[Vec3], radius: f64, sides: usize, closed: bool) -> MeshShape {
    let n = path.len();
    let mut vertices = Vec::with_capacity(n * sides);
    // Parallel-transported frame along the path.
    let tangent = |i: usize| {
        let (a, b) = if closed {
            (path[(i + n - 1) % n], path[(i + 1) % n])
        } else {
            (path[i.saturating_sub(1)], path[(i + 1).min(n - 1)])
        };
        (b - a).normalize()
    };
    let t0 = tangent(0);
    let helper = if t0.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let mut normal = t0.cross(&helper).normalize();
    for (i, p) in path.iter().enumerate() {
        let t = tangent(i);
        normal = (normal - t * normal.dot(&t)).normalize();
        let binormal = t.cross(&normal);
        for s in 0..sides {
            let a = TAU * s as f64 / sides as f64;
            vertices.push(p + (normal * a.cos() + binormal * a.sin()) * radius);
        }
    }
    let rings = if closed { n } else { n - 1 };
    let mut triangles = Vec::new();
    for i in 0..rings {
        let j = (i + 1) % n;
        for s in 0..sides {
            let s2 = (s + 1) % sides;
            let (a, b, c, d) = (i * sides + s, i * sides + s2, j * sides + s2, j * sides + s);
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    MeshShape {
        vertices,
        triangles,
    }
}

/// Cylinder along z with a bottom cap and open top.
fn cup_body(radius: f64, height: f64, sides: usize) -> MeshShape {
    let mut vertices = vec![Vec3::zeros()];
    for level in [0.0, height] {
        for s in 0..sides {
            let a = TAU * s as f64 / sides as f64;
            vertices.push(Vec3::new(radius * a.cos(), radius * a.sin(), level));
        }
    }
    let mut triangles = Vec::new();
    for s in 0..sides {
        let s2 = (s + 1) % sides;
        triangles.push([0, 1 + s2, 1 + s]);
        triangles.push([1 + s, 1 + s2, 1 + sides + s2]);
        triangles.push([1 + s, 1 + sides + s2, 1 + sides + s]);
    }
    MeshShape {
        vertices,
        triangles,
    }
}

fn mug() -> MeshShape {
    let (r, h) = (0.4, 0.9);
    let mut mesh = cup_body(r, h, 48);
    // Handle: half ring in the xz-plane on the +x side.
    let path: Vec<Vec3> = (0..=24)
        .map(|i| {
            let a = -PI / 2.0 + PI * i as f64 / 24.0;
            Vec3::new(r + 0.22 * a.cos(), 0.0, 0.45 + 0.26 * a.sin())
        })
        .collect();
    mesh.append(&tube(&path, 0.05, 10, false));
    mesh
}

fn l_bracket() -> MeshShape {
    let mut mesh = box_mesh(Vec3::zeros(), Vec3::new(1.0, 0.5, 0.12));
    mesh.append(&box_mesh(Vec3::new(0.0, 0.0, 0.12), Vec3::new(0.12, 0.5, 0.7)));
    // Gusset to break the mirror symmetry along y.
    mesh.append(&box_mesh(Vec3::new(0.12, 0.0, 0.12), Vec3::new(0.4, 0.08, 0.3)));
    mesh
}

fn torus_knot(p: u32, q: u32, tube_radius: f64, samples: usize, sides: usize) -> MeshShape {
    let path: Vec<Vec3> = (0..samples)
        .map(|i| {
            let t = TAU * i as f64 / samples as f64;
            let r = 0.6 + 0.25 * (q as f64 * t).cos();
            Vec3::new(
                r * (p as f64 * t).cos(),
                r * (p as f64 * t).sin(),
                0.25 * (q as f64 * t).sin(),
            )
        })
        .collect();
    tube(&path, tube_radius, sides, true)
}

fn chair() -> MeshShape {
    let mut mesh = box_mesh(Vec3::new(0.0, 0.0, 0.45), Vec3::new(0.5, 0.5, 0.52));
    let leg = 0.05;
    for (x, y) in [(0.0, 0.0), (0.45, 0.0), (0.0, 0.45), (0.45, 0.45)] {
        mesh.append(&box_mesh(Vec3::new(x, y, 0.0), Vec3::new(x + leg, y + leg, 0.45)));
    }
    mesh.append(&box_mesh(Vec3::new(0.0, 0.45, 0.52), Vec3::new(0.5, 0.5, 1.0)));
    // Armrest on one side only.
    mesh.append(&box_mesh(Vec3::new(0.45, 0.05, 0.68), Vec3::new(0.5, 0.45, 0.72)));
    mesh
}

/// Convex hull of `n` random points on an anisotropic ellipsoid.
pub fn random_convex(seed: u64, n: usize) -> MeshShape {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axes = Vec3::new(
        rng.gen_range(0.6..1.0),
        rng.gen_range(0.4..0.8),
        rng.gen_range(0.25..0.5),
    );
    let points: Vec<Vec3> = (0..n)
        .map(|_| random_unit_vector(&mut rng).component_mul(&axes))
        .collect();
    convex_hull(&points)
}

/// Brute-force hull: every triple whose plane has all other points on one
/// side becomes a face, wound outward. Assumes no four points are coplanar.
pub fn convex_hull(points: &[Vec3]) -> MeshShape {
    let n = points.len();
    let mut triangles = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let normal = (points[j] - points[i]).cross(&(points[k] - points[i]));
                if normal.norm() < 1e-12 {
                    continue;
                }
                let side = |m: usize| normal.dot(&(points[m] - points[i]));
                let others = (0..n).filter(|&m| m != i && m != j && m != k);
                let (mut pos, mut neg) = (false, false);
                for m in others {
                    let s = side(m);
                    pos |= s > 1e-12;
                    neg |= s < -1e-12;
                }
                match (pos, neg) {
                    (false, _) => triangles.push([i, j, k]),
                    (true, false) => triangles.push([i, k, j]),
                    _ => {}
                }
            }
        }
    }
    MeshShape {
        vertices: points.to_vec(),
        triangles,
    }
}
