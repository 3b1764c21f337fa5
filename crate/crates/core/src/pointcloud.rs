//! Scene point clouds and the cleaning/augmentation operators applied to
//! observations. Clouds carry positions only.

use std::f64::consts::PI;

use byteorder::{ByteOrder, LittleEndian};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use thiserror::Error;

use crate::geometry::{Pose, Vec3};
use crate::scene::{LinkId, SceneState, Shape, ShapeKind};

pub const DEFAULT_OBSERVATION_POINTS: usize = 1024;
/// Raw samples per kept point before FPS in [`observe`].
const OVERSAMPLE: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PointCloudError {
    #[error("requested {k} points from a cloud of {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("sample count must be at least 1")]
    ZeroCount,
    #[error("outlier removal needs more than {k} points, got {n}")]
    TooFewPoints { k: usize, n: usize },
    #[error("crop box removed every point")]
    EmptyAfterCrop,
    #[error("scene has no surfaces to sample")]
    EmptyScene,
    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(String),
    #[error("malformed cloud encoding: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub seed: u64,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, seed: u64) -> Self {
        PointCloud { points, seed }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.points.len().max(1) as f64;
        self.points.iter().fold(Vec3::ZERO, |a, p| a + *p) * (1.0 / n)
    }

    fn select(&self, idx: &[usize], seed: u64) -> PointCloud {
        PointCloud::new(idx.iter().map(|&i| self.points[i]).collect(), seed)
    }

    /// `u64` count followed by little-endian `f32` xyz triples.
    pub fn encode(&self, out: &mut Vec<u8>) {
        let mut buf = [0u8; 8];
        LittleEndian::write_u64(&mut buf, self.points.len() as u64);
        out.extend_from_slice(&buf);
        for p in &self.points {
            for c in p.to_array() {
                let mut b = [0u8; 4];
                LittleEndian::write_f32(&mut b, c as f32);
                out.extend_from_slice(&b);
            }
        }
    }

    /// Reads one encoded cloud from the front of `bytes`; returns it and the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8], seed: u64) -> Result<(PointCloud, usize), PointCloudError> {
        if bytes.len() < 8 {
            return Err(PointCloudError::Decode("truncated count".into()));
        }
        let n = LittleEndian::read_u64(&bytes[..8]) as usize;
        let need = n
            .checked_mul(12)
            .and_then(|b| b.checked_add(8))
            .ok_or_else(|| PointCloudError::Decode("count overflow".into()))?;
        if bytes.len() < need {
            return Err(PointCloudError::Decode(format!("expected {n} points")));
        }
        let points = bytes[8..need]
            .chunks_exact(12)
            .map(|c| {
                Vec3::new(
                    LittleEndian::read_f32(&c[0..4]) as f64,
                    LittleEndian::read_f32(&c[4..8]) as f64,
                    LittleEndian::read_f32(&c[8..12]) as f64,
                )
            })
            .collect();
        Ok((PointCloud::new(points, seed), need))
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check_k(k: usize, n: usize) -> Result<(), PointCloudError> {
    if k == 0 {
        Err(PointCloudError::ZeroCount)
    } else if k > n {
        Err(PointCloudError::KTooLarge { k, n })
    } else {
        Ok(())
    }
}

/// Every shape in the scene with its world pose.
fn world_shapes(scene: &SceneState) -> Vec<(Shape, Pose)> {
    let mut out = Vec::new();
    for o in scene.objects.values() {
        let Ok(links) = o.links() else { continue };
        for (link, shapes) in [(LinkId::Base, &o.asset.base_link), (LinkId::Child, &o.asset.child_link)] {
            let lp = links.get(link);
            out.extend(shapes.iter().map(|s| (*s, lp * s.local_pose)));
        }
    }
    for b in scene.rigid_bodies.values() {
        out.extend(b.body.shapes.iter().map(|s| (*s, b.pose * s.local_pose)));
    }
    out
}

/// A uniform point on the surface of `shape`, in its local frame.
fn surface_point(shape: &Shape, rng: &mut ChaCha8Rng) -> Vec3 {
    match shape.kind {
        ShapeKind::Box { half_extents: h } => {
            // faces normal to x, y, z have areas yz, xz, xy
            let w = [h.y * h.z, h.x * h.z, h.x * h.y];
            let total = w[0] + w[1] + w[2];
            let pick = rng.random::<f64>() * total;
            let axis = if pick < w[0] {
                0
            } else if pick < w[0] + w[1] {
                1
            } else {
                2
            };
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let mut p = [
                rng.random_range(-h.x..=h.x),
                rng.random_range(-h.y..=h.y),
                rng.random_range(-h.z..=h.z),
            ];
            p[axis] = sign * h.to_array()[axis];
            Vec3::from_array(p)
        }
        ShapeKind::Cylinder {
            radius,
            half_height,
        } => {
            let side = 2.0 * radius * half_height;
            let cap = radius * radius;
            let theta = rng.random::<f64>() * 2.0 * PI;
            if rng.random::<f64>() * (side + cap) < side {
                Vec3::new(radius * theta.cos(), radius * theta.sin(), rng.random_range(-half_height..=half_height))
            } else {
                let r = radius * rng.random::<f64>().sqrt();
                let z = if rng.random::<bool>() { half_height } else { -half_height };
                Vec3::new(r * theta.cos(), r * theta.sin(), z)
            }
        }
    }
}

/// `n` points drawn area-weighted from every object and rigid-body surface
/// at the current joint values.
pub fn sample_scene(scene: &SceneState, n: usize, seed: u64) -> Result<PointCloud, PointCloudError> {
    if n == 0 {
        return Err(PointCloudError::ZeroCount);
    }
    let shapes = world_shapes(scene);
    let weights: Vec<f64> = shapes.iter().map(|(s, _)| s.surface_area()).collect();
    let pick = WeightedIndex::new(&weights).map_err(|_| PointCloudError::EmptyScene)?;
    let mut r = rng(seed);
    let points = (0..n)
        .map(|_| {
            let (shape, pose) = &shapes[pick.sample(&mut r)];
            pose.transform_point(surface_point(shape, &mut r))
        })
        .collect();
    Ok(PointCloud::new(points, seed))
}

/// Greedy farthest-point sampling from a seeded start. Output is in
/// selection order.
pub fn farthest_point_sample(pc: &PointCloud, k: usize, seed: u64) -> Result<PointCloud, PointCloudError> {
    let n = pc.len();
    check_k(k, n)?;
    let start = rng(seed).random_range(0..n);
    let mut chosen = Vec::with_capacity(k);
    let mut dist = vec![f64::INFINITY; n];
    let mut cur = start;
    for _ in 0..k {
        chosen.push(cur);
        let c = pc.points[cur];
        let mut far = (0, -1.0);
        for (i, d) in dist.iter_mut().enumerate() {
            let e = (pc.points[i] - c).norm_squared();
            if e < *d {
                *d = e;
            }
            if *d > far.1 {
                far = (i, *d);
            }
        }
        cur = far.0;
    }
    Ok(pc.select(&chosen, seed))
}

/// `k` points drawn without replacement.
pub fn uniform_sample(pc: &PointCloud, k: usize, seed: u64) -> Result<PointCloud, PointCloudError> {
    check_k(k, pc.len())?;
    let idx = index::sample(&mut rng(seed), pc.len(), k).into_vec();
    Ok(pc.select(&idx, seed))
}

fn mean_knn_distances(pc: &PointCloud, k: usize) -> Vec<f64> {
    use rayon::prelude::*;
    pc.points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d: Vec<f64> = pc
                .points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| p.distance(*q))
                .collect();
            d.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
            d[..k].iter().sum::<f64>() / k as f64
        })
        .collect()
}

/// Drops points whose mean distance to their `k_neighbors` nearest neighbours
/// exceeds the global mean of that quantity by more than `std_ratio` standard
/// deviations. Input order is kept.
pub fn remove_outliers(pc: &PointCloud, k_neighbors: usize, std_ratio: f64) -> Result<PointCloud, PointCloudError> {
    let n = pc.len();
    if k_neighbors == 0 {
        return Err(PointCloudError::ZeroCount);
    }
    if n <= k_neighbors {
        return Err(PointCloudError::TooFewPoints { k: k_neighbors, n });
    }
    let d = mean_knn_distances(pc, k_neighbors);
    let mean = d.iter().sum::<f64>() / n as f64;
    let std = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let limit = mean + std_ratio * std;
    let keep: Vec<usize> = (0..n).filter(|&i| d[i] <= limit).collect();
    Ok(pc.select(&keep, pc.seed))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y && p.z >= self.min.z && p.z <= self.max.z
    }
}

/// Table-top region in front of the robot base.
pub const WORKSPACE: Aabb = Aabb {
    min: Vec3 {
        x: -0.2,
        y: -0.8,
        z: -0.05,
    },
    max: Vec3 {
        x: 1.4,
        y: 0.8,
        z: 1.2,
    },
};

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSpec {
    pub crop_box: Option<Aabb>,
    pub noise_std: f64,
    pub drop_fraction: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            crop_box: Some(WORKSPACE),
            noise_std: 0.005,
            drop_fraction: 0.1,
        }
    }
}

/// Crop, then per-coordinate Gaussian noise, then drop exactly
/// `floor(drop_fraction * n)` random points.
pub fn augment(pc: &PointCloud, spec: &AugmentSpec, seed: u64) -> Result<PointCloud, PointCloudError> {
    if !(spec.noise_std >= 0.0 && spec.noise_std.is_finite()) {
        return Err(PointCloudError::InvalidSpec(format!("noise_std {}", spec.noise_std)));
    }
    if !(0.0..1.0).contains(&spec.drop_fraction) {
        return Err(PointCloudError::InvalidSpec(format!("drop_fraction {}", spec.drop_fraction)));
    }
    let mut pts: Vec<Vec3> = match &spec.crop_box {
        Some(b) => pc.points.iter().copied().filter(|p| b.contains(*p)).collect(),
        None => pc.points.clone(),
    };
    if pts.is_empty() {
        return Err(PointCloudError::EmptyAfterCrop);
    }
    let mut r = rng(seed);
    if spec.noise_std > 0.0 {
        let normal = Normal::new(0.0, spec.noise_std).map_err(|e| PointCloudError::InvalidSpec(e.to_string()))?;
        for p in &mut pts {
            *p = *p + Vec3::new(normal.sample(&mut r), normal.sample(&mut r), normal.sample(&mut r));
        }
    }
    let drop = (spec.drop_fraction * pts.len() as f64).floor() as usize;
    if drop > 0 {
        let mut keep = index::sample(&mut r, pts.len(), pts.len() - drop).into_vec();
        keep.sort_unstable();
        pts = keep.into_iter().map(|i| pts[i]).collect();
    }
    Ok(PointCloud::new(pts, seed))
}

/// The standard observation: oversampled surface points reduced by FPS.
pub fn observe(scene: &SceneState, n: usize, seed: u64) -> Result<PointCloud, PointCloudError> {
    let raw = sample_scene(scene, n * OVERSAMPLE, seed)?;
    farthest_point_sample(&raw, n, seed)
}
