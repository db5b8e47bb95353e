//! Loop registration: coarse heading from A-ReFeree, then point-to-point ICP.
//!
//! Transforms follow the pose convention: `T_(a,b)` is the pose of frame `b`
//! in frame `a`, so it maps points expressed in `b` into `a`. A heading
//! estimate `n` means the candidate sensor is rotated counter-clockwise by
//! `n` angle blocks relative to the query sensor.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::descriptor::AReferee;
use crate::error::{Error, Result};
use crate::features::FeatureImage;
use crate::geometry::RigidTransform2;
use crate::kdtree::KdTree;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadingEstimate {
    /// Block shift in `[0, N_h)`.
    pub n_hat: usize,
    pub n_h: usize,
    pub cosine_distance: f64,
    /// Set when either descriptor is all zeros and no shift could be measured.
    pub degenerate: bool,
}

impl HeadingEstimate {
    pub fn angle_deg(&self) -> f64 {
        self.n_hat as f64 * 360.0 / self.n_h as f64
    }

    pub fn block_deg(&self) -> f64 {
        360.0 / self.n_h as f64
    }
}

/// `1 - a·b / (|a||b|)`.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - dot / (na.sqrt() * nb.sqrt())
}

/// Exhaustive cyclic shift search. The candidate is rotated back by `n`
/// blocks and compared to the query; the smallest cosine distance wins,
/// ties going to the smaller shift.
pub fn estimate_heading(query: &AReferee, candidate: &AReferee) -> Result<HeadingEstimate> {
    let n_h = query.len();
    if candidate.len() != n_h {
        return Err(Error::LengthMismatch(n_h, candidate.len()));
    }
    if n_h == 0 {
        return Err(Error::LengthMismatch(0, 0));
    }
    let zero = |a: &AReferee| a.0.iter().all(|&v| v == 0.0);
    if zero(query) || zero(candidate) {
        return Ok(HeadingEstimate {
            n_hat: 0,
            n_h,
            cosine_distance: 1.0,
            degenerate: true,
        });
    }
    let mut shifted = candidate.0.clone();
    let mut best = (0usize, f64::INFINITY);
    for n in 0..n_h {
        // shifted[k] = candidate[(k - n) mod N_h]
        if n > 0 {
            shifted.rotate_right(1);
        }
        let d = cosine_distance(&query.0, &shifted);
        if d < best.1 {
            best = (n, d);
        }
    }
    Ok(HeadingEstimate {
        n_hat: best.0,
        n_h,
        cosine_distance: best.1,
        degenerate: false,
    })
}

/// Pure rotation by `n_hat * 360 / N_h` degrees.
pub fn heading_to_transform(h: &HeadingEstimate) -> RigidTransform2 {
    RigidTransform2::from_angle(h.angle_deg().to_radians(), Vector2::zeros())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud2 {
    pub points: Vec<Vector2<f64>>,
}

impl PointCloud2 {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, t: &RigidTransform2) -> PointCloud2 {
        PointCloud2 {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
        }
    }
}

/// One point per feature pixel at the center of its azimuth row and range bin.
pub fn polar_to_cloud(fi: &FeatureImage, range_resolution: f64) -> PointCloud2 {
    let step = 2.0 * PI / fi.azimuths as f64;
    let mut points = Vec::with_capacity(fi.feature_count);
    for i in 0..fi.azimuths {
        let (s, c) = ((i as f64 + 0.5) * step).sin_cos();
        for (j, &f) in fi.row(i).iter().enumerate() {
            if f {
                let r = (j as f64 + 0.5) * range_resolution;
                points.push(Vector2::new(r * c, r * s));
            }
        }
    }
    PointCloud2 { points }
}

/// Maps the query cloud by the inverse of the heading transform.
pub fn apply_initial_alignment(cloud: &PointCloud2, t: &RigidTransform2) -> PointCloud2 {
    cloud.transformed(&t.inverse())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Correspondences farther than this (m) are rejected.
    pub max_corr_dist: f64,
    /// Convergence threshold on the per-iteration update (rad and m).
    pub tolerance: f64,
    /// Loops are accepted when the fitness (m²) is strictly below this.
    pub fitness_threshold: f64,
    /// Minimum fraction of source points that must find a correspondence.
    pub min_overlap: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            max_iterations: 50,
            max_corr_dist: 2.0,
            tolerance: 1e-6,
            fitness_threshold: 1.0,
            min_overlap: 0.0,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("icp.max_iterations must be positive".into()));
        }
        if !(self.max_corr_dist > 0.0)
            || !(self.tolerance > 0.0)
            || !(self.fitness_threshold >= 0.0)
        {
            return Err(Error::Config(
                "icp distances, tolerance and fitness threshold must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.min_overlap) {
            return Err(Error::Config("icp.min_overlap must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Mean squared correspondence distance before and after one alignment step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcpIteration {
    pub correspondences: usize,
    pub mse_before: f64,
    pub mse_after: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcpResult {
    /// Maps source points into the target frame.
    pub transform: RigidTransform2,
    /// Mean squared distance of retained correspondences at the final pose (m²).
    pub fitness: f64,
    /// Fraction of source points with a retained correspondence.
    pub overlap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<IcpIteration>,
}

/// Closed-form rigid alignment of paired points (2D Procrustes).
pub fn align_pairs(src: &[Vector2<f64>], dst: &[Vector2<f64>]) -> RigidTransform2 {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector2<f64>>() / n;
    let cd = dst.iter().sum::<Vector2<f64>>() / n;
    let mut cov = Matrix2::zeros();
    for (s, d) in src.iter().zip(dst) {
        cov += (s - cs) * (d - cd).transpose();
    }
    // maximizes trace(R * cov)
    let theta = (cov[(0, 1)] - cov[(1, 0)]).atan2(cov[(0, 0)] + cov[(1, 1)]);
    let r = RigidTransform2::from_angle(theta, Vector2::zeros());
    RigidTransform2 {
        rotation: r.rotation,
        translation: cd - r.rotation * cs,
    }
}

struct Matches {
    src: Vec<Vector2<f64>>,
    dst: Vec<Vector2<f64>>,
    sq_sum: f64,
}

fn correspond(tree: &KdTree, target: &PointCloud2, moved: &PointCloud2, max_sq: f64) -> Matches {
    let mut m = Matches {
        src: Vec::new(),
        dst: Vec::new(),
        sq_sum: 0.0,
    };
    for p in &moved.points {
        if let Some(n) = tree.nearest(&[p.x, p.y]) {
            if n.dist_sq <= max_sq {
                m.src.push(*p);
                m.dst.push(target.points[n.index]);
                m.sq_sum += n.dist_sq;
            }
        }
    }
    m
}

fn mse(src: &[Vector2<f64>], dst: &[Vector2<f64>], t: &RigidTransform2) -> f64 {
    src.iter()
        .zip(dst)
        .map(|(s, d)| (t.apply(s) - d).norm_squared())
        .sum::<f64>()
        / src.len() as f64
}

/// Point-to-point ICP registering `source` onto `target`.
pub fn icp(source: &PointCloud2, target: &PointCloud2, cfg: &IcpConfig) -> IcpResult {
    let mut result = IcpResult {
        transform: RigidTransform2::identity(),
        fitness: f64::INFINITY,
        overlap: 0.0,
        iterations: 0,
        converged: false,
        history: Vec::new(),
    };
    if source.len() < 3 || target.len() < 3 {
        return result;
    }
    let coords = target.points.iter().flat_map(|p| [p.x, p.y]).collect();
    let tree = KdTree::build(2, coords, (0..target.len() as u64).collect());
    let max_sq = cfg.max_corr_dist * cfg.max_corr_dist;

    let mut total = RigidTransform2::identity();
    for it in 0..cfg.max_iterations {
        let moved = source.transformed(&total);
        let m = correspond(&tree, target, &moved, max_sq);
        result.iterations = it + 1;
        if m.src.len() < 3 {
            result.transform = total;
            return result;
        }
        let step = align_pairs(&m.src, &m.dst);
        result.history.push(IcpIteration {
            correspondences: m.src.len(),
            mse_before: m.sq_sum / m.src.len() as f64,
            mse_after: mse(&m.src, &m.dst, &step),
        });
        total = step.compose(&total);
        if step.angle().abs() < cfg.tolerance && step.translation.norm() < cfg.tolerance {
            result.converged = true;
            break;
        }
    }

    let m = correspond(&tree, target, &source.transformed(&total), max_sq);
    result.transform = total;
    if m.src.len() < 3 {
        result.converged = false;
        return result;
    }
    result.fitness = m.sq_sum / m.src.len() as f64;
    result.overlap = m.src.len() as f64 / source.len() as f64;
    result
}

/// `T_(q,c) = T_(q,q̂) · T_(q̂,c)`, kept only when ICP converged with fitness
/// strictly below the threshold.
pub fn compose_and_verify(
    t_heading: &RigidTransform2,
    icp_res: &IcpResult,
    fitness_threshold: f64,
) -> Option<RigidTransform2> {
    if !icp_res.converged || !(icp_res.fitness < fitness_threshold) {
        return None;
    }
    Some(t_heading.compose(&icp_res.transform))
}
