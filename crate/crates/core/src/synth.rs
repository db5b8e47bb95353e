//! Synthetic radar worlds with ground truth.
//!
//! A world is a set of point reflectors, mostly sampled along wall segments.
//! Scans are rendered in polar form: each reflector deposits a Gaussian bump
//! along range in the azimuth row it falls into, optionally a dimmer ghost at
//! twice the range, and the whole image receives additive exponential speckle.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureImage;
use crate::geometry::Pose2;
use crate::scan_io::{PoseEntry, RadarScan, SessionPoses};

/// Ghost amplitude relative to the true return.
pub const GHOST_GAIN: f64 = 0.4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Landmark {
    pub x: f64,
    pub y: f64,
    pub reflectivity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub landmarks: Vec<Landmark>,
    pub extent: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub seed: u64,
    /// Side of the square area landmarks are drawn from (m).
    pub extent_m: f64,
    pub walls: usize,
    pub wall_length_m: [f64; 2],
    pub point_spacing_m: f64,
    /// Isolated point reflectors.
    pub scatterers: usize,
    pub reflectivity: [f64; 2],
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 7,
            extent_m: 320.0,
            walls: 160,
            wall_length_m: [4.0, 24.0],
            point_spacing_m: 0.8,
            scatterers: 300,
            reflectivity: [0.35, 1.0],
        }
    }
}

impl World {
    pub fn generate(cfg: &WorldConfig) -> World {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let half = cfg.extent_m / 2.0;
        let mut landmarks = Vec::new();
        for _ in 0..cfg.walls {
            let cx = rng.random_range(-half..half);
            let cy = rng.random_range(-half..half);
            let heading = rng.random_range(0.0..PI);
            let len = rng.random_range(cfg.wall_length_m[0]..=cfg.wall_length_m[1]);
            let refl = rng.random_range(cfg.reflectivity[0]..=cfg.reflectivity[1]);
            let n = (len / cfg.point_spacing_m).ceil().max(1.0) as usize;
            let (s, c) = heading.sin_cos();
            for k in 0..n {
                let t = -len / 2.0 + (k as f64 + 0.5) * len / n as f64;
                landmarks.push(Landmark {
                    x: cx + t * c + rng.random_range(-0.1..0.1),
                    y: cy + t * s + rng.random_range(-0.1..0.1),
                    reflectivity: (refl * rng.random_range(0.85..1.0)).min(1.0),
                });
            }
        }
        for _ in 0..cfg.scatterers {
            landmarks.push(Landmark {
                x: rng.random_range(-half..half),
                y: rng.random_range(-half..half),
                reflectivity: rng.random_range(cfg.reflectivity[0]..=cfg.reflectivity[1]),
            });
        }
        World {
            landmarks,
            extent: cfg.extent_m,
            seed: cfg.seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Loop,
    ReverseLoop,
    FigureEight,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub kind: TrajectoryKind,
    pub n_scans: usize,
    /// Distance between consecutive scans (m).
    pub step_m: f64,
    /// Lateral separation of the return leg of a reverse loop (m).
    pub lane_offset_m: f64,
    /// Traverse the path backwards.
    pub reverse_direction: bool,
    /// Shift every pose to its left by this much (m).
    pub lateral_offset_m: f64,
    pub odom_sigma_xy_m: f64,
    pub odom_sigma_yaw_deg: f64,
    /// Mean of the per-step yaw error (deg).
    pub odom_yaw_bias_deg: f64,
    pub seed: u64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            kind: TrajectoryKind::Loop,
            n_scans: 60,
            step_m: 4.0,
            lane_offset_m: 2.0,
            reverse_direction: false,
            lateral_offset_m: 0.0,
            odom_sigma_xy_m: 0.05,
            odom_sigma_yaw_deg: 0.2,
            odom_yaw_bias_deg: 0.6,
            seed: 11,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub azimuths: usize,
    pub range_bins: usize,
    /// Meters per range bin; taken from the pipeline's range resolution.
    #[serde(skip)]
    pub range_resolution: f64,
    /// Gaussian spread of a return along range (bins).
    pub beam_sigma_bins: f64,
    /// Mean of the additive exponential speckle.
    pub speckle_scale: f64,
    pub multipath_prob: f64,
    /// Noise seed for rendering.
    pub seed: u64,
    /// Seconds between scans.
    pub scan_period_s: f64,
    pub world: WorldConfig,
    pub trajectory: TrajectoryConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            azimuths: 180,
            range_bins: 168,
            range_resolution: 0.5,
            beam_sigma_bins: 1.0,
            speckle_scale: 0.05,
            multipath_prob: 0.1,
            seed: 1,
            scan_period_s: 0.25,
            world: WorldConfig::default(),
            trajectory: TrajectoryConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.azimuths < 4 || self.range_bins < 4 {
            return Err(Error::Config("synth image must be at least 4x4".into()));
        }
        if !(self.range_resolution > 0.0) || !(self.beam_sigma_bins > 0.0) {
            return Err(Error::Config(
                "synth resolution and beam sigma must be positive".into(),
            ));
        }
        if !(self.speckle_scale >= 0.0) || !(0.0..=1.0).contains(&self.multipath_prob) {
            return Err(Error::Config(
                "synth speckle must be >= 0 and multipath_prob in [0, 1]".into(),
            ));
        }
        let w = &self.world;
        if w.walls + w.scatterers == 0 {
            return Err(Error::Config(
                "synth world needs at least one landmark".into(),
            ));
        }
        if !(w.point_spacing_m > 0.0)
            || w.wall_length_m[0] > w.wall_length_m[1]
            || w.reflectivity[0] > w.reflectivity[1]
            || !(w.reflectivity[0] > 0.0 && w.reflectivity[1] <= 1.0)
        {
            return Err(Error::Config("synth world ranges are inconsistent".into()));
        }
        if self.trajectory.n_scans < 3 {
            return Err(Error::Config(
                "synth trajectory needs at least 3 scans".into(),
            ));
        }
        if !(self.trajectory.step_m > 0.0) {
            return Err(Error::Config(
                "synth trajectory step must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn max_range(&self) -> f64 {
        self.range_bins as f64 * self.range_resolution
    }
}

fn deposit(row: &mut [f64], center: f64, sigma: f64, amplitude: f64) {
    let lo = (center - 4.0 * sigma).ceil().max(0.0) as usize;
    let hi = (center + 4.0 * sigma).floor();
    if hi < 0.0 {
        return;
    }
    let hi = (hi as usize).min(row.len() - 1);
    for (j, v) in row.iter_mut().enumerate().take(hi + 1).skip(lo) {
        let d = j as f64 - center;
        *v += amplitude * (-0.5 * d * d / (sigma * sigma)).exp();
    }
}

/// Renders the scene seen from `pose`, with every row index lowered by
/// `row_shift` (a sensor rotated counter-clockwise by that many rows).
fn render_shifted(
    world: &World,
    pose: &Pose2,
    row_shift: usize,
    cfg: &SynthConfig,
    seed: u64,
) -> (RadarScan, FeatureImage) {
    let (h, w) = (cfg.azimuths, cfg.range_bins);
    let step = 2.0 * PI / h as f64;
    let mut img = vec![0.0f64; h * w];
    let mut gt = vec![false; h * w];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_range = cfg.max_range();
    let sigma = cfg.beam_sigma_bins;

    for lm in &world.landmarks {
        let ghost = cfg.multipath_prob > 0.0 && rng.random_bool(cfg.multipath_prob);
        let (dx, dy) = (lm.x - pose.x, lm.y - pose.y);
        let r = dx.hypot(dy);
        if r >= max_range || r <= 0.0 {
            continue;
        }
        let bearing = (dy.atan2(dx) - pose.yaw).rem_euclid(2.0 * PI);
        let base_row = ((bearing / step).floor() as usize).min(h - 1);
        let row = (base_row + h - row_shift % h) % h;
        let center = r / cfg.range_resolution - 0.5;
        let line = &mut img[row * w..(row + 1) * w];
        deposit(line, center, sigma, lm.reflectivity);
        if ghost && 2.0 * r < max_range {
            deposit(
                line,
                2.0 * r / cfg.range_resolution - 0.5,
                sigma,
                GHOST_GAIN * lm.reflectivity,
            );
        }
        let nearest = center.round().clamp(0.0, (w - 1) as f64) as usize;
        gt[row * w + nearest] = true;
        let lo = (center - sigma).ceil().max(0.0) as usize;
        let hi = (center + sigma).floor().min((w - 1) as f64);
        if hi >= 0.0 {
            for j in lo..=hi as usize {
                gt[row * w + j] = true;
            }
        }
    }

    if cfg.speckle_scale > 0.0 {
        for v in img.iter_mut() {
            let e: f64 = Exp1.sample(&mut rng);
            *v += cfg.speckle_scale * e;
        }
    }
    let intensities = img
        .into_iter()
        .map(|v| ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32)
        .collect();
    let scan = RadarScan {
        scan_id: 0,
        timestamp: 0.0,
        azimuths: h,
        range_bins: w,
        range_resolution: cfg.range_resolution,
        intensities,
    };
    (scan, FeatureImage::from_mask(0, h, w, gt))
}

/// Scan at `pose` and the generator's ground-truth feature mask.
pub fn render_scan(
    world: &World,
    pose: &Pose2,
    cfg: &SynthConfig,
    seed: u64,
) -> (RadarScan, FeatureImage) {
    render_shifted(world, pose, 0, cfg, seed)
}

#[derive(Clone, Debug)]
pub struct RotatedPair {
    pub scan_a: RadarScan,
    pub scan_b: RadarScan,
    pub gt_a: FeatureImage,
    pub gt_b: FeatureImage,
    /// Rotation of `scan_b`'s sensor relative to `scan_a`'s, snapped to the
    /// azimuth grid (deg, in `[0, 360)`).
    pub rotation_deg: f64,
    pub row_shift: usize,
}

/// Two views from the same position, the second with its yaw increased by
/// `rotation_deg` rounded to whole azimuth rows.
pub fn render_rotated_pair(
    world: &World,
    pose: &Pose2,
    rotation_deg: f64,
    cfg: &SynthConfig,
    seeds: (u64, u64),
) -> RotatedPair {
    let h = cfg.azimuths;
    let row_deg = 360.0 / h as f64;
    let row_shift = ((rotation_deg / row_deg).round() as i64).rem_euclid(h as i64) as usize;
    let (scan_a, gt_a) = render_shifted(world, pose, 0, cfg, seeds.0);
    let (scan_b, gt_b) = render_shifted(world, pose, row_shift, cfg, seeds.1);
    RotatedPair {
        scan_a,
        scan_b,
        gt_a,
        gt_b,
        rotation_deg: row_shift as f64 * row_deg,
        row_shift,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub ground_truth: Vec<Pose2>,
    pub odometry: Vec<Pose2>,
}

/// Closed path sampled every `step` meters along its arc length.
fn resample_closed(curve: impl Fn(f64) -> (f64, f64), n: usize, step: f64) -> Vec<Pose2> {
    const FINE: usize = 20_000;
    let pts: Vec<(f64, f64)> = (0..=FINE).map(|k| curve(k as f64 / FINE as f64)).collect();
    let mut cum = vec![0.0];
    for w in pts.windows(2) {
        let d = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
        cum.push(cum.last().unwrap() + d);
    }
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for i in 0..n {
        let s = (i as f64 * step) % total;
        if s < cum[seg] {
            seg = 0;
        }
        while cum[seg + 1] < s {
            seg += 1;
        }
        let t = (s - cum[seg]) / (cum[seg + 1] - cum[seg]).max(f64::MIN_POSITIVE);
        let (a, b) = (pts[seg], pts[seg + 1]);
        let yaw = (b.1 - a.1).atan2(b.0 - a.0);
        out.push(Pose2::new(
            a.0 + t * (b.0 - a.0),
            a.1 + t * (b.1 - a.1),
            yaw,
        ));
    }
    out
}

fn ground_truth_path(cfg: &TrajectoryConfig) -> Vec<Pose2> {
    let n = cfg.n_scans;
    let step = cfg.step_m;
    match cfg.kind {
        TrajectoryKind::Loop => {
            // one lap plus a short overlap so the end revisits the start
            let perimeter = (n as f64 - 2.5) * step;
            let radius = perimeter / (2.0 * PI);
            (0..n)
                .map(|i| {
                    let a = i as f64 * step / radius;
                    Pose2::new(radius * a.cos(), radius * a.sin(), a + PI / 2.0)
                })
                .collect()
        }
        TrajectoryKind::ReverseLoop => {
            // out along a gentle arc, back along it in the opposite lane
            let kappa = 1.0 / 150.0;
            let at = |s: f64| {
                let th = kappa * s;
                ((th.sin()) / kappa, (1.0 - th.cos()) / kappa, th)
            };
            let out_n = n / 2;
            let s_max = (out_n - 1) as f64 * step;
            let mut poses: Vec<Pose2> = (0..out_n)
                .map(|i| {
                    let (x, y, th) = at(i as f64 * step);
                    Pose2::new(x, y, th)
                })
                .collect();
            for j in 0..n - out_n {
                let s = s_max - (j as f64 + 0.5) * step;
                let (x, y, th) = at(s);
                // the return lane lies to the right of the outbound direction
                let (nx, ny) = (th.sin(), -th.cos());
                poses.push(Pose2::new(
                    x + cfg.lane_offset_m * nx,
                    y + cfg.lane_offset_m * ny,
                    th + PI,
                ));
            }
            poses
        }
        TrajectoryKind::FigureEight => {
            let perimeter = (n as f64 - 2.5) * step;
            let shape = |u: f64| {
                let t = 2.0 * PI * u;
                (t.sin(), t.sin() * t.cos())
            };
            let unit_len: f64 = (0..4000)
                .map(|k| {
                    let (a, b) = (shape(k as f64 / 4000.0), shape((k + 1) as f64 / 4000.0));
                    (b.0 - a.0).hypot(b.1 - a.1)
                })
                .sum();
            let scale = perimeter / unit_len;
            resample_closed(
                |u| {
                    let (x, y) = shape(u);
                    (scale * x, scale * y)
                },
                n,
                step,
            )
        }
    }
}

pub fn make_trajectory(cfg: &TrajectoryConfig) -> Trajectory {
    let mut gt = ground_truth_path(cfg);
    if cfg.reverse_direction {
        gt.reverse();
        for p in gt.iter_mut() {
            *p = Pose2::new(p.x, p.y, p.yaw + PI);
        }
    }
    if cfg.lateral_offset_m != 0.0 {
        for p in gt.iter_mut() {
            let (s, c) = p.yaw.sin_cos();
            *p = Pose2::new(
                p.x - s * cfg.lateral_offset_m,
                p.y + c * cfg.lateral_offset_m,
                p.yaw,
            );
        }
    }

    let noiseless =
        cfg.odom_sigma_xy_m == 0.0 && cfg.odom_sigma_yaw_deg == 0.0 && cfg.odom_yaw_bias_deg == 0.0;
    let odometry = if noiseless {
        gt.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let xy = Normal::new(0.0, cfg.odom_sigma_xy_m).expect("finite sigma");
        let yaw = Normal::new(
            cfg.odom_yaw_bias_deg.to_radians(),
            cfg.odom_sigma_yaw_deg.to_radians(),
        )
        .expect("finite sigma");
        let mut odom = vec![gt[0]];
        for w in gt.windows(2) {
            let d = w[0].between(&w[1]);
            let noisy = Pose2::new(
                d.x + xy.sample(&mut rng),
                d.y + xy.sample(&mut rng),
                d.yaw + yaw.sample(&mut rng),
            );
            let next = odom.last().unwrap().compose(&noisy);
            odom.push(next);
        }
        odom
    };
    Trajectory {
        ground_truth: gt,
        odometry,
    }
}

/// Per-scan noise seed derived from the session seed.
pub fn scan_seed(session_seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = session_seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A rendered session with its ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticSession {
    pub world: World,
    pub trajectory: Trajectory,
    pub scans: Vec<RadarScan>,
    pub gt_masks: Vec<FeatureImage>,
    pub poses: SessionPoses,
}

pub fn generate_session(cfg: &SynthConfig) -> Result<SyntheticSession> {
    cfg.validate()?;
    let world = World::generate(&cfg.world);
    let trajectory = make_trajectory(&cfg.trajectory);
    let rendered: Vec<(RadarScan, FeatureImage)> = trajectory
        .ground_truth
        .par_iter()
        .enumerate()
        .map(|(i, pose)| {
            let (mut scan, mut gt) = render_scan(&world, pose, cfg, scan_seed(cfg.seed, i as u64));
            scan.scan_id = i as u64;
            scan.timestamp = i as f64 * cfg.scan_period_s;
            gt.scan_id = i as u64;
            (scan, gt)
        })
        .collect();
    let mut poses = SessionPoses::default();
    for (i, (g, o)) in trajectory
        .ground_truth
        .iter()
        .zip(&trajectory.odometry)
        .enumerate()
    {
        poses.entries.insert(
            i as u64,
            PoseEntry {
                timestamp: i as f64 * cfg.scan_period_s,
                ground_truth: *g,
                odometry: Some(*o),
            },
        );
    }
    let (scans, gt_masks) = rendered.into_iter().unzip();
    Ok(SyntheticSession {
        world,
        trajectory,
        scans,
        gt_masks,
        poses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> SynthConfig {
        SynthConfig {
            speckle_scale: 0.0,
            multipath_prob: 0.0,
            ..Default::default()
        }
    }

    fn empty_world() -> World {
        World {
            landmarks: vec![],
            extent: 10.0,
            seed: 0,
        }
    }

    #[test]
    fn empty_world_renders_blank() {
        let (scan, gt) = render_scan(&empty_world(), &Pose2::IDENTITY, &quiet(), 3);
        assert!(scan.intensities.iter().all(|&v| v == 0.0));
        assert_eq!(gt.feature_count, 0);
    }

    #[test]
    fn landmark_ahead_peaks_at_expected_bin() {
        let world = World {
            landmarks: vec![Landmark {
                x: 10.0,
                y: 0.0,
                reflectivity: 1.0,
            }],
            extent: 20.0,
            seed: 0,
        };
        let (scan, gt) = render_scan(&world, &Pose2::IDENTITY, &quiet(), 0);
        let (mut best, mut at) = (0.0, (0, 0));
        for i in 0..scan.azimuths {
            for (j, &v) in scan.row(i).iter().enumerate() {
                if v > best {
                    best = v;
                    at = (i, j);
                }
            }
        }
        assert_eq!(at.0, 0);
        assert!((at.1 as i64 - 20).abs() <= 1, "peak at bin {}", at.1);
        assert!(gt.is_feature(0, 19) || gt.is_feature(0, 20));
    }

    #[test]
    fn rendering_is_deterministic() {
        let cfg = SynthConfig::default();
        let world = World::generate(&cfg.world);
        let pose = Pose2::new(3.0, -4.0, 0.7);
        assert_eq!(
            render_scan(&world, &pose, &cfg, 42).0,
            render_scan(&world, &pose, &cfg, 42).0
        );
        assert_ne!(
            render_scan(&world, &pose, &cfg, 42).0,
            render_scan(&world, &pose, &cfg, 43).0
        );
    }

    #[test]
    fn zero_rotation_same_seed_is_identical() {
        let cfg = SynthConfig::default();
        let world = World::generate(&cfg.world);
        let p = render_rotated_pair(&world, &Pose2::new(1.0, 2.0, 0.3), 0.0, &cfg, (5, 5));
        assert_eq!(p.scan_a, p.scan_b);
    }

    #[test]
    fn grid_rotation_shifts_rows_exactly() {
        let cfg = quiet();
        let world = World::generate(&cfg.world);
        for deg in [2.0, 90.0, 180.0, 358.0] {
            let p = render_rotated_pair(&world, &Pose2::new(-5.0, 8.0, 1.1), deg, &cfg, (1, 2));
            let mut shifted = p.scan_a.intensities.clone();
            shifted.rotate_left(p.row_shift * cfg.range_bins);
            assert_eq!(shifted, p.scan_b.intensities, "rotation {deg}");
            assert_eq!(p.gt_a.shift_rows(p.row_shift).mask, p.gt_b.mask);
        }
    }

    #[test]
    fn gt_mask_sits_above_speckle_mean() {
        let cfg = SynthConfig::default();
        let world = World::generate(&cfg.world);
        let (scan, gt) = render_scan(&world, &Pose2::new(0.0, 0.0, 0.0), &cfg, 9);
        assert!(gt.feature_count > 0);
        for (k, &m) in gt.mask.iter().enumerate() {
            if m {
                assert!(scan.intensities[k] as f64 > cfg.speckle_scale);
            }
        }
    }

    #[test]
    fn loop_returns_near_start() {
        let cfg = TrajectoryConfig {
            n_scans: 40,
            ..Default::default()
        };
        let t = make_trajectory(&cfg);
        let (a, b) = (t.ground_truth[0], t.ground_truth[39]);
        assert!((a.x - b.x).hypot(a.y - b.y) < 20.0);
    }

    #[test]
    fn noiseless_odometry_is_ground_truth() {
        let cfg = TrajectoryConfig {
            odom_sigma_xy_m: 0.0,
            odom_sigma_yaw_deg: 0.0,
            odom_yaw_bias_deg: 0.0,
            ..Default::default()
        };
        let t = make_trajectory(&cfg);
        assert_eq!(t.odometry, t.ground_truth);
    }

    #[test]
    fn noisy_odometry_drifts() {
        let t = make_trajectory(&TrajectoryConfig::default());
        let (o, g) = (t.odometry.last().unwrap(), t.ground_truth.last().unwrap());
        assert!((o.x - g.x).hypot(o.y - g.y) > 1.0);
    }

    #[test]
    fn reverse_loop_revisits_face_backwards() {
        let cfg = TrajectoryConfig {
            kind: TrajectoryKind::ReverseLoop,
            ..Default::default()
        };
        let t = make_trajectory(&cfg);
        let gt = &t.ground_truth;
        let mut pairs = 0;
        for (j, b) in gt.iter().enumerate().skip(cfg.n_scans / 2) {
            for a in &gt[..cfg.n_scans / 2] {
                if (a.x - b.x).hypot(a.y - b.y) < 20.0 {
                    pairs += 1;
                    let dyaw = crate::geometry::normalize_angle(b.yaw - a.yaw)
                        .abs()
                        .to_degrees();
                    assert!((dyaw - 180.0).abs() < 10.0, "scan {j}: {dyaw}");
                }
            }
        }
        assert!(pairs > 0);
    }

    #[test]
    fn figure_eight_crosses_itself() {
        let cfg = TrajectoryConfig {
            kind: TrajectoryKind::FigureEight,
            ..Default::default()
        };
        let gt = make_trajectory(&cfg).ground_truth;
        assert_eq!(gt.len(), cfg.n_scans);
        for w in gt.windows(2) {
            let d = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
            assert!(d <= cfg.step_m + 1e-6);
        }
        let n = gt.len();
        let center_visits = gt.iter().filter(|p| p.x.hypot(p.y) < cfg.step_m).count();
        assert!(
            center_visits >= 2,
            "{n} poses, {center_visits} near the crossing"
        );
    }

    #[test]
    fn session_is_reproducible() {
        let cfg = SynthConfig {
            trajectory: TrajectoryConfig {
                n_scans: 8,
                ..Default::default()
            },
            ..Default::default()
        };
        let a = generate_session(&cfg).unwrap();
        let b = generate_session(&cfg).unwrap();
        assert_eq!(a.scans, b.scans);
        assert_eq!(a.poses, b.poses);
    }
}
