//! End-to-end commands over session directories.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::Deserialize;

use crate::config::PipelineConfig;
use crate::descriptor::{a_referee, r_referee, AReferee, RReferee};
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureImage};
use crate::geometry::{normalize_angle, Pose2};
use crate::metrics::{self, ApeMode, MatchRow, Summary};
use crate::pose_graph::{build_graph, optimize, LoopClosure, OptimizeReport};
use crate::registration::{
    apply_initial_alignment, compose_and_verify, estimate_heading, heading_to_transform, icp,
    polar_to_cloud,
};
use crate::retrieval::{DescriptorDatabase, RetrievalConfig};
use crate::scan_io::{
    load_descriptors, load_session, read_poses, read_trajectory, save_descriptors, write_session,
    write_trajectory, DescriptorRecord, RadarScan, Session, SessionPoses,
};
use crate::synth::{generate_session, SyntheticSession};

/// Features and both descriptors of one scan.
pub fn describe_scan(
    scan: &RadarScan,
    cfg: &PipelineConfig,
) -> Result<(FeatureImage, DescriptorRecord)> {
    let fi = extract_features(scan, &cfg.feature)?;
    let r = r_referee(&fi, &cfg.descriptor)?;
    let a = a_referee(&fi, &cfg.descriptor)?;
    let rec = DescriptorRecord {
        scan_id: scan.scan_id,
        r_referee: r.0,
        a_referee: a.0,
        config_hash: cfg.config_hash(),
    };
    Ok((fi, rec))
}

pub fn describe_scans(
    scans: &[RadarScan],
    cfg: &PipelineConfig,
) -> Result<Vec<(FeatureImage, DescriptorRecord)>> {
    if let Some(s) = scans.first() {
        cfg.validate_for_shape(s.azimuths, s.range_bins)?;
    }
    scans.par_iter().map(|s| describe_scan(s, cfg)).collect()
}

pub fn cmd_describe(
    session_dir: &Path,
    cfg: &PipelineConfig,
    out: &Path,
) -> Result<Vec<DescriptorRecord>> {
    let session = load_session(session_dir, cfg)?;
    let records: Vec<DescriptorRecord> = describe_scans(&session.scans, cfg)?
        .into_iter()
        .map(|(_, r)| r)
        .collect();
    save_descriptors(&records, out)?;
    info!("wrote {} descriptors to {}", records.len(), out.display());
    Ok(records)
}

/// One line of a matches file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetrievalRow {
    pub query_id: u64,
    pub cand_id: Option<u64>,
    pub distance: f64,
    pub accepted: bool,
}

fn check_hash(records: &[DescriptorRecord], expected: u64) -> Result<()> {
    match records.iter().find(|r| r.config_hash != expected) {
        Some(r) => Err(Error::ConfigHashMismatch {
            expected,
            found: r.config_hash,
        }),
        None => Ok(()),
    }
}

/// Top-1 retrieval for every query. Without `db` the queries are searched
/// against themselves under the exclusion window; across sessions the window
/// is disabled.
pub fn retrieve(
    queries: &[DescriptorRecord],
    db: Option<&[DescriptorRecord]>,
    cfg: &RetrievalConfig,
) -> Result<Vec<RetrievalRow>> {
    let (db_records, rcfg) = match db {
        Some(d) => (
            d,
            RetrievalConfig {
                exclusion_window: 0,
                ..*cfg
            },
        ),
        None => (queries, *cfg),
    };
    if db_records.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let hash = db_records[0].config_hash;
    check_hash(db_records, hash)?;
    check_hash(queries, hash)?;
    let database = DescriptorDatabase::build(db_records)?;
    queries
        .par_iter()
        .map(|q| {
            let desc = RReferee(q.r_referee.clone());
            let hit = database.top1(&desc, q.scan_id, &rcfg)?;
            Ok(match hit {
                Some(c) => RetrievalRow {
                    query_id: q.scan_id,
                    cand_id: Some(c.cand_id),
                    distance: c.distance,
                    accepted: c.distance < rcfg.tau,
                },
                None => RetrievalRow {
                    query_id: q.scan_id,
                    cand_id: None,
                    distance: f64::INFINITY,
                    accepted: false,
                },
            })
        })
        .collect()
}

pub fn write_matches(path: &Path, rows: &[RetrievalRow]) -> Result<()> {
    let mut out = String::from("query_id,cand_id,distance,accepted\n");
    for r in rows {
        let cand = r.cand_id.map(|c| c.to_string()).unwrap_or_default();
        let dist = if r.distance.is_finite() {
            format!("{}", r.distance)
        } else {
            "inf".into()
        };
        out.push_str(&format!("{},{cand},{dist},{}\n", r.query_id, r.accepted));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_matches(path: &Path) -> Result<Vec<MatchRow>> {
    #[derive(Deserialize)]
    struct Row {
        query_id: u64,
        cand_id: Option<u64>,
        distance: String,
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Malformed(format!("{}: {other:?}", path.display())),
    })?;
    reader
        .deserialize::<Row>()
        .map(|row| {
            let row = row?;
            let distance = match row.distance.trim() {
                "inf" => f64::INFINITY,
                s => s.parse().map_err(|_| {
                    Error::Malformed(format!("bad distance {s:?} for query {}", row.query_id))
                })?,
            };
            Ok(MatchRow {
                query_id: row.query_id,
                cand_id: row.cand_id,
                distance,
            })
        })
        .collect()
}

pub fn cmd_retrieve(
    query: &Path,
    db: Option<&Path>,
    cfg: &PipelineConfig,
    out: &Path,
) -> Result<Vec<RetrievalRow>> {
    let queries = load_descriptors(query)?;
    let db_records = db.map(load_descriptors).transpose()?;
    let expected = cfg.config_hash();
    if let Some(r) = queries.first() {
        if r.config_hash != expected {
            return Err(Error::ConfigHashMismatch {
                expected,
                found: r.config_hash,
            });
        }
    }
    let rows = retrieve(&queries, db_records.as_deref(), &cfg.retrieval)?;
    write_matches(out, &rows)?;
    Ok(rows)
}

/// Per-loop report row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopRow {
    pub query_id: u64,
    pub cand_id: u64,
    pub desc_dist: f64,
    pub heading_deg: f64,
    pub fitness: f64,
    /// Fraction of candidate points with a correspondence; not serialized.
    pub overlap: f64,
    pub accepted: bool,
}

pub fn write_loops(path: &Path, rows: &[LoopRow]) -> Result<()> {
    let mut out = String::from("query_id,cand_id,desc_dist,heading_deg,fitness,accepted\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.query_id, r.cand_id, r.desc_dist, r.heading_deg, r.fitness, r.accepted
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_loops(path: &Path) -> Result<Vec<LoopRow>> {
    #[derive(Deserialize)]
    struct Row {
        query_id: u64,
        cand_id: u64,
        desc_dist: f64,
        heading_deg: f64,
        fitness: f64,
        accepted: bool,
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Malformed(format!("{}: {other:?}", path.display())),
    })?;
    reader
        .deserialize::<Row>()
        .map(|r| {
            let r = r?;
            Ok(LoopRow {
                query_id: r.query_id,
                cand_id: r.cand_id,
                desc_dist: r.desc_dist,
                heading_deg: r.heading_deg,
                fitness: r.fitness,
                overlap: f64::NAN,
                accepted: r.accepted,
            })
        })
        .collect()
}

/// Extra inputs for trajectory and heading metrics.
#[derive(Clone, Copy, Debug, Default)]
pub struct EvalInputs<'a> {
    /// Poses of the database session when it differs from the query session.
    pub db_poses: Option<&'a Path>,
    pub loops: Option<&'a Path>,
    pub trajectory: Option<&'a Path>,
}

/// Heading of the candidate's sensor in the query frame implied by ground truth.
pub fn gt_heading_deg(query: &Pose2, cand: &Pose2) -> f64 {
    normalize_angle(cand.yaw - query.yaw).to_degrees()
}

pub fn evaluate(
    matches: &[MatchRow],
    query_poses: &SessionPoses,
    db_poses: Option<&SessionPoses>,
    loops: &[LoopRow],
    trajectory: Option<&[(u64, Pose2)]>,
    cfg: &PipelineConfig,
) -> Result<(metrics::PrCurve, Summary)> {
    let radius = cfg.metrics.revisit_radius_m;
    let same_session = db_poses.is_none();
    let db = db_poses.unwrap_or(query_poses);
    let db_list: Vec<(u64, Pose2)> = db
        .entries
        .iter()
        .map(|(id, e)| (*id, e.ground_truth))
        .collect();
    let window = same_session.then_some(cfg.retrieval.exclusion_window);
    let lookup = |id: u64| query_poses.ground_truth(id);
    let outcomes = metrics::build_outcomes(matches, &lookup, &db_list, radius, window)?;
    let curve = metrics::pr_curve(&outcomes, radius)?;
    let recall_at_1 = metrics::recall_at_1(&outcomes, radius)?;

    let mut errors = Vec::new();
    for l in loops.iter().filter(|l| l.accepted) {
        let q = query_poses
            .ground_truth(l.query_id)
            .ok_or(Error::MissingPose(l.query_id))?;
        let c = db
            .ground_truth(l.cand_id)
            .ok_or(Error::MissingPose(l.cand_id))?;
        errors.push(metrics::rotation_error(
            l.heading_deg,
            gt_heading_deg(&q, &c),
        ));
    }
    let mean_re_deg = if errors.is_empty() {
        f64::NAN
    } else {
        errors.iter().sum::<f64>() / errors.len() as f64
    };

    let (ape_rmse_m, ape_literal_m) = match trajectory {
        Some(traj) => {
            let mut est = Vec::with_capacity(traj.len());
            let mut gt = Vec::with_capacity(traj.len());
            for (id, p) in traj {
                est.push(*p);
                gt.push(
                    query_poses
                        .ground_truth(*id)
                        .ok_or(Error::MissingPose(*id))?,
                );
            }
            (
                metrics::ape(&est, &gt, ApeMode::Rmse)?,
                metrics::ape(&est, &gt, ApeMode::Literal)?,
            )
        }
        None => (f64::NAN, f64::NAN),
    };
    let summary = Summary {
        auc: curve.auc,
        f1_max: curve.f1_max,
        recall_at_1,
        mean_re_deg,
        ape_rmse_m,
        ape_literal_m,
    };
    Ok((curve, summary))
}

pub fn cmd_eval(
    matches: &Path,
    poses: &Path,
    extra: EvalInputs<'_>,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<Summary> {
    let rows = read_matches(matches)?;
    let query_poses = read_poses(poses)?;
    let db_poses = extra.db_poses.map(read_poses).transpose()?;
    let loops = extra.loops.map(read_loops).transpose()?.unwrap_or_default();
    let traj = extra.trajectory.map(read_trajectory).transpose()?;
    let (curve, summary) = evaluate(
        &rows,
        &query_poses,
        db_poses.as_ref(),
        &loops,
        traj.as_deref(),
        cfg,
    )?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    metrics::write_pr_curve(&out_dir.join("pr_curve.csv"), &curve)?;
    metrics::write_summary(&out_dir.join("summary.csv"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug)]
pub struct SlamOutput {
    pub ids: Vec<u64>,
    pub odometry: Vec<Pose2>,
    pub trajectory: Vec<Pose2>,
    pub loops: Vec<LoopRow>,
    pub closures: Vec<LoopClosure>,
    /// `None` when no loop was accepted and the odometry was returned as is.
    pub report: Option<OptimizeReport>,
}

/// Online loop detection followed by pose-graph optimization. The database
/// only ever holds scans whose id is more than the exclusion window behind
/// the current query.
pub fn slam(session: &Session, cfg: &PipelineConfig) -> Result<SlamOutput> {
    let odometry = session.odometry().ok_or(Error::NoOdometry)?;
    let described = describe_scans(&session.scans, cfg)?;
    let ids: Vec<u64> = session.scans.iter().map(|s| s.scan_id).collect();
    let window = cfg.retrieval.exclusion_window;
    let hash = cfg.config_hash();
    let dim = described.first().map_or(0, |(_, r)| r.r_referee.len());
    let mut db = DescriptorDatabase::new(dim, hash);
    let online = RetrievalConfig {
        exclusion_window: 0,
        ..cfg.retrieval
    };
    let index_of: HashMap<u64, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let resolution = session.scans.first().map_or(1.0, |s| s.range_resolution);

    let mut next = 0;
    let mut loops = Vec::new();
    let mut closures = Vec::new();
    for (q, (q_fi, q_rec)) in described.iter().enumerate() {
        let qid = ids[q];
        while next < q && ids[next].saturating_add(window) < qid {
            db.push(ids[next], &RReferee(described[next].1.r_referee.clone()))?;
            next += 1;
        }
        if db.is_empty() {
            continue;
        }
        let Some(cand) = db.query(&RReferee(q_rec.r_referee.clone()), qid, &online)? else {
            continue;
        };
        let c = index_of[&cand.cand_id];
        let (c_fi, c_rec) = &described[c];
        let heading = estimate_heading(
            &AReferee(q_rec.a_referee.clone()),
            &AReferee(c_rec.a_referee.clone()),
        )?;
        let t_heading = heading_to_transform(&heading);
        let target = apply_initial_alignment(&polar_to_cloud(q_fi, resolution), &t_heading);
        let source = polar_to_cloud(c_fi, resolution);
        let res = icp(&source, &target, &cfg.icp);
        let verified = if heading.degenerate || res.overlap < cfg.icp.min_overlap {
            None
        } else {
            compose_and_verify(&t_heading, &res, cfg.icp.fitness_threshold)
        };
        let heading_deg = normalize_angle(heading.angle_deg().to_radians()).to_degrees();
        loops.push(LoopRow {
            query_id: qid,
            cand_id: cand.cand_id,
            desc_dist: cand.distance,
            heading_deg,
            fitness: res.fitness,
            overlap: res.overlap,
            accepted: verified.is_some(),
        });
        if let Some(t) = verified {
            closures.push(LoopClosure {
                query_index: q,
                cand_index: c,
                query_id: qid,
                cand_id: cand.cand_id,
                descriptor_distance: cand.distance,
                heading_deg,
                relative: t.to_pose(),
                fitness: res.fitness,
            });
        }
    }

    if closures.is_empty() {
        warn!("no loop accepted; trajectory equals odometry");
        return Ok(SlamOutput {
            ids,
            trajectory: odometry.clone(),
            odometry,
            loops,
            closures,
            report: None,
        });
    }
    let graph = build_graph(&odometry, &closures, &cfg.pose_graph)?;
    let (trajectory, report) = optimize(&graph, &odometry, &cfg.pose_graph)?;
    info!(
        "{} loops accepted, cost {:.3} -> {:.3} in {} steps",
        closures.len(),
        report.initial_cost,
        report.final_cost,
        report.iterations
    );
    Ok(SlamOutput {
        ids,
        odometry,
        trajectory,
        loops,
        closures,
        report: Some(report),
    })
}

pub fn cmd_slam(session_dir: &Path, cfg: &PipelineConfig, out_dir: &Path) -> Result<SlamOutput> {
    let session = load_session(session_dir, cfg)?;
    let out = slam(&session, cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_trajectory(&out_dir.join("trajectory.csv"), &out.ids, &out.trajectory)?;
    write_loops(&out_dir.join("loops.csv"), &out.loops)?;
    Ok(out)
}

/// Renders a session from the config's synth section, with `seed`
/// overriding the noise seed when given.
pub fn cmd_synth(
    cfg: &PipelineConfig,
    seed: Option<u64>,
    out_dir: &Path,
) -> Result<SyntheticSession> {
    let mut synth = cfg.synth_config();
    if let Some(s) = seed {
        synth.seed = s;
    }
    let session = generate_session(&synth)?;
    write_session(out_dir, &session.scans, &session.poses)?;
    Ok(session)
}
