//! Place-recognition and trajectory metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Two poses closer than this count as the same place (m).
    pub revisit_radius_m: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            revisit_radius_m: 20.0,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.revisit_radius_m > 0.0) {
            return Err(Error::Config(
                "metrics.revisit_radius_m must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Top-1 retrieval result for one query, joined with ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchOutcome {
    pub query_id: u64,
    pub retrieved_id: Option<u64>,
    pub descriptor_distance: f64,
    /// Ground-truth distance between query and retrieved poses.
    pub metric_distance_m: Option<f64>,
    /// Some admissible candidate lies within the revisit radius.
    pub has_true_revisit: bool,
}

impl MatchOutcome {
    fn correct(&self, radius: f64) -> bool {
        self.metric_distance_m.is_some_and(|d| d <= radius)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    /// One when nothing is accepted.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn classify(outcomes: &[MatchOutcome], tau: f64, revisit_radius: f64) -> Counts {
    let mut c = Counts::default();
    for o in outcomes {
        let accepted = o.retrieved_id.is_some() && o.descriptor_distance < tau;
        if accepted {
            if o.correct(revisit_radius) {
                c.tp += 1;
            } else {
                c.fp += 1;
            }
        } else if o.has_true_revisit {
            c.fn_ += 1;
        }
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub tau: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    /// Ordered by increasing threshold.
    pub points: Vec<PrPoint>,
    pub auc: f64,
    pub f1_max: f64,
}

/// Trapezoidal area under precision as a function of recall.
pub fn trapezoid_auc(points: &[PrPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].recall - w[0].recall) * (w[1].precision + w[0].precision) / 2.0)
        .sum()
}

/// Sweeps the threshold over every observed distance plus infinity.
pub fn pr_curve(outcomes: &[MatchOutcome], revisit_radius: f64) -> Result<PrCurve> {
    let positives = outcomes.iter().filter(|o| o.has_true_revisit).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let mut retrieved: Vec<&MatchOutcome> = outcomes
        .iter()
        .filter(|o| o.retrieved_id.is_some())
        .collect();
    retrieved.sort_by(|a, b| a.descriptor_distance.total_cmp(&b.descriptor_distance));

    let mut thresholds: Vec<f64> = retrieved.iter().map(|o| o.descriptor_distance).collect();
    thresholds.dedup();
    thresholds.push(f64::INFINITY);

    let mut points = Vec::with_capacity(thresholds.len());
    let (mut tp, mut fp, mut accepted_pos) = (0usize, 0usize, 0usize);
    let mut next = 0;
    for &tau in &thresholds {
        while next < retrieved.len() && retrieved[next].descriptor_distance < tau {
            let o = retrieved[next];
            if o.correct(revisit_radius) {
                tp += 1;
            } else {
                fp += 1;
            }
            if o.has_true_revisit {
                accepted_pos += 1;
            }
            next += 1;
        }
        let c = Counts {
            tp,
            fp,
            fn_: positives - accepted_pos,
        };
        points.push(PrPoint {
            tau,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
        });
    }
    let auc = trapezoid_auc(&points);
    let f1_max = points.iter().map(|p| p.f1).fold(0.0, f64::max);
    Ok(PrCurve {
        points,
        auc,
        f1_max,
    })
}

pub fn recall_at_1(outcomes: &[MatchOutcome], revisit_radius: f64) -> Result<f64> {
    let positives = outcomes.iter().filter(|o| o.has_true_revisit).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let hits = outcomes
        .iter()
        .filter(|o| o.correct(revisit_radius))
        .count();
    Ok(hits as f64 / positives as f64)
}

/// Smallest angle between two headings, in degrees within `[0, 180]`.
pub fn rotation_error(est_deg: f64, gt_deg: f64) -> f64 {
    let d = (est_deg - gt_deg).rem_euclid(360.0);
    d.min(360.0 - d)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApeMode {
    /// Root of the mean squared position error.
    Rmse,
    /// Root of the mean unsquared position error.
    Literal,
}

pub fn ape(est: &[Pose2], gt: &[Pose2], mode: ApeMode) -> Result<f64> {
    if est.len() != gt.len() {
        return Err(Error::LengthMismatch(est.len(), gt.len()));
    }
    if est.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = est
        .iter()
        .zip(gt)
        .map(|(e, g)| {
            let sq = (e.x - g.x).powi(2) + (e.y - g.y).powi(2);
            match mode {
                ApeMode::Rmse => sq,
                ApeMode::Literal => sq.sqrt(),
            }
        })
        .sum();
    Ok((sum / est.len() as f64).sqrt())
}

fn planar_distance(a: &Pose2, b: &Pose2) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}

/// One retrieval row as read from a matches file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchRow {
    pub query_id: u64,
    pub cand_id: Option<u64>,
    pub distance: f64,
}

/// Joins retrieval rows with poses. `exclusion_window` applies when query and
/// database come from the same session.
pub fn build_outcomes(
    matches: &[MatchRow],
    query_poses: &dyn Fn(u64) -> Option<Pose2>,
    db: &[(u64, Pose2)],
    revisit_radius: f64,
    exclusion_window: Option<u64>,
) -> Result<Vec<MatchOutcome>> {
    matches
        .iter()
        .map(|m| {
            let qp = query_poses(m.query_id).ok_or(Error::MissingPose(m.query_id))?;
            let admissible =
                |id: u64| exclusion_window.is_none_or(|w| w == 0 || id.abs_diff(m.query_id) > w);
            let has_true_revisit = db
                .iter()
                .any(|(id, p)| admissible(*id) && planar_distance(&qp, p) <= revisit_radius);
            let metric_distance_m = match m.cand_id {
                Some(c) => {
                    let cp = db
                        .iter()
                        .find(|(id, _)| *id == c)
                        .map(|(_, p)| *p)
                        .ok_or(Error::MissingPose(c))?;
                    Some(planar_distance(&qp, &cp))
                }
                None => None,
            };
            Ok(MatchOutcome {
                query_id: m.query_id,
                retrieved_id: m.cand_id,
                descriptor_distance: m.distance,
                metric_distance_m,
                has_true_revisit,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub auc: f64,
    pub f1_max: f64,
    pub recall_at_1: f64,
    pub mean_re_deg: f64,
    pub ape_rmse_m: f64,
    pub ape_literal_m: f64,
}

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v}")
    }
}

pub fn write_pr_curve(path: &Path, curve: &PrCurve) -> Result<()> {
    let mut out = String::from("tau,precision,recall,f1\n");
    for p in &curve.points {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_f64(p.tau),
            p.precision,
            p.recall,
            p.f1
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_summary(path: &Path, s: &Summary) -> Result<()> {
    let out = format!(
        "auc,f1_max,recall_at_1,mean_re_deg,ape_rmse_m,ape_literal_m\n{},{},{},{},{},{}\n",
        s.auc, s.f1_max, s.recall_at_1, s.mean_re_deg, s.ape_rmse_m, s.ape_literal_m
    );
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn outcome(d: f64, metric: f64, pos: bool) -> MatchOutcome {
        MatchOutcome {
            query_id: 0,
            retrieved_id: Some(1),
            descriptor_distance: d,
            metric_distance_m: Some(metric),
            has_true_revisit: pos,
        }
    }

    #[test]
    fn all_correct_at_zero_distance() {
        let o = vec![outcome(0.0, 1.0, true); 5];
        let c = classify(&o, 1.0, 20.0);
        assert_eq!((c.precision(), c.recall()), (1.0, 1.0));
    }

    #[test]
    fn zero_tau_accepts_nothing() {
        let o = vec![outcome(0.0, 1.0, true); 5];
        let c = classify(&o, 0.0, 20.0);
        assert_eq!((c.tp, c.fp, c.fn_), (0, 0, 5));
        assert_eq!((c.precision(), c.recall()), (1.0, 0.0));
    }

    #[test]
    fn three_one_one() {
        let c = Counts {
            tp: 3,
            fp: 1,
            fn_: 1,
        };
        assert_eq!((c.precision(), c.recall()), (0.75, 0.75));
    }

    #[test]
    fn separable_curve_is_perfect() {
        let mut o: Vec<_> = (0..10).map(|i| outcome(i as f64, 3.0, true)).collect();
        o.extend((0..5).map(|i| outcome(100.0 + i as f64, 80.0, false)));
        let c = pr_curve(&o, 20.0).unwrap();
        assert!((c.auc - 1.0).abs() < 1e-12);
        assert!((c.f1_max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_query_curve() {
        let c = pr_curve(&[outcome(2.0, 1.0, true)], 20.0).unwrap();
        assert!(c
            .points
            .iter()
            .any(|p| p.precision == 1.0 && p.recall == 1.0));
        assert!(pr_curve(&[outcome(2.0, 1.0, false)], 20.0).is_err());
    }

    #[test]
    fn recall_at_one_fractions() {
        let good = outcome(5.0, 1.0, true);
        let bad = outcome(5.0, 50.0, true);
        assert_eq!(recall_at_1(&[good; 4], 20.0).unwrap(), 1.0);
        assert_eq!(recall_at_1(&[bad; 4], 20.0).unwrap(), 0.0);
        let mut mix = vec![good; 7];
        mix.extend([bad; 3]);
        assert!((recall_at_1(&mix, 20.0).unwrap() - 0.7).abs() < 1e-15);
        assert!(matches!(
            recall_at_1(&[outcome(1.0, 1.0, false)], 20.0),
            Err(Error::NoPositives)
        ));
    }

    #[test]
    fn rotation_error_examples() {
        assert_eq!(rotation_error(90.0, 90.0), 0.0);
        assert!((rotation_error(359.0, 1.0) - 2.0).abs() < 1e-12);
        assert_eq!(rotation_error(180.0, 0.0), 180.0);
    }

    #[test]
    fn ape_examples() {
        let gt: Vec<Pose2> = (0..5).map(|i| Pose2::new(i as f64, 0.0, 0.0)).collect();
        assert_eq!(ape(&gt, &gt, ApeMode::Rmse).unwrap(), 0.0);
        assert_eq!(ape(&gt, &gt, ApeMode::Literal).unwrap(), 0.0);
        let off: Vec<Pose2> = gt.iter().map(|p| Pose2::new(p.x, p.y + 2.0, 0.3)).collect();
        assert!((ape(&off, &gt, ApeMode::Rmse).unwrap() - 2.0).abs() < 1e-12);
        assert!((ape(&off, &gt, ApeMode::Literal).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert!(ape(&off[..2], &gt, ApeMode::Rmse).is_err());
    }

    #[test]
    fn counts_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let o: Vec<_> = (0..200)
            .map(|_| {
                outcome(
                    rng.random_range(0.0..10.0),
                    rng.random_range(0.0..40.0),
                    rng.random_bool(0.7),
                )
            })
            .collect();
        let positives = o.iter().filter(|x| x.has_true_revisit).count();
        for tau in [0.0, 2.0, 5.0, 11.0] {
            let c = classify(&o, tau, 20.0);
            let accepted = o.iter().filter(|x| x.descriptor_distance < tau).count();
            assert_eq!(c.tp + c.fp, accepted);
            assert!(c.tp + c.fn_ <= positives);
            assert!((0.0..=1.0).contains(&c.f1()));
        }
    }

    #[test]
    fn outcomes_from_matches() {
        let db = vec![
            (0, Pose2::new(0.0, 0.0, 0.0)),
            (1, Pose2::new(100.0, 0.0, 0.0)),
        ];
        let q = |id: u64| (id == 7).then(|| Pose2::new(5.0, 0.0, 0.0));
        let rows = [MatchRow {
            query_id: 7,
            cand_id: Some(1),
            distance: 3.0,
        }];
        let o = build_outcomes(&rows, &q, &db, 20.0, None).unwrap();
        assert!(o[0].has_true_revisit);
        assert_eq!(o[0].metric_distance_m, Some(95.0));
        let o = build_outcomes(&rows, &q, &db, 20.0, Some(10)).unwrap();
        assert!(!o[0].has_true_revisit);
        let missing = [MatchRow {
            query_id: 8,
            cand_id: None,
            distance: 0.0,
        }];
        assert!(matches!(
            build_outcomes(&missing, &q, &db, 20.0, None),
            Err(Error::MissingPose(8))
        ));
    }
}
