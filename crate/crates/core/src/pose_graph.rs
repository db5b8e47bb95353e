//! SE(2) pose graph with odometry, loop and prior factors, optimized by
//! Levenberg–Marquardt on dense normal equations.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Pose2};

type Jac = SMatrix<f64, 3, 3>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorKind {
    Prior,
    Odometry,
    Loop,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Factor {
    pub kind: FactorKind,
    pub from: usize,
    /// Equal to `from` for priors.
    pub to: usize,
    pub measurement: Pose2,
    pub information: Matrix3<f64>,
}

/// A verified loop between two nodes of the trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopClosure {
    pub query_index: usize,
    pub cand_index: usize,
    pub query_id: u64,
    pub cand_id: u64,
    pub descriptor_distance: f64,
    pub heading_deg: f64,
    /// Pose of the candidate in the query frame.
    pub relative: Pose2,
    pub fitness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseGraphConfig {
    /// Diagonal information (1/m², 1/m², 1/rad²) of odometry factors.
    pub odometry_information: [f64; 3],
    pub loop_information: [f64; 3],
    pub prior_information: [f64; 3],
    pub max_iterations: usize,
    pub initial_lambda: f64,
    /// Stop once an accepted step improves the cost by less than this fraction.
    pub relative_tolerance: f64,
}

impl Default for PoseGraphConfig {
    fn default() -> Self {
        PoseGraphConfig {
            odometry_information: [50.0, 50.0, 100.0],
            loop_information: [20.0, 20.0, 50.0],
            prior_information: [1e6, 1e6, 1e6],
            max_iterations: 100,
            initial_lambda: 1e-4,
            relative_tolerance: 1e-9,
        }
    }
}

fn diag(v: [f64; 3]) -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::from(v))
}

fn check_spd(m: &Matrix3<f64>) -> Result<()> {
    if (m - m.transpose()).abs().max() > 1e-9 * m.abs().max().max(1.0) {
        return Err(Error::NotSpd);
    }
    m.cholesky().map(|_| ()).ok_or(Error::NotSpd)
}

impl PoseGraphConfig {
    pub fn validate(&self) -> Result<()> {
        for info in [
            self.odometry_information,
            self.loop_information,
            self.prior_information,
        ] {
            check_spd(&diag(info))?;
        }
        if self.max_iterations == 0
            || !(self.initial_lambda > 0.0)
            || !(self.relative_tolerance > 0.0)
        {
            return Err(Error::Config(
                "pose_graph iterations, lambda and tolerance must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FactorGraph {
    pub nodes: usize,
    pub factors: Vec<Factor>,
}

impl FactorGraph {
    pub fn new(nodes: usize) -> Self {
        FactorGraph {
            nodes,
            factors: Vec::new(),
        }
    }

    pub fn add(&mut self, factor: Factor) -> Result<()> {
        for index in [factor.from, factor.to] {
            if index >= self.nodes {
                return Err(Error::IndexOutOfRange {
                    index,
                    nodes: self.nodes,
                });
            }
        }
        if factor.kind != FactorKind::Prior && factor.from == factor.to {
            return Err(Error::Malformed(
                "binary factor connects a node to itself".into(),
            ));
        }
        check_spd(&factor.information)?;
        self.factors.push(factor);
        Ok(())
    }

    pub fn count(&self, kind: FactorKind) -> usize {
        self.factors.iter().filter(|f| f.kind == kind).count()
    }

    /// Every node must be reachable from a node carrying a prior.
    pub fn check_connected(&self) -> Result<()> {
        let mut parent: Vec<usize> = (0..self.nodes).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for f in &self.factors {
            let (a, b) = (find(&mut parent, f.from), find(&mut parent, f.to));
            parent[a] = b;
        }
        let mut anchored = vec![false; self.nodes];
        for f in self.factors.iter().filter(|f| f.kind == FactorKind::Prior) {
            let root = find(&mut parent, f.from);
            anchored[root] = true;
        }
        for i in 0..self.nodes {
            let root = find(&mut parent, i);
            if !anchored[root] {
                return Err(Error::DisconnectedGraph(i));
            }
        }
        Ok(())
    }
}

/// Pose of `b` in the frame of `a`.
pub fn relative_pose(a: &Pose2, b: &Pose2) -> Pose2 {
    a.between(b)
}

/// Prior on node 0, one odometry factor per consecutive pair and one loop
/// factor per closure.
pub fn build_graph(
    odom: &[Pose2],
    loops: &[LoopClosure],
    cfg: &PoseGraphConfig,
) -> Result<FactorGraph> {
    if odom.len() < 2 {
        return Err(Error::Malformed(
            "a pose graph needs at least two poses".into(),
        ));
    }
    let mut g = FactorGraph::new(odom.len());
    g.add(Factor {
        kind: FactorKind::Prior,
        from: 0,
        to: 0,
        measurement: odom[0],
        information: diag(cfg.prior_information),
    })?;
    let odo_info = diag(cfg.odometry_information);
    for (t, pair) in odom.windows(2).enumerate() {
        g.add(Factor {
            kind: FactorKind::Odometry,
            from: t,
            to: t + 1,
            measurement: relative_pose(&pair[0], &pair[1]),
            information: odo_info,
        })?;
    }
    let loop_info = diag(cfg.loop_information);
    for l in loops {
        g.add(Factor {
            kind: FactorKind::Loop,
            from: l.query_index,
            to: l.cand_index,
            measurement: l.relative,
            information: loop_info,
        })?;
    }
    Ok(g)
}

/// Residual `measurement ⊖ prediction` as (x, y, yaw).
fn residual_of(measurement: &Pose2, predicted: &Pose2) -> Vector3<f64> {
    let r = measurement.between(predicted);
    Vector3::new(r.x, r.y, normalize_angle(predicted.yaw - measurement.yaw))
}

pub fn factor_residual(f: &Factor, poses: &[Pose2]) -> Vector3<f64> {
    match f.kind {
        FactorKind::Prior => residual_of(&f.measurement, &poses[f.from]),
        _ => residual_of(&f.measurement, &relative_pose(&poses[f.from], &poses[f.to])),
    }
}

/// Residual and Jacobians with respect to the `from` and `to` nodes.
fn linearize(f: &Factor, poses: &[Pose2]) -> (Vector3<f64>, Jac, Jac) {
    let (sz, cz) = f.measurement.yaw.sin_cos();
    let rz_t = nalgebra::Matrix2::new(cz, sz, -sz, cz);
    let res = factor_residual(f, poses);
    let xi = poses[f.from];
    if f.kind == FactorKind::Prior {
        let mut j = Jac::zeros();
        j.fixed_view_mut::<2, 2>(0, 0).copy_from(&rz_t);
        j[(2, 2)] = 1.0;
        return (res, j, Jac::zeros());
    }
    let xj = poses[f.to];
    let (si, ci) = xi.yaw.sin_cos();
    let ri_t = nalgebra::Matrix2::new(ci, si, -si, ci);
    let dri_t = nalgebra::Matrix2::new(-si, ci, -ci, -si);
    let dt = nalgebra::Vector2::new(xj.x - xi.x, xj.y - xi.y);

    let mut ja = Jac::zeros();
    let mut jb = Jac::zeros();
    ja.fixed_view_mut::<2, 2>(0, 0).copy_from(&(-(rz_t * ri_t)));
    ja.fixed_view_mut::<2, 1>(0, 2)
        .copy_from(&(rz_t * dri_t * dt));
    ja[(2, 2)] = -1.0;
    jb.fixed_view_mut::<2, 2>(0, 0).copy_from(&(rz_t * ri_t));
    jb[(2, 2)] = 1.0;
    (res, ja, jb)
}

/// `Σ rᵀ Ω r` over all factors.
pub fn total_cost(graph: &FactorGraph, poses: &[Pose2]) -> f64 {
    graph
        .factors
        .iter()
        .map(|f| {
            let r = factor_residual(f, poses);
            (r.transpose() * f.information * r)[(0, 0)]
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Accepted steps.
    pub iterations: usize,
    pub converged: bool,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

fn assemble(graph: &FactorGraph, poses: &[Pose2]) -> (DMatrix<f64>, DVector<f64>) {
    let n = graph.nodes * 3;
    let mut h = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);
    for f in &graph.factors {
        let (r, ja, jb) = linearize(f, poses);
        let w = f.information;
        let blocks: &[(usize, Jac)] = if f.kind == FactorKind::Prior {
            &[(f.from, ja)]
        } else {
            &[(f.from, ja), (f.to, jb)]
        };
        for &(a, ref jac_a) in blocks {
            let gt = jac_a.transpose() * w * r;
            let mut seg = g.fixed_rows_mut::<3>(a * 3);
            seg += gt;
            for &(b, ref jac_b) in blocks {
                let hb = jac_a.transpose() * w * jac_b;
                let mut view = h.fixed_view_mut::<3, 3>(a * 3, b * 3);
                view += hb;
            }
        }
    }
    (h, g)
}

fn apply_step(poses: &[Pose2], delta: &DVector<f64>) -> Vec<Pose2> {
    poses
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Pose2::new(
                p.x + delta[3 * i],
                p.y + delta[3 * i + 1],
                p.yaw + delta[3 * i + 2],
            )
        })
        .collect()
}

pub fn optimize(
    graph: &FactorGraph,
    initial: &[Pose2],
    cfg: &PoseGraphConfig,
) -> Result<(Vec<Pose2>, OptimizeReport)> {
    if initial.len() != graph.nodes {
        return Err(Error::LengthMismatch(graph.nodes, initial.len()));
    }
    graph.check_connected()?;

    let mut poses = initial.to_vec();
    let mut cost = total_cost(graph, &poses);
    let mut report = OptimizeReport {
        initial_cost: cost,
        final_cost: cost,
        iterations: 0,
        converged: false,
        cost_history: vec![cost],
    };
    let mut lambda = cfg.initial_lambda;

    while report.iterations < cfg.max_iterations {
        if cost == 0.0 {
            report.converged = true;
            break;
        }
        let (h, g) = assemble(graph, &poses);
        let mut accepted = false;
        let mut solvable = false;
        while lambda < 1e12 {
            let mut damped = h.clone();
            for k in 0..damped.nrows() {
                damped[(k, k)] += lambda * h[(k, k)].max(1e-9);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            solvable = true;
            let delta = chol.solve(&(-&g));
            let candidate = apply_step(&poses, &delta);
            let new_cost = total_cost(graph, &candidate);
            if new_cost < cost {
                let improvement = (cost - new_cost) / cost;
                poses = candidate;
                cost = new_cost;
                lambda = (lambda / 10.0).max(1e-12);
                report.iterations += 1;
                report.cost_history.push(cost);
                accepted = true;
                if improvement < cfg.relative_tolerance {
                    report.converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !solvable {
            return Err(Error::SingularSystem);
        }
        if !accepted {
            // no damped step lowers the cost any further
            report.converged = true;
            break;
        }
        if report.converged {
            break;
        }
    }
    report.final_cost = cost;
    Ok((poses, report))
}
