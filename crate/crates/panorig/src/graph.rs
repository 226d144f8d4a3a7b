//! Ring pose graph construction and nonlinear least-squares optimization
//! with the loop-closure edge, distributing accumulated drift across all
//! cameras.
//!
//! Node poses map camera coordinates into the reference (first camera)
//! frame; edge measurements map camera `from` points into camera `to`
//! points, so a consistent edge satisfies
//! `measurement = x_to^-1 * x_from`.

use crate::error::{Error, Result};
use crate::lie::{exp_map, log_map, Pose, Twist};
use crate::pairwise::{pose_error, SolverConfig};
use nalgebra::{DMatrix, DVector, Matrix6, Rotation3, UnitQuaternion, Vector3, Vector6};
use std::io::{BufRead, Write};
use std::path::Path;

/// One camera in the graph; ids are 1-based and contiguous.
#[derive(Debug, Clone)]
pub struct PoseNode {
    pub id: usize,
    pub pose: Pose,
}

/// A measured relative pose with its information (inverse covariance) matrix.
#[derive(Debug, Clone)]
pub struct PoseEdge {
    pub from: usize,
    pub to: usize,
    pub measurement: Pose,
    pub information: Matrix6<f64>,
}

impl PoseEdge {
    pub fn new(from: usize, to: usize, measurement: Pose, info_scale: f64) -> Self {
        Self { from, to, measurement, information: Matrix6::identity() * info_scale }
    }
}

#[derive(Debug, Clone)]
pub struct PoseGraph {
    pub nodes: Vec<PoseNode>,
    pub edges: Vec<PoseEdge>,
    /// Id of the gauge-fixed node; its pose never changes.
    pub fixed: usize,
}

impl PoseGraph {
    pub fn node(&self, id: usize) -> &PoseNode {
        &self.nodes[id - 1]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Builds the initial graph by chaining the ring measurements from node 1.
///
/// Requires the chain edges `(1,2) ... (N-1,N)` and the closure edge `(N,1)`;
/// the closure edge is kept in the edge set but not used for initialization.
pub fn chain_initialize(pairwise: &[PoseEdge], n: usize) -> Result<PoseGraph> {
    let find = |from: usize, to: usize| {
        pairwise
            .iter()
            .find(|e| e.from == from && e.to == to)
            .ok_or(Error::MissingEdge(from, to))
    };
    find(n, 1)?;
    let mut nodes = vec![PoseNode { id: 1, pose: Pose::identity() }];
    for j in 2..=n {
        let edge = find(j - 1, j)?;
        // measurement = x_j^-1 * x_{j-1}  =>  x_j = x_{j-1} * measurement^-1
        let pose = nodes[j - 2].pose.compose(&edge.measurement.inverse());
        nodes.push(PoseNode { id: j, pose });
    }
    Ok(PoseGraph { nodes, edges: pairwise.to_vec(), fixed: 1 })
}

/// Residual of the predicted relative pose against the measurement:
/// `log(measurement^-1 * (x_to^-1 * x_from))`.
pub fn edge_residual(edge: &PoseEdge, x_from: &Pose, x_to: &Pose) -> Result<Vector6<f64>> {
    let predicted = x_to.inverse().compose(x_from);
    let err = edge.measurement.inverse().compose(&predicted);
    Ok(log_map(&err)?.as_vector())
}

fn graph_objective(g: &PoseGraph) -> Result<f64> {
    let mut total = 0.0;
    for e in &g.edges {
        let r = edge_residual(e, &g.node(e.from).pose, &g.node(e.to).pose)?;
        total += (r.transpose() * e.information * r)[0];
    }
    Ok(total)
}

/// Central-difference Jacobian of an edge residual with respect to a left
/// perturbation of one endpoint.
fn numeric_edge_jacobian(
    edge: &PoseEdge,
    x_from: &Pose,
    x_to: &Pose,
    perturb_from: bool,
) -> Result<Matrix6<f64>> {
    let h = 1e-7;
    let mut j = Matrix6::zeros();
    for k in 0..6 {
        let mut d = Vector6::zeros();
        d[k] = h;
        let plus = exp_map(&Twist::from_vector(&d));
        let minus = exp_map(&Twist::from_vector(&(-d)));
        let (rp, rm) = if perturb_from {
            (
                edge_residual(edge, &plus.compose(x_from), x_to)?,
                edge_residual(edge, &minus.compose(x_from), x_to)?,
            )
        } else {
            (
                edge_residual(edge, x_from, &plus.compose(x_to))?,
                edge_residual(edge, x_from, &minus.compose(x_to))?,
            )
        };
        j.set_column(k, &((rp - rm) / (2.0 * h)));
    }
    Ok(j)
}

/// Gauss-Newton over the weighted edge residuals with the fixed node pinned.
///
/// Left-perturbation state updates `x_i <- exp(delta_i) * x_i`; steps that
/// would increase the objective are halved; the fixed node is returned
/// bit-identical. When the iteration budget runs out the best graph seen so
/// far is returned.
pub fn optimize(g: &PoseGraph, cfg: &SolverConfig) -> Result<PoseGraph> {
    let n = g.len();
    for e in &g.edges {
        if e.from == 0 || e.from > n || e.to == 0 || e.to > n {
            return Err(Error::MissingEdge(e.from, e.to));
        }
    }
    // column offset per node id, fixed node excluded
    let offsets: Vec<Option<usize>> = {
        let mut next = 0;
        (1..=n)
            .map(|id| {
                if id == g.fixed {
                    None
                } else {
                    let o = next;
                    next += 6;
                    Some(o)
                }
            })
            .collect()
    };
    let dim = 6 * (n - 1);
    let mut graph = g.clone();
    let mut cost = graph_objective(&graph)?;

    for _ in 0..cfg.max_iterations {
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let mut b = DVector::<f64>::zeros(dim);
        for e in &graph.edges {
            let x_from = graph.node(e.from).pose;
            let x_to = graph.node(e.to).pose;
            let r = edge_residual(e, &x_from, &x_to)?;
            let blocks = [
                (offsets[e.from - 1], numeric_edge_jacobian(e, &x_from, &x_to, true)?),
                (offsets[e.to - 1], numeric_edge_jacobian(e, &x_from, &x_to, false)?),
            ];
            for (oi, ji) in &blocks {
                let Some(oi) = oi else { continue };
                let grad = ji.transpose() * e.information * r;
                for k in 0..6 {
                    b[oi + k] += grad[k];
                }
                for (oj, jj) in &blocks {
                    let Some(oj) = oj else { continue };
                    let block = ji.transpose() * e.information * jj;
                    for (a, row) in (0..6).enumerate() {
                        for (c, col) in (0..6).enumerate() {
                            h[(oi + row, oj + col)] += block[(a, c)];
                        }
                    }
                }
            }
        }
        let chol = h.clone().cholesky().ok_or(Error::SingularSystem)?;
        let full_step = chol.solve(&(-&b));
        if full_step.norm() < cfg.convergence_eps {
            return Ok(graph);
        }
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let mut candidate = graph.clone();
            for node in candidate.nodes.iter_mut() {
                let Some(o) = offsets[node.id - 1] else { continue };
                let delta: Vector6<f64> =
                    Vector6::from_iterator(full_step.rows(o, 6).iter().map(|v| v * scale));
                node.pose = exp_map(&Twist::from_vector(&delta)).compose(&node.pose);
            }
            let candidate_cost = graph_objective(&candidate)?;
            if candidate_cost <= cost {
                graph = candidate;
                cost = candidate_cost;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted || full_step.norm() * scale < cfg.convergence_eps {
            return Ok(graph);
        }
    }
    Ok(graph)
}

/// Rotation/translation mismatch of the loop-closure edge: the measured
/// `T_{N,1}` compared against the relative pose predicted by the node
/// estimates.
pub fn closure_residual(g: &PoseGraph) -> Result<(f64, f64)> {
    let n = g.len();
    let edge = g
        .edges
        .iter()
        .find(|e| e.from == n && e.to == 1)
        .ok_or(Error::MissingEdge(n, 1))?;
    let predicted = g.node(1).pose.inverse().compose(&g.node(n).pose);
    Ok(pose_error(&edge.measurement, &predicted))
}

fn pose_to_quat_line(pose: &Pose) -> String {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(pose.rotation));
    let t = pose.translation;
    format!(
        "{:?} {:?} {:?} {:?} {:?} {:?} {:?}",
        t.x, t.y, t.z, q.i, q.j, q.k, q.w
    )
}

fn pose_from_parts(parts: &[f64]) -> Pose {
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
        parts[6], parts[3], parts[4], parts[5],
    ));
    Pose::new(
        q.to_rotation_matrix().into_inner(),
        Vector3::new(parts[0], parts[1], parts[2]),
    )
}

/// Writes the graph text format: `NODE id tx ty tz qx qy qz qw` and
/// `EDGE i j tx ty tz qx qy qz qw info_scale` (Hamilton quaternions, w last;
/// `info_scale` expands to `info_scale * I6`).
pub fn write_graph<W: Write>(mut w: W, g: &PoseGraph) -> Result<()> {
    for node in &g.nodes {
        writeln!(w, "NODE {} {}", node.id, pose_to_quat_line(&node.pose))?;
    }
    for e in &g.edges {
        // information matrices written by this crate are isotropic
        let scale = e.information[(0, 0)];
        writeln!(w, "EDGE {} {} {} {:?}", e.from, e.to, pose_to_quat_line(&e.measurement), scale)?;
    }
    Ok(())
}

/// Writes only the node records (used for pose and ground-truth files).
pub fn write_nodes<W: Write>(mut w: W, poses: &[Pose]) -> Result<()> {
    for (i, pose) in poses.iter().enumerate() {
        writeln!(w, "NODE {} {}", i + 1, pose_to_quat_line(pose))?;
    }
    Ok(())
}

/// Parses a graph file; files holding only NODE records yield a graph with
/// no edges.
pub fn read_graph<R: BufRead>(r: R, path: &Path) -> Result<PoseGraph> {
    let bad = |line: usize, reason: &str| Error::Parse {
        path: path.display().to_string(),
        reason: format!("line {}: {}", line + 1, reason),
    };
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.first() {
            None => continue,
            Some(&"NODE") => {
                if tokens.len() != 9 {
                    return Err(bad(i, "NODE expects 8 fields"));
                }
                let id: usize = tokens[1].parse().map_err(|_| bad(i, "bad node id"))?;
                let parts: Vec<f64> = tokens[2..]
                    .iter()
                    .map(|t| t.parse::<f64>().map_err(|_| bad(i, "bad number")))
                    .collect::<Result<_>>()?;
                nodes.push(PoseNode { id, pose: pose_from_parts(&parts) });
            }
            Some(&"EDGE") => {
                if tokens.len() != 11 {
                    return Err(bad(i, "EDGE expects 10 fields"));
                }
                let from: usize = tokens[1].parse().map_err(|_| bad(i, "bad edge id"))?;
                let to: usize = tokens[2].parse().map_err(|_| bad(i, "bad edge id"))?;
                let parts: Vec<f64> = tokens[3..]
                    .iter()
                    .map(|t| t.parse::<f64>().map_err(|_| bad(i, "bad number")))
                    .collect::<Result<_>>()?;
                edges.push(PoseEdge::new(from, to, pose_from_parts(&parts[..7]), parts[7]));
            }
            Some(other) => return Err(bad(i, &format!("unknown record '{other}'"))),
        }
    }
    nodes.sort_by_key(|n| n.id);
    Ok(PoseGraph { nodes, edges, fixed: 1 })
}

/// Mean per-node (rotation deg, translation cm) error against reference
/// poses, ignoring the global gauge by aligning the first node.
pub fn mean_node_error(g: &PoseGraph, truth: &[Pose]) -> (f64, f64) {
    // express both sets relative to their first node
    let gauge_est = g.node(1).pose.inverse();
    let gauge_truth = truth[0].inverse();
    let mut rot_sum = 0.0;
    let mut trans_sum = 0.0;
    for (node, t) in g.nodes.iter().zip(truth) {
        let est = gauge_est.compose(&node.pose);
        let tru = gauge_truth.compose(t);
        let (r, tcm) = pose_error(&est, &tru);
        rot_sum += r;
        trans_sum += tcm;
    }
    let n = g.len() as f64;
    (rot_sum / n, trans_sum / n)
}
