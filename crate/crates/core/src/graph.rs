//! Stable-configuration transition graph: one column of stability-checked
//! configurations per force operation, edges weighted by how many arms must
//! regrasp (0, 1 or 2), and minimum-regrasp extraction via shortest path or
//! a greedy streaming search.

#[allow(unused_imports)] // f64 math comes from num-traits under no_std
use num_traits::Float;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::se3::pose_error;
use crate::stability::{ArmSide, CompositeConfig};

/// Two grasps count as "the same" within these tolerances.
pub const DEFAULT_TOL_POS: f64 = 0.01;
pub const DEFAULT_TOL_ROT: f64 = 0.1;

/// Number of arms whose object-relative grasp differs between `a` and `b`;
/// an arm present on one side only counts as one regrasp.
pub fn regrasp_cost(a: &CompositeConfig, b: &CompositeConfig, tol_pos: f64, tol_rot: f64) -> u8 {
    let mut r = 0;
    for side in [ArmSide::Left, ArmSide::Right] {
        match (a.grasp.side(side), b.grasp.side(side)) {
            (None, None) => {}
            (Some(_), None) | (None, Some(_)) => r += 1,
            (Some(ga), Some(gb)) => {
                let dp = (ga.translation.vector - gb.translation.vector).norm();
                let err = pose_error(ga, gb);
                let drot = (err[3] * err[3] + err[4] * err[4] + err[5] * err[5]).sqrt();
                if dp > tol_pos || drot > tol_rot {
                    r += 1;
                }
            }
        }
    }
    r
}

#[derive(Debug, Clone)]
pub struct StableConfigGraph {
    pub source: CompositeConfig,
    /// One node list per force operation, in operation order.
    pub columns: Vec<Vec<CompositeConfig>>,
    /// `source_edges[j]` = regrasp cost from the source to column 0 node j.
    pub source_edges: Vec<u8>,
    /// `edges[i][j][k]` = cost from column i node j to column i+1 node k.
    pub edges: Vec<Vec<Vec<u8>>>,
    pub tol_pos: f64,
    pub tol_rot: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanError {
    /// No stable configuration exists for the force operation at this index.
    EmptyColumn(usize),
}

impl core::fmt::Display for PlanError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            PlanError::EmptyColumn(i) => {
                write!(f, "no stable configuration for force operation {i}")
            }
        }
    }
}

/// Minimum-regrasp plan: the chosen node per force operation plus the step
/// costs along the path from the initial configuration.
#[derive(Debug, Clone)]
pub struct GraspPlan {
    pub node_indices: Vec<usize>,
    pub sequence: Vec<CompositeConfig>,
    pub step_costs: Vec<u8>,
    pub total_cost: u32,
}

impl GraspPlan {
    /// Count of distinct consecutive configurations (the deduplicated set).
    pub fn distinct_configs(&self, tol_pos: f64, tol_rot: f64) -> usize {
        let mut n = 0;
        for (i, c) in self.sequence.iter().enumerate() {
            if i == 0 || regrasp_cost(&self.sequence[i - 1], c, tol_pos, tol_rot) > 0 {
                n += 1;
            }
        }
        n
    }
}

/// Complete bipartite edges between adjacent columns, weighted by
/// [`regrasp_cost`]. Fails naming the first force operation whose stable
/// set is empty.
pub fn build_graph(
    stable_sets: Vec<Vec<CompositeConfig>>,
    initial: CompositeConfig,
    tol_pos: f64,
    tol_rot: f64,
) -> Result<StableConfigGraph, PlanError> {
    for (i, set) in stable_sets.iter().enumerate() {
        if set.is_empty() {
            return Err(PlanError::EmptyColumn(i));
        }
    }
    let source_edges = stable_sets
        .first()
        .map(|col| col.iter().map(|n| regrasp_cost(&initial, n, tol_pos, tol_rot)).collect())
        .unwrap_or_default();
    let mut edges = Vec::new();
    for w in stable_sets.windows(2) {
        let block: Vec<Vec<u8>> = w[0]
            .iter()
            .map(|from| w[1].iter().map(|to| regrasp_cost(from, to, tol_pos, tol_rot)).collect())
            .collect();
        edges.push(block);
    }
    Ok(StableConfigGraph { source: initial, columns: stable_sets, source_edges, edges, tol_pos, tol_rot })
}

#[derive(Clone)]
struct PathLabel {
    cost: u32,
    omega_sum: f64,
    path: Vec<usize>,
}

impl PathLabel {
    /// Order: lower cost, then higher summed ω, then lexicographic path.
    fn better_than(&self, other: &PathLabel) -> bool {
        match self.cost.cmp(&other.cost) {
            Ordering::Less => return true,
            Ordering::Greater => return false,
            Ordering::Equal => {}
        }
        match other.omega_sum.partial_cmp(&self.omega_sum).unwrap_or(Ordering::Equal) {
            Ordering::Less => return true,
            Ordering::Greater => return false,
            Ordering::Equal => {}
        }
        self.path < other.path
    }
}

fn plan_from_path(graph: &StableConfigGraph, label: PathLabel) -> GraspPlan {
    let mut step_costs = Vec::with_capacity(label.path.len());
    let mut prev: Option<usize> = None;
    for (col, &idx) in label.path.iter().enumerate() {
        let c = match prev {
            None => graph.source_edges[idx],
            Some(p) => graph.edges[col - 1][p][idx],
        };
        step_costs.push(c);
        prev = Some(idx);
    }
    let sequence = label
        .path
        .iter()
        .enumerate()
        .map(|(col, &idx)| graph.columns[col][idx].clone())
        .collect();
    GraspPlan { node_indices: label.path, sequence, step_costs, total_cost: label.cost }
}

/// Exact minimum-cost path over the column DAG (Dijkstra degenerates to a
/// forward sweep here). Deterministic tie-break: higher summed ω, then
/// lexicographically smallest node index sequence.
pub fn shortest_plan(graph: &StableConfigGraph) -> Result<GraspPlan, PlanError> {
    if graph.columns.is_empty() {
        return Ok(GraspPlan {
            node_indices: Vec::new(),
            sequence: Vec::new(),
            step_costs: Vec::new(),
            total_cost: 0,
        });
    }
    let mut labels: Vec<PathLabel> = graph
        .columns[0]
        .iter()
        .enumerate()
        .map(|(j, node)| PathLabel {
            cost: graph.source_edges[j] as u32,
            omega_sum: node.omega,
            path: alloc::vec![j],
        })
        .collect();
    for col in 1..graph.columns.len() {
        let mut next: Vec<Option<PathLabel>> = alloc::vec![None; graph.columns[col].len()];
        for (j, label) in labels.iter().enumerate() {
            for (k, slot) in next.iter_mut().enumerate() {
                let mut cand = label.clone();
                cand.cost += graph.edges[col - 1][j][k] as u32;
                cand.omega_sum += graph.columns[col][k].omega;
                cand.path.push(k);
                if slot.as_ref().map_or(true, |best| cand.better_than(best)) {
                    *slot = Some(cand);
                }
            }
        }
        labels = next.into_iter().map(|l| l.unwrap()).collect();
    }
    let best = labels
        .into_iter()
        .reduce(|a, b| if b.better_than(&a) { b } else { a })
        .expect("nonempty column");
    Ok(plan_from_path(graph, best))
}

/// Streaming baseline: commit to the locally cheapest edge into each column
/// as it is revealed; ties by higher node ω, then lower index.
pub fn greedy_plan(graph: &StableConfigGraph) -> Result<GraspPlan, PlanError> {
    let mut path = Vec::new();
    let mut cost_total: u32 = 0;
    let mut omega_sum = 0.0;
    let mut prev: Option<usize> = None;
    for (col, nodes) in graph.columns.iter().enumerate() {
        let mut best: Option<(u8, usize)> = None;
        for (k, node) in nodes.iter().enumerate() {
            let c = match prev {
                None => graph.source_edges[k],
                Some(p) => graph.edges[col - 1][p][k],
            };
            let better = match best {
                None => true,
                Some((bc, bk)) => {
                    c < bc
                        || (c == bc
                            && (node.omega > nodes[bk].omega
                                || (node.omega == nodes[bk].omega && k < bk)))
                }
            };
            if better {
                best = Some((c, k));
            }
        }
        let (c, k) = best.expect("nonempty column");
        cost_total += c as u32;
        omega_sum += nodes[k].omega;
        path.push(k);
        prev = Some(k);
    }
    Ok(plan_from_path(graph, PathLabel { cost: cost_total, omega_sum, path }))
}
