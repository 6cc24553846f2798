//! Task scenarios, planner variants and the end-to-end pipeline.
//!
//! A [`Scenario`] is a board-shaped workpiece held over the table while a
//! sequence of external force operations (cutting along a contour, drilling
//! at points) is applied to it. The harness generates candidate grasps on
//! the board edges, enumerates stable configurations per operation, plans a
//! regrasp sequence with one of four planners, fills in unimanual
//! intermediates for dual-regrasp transitions, synthesizes reference paths
//! and executes them with the velocity controller, reporting [`RunMetrics`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{UnitQuaternion, Vector3, Vector6};
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arm::{forward_kinematics, solve_ik, IkParams, JointVec};
use crate::control::{
    execute_path, DualArmState, ExecutionOutcome, ExecutionPlan, ObstacleSet, PlannerGains,
    SegmentPlan,
};
use crate::graph::{
    build_graph, greedy_plan, regrasp_cost, shortest_plan, GraspPlan, PlanError,
    StableConfigGraph, DEFAULT_TOL_POS, DEFAULT_TOL_ROT,
};
use crate::imitation::{
    attach_start, fit_promp, incremental_deltas, mean_and_variance, retarget, synthetic_demos,
    ReferencePath,
};
use crate::perf_map::{rank_grasp_candidates, GraspRegion, PerformanceMap};
use crate::sampler::{
    mtc_select, project_to_manifold, regrasping_side, sample_stable_intersection,
    IntermediateCandidate, ResampleParams, SamplerContext,
};
use crate::se3::{canonical_dq, dq_from_pose, dq_to_pose, pose_from_parts, sclerp, Pose, Wrench};
use crate::stability::{
    check_stability, enumerate_stable_configs, ArmSide, CompositeConfig, ForceVector, GraspConfig,
    ScoredGrasp, Workcell, WrenchBox,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Cutting,
    Drilling,
    Combined,
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Cutting => "cutting",
            TaskKind::Drilling => "drilling",
            TaskKind::Combined => "combined",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlannerKind {
    /// Map-ranked candidates, exact minimum-regrasp search, MTC-consolidated
    /// intermediates, imitation-learned reference paths.
    Ours,
    /// Exact minimum-regrasp search over unranked candidates, one sampled
    /// intermediate per dual regrasp, straight-line references.
    MinimalRegrasp,
    /// Uniform random stable configuration per operation.
    RandomSampling,
    /// Locally cheapest edge per operation, committed in order.
    Greedy,
}

pub const ALL_PLANNERS: [PlannerKind; 4] = [
    PlannerKind::Ours,
    PlannerKind::MinimalRegrasp,
    PlannerKind::RandomSampling,
    PlannerKind::Greedy,
];

impl PlannerKind {
    pub fn name(&self) -> &'static str {
        match self {
            PlannerKind::Ours => "ours",
            PlannerKind::MinimalRegrasp => "minimal_regrasp",
            PlannerKind::RandomSampling => "random_sampling",
            PlannerKind::Greedy => "greedy",
        }
    }

    fn salt(&self) -> u64 {
        match self {
            PlannerKind::Ours => 0x6f75_7273,
            PlannerKind::MinimalRegrasp => 0x6d69_6e72,
            PlannerKind::RandomSampling => 0x726e_6473,
            PlannerKind::Greedy => 0x6772_6479,
        }
    }
}

/// A task instance: a rectangular board held in the workspace plus the
/// ordered force operations applied to it. Obstacles are empty by default.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub kind: TaskKind,
    /// Board extents along x and y (m); the board is centred on its frame.
    pub board_size: [f64; 2],
    pub board_mass: f64,
    pub board_pose: Pose,
    pub forces: Vec<ForceVector>,
    pub obstacles: ObstacleSet,
    pub seed: u64,
}

/// Gripper approach from above: EE z-axis pointing down.
pub fn downward_grasp_orientation() -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::x_axis(), core::f64::consts::PI)
}

/// Graspable edge of one side: a segment running along x at y = ±half_y,
/// in the object frame, approached from above. `margin` shrinks the ends.
pub fn side_region(board_size: &[f64; 2], side: ArmSide, margin: f64) -> GraspRegion {
    let half_x = (board_size[0] / 2.0 - margin).max(0.0);
    let y = match side {
        ArmSide::Left => board_size[1] / 2.0,
        ArmSide::Right => -board_size[1] / 2.0,
    };
    let rot = downward_grasp_orientation();
    GraspRegion {
        segments: alloc::vec![(
            pose_from_parts(Vector3::new(-half_x, y, 0.0), rot),
            pose_from_parts(Vector3::new(half_x, y, 0.0), rot),
        )],
        approach_direction: alloc::vec![Vector3::new(0.0, 0.0, 1.0)],
    }
}

/// Both graspable edges (object frame), used for intermediate sampling.
pub fn full_region(board_size: &[f64; 2], margin: f64) -> GraspRegion {
    let left = side_region(board_size, ArmSide::Left, margin);
    let right = side_region(board_size, ArmSide::Right, margin);
    GraspRegion {
        segments: alloc::vec![left.segments[0], right.segments[0]],
        approach_direction: alloc::vec![
            left.approach_direction[0],
            right.approach_direction[0],
        ],
    }
}

const BOARD_SIZE: [f64; 2] = [0.6, 0.4];
const BOARD_MASS: f64 = 2.0;
const REGION_MARGIN: f64 = 0.14;
/// Force application points stay inside this fraction of the half-extents.
const APPLICATION_MARGIN: f64 = 0.55;

/// Gripper wrench capability used by the default station: generous force
/// and roll/yaw torque, tight pitch torque (about the board length) so
/// grasps must stay near the loaded cross-section and only near-centre edge
/// grasps can hold the board alone.
pub fn default_gripper_box() -> WrenchBox {
    let mut b = WrenchBox::symmetric(60.0, 4.5);
    // Edge pinch can lift but not press the board down. The gripper hangs
    // z-down, so supporting the board is a negative z force in its frame.
    b.lower[2] = -20.05;
    b.upper[2] = 0.0;
    b.lower[4] = -0.3;
    b.upper[4] = 0.3;
    b
}

fn board_point(rng: &mut ChaCha8Rng, size: &[f64; 2]) -> Vector3<f64> {
    let hx = size[0] / 2.0 * APPLICATION_MARGIN;
    let hy = size[1] / 2.0 * APPLICATION_MARGIN;
    Vector3::new(rng.gen_range(-hx..hx), rng.gen_range(-hy..hy), 0.0)
}

fn force_at(board_pose: &Pose, point: Vector3<f64>, force: Vector3<f64>) -> ForceVector {
    ForceVector {
        wrench: Wrench::new(force, Vector3::zeros()),
        application_pose: board_pose * pose_from_parts(point, UnitQuaternion::identity()),
    }
}

/// Discretize a triangle contour into tangential cutting forces.
fn cutting_forces(
    rng: &mut ChaCha8Rng,
    board_pose: &Pose,
    size: &[f64; 2],
    samples: usize,
) -> Vec<ForceVector> {
    let verts = [
        board_point(rng, size),
        board_point(rng, size),
        board_point(rng, size),
    ];
    let mut out = Vec::with_capacity(samples);
    for i in 0..samples {
        let t = i as f64 / samples as f64 * 3.0;
        let edge = (t.floor() as usize).min(2);
        let s = t - edge as f64;
        let a = verts[edge];
        let b = verts[(edge + 1) % 3];
        let point = a + (b - a) * s;
        let dir = b - a;
        let tangent = if dir.norm() > 1e-9 { dir.normalize() } else { Vector3::x() };
        let mag = rng.gen_range(30.0..60.0);
        // The blade feeds along the contour while pressing into the board;
        // a quarter of the force magnitude goes into the press.
        let press = 0.33;
        let dir = tangent * (1.0 - press * press).sqrt() - Vector3::z() * press;
        out.push(force_at(board_pose, point, dir * mag));
    }
    out
}

/// Random drill points loaded straight down into the board.
fn drilling_forces(
    rng: &mut ChaCha8Rng,
    board_pose: &Pose,
    size: &[f64; 2],
    count: usize,
) -> Vec<ForceVector> {
    (0..count)
        .map(|_| {
            let point = board_point(rng, size);
            let mag = rng.gen_range(15.0..20.0);
            force_at(board_pose, point, Vector3::new(0.0, 0.0, -mag))
        })
        .collect()
}

/// Build a reproducible task instance of the given kind.
pub fn make_task(kind: TaskKind, seed: u64) -> Scenario {
    let board_pose = Pose::translation(0.4, 0.0, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (kind as u64).wrapping_mul(0x9e37_79b9));
    let forces = match kind {
        TaskKind::Cutting => cutting_forces(&mut rng, &board_pose, &BOARD_SIZE, 12),
        TaskKind::Drilling => drilling_forces(&mut rng, &board_pose, &BOARD_SIZE, 5),
        TaskKind::Combined => {
            let mut f = cutting_forces(&mut rng, &board_pose, &BOARD_SIZE, 3);
            f.extend(drilling_forces(&mut rng, &board_pose, &BOARD_SIZE, 2));
            f
        }
    };
    Scenario {
        kind,
        board_size: BOARD_SIZE,
        board_mass: BOARD_MASS,
        board_pose,
        forces,
        obstacles: ObstacleSet::empty(),
        seed,
    }
}

/// Station and planner parameters shared by all planner variants.
#[derive(Debug, Clone)]
pub struct HarnessConfig {
    /// Arm base separation along y (m).
    pub separation: f64,
    /// Uniform joint-torque limit override (N·m); the gripper wrench box is
    /// the intended binding constraint for stability.
    pub torque_limit: f64,
    pub gripper_box: WrenchBox,
    /// Prebuilt motion performance maps (left, right); when absent, grasp
    /// ranking falls back to live per-candidate evaluation.
    pub maps: Option<[PerformanceMap; 2]>,
    pub candidates_per_side: usize,
    pub candidate_spacing: f64,
    pub max_per_force: usize,
    pub gains: PlannerGains,
    pub resample: ResampleParams,
    pub demo_count: usize,
    pub demo_samples: usize,
    pub demo_noise: f64,
    /// Blend fraction used when attaching imitation paths to the current pose.
    pub blend_fraction: f64,
    pub tol_pos: f64,
    pub tol_rot: f64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            separation: 0.8,
            torque_limit: 1e3,
            gripper_box: default_gripper_box(),
            maps: None,
            candidates_per_side: 7,
            candidate_spacing: 0.05,
            max_per_force: 8,
            gains: PlannerGains::default(),
            resample: ResampleParams::default(),
            demo_count: 4,
            demo_samples: 60,
            demo_noise: 0.003,
            blend_fraction: 0.25,
            tol_pos: DEFAULT_TOL_POS,
            tol_rot: DEFAULT_TOL_ROT,
        }
    }
}

impl HarnessConfig {
    pub fn workcell(&self) -> Workcell {
        let mut arm = crate::arm::ArmModel::franka();
        arm.torque_limit = JointVec::from_element(self.torque_limit);
        let mut cell = Workcell::pair(&arm, self.separation);
        cell.left_box = self.gripper_box;
        cell.right_box = self.gripper_box;
        cell
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HarnessError {
    PlanInfeasible(String),
    ExecutionAborted(String),
}

impl core::fmt::Display for HarnessError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            HarnessError::PlanInfeasible(m) => write!(f, "plan infeasible: {m}"),
            HarnessError::ExecutionAborted(m) => write!(f, "execution aborted: {m}"),
        }
    }
}

impl From<PlanError> for HarnessError {
    fn from(e: PlanError) -> Self {
        HarnessError::PlanInfeasible(format!("{e}"))
    }
}

/// Per-run summary, comparable across planners.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub planner: PlannerKind,
    /// Total regrasp cost of the chosen plan.
    pub regrasp_count: u32,
    /// Distinct sampled unimanual intermediate configurations.
    pub intermediate_count: usize,
    pub segment_count: usize,
    pub steps: usize,
    pub sim_time: f64,
    pub ee_path_length: [f64; 2],
    pub min_sigma: f64,
    pub min_limit_distance: f64,
    pub min_clearance: f64,
    pub flagged_steps: usize,
    pub aborted: bool,
}

/// Everything produced before execution: the regrasp plan, the sampled
/// intermediates and the assembled reference-path schedule.
#[derive(Debug, Clone)]
pub struct PlanArtifacts {
    pub planner: PlannerKind,
    pub initial: CompositeConfig,
    pub plan: GraspPlan,
    pub intermediates: Vec<IntermediateCandidate>,
    pub execution: ExecutionPlan,
}


/// Motion performance maps for both arms covering the station's grasp band:
/// a downward-approach voxel slab around the board edges. The resolution is
/// coarse enough to build in seconds yet distinguishes grasps along an edge.
pub fn build_station_maps(cfg: &HarnessConfig, scenario: &Scenario) -> [PerformanceMap; 2] {
    use crate::perf_map::{build_map, Aabb, MapParams};
    let cell = cfg.workcell();
    let region = full_region(&scenario.board_size, REGION_MARGIN);
    let mut min = Vector3::from_element(f64::INFINITY);
    let mut max = Vector3::from_element(f64::NEG_INFINITY);
    for (a, b) in &region.segments {
        for p in [scenario.board_pose * a, scenario.board_pose * b] {
            min = min.inf(&p.translation.vector);
            max = max.sup(&p.translation.vector);
        }
    }
    let pad = Vector3::from_element(0.06);
    let bounds = Aabb { min: min - pad, max: max + pad };
    let params = MapParams::default();
    let build = |model: &crate::arm::ArmModel| {
        build_map(
            model,
            bounds.clone(),
            0.04,
            alloc::vec![Vector3::new(0.0, 0.0, -1.0)],
            alloc::vec![0.0],
            &params,
        )
    };
    [build(&cell.left), build(&cell.right)]
}

/// World-frame grasp candidates for one arm: a fixed grid of poses evenly
/// spread along the edge, shared by every planner so plans differ only by
/// search strategy. With `ranked`, each pose is scored through the motion
/// performance map (or live evaluation) for ω-aware tie-breaking; otherwise
/// ω stays zero.
fn candidates_for_side(
    cfg: &HarnessConfig,
    scenario: &Scenario,
    side: ArmSide,
    ranked: bool,
) -> Vec<ScoredGrasp> {
    let region = side_region(&scenario.board_size, side, REGION_MARGIN);
    let world = GraspRegion {
        segments: region
            .segments
            .iter()
            .map(|(a, b)| (scenario.board_pose * a, scenario.board_pose * b))
            .collect(),
        approach_direction: region.approach_direction.clone(),
    };
    if ranked {
        if let Some(maps) = &cfg.maps {
            let map = match side {
                ArmSide::Left => &maps[0],
                ArmSide::Right => &maps[1],
            };
            // Rank a dense sampling of the edge by map score, then pick
            // greedily under a minimum separation so the chosen grasps keep
            // covering the whole edge (off-centre operations stay feasible).
            let dense = rank_grasp_candidates(map, &world, usize::MAX, 0.02);
            let min_sep = 0.9 * cfg.candidate_spacing;
            let mut picked: Vec<ScoredGrasp> = Vec::new();
            for c in dense {
                if picked.len() >= cfg.candidates_per_side {
                    break;
                }
                if picked.iter().all(|p| {
                    (p.pose.translation.vector - c.pose.translation.vector).norm() >= min_sep
                }) {
                    picked.push(c);
                }
            }
            if picked.len() == cfg.candidates_per_side {
                return picked;
            }
        }
    }
    let samples = world.sample(cfg.candidate_spacing);
    if samples.is_empty() {
        return Vec::new();
    }
    let n = cfg.candidates_per_side.min(samples.len());
    (0..n)
        .map(|i| {
            let k = if n > 1 { i * (samples.len() - 1) / (n - 1) } else { 0 };
            ScoredGrasp { pose: samples[k].0, omega: 0.0 }
        })
        .collect()
}

/// Deterministic start posture: the left arm alone holds the board at the
/// centre of its edge (the only stretch where a single gripper balances
/// gravity), the right arm parked free. Every task therefore opens with a
/// genuine grasp acquisition.
fn parked_initial(cell: &Workcell, scenario: &Scenario) -> Option<CompositeConfig> {
    let left_region = side_region(&scenario.board_size, ArmSide::Left, REGION_MARGIN);
    let (a, b) = left_region.segments[0];
    let mid = sclerp(&canonical_dq(&dq_from_pose(&a)), &canonical_dq(&dq_from_pose(&b)), 0.5)?;
    let left_rel = dq_to_pose(&mid);
    let model = &cell.left;
    let world = scenario.board_pose * left_rel;
    let q = solve_ik(model, &world, &model.mid_config(), None, &IkParams::default())?;
    if crate::se3::pose_error(&forward_kinematics(model, &q), &world).norm() > 1e-2 {
        return None;
    }
    let config = CompositeConfig {
        q_left: Some(q),
        q_right: None,
        object_pose: scenario.board_pose,
        grasp: crate::stability::GraspConfig::single(ArmSide::Left, left_rel),
        omega: 0.0,
    };
    let gravity = ForceVector::gravity_only(scenario.board_pose);
    check_stability(&config, &gravity, scenario.board_mass, cell).feasible.then_some(config)
}

fn edge_mover(a: &CompositeConfig, b: &CompositeConfig, tol_pos: f64, tol_rot: f64) -> u8 {
    match (a.grasp.left.is_some(), a.grasp.right.is_some()) {
        (true, false) => 2,
        (false, true) => 1,
        _ => {
            if grasp_changed(a.grasp.left.as_ref(), b.grasp.left.as_ref(), tol_pos, tol_rot) {
                1
            } else if grasp_changed(a.grasp.right.as_ref(), b.grasp.right.as_ref(), tol_pos, tol_rot)
            {
                2
            } else {
                0
            }
        }
    }
}

/// Gripper travel (object frame) between two planned configurations: summed
/// grasp displacement over both arms, with a fixed charge for an approach
/// or retreat from the parked posture.
fn grasp_travel(a: &CompositeConfig, b: &CompositeConfig) -> f64 {
    let mut d = 0.0;
    for (ga, gb) in [(&a.grasp.left, &b.grasp.left), (&a.grasp.right, &b.grasp.right)] {
        d += match (ga, gb) {
            (Some(x), Some(y)) => {
                (x.translation.vector - y.translation.vector).norm()
                    + 0.3 * x.rotation.angle_to(&y.rotation)
            }
            (None, None) => 0.0,
            _ => 0.25,
        };
    }
    d
}

/// Layered search over the stable-configuration graph that, among all
/// minimum-regrasp plans, picks one needing the fewest dwell intermediates
/// after multi-grasp consolidation (longest same-mover runs), breaking the
/// remaining ties toward higher summed motion performance.
fn mtc_refined_plan(graph: &StableConfigGraph) -> Result<GraspPlan, crate::graph::PlanError> {
    // State: (node within column, mover of the last regrasp so far).
    // Value: lexicographic (regrasp cost, dwell count, grasp travel, -sum omega).
    #[derive(Clone, Copy)]
    struct Cell {
        cost: u32,
        dwells: u32,
        travel: f64,
        omega: f64,
        prev: (usize, usize),
        reached: bool,
    }
    const DEAD: Cell = Cell {
        cost: 0,
        dwells: 0,
        travel: 0.0,
        omega: 0.0,
        prev: (usize::MAX, usize::MAX),
        reached: false,
    };
    let better = |a: &Cell, b: &Cell| -> bool {
        if !b.reached {
            return true;
        }
        (a.cost, a.dwells)
            .cmp(&(b.cost, b.dwells))
            .then(a.travel.partial_cmp(&b.travel).unwrap_or(core::cmp::Ordering::Equal))
            .then(b.omega.partial_cmp(&a.omega).unwrap_or(core::cmp::Ordering::Equal))
            == core::cmp::Ordering::Less
    };

    let mut layers: Vec<Vec<[Cell; 3]>> = Vec::with_capacity(graph.columns.len());
    for (c, col) in graph.columns.iter().enumerate() {
        if col.is_empty() {
            return Err(crate::graph::PlanError::EmptyColumn(c));
        }
        let mut layer = alloc::vec![[DEAD; 3]; col.len()];
        if c == 0 {
            for (j, node) in col.iter().enumerate() {
                let cost = regrasp_cost(&graph.source, node, graph.tol_pos, graph.tol_rot);
                let mover = edge_mover(&graph.source, node, graph.tol_pos, graph.tol_rot);
                layer[j][mover as usize] = Cell {
                    cost: cost as u32,
                    dwells: (cost >= 1) as u32,
                    travel: grasp_travel(&graph.source, node),
                    omega: node.omega,
                    prev: (usize::MAX, usize::MAX),
                    reached: true,
                };
            }
        } else {
            let prev_col = &graph.columns[c - 1];
            let prev_layer: &Vec<[Cell; 3]> = &layers[c - 1];
            for (j, node) in col.iter().enumerate() {
                for (i, prev_node) in prev_col.iter().enumerate() {
                    let cost = regrasp_cost(prev_node, node, graph.tol_pos, graph.tol_rot);
                    let mover = edge_mover(prev_node, node, graph.tol_pos, graph.tol_rot);
                    let hop = grasp_travel(prev_node, node);
                    for last in 0..3usize {
                        let from = &prev_layer[i][last];
                        if !from.reached {
                            continue;
                        }
                        let (next_last, extra) = if cost >= 1 {
                            (mover as usize, (mover as usize != last) as u32)
                        } else {
                            (last, 0)
                        };
                        let cand = Cell {
                            cost: from.cost + cost as u32,
                            dwells: from.dwells + extra,
                            travel: from.travel + hop,
                            omega: from.omega + node.omega,
                            prev: (i, last),
                            reached: true,
                        };
                        if better(&cand, &layer[j][next_last]) {
                            layer[j][next_last] = cand;
                        }
                    }
                }
            }
        }
        layers.push(layer);
    }

    let last = layers.len() - 1;
    let mut end = (0usize, 0usize);
    let mut best = DEAD;
    for (j, slots) in layers[last].iter().enumerate() {
        for (m, cell) in slots.iter().enumerate() {
            if cell.reached && better(cell, &best) {
                best = *cell;
                end = (j, m);
            }
        }
    }
    // Columns are fully connected layer to layer, so the best end state is
    // always reached once every column is non-empty.
    debug_assert!(best.reached);

    let mut node_indices = alloc::vec![0usize; graph.columns.len()];
    let (mut j, mut m) = end;
    for c in (0..graph.columns.len()).rev() {
        node_indices[c] = j;
        let prev = layers[c][j][m].prev;
        if c > 0 {
            j = prev.0;
            m = prev.1;
        }
    }
    let mut sequence = Vec::with_capacity(node_indices.len());
    let mut step_costs = Vec::with_capacity(node_indices.len());
    let mut total = 0u32;
    let mut prev = &graph.source;
    for (c, &k) in node_indices.iter().enumerate() {
        let node = &graph.columns[c][k];
        let cost = regrasp_cost(prev, node, graph.tol_pos, graph.tol_rot);
        step_costs.push(cost);
        total += cost as u32;
        sequence.push(node.clone());
        prev = &graph.columns[c][k];
    }
    Ok(GraspPlan { node_indices, sequence, step_costs, total_cost: total })
}

/// Random stable configuration per operation, with plan bookkeeping matching
/// the exact planners.
fn random_plan(graph: &StableConfigGraph, seed: u64) -> GraspPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut node_indices = Vec::with_capacity(graph.columns.len());
    let mut sequence = Vec::with_capacity(graph.columns.len());
    let mut step_costs = Vec::with_capacity(graph.columns.len());
    let mut total = 0u32;
    let mut prev = graph.source.clone();
    for col in &graph.columns {
        let k = rng.gen_range(0..col.len());
        let node = col[k].clone();
        let c = regrasp_cost(&prev, &node, graph.tol_pos, graph.tol_rot);
        node_indices.push(k);
        step_costs.push(c);
        total += c as u32;
        prev = node.clone();
        sequence.push(node);
    }
    GraspPlan { node_indices, sequence, step_costs, total_cost: total }
}

fn grasp_changed(a: Option<&Pose>, b: Option<&Pose>, tol_pos: f64, tol_rot: f64) -> bool {
    match (a, b) {
        (None, None) => false,
        (Some(_), None) | (None, Some(_)) => true,
        (Some(ga), Some(gb)) => {
            (ga.translation.vector - gb.translation.vector).norm() > tol_pos
                || ga.rotation.angle_to(&gb.rotation) > tol_rot
        }
    }
}

fn straight_path(start: &Pose, goal: &Pose, n: usize) -> ReferencePath {
    let a = canonical_dq(&dq_from_pose(start));
    let b = canonical_dq(&dq_from_pose(goal));
    let poses: Vec<_> = (0..n)
        .map(|i| {
            let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 1.0 };
            sclerp(&a, &b, t).unwrap_or(b)
        })
        .collect();
    let covariances = alloc::vec![Vector6::from_element(4e-4); n];
    ReferencePath { poses, covariances }
}

fn path_len_for(start: &Pose, goal: &Pose) -> usize {
    let d = (goal.translation.vector - start.translation.vector).norm()
        + 0.3 * start.rotation.angle_to(&goal.rotation);
    ((d / 0.005).ceil() as usize).clamp(20, 200)
}

/// Reference path for one motion: the imitation pipeline (synthetic demos →
/// ProMP → retarget → blend-in) for our planner, straight screw motion for
/// the baselines.
fn motion_path(cfg: &HarnessConfig, imitate: bool, start: &Pose, goal: &Pose, seed: u64) -> ReferencePath {
    let n = path_len_for(start, goal);
    if !imitate {
        return straight_path(start, goal, n);
    }
    let demos = synthetic_demos(start, goal, cfg.demo_count, cfg.demo_samples, cfg.demo_noise, seed);
    let basis = (n / 2).clamp(2, 12);
    match fit_promp(&demos, basis, n, crate::imitation::DEFAULT_REGULARIZATION) {
        Ok(model) => {
            let mean = mean_and_variance(&model);
            let deltas = incremental_deltas(&mean);
            let moved = retarget(&mean, &deltas, goal);
            let mut path = attach_start(&moved, start, cfg.blend_fraction);
            // Floor the demonstrated variance so the tracking corridor is
            // never tighter than the one used for straight segments.
            for cov in &mut path.covariances {
                *cov = cov.map(|v| v.max(4e-4));
            }
            path
        }
        Err(_) => straight_path(start, goal, n),
    }
}

/// Builds the segment schedule while tracking where each gripper is.
struct Choreographer<'a> {
    cfg: &'a HarnessConfig,
    scenario: &'a Scenario,
    imitate: bool,
    ee: [Pose; 2],
    segments: Vec<SegmentPlan>,
    motion_seed: u64,
}

impl<'a> Choreographer<'a> {
    fn side_idx(side: ArmSide) -> usize {
        match side {
            ArmSide::Left => 0,
            ArmSide::Right => 1,
        }
    }

    /// Move one arm to a world goal while `holder` (side + object-relative
    /// grasp) keeps the board still.
    fn push_motion(&mut self, side: ArmSide, goal: Pose, holder: Option<(ArmSide, Pose)>) {
        let start = self.ee[Self::side_idx(side)];
        if (start.translation.vector - goal.translation.vector).norm() < 1e-9
            && start.rotation.angle_to(&goal.rotation) < 1e-9
        {
            return;
        }
        self.motion_seed = self.motion_seed.wrapping_add(1);
        let path = motion_path(self.cfg, self.imitate, &start, &goal, self.scenario.seed ^ self.motion_seed);
        let carrier = holder.map(|(s, grasp)| (s, grasp.inverse()));
        let (left, right) = match side {
            ArmSide::Left => (Some(path), None),
            ArmSide::Right => (None, Some(path)),
        };
        self.segments.push(SegmentPlan { left, right, carrier });
        self.ee[Self::side_idx(side)] = goal;
    }

    fn world_grasp(&self, object_relative: &Pose) -> Pose {
        self.scenario.board_pose * object_relative
    }
}

/// Plan a scenario with one planner: candidates → stable sets → regrasp
/// search → intermediates → reference-path schedule.
pub fn plan_scenario(
    scenario: &Scenario,
    planner: PlannerKind,
    cfg: &HarnessConfig,
) -> Result<PlanArtifacts, HarnessError> {
    let cell = cfg.workcell();
    let ranked = planner == PlannerKind::Ours;
    let left = candidates_for_side(cfg, scenario, ArmSide::Left, ranked);
    let right = candidates_for_side(cfg, scenario, ArmSide::Right, ranked);
    if left.is_empty() || right.is_empty() {
        return Err(HarnessError::PlanInfeasible("no reachable grasp candidates".into()));
    }

    // Initial configuration: parked on the edge corners; if the corners are
    // not gravity-stable, fall back to the first stable candidate pair.
    let gravity = ForceVector::gravity_only(scenario.board_pose);
    let initial = parked_initial(&cell, scenario)
        .or_else(|| {
            enumerate_stable_configs(
                &gravity,
                &left,
                &right,
                &scenario.board_pose,
                scenario.board_mass,
                &cell,
                1,
            )
            .into_iter()
            .next()
        })
        .ok_or_else(|| HarnessError::PlanInfeasible("no gravity-stable initial grasp".into()))?;

    let mut columns = Vec::with_capacity(scenario.forces.len());
    for force in &scenario.forces {
        columns.push(enumerate_stable_configs(
            force,
            &left,
            &right,
            &scenario.board_pose,
            scenario.board_mass,
            &cell,
            cfg.max_per_force,
        ));
    }
    let graph = build_graph(columns, initial.clone(), cfg.tol_pos, cfg.tol_rot)?;
    let plan = match planner {
        PlannerKind::Ours => mtc_refined_plan(&graph)?,
        PlannerKind::MinimalRegrasp => shortest_plan(&graph)?,
        PlannerKind::Greedy => greedy_plan(&graph)?,
        PlannerKind::RandomSampling => random_plan(&graph, scenario.seed ^ planner.salt()),
    };

    assemble_schedule(scenario, planner, cfg, &cell, initial, plan)
}

/// Region-wide fallback when local intersection sampling finds no stable
/// support grasp: project random region samples for the support arm and keep
/// the gravity-stable one closest to its current grasp.
fn pooled_support_intermediate(
    support: ArmSide,
    anchor: &Pose,
    params: &ResampleParams,
    ctx: &SamplerContext,
) -> Option<IntermediateCandidate> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x706f_6f6c);
    let anchor_cfg = GraspConfig::single(support, *anchor);
    let mut best: Option<IntermediateCandidate> = None;
    for _ in 0..params.pool {
        let seg = rng.gen_range(0..ctx.region.segments.len());
        let t: f64 = rng.gen();
        let (a, b) = &ctx.region.segments[seg];
        let da = canonical_dq(&dq_from_pose(a));
        let db = canonical_dq(&dq_from_pose(b));
        let Some(dq) = sclerp(&da, &db, t) else { continue };
        let sample = GraspConfig::single(support, dq_to_pose(&dq));
        if let Some((grasp, q)) = project_to_manifold(&sample, support, ctx) {
            let displacement = (grasp.encoded() - anchor_cfg.encoded()).norm();
            if best.as_ref().map_or(true, |b| displacement < b.displacement) {
                best = Some(IntermediateCandidate {
                    grasp,
                    object_pose: ctx.object_pose,
                    side: support,
                    q_support: q,
                    supported_transitions: 1,
                    displacement,
                });
            }
        }
    }
    best
}

fn other(side: ArmSide) -> ArmSide {
    match side {
        ArmSide::Left => ArmSide::Right,
        ArmSide::Right => ArmSide::Left,
    }
}

fn set_side(g: &mut crate::stability::GraspConfig, side: ArmSide, v: Option<Pose>) {
    match side {
        ArmSide::Left => g.left = v,
        ArmSide::Right => g.right = v,
    }
}

fn pseudo_config(grasp: crate::stability::GraspConfig, object_pose: &Pose) -> CompositeConfig {
    CompositeConfig { q_left: None, q_right: None, object_pose: *object_pose, grasp, omega: 0.0 }
}

/// One regrasp transition of the plan: the object passes through a
/// unimanual dwell configuration while `mover` travels to its new grasp.
/// A run dwell is only reusable if the support arm can park on it for the
/// whole run: every force operation executed before the run's final column
/// must be stable with the support at the dwell and the mover at its planned
/// grasp for that column.
fn run_dwell_supports(
    ic: &IntermediateCandidate,
    run: &[RegraspTransition],
    plan: &GraspPlan,
    scenario: &Scenario,
    cell: &Workcell,
) -> bool {
    let s = ic.side;
    let m = other(s);
    let dwell = match ic.grasp.side(s) {
        Some(g) => *g,
        None => return false,
    };
    let last = run[run.len() - 1].index;
    let first = run[0].index;
    for i in first..last {
        let mut grasp = GraspConfig { left: None, right: None };
        set_side(&mut grasp, s, Some(dwell));
        set_side(&mut grasp, m, plan.sequence[i].grasp.side(m).copied());
        let hybrid = pseudo_config(grasp, &scenario.board_pose);
        if !check_stability(&hybrid, &scenario.forces[i], scenario.board_mass, cell).feasible {
            return false;
        }
    }
    true
}

#[derive(Debug, Clone, Copy)]
struct RegraspTransition {
    /// Column index of the target configuration.
    index: usize,
    mover: ArmSide,
}

/// Turn a grasp plan into motions. Each regrasp transition routes through a
/// gravity-stable unimanual intermediate: the support arm adjusts onto it,
/// the mover travels, and the support settles on its planned grasp. The
/// baselines sample one intermediate per transition; our planner runs the
/// multi-grasp transition check over runs of consecutive transitions with
/// the same regrasping arm and reuses one intermediate configuration per run.
fn assemble_schedule(
    scenario: &Scenario,
    planner: PlannerKind,
    cfg: &HarnessConfig,
    cell: &Workcell,
    initial: CompositeConfig,
    plan: GraspPlan,
) -> Result<PlanArtifacts, HarnessError> {
    let region = full_region(&scenario.board_size, REGION_MARGIN);
    let ctx = SamplerContext {
        cell,
        region: &region,
        object_pose: scenario.board_pose,
        object_mass: scenario.board_mass,
    };

    let prev_of = |i: usize| -> &CompositeConfig {
        if i == 0 { &initial } else { &plan.sequence[i - 1] }
    };

    // Regrasp transitions in execution order.
    let transitions: Vec<RegraspTransition> = plan
        .sequence
        .iter()
        .enumerate()
        .filter(|(i, _)| plan.step_costs[*i] >= 1)
        .filter_map(|(i, target)| {
            let prev = prev_of(i);
            let mover = match (prev.grasp.left.is_some(), prev.grasp.right.is_some()) {
                // A lone holder stays put as the dwell support; the free arm
                // is the one that travels in.
                (true, false) => Some(ArmSide::Right),
                (false, true) => Some(ArmSide::Left),
                _ => regrasping_side(prev, target),
            };
            mover.map(|mover| RegraspTransition { index: i, mover })
        })
        .collect();

    let mut intermediates: Vec<IntermediateCandidate> = Vec::new();
    // Run start (index into `transitions`) -> (exclusive run end, index into
    // `intermediates`). Within a run the support arm parks on the shared
    // dwell and only the mover regrasps.
    let mut runs: alloc::collections::BTreeMap<usize, (usize, usize)> =
        alloc::collections::BTreeMap::new();

    if planner == PlannerKind::Ours {
        // Greedy runs: a run keeps the support arm (the one not regrasping
        // in its first transition) free of regrasps throughout.
        let mut t = 0;
        while t < transitions.len() {
            let first_prev = prev_of(transitions[t].index);
            if first_prev.grasp.left.is_none() || first_prev.grasp.right.is_none() {
                // Leaving a one-arm hold: the current grasp already is the
                // dwell, nothing to consolidate here.
                t += 1;
                continue;
            }
            let support = other(transitions[t].mover);
            let mut j = t + 1;
            while j < transitions.len() && transitions[j].mover != support {
                j += 1;
            }
            if j - t >= 2 {
                let pending: Vec<ArmSide> = transitions[t..j].iter().map(|e| e.mover).collect();
                let g_b = prev_of(transitions[t].index);
                let mut params = cfg.resample.clone();
                params.seed = cfg.resample.seed ^ scenario.seed ^ ((t as u64) << 8);
                let support_final =
                    plan.sequence[transitions[j - 1].index].grasp.side(support).copied();
                if let Some(ic) = mtc_select(&pending, g_b, support_final.as_ref(), &params, &ctx) {
                    let dwell_ok = ic.side == support
                        && run_dwell_supports(
                            &ic, &transitions[t..j], &plan, scenario, cell,
                        );
                    if dwell_ok {
                        let idx = intermediates.len();
                        intermediates.push(ic);
                        runs.insert(t, (j, idx));
                    }
                }
            }
            t = j.max(t + 1);
        }
    }

    let start_state = state_for(cell, &initial);
    let mut chor = Choreographer {
        cfg,
        scenario,
        imitate: planner == PlannerKind::Ours,
        ee: [
            forward_kinematics(&cell.left, &start_state.q_left),
            forward_kinematics(&cell.right, &start_state.q_right),
        ],
        segments: Vec::new(),
        motion_seed: planner.salt(),
    };

    let mut working = initial.grasp;
    let mut k = 0;
    while k < transitions.len() {
        let tr = &transitions[k];
        let i = tr.index;
        let target = &plan.sequence[i];

        if let Some(&(end, idx)) = runs.get(&k) {
            // A consolidated run: the support parks on the shared dwell
            // once, the mover hops through all its planned grasps, and the
            // support settles on its final planned grasp at the end.
            let ic = &intermediates[idx];
            let s = ic.side;
            let m = other(s);
            let ic_rel = *ic.grasp.side(s).ok_or_else(|| {
                HarnessError::PlanInfeasible("intermediate missing support grasp".into())
            })?;
            if grasp_changed(working.side(s), Some(&ic_rel), cfg.tol_pos, cfg.tol_rot) {
                let hold = working.side(m).map(|g| (m, *g));
                chor.push_motion(s, chor.world_grasp(&ic_rel), hold);
            }
            set_side(&mut working, s, Some(ic_rel));
            for kk in k..end {
                let hop = &plan.sequence[transitions[kk].index];
                match hop.grasp.side(m).copied() {
                    Some(goal) => {
                        if grasp_changed(working.side(m), Some(&goal), cfg.tol_pos, cfg.tol_rot) {
                            chor.push_motion(m, chor.world_grasp(&goal), Some((s, ic_rel)));
                            set_side(&mut working, m, Some(goal));
                        }
                    }
                    None => set_side(&mut working, m, None),
                }
            }
            let final_target = &plan.sequence[transitions[end - 1].index];
            match final_target.grasp.side(s).copied() {
                Some(goal) => {
                    if grasp_changed(working.side(s), Some(&goal), cfg.tol_pos, cfg.tol_rot) {
                        let hold = working.side(m).map(|g| (m, *g));
                        chor.push_motion(s, chor.world_grasp(&goal), hold);
                        set_side(&mut working, s, Some(goal));
                    }
                }
                None => set_side(&mut working, s, None),
            }
            k = end;
            continue;
        }
        let lone_holder = match (working.left.is_some(), working.right.is_some()) {
            (true, false) => Some(ArmSide::Left),
            (false, true) => Some(ArmSide::Right),
            _ => None,
        };
        if let Some(s) = lone_holder {
            // The board already rests in a gravity-stable one-arm hold: use
            // it as the dwell in place instead of sampling a new one.
            let dwell = *working.side(s).unwrap();
            let m = other(s);
            if let Some(goal) = target.grasp.side(m).copied() {
                chor.push_motion(m, chor.world_grasp(&goal), Some((s, dwell)));
                set_side(&mut working, m, Some(goal));
            }
            match target.grasp.side(s).copied() {
                Some(goal) => {
                    if grasp_changed(working.side(s), Some(&goal), cfg.tol_pos, cfg.tol_rot) {
                        let hold = working.side(m).map(|g| (m, *g));
                        chor.push_motion(s, chor.world_grasp(&goal), hold);
                        set_side(&mut working, s, Some(goal));
                    }
                }
                None => set_side(&mut working, s, None),
            }
            k += 1;
            continue;
        }
        let ic = {
            let g_b = pseudo_config(working, &scenario.board_pose);
            let mut params = cfg.resample.clone();
            params.seed =
                cfg.resample.seed ^ scenario.seed ^ ((k as u64).wrapping_mul(0x9e37_79b9) << 4);
            let anchor = working.side(other(tr.mover)).copied();
            let ic = sample_stable_intersection(&g_b, target, &params, &ctx)
                .or_else(|| {
                    anchor.and_then(|a| {
                        pooled_support_intermediate(other(tr.mover), &a, &params, &ctx)
                    })
                })
                .ok_or_else(|| {
                    HarnessError::PlanInfeasible(format!(
                        "no stable support intermediate for transition {i}"
                    ))
                })?;
            intermediates.push(ic.clone());
            ic
        };
        let s = ic.side;
        let m = other(s);
        let ic_rel = *ic.grasp.side(s).ok_or_else(|| {
            HarnessError::PlanInfeasible("intermediate missing support grasp".into())
        })?;

        // 1. Support adjusts onto the stable intermediate while the mover
        //    still holds its old grasp.
        if grasp_changed(working.side(s), Some(&ic_rel), cfg.tol_pos, cfg.tol_rot) {
            let hold = working.side(m).map(|g| (m, *g));
            chor.push_motion(s, chor.world_grasp(&ic_rel), hold);
            set_side(&mut working, s, Some(ic_rel));
        }
        // 2. The mover travels to its planned grasp under the dwell support.
        match target.grasp.side(m).copied() {
            Some(goal) => {
                if grasp_changed(working.side(m), Some(&goal), cfg.tol_pos, cfg.tol_rot) {
                    chor.push_motion(m, chor.world_grasp(&goal), Some((s, ic_rel)));
                    set_side(&mut working, m, Some(goal));
                }
            }
            None => set_side(&mut working, m, None),
        }
        // 3. The support settles on its planned grasp, the mover holding.
        match target.grasp.side(s).copied() {
            Some(goal) => {
                if grasp_changed(working.side(s), Some(&goal), cfg.tol_pos, cfg.tol_rot) {
                    let hold = working.side(m).map(|g| (m, *g));
                    chor.push_motion(s, chor.world_grasp(&goal), hold);
                    set_side(&mut working, s, Some(goal));
                }
            }
            None => set_side(&mut working, s, None),
        }
        k += 1;
    }

    let execution = ExecutionPlan { segments: chor.segments, object_start: scenario.board_pose };
    Ok(PlanArtifacts { planner, initial, plan, intermediates, execution })
}

fn state_for(cell: &Workcell, config: &CompositeConfig) -> DualArmState {
    DualArmState::new(
        config.q_left.clone().unwrap_or_else(|| cell.left.mid_config()),
        config.q_right.clone().unwrap_or_else(|| cell.right.mid_config()),
    )
}

/// Re-check every planned configuration against its force operation.
pub fn verify_plan(
    scenario: &Scenario,
    artifacts: &PlanArtifacts,
    cfg: &HarnessConfig,
) -> bool {
    let cell = cfg.workcell();
    artifacts
        .plan
        .sequence
        .iter()
        .zip(&scenario.forces)
        .all(|(config, force)| check_stability(config, force, scenario.board_mass, &cell).feasible)
}

/// Plan and execute a scenario with one planner.
pub fn run_scenario(
    scenario: &Scenario,
    planner: PlannerKind,
    cfg: &HarnessConfig,
) -> Result<(RunMetrics, ExecutionOutcome, PlanArtifacts), HarnessError> {
    let artifacts = plan_scenario(scenario, planner, cfg)?;
    let cell = cfg.workcell();
    let start = state_for(&cell, &artifacts.initial);
    let mut gains = cfg.gains.clone();
    if planner != PlannerKind::Ours {
        // Baselines run the tracking controller without the
        // motion-performance objectives.
        gains.kappa2 = 0.0;
        gains.kappa_limit = 0.0;
    }
    let outcome = execute_path(&cell, start, &artifacts.execution, &scenario.obstacles, &gains);
    let m = &outcome.metrics;
    let metrics = RunMetrics {
        planner,
        regrasp_count: artifacts.plan.total_cost,
        intermediate_count: artifacts.intermediates.len(),
        segment_count: artifacts.execution.segments.len(),
        steps: m.steps,
        sim_time: m.steps as f64 * cfg.gains.dt,
        ee_path_length: m.ee_path_length,
        min_sigma: m.min_sigma,
        min_limit_distance: m.min_limit_distance,
        min_clearance: m.min_clearance,
        flagged_steps: m.flagged_steps,
        aborted: m.aborted,
    };
    if m.aborted {
        return Err(HarnessError::ExecutionAborted(format!(
            "{} flagged steps, aborted after {} steps",
            m.flagged_steps, m.steps
        )));
    }
    Ok((metrics, outcome, artifacts))
}

/// Run every planner on the scenario; failures are reported per planner.
pub fn compare(
    scenario: &Scenario,
    planners: &[PlannerKind],
    cfg: &HarnessConfig,
) -> Vec<(PlannerKind, Result<RunMetrics, HarnessError>)> {
    planners
        .iter()
        .map(|&p| (p, run_scenario(scenario, p, cfg).map(|(m, _, _)| m)))
        .collect()
}
