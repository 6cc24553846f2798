//! Voxelized motion performance map: scores candidate end-effector poses by
//! manipulability, swivel-space dexterity and joint-limit proximity, then
//! ranks grasp candidates along an object's graspable region.
//!
//! Each voxel is a (position cell, EE z-direction, rotation about that
//! direction) triple. A voxel's raw factors are the medians over the
//! distinct IK solutions found across a swivel-angle sweep; factors are
//! min-max normalized over the populated map and the final score is their
//! product ω = m̂·η̂·l̂.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::f64::consts::PI;
use nalgebra::{UnitQuaternion, UnitVector3, Vector3};
#[allow(unused_imports)] // f64 math comes from num-traits under no_std
use num_traits::Float;

use crate::arm::{
    default_proximity_k, joint_limit_proximity, manipulability, solve_ik, swivel_angle,
    wrap_angle, ArmModel, IkParams, JointConfig,
};
use crate::se3::{pose_from_parts, sclerp, canonical_dq, dq_from_pose, dq_to_pose, Pose};
use crate::stability::ScoredGrasp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct VoxelKey {
    pub position: [i32; 3],
    pub direction: usize,
    pub rotation: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelScore {
    pub manipulability: f64,
    pub dexterity: f64,
    pub limit_proximity: f64,
    pub omega: f64,
}

/// Raw per-voxel factors before map-wide normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawScore {
    pub manipulability: f64,
    pub dexterity: f64,
    pub limit_proximity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Aabb { min, max }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Debug, Clone)]
pub struct PerformanceMap {
    pub resolution: f64,
    pub bounds: Aabb,
    pub directions: Vec<Vector3<f64>>,
    pub rotations: Vec<f64>,
    pub scores: BTreeMap<VoxelKey, VoxelScore>,
}

/// The 26 cube-neighbor directions (faces, edges, corners), normalized.
pub fn default_directions() -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(26);
    for x in -1..=1 {
        for y in -1..=1 {
            for z in -1..=1 {
                if x == 0 && y == 0 && z == 0 {
                    continue;
                }
                out.push(Vector3::new(x as f64, y as f64, z as f64).normalize());
            }
        }
    }
    out
}

/// Eight rotations uniform in [0, 2π).
pub fn default_rotations() -> Vec<f64> {
    (0..8).map(|i| i as f64 * PI / 4.0).collect()
}

/// Sweep and scoring parameters for one voxel evaluation.
#[derive(Debug, Clone)]
pub struct MapParams {
    /// Weight constant of the joint-limit proximity factor.
    pub k_limit: f64,
    /// Number of swivel-angle targets swept per voxel.
    pub swivel_grid: usize,
    /// Allowed swivel intervals (rad, wrapped); dexterity counts solutions
    /// landing inside them.
    pub theta_free: Vec<(f64, f64)>,
    pub ik: IkParams,
}

impl Default for MapParams {
    fn default() -> Self {
        MapParams {
            k_limit: default_proximity_k(),
            swivel_grid: 8,
            theta_free: alloc::vec![(-PI, PI)],
            ik: IkParams::fast(),
        }
    }
}

/// Orientation whose z-axis is `direction`, spun by `phi` about it. The
/// direction-aligned frame is the minimal rotation from +z (π about x when
/// antiparallel), making the construction deterministic.
pub fn voxel_orientation(direction: &Vector3<f64>, phi: f64) -> UnitQuaternion<f64> {
    let z = Vector3::z_axis();
    let d = UnitVector3::new_normalize(*direction);
    let align = UnitQuaternion::rotation_between_axis(&z, &d)
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI));
    let spin = UnitQuaternion::from_axis_angle(&d, phi);
    spin * align
}

fn cell_center(bounds: &Aabb, resolution: f64, idx: &[i32; 3]) -> Vector3<f64> {
    Vector3::from_fn(|i, _| bounds.min[i] + (idx[i] as f64 + 0.5) * resolution)
}

fn cell_counts(bounds: &Aabb, resolution: f64) -> [i32; 3] {
    let mut n = [0i32; 3];
    for i in 0..3 {
        // epsilon guards against spans like 0.10000000000000003 / 0.1
        n[i] = (((bounds.max[i] - bounds.min[i]) / resolution) - 1e-9).ceil().max(0.0) as i32;
    }
    n
}

/// The EE pose a voxel key stands for.
pub fn voxel_pose(
    bounds: &Aabb,
    resolution: f64,
    directions: &[Vector3<f64>],
    rotations: &[f64],
    key: &VoxelKey,
) -> Pose {
    pose_from_parts(
        cell_center(bounds, resolution, &key.position),
        voxel_orientation(&directions[key.direction], rotations[key.rotation]),
    )
}

/// All voxel keys of the grid, in deterministic lexicographic order.
pub fn voxel_keys(
    bounds: &Aabb,
    resolution: f64,
    n_directions: usize,
    n_rotations: usize,
) -> Vec<VoxelKey> {
    let n = cell_counts(bounds, resolution);
    let mut keys = Vec::new();
    for x in 0..n[0] {
        for y in 0..n[1] {
            for z in 0..n[2] {
                for d in 0..n_directions {
                    for r in 0..n_rotations {
                        keys.push(VoxelKey { position: [x, y, z], direction: d, rotation: r });
                    }
                }
            }
        }
    }
    keys
}

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn in_free_set(theta: f64, free: &[(f64, f64)]) -> bool {
    let t = wrap_angle(theta);
    free.iter().any(|&(lo, hi)| t >= lo && t <= hi)
}

/// Evaluate one candidate EE pose: sweep the swivel grid, collect distinct
/// IK solutions, return median raw factors. `None` when the pose is out of
/// reach or no IK solution exists.
pub fn evaluate_voxel(model: &ArmModel, pose: &Pose, params: &MapParams) -> Option<RawScore> {
    let base = model.base_pose.translation.vector;
    if (pose.translation.vector - base).norm() > model.reach_radius() {
        return None;
    }
    // Cheap existence check first; its solution seeds the sweep.
    let q0 = solve_ik(model, pose, &model.mid_config(), None, &params.ik)?;

    let grid = params.swivel_grid.max(1);
    let tol = PI / grid as f64 + 1e-6;
    let mut solutions: Vec<(f64, JointConfig)> = Vec::new();
    if let Some(s0) = swivel_angle(model, &q0) {
        solutions.push((s0, q0.clone()));
    } else {
        // Degenerate shoulder-wrist geometry: a single self-spun solution.
        solutions.push((0.0, q0.clone()));
    }
    let mut seed = q0;
    for i in 0..grid {
        let target = -PI + (i as f64 + 0.5) * 2.0 * PI / grid as f64;
        if let Some(q) = solve_ik(model, pose, &seed, Some(target), &params.ik) {
            if let Some(s) = swivel_angle(model, &q) {
                let distinct =
                    solutions.iter().all(|(sj, _)| wrap_angle(s - *sj).abs() > tol * 0.5);
                if distinct {
                    solutions.push((s, q.clone()));
                }
                seed = q;
            }
        }
    }

    let eta = solutions
        .iter()
        .filter(|(s, _)| in_free_set(*s, &params.theta_free))
        .count() as f64;
    let mut ms: Vec<f64> = solutions.iter().map(|(_, q)| manipulability(model, q)).collect();
    let mut ls: Vec<f64> =
        solutions.iter().map(|(_, q)| joint_limit_proximity(model, q, params.k_limit)).collect();
    Some(RawScore {
        manipulability: median(&mut ms),
        dexterity: eta,
        limit_proximity: median(&mut ls),
    })
}

fn normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        // constant factor across the map: defined as 1
        return values.iter().map(|_| 1.0).collect();
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Min-max normalize raw voxel factors over the populated set and store
/// ω as the factor product.
pub fn assemble(
    bounds: Aabb,
    resolution: f64,
    directions: Vec<Vector3<f64>>,
    rotations: Vec<f64>,
    raw: Vec<(VoxelKey, RawScore)>,
) -> PerformanceMap {
    let ms: Vec<f64> = raw.iter().map(|(_, s)| s.manipulability).collect();
    let es: Vec<f64> = raw.iter().map(|(_, s)| s.dexterity).collect();
    let ls: Vec<f64> = raw.iter().map(|(_, s)| s.limit_proximity).collect();
    let (mn, en, ln) = (normalize(&ms), normalize(&es), normalize(&ls));
    let mut scores = BTreeMap::new();
    for (i, (key, _)) in raw.into_iter().enumerate() {
        scores.insert(
            key,
            VoxelScore {
                manipulability: mn[i],
                dexterity: en[i],
                limit_proximity: ln[i],
                omega: mn[i] * en[i] * ln[i],
            },
        );
    }
    PerformanceMap { resolution, bounds, directions, rotations, scores }
}

/// Build the map serially. Callers wanting parallelism can map
/// [`evaluate_voxel`] over [`voxel_keys`] themselves and call [`assemble`];
/// records are keyed, so merge order does not matter.
pub fn build_map(
    model: &ArmModel,
    bounds: Aabb,
    resolution: f64,
    directions: Vec<Vector3<f64>>,
    rotations: Vec<f64>,
    params: &MapParams,
) -> PerformanceMap {
    assert!(resolution > 0.0, "resolution must be positive");
    assert!(!directions.is_empty() && !rotations.is_empty(), "empty orientation grids");
    let keys = voxel_keys(&bounds, resolution, directions.len(), rotations.len());
    let mut raw = Vec::new();
    for key in keys {
        let pose = voxel_pose(&bounds, resolution, &directions, &rotations, &key);
        if let Some(score) = evaluate_voxel(model, &pose, params) {
            raw.push((key, score));
        }
    }
    assemble(bounds, resolution, directions, rotations, raw)
}

/// Nearest voxel key for a pose: position cell, direction by largest dot
/// product with the EE z-axis, rotation by smallest orientation residual.
pub fn pose_key(map: &PerformanceMap, pose: &Pose) -> Option<VoxelKey> {
    let p = pose.translation.vector;
    if !map.bounds.contains(&p) {
        return None;
    }
    let n = cell_counts(&map.bounds, map.resolution);
    let mut cell = [0i32; 3];
    for i in 0..3 {
        cell[i] = (((p[i] - map.bounds.min[i]) / map.resolution).floor() as i32)
            .clamp(0, (n[i] - 1).max(0));
    }
    let z = pose.rotation * Vector3::z();
    let direction = (0..map.directions.len())
        .max_by(|a, b| {
            let da = map.directions[*a].dot(&z);
            let db = map.directions[*b].dot(&z);
            da.partial_cmp(&db).unwrap()
        })?;
    let rotation = (0..map.rotations.len()).min_by(|a, b| {
        let ra = voxel_orientation(&map.directions[direction], map.rotations[*a]);
        let rb = voxel_orientation(&map.directions[direction], map.rotations[*b]);
        let da = ra.angle_to(&pose.rotation);
        let db = rb.angle_to(&pose.rotation);
        da.partial_cmp(&db).unwrap()
    })?;
    Some(VoxelKey { position: cell, direction, rotation })
}

/// Look up the nearest voxel's scores; absent when the pose falls outside
/// the bounds or into an unpopulated voxel.
pub fn query(map: &PerformanceMap, pose: &Pose) -> Option<VoxelScore> {
    map.scores.get(&pose_key(map, pose)?).copied()
}

/// A graspable region of the object boundary: straight segments between
/// pose pairs, each with an approach direction.
#[derive(Debug, Clone)]
pub struct GraspRegion {
    pub segments: Vec<(Pose, Pose)>,
    pub approach_direction: Vec<Vector3<f64>>,
}

impl GraspRegion {
    /// Sample candidate poses at fixed arc-length `spacing`, interpolating
    /// each segment by screw motion. Returns (pose, segment index, position
    /// index along the segment).
    pub fn sample(&self, spacing: f64) -> Vec<(Pose, usize, usize)> {
        let mut out = Vec::new();
        for (seg_idx, (start, end)) in self.segments.iter().enumerate() {
            let len = (end.translation.vector - start.translation.vector).norm();
            let steps = (len / spacing).ceil().max(1.0) as usize;
            let a = canonical_dq(&dq_from_pose(start));
            let b = canonical_dq(&dq_from_pose(end));
            for i in 0..=steps {
                let t = i as f64 / steps as f64;
                if let Some(dq) = sclerp(&a, &b, t) {
                    out.push((dq_to_pose(&dq), seg_idx, i));
                }
            }
        }
        out
    }
}

/// Score region samples through the map and return the top `n` grasp poses,
/// non-increasing in ω; ties broken by lower position index, then lower
/// segment index.
pub fn rank_grasp_candidates(
    map: &PerformanceMap,
    region: &GraspRegion,
    n: usize,
    spacing: f64,
) -> Vec<ScoredGrasp> {
    let mut scored: Vec<(f64, usize, usize, Pose)> = region
        .sample(spacing)
        .into_iter()
        .filter_map(|(pose, seg, idx)| query(map, &pose).map(|s| (s.omega, idx, seg, pose)))
        .collect();
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    });
    scored.truncate(n);
    scored.into_iter().map(|(omega, _, _, pose)| ScoredGrasp { pose, omega }).collect()
}
