//! Local control stage: a dense QP over stacked dual-arm joint velocities
//! plus corridor slack that tracks the reference path, damps changes of the
//! minimum Jacobian singular value, and respects joint position, velocity
//! and acceleration bounds. Obstacle avoidance shifts the tracked target
//! through a potential-field repulsion before the QP sees it.

#[allow(unused_imports)] // f64 math comes from num-traits under no_std
use num_traits::Float;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, SVector, Vector3, Vector6};

use crate::arm::{
    forward_kinematics, geometric_jacobian, ArmModel, Jacobian, JointConfig, JointVec, DOF,
};
use crate::imitation::ReferencePath;
use crate::qp::{solve_qp_warm, QpProblem};
use crate::se3::{canonical_dq, dq_from_pose, dq_to_pose, pose_error, Pose, UnitDualQuat};
use crate::stability::{ArmSide, Workcell};

pub const SLACK_PER_ARM: usize = 6;
/// Stacked QP variables: [q̇_left(7), q̇_right(7), s_left(6), s_right(6)].
pub const QP_VARS: usize = 2 * DOF + 2 * SLACK_PER_ARM;
/// Corridor half-widths never fall below this (metres / radians).
pub const MIN_CORRIDOR: f64 = 1e-3;
/// Consecutive infeasible control steps tolerated before aborting a run.
pub const MAX_FLAGGED_STREAK: usize = 50;

const SLACK_MAX: f64 = 1e3;
/// Small strictly-convex velocity penalty (see Hessian assembly).
const VELOCITY_DAMPING: f64 = 1e-4;
const STEP_VERIFY_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct PlannerGains {
    /// Tracking weight.
    pub kappa1: f64,
    /// Manipulability (σ_min rate damping) weight.
    pub kappa2: f64,
    /// Slack penalty; kept below kappa1 so tracking dominates.
    pub kappa3: f64,
    /// Joint-limit centering weight (pulls the redundant direction toward
    /// the middle of each joint range).
    pub kappa_limit: f64,
    /// Scale on the σ_min gradient row inside the cost.
    pub lambda_sigma: f64,
    /// Potential-field step size (target shift = ½ε·F).
    pub epsilon_apf: f64,
    pub dt: f64,
}

impl Default for PlannerGains {
    fn default() -> Self {
        PlannerGains {
            kappa1: 1.0,
            kappa2: 0.1,
            kappa3: 1e-3,
            kappa_limit: 0.05,
            lambda_sigma: 1.0,
            epsilon_apf: 0.05,
            dt: 0.01,
        }
    }
}

impl PlannerGains {
    pub fn valid(&self) -> bool {
        self.kappa1 > 0.0
            && self.kappa2 >= 0.0
            && self.kappa3 >= 0.0
            && self.kappa_limit >= 0.0
            && self.dt > 0.0
            && self.kappa3 < self.kappa1
    }
}

/// Spherical obstacles: (center, radius, influence_radius).
#[derive(Debug, Clone, Default)]
pub struct ObstacleSet {
    pub spheres: Vec<(Vector3<f64>, f64, f64)>,
}

impl ObstacleSet {
    pub fn empty() -> Self {
        ObstacleSet { spheres: Vec::new() }
    }

    pub fn valid(&self) -> bool {
        self.spheres.iter().all(|(_, r, r0)| *r >= 0.0 && r < r0)
    }

    /// Distance from `p` to the nearest sphere surface (∞ when empty).
    pub fn clearance(&self, p: &Vector3<f64>) -> f64 {
        self.spheres
            .iter()
            .map(|(c, r, _)| (p - c).norm() - r)
            .fold(f64::INFINITY, f64::min)
    }

    /// Khatib-style repulsion at `p`: (1/ρ − 1/ρ₀)/ρ² away from each sphere
    /// center inside its influence radius, ρ measured from the surface.
    pub fn repulsion(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let mut f = Vector3::zeros();
        for (center, radius, influence) in &self.spheres {
            let to_p = p - center;
            let dist = to_p.norm();
            let rho = (dist - radius).max(1e-6);
            let rho0 = influence - radius;
            if rho < rho0 && dist > 1e-12 {
                f += (1.0 / rho - 1.0 / rho0) / (rho * rho) * (to_p / dist);
            }
        }
        f
    }
}

/// Gradient of the minimum singular value of the geometric Jacobian:
/// ∂σ_min/∂q_j = u_minᵀ (∂J/∂q_j) v_min, with ∂J/∂q_j by central
/// differences. Falls back to finite differences of σ_min itself when
/// σ_min is not simple (gap below `gap_tol`).
pub fn min_singular_jacobian(model: &ArmModel, q: &JointConfig) -> JointVec {
    min_singular_jacobian_gap(model, q, 1e-6)
}

pub fn min_singular_jacobian_gap(model: &ArmModel, q: &JointConfig, gap_tol: f64) -> JointVec {
    let j = geometric_jacobian(model, q);
    let svd = j.svd(true, true);
    let sv = svd.singular_values;
    let mut idx = 0;
    for k in 1..sv.len() {
        if sv[k] < sv[idx] {
            idx = k;
        }
    }
    let gap = sv
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != idx)
        .map(|(_, s)| (s - sv[idx]).abs())
        .fold(f64::INFINITY, f64::min);
    if gap <= gap_tol {
        return fd_sigma_gradient(model, q);
    }
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let u_min = u.column(idx).into_owned();
    let v_min = vt.row(idx).transpose();
    let h = 1e-6;
    let mut grad = JointVec::zeros();
    for jnt in 0..DOF {
        let mut qp = *q;
        let mut qm = *q;
        qp.0[jnt] += h;
        qm.0[jnt] -= h;
        let dj: Jacobian =
            (geometric_jacobian(model, &qp) - geometric_jacobian(model, &qm)) / (2.0 * h);
        grad[jnt] = (u_min.transpose() * dj * v_min)[(0, 0)];
    }
    grad
}

pub fn sigma_min(model: &ArmModel, q: &JointConfig) -> f64 {
    geometric_jacobian(model, q)
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

fn fd_sigma_gradient(model: &ArmModel, q: &JointConfig) -> JointVec {
    let h = 1e-5;
    let mut grad = JointVec::zeros();
    for jnt in 0..DOF {
        let mut qp = *q;
        let mut qm = *q;
        qp.0[jnt] += h;
        qm.0[jnt] -= h;
        grad[jnt] = (sigma_min(model, &qp) - sigma_min(model, &qm)) / (2.0 * h);
    }
    grad
}

/// Shift the translational part of `target` by ½ε(F_att + F_rep). The
/// attractive force vanishes at the nominal target itself, so with no
/// obstacle in range the target passes through unchanged; repulsion is
/// evaluated at the current end-effector position. Rotation is untouched.
pub fn apf_modify(
    target: &UnitDualQuat,
    ee_pos: &Vector3<f64>,
    obstacles: &ObstacleSet,
    gains: &PlannerGains,
) -> UnitDualQuat {
    let f_rep = obstacles.repulsion(ee_pos);
    if f_rep.norm() == 0.0 {
        return *target;
    }
    let mut shift = 0.5 * gains.epsilon_apf * f_rep;
    let cap = 0.2;
    if shift.norm() > cap {
        shift *= cap / shift.norm();
    }
    let mut pose = dq_to_pose(target);
    pose.translation.vector += shift;
    canonical_dq(&dq_from_pose(&pose))
}

/// Per-arm tracked pose with its corridor half-width (6 channels).
#[derive(Debug, Clone)]
pub struct ArmTarget {
    pub pose: UnitDualQuat,
    pub half_width: Vector6<f64>,
}

impl ArmTarget {
    /// Hold the given pose with a wide-open corridor.
    pub fn hold(pose: &Pose) -> Self {
        ArmTarget {
            pose: canonical_dq(&dq_from_pose(pose)),
            half_width: Vector6::from_element(1.0),
        }
    }

    pub fn from_path(path: &ReferencePath, i: usize) -> Self {
        let idx = i.min(path.len() - 1);
        let half_width = path.covariances[idx].map(|v| v.max(0.0).sqrt().max(MIN_CORRIDOR));
        ArmTarget { pose: path.poses[idx], half_width }
    }
}

#[derive(Debug, Clone)]
pub struct DualArmState {
    pub q_left: JointConfig,
    pub q_right: JointConfig,
    pub velocity: SVector<f64, 14>,
}

impl DualArmState {
    pub fn new(q_left: JointConfig, q_right: JointConfig) -> Self {
        DualArmState { q_left, q_right, velocity: SVector::zeros() }
    }

    pub fn q(&self, side: ArmSide) -> &JointConfig {
        match side {
            ArmSide::Left => &self.q_left,
            ArmSide::Right => &self.q_right,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ControlStep {
    pub joint_velocity: SVector<f64, 14>,
    pub slack: SVector<f64, 12>,
    /// Targets actually tracked after potential-field modification.
    pub achieved_target: [UnitDualQuat; 2],
    /// False when the solver failed verification; velocity is zeroed then.
    pub feasible: bool,
}

/// Warm-start carrier for the control loop.
#[derive(Debug, Clone, Default)]
pub struct SolverMemory {
    warm: Option<(DVector<f64>, DVector<f64>)>,
}

/// One control cycle for both arms: assemble and solve
///   min κ₁‖Jq̇ − γ‖² + κ₂‖λ J̄_σ q̇‖² + κ₃‖s‖²
///   s.t. |Δt·Jq̇ − e| ≤ b_s + s per task channel, velocity/acceleration/
///        position boxes on q̇, s ≥ 0,
/// with γ = e/Δt the log-map pose error rate toward the (APF-shifted)
/// target. Verified post-solve at 1e-9; failures return zero velocity.
pub fn control_step(
    cell: &Workcell,
    state: &DualArmState,
    targets: &[ArmTarget; 2],
    obstacles: &ObstacleSet,
    gains: &PlannerGains,
    memory: &mut SolverMemory,
) -> ControlStep {
    debug_assert!(gains.valid());
    let n = QP_VARS;
    let dt = gains.dt;
    let mut h = DMatrix::zeros(n, n);
    let mut c = DVector::zeros(n);
    let mut a = DMatrix::zeros(2 * SLACK_PER_ARM * 2, n);
    let mut b = DVector::zeros(2 * SLACK_PER_ARM * 2);
    let mut lb = DVector::zeros(n);
    let mut ub = DVector::zeros(n);
    let mut achieved = [targets[0].pose, targets[1].pose];

    for (k, side) in [ArmSide::Left, ArmSide::Right].into_iter().enumerate() {
        let model = cell.arm(side);
        let q = state.q(side);
        let jac = geometric_jacobian(model, q);
        let ee = forward_kinematics(model, q);
        let shifted = apf_modify(&targets[k].pose, &ee.translation.vector, obstacles, gains);
        achieved[k] = shifted;
        let e = pose_error(&ee, &dq_to_pose(&shifted));
        let gamma = e / dt;

        let qoff = k * DOF;
        let soff = 2 * DOF + k * SLACK_PER_ARM;

        // tracking: κ₁‖Jq̇ − γ‖²  →  ½uᵀHu with H += 2κ₁JᵀJ, c += −2κ₁Jᵀγ
        let jt_j = jac.transpose() * jac;
        let jt_g = jac.transpose() * gamma;
        for i in 0..DOF {
            for jj in 0..DOF {
                h[(qoff + i, qoff + jj)] += 2.0 * gains.kappa1 * jt_j[(i, jj)];
            }
            c[qoff + i] -= 2.0 * gains.kappa1 * jt_g[i];
        }

        // Tikhonov damping on joint velocity: J is 6x7, so JᵀJ alone leaves
        // a null direction and the QP optimum would be non-unique.
        for i in 0..DOF {
            h[(qoff + i, qoff + i)] += 2.0 * VELOCITY_DAMPING;
        }

        // limit avoidance: inside a margin of a joint limit, a retreat
        // velocity proportional to the penetration is rewarded so the
        // redundant direction drifts back toward mid-range.
        if gains.kappa_limit > 0.0 {
            const LIMIT_MARGIN: f64 = 0.45;
            for i in 0..DOF {
                let d_lo = q.0[i] - model.joint_lower[i];
                let d_hi = model.joint_upper[i] - q.0[i];
                let v_des = if d_lo < LIMIT_MARGIN {
                    (LIMIT_MARGIN - d_lo) / LIMIT_MARGIN
                } else if d_hi < LIMIT_MARGIN {
                    -(LIMIT_MARGIN - d_hi) / LIMIT_MARGIN
                } else {
                    continue;
                };
                h[(qoff + i, qoff + i)] += 2.0 * gains.kappa_limit;
                c[qoff + i] -= 2.0 * gains.kappa_limit * v_des;
            }
        }

        // manipulability: κ₂‖λ ∇σ_minᵀ q̇‖² damps the σ_min rate while the
        // linear reward pushes its rate positive in the null space.
        if gains.kappa2 > 0.0 {
            let g = min_singular_jacobian(model, q) * gains.lambda_sigma;
            for i in 0..DOF {
                for jj in 0..DOF {
                    h[(qoff + i, qoff + jj)] += 2.0 * gains.kappa2 * g[i] * g[jj];
                }
                c[qoff + i] -= gains.kappa2 * g[i];
            }
        }

        // slack penalty
        for i in 0..SLACK_PER_ARM {
            h[(soff + i, soff + i)] += 2.0 * gains.kappa3;
        }

        // corridor rows: ±(Δt·Jq̇ − e) − Δt·s ≤ b_s, stated in velocity
        // units (divided by Δt) so the constraint matrix stays O(1); the
        // slack therefore measures corridor violation as a velocity.
        let roff = k * 2 * SLACK_PER_ARM;
        for ch in 0..SLACK_PER_ARM {
            for jj in 0..DOF {
                a[(roff + 2 * ch, qoff + jj)] = jac[(ch, jj)];
                a[(roff + 2 * ch + 1, qoff + jj)] = -jac[(ch, jj)];
            }
            a[(roff + 2 * ch, soff + ch)] = -1.0;
            a[(roff + 2 * ch + 1, soff + ch)] = -1.0;
            b[roff + 2 * ch] = targets[k].half_width[ch] / dt + gamma[ch];
            b[roff + 2 * ch + 1] = targets[k].half_width[ch] / dt - gamma[ch];
        }

        // velocity ∩ acceleration ∩ position boxes
        for i in 0..DOF {
            let v_prev = state.velocity[qoff + i];
            let lo = (-model.velocity_limit[i])
                .max(v_prev - model.accel_limit[i] * dt)
                .max((model.joint_lower[i] - q.0[i]) / dt);
            let hi = model.velocity_limit[i]
                .min(v_prev + model.accel_limit[i] * dt)
                .min((model.joint_upper[i] - q.0[i]) / dt);
            lb[qoff + i] = lo.min(hi);
            ub[qoff + i] = hi.max(lo.min(hi));
        }
        for i in 0..SLACK_PER_ARM {
            lb[soff + i] = 0.0;
            ub[soff + i] = SLACK_MAX;
        }
    }

    let problem = QpProblem { h, c, a, b, lb, ub };
    let warm = memory.warm.as_ref().map(|(x, y)| (x, y));
    let sol = solve_qp_warm(&problem, warm, 4000, 1e-7);
    // The solver iterate can carry residual constraint violation around the
    // solver tolerance. Every corridor row owns a dedicated slack variable,
    // so feasibility is restored exactly: clamp q̇ to its box and lift each
    // slack to the residual of its own rows. Given q̇ this is also the
    // slack-optimal completion, since the slack penalty is monotone.
    let mut x = sol.x.clone();
    for i in 0..2 * DOF {
        x[i] = x[i].max(problem.lb[i]).min(problem.ub[i]);
    }
    for i in 2 * DOF..n {
        x[i] = 0.0;
    }
    for row in 0..problem.a.nrows() {
        let scol =
            2 * DOF + (row / (2 * SLACK_PER_ARM)) * SLACK_PER_ARM + (row % (2 * SLACK_PER_ARM)) / 2;
        let mut lhs = 0.0;
        for j in 0..2 * DOF {
            lhs += problem.a[(row, j)] * x[j];
        }
        let need = lhs - problem.b[row];
        if need > x[scol] {
            x[scol] = need.min(SLACK_MAX);
        }
    }
    let ok = sol.converged && problem.violation(&x) <= STEP_VERIFY_TOL;
    if ok {
        memory.warm = Some((sol.x.clone(), sol.y.clone()));
        let mut qd = SVector::<f64, 14>::zeros();
        let mut s = SVector::<f64, 12>::zeros();
        for i in 0..14 {
            qd[i] = x[i];
        }
        for i in 0..12 {
            s[i] = x[14 + i];
        }
        ControlStep { joint_velocity: qd, slack: s, achieved_target: achieved, feasible: true }
    } else {
        memory.warm = None;
        ControlStep {
            joint_velocity: SVector::zeros(),
            slack: SVector::zeros(),
            achieved_target: achieved,
            feasible: false,
        }
    }
}

/// Integrate a control step: q ← q + Δt·q̇, clamped to joint limits.
pub fn apply_step(cell: &Workcell, state: &mut DualArmState, step: &ControlStep, dt: f64) {
    for (k, side) in [ArmSide::Left, ArmSide::Right].into_iter().enumerate() {
        let model = cell.arm(side);
        let q = match side {
            ArmSide::Left => &mut state.q_left,
            ArmSide::Right => &mut state.q_right,
        };
        for i in 0..DOF {
            q.0[i] = (q.0[i] + dt * step.joint_velocity[k * DOF + i])
                .clamp(model.joint_lower[i], model.joint_upper[i]);
        }
    }
    state.velocity = step.joint_velocity;
}

/// One phase of execution: per-arm reference paths (None = hold position)
/// plus the gripper carrying the object, as an end-effector→object offset.
#[derive(Debug, Clone)]
pub struct SegmentPlan {
    pub left: Option<ReferencePath>,
    pub right: Option<ReferencePath>,
    pub carrier: Option<(ArmSide, Pose)>,
}

#[derive(Debug, Clone)]
pub struct ExecutionPlan {
    pub segments: Vec<SegmentPlan>,
    pub object_start: Pose,
}

#[derive(Debug, Clone)]
pub struct TrajectoryStep {
    pub time: f64,
    pub joints: SVector<f64, 14>,
    pub ee_left: Pose,
    pub ee_right: Pose,
    pub sigma_left: f64,
    pub sigma_right: f64,
    /// Smallest distance of any joint to its position limit (rad).
    pub limit_distance: f64,
    /// End-effector clearance to the nearest obstacle surface.
    pub clearance: f64,
}

#[derive(Debug, Clone)]
pub struct ExecutionMetrics {
    pub steps: usize,
    pub flagged_steps: usize,
    pub min_sigma: f64,
    pub min_limit_distance: f64,
    pub min_clearance: f64,
    pub ee_path_length: [f64; 2],
    pub aborted: bool,
}

impl ExecutionMetrics {
    fn empty() -> Self {
        ExecutionMetrics {
            steps: 0,
            flagged_steps: 0,
            min_sigma: f64::INFINITY,
            min_limit_distance: f64::INFINITY,
            min_clearance: f64::INFINITY,
            ee_path_length: [0.0, 0.0],
            aborted: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExecutionOutcome {
    pub trajectory: Vec<TrajectoryStep>,
    pub metrics: ExecutionMetrics,
    pub final_state: DualArmState,
    pub object_pose: Pose,
}

fn limit_distance(model: &ArmModel, q: &JointConfig) -> f64 {
    (0..DOF)
        .map(|i| (q.0[i] - model.joint_lower[i]).min(model.joint_upper[i] - q.0[i]))
        .fold(f64::INFINITY, f64::min)
}

/// Steps after the reference index is exhausted to settle on the final pose.
const SETTLE_STEPS: usize = 400;
const SETTLE_POS_TOL: f64 = 5e-4;
const SETTLE_ROT_TOL: f64 = 5e-3;

/// Run the controller along every segment with synchronized per-arm phase;
/// grippers attach/detach the object at segment boundaries via `carrier`.
/// Aborts after [`MAX_FLAGGED_STREAK`] consecutive infeasible steps.
pub fn execute_path(
    cell: &Workcell,
    start: DualArmState,
    plan: &ExecutionPlan,
    obstacles: &ObstacleSet,
    gains: &PlannerGains,
) -> ExecutionOutcome {
    let mut state = start;
    let mut trajectory = Vec::new();
    let mut metrics = ExecutionMetrics::empty();
    let mut object_pose = plan.object_start;
    let mut memory = SolverMemory::default();
    let mut time = 0.0;
    let mut streak = 0usize;
    let mut prev_ee = [
        forward_kinematics(cell.arm(ArmSide::Left), &state.q_left),
        forward_kinematics(cell.arm(ArmSide::Right), &state.q_right),
    ];

    'segments: for seg in &plan.segments {
        let hold_left = ArmTarget::hold(&prev_ee[0]);
        let hold_right = ArmTarget::hold(&prev_ee[1]);
        let phase_len = seg
            .left
            .as_ref()
            .map(|p| p.len())
            .unwrap_or(0)
            .max(seg.right.as_ref().map(|p| p.len()).unwrap_or(0));
        if phase_len == 0 {
            continue;
        }
        for i in 0..phase_len + SETTLE_STEPS {
            let t_left = seg
                .left
                .as_ref()
                .map(|p| ArmTarget::from_path(p, i))
                .unwrap_or_else(|| hold_left.clone());
            let t_right = seg
                .right
                .as_ref()
                .map(|p| ArmTarget::from_path(p, i))
                .unwrap_or_else(|| hold_right.clone());
            let targets = [t_left, t_right];
            let step = control_step(cell, &state, &targets, obstacles, gains, &mut memory);
            if step.feasible {
                streak = 0;
            } else {
                streak += 1;
                metrics.flagged_steps += 1;
                if streak > MAX_FLAGGED_STREAK {
                    metrics.aborted = true;
                    break 'segments;
                }
            }
            apply_step(cell, &mut state, &step, gains.dt);
            time += gains.dt;

            let ee_l = forward_kinematics(cell.arm(ArmSide::Left), &state.q_left);
            let ee_r = forward_kinematics(cell.arm(ArmSide::Right), &state.q_right);
            metrics.ee_path_length[0] +=
                (ee_l.translation.vector - prev_ee[0].translation.vector).norm();
            metrics.ee_path_length[1] +=
                (ee_r.translation.vector - prev_ee[1].translation.vector).norm();
            prev_ee = [ee_l, ee_r];
            if let Some((side, offset)) = &seg.carrier {
                let ee = match side {
                    ArmSide::Left => &ee_l,
                    ArmSide::Right => &ee_r,
                };
                object_pose = ee * offset;
            }

            let s_l = sigma_min(cell.arm(ArmSide::Left), &state.q_left);
            let s_r = sigma_min(cell.arm(ArmSide::Right), &state.q_right);
            let ld = limit_distance(cell.arm(ArmSide::Left), &state.q_left)
                .min(limit_distance(cell.arm(ArmSide::Right), &state.q_right));
            let cl = obstacles
                .clearance(&ee_l.translation.vector)
                .min(obstacles.clearance(&ee_r.translation.vector));
            metrics.min_sigma = metrics.min_sigma.min(s_l).min(s_r);
            metrics.min_limit_distance = metrics.min_limit_distance.min(ld);
            metrics.min_clearance = metrics.min_clearance.min(cl);
            metrics.steps += 1;
            let mut joints = SVector::<f64, 14>::zeros();
            for j in 0..DOF {
                joints[j] = state.q_left.0[j];
                joints[DOF + j] = state.q_right.0[j];
            }
            trajectory.push(TrajectoryStep {
                time,
                joints,
                ee_left: ee_l,
                ee_right: ee_r,
                sigma_left: s_l,
                sigma_right: s_r,
                limit_distance: ld,
                clearance: cl,
            });

            // settle phase: stop once both arms reach their final targets
            if i + 1 >= phase_len {
                let done = |path: &Option<ReferencePath>, ee: &Pose| match path {
                    Some(p) => {
                        let err = pose_error(ee, &p.pose(p.len() - 1));
                        err.fixed_rows::<3>(0).norm() < SETTLE_POS_TOL
                            && err.fixed_rows::<3>(3).norm() < SETTLE_ROT_TOL
                    }
                    None => true,
                };
                if done(&seg.left, &ee_l) && done(&seg.right, &ee_r) {
                    break;
                }
            }
        }
    }
    ExecutionOutcome { trajectory, metrics, final_state: state, object_pose }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{pose_from_parts, sclerp};
    use nalgebra::UnitQuaternion;

    fn test_cell() -> Workcell {
        Workcell::pair(&ArmModel::franka(), 0.9)
    }

    fn bent_config() -> JointConfig {
        JointConfig(JointVec::from_column_slice(&[0.3, -0.6, 0.25, -1.8, 0.2, 1.7, 0.4]))
    }

    #[test]
    fn sigma_gradient_matches_finite_differences() {
        let model = ArmModel::franka();
        for seed in 0..5 {
            let mut q = bent_config();
            for i in 0..DOF {
                q.0[i] += 0.07 * ((seed * 7 + i * 3 + 1) as f64).sin();
            }
            let analytic = min_singular_jacobian(&model, &q);
            let fd = fd_sigma_gradient(&model, &q);
            assert!(
                (analytic - fd).norm() < 1e-4,
                "seed {seed}: analytic {analytic:?} fd {fd:?}"
            );
        }
    }

    #[test]
    fn degenerate_gap_falls_back_to_finite_differences() {
        let model = ArmModel::franka();
        let q = bent_config();
        // force the fallback by declaring every gap degenerate
        let fallback = min_singular_jacobian_gap(&model, &q, f64::INFINITY);
        assert!(fallback.iter().all(|v| v.is_finite()));
        assert!((fallback - fd_sigma_gradient(&model, &q)).norm() < 1e-12);
    }

    #[test]
    fn gradient_direction_increases_sigma() {
        let model = ArmModel::franka();
        let q = bent_config();
        let g = min_singular_jacobian(&model, &q);
        let base = sigma_min(&model, &q);
        let step = 1e-4 / g.norm();
        let ahead = JointConfig(q.0 + g * step);
        assert!(sigma_min(&model, &ahead) > base);
    }

    #[test]
    fn apf_passthrough_without_obstacles() {
        let gains = PlannerGains::default();
        let target = canonical_dq(&dq_from_pose(&Pose::translation(0.5, 0.1, 0.4)));
        let out = apf_modify(&target, &Vector3::new(0.3, 0.0, 0.4), &ObstacleSet::empty(), &gains);
        assert_eq!(out.real, target.real);
        assert_eq!(out.dual, target.dual);

        // obstacle outside its influence radius also leaves it unchanged
        let far = ObstacleSet { spheres: alloc::vec![(Vector3::new(5.0, 0.0, 0.0), 0.05, 0.15)] };
        let out = apf_modify(&target, &Vector3::new(0.3, 0.0, 0.4), &far, &gains);
        assert_eq!(out.real, target.real);
    }

    #[test]
    fn apf_pushes_away_from_obstacle() {
        let gains = PlannerGains::default();
        let target = canonical_dq(&dq_from_pose(&Pose::translation(0.5, 0.0, 0.4)));
        let center = Vector3::new(0.4, 0.0, 0.4);
        let obs = ObstacleSet { spheres: alloc::vec![(center, 0.05, 0.15)] };
        let ee = Vector3::new(0.32, 0.0, 0.4); // 8 cm from center, inside influence
        let out = apf_modify(&target, &ee, &obs, &gains);
        let shift = dq_to_pose(&out).translation.vector - Vector3::new(0.5, 0.0, 0.4);
        let away = ee - center;
        assert!(shift.norm() > 0.0);
        assert!(shift.cross(&away).norm() < 1e-12, "shift not parallel to (ee − center)");
        assert!(shift.dot(&away) > 0.0, "shift points toward the obstacle");
        // rotation preserved, result unit
        assert!((out.real.norm() - 1.0).abs() < 1e-12);
        assert!(out.real.dot(&out.dual).abs() < 1e-12);

        // repulsion magnitude shrinks with distance inside the influence zone
        let f_near = obs.repulsion(&Vector3::new(0.33, 0.0, 0.4)).norm();
        let f_far = obs.repulsion(&Vector3::new(0.31, 0.0, 0.4)).norm();
        let f_out = obs.repulsion(&Vector3::new(0.2, 0.0, 0.4)).norm();
        assert!(f_near > f_far);
        assert!(f_out == 0.0);
    }

    fn ee_pose(cell: &Workcell, side: ArmSide, q: &JointConfig) -> Pose {
        forward_kinematics(cell.arm(side), q)
    }

    #[test]
    fn fixed_point_produces_zero_velocity() {
        let cell = test_cell();
        let q = bent_config();
        let state = DualArmState::new(q, q);
        let targets = [
            ArmTarget::hold(&ee_pose(&cell, ArmSide::Left, &state.q_left)),
            ArmTarget::hold(&ee_pose(&cell, ArmSide::Right, &state.q_right)),
        ];
        let mut mem = SolverMemory::default();
        let step = control_step(
            &cell,
            &state,
            &targets,
            &ObstacleSet::empty(),
            &PlannerGains::default(),
            &mut mem,
        );
        assert!(step.feasible);
        assert!(step.joint_velocity.norm() < 1e-6, "‖q̇‖ = {}", step.joint_velocity.norm());
        assert!(step.slack.norm() < 1e-6);
    }

    #[test]
    fn tracking_error_decreases_monotonically() {
        let cell = test_cell();
        let q = bent_config();
        let mut state = DualArmState::new(q, q);
        let gains = PlannerGains::default();
        let mut goal = ee_pose(&cell, ArmSide::Left, &state.q_left);
        goal.translation.vector += Vector3::new(0.001, 0.0, 0.0);
        let hold_r = ArmTarget::hold(&ee_pose(&cell, ArmSide::Right, &state.q_right));
        let mut mem = SolverMemory::default();
        let mut errors = Vec::new();
        for _ in 0..60 {
            let targets = [ArmTarget::hold(&goal), hold_r.clone()];
            let step =
                control_step(&cell, &state, &targets, &ObstacleSet::empty(), &gains, &mut mem);
            assert!(step.feasible);
            apply_step(&cell, &mut state, &step, gains.dt);
            let err = pose_error(&ee_pose(&cell, ArmSide::Left, &state.q_left), &goal).norm();
            errors.push(err);
        }
        for w in errors.windows(2) {
            assert!(w[1] < w[0] + 1e-12, "error not decreasing: {} -> {}", w[0], w[1]);
        }
        assert!(errors.last().unwrap() < &1e-4);
    }

    #[test]
    fn tight_corridor_uses_more_slack() {
        let cell = test_cell();
        let q = bent_config();
        let state = DualArmState::new(q, q);
        let gains = PlannerGains::default();
        let mut goal = ee_pose(&cell, ArmSide::Left, &state.q_left);
        goal.translation.vector += Vector3::new(0.0, 0.05, 0.0); // beyond one-step reach
        let hold_r = ArmTarget::hold(&ee_pose(&cell, ArmSide::Right, &state.q_right));
        let run = |width: f64| {
            let target = ArmTarget {
                pose: canonical_dq(&dq_from_pose(&goal)),
                half_width: Vector6::from_element(width),
            };
            let mut mem = SolverMemory::default();
            let step = control_step(
                &cell,
                &state,
                &[target, hold_r.clone()],
                &ObstacleSet::empty(),
                &gains,
                &mut mem,
            );
            assert!(step.feasible);
            step.slack.norm()
        };
        let tight = run(1e-3);
        let loose = run(0.2);
        assert!(tight > loose + 1e-6, "tight {tight} loose {loose}");
        assert!(loose < 1e-9);
    }

    fn line_reference(cell: &Workcell, side: ArmSide, q: &JointConfig, delta: Vector3<f64>, n: usize)
        -> ReferencePath
    {
        let start = forward_kinematics(cell.arm(side), q);
        let mut goal = start;
        goal.translation.vector += delta;
        let a = canonical_dq(&dq_from_pose(&start));
        let b = canonical_dq(&dq_from_pose(&goal));
        let poses: Vec<UnitDualQuat> = (0..n)
            .map(|i| sclerp(&a, &b, i as f64 / (n - 1) as f64).unwrap())
            .collect();
        ReferencePath { poses, covariances: alloc::vec![Vector6::from_element(1e-4); n] }
    }

    #[test]
    fn empty_plan_yields_empty_trajectory() {
        let cell = test_cell();
        let plan = ExecutionPlan { segments: Vec::new(), object_start: Pose::identity() };
        let out = execute_path(
            &cell,
            DualArmState::new(bent_config(), bent_config()),
            &plan,
            &ObstacleSet::empty(),
            &PlannerGains::default(),
        );
        assert!(out.trajectory.is_empty());
        assert_eq!(out.metrics.steps, 0);
        assert_eq!(out.metrics.ee_path_length, [0.0, 0.0]);
        assert!(!out.metrics.aborted);
    }

    #[test]
    fn straight_reach_hits_goal_tolerance() {
        let cell = test_cell();
        let q = bent_config();
        let path = line_reference(&cell, ArmSide::Left, &q, Vector3::new(0.08, 0.05, -0.04), 120);
        let goal = path.pose(119);
        let plan = ExecutionPlan {
            segments: alloc::vec![SegmentPlan { left: Some(path), right: None, carrier: None }],
            object_start: Pose::identity(),
        };
        let out = execute_path(
            &cell,
            DualArmState::new(q, q),
            &plan,
            &ObstacleSet::empty(),
            &PlannerGains::default(),
        );
        assert!(!out.metrics.aborted);
        let final_ee = ee_pose(&cell, ArmSide::Left, &out.final_state.q_left);
        let err = pose_error(&final_ee, &goal);
        assert!(err.fixed_rows::<3>(0).norm() < 2e-3, "position error {}", err.norm());
        assert!(err.fixed_rows::<3>(3).norm() < 0.02);
        // the idle arm stays put
        assert!((out.final_state.q_right.0 - q.0).norm() < 1e-6);
    }

    #[test]
    fn manipulability_term_keeps_sigma_higher() {
        let cell = test_cell();
        let q = bent_config();
        // drive toward a stretched pose where σ_min naturally degrades
        let path = line_reference(&cell, ArmSide::Left, &q, Vector3::new(0.16, 0.0, 0.10), 150);
        let plan = ExecutionPlan {
            segments: alloc::vec![SegmentPlan { left: Some(path), right: None, carrier: None }],
            object_start: Pose::identity(),
        };
        let run = |kappa2: f64| {
            let gains = PlannerGains { kappa2, ..PlannerGains::default() };
            execute_path(&cell, DualArmState::new(q, q), &plan, &ObstacleSet::empty(), &gains)
                .metrics
                .min_sigma
        };
        let with = run(0.05);
        let without = run(0.0);
        assert!(with >= without - 1e-12, "κ₂>0 min σ {with} < κ₂=0 min σ {without}");
    }

    #[test]
    fn obstacle_on_path_keeps_positive_clearance() {
        let cell = test_cell();
        let q = bent_config();
        let start = ee_pose(&cell, ArmSide::Left, &q);
        let delta = Vector3::new(0.12, 0.0, 0.0);
        let center = start.translation.vector + 0.5 * delta;
        let obstacles = ObstacleSet { spheres: alloc::vec![(center, 0.05, 0.15)] };
        let mut path = line_reference(&cell, ArmSide::Left, &q, delta, 150);
        // corridor wide enough to allow the detour
        for cov in &mut path.covariances {
            *cov = Vector6::from_element(4e-2);
        }
        let plan = ExecutionPlan {
            segments: alloc::vec![SegmentPlan { left: Some(path), right: None, carrier: None }],
            object_start: Pose::identity(),
        };
        let gains = PlannerGains { epsilon_apf: 0.05, ..PlannerGains::default() };
        let out = execute_path(&cell, DualArmState::new(q, q), &plan, &obstacles, &gains);
        assert!(out.metrics.min_clearance > 0.0, "clearance {}", out.metrics.min_clearance);
    }

    #[test]
    fn carrier_moves_object_with_gripper() {
        let cell = test_cell();
        let q = bent_config();
        let start = ee_pose(&cell, ArmSide::Left, &q);
        let offset = pose_from_parts(
            Vector3::new(0.0, 0.0, 0.1),
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), core::f64::consts::PI),
        );
        let delta = Vector3::new(0.06, 0.0, 0.02);
        let path = line_reference(&cell, ArmSide::Left, &q, delta, 100);
        let plan = ExecutionPlan {
            segments: alloc::vec![SegmentPlan {
                left: Some(path),
                right: None,
                carrier: Some((ArmSide::Left, offset)),
            }],
            object_start: start * offset,
        };
        let out = execute_path(
            &cell,
            DualArmState::new(q, q),
            &plan,
            &ObstacleSet::empty(),
            &PlannerGains::default(),
        );
        let final_ee = ee_pose(&cell, ArmSide::Left, &out.final_state.q_left);
        let expected = final_ee * offset;
        assert!(pose_error(&out.object_pose, &expected).norm() < 1e-12);
        let goal_obj = {
            let mut g = start;
            g.translation.vector += delta;
            g * offset
        };
        assert!(pose_error(&out.object_pose, &goal_obj).norm() < 5e-3);
    }
}
