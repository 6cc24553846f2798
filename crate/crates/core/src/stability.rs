//! Grasp-wrench stability: can a (uni- or bi-manual) grasp configuration
//! resist a given external force?
//!
//! The check is a linear feasibility problem over per-gripper contact
//! wrenches expressed in each gripper's own frame: the grasp matrix maps
//! them to a resultant wrench about the object origin (world coordinates),
//! which must cancel the external force plus object gravity, subject to
//! per-gripper wrench boxes and joint-torque limits through the arm
//! Jacobians. Solved as a least-squares QP; feasible iff the optimal
//! equilibrium residual is below 1e-6.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, Matrix3, SVector, Vector3, Vector6};

use crate::arm::{geometric_jacobian, forward_kinematics, solve_ik, ArmModel, IkParams, JointConfig, JointVec};
use crate::qp::{solve_qp, QpProblem};
use crate::se3::{pose_error, Pose, Wrench};

pub const GRAVITY: f64 = 9.81;
/// Equilibrium residual below this is considered balanced (N, N·m).
pub const STABILITY_TOL: f64 = 1e-6;

pub type GraspVec = SVector<f64, 12>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ArmSide {
    Left,
    Right,
}

/// External force operation: a wrench expressed in `application_pose`'s
/// frame, acting at that pose.
#[derive(Debug, Clone, Copy)]
pub struct ForceVector {
    pub wrench: Wrench,
    pub application_pose: Pose,
}

impl ForceVector {
    pub fn gravity_only(object_pose: Pose) -> Self {
        ForceVector { wrench: Wrench::zero(), application_pose: object_pose }
    }
}

/// Object-relative gripper poses; either side may be absent.
#[derive(Debug, Clone, Copy)]
pub struct GraspConfig {
    pub left: Option<Pose>,
    pub right: Option<Pose>,
}

impl GraspConfig {
    pub fn bimanual(left: Pose, right: Pose) -> Self {
        GraspConfig { left: Some(left), right: Some(right) }
    }

    pub fn single(side: ArmSide, pose: Pose) -> Self {
        match side {
            ArmSide::Left => GraspConfig { left: Some(pose), right: None },
            ArmSide::Right => GraspConfig { left: None, right: Some(pose) },
        }
    }

    pub fn side(&self, side: ArmSide) -> Option<&Pose> {
        match side {
            ArmSide::Left => self.left.as_ref(),
            ArmSide::Right => self.right.as_ref(),
        }
    }

    pub fn arm_count(&self) -> usize {
        self.left.is_some() as usize + self.right.is_some() as usize
    }

    /// Stacked 12-vector `[p_L, rotvec_L, p_R, rotvec_R]`; absent sides are
    /// zero-filled so displacement norms between equal-support configs are
    /// well defined.
    pub fn encoded(&self) -> GraspVec {
        let mut v = GraspVec::zeros();
        if let Some(l) = &self.left {
            v.fixed_rows_mut::<6>(0).copy_from(&crate::se3::pose_to_vec6(l));
        }
        if let Some(r) = &self.right {
            v.fixed_rows_mut::<6>(6).copy_from(&crate::se3::pose_to_vec6(r));
        }
        v
    }

    /// Rebuild from an encoded vector, keeping the given support pattern.
    pub fn from_encoded(v: &GraspVec, left_active: bool, right_active: bool) -> Self {
        let dec = |off: usize| {
            crate::se3::pose_from_vec6(&Vector6::new(
                v[off], v[off + 1], v[off + 2], v[off + 3], v[off + 4], v[off + 5],
            ))
        };
        GraspConfig {
            left: left_active.then(|| dec(0)),
            right: right_active.then(|| dec(6)),
        }
    }
}

/// Full configuration: joint states of the present arms plus object pose.
/// `grasp` holds the object-relative gripper poses consistent with FK.
#[derive(Debug, Clone)]
pub struct CompositeConfig {
    pub q_left: Option<JointConfig>,
    pub q_right: Option<JointConfig>,
    pub object_pose: Pose,
    pub grasp: GraspConfig,
    /// Motion performance score of the underlying grasp candidates (mean
    /// over present arms); used for plan tie-breaking.
    pub omega: f64,
}

impl CompositeConfig {
    pub fn q(&self, side: ArmSide) -> Option<&JointConfig> {
        match side {
            ArmSide::Left => self.q_left.as_ref(),
            ArmSide::Right => self.q_right.as_ref(),
        }
    }
}

/// Axis-aligned bound on a gripper contact wrench in its own frame.
#[derive(Debug, Clone, Copy)]
pub struct WrenchBox {
    pub lower: Vector6<f64>,
    pub upper: Vector6<f64>,
}

impl WrenchBox {
    pub fn symmetric(force: f64, torque: f64) -> Self {
        let u = Vector6::new(force, force, force, torque, torque, torque);
        WrenchBox { lower: -u, upper: u }
    }

    pub fn valid(&self) -> bool {
        (0..6).all(|i| self.lower[i] <= self.upper[i])
    }
}

impl Default for WrenchBox {
    fn default() -> Self {
        WrenchBox::symmetric(30.0, 5.0)
    }
}

/// The dual-arm station: two arm models with mounted base poses and the
/// wrench capability of each gripper.
#[derive(Debug, Clone)]
pub struct Workcell {
    pub left: ArmModel,
    pub right: ArmModel,
    pub left_box: WrenchBox,
    pub right_box: WrenchBox,
}

impl Workcell {
    /// Two identical arms mounted `separation` apart along y, both facing +x.
    pub fn pair(arm: &ArmModel, separation: f64) -> Self {
        let half = separation / 2.0;
        Workcell {
            left: arm.clone().with_base(Pose::translation(0.0, half, 0.0)),
            right: arm.clone().with_base(Pose::translation(0.0, -half, 0.0)),
            left_box: WrenchBox::default(),
            right_box: WrenchBox::default(),
        }
    }

    pub fn arm(&self, side: ArmSide) -> &ArmModel {
        match side {
            ArmSide::Left => &self.left,
            ArmSide::Right => &self.right,
        }
    }

    pub fn wrench_box(&self, side: ArmSide) -> &WrenchBox {
        match side {
            ArmSide::Left => &self.left_box,
            ArmSide::Right => &self.right_box,
        }
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Express `wrench` (given in `pose`'s frame, acting at `pose`) as an
/// equivalent wrench about `reference` in world coordinates.
pub fn wrench_about(pose: &Pose, wrench: &Wrench, reference: &Vector3<f64>) -> Wrench {
    let r = pose.rotation.to_rotation_matrix();
    let f = r * wrench.force;
    let arm = pose.translation.vector - reference;
    Wrench { force: f, torque: r * wrench.torque + arm.cross(&f) }
}

/// Block matrix mapping stacked gripper-frame contact wrenches to the
/// resultant wrench about the object origin, world coordinates. One 6×6
/// adjoint block per present gripper, left before right.
pub fn grasp_matrix(grasp: &GraspConfig, object_pose: &Pose) -> DMatrix<f64> {
    let m = grasp.arm_count();
    let mut w = DMatrix::zeros(6, 6 * m);
    let mut col = 0;
    for rel in [&grasp.left, &grasp.right].into_iter().flatten() {
        let world = object_pose * rel;
        let rot = world.rotation.to_rotation_matrix();
        let lever = skew(&(world.translation.vector - object_pose.translation.vector));
        w.view_mut((0, col), (3, 3)).copy_from(rot.matrix());
        w.view_mut((3, col), (3, 3)).copy_from(&(lever * rot.matrix()));
        w.view_mut((3, col + 3), (3, 3)).copy_from(rot.matrix());
        col += 6;
    }
    w
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub feasible: bool,
    /// Gripper-frame contact wrenches, present arms only, left before right.
    pub gripper_wrenches: Vec<(ArmSide, Wrench)>,
    pub torques: Vec<(ArmSide, JointVec)>,
    /// Norm of the remaining equilibrium residual (N, N·m).
    pub residual: f64,
    pub diagnostic: Option<&'static str>,
}

impl StabilityReport {
    fn infeasible(diagnostic: &'static str) -> Self {
        StabilityReport {
            feasible: false,
            gripper_wrenches: Vec::new(),
            torques: Vec::new(),
            residual: f64::INFINITY,
            diagnostic: Some(diagnostic),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeasibilityResult {
    pub x: DVector<f64>,
    pub residual: f64,
    pub feasible: bool,
}

/// Minimize `‖Wx + b‖` subject to `lb ≤ x ≤ ub` and `|A x| ≤ a_bound`
/// row-wise. Feasible iff the optimal residual is below [`STABILITY_TOL`]
/// and all constraints re-verify.
pub fn wrench_feasibility(
    w: &DMatrix<f64>,
    b: &DVector<f64>,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
    a: &DMatrix<f64>,
    a_bound: &DVector<f64>,
) -> FeasibilityResult {
    let n = w.ncols();
    let rows = a.nrows();
    let mut a2 = DMatrix::zeros(2 * rows, n);
    a2.view_mut((0, 0), (rows, n)).copy_from(a);
    a2.view_mut((rows, 0), (rows, n)).copy_from(&(-a));
    let mut b2 = DVector::zeros(2 * rows);
    for i in 0..rows {
        b2[i] = a_bound[i];
        b2[rows + i] = a_bound[i];
    }
    let problem = QpProblem {
        h: w.transpose() * w * 2.0,
        c: w.transpose() * b * 2.0,
        a: a2,
        b: b2,
        lb: lb.clone(),
        ub: ub.clone(),
    };
    let sol = solve_qp(&problem, 20_000, 1e-9);
    let residual = (w * &sol.x + b).norm();
    let feasible = sol.converged && residual < STABILITY_TOL && problem.violation(&sol.x) <= 1e-9;
    FeasibilityResult { x: sol.x, residual, feasible }
}

/// Gravity wrench of the object about its own origin, world coordinates.
pub fn gravity_wrench(mass: f64) -> Wrench {
    Wrench { force: Vector3::new(0.0, 0.0, -mass * GRAVITY), torque: Vector3::zeros() }
}

/// Equilibrium check of `config` against `force` plus object gravity.
pub fn check_stability(
    config: &CompositeConfig,
    force: &ForceVector,
    object_mass: f64,
    cell: &Workcell,
) -> StabilityReport {
    let sides: Vec<ArmSide> = [ArmSide::Left, ArmSide::Right]
        .into_iter()
        .filter(|s| config.grasp.side(*s).is_some())
        .collect();
    if sides.is_empty() {
        return StabilityReport::infeasible("no arm grasping the object");
    }
    for s in &sides {
        if config.q(*s).is_none() {
            return StabilityReport::infeasible("grasp present without a joint configuration");
        }
    }

    let object_origin = config.object_pose.translation.vector;
    let w_ext = wrench_about(&force.application_pose, &force.wrench, &object_origin);
    let b_wrench = w_ext + gravity_wrench(object_mass);
    let b = DVector::from_row_slice(b_wrench.to_vector().as_slice());
    let w = grasp_matrix(&config.grasp, &config.object_pose);

    let n = 6 * sides.len();
    let mut lb = DVector::zeros(n);
    let mut ub = DVector::zeros(n);
    // Joint-torque rows: τ = Jᵀ · blockdiag(R, R) · x per arm.
    let mut a = DMatrix::zeros(7 * sides.len(), n);
    let mut a_bound = DVector::zeros(7 * sides.len());
    for (k, side) in sides.iter().enumerate() {
        let wb = cell.wrench_box(*side);
        lb.rows_mut(6 * k, 6).copy_from(&DVector::from_row_slice(wb.lower.as_slice()));
        ub.rows_mut(6 * k, 6).copy_from(&DVector::from_row_slice(wb.upper.as_slice()));

        let model = cell.arm(*side);
        let q = config.q(*side).unwrap();
        let jac = geometric_jacobian(model, q);
        let world = config.object_pose * config.grasp.side(*side).unwrap();
        let rot = world.rotation.to_rotation_matrix();
        let mut block = nalgebra::SMatrix::<f64, 6, 6>::zeros();
        block.fixed_view_mut::<3, 3>(0, 0).copy_from(rot.matrix());
        block.fixed_view_mut::<3, 3>(3, 3).copy_from(rot.matrix());
        let torque_map = jac.transpose() * block;
        for r in 0..7 {
            for c in 0..6 {
                a[(7 * k + r, 6 * k + c)] = torque_map[(r, c)];
            }
            a_bound[7 * k + r] = model.torque_limit[r];
        }
    }

    let result = wrench_feasibility(&w, &b, &lb, &ub, &a, &a_bound);
    let mut gripper_wrenches = Vec::new();
    let mut torques = Vec::new();
    for (k, side) in sides.iter().enumerate() {
        let xk = Vector6::from_fn(|i, _| result.x[6 * k + i]);
        gripper_wrenches.push((*side, Wrench::from_vector(&xk)));
        let tau = a.view((7 * k, 0), (7, n)) * &result.x;
        torques.push((*side, JointVec::from_fn(|i, _| tau[i])));
    }
    StabilityReport {
        feasible: result.feasible,
        gripper_wrenches,
        torques,
        residual: result.residual,
        diagnostic: None,
    }
}

/// A grasp candidate (world EE pose) with its map score.
#[derive(Debug, Clone, Copy)]
pub struct ScoredGrasp {
    pub pose: Pose,
    pub omega: f64,
}

/// IK a world grasp pose for one arm, seeded deterministically.
fn ik_for(model: &ArmModel, target: &Pose) -> Option<JointConfig> {
    let seed = model.mid_config();
    solve_ik(model, target, &seed, None, &IkParams::default())
}

fn build_composite(
    cell: &Workcell,
    object_pose: &Pose,
    left: Option<&ScoredGrasp>,
    right: Option<&ScoredGrasp>,
) -> Option<CompositeConfig> {
    let mut q_left = None;
    let mut q_right = None;
    let mut omega_sum = 0.0;
    let mut omega_n = 0;
    if let Some(g) = left {
        let q = ik_for(&cell.left, &g.pose)?;
        let err = pose_error(&forward_kinematics(&cell.left, &q), &g.pose);
        if err.norm() > 1e-2 {
            return None;
        }
        q_left = Some(q);
        omega_sum += g.omega;
        omega_n += 1;
    }
    if let Some(g) = right {
        let q = ik_for(&cell.right, &g.pose)?;
        let err = pose_error(&forward_kinematics(&cell.right, &q), &g.pose);
        if err.norm() > 1e-2 {
            return None;
        }
        q_right = Some(q);
        omega_sum += g.omega;
        omega_n += 1;
    }
    let inv = object_pose.inverse();
    let grasp = GraspConfig {
        left: left.map(|g| inv * g.pose),
        right: right.map(|g| inv * g.pose),
    };
    Some(CompositeConfig {
        q_left,
        q_right,
        object_pose: *object_pose,
        grasp,
        omega: if omega_n > 0 { omega_sum / omega_n as f64 } else { 0.0 },
    })
}

/// Collect up to `max_per_force` configurations that resist `force`, trying
/// bimanual candidate pairs in rank order first, then unimanual grasps.
pub fn enumerate_stable_configs(
    force: &ForceVector,
    left_candidates: &[ScoredGrasp],
    right_candidates: &[ScoredGrasp],
    object_pose: &Pose,
    object_mass: f64,
    cell: &Workcell,
    max_per_force: usize,
) -> Vec<CompositeConfig> {
    let mut out = Vec::new();
    // Bimanual pairs ordered by combined rank (i + j), then left rank.
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for i in 0..left_candidates.len() {
        for j in 0..right_candidates.len() {
            pairs.push((i, j));
        }
    }
    pairs.sort_by_key(|&(i, j)| (i + j, i, j));
    for (i, j) in pairs {
        if out.len() >= max_per_force {
            return out;
        }
        if let Some(config) =
            build_composite(cell, object_pose, Some(&left_candidates[i]), Some(&right_candidates[j]))
        {
            if check_stability(&config, force, object_mass, cell).feasible {
                out.push(config);
            }
        }
    }
    for (grasps, is_left) in [(left_candidates, true), (right_candidates, false)] {
        for g in grasps {
            if out.len() >= max_per_force {
                return out;
            }
            let (l, r) = if is_left { (Some(g), None) } else { (None, Some(g)) };
            if let Some(config) = build_composite(cell, object_pose, l, r) {
                if check_stability(&config, force, object_mass, cell).feasible {
                    out.push(config);
                }
            }
        }
    }
    out
}
