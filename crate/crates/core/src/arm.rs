//! 7-DOF serial arm kinematics: modified-DH forward kinematics, geometric
//! Jacobian, manipulability, joint-limit proximity, swivel-angle redundancy
//! and damped-least-squares inverse kinematics.

#[allow(unused_imports)] // f64 math comes from num-traits under no_std
use num_traits::Float;
use alloc::vec::Vec;
use nalgebra::{Matrix6, SMatrix, SVector, UnitQuaternion, Vector3, Vector6};

use crate::se3::{pose_error, pose_from_parts, Pose, Wrench};

pub const DOF: usize = 7;

pub type JointVec = SVector<f64, DOF>;
pub type Jacobian = SMatrix<f64, 6, DOF>;

/// One modified-DH row: link length `a` (m), offset `d` (m), twist `alpha`
/// (rad) and a constant joint angle offset (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DhRow {
    pub a: f64,
    pub d: f64,
    pub alpha: f64,
    pub theta_offset: f64,
}

impl DhRow {
    pub const fn new(a: f64, d: f64, alpha: f64, theta_offset: f64) -> Self {
        DhRow { a, d, alpha, theta_offset }
    }
}

/// Kinematic and limit description of one 7-DOF arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmModel {
    pub dh: [DhRow; DOF],
    pub base_pose: Pose,
    /// Fixed flange/tool transform applied after the last joint.
    pub ee_offset: Pose,
    pub joint_lower: JointVec,
    pub joint_upper: JointVec,
    pub velocity_limit: JointVec,
    pub accel_limit: JointVec,
    pub torque_limit: JointVec,
}

/// A joint-space configuration of one arm (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointConfig(pub JointVec);

impl JointConfig {
    pub fn zeros() -> Self {
        JointConfig(JointVec::zeros())
    }
}

impl ArmModel {
    /// Published modified-DH table and datasheet limits of the Franka Emika
    /// Panda, flange frame included as the tool offset.
    pub fn franka() -> Self {
        use core::f64::consts::FRAC_PI_2;
        ArmModel {
            dh: [
                DhRow::new(0.0, 0.333, 0.0, 0.0),
                DhRow::new(0.0, 0.0, -FRAC_PI_2, 0.0),
                DhRow::new(0.0, 0.316, FRAC_PI_2, 0.0),
                DhRow::new(0.0825, 0.0, FRAC_PI_2, 0.0),
                DhRow::new(-0.0825, 0.384, -FRAC_PI_2, 0.0),
                DhRow::new(0.0, 0.0, FRAC_PI_2, 0.0),
                DhRow::new(0.088, 0.0, FRAC_PI_2, 0.0),
            ],
            base_pose: Pose::identity(),
            ee_offset: pose_from_parts(Vector3::new(0.0, 0.0, 0.107), UnitQuaternion::identity()),
            joint_lower: JointVec::from_column_slice(&[
                -2.8973, -1.7628, -2.8973, -3.0718, -2.8973, -0.0175, -2.8973,
            ]),
            joint_upper: JointVec::from_column_slice(&[
                2.8973, 1.7628, 2.8973, -0.0698, 2.8973, 3.7525, 2.8973,
            ]),
            velocity_limit: JointVec::from_column_slice(&[
                2.175, 2.175, 2.175, 2.175, 2.61, 2.61, 2.61,
            ]),
            accel_limit: JointVec::from_column_slice(&[15.0, 7.5, 10.0, 12.5, 15.0, 20.0, 20.0]),
            torque_limit: JointVec::from_column_slice(&[87.0, 87.0, 87.0, 87.0, 12.0, 12.0, 12.0]),
        }
    }

    pub fn with_base(mut self, base: Pose) -> Self {
        self.base_pose = base;
        self
    }

    pub fn limits_valid(&self) -> bool {
        (0..DOF).all(|j| self.joint_lower[j] < self.joint_upper[j])
            && self.velocity_limit.iter().all(|v| v.is_finite() && *v > 0.0)
            && self.torque_limit.iter().all(|v| v.is_finite() && *v > 0.0)
    }

    /// Midpoint of the joint range, a neutral IK seed.
    pub fn mid_config(&self) -> JointConfig {
        JointConfig((self.joint_lower + self.joint_upper) * 0.5)
    }

    pub fn within_bounds(&self, q: &JointConfig) -> bool {
        (0..DOF).all(|j| q.0[j] >= self.joint_lower[j] && q.0[j] <= self.joint_upper[j])
    }

    pub fn clamp(&self, q: &JointConfig) -> JointConfig {
        let mut out = q.0;
        for j in 0..DOF {
            out[j] = out[j].max(self.joint_lower[j]).min(self.joint_upper[j]);
        }
        JointConfig(out)
    }

    /// Conservative reach radius from the base, used for fast rejection.
    pub fn reach_radius(&self) -> f64 {
        let links: f64 = self.dh.iter().map(|r| r.a.abs() + r.d.abs()).sum();
        links + self.ee_offset.translation.vector.norm()
    }
}

fn dh_transform(row: &DhRow, theta: f64) -> Pose {
    // Modified (Craig) convention: RotX(alpha) · TransX(a) · RotZ(theta) · TransZ(d).
    let th = theta + row.theta_offset;
    let (sa, ca) = (row.alpha.sin(), row.alpha.cos());
    let rot = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), row.alpha)
        * UnitQuaternion::from_axis_angle(&Vector3::z_axis(), th);
    let trans = Vector3::new(row.a, -row.d * sa, row.d * ca);
    pose_from_parts(trans, rot)
}

/// World poses of each joint frame (the frame that joint `i` rotates about
/// lies on its z-axis), followed by the end-effector pose.
pub fn joint_frames(model: &ArmModel, q: &JointConfig) -> ([Pose; DOF], Pose) {
    let mut frames = [Pose::identity(); DOF];
    let mut acc = model.base_pose;
    for i in 0..DOF {
        acc *= dh_transform(&model.dh[i], q.0[i]);
        frames[i] = acc;
    }
    (frames, acc * model.ee_offset)
}

/// End-effector pose in the world frame.
pub fn forward_kinematics(model: &ArmModel, q: &JointConfig) -> Pose {
    joint_frames(model, q).1
}

/// 6×7 geometric Jacobian: column `i` is `(z_i × (p_ee − p_i); z_i)`.
pub fn geometric_jacobian(model: &ArmModel, q: &JointConfig) -> Jacobian {
    let (frames, ee) = joint_frames(model, q);
    let p_ee = ee.translation.vector;
    let mut jac = Jacobian::zeros();
    for i in 0..DOF {
        let z = frames[i].rotation * Vector3::z();
        let p = frames[i].translation.vector;
        let lin = z.cross(&(p_ee - p));
        for r in 0..3 {
            jac[(r, i)] = lin[r];
            jac[(r + 3, i)] = z[r];
        }
    }
    jac
}

/// Manipulability `√det(JJᵀ)`; zero at singularities.
pub fn manipulability(model: &ArmModel, q: &JointConfig) -> f64 {
    let j = geometric_jacobian(model, q);
    let jjt: Matrix6<f64> = &j * j.transpose();
    jjt.determinant().max(0.0).sqrt()
}

/// Default weight constant in the joint-limit proximity factor: `4^n`, so a
/// configuration at all joint midpoints scores `1 − e⁻¹`.
pub fn default_proximity_k() -> f64 {
    4.0f64.powi(DOF as i32)
}

/// Joint-limit proximity factor in `[0, 1)`: zero on the bound surface,
/// approaching one deep inside the range.
pub fn joint_limit_proximity(model: &ArmModel, q: &JointConfig, k: f64) -> f64 {
    let mut prod = 1.0;
    for j in 0..DOF {
        let lo = model.joint_lower[j];
        let hi = model.joint_upper[j];
        let num = (q.0[j] - lo) * (hi - q.0[j]);
        if num <= 0.0 {
            return 0.0;
        }
        prod *= num / ((hi - lo) * (hi - lo));
    }
    1.0 - (-k * prod).exp()
}

/// Joint torques resisting an end-effector wrench: `τ = Jᵀ f`.
pub fn joint_torques(model: &ArmModel, q: &JointConfig, ee_wrench: &Wrench) -> JointVec {
    let j = geometric_jacobian(model, q);
    j.transpose() * ee_wrench.to_vector()
}

/// Swivel angle: rotation of the elbow about the shoulder–wrist axis,
/// measured from the projection of world −z. `None` when the geometry is
/// degenerate (wrist on the shoulder, or elbow on the axis).
pub fn swivel_angle(model: &ArmModel, q: &JointConfig) -> Option<f64> {
    let (frames, _) = joint_frames(model, q);
    let shoulder = frames[1].translation.vector;
    let elbow = frames[3].translation.vector;
    let wrist = frames[5].translation.vector;
    let axis = wrist - shoulder;
    let n = axis.norm();
    if n < 1e-9 {
        return None;
    }
    let n = axis / n;
    let v = elbow - shoulder;
    let v_perp = v - n * v.dot(&n);
    if v_perp.norm() < 1e-9 {
        return None;
    }
    let mut reference = -Vector3::z() - n * (-Vector3::z()).dot(&n);
    if reference.norm() < 1e-6 {
        reference = Vector3::x() - n * Vector3::x().dot(&n);
    }
    let r = reference.normalize();
    let v = v_perp.normalize();
    Some(r.cross(&v).dot(&n).atan2(r.dot(&v)))
}

/// Wrap an angle to `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * core::f64::consts::PI;
    let mut x = a % two_pi;
    if x > core::f64::consts::PI {
        x -= two_pi;
    } else if x <= -core::f64::consts::PI {
        x += two_pi;
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkParams {
    pub max_iters: usize,
    pub pos_tol: f64,
    pub rot_tol: f64,
    /// DLS damping λ².
    pub damping: f64,
    /// Per-joint step clamp (rad/iteration).
    pub step_clamp: f64,
    /// Gain of the swivel-tracking nullspace term.
    pub nullspace_gain: f64,
    /// Convergence tolerance on the swivel angle when a target is given (rad).
    pub swivel_tol: f64,
}

impl Default for IkParams {
    fn default() -> Self {
        IkParams {
            max_iters: 200,
            pos_tol: 1e-4,
            rot_tol: 1e-3,
            damping: 1e-4,
            step_clamp: 0.2,
            nullspace_gain: 1.0,
            swivel_tol: 0.05,
        }
    }
}

impl IkParams {
    /// Short-budget variant used in bulk workspace sweeps.
    pub fn fast() -> Self {
        IkParams { max_iters: 60, ..IkParams::default() }
    }
}

/// Damped-least-squares IK with joint limits enforced by projection.
///
/// When `swivel` is given, a nullspace term drives the arm's swivel angle
/// toward it. Non-convergence yields `None`.
pub fn solve_ik(
    model: &ArmModel,
    target: &Pose,
    seed: &JointConfig,
    swivel: Option<f64>,
    params: &IkParams,
) -> Option<JointConfig> {
    let mut q = model.clamp(seed);
    for _ in 0..=params.max_iters {
        let current = forward_kinematics(model, &q);
        let err = pose_error(&current, target);
        let pos_err = Vector3::new(err[0], err[1], err[2]).norm();
        let rot_err = Vector3::new(err[3], err[4], err[5]).norm();
        if pos_err < params.pos_tol && rot_err < params.rot_tol {
            match swivel {
                None => return Some(q),
                Some(theta_des) => {
                    if let Some(actual) = swivel_angle(model, &q) {
                        if wrap_angle(actual - theta_des).abs() < params.swivel_tol {
                            return Some(q);
                        }
                    }
                }
            }
        }
        let jac = geometric_jacobian(model, &q);
        let jjt: Matrix6<f64> = &jac * jac.transpose() + Matrix6::identity() * params.damping;
        let chol = jjt.cholesky()?;
        let y: Vector6<f64> = chol.solve(&err);
        let mut dq: JointVec = jac.transpose() * y;

        if let Some(theta_des) = swivel {
            if let Some(grad) = swivel_gradient(model, &q, theta_des) {
                // Project the swivel descent step into the task nullspace.
                let step: JointVec = grad * (-params.nullspace_gain);
                let jn: Vector6<f64> = &jac * step;
                let yz: Vector6<f64> = chol.solve(&jn);
                let mut null_step: JointVec = step - jac.transpose() * yz;
                let swivel_err = swivel_angle(model, &q)
                    .map(|s| wrap_angle(s - theta_des).abs())
                    .unwrap_or(0.0);
                if null_step.norm() < 1e-7 && swivel_err > params.swivel_tol {
                    // Symmetric posture: the gradient vanishes on a saddle.
                    // Kick along the kinematic nullspace to break the symmetry.
                    null_step = nullspace_direction(&jac) * 0.05;
                }
                dq += null_step;
            }
        }

        let max_step = dq.amax();
        if max_step > params.step_clamp {
            dq *= params.step_clamp / max_step;
        }
        q = model.clamp(&JointConfig(q.0 + dq));
    }
    None
}

/// Unit vector spanning the kinematic nullspace: the eigenvector of `JᵀJ`
/// with the smallest eigenvalue, sign fixed for determinism.
fn nullspace_direction(jac: &Jacobian) -> JointVec {
    let jtj = jac.transpose() * jac;
    let eig = jtj.symmetric_eigen();
    let mut best = 0;
    for i in 1..DOF {
        if eig.eigenvalues[i] < eig.eigenvalues[best] {
            best = i;
        }
    }
    let mut v: JointVec = eig.eigenvectors.column(best).into_owned();
    for i in 0..DOF {
        if v[i].abs() > 1e-12 {
            if v[i] < 0.0 {
                v = -v;
            }
            break;
        }
    }
    v
}

/// Finite-difference gradient of `½·wrap(swivel(q) − target)²`, with the
/// angle difference wrapped so the gradient survives the ±π seam.
fn swivel_gradient(model: &ArmModel, q: &JointConfig, target: f64) -> Option<JointVec> {
    let h = 1e-5;
    let err = wrap_angle(swivel_angle(model, q)? - target);
    let mut grad = JointVec::zeros();
    for j in 0..DOF {
        let mut qp = *q;
        let mut qm = *q;
        qp.0[j] += h;
        qm.0[j] -= h;
        let sp = swivel_angle(model, &qp)?;
        let sm = swivel_angle(model, &qm)?;
        let ds = wrap_angle(sp - sm) / (2.0 * h);
        grad[j] = err * ds;
    }
    Some(grad)
}

/// Uniform swivel grid of `n` angles over `[−π, π)`.
pub fn swivel_grid(n: usize) -> Vec<f64> {
    let pi = core::f64::consts::PI;
    (0..n).map(|i| -pi + 2.0 * pi * i as f64 / n as f64).collect()
}

fn in_free_set(theta: f64, free: &[(f64, f64)]) -> bool {
    free.iter().any(|(lo, hi)| theta >= *lo && theta <= *hi)
}

/// Count the grid swivel angles inside `theta_free` at which IK reaches
/// `ee_pose` within joint limits — the dexterity factor of the performance
/// map. Unreachable poses count zero.
pub fn swivel_dexterity(
    model: &ArmModel,
    ee_pose: &Pose,
    theta_grid: &[f64],
    theta_free: &[(f64, f64)],
    seed: &JointConfig,
    params: &IkParams,
) -> usize {
    if theta_grid.is_empty() {
        return 0;
    }
    let tol = core::f64::consts::PI / theta_grid.len() as f64 + 1e-6;
    let mut count = 0;
    let mut last_seed = *seed;
    for &theta in theta_grid {
        if !in_free_set(theta, theta_free) {
            continue;
        }
        if let Some(sol) = solve_ik(model, ee_pose, &last_seed, Some(theta), params) {
            last_seed = sol;
            if let Some(actual) = swivel_angle(model, &sol) {
                if wrap_angle(actual - theta).abs() <= tol {
                    count += 1;
                }
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use core::f64::consts::PI;
    use rand::{Rng, SeedableRng};

    fn random_q(model: &ArmModel, rng: &mut impl Rng) -> JointConfig {
        let mut q = JointVec::zeros();
        for j in 0..DOF {
            let lo = model.joint_lower[j];
            let hi = model.joint_upper[j];
            // Keep away from the exact bounds so FD probes stay inside.
            q[j] = lo + (hi - lo) * (0.05 + 0.9 * rng.gen::<f64>());
        }
        JointConfig(q)
    }

    fn fd_jacobian(model: &ArmModel, q: &JointConfig) -> Jacobian {
        let h = 1e-6;
        let mut jac = Jacobian::zeros();
        for j in 0..DOF {
            let mut qp = *q;
            let mut qm = *q;
            qp.0[j] += h;
            qm.0[j] -= h;
            let pp = forward_kinematics(model, &qp);
            let pm = forward_kinematics(model, &qm);
            let d = pose_error(&pm, &pp) / (2.0 * h);
            for r in 0..6 {
                jac[(r, j)] = d[r];
            }
        }
        jac
    }

    /// Degenerate chain: all joints share the base z-axis.
    fn coaxial_model() -> ArmModel {
        ArmModel {
            dh: [DhRow::new(0.0, 0.1, 0.0, 0.0); DOF],
            base_pose: Pose::identity(),
            ee_offset: Pose::identity(),
            joint_lower: JointVec::repeat(-PI),
            joint_upper: JointVec::repeat(PI),
            velocity_limit: JointVec::repeat(1.0),
            accel_limit: JointVec::repeat(1.0),
            torque_limit: JointVec::repeat(10.0),
        }
    }

    #[test]
    fn fk_single_link_chain() {
        let mut model = coaxial_model();
        model.dh = [DhRow::new(0.0, 0.0, 0.0, 0.0); DOF];
        model.dh[0].d = 0.5;
        let ee = forward_kinematics(&model, &JointConfig::zeros());
        assert_relative_eq!(
            ee.translation.vector,
            Vector3::new(0.0, 0.0, 0.5),
            epsilon = 1e-12
        );
    }

    #[test]
    fn fk_matches_hand_composed_chain() {
        // Zero configuration of the Franka chain: sum the z-offsets through
        // the alternating twists, composed by hand from the DH rows.
        let model = ArmModel::franka();
        let mut acc = Pose::identity();
        for row in &model.dh {
            acc *= pose_from_parts(
                Vector3::zeros(),
                UnitQuaternion::from_axis_angle(&Vector3::x_axis(), row.alpha),
            );
            acc *= pose_from_parts(Vector3::new(row.a, 0.0, row.d), UnitQuaternion::identity());
            // theta = 0 at the zero configuration: RotZ is identity, and
            // TransX(a)·TransZ(d) commute into a single translation.
        }
        acc *= model.ee_offset;
        let ee = forward_kinematics(&model, &JointConfig::zeros());
        assert_relative_eq!(ee.translation.vector, acc.translation.vector, epsilon = 1e-9);
        assert!(ee.rotation.angle_to(&acc.rotation) < 1e-9);
    }

    #[test]
    fn joint_one_rotates_ee_about_base_z() {
        let model = ArmModel::franka();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let q = random_q(&model, &mut rng);
        let mut q2 = q;
        q2.0[0] = wrap_angle(q2.0[0] + PI);
        let p1 = forward_kinematics(&model, &q).translation.vector;
        let p2 = forward_kinematics(&model, &q2).translation.vector;
        let rot = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), PI);
        assert_relative_eq!(rot * p1, p2, epsilon = 1e-9);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let model = ArmModel::franka();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let q = random_q(&model, &mut rng);
            let j = geometric_jacobian(&model, &q);
            let j_fd = fd_jacobian(&model, &q);
            assert!((j - j_fd).amax() < 1e-5, "jacobian mismatch: {}", (j - j_fd).amax());
        }
    }

    #[test]
    fn zero_velocity_maps_to_zero_twist() {
        let model = ArmModel::franka();
        let j = geometric_jacobian(&model, &model.mid_config());
        let twist: Vector6<f64> = &j * JointVec::zeros();
        assert_eq!(twist, Vector6::zeros());
    }

    #[test]
    fn manipulability_matches_svd_product() {
        let model = ArmModel::franka();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let q = random_q(&model, &mut rng);
            let m = manipulability(&model, &q);
            let j = geometric_jacobian(&model, &q);
            let svd = nalgebra::DMatrix::from_fn(6, DOF, |r, c| j[(r, c)]).svd(false, false);
            let prod: f64 = svd.singular_values.iter().product();
            assert_relative_eq!(m, prod, epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn manipulability_zero_when_rank_deficient() {
        let model = coaxial_model();
        let m = manipulability(&model, &JointConfig::zeros());
        assert!(m < 1e-12);
    }

    #[test]
    fn torque_annihilated_at_singularity() {
        // All joints coaxial with z: a pure force along z does no work on any
        // joint, so Jᵀf vanishes for the lost direction.
        let model = coaxial_model();
        let w = Wrench::new(Vector3::new(0.0, 0.0, 1.0), Vector3::zeros());
        let tau = joint_torques(&model, &JointConfig::zeros(), &w);
        assert!(tau.amax() < 1e-12);
    }

    #[test]
    fn zero_wrench_zero_torques() {
        let model = ArmModel::franka();
        let tau = joint_torques(&model, &model.mid_config(), &Wrench::zero());
        assert_eq!(tau, JointVec::zeros());
    }

    #[test]
    fn torques_match_virtual_work() {
        let model = ArmModel::franka();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let q = random_q(&model, &mut rng);
        let f = Wrench::new(
            Vector3::new(3.0, -1.0, 2.0),
            Vector3::new(0.5, 0.2, -0.4),
        );
        let tau = joint_torques(&model, &q, &f);
        let h = 1e-6;
        for j in 0..DOF {
            let mut qp = q;
            let mut qm = q;
            qp.0[j] += h;
            qm.0[j] -= h;
            let twist = pose_error(
                &forward_kinematics(&model, &qm),
                &forward_kinematics(&model, &qp),
            ) / (2.0 * h);
            let work = f.to_vector().dot(&twist);
            assert_relative_eq!(tau[j], work, epsilon = 1e-4);
        }
    }

    #[test]
    fn proximity_zero_at_limit() {
        let model = ArmModel::franka();
        let mut q = model.mid_config();
        q.0[2] = model.joint_upper[2];
        assert_eq!(joint_limit_proximity(&model, &q, default_proximity_k()), 0.0);
    }

    #[test]
    fn proximity_at_midpoints() {
        // Each factor is 1/4, the product 4⁻⁷; with k = 4⁷ the score is 1 − e⁻¹.
        let model = ArmModel::franka();
        let l = joint_limit_proximity(&model, &model.mid_config(), default_proximity_k());
        assert_relative_eq!(l, 1.0 - (-1.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn proximity_monotone_toward_limit() {
        let model = ArmModel::franka();
        let k = default_proximity_k();
        let mid = model.mid_config();
        let mut prev = joint_limit_proximity(&model, &mid, k);
        for step in 1..=10 {
            let mut q = mid;
            q.0[0] = mid.0[0] + (model.joint_upper[0] - mid.0[0]) * step as f64 / 10.0;
            let l = joint_limit_proximity(&model, &q, k);
            assert!(l <= prev + 1e-15);
            assert!((0.0..1.0).contains(&l));
            prev = l;
        }
        assert_eq!(prev, 0.0);
    }

    #[test]
    fn ik_fixed_point_returns_seed() {
        let model = ArmModel::franka();
        let seed = model.mid_config();
        let target = forward_kinematics(&model, &seed);
        let sol = solve_ik(&model, &target, &seed, None, &IkParams::default()).unwrap();
        assert_eq!(sol.0, seed.0);
    }

    #[test]
    fn ik_converges_to_nearby_target() {
        let model = ArmModel::franka();
        let seed = model.mid_config();
        let mut target = forward_kinematics(&model, &seed);
        target.translation.vector += Vector3::new(0.01, 0.0, 0.0);
        let sol = solve_ik(&model, &target, &seed, None, &IkParams::default()).unwrap();
        assert!(model.within_bounds(&sol));
        let err = pose_error(&forward_kinematics(&model, &sol), &target);
        assert!(Vector3::new(err[0], err[1], err[2]).norm() < 1e-4);
        assert!(Vector3::new(err[3], err[4], err[5]).norm() < 1e-3);
    }

    #[test]
    fn ik_fails_beyond_reach() {
        let model = ArmModel::franka();
        let target = pose_from_parts(Vector3::new(5.0, 0.0, 0.0), UnitQuaternion::identity());
        assert!(solve_ik(&model, &target, &model.mid_config(), None, &IkParams::default()).is_none());
    }

    #[test]
    fn dexterity_zero_outside_reach() {
        let model = ArmModel::franka();
        let pose = pose_from_parts(Vector3::new(3.0, 0.0, 0.0), UnitQuaternion::identity());
        let grid = swivel_grid(36);
        let free = [(-PI, PI)];
        let n = swivel_dexterity(&model, &pose, &grid, &free, &model.mid_config(), &IkParams::fast());
        assert_eq!(n, 0);
    }

    #[test]
    fn dexterity_mid_workspace_and_monotone_in_free_set() {
        let model = ArmModel::franka();
        let seed = model.mid_config();
        let pose = forward_kinematics(&model, &seed);
        let grid = swivel_grid(36);
        let full = [(-PI, PI)];
        let n_full = swivel_dexterity(&model, &pose, &grid, &full, &seed, &IkParams::default());
        assert!(n_full >= 1 && n_full <= 36, "count {n_full}");
        let half = [(-PI / 2.0, PI / 2.0)];
        let n_half = swivel_dexterity(&model, &pose, &grid, &half, &seed, &IkParams::default());
        assert!(n_half <= n_full);
    }

    #[test]
    fn swivel_target_is_tracked() {
        // Generic (non-symmetric) posture: the self-motion manifold is the
        // elbow orbit, so nearby swivel targets are reachable.
        let model = ArmModel::franka();
        let seed = JointConfig(JointVec::from_column_slice(&[
            0.3, 0.4, 0.2, -1.8, 0.3, 1.8, 0.5,
        ]));
        let pose = forward_kinematics(&model, &seed);
        let base = swivel_angle(&model, &seed).unwrap();
        let target = wrap_angle(base + 0.4);
        let sol = solve_ik(&model, &pose, &seed, Some(target), &IkParams::default()).unwrap();
        let got = swivel_angle(&model, &sol).unwrap();
        assert!(wrap_angle(got - target).abs() < 0.15, "swivel {got} vs {target}");
        let err = pose_error(&forward_kinematics(&model, &sol), &pose);
        assert!(Vector3::new(err[0], err[1], err[2]).norm() < 1e-4);
    }
}
