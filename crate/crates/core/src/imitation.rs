//! Imitation layer: learn a reference trajectory distribution from several
//! demonstrations (ProMP-style per-axis basis regression), retarget the mean
//! path to a new goal through incremental dual-quaternion transforms, and
//! attach new start poses with a C¹ screw-interpolation blend.

#[allow(unused_imports)] // f64 math comes from num-traits under no_std
use num_traits::Float;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::sampler::gaussian;
use crate::se3::{
    canonical_dq, dq_from_pose, dq_pow, dq_to_pose, pose_from_parts, Pose, UnitDualQuat,
};

pub const DEFAULT_PHASE_POINTS: usize = 200;
pub const DEFAULT_BASIS_COUNT: usize = 20;
pub const DEFAULT_REGULARIZATION: f64 = 1e-6;

/// Time-stamped end-effector demonstrations.
#[derive(Debug, Clone)]
pub struct DemoSet {
    pub trajectories: Vec<Vec<(f64, Pose)>>,
}

impl DemoSet {
    pub fn count(&self) -> usize {
        self.trajectories.len()
    }

    /// Resample every demo onto a common `eta_t`-point phase grid by linear
    /// position / slerp orientation interpolation over normalized time.
    pub fn resample(&self, eta_t: usize) -> Vec<Vec<Pose>> {
        self.trajectories
            .iter()
            .map(|demo| {
                let t0 = demo.first().map(|(t, _)| *t).unwrap_or(0.0);
                let t1 = demo.last().map(|(t, _)| *t).unwrap_or(1.0);
                let span = (t1 - t0).max(1e-12);
                (0..eta_t)
                    .map(|i| {
                        let t = t0 + span * i as f64 / (eta_t - 1) as f64;
                        interpolate_demo(demo, t)
                    })
                    .collect()
            })
            .collect()
    }
}

fn interpolate_demo(demo: &[(f64, Pose)], t: f64) -> Pose {
    if t <= demo[0].0 {
        return demo[0].1;
    }
    for w in demo.windows(2) {
        let (ta, pa) = w[0];
        let (tb, pb) = w[1];
        if t <= tb {
            let u = ((t - ta) / (tb - ta).max(1e-12)).clamp(0.0, 1.0);
            let p = pa.translation.vector * (1.0 - u) + pb.translation.vector * u;
            let r = pa.rotation.slerp(&pb.rotation, u);
            return pose_from_parts(p, r);
        }
    }
    demo.last().unwrap().1
}

/// Per-axis ProMP: six channels (position xyz + rotation-vector relative to
/// a reference orientation), each with its own weight mean and covariance.
#[derive(Debug, Clone)]
pub struct ProMPModel {
    pub basis_count: usize,
    pub centers: Vec<f64>,
    /// Gaussian basis variance in phase units.
    pub width: f64,
    pub mu_w: Vec<DVector<f64>>,
    pub sigma_w: Vec<DMatrix<f64>>,
    /// Per-channel observation noise variance from regression residuals.
    pub sigma_y: [f64; 6],
    /// Orientation reference; rotation channels are log-maps relative to it.
    pub ref_rotation: UnitQuaternion<f64>,
    pub eta_t: usize,
}

/// Mean path with per-step channel variances.
#[derive(Debug, Clone)]
pub struct ReferencePath {
    pub poses: Vec<UnitDualQuat>,
    pub covariances: Vec<Vector6<f64>>,
}

impl ReferencePath {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn pose(&self, i: usize) -> Pose {
        dq_to_pose(&self.poses[i])
    }
}

/// Normalized Gaussian basis row at phase `z`.
fn basis_row(centers: &[f64], width: f64, z: f64) -> DVector<f64> {
    let mut row = DVector::from_fn(centers.len(), |b, _| {
        let d = z - centers[b];
        (-d * d / (2.0 * width)).exp()
    });
    let s = row.sum();
    if s > 1e-300 {
        row /= s;
    }
    row
}

fn basis_matrix(centers: &[f64], width: f64, eta_t: usize) -> DMatrix<f64> {
    let mut phi = DMatrix::zeros(eta_t, centers.len());
    for i in 0..eta_t {
        let z = i as f64 / (eta_t - 1) as f64;
        phi.row_mut(i).copy_from(&basis_row(centers, width, z).transpose());
    }
    phi
}

fn channel_values(poses: &[Pose], channel: usize, reference: &UnitQuaternion<f64>) -> DVector<f64> {
    DVector::from_fn(poses.len(), |i, _| {
        let p = &poses[i];
        if channel < 3 {
            p.translation.vector[channel]
        } else {
            let rel = reference.inverse() * p.rotation;
            rel.scaled_axis()[channel - 3]
        }
    })
}

/// Fit the per-axis ProMP over an `eta_t` phase grid: per-demo ridge
/// regression for the basis weights, then sample mean/covariance across
/// demos plus `regularization·I`.
pub fn fit_promp(
    demos: &DemoSet,
    basis_count: usize,
    eta_t: usize,
    regularization: f64,
) -> Result<ProMPModel, &'static str> {
    if demos.count() < 2 {
        return Err("need at least two demonstrations");
    }
    if basis_count > eta_t {
        return Err("more basis functions than phase points");
    }
    let resampled = demos.resample(eta_t);
    let centers: Vec<f64> =
        (0..basis_count).map(|b| b as f64 / (basis_count - 1) as f64).collect();
    let width = 1.0 / (2.0 * basis_count as f64);
    let phi = basis_matrix(&centers, width, eta_t);
    let gram = {
        let mut g = phi.transpose() * &phi;
        for i in 0..basis_count {
            g[(i, i)] += regularization;
        }
        g
    };
    let chol = gram.cholesky().ok_or("singular basis Gram matrix")?;
    let ref_rotation = resampled[0][0].rotation;

    let mut mu_w = Vec::with_capacity(6);
    let mut sigma_w = Vec::with_capacity(6);
    let mut sigma_y = [0.0; 6];
    for d in 0..6 {
        let weights: Vec<DVector<f64>> = resampled
            .iter()
            .map(|poses| {
                let y = channel_values(poses, d, &ref_rotation);
                chol.solve(&(phi.transpose() * &y))
            })
            .collect();
        let n = weights.len() as f64;
        let mean = weights.iter().fold(DVector::zeros(basis_count), |acc, w| acc + w) / n;
        let mut cov = DMatrix::zeros(basis_count, basis_count);
        for w in &weights {
            let dw = w - &mean;
            cov += &dw * dw.transpose();
        }
        cov /= (n - 1.0).max(1.0);
        for i in 0..basis_count {
            cov[(i, i)] += regularization;
        }
        // residual variance pooled over demos and phase
        let mut ss = 0.0;
        for (poses, w) in resampled.iter().zip(&weights) {
            let y = channel_values(poses, d, &ref_rotation);
            let r = &y - &phi * w;
            ss += r.norm_squared();
        }
        sigma_y[d] = ss / (resampled.len() * eta_t) as f64;
        mu_w.push(mean);
        sigma_w.push(cov);
    }
    Ok(ProMPModel { basis_count, centers, width, mu_w, sigma_w, sigma_y, ref_rotation, eta_t })
}

/// Evaluate the mean path and per-step channel variances:
/// mean = φᵀμ_w, var = φᵀΣ_wφ + σ_y per channel.
pub fn mean_and_variance(model: &ProMPModel) -> ReferencePath {
    let mut poses = Vec::with_capacity(model.eta_t);
    let mut covariances = Vec::with_capacity(model.eta_t);
    for i in 0..model.eta_t {
        let z = i as f64 / (model.eta_t - 1) as f64;
        let row = basis_row(&model.centers, model.width, z);
        let mut mean = Vector6::zeros();
        let mut var = Vector6::zeros();
        for d in 0..6 {
            mean[d] = row.dot(&model.mu_w[d]);
            var[d] = (row.transpose() * &model.sigma_w[d] * &row)[(0, 0)] + model.sigma_y[d];
        }
        let rot = model.ref_rotation
            * UnitQuaternion::from_scaled_axis(Vector3::new(mean[3], mean[4], mean[5]));
        let pose = pose_from_parts(Vector3::new(mean[0], mean[1], mean[2]), rot);
        poses.push(canonical_dq(&dq_from_pose(&pose)));
        covariances.push(var);
    }
    ReferencePath { poses, covariances }
}

/// Incremental transforms to the final pose: δ_i = x̄_{i−1}⁻¹ · x̄_η for
/// i = 2…η (list index i−2).
pub fn incremental_deltas(path: &ReferencePath) -> Vec<UnitDualQuat> {
    let n = path.poses.len();
    let last = path.poses[n - 1];
    (0..n - 1).map(|i| canonical_dq(&(path.poses[i].inverse() * last))).collect()
}

/// Anchor the path at `new_goal`: each pose becomes goal·δ_i⁻¹, which is a
/// global left transform by goal·x̄_η⁻¹; the final pose equals the goal
/// exactly and all pairwise relative transforms are preserved.
pub fn retarget(path: &ReferencePath, deltas: &[UnitDualQuat], new_goal: &Pose) -> ReferencePath {
    let goal = canonical_dq(&dq_from_pose(new_goal));
    let mut poses: Vec<UnitDualQuat> =
        deltas.iter().map(|d| canonical_dq(&(goal * d.inverse()))).collect();
    poses.push(goal);
    ReferencePath { poses, covariances: path.covariances.clone() }
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Blend a correction from `start` into the leading `blend_fraction` of the
/// path: pose_i ← C^{w_i}·pose_i with C = start·path₀⁻¹ and w falling from
/// 1 to 0 along a smoothstep (zero slope at both ends ⇒ C¹ boundary).
pub fn attach_start(path: &ReferencePath, start: &Pose, blend_fraction: f64) -> ReferencePath {
    assert!(blend_fraction > 0.0 && blend_fraction <= 1.0);
    let n = path.poses.len();
    if n == 0 {
        return path.clone();
    }
    let start_dq = canonical_dq(&dq_from_pose(start));
    let correction = canonical_dq(&(start_dq * path.poses[0].inverse()));
    let n_blend = ((blend_fraction * n as f64).ceil() as usize).clamp(2, n);
    let mut poses = path.poses.clone();
    for (i, pose) in poses.iter_mut().enumerate().take(n_blend) {
        let u = i as f64 / (n_blend - 1) as f64;
        let w = 1.0 - smoothstep(u);
        *pose = canonical_dq(&(dq_pow(&correction, w) * *pose));
    }
    // exact endpoint
    poses[0] = start_dq;
    ReferencePath { poses, covariances: path.covariances.clone() }
}

/// Synthetic demonstration set: constant-rate screw motion from `start` to
/// `goal` plus seeded, smooth Gaussian waypoint noise on the position
/// channels (zero at both endpoints).
pub fn synthetic_demos(
    start: &Pose,
    goal: &Pose,
    count: usize,
    samples: usize,
    noise: f64,
    seed: u64,
) -> DemoSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = canonical_dq(&dq_from_pose(start));
    let b = canonical_dq(&dq_from_pose(goal));
    let mut trajectories = Vec::with_capacity(count);
    for _ in 0..count {
        // three sinusoidal noise modes per axis, vanishing at the endpoints
        let mut amps = [[0.0; 3]; 3];
        for row in amps.iter_mut() {
            for a in row.iter_mut() {
                *a = noise * gaussian(&mut rng);
            }
        }
        let mut demo = Vec::with_capacity(samples);
        for i in 0..samples {
            let tau = i as f64 / (samples - 1) as f64;
            let base = crate::se3::sclerp(&a, &b, tau).unwrap();
            let mut pose = dq_to_pose(&base);
            for (k, row) in amps.iter().enumerate() {
                let bump = (core::f64::consts::PI * (k + 1) as f64 * tau).sin();
                for (axis, amp) in row.iter().enumerate() {
                    pose.translation.vector[axis] += amp * bump;
                }
            }
            demo.push((tau, pose));
        }
        trajectories.push(demo);
    }
    DemoSet { trajectories }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::se3::pose_error;

    fn straight_demo(offset_y: f64, samples: usize) -> Vec<(f64, Pose)> {
        (0..samples)
            .map(|i| {
                let t = i as f64 / (samples - 1) as f64;
                (t, Pose::translation(0.2 + 0.3 * t, offset_y, 0.5))
            })
            .collect()
    }

    fn path_positions(path: &ReferencePath) -> Vec<Vector3<f64>> {
        (0..path.len()).map(|i| path.pose(i).translation.vector).collect()
    }

    #[test]
    fn identical_demos_reproduce_mean() {
        let demos = DemoSet {
            trajectories: alloc::vec![straight_demo(0.0, 60), straight_demo(0.0, 60)],
        };
        let model = fit_promp(&demos, DEFAULT_BASIS_COUNT, DEFAULT_PHASE_POINTS, 1e-6).unwrap();
        let path = mean_and_variance(&model);
        for (i, p) in path_positions(&path).iter().enumerate() {
            let t = i as f64 / (path.len() - 1) as f64;
            let expected = Vector3::new(0.2 + 0.3 * t, 0.0, 0.5);
            assert!((p - expected).norm() < 1e-3, "step {i}: {p:?}");
        }
        // zero demo spread → weight covariance collapses to the ridge
        for d in 0..6 {
            assert!(model.sigma_w[d].amax() <= 1e-6 + 1e-12);
        }
    }

    #[test]
    fn parallel_offsets_average_to_centerline() {
        let demos = DemoSet {
            trajectories: alloc::vec![straight_demo(0.01, 60), straight_demo(-0.01, 60)],
        };
        let model = fit_promp(&demos, DEFAULT_BASIS_COUNT, DEFAULT_PHASE_POINTS, 1e-6).unwrap();
        let path = mean_and_variance(&model);
        for p in path_positions(&path) {
            assert!(p.y.abs() < 1e-6, "centerline violated: {}", p.y);
        }
    }

    #[test]
    fn smooth_demos_reconstruct_below_tolerance() {
        let start = Pose::translation(0.2, -0.1, 0.4);
        let goal = Pose::translation(0.5, 0.2, 0.6);
        let demos = synthetic_demos(&start, &goal, 10, 120, 0.01, 7);
        let model = fit_promp(&demos, 20, 200, 1e-6).unwrap();
        // reconstruction RMSE of each resampled demo against its own fit
        let resampled = demos.resample(200);
        let phi = basis_matrix(&model.centers, model.width, 200);
        let gram = {
            let mut g = phi.transpose() * &phi;
            for i in 0..20 {
                g[(i, i)] += 1e-6;
            }
            g.cholesky().unwrap()
        };
        for poses in &resampled {
            for d in 0..3 {
                let y = channel_values(poses, d, &model.ref_rotation);
                let w = gram.solve(&(phi.transpose() * &y));
                let r = &y - &phi * w;
                let rmse = (r.norm_squared() / y.len() as f64).sqrt();
                assert!(rmse < 1e-3, "channel {d}: rmse {rmse}");
            }
        }
    }

    #[test]
    fn variance_peaks_where_demos_spread() {
        // demos agree at the endpoints, disagree mid-path
        let bowed = |sign: f64| -> Vec<(f64, Pose)> {
            (0..80)
                .map(|i| {
                    let t = i as f64 / 79.0;
                    let bump = sign * 0.01 * (core::f64::consts::PI * t).sin();
                    (t, Pose::translation(0.2 + 0.3 * t, bump, 0.5))
                })
                .collect()
        };
        let demos = DemoSet { trajectories: alloc::vec![bowed(1.0), bowed(-1.0)] };
        let model = fit_promp(&demos, 20, 200, 1e-9).unwrap();
        let path = mean_and_variance(&model);
        let mid = path.covariances[100][1];
        let end = path.covariances[5][1];
        assert!(mid > end * 10.0, "mid {mid} vs end {end}");
    }

    #[test]
    fn sigma_w_zero_leaves_only_observation_noise() {
        let demos = DemoSet {
            trajectories: alloc::vec![straight_demo(0.0, 60), straight_demo(0.0, 60)],
        };
        let mut model = fit_promp(&demos, 20, 200, 1e-6).unwrap();
        for d in 0..6 {
            model.sigma_w[d].fill(0.0);
            model.sigma_y[d] = 0.5 + d as f64;
        }
        let path = mean_and_variance(&model);
        for cov in &path.covariances {
            for d in 0..6 {
                assert_relative_eq!(cov[d], 0.5 + d as f64, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn fit_rejects_degenerate_inputs() {
        let demos = DemoSet { trajectories: alloc::vec![straight_demo(0.0, 60)] };
        assert!(fit_promp(&demos, 20, 200, 1e-6).is_err());
        let demos = DemoSet {
            trajectories: alloc::vec![straight_demo(0.0, 60), straight_demo(0.0, 60)],
        };
        assert!(fit_promp(&demos, 300, 200, 1e-6).is_err());
    }

    fn line_path(n: usize) -> ReferencePath {
        let poses = (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                canonical_dq(&dq_from_pose(&Pose::translation(t, 0.0, 0.0)))
            })
            .collect();
        ReferencePath { poses, covariances: alloc::vec![Vector6::zeros(); n] }
    }

    #[test]
    fn deltas_on_constant_and_straight_paths() {
        let constant = ReferencePath {
            poses: alloc::vec![canonical_dq(&dq_from_pose(&Pose::translation(0.1, 0.2, 0.3))); 5],
            covariances: alloc::vec![Vector6::zeros(); 5],
        };
        for d in incremental_deltas(&constant) {
            let p = dq_to_pose(&d);
            assert!(p.translation.vector.norm() < 1e-12);
            assert!(p.rotation.angle() < 1e-12);
        }

        let line = line_path(6);
        let deltas = incremental_deltas(&line);
        assert_eq!(deltas.len(), 5);
        let mags: Vec<f64> =
            deltas.iter().map(|d| dq_to_pose(d).translation.vector.norm()).collect();
        for w in mags.windows(2) {
            assert!(w[0] > w[1], "delta magnitudes must decrease: {mags:?}");
        }
        // final delta maps the penultimate pose to the final pose
        let penult = line.pose(4);
        let reconstructed = penult * dq_to_pose(&deltas[4]);
        assert!(pose_error(&reconstructed, &line.pose(5)).norm() < 1e-12);
    }

    #[test]
    fn retarget_identity_and_translation() {
        let line = line_path(40);
        let deltas = incremental_deltas(&line);
        let same = retarget(&line, &deltas, &line.pose(39));
        for i in 0..line.len() {
            assert!(pose_error(&same.pose(i), &line.pose(i)).norm() < 1e-9, "step {i}");
        }

        let goal = Pose::translation(1.1, 0.2, -0.3);
        let moved = retarget(&line, &deltas, &goal);
        assert!(pose_error(&moved.pose(39), &goal).norm() < 1e-12);
        // uniform translation of every step
        let shift = moved.pose(0).translation.vector - line.pose(0).translation.vector;
        for i in 0..40 {
            let s = moved.pose(i).translation.vector - line.pose(i).translation.vector;
            assert!((s - shift).norm() < 1e-9);
        }
    }

    #[test]
    fn retarget_preserves_shape_under_rotation() {
        let line = line_path(30);
        let deltas = incremental_deltas(&line);
        let goal = pose_from_parts(
            Vector3::new(0.4, 0.4, 0.1),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), core::f64::consts::FRAC_PI_2),
        );
        let out = retarget(&line, &deltas, &goal);
        for i in 0..29 {
            let rel_src = line.pose(i).inverse() * line.pose(i + 1);
            let rel_out = out.pose(i).inverse() * out.pose(i + 1);
            assert!(
                pose_error(&rel_src, &rel_out).norm() < 1e-9,
                "pairwise transform changed at {i}"
            );
        }
        assert!(pose_error(&out.pose(29), &goal).norm() < 1e-12);
    }

    #[test]
    fn attach_start_endpoint_contract() {
        let line = line_path(100);
        let unchanged = attach_start(&line, &line.pose(0), 0.4);
        for i in 0..line.len() {
            assert!(pose_error(&unchanged.pose(i), &line.pose(i)).norm() < 1e-9);
        }

        let start = Pose::translation(-0.2, 0.1, 0.05);
        let blended = attach_start(&line, &start, 0.4);
        assert!(pose_error(&blended.pose(0), &start).norm() < 1e-12);
        assert!(pose_error(&blended.pose(99), &line.pose(99)).norm() < 1e-12);
        // tail beyond the blend untouched
        for i in 40..100 {
            assert!(pose_error(&blended.pose(i), &line.pose(i)).norm() < 1e-12);
        }
    }

    #[test]
    fn attach_start_is_c1_at_the_boundary() {
        let line = line_path(200);
        let start = Pose::translation(-0.2, 0.15, 0.0);
        let blended = attach_start(&line, &start, 0.5);
        let pos = path_positions(&blended);
        let vel: Vec<Vector3<f64>> = pos.windows(2).map(|w| w[1] - w[0]).collect();
        let acc: Vec<f64> = vel.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
        let max_acc = acc.iter().cloned().fold(0.0, f64::max);
        let vel_scale = vel.iter().map(|v| v.norm()).fold(0.0, f64::max);
        // a C⁰-only attach would jump by O(velocity) in one step
        assert!(
            max_acc < 0.12 * vel_scale,
            "second difference {max_acc} vs velocity scale {vel_scale}"
        );
    }

    #[test]
    fn reference_path_poses_stay_unit() {
        let start = Pose::translation(0.2, -0.1, 0.4);
        let goal = pose_from_parts(
            Vector3::new(0.5, 0.2, 0.6),
            UnitQuaternion::from_euler_angles(0.2, -0.1, 0.4),
        );
        let demos = synthetic_demos(&start, &goal, 6, 80, 0.01, 3);
        let model = fit_promp(&demos, 20, 200, 1e-6).unwrap();
        let path = mean_and_variance(&model);
        let deltas = incremental_deltas(&path);
        let out = attach_start(
            &retarget(&path, &deltas, &Pose::translation(0.6, 0.0, 0.5)),
            &Pose::translation(0.1, 0.0, 0.4),
            0.3,
        );
        for dq in &out.poses {
            assert!((dq.real.norm() - 1.0).abs() < 1e-9);
            assert!(dq.real.dot(&dq.dual).abs() < 1e-9);
        }
    }
}
