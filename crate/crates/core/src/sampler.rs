//! Manifold-intersection sampling for regrasp transitions: find unimanual
//! intermediate grasps (one arm fully supports the object while the other
//! releases and regrasps) by gradient-style resampling toward the previous
//! grasp with stochastic perturbation, projected back onto the graspable
//! region and verified for gravity stability. The Multi-Grasp Transition
//! Check (MTC) consolidates several pending transitions into one
//! intermediate by maximizing supported transitions minus a displacement
//! penalty.

use alloc::vec::Vec;
#[allow(unused_imports)] // f64 math comes from num-traits under no_std
use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::arm::{solve_ik, IkParams, JointConfig};
use crate::graph::{regrasp_cost, DEFAULT_TOL_POS, DEFAULT_TOL_ROT};
use crate::perf_map::GraspRegion;
use crate::se3::{canonical_dq, dq_from_pose, dq_to_pose, sclerp, Pose};
use crate::stability::{
    check_stability, ArmSide, CompositeConfig, ForceVector, GraspConfig, GraspVec, Workcell,
};

/// Standard normal deviate via Box-Muller.
pub fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * core::f64::consts::PI * u2).cos()
}

#[derive(Debug, Clone)]
pub struct ResampleParams {
    /// Gradient step size in (0, 1].
    pub eta: f64,
    /// Std dev of the stochastic perturbation (mixed m/rad units).
    pub sigma: f64,
    pub max_iters: usize,
    /// MTC trade-off between supported transitions and displacement.
    pub lambda: f64,
    /// MTC candidate pool size.
    pub pool: usize,
    pub seed: u64,
}

impl Default for ResampleParams {
    fn default() -> Self {
        ResampleParams { eta: 0.3, sigma: 0.01, max_iters: 50, lambda: 5.0, pool: 64, seed: 0 }
    }
}

/// Shared context for projection and stability checks. The graspable
/// region is expressed in the object frame.
#[derive(Debug, Clone)]
pub struct SamplerContext<'a> {
    pub cell: &'a Workcell,
    pub region: &'a GraspRegion,
    pub object_pose: Pose,
    pub object_mass: f64,
}

/// ½‖g − g_b‖² over the encoded 12-vectors. Callers must zero-fill
/// inactive sides identically in both configurations.
pub fn displacement_objective(g: &GraspConfig, g_b: &GraspConfig) -> f64 {
    let d = g.encoded() - g_b.encoded();
    0.5 * d.norm_squared()
}

/// One resampling update: `g_new = g − η(g − g_b) + r`, `r ~ N(0, σ²I)`.
/// The support pattern of `g` is preserved; inactive blocks stay zero.
pub fn resample_step(
    g_ic: &GraspConfig,
    g_b: &GraspConfig,
    eta: f64,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> GraspConfig {
    let enc = g_ic.encoded();
    let target = g_b.encoded();
    let mut out = GraspVec::zeros();
    let left = g_ic.left.is_some();
    let right = g_ic.right.is_some();
    for i in 0..12 {
        let active = if i < 6 { left } else { right };
        if !active {
            continue;
        }
        let mut v = enc[i] - eta * (enc[i] - target[i]);
        if sigma > 0.0 {
            v += sigma * gaussian(rng);
        }
        out[i] = v;
    }
    GraspConfig::from_encoded(&out, left, right)
}

/// Closest pose on the region to `p` (object frame): per-segment
/// straight-line parameter projection, pose reconstructed by screw
/// interpolation at that parameter.
pub fn snap_to_region(region: &GraspRegion, pose: &Pose) -> Option<Pose> {
    let p = pose.translation.vector;
    let mut best: Option<(f64, Pose)> = None;
    for (start, end) in &region.segments {
        let a = start.translation.vector;
        let b = end.translation.vector;
        let ab = b - a;
        let denom = ab.norm_squared();
        let t = if denom < 1e-18 { 0.0 } else { ((p - a).dot(&ab) / denom).clamp(0.0, 1.0) };
        let da = canonical_dq(&dq_from_pose(start));
        let db = canonical_dq(&dq_from_pose(end));
        let snapped = dq_to_pose(&sclerp(&da, &db, t)?);
        let dist = (snapped.translation.vector - p).norm();
        if best.as_ref().map_or(true, |(d, _)| dist < *d) {
            best = Some((dist, snapped));
        }
    }
    best.map(|(_, pose)| pose)
}

/// Snap the active grasp of `g` onto the region, solve IK for the
/// supporting arm, and verify gravity stability. Returns the feasible
/// projection and the joint solution.
pub fn project_to_manifold(
    g: &GraspConfig,
    side: ArmSide,
    ctx: &SamplerContext,
) -> Option<(GraspConfig, JointConfig)> {
    let rel = g.side(side)?;
    let snapped = snap_to_region(ctx.region, rel)?;
    let world = ctx.object_pose * snapped;
    let model = ctx.cell.arm(side);
    let q = solve_ik(model, &world, &model.mid_config(), None, &IkParams::default())?;
    let grasp = GraspConfig::single(side, snapped);
    let config = unimanual_composite(&grasp, side, &q, &ctx.object_pose);
    let report = check_stability(
        &config,
        &ForceVector::gravity_only(ctx.object_pose),
        ctx.object_mass,
        ctx.cell,
    );
    report.feasible.then_some((grasp, q))
}

fn unimanual_composite(
    grasp: &GraspConfig,
    side: ArmSide,
    q: &JointConfig,
    object_pose: &Pose,
) -> CompositeConfig {
    CompositeConfig {
        q_left: (side == ArmSide::Left).then(|| q.clone()),
        q_right: (side == ArmSide::Right).then(|| q.clone()),
        object_pose: *object_pose,
        grasp: *grasp,
        omega: 0.0,
    }
}

/// A unimanual intermediate grasp found at a manifold intersection.
#[derive(Debug, Clone)]
pub struct IntermediateCandidate {
    pub grasp: GraspConfig,
    pub object_pose: Pose,
    pub side: ArmSide,
    pub q_support: JointConfig,
    /// Bit i set ⇔ pending transition i can run through this intermediate.
    pub supported_transitions: u32,
    /// R¹²-norm between this grasp and the masked previous grasp.
    pub displacement: f64,
}

impl IntermediateCandidate {
    pub fn to_composite(&self) -> CompositeConfig {
        unimanual_composite(&self.grasp, self.side, &self.q_support, &self.object_pose)
    }
}

/// Which side regrasps between two configurations, if exactly determinable.
pub fn regrasping_side(g_b: &CompositeConfig, g_t: &CompositeConfig) -> Option<ArmSide> {
    for side in [ArmSide::Left, ArmSide::Right] {
        let a = unimanual_mask(&g_b.grasp, side);
        let b = unimanual_mask(&g_t.grasp, side);
        let differs = match (a, b) {
            (Some(x), Some(y)) => {
                regrasp_cost(
                    &fake_composite(&x, &g_b.object_pose),
                    &fake_composite(&y, &g_t.object_pose),
                    DEFAULT_TOL_POS,
                    DEFAULT_TOL_ROT,
                ) > 0
            }
            (None, None) => false,
            _ => true,
        };
        if differs {
            return Some(side);
        }
    }
    None
}

fn unimanual_mask(g: &GraspConfig, side: ArmSide) -> Option<GraspConfig> {
    g.side(side).map(|p| GraspConfig::single(side, *p))
}

fn fake_composite(grasp: &GraspConfig, object_pose: &Pose) -> CompositeConfig {
    CompositeConfig {
        q_left: None,
        q_right: None,
        object_pose: *object_pose,
        grasp: *grasp,
        omega: 0.0,
    }
}

/// Find the unimanual intermediate for one transition: the arm not
/// regrasping supports the object; iterate resampling + projection and
/// return the feasible candidate with minimum displacement.
pub fn sample_stable_intersection(
    g_b: &CompositeConfig,
    g_t: &CompositeConfig,
    params: &ResampleParams,
    ctx: &SamplerContext,
) -> Option<IntermediateCandidate> {
    let moving = regrasping_side(g_b, g_t);
    let support = match moving {
        Some(ArmSide::Left) => ArmSide::Right,
        Some(ArmSide::Right) => ArmSide::Left,
        // no transition: support with any present arm, displacement 0
        None => {
            if g_b.grasp.left.is_some() {
                ArmSide::Left
            } else {
                ArmSide::Right
            }
        }
    };
    let target = unimanual_mask(&g_b.grasp, support)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut best: Option<IntermediateCandidate> = None;
    let consider = |grasp: GraspConfig, q: JointConfig, best: &mut Option<IntermediateCandidate>| {
        let displacement = (grasp.encoded() - target.encoded()).norm();
        if best.as_ref().map_or(true, |b| displacement < b.displacement) {
            *best = Some(IntermediateCandidate {
                grasp,
                object_pose: ctx.object_pose,
                side: support,
                q_support: q,
                supported_transitions: 1,
                displacement,
            });
        }
    };

    if let Some((grasp, q)) = project_to_manifold(&target, support, ctx) {
        consider(grasp, q, &mut best);
    }
    let mut current = target;
    for _ in 0..params.max_iters {
        if best.as_ref().map_or(false, |b| b.displacement == 0.0) {
            break;
        }
        current = resample_step(&current, &target, params.eta, params.sigma, &mut rng);
        if let Some((grasp, q)) = project_to_manifold(&current, support, ctx) {
            consider(grasp.clone(), q, &mut best);
            current = grasp;
        }
    }
    best
}

/// Argmax with MTC score `supported − λ·displacement²`; ties broken by
/// lower displacement, then lower candidate index.
pub(crate) fn pick_mtc<'a>(
    candidates: impl Iterator<Item = &'a IntermediateCandidate>,
    lambda: f64,
) -> Option<usize> {
    let mut best: Option<(f64, f64, usize)> = None;
    for (i, c) in candidates.enumerate() {
        let score =
            c.supported_transitions.count_ones() as f64 - lambda * c.displacement * c.displacement;
        let better = match &best {
            None => true,
            Some((bs, bd, _)) => {
                score > *bs || (score == *bs && c.displacement < *bd)
            }
        };
        if better {
            best = Some((score, c.displacement, i));
        }
    }
    best.map(|(_, _, i)| i)
}

/// Multi-Grasp Transition Check: over a seeded pool of region samples,
/// select one intermediate maximizing the number of supported pending
/// transitions minus λ·displacement². `pending` holds the regrasping side
/// of each upcoming transition.
pub fn mtc_select(
    pending: &[ArmSide],
    g_b: &CompositeConfig,
    final_grasp: Option<&Pose>,
    params: &ResampleParams,
    ctx: &SamplerContext,
) -> Option<IntermediateCandidate> {
    if pending.len() < 2 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x6d74_63);
    let mut candidates: Vec<IntermediateCandidate> = Vec::new();
    for _ in 0..params.pool {
        // seed a sample near a random point of the region, per support side
        for support in [ArmSide::Left, ArmSide::Right] {
            if pending.iter().all(|side| *side == support) {
                continue; // this arm regrasps in every transition: cannot support
            }
            let Some(anchor) = g_b.grasp.side(support) else { continue };
            let seg = rng.gen_range(0..ctx.region.segments.len());
            let t: f64 = rng.gen();
            let (start, end) = &ctx.region.segments[seg];
            let da = canonical_dq(&dq_from_pose(start));
            let db = canonical_dq(&dq_from_pose(end));
            let Some(dq) = sclerp(&da, &db, t) else { continue };
            let mut sample = GraspConfig::single(support, dq_to_pose(&dq));
            let anchor_cfg = GraspConfig::single(support, *anchor);
            sample = resample_step(&sample, &anchor_cfg, params.eta, params.sigma, &mut rng);
            if let Some((grasp, q)) = project_to_manifold(&sample, support, ctx) {
                let mut mask = 0u32;
                for (i, side) in pending.iter().enumerate() {
                    if *side != support {
                        mask |= 1 << i;
                    }
                }
                // The support travels current grasp -> dwell -> final
                // planned grasp; both legs count as displacement.
                let mut displacement = (grasp.encoded() - anchor_cfg.encoded()).norm();
                if let Some(f) = final_grasp {
                    let final_cfg = GraspConfig::single(support, *f);
                    displacement += (grasp.encoded() - final_cfg.encoded()).norm();
                }
                candidates.push(IntermediateCandidate {
                    grasp,
                    object_pose: ctx.object_pose,
                    side: support,
                    q_support: q,
                    supported_transitions: mask,
                    displacement,
                });
            }
        }
    }
    let idx = pick_mtc(candidates.iter(), params.lambda)?;
    Some(candidates.swap_remove(idx))
}
