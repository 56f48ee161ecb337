//! Hybrid approach controller: an image-space visual policy at a low rate,
//! constant forward creep, a force-triggered switch to admittance control,
//! and the final cut.

use nalgebra::{Point2, Point3, Translation3, Vector2, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::arm::cutter_jaws;
use crate::camera::{synth_flow, CameraModel, FlowField};
use crate::detect::fit_segment;
use crate::geometry::{closest_points_segments, segment_box_overlap, Capsule, Pose, PoseRecord};
use crate::percept::{render_instances, InstanceMask, RenderParams};
use crate::raster::Mask;
use crate::plan::facing_pose;
use crate::world::{
    apply_cut_with, generate_orchard, ground_truth_targets, BranchClass, CutOutcome, CutTarget, CutterMouth, GeneratorParams,
    WorldError, WorldModel,
};

/// Blade hit point in the tool frame.
pub const HIT_POINT_TOOL: [f64; 3] = [0.0, 0.025, 0.04];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlAction {
    pub vx: f64,
    pub vy: f64,
}

impl ControlAction {
    pub fn clamped(vx: f64, vy: f64) -> Self {
        Self { vx: vx.clamp(-1.0, 1.0), vy: vy.clamp(-1.0, 1.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Visual,
    Admittance,
    Cut,
    Done,
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortCode {
    TargetLost,
    Timeout,
    Miss,
    /// Approach monitor saw a protected object entering the mouth.
    WrongObject,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub delta: f64,
    pub d_thres: f64,
    pub success_reward: f64,
    pub failure_penalty: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self { delta: 0.05, d_thres: 0.5, success_reward: 1.0, failure_penalty: -1.0 }
    }
}

/// Intermediate reward: penalty when the target is out of view, otherwise
/// `delta * max(0, 1 - d / d_thres)`.
pub fn reward(p_target: &Point2<f64>, p_hit: &Point2<f64>, params: &RewardParams, in_image: bool) -> f64 {
    if !in_image {
        return params.failure_penalty;
    }
    let d = (p_target - p_hit).norm();
    params.delta * (1.0 - d / params.d_thres).max(0.0)
}

/// Tool-frame velocity `[s vx, s vy, s]`.
pub fn ee_twist(action: &ControlAction, speed: f64) -> Vector3<f64> {
    Vector3::new(speed * action.vx, speed * action.vy, speed)
}

/// Normalized image coordinates of the blade hit point.
pub fn hit_point_pixel(cam: &CameraModel) -> Option<Point2<f64>> {
    let p = cam.mount.inverse() * Point3::from(HIT_POINT_TOOL);
    cam.project(&p).map(|px| Point2::new(px.x / cam.width as f64, px.y / cam.height as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlParams {
    pub dt: f64,
    pub speed: f64,
    pub gain: f64,
    pub policy_hz: f64,
    pub force_switch_n: f64,
    pub admittance_gain: f64,
    /// Forward creep kept during admittance (tool `z`, m/s).
    pub creep: f64,
    pub band_lo_n: f64,
    pub band_hi_n: f64,
    pub dwell_s: f64,
    pub admittance_timeout_s: f64,
    pub visual_timeout_s: f64,
    pub stiffness: f64,
    pub force_noise_sigma: f64,
    /// Target pixels within this radius of the tracked point feed the line fit.
    pub track_window_px: f64,
    /// Re-acquisition radius when the window is empty.
    pub reacquire_px: f64,
    /// Failure region behind the mouth, tool frame: `|x| < fx`, `|y - 0.025| < fy`, `z < fz`.
    pub failure_half_x: f64,
    pub failure_half_y: f64,
    pub failure_z: f64,
    pub abort_on_wrong_object: bool,
    pub reward: RewardParams,
    pub mouth: CutterMouth,
    pub render: RenderParams,
}

impl Default for ControlParams {
    fn default() -> Self {
        Self {
            dt: 0.05,
            speed: 0.03,
            gain: 4.0,
            policy_hz: 1.0,
            force_switch_n: 1.5,
            admittance_gain: 0.004,
            creep: 0.006,
            band_lo_n: 0.5,
            band_hi_n: 3.0,
            dwell_s: 0.5,
            admittance_timeout_s: 15.0,
            visual_timeout_s: 60.0,
            stiffness: 1500.0,
            force_noise_sigma: 0.0,
            track_window_px: 40.0,
            reacquire_px: 160.0,
            failure_half_x: 0.05,
            failure_half_y: 0.08,
            failure_z: 0.015,
            abort_on_wrong_object: true,
            reward: RewardParams::default(),
            mouth: CutterMouth::default(),
            render: RenderParams::default(),
        }
    }
}

impl ControlParams {
    pub fn steps(&self, seconds: f64) -> u64 {
        (seconds / self.dt).round() as u64
    }
}

/// Wrist wrench in the tool frame: `[f; τ]` with torque about the tool origin.
///
/// Each jaw takes its deepest contact among `world` branches; the spring
/// force pushes the jaw out along the contact normal.
pub fn contact_wrench(tool_pose: &Pose, world: &WorldModel, stiffness: f64) -> Vector6<f64> {
    let inv = tool_pose.inverse();
    let mut w = Vector6::zeros();
    for jaw in cutter_jaws() {
        let mut best: Option<(f64, Vector3<f64>, Point3<f64>)> = None;
        for b in &world.branches {
            for cap in b.capsules() {
                let local = cap.transformed(&inv);
                if let Some(c) = capsule_contact(&jaw, &local) {
                    if best.is_none_or(|(d, ..)| c.0 > d) {
                        best = Some(c);
                    }
                }
            }
        }
        if let Some((depth, n, at)) = best {
            let f = n * (stiffness * depth);
            let tau = at.coords.cross(&f);
            w += Vector6::new(f.x, f.y, f.z, tau.x, tau.y, tau.z);
        }
    }
    w
}

/// Penetration of `jaw` into `other`: (depth, unit normal pushing the jaw out, contact point on the jaw axis).
pub fn capsule_contact(jaw: &Capsule, other: &Capsule) -> Option<(f64, Vector3<f64>, Point3<f64>)> {
    let (cj, co) = closest_points_segments(&jaw.a, &jaw.b, &other.a, &other.b);
    let d = cj - co;
    let dist = d.norm();
    let depth = jaw.radius + other.radius - dist;
    if depth <= 0.0 {
        return None;
    }
    let n = if dist > 1e-12 {
        d / dist
    } else {
        // Axes touch: push back out of the mouth.
        -Vector3::z()
    };
    Some((depth, n, cj))
}

const ADVECT_RADIUS_PX: f64 = 6.0;

/// Target tracking state for the proportional stand-in policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracker {
    pub point: Point2<f64>,
    /// Target depth along tool `z`.
    pub depth: f64,
    /// Target mask and tool pose of the previous policy frame.
    pub prev: Option<(Mask, Pose)>,
}

impl Tracker {
    pub fn new(point: Point2<f64>, depth: f64) -> Self {
        Self { point, depth, prev: None }
    }

    /// Mean flow over previous-frame target pixels near the tracked point.
    fn advect(&self, flow: &FlowField, radius: f64) -> Option<Vector2<f64>> {
        let (m, _) = self.prev.as_ref()?;
        let mut sum = Vector2::zeros();
        let mut n = 0usize;
        let c = self.point;
        let u0 = (c.x - radius).floor().max(0.0) as u32;
        let v0 = (c.y - radius).floor().max(0.0) as u32;
        let u1 = ((c.x + radius).ceil().max(0.0) as u32).min(m.width.saturating_sub(1));
        let v1 = ((c.y + radius).ceil().max(0.0) as u32).min(m.height.saturating_sub(1));
        for v in v0..=v1 {
            for u in u0..=u1 {
                let i = (v * m.width + u) as usize;
                if m.get(u, v) && flow.valid[i] && (Point2::new(u as f64, v as f64) - c).norm() <= radius {
                    sum += Vector2::new(flow.flow[i][0] as f64, flow.flow[i][1] as f64);
                    n += 1;
                }
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PolicyKind {
    Proportional,
    Constant { vx: f64, vy: f64 },
}

/// Midpoint of the closest approach between two camera rays.
fn triangulate(cam: &CameraModel, pose_a: &Pose, pa: &Point2<f64>, pose_b: &Pose, pb: &Point2<f64>) -> Option<Point3<f64>> {
    let (oa, ob) = (cam.optical_pose(pose_a), cam.optical_pose(pose_b));
    let (ca, cb) = (Point3::from(oa.translation.vector), Point3::from(ob.translation.vector));
    let (da, db) = (oa.rotation * cam.ray(pa), ob.rotation * cam.ray(pb));
    let w = ca - cb;
    let (b, d, e) = (da.dot(&db), da.dot(&w), db.dot(&w));
    let den = 1.0 - b * b;
    if den < 1e-9 {
        return None;
    }
    let (s, t) = ((b * e - d) / den, (e - b * d) / den);
    (s > 0.0 && t > 0.0).then(|| Point3::from(0.5 * ((ca + da * s).coords + (cb + db * t).coords)))
}

/// Pixel of the blade line (tool `x = 0`, `y` of the hit point) at tool depth `z`.
fn blade_line_pixel(cam: &CameraModel, z: f64) -> Option<Point2<f64>> {
    let zt = z.max(HIT_POINT_TOOL[2]);
    cam.project(&(cam.mount.inverse() * Point3::new(HIT_POINT_TOOL[0], HIT_POINT_TOOL[1], zt)))
}

/// Proportional image-space law.
///
/// The tracked point is carried by the flow since the previous frame and
/// snapped onto a local line fit of the target mask. Its depth comes from
/// triangulating that flow against the known tool motion. The goal pixel is
/// the blade line at that depth, which reaches the hit pixel at contact;
/// the action is `clamp(K (p_target - p_goal))` in normalized coordinates.
/// `None` when the target mask has no pixels near the tracked point.
pub fn visual_policy(
    cam: &CameraModel,
    tool_pose: &Pose,
    flow: Option<&FlowField>,
    target: Option<&InstanceMask>,
    tracker: &mut Tracker,
    params: &ControlParams,
) -> Option<(ControlAction, Point2<f64>)> {
    let target = target?;
    let (w, h) = (cam.width as f64, cam.height as f64);
    if let Some((_, prev_pose)) = &tracker.prev {
        let advance = (prev_pose.inverse() * tool_pose).translation.vector.z;
        tracker.depth -= advance;
        if let Some(df) = flow.and_then(|f| tracker.advect(f, ADVECT_RADIUS_PX)) {
            let moved = tracker.point + df;
            if let Some(x) = triangulate(cam, prev_pose, &tracker.point, tool_pose, &moved) {
                let z = (tool_pose.inverse() * x).z;
                if z > 0.0 && z < 2.0 {
                    tracker.depth = z;
                }
            }
            tracker.point = moved;
        }
    }
    let p = snap_to_mask(&target.mask, &tracker.point, params.track_window_px, params.reacquire_px)?;
    tracker.point = p;
    tracker.prev = Some((target.mask.clone(), *tool_pose));
    let goal = blade_line_pixel(cam, tracker.depth)?;
    let e = Vector2::new((p.x - goal.x) / w, (p.y - goal.y) / h);
    Some((ControlAction::clamped(params.gain * e.x, params.gain * e.y), Point2::new(p.x / w, p.y / h)))
}

/// Project `p` onto a line fitted to mask pixels near it.
fn snap_to_mask(mask: &Mask, p: &Point2<f64>, window: f64, reacquire: f64) -> Option<Point2<f64>> {
    let near = |center: &Point2<f64>, r: f64| -> Mask {
        let (w, h) = (mask.width, mask.height);
        let mut m = Mask::new(w, h);
        let u0 = (center.x - r).floor().max(0.0) as u32;
        let v0 = (center.y - r).floor().max(0.0) as u32;
        let u1 = ((center.x + r).ceil().max(0.0) as u32).min(w.saturating_sub(1));
        let v1 = ((center.y + r).ceil().max(0.0) as u32).min(h.saturating_sub(1));
        if center.x + r < 0.0 || center.y + r < 0.0 {
            return m;
        }
        for v in v0..=v1 {
            for u in u0..=u1 {
                if mask.get(u, v) && (Point2::new(u as f64, v as f64) - center).norm() <= r {
                    m.set(u, v, true);
                }
            }
        }
        m
    };
    let mut center = *p;
    let mut win = near(&center, window);
    if win.count() < 2 {
        // Re-acquire: jump to the closest target pixel.
        let wide = near(&center, reacquire);
        let closest = wide
            .pixels()
            .map(|(u, v)| Point2::new(u as f64, v as f64))
            .min_by(|a, b| (a - center).norm().total_cmp(&(b - center).norm()))?;
        center = closest;
        win = near(&center, window);
        if win.count() < 2 {
            return Some(center);
        }
    }
    let seg = fit_segment(&win, 0).ok()?;
    let t = (center - seg.center).dot(&seg.direction).clamp(-seg.half_length, seg.half_length);
    Some(seg.center + seg.direction * t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridState {
    pub phase: Phase,
    pub elapsed_s: f64,
    pub p_target: Option<Point2<f64>>,
    pub p_hit: Point2<f64>,
    pub wrench: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlStep {
    pub step: u64,
    pub phase: Phase,
    pub action: [f64; 2],
    pub twist: [f64; 3],
    pub wrench: [f64; 6],
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ApproachOutcome {
    Cut { outcome: CutOutcome },
    Abort { code: AbortCode },
}

impl ApproachOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, ApproachOutcome::Cut { outcome: CutOutcome::Success { .. } })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproachResult {
    pub outcome: ApproachOutcome,
    pub steps: Vec<ControlStep>,
    /// Phases visited, in order.
    pub phases: Vec<Phase>,
    pub duration_s: f64,
    pub visual_s: f64,
    pub total_reward: f64,
    pub final_pose: PoseRecord,
}

/// What one approach should aim at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproachTarget {
    /// Ground-truth branch used to pick the target instance from the masks.
    pub branch_id: Option<u32>,
    /// Initial tracked point, usually the detection estimate.
    pub estimate: Point3<f64>,
    /// Point scored by the reward.
    pub reward_point: Point3<f64>,
}

/// Branches whose entry into the mouth aborts the approach.
fn protected(class: BranchClass) -> bool {
    matches!(class, BranchClass::Leader | BranchClass::Wire | BranchClass::Post)
}

fn in_failure_region(world: &WorldModel, branch_id: u32, tool_inv: &Pose, p: &ControlParams) -> bool {
    let Some(b) = world.branch(branch_id) else { return false };
    let zlo = p.failure_z - 0.2;
    let center = Point3::new(0.0, HIT_POINT_TOOL[1], 0.5 * (zlo + p.failure_z));
    let half = Vector3::new(p.failure_half_x, p.failure_half_y, 0.5 * (p.failure_z - zlo));
    b.centerline.windows(2).any(|s| segment_box_overlap(&(tool_inv * s[0]), &(tool_inv * s[1]), &center, &half).is_some())
}

fn monitor_hit(world: &WorldModel, target: Option<u32>, tool_inv: &Pose, mouth: &CutterMouth) -> bool {
    let center = Point3::from(mouth.center);
    let half = Vector3::from(mouth.half_extents);
    world.branches.iter().filter(|b| protected(b.class) && Some(b.id) != target).any(|b| {
        b.centerline.windows(2).any(|s| segment_box_overlap(&(tool_inv * s[0]), &(tool_inv * s[1]), &center, &half).is_some())
    })
}

/// Run one approach from `start_pose`, mutating `world` only through the final cut.
pub fn run_approach(
    world: &mut WorldModel,
    cam: &CameraModel,
    start_pose: &Pose,
    target: &ApproachTarget,
    policy: PolicyKind,
    params: &ControlParams,
    noise_seed: u64,
) -> ApproachResult {
    let hit_norm = hit_point_pixel(cam).expect("hit point in front of the camera");
    let period = params.steps(1.0 / params.policy_hz).max(1);
    let dwell_steps = params.steps(params.dwell_s);
    let adm_timeout = params.steps(params.admittance_timeout_s);
    let vis_timeout = params.steps(params.visual_timeout_s);
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let normal = (params.force_noise_sigma > 0.0).then(|| Normal::new(0.0, params.force_noise_sigma).unwrap());

    let mut pose = *start_pose;
    let mut phase = Phase::Visual;
    let mut phases = vec![Phase::Visual];
    let mut action = ControlAction { vx: 0.0, vy: 0.0 };
    let mut tracker = Tracker::new(
        cam.project_world(&pose, &target.estimate).unwrap_or(Point2::new(cam.cx, cam.cy)),
        (pose.inverse() * target.estimate).z,
    );
    let mut last_policy_pose: Option<Pose> = None;
    let mut steps = Vec::new();
    let mut total_reward = 0.0;
    let mut adm_entry = 0u64;
    let mut visual_steps = 0u64;
    let mut dwell = 0u64;
    let mut wrench = Vector6::zeros();
    let mut k = 0u64;

    let outcome = loop {
        if phase == Phase::Visual {
            if k % period == 0 {
                let (_, inst) = render_instances(cam, &pose, world, &params.render);
                let flow = last_policy_pose.map(|prev| synth_flow(cam, &prev, &pose, world));
                let tinst = target.branch_id.and_then(|id| inst.iter().find(|i| i.source_branch_id == Some(id)));
                match policy {
                    PolicyKind::Proportional => {
                        match visual_policy(cam, &pose, flow.as_ref(), tinst, &mut tracker, params) {
                            Some((a, _)) => action = a,
                            None => break ApproachOutcome::Abort { code: AbortCode::TargetLost },
                        }
                    }
                    PolicyKind::Constant { vx, vy } => {
                        if tinst.is_none() {
                            break ApproachOutcome::Abort { code: AbortCode::TargetLost };
                        }
                        action = ControlAction::clamped(vx, vy);
                    }
                }
                last_policy_pose = Some(pose);
            }
            if k >= vis_timeout {
                break ApproachOutcome::Abort { code: AbortCode::Timeout };
            }
        }

        let twist = match phase {
            Phase::Visual => ee_twist(&action, params.speed),
            _ => Vector3::new(
                params.admittance_gain * wrench[0],
                params.admittance_gain * wrench[1],
                params.admittance_gain * wrench[2] + params.creep,
            ),
        };
        pose *= Translation3::from(twist * params.dt);
        k += 1;
        if phase == Phase::Visual {
            visual_steps += 1;
        }

        wrench = contact_wrench(&pose, world, params.stiffness);
        if let Some(n) = &normal {
            for i in 0..6 {
                wrench[i] += n.sample(&mut rng);
            }
        }
        let force = wrench.fixed_rows::<3>(0).norm();

        let rp = cam.project_world(&pose, &target.reward_point);
        let in_image = rp.is_some_and(|p| cam.in_image(&p));
        let r = match rp {
            Some(p) if in_image => {
                reward(&Point2::new(p.x / cam.width as f64, p.y / cam.height as f64), &hit_norm, &params.reward, true)
            }
            _ => reward(&Point2::origin(), &hit_norm, &params.reward, false),
        };
        total_reward += r;
        steps.push(ControlStep {
            step: k,
            phase,
            action: [action.vx, action.vy],
            twist: [twist.x, twist.y, twist.z],
            wrench: [wrench[0], wrench[1], wrench[2], wrench[3], wrench[4], wrench[5]],
            reward: r,
        });

        let inv = pose.inverse();
        if let Some(id) = target.branch_id {
            if in_failure_region(world, id, &inv, params) {
                break ApproachOutcome::Abort { code: AbortCode::Miss };
            }
        }
        if params.abort_on_wrong_object && monitor_hit(world, target.branch_id, &inv, &params.mouth) {
            break ApproachOutcome::Abort { code: AbortCode::WrongObject };
        }

        match phase {
            Phase::Visual if force > params.force_switch_n => {
                phase = Phase::Admittance;
                phases.push(phase);
                adm_entry = k;
            }
            Phase::Admittance => {
                if force >= params.band_lo_n && force <= params.band_hi_n {
                    dwell += 1;
                } else {
                    dwell = 0;
                }
                if dwell >= dwell_steps {
                    phases.push(Phase::Cut);
                    let outcome = apply_cut_with(world, &pose, &params.mouth);
                    phases.push(Phase::Done);
                    break ApproachOutcome::Cut { outcome };
                }
                if k - adm_entry >= adm_timeout {
                    break ApproachOutcome::Abort { code: AbortCode::Timeout };
                }
            }
            _ => {}
        }
    };
    if matches!(outcome, ApproachOutcome::Abort { .. }) {
        phases.push(Phase::Abort);
    }
    ApproachResult {
        outcome,
        steps,
        phases,
        duration_s: k as f64 * params.dt,
        visual_s: visual_steps as f64 * params.dt,
        total_reward,
        final_pose: (&pose).into(),
    }
}

/// Single-target test scene: one leader with one side branch and the wires,
/// with the tool facing the trellis so that the detection estimate sits on
/// the approach plane and the true target is displaced along the approach
/// axis by up to `max_displacement_m`.
#[derive(Debug, Clone)]
pub struct ApproachScene {
    pub world: WorldModel,
    pub target: CutTarget,
    pub start_pose: Pose,
    pub displacement_m: f64,
    pub approach: ApproachTarget,
}

pub const APPROACH_DEPTH_M: f64 = 0.30;

pub fn approach_scene(seed: u64, max_displacement_m: f64) -> Result<ApproachScene, WorldError> {
    let params = GeneratorParams {
        n_leaders: 1,
        sides_per_leader: [1, 1],
        spurs_per_leader: [0, 0],
        ..Default::default()
    };
    let world = generate_orchard(&params, seed)?;
    let target = ground_truth_targets(&world)[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce9_e5ce_9e00_0000);
    let d = if max_displacement_m > 0.0 {
        rand::Rng::random_range(&mut rng, -max_displacement_m..=max_displacement_m)
    } else {
        0.0
    };
    let rot = facing_pose(&world.trellis, 0.0, 0.0, 0.0).rotation;
    let z = rot * Vector3::z();
    let estimate = target.target_point + z * d;
    let start_pose = Pose::from_parts(Translation3::from(estimate.coords - z * APPROACH_DEPTH_M), rot);
    let approach = ApproachTarget { branch_id: Some(target.branch_id), estimate, reward_point: target.target_point };
    Ok(ApproachScene { world, target, start_pose, displacement_m: d, approach })
}

/// Seconds spent in admittance for a finished approach, from its phase record.
pub fn admittance_duration(result: &ApproachResult, dt: f64) -> f64 {
    result.steps.iter().filter(|s| s.phase == Phase::Admittance).count() as f64 * dt
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::translation;
    use crate::world::{Branch, TrellisConfig};
    use proptest::prelude::*;

    #[test]
    fn reward_examples() {
        let p = RewardParams::default();
        let h = Point2::new(0.5, 0.3);
        assert_eq!(reward(&h, &h, &p, true), 0.05);
        assert!((reward(&Point2::new(0.75, 0.3), &h, &p, true) - 0.025).abs() < 1e-15);
        assert_eq!(reward(&Point2::new(1.2, 0.3), &h, &p, true), 0.0);
        assert_eq!(reward(&h, &h, &p, false), p.failure_penalty);
    }

    #[test]
    fn twist_examples() {
        assert_eq!(ee_twist(&ControlAction { vx: 0.0, vy: 0.0 }, 0.03), Vector3::new(0.0, 0.0, 0.03));
        assert_eq!(ee_twist(&ControlAction { vx: 1.0, vy: -1.0 }, 0.03), Vector3::new(0.03, -0.03, 0.03));
        let a = ControlAction::clamped(4.0 * 0.5, 0.0);
        assert_eq!((a.vx, a.vy), (1.0, 0.0));
    }

    proptest! {
        #[test]
        fn twist_bounded(vx in -5.0f64..5.0, vy in -5.0f64..5.0) {
            let t = ee_twist(&ControlAction::clamped(vx, vy), 0.03);
            prop_assert!(t.norm() <= 0.03 * 3f64.sqrt() + 1e-15);
        }
    }

    #[test]
    fn hit_pixel_is_fixed_and_visible() {
        let cam = CameraModel::default();
        let h = hit_point_pixel(&cam).unwrap();
        assert!((0.0..=1.0).contains(&h.x) && (0.0..=1.0).contains(&h.y));
        assert!((h.x - 0.5).abs() < 1e-12);
    }

    fn world_with(branches: Vec<Branch>) -> WorldModel {
        WorldModel { trellis: TrellisConfig::default(), branches, rng_seed: 0, cut_offset_m: 0.05 }
    }

    fn rod(id: u32, class: BranchClass, a: [f64; 3], b: [f64; 3], r: f64) -> Branch {
        Branch {
            id,
            class,
            centerline: vec![Point3::from(a), Point3::from(b)],
            radius_m: vec![r],
            parent_id: None,
            join_point: None,
        }
    }

    #[test]
    fn wrench_zero_without_contact() {
        let w = world_with(vec![rod(0, BranchClass::SideBranch, [-1.0, 0.0, 1.0], [1.0, 0.0, 1.0], 0.005)]);
        assert_eq!(contact_wrench(&Pose::identity(), &w, 1500.0), Vector6::zeros());
    }

    #[test]
    fn one_millimetre_is_switch_force() {
        // Rod along tool x just above the upper jaw tip, overlapping it by 1 mm.
        let tip = Point3::new(0.0, 0.06, 0.057);
        let r = 0.005;
        let y = tip.y + 0.004 + r - 0.001;
        let w = world_with(vec![rod(0, BranchClass::SideBranch, [-0.2, y, tip.z], [0.2, y, tip.z], r)]);
        let f = contact_wrench(&Pose::identity(), &w, 1500.0);
        assert!((f.fixed_rows::<3>(0).norm() - 1.5).abs() < 1e-9);
        assert!((f[1] + 1.5).abs() < 1e-9);
    }

    #[test]
    fn straight_approach_cuts() {
        // Straight run: a rod across the mouth 0.30 m ahead; the V closes on it near z = 0.035.
        let cam = CameraModel::default();
        let mut w = world_with(vec![rod(0, BranchClass::SideBranch, [-0.3, 0.025, 0.30], [0.3, 0.025, 0.30], 0.005)]);
        let target = ApproachTarget {
            branch_id: Some(0),
            estimate: Point3::new(0.0, 0.025, 0.30),
            reward_point: Point3::new(0.0, 0.025, 0.30),
        };
        let p = ControlParams::default();
        let r = run_approach(&mut w, &cam, &Pose::identity(), &target, PolicyKind::Constant { vx: 0.0, vy: 0.0 }, &p, 0);
        assert!(r.outcome.is_success(), "{:?}", r.outcome);
        assert!((r.visual_s - 8.7).abs() < 0.5, "visual {}", r.visual_s);
        assert_eq!(r.phases, vec![Phase::Visual, Phase::Admittance, Phase::Cut, Phase::Done]);
    }

    #[test]
    fn unbalanced_admittance_times_out() {
        // Creep balances at 7.5 N, above the band, so the dwell never completes.
        let cam = CameraModel::default();
        let p = ControlParams { stiffness: 1500.0, creep: 0.03, band_hi_n: 3.0, band_lo_n: 2.9, ..Default::default() };
        let mut w = world_with(vec![rod(0, BranchClass::SideBranch, [-0.3, 0.025, 0.10], [0.3, 0.025, 0.10], 0.005)]);
        let target = ApproachTarget {
            branch_id: Some(0),
            estimate: Point3::new(0.0, 0.025, 0.10),
            reward_point: Point3::new(0.0, 0.025, 0.10),
        };
        let start = translation(0.0, 0.0, 0.0);
        let r = run_approach(&mut w, &cam, &start, &target, PolicyKind::Constant { vx: 0.0, vy: 0.0 }, &p, 0);
        assert_eq!(r.outcome, ApproachOutcome::Abort { code: AbortCode::Timeout });
        assert_eq!(admittance_duration(&r, p.dt), 15.0);
    }

    #[test]
    fn switch_within_one_step() {
        let cam = CameraModel::default();
        let mut sc = approach_scene(3, 0.0).unwrap();
        let p = ControlParams::default();
        let r = run_approach(&mut sc.world, &cam, &sc.start_pose, &sc.approach, PolicyKind::Proportional, &p, 0);
        let first = r.steps.iter().position(|s| Vector3::from_column_slice(&s.wrench[..3]).norm() > p.force_switch_n).unwrap();
        assert_eq!(r.steps[first].phase, Phase::Visual);
        assert_eq!(r.steps[first + 1].phase, Phase::Admittance);
        assert!(r.steps[..first].iter().all(|s| s.phase == Phase::Visual));
    }

    proptest! {
        #[test]
        fn contact_force_along_normal(
            t in -0.8f64..0.8, lift in 0.0005f64..0.003,
            ay in -1.0f64..1.0, az in -1.0f64..1.0,
        ) {
            // Rod crossing the upper jaw, pushed in along a random direction normal to the jaw axis.
            let jaw = cutter_jaws()[0];
            let axis = (jaw.b - jaw.a).normalize();
            let q = jaw.a + (jaw.b - jaw.a) * (0.5 + 0.5 * t);
            let d = Vector3::new(1.0, ay, az).normalize();
            let side = {
                let v = Vector3::new(0.0, -axis.z, axis.y);
                let s = d - axis * d.dot(&axis);
                if s.norm() < 1e-3 { v } else { s.normalize() }
            };
            let rod_dir = side.cross(&axis).normalize();
            let r = 0.005;
            let c = q + side * (jaw.radius + r - lift);
            let w = world_with(vec![rod(0, BranchClass::SideBranch, (c - rod_dir * 0.3).into(), (c + rod_dir * 0.3).into(), r)]);
            let f = contact_wrench(&Pose::identity(), &w, 1500.0);
            let fv = Vector3::new(f[0], f[1], f[2]);
            // A second jaw contact would spoil the single-contact oracle.
            let other = cutter_jaws()[1];
            prop_assume!(capsule_contact(&other, &Capsule::new(c - rod_dir * 0.3, c + rod_dir * 0.3, r)).is_none());
            prop_assert!((fv.norm() - 1500.0 * lift).abs() < 1e-6);
            prop_assert!((fv.normalize() + side).norm() < 1e-6);
        }
    }

    #[test]
    fn proportional_policy_beats_constant_actions() {
        // Straight rod across the view, 6 cm off the blade line.
        let cam = CameraModel::default();
        let p = ControlParams::default();
        let y = HIT_POINT_TOOL[1] + 0.06;
        let world = world_with(vec![rod(0, BranchClass::SideBranch, [-0.25, y, 0.30], [0.25, y, 0.30], 0.006)]);
        let target = ApproachTarget {
            branch_id: Some(0),
            estimate: Point3::new(0.0, y, 0.30),
            reward_point: Point3::new(0.0, y, 0.30),
        };
        let run = |policy| {
            let mut w = world.clone();
            let r = run_approach(&mut w, &cam, &Pose::identity(), &target, policy, &p, 0);
            (r.total_reward, r.outcome.is_success())
        };
        let (best, ok) = run(PolicyKind::Proportional);
        assert!(ok);
        for vx in [-0.5, 0.0, 0.5] {
            for vy in [-1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 1.0] {
                let (r, _) = run(PolicyKind::Constant { vx, vy });
                assert!(best > r, "constant ({vx}, {vy}): {r} >= {best}");
            }
        }
    }
}
