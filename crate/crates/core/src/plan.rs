//! Zigzag scan construction and RRT-Connect joint-space planning.

use nalgebra::Translation3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{Arm, ArmState, IkOptions, DOF};
use crate::geometry::{rotation_from_axes, Capsule, Pose};
use crate::world::{TrellisConfig, WorldModel};

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("scan pose {index} (rail {rail} m, pose {pose}) is unreachable")]
    UnreachableScanPose { index: usize, rail: f64, pose: usize },
    #[error("start state is in collision")]
    StartInCollision,
    #[error("goal state is in collision")]
    GoalInCollision,
    #[error("no path found after {0} samples")]
    Failure(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanParams {
    pub prismatic_positions: Vec<f64>,
    pub n_poses: usize,
    pub pose_spacing_m: f64,
    /// Slope distance of the lowest scan pose.
    pub first_pose_s_m: f64,
    /// Tool origin distance in front of the trellis plane.
    pub standoff_m: f64,
    /// Tool `x` at rail position zero.
    pub row_x_m: f64,
    /// Second view for flow, along tool `y`.
    pub offset_view_m: f64,
}

impl Default for ScanParams {
    fn default() -> Self {
        Self {
            prismatic_positions: vec![0.0, 0.2, 0.4, 0.6],
            n_poses: 7,
            pose_spacing_m: 0.10,
            first_pose_s_m: 0.9,
            standoff_m: 0.285,
            row_x_m: 0.05,
            offset_view_m: 0.015,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPlan {
    pub waypoints: Vec<ArmState>,
    /// Target tool pose per waypoint.
    pub tool_poses: Vec<crate::geometry::PoseRecord>,
    /// Index of each waypoint within its vertical sweep, in world order (0 = lowest).
    pub pose_index: Vec<usize>,
    pub rail_index: Vec<usize>,
    pub offset_view_m: f64,
}

impl ScanPlan {
    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn tool_pose(&self, i: usize) -> Pose {
        Pose::from(&self.tool_poses[i])
    }

    /// Tool pose of the flow companion view.
    pub fn offset_pose(&self, i: usize) -> Pose {
        self.tool_pose(i) * Translation3::new(0.0, self.offset_view_m, 0.0)
    }
}

/// Tool pose facing the trellis at row position `x`, slope distance `s`.
///
/// Tool `z` points into the wall, `y` up the slope, `x` completes the frame.
pub fn facing_pose(trellis: &TrellisConfig, x: f64, s: f64, standoff: f64) -> Pose {
    let p = trellis.point(x, s, standoff);
    let z = -trellis.normal();
    let y = trellis.up();
    Pose::from_parts(Translation3::from(p.coords), rotation_from_axes(&y.cross(&z), &y, &z))
}

/// Zigzag sweep: up at the first rail stop, down at the next, and so on.
pub fn build_scan(arm: &Arm, trellis: &TrellisConfig, params: &ScanParams) -> Result<ScanPlan, PlanError> {
    let mut plan = ScanPlan {
        waypoints: Vec::new(),
        tool_poses: Vec::new(),
        pose_index: Vec::new(),
        rail_index: Vec::new(),
        offset_view_m: params.offset_view_m,
    };
    let mut seed = arm.home();
    for (ri, &rail) in params.prismatic_positions.iter().enumerate() {
        let order: Vec<usize> = if ri % 2 == 0 {
            (0..params.n_poses).collect()
        } else {
            (0..params.n_poses).rev().collect()
        };
        for k in order {
            let s = params.first_pose_s_m + params.pose_spacing_m * k as f64;
            let target = facing_pose(trellis, params.row_x_m + rail, s, params.standoff_m);
            seed.q[0] = rail;
            let index = plan.waypoints.len();
            let q = arm
                .ik_solve(&target, &seed, IkOptions { lock_prismatic: true })
                .map_err(|_| PlanError::UnreachableScanPose { index, rail, pose: k })?;
            plan.waypoints.push(q);
            plan.tool_poses.push((&target).into());
            plan.pose_index.push(k);
            plan.rail_index.push(ri);
            seed = q;
        }
    }
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    pub seed: u64,
    pub max_samples: usize,
    pub extend_step: f64,
    pub goal_bias: f64,
    pub resolution_rad: f64,
    pub resolution_m: f64,
    pub shortcut_iters: usize,
    /// Largest per-joint change between consecutive returned states.
    pub step_max: f64,
    pub include_prismatic: bool,
    /// rad per meter when the rail counts toward displacement.
    pub prismatic_scale: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            seed: 0,
            max_samples: 5000,
            extend_step: 0.15,
            goal_bias: 0.1,
            resolution_rad: 0.01,
            resolution_m: 0.001,
            shortcut_iters: 50,
            step_max: 0.2,
            include_prismatic: false,
            prismatic_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPath {
    pub states: Vec<ArmState>,
    pub total_displacement_rad: f64,
    /// Displacement of the unsmoothed tree path.
    pub raw_displacement_rad: f64,
}

/// Sum over segments of revolute `|Δq|`, plus scaled rail motion when enabled.
pub fn path_displacement(states: &[ArmState], params: &PlannerParams) -> f64 {
    states
        .windows(2)
        .map(|w| {
            let mut d: f64 = (1..DOF).map(|i| (w[1].q[i] - w[0].q[i]).abs()).sum();
            if params.include_prismatic {
                d += params.prismatic_scale * (w[1].q[0] - w[0].q[0]).abs();
            }
            d
        })
        .sum()
}

pub fn accept_plan(path: &JointPath, threshold_rad: f64) -> bool {
    path.total_displacement_rad <= threshold_rad
}

/// Collision oracle shared by the planner: arm links against a fixed world.
pub struct CollisionChecker<'a> {
    pub arm: &'a Arm,
    pub world: &'a WorldModel,
    obstacles: Vec<Capsule>,
    pub checks: std::cell::Cell<usize>,
}

impl<'a> CollisionChecker<'a> {
    pub fn new(arm: &'a Arm, world: &'a WorldModel) -> Self {
        Self { arm, world, obstacles: Arm::obstacles(world), checks: std::cell::Cell::new(0) }
    }

    pub fn in_collision(&self, s: &ArmState) -> bool {
        self.checks.set(self.checks.get() + 1);
        !self.arm.within_limits(s) || self.arm.check_collision_with(s, self.world, &self.obstacles, 0.0)
    }

    /// Interpolation count so every joint moves at most one resolution step.
    pub fn edge_steps(a: &ArmState, b: &ArmState, res_rad: f64, res_m: f64) -> usize {
        let mut n = ((b.q[0] - a.q[0]).abs() / res_m).ceil();
        for i in 1..DOF {
            n = n.max(((b.q[i] - a.q[i]).abs() / res_rad).ceil());
        }
        n as usize
    }

    pub fn edge_free(&self, a: &ArmState, b: &ArmState, res_rad: f64, res_m: f64) -> bool {
        let n = Self::edge_steps(a, b, res_rad, res_m).max(1);
        (1..=n).all(|k| !self.in_collision(&lerp(a, b, k as f64 / n as f64)))
    }
}

pub fn lerp(a: &ArmState, b: &ArmState, t: f64) -> ArmState {
    let mut q = [0.0; DOF];
    for i in 0..DOF {
        q[i] = a.q[i] + (b.q[i] - a.q[i]) * t;
    }
    if t == 1.0 {
        return *b;
    }
    ArmState::new(q)
}

fn dist(a: &ArmState, b: &ArmState) -> f64 {
    (a.vector() - b.vector()).norm()
}

struct Tree {
    nodes: Vec<ArmState>,
    parent: Vec<usize>,
}

impl Tree {
    fn new(root: ArmState) -> Self {
        Self { nodes: vec![root], parent: vec![usize::MAX] }
    }

    fn nearest(&self, q: &ArmState) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = dist(n, q);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    fn add(&mut self, q: ArmState, parent: usize) -> usize {
        self.nodes.push(q);
        self.parent.push(parent);
        self.nodes.len() - 1
    }

    fn branch(&self, mut i: usize) -> Vec<ArmState> {
        let mut out = Vec::new();
        while i != usize::MAX {
            out.push(self.nodes[i]);
            i = self.parent[i];
        }
        out
    }
}

enum Extend {
    Trapped,
    Advanced(usize),
    Reached(usize),
}

fn extend(tree: &mut Tree, target: &ArmState, cc: &CollisionChecker, p: &PlannerParams) -> Extend {
    let near = tree.nearest(target);
    let from = tree.nodes[near];
    let d = dist(&from, target);
    let (to, reached) = if d <= p.extend_step { (*target, true) } else { (lerp(&from, target, p.extend_step / d), false) };
    if !cc.edge_free(&from, &to, p.resolution_rad, p.resolution_m) {
        return Extend::Trapped;
    }
    let id = tree.add(to, near);
    if reached {
        Extend::Reached(id)
    } else {
        Extend::Advanced(id)
    }
}

fn connect(tree: &mut Tree, target: &ArmState, cc: &CollisionChecker, p: &PlannerParams) -> Extend {
    loop {
        match extend(tree, target, cc, p) {
            Extend::Advanced(_) => continue,
            other => return other,
        }
    }
}

/// Plan a collision-free joint path from `start` to `goal`.
///
/// Tries the straight segment first, then grows two trees toward each other.
/// The result is shortcut-smoothed and resampled so that no joint moves more
/// than `step_max` between consecutive states.
pub fn rrt_connect(
    arm: &Arm,
    world: &WorldModel,
    start: &ArmState,
    goal: &ArmState,
    params: &PlannerParams,
) -> Result<JointPath, PlanError> {
    let cc = CollisionChecker::new(arm, world);
    if cc.in_collision(start) {
        return Err(PlanError::StartInCollision);
    }
    if cc.in_collision(goal) {
        return Err(PlanError::GoalInCollision);
    }
    if start == goal {
        return Ok(JointPath { states: vec![*start], total_displacement_rad: 0.0, raw_displacement_rad: 0.0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let raw = if cc.edge_free(start, goal, params.resolution_rad, params.resolution_m) {
        vec![*start, *goal]
    } else {
        grow(&cc, start, goal, params, &mut rng)?
    };
    let raw_displacement_rad = path_displacement(&raw, params);
    let smoothed = shortcut(&cc, raw, params, &mut rng);
    let states = densify(&smoothed, params.step_max);
    Ok(JointPath { total_displacement_rad: path_displacement(&states, params), states, raw_displacement_rad })
}

fn grow(
    cc: &CollisionChecker,
    start: &ArmState,
    goal: &ArmState,
    p: &PlannerParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ArmState>, PlanError> {
    let lim = &cc.arm.config;
    let mut a = Tree::new(*start);
    let mut b = Tree::new(*goal);
    let mut a_is_start = true;
    for _ in 0..p.max_samples {
        let sample = if rng.random::<f64>() < p.goal_bias {
            b.nodes[0]
        } else {
            let mut q = [0.0; DOF];
            for (i, v) in q.iter_mut().enumerate() {
                *v = rng.random_range(lim.q_min[i]..=lim.q_max[i]);
            }
            ArmState::new(q)
        };
        let new_id = match extend(&mut a, &sample, cc, p) {
            Extend::Trapped => None,
            Extend::Advanced(id) | Extend::Reached(id) => Some(id),
        };
        if let Some(id) = new_id {
            let q_new = a.nodes[id];
            if let Extend::Reached(bid) = connect(&mut b, &q_new, cc, p) {
                let mut first = a.branch(id);
                first.reverse();
                let second = b.branch(bid);
                // `second` starts with q_new again.
                first.extend(second.into_iter().skip(1));
                if !a_is_start {
                    first.reverse();
                }
                return Ok(first);
            }
        }
        std::mem::swap(&mut a, &mut b);
        a_is_start = !a_is_start;
    }
    Err(PlanError::Failure(p.max_samples))
}

fn shortcut(cc: &CollisionChecker, mut path: Vec<ArmState>, p: &PlannerParams, rng: &mut ChaCha8Rng) -> Vec<ArmState> {
    for _ in 0..p.shortcut_iters {
        if path.len() < 3 {
            break;
        }
        let i = rng.random_range(0..path.len() - 2);
        let j = rng.random_range(i + 2..path.len());
        if cc.edge_free(&path[i], &path[j], p.resolution_rad, p.resolution_m) {
            path.drain(i + 1..j);
        }
    }
    path
}

fn densify(path: &[ArmState], step_max: f64) -> Vec<ArmState> {
    let mut out = vec![path[0]];
    for w in path.windows(2) {
        let d = (w[1].vector() - w[0].vector()).amax();
        let n = ((d / step_max).ceil() as usize).max(1);
        for k in 1..=n {
            out.push(lerp(&w[0], &w[1], k as f64 / n as f64));
        }
    }
    out
}

/// Independent re-check of a path at the given resolution.
pub fn path_is_free(arm: &Arm, world: &WorldModel, path: &JointPath, res_rad: f64, res_m: f64) -> bool {
    let cc = CollisionChecker::new(arm, world);
    path.states.iter().all(|s| !cc.in_collision(s))
        && path.states.windows(2).all(|w| cc.edge_free(&w[0], &w[1], res_rad, res_m))
}
