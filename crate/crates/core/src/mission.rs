//! One pruning location end to end: scan, detect, dedupe, score, approach
//! and cut, with a declarative stage-time model.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Translation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{Arm, ArmConfig, ArmState};
use crate::camera::{synth_flow, CameraModel};
use crate::control::{run_approach, ApproachTarget, ControlParams, PolicyKind};
use crate::detect::{detect_view, MatchParams, PruningCandidate};
use crate::geometry::Pose;
use crate::log::{EpisodeLog, Event, FnCause, FpCategory, Verdict};
use crate::percept::{corrupt, render_instances, InstanceClass, NoiseModel, RenderParams};
use crate::plan::{accept_plan, build_scan, rrt_connect, PlannerParams, ScanParams, ScanPlan};
use crate::world::{ground_truth_targets, BranchClass, CutTarget, WorldModel};

#[derive(Debug, Error)]
pub enum MissionError {
    #[error("world is not eligible: needs at least two leaders with a side branch each")]
    Ineligible,
    #[error("invalid mission config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Intervention {
    /// Skip candidates whose ground-truth source is a spur.
    pub skip_detected_spurs: bool,
    /// Stop an approach when a leader, wire or post enters the mouth.
    pub abort_on_wrong_object: bool,
}

impl Default for Intervention {
    fn default() -> Self {
        Self { skip_detected_spurs: true, abort_on_wrong_object: true }
    }
}

impl Intervention {
    pub fn off() -> Self {
        Self { skip_detected_spurs: false, abort_on_wrong_object: false }
    }
}

/// Fixed stage durations in seconds. Scan aggregates are spread evenly over
/// the reference scan (28 waypoints, 24 in-block moves).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageTiming {
    pub initialize_s: f64,
    pub offset_view_total_s: f64,
    pub between_waypoints_total_s: f64,
    pub axis_move_per_20cm_s: f64,
    pub detection_total_s: f64,
    pub to_approach_s: f64,
    pub approach_s: f64,
    pub cut_s: f64,
    pub retract_s: f64,
    pub reference_waypoints: usize,
    pub reference_in_block_moves: usize,
}

impl Default for StageTiming {
    fn default() -> Self {
        Self {
            initialize_s: 1.0,
            offset_view_total_s: 115.0,
            between_waypoints_total_s: 50.0,
            axis_move_per_20cm_s: 23.0,
            detection_total_s: 49.0,
            to_approach_s: 1.7,
            approach_s: 24.8,
            cut_s: 1.0,
            retract_s: 7.6,
            reference_waypoints: 28,
            reference_in_block_moves: 24,
        }
    }
}

impl StageTiming {
    pub fn validate(&self) -> Result<(), String> {
        let v = [
            self.initialize_s,
            self.offset_view_total_s,
            self.between_waypoints_total_s,
            self.axis_move_per_20cm_s,
            self.detection_total_s,
            self.to_approach_s,
            self.approach_s,
            self.cut_s,
            self.retract_s,
        ];
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err("stage durations must be finite and non-negative".into());
        }
        if self.reference_waypoints == 0 || self.reference_in_block_moves == 0 {
            return Err("reference counts must be positive".into());
        }
        Ok(())
    }

    pub fn offset_view_s(&self) -> f64 {
        self.offset_view_total_s / self.reference_waypoints as f64
    }

    pub fn detection_s(&self) -> f64 {
        self.detection_total_s / self.reference_waypoints as f64
    }

    pub fn arm_move_s(&self) -> f64 {
        self.between_waypoints_total_s / self.reference_in_block_moves as f64
    }

    pub fn axis_move_s(&self, meters: f64) -> f64 {
        self.axis_move_per_20cm_s * meters.abs() / 0.2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimingMode {
    #[default]
    Nominal,
    /// Approach stage uses the simulated controller duration.
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProcessMode {
    /// Operate on new candidates right after each waypoint's detection.
    #[default]
    PerWaypoint,
    /// Scan everything first, then operate.
    AfterScan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MissionConfig {
    pub scan: ScanParams,
    pub attempt_limit: u32,
    pub intervention: Intervention,
    pub timing: StageTiming,
    pub timing_mode: TimingMode,
    pub process: ProcessMode,
    pub dedupe_radius_m: f64,
    pub match_radius_m: f64,
    pub approach_depth_m: f64,
    pub plan_threshold_rad: f64,
    /// Force-sensor noise per attempt, N. Retries differ only through it.
    pub attempt_force_noise_n: f64,
    pub log_control_steps: bool,
    pub camera: CameraModel,
    pub arm: ArmConfig,
    pub planner: PlannerParams,
    pub control: ControlParams,
    pub matching: MatchParams,
    pub render: RenderParams,
    pub noise: NoiseModel,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            scan: ScanParams::default(),
            attempt_limit: 3,
            intervention: Intervention::default(),
            timing: StageTiming::default(),
            timing_mode: TimingMode::Nominal,
            process: ProcessMode::PerWaypoint,
            dedupe_radius_m: 0.05,
            match_radius_m: 0.10,
            approach_depth_m: 0.30,
            plan_threshold_rad: std::f64::consts::PI,
            attempt_force_noise_n: 0.05,
            log_control_steps: true,
            camera: CameraModel::default(),
            arm: ArmConfig::default(),
            planner: PlannerParams::default(),
            control: ControlParams::default(),
            matching: MatchParams::default(),
            render: RenderParams::default(),
            noise: NoiseModel::off(),
        }
    }
}

impl MissionConfig {
    pub fn validate(&self) -> Result<(), MissionError> {
        if self.attempt_limit < 1 {
            return Err(MissionError::Config("attempt_limit must be at least 1".into()));
        }
        if !(self.dedupe_radius_m >= 0.0 && self.match_radius_m > 0.0 && self.approach_depth_m > 0.0) {
            return Err(MissionError::Config("radii and approach depth must be positive".into()));
        }
        self.timing.validate().map_err(MissionError::Config)?;
        self.noise.validate().map_err(MissionError::Config)?;
        self.camera.validate().map_err(|e| MissionError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Greedy 3D clustering. Candidates are visited by decreasing pixel count, so
/// each cluster is represented by its best-seen member. Returns
/// `(representative, members)` in creation order.
pub fn dedupe(cands: &[PruningCandidate], radius: f64) -> Vec<(usize, Vec<usize>)> {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| cands[b].target_pixels.cmp(&cands[a].target_pixels).then(a.cmp(&b)));
    let mut clusters: Vec<(usize, Vec<usize>)> = Vec::new();
    for i in order {
        match clusters.iter_mut().find(|(r, _)| (cands[*r].estimate_3d - cands[i].estimate_3d).norm() <= radius) {
            Some((_, m)) => m.push(i),
            None => clusters.push((i, vec![i])),
        }
    }
    clusters
}

/// False-positive category implied by provenance alone, if any.
pub fn fp_source(c: &PruningCandidate) -> Option<FpCategory> {
    match c.side_source_class {
        Some(BranchClass::Spur) => return Some(FpCategory::Spur),
        Some(BranchClass::Wire) | Some(BranchClass::Post) => return Some(FpCategory::Wire),
        _ => {}
    }
    if c.leader_source.is_none() {
        return Some(FpCategory::SpuriousLeader);
    }
    (c.side_source_class != Some(BranchClass::SideBranch)).then_some(FpCategory::Other)
}

/// Verdict for one deduplicated candidate, claiming its target on a TP.
pub fn score_candidate(
    c: &PruningCandidate,
    targets: &[CutTarget],
    claimed: &mut BTreeSet<u32>,
    match_radius: f64,
) -> Verdict {
    if let Some(category) = fp_source(c) {
        return Verdict::Fp { category };
    }
    let near = |t: &&CutTarget| (t.target_point - c.estimate_3d).norm() <= match_radius;
    let best = targets
        .iter()
        .filter(near)
        .filter(|t| !claimed.contains(&t.branch_id))
        .min_by(|a, b| (a.target_point - c.estimate_3d).norm().total_cmp(&(b.target_point - c.estimate_3d).norm()));
    match best {
        Some(t) => {
            claimed.insert(t.branch_id);
            Verdict::Tp { target_branch_id: t.branch_id }
        }
        None if targets.iter().any(|t| near(&t)) => Verdict::Fp { category: FpCategory::Duplicate },
        None => Verdict::Fp { category: FpCategory::Other },
    }
}

/// Score candidates in order.
pub fn score_detections(cands: &[PruningCandidate], world: &WorldModel, match_radius: f64) -> Vec<Verdict> {
    let targets = ground_truth_targets(world);
    let mut claimed = BTreeSet::new();
    cands.iter().map(|c| score_candidate(c, &targets, &mut claimed, match_radius)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FpCounts {
    pub spur: usize,
    pub wire: usize,
    pub spurious_leader: usize,
    pub duplicate: usize,
    pub other: usize,
}

impl FpCounts {
    pub fn total(&self) -> usize {
        self.spur + self.wire + self.spurious_leader + self.duplicate + self.other
    }

    pub fn add(&mut self, c: FpCategory) {
        match c {
            FpCategory::Spur => self.spur += 1,
            FpCategory::Wire => self.wire += 1,
            FpCategory::SpuriousLeader => self.spurious_leader += 1,
            FpCategory::Duplicate => self.duplicate += 1,
            FpCategory::Other => self.other += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FnCounts {
    pub leader_missed: usize,
    pub intersection_missed: usize,
}

impl FnCounts {
    pub fn total(&self) -> usize {
        self.leader_missed + self.intersection_missed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionLedger {
    pub tp: usize,
    pub fp: FpCounts,
    #[serde(rename = "fn")]
    pub fn_: FnCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTotals {
    pub initialize: f64,
    pub offset_view: f64,
    pub arm_move: f64,
    pub axis_move: f64,
    pub detection: f64,
    pub to_approach: f64,
    pub approach: f64,
    pub cut: f64,
    pub retract: f64,
}

impl StageTotals {
    pub fn scan_total(&self) -> f64 {
        self.initialize + self.offset_view + self.arm_move + self.axis_move + self.detection
    }

    pub fn cut_total(&self) -> f64 {
        self.to_approach + self.approach + self.cut + self.retract
    }

    pub fn total(&self) -> f64 {
        self.scan_total() + self.cut_total()
    }

    pub fn rows(&self) -> [(&'static str, f64); 9] {
        [
            ("initialize", self.initialize),
            ("offset_view", self.offset_view),
            ("arm_move", self.arm_move),
            ("axis_move", self.axis_move),
            ("detection", self.detection),
            ("to_approach", self.to_approach),
            ("approach", self.approach),
            ("cut", self.cut),
            ("retract", self.retract),
        ]
    }
}

/// Stage totals from the log records.
pub fn accumulate_time(log: &EpisodeLog, timing: &StageTiming, mode: TimingMode) -> StageTotals {
    let mut s = StageTotals::default();
    let mut first = true;
    for e in log.events() {
        match e {
            Event::Waypoint { plan_ok, rail_move_m, .. } => {
                if first {
                    s.initialize += timing.initialize_s;
                    first = false;
                } else if *rail_move_m > 1e-9 {
                    s.axis_move += timing.axis_move_s(*rail_move_m);
                } else {
                    s.arm_move += timing.arm_move_s();
                }
                if *plan_ok {
                    s.offset_view += timing.offset_view_s();
                    s.detection += timing.detection_s();
                }
            }
            Event::Plan { ok: true, .. } => s.to_approach += timing.to_approach_s,
            Event::Attempt { duration_s, .. } => {
                s.approach += match mode {
                    TimingMode::Nominal => timing.approach_s,
                    TimingMode::Simulated => *duration_s,
                };
                s.retract += timing.retract_s;
            }
            Event::Cut { .. } => s.cut += timing.cut_s,
            _ => {}
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationReport {
    pub seed: u64,
    pub n_targets: usize,
    pub detections: DetectionLedger,
    pub candidates: usize,
    pub targets_attempted: usize,
    pub targets_reached: usize,
    pub targets_cut: usize,
    /// Attempt count of each cut target, in log order.
    pub attempts_of_cuts: Vec<u32>,
    pub attempts_per_success: f64,
    pub planning_failures: usize,
    pub exhausted: usize,
    pub stage_times: StageTotals,
    pub total_time_s: f64,
}

impl LocationReport {
    /// Rebuild the report from a log. Location metrics count true-positive
    /// candidates only; false positives show up in the detection ledger.
    pub fn from_log(log: &EpisodeLog) -> Self {
        let mut det = DetectionLedger::default();
        let mut r = LocationReport {
            seed: log.header.seed,
            n_targets: log.header.n_targets,
            detections: det,
            candidates: 0,
            targets_attempted: 0,
            targets_reached: 0,
            targets_cut: 0,
            attempts_of_cuts: Vec::new(),
            attempts_per_success: 0.0,
            planning_failures: 0,
            exhausted: 0,
            stage_times: StageTotals::default(),
            total_time_s: 0.0,
        };
        for e in log.events() {
            match e {
                Event::Candidate { verdict, .. } => {
                    r.candidates += 1;
                    match verdict {
                        Verdict::Tp { .. } => det.tp += 1,
                        Verdict::Fp { category } => det.fp.add(*category),
                    }
                }
                Event::Missed { cause, .. } => match cause {
                    FnCause::LeaderMissed => det.fn_.leader_missed += 1,
                    FnCause::IntersectionMissed => det.fn_.intersection_missed += 1,
                },
                Event::Outcome { tp: true, skipped: false, planning_failed, attempts, cut, .. } => {
                    r.targets_attempted += 1;
                    if *planning_failed {
                        r.planning_failures += 1;
                    } else {
                        r.targets_reached += 1;
                        if *cut {
                            r.targets_cut += 1;
                            r.attempts_of_cuts.push(*attempts);
                        } else {
                            r.exhausted += 1;
                        }
                    }
                }
                _ => {}
            }
        }
        r.detections = det;
        if !r.attempts_of_cuts.is_empty() {
            r.attempts_per_success =
                r.attempts_of_cuts.iter().map(|&a| a as f64).sum::<f64>() / r.attempts_of_cuts.len() as f64;
        }
        r.stage_times = accumulate_time(log, &log.header.timing, log.header.timing_mode);
        r.total_time_s = r.stage_times.total();
        r
    }

    pub fn success_rate(&self) -> f64 {
        ratio(self.targets_cut, self.targets_attempted)
    }

    pub fn reach_rate(&self) -> f64 {
        ratio(self.targets_cut, self.targets_reached)
    }
}

pub fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Deterministic 64-bit mixing for derived seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct Mission<'a> {
    cfg: &'a MissionConfig,
    arm: Arm,
    world: WorldModel,
    targets: Vec<CutTarget>,
    log: EpisodeLog,
    clock: f64,
    q: ArmState,
    seed: u64,
    noise: NoiseModel,
    clusters: Vec<PruningCandidate>,
    verdicts: Vec<Verdict>,
    claimed: BTreeSet<u32>,
    /// target branch id → per-view leader-lost flags
    visibility: BTreeMap<u32, Vec<bool>>,
    n_views: u64,
}

impl Mission<'_> {
    fn planner(&self, salt: u64) -> PlannerParams {
        PlannerParams { seed: mix_seed(self.seed, salt), ..self.cfg.planner.clone() }
    }

    fn visit_waypoint(&mut self, scan: &ScanPlan, i: usize, prev_rail: Option<f64>) -> Vec<(u64, PruningCandidate)> {
        let goal = scan.waypoints[i];
        let rail_move = prev_rail.map_or(0.0, |r| (goal.q[0] - r).abs());
        let plan_ok = rrt_connect(&self.arm, &self.world, &self.q, &goal, &self.planner(i as u64)).is_ok();
        let t = &self.cfg.timing;
        self.clock += if i == 0 {
            t.initialize_s
        } else if rail_move > 1e-9 {
            t.axis_move_s(rail_move)
        } else {
            t.arm_move_s()
        };
        self.log.push(
            self.clock,
            Event::Waypoint { index: i, rail: goal.q[0], pose_index: scan.pose_index[i], plan_ok, rail_move_m: rail_move },
        );
        if !plan_ok {
            return Vec::new();
        }
        self.q = goal;
        let pose = scan.tool_pose(i);
        let cam = &self.cfg.camera;

        let view_id = self.n_views;
        self.n_views += 2;
        let (_, clean) = render_instances(cam, &pose, &self.world, &self.cfg.render);
        let noisy = corrupt(&clean, &self.noise, view_id, cam.width, cam.height);
        let (visible, leader_missed) = visibility(&clean, &noisy, &self.world);
        for id in &visible {
            self.visibility.entry(*id).or_default().push(leader_missed.contains(id));
        }
        self.log.push(
            self.clock,
            Event::View {
                view_id,
                waypoint: i,
                offset: false,
                instances: noisy.len(),
                visible,
                leader_missed,
                flow_valid_fraction: 0.0,
            },
        );
        let offset = scan.offset_pose(i);
        let flow = synth_flow(cam, &pose, &offset, &self.world);
        let frac = flow.valid.iter().filter(|v| **v).count() as f64 / flow.valid.len().max(1) as f64;
        self.clock += t.offset_view_s();
        self.log.push(
            self.clock,
            Event::View {
                view_id: view_id + 1,
                waypoint: i,
                offset: true,
                instances: 0,
                visible: Vec::new(),
                leader_missed: Vec::new(),
                flow_valid_fraction: frac,
            },
        );

        let det = detect_view(&noisy, cam, &pose, &self.cfg.matching, view_id);
        self.clock += t.detection_s();
        for c in &det.candidates {
            self.log.push(self.clock, Event::Detection { view_id, candidate: *c });
        }
        det.candidates.into_iter().map(|c| (view_id, c)).collect()
    }

    /// Merge raw detections into the cluster set; returns new clusters with their view.
    fn admit(&mut self, raw: Vec<(u64, PruningCandidate)>) -> Vec<(usize, u64)> {
        let cands: Vec<PruningCandidate> = raw.iter().map(|(_, c)| *c).collect();
        let mut fresh = Vec::new();
        for (rep, _) in dedupe(&cands, self.cfg.dedupe_radius_m) {
            let c = cands[rep];
            if self.clusters.iter().any(|k| (k.estimate_3d - c.estimate_3d).norm() <= self.cfg.dedupe_radius_m) {
                continue;
            }
            let id = self.clusters.len();
            self.clusters.push(c);
            let verdict = score_candidate(&c, &self.targets, &mut self.claimed, self.cfg.match_radius_m);
            self.verdicts.push(verdict);
            self.log.push(
                self.clock,
                Event::Candidate {
                    id,
                    view_id: raw[rep].0,
                    estimate: c.estimate_3d,
                    side_source: c.side_source,
                    side_source_class: c.side_source_class,
                    leader_source: c.leader_source,
                    target_pixels: c.target_pixels,
                    verdict,
                },
            );
            fresh.push((id, raw[rep].0));
        }
        fresh
    }

    fn operate(&mut self, id: usize, view_pose: &Pose) {
        let c = self.clusters[id];
        let tp = self.verdicts[id].is_tp();
        let outcome = |planning_failed, attempts, cut, skipped| Event::Outcome {
            candidate_id: id,
            tp,
            skipped,
            planning_failed,
            attempts,
            cut,
        };
        if self.cfg.intervention.skip_detected_spurs && c.side_source_class == Some(BranchClass::Spur) {
            self.log.push(self.clock, Event::Skip { candidate_id: id, reason: "spur".into() });
            self.log.push(self.clock, outcome(false, 0, false, true));
            return;
        }

        let rot = view_pose.rotation;
        let z = rot * Vector3::z();
        let start_pose = Pose::from_parts(Translation3::from(c.estimate_3d.coords - z * self.cfg.approach_depth_m), rot);
        let planned = self
            .arm
            .ik_approach(&start_pose, &self.q)
            .map_err(|e| e.to_string())
            .and_then(|goal| {
                rrt_connect(&self.arm, &self.world, &self.q, &goal, &self.planner(1_000 + id as u64))
                    .map(|p| (goal, p))
                    .map_err(|e| e.to_string())
            });
        let goal = match planned {
            Ok((goal, path)) if accept_plan(&path, self.cfg.plan_threshold_rad) => {
                self.log.push(
                    self.clock,
                    Event::Plan {
                        candidate_id: id,
                        ok: true,
                        displacement_rad: Some(path.total_displacement_rad),
                        reason: None,
                    },
                );
                goal
            }
            Ok((_, path)) => {
                self.log.push(
                    self.clock,
                    Event::Plan {
                        candidate_id: id,
                        ok: false,
                        displacement_rad: Some(path.total_displacement_rad),
                        reason: Some("displacement above threshold".into()),
                    },
                );
                self.log.push(self.clock, outcome(true, 0, false, false));
                return;
            }
            Err(reason) => {
                ::log::debug!("candidate {id}: planning failed: {reason}");
                self.log.push(
                    self.clock,
                    Event::Plan { candidate_id: id, ok: false, displacement_rad: None, reason: Some(reason) },
                );
                self.log.push(self.clock, outcome(true, 0, false, false));
                return;
            }
        };
        self.q = goal;
        let t = self.cfg.timing;
        self.clock += t.to_approach_s;
        // The reached tool pose; IK tolerance leaves it slightly off the request.
        let start = self.arm.fk(&goal);
        let target = ApproachTarget {
            branch_id: c.side_source,
            estimate: c.estimate_3d,
            reward_point: c
                .side_source
                .and_then(|b| self.targets.iter().find(|t| t.branch_id == b))
                .map_or(c.estimate_3d, |t| t.target_point),
        };
        let mut control = self.cfg.control.clone();
        control.abort_on_wrong_object = self.cfg.intervention.abort_on_wrong_object;
        control.force_noise_sigma = self.cfg.attempt_force_noise_n;

        let mut cut = false;
        let mut attempts = 0;
        while attempts < self.cfg.attempt_limit {
            attempts += 1;
            let noise_seed = mix_seed(self.seed, ((id as u64) << 8) | attempts as u64);
            let res = run_approach(&mut self.world, &self.cfg.camera, &start, &target, PolicyKind::Proportional, &control, noise_seed);
            ::log::debug!("candidate {id} attempt {attempts}: {:?} after {:.1} s", res.outcome, res.duration_s);
            let stage = match self.cfg.timing_mode {
                TimingMode::Nominal => t.approach_s,
                TimingMode::Simulated => res.duration_s,
            };
            if self.cfg.log_control_steps {
                // Steps are stamped proportionally inside the charged stage.
                let n = res.steps.len().max(1) as f64;
                for (k, s) in res.steps.iter().enumerate() {
                    self.log.push(
                        self.clock + stage * (k + 1) as f64 / n,
                        Event::ControlStep { candidate_id: id, attempt: attempts, step: s.clone() },
                    );
                }
            }
            self.clock += stage;
            if let crate::control::ApproachOutcome::Cut { outcome } = res.outcome {
                self.clock += t.cut_s;
                self.log.push(self.clock, Event::Cut { candidate_id: id, attempt: attempts, outcome });
            }
            self.clock += t.retract_s;
            self.log.push(
                self.clock,
                Event::Attempt { candidate_id: id, attempt: attempts, duration_s: res.duration_s, outcome: res.outcome },
            );
            if res.outcome.is_success() {
                cut = true;
                break;
            }
        }
        self.log.push(self.clock, outcome(false, attempts, cut, false));
    }
}

/// Side branches present with their parent leader in the clean render, and
/// those among them whose leader instance the noise removed.
fn visibility(
    clean: &[crate::percept::InstanceMask],
    noisy: &[crate::percept::InstanceMask],
    world: &WorldModel,
) -> (Vec<u32>, Vec<u32>) {
    let present = |set: &[crate::percept::InstanceMask], id: u32, class: InstanceClass| {
        set.iter().any(|i| i.source_branch_id == Some(id) && i.class == class)
    };
    let mut visible = Vec::new();
    let mut missed = Vec::new();
    for inst in clean.iter().filter(|i| i.class == InstanceClass::SideBranch) {
        let Some(id) = inst.source_branch_id else { continue };
        let Some(parent) = world.branch(id).and_then(|b| b.parent_id) else { continue };
        if !present(clean, parent, InstanceClass::Leader) {
            continue;
        }
        visible.push(id);
        if !present(noisy, parent, InstanceClass::Leader) {
            missed.push(id);
        }
    }
    (visible, missed)
}

/// Run one location. The world is cloned; cuts only affect the copy.
pub fn run_location(
    world: &WorldModel,
    config: &MissionConfig,
    seed: u64,
) -> Result<(LocationReport, EpisodeLog), MissionError> {
    config.validate()?;
    if !world.is_eligible() {
        return Err(MissionError::Ineligible);
    }
    let arm = Arm::new(config.arm.clone());
    let targets = ground_truth_targets(world);
    let mut m = Mission {
        cfg: config,
        q: arm.home(),
        arm,
        world: world.clone(),
        log: EpisodeLog::new(seed, targets.len(), config.timing, config.timing_mode),
        targets,
        clock: 0.0,
        seed,
        noise: NoiseModel { seed: mix_seed(config.noise.seed, seed), ..config.noise.clone() },
        clusters: Vec::new(),
        verdicts: Vec::new(),
        claimed: BTreeSet::new(),
        visibility: BTreeMap::new(),
        n_views: 0,
    };
    // Unreachable scan poses leave the location unscanned; the log records it.
    let scan = build_scan(&m.arm, &world.trellis, &config.scan).ok();
    let mut pending = Vec::new();
    if let Some(scan) = &scan {
        let mut prev_rail = None;
        for i in 0..scan.len() {
            let raw = m.visit_waypoint(scan, i, prev_rail);
            prev_rail = Some(scan.waypoints[i].q[0]);
            let fresh = m.admit(raw);
            let pose = scan.tool_pose(i);
            match config.process {
                ProcessMode::PerWaypoint => {
                    for (id, _) in fresh {
                        m.operate(id, &pose);
                    }
                }
                ProcessMode::AfterScan => pending.extend(fresh.into_iter().map(|(id, _)| (id, pose))),
            }
        }
    }
    for (id, pose) in pending {
        m.operate(id, &pose);
    }

    let mut missed: Vec<(u32, FnCause)> = Vec::new();
    for (id, views) in &m.visibility {
        if m.claimed.contains(id) {
            continue;
        }
        let cause = if views.iter().all(|lost| *lost) { FnCause::LeaderMissed } else { FnCause::IntersectionMissed };
        missed.push((*id, cause));
    }
    for (branch_id, cause) in missed {
        m.log.push(m.clock, Event::Missed { branch_id, cause });
    }
    let report = LocationReport::from_log(&m.log);
    ::log::info!(
        "seed {seed}: {} candidates, {} cut of {} attempted",
        report.candidates,
        report.targets_cut,
        report.targets_attempted
    );
    m.log.push(m.clock, Event::End { total_time_s: report.total_time_s });
    Ok((report, m.log))
}
