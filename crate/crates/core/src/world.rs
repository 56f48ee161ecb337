//! Procedural UFO orchard scenes and the geometric queries run against them.
//!
//! A scene is a tilted trellis wall plus a set of capsule-chain branches.
//! World frame: x runs along the row (the prismatic axis direction), z is
//! up, and the robot stands on the `-y` side. The wall leans toward the
//! robot by `tilt_deg` from vertical.

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    closest_point_on_segment, segment_box_overlap, Capsule, Pose,
};

pub const WORLD_FORMAT: &str = "ufo-world";
pub const WORLD_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid generator parameter `{name}`: {reason}")]
    InvalidParams { name: &'static str, reason: String },
    #[error("invalid trellis: {0}")]
    InvalidTrellis(String),
    #[error("world file: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchClass {
    Leader,
    SideBranch,
    Spur,
    Wire,
    Post,
    Other,
}

impl BranchClass {
    pub fn as_str(self) -> &'static str {
        match self {
            BranchClass::Leader => "leader",
            BranchClass::SideBranch => "side_branch",
            BranchClass::Spur => "spur",
            BranchClass::Wire => "wire",
            BranchClass::Post => "post",
            BranchClass::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrellisConfig {
    /// Lean of the wall from vertical, toward the robot.
    pub tilt_deg: f64,
    /// Length of the wall measured along its slope.
    pub row_height_m: f64,
    /// Wire positions measured along the slope from the foot line.
    pub wire_heights_m: Vec<f64>,
    pub post_spacing_m: f64,
    /// `y` of the line where the wall meets the ground.
    pub foot_y_m: f64,
    /// The collision slab starts this far behind the wall plane.
    pub slab_offset_m: f64,
    pub slab_thickness_m: f64,
}

impl Default for TrellisConfig {
    fn default() -> Self {
        Self {
            tilt_deg: 40.0,
            row_height_m: 2.4,
            wire_heights_m: vec![0.6, 1.05, 1.5, 1.95],
            post_spacing_m: 3.6,
            foot_y_m: 1.55,
            slab_offset_m: 0.04,
            slab_thickness_m: 0.10,
        }
    }
}

impl TrellisConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        if !(self.tilt_deg > 0.0 && self.tilt_deg < 90.0) {
            return Err(WorldError::InvalidTrellis(format!("tilt_deg {} outside (0, 90)", self.tilt_deg)));
        }
        if self.wire_heights_m.windows(2).any(|w| w[1] <= w[0]) {
            return Err(WorldError::InvalidTrellis("wire heights must be strictly increasing".into()));
        }
        if self.row_height_m <= 0.0 || self.post_spacing_m <= 0.0 || self.slab_thickness_m <= 0.0 {
            return Err(WorldError::InvalidTrellis("lengths must be positive".into()));
        }
        Ok(())
    }

    /// Unit vector pointing up the slope of the wall.
    pub fn up(&self) -> Vector3<f64> {
        let t = self.tilt_deg.to_radians();
        Vector3::new(0.0, -t.sin(), t.cos())
    }

    /// Unit normal of the wall pointing toward the robot side.
    pub fn normal(&self) -> Vector3<f64> {
        let t = self.tilt_deg.to_radians();
        Vector3::new(0.0, -t.cos(), -t.sin())
    }

    pub fn row_axis(&self) -> Vector3<f64> {
        Vector3::x()
    }

    /// Point on (or `offset` in front of) the wall at row position `x` and slope distance `s`.
    pub fn point(&self, x: f64, s: f64, offset: f64) -> Point3<f64> {
        Point3::new(x, self.foot_y_m, 0.0) + self.up() * s + self.normal() * offset
    }

    /// Distance of `p` in front of the wall plane (negative behind it).
    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        (p - Point3::new(0.0, self.foot_y_m, 0.0)).dot(&self.normal())
    }

    /// Whether a capsule overlaps the collision slab behind the wall.
    pub fn capsule_hits_slab(&self, cap: &Capsule) -> bool {
        let da = self.signed_distance(&cap.a);
        let db = self.signed_distance(&cap.b);
        let lo = da.min(db) - cap.radius;
        let hi = da.max(db) + cap.radius;
        let slab_hi = -self.slab_offset_m;
        let slab_lo = slab_hi - self.slab_thickness_m;
        hi >= slab_lo && lo <= slab_hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: u32,
    pub class: BranchClass,
    pub centerline: Vec<Point3<f64>>,
    /// One radius per centerline segment.
    pub radius_m: Vec<f64>,
    pub parent_id: Option<u32>,
    pub join_point: Option<Point3<f64>>,
}

impl Branch {
    pub fn length(&self) -> f64 {
        self.centerline.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    pub fn capsules(&self) -> impl Iterator<Item = Capsule> + '_ {
        self.centerline
            .windows(2)
            .zip(&self.radius_m)
            .map(|(w, &r)| Capsule::new(w[0], w[1], r))
    }

    /// Closest centerline point to `p`: (point, distance to axis, segment index).
    pub fn closest_axis_point(&self, p: &Point3<f64>) -> (Point3<f64>, f64, usize) {
        let mut best = (self.centerline[0], f64::INFINITY, 0);
        for (i, w) in self.centerline.windows(2).enumerate() {
            let (c, _) = closest_point_on_segment(p, &w[0], &w[1]);
            let d = (p - c).norm();
            if d < best.1 {
                best = (c, d, i);
            }
        }
        best
    }

    /// Point at arc length `dist` from the first centerline point.
    pub fn point_at_arclength(&self, dist: f64) -> (Point3<f64>, usize) {
        let mut remaining = dist.max(0.0);
        for (i, w) in self.centerline.windows(2).enumerate() {
            let seg = (w[1] - w[0]).norm();
            if remaining <= seg || i + 2 == self.centerline.len() {
                let t = if seg > 0.0 { (remaining / seg).min(1.0) } else { 0.0 };
                return (w[0] + (w[1] - w[0]) * t, i);
            }
            remaining -= seg;
        }
        (self.centerline[0], 0)
    }

    fn validate(&self) -> Result<(), WorldError> {
        let bad = |reason: String| Err(WorldError::Format(format!("branch {}: {reason}", self.id)));
        if self.centerline.len() < 2 {
            return bad("centerline needs at least 2 points".into());
        }
        if self.radius_m.len() + 1 != self.centerline.len() {
            return bad("one radius per segment required".into());
        }
        if self.radius_m.iter().any(|&r| r <= 0.0) {
            return bad("radius must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    pub trellis: TrellisConfig,
    pub branches: Vec<Branch>,
    pub rng_seed: u64,
    /// Arc-length distance of each cut target from its join point.
    pub cut_offset_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutTarget {
    pub branch_id: u32,
    pub target_point: Point3<f64>,
    pub diameter_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NearestBranch {
    pub branch_id: u32,
    /// Distance to the capsule surface; negative when `point` is inside.
    pub distance_m: f64,
    /// Closest point on the branch centerline.
    pub closest_point: Point3<f64>,
}

/// Grab-bag of sampling ranges used by [`generate_orchard`]. Ranges are `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorParams {
    pub trellis: TrellisConfig,
    pub n_leaders: usize,
    pub first_leader_x: [f64; 2],
    pub leader_spacing: [f64; 2],
    pub min_leader_spacing: f64,
    pub leader_s: [f64; 2],
    pub leader_radius: [f64; 2],
    pub leader_offset_m: f64,
    pub leader_wave_amplitude_max: f64,
    pub leader_wavelength: [f64; 2],
    pub leader_segments: usize,
    pub sides_per_leader: [usize; 2],
    pub side_join_s: [f64; 2],
    pub side_join_spacing: f64,
    pub side_min_len: f64,
    pub side_max_len: f64,
    pub side_angle_deg: [f64; 2],
    pub side_elevation_deg: [f64; 2],
    pub side_radius: [f64; 2],
    pub side_segments: usize,
    pub spurs_per_leader: [usize; 2],
    pub spur_max_len: f64,
    pub spur_len: [f64; 2],
    pub spur_radius: [f64; 2],
    pub spur_angle_deg: [f64; 2],
    pub spur_elevation_deg: [f64; 2],
    pub spur_join_clearance: f64,
    pub cut_offset_m: f64,
    pub wire_radius: f64,
    pub post_radius: f64,
    pub row_x: [f64; 2],
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            trellis: TrellisConfig::default(),
            n_leaders: 3,
            first_leader_x: [-0.05, 0.05],
            leader_spacing: [0.32, 0.42],
            min_leader_spacing: 0.32,
            leader_s: [0.35, 2.2],
            leader_radius: [0.012, 0.018],
            leader_offset_m: 0.02,
            leader_wave_amplitude_max: 0.02,
            leader_wavelength: [1.4, 2.2],
            leader_segments: 32,
            sides_per_leader: [1, 3],
            side_join_s: [0.95, 1.55],
            side_join_spacing: 0.12,
            side_min_len: 0.15,
            side_max_len: 0.22,
            side_angle_deg: [45.0, 72.0],
            side_elevation_deg: [-8.0, 8.0],
            side_radius: [0.004, 0.009],
            side_segments: 4,
            spurs_per_leader: [2, 5],
            spur_max_len: 0.10,
            spur_len: [0.03, 0.07],
            spur_radius: [0.003, 0.006],
            spur_angle_deg: [30.0, 150.0],
            spur_elevation_deg: [10.0, 50.0],
            spur_join_clearance: 0.04,
            cut_offset_m: 0.05,
            wire_radius: 0.002,
            post_radius: 0.05,
            row_x: [-1.5, 2.5],
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<(), WorldError> {
        self.trellis.validate()?;
        let range = |name: &'static str, r: [f64; 2]| -> Result<(), WorldError> {
            if r[0] < r[1] || (r[0] == r[1] && r[0].is_finite()) {
                Ok(())
            } else {
                Err(WorldError::InvalidParams { name, reason: format!("min {} > max {}", r[0], r[1]) })
            }
        };
        range("first_leader_x", self.first_leader_x)?;
        range("leader_spacing", self.leader_spacing)?;
        range("leader_s", self.leader_s)?;
        range("leader_radius", self.leader_radius)?;
        range("leader_wavelength", self.leader_wavelength)?;
        range("side_join_s", self.side_join_s)?;
        range("side_angle_deg", self.side_angle_deg)?;
        range("side_elevation_deg", self.side_elevation_deg)?;
        range("side_radius", self.side_radius)?;
        range("spur_len", self.spur_len)?;
        range("spur_radius", self.spur_radius)?;
        range("spur_angle_deg", self.spur_angle_deg)?;
        range("spur_elevation_deg", self.spur_elevation_deg)?;
        range("row_x", self.row_x)?;
        if self.sides_per_leader[0] > self.sides_per_leader[1] {
            return Err(WorldError::InvalidParams { name: "sides_per_leader", reason: "min > max".into() });
        }
        if self.spurs_per_leader[0] > self.spurs_per_leader[1] {
            return Err(WorldError::InvalidParams { name: "spurs_per_leader", reason: "min > max".into() });
        }
        if self.leader_spacing[0] < self.min_leader_spacing {
            return Err(WorldError::InvalidParams {
                name: "leader_spacing",
                reason: "lower bound below min_leader_spacing".into(),
            });
        }
        if self.spur_len[1] >= self.spur_max_len {
            return Err(WorldError::InvalidParams { name: "spur_len", reason: "must stay below spur_max_len".into() });
        }
        if self.side_min_len <= self.spur_max_len || self.side_max_len < self.side_min_len {
            return Err(WorldError::InvalidParams {
                name: "side_min_len",
                reason: "need spur_max_len < side_min_len <= side_max_len".into(),
            });
        }
        if self.leader_segments < 2 || self.side_segments < 1 {
            return Err(WorldError::InvalidParams { name: "segments", reason: "too few segments".into() });
        }
        if self.cut_offset_m <= 0.0 || self.cut_offset_m >= self.side_min_len {
            return Err(WorldError::InvalidParams {
                name: "cut_offset_m",
                reason: "must lie inside (0, side_min_len)".into(),
            });
        }
        if self.leader_side_capacity() < self.sides_per_leader[1] {
            return Err(WorldError::InvalidParams {
                name: "side_join_s",
                reason: "range too short for the requested number of side branches".into(),
            });
        }
        Ok(())
    }

    fn leader_side_capacity(&self) -> usize {
        ((self.side_join_s[1] - self.side_join_s[0]) / self.side_join_spacing).floor() as usize + 1
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn uniform_count(rng: &mut ChaCha8Rng, r: [usize; 2]) -> usize {
    rng.random_range(r[0]..=r[1])
}

/// Build a UFO scene. Pure function of `(params, seed)`.
pub fn generate_orchard(params: &GeneratorParams, seed: u64) -> Result<WorldModel, WorldError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trellis = params.trellis.clone();
    let up = trellis.up();
    let normal = trellis.normal();
    let mut branches: Vec<Branch> = Vec::new();
    let mut next_id = 0u32;

    let mut leader_x = Vec::with_capacity(params.n_leaders);
    let mut x = uniform(&mut rng, params.first_leader_x);
    for i in 0..params.n_leaders {
        if i > 0 {
            x += uniform(&mut rng, params.leader_spacing);
        }
        leader_x.push(x);
    }

    // Leaders first so their ids are the lowest.
    let mut leader_ids = Vec::new();
    for &lx in &leader_x {
        let radius = uniform(&mut rng, params.leader_radius);
        let amp = rng.random_range(0.0..=params.leader_wave_amplitude_max);
        let wavelength = uniform(&mut rng, params.leader_wavelength);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let n = params.leader_segments;
        let [s0, s1] = params.leader_s;
        let centerline: Vec<Point3<f64>> = (0..=n)
            .map(|k| {
                let s = s0 + (s1 - s0) * k as f64 / n as f64;
                let dx = amp * (std::f64::consts::TAU * s / wavelength + phase).sin();
                trellis.point(lx + dx, s, params.leader_offset_m)
            })
            .collect();
        branches.push(Branch {
            id: next_id,
            class: BranchClass::Leader,
            centerline,
            radius_m: vec![radius; n],
            parent_id: None,
            join_point: None,
        });
        leader_ids.push(next_id);
        next_id += 1;
    }

    for &leader_id in &leader_ids {
        let leader = branches[leader_id as usize].clone();
        let [s0, s1] = params.leader_s;
        let s_to_arclen = |s: f64| -> Point3<f64> {
            // Leader samples are uniform in slope distance; interpolate on the polyline.
            let n = params.leader_segments as f64;
            let u = ((s - s0) / (s1 - s0) * n).clamp(0.0, n);
            let i = (u.floor() as usize).min(params.leader_segments - 1);
            let f = u - i as f64;
            leader.centerline[i] + (leader.centerline[i + 1] - leader.centerline[i]) * f
        };

        // Side-branch join positions: distinct slots along the allowed slope range.
        let n_sides = uniform_count(&mut rng, params.sides_per_leader);
        let slots = params.leader_side_capacity();
        let mut chosen: Vec<usize> = Vec::new();
        while chosen.len() < n_sides {
            let k = rng.random_range(0..slots);
            if !chosen.contains(&k) {
                chosen.push(k);
            }
        }
        chosen.sort_unstable();
        let slack = (params.side_join_s[1] - params.side_join_s[0]) - (slots - 1) as f64 * params.side_join_spacing;
        let shift = rng.random_range(0.0..=slack.max(0.0));
        let mut lateral_sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mut side_joins = Vec::new();
        for k in chosen {
            let s = params.side_join_s[0] + shift + k as f64 * params.side_join_spacing;
            let join = s_to_arclen(s);
            let len = uniform(&mut rng, [params.side_min_len, params.side_max_len]);
            let angle = uniform(&mut rng, params.side_angle_deg).to_radians();
            let elevation = uniform(&mut rng, params.side_elevation_deg).to_radians();
            let r0 = uniform(&mut rng, params.side_radius);
            let in_plane = Vector3::x() * (lateral_sign * angle.sin()) + up * angle.cos();
            let dir = (in_plane * elevation.cos() + normal * elevation.sin()).normalize();
            let ns = params.side_segments;
            let centerline: Vec<Point3<f64>> =
                (0..=ns).map(|j| join + dir * (len * j as f64 / ns as f64)).collect();
            let radius_m = (0..ns).map(|j| r0 * (1.0 - 0.3 * j as f64 / ns as f64)).collect();
            branches.push(Branch {
                id: next_id,
                class: BranchClass::SideBranch,
                centerline,
                radius_m,
                parent_id: Some(leader_id),
                join_point: Some(join),
            });
            next_id += 1;
            side_joins.push(s);
            lateral_sign = -lateral_sign;
        }

        let n_spurs = uniform_count(&mut rng, params.spurs_per_leader);
        let spur_s_range = [params.side_join_s[0] - 0.2, params.side_join_s[1] + 0.2];
        let mut placed = 0;
        let mut tries = 0;
        while placed < n_spurs && tries < 200 {
            tries += 1;
            let s = uniform(&mut rng, spur_s_range);
            if side_joins.iter().any(|&j| (j - s).abs() < params.spur_join_clearance) {
                continue;
            }
            let join = s_to_arclen(s);
            let len = uniform(&mut rng, params.spur_len);
            let angle = uniform(&mut rng, params.spur_angle_deg).to_radians();
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let elevation = uniform(&mut rng, params.spur_elevation_deg).to_radians();
            let radius = uniform(&mut rng, params.spur_radius);
            let in_plane = Vector3::x() * (sign * angle.sin()) + up * angle.cos();
            let dir = (in_plane * elevation.cos() + normal * elevation.sin()).normalize();
            branches.push(Branch {
                id: next_id,
                class: BranchClass::Spur,
                centerline: vec![join, join + dir * len],
                radius_m: vec![radius],
                parent_id: Some(leader_id),
                join_point: Some(join),
            });
            next_id += 1;
            placed += 1;
        }
    }

    let [x0, x1] = params.row_x;
    for &h in &trellis.wire_heights_m {
        branches.push(Branch {
            id: next_id,
            class: BranchClass::Wire,
            centerline: vec![trellis.point(x0, h, 0.0), trellis.point(x1, h, 0.0)],
            radius_m: vec![params.wire_radius],
            parent_id: None,
            join_point: None,
        });
        next_id += 1;
    }
    let first_post = (x0 / trellis.post_spacing_m).ceil() * trellis.post_spacing_m - 1.2;
    let mut px = if first_post < x0 { first_post + trellis.post_spacing_m } else { first_post };
    while px <= x1 {
        branches.push(Branch {
            id: next_id,
            class: BranchClass::Post,
            centerline: vec![
                trellis.point(px, 0.0, -params.post_radius),
                trellis.point(px, trellis.row_height_m, -params.post_radius),
            ],
            radius_m: vec![params.post_radius],
            parent_id: None,
            join_point: None,
        });
        next_id += 1;
        px += trellis.post_spacing_m;
    }

    Ok(WorldModel { trellis, branches, rng_seed: seed, cut_offset_m: params.cut_offset_m })
}

/// Outcome of closing the cutter at a given pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum CutOutcome {
    Success { branch_id: u32 },
    TooThick { branch_id: u32, diameter_m: f64 },
    WrongObject { branch_id: u32, class: BranchClass },
    Miss,
}

/// Region between the blades, in the tool frame, where a branch gets cut.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutterMouth {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    pub max_diameter_m: f64,
}

impl Default for CutterMouth {
    fn default() -> Self {
        Self {
            center: [0.0, 0.025, 0.04],
            // 0.01 m across the blade plane, 0.04 m jaw opening, 0.03 m deep.
            half_extents: [0.005, 0.02, 0.015],
            max_diameter_m: 0.032,
        }
    }
}

impl WorldModel {
    pub fn branch(&self, id: u32) -> Option<&Branch> {
        self.branches.iter().find(|b| b.id == id)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        self.trellis.validate()?;
        for b in &self.branches {
            b.validate()?;
            if matches!(b.class, BranchClass::SideBranch | BranchClass::Spur) {
                let (Some(pid), Some(join)) = (b.parent_id, b.join_point) else {
                    return Err(WorldError::Format(format!("branch {} needs parent_id and join_point", b.id)));
                };
                let parent = self
                    .branch(pid)
                    .ok_or_else(|| WorldError::Format(format!("branch {}: missing parent {pid}", b.id)))?;
                if parent.closest_axis_point(&join).1 > 1e-6 {
                    return Err(WorldError::Format(format!("branch {}: join point off parent centerline", b.id)));
                }
            }
        }
        Ok(())
    }

    /// At least two leaders carrying a side branch each.
    pub fn is_eligible(&self) -> bool {
        self.branches
            .iter()
            .filter(|l| l.class == BranchClass::Leader)
            .filter(|l| {
                self.branches
                    .iter()
                    .any(|b| b.class == BranchClass::SideBranch && b.parent_id == Some(l.id))
            })
            .count()
            >= 2
    }

    pub fn to_json(&self) -> Result<String, WorldError> {
        #[derive(Serialize)]
        struct File<'a> {
            format: &'a str,
            version: u32,
            world: &'a WorldModel,
        }
        Ok(serde_json::to_string_pretty(&File { format: WORLD_FORMAT, version: WORLD_VERSION, world: self })?)
    }

    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        #[derive(Deserialize)]
        struct File {
            format: String,
            version: u32,
            world: WorldModel,
        }
        let file: File = serde_json::from_str(text)?;
        if file.format != WORLD_FORMAT {
            return Err(WorldError::Format(format!("unexpected format tag `{}`", file.format)));
        }
        if file.version != WORLD_VERSION {
            return Err(WorldError::Format(format!("unsupported version {}", file.version)));
        }
        file.world.validate()?;
        Ok(file.world)
    }
}

/// One target per side branch, `cut_offset_m` along it from the join.
pub fn ground_truth_targets(world: &WorldModel) -> Vec<CutTarget> {
    world
        .branches
        .iter()
        .filter(|b| b.class == BranchClass::SideBranch)
        .map(|b| {
            let (target_point, seg) = b.point_at_arclength(world.cut_offset_m);
            CutTarget { branch_id: b.id, target_point, diameter_m: 2.0 * b.radius_m[seg] }
        })
        .collect()
}

/// Nearest capsule surface among branches of the requested classes.
///
/// Ties go to the lowest branch id. `None` when no branch has a requested class.
pub fn nearest_branch(world: &WorldModel, point: &Point3<f64>, classes: &[BranchClass]) -> Option<NearestBranch> {
    let mut best: Option<NearestBranch> = None;
    let mut candidates: Vec<&Branch> = world.branches.iter().filter(|b| classes.contains(&b.class)).collect();
    candidates.sort_by_key(|b| b.id);
    for b in candidates {
        for (w, &r) in b.centerline.windows(2).zip(&b.radius_m) {
            let (c, _) = closest_point_on_segment(point, &w[0], &w[1]);
            let d = (point - c).norm() - r;
            if best.is_none_or(|cur| d < cur.distance_m) {
                best = Some(NearestBranch { branch_id: b.id, distance_m: d, closest_point: c });
            }
        }
    }
    best
}

/// Close the cutter at `cutter_pose` (tool frame in world).
///
/// On success the branch is truncated where the blade plane crosses it and
/// the stub is reclassified as [`BranchClass::Other`]. Every other outcome
/// leaves the world untouched.
pub fn apply_cut(world: &mut WorldModel, cutter_pose: &Pose) -> CutOutcome {
    apply_cut_with(world, cutter_pose, &CutterMouth::default())
}

pub fn apply_cut_with(world: &mut WorldModel, cutter_pose: &Pose, mouth: &CutterMouth) -> CutOutcome {
    let center = Point3::from(mouth.center);
    let half = Vector3::from(mouth.half_extents);
    let inv = cutter_pose.inverse();

    // (branch index, segment, overlap midpoint parameter, radius)
    let mut inside: Vec<(usize, usize, f64, f64)> = Vec::new();
    for (bi, b) in world.branches.iter().enumerate() {
        for (si, (w, &r)) in b.centerline.windows(2).zip(&b.radius_m).enumerate() {
            let a = inv * w[0];
            let e = inv * w[1];
            if let Some((t0, t1)) = segment_box_overlap(&a, &e, &center, &half) {
                inside.push((bi, si, 0.5 * (t0 + t1), r));
                break;
            }
        }
    }
    inside.sort_by_key(|&(bi, ..)| world.branches[bi].id);

    if let Some(&(bi, ..)) = inside.iter().find(|&&(bi, ..)| world.branches[bi].class != BranchClass::SideBranch) {
        let b = &world.branches[bi];
        return CutOutcome::WrongObject { branch_id: b.id, class: b.class };
    }
    match inside.as_slice() {
        [] => CutOutcome::Miss,
        [(bi, si, t, r)] => {
            let diameter = 2.0 * r;
            let id = world.branches[*bi].id;
            if diameter > mouth.max_diameter_m {
                return CutOutcome::TooThick { branch_id: id, diameter_m: diameter };
            }
            let b = &mut world.branches[*bi];
            let a = b.centerline[*si];
            let e = b.centerline[*si + 1];
            let cut = a + (e - a) * t.max(1e-3);
            b.centerline.truncate(si + 1);
            b.centerline.push(cut);
            b.radius_m.truncate(si + 1);
            b.class = BranchClass::Other;
            CutOutcome::Success { branch_id: id }
        }
        [_, (bi, ..), ..] => {
            let b = &world.branches[*bi];
            CutOutcome::WrongObject { branch_id: b.id, class: b.class }
        }
    }
}
