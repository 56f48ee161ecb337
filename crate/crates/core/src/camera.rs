//! Tool-mounted pinhole camera: projection, plane deprojection, analytic
//! ray casting against capsules, and synthetic optical flow.
//!
//! Pixel centres sit at integer coordinates. Every `tool_pose` argument is
//! the tool frame in world coordinates; the optical frame is
//! `tool_pose * mount`.

use nalgebra::{Point2, Point3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ray_capsule, Capsule, Pose, PoseRecord};
use crate::world::WorldModel;

pub const FLOW_MAGIC: &[u8; 4] = b"PFLW";

/// Closest depth considered by the ray caster (optical z, meters).
const NEAR_M: f64 = 0.01;
/// Screen-space size of one rasterized capsule piece.
const PIECE_PX: f64 = 40.0;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("invalid camera: {0}")]
    Invalid(String),
    #[error("flow file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Optical frame expressed in the tool frame.
    #[serde(with = "pose_serde")]
    pub mount: Pose,
}

pub mod pose_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &Pose, s: S) -> Result<S::Ok, S::Error> {
        PoseRecord::from(p).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Pose, D::Error> {
        Ok(Pose::from(&PoseRecord::deserialize(d)?))
    }
}

/// Default mount: 5 cm above and 3 cm behind the tool origin, pitched 10°
/// down toward the cutter. Image `u` follows tool `+x`, image `v` follows tool `+y`.
pub fn default_mount() -> Pose {
    Pose::from_parts(
        nalgebra::Translation3::new(0.0, 0.05, -0.03),
        UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 10f64.to_radians()),
    )
}

impl Default for CameraModel {
    fn default() -> Self {
        Self { fx: 600.0, fy: 600.0, cx: 320.0, cy: 240.0, width: 640, height: 480, mount: default_mount() }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::Invalid("focal lengths must be positive".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(CameraError::Invalid("principal point outside the image".into()));
        }
        if self.width == 0 || self.height == 0 || self.width > u16::MAX as u32 || self.height > u16::MAX as u32 {
            return Err(CameraError::Invalid("resolution out of range".into()));
        }
        Ok(())
    }

    /// Pinhole projection of an optical-frame point. `None` means behind the camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<Point2<f64>> {
        if p.z <= 0.0 {
            return None;
        }
        Some(Point2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Optical-frame point at `depth_m` that projects onto `px`.
    pub fn deproject_plane(&self, px: &Point2<f64>, depth_m: f64) -> Point3<f64> {
        Point3::new((px.x - self.cx) / self.fx * depth_m, (px.y - self.cy) / self.fy * depth_m, depth_m)
    }

    pub fn in_image(&self, px: &Point2<f64>) -> bool {
        px.x >= -0.5 && px.y >= -0.5 && px.x < self.width as f64 - 0.5 && px.y < self.height as f64 - 0.5
    }

    /// Unit ray through `px` in the optical frame.
    pub fn ray(&self, px: &Point2<f64>) -> Vector3<f64> {
        self.deproject_plane(px, 1.0).coords.normalize()
    }

    pub fn optical_pose(&self, tool_pose: &Pose) -> Pose {
        tool_pose * self.mount
    }

    /// Project a world point seen from `tool_pose`.
    pub fn project_world(&self, tool_pose: &Pose, p: &Point3<f64>) -> Option<Point2<f64>> {
        self.project(&(self.optical_pose(tool_pose).inverse() * p))
    }

    /// Same camera at a scaled resolution.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            fx: self.fx * k,
            fy: self.fy * k,
            cx: self.cx * k,
            cy: self.cy * k,
            width: (self.width as f64 * k).round() as u32,
            height: (self.height as f64 * k).round() as u32,
            mount: self.mount,
        }
    }
}

/// Per-pixel nearest hits from a ray cast.
#[derive(Debug, Clone)]
pub struct HitBuffer {
    pub width: u32,
    pub height: u32,
    /// Ray parameter of the first hit (`f64::INFINITY` when nothing was hit).
    pub t: Vec<f64>,
    /// Caller-supplied label of the hit capsule (`u32::MAX` when nothing was hit).
    pub label: Vec<u32>,
}

impl HitBuffer {
    pub const NONE: u32 = u32::MAX;

    #[inline]
    pub fn index(&self, u: u32, v: u32) -> usize {
        (v * self.width + u) as usize
    }
}

/// Clip segment `[a, b]` (optical frame) to the view frustum grown by `r`.
fn clip_to_frustum(cam: &CameraModel, a: &Point3<f64>, b: &Point3<f64>, r: f64) -> Option<(Point3<f64>, Point3<f64>)> {
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    // Half-spaces as (n, c): n·p + c >= 0.
    let umin = -0.5 - cam.cx;
    let umax = cam.width as f64 - 0.5 - cam.cx;
    let vmin = -0.5 - cam.cy;
    let vmax = cam.height as f64 - 0.5 - cam.cy;
    let planes = [
        (Vector3::new(0.0, 0.0, 1.0), -NEAR_M),
        (Vector3::new(cam.fx, 0.0, -umin), 0.0),
        (Vector3::new(-cam.fx, 0.0, umax), 0.0),
        (Vector3::new(0.0, cam.fy, -vmin), 0.0),
        (Vector3::new(0.0, -cam.fy, vmax), 0.0),
    ];
    for (i, (n, c)) in planes.iter().enumerate() {
        let pad = if i == 0 { 0.0 } else { r * n.norm() };
        let fa = n.dot(&a.coords) + c + pad;
        let fd = n.dot(&d);
        if fd.abs() < 1e-15 {
            if fa < 0.0 {
                return None;
            }
            continue;
        }
        let t = -fa / fd;
        if fd > 0.0 {
            t0 = t0.max(t);
        } else {
            t1 = t1.min(t);
        }
        if t0 > t1 {
            return None;
        }
    }
    Some((a + d * t0, a + d * t1))
}

/// Cast one ray per pixel against world-frame capsules, keeping the nearest hit.
///
/// Only capsule pieces inside the view frustum are rasterized, each over its
/// screen-space bounding box.
pub fn cast(cam: &CameraModel, tool_pose: &Pose, capsules: &[(Capsule, u32)]) -> HitBuffer {
    let (w, h) = (cam.width, cam.height);
    let mut buf = HitBuffer {
        width: w,
        height: h,
        t: vec![f64::INFINITY; (w * h) as usize],
        label: vec![HitBuffer::NONE; (w * h) as usize],
    };
    let to_optical = cam.optical_pose(tool_pose).inverse();
    let rays: Vec<Vector3<f64>> = (0..h)
        .flat_map(|v| (0..w).map(move |u| (u, v)))
        .map(|(u, v)| cam.ray(&Point2::new(u as f64, v as f64)))
        .collect();

    for (cap, label) in capsules {
        let local = cap.transformed(&to_optical);
        let r = local.radius;
        let Some((a, b)) = clip_to_frustum(cam, &local.a, &local.b, r) else {
            continue;
        };
        let (Some(pa), Some(pb)) = (cam.project(&a), cam.project(&b)) else {
            continue;
        };
        let n_pieces = (((pb - pa).norm() / PIECE_PX).ceil() as usize).clamp(1, 4096);
        for k in 0..n_pieces {
            let s0 = k as f64 / n_pieces as f64;
            let s1 = (k + 1) as f64 / n_pieces as f64;
            let qa = a + (b - a) * s0;
            let qb = a + (b - a) * s1;
            // Include the end spheres even when they straddle the near plane.
            let za = (qa.z - r).max(NEAR_M);
            let zb = (qb.z - r).max(NEAR_M);
            let zmin = za.min(zb);
            let (Some(p0), Some(p1)) = (cam.project(&qa), cam.project(&qb)) else {
                continue;
            };
            let pad_u = r * cam.fx / zmin * 1.5 + 2.0;
            let pad_v = r * cam.fy / zmin * 1.5 + 2.0;
            let u_lo = (p0.x.min(p1.x) - pad_u).floor().max(0.0) as i64;
            let u_hi = (p0.x.max(p1.x) + pad_u).ceil().min(w as f64 - 1.0) as i64;
            let v_lo = (p0.y.min(p1.y) - pad_v).floor().max(0.0) as i64;
            let v_hi = (p0.y.max(p1.y) + pad_v).ceil().min(h as f64 - 1.0) as i64;
            if u_lo > u_hi || v_lo > v_hi {
                continue;
            }
            let piece = Capsule::new(qa, qb, r);
            for v in v_lo..=v_hi {
                for u in u_lo..=u_hi {
                    let i = (v as u32 * w + u as u32) as usize;
                    if let Some(t) = ray_capsule(&Point3::origin(), &rays[i], &piece) {
                        if t < buf.t[i] || (t == buf.t[i] && *label < buf.label[i]) {
                            buf.t[i] = t;
                            buf.label[i] = *label;
                        }
                    }
                }
            }
        }
    }
    buf
}

/// Capsules of every world branch, labeled by index into `world.branches`.
pub fn world_capsules(world: &WorldModel) -> Vec<(Capsule, u32)> {
    world
        .branches
        .iter()
        .enumerate()
        .flat_map(|(i, b)| b.capsules().map(move |c| (c, i as u32)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: u32,
    pub height: u32,
    /// `(du, dv)` per pixel, row-major.
    pub flow: Vec<[f32; 2]>,
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn at(&self, u: u32, v: u32) -> [f32; 2] {
        self.flow[(v * self.width + u) as usize]
    }

    /// Header (`PFLW`, u16 width, u16 height), f32 `(du, dv)` pairs, then one valid byte per pixel.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = (self.width * self.height) as usize;
        let mut out = Vec::with_capacity(8 + 9 * n);
        out.extend_from_slice(FLOW_MAGIC);
        out.extend_from_slice(&(self.width as u16).to_le_bytes());
        out.extend_from_slice(&(self.height as u16).to_le_bytes());
        for f in &self.flow {
            out.extend_from_slice(&f[0].to_le_bytes());
            out.extend_from_slice(&f[1].to_le_bytes());
        }
        out.extend(self.valid.iter().map(|&b| b as u8));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CameraError> {
        if bytes.len() < 8 || &bytes[..4] != FLOW_MAGIC {
            return Err(CameraError::Format("bad header".into()));
        }
        let width = u16::from_le_bytes([bytes[4], bytes[5]]) as u32;
        let height = u16::from_le_bytes([bytes[6], bytes[7]]) as u32;
        let n = (width * height) as usize;
        if bytes.len() != 8 + 9 * n {
            return Err(CameraError::Format(format!("expected {} bytes, got {}", 8 + 9 * n, bytes.len())));
        }
        let body = &bytes[8..8 + 8 * n];
        let flow = body
            .chunks_exact(8)
            .map(|c| {
                [
                    f32::from_le_bytes(c[0..4].try_into().unwrap()),
                    f32::from_le_bytes(c[4..8].try_into().unwrap()),
                ]
            })
            .collect();
        let valid = bytes[8 + 8 * n..].iter().map(|&b| b != 0).collect();
        Ok(Self { width, height, flow, valid })
    }
}

pub const DEFAULT_FAR_PLANE_M: f64 = 2.0;

/// Dense flow from the view at `pose_a` to the view at `pose_b`.
///
/// Pixels whose ray hits a branch move with that surface point and are
/// marked valid; the rest move with a virtual plane at `DEFAULT_FAR_PLANE_M`.
pub fn synth_flow(cam: &CameraModel, pose_a: &Pose, pose_b: &Pose, world: &WorldModel) -> FlowField {
    synth_flow_with(cam, pose_a, pose_b, &world_capsules(world), DEFAULT_FAR_PLANE_M)
}

pub fn synth_flow_with(
    cam: &CameraModel,
    pose_a: &Pose,
    pose_b: &Pose,
    capsules: &[(Capsule, u32)],
    far_plane_m: f64,
) -> FlowField {
    let hits = cast(cam, pose_a, capsules);
    let opt_a = cam.optical_pose(pose_a);
    let a_to_b = cam.optical_pose(pose_b).inverse() * opt_a;
    let n = (cam.width * cam.height) as usize;
    let mut flow = vec![[0.0f32; 2]; n];
    let mut valid = vec![false; n];
    for v in 0..cam.height {
        for u in 0..cam.width {
            let i = hits.index(u, v);
            let px = Point2::new(u as f64, v as f64);
            let hit = hits.label[i] != HitBuffer::NONE;
            let p_a = if hit {
                Point3::from(cam.ray(&px) * hits.t[i])
            } else {
                cam.deproject_plane(&px, far_plane_m)
            };
            if let Some(q) = cam.project(&(a_to_b * p_a)) {
                flow[i] = [(q.x - px.x) as f32, (q.y - px.y) as f32];
                valid[i] = hit;
            }
        }
    }
    FlowField { width: cam.width, height: cam.height, flow, valid }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::translation;
    use crate::world::{Branch, BranchClass, TrellisConfig};
    use proptest::prelude::*;

    fn bare_cam() -> CameraModel {
        CameraModel { mount: Pose::identity(), ..Default::default() }
    }

    #[test]
    fn project_examples() {
        let c = bare_cam();
        assert_eq!(c.project(&Point3::new(0.0, 0.0, 0.30)), Some(Point2::new(320.0, 240.0)));
        let p = c.project(&Point3::new(0.30, 0.0, 0.30)).unwrap();
        assert!((p.x - 920.0).abs() < 1e-12 && (p.y - 240.0).abs() < 1e-12);
        assert_eq!(c.project(&Point3::new(0.0, 0.0, -0.1)), None);
    }

    #[test]
    fn deproject_examples() {
        let c = bare_cam();
        assert_eq!(c.deproject_plane(&Point2::new(320.0, 240.0), 0.30), Point3::new(0.0, 0.0, 0.30));
        let p = c.deproject_plane(&Point2::new(920.0, 240.0), 0.30);
        assert!((p - Point3::new(0.30, 0.0, 0.30)).norm() < 1e-15);
        let back = c.project(&p).unwrap();
        assert!((back - Point2::new(920.0, 240.0)).norm() < 1e-9);
    }

    proptest! {
        #[test]
        fn deproject_round_trip(u in 0.0f64..640.0, v in 0.0f64..480.0, z in 0.05f64..5.0) {
            let c = bare_cam();
            let px = Point2::new(u, v);
            let back = c.project(&c.deproject_plane(&px, z)).unwrap();
            prop_assert!((back - px).norm() < 1e-9);
        }

        #[test]
        fn halving_resolution_halves_pixels(x in -0.5f64..0.5, y in -0.5f64..0.5, z in 0.1f64..3.0) {
            let c = CameraModel::default();
            let half = c.scaled(0.5);
            let p = Point3::new(x, y, z);
            let a = c.project(&p).unwrap();
            let b = half.project(&p).unwrap();
            prop_assert_eq!(b.x, a.x * 0.5);
            prop_assert_eq!(b.y, a.y * 0.5);
        }
    }

    fn wall_world(depth: f64) -> WorldModel {
        // A dense grid of thick vertical rods at optical depth `depth` (identity mount).
        let mut branches = Vec::new();
        for i in 0..40 {
            let x = -0.4 + 0.02 * i as f64;
            branches.push(Branch {
                id: i,
                class: BranchClass::Leader,
                centerline: vec![Point3::new(x, -0.5, depth), Point3::new(x, 0.5, depth)],
                radius_m: vec![0.006],
                parent_id: None,
                join_point: None,
            });
        }
        WorldModel { trellis: TrellisConfig::default(), branches, rng_seed: 0, cut_offset_m: 0.05 }
    }

    #[test]
    fn identical_poses_give_zero_flow() {
        let c = bare_cam().scaled(0.25);
        let w = wall_world(0.3);
        let f = synth_flow(&c, &Pose::identity(), &Pose::identity(), &w);
        assert!(f.flow.iter().all(|d| d[0].abs() < 1e-5 && d[1].abs() < 1e-5));
        assert!(f.valid.iter().any(|&b| b));
    }

    #[test]
    fn parallax_split_at_default_offset() {
        let c = bare_cam();
        let w = wall_world(0.3);
        let b = translation(0.0, 0.015, 0.0);
        let f = synth_flow(&c, &Pose::identity(), &b, &w);
        let mut fg = Vec::new();
        let mut bg = Vec::new();
        for (d, &valid) in f.flow.iter().zip(&f.valid) {
            if valid {
                fg.push(d[1].abs());
            } else {
                bg.push(d[1].abs());
            }
        }
        let fg_max = fg.iter().cloned().fold(0.0f32, f32::max);
        let fg_min = fg.iter().cloned().fold(f32::INFINITY, f32::min);
        let fg_mean = fg.iter().sum::<f32>() / fg.len() as f32;
        // Rod surfaces spread over 0.294..0.306 m around the nominal depth.
        assert!(fg_min > 29.3 && fg_max < 30.7, "foreground {fg_min}..{fg_max}");
        assert!((fg_mean - 30.0).abs() < 0.6, "mean {fg_mean}");
        // Per-point oracle: pure y translation shifts v by fy * dy / z.
        let hits = cast(&c, &Pose::identity(), &world_capsules(&w));
        for (i, d) in f.flow.iter().enumerate() {
            if f.valid[i] {
                let (u, v) = (i as u32 % c.width, i as u32 / c.width);
                let z = (c.ray(&Point2::new(u as f64, v as f64)) * hits.t[i]).z;
                assert!((d[1].abs() as f64 - 600.0 * 0.015 / z).abs() < 1e-3);
            }
        }
        for b in bg {
            assert!((b - 4.5).abs() < 1e-4);
        }
    }

    #[test]
    fn flow_antisymmetry_on_hits() {
        let c = bare_cam().scaled(0.5);
        let w = wall_world(0.35);
        let a = Pose::identity();
        let b = translation(0.01, 0.004, 0.0);
        let fab = synth_flow(&c, &a, &b, &w);
        let fba = synth_flow(&c, &b, &a, &w);
        let mut checked = 0;
        for v in 0..c.height {
            for u in 0..c.width {
                let i = (v * c.width + u) as usize;
                if !fab.valid[i] {
                    continue;
                }
                let d = fab.flow[i];
                let q = (u as f32 + d[0], v as f32 + d[1]);
                let (qu, qv) = (q.0.round() as i64, q.1.round() as i64);
                if qu < 2 || qv < 2 || qu >= c.width as i64 - 2 || qv >= c.height as i64 - 2 {
                    continue;
                }
                let j = (qv as u32 * c.width + qu as u32) as usize;
                if !fba.valid[j] {
                    continue;
                }
                let back = fba.flow[j];
                // Only fully interior pixels: flow is locally constant on a rod at fixed depth.
                if (back[0] + d[0]).abs() < 0.5 && (back[1] + d[1]).abs() < 0.5 {
                    checked += 1;
                } else {
                    let neighbours_valid = (-1..=1).all(|dv: i64| {
                        (-1..=1).all(|du: i64| fab.valid[((v as i64 + dv) as u32 * c.width + (u as i64 + du) as u32) as usize])
                    });
                    assert!(!neighbours_valid, "antisymmetry broken at ({u},{v})");
                }
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn flow_bytes_round_trip() {
        let c = bare_cam().scaled(0.1);
        let f = synth_flow(&c, &Pose::identity(), &translation(0.0, 0.015, 0.0), &wall_world(0.3));
        assert_eq!(FlowField::from_bytes(&f.to_bytes()).unwrap(), f);
    }

    #[test]
    fn cast_matches_brute_force() {
        let c = bare_cam().scaled(0.2);
        let w = wall_world(0.4);
        let pose = Pose::from_parts(
            nalgebra::Translation3::new(0.02, -0.01, 0.0),
            UnitQuaternion::from_euler_angles(0.1, -0.2, 0.3),
        );
        let caps = world_capsules(&w);
        let fast = cast(&c, &pose, &caps);
        let to_opt = c.optical_pose(&pose).inverse();
        for v in 0..c.height {
            for u in 0..c.width {
                let ray = c.ray(&Point2::new(u as f64, v as f64));
                let mut best = (f64::INFINITY, HitBuffer::NONE);
                for (cap, l) in &caps {
                    if let Some(t) = ray_capsule(&Point3::origin(), &ray, &cap.transformed(&to_opt)) {
                        if t < best.0 {
                            best = (t, *l);
                        }
                    }
                }
                let i = fast.index(u, v);
                assert_eq!(fast.label[i], best.1, "pixel ({u},{v})");
            }
        }
    }
}
