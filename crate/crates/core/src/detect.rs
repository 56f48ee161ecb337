//! Pruning-point detection from labeled instance masks.
//!
//! Sides and leaders are reduced to PCA line segments; each side branch is
//! matched to at most one leader, and the pruning pixel is pushed out from
//! the intersection along the side branch by half the leader width plus a
//! fixed margin.

use nalgebra::{Point2, Point3, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CameraModel;
use crate::geometry::Pose;
use crate::percept::{InstanceClass, InstanceMask, InstanceMeta};
use crate::raster::Mask;
use crate::world::BranchClass;

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("mask has {0} pixels; at least 2 are needed")]
    Degenerate(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedSegment {
    pub center: Point2<f64>,
    pub direction: Vector2<f64>,
    pub half_length: f64,
    pub instance_id: u32,
}

impl FittedSegment {
    pub fn endpoints(&self) -> [Point2<f64>; 2] {
        [self.center - self.direction * self.half_length, self.center + self.direction * self.half_length]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeaderFit {
    pub segment: FittedSegment,
    pub width_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchParams {
    /// Margin beyond the leader edge at the reference width.
    pub m_px: f64,
    pub reference_width_px: f64,
    pub prox_thresh_px: f64,
    pub min_angle_deg: f64,
    /// Assumed distance of branches from the optical centre.
    pub plane_depth_m: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self { m_px: 90.0, reference_width_px: 640.0, prox_thresh_px: 10.0, min_angle_deg: 15.0, plane_depth_m: 0.30 }
    }
}

impl MatchParams {
    pub fn margin_for(&self, image_width: u32) -> f64 {
        self.m_px * image_width as f64 / self.reference_width_px
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruningCandidate {
    pub pixel: Point2<f64>,
    pub join_pixel: Point2<f64>,
    pub side_instance_id: u32,
    pub leader_instance_id: u32,
    pub branch_dir: Vector2<f64>,
    pub estimate_3d: Point3<f64>,
    pub side_source: Option<u32>,
    pub side_source_class: Option<BranchClass>,
    pub leader_source: Option<u32>,
    /// Pixel count of the side instance, used to rank duplicate detections.
    pub target_pixels: usize,
}

/// PCA fit of a binary mask.
///
/// The direction is the principal eigenvector of the pixel covariance, signed
/// toward increasing `v` (ties toward increasing `u`). For isotropic masks
/// the vertical axis is returned.
pub fn fit_segment(mask: &Mask, instance_id: u32) -> Result<FittedSegment, DetectError> {
    let n = mask.count();
    if n < 2 {
        return Err(DetectError::Degenerate(n));
    }
    let (mut su, mut sv) = (0.0, 0.0);
    for (u, v) in mask.pixels() {
        su += u as f64;
        sv += v as f64;
    }
    let c = Point2::new(su / n as f64, sv / n as f64);
    let (mut cuu, mut cuv, mut cvv) = (0.0, 0.0, 0.0);
    for (u, v) in mask.pixels() {
        let du = u as f64 - c.x;
        let dv = v as f64 - c.y;
        cuu += du * du;
        cuv += du * dv;
        cvv += dv * dv;
    }
    cuu /= n as f64;
    cuv /= n as f64;
    cvv /= n as f64;
    let dir = principal_axis(cuu, cuv, cvv);
    let half_length = mask.pixels().map(|(u, v)| (Point2::new(u as f64, v as f64) - c).dot(&dir).abs()).fold(0.0, f64::max);
    Ok(FittedSegment { center: c, direction: dir, half_length, instance_id })
}

fn principal_axis(cuu: f64, cuv: f64, cvv: f64) -> Vector2<f64> {
    let tr = cuu + cvv;
    let det = cuu * cvv - cuv * cuv;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let l1 = tr / 2.0 + disc;
    let scale = tr.abs().max(1e-300);
    let d = if disc <= 1e-12 * scale {
        Vector2::new(0.0, 1.0)
    } else {
        let a = Vector2::new(l1 - cvv, cuv);
        let b = Vector2::new(cuv, l1 - cuu);
        if a.norm() >= b.norm() {
            a.normalize()
        } else {
            b.normalize()
        }
    };
    orient(d)
}

/// Sign convention: toward `+v`, ties toward `+u`.
fn orient(d: Vector2<f64>) -> Vector2<f64> {
    if d.y > 1e-12 || (d.y.abs() <= 1e-12 && d.x >= 0.0) {
        d
    } else {
        -d
    }
}

/// Mean number of set pixels per occupied image row.
pub fn leader_width(mask: &Mask) -> f64 {
    let mut rows = 0usize;
    let mut total = 0usize;
    for v in 0..mask.height {
        let c = (0..mask.width).filter(|&u| mask.get(u, v)).count();
        if c > 0 {
            rows += 1;
            total += c;
        }
    }
    if rows == 0 {
        0.0
    } else {
        total as f64 / rows as f64
    }
}

pub fn fit_leader(mask: &Mask, instance_id: u32) -> Result<LeaderFit, DetectError> {
    Ok(LeaderFit { segment: fit_segment(mask, instance_id)?, width_px: leader_width(mask) })
}

/// Distance from `p` to the leader band: the rectangle of half-width `w/2`
/// around the fitted segment.
pub fn band_distance(p: &Point2<f64>, leader: &LeaderFit) -> f64 {
    let s = &leader.segment;
    let d = p - s.center;
    let along = d.dot(&s.direction).abs();
    let perp = (d.x * s.direction.y - d.y * s.direction.x).abs();
    let da = (along - s.half_length).max(0.0);
    let dp = (perp - leader.width_px / 2.0).max(0.0);
    (da * da + dp * dp).sqrt()
}

/// Infinite-line intersection; `None` when the lines are (nearly) parallel.
pub fn line_intersection(a: &FittedSegment, b: &FittedSegment) -> Option<(Point2<f64>, f64)> {
    let cross = a.direction.x * b.direction.y - a.direction.y * b.direction.x;
    if cross.abs() < 1e-6 {
        return None;
    }
    let w = b.center - a.center;
    let t = (w.x * b.direction.y - w.y * b.direction.x) / cross;
    Some((a.center + a.direction * t, cross.abs()))
}

pub struct SideInput<'a> {
    pub mask: &'a Mask,
    pub segment: FittedSegment,
}

/// Gate one (side, leader) pair; returns `(p*, rank key)` when accepted.
pub fn gate_pair(side: &SideInput, leader: &LeaderFit, params: &MatchParams) -> Option<(Point2<f64>, f64)> {
    let (p_star, sin) = line_intersection(&side.segment, &leader.segment)?;
    if sin < params.min_angle_deg.to_radians().sin() {
        return None;
    }
    let along = (p_star - leader.segment.center).dot(&leader.segment.direction).abs();
    if along > leader.segment.half_length {
        return None;
    }
    let mut near = f64::INFINITY;
    for (u, v) in side.mask.pixels() {
        near = near.min(band_distance(&Point2::new(u as f64, v as f64), leader));
        if near == 0.0 {
            break;
        }
    }
    if near > params.prox_thresh_px {
        return None;
    }
    let [e0, e1] = side.segment.endpoints();
    let rank = (e0 - p_star).norm().min((e1 - p_star).norm());
    Some((p_star, rank))
}

/// Side direction pointing toward the side endpoint farther from `p_star`.
pub fn away_direction(side: &FittedSegment, p_star: &Point2<f64>) -> Vector2<f64> {
    let [e0, e1] = side.endpoints();
    if (e1 - p_star).norm() >= (e0 - p_star).norm() {
        side.direction
    } else {
        -side.direction
    }
}

/// Match each side branch with at most one leader and place its pruning pixel.
///
/// Returned candidates carry a zero `estimate_3d` and no provenance; see
/// [`detect_view`] for the full pipeline.
pub fn match_intersections(
    sides: &[SideInput],
    leaders: &[LeaderFit],
    params: &MatchParams,
    image_width: u32,
) -> Vec<PruningCandidate> {
    let m = params.margin_for(image_width);
    let mut out = Vec::new();
    for side in sides {
        let mut best: Option<(f64, u32, Point2<f64>, &LeaderFit)> = None;
        for leader in leaders {
            let Some((p_star, rank)) = gate_pair(side, leader, params) else { continue };
            let id = leader.segment.instance_id;
            let better = match best {
                None => true,
                Some((r, bid, ..)) => rank < r || (rank == r && id < bid),
            };
            if better {
                best = Some((rank, id, p_star, leader));
            }
        }
        if let Some((_, leader_id, p_star, leader)) = best {
            let b = away_direction(&side.segment, &p_star);
            out.push(PruningCandidate {
                pixel: p_star + b * (leader.width_px / 2.0 + m),
                join_pixel: p_star,
                side_instance_id: side.segment.instance_id,
                leader_instance_id: leader_id,
                branch_dir: b,
                estimate_3d: Point3::origin(),
                side_source: None,
                side_source_class: None,
                leader_source: None,
                target_pixels: side.mask.count(),
            });
        }
    }
    out
}

/// World-frame point on the assumed plane behind `pixel`.
pub fn estimate_3d(pixel: &Point2<f64>, cam: &CameraModel, tool_pose: &Pose, depth_m: f64) -> Point3<f64> {
    cam.optical_pose(tool_pose) * cam.deproject_plane(pixel, depth_m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub view_id: u64,
    pub instances: Vec<InstanceMeta>,
    pub sides: Vec<FittedSegment>,
    pub leaders: Vec<LeaderFit>,
    pub candidates: Vec<PruningCandidate>,
}

/// Full per-view detection: fit, match, drop pixels outside the image, estimate 3D.
pub fn detect_view(
    instances: &[InstanceMask],
    cam: &CameraModel,
    tool_pose: &Pose,
    params: &MatchParams,
    view_id: u64,
) -> DetectionSet {
    let mut sides = Vec::new();
    let mut leaders = Vec::new();
    for inst in instances {
        match inst.class {
            InstanceClass::SideBranch => {
                if let Ok(seg) = fit_segment(&inst.mask, inst.id) {
                    sides.push(SideInput { mask: &inst.mask, segment: seg });
                }
            }
            InstanceClass::Leader => {
                if let Ok(l) = fit_leader(&inst.mask, inst.id) {
                    leaders.push(l);
                }
            }
            _ => {}
        }
    }
    let by_id = |id: u32| instances.iter().find(|i| i.id == id).expect("candidate references a known instance");
    let candidates = match_intersections(&sides, &leaders, params, cam.width)
        .into_iter()
        .filter(|c| cam.in_image(&c.pixel))
        .map(|mut c| {
            let side = by_id(c.side_instance_id);
            c.side_source = side.source_branch_id;
            c.side_source_class = side.source_class;
            c.leader_source = by_id(c.leader_instance_id).source_branch_id;
            c.estimate_3d = estimate_3d(&c.pixel, cam, tool_pose, params.plane_depth_m);
            c
        })
        .collect();
    DetectionSet {
        view_id,
        instances: instances.iter().map(|i| i.meta()).collect(),
        sides: sides.iter().map(|s| s.segment).collect(),
        leaders,
        candidates,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect(w: u32, h: u32, u0: u32, v0: u32, u1: u32, v1: u32) -> Mask {
        Mask::from_fn(w, h, |u, v| u >= u0 && u <= u1 && v >= v0 && v <= v1)
    }

    /// Pixels within `half_w` of the segment through `c` along angle `theta`.
    fn strip(w: u32, h: u32, c: (f64, f64), theta: f64, half_len: f64, half_w: f64) -> Mask {
        let d = Vector2::new(theta.cos(), theta.sin());
        Mask::from_fn(w, h, |u, v| {
            let p = Vector2::new(u as f64 - c.0, v as f64 - c.1);
            p.dot(&d).abs() <= half_len && (p.x * d.y - p.y * d.x).abs() <= half_w
        })
    }

    #[test]
    fn rectangle_fit() {
        let m = rect(200, 100, 50, 45, 149, 54);
        let s = fit_segment(&m, 0).unwrap();
        assert!((s.direction - Vector2::new(1.0, 0.0)).norm() < 1e-12);
        assert!((s.center - Point2::new(99.5, 49.5)).norm() < 1e-12);
        assert!((s.half_length - 49.5).abs() < 1e-12);
    }

    #[test]
    fn diagonal_fit_matches_eigen_decomposition() {
        let m = strip(300, 300, (150.0, 150.0), std::f64::consts::FRAC_PI_4, 100.0, 4.0);
        let s = fit_segment(&m, 0).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s.direction - Vector2::new(h, h)).norm() < 1e-3);
        // Brute-force covariance eigenvector through nalgebra.
        let pts: Vec<(f64, f64)> = m.pixels().map(|(u, v)| (u as f64, v as f64)).collect();
        let n = pts.len() as f64;
        let (mu, mv) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
        let mut cov = nalgebra::Matrix2::zeros();
        for p in &pts {
            let d = nalgebra::Vector2::new(p.0 - mu, p.1 - mv);
            cov += d * d.transpose() / n;
        }
        let eig = cov.symmetric_eigen();
        let k = if eig.eigenvalues[0] > eig.eigenvalues[1] { 0 } else { 1 };
        let e = eig.eigenvectors.column(k).into_owned();
        assert!(1.0 - s.direction.dot(&e).abs() < 1e-9);
    }

    #[test]
    fn disc_does_not_crash() {
        let m = Mask::from_fn(41, 41, |u, v| {
            let (du, dv) = (u as f64 - 20.0, v as f64 - 20.0);
            du * du + dv * dv <= 100.0
        });
        let s = fit_segment(&m, 0).unwrap();
        assert!((s.direction.norm() - 1.0).abs() < 1e-12);
        assert!(fit_segment(&Mask::new(5, 5), 0).is_err());
        assert!(fit_segment(&rect(5, 5, 2, 2, 2, 2), 0).is_err());
    }

    #[test]
    fn width_examples() {
        assert_eq!(leader_width(&rect(100, 100, 40, 0, 54, 99)), 15.0);
        let m = Mask::from_fn(100, 100, |u, v| u >= 10 && u < if v < 50 { 20 } else { 30 });
        assert_eq!(leader_width(&m), 15.0);
    }

    #[test]
    fn tilted_leader_width() {
        let t = 16.0;
        let theta = (90f64 - 30.0).to_radians();
        let m = strip(400, 400, (200.0, 200.0), theta, 150.0, t / 2.0);
        let w = leader_width(&m);
        // Brute force: count pixels on interior rows only.
        let rows: Vec<usize> = (120..280).map(|v| (0..400).filter(|&u| m.get(u, v)).count()).collect();
        let interior = rows.iter().sum::<usize>() as f64 / rows.len() as f64;
        assert!((interior - t / 30f64.to_radians().cos()).abs() < 0.5);
        assert!((w - interior).abs() < 1.0);
    }

    fn leader_fit(c: (f64, f64), dir: (f64, f64), half: f64, width: f64, id: u32) -> LeaderFit {
        LeaderFit {
            segment: FittedSegment {
                center: Point2::new(c.0, c.1),
                direction: Vector2::new(dir.0, dir.1).normalize(),
                half_length: half,
                instance_id: id,
            },
            width_px: width,
        }
    }

    #[test]
    fn pixel_formula() {
        // Side crossing a vertical leader at (100, 200), running down-right along (0.6, 0.8).
        let leader = leader_fit((100.0, 200.0), (0.0, 1.0), 200.0, 20.0, 1);
        let side_mask = strip(640, 480, (160.0, 280.0), (0.8f64).atan2(0.6), 100.0, 3.0);
        let seg = FittedSegment {
            center: Point2::new(160.0, 280.0),
            direction: Vector2::new(0.6, 0.8),
            half_length: 100.0,
            instance_id: 0,
        };
        let c = match_intersections(&[SideInput { mask: &side_mask, segment: seg }], &[leader], &MatchParams::default(), 640);
        assert_eq!(c.len(), 1);
        assert!((c[0].join_pixel - Point2::new(100.0, 200.0)).norm() < 1e-9);
        assert!((c[0].pixel - Point2::new(160.0, 280.0)).norm() < 1e-9);
    }

    #[test]
    fn far_side_has_no_candidate() {
        let leader = leader_fit((100.0, 240.0), (0.0, 1.0), 200.0, 20.0, 1);
        let side_mask = strip(640, 480, (450.0, 240.0), 0.3, 40.0, 3.0);
        let seg = fit_segment(&side_mask, 0).unwrap();
        assert!(match_intersections(&[SideInput { mask: &side_mask, segment: seg }], &[leader], &MatchParams::default(), 640)
            .is_empty());
    }

    #[test]
    fn parallel_lines_rejected() {
        let a = FittedSegment { center: Point2::new(0.0, 0.0), direction: Vector2::new(0.0, 1.0), half_length: 5.0, instance_id: 0 };
        let b = FittedSegment { center: Point2::new(3.0, 0.0), ..a };
        assert!(line_intersection(&a, &b).is_none());
    }

    #[test]
    fn estimate_identity_chain() {
        let cam = CameraModel { mount: Pose::identity(), ..Default::default() };
        let p = estimate_3d(&Point2::new(320.0, 240.0), &cam, &Pose::identity(), 0.30);
        assert!((p - Point3::new(0.0, 0.0, 0.30)).norm() < 1e-15);
        let shifted = estimate_3d(&Point2::new(100.0, 50.0), &cam, &crate::geometry::translation(0.1, -0.2, 0.3), 0.30);
        let base = estimate_3d(&Point2::new(100.0, 50.0), &cam, &Pose::identity(), 0.30);
        assert!((shifted - base - nalgebra::Vector3::new(0.1, -0.2, 0.3)).norm() < 1e-15);
    }

    proptest! {
        #[test]
        fn fit_is_rotation_equivariant(theta in 0.2f64..1.3, len in 30.0f64..80.0, hw in 2.0f64..6.0) {
            let n = 201;
            let m = strip(n, n, (100.0, 100.0), theta, len, hw);
            // Rotate by 90°: (u, v) -> (n-1-v, u).
            let r = Mask::from_fn(n, n, |u, v| m.get(v, n - 1 - u));
            let a = fit_segment(&m, 0).unwrap();
            let b = fit_segment(&r, 0).unwrap();
            let rot = Vector2::new(-a.direction.y, a.direction.x);
            prop_assert!(1.0 - rot.dot(&b.direction).abs() < 1e-3);
        }
    }
}
