//! Small geometric kernels shared by the world, camera and arm models.
//!
//! Everything here works on capsules: a line segment swept by a sphere.
//! Branches, robot links and cutter jaws are all represented this way.

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Rigid transform. Rotation is a unit quaternion, translation in meters.
pub type Pose = Isometry3<f64>;

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub a: Point3<f64>,
    pub b: Point3<f64>,
    pub radius: f64,
}

impl Capsule {
    pub fn new(a: Point3<f64>, b: Point3<f64>, radius: f64) -> Self {
        Self { a, b, radius }
    }

    pub fn transformed(&self, pose: &Pose) -> Self {
        Self {
            a: pose * self.a,
            b: pose * self.b,
            radius: self.radius,
        }
    }
}

/// Closest point on segment `[a, b]` to `p`, with its segment parameter.
pub fn closest_point_on_segment(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>) -> (Point3<f64>, f64) {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 < EPS {
        return (*a, 0.0);
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (a + ab * t, t)
}

pub fn point_segment_distance(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    (p - closest_point_on_segment(p, a, b).0).norm()
}

/// Closest points between segments `[p1, q1]` and `[p2, q2]`.
///
/// Returns `(c1, c2)` with `c1` on the first segment. Handles degenerate
/// (point-like) segments and parallel segments.
pub fn closest_points_segments(
    p1: &Point3<f64>,
    q1: &Point3<f64>,
    p2: &Point3<f64>,
    q2: &Point3<f64>,
) -> (Point3<f64>, Point3<f64>) {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);

    let (s, t);
    if a <= EPS && e <= EPS {
        return (*p1, *p2);
    }
    if a <= EPS {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > EPS * a * e {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    (p1 + d1 * s, p2 + d2 * t)
}

pub fn segment_segment_distance(
    p1: &Point3<f64>,
    q1: &Point3<f64>,
    p2: &Point3<f64>,
    q2: &Point3<f64>,
) -> f64 {
    let (c1, c2) = closest_points_segments(p1, q1, p2, q2);
    (c1 - c2).norm()
}

pub fn capsules_intersect(c1: &Capsule, c2: &Capsule) -> bool {
    segment_segment_distance(&c1.a, &c1.b, &c2.a, &c2.b) <= c1.radius + c2.radius
}

/// First intersection of the ray `origin + t * dir` (|dir| = 1) with a capsule.
///
/// Returns the ray parameter of the entry point, or `None` when the ray
/// misses or the capsule lies entirely behind the origin.
pub fn ray_capsule(origin: &Point3<f64>, dir: &Vector3<f64>, cap: &Capsule) -> Option<f64> {
    let ba = cap.b - cap.a;
    let oa = origin - cap.a;
    let baba = ba.norm_squared();
    let r = cap.radius;
    if baba < EPS {
        return ray_sphere(origin, dir, &cap.a, r);
    }
    let bard = ba.dot(dir);
    let baoa = ba.dot(&oa);
    let rdoa = dir.dot(&oa);
    let oaoa = oa.norm_squared();

    let qa = baba - bard * bard;
    let mut best: Option<f64> = None;
    if qa > EPS * baba {
        let qb = baba * rdoa - baoa * bard;
        let qc = baba * oaoa - baoa * baoa - r * r * baba;
        let h = qb * qb - qa * qc;
        if h >= 0.0 {
            let t = (-qb - h.sqrt()) / qa;
            let y = baoa + t * bard;
            if t > 0.0 && y > 0.0 && y < baba {
                best = Some(t);
            }
        }
    }
    for center in [&cap.a, &cap.b] {
        if let Some(t) = ray_sphere(origin, dir, center, r) {
            best = Some(best.map_or(t, |b: f64| b.min(t)));
        }
    }
    best
}

fn ray_sphere(origin: &Point3<f64>, dir: &Vector3<f64>, center: &Point3<f64>, r: f64) -> Option<f64> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let c = oc.norm_squared() - r * r;
    let h = b * b - c;
    if h < 0.0 {
        return None;
    }
    let t = -b - h.sqrt();
    (t > 0.0).then_some(t)
}

/// Parameter interval of segment `[a, b]` inside the axis-aligned box
/// `center ± half`, if the segment touches it (slab clipping).
pub fn segment_box_overlap(
    a: &Point3<f64>,
    b: &Point3<f64>,
    center: &Point3<f64>,
    half: &Vector3<f64>,
) -> Option<(f64, f64)> {
    let d = b - a;
    let mut t0 = 0.0_f64;
    let mut t1 = 1.0_f64;
    for i in 0..3 {
        let lo = center[i] - half[i];
        let hi = center[i] + half[i];
        if d[i].abs() < EPS {
            if a[i] < lo || a[i] > hi {
                return None;
            }
        } else {
            let mut ta = (lo - a[i]) / d[i];
            let mut tb = (hi - a[i]) / d[i];
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
    }
    Some((t0, t1))
}

/// Rotation error between two orientations as an angle-axis 3-vector.
pub fn rotation_error(target: &UnitQuaternion<f64>, current: &UnitQuaternion<f64>) -> Vector3<f64> {
    (target * current.inverse()).scaled_axis()
}

pub fn translation(x: f64, y: f64, z: f64) -> Pose {
    Pose::from_parts(Translation3::new(x, y, z), UnitQuaternion::identity())
}

/// Build an orientation from the tool axes expressed in world coordinates.
pub fn rotation_from_axes(x: &Vector3<f64>, y: &Vector3<f64>, z: &Vector3<f64>) -> UnitQuaternion<f64> {
    let m = nalgebra::Matrix3::from_columns(&[*x, *y, *z]);
    UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(m))
}

/// Serializable pose: translation and `[w, x, y, z]` quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub t: [f64; 3],
    pub q: [f64; 4],
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        let q = p.rotation.quaternion();
        Self {
            t: [p.translation.x, p.translation.y, p.translation.z],
            q: [q.w, q.i, q.j, q.k],
        }
    }
}

impl From<&PoseRecord> for Pose {
    fn from(r: &PoseRecord) -> Self {
        let q = nalgebra::Quaternion::new(r.q[0], r.q[1], r.q[2], r.q[3]);
        Pose::from_parts(
            Translation3::new(r.t[0], r.t[1], r.t[2]),
            UnitQuaternion::new_normalize(q),
        )
    }
}
