//! Kinematics for a 6R manipulator (UR5e-like link table) riding a 1 m
//! prismatic rail along world `x`.
//!
//! Joint vector: `q[0]` rail position (m), `q[1..7]` revolute joints (rad).
//! The tool frame follows the cutter convention: `z` forward out of the
//! mouth, `y` up toward the camera.

use nalgebra::{Matrix6, Point3, SMatrix, SVector, Translation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{capsules_intersect, rotation_error, Capsule, Pose};
use crate::world::{BranchClass, WorldModel};

pub const DOF: usize = 7;
pub type Jacobian = SMatrix<f64, 6, DOF>;
pub type JointVector = SVector<f64, DOF>;

/// Default scan seed, elbow up with the cutter facing the trellis.
pub const HOME_Q: [f64; DOF] = [0.0, 0.0, -2.2, -2.1, -1.27, -1.6, 0.0];

/// Translational Lipschitz bound of `fk` over the default limit box (m per unit joint step).
pub const FK_LIPSCHITZ: f64 = 3.5;

/// Cutter jaw radius (m).
pub const JAW_RADIUS_M: f64 = 0.004;

/// The two V-shaped cutter jaws in the tool frame. They meet behind the
/// blade hit point and open toward `+z`; the upper jaw is the one the
/// camera sees.
pub fn cutter_jaws() -> [Capsule; 2] {
    let apex = Point3::new(0.0, 0.025, 0.022);
    [
        Capsule::new(apex, Point3::new(0.0, 0.06, 0.057), JAW_RADIUS_M),
        Capsule::new(apex, Point3::new(0.0, -0.01, 0.057), JAW_RADIUS_M),
    ]
}

#[derive(Debug, Error, PartialEq)]
pub enum ArmError {
    #[error("no IK solution (position error {pos_err_m:.4} m, orientation error {rot_err_deg:.3} deg)")]
    NoSolution { pos_err_m: f64, rot_err_deg: f64 },
    #[error("joint state outside limits")]
    OutOfLimits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhLink {
    pub d: f64,
    pub a: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkParams {
    pub max_iters: usize,
    pub damping: f64,
    pub pos_tol_m: f64,
    pub rot_tol_deg: f64,
    /// Iteration stops early once both errors fall below these.
    pub converge_pos_m: f64,
    pub converge_rot_rad: f64,
    pub max_step: f64,
}

impl Default for IkParams {
    fn default() -> Self {
        Self {
            max_iters: 200,
            damping: 0.05,
            pos_tol_m: 1e-3,
            rot_tol_deg: 0.5,
            converge_pos_m: 1e-9,
            converge_rot_rad: 1e-9,
            max_step: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmConfig {
    /// Manipulator base position at `q[0] = 0`.
    pub base_xyz: [f64; 3],
    pub base_yaw_deg: f64,
    pub dh: [DhLink; 6],
    /// Flange to tool origin along flange `z`.
    pub tool_length_m: f64,
    pub q_min: [f64; DOF],
    pub q_max: [f64; DOF],
    /// Capsule radii for the six links and the tool body.
    pub link_radii: [f64; 7],
    pub ik: IkParams,
}

impl Default for ArmConfig {
    fn default() -> Self {
        use std::f64::consts::{FRAC_PI_2, TAU};
        Self {
            base_xyz: [-0.10, -0.10, 0.50],
            base_yaw_deg: 90.0,
            dh: [
                DhLink { d: 0.1625, a: 0.0, alpha: FRAC_PI_2 },
                DhLink { d: 0.0, a: -0.425, alpha: 0.0 },
                DhLink { d: 0.0, a: -0.3922, alpha: 0.0 },
                DhLink { d: 0.1333, a: 0.0, alpha: FRAC_PI_2 },
                DhLink { d: 0.0997, a: 0.0, alpha: -FRAC_PI_2 },
                DhLink { d: 0.0996, a: 0.0, alpha: 0.0 },
            ],
            tool_length_m: 0.16,
            q_min: [0.0, -TAU, -TAU, -TAU, -TAU, -TAU, -TAU],
            q_max: [1.0, TAU, TAU, TAU, TAU, TAU, TAU],
            link_radii: [0.06, 0.05, 0.04, 0.04, 0.04, 0.04, 0.03],
            ik: IkParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub q: [f64; DOF],
}

impl ArmState {
    pub fn new(q: [f64; DOF]) -> Self {
        Self { q }
    }

    pub fn vector(&self) -> JointVector {
        JointVector::from_column_slice(&self.q)
    }

    pub fn from_vector(v: &JointVector) -> Self {
        let mut q = [0.0; DOF];
        q.copy_from_slice(v.as_slice());
        Self { q }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IkOptions {
    /// Keep the rail joint at its seed value.
    pub lock_prismatic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub config: ArmConfig,
}

fn dh_transform(link: &DhLink, theta: f64) -> Pose {
    Pose::from_parts(Translation3::new(0.0, 0.0, link.d), UnitQuaternion::from_axis_angle(&Vector3::z_axis(), theta))
        * Pose::from_parts(
            Translation3::new(link.a, 0.0, 0.0),
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), link.alpha),
        )
}

impl Arm {
    pub fn new(config: ArmConfig) -> Self {
        Self { config }
    }

    pub fn rail_axis(&self) -> Vector3<f64> {
        Vector3::x()
    }

    pub fn within_limits(&self, s: &ArmState) -> bool {
        (0..DOF).all(|i| s.q[i] >= self.config.q_min[i] && s.q[i] <= self.config.q_max[i])
    }

    pub fn clamp(&self, s: &ArmState) -> ArmState {
        let mut q = s.q;
        for (i, v) in q.iter_mut().enumerate() {
            *v = v.clamp(self.config.q_min[i], self.config.q_max[i]);
        }
        ArmState { q }
    }

    pub fn base_pose(&self, rail: f64) -> Pose {
        let [x, y, z] = self.config.base_xyz;
        Pose::from_parts(
            Translation3::from(Vector3::new(x, y, z) + self.rail_axis() * rail),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.config.base_yaw_deg.to_radians()),
        )
    }

    /// World poses of the base, the six DH frames, and the tool.
    pub fn frames(&self, s: &ArmState) -> [Pose; 8] {
        let mut out = [Pose::identity(); 8];
        let mut t = self.base_pose(s.q[0]);
        out[0] = t;
        for i in 0..6 {
            t *= dh_transform(&self.config.dh[i], s.q[i + 1]);
            out[i + 1] = t;
        }
        out[7] = t * Translation3::new(0.0, 0.0, self.config.tool_length_m);
        out
    }

    pub fn fk(&self, s: &ArmState) -> Pose {
        self.frames(s)[7]
    }

    /// Geometric Jacobian `[v; ω]` of the tool origin in world coordinates.
    pub fn jacobian(&self, s: &ArmState) -> Jacobian {
        let f = self.frames(s);
        let p = f[7].translation.vector;
        let mut j = Jacobian::zeros();
        j.fixed_view_mut::<3, 1>(0, 0).copy_from(&self.rail_axis());
        for i in 0..6 {
            let z = f[i].rotation * Vector3::z();
            let o = f[i].translation.vector;
            j.fixed_view_mut::<3, 1>(0, i + 1).copy_from(&z.cross(&(p - o)));
            j.fixed_view_mut::<3, 1>(3, i + 1).copy_from(&z);
        }
        j
    }

    /// Position and orientation error of `fk(s)` with respect to `target`.
    pub fn pose_error(&self, target: &Pose, s: &ArmState) -> Vector6<f64> {
        let cur = self.fk(s);
        let dp = target.translation.vector - cur.translation.vector;
        let dr = rotation_error(&target.rotation, &cur.rotation);
        Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
    }

    /// Damped-least-squares IK including the rail joint.
    pub fn ik_approach(&self, target: &Pose, seed: &ArmState) -> Result<ArmState, ArmError> {
        self.ik_solve(target, seed, IkOptions::default())
    }

    pub fn ik_solve(&self, target: &Pose, seed: &ArmState, opts: IkOptions) -> Result<ArmState, ArmError> {
        let p = &self.config.ik;
        let mut s = *seed;
        let lambda2 = p.damping * p.damping;
        for _ in 0..p.max_iters {
            let e = self.pose_error(target, &s);
            let (ep, er) = (e.fixed_rows::<3>(0).norm(), e.fixed_rows::<3>(3).norm());
            if ep < p.converge_pos_m && er < p.converge_rot_rad {
                return Ok(s);
            }
            let mut jac = self.jacobian(&s);
            if opts.lock_prismatic {
                jac.column_mut(0).fill(0.0);
            }
            let jjt: Matrix6<f64> = jac * jac.transpose() + Matrix6::identity() * lambda2;
            let Some(y) = jjt.lu().solve(&e) else { break };
            let mut dq = jac.transpose() * y;
            let n = dq.amax();
            if n > p.max_step {
                dq *= p.max_step / n;
            }
            s = self.clamp(&ArmState::from_vector(&(s.vector() + dq)));
        }
        let e = self.pose_error(target, &s);
        let pos_err_m = e.fixed_rows::<3>(0).norm();
        let rot_err_deg = e.fixed_rows::<3>(3).norm().to_degrees();
        if pos_err_m < p.pos_tol_m && rot_err_deg < p.rot_tol_deg {
            Ok(s)
        } else {
            Err(ArmError::NoSolution { pos_err_m, rot_err_deg })
        }
    }

    /// Link capsules between consecutive frame origins plus the tool body.
    pub fn capsules(&self, s: &ArmState, inflation: f64) -> Vec<Capsule> {
        let f = self.frames(s);
        let pts: Vec<Point3<f64>> = f.iter().map(|p| Point3::from(p.translation.vector)).collect();
        (0..7)
            .map(|i| Capsule::new(pts[i], pts[i + 1], self.config.link_radii[i] + inflation))
            .collect()
    }

    /// Obstacles that count as collisions: leaders, wires and posts.
    pub fn obstacles(world: &WorldModel) -> Vec<Capsule> {
        world
            .branches
            .iter()
            .filter(|b| matches!(b.class, BranchClass::Leader | BranchClass::Wire | BranchClass::Post))
            .flat_map(|b| b.capsules())
            .collect()
    }

    pub fn check_collision(&self, s: &ArmState, world: &WorldModel) -> bool {
        self.check_collision_with(s, world, &Self::obstacles(world), 0.0)
    }

    pub fn check_collision_with(&self, s: &ArmState, world: &WorldModel, obstacles: &[Capsule], inflation: f64) -> bool {
        let links = self.capsules(s, inflation);
        links.iter().any(|l| {
            world.trellis.capsule_hits_slab(l) || obstacles.iter().any(|o| capsules_intersect(l, o))
        })
    }

    /// Seed configuration that puts the tool in front of the middle of the scanned band.
    pub fn home(&self) -> ArmState {
        ArmState::new(HOME_Q)
    }

    /// Zero-configuration tool pose at `q[0] = 0`.
    pub fn zero_pose(&self) -> Pose {
        self.fk(&ArmState::new([0.0; DOF]))
    }
}

impl Default for Arm {
    fn default() -> Self {
        Self::new(ArmConfig::default())
    }
}
