//! Analytic forward kinematics for modular trunk arms.
//!
//! Every joint module adds a translation along its parent's z axis followed by
//! a tilt. The 3-geared variant is driven by three linear gear positions in
//! `[0, 1]`; the plane through the three gear tips defines the tilt and its
//! mean height the extension. The 4-geared variant takes normalized
//! `(tilt_x, tilt_y, stretch)` in `[-1, 1]`; the available stretch shrinks
//! linearly to zero as either tilt reaches its limit.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::Rng;
use thiserror::Error;

/// Actuation values per joint for both variants.
pub const GEARS_PER_JOINT: usize = 3;

/// Planar angles of the three gear attachments of a 3-geared joint.
pub const THREE_GEAR_ANGLES_DEG: [f64; 3] = [90.0, 210.0, 330.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("invalid arm spec: {0}")]
    InvalidSpec(String),
    #[error("gear value {value} of joint {joint} component {component} outside [{lo}, {hi}]")]
    OutOfRange {
        joint: usize,
        component: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("expected {expected} joints, got {got}")]
    JointCount { expected: usize, got: usize },
    #[error("gear variant does not match arm variant")]
    VariantMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    ThreeGeared,
    FourGeared,
}

impl Variant {
    /// Inclusive range of every actuation component.
    pub fn range(self) -> (f64, f64) {
        match self {
            Variant::ThreeGeared => (0.0, 1.0),
            Variant::FourGeared => (-1.0, 1.0),
        }
    }

    /// Actuation of a straight, half-extended joint.
    pub fn neutral(self) -> [f64; 3] {
        match self {
            Variant::ThreeGeared => [0.5; 3],
            Variant::FourGeared => [0.0; 3],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::ThreeGeared => "three-geared",
            Variant::FourGeared => "four-geared",
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Variant::ThreeGeared => 3,
            Variant::FourGeared => 4,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            3 => Some(Variant::ThreeGeared),
            4 => Some(Variant::FourGeared),
            _ => None,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = KinematicsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "three-geared" | "three" | "3" | "3-geared" => Ok(Variant::ThreeGeared),
            "four-geared" | "four" | "4" | "4-geared" => Ok(Variant::FourGeared),
            other => Err(KinematicsError::InvalidSpec(format!("unknown arm variant '{other}'"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Geometry of a modular arm. Lengths in mm, angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmSpec {
    pub variant: Variant,
    pub n_joints: usize,
    /// Maximum tilt per axis.
    pub tilt_max: f64,
    /// Extension range at zero tilt.
    pub stretch_max: f64,
    /// Distance between consecutive joint bases at zero extension.
    pub base_height: f64,
    /// Distance from the joint axis to the gear attachments.
    pub gear_radius: f64,
}

impl ArmSpec {
    pub fn three_geared(n_joints: usize) -> Self {
        let tilt_max: f64 = 40.0;
        let stretch_max = 55.0;
        Self {
            variant: Variant::ThreeGeared,
            n_joints,
            tilt_max,
            stretch_max,
            base_height: 60.0,
            // one gear fully up and two down tilts by atan(2L / 3r); calibrate to tilt_max
            gear_radius: 2.0 * stretch_max / (3.0 * tilt_max.to_radians().tan()),
        }
    }

    pub fn four_geared(n_joints: usize) -> Self {
        Self {
            variant: Variant::FourGeared,
            n_joints,
            tilt_max: 16.0,
            stretch_max: 22.0,
            base_height: 45.0,
            gear_radius: 30.0,
        }
    }

    pub fn new(variant: Variant, n_joints: usize) -> Self {
        match variant {
            Variant::ThreeGeared => Self::three_geared(n_joints),
            Variant::FourGeared => Self::four_geared(n_joints),
        }
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        if self.n_joints == 0 {
            return Err(KinematicsError::InvalidSpec("n_joints must be >= 1".into()));
        }
        for (name, x) in [
            ("tilt_max", self.tilt_max),
            ("stretch_max", self.stretch_max),
            ("base_height", self.base_height),
            ("gear_radius", self.gear_radius),
        ] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(KinematicsError::InvalidSpec(format!("{name} must be finite and > 0, got {x}")));
            }
        }
        if self.tilt_max >= 90.0 {
            return Err(KinematicsError::InvalidSpec("tilt_max must be < 90 degrees".into()));
        }
        Ok(())
    }

    /// Joint spacing of a straight, half-extended arm.
    pub fn neutral_spacing(&self) -> f64 {
        self.base_height + self.stretch_max / 2.0
    }

    /// Upper bound on the end-effector distance from the base.
    pub fn max_reach(&self) -> f64 {
        self.n_joints as f64 * (self.base_height + self.stretch_max)
    }
}

/// Actuation vector of every joint, flattened as `[joint0_c0, joint0_c1, joint0_c2, joint1_c0, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GearState {
    variant: Variant,
    values: Vec<f64>,
}

impl GearState {
    pub fn new(variant: Variant, values: Vec<f64>) -> Result<Self, KinematicsError> {
        if values.len() % GEARS_PER_JOINT != 0 {
            return Err(KinematicsError::InvalidSpec(format!(
                "gear vector length {} is not a multiple of {GEARS_PER_JOINT}",
                values.len()
            )));
        }
        let (lo, hi) = variant.range();
        for (idx, &value) in values.iter().enumerate() {
            if !(value >= lo && value <= hi) {
                return Err(KinematicsError::OutOfRange {
                    joint: idx / GEARS_PER_JOINT,
                    component: idx % GEARS_PER_JOINT,
                    value,
                    lo,
                    hi,
                });
            }
        }
        Ok(Self { variant, values })
    }

    pub fn from_joints(variant: Variant, joints: &[[f64; 3]]) -> Result<Self, KinematicsError> {
        Self::new(variant, joints.concat())
    }

    pub fn neutral(spec: &ArmSpec) -> Self {
        Self {
            variant: spec.variant,
            values: spec.variant.neutral().repeat(spec.n_joints),
        }
    }

    /// Clamps arbitrary values into the feasible box.
    pub fn projected(variant: Variant, mut values: Vec<f64>) -> Self {
        project_in_place(variant, &mut values);
        Self { variant, values }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn n_joints(&self) -> usize {
        self.values.len() / GEARS_PER_JOINT
    }

    pub fn joint(&self, k: usize) -> [f64; 3] {
        let s = &self.values[k * GEARS_PER_JOINT..(k + 1) * GEARS_PER_JOINT];
        [s[0], s[1], s[2]]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Same arm with every tilt negated (4-geared only; a mirror through the z axis).
    pub fn mirrored(&self) -> Option<Self> {
        (self.variant == Variant::FourGeared).then(|| {
            let mut values = self.values.clone();
            for joint in values.chunks_mut(GEARS_PER_JOINT) {
                joint[0] = -joint[0];
                joint[1] = -joint[1];
            }
            Self {
                variant: self.variant,
                values,
            }
        })
    }
}

/// Clamps actuation values into their feasible box. For the 4-geared variant
/// the coupled stretch limit is built into [`joint_transform`], so the box is
/// the whole feasible set.
pub fn project_in_place(variant: Variant, values: &mut [f64]) {
    let (lo, hi) = variant.range();
    for x in values.iter_mut() {
        *x = if x.is_nan() { (lo + hi) / 2.0 } else { x.clamp(lo, hi) };
    }
}

/// Position in mm plus unit-quaternion orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub p: Vector3<f64>,
    pub q: UnitQuaternion<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            p: Vector3::zeros(),
            q: UnitQuaternion::identity(),
        }
    }

    /// Same rotation with `w >= 0`.
    pub fn canonical(&self) -> Self {
        Self {
            p: self.p,
            q: canonical_quaternion(&self.q),
        }
    }

    /// `[x, y, z, qw, qx, qy, qz]`
    pub fn to_array(&self) -> [f64; 7] {
        let q = self.q.quaternion();
        [self.p.x, self.p.y, self.p.z, q.w, q.i, q.j, q.k]
    }

    /// Inverse of [`Pose::to_array`]; the quaternion is renormalized.
    pub fn from_array(a: [f64; 7]) -> Self {
        Self {
            p: Vector3::new(a[0], a[1], a[2]),
            q: UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(a[3], a[4], a[5], a[6])),
        }
    }

    /// Like [`Pose::from_array`] but keeps the quaternion bits as given.
    /// The caller guarantees it is already unit length.
    pub fn from_array_unchecked(a: [f64; 7]) -> Self {
        Self {
            p: Vector3::new(a[0], a[1], a[2]),
            q: UnitQuaternion::new_unchecked(nalgebra::Quaternion::new(a[3], a[4], a[5], a[6])),
        }
    }

    /// Composes a child transform expressed in this frame.
    pub fn compose(&self, translation: &Vector3<f64>, rotation: &UnitQuaternion<f64>) -> Self {
        let mut q = self.q * rotation;
        q.renormalize();
        Self {
            p: self.p + self.q * translation,
            q,
        }
    }
}

pub fn canonical_quaternion(q: &UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.quaternion().w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        *q
    }
}

fn check_joint(gears: [f64; 3], variant: Variant, joint: usize) -> Result<(), KinematicsError> {
    let (lo, hi) = variant.range();
    for (component, &value) in gears.iter().enumerate() {
        if !(value >= lo && value <= hi) {
            return Err(KinematicsError::OutOfRange {
                joint,
                component,
                value,
                lo,
                hi,
            });
        }
    }
    Ok(())
}

/// Gear tip positions of a 3-geared joint in the joint frame.
pub fn three_gear_points(gears: [f64; 3], spec: &ArmSpec) -> [Vector3<f64>; 3] {
    let r = spec.gear_radius;
    let mut pts = [Vector3::zeros(); 3];
    for (i, p) in pts.iter_mut().enumerate() {
        let phi = THREE_GEAR_ANGLES_DEG[i].to_radians();
        *p = Vector3::new(r * phi.cos(), r * phi.sin(), gears[i] * spec.stretch_max);
    }
    pts
}

/// Upward unit normal of the plane through the three gear tips.
pub fn three_gear_plane_normal(gears: [f64; 3], spec: &ArmSpec) -> Vector3<f64> {
    let [p1, p2, p3] = three_gear_points(gears, spec);
    let n = (p2 - p1).cross(&(p3 - p1));
    let n = n.normalize();
    if n.z < 0.0 {
        -n
    } else {
        n
    }
}

/// Local transform of one joint: translation along the parent z axis, then tilt.
pub fn joint_transform(gears: [f64; 3], spec: &ArmSpec) -> Result<(Vector3<f64>, UnitQuaternion<f64>), KinematicsError> {
    check_joint(gears, spec.variant, 0)?;
    Ok(joint_transform_unchecked(gears, spec))
}

fn joint_transform_unchecked(gears: [f64; 3], spec: &ArmSpec) -> (Vector3<f64>, UnitQuaternion<f64>) {
    match spec.variant {
        Variant::ThreeGeared => {
            let normal = three_gear_plane_normal(gears, spec);
            let mean = (gears[0] + gears[1] + gears[2]) / 3.0;
            let d = spec.base_height + mean * spec.stretch_max;
            let rot = UnitQuaternion::rotation_between(&Vector3::z(), &normal).unwrap_or_else(UnitQuaternion::identity);
            (Vector3::new(0.0, 0.0, d), rot)
        }
        Variant::FourGeared => {
            let [tx, ty, s] = gears;
            let coupling = 1.0 - tx.abs().max(ty.abs());
            let d = spec.base_height + 0.5 * spec.stretch_max * (1.0 + s * coupling);
            let tmax = spec.tilt_max.to_radians();
            let rot = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), tx * tmax)
                * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), ty * tmax);
            (Vector3::new(0.0, 0.0, d), rot)
        }
    }
}

/// Poses of the base (index 0) and of the frame after every joint; the last
/// entry is the end-effector.
pub fn forward_chain(gears: &GearState, spec: &ArmSpec) -> Result<Vec<Pose>, KinematicsError> {
    if gears.variant != spec.variant {
        return Err(KinematicsError::VariantMismatch);
    }
    if gears.n_joints() != spec.n_joints {
        return Err(KinematicsError::JointCount {
            expected: spec.n_joints,
            got: gears.n_joints(),
        });
    }
    let mut poses = Vec::with_capacity(spec.n_joints + 1);
    let mut pose = Pose::identity();
    poses.push(pose);
    for k in 0..spec.n_joints {
        let g = gears.joint(k);
        check_joint(g, spec.variant, k)?;
        let (t, r) = joint_transform_unchecked(g, spec);
        pose = pose.compose(&t, &r);
        poses.push(pose);
    }
    Ok(poses)
}

/// End-effector pose only.
pub fn end_effector(gears: &GearState, spec: &ArmSpec) -> Result<Pose, KinematicsError> {
    forward_chain(gears, spec).map(|p| *p.last().expect("base pose always present"))
}

/// Uniformly samples a joint configuration. With probability `p_edge` a joint
/// is pinned to extremes of its range (randomly low or high per component).
pub fn sample_random_pose<R: Rng + ?Sized>(spec: &ArmSpec, p_edge: f64, rng: &mut R) -> GearState {
    let (lo, hi) = spec.variant.range();
    let mut values = Vec::with_capacity(spec.n_joints * GEARS_PER_JOINT);
    for _ in 0..spec.n_joints {
        let pinned = p_edge > 0.0 && rng.random::<f64>() < p_edge;
        for _ in 0..GEARS_PER_JOINT {
            let x = if pinned {
                if rng.random::<bool>() {
                    hi
                } else {
                    lo
                }
            } else {
                rng.random_range(lo..=hi)
            };
            values.push(x);
        }
    }
    GearState {
        variant: spec.variant,
        values,
    }
}

pub const DEFAULT_EDGE_PROBABILITY: f64 = 0.05;

/// Rotation matrix of a pose's orientation (used by diagnostics and tests).
pub fn rotation_matrix(q: &UnitQuaternion<f64>) -> Matrix3<f64> {
    q.to_rotation_matrix().into_inner()
}
