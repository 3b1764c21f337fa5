//! Asset library, kinematic articulated objects, end effector, scene state,
//! forward kinematics and success-criterion evaluation.
//!
//! Every articulated asset is a two-link chain: a base link and a child link
//! joined by exactly one unfixed prismatic or revolute joint. Geometry is
//! made of box and cylinder primitives; keypoints are authored per link.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{compose, GeometryError, Pose, UnitQuat, Vec3};

/// Largest gripper opening, meters.
pub const GRIPPER_MAX_WIDTH: f64 = 0.08;

pub const TOOL_HEAD: &str = "tool_head";
pub const TOOL_TAIL: &str = "tool_tail";
pub const TOOL_SIDE: &str = "tool_side";
pub const OBJECT_HEAD: &str = "articulated_object_head";
pub const OBJECT_INSIDE_BASE: &str = "articulated_object_inside_base";

pub const TOOL_KEYPOINTS: [&str; 3] = [TOOL_HEAD, TOOL_TAIL, TOOL_SIDE];
pub const OBJECT_KEYPOINTS: [&str; 2] = [OBJECT_HEAD, OBJECT_INSIDE_BASE];

const LIMIT_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("manifest parse error: {0}")]
    ManifestParse(String),
    #[error("asset `{asset}` violates an invariant: {reason}")]
    InvariantViolation { asset: String, reason: String },
    #[error("joint value {value} outside limits [{lo}, {hi}]")]
    JointLimit { value: f64, lo: f64, hi: f64 },
    #[error("unknown keypoint `{0}`")]
    UnknownKeypoint(String),
    #[error("unknown scene reference `{0}`")]
    UnknownReference(String),
    #[error("unknown asset `{0}`")]
    UnknownAsset(String),
    #[error("scene file error: {0}")]
    SceneParse(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

impl From<GeometryError> for SceneError {
    fn from(e: GeometryError) -> Self {
        SceneError::SceneParse(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeKind {
    /// Half-extents along the local axes.
    Box { half_extents: Vec3 },
    Cylinder { radius: f64, half_height: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shape {
    pub kind: ShapeKind,
    pub local_pose: Pose,
}

impl Shape {
    pub fn cuboid(half_extents: Vec3, local_pose: Pose) -> Self {
        Shape {
            kind: ShapeKind::Box { half_extents },
            local_pose,
        }
    }

    pub fn cylinder(radius: f64, half_height: f64, local_pose: Pose) -> Self {
        Shape {
            kind: ShapeKind::Cylinder {
                radius,
                half_height,
            },
            local_pose,
        }
    }

    fn dimensions(&self) -> Vec<f64> {
        match self.kind {
            ShapeKind::Box { half_extents } => half_extents.to_array().to_vec(),
            ShapeKind::Cylinder {
                radius,
                half_height,
            } => vec![radius, half_height],
        }
    }

    pub fn surface_area(&self) -> f64 {
        match self.kind {
            ShapeKind::Box { half_extents: h } => 8.0 * (h.x * h.y + h.y * h.z + h.x * h.z),
            ShapeKind::Cylinder {
                radius,
                half_height,
            } => {
                2.0 * std::f64::consts::PI * radius * (2.0 * half_height)
                    + 2.0 * std::f64::consts::PI * radius * radius
            }
        }
    }

    /// Smallest full extent across the shape's local axes.
    pub fn min_width(&self) -> f64 {
        match self.kind {
            ShapeKind::Box { half_extents: h } => 2.0 * h.x.min(h.y).min(h.z),
            ShapeKind::Cylinder {
                radius,
                half_height,
            } => 2.0 * radius.min(half_height),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Prismatic,
    Revolute,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Joint {
    pub kind: JointKind,
    /// Unit axis in the joint-origin frame.
    pub axis: Vec3,
    /// Joint frame relative to the base link.
    pub origin: Pose,
    pub limits: (f64, f64),
    pub rest_value: f64,
}

impl Joint {
    pub fn range(&self) -> f64 {
        self.limits.1 - self.limits.0
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.limits.0, self.limits.1)
    }

    pub fn within_limits(&self, v: f64) -> bool {
        v >= self.limits.0 - LIMIT_EPS && v <= self.limits.1 + LIMIT_EPS
    }

    /// Normalized position in `[0, 1]`.
    pub fn fraction(&self, v: f64) -> f64 {
        (v - self.limits.0) / self.range()
    }

    /// Motion of the child frame for a joint value, in the joint-origin frame.
    pub fn motion(&self, value: f64) -> Pose {
        match self.kind {
            JointKind::Prismatic => Pose::from_translation(self.axis * value),
            JointKind::Revolute => Pose::from_rotation(UnitQuat::from_scaled_axis(self.axis * value)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkId {
    Base,
    Child,
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkId::Base => "base",
            LinkId::Child => "child",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub link: LinkId,
    pub position: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArticulatedObject {
    pub class_name: String,
    pub instance_id: String,
    pub base_link: Vec<Shape>,
    pub child_link: Vec<Shape>,
    pub joint: Joint,
    pub keypoints: BTreeMap<String, Keypoint>,
    pub description: String,
    /// Nominal placement on the table.
    pub default_pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigidObject {
    pub name: String,
    pub shapes: Vec<Shape>,
    /// Local keypoints; the body origin is always its reference point.
    pub keypoints: BTreeMap<String, Vec3>,
    pub description: String,
    pub default_pose: Pose,
}

impl RigidObject {
    pub fn min_width(&self) -> f64 {
        self.shapes
            .iter()
            .map(Shape::min_width)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Tool keypoints in the end-effector frame. `tool_head` sits at the frame
/// origin, between the finger tips; the approach axis (tail to head) is
/// local +z and the finger-spread axis (head to side) is local +x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToolKeypoints {
    pub head: Vec3,
    pub tail: Vec3,
    pub side: Vec3,
}

impl Default for ToolKeypoints {
    fn default() -> Self {
        ToolKeypoints {
            head: Vec3::ZERO,
            tail: Vec3::new(0.0, 0.0, -0.1),
            side: Vec3::new(0.04, 0.0, 0.0),
        }
    }
}

impl ToolKeypoints {
    pub fn get(&self, name: &str) -> Option<Vec3> {
        match name {
            TOOL_HEAD => Some(self.head),
            TOOL_TAIL => Some(self.tail),
            TOOL_SIDE => Some(self.side),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndEffector {
    pub pose: Pose,
    pub width: f64,
    pub keypoints: ToolKeypoints,
}

impl Default for EndEffector {
    /// Home pose above the workspace, pointing down, fingers open.
    fn default() -> Self {
        EndEffector {
            pose: Pose::new(UnitQuat::rot_x(std::f64::consts::PI), Vec3::new(0.3, 0.0, 0.4)),
            width: GRIPPER_MAX_WIDTH,
            keypoints: ToolKeypoints::default(),
        }
    }
}

impl EndEffector {
    pub fn keypoint_local(&self, name: &str) -> Option<Vec3> {
        self.keypoints.get(name)
    }

    pub fn keypoint_world(&self, name: &str) -> Option<Vec3> {
        self.keypoints.get(name).map(|p| self.pose.transform_point(p))
    }

    pub fn head_world(&self) -> Vec3 {
        self.pose.transform_point(self.keypoints.head)
    }
}

/// Articulated object placed in a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectState {
    pub asset: Arc<ArticulatedObject>,
    pub base_pose: Pose,
    pub joint_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigidBodyState {
    pub body: Arc<RigidObject>,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum KeypointRef {
    Tool(String),
    Object { object: String, name: String },
    Rigid { body: String, name: String },
}

impl KeypointRef {
    pub fn object(object: &str, name: &str) -> Self {
        KeypointRef::Object {
            object: object.to_string(),
            name: name.to_string(),
        }
    }

    pub fn tool(name: &str) -> Self {
        KeypointRef::Tool(name.to_string())
    }
}

impl fmt::Display for KeypointRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeypointRef::Tool(n) => write!(f, "tool.{n}"),
            KeypointRef::Object { object, name } => write!(f, "{object}.{name}"),
            KeypointRef::Rigid { body, name } => write!(f, "{body}.{name}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttachTarget {
    Keypoint(KeypointRef),
    RigidBody(String),
}

/// What the gripper holds. `grasp_offset` is the held frame relative to the
/// end effector at the moment of grasping.
#[derive(Debug, Clone, PartialEq)]
pub struct Attachment {
    pub target: AttachTarget,
    pub grasp_offset: Pose,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneState {
    pub objects: BTreeMap<String, ObjectState>,
    pub rigid_bodies: BTreeMap<String, RigidBodyState>,
    pub end_effector: EndEffector,
    pub attachment: Option<Attachment>,
}

/// World poses of the two links of an articulated object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkPoses {
    pub base: Pose,
    pub child: Pose,
}

impl LinkPoses {
    pub fn get(&self, link: LinkId) -> Pose {
        match link {
            LinkId::Base => self.base,
            LinkId::Child => self.child,
        }
    }
}

pub fn forward_kinematics(
    obj: &ArticulatedObject,
    base_pose: &Pose,
    joint_value: f64,
) -> Result<LinkPoses, SceneError> {
    let j = &obj.joint;
    if !joint_value.is_finite() || !j.within_limits(joint_value) {
        return Err(SceneError::JointLimit {
            value: joint_value,
            lo: j.limits.0,
            hi: j.limits.1,
        });
    }
    let child = compose(&compose(base_pose, &j.origin), &j.motion(joint_value));
    Ok(LinkPoses {
        base: *base_pose,
        child,
    })
}

/// World-frame line of the joint axis: (point, unit direction).
pub fn joint_axis_world(obj: &ArticulatedObject, base_pose: &Pose) -> (Vec3, Vec3) {
    let frame = compose(base_pose, &obj.joint.origin);
    (frame.translation, frame.transform_vector(obj.joint.axis))
}

impl ObjectState {
    pub fn links(&self) -> Result<LinkPoses, SceneError> {
        forward_kinematics(&self.asset, &self.base_pose, self.joint_value)
    }

    pub fn keypoint_world(&self, name: &str) -> Result<Vec3, SceneError> {
        let kp = self
            .asset
            .keypoints
            .get(name)
            .ok_or_else(|| SceneError::UnknownKeypoint(name.to_string()))?;
        Ok(self.links()?.get(kp.link).transform_point(kp.position))
    }

    pub fn joint_fraction(&self) -> f64 {
        self.asset.joint.fraction(self.joint_value)
    }
}

impl SceneState {
    pub fn with_end_effector(end_effector: EndEffector) -> Self {
        SceneState {
            end_effector,
            ..Default::default()
        }
    }

    pub fn add_object(&mut self, name: &str, asset: Arc<ArticulatedObject>, base_pose: Pose, joint_value: f64) {
        self.objects.insert(
            name.to_string(),
            ObjectState {
                asset,
                base_pose,
                joint_value,
            },
        );
    }

    pub fn add_rigid_body(&mut self, name: &str, body: Arc<RigidObject>, pose: Pose) {
        self.rigid_bodies
            .insert(name.to_string(), RigidBodyState { body, pose });
    }

    pub fn object(&self, name: &str) -> Result<&ObjectState, SceneError> {
        self.objects
            .get(name)
            .ok_or_else(|| SceneError::UnknownReference(name.to_string()))
    }

    /// The scene's only articulated object.
    pub fn sole_object(&self) -> Result<(&str, &ObjectState), SceneError> {
        let mut it = self.objects.iter();
        match (it.next(), it.next()) {
            (Some((n, o)), None) => Ok((n.as_str(), o)),
            (None, _) => Err(SceneError::UnknownReference("no articulated object in scene".into())),
            _ => Err(SceneError::UnknownReference(
                "scene holds several articulated objects".into(),
            )),
        }
    }

    /// The scene's only rigid body.
    pub fn sole_rigid_body(&self) -> Result<(&str, &RigidBodyState), SceneError> {
        let mut it = self.rigid_bodies.iter();
        match (it.next(), it.next()) {
            (Some((n, o)), None) => Ok((n.as_str(), o)),
            (None, _) => Err(SceneError::UnknownReference("no rigid body in scene".into())),
            _ => Err(SceneError::UnknownReference("scene holds several rigid bodies".into())),
        }
    }

    /// First articulated object (by name) carrying every listed keypoint.
    pub fn object_with_keypoints<'a, I>(&self, names: I) -> Result<&str, SceneError>
    where
        I: IntoIterator<Item = &'a str> + Clone,
    {
        self.objects
            .iter()
            .find(|(_, o)| names.clone().into_iter().all(|n| o.asset.keypoints.contains_key(n)))
            .map(|(n, _)| n.as_str())
            .ok_or_else(|| {
                let missing: Vec<&str> = names.into_iter().collect();
                SceneError::UnknownKeypoint(missing.join(", "))
            })
    }

    pub fn keypoint_world(&self, r: &KeypointRef) -> Result<Vec3, SceneError> {
        match r {
            KeypointRef::Tool(n) => self
                .end_effector
                .keypoint_world(n)
                .ok_or_else(|| SceneError::UnknownKeypoint(n.clone())),
            KeypointRef::Object { object, name } => self.object(object)?.keypoint_world(name),
            KeypointRef::Rigid { body, name } => {
                let b = self
                    .rigid_bodies
                    .get(body)
                    .ok_or_else(|| SceneError::UnknownReference(body.clone()))?;
                let local = b
                    .body
                    .keypoints
                    .get(name)
                    .ok_or_else(|| SceneError::UnknownKeypoint(name.clone()))?;
                Ok(b.pose.transform_point(*local))
            }
        }
    }

    /// Applies `g` to every world-frame quantity in the scene.
    pub fn transformed(&self, g: &Pose) -> SceneState {
        let mut s = self.clone();
        for o in s.objects.values_mut() {
            o.base_pose = compose(g, &o.base_pose);
        }
        for b in s.rigid_bodies.values_mut() {
            b.pose = compose(g, &b.pose);
        }
        s.end_effector.pose = compose(g, &s.end_effector.pose);
        s
    }
}

pub fn keypoint_world(scene: &SceneState, r: &KeypointRef) -> Result<Vec3, SceneError> {
    scene.keypoint_world(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessCriterion {
    ArticulatedOpen,
    ArticulatedClosed,
    DistanceArticulatedRigidbody,
    DistanceGripperRigidbody,
    DistanceGripperArticulated,
}

impl SuccessCriterion {
    pub const ALL: [SuccessCriterion; 5] = [
        SuccessCriterion::ArticulatedOpen,
        SuccessCriterion::ArticulatedClosed,
        SuccessCriterion::DistanceArticulatedRigidbody,
        SuccessCriterion::DistanceGripperRigidbody,
        SuccessCriterion::DistanceGripperArticulated,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SuccessCriterion::ArticulatedOpen => "articulated_open",
            SuccessCriterion::ArticulatedClosed => "articulated_closed",
            SuccessCriterion::DistanceArticulatedRigidbody => "distance_articulated_rigidbody",
            SuccessCriterion::DistanceGripperRigidbody => "distance_gripper_rigidbody",
            SuccessCriterion::DistanceGripperArticulated => "distance_gripper_articulated",
        }
    }
}

impl fmt::Display for SuccessCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SuccessCriterion {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        SuccessCriterion::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessThresholds {
    /// `articulated_open` passes at or above this joint fraction.
    pub open_fraction: f64,
    /// `articulated_closed` passes at or below this joint fraction.
    pub closed_fraction: f64,
    /// `distance_*` criteria pass at or below this distance, meters.
    pub distance: f64,
}

impl Default for SuccessThresholds {
    fn default() -> Self {
        SuccessThresholds {
            open_fraction: 0.85,
            closed_fraction: 0.10,
            distance: 0.05,
        }
    }
}

pub fn evaluate_success(scene: &SceneState, criterion: SuccessCriterion) -> Result<(bool, f64), SceneError> {
    evaluate_success_with(scene, criterion, &SuccessThresholds::default())
}

pub fn evaluate_success_with(
    scene: &SceneState,
    criterion: SuccessCriterion,
    th: &SuccessThresholds,
) -> Result<(bool, f64), SceneError> {
    use SuccessCriterion::*;
    match criterion {
        ArticulatedOpen => {
            let f = scene.sole_object()?.1.joint_fraction();
            Ok((f >= th.open_fraction, f))
        }
        ArticulatedClosed => {
            let f = scene.sole_object()?.1.joint_fraction();
            Ok((f <= th.closed_fraction, f))
        }
        DistanceArticulatedRigidbody => {
            let (_, obj) = scene.sole_object()?;
            let name = if obj.asset.keypoints.contains_key(OBJECT_INSIDE_BASE) {
                OBJECT_INSIDE_BASE
            } else {
                OBJECT_HEAD
            };
            let a = obj.keypoint_world(name)?;
            let b = scene.sole_rigid_body()?.1.pose.translation;
            let d = a.distance(b);
            Ok((d <= th.distance, d))
        }
        DistanceGripperRigidbody => {
            let b = scene.sole_rigid_body()?.1.pose.translation;
            let d = scene.end_effector.head_world().distance(b);
            Ok((d <= th.distance, d))
        }
        DistanceGripperArticulated => {
            let a = scene.sole_object()?.1.keypoint_world(OBJECT_HEAD)?;
            let d = scene.end_effector.head_world().distance(a);
            Ok((d <= th.distance, d))
        }
    }
}

// ---------------------------------------------------------------------------
// Asset manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct AssetLibrary {
    articulated: BTreeMap<String, Vec<Arc<ArticulatedObject>>>,
    rigid: BTreeMap<String, Arc<RigidObject>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    #[serde(default)]
    articulated: Vec<RawArticulated>,
    #[serde(default)]
    rigid: Vec<RawRigid>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArticulated {
    class: String,
    instance: String,
    #[serde(default)]
    description: String,
    #[serde(default = "identity_pose")]
    default_pose: Pose,
    joint: OneOrMany<RawJoint>,
    links: RawLinks,
    #[serde(default)]
    keypoints: BTreeMap<String, RawKeypoint>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJoint {
    kind: String,
    #[serde(default)]
    axis: Option<Vec3>,
    #[serde(default = "identity_pose")]
    origin: Pose,
    #[serde(default)]
    limits: Option<[f64; 2]>,
    #[serde(default)]
    rest: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLinks {
    base: Vec<RawShape>,
    child: Vec<RawShape>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawShape {
    #[serde(rename = "box", default)]
    cuboid: Option<Vec3>,
    #[serde(default)]
    cylinder: Option<[f64; 2]>,
    #[serde(default = "identity_pose")]
    pose: Pose,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKeypoint {
    link: LinkId,
    position: Vec3,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRigid {
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default = "identity_pose")]
    default_pose: Pose,
    shapes: Vec<RawShape>,
    #[serde(default)]
    keypoints: BTreeMap<String, Vec3>,
}

fn identity_pose() -> Pose {
    Pose::IDENTITY
}

fn violation(asset: &str, reason: impl Into<String>) -> SceneError {
    SceneError::InvariantViolation {
        asset: asset.to_string(),
        reason: reason.into(),
    }
}

fn convert_shape(asset: &str, raw: &RawShape) -> Result<Shape, SceneError> {
    let shape = match (raw.cuboid, raw.cylinder) {
        (Some(h), None) => Shape::cuboid(h, raw.pose),
        (None, Some([r, hh])) => Shape::cylinder(r, hh, raw.pose),
        _ => return Err(violation(asset, "a shape must be exactly one of `box` or `cylinder`")),
    };
    if shape.dimensions().iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(violation(asset, "shape dimensions must be positive"));
    }
    Ok(shape)
}

fn convert_joint(asset: &str, raw: OneOrMany<RawJoint>) -> Result<Joint, SceneError> {
    let joints = match raw {
        OneOrMany::One(j) => vec![j],
        OneOrMany::Many(js) => js,
    };
    let mut unfixed = Vec::new();
    for j in joints {
        match j.kind.as_str() {
            "fixed" => {}
            "prismatic" | "revolute" => unfixed.push(j),
            other => return Err(violation(asset, format!("unknown joint kind `{other}`"))),
        }
    }
    if unfixed.len() != 1 {
        return Err(violation(
            asset,
            format!("expected exactly one unfixed joint, found {}", unfixed.len()),
        ));
    }
    let j = unfixed.pop().expect("one joint");
    let kind = if j.kind == "prismatic" {
        JointKind::Prismatic
    } else {
        JointKind::Revolute
    };
    let axis = j
        .axis
        .ok_or_else(|| violation(asset, "joint axis missing"))?
        .normalized()
        .ok_or_else(|| violation(asset, "joint axis has zero length"))?;
    let [lo, hi] = j.limits.ok_or_else(|| violation(asset, "joint limits missing"))?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(violation(asset, format!("joint limits [{lo}, {hi}] must satisfy lo < hi")));
    }
    let rest = j.rest.unwrap_or(lo);
    if !(lo..=hi).contains(&rest) {
        return Err(violation(asset, format!("rest value {rest} outside [{lo}, {hi}]")));
    }
    Ok(Joint {
        kind,
        axis,
        origin: j.origin,
        limits: (lo, hi),
        rest_value: rest,
    })
}

impl AssetLibrary {
    pub fn from_yaml(text: &str) -> Result<Self, SceneError> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        let raw: Option<RawManifest> =
            serde_yaml::from_str(text).map_err(|e| SceneError::ManifestParse(e.to_string()))?;
        let raw = match raw {
            Some(r) => r,
            None => return Ok(Self::default()),
        };
        let mut lib = AssetLibrary::default();
        for a in raw.articulated {
            let obj = Self::convert_articulated(a)?;
            if lib.instance(&obj.instance_id).is_some() {
                return Err(violation(&obj.instance_id, "duplicate instance id"));
            }
            lib.articulated
                .entry(obj.class_name.clone())
                .or_default()
                .push(Arc::new(obj));
        }
        for r in raw.rigid {
            let name = r.name.clone();
            if r.shapes.is_empty() {
                return Err(violation(&name, "rigid body needs at least one shape"));
            }
            let shapes = r
                .shapes
                .iter()
                .map(|s| convert_shape(&name, s))
                .collect::<Result<Vec<_>, _>>()?;
            let body = RigidObject {
                name: name.clone(),
                shapes,
                keypoints: r.keypoints,
                description: r.description,
                default_pose: r.default_pose,
            };
            if lib.rigid.insert(name.clone(), Arc::new(body)).is_some() {
                return Err(violation(&name, "duplicate rigid body name"));
            }
        }
        Ok(lib)
    }

    fn convert_articulated(a: RawArticulated) -> Result<ArticulatedObject, SceneError> {
        let id = a.instance.clone();
        let joint = convert_joint(&id, a.joint)?;
        let base_link = a
            .links
            .base
            .iter()
            .map(|s| convert_shape(&id, s))
            .collect::<Result<Vec<_>, _>>()?;
        let child_link = a
            .links
            .child
            .iter()
            .map(|s| convert_shape(&id, s))
            .collect::<Result<Vec<_>, _>>()?;
        if base_link.is_empty() || child_link.is_empty() {
            return Err(violation(&id, "both links need at least one shape"));
        }
        let mut keypoints = BTreeMap::new();
        for (name, kp) in a.keypoints {
            if !OBJECT_KEYPOINTS.contains(&name.as_str()) {
                return Err(violation(&id, format!("keypoint `{name}` is not in the vocabulary")));
            }
            keypoints.insert(
                name,
                Keypoint {
                    link: kp.link,
                    position: kp.position,
                },
            );
        }
        Ok(ArticulatedObject {
            class_name: a.class,
            instance_id: id,
            base_link,
            child_link,
            joint,
            keypoints,
            description: a.description,
            default_pose: a.default_pose,
        })
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path).map_err(|e| SceneError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_yaml(&text)
    }

    /// The manifest shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_yaml(BUNDLED_MANIFEST).expect("bundled manifest is valid")
    }

    pub fn is_empty(&self) -> bool {
        self.articulated.is_empty() && self.rigid.is_empty()
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.articulated.keys().map(String::as_str)
    }

    pub fn instances(&self, class: &str) -> &[Arc<ArticulatedObject>] {
        self.articulated.get(class).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn instance(&self, id: &str) -> Option<&Arc<ArticulatedObject>> {
        self.articulated.values().flatten().find(|o| o.instance_id == id)
    }

    pub fn rigid(&self, name: &str) -> Option<&Arc<RigidObject>> {
        self.rigid.get(name)
    }

    pub fn rigid_bodies(&self) -> impl Iterator<Item = &Arc<RigidObject>> {
        self.rigid.values()
    }

    pub fn articulated(&self) -> impl Iterator<Item = &Arc<ArticulatedObject>> {
        self.articulated.values().flatten()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.articulated.contains_key(name) || self.rigid.contains_key(name)
    }
}

pub fn load_asset_library(manifest_path: &Path) -> Result<AssetLibrary, SceneError> {
    AssetLibrary::load(manifest_path)
}

pub const BUNDLED_MANIFEST: &str = include_str!("../../../assets/manifest.yaml");

// ---------------------------------------------------------------------------
// Scene files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    #[serde(default)]
    pub objects: BTreeMap<String, SceneObjectEntry>,
    #[serde(default)]
    pub rigid_bodies: BTreeMap<String, SceneRigidEntry>,
    #[serde(default)]
    pub end_effector: Option<SceneEndEffectorEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SceneObjectEntry {
    /// Instance id, or a class name (first instance).
    pub asset: String,
    #[serde(default)]
    pub base_pose: Option<Pose>,
    #[serde(default)]
    pub joint_value: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SceneRigidEntry {
    pub asset: String,
    #[serde(default)]
    pub pose: Option<Pose>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SceneEndEffectorEntry {
    pub pose: Pose,
    #[serde(default = "default_width")]
    pub width: f64,
}

fn default_width() -> f64 {
    GRIPPER_MAX_WIDTH
}

impl SceneFile {
    pub fn parse(text: &str) -> Result<Self, SceneError> {
        serde_yaml::from_str(text).map_err(|e| SceneError::SceneParse(e.to_string()))
    }

    pub fn build(&self, lib: &AssetLibrary) -> Result<SceneState, SceneError> {
        let mut scene = SceneState::default();
        if let Some(ee) = &self.end_effector {
            if !(0.0..=GRIPPER_MAX_WIDTH).contains(&ee.width) {
                return Err(SceneError::SceneParse(format!(
                    "gripper width {} outside [0, {GRIPPER_MAX_WIDTH}]",
                    ee.width
                )));
            }
            scene.end_effector.pose = ee.pose;
            scene.end_effector.width = ee.width;
        }
        for (name, e) in &self.objects {
            let asset = lib
                .instance(&e.asset)
                .or_else(|| lib.instances(&e.asset).first())
                .ok_or_else(|| SceneError::UnknownAsset(e.asset.clone()))?
                .clone();
            let value = e.joint_value.unwrap_or(asset.joint.rest_value);
            if !asset.joint.within_limits(value) {
                let (lo, hi) = asset.joint.limits;
                return Err(SceneError::JointLimit { value, lo, hi });
            }
            let pose = e.base_pose.unwrap_or(asset.default_pose);
            scene.add_object(name, asset, pose, value);
        }
        for (name, e) in &self.rigid_bodies {
            let body = lib
                .rigid(&e.asset)
                .ok_or_else(|| SceneError::UnknownAsset(e.asset.clone()))?
                .clone();
            let pose = e.pose.unwrap_or(body.default_pose);
            scene.add_rigid_body(name, body, pose);
        }
        Ok(scene)
    }

    pub fn load(path: &Path, lib: &AssetLibrary) -> Result<SceneState, SceneError> {
        let text = std::fs::read_to_string(path).map_err(|e| SceneError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)?.build(lib)
    }
}
