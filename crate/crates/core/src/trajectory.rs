//! Waypoint plans around the actuation pose and their kinematic execution.
//!
//! The end effector teleports along interpolated waypoints. A grasped
//! articulated keypoint drags its joint to the limit-clamped value closest to
//! the gripper's held grasp point; a grasped rigid body follows the gripper
//! with a fixed relative pose.

use std::f64::consts::PI;

use thiserror::Error;

use crate::config::{Constraint, MotionMode, SolverConfig};
use crate::geometry::{interpolate_pose, rotate_about_axis, GeometryError, Pose, Vec3};
use crate::kpam::{solve_actuation_pose, target_object, SolveError, SolveOptions};
use crate::scene::{
    evaluate_success, joint_axis_world, AttachTarget, Attachment, JointKind, KeypointRef, SceneError,
    SceneState, SuccessCriterion, GRIPPER_MAX_WIDTH, OBJECT_HEAD, TOOL_HEAD,
};

/// Largest tool-head to target distance at which a grasp binds, meters.
pub const D_BIND: f64 = 0.02;
/// Largest grasp-point to keypoint gap tolerated while dragging a joint.
pub const D_FOLLOW: f64 = 0.03;
pub const DEFAULT_STEPS_PER_SEGMENT: usize = 10;
/// Arc length between waypoints generated for a `rotate` motion, radians.
pub const ROTATE_SUBSTEP: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("nothing to grasp within {D_BIND} m (closest at {0:.4} m)")]
    NoBind(f64),
    #[error("gripper already holds something")]
    AlreadyAttached,
    #[error("unknown motion `{0}`")]
    UnknownMotion(String),
    #[error("plan has no actuation waypoint")]
    NoActuation,
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GripperCommand {
    Open,
    Close,
    Hold,
}

impl GripperCommand {
    pub fn as_str(&self) -> &'static str {
        match self {
            GripperCommand::Open => "open",
            GripperCommand::Close => "close",
            GripperCommand::Hold => "hold",
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            GripperCommand::Open => 0,
            GripperCommand::Close => 1,
            GripperCommand::Hold => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(GripperCommand::Open),
            1 => Some(GripperCommand::Close),
            2 => Some(GripperCommand::Hold),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaypointTag {
    Pre,
    Actuation,
    Post,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub pose: Pose,
    pub gripper: GripperCommand,
    pub tag: WaypointTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionPlan {
    pub waypoints: Vec<Waypoint>,
    pub source_config: SolverConfig,
    /// Keypoint bound by a `close` command, for grasp-style tasks.
    pub grasp_target: Option<KeypointRef>,
    /// Evaluated on the final state of an execution.
    pub criteria: Vec<SuccessCriterion>,
}

impl MotionPlan {
    pub fn actuation_index(&self) -> Option<usize> {
        self.waypoints.iter().position(|w| w.tag == WaypointTag::Actuation)
    }

    pub fn with_criteria(mut self, criteria: Vec<SuccessCriterion>) -> Self {
        self.criteria = criteria;
        self
    }
}

/// The keypoint a config's gripper should close on: the contact target when
/// the tool head meets an articulated object's handle.
pub fn grasp_keypoint(config: &SolverConfig, scene: &SceneState) -> Result<Option<KeypointRef>, SceneError> {
    match config.point2point() {
        Some(Constraint::PointToPoint {
            keypoint_name,
            target_keypoint_name,
            ..
        }) if keypoint_name == TOOL_HEAD && target_keypoint_name == OBJECT_HEAD => {
            let object = target_object(config, scene)?;
            Ok(Some(KeypointRef::object(object, target_keypoint_name)))
        }
        _ => Ok(None),
    }
}

/// Poses produced by one motion starting at `from`, in travel order.
fn motion_poses(mode: MotionMode, value: f64, from: &Pose, axis: Option<(Vec3, Vec3)>) -> Result<Vec<Pose>, TrajectoryError> {
    let offset = match mode {
        MotionMode::TranslateX => Vec3::X,
        MotionMode::TranslateY => Vec3::Y,
        MotionMode::TranslateZ => Vec3::Z,
        MotionMode::Rotate => {
            let (point, dir) = axis.ok_or_else(|| TrajectoryError::UnknownMotion("rotate without a target joint".into()))?;
            let n = ((value.abs() / ROTATE_SUBSTEP).ceil() as usize).max(1);
            let mut out = Vec::with_capacity(n);
            for k in 1..=n {
                let g = rotate_about_axis(dir, point, value * k as f64 / n as f64)?;
                out.push(g * *from);
            }
            return Ok(out);
        }
    };
    let mut p = *from;
    p.translation += offset * value;
    Ok(vec![p])
}

/// Builds the waypoint plan around an actuation pose. Pre motions are
/// applied from the actuation pose outward, last motion first; post motions
/// are applied forward. Translations are along the manipulator base axes,
/// rotations about the target object's joint axis.
pub fn expand_motions(config: &SolverConfig, actuation: &Pose, scene: &SceneState) -> Result<MotionPlan, TrajectoryError> {
    let axis = match target_object(config, scene) {
        Ok(name) => {
            let o = scene.object(name)?;
            Some(joint_axis_world(&o.asset, &o.base_pose))
        }
        Err(_) => None,
    };
    let grasp_target = grasp_keypoint(config, scene).ok().flatten();
    let graspable = grasp_target.is_some();
    let hold_or = |c: GripperCommand| if graspable { c } else { GripperCommand::Hold };

    let mut outward = Vec::new();
    let mut cur = *actuation;
    for m in config.pre_actuation_motions.iter().rev() {
        let (mode, value) = m.resolve();
        let poses = motion_poses(mode, value, &cur, axis)?;
        cur = *poses.last().expect("motions yield poses");
        outward.extend(poses);
    }
    let mut waypoints: Vec<Waypoint> = outward
        .into_iter()
        .rev()
        .map(|pose| Waypoint {
            pose,
            gripper: hold_or(GripperCommand::Open),
            tag: WaypointTag::Pre,
        })
        .collect();
    waypoints.push(Waypoint {
        pose: *actuation,
        gripper: hold_or(GripperCommand::Close),
        tag: WaypointTag::Actuation,
    });

    let mut cur = *actuation;
    for m in &config.post_actuation_motions {
        let (mode, value) = m.resolve();
        for pose in motion_poses(mode, value, &cur, axis)? {
            cur = pose;
            waypoints.push(Waypoint {
                pose,
                gripper: GripperCommand::Hold,
                tag: WaypointTag::Post,
            });
        }
    }
    if graspable && waypoints.len() > 1 {
        let last = waypoints.last_mut().expect("nonempty");
        if last.tag == WaypointTag::Post {
            last.gripper = GripperCommand::Open;
        }
    }
    Ok(MotionPlan {
        waypoints,
        source_config: config.clone(),
        grasp_target,
        criteria: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseWaypoint {
    pub pose: Pose,
    /// Index of the waypoint this step moves toward.
    pub waypoint: usize,
    /// Progress through the segment ending at `waypoint`, in (0, 1].
    pub fraction: f64,
}

/// Linear translation and slerp rotation between consecutive waypoints.
/// Segment endpoints are reproduced exactly.
pub fn interpolate(plan: &MotionPlan, steps_per_segment: usize) -> Vec<DenseWaypoint> {
    let n = steps_per_segment.max(1);
    let mut out = Vec::new();
    let Some(first) = plan.waypoints.first() else {
        return out;
    };
    out.push(DenseWaypoint {
        pose: first.pose,
        waypoint: 0,
        fraction: 1.0,
    });
    for (i, pair) in plan.waypoints.windows(2).enumerate() {
        for s in 1..=n {
            let t = s as f64 / n as f64;
            let pose = if s == n {
                pair[1].pose
            } else {
                interpolate_pose(&pair[0].pose, &pair[1].pose, t)
            };
            out.push(DenseWaypoint {
                pose,
                waypoint: i + 1,
                fraction: t,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    /// A dragged joint hit one of its limits.
    Clamped,
    /// The grasped keypoint fell more than `D_FOLLOW` behind the gripper.
    DetachedEarly,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Completed => "completed",
            Outcome::Clamped => "clamped",
            Outcome::DetachedEarly => "detached_early",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub scene: SceneState,
    pub waypoint: usize,
    pub fraction: f64,
    /// Gripper command issued at this step (`hold` between waypoints).
    pub command: GripperCommand,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionTrace {
    pub steps: Vec<TraceStep>,
    pub outcome: Outcome,
    pub criteria_results: Vec<(SuccessCriterion, bool, f64)>,
}

impl ExecutionTrace {
    pub fn empty() -> Self {
        ExecutionTrace {
            steps: Vec::new(),
            outcome: Outcome::Completed,
            criteria_results: Vec::new(),
        }
    }

    pub fn final_scene(&self) -> Option<&SceneState> {
        self.steps.last().map(|s| &s.scene)
    }

    pub fn all_passed(&self) -> bool {
        self.criteria_results.iter().all(|(_, p, _)| *p)
    }
}

/// Attaches the gripper to a keypoint or rigid body near the tool head.
pub fn grasp(scene: &SceneState, target: &AttachTarget) -> Result<SceneState, TrajectoryError> {
    if scene.attachment.is_some() {
        return Err(TrajectoryError::AlreadyAttached);
    }
    let head = scene.end_effector.head_world();
    let ee = scene.end_effector.pose;
    let (target_point, grasp_offset, width) = match target {
        AttachTarget::Keypoint(r) => {
            let p = scene.keypoint_world(r)?;
            (p, Pose::from_translation(ee.inverse().transform_point(p)), 0.0)
        }
        AttachTarget::RigidBody(name) => {
            let b = scene
                .rigid_bodies
                .get(name)
                .ok_or_else(|| SceneError::UnknownReference(name.clone()))?;
            (
                b.pose.translation,
                ee.inverse() * b.pose,
                b.body.min_width().min(GRIPPER_MAX_WIDTH),
            )
        }
    };
    let d = head.distance(target_point);
    if d > D_BIND {
        return Err(TrajectoryError::NoBind(d));
    }
    let mut out = scene.clone();
    out.attachment = Some(Attachment {
        target: target.clone(),
        grasp_offset,
    });
    out.end_effector.width = width;
    Ok(out)
}

/// Releases whatever the gripper holds and opens it.
pub fn ungrasp(scene: &SceneState) -> SceneState {
    let mut out = scene.clone();
    out.attachment = None;
    out.end_effector.width = GRIPPER_MAX_WIDTH;
    out
}

/// Joint value minimizing the distance from the grasped keypoint to `goal`,
/// before clamping. Revolute joints pick the angle nearest the current one.
fn follow_value(scene: &SceneState, object: &str, keypoint: &str, goal: Vec3) -> Result<f64, SceneError> {
    let o = scene.object(object)?;
    let kp = o.keypoint_world(keypoint)?;
    let (p, u) = joint_axis_world(&o.asset, &o.base_pose);
    Ok(match o.asset.joint.kind {
        JointKind::Prismatic => o.joint_value + u.dot(goal - kp),
        JointKind::Revolute => {
            let radial = |x: Vec3| {
                let d = x - p;
                d - u * d.dot(u)
            };
            let (a, b) = (radial(kp), radial(goal));
            if a.norm() < 1e-12 || b.norm() < 1e-12 {
                o.joint_value
            } else {
                let delta = u.dot(a.cross(b)).atan2(a.dot(b));
                o.joint_value + delta.clamp(-PI, PI)
            }
        }
    })
}

struct Flags {
    clamped: bool,
    detached: bool,
}

/// Moves attached things along with the end effector.
fn follow(state: &mut SceneState, flags: &mut Flags) -> Result<(), SceneError> {
    let Some(att) = state.attachment.clone() else {
        return Ok(());
    };
    match &att.target {
        AttachTarget::RigidBody(name) => {
            let pose = state.end_effector.pose * att.grasp_offset;
            if let Some(b) = state.rigid_bodies.get_mut(name) {
                b.pose = pose;
            }
        }
        AttachTarget::Keypoint(KeypointRef::Object { object, name }) => {
            let goal = state.end_effector.pose.transform_point(att.grasp_offset.translation);
            let raw = follow_value(state, object, name, goal)?;
            let o = state
                .objects
                .get_mut(object)
                .ok_or_else(|| SceneError::UnknownReference(object.clone()))?;
            let v = o.asset.joint.clamp(raw);
            if (v - raw).abs() > 1e-9 {
                flags.clamped = true;
            }
            o.joint_value = v;
            let gap = o.keypoint_world(name)?.distance(goal);
            if gap > D_FOLLOW {
                flags.detached = true;
                state.attachment = None;
            }
        }
        AttachTarget::Keypoint(_) => {}
    }
    Ok(())
}

fn apply_command(state: &mut SceneState, cmd: GripperCommand, plan: &MotionPlan) {
    match cmd {
        GripperCommand::Open => *state = ungrasp(state),
        GripperCommand::Close => {
            if let Some(target) = &plan.grasp_target {
                if let Ok(s) = grasp(state, &AttachTarget::Keypoint(target.clone())) {
                    *state = s;
                }
            }
        }
        GripperCommand::Hold => {}
    }
}

fn evaluate_all(scene: &SceneState, criteria: &[SuccessCriterion]) -> Vec<(SuccessCriterion, bool, f64)> {
    criteria
        .iter()
        .map(|c| match evaluate_success(scene, *c) {
            Ok((p, m)) => (*c, p, m),
            Err(_) => (*c, false, f64::NAN),
        })
        .collect()
}

/// Runs a plan kinematically. The trace holds the start state plus
/// `steps_per_segment` states per segment.
pub fn execute(plan: &MotionPlan, scene: &SceneState, steps_per_segment: usize) -> ExecutionTrace {
    let dense = interpolate(plan, steps_per_segment);
    let mut state = scene.clone();
    let mut flags = Flags {
        clamped: false,
        detached: false,
    };
    let mut steps = Vec::with_capacity(dense.len());
    for d in &dense {
        state.end_effector.pose = d.pose;
        let _ = follow(&mut state, &mut flags);
        let command = if d.fraction >= 1.0 {
            plan.waypoints[d.waypoint].gripper
        } else {
            GripperCommand::Hold
        };
        apply_command(&mut state, command, plan);
        steps.push(TraceStep {
            scene: state.clone(),
            waypoint: d.waypoint,
            fraction: d.fraction,
            command,
        });
    }
    let outcome = if flags.clamped {
        Outcome::Clamped
    } else if flags.detached {
        Outcome::DetachedEarly
    } else {
        Outcome::Completed
    };
    ExecutionTrace {
        criteria_results: evaluate_all(&state, &plan.criteria),
        steps,
        outcome,
    }
}

// ---------------------------------------------------------------------------
// Long-horizon chains
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum ChainStep {
    /// Solve the config on the current state, then expand and execute it.
    Solve {
        name: String,
        config: SolverConfig,
        criteria: Vec<SuccessCriterion>,
    },
    /// Execute a ready-made plan.
    Plan(MotionPlan),
    /// Reach the target in a straight line, then close on it.
    Grasp(AttachTarget),
    Ungrasp,
}

impl ChainStep {
    pub fn name(&self) -> String {
        match self {
            ChainStep::Solve { name, .. } => name.clone(),
            ChainStep::Plan(p) => p.source_config.task_name.clone(),
            ChainStep::Grasp(_) => "grasp".into(),
            ChainStep::Ungrasp => "ungrasp".into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainCause {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("chain broke at step {index}: {cause}")]
pub struct ChainBreak {
    /// 1-based position of the failing step.
    pub index: usize,
    pub cause: ChainCause,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubtaskOutcome {
    pub name: String,
    pub outcome: Outcome,
    pub criteria_results: Vec<(SuccessCriterion, bool, f64)>,
}

impl SubtaskOutcome {
    pub fn passed(&self) -> bool {
        self.criteria_results.iter().all(|(_, p, _)| *p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    pub trace: ExecutionTrace,
    pub subtasks: Vec<SubtaskOutcome>,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOptions {
    pub solve: SolveOptions,
    pub steps_per_segment: usize,
}

impl Default for ChainOptions {
    fn default() -> Self {
        ChainOptions {
            solve: SolveOptions::default(),
            steps_per_segment: DEFAULT_STEPS_PER_SEGMENT,
        }
    }
}

fn reach_and_grasp(
    state: &SceneState,
    target: &AttachTarget,
    steps_per_segment: usize,
) -> Result<(Vec<TraceStep>, SceneState), TrajectoryError> {
    let goal = match target {
        AttachTarget::Keypoint(r) => state.keypoint_world(r)?,
        AttachTarget::RigidBody(name) => {
            state
                .rigid_bodies
                .get(name)
                .ok_or_else(|| SceneError::UnknownReference(name.clone()))?
                .pose
                .translation
        }
    };
    let start = state.end_effector.pose;
    let mut end = start;
    end.translation += goal - state.end_effector.head_world();
    let n = steps_per_segment.max(1);
    let mut s = state.clone();
    let mut steps = Vec::with_capacity(n);
    for k in 1..=n {
        let t = k as f64 / n as f64;
        s.end_effector.pose = if k == n { end } else { interpolate_pose(&start, &end, t) };
        let command = if k == n { GripperCommand::Close } else { GripperCommand::Hold };
        if k == n {
            s = grasp(&s, target)?;
        }
        steps.push(TraceStep {
            scene: s.clone(),
            waypoint: 0,
            fraction: t,
            command,
        });
    }
    Ok((steps, s))
}

/// Executes sub-tasks in order on the evolving scene. Criteria of every
/// sub-task are evaluated right after it finishes; overall success is their
/// conjunction.
pub fn chain_subtasks(chain: &[ChainStep], scene: &SceneState, opts: &ChainOptions) -> Result<ChainTrace, ChainBreak> {
    let mut state = scene.clone();
    let mut all = ExecutionTrace::empty();
    let mut subtasks = Vec::with_capacity(chain.len());
    let mut outcome = Outcome::Completed;
    for (i, step) in chain.iter().enumerate() {
        let brk = |cause: ChainCause| ChainBreak { index: i + 1, cause };
        let (trace_steps, sub_outcome, results) = match step {
            ChainStep::Solve { config, criteria, .. } => {
                let sol = solve_actuation_pose(config, &state, &opts.solve).map_err(|e| brk(e.into()))?;
                let plan = expand_motions(config, &sol.pose, &state)
                    .map_err(|e| brk(e.into()))?
                    .with_criteria(criteria.clone());
                let t = execute(&plan, &state, opts.steps_per_segment);
                (t.steps, t.outcome, t.criteria_results)
            }
            ChainStep::Plan(plan) => {
                let t = execute(plan, &state, opts.steps_per_segment);
                (t.steps, t.outcome, t.criteria_results)
            }
            ChainStep::Grasp(target) => {
                let (steps, s) = reach_and_grasp(&state, target, opts.steps_per_segment).map_err(|e| brk(e.into()))?;
                let criterion = match target {
                    AttachTarget::RigidBody(_) => SuccessCriterion::DistanceGripperRigidbody,
                    AttachTarget::Keypoint(_) => SuccessCriterion::DistanceGripperArticulated,
                };
                (steps, Outcome::Completed, evaluate_all(&s, &[criterion]))
            }
            ChainStep::Ungrasp => {
                let s = ungrasp(&state);
                let steps = vec![TraceStep {
                    scene: s,
                    waypoint: 0,
                    fraction: 1.0,
                    command: GripperCommand::Open,
                }];
                (steps, Outcome::Completed, Vec::new())
            }
        };
        if let Some(last) = trace_steps.last() {
            state = last.scene.clone();
        }
        let results = if matches!(step, ChainStep::Ungrasp) {
            vec![]
        } else {
            results
        };
        if sub_outcome != Outcome::Completed && outcome == Outcome::Completed {
            outcome = sub_outcome;
        }
        let released = matches!(step, ChainStep::Ungrasp) && state.attachment.is_none();
        subtasks.push(SubtaskOutcome {
            name: step.name(),
            outcome: sub_outcome,
            criteria_results: results,
        });
        if matches!(step, ChainStep::Ungrasp) && !released {
            return Err(brk(TrajectoryError::AlreadyAttached.into()));
        }
        all.steps.extend(trace_steps);
        all.criteria_results.extend(subtasks.last().expect("pushed").criteria_results.clone());
    }
    all.outcome = outcome;
    let success = subtasks.iter().all(SubtaskOutcome::passed);
    Ok(ChainTrace {
        trace: all,
        subtasks,
        success,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{AxisFrame, AxisRelation, Motion, NamedMotion};
    use crate::geometry::UnitQuat;
    use crate::scene::{AssetLibrary, TOOL_SIDE, TOOL_TAIL};

    fn drawer_scene(value: f64) -> SceneState {
        let lib = AssetLibrary::bundled();
        let d = lib.instances("drawer")[0].clone();
        let mut s = SceneState::default();
        let pose = d.default_pose;
        s.add_object("drawer", d, pose, value);
        s
    }

    fn drawer_config(pre: Vec<Motion>, post: Vec<Motion>) -> SolverConfig {
        SolverConfig {
            task_name: "CloseDrawer".into(),
            category_name: "Articulated".into(),
            tool_keypoint_name_list: vec![TOOL_HEAD.into(), TOOL_TAIL.into(), TOOL_SIDE.into()],
            object_keypoint_name_list: vec![OBJECT_HEAD.into()],
            constraint_list: vec![
                Constraint::PointToPoint {
                    keypoint_name: TOOL_HEAD.into(),
                    target_keypoint_name: OBJECT_HEAD.into(),
                    tolerance: 1e-4,
                },
                Constraint::FrameAxis {
                    relation: AxisRelation::Parallel,
                    axis_from_keypoint_name: TOOL_HEAD.into(),
                    axis_to_keypoint_name: TOOL_SIDE.into(),
                    target_axis: Vec3::X,
                    target_axis_frame: AxisFrame::Object,
                    tolerance: 0.01,
                    target_inner_product: 1.0,
                },
                Constraint::FrameAxis {
                    relation: AxisRelation::Orthogonal,
                    axis_from_keypoint_name: TOOL_HEAD.into(),
                    axis_to_keypoint_name: TOOL_TAIL.into(),
                    target_axis: Vec3::Z,
                    target_axis_frame: AxisFrame::Object,
                    tolerance: 0.01,
                    target_inner_product: 0.0,
                },
            ],
            pre_actuation_motions: pre,
            post_actuation_motions: post,
        }
    }

    fn tx(v: f64) -> Motion {
        Motion::structured(MotionMode::TranslateX, v)
    }

    fn tz(v: f64) -> Motion {
        Motion::structured(MotionMode::TranslateZ, v)
    }

    fn actuation(scene: &SceneState, c: &SolverConfig) -> Pose {
        solve_actuation_pose(c, scene, &SolveOptions::default()).unwrap().pose
    }

    #[test]
    fn pre_motions_expand_outward() {
        let s = drawer_scene(0.1);
        let c = drawer_config(vec![tx(-0.1), tz(-0.15)], vec![tx(0.1)]);
        let a = actuation(&s, &c);
        let plan = expand_motions(&c, &a, &s).unwrap();
        assert_eq!(plan.waypoints.len(), 4);
        let first = plan.waypoints[0].pose.translation - a.translation;
        assert!((first - Vec3::new(-0.1, 0.0, -0.15)).norm() < 1e-12);
        let second = plan.waypoints[1].pose.translation - a.translation;
        assert!((second - Vec3::new(0.0, 0.0, -0.15)).norm() < 1e-12);
        assert_eq!(plan.actuation_index(), Some(2));
        assert_eq!(plan.waypoints[2].gripper, GripperCommand::Close);
        assert_eq!(plan.waypoints[3].gripper, GripperCommand::Open);
        assert_eq!(plan.waypoints[0].gripper, GripperCommand::Open);
    }

    #[test]
    fn empty_motions_give_single_waypoint() {
        let s = drawer_scene(0.1);
        let c = drawer_config(vec![], vec![]);
        let a = actuation(&s, &c);
        let plan = expand_motions(&c, &a, &s).unwrap();
        assert_eq!(plan.waypoints.len(), 1);
        assert_eq!(plan.waypoints[0].pose, a);
        assert_eq!(plan.waypoints[0].tag, WaypointTag::Actuation);
    }

    #[test]
    fn named_post_motion_moves_forward() {
        let s = drawer_scene(0.1);
        let c = drawer_config(vec![], vec![Motion::Named(NamedMotion::Forward)]);
        let a = actuation(&s, &c);
        let plan = expand_motions(&c, &a, &s).unwrap();
        let d = plan.waypoints[1].pose.translation - a.translation;
        assert!((d - Vec3::new(0.15, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rotate_follows_the_joint_arc() {
        let lib = AssetLibrary::bundled();
        let bx = lib.instances("box_rotate")[0].clone();
        let mut s = SceneState::default();
        s.add_object("box", bx.clone(), bx.default_pose, 0.2);
        let mut c = drawer_config(vec![], vec![Motion::structured(MotionMode::Rotate, 0.45)]);
        c.constraint_list.truncate(1);
        let a = actuation(&s, &c);
        let plan = expand_motions(&c, &a, &s).unwrap();
        // 0.45 rad in steps of at most 0.1 rad
        assert_eq!(plan.waypoints.len(), 1 + 5);
        let (p, u) = joint_axis_world(&bx, &bx.default_pose);
        let dist = |q: Vec3| {
            let d = q - p;
            (d - u * d.dot(u)).norm()
        };
        for w in &plan.waypoints {
            assert!((dist(w.pose.translation) - dist(a.translation)).abs() < 1e-9);
        }
        let t = execute(&plan, &s, 10);
        let v = t.final_scene().unwrap().objects["box"].joint_value;
        assert!((v - 0.65).abs() < 1e-3, "{v}");
        assert_eq!(t.outcome, Outcome::Completed);
    }

    #[test]
    fn interpolation_examples() {
        let mk = |poses: Vec<Pose>| MotionPlan {
            waypoints: poses
                .into_iter()
                .map(|pose| Waypoint {
                    pose,
                    gripper: GripperCommand::Hold,
                    tag: WaypointTag::Post,
                })
                .collect(),
            source_config: SolverConfig::default(),
            grasp_target: None,
            criteria: vec![],
        };
        let plan = mk(vec![Pose::IDENTITY, Pose::translate_x(0.2), Pose::translate_x(0.5)]);
        let d1 = interpolate(&plan, 1);
        let poses: Vec<Pose> = d1.iter().map(|d| d.pose).collect();
        assert_eq!(poses, plan.waypoints.iter().map(|w| w.pose).collect::<Vec<_>>());

        let plan = mk(vec![Pose::IDENTITY, Pose::translate_x(0.2)]);
        let d4 = interpolate(&plan, 4);
        assert_eq!(d4.len(), 5);
        for (k, d) in d4.iter().enumerate() {
            assert!((d.pose.translation.x - 0.05 * k as f64).abs() < 1e-12);
        }

        let plan = mk(vec![Pose::IDENTITY, Pose::rot_z(std::f64::consts::FRAC_PI_2)]);
        let d2 = interpolate(&plan, 2);
        assert!(d2[1].pose.rotation.angle_to(UnitQuat::rot_z(std::f64::consts::FRAC_PI_4)) < 1e-12);
    }

    #[test]
    fn dragging_the_drawer_matches_projection() {
        // world -x is the drawer's opening direction
        let s = drawer_scene(0.02);
        let c = drawer_config(vec![tz(0.1)], vec![tx(-0.12)]);
        let a = actuation(&s, &c);
        let plan = expand_motions(&c, &a, &s).unwrap();
        let t = execute(&plan, &s, 10);
        let o = &s.objects["drawer"];
        let (_, u) = joint_axis_world(&o.asset, &o.base_pose);
        let expected = 0.02 + u.dot(Vec3::new(-0.12, 0.0, 0.0));
        let v = t.final_scene().unwrap().objects["drawer"].joint_value;
        assert!((v - expected).abs() <= 0.005, "{v} vs {expected}");
        assert_eq!(t.steps.len(), 1 + 10 * 2);
        assert_eq!(t.outcome, Outcome::Completed);
    }

    #[test]
    fn joint_stays_put_after_release() {
        let s = drawer_scene(0.05);
        let c = drawer_config(vec![], vec![tx(-0.05), tx(-0.05)]);
        let a = actuation(&s, &c);
        let mut plan = expand_motions(&c, &a, &s).unwrap();
        // release after the first post motion
        plan.waypoints[1].gripper = GripperCommand::Open;
        let t = execute(&plan, &s, 5);
        let after_release = t.steps.iter().position(|st| st.waypoint == 1 && st.fraction >= 1.0).unwrap();
        let v = t.steps[after_release].scene.objects["drawer"].joint_value;
        for st in &t.steps[after_release..] {
            assert_eq!(st.scene.objects["drawer"].joint_value, v);
        }
    }

    #[test]
    fn overshoot_clamps_at_upper_limit() {
        let s = drawer_scene(0.18);
        let c = drawer_config(vec![], vec![tx(-0.04)]);
        let a = actuation(&s, &c);
        let t = execute(&expand_motions(&c, &a, &s).unwrap(), &s, 10);
        let hi = s.objects["drawer"].asset.joint.limits.1;
        assert_eq!(t.final_scene().unwrap().objects["drawer"].joint_value, hi);
        assert_eq!(t.outcome, Outcome::Clamped);
    }

    #[test]
    fn grasp_examples() {
        let s = drawer_scene(0.1);
        let handle = s.keypoint_world(&KeypointRef::object("drawer", OBJECT_HEAD)).unwrap();
        let target = AttachTarget::Keypoint(KeypointRef::object("drawer", OBJECT_HEAD));
        let mut near = s.clone();
        near.end_effector.pose.translation = handle + Vec3::new(0.0, 0.01, 0.0);
        let held = grasp(&near, &target).unwrap();
        assert!(held.attachment.is_some());
        assert_eq!(grasp(&held, &target), Err(TrajectoryError::AlreadyAttached));

        let mut far = s.clone();
        far.end_effector.pose.translation = handle + Vec3::new(0.0, 0.0, 0.10);
        match grasp(&far, &target) {
            Err(TrajectoryError::NoBind(d)) => assert!((d - 0.10).abs() < 1e-9),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rigid_attachment_keeps_relative_pose() {
        let lib = AssetLibrary::bundled();
        let mut s = drawer_scene(0.1);
        let ball = lib.rigid("golf_ball").unwrap().clone();
        let at = Vec3::new(0.4, 0.2, 0.021);
        s.add_rigid_body("ball", ball, Pose::from_translation(at));
        let chain = vec![ChainStep::Grasp(AttachTarget::RigidBody("ball".into()))];
        let ct = chain_subtasks(&chain, &s, &ChainOptions::default()).unwrap();
        let held = ct.trace.final_scene().unwrap().clone();
        let c = drawer_config(vec![tz(0.1)], vec![tx(0.05)]);
        let mut c2 = c.clone();
        c2.constraint_list.truncate(1);
        // tail contact is not a grasp, so the gripper never opens
        if let Constraint::PointToPoint { keypoint_name, .. } = &mut c2.constraint_list[0] {
            *keypoint_name = TOOL_TAIL.into();
        }
        let a = actuation(&held, &c2);
        let t = execute(&expand_motions(&c2, &a, &held).unwrap(), &held, 7);
        let rel0 = held.end_effector.pose.inverse() * held.rigid_bodies["ball"].pose;
        for st in &t.steps {
            let rel = st.scene.end_effector.pose.inverse() * st.scene.rigid_bodies["ball"].pose;
            assert!((rel.translation - rel0.translation).norm() < 1e-9);
            assert!(rel.rotation.angle_to(rel0.rotation) < 1e-9);
        }
    }

    #[test]
    fn actuation_stays_valid_at_execution_time() {
        let s = drawer_scene(0.1);
        let c = drawer_config(vec![tx(-0.1), tz(-0.15)], vec![tx(0.1)]);
        let a = actuation(&s, &c);
        let plan = expand_motions(&c, &a, &s).unwrap();
        let t = execute(&plan, &s, 10);
        let at = t
            .steps
            .iter()
            .find(|st| st.waypoint == plan.actuation_index().unwrap() && st.fraction >= 1.0)
            .unwrap();
        let sol = solve_actuation_pose(&c, &at.scene, &SolveOptions::default()).unwrap();
        assert!(sol.satisfied);
    }

    #[test]
    fn execution_is_deterministic() {
        let s = drawer_scene(0.1);
        let c = drawer_config(vec![tx(-0.1), tz(-0.15)], vec![tx(0.1)]);
        let a = actuation(&s, &c);
        let plan = expand_motions(&c, &a, &s)
            .unwrap()
            .with_criteria(vec![SuccessCriterion::ArticulatedClosed]);
        let t1 = execute(&plan, &s, 10);
        let t2 = execute(&plan, &s, 10);
        assert_eq!(t1, t2);
        assert!(t1.all_passed());
    }

    #[test]
    fn chain_edge_cases() {
        let s = drawer_scene(0.1);
        let empty = chain_subtasks(&[], &s, &ChainOptions::default()).unwrap();
        assert!(empty.trace.steps.is_empty());
        assert!(empty.success);

        let ok = drawer_config(vec![tz(-0.15)], vec![tx(0.1)]);
        let mut bad = ok.clone();
        bad.constraint_list.push(Constraint::FrameAxis {
            relation: AxisRelation::Parallel,
            axis_from_keypoint_name: TOOL_HEAD.into(),
            axis_to_keypoint_name: TOOL_SIDE.into(),
            target_axis: Vec3::X,
            target_axis_frame: AxisFrame::Object,
            tolerance: 0.01,
            target_inner_product: -1.0,
        });
        let chain = vec![
            ChainStep::Solve {
                name: "close-drawer".into(),
                config: ok,
                criteria: vec![SuccessCriterion::ArticulatedClosed],
            },
            ChainStep::Solve {
                name: "broken".into(),
                config: bad,
                criteria: vec![],
            },
        ];
        match chain_subtasks(&chain, &s, &ChainOptions::default()) {
            Err(ChainBreak {
                index: 2,
                cause: ChainCause::Solve(SolveError::Infeasible { .. }),
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
