//! Task specs, sub-task plans and solver configs: tolerant parsers, a stable
//! serializer, and validation against assets.
//!
//! Task specs arrive as Python-dict-like blocks with hyphenated keys, often
//! wrapped in prose or code fences. Solver configs are YAML with the field
//! names `task_name`, `category_name`, `tool_keypoint_name_list`,
//! `object_keypoint_name_list`, `constraint_list`, `pre_actuation_motions`
//! and `post_actuation_motions`.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::fmt::Write as _;

use serde_yaml::Value;
use thiserror::Error;

use crate::geometry::Vec3;
use crate::scene::{
    ArticulatedObject, EndEffector, SuccessCriterion, OBJECT_KEYPOINTS, TOOL_KEYPOINTS,
};

/// Step length of the named motions, meters.
pub const NAMED_MOTION_STEP: f64 = 0.15;
pub const MAX_TRANSLATION: f64 = 1.0;
pub const MAX_ROTATION: f64 = PI;
pub const MAX_SUBTASKS: usize = 5;
pub const MIN_SUBTASKS: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("task spec parse error at byte {offset}: {reason}")]
    SpecParse { reason: String, offset: usize },
    #[error("unknown success criterion `{0}`")]
    Vocabulary(String),
    #[error("solver config parse error: {0}")]
    ConfigParse(String),
    #[error("unknown constraint type `{0}`")]
    UnknownConstraintType(String),
    #[error("motion grammar error: {0}")]
    MotionGrammar(String),
    #[error("plan has {0} sub-tasks, at most {MAX_SUBTASKS} allowed")]
    TooManySubtasks(usize),
    #[error("plan has {0} sub-tasks, at least {MIN_SUBTASKS} required")]
    TooFewSubtasks(usize),
    #[error("malformed grasp/ungrasp step: {0}")]
    SentinelFormat(String),
}

fn spec_err(reason: impl Into<String>, offset: usize) -> ConfigError {
    ConfigError::SpecParse {
        reason: reason.into(),
        offset,
    }
}

// ---------------------------------------------------------------------------
// Task specs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task_name: String,
    pub task_description: String,
    pub assets_used: Vec<String>,
    pub success_criteria: Vec<SuccessCriterion>,
}

pub fn is_valid_task_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .split('-')
            .all(|part| !part.is_empty() && part.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit()))
}

impl TaskSpec {
    /// Renders the spec as a block that [`parse_task_spec`] reads back.
    pub fn to_block(&self) -> String {
        let list = |items: Vec<&str>| {
            let quoted: Vec<String> = items.iter().map(|s| json_quote(s)).collect();
            format!("[{}]", quoted.join(", "))
        };
        format!(
            "{{\n    \"task-name\": {},\n    \"task-description\": {},\n    \"assets-used\": {},\n    \"success-criteria\": {}\n}}",
            json_quote(&self.task_name),
            json_quote(&self.task_description),
            list(self.assets_used.iter().map(String::as_str).collect()),
            list(self.success_criteria.iter().map(|c| c.as_str()).collect()),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockValue {
    Str(String),
    List(Vec<String>),
}

/// One `{ "key": value, ... }` block with the byte offset of its opening brace.
#[derive(Debug, Clone, PartialEq)]
pub struct DictBlock {
    pub offset: usize,
    pub entries: Vec<(String, BlockValue, usize)>,
}

impl DictBlock {
    pub fn get(&self, key: &str) -> Option<(&BlockValue, usize)> {
        self.entries
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, o)| (v, *o))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _, _)| k.as_str())
    }
}

struct BlockParser<'a> {
    src: &'a str,
    pos: usize,
}

const OPEN_QUOTES: [(&str, &str); 5] = [("``", "\""), ("\"", "\""), ("'", "'"), ("\u{201c}", "\u{201d}"), ("\u{2018}", "\u{2019}")];

impl<'a> BlockParser<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        loop {
            let rest = self.rest();
            let trimmed = rest.trim_start();
            self.pos += rest.len() - trimmed.len();
            if trimmed.starts_with('#') {
                self.pos += trimmed.find('\n').unwrap_or(trimmed.len());
            } else {
                break;
            }
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if self.rest().starts_with(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ConfigError> {
        self.skip_ws();
        if self.eat(c) {
            Ok(())
        } else {
            Err(spec_err(format!("expected `{c}`"), self.pos))
        }
    }

    fn string(&mut self) -> Result<String, ConfigError> {
        self.skip_ws();
        let start = self.pos;
        let rest = self.rest();
        let (open, close) = OPEN_QUOTES
            .iter()
            .find(|(o, _)| rest.starts_with(o))
            .ok_or_else(|| spec_err("expected a quoted string", start))?;
        self.pos += open.len();
        let body_start = self.pos;
        let rest = self.rest();
        // a smart or TeX opening quote may be closed by a plain one
        let mut best: Option<(usize, usize)> = None;
        for c in [*close, "\"", "\u{201d}", "''"] {
            if let Some(i) = rest.find(c) {
                if best.is_none_or(|(bi, _)| i < bi) {
                    best = Some((i, c.len()));
                }
            }
            if *open == "'" || *open == "\"" {
                break;
            }
        }
        let (len, close_len) = best.ok_or_else(|| spec_err("unterminated string", start))?;
        let s = rest[..len].to_string();
        if s.contains('\n') {
            return Err(spec_err("newline inside string", body_start));
        }
        self.pos += len + close_len;
        Ok(s)
    }

    fn value(&mut self) -> Result<BlockValue, ConfigError> {
        self.skip_ws();
        if self.eat('[') {
            let mut items = Vec::new();
            loop {
                self.skip_ws();
                if self.eat(']') {
                    break;
                }
                items.push(self.string()?);
                self.skip_ws();
                if self.eat(',') {
                    continue;
                }
                self.skip_ws();
                if !self.eat(']') {
                    return Err(spec_err("expected `,` or `]` in list", self.pos));
                }
                break;
            }
            Ok(BlockValue::List(items))
        } else {
            self.string().map(BlockValue::Str)
        }
    }

    fn block(&mut self) -> Result<DictBlock, ConfigError> {
        self.skip_ws();
        let offset = self.pos;
        self.expect('{')?;
        let mut entries: Vec<(String, BlockValue, usize)> = Vec::new();
        loop {
            self.skip_ws();
            if self.eat('}') {
                break;
            }
            let key_at = self.pos;
            let key = self.string()?;
            if entries.iter().any(|(k, _, _)| *k == key) {
                return Err(spec_err(format!("duplicate key `{key}`"), key_at));
            }
            self.expect(':')?;
            let v = self.value()?;
            entries.push((key, v, key_at));
            self.skip_ws();
            if self.eat(',') {
                continue;
            }
            self.skip_ws();
            if !self.eat('}') {
                return Err(spec_err("expected `,` or `}`", self.pos));
            }
            break;
        }
        Ok(DictBlock { offset, entries })
    }
}

/// Extracts every `{...}` block from free text. Prose and code fences around
/// and between blocks are ignored.
pub fn parse_dict_blocks(text: &str) -> Result<Vec<DictBlock>, ConfigError> {
    let mut p = BlockParser { src: text, pos: 0 };
    let mut blocks = Vec::new();
    while let Some(i) = p.rest().find('{') {
        p.pos += i;
        blocks.push(p.block()?);
    }
    Ok(blocks)
}

fn block_str(b: &DictBlock, key: &str) -> Result<String, ConfigError> {
    match b.get(key) {
        Some((BlockValue::Str(s), _)) => Ok(s.clone()),
        Some((BlockValue::List(_), at)) => Err(spec_err(format!("`{key}` must be a string"), at)),
        None => Err(spec_err(format!("missing key `{key}`"), b.offset)),
    }
}

fn block_list(b: &DictBlock, key: &str) -> Result<Vec<String>, ConfigError> {
    match b.get(key) {
        Some((BlockValue::List(v), _)) => Ok(v.clone()),
        Some((BlockValue::Str(_), at)) => Err(spec_err(format!("`{key}` must be a list"), at)),
        None => Err(spec_err(format!("missing key `{key}`"), b.offset)),
    }
}

/// Builds a spec from a block. `require_criteria` is false for the parent of
/// a decomposition, which may omit them.
pub fn task_spec_from_block(b: &DictBlock, require_criteria: bool) -> Result<TaskSpec, ConfigError> {
    let task_name = block_str(b, "task-name")?;
    if !is_valid_task_name(&task_name) {
        let at = b.get("task-name").map(|(_, o)| o).unwrap_or(b.offset);
        return Err(spec_err(format!("task name `{task_name}` must be lower-case words joined by hyphens"), at));
    }
    let task_description = block_str(b, "task-description")?;
    let assets_used = block_list(b, "assets-used")?;
    let success_criteria = if require_criteria || b.get("success-criteria").is_some() {
        let names = block_list(b, "success-criteria")?;
        if names.is_empty() && require_criteria {
            let at = b.get("success-criteria").map(|(_, o)| o).unwrap_or(b.offset);
            return Err(spec_err("`success-criteria` is empty", at));
        }
        names
            .iter()
            .map(|n| n.parse::<SuccessCriterion>().map_err(ConfigError::Vocabulary))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };
    Ok(TaskSpec {
        task_name,
        task_description,
        assets_used,
        success_criteria,
    })
}

/// Parses the first key/value block found in `text`.
pub fn parse_task_spec(text: &str) -> Result<TaskSpec, ConfigError> {
    let blocks = parse_dict_blocks(text)?;
    let first = blocks
        .first()
        .ok_or_else(|| spec_err("no key/value block found", 0))?;
    task_spec_from_block(first, true)
}

// ---------------------------------------------------------------------------
// Sub-task plans
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum PlanStep {
    Task(TaskSpec),
    Grasp,
    Ungrasp,
}

impl PlanStep {
    pub fn name(&self) -> &str {
        match self {
            PlanStep::Task(t) => &t.task_name,
            PlanStep::Grasp => "grasp",
            PlanStep::Ungrasp => "ungrasp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubTaskPlan {
    pub parent: TaskSpec,
    pub steps: Vec<PlanStep>,
}

impl SubTaskPlan {
    pub fn new(parent: TaskSpec, steps: Vec<PlanStep>) -> Result<Self, ConfigError> {
        if steps.len() > MAX_SUBTASKS {
            return Err(ConfigError::TooManySubtasks(steps.len()));
        }
        if steps.len() < MIN_SUBTASKS {
            return Err(ConfigError::TooFewSubtasks(steps.len()));
        }
        Ok(SubTaskPlan { parent, steps })
    }
}

/// Turns a block into a plan step. Sentinel blocks may hold only `task-name`.
pub fn plan_step_from_block(b: &DictBlock) -> Result<PlanStep, ConfigError> {
    let name = match b.get("task-name") {
        Some((BlockValue::Str(s), _)) => s.clone(),
        _ => return task_spec_from_block(b, true).map(PlanStep::Task),
    };
    let sentinel = match name.as_str() {
        "grasp" => Some(PlanStep::Grasp),
        "ungrasp" => Some(PlanStep::Ungrasp),
        _ => None,
    };
    match sentinel {
        Some(step) => {
            if b.entries.len() != 1 {
                let extra: Vec<&str> = b.keys().filter(|k| *k != "task-name").collect();
                return Err(ConfigError::SentinelFormat(format!(
                    "`{name}` step carries extra keys: {}",
                    extra.join(", ")
                )));
            }
            Ok(step)
        }
        None => {
            let lowered = name.trim().to_ascii_lowercase();
            if lowered == "grasp" || lowered == "ungrasp" {
                return Err(ConfigError::SentinelFormat(format!("sentinel spelled `{name}`")));
            }
            task_spec_from_block(b, true).map(PlanStep::Task)
        }
    }
}

pub fn parse_subtask_plan(parent: TaskSpec, text: &str) -> Result<SubTaskPlan, ConfigError> {
    let steps = parse_dict_blocks(text)?
        .iter()
        .map(plan_step_from_block)
        .collect::<Result<Vec<_>, _>>()?;
    SubTaskPlan::new(parent, steps)
}

// ---------------------------------------------------------------------------
// Solver configs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisFrame {
    World,
    Object,
}

impl AxisFrame {
    pub fn as_str(&self) -> &'static str {
        match self {
            AxisFrame::World => "world",
            AxisFrame::Object => "object",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisRelation {
    Parallel,
    Orthogonal,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    PointToPoint {
        keypoint_name: String,
        target_keypoint_name: String,
        tolerance: f64,
    },
    FrameAxis {
        relation: AxisRelation,
        axis_from_keypoint_name: String,
        axis_to_keypoint_name: String,
        target_axis: Vec3,
        target_axis_frame: AxisFrame,
        tolerance: f64,
        target_inner_product: f64,
    },
    KeypointAxis {
        relation: AxisRelation,
        axis_from_keypoint_name: String,
        axis_to_keypoint_name: String,
        target_axis_from_keypoint_name: String,
        target_axis_to_keypoint_name: String,
        tolerance: f64,
        target_inner_product: f64,
    },
}

pub const CONSTRAINT_TYPES: [&str; 5] = [
    "point2point_constraint",
    "frame_axis_parallel",
    "frame_axis_orthogonal",
    "keypoint_axis_parallel",
    "keypoint_axis_orthogonal",
];

impl Constraint {
    pub fn type_name(&self) -> &'static str {
        match self {
            Constraint::PointToPoint { .. } => CONSTRAINT_TYPES[0],
            Constraint::FrameAxis { relation: AxisRelation::Parallel, .. } => CONSTRAINT_TYPES[1],
            Constraint::FrameAxis { relation: AxisRelation::Orthogonal, .. } => CONSTRAINT_TYPES[2],
            Constraint::KeypointAxis { relation: AxisRelation::Parallel, .. } => CONSTRAINT_TYPES[3],
            Constraint::KeypointAxis { relation: AxisRelation::Orthogonal, .. } => CONSTRAINT_TYPES[4],
        }
    }

    pub fn tolerance(&self) -> f64 {
        match self {
            Constraint::PointToPoint { tolerance, .. }
            | Constraint::FrameAxis { tolerance, .. }
            | Constraint::KeypointAxis { tolerance, .. } => *tolerance,
        }
    }

    pub fn is_point2point(&self) -> bool {
        matches!(self, Constraint::PointToPoint { .. })
    }

    /// Number of scalar residuals this constraint contributes.
    pub fn residual_dim(&self) -> usize {
        if self.is_point2point() {
            3
        } else {
            1
        }
    }

    /// Keypoint names on the tool side.
    pub fn tool_keypoints(&self) -> Vec<&str> {
        match self {
            Constraint::PointToPoint { keypoint_name, .. } => vec![keypoint_name],
            Constraint::FrameAxis {
                axis_from_keypoint_name,
                axis_to_keypoint_name,
                ..
            }
            | Constraint::KeypointAxis {
                axis_from_keypoint_name,
                axis_to_keypoint_name,
                ..
            } => vec![axis_from_keypoint_name, axis_to_keypoint_name],
        }
    }

    /// Keypoint names on the object side.
    pub fn object_keypoints(&self) -> Vec<&str> {
        match self {
            Constraint::PointToPoint {
                target_keypoint_name,
                ..
            } => vec![target_keypoint_name],
            Constraint::FrameAxis { .. } => vec![],
            Constraint::KeypointAxis {
                target_axis_from_keypoint_name,
                target_axis_to_keypoint_name,
                ..
            } => vec![target_axis_from_keypoint_name, target_axis_to_keypoint_name],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionMode {
    TranslateX,
    TranslateY,
    TranslateZ,
    Rotate,
}

impl MotionMode {
    pub const ALL: [MotionMode; 4] = [
        MotionMode::TranslateX,
        MotionMode::TranslateY,
        MotionMode::TranslateZ,
        MotionMode::Rotate,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MotionMode::TranslateX => "translate_x",
            MotionMode::TranslateY => "translate_y",
            MotionMode::TranslateZ => "translate_z",
            MotionMode::Rotate => "rotate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        MotionMode::ALL.into_iter().find(|m| m.as_str() == s)
    }

    pub fn bound(&self) -> f64 {
        match self {
            MotionMode::Rotate => MAX_ROTATION,
            _ => MAX_TRANSLATION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NamedMotion {
    Forward,
    Backward,
    Left,
    Right,
    Up,
    Down,
}

impl NamedMotion {
    pub const ALL: [NamedMotion; 6] = [
        NamedMotion::Forward,
        NamedMotion::Backward,
        NamedMotion::Left,
        NamedMotion::Right,
        NamedMotion::Up,
        NamedMotion::Down,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            NamedMotion::Forward => "move-forward",
            NamedMotion::Backward => "move-backward",
            NamedMotion::Left => "move-left",
            NamedMotion::Right => "move-right",
            NamedMotion::Up => "move-up",
            NamedMotion::Down => "move-down",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        NamedMotion::ALL.into_iter().find(|m| m.as_str() == s)
    }

    pub fn resolve(&self) -> (MotionMode, f64) {
        let s = NAMED_MOTION_STEP;
        match self {
            NamedMotion::Forward => (MotionMode::TranslateX, s),
            NamedMotion::Backward => (MotionMode::TranslateX, -s),
            NamedMotion::Left => (MotionMode::TranslateY, s),
            NamedMotion::Right => (MotionMode::TranslateY, -s),
            NamedMotion::Up => (MotionMode::TranslateZ, s),
            NamedMotion::Down => (MotionMode::TranslateZ, -s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Motion {
    Structured { mode: MotionMode, value: f64 },
    Named(NamedMotion),
}

impl Motion {
    pub fn structured(mode: MotionMode, value: f64) -> Self {
        Motion::Structured { mode, value }
    }

    pub fn resolve(&self) -> (MotionMode, f64) {
        match self {
            Motion::Structured { mode, value } => (*mode, *value),
            Motion::Named(n) => n.resolve(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverConfig {
    pub task_name: String,
    pub category_name: String,
    pub tool_keypoint_name_list: Vec<String>,
    pub object_keypoint_name_list: Vec<String>,
    pub constraint_list: Vec<Constraint>,
    pub pre_actuation_motions: Vec<Motion>,
    pub post_actuation_motions: Vec<Motion>,
}

impl SolverConfig {
    /// The contact constraint, if the config has exactly one.
    pub fn point2point(&self) -> Option<&Constraint> {
        let mut it = self.constraint_list.iter().filter(|c| c.is_point2point());
        match (it.next(), it.next()) {
            (Some(c), None) => Some(c),
            _ => None,
        }
    }

    /// Every object-side keypoint name referenced by a constraint.
    pub fn referenced_object_keypoints(&self) -> BTreeSet<&str> {
        self.constraint_list
            .iter()
            .flat_map(|c| c.object_keypoints())
            .collect()
    }

    /// Stage-1 output carries constraints, stage-2 output carries motions.
    pub fn merge_stages(constraints: SolverConfig, motions: SolverConfig) -> SolverConfig {
        SolverConfig {
            pre_actuation_motions: motions.pre_actuation_motions,
            post_actuation_motions: motions.post_actuation_motions,
            ..constraints
        }
    }
}

const TOP_LEVEL_KEYS: [&str; 7] = [
    "task_name",
    "category_name",
    "tool_keypoint_name_list",
    "object_keypoint_name_list",
    "constraint_list",
    "pre_actuation_motions",
    "post_actuation_motions",
];

fn cfg_err(msg: impl Into<String>) -> ConfigError {
    ConfigError::ConfigParse(msg.into())
}

fn scalar_string(v: &Value, what: &str) -> Result<String, ConfigError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(cfg_err(format!("`{what}` must be a string"))),
    }
}

fn real(v: &Value, what: &str) -> Result<f64, ConfigError> {
    let x = match v {
        Value::Number(n) => n.as_f64(),
        _ => None,
    }
    .ok_or_else(|| cfg_err(format!("`{what}` must be a number")))?;
    if !x.is_finite() {
        return Err(cfg_err(format!("`{what}` must be finite")));
    }
    Ok(x)
}

fn string_list(v: Option<&Value>, what: &str) -> Result<Vec<String>, ConfigError> {
    match v {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::Sequence(items)) => items.iter().map(|i| scalar_string(i, what)).collect(),
        Some(_) => Err(cfg_err(format!("`{what}` must be a list"))),
    }
}

fn parse_constraint(v: &Value, index: usize) -> Result<Constraint, ConfigError> {
    let map = v
        .as_mapping()
        .ok_or_else(|| cfg_err(format!("constraint {index} must be a mapping")))?;
    let mut fields = std::collections::BTreeMap::new();
    for (k, val) in map {
        let k = k
            .as_str()
            .ok_or_else(|| cfg_err(format!("constraint {index} has a non-string key")))?;
        fields.insert(k.to_string(), val);
    }
    let ty = match fields.get("type") {
        Some(t) => scalar_string(t, "type")?,
        None => return Err(cfg_err(format!("constraint {index} has no `type`"))),
    };
    let expected: &[&str] = match ty.as_str() {
        "point2point_constraint" => &["keypoint_name", "target_keypoint_name", "tolerance", "type"],
        "frame_axis_parallel" | "frame_axis_orthogonal" => &[
            "axis_from_keypoint_name",
            "axis_to_keypoint_name",
            "target_axis",
            "target_axis_frame",
            "tolerance",
            "target_inner_product",
            "type",
        ],
        "keypoint_axis_parallel" | "keypoint_axis_orthogonal" => &[
            "axis_from_keypoint_name",
            "axis_to_keypoint_name",
            "target_axis_from_keypoint_name",
            "target_axis_to_keypoint_name",
            "tolerance",
            "target_inner_product",
            "type",
        ],
        _ => return Err(ConfigError::UnknownConstraintType(ty)),
    };
    for k in fields.keys() {
        if !expected.contains(&k.as_str()) {
            return Err(cfg_err(format!("constraint {index} ({ty}) has unexpected field `{k}`")));
        }
    }
    for k in expected {
        if !fields.contains_key(*k) {
            return Err(cfg_err(format!("constraint {index} ({ty}) is missing `{k}`")));
        }
    }
    let s = |k: &str| scalar_string(fields[k], k);
    let r = |k: &str| real(fields[k], k);
    let relation = if ty.ends_with("parallel") {
        AxisRelation::Parallel
    } else {
        AxisRelation::Orthogonal
    };
    Ok(match ty.as_str() {
        "point2point_constraint" => Constraint::PointToPoint {
            keypoint_name: s("keypoint_name")?,
            target_keypoint_name: s("target_keypoint_name")?,
            tolerance: r("tolerance")?,
        },
        "frame_axis_parallel" | "frame_axis_orthogonal" => {
            let axis = match fields["target_axis"] {
                Value::Sequence(items) if items.len() == 3 => Vec3::new(
                    real(&items[0], "target_axis")?,
                    real(&items[1], "target_axis")?,
                    real(&items[2], "target_axis")?,
                ),
                _ => return Err(cfg_err("`target_axis` must be a list of 3 numbers")),
            };
            let frame = match s("target_axis_frame")?.as_str() {
                "world" => AxisFrame::World,
                "object" => AxisFrame::Object,
                other => {
                    return Err(cfg_err(format!("`target_axis_frame` must be world or object, got `{other}`")))
                }
            };
            Constraint::FrameAxis {
                relation,
                axis_from_keypoint_name: s("axis_from_keypoint_name")?,
                axis_to_keypoint_name: s("axis_to_keypoint_name")?,
                target_axis: axis,
                target_axis_frame: frame,
                tolerance: r("tolerance")?,
                target_inner_product: r("target_inner_product")?,
            }
        }
        _ => Constraint::KeypointAxis {
            relation,
            axis_from_keypoint_name: s("axis_from_keypoint_name")?,
            axis_to_keypoint_name: s("axis_to_keypoint_name")?,
            target_axis_from_keypoint_name: s("target_axis_from_keypoint_name")?,
            target_axis_to_keypoint_name: s("target_axis_to_keypoint_name")?,
            tolerance: r("tolerance")?,
            target_inner_product: r("target_inner_product")?,
        },
    })
}

fn parse_motion(v: &Value, phase: &str, index: usize) -> Result<Motion, ConfigError> {
    let err = |m: String| ConfigError::MotionGrammar(format!("{phase} motion {index}: {m}"));
    match v {
        Value::String(s) => NamedMotion::parse(s.trim())
            .map(Motion::Named)
            .ok_or_else(|| err(format!("unknown named motion `{s}`"))),
        Value::Sequence(items) => {
            if items.len() != 2 {
                return Err(err(format!("expected [mode, value], got {} items", items.len())));
            }
            let mode = match &items[0] {
                Value::String(s) => MotionMode::parse(s).ok_or_else(|| err(format!("unknown mode `{s}`")))?,
                _ => return Err(err("mode must be a string".into())),
            };
            let value = match &items[1] {
                Value::Number(n) => n.as_f64().filter(|x| x.is_finite()),
                _ => None,
            }
            .ok_or_else(|| err("value must be a finite number".into()))?;
            Ok(Motion::Structured { mode, value })
        }
        _ => Err(err("expected [mode, value] or a named motion".into())),
    }
}

fn motion_list(v: Option<&Value>, phase: &str) -> Result<Vec<Motion>, ConfigError> {
    match v {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::Sequence(items)) => items
            .iter()
            .enumerate()
            .map(|(i, m)| parse_motion(m, phase, i))
            .collect(),
        Some(_) => Err(ConfigError::MotionGrammar(format!("{phase} motions must be a list"))),
    }
}

/// Parses a solver config. Missing list fields read as empty, so stage-1
/// (constraints only) and stage-2 (motions only) outputs both parse.
pub fn parse_solver_config(text: &str) -> Result<SolverConfig, ConfigError> {
    let root: Value = serde_yaml::from_str(strip_fences(text)).map_err(|e| cfg_err(e.to_string()))?;
    let map = root
        .as_mapping()
        .ok_or_else(|| cfg_err("top level must be a mapping"))?;
    for k in map.keys() {
        match k.as_str() {
            Some(k) if TOP_LEVEL_KEYS.contains(&k) => {}
            Some(k) => return Err(cfg_err(format!("unknown field `{k}`"))),
            None => return Err(cfg_err("non-string top-level key")),
        }
    }
    let task_name = match map.get("task_name") {
        Some(v) => scalar_string(v, "task_name")?,
        None => return Err(cfg_err("missing `task_name`")),
    };
    let category_name = match map.get("category_name") {
        Some(v) => scalar_string(v, "category_name")?,
        None => String::new(),
    };
    let constraint_list = match map.get("constraint_list") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Sequence(items)) => items
            .iter()
            .enumerate()
            .map(|(i, c)| parse_constraint(c, i))
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(cfg_err("`constraint_list` must be a list")),
    };
    Ok(SolverConfig {
        task_name,
        category_name,
        tool_keypoint_name_list: string_list(map.get("tool_keypoint_name_list"), "tool_keypoint_name_list")?,
        object_keypoint_name_list: string_list(map.get("object_keypoint_name_list"), "object_keypoint_name_list")?,
        constraint_list,
        pre_actuation_motions: motion_list(map.get("pre_actuation_motions"), "pre")?,
        post_actuation_motions: motion_list(map.get("post_actuation_motions"), "post")?,
    })
}

/// Drops a surrounding markdown code fence, if any.
pub fn strip_fences(text: &str) -> &str {
    let t = text.trim();
    let Some(after) = t.strip_prefix("```") else {
        return text;
    };
    let body = after.find('\n').map(|i| &after[i + 1..]).unwrap_or("");
    match body.rfind("```") {
        Some(end) => &body[..end],
        None => body,
    }
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

fn json_quote(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

const YAML_RESERVED: [&str; 12] = [
    "true", "false", "null", "yes", "no", "on", "off", "y", "n", "~", "nan", "inf",
];

fn yaml_str(s: &str) -> String {
    let plain = s
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        && !YAML_RESERVED.contains(&s.to_ascii_lowercase().as_str());
    if plain {
        s.to_string()
    } else {
        json_quote(s)
    }
}

fn yaml_num(x: f64) -> String {
    // `Display` never uses exponents, which keeps the text plain YAML
    format!("{x}")
}

fn flow_list(items: &[String]) -> String {
    let parts: Vec<String> = items.iter().map(|s| yaml_str(s)).collect();
    format!("[{}]", parts.join(", "))
}

fn write_motions(out: &mut String, key: &str, motions: &[Motion]) {
    if motions.is_empty() {
        let _ = writeln!(out, "{key}: []");
        return;
    }
    let _ = writeln!(out, "{key}:");
    for m in motions {
        match m {
            Motion::Structured { mode, value } => {
                let _ = writeln!(out, "  - [\"{}\", {}]", mode.as_str(), yaml_num(*value));
            }
            Motion::Named(n) => {
                let _ = writeln!(out, "  - \"{}\"", n.as_str());
            }
        }
    }
}

/// Emits a config in a fixed field order.
pub fn serialize_solver_config(c: &SolverConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "task_name: {}", yaml_str(&c.task_name));
    let _ = writeln!(out, "category_name: {}", yaml_str(&c.category_name));
    let _ = writeln!(out, "tool_keypoint_name_list: {}", flow_list(&c.tool_keypoint_name_list));
    let _ = writeln!(out, "object_keypoint_name_list: {}", flow_list(&c.object_keypoint_name_list));
    if c.constraint_list.is_empty() {
        let _ = writeln!(out, "constraint_list: []");
    } else {
        let _ = writeln!(out, "constraint_list:");
    }
    for con in &c.constraint_list {
        let mut lines: Vec<(&str, String)> = Vec::new();
        match con {
            Constraint::PointToPoint {
                keypoint_name,
                target_keypoint_name,
                tolerance,
            } => {
                lines.push(("keypoint_name", yaml_str(keypoint_name)));
                lines.push(("target_keypoint_name", yaml_str(target_keypoint_name)));
                lines.push(("tolerance", yaml_num(*tolerance)));
            }
            Constraint::FrameAxis {
                axis_from_keypoint_name,
                axis_to_keypoint_name,
                target_axis,
                target_axis_frame,
                tolerance,
                target_inner_product,
                ..
            } => {
                lines.push(("axis_from_keypoint_name", yaml_str(axis_from_keypoint_name)));
                lines.push(("axis_to_keypoint_name", yaml_str(axis_to_keypoint_name)));
                lines.push((
                    "target_axis",
                    format!(
                        "[{}, {}, {}]",
                        yaml_num(target_axis.x),
                        yaml_num(target_axis.y),
                        yaml_num(target_axis.z)
                    ),
                ));
                lines.push(("target_axis_frame", target_axis_frame.as_str().to_string()));
                lines.push(("tolerance", yaml_num(*tolerance)));
                lines.push(("target_inner_product", yaml_num(*target_inner_product)));
            }
            Constraint::KeypointAxis {
                axis_from_keypoint_name,
                axis_to_keypoint_name,
                target_axis_from_keypoint_name,
                target_axis_to_keypoint_name,
                tolerance,
                target_inner_product,
                ..
            } => {
                lines.push(("axis_from_keypoint_name", yaml_str(axis_from_keypoint_name)));
                lines.push(("axis_to_keypoint_name", yaml_str(axis_to_keypoint_name)));
                lines.push(("target_axis_from_keypoint_name", yaml_str(target_axis_from_keypoint_name)));
                lines.push(("target_axis_to_keypoint_name", yaml_str(target_axis_to_keypoint_name)));
                lines.push(("tolerance", yaml_num(*tolerance)));
                lines.push(("target_inner_product", yaml_num(*target_inner_product)));
            }
        }
        lines.push(("type", con.type_name().to_string()));
        for (i, (k, v)) in lines.iter().enumerate() {
            let lead = if i == 0 { "- " } else { "  " };
            let _ = writeln!(out, "{lead}{k}: {v}");
        }
    }
    write_motions(&mut out, "pre_actuation_motions", &c.pre_actuation_motions);
    write_motions(&mut out, "post_actuation_motions", &c.post_actuation_motions);
    out
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyConstraintList,
    /// Exactly one contact constraint is required.
    PointToPointCount(usize),
    UnknownKeypoint(String),
    /// Used by a constraint but missing from the declared name lists.
    UndeclaredKeypoint(String),
    NonPositiveTolerance { index: usize, value: f64 },
    InnerProductOutOfRange { index: usize, value: f64 },
    ZeroAxis { index: usize },
    MotionOutOfBounds { phase: &'static str, index: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyConstraintList => write!(f, "constraint list is empty"),
            Violation::PointToPointCount(n) => {
                write!(f, "expected exactly one point2point_constraint, found {n}")
            }
            Violation::UnknownKeypoint(k) => write!(f, "keypoint `{k}` does not exist"),
            Violation::UndeclaredKeypoint(k) => {
                write!(f, "keypoint `{k}` is used but not declared in the name lists")
            }
            Violation::NonPositiveTolerance { index, value } => {
                write!(f, "constraint {index}: tolerance {value} must be positive")
            }
            Violation::InnerProductOutOfRange { index, value } => {
                write!(f, "constraint {index}: target_inner_product {value} outside [-1, 1]")
            }
            Violation::ZeroAxis { index } => write!(f, "constraint {index}: target_axis has zero length"),
            Violation::MotionOutOfBounds { phase, index, value } => {
                write!(f, "{phase} motion {index}: value {value} out of bounds")
            }
        }
    }
}

/// Checks a config against an asset and end effector. An empty result means
/// the config is usable.
pub fn validate(config: &SolverConfig, asset: &ArticulatedObject, ee: &EndEffector) -> Vec<Violation> {
    let mut out = Vec::new();
    if config.constraint_list.is_empty() {
        out.push(Violation::EmptyConstraintList);
    }
    let p2p = config.constraint_list.iter().filter(|c| c.is_point2point()).count();
    if !config.constraint_list.is_empty() && p2p != 1 {
        out.push(Violation::PointToPointCount(p2p));
    }

    let tool_known = |n: &str| TOOL_KEYPOINTS.contains(&n) && ee.keypoint_local(n).is_some();
    let object_known = |n: &str| OBJECT_KEYPOINTS.contains(&n) && asset.keypoints.contains_key(n);
    let mut seen = BTreeSet::new();
    let declared_tool: BTreeSet<&str> = config.tool_keypoint_name_list.iter().map(String::as_str).collect();
    let declared_obj: BTreeSet<&str> = config.object_keypoint_name_list.iter().map(String::as_str).collect();
    for n in &declared_tool {
        if !tool_known(n) && seen.insert(n.to_string()) {
            out.push(Violation::UnknownKeypoint(n.to_string()));
        }
    }
    for n in &declared_obj {
        if !object_known(n) && seen.insert(n.to_string()) {
            out.push(Violation::UnknownKeypoint(n.to_string()));
        }
    }
    for c in &config.constraint_list {
        for n in c.tool_keypoints() {
            if !tool_known(n) {
                if seen.insert(n.to_string()) {
                    out.push(Violation::UnknownKeypoint(n.to_string()));
                }
            } else if !declared_tool.contains(n) && seen.insert(n.to_string()) {
                out.push(Violation::UndeclaredKeypoint(n.to_string()));
            }
        }
        for n in c.object_keypoints() {
            if !object_known(n) {
                if seen.insert(n.to_string()) {
                    out.push(Violation::UnknownKeypoint(n.to_string()));
                }
            } else if !declared_obj.contains(n) && seen.insert(n.to_string()) {
                out.push(Violation::UndeclaredKeypoint(n.to_string()));
            }
        }
    }

    for (index, c) in config.constraint_list.iter().enumerate() {
        let tol = c.tolerance();
        if !(tol > 0.0) {
            out.push(Violation::NonPositiveTolerance { index, value: tol });
        }
        match c {
            Constraint::FrameAxis {
                target_axis,
                target_inner_product,
                ..
            } => {
                if target_axis.normalized().is_none() {
                    out.push(Violation::ZeroAxis { index });
                }
                if !(-1.0..=1.0).contains(target_inner_product) {
                    out.push(Violation::InnerProductOutOfRange {
                        index,
                        value: *target_inner_product,
                    });
                }
            }
            Constraint::KeypointAxis {
                target_inner_product,
                ..
            } => {
                if !(-1.0..=1.0).contains(target_inner_product) {
                    out.push(Violation::InnerProductOutOfRange {
                        index,
                        value: *target_inner_product,
                    });
                }
            }
            Constraint::PointToPoint { .. } => {}
        }
    }

    for (phase, list) in [
        ("pre", &config.pre_actuation_motions),
        ("post", &config.post_actuation_motions),
    ] {
        for (index, m) in list.iter().enumerate() {
            let (mode, value) = m.resolve();
            if !(value.is_finite() && value.abs() <= mode.bound()) {
                out.push(Violation::MotionOutOfBounds { phase, index, value });
            }
        }
    }
    out
}
