//! Language-model pipeline: task proposal, decomposition, two-stage solver
//! generation with simulator-checked rejection sampling, and bottom-up
//! composition from a task library.
//!
//! Model output only ever reaches the parsers in [`crate::config`]; nothing
//! generated is executed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{
    parse_dict_blocks, parse_solver_config, parse_subtask_plan, plan_step_from_block, serialize_solver_config,
    task_spec_from_block, validate, BlockValue, ConfigError, PlanStep, SolverConfig, SubTaskPlan, TaskSpec, Violation,
    CONSTRAINT_TYPES,
};
use crate::datagen::{episode_seed, randomize, RandomizationSpec};
use crate::kpam::{solve_actuation_pose, SolveError, SolveOptions};
use crate::scene::{AssetLibrary, AttachTarget, SceneError, SceneState, SuccessCriterion, TOOL_KEYPOINTS};
use crate::trajectory::{chain_subtasks, execute, expand_motions, ChainBreak, ChainOptions, ChainStep, ChainTrace};

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Proposal,
    Constraints,
    Motions,
    Decomposition,
    Composition,
}

impl Stage {
    /// Number used in fixture file names.
    pub fn number(&self) -> u32 {
        match self {
            Stage::Proposal => 0,
            Stage::Constraints => 1,
            Stage::Motions => 2,
            Stage::Decomposition => 3,
            Stage::Composition => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a str,
    /// Encoded images (PNG bytes), passed through untouched.
    pub images: &'a [Vec<u8>],
    pub stage: Stage,
    /// 1-based attempt within a rejection-sampling loop.
    pub attempt: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("no scripted response at {0}")]
    MissingFixture(String),
    #[error("transport error after {tries} tries: {message}")]
    Transport { tries: usize, message: String },
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected response body: {0}")]
    Response(String),
    #[error("backend not configured: {0}")]
    Config(String),
}

pub trait Backend: Send + Sync {
    fn identity(&self) -> String;
    fn complete(&self, req: &CompletionRequest<'_>) -> Result<String, BackendError>;
}

/// Scripted responses read from `stage<N>_attempt<M>.txt`. Every request is
/// appended to a transcript.
#[derive(Debug)]
pub struct FixtureBackend {
    dir: PathBuf,
    transcript: Mutex<Vec<String>>,
}

impl FixtureBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureBackend {
            dir: dir.into(),
            transcript: Mutex::new(Vec::new()),
        }
    }

    pub fn path_for(&self, stage: Stage, attempt: usize) -> PathBuf {
        self.dir.join(format!("stage{}_attempt{}.txt", stage.number(), attempt))
    }

    pub fn transcript(&self) -> Vec<String> {
        self.transcript.lock().expect("transcript lock").clone()
    }
}

impl Backend for FixtureBackend {
    fn identity(&self) -> String {
        format!("fixture:{}", self.dir.display())
    }

    fn complete(&self, req: &CompletionRequest<'_>) -> Result<String, BackendError> {
        let path = self.path_for(req.stage, req.attempt);
        let text = fs::read_to_string(&path).map_err(|_| BackendError::MissingFixture(path.display().to_string()))?;
        let mut t = self.transcript.lock().expect("transcript lock");
        t.push(format!("[stage {} attempt {}]\n{}", req.stage.number(), req.attempt, req.prompt));
        t.push(text.clone());
        Ok(text)
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("semaphore lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore lock");
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore lock") += 1;
        self.0.cv.notify_one();
    }
}

pub const HTTP_TRIES: usize = 3;

/// Chat-completion endpoint.
#[derive(Debug)]
pub struct HttpBackend {
    pub url: String,
    pub model: String,
    key: Option<String>,
    agent: ureq::Agent,
    limit: Semaphore,
    backoff: Duration,
}

impl HttpBackend {
    pub fn new(url: &str, model: &str, key: Option<String>, timeout: Duration, max_concurrent: usize) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        HttpBackend {
            url: url.to_string(),
            model: model.to_string(),
            key,
            agent: ureq::Agent::new_with_config(config),
            limit: Semaphore::new(max_concurrent),
            backoff: Duration::from_millis(500),
        }
    }

    /// Reads `KINEGEN_LLM_URL`, `KINEGEN_LLM_MODEL` and optionally
    /// `KINEGEN_LLM_KEY`.
    pub fn from_env() -> Result<Self, BackendError> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let url = var("KINEGEN_LLM_URL").ok_or_else(|| BackendError::Config("KINEGEN_LLM_URL is not set".into()))?;
        let model = var("KINEGEN_LLM_MODEL").ok_or_else(|| BackendError::Config("KINEGEN_LLM_MODEL is not set".into()))?;
        Ok(Self::new(&url, &model, var("KINEGEN_LLM_KEY"), Duration::from_secs(120), 4))
    }

    pub fn with_backoff(mut self, d: Duration) -> Self {
        self.backoff = d;
        self
    }

    pub fn request_body(&self, req: &CompletionRequest<'_>) -> serde_json::Value {
        let mut content = vec![serde_json::json!({"type": "text", "text": req.prompt})];
        for img in req.images {
            let data = base64::engine::general_purpose::STANDARD.encode(img);
            content.push(serde_json::json!({
                "type": "image_url",
                "image_url": {"url": format!("data:image/png;base64,{data}")}
            }));
        }
        serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": content}],
        })
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<Result<String, BackendError>, String> {
        let mut rq = self.agent.post(&self.url);
        if let Some(k) = &self.key {
            rq = rq.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = rq.send_json(body).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        if status >= 500 {
            return Err(format!("status {status}"));
        }
        if status >= 400 {
            return Ok(Err(BackendError::Status { status, body: text }));
        }
        let v: serde_json::Value = match serde_json::from_str(&text) {
            Ok(v) => v,
            Err(e) => return Ok(Err(BackendError::Response(e.to_string()))),
        };
        Ok(v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| BackendError::Response("missing choices[0].message.content".into())))
    }
}

impl Backend for HttpBackend {
    fn identity(&self) -> String {
        format!("http:{}@{}", self.model, self.url)
    }

    /// Transport failures and 5xx responses are retried with exponential
    /// backoff, up to [`HTTP_TRIES`] tries.
    fn complete(&self, req: &CompletionRequest<'_>) -> Result<String, BackendError> {
        let _permit = self.limit.acquire();
        let body = self.request_body(req);
        let mut last = String::new();
        for k in 0..HTTP_TRIES {
            if k > 0 {
                thread::sleep(self.backoff * (1 << (k - 1)));
            }
            match self.attempt(&body) {
                Ok(r) => return r,
                Err(e) => last = e,
            }
        }
        Err(BackendError::Transport {
            tries: HTTP_TRIES,
            message: last,
        })
    }
}

// ---------------------------------------------------------------------------
// Prompts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    pub proposal: String,
    pub decomposition: String,
    pub constraints: String,
    pub motions: String,
    pub composition: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            proposal: include_str!("../prompts/proposal.txt").into(),
            decomposition: include_str!("../prompts/decomposition.txt").into(),
            constraints: include_str!("../prompts/constraints.txt").into(),
            motions: include_str!("../prompts/motions.txt").into(),
            composition: include_str!("../prompts/composition.txt").into(),
        }
    }
}

impl PromptSet {
    /// Templates from `<dir>/<name>.txt`; missing files keep the defaults.
    pub fn load(dir: &Path) -> Result<Self, AgentError> {
        let mut p = PromptSet::default();
        for (name, slot) in [
            ("proposal", &mut p.proposal),
            ("decomposition", &mut p.decomposition),
            ("constraints", &mut p.constraints),
            ("motions", &mut p.motions),
            ("composition", &mut p.composition),
        ] {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                *slot = fs::read_to_string(&path).map_err(|e| AgentError::Io(format!("{}: {e}", path.display())))?;
            }
        }
        Ok(p)
    }
}

/// Replaces every `${name}` slot. Any slot left over is an error.
pub fn render(template: &str, slots: &[(&str, &str)]) -> Result<String, AgentError> {
    let mut out = template.to_string();
    for (k, v) in slots {
        out = out.replace(&format!("${{{k}}}"), v);
    }
    if let Some(i) = out.find("${") {
        let name: String = out[i + 2..].chars().take_while(|c| *c != '}').collect();
        return Err(AgentError::UnfilledSlot(name));
    }
    Ok(out)
}

fn feedback_text(feedback: Option<&str>) -> String {
    match feedback {
        Some(f) if !f.is_empty() => format!("\nYour previous answer was rejected:\n{f}\nFix these problems."),
        _ => String::new(),
    }
}

// ---------------------------------------------------------------------------
// Errors and records
// ---------------------------------------------------------------------------

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("could not parse model output: {0}")]
    ParseFailure(String),
    #[error("task `{0}` already exists")]
    DuplicateTask(String),
    #[error("plan has {0} sub-tasks, at most 5 allowed")]
    TooManySubtasks(usize),
    #[error("malformed grasp/ungrasp step: {0}")]
    SentinelFormat(String),
    #[error("stage 1 constraints rejected: {}", join(.0))]
    Stage1Invalid(Vec<Violation>),
    #[error("stage 2 motions rejected: {0}")]
    Stage2Invalid(String),
    #[error("no config accepted after {} attempts", .0.len())]
    Exhausted(Vec<AttemptRecord>),
    #[error("composition uses unknown library task `{0}`")]
    UnknownLibraryTask(String),
    #[error("task library is empty")]
    EmptyLibrary,
    #[error(transparent)]
    Chain(#[from] ChainBreak),
    #[error("composed chain ran but sub-tasks failed: {}", .0.join(", "))]
    ChainFailed(Vec<String>),
    #[error("template slot `{0}` left unfilled")]
    UnfilledSlot(String),
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("rate counts violate solved <= executed <= attempts: {solved}/{executed}/{attempts}")]
    RateInvariant { attempts: usize, executed: usize, solved: usize },
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

fn parse_failure(e: ConfigError) -> AgentError {
    match e {
        ConfigError::TooManySubtasks(n) => AgentError::TooManySubtasks(n),
        ConfigError::SentinelFormat(s) => AgentError::SentinelFormat(s),
        other => AgentError::ParseFailure(other.to_string()),
    }
}

/// Where one rejection-sampling attempt stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptStage {
    Generation,
    Verification,
    Accepted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: usize,
    pub stage: AttemptStage,
    /// Generation or validation error, if any.
    pub error: Option<String>,
    /// Mean verified success over the verification episodes.
    pub success_rate: Option<f64>,
    pub failed_criteria: Vec<String>,
}

impl AttemptRecord {
    /// Feedback appended to the next prompts.
    pub fn summary(&self) -> String {
        match (&self.error, self.success_rate) {
            (Some(e), _) => e.clone(),
            (None, Some(r)) if self.stage == AttemptStage::Accepted => format!("accepted with verified success rate {r:.2}"),
            (None, Some(r)) => {
                let mut s = format!("verified success rate {r:.2} is below the acceptance threshold");
                if !self.failed_criteria.is_empty() {
                    s.push_str(&format!("; failing criteria: {}", self.failed_criteria.join(", ")));
                }
                s
            }
            (None, None) => String::new(),
        }
    }
}

// ---------------------------------------------------------------------------
// Task library
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskLibrary {
    entries: Vec<(TaskSpec, SolverConfig)>,
    index: BTreeMap<String, usize>,
}

impl TaskLibrary {
    pub fn insert(&mut self, spec: TaskSpec, config: SolverConfig) -> Result<(), AgentError> {
        if self.index.contains_key(&spec.task_name) {
            return Err(AgentError::DuplicateTask(spec.task_name));
        }
        self.index.insert(spec.task_name.clone(), self.entries.len());
        self.entries.push((spec, config));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&(TaskSpec, SolverConfig)> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(s, _)| s.task_name.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = &(TaskSpec, SolverConfig)> {
        self.entries.iter()
    }
}

// ---------------------------------------------------------------------------
// Pipeline operations
// ---------------------------------------------------------------------------

fn asset_descriptions(assets: &AssetLibrary) -> String {
    let mut lines = Vec::new();
    for class in assets.classes() {
        if let Some(a) = assets.instances(class).first() {
            lines.push(format!("- {class}: {}", a.description));
        }
    }
    for b in assets.rigid_bodies() {
        lines.push(format!("- {}: {}", b.name, b.description));
    }
    lines.join("\n")
}

fn criteria_vocabulary() -> String {
    SuccessCriterion::ALL.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(", ")
}

pub fn propose_task(lib: &TaskLibrary, assets: &AssetLibrary, backend: &dyn Backend, prompts: &PromptSet) -> Result<TaskSpec, AgentError> {
    let existing = if lib.is_empty() {
        "(none yet)".to_string()
    } else {
        lib.names().collect::<Vec<_>>().join(", ")
    };
    let examples = lib
        .iter()
        .take(2)
        .map(|(s, _)| s.to_block())
        .collect::<Vec<_>>()
        .join("\n");
    let examples = if examples.is_empty() {
        TaskSpec {
            task_name: "open-box".into(),
            task_description: "lift the lid of the storage box until it stands open".into(),
            assets_used: vec!["box_rotate".into()],
            success_criteria: vec![SuccessCriterion::ArticulatedOpen],
        }
        .to_block()
    } else {
        examples
    };
    let prompt = render(
        &prompts.proposal,
        &[
            ("assets", &asset_descriptions(assets)),
            ("existing", &existing),
            ("examples", &examples),
            ("criteria", &criteria_vocabulary()),
        ],
    )?;
    let text = backend.complete(&CompletionRequest {
        prompt: &prompt,
        images: &[],
        stage: Stage::Proposal,
        attempt: 1,
    })?;
    let spec = crate::config::parse_task_spec(&text).map_err(parse_failure)?;
    if lib.contains(&spec.task_name) {
        return Err(AgentError::DuplicateTask(spec.task_name));
    }
    Ok(spec)
}

pub fn decompose_task(spec: &TaskSpec, backend: &dyn Backend, prompts: &PromptSet) -> Result<SubTaskPlan, AgentError> {
    let prompt = render(&prompts.decomposition, &[("task", &spec.to_block()), ("feedback", "")])?;
    let text = backend.complete(&CompletionRequest {
        prompt: &prompt,
        images: &[],
        stage: Stage::Decomposition,
        attempt: 1,
    })?;
    parse_subtask_plan(spec.clone(), &text).map_err(parse_failure)
}

const STAGE1_EXAMPLE: &str = include_str!("../../../fixtures/tasks/open-box/solver.yaml");

fn stage1_example() -> String {
    let c = parse_solver_config(STAGE1_EXAMPLE).expect("bundled example parses");
    let constraints_only = SolverConfig {
        pre_actuation_motions: vec![],
        post_actuation_motions: vec![],
        ..c
    };
    serialize_solver_config(&constraints_only)
}

/// Two-stage generation: constraints first, validated against the target
/// object, then motions conditioned on the accepted constraints.
pub fn generate_solver(
    spec: &TaskSpec,
    scene: &SceneState,
    backend: &dyn Backend,
    prompts: &PromptSet,
    images: &[Vec<u8>],
    attempt: usize,
    feedback: Option<&str>,
) -> Result<SolverConfig, AgentError> {
    let fb = feedback_text(feedback);
    let obj = match spec.assets_used.iter().find_map(|a| scene.objects.get(a)) {
        Some(o) => o,
        None => scene.sole_object()?.1,
    };
    let object_kps: Vec<&str> = obj.asset.keypoints.keys().map(String::as_str).collect();
    let prompt1 = render(
        &prompts.constraints,
        &[
            ("task", &spec.task_description),
            ("object", &format!("{} ({})", obj.asset.class_name, obj.asset.description)),
            ("tool_keypoints", &TOOL_KEYPOINTS.join(", ")),
            ("object_keypoints", &object_kps.join(", ")),
            ("constraint_types", &CONSTRAINT_TYPES.join(", ")),
            ("example", &stage1_example()),
            ("feedback", &fb),
        ],
    )?;
    let text1 = backend.complete(&CompletionRequest {
        prompt: &prompt1,
        images,
        stage: Stage::Constraints,
        attempt,
    })?;
    let stage1 = parse_solver_config(&text1).map_err(parse_failure)?;
    let stage1 = SolverConfig {
        pre_actuation_motions: vec![],
        post_actuation_motions: vec![],
        ..stage1
    };
    let violations = validate(&stage1, &obj.asset, &scene.end_effector);
    if !violations.is_empty() {
        return Err(AgentError::Stage1Invalid(violations));
    }

    let prompt2 = render(
        &prompts.motions,
        &[
            ("constraints", &serialize_solver_config(&stage1)),
            ("task", &spec.task_description),
            ("feedback", &fb),
        ],
    )?;
    let text2 = backend.complete(&CompletionRequest {
        prompt: &prompt2,
        images,
        stage: Stage::Motions,
        attempt,
    })?;
    let stage2 = parse_solver_config(&text2).map_err(|e| AgentError::Stage2Invalid(e.to_string()))?;
    let merged = SolverConfig::merge_stages(stage1, stage2);
    let violations = validate(&merged, &obj.asset, &scene.end_effector);
    if !violations.is_empty() {
        return Err(AgentError::Stage2Invalid(join(&violations)));
    }
    Ok(merged)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    TopDown,
    BottomUp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub max_reject_iterations: usize,
    pub mode: Mode,
    pub verify_episodes: usize,
    pub seed: u64,
    pub randomization: RandomizationSpec,
    pub solve: SolveOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            max_reject_iterations: 3,
            mode: Mode::TopDown,
            verify_episodes: 10,
            seed: 0,
            randomization: RandomizationSpec::default(),
            solve: SolveOptions::default(),
        }
    }
}

/// Mean verified success needed to accept a generated config.
pub const ACCEPT_RATE: f64 = 0.5;

/// Success rate of `config` over randomized copies of `scene`, with the
/// names of criteria that failed at least once.
pub fn verify(
    spec: &TaskSpec,
    config: &SolverConfig,
    scene: &SceneState,
    assets: &AssetLibrary,
    cfg: &PipelineConfig,
    attempt: usize,
) -> Result<(f64, Vec<String>), AgentError> {
    let mut ok = 0usize;
    let mut failed = std::collections::BTreeSet::new();
    let n = cfg.verify_episodes.max(1);
    for i in 0..n {
        let seed = episode_seed(cfg.seed, attempt, i);
        let s = randomize(scene, assets, &cfg.randomization, seed).map_err(|e| AgentError::InvalidConfig(e.to_string()))?;
        let opts = SolveOptions {
            seed,
            ..cfg.solve.clone()
        };
        let sol = match solve_actuation_pose(config, &s, &opts) {
            Ok(sol) => sol,
            Err(SolveError::Infeasible { .. }) => {
                failed.insert("infeasible".to_string());
                continue;
            }
            Err(e) => {
                failed.insert(e.to_string());
                continue;
            }
        };
        let plan = match expand_motions(config, &sol.pose, &s) {
            Ok(p) => p.with_criteria(spec.success_criteria.clone()),
            Err(e) => {
                failed.insert(e.to_string());
                continue;
            }
        };
        let t = execute(&plan, &s, crate::trajectory::DEFAULT_STEPS_PER_SEGMENT);
        if t.all_passed() {
            ok += 1;
        } else {
            for (c, p, _) in &t.criteria_results {
                if !p {
                    failed.insert(c.as_str().to_string());
                }
            }
        }
    }
    Ok((ok as f64 / n as f64, failed.into_iter().collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Accepted {
    pub config: SolverConfig,
    pub attempts: usize,
    pub records: Vec<AttemptRecord>,
}

/// Generate, validate and verify up to `max_reject_iterations` times, feeding
/// each failure back into the next prompts.
pub fn reject_sample(
    spec: &TaskSpec,
    scene: &SceneState,
    assets: &AssetLibrary,
    backend: &dyn Backend,
    prompts: &PromptSet,
    cfg: &PipelineConfig,
) -> Result<Accepted, AgentError> {
    if cfg.max_reject_iterations == 0 {
        return Err(AgentError::InvalidConfig("max_reject_iterations must be at least 1".into()));
    }
    let mut records: Vec<AttemptRecord> = Vec::new();
    for attempt in 1..=cfg.max_reject_iterations {
        let feedback = records.last().map(AttemptRecord::summary);
        let mut rec = AttemptRecord {
            attempt,
            stage: AttemptStage::Generation,
            error: None,
            success_rate: None,
            failed_criteria: vec![],
        };
        match generate_solver(spec, scene, backend, prompts, &[], attempt, feedback.as_deref()) {
            Err(e @ AgentError::Backend(_)) => return Err(e),
            Err(e) => rec.error = Some(e.to_string()),
            Ok(config) => {
                rec.stage = AttemptStage::Verification;
                let (rate, failed) = verify(spec, &config, scene, assets, cfg, attempt)?;
                rec.success_rate = Some(rate);
                rec.failed_criteria = failed;
                if rate >= ACCEPT_RATE {
                    rec.stage = AttemptStage::Accepted;
                    records.push(rec);
                    return Ok(Accepted {
                        config,
                        attempts: attempt,
                        records,
                    });
                }
            }
        }
        records.push(rec);
    }
    Err(AgentError::Exhausted(records))
}

/// Parses a composition: a task block for the new task followed by step
/// blocks naming library tasks or grasp/ungrasp, then runs it as a chain.
pub fn compose_bottom_up(
    lib: &TaskLibrary,
    scene: &SceneState,
    backend: &dyn Backend,
    prompts: &PromptSet,
    opts: &ChainOptions,
) -> Result<(SubTaskPlan, ChainTrace), AgentError> {
    if lib.is_empty() {
        return Err(AgentError::EmptyLibrary);
    }
    let listing = lib
        .iter()
        .map(|(s, _)| format!("- {}: {}", s.task_name, s.task_description))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = render(&prompts.composition, &[("library", &listing), ("feedback", "")])?;
    let text = backend.complete(&CompletionRequest {
        prompt: &prompt,
        images: &[],
        stage: Stage::Composition,
        attempt: 1,
    })?;
    let blocks = parse_dict_blocks(&text).map_err(parse_failure)?;
    let (head, rest) = blocks
        .split_first()
        .ok_or_else(|| AgentError::ParseFailure("no blocks in composition".into()))?;
    let parent = task_spec_from_block(head, true).map_err(parse_failure)?;
    let mut steps = Vec::with_capacity(rest.len());
    for b in rest {
        let name = match b.get("task-name") {
            Some((BlockValue::Str(s), _)) => s.clone(),
            _ => return Err(AgentError::ParseFailure("step without task-name".into())),
        };
        if name.eq_ignore_ascii_case("grasp") || name.eq_ignore_ascii_case("ungrasp") {
            steps.push(plan_step_from_block(b).map_err(parse_failure)?);
        } else {
            let (spec, _) = lib.get(&name).ok_or(AgentError::UnknownLibraryTask(name))?;
            steps.push(PlanStep::Task(spec.clone()));
        }
    }
    let plan = SubTaskPlan::new(parent, steps).map_err(parse_failure)?;
    let chain = plan_to_chain(&plan, lib, scene)?;
    let trace = chain_subtasks(&chain, scene, opts)?;
    if !trace.success {
        let failed = trace
            .subtasks
            .iter()
            .filter(|s| !s.passed())
            .map(|s| s.name.clone())
            .collect();
        return Err(AgentError::ChainFailed(failed));
    }
    Ok((plan, trace))
}

/// Library configs for task steps; grasps target the scene's loose object.
pub fn plan_to_chain(plan: &SubTaskPlan, lib: &TaskLibrary, scene: &SceneState) -> Result<Vec<ChainStep>, AgentError> {
    plan.steps
        .iter()
        .map(|s| match s {
            PlanStep::Task(t) => {
                let (spec, config) = lib.get(&t.task_name).ok_or_else(|| AgentError::UnknownLibraryTask(t.task_name.clone()))?;
                Ok(ChainStep::Solve {
                    name: spec.task_name.clone(),
                    config: config.clone(),
                    criteria: spec.success_criteria.clone(),
                })
            }
            PlanStep::Grasp => {
                let (name, _) = scene.sole_rigid_body()?;
                Ok(ChainStep::Grasp(AttachTarget::RigidBody(name.to_string())))
            }
            PlanStep::Ungrasp => Ok(ChainStep::Ungrasp),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Rates
// ---------------------------------------------------------------------------

/// Outcome of one full pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task_name: String,
    /// The pipeline finished without an error.
    pub executed: bool,
    /// Verification accepted the generated config.
    pub solved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateStats {
    pub attempts: usize,
    pub executed: usize,
    pub solved: usize,
    pub execution_rate: f64,
    pub solution_rate: f64,
}

impl RateStats {
    pub fn new(attempts: usize, executed: usize, solved: usize) -> Result<Self, AgentError> {
        if solved > executed || executed > attempts {
            return Err(AgentError::RateInvariant { attempts, executed, solved });
        }
        let rate = |k: usize| if attempts == 0 { 0.0 } else { k as f64 / attempts as f64 };
        Ok(RateStats {
            attempts,
            executed,
            solved,
            execution_rate: rate(executed),
            solution_rate: rate(solved),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.attempts == 0
    }
}

/// A record that solved without executing is counted as executed.
pub fn compute_rates(records: &[RunRecord]) -> RateStats {
    let executed = records.iter().filter(|r| r.executed || r.solved).count();
    let solved = records.iter().filter(|r| r.solved).count();
    RateStats::new(records.len(), executed, solved).expect("counts are consistent by construction")
}
