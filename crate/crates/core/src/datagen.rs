//! Scene randomization, demonstration collection and the on-disk dataset.
//!
//! Episode seeds are hashed from `(master, run, index)`, so a collection is
//! reproducible regardless of how many worker threads ran it.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{parse_solver_config, parse_task_spec, ConfigError, SolverConfig, TaskSpec};
use crate::geometry::{Pose, UnitQuat, Vec3};
use crate::kpam::{solve_actuation_pose, splitmix, SolveOptions};
use crate::pointcloud::{observe, PointCloud, PointCloudError, DEFAULT_OBSERVATION_POINTS};
use crate::scene::{AssetLibrary, SceneError, SceneFile, SceneState};
use crate::trajectory::{execute, expand_motions, ExecutionTrace, GripperCommand, DEFAULT_STEPS_PER_SEGMENT};

pub const EPISODE_MAGIC: &[u8; 4] = b"KGEP";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatagenError {
    #[error("unknown asset `{0}`")]
    UnknownAsset(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("dataset format version {found}, this build reads {expected}")]
    FormatVersionMismatch { found: u16, expected: u16 },
    #[error("malformed episode file {path}: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("invalid randomization: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    PointCloud(#[from] PointCloudError),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DatagenError {
    DatagenError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

// ---------------------------------------------------------------------------
// Randomization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationSpec {
    /// Half-width of the uniform xy offset, meters.
    pub xy_range: f64,
    /// Half-width of the uniform yaw offset, radians.
    pub yaw_range: f64,
    /// Half-width of the joint perturbation as a fraction of the joint range.
    pub joint_noise: f64,
    /// Center of the joint perturbation as a fraction of the range; the rest
    /// value when absent.
    pub joint_center: Option<f64>,
    /// Instance ids to draw from; every instance of the class when empty.
    pub instance_pool: Vec<String>,
    /// Halves the xy and yaw ranges.
    pub hard: bool,
}

impl Default for RandomizationSpec {
    fn default() -> Self {
        RandomizationSpec {
            xy_range: 0.10,
            yaw_range: PI / 6.0,
            joint_noise: 0.15,
            joint_center: None,
            instance_pool: Vec::new(),
            hard: false,
        }
    }
}

impl RandomizationSpec {
    /// `(xy, yaw)` half-widths after the difficulty setting.
    pub fn effective_ranges(&self) -> (f64, f64) {
        let s = if self.hard { 0.5 } else { 1.0 };
        (self.xy_range * s, self.yaw_range * s)
    }

    fn check(&self) -> Result<(), DatagenError> {
        for (name, v) in [("xy_range", self.xy_range), ("yaw_range", self.yaw_range), ("joint_noise", self.joint_noise)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(DatagenError::InvalidSpec(format!("{name} = {v}")));
            }
        }
        Ok(())
    }
}

fn symmetric(rng: &mut ChaCha8Rng, half: f64) -> f64 {
    if half > 0.0 {
        rng.random_range(-half..=half)
    } else {
        0.0
    }
}

/// Perturbs every object and rigid body of `base`: planar offset, yaw about
/// the object's vertical axis, instance swap within the class, and joint
/// noise around the configured center.
pub fn randomize(base: &SceneState, lib: &AssetLibrary, spec: &RandomizationSpec, seed: u64) -> Result<SceneState, DatagenError> {
    spec.check()?;
    let (xy, yaw) = spec.effective_ranges();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = base.clone();
    for o in scene.objects.values_mut() {
        let class = o.asset.class_name.clone();
        let pool: Vec<_> = if spec.instance_pool.is_empty() {
            lib.instances(&class).to_vec()
        } else {
            lib.instances(&class)
                .iter()
                .filter(|a| spec.instance_pool.contains(&a.instance_id))
                .cloned()
                .collect()
        };
        if !pool.is_empty() {
            o.asset = pool[rng.random_range(0..pool.len())].clone();
        }
        let (dx, dy, dyaw) = (symmetric(&mut rng, xy), symmetric(&mut rng, xy), symmetric(&mut rng, yaw));
        o.base_pose = Pose::new(
            UnitQuat::rot_z(dyaw) * o.base_pose.rotation,
            o.base_pose.translation + Vec3::new(dx, dy, 0.0),
        );
        let j = &o.asset.joint;
        let center = match spec.joint_center {
            Some(f) => j.limits.0 + f * j.range(),
            None => j.rest_value,
        };
        o.joint_value = j.clamp(center + symmetric(&mut rng, spec.joint_noise * j.range()));
    }
    for b in scene.rigid_bodies.values_mut() {
        let (dx, dy) = (symmetric(&mut rng, xy), symmetric(&mut rng, xy));
        b.pose.translation += Vec3::new(dx, dy, 0.0);
    }
    Ok(scene)
}

/// Default layout for the task's assets: articulated classes at their first
/// instance's default pose and rest joint value, rigid bodies at their
/// default poses.
pub fn default_scene(task: &TaskSpec, lib: &AssetLibrary) -> Result<SceneState, DatagenError> {
    let mut scene = SceneState::default();
    for name in &task.assets_used {
        if let Some(a) = lib.instances(name).first().or_else(|| lib.instance(name)) {
            scene.add_object(&a.class_name, a.clone(), a.default_pose, a.joint.rest_value);
        } else if let Some(b) = lib.rigid(name) {
            scene.add_rigid_body(name, b.clone(), b.default_pose);
        } else {
            return Err(DatagenError::UnknownAsset(name.clone()));
        }
    }
    Ok(scene)
}

pub fn randomize_scene(task: &TaskSpec, lib: &AssetLibrary, spec: &RandomizationSpec, seed: u64) -> Result<SceneState, DatagenError> {
    randomize(&default_scene(task, lib)?, lib, spec, seed)
}

// ---------------------------------------------------------------------------
// Task bundles
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSetup {
    /// Layout to randomize; the default layout of the task's assets if absent.
    pub scene: Option<SceneFile>,
    pub randomization: RandomizationSpec,
}

/// A task with its solver config and collection setup.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskBundle {
    pub spec: TaskSpec,
    pub config: SolverConfig,
    pub setup: TaskSetup,
}

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        &[$((
            $name,
            include_str!(concat!("../../../fixtures/tasks/", $name, "/task.txt")),
            include_str!(concat!("../../../fixtures/tasks/", $name, "/solver.yaml")),
            include_str!(concat!("../../../fixtures/tasks/", $name, "/setup.yaml")),
        )),*]
    };
}

const BUNDLED_TASKS: &[(&str, &str, &str, &str)] = bundled!["close-box", "close-drawer", "open-box", "open-drawer", "place-ball", "turn-faucet"];

impl TaskBundle {
    pub fn parse(task: &str, solver: &str, setup: &str) -> Result<Self, DatagenError> {
        let setup: TaskSetup = serde_yaml::from_str(setup).map_err(|e| DatagenError::Config(ConfigError::ConfigParse(e.to_string())))?;
        Ok(TaskBundle {
            spec: parse_task_spec(task)?,
            config: parse_solver_config(solver)?,
            setup,
        })
    }

    pub fn bundled_names() -> impl Iterator<Item = &'static str> {
        BUNDLED_TASKS.iter().map(|t| t.0)
    }

    pub fn bundled(name: &str) -> Result<Self, DatagenError> {
        let (_, task, solver, setup) = BUNDLED_TASKS
            .iter()
            .find(|t| t.0 == name)
            .ok_or_else(|| DatagenError::UnknownTask(name.to_string()))?;
        Self::parse(task, solver, setup)
    }

    /// Reads `task.txt`, `solver.yaml` and `setup.yaml` from `dir`.
    pub fn load(dir: &Path) -> Result<Self, DatagenError> {
        let read = |f: &str| {
            let p = dir.join(f);
            fs::read_to_string(&p).map_err(|e| io_err(&p, e))
        };
        Self::parse(&read("task.txt")?, &read("solver.yaml")?, &read("setup.yaml")?)
    }

    pub fn base_scene(&self, lib: &AssetLibrary) -> Result<SceneState, DatagenError> {
        match &self.setup.scene {
            Some(f) => Ok(f.build(lib)?),
            None => default_scene(&self.spec, lib),
        }
    }
}

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub cloud: PointCloud,
    /// `[tx, ty, tz, qw, qx, qy, qz]`.
    pub ee_pose: [f32; 7],
    pub gripper_width: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub target_pose: [f32; 7],
    pub gripper: GripperCommand,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep {
    pub observation: Observation,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub task_name: String,
    pub seed: u64,
    pub language: String,
    pub success: bool,
    /// The solver found no actuation pose; the episode holds one step.
    pub infeasible: bool,
    pub steps: Vec<EpisodeStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOptions {
    /// Record one observation/action pair every this many interpolation steps.
    pub obs_every: usize,
    pub points: usize,
    pub steps_per_segment: usize,
    pub solve: SolveOptions,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        EpisodeOptions {
            obs_every: 5,
            points: DEFAULT_OBSERVATION_POINTS,
            steps_per_segment: DEFAULT_STEPS_PER_SEGMENT,
            solve: SolveOptions::default(),
        }
    }
}

fn cloud_seed(episode_seed: u64, step: usize) -> u64 {
    splitmix(episode_seed ^ splitmix(step as u64 + 1))
}

/// Clouds are stored at `f32` precision; quantizing up front makes the
/// in-memory episode equal to its decoded file.
fn quantize(mut pc: PointCloud) -> PointCloud {
    for p in &mut pc.points {
        *p = Vec3::new(p.x as f32 as f64, p.y as f32 as f64, p.z as f32 as f64);
    }
    pc
}

fn observation(scene: &SceneState, n: usize, seed: u64) -> Result<Observation, PointCloudError> {
    Ok(Observation {
        cloud: quantize(observe(scene, n, seed)?),
        ee_pose: scene.end_effector.pose.to_f32_array(),
        gripper_width: scene.end_effector.width as f32,
    })
}

/// The dense execution behind an episode; `None` when no actuation pose or
/// motion plan exists.
pub fn episode_trace(
    task: &TaskSpec,
    config: &SolverConfig,
    scene: &SceneState,
    opts: &EpisodeOptions,
    seed: u64,
) -> Option<ExecutionTrace> {
    let solve = SolveOptions {
        seed,
        ..opts.solve.clone()
    };
    let sol = solve_actuation_pose(config, scene, &solve).ok()?;
    let plan = expand_motions(config, &sol.pose, scene).ok()?;
    Some(execute(&plan.with_criteria(task.success_criteria.clone()), scene, opts.steps_per_segment))
}

/// Solves, expands and executes `config` on `scene`, sampling the trace
/// every `obs_every` steps. Each action is the pose reached at the next
/// sample with the first gripper command issued on the way.
pub fn collect_episode(
    task: &TaskSpec,
    config: &SolverConfig,
    scene: &SceneState,
    opts: &EpisodeOptions,
    seed: u64,
) -> Result<Episode, DatagenError> {
    let mut episode = Episode {
        task_name: task.task_name.clone(),
        seed,
        language: task.task_description.clone(),
        success: false,
        infeasible: false,
        steps: Vec::new(),
    };
    let Some(trace) = episode_trace(task, config, scene, opts, seed) else {
        episode.infeasible = true;
        episode.steps.push(EpisodeStep {
            observation: observation(scene, opts.points, cloud_seed(seed, 0))?,
            action: Action {
                target_pose: scene.end_effector.pose.to_f32_array(),
                gripper: GripperCommand::Hold,
            },
        });
        return Ok(episode);
    };
    let every = opts.obs_every.max(1);
    let last = trace.steps.len().saturating_sub(1);
    let mut i = 0;
    loop {
        let j = (i + every).min(last);
        let gripper = trace.steps[i + 1..=j]
            .iter()
            .map(|s| s.command)
            .find(|c| *c != GripperCommand::Hold)
            .unwrap_or(GripperCommand::Hold);
        episode.steps.push(EpisodeStep {
            observation: observation(&trace.steps[i].scene, opts.points, cloud_seed(seed, episode.steps.len()))?,
            action: Action {
                target_pose: trace.steps[j].scene.end_effector.pose.to_f32_array(),
                gripper,
            },
        });
        if j == last {
            break;
        }
        i = j;
    }
    episode.success = trace.all_passed();
    Ok(episode)
}

// ---------------------------------------------------------------------------
// Collection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionReport {
    pub task_name: String,
    pub seed: u64,
    pub runs: usize,
    pub episodes_per_run: usize,
    pub success_rate_mean: f64,
    /// Population standard deviation over runs.
    pub success_rate_std: f64,
    pub per_run_rates: Vec<f64>,
    pub infeasible: usize,
}

impl CollectionReport {
    pub fn from_rates(task_name: &str, seed: u64, episodes_per_run: usize, per_run_rates: Vec<f64>, infeasible: usize) -> Self {
        let (mean, std) = mean_std(&per_run_rates);
        CollectionReport {
            task_name: task_name.to_string(),
            seed,
            runs: per_run_rates.len(),
            episodes_per_run,
            success_rate_mean: mean,
            success_rate_std: std,
            per_run_rates,
            infeasible,
        }
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,seed,run,episodes,success_rate\n");
        for (r, rate) in self.per_run_rates.iter().enumerate() {
            out.push_str(&format!("{},{},{},{},{}\n", self.task_name, self.seed, r, self.episodes_per_run, rate));
        }
        out.push_str(&format!(
            "{},{},mean,{},{}\n{},{},std,{},{}\n",
            self.task_name,
            self.seed,
            self.episodes_per_run,
            self.success_rate_mean,
            self.task_name,
            self.seed,
            self.episodes_per_run,
            self.success_rate_std
        ));
        out
    }
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn episode_seed(master: u64, run: usize, index: usize) -> u64 {
    splitmix(splitmix(master ^ splitmix(run as u64)) ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectOptions {
    pub runs: usize,
    pub episodes_per_run: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the rayon default.
    pub jobs: usize,
    pub episode: EpisodeOptions,
}

impl Default for CollectOptions {
    fn default() -> Self {
        CollectOptions {
            runs: 5,
            episodes_per_run: 50,
            seed: 0,
            jobs: 0,
            episode: EpisodeOptions::default(),
        }
    }
}

/// Runs `runs × episodes_per_run` randomized episodes from `base`. Returns
/// the report and the successful episodes in (run, index) order.
pub fn collect(
    task: &TaskSpec,
    config: &SolverConfig,
    base: &SceneState,
    lib: &AssetLibrary,
    spec: &RandomizationSpec,
    opts: &CollectOptions,
) -> Result<(CollectionReport, Vec<Episode>), DatagenError> {
    spec.check()?;
    let jobs: Vec<(usize, usize)> = (0..opts.runs)
        .flat_map(|r| (0..opts.episodes_per_run).map(move |i| (r, i)))
        .collect();
    let work = || -> Result<Vec<Episode>, DatagenError> {
        jobs.par_iter()
            .map(|&(r, i)| {
                let seed = episode_seed(opts.seed, r, i);
                let scene = randomize(base, lib, spec, seed)?;
                collect_episode(task, config, &scene, &opts.episode, seed)
            })
            .collect()
    };
    let episodes = if opts.jobs == 0 {
        work()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| DatagenError::InvalidSpec(e.to_string()))?
            .install(work)?
    };
    let per = opts.episodes_per_run.max(1) as f64;
    let rates: Vec<f64> = episodes
        .chunks(opts.episodes_per_run.max(1))
        .take(opts.runs)
        .map(|c| c.iter().filter(|e| e.success).count() as f64 / per)
        .collect();
    let infeasible = episodes.iter().filter(|e| e.infeasible).count();
    let report = CollectionReport::from_rates(&task.task_name, opts.seed, opts.episodes_per_run, rates, infeasible);
    let kept = episodes.into_iter().filter(|e| e.success).collect();
    Ok((report, kept))
}

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestTask {
    pub episodes: usize,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u16,
    pub tasks: BTreeMap<String, ManifestTask>,
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.write_u32::<LittleEndian>(s.len() as u32).expect("vec write");
    out.extend_from_slice(s.as_bytes());
}

fn write_pose(out: &mut Vec<u8>, p: &[f32; 7]) {
    for v in p {
        out.write_f32::<LittleEndian>(*v).expect("vec write");
    }
}

pub fn encode_episode(e: &Episode) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(EPISODE_MAGIC);
    out.write_u16::<LittleEndian>(FORMAT_VERSION).expect("vec write");
    write_str(&mut out, &e.task_name);
    write_str(&mut out, &e.language);
    out.write_u64::<LittleEndian>(e.seed).expect("vec write");
    out.push(e.success as u8);
    out.push(e.infeasible as u8);
    out.write_u32::<LittleEndian>(e.steps.len() as u32).expect("vec write");
    for s in &e.steps {
        s.observation.cloud.encode(&mut out);
        write_pose(&mut out, &s.observation.ee_pose);
        out.write_f32::<LittleEndian>(s.observation.gripper_width).expect("vec write");
        write_pose(&mut out, &s.action.target_pose);
        out.push(s.action.gripper.code());
    }
    out
}

pub fn decode_episode(bytes: &[u8], path: &str) -> Result<Episode, DatagenError> {
    let corrupt = |reason: &str| DatagenError::Corrupt {
        path: path.to_string(),
        reason: reason.to_string(),
    };
    if bytes.len() < 6 || &bytes[..4] != EPISODE_MAGIC {
        return Err(corrupt("missing header"));
    }
    let mut cur = &bytes[4..];
    let trunc = |_| corrupt("truncated");
    let version = cur.read_u16::<LittleEndian>().map_err(trunc)?;
    if version != FORMAT_VERSION {
        return Err(DatagenError::FormatVersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let read_str = |cur: &mut &[u8]| -> Result<String, DatagenError> {
        let n = cur.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        if cur.len() < n {
            return Err(corrupt("truncated string"));
        }
        let s = std::str::from_utf8(&cur[..n]).map_err(|_| corrupt("invalid utf-8"))?.to_string();
        *cur = &cur[n..];
        Ok(s)
    };
    let read_pose = |cur: &mut &[u8]| -> Result<[f32; 7], DatagenError> {
        let mut p = [0f32; 7];
        for v in &mut p {
            *v = cur.read_f32::<LittleEndian>().map_err(trunc)?;
        }
        Ok(p)
    };
    let task_name = read_str(&mut cur)?;
    let language = read_str(&mut cur)?;
    let seed = cur.read_u64::<LittleEndian>().map_err(trunc)?;
    let success = cur.read_u8().map_err(trunc)? != 0;
    let infeasible = cur.read_u8().map_err(trunc)? != 0;
    let n = cur.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let mut steps = Vec::with_capacity(n.min(1 << 16));
    for k in 0..n {
        let (cloud, used) = PointCloud::decode(cur, cloud_seed(seed, k)).map_err(|e| corrupt(&e.to_string()))?;
        cur = &cur[used..];
        let ee_pose = read_pose(&mut cur)?;
        let gripper_width = cur.read_f32::<LittleEndian>().map_err(trunc)?;
        let target_pose = read_pose(&mut cur)?;
        let gripper = GripperCommand::from_code(cur.read_u8().map_err(trunc)?).ok_or_else(|| corrupt("bad gripper code"))?;
        steps.push(EpisodeStep {
            observation: Observation {
                cloud,
                ee_pose,
                gripper_width,
            },
            action: Action { target_pose, gripper },
        });
    }
    if !cur.is_empty() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(Episode {
        task_name,
        seed,
        language,
        success,
        infeasible,
        steps,
    })
}

pub fn episode_path(dir: &Path, task: &str, seed: u64) -> PathBuf {
    dir.join(task).join(format!("{seed}.episode"))
}

/// Writes every episode and a manifest listing them per task.
pub fn write_dataset(episodes: &[Episode], dir: &Path) -> Result<Manifest, DatagenError> {
    let mut manifest = Manifest {
        format_version: FORMAT_VERSION,
        tasks: BTreeMap::new(),
    };
    for e in episodes {
        let path = episode_path(dir, &e.task_name, e.seed);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|err| io_err(parent, err))?;
        }
        fs::write(&path, encode_episode(e)).map_err(|err| io_err(&path, err))?;
        let t = manifest.tasks.entry(e.task_name.clone()).or_insert(ManifestTask {
            episodes: 0,
            seeds: Vec::new(),
        });
        t.episodes += 1;
        t.seeds.push(e.seed);
    }
    let path = dir.join("manifest.yaml");
    fs::create_dir_all(dir).map_err(|err| io_err(dir, err))?;
    let text = serde_yaml::to_string(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|err| io_err(&path, err))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, DatagenError> {
    let path = dir.join("manifest.yaml");
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let m: Manifest = serde_yaml::from_str(&text).map_err(|e| DatagenError::Corrupt {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    if m.format_version != FORMAT_VERSION {
        return Err(DatagenError::FormatVersionMismatch {
            found: m.format_version,
            expected: FORMAT_VERSION,
        });
    }
    Ok(m)
}

pub fn read_episode(path: &Path) -> Result<Episode, DatagenError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode_episode(&bytes, &path.display().to_string())
}

/// Episodes in manifest order.
pub fn read_dataset(dir: &Path) -> Result<Vec<Episode>, DatagenError> {
    let m = read_manifest(dir)?;
    let mut out = Vec::new();
    for (task, t) in &m.tasks {
        for seed in &t.seeds {
            out.push(read_episode(&episode_path(dir, task, *seed))?);
        }
    }
    Ok(out)
}
