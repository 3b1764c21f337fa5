use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use kinegen::agent::{
    compose_bottom_up, compute_rates, decompose_task, generate_solver, propose_task, reject_sample, Backend,
    FixtureBackend, HttpBackend, PipelineConfig, PromptSet, RunRecord, TaskLibrary,
};
use kinegen::config::{parse_solver_config, parse_task_spec, serialize_solver_config, PlanStep, TaskSpec};
use kinegen::datagen::{
    collect, default_scene, episode_trace, read_episode, write_dataset, CollectOptions, EpisodeOptions, TaskBundle,
};
use kinegen::kpam::{solve_actuation_pose, SolveError, SolveOptions};
use kinegen::scene::{AssetLibrary, SceneFile, SceneState};
use kinegen::trajectory::ChainOptions;

#[derive(Parser)]
#[command(name = "kinegen", version, about = "Keypoint-constraint task and demonstration generation")]
struct Cli {
    /// Master seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Asset manifest; the bundled library when omitted.
    #[arg(long, global = true)]
    assets: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Asset manifest tools.
    Assets {
        #[command(subcommand)]
        command: AssetsCommand,
    },
    /// Task proposal, decomposition and composition.
    Task {
        #[command(subcommand)]
        command: TaskCommand,
    },
    /// Solver config generation.
    Solver {
        #[command(subcommand)]
        command: SolverCommand,
    },
    /// Solve a config for its actuation pose in a scene.
    Solve {
        config: PathBuf,
        scene: PathBuf,
        #[arg(long)]
        restarts: Option<usize>,
    },
    /// Collect randomized demonstrations of a task.
    Collect(CollectArgs),
    /// Re-simulate a stored episode.
    Replay {
        episode: PathBuf,
        /// Emit the dense trace as CSV.
        #[arg(long)]
        csv: bool,
        /// Task bundle directory; the bundled task of the same name otherwise.
        #[arg(long)]
        task_dir: Option<PathBuf>,
        /// The episode was collected with `--hard`.
        #[arg(long)]
        hard: bool,
    },
    /// Execution and solution rates over run records.
    Stats {
        records: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Yaml)]
        format: Format,
    },
}

#[derive(Subcommand)]
enum AssetsCommand {
    Validate { manifest: PathBuf },
}

#[derive(Args)]
struct BackendArg {
    /// `fixture:<dir>` or `http`.
    #[arg(long, default_value = "http", value_parser = parse_backend)]
    backend: BackendSpec,
    /// Prompt template directory overriding the bundled templates.
    #[arg(long)]
    prompts: Option<PathBuf>,
}

#[derive(Clone)]
enum BackendSpec {
    Fixture(PathBuf),
    Http,
}

fn parse_backend(s: &str) -> std::result::Result<BackendSpec, String> {
    match s.split_once(':') {
        Some(("fixture", dir)) if !dir.is_empty() => Ok(BackendSpec::Fixture(dir.into())),
        None if s == "http" => Ok(BackendSpec::Http),
        _ => Err(format!("expected fixture:<dir> or http, got `{s}`")),
    }
}

#[derive(Subcommand)]
enum TaskCommand {
    /// Propose a new task that is not yet in the library.
    Propose {
        #[command(flatten)]
        backend: BackendArg,
        /// Directory of task bundles; the bundled tasks when omitted.
        #[arg(long, conflicts_with = "empty_library")]
        library: Option<PathBuf>,
        /// Propose against an empty library.
        #[arg(long)]
        empty_library: bool,
    },
    /// Split a long-horizon task into sub-tasks.
    Decompose {
        spec: PathBuf,
        #[command(flatten)]
        backend: BackendArg,
    },
    /// Chain bundled tasks into a long-horizon task and execute it.
    Compose {
        scene: PathBuf,
        #[command(flatten)]
        backend: BackendArg,
    },
}

#[derive(Subcommand)]
enum SolverCommand {
    /// Generate a solver config, verifying by rejection sampling.
    Gen {
        spec: PathBuf,
        #[command(flatten)]
        backend: BackendArg,
        /// Scene to generate against; the default layout of the spec's assets otherwise.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        max_iterations: usize,
        #[arg(long, default_value_t = 10)]
        verify_episodes: usize,
        /// Skip verification and print the first config that parses.
        #[arg(long)]
        no_verify: bool,
    },
}

#[derive(Args)]
struct CollectArgs {
    /// Bundled task name.
    task: String,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long, default_value_t = 50)]
    episodes: usize,
    /// Dataset directory for the successful episodes.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 picks one per core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long, value_enum, default_value_t = Format::Yaml)]
    format: Format,
    /// Task bundle directory instead of a bundled task.
    #[arg(long)]
    task_dir: Option<PathBuf>,
    /// Halve the randomization ranges.
    #[arg(long)]
    hard: bool,
    #[arg(long, default_value_t = kinegen::pointcloud::DEFAULT_OBSERVATION_POINTS)]
    points: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Yaml,
    Csv,
}

/// A domain failure: which step failed and why.
struct Failure {
    context: &'static str,
    message: String,
}

fn fail<E: Display>(context: &'static str) -> impl FnOnce(E) -> Failure {
    move |e| Failure {
        context,
        message: e.to_string(),
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.context);
            eprintln!("  {}", f.message.replace('\n', "\n  "));
            ExitCode::from(1)
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Failure {
        context: "read",
        message: format!("{}: {e}", path.display()),
    })
}

fn assets(cli: &Cli) -> Result<AssetLibrary> {
    match &cli.assets {
        Some(p) => AssetLibrary::load(p).map_err(fail("assets")),
        None => Ok(AssetLibrary::bundled()),
    }
}

fn backend(arg: &BackendArg) -> Result<(Box<dyn Backend>, PromptSet)> {
    let b: Box<dyn Backend> = match &arg.backend {
        BackendSpec::Fixture(dir) => Box::new(FixtureBackend::new(dir)),
        BackendSpec::Http => Box::new(HttpBackend::from_env().map_err(fail("backend"))?),
    };
    let prompts = match &arg.prompts {
        Some(dir) => PromptSet::load(dir).map_err(fail("prompts"))?,
        None => PromptSet::default(),
    };
    Ok((b, prompts))
}

fn bundled_library() -> Result<TaskLibrary> {
    let mut lib = TaskLibrary::default();
    for name in TaskBundle::bundled_names() {
        let b = TaskBundle::bundled(name).map_err(fail("task library"))?;
        lib.insert(b.spec, b.config).map_err(fail("task library"))?;
    }
    Ok(lib)
}

/// Every subdirectory of `dir` is a task bundle.
fn library_from_dir(dir: &Path) -> Result<TaskLibrary> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Failure {
            context: "task library",
            message: format!("{}: {e}", dir.display()),
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    let mut lib = TaskLibrary::default();
    for p in entries {
        let b = TaskBundle::load(&p).map_err(fail("task library"))?;
        lib.insert(b.spec, b.config).map_err(fail("task library"))?;
    }
    Ok(lib)
}

fn load_scene(path: &Path, lib: &AssetLibrary) -> Result<SceneState> {
    SceneFile::load(path, lib).map_err(fail("scene"))
}

fn task_bundle(name: &str, dir: Option<&Path>) -> Result<TaskBundle> {
    match dir {
        Some(d) => TaskBundle::load(d),
        None => TaskBundle::bundled(name),
    }
    .map_err(fail("task"))
}

fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Assets {
            command: AssetsCommand::Validate { manifest },
        } => {
            let lib = AssetLibrary::load(manifest).map_err(fail("assets validate"))?;
            let classes: Vec<&str> = lib.classes().collect();
            let instances: usize = classes.iter().map(|c| lib.instances(c).len()).sum();
            Ok(format!(
                "ok: {} classes, {} articulated instances, {} rigid bodies\n",
                classes.len(),
                instances,
                lib.rigid_bodies().count()
            ))
        }
        Command::Task { command } => task(cli, command),
        Command::Solver { command } => solver(cli, command),
        Command::Solve { config, scene, restarts } => solve(cli, config, scene, *restarts),
        Command::Collect(args) => collect_cmd(cli, args),
        Command::Replay {
            episode,
            csv,
            task_dir,
            hard,
        } => replay(cli, episode, *csv, task_dir.as_deref(), *hard),
        Command::Stats { records, format } => stats(records, *format),
    }
}

fn plan_text(parent: &TaskSpec, steps: &[PlanStep]) -> String {
    let mut out = parent.to_block();
    out.push('\n');
    for s in steps {
        out.push('\n');
        match s {
            PlanStep::Task(t) => out.push_str(&t.to_block()),
            other => out.push_str(&format!("{{\"task-name\": \"{}\"}}", other.name())),
        }
        out.push('\n');
    }
    out
}

fn task(cli: &Cli, command: &TaskCommand) -> Result<String> {
    let lib = assets(cli)?;
    match command {
        TaskCommand::Propose {
            backend: b,
            library,
            empty_library,
        } => {
            let tasks = match (library, empty_library) {
                (_, true) => TaskLibrary::default(),
                (Some(dir), _) => library_from_dir(dir)?,
                (None, _) => bundled_library()?,
            };
            let (b, prompts) = backend(b)?;
            let spec = propose_task(&tasks, &lib, b.as_ref(), &prompts).map_err(fail("task propose"))?;
            Ok(spec.to_block() + "\n")
        }
        TaskCommand::Decompose { spec, backend: b } => {
            let spec = parse_task_spec(&read(spec)?).map_err(fail("task spec"))?;
            let (b, prompts) = backend(b)?;
            let plan = decompose_task(&spec, b.as_ref(), &prompts).map_err(fail("task decompose"))?;
            Ok(plan_text(&plan.parent, &plan.steps))
        }
        TaskCommand::Compose { scene, backend: b } => {
            let scene = load_scene(scene, &lib)?;
            let (b, prompts) = backend(b)?;
            let (plan, trace) = compose_bottom_up(&bundled_library()?, &scene, b.as_ref(), &prompts, &ChainOptions::default())
                .map_err(fail("task compose"))?;
            let mut out = plan_text(&plan.parent, &plan.steps);
            out.push('\n');
            for s in &trace.subtasks {
                out.push_str(&format!("# {}: {} passed={}\n", s.name, s.outcome.as_str(), s.passed()));
            }
            out.push_str(&format!("# success={}\n", trace.success));
            Ok(out)
        }
    }
}

fn solver(cli: &Cli, command: &SolverCommand) -> Result<String> {
    let SolverCommand::Gen {
        spec,
        backend: b,
        scene,
        max_iterations,
        verify_episodes,
        no_verify,
    } = command;
    let lib = assets(cli)?;
    let spec = parse_task_spec(&read(spec)?).map_err(fail("task spec"))?;
    let scene = match scene {
        Some(p) => load_scene(p, &lib)?,
        None => default_scene(&spec, &lib).map_err(fail("scene"))?,
    };
    let (b, prompts) = backend(b)?;
    if *no_verify {
        let cfg = generate_solver(&spec, &scene, b.as_ref(), &prompts, &[], 1, None).map_err(fail("solver gen"))?;
        return Ok(serialize_solver_config(&cfg));
    }
    let cfg = PipelineConfig {
        max_reject_iterations: *max_iterations,
        verify_episodes: *verify_episodes,
        seed: cli.seed,
        ..Default::default()
    };
    let accepted = reject_sample(&spec, &scene, &lib, b.as_ref(), &prompts, &cfg).map_err(fail("solver gen"))?;
    for r in &accepted.records {
        let s = r.summary();
        if !s.is_empty() {
            eprintln!("attempt {}: {s}", r.attempt);
        }
    }
    eprintln!("accepted after {} attempt(s)", accepted.attempts);
    Ok(serialize_solver_config(&accepted.config))
}

#[derive(Serialize)]
struct ResidualRow {
    constraint: &'static str,
    magnitude: f64,
    tolerance: f64,
    satisfied: bool,
}

#[derive(Serialize)]
struct SolveOutput {
    /// `[tx, ty, tz, qw, qx, qy, qz]`.
    pose: [f64; 7],
    satisfied: bool,
    cost: f64,
    restarts_used: usize,
    residuals: Vec<ResidualRow>,
    wall_time_s: f64,
}

fn solve(cli: &Cli, config: &Path, scene: &Path, restarts: Option<usize>) -> Result<String> {
    let lib = assets(cli)?;
    let config = parse_solver_config(&read(config)?).map_err(fail("solver config"))?;
    let scene = load_scene(scene, &lib)?;
    let mut opts = SolveOptions {
        seed: cli.seed,
        ..Default::default()
    };
    if let Some(r) = restarts {
        opts.restarts = r;
    }
    let (sol, infeasible) = match solve_actuation_pose(&config, &scene, &opts) {
        Ok(s) => (s, false),
        Err(SolveError::Infeasible { best }) => (*best, true),
        Err(e) => return Err(fail("solve")(e)),
    };
    let residuals = config
        .constraint_list
        .iter()
        .zip(sol.residuals.magnitudes())
        .map(|(c, m)| ResidualRow {
            constraint: c.type_name(),
            magnitude: m,
            tolerance: c.tolerance(),
            satisfied: m <= c.tolerance(),
        })
        .collect();
    let out = serde_yaml::to_string(&SolveOutput {
        pose: sol.pose.to_array(),
        satisfied: sol.satisfied,
        cost: sol.cost,
        restarts_used: sol.restarts_used,
        residuals,
        wall_time_s: sol.wall_time,
    })
    .map_err(fail("solve"))?;
    if infeasible {
        // Print the best attempt before reporting the failure.
        print!("{out}");
        return Err(Failure {
            context: "solve",
            message: "no actuation pose satisfies every constraint".into(),
        });
    }
    Ok(out)
}

fn collect_cmd(cli: &Cli, a: &CollectArgs) -> Result<String> {
    let lib = assets(cli)?;
    let bundle = task_bundle(&a.task, a.task_dir.as_deref())?;
    let base = bundle.base_scene(&lib).map_err(fail("scene"))?;
    let mut spec = bundle.setup.randomization.clone();
    spec.hard |= a.hard;
    let opts = CollectOptions {
        runs: a.runs,
        episodes_per_run: a.episodes,
        seed: cli.seed,
        jobs: a.jobs,
        episode: EpisodeOptions {
            points: a.points,
            ..Default::default()
        },
    };
    let (report, episodes) = collect(&bundle.spec, &bundle.config, &base, &lib, &spec, &opts).map_err(fail("collect"))?;
    if let Some(dir) = &a.out {
        write_dataset(&episodes, dir).map_err(fail("collect"))?;
    }
    Ok(match a.format {
        Format::Yaml => report.to_yaml(),
        Format::Csv => report.to_csv(),
    })
}

fn replay(cli: &Cli, path: &Path, csv: bool, task_dir: Option<&Path>, hard: bool) -> Result<String> {
    let lib = assets(cli)?;
    let ep = read_episode(path).map_err(fail("replay"))?;
    let bundle = task_bundle(&ep.task_name, task_dir)?;
    let base = bundle.base_scene(&lib).map_err(fail("scene"))?;
    let mut spec = bundle.setup.randomization.clone();
    spec.hard |= hard;
    let scene = kinegen::datagen::randomize(&base, &lib, &spec, ep.seed).map_err(fail("replay"))?;
    let opts = EpisodeOptions::default();
    let trace = episode_trace(&bundle.spec, &bundle.config, &scene, &opts, ep.seed).ok_or_else(|| Failure {
        context: "replay",
        message: format!("episode {} has no feasible plan", ep.seed),
    })?;
    let first = trace.steps.first().map(|s| s.scene.end_effector.pose.to_f32_array());
    if first != ep.steps.first().map(|s| s.observation.ee_pose) {
        return Err(Failure {
            context: "replay",
            message: "re-simulated start pose differs from the recorded episode".into(),
        });
    }
    if !csv {
        return Ok(format!(
            "task: {}\nseed: {}\nlanguage: {:?}\nsuccess: {}\nrecorded_steps: {}\ntrace_steps: {}\noutcome: {}\n",
            ep.task_name,
            ep.seed,
            ep.language,
            ep.success,
            ep.steps.len(),
            trace.steps.len(),
            trace.outcome.as_str()
        ));
    }
    let objects: Vec<&String> = scene.objects.keys().collect();
    let mut out = String::from("step,tx,ty,tz,qw,qx,qy,qz,gripper_width");
    for o in &objects {
        out.push_str(&format!(",{o}"));
    }
    out.push('\n');
    for (i, s) in trace.steps.iter().enumerate() {
        out.push_str(&i.to_string());
        for v in s.scene.end_effector.pose.to_array() {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{}", s.scene.end_effector.width));
        for o in &objects {
            out.push_str(&format!(",{}", s.scene.objects[*o].joint_value));
        }
        out.push('\n');
    }
    Ok(out)
}

fn stats(path: &Path, format: Format) -> Result<String> {
    let records: Vec<RunRecord> = serde_yaml::from_str(&read(path)?).map_err(fail("stats"))?;
    let mut names: Vec<&str> = records.iter().map(|r| r.task_name.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    let overall = compute_rates(&records);
    let rows: Vec<(String, _)> = names
        .iter()
        .map(|n| {
            let sub: Vec<RunRecord> = records.iter().filter(|r| r.task_name == *n).cloned().collect();
            (n.to_string(), compute_rates(&sub))
        })
        .chain(std::iter::once(("all".to_string(), overall)))
        .collect();
    Ok(match format {
        Format::Yaml => {
            let mut out = String::new();
            for (n, r) in rows {
                out.push_str(&format!(
                    "{n}:\n  attempts: {}\n  executed: {}\n  solved: {}\n  execution_rate: {}\n  solution_rate: {}\n",
                    r.attempts, r.executed, r.solved, r.execution_rate, r.solution_rate
                ));
            }
            out
        }
        Format::Csv => {
            let mut out = String::from("task,attempts,executed,solved,execution_rate,solution_rate\n");
            for (n, r) in rows {
                out.push_str(&format!(
                    "{n},{},{},{},{},{}\n",
                    r.attempts, r.executed, r.solved, r.execution_rate, r.solution_rate
                ));
            }
            out
        }
    })
}
