use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn kinegen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kinegen"))
        .args(args)
        .current_dir(root())
        .env_remove("KINEGEN_LLM_URL")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn solve_prints_a_satisfied_solution() {
    let o = kinegen(&["solve", "fixtures/close_drawer.yaml", "fixtures/drawer_scene.yaml", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_yaml::Value = serde_yaml::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["satisfied"], serde_yaml::Value::Bool(true));
    assert_eq!(v["pose"].as_sequence().unwrap().len(), 7);
    assert_eq!(v["residuals"].as_sequence().unwrap().len(), 3);
    assert!(v["wall_time_s"].as_f64().is_some());
}

#[test]
fn infeasible_solve_exits_one() {
    let o = kinegen(&["solve", "fixtures/jam_lid_solver.yaml", "fixtures/box_scene.yaml", "--restarts", "4"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error: solve"));
    let v: serde_yaml::Value = serde_yaml::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["satisfied"], serde_yaml::Value::Bool(false));
}

#[test]
fn collect_reports_are_reproducible() {
    let args = ["collect", "open-box", "--runs", "2", "--episodes", "4", "--seed", "7", "--points", "128"];
    let a = kinegen(&args);
    let b = kinegen(&args);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let mut more = args.to_vec();
    more.extend(["--jobs", "3", "--format", "csv"]);
    let c = kinegen(&more);
    assert!(stdout(&c).starts_with("task,seed,run,episodes,success_rate\n"));
}

#[test]
fn collect_writes_a_replayable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = kinegen(&["collect", "close-drawer", "--runs", "1", "--episodes", "2", "--seed", "5", "--points", "64", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = std::fs::read_to_string(dir.path().join("manifest.yaml")).unwrap();
    assert!(m.contains("close-drawer"));
    let ep = std::fs::read_dir(dir.path().join("close-drawer")).unwrap().next().unwrap().unwrap().path();
    let r = kinegen(&["replay", ep.to_str().unwrap(), "--csv"]);
    assert_eq!(r.status.code(), Some(0), "{}", stderr(&r));
    let text = stdout(&r);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "step,tx,ty,tz,qw,qx,qy,qz,gripper_width,drawer");
    let rows: Vec<&str> = lines.collect();
    assert!(rows.len() > 10);
    assert!(rows.iter().all(|r| r.split(',').count() == 10));
}

#[test]
fn bad_manifest_is_rejected() {
    let o = kinegen(&["assets", "validate", "fixtures/bad_manifest.yaml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("exactly one unfixed joint"));
    let ok = kinegen(&["assets", "validate", "assets/manifest.yaml"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(stdout(&ok).starts_with("ok:"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(kinegen(&["--frobnicate"]).status.code(), Some(2));
    assert_eq!(kinegen(&["solve"]).status.code(), Some(2));
    assert_eq!(kinegen(&["task", "propose", "--backend", "carrier-pigeon"]).status.code(), Some(2));
    assert_eq!(kinegen(&["collect", "open-box", "--format", "xml"]).status.code(), Some(2));
    assert_eq!(kinegen(&["--help"]).status.code(), Some(0));
    assert_eq!(kinegen(&["collect", "--help"]).status.code(), Some(0));
}

#[test]
fn agent_commands_with_fixture_backend() {
    let p = kinegen(&["task", "propose", "--empty-library", "--backend", "fixture:fixtures/agent/propose_close_drawer"]);
    assert_eq!(p.status.code(), Some(0), "{}", stderr(&p));
    assert!(stdout(&p).contains("\"task-name\": \"close-drawer\""));

    let dup = kinegen(&["task", "propose", "--backend", "fixture:fixtures/agent/propose_duplicate"]);
    assert_eq!(dup.status.code(), Some(1));
    assert!(stderr(&dup).contains("already exists"));

    let d = kinegen(&["task", "decompose", "fixtures/close_drawer_task.txt", "--backend", "fixture:fixtures/agent/decompose_five"]);
    assert_eq!(d.status.code(), Some(0));
    assert_eq!(stdout(&d).matches("\"task-name\"").count(), 6);
    let six = kinegen(&["task", "decompose", "fixtures/close_drawer_task.txt", "--backend", "fixture:fixtures/agent/decompose_six"]);
    assert_eq!(six.status.code(), Some(1));

    let args = ["solver", "gen", "fixtures/tasks/open-box/task.txt", "--backend", "fixture:fixtures/agent/reject_third", "--seed", "11"];
    let g = kinegen(&args);
    assert_eq!(g.status.code(), Some(0), "{}", stderr(&g));
    assert!(stderr(&g).contains("accepted after 3 attempt(s)"));
    assert_eq!(kinegen(&args).stdout, g.stdout);

    let never = kinegen(&["solver", "gen", "fixtures/tasks/open-box/task.txt", "--backend", "fixture:fixtures/agent/reject_never"]);
    assert_eq!(never.status.code(), Some(1));

    let c = kinegen(&["task", "compose", "fixtures/chain_scene.yaml", "--backend", "fixture:fixtures/agent/compose_ok"]);
    assert_eq!(c.status.code(), Some(0), "{}", stderr(&c));
    assert!(stdout(&c).contains("# success=true"));
}

#[test]
fn http_backend_without_configuration_fails_cleanly() {
    let o = kinegen(&["task", "decompose", "fixtures/close_drawer_task.txt", "--backend", "http"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("KINEGEN_LLM_URL"));
}

#[test]
fn stats_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("records.yaml");
    let mut text = String::new();
    for i in 0..18 {
        let (e, s) = if i < 14 { (true, true) } else if i < 17 { (true, false) } else { (false, false) };
        text.push_str(&format!("- {{task_name: t{}, executed: {e}, solved: {s}}}\n", i % 2));
    }
    std::fs::write(&p, text).unwrap();
    let y = kinegen(&["stats", p.to_str().unwrap()]);
    assert_eq!(y.status.code(), Some(0));
    let v: serde_yaml::Value = serde_yaml::from_str(&stdout(&y)).unwrap();
    assert_eq!(v["all"]["attempts"].as_u64(), Some(18));
    assert!((v["all"]["solution_rate"].as_f64().unwrap() - 14.0 / 18.0).abs() < 1e-12);
    let c = kinegen(&["stats", p.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(stdout(&c).lines().count(), 4);

    std::fs::write(&p, "not: [a list").unwrap();
    assert_eq!(kinegen(&["stats", p.to_str().unwrap()]).status.code(), Some(1));
}
