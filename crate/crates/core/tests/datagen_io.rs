use std::collections::BTreeSet;

use kinegen::datagen::*;
use kinegen::scene::AssetLibrary;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn small_opts(seed: u64, jobs: usize) -> CollectOptions {
    CollectOptions {
        runs: 2,
        episodes_per_run: 3,
        seed,
        jobs,
        episode: EpisodeOptions {
            points: 128,
            ..Default::default()
        },
    }
}

fn run(name: &str, opts: &CollectOptions) -> (CollectionReport, Vec<Episode>) {
    let lib = AssetLibrary::bundled();
    let b = TaskBundle::bundled(name).unwrap();
    let base = b.base_scene(&lib).unwrap();
    collect(&b.spec, &b.config, &base, &lib, &b.setup.randomization, opts).unwrap()
}

#[test]
fn dataset_round_trip() {
    let (report, episodes) = run("open-box", &small_opts(3, 2));
    assert!(!episodes.is_empty());
    assert_eq!(report.per_run_rates.len(), 2);
    let dir = tempfile::tempdir().unwrap();
    let m = write_dataset(&episodes, dir.path()).unwrap();
    assert_eq!(read_manifest(dir.path()).unwrap(), m);
    assert_eq!(read_dataset(dir.path()).unwrap(), episodes);

    let files = walk(dir.path()).into_iter().filter(|p| p.extension().is_some_and(|e| e == "episode")).count();
    assert_eq!(files, m.tasks.values().map(|t| t.episodes).sum::<usize>());
    let seeds: BTreeSet<u64> = m.tasks["open-box"].seeds.iter().copied().collect();
    assert_eq!(seeds.len(), episodes.len());
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn corrupted_files_are_rejected() {
    let (_, episodes) = run("open-box", &small_opts(4, 1));
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&episodes[..1], dir.path()).unwrap();
    let path = episode_path(dir.path(), "open-box", episodes[0].seed);

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(read_episode(&path), Err(DatagenError::Corrupt { .. })));

    let mut bytes = encode_episode(&episodes[0]);
    bytes[4] = 9;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(read_episode(&path), Err(DatagenError::FormatVersionMismatch { found: 9, .. })));

    let m = std::fs::read_to_string(dir.path().join("manifest.yaml")).unwrap();
    std::fs::write(dir.path().join("manifest.yaml"), m.replace("format_version: 1", "format_version: 2")).unwrap();
    assert!(matches!(read_manifest(dir.path()), Err(DatagenError::FormatVersionMismatch { found: 2, .. })));
}

#[test]
fn worker_count_does_not_change_output() {
    let a = run("close-drawer", &small_opts(21, 1));
    let b = run("close-drawer", &small_opts(21, 8));
    assert_eq!(a, b);
    let bytes = |eps: &[Episode]| eps.iter().flat_map(encode_episode).collect::<Vec<u8>>();
    assert_eq!(bytes(&a.1), bytes(&b.1));
}

#[test]
fn different_master_seeds_differ() {
    let a = run("open-box", &small_opts(1, 0));
    let b = run("open-box", &small_opts(2, 0));
    assert_ne!(a.1, b.1);
}

#[test]
fn randomization_offsets_are_uniform() {
    let lib = AssetLibrary::bundled();
    let b = TaskBundle::bundled("open-drawer").unwrap();
    let base = b.base_scene(&lib).unwrap();
    let spec = RandomizationSpec::default();
    let (xy, _) = spec.effective_ranges();
    let (name, o0) = base.sole_object().unwrap();
    let x0 = o0.base_pose.translation.x;

    let bins = 10usize;
    let n = 5000usize;
    let mut counts = vec![0usize; bins];
    for s in 0..n {
        let sc = randomize(&base, &lib, &spec, episode_seed(99, 0, s)).unwrap();
        let dx = sc.objects[name].base_pose.translation.x - x0;
        assert!(dx.abs() <= xy + 1e-12);
        let k = (((dx + xy) / (2.0 * xy)) * bins as f64).floor() as usize;
        counts[k.min(bins - 1)] += 1;
    }
    let expected = n as f64 / bins as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(chi2);
    assert!(p > 1e-3, "chi2 {chi2} p {p} counts {counts:?}");
}

#[test]
fn hard_mode_halves_ranges() {
    let lib = AssetLibrary::bundled();
    let b = TaskBundle::bundled("open-box").unwrap();
    let base = b.base_scene(&lib).unwrap();
    let spec = RandomizationSpec {
        hard: true,
        ..Default::default()
    };
    let (xy, yaw) = spec.effective_ranges();
    let (name, o0) = base.sole_object().unwrap();
    for s in 0..200 {
        let sc = randomize(&base, &lib, &spec, s).unwrap();
        let o = &sc.objects[name];
        let d = o.base_pose.translation - o0.base_pose.translation;
        assert!(d.x.abs() <= xy + 1e-12 && d.y.abs() <= xy + 1e-12 && d.z == 0.0);
        let angle = o.base_pose.rotation.angle_to(o0.base_pose.rotation);
        assert!(angle <= yaw + 1e-9);
        assert!(o.asset.joint.within_limits(o.joint_value));
    }
}
