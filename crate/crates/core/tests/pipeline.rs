use std::fs;
use std::path::Path;

use tba::config::RunConfig;
use tba::dataset::{load_cache, manifest_path, Split};
use tba::pipeline;
use tba::synth::SynthSpec;
use tba::Error;

fn small_config(dir: &Path, seed: u64) -> RunConfig {
    let spec = SynthSpec::corpus(0, 5, 128);
    let spec_path = dir.join("spec.json");
    fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();
    let mut cfg = RunConfig {
        seed: Some(seed),
        corpus: dir.join("frames"),
        maps: dir.join("maps"),
        cache: dir.join("cache/tba.csv"),
        model: dir.join("agent.tbaq"),
        reports: dir.join("reports"),
        synth_spec: Some(spec_path),
        jobs: 1,
        ..Default::default()
    };
    cfg.train.total_steps = 40;
    cfg.train.warmup = 10;
    cfg.train.batch_size = 4;
    cfg.train.epsilon_decay_steps = 30;
    cfg
}

fn run_all(cfg: &RunConfig) {
    pipeline::gen_maps(cfg, &cfg.maps).unwrap();
    pipeline::build_dataset(cfg).unwrap();
    pipeline::train_agent(cfg).unwrap();
    pipeline::evaluate_run(cfg).unwrap();
}

#[test]
fn end_to_end_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 11);
    run_all(&cfg);
    for p in [
        cfg.cache.clone(),
        manifest_path(&cfg.cache),
        cfg.model.clone(),
        cfg.train_log(),
        cfg.report_csv(),
        cfg.report_txt(),
        cfg.allocation_csv(),
    ] {
        assert!(p.is_file(), "{}", p.display());
    }
    let cache = load_cache(&cfg.cache).unwrap();
    assert_eq!(cache.manifest().frames.len(), 5);
    assert_eq!(cache.manifest().frames_in(Split::Train).len(), 4);
    // 128x128 frames: 4 CTUs, one held-out frame
    let dump = fs::read_to_string(cfg.allocation_csv()).unwrap();
    assert_eq!(dump.lines().count(), 1 + 4);
    let log = fs::read_to_string(cfg.train_log()).unwrap();
    assert!(log.starts_with("step,epsilon,loss,mean_return\n"));
    assert_eq!(log.lines().count(), 1 + 10);
}

#[test]
fn stored_paths_are_relative_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 2);
    pipeline::gen_maps(&cfg, &cfg.maps).unwrap();
    pipeline::build_dataset(&cfg).unwrap();
    let manifest = fs::read_to_string(manifest_path(&cfg.cache)).unwrap();
    assert!(!manifest.contains(dir.path().to_str().unwrap()));
    assert!(manifest.contains("../frames/synth_0000.pgm"));
    let cache = load_cache(&cfg.cache).unwrap();
    let frames = pipeline::load_contexts(&cache, None).unwrap();
    assert_eq!(frames.len(), 5);
}

#[test]
fn untrained_model_reports_anchor() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 4);
    pipeline::gen_maps(&cfg, &cfg.maps).unwrap();
    pipeline::build_dataset(&cfg).unwrap();
    tba::agent::save_model(
        &tba::agent::QNetwork::zeros(tba::agent::Architecture::default()),
        &cfg.model,
    )
    .unwrap();
    cfg.task = "zero".into();
    let ev = pipeline::evaluate_run(&cfg).unwrap();
    let cells = ev.report.cells().unwrap();
    assert_eq!(cells[0][1], "0.0");
    assert_eq!(cells[0][2], "0.0");
    assert!(ev.proposed.iter().all(|r| r.qps.iter().all(|&q| q == 22)));
}

#[test]
fn allocate_writes_one_row_per_ctu() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 5);
    pipeline::gen_maps(&cfg, &cfg.maps).unwrap();
    tba::agent::save_model(
        &tba::agent::QNetwork::new(Default::default(), 1),
        &cfg.model,
    )
    .unwrap();
    let frames = vec![
        cfg.corpus.join("synth_0001.pgm"),
        cfg.corpus.join("synth_0003.pgm"),
    ];
    let out = dir.path().join("alloc.csv");
    let res = pipeline::allocate_frames(&cfg, &frames, &out).unwrap();
    assert_eq!(res.len(), 2);
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 1 + 8);
}

#[test]
fn missing_inputs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 6);
    cfg.seed = None;
    assert!(matches!(
        pipeline::build_dataset(&cfg),
        Err(Error::Config(_))
    ));
    cfg.seed = Some(6);
    pipeline::gen_maps(&cfg, &cfg.maps).unwrap();
    fs::remove_file(cfg.maps.join("synth_0002.importance.pgm")).unwrap();
    let err = pipeline::build_dataset(&cfg).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert!(!cfg.cache.exists());
}

#[test]
fn narrow_qp_range_cannot_train() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 7);
    cfg.qp_min = 20;
    cfg.qp_max = 40;
    pipeline::gen_maps(&cfg, &cfg.maps).unwrap();
    pipeline::build_dataset(&cfg).unwrap();
    assert!(matches!(pipeline::train_agent(&cfg), Err(Error::Config(_))));
}
