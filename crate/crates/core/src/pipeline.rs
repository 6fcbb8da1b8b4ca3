//! The five pipeline commands over a [`RunConfig`]. Every output file is
//! written atomically.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::agent::{load_model, save_model, train, train::write_log, Architecture, TrainOutcome};
use crate::config::RunConfig;
use crate::dataset::{
    self, build_cache, importance_path, instance_path, load_cache, load_entry, load_frame_input,
    save_cache, Split, TbaCache,
};
use crate::env::{CacheSource, FrameContext, LiveSource, RewardParams, MAX_QP, MIN_QP};
use crate::error::{Error, Result};
use crate::eval::{self, AllocationResult, Evaluation};
use crate::synth::{synth_frame, synth_maps, SynthSpec};

/// Runs `f` on a pool of `jobs` threads (0 = all cores).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn parent_dir(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

/// The synthetic spec of a run: the configured file, or the default
/// 200-frame 576x576 corpus; its seed is always the run seed.
pub fn synth_spec(cfg: &RunConfig) -> Result<SynthSpec> {
    let seed = cfg.seed()?;
    let mut spec = match &cfg.synth_spec {
        Some(p) => SynthSpec::load(p)?,
        None => SynthSpec::corpus(seed, 200, 576),
    };
    spec.seed = seed;
    spec.validate()?;
    Ok(spec)
}

/// Writes importance/instance maps into `maps_dir`, and frames into
/// `cfg.corpus` when the spec asks for them. Returns the entry count.
pub fn gen_maps(cfg: &RunConfig, maps_dir: &Path) -> Result<usize> {
    let spec = synth_spec(cfg)?;
    create_dir(maps_dir)?;
    if spec.with_frames {
        create_dir(&cfg.corpus)?;
    }
    with_jobs(cfg.jobs, || {
        (0..spec.count).into_par_iter().try_for_each(|i| {
            let id = spec.entry_id(i);
            let maps = synth_maps(&spec, i)?;
            crate::pgm::write(&importance_path(maps_dir, &id), &maps.importance.to_gray())?;
            crate::pgm::write(&instance_path(maps_dir, &id), &maps.instances.to_gray())?;
            if spec.with_frames {
                let frame = synth_frame(&spec, i)?;
                crate::pgm::write(&cfg.corpus.join(format!("{id}.pgm")), &frame.to_gray())?;
            }
            Ok(())
        })
    })?;
    log::info!("wrote {} map pairs to {}", spec.count, maps_dir.display());
    Ok(spec.count)
}

/// Encodes the corpus over the QP range, splits it and saves the cache.
pub fn build_dataset(cfg: &RunConfig) -> Result<TbaCache> {
    cfg.validate()?;
    let cache = build_cache(&cfg.corpus, &cfg.maps, cfg.qp_min, cfg.qp_max, cfg.jobs)?;
    let cache = match &cfg.task_distortion {
        Some(p) => dataset::ingest_task_distortion(cache, p)?,
        None => cache,
    };
    let cache = dataset::split(cache, cfg.train_fraction, cfg.seed()?)?;
    parent_dir(&cfg.cache)?;
    save_cache(&cache, &cfg.cache)?;
    log::info!(
        "cache {}: {} frames, {} records, distortion scale {:.6}",
        cfg.cache.display(),
        cache.manifest().frames.len(),
        cache.len(),
        cache.manifest().distortion_scale
    );
    Ok(cache)
}

/// Cache must hold every action QP for the environment to look up.
fn check_action_range(cache: &TbaCache) -> Result<()> {
    let m = cache.manifest();
    if m.qp_lo > MIN_QP || m.qp_hi < MAX_QP {
        return Err(Error::config(format!(
            "cache covers QP {}..={} but the agent needs {MIN_QP}..={MAX_QP}",
            m.qp_lo, m.qp_hi
        )));
    }
    Ok(())
}

pub fn reward_params(cfg: &RunConfig, cache: &TbaCache) -> Result<RewardParams> {
    let scale = cfg
        .distortion_scale
        .unwrap_or(cache.manifest().distortion_scale);
    RewardParams::new(cfg.lambda, scale).map_err(|e| Error::config(e.to_string()))
}

/// Reloads frames of one split (all frames for `None`) in manifest order.
pub fn load_contexts(cache: &TbaCache, split: Option<Split>) -> Result<Vec<FrameContext>> {
    cache
        .manifest()
        .frames
        .par_iter()
        .filter(|f| split.is_none() || f.split == split)
        .map(|f| {
            let input = load_entry(f)?;
            FrameContext::new(input.frame, input.maps)
        })
        .collect()
}

/// Trains on the cache's train split; saves the model and the log.
pub fn train_agent(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let cache = load_cache(&cfg.cache)?;
    check_action_range(&cache)?;
    let params = reward_params(cfg, &cache)?;
    let frames = with_jobs(cfg.jobs, || load_contexts(&cache, Some(Split::Train)))?;
    if frames.is_empty() {
        return Err(Error::config(format!(
            "cache {} has no training frames",
            cfg.cache.display()
        )));
    }
    let tc = cfg.train_config()?;
    log::info!(
        "training on {} frames for {} steps (lambda {}, distortion scale {:.6})",
        frames.len(),
        tc.total_steps,
        params.lambda,
        params.distortion_scale
    );
    let outcome = train(&cache, &frames, params, Architecture::default(), &tc)?;
    parent_dir(&cfg.model)?;
    save_model(&outcome.net, &cfg.model)?;
    create_dir(&cfg.reports)?;
    write_log(&outcome.log, &cfg.train_log())?;
    Ok(outcome)
}

/// Greedy allocation of arbitrary frames, encoded live. Maps are looked up
/// in `cfg.maps` by frame id. Writes the allocation dump to `out`.
pub fn allocate_frames(
    cfg: &RunConfig,
    frames: &[PathBuf],
    out: &Path,
) -> Result<Vec<AllocationResult>> {
    if frames.is_empty() {
        return Err(Error::config("allocate needs at least one frame"));
    }
    let net = load_model(&cfg.model)?;
    eval::check_model(&net)?;
    let contexts = frames
        .iter()
        .map(|p| {
            let id = crate::codec::frame::frame_id_from_path(p);
            let inst = instance_path(&cfg.maps, &id);
            let input = load_frame_input(p, &importance_path(&cfg.maps, &id), Some(&inst))?;
            FrameContext::new(input.frame, input.maps)
        })
        .collect::<Result<Vec<_>>>()?;
    // the scale only shapes rewards, which allocation does not report
    let params = RewardParams::new(cfg.lambda, cfg.distortion_scale.unwrap_or(1.0))
        .map_err(|e| Error::config(e.to_string()))?;
    let results = with_jobs(cfg.jobs, || {
        eval::agent_run(&net, &contexts, &LiveSource, params)
    })?;
    parent_dir(out)?;
    eval::write_allocations(&results, out)?;
    Ok(results)
}

/// Agent, oracle, anchor and both baselines on the held-out split. Writes
/// the report (text and CSV) and the agent's allocation dump.
pub fn evaluate_run(cfg: &RunConfig) -> Result<Evaluation> {
    cfg.validate()?;
    let cache = load_cache(&cfg.cache)?;
    check_action_range(&cache)?;
    let params = reward_params(cfg, &cache)?;
    let net = load_model(&cfg.model)?;
    let evaluation = with_jobs(cfg.jobs, || {
        let frames = load_contexts(&cache, Some(Split::Test))?;
        if frames.is_empty() {
            return Err(Error::config(format!(
                "cache {} has no held-out frames",
                cfg.cache.display()
            )));
        }
        eval::evaluate(&cfg.task, &net, &frames, &CacheSource(&cache), params)
    })?;
    create_dir(&cfg.reports)?;
    crate::io::write_string_atomic(&cfg.report_txt(), &evaluation.report.to_text()?)?;
    crate::io::write_string_atomic(&cfg.report_csv(), &evaluation.report.to_csv()?)?;
    eval::write_allocations(&evaluation.proposed, &cfg.allocation_csv())?;
    Ok(evaluation)
}
