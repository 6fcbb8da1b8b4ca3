//! Acceptance suite. Prints one PASS/FAIL line per criterion and a failure
//! count. `TBA_ACCEPTANCE_STRICT=1` makes any failure exit non-zero;
//! `TBA_ACCEPTANCE_QUICK=1` skips the training-based criteria 4-6.

mod common;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tba::agent::{Architecture, QNetwork, TrainConfig};
use tba::codec::dct::{dct2_8x8, idct2_8x8};
use tba::codec::encode_frame;
use tba::config::RunConfig;
use tba::dataset::{manifest_path, Split};
use tba::env::{Action, CacheSource, RewardParams, MAX_QP, MIN_QP};
use tba::eval::{self, table2, Summary};
use tba::pipeline;
use tba::synth::SynthSpec;

const TABLE2_SAVINGS: [f64; 3] = [43.1, 73.2, 58.5];
const SAVING_TOL_PP: f64 = 0.2;
const DCT_TOL: f64 = 1e-9;
const QP4_MSE_BOUND: f64 = 0.25 + 1e-6;
const MSE_MONOTONE_SLACK: f64 = 0.01;
const GRAD_TOL: f64 = 1e-4;
const GRAD_H: f64 = 1e-5;
const RETURN_RATIO: f64 = 0.9;
const TIME_BUDGET: Duration = Duration::from_secs(30 * 60);
const QP_GAP: f64 = 4.0;
const CORPUS_SEED: u64 = 2024;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn criterion1() -> Outcome {
    let report = table2();
    let mut got = Vec::new();
    let mut pass = true;
    for (row, want) in report.rows.iter().zip(TABLE2_SAVINGS) {
        let s = 100.0 * row.relative_saving().unwrap();
        pass &= (s - want).abs() <= SAVING_TOL_PP;
        got.push(format!("{} {s:.2}%", row.task));
    }
    outcome(pass, got.join(", "))
}

fn criterion2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut dct_err: f64 = 0.0;
    for _ in 0..1000 {
        let block: [f64; 64] = std::array::from_fn(|_| rng.gen_range(-255.0..255.0));
        let back = idct2_8x8(&dct2_8x8(&block).unwrap()).unwrap();
        for (a, b) in block.iter().zip(&back) {
            dct_err = dct_err.max((a - b).abs());
        }
    }

    let (inputs, cache) = common::corpus(CORPUS_SEED, 50, 576);
    let mut qp4_worst: f64 = 0.0;
    for input in &inputs {
        let grid = input.frame.grid();
        let coding = encode_frame(&input.frame, &vec![4; grid.total()]).unwrap();
        let mse = coding.ctus.iter().map(|c| c.mse).sum::<f64>() / grid.total() as f64;
        qp4_worst = qp4_worst.max(mse);
    }

    let mut rate_violations = 0;
    let mut mean_mse = vec![0.0; (MAX_QP - MIN_QP + 1) as usize];
    let mut count = 0usize;
    for f in &cache.manifest().frames {
        for c in 0..f.n_ctus() {
            count += 1;
            for qp in MIN_QP..=MAX_QP {
                let r = cache.get(&f.frame_id, c, qp).unwrap();
                mean_mse[(qp - MIN_QP) as usize] += r.mse;
                if qp <= 45 && cache.get(&f.frame_id, c, qp + 6).unwrap().bits > r.bits {
                    rate_violations += 1;
                }
            }
        }
    }
    mean_mse.iter_mut().for_each(|m| *m /= count as f64);
    let monotone = mean_mse
        .windows(2)
        .all(|w| w[1] >= w[0] * (1.0 - MSE_MONOTONE_SLACK));
    let pass = dct_err < DCT_TOL && qp4_worst <= QP4_MSE_BOUND && rate_violations == 0 && monotone;
    outcome(
        pass,
        format!(
            "DCT max err {dct_err:.1e}, worst QP4 frame MSE {qp4_worst:.4}, \
             bits(qp+6)>bits(qp) in {rate_violations} cases, mean MSE monotone {monotone}"
        ),
    )
}

fn criterion3() -> Outcome {
    let (mut worst, mut skipped) = (0.0f64, 0);
    for seed in 0..20 {
        let (err, s) = common::gradient_check(seed, GRAD_H);
        worst = worst.max(err);
        skipped += s;
    }
    outcome(
        worst < GRAD_TOL,
        format!(
            "max relative error {worst:.2e} over 20 instances \
             ({skipped} perturbations straddling a kink skipped)"
        ),
    )
}

fn acceptance_config(dir: &Path) -> RunConfig {
    RunConfig {
        seed: Some(CORPUS_SEED),
        corpus: dir.join("frames"),
        maps: dir.join("maps"),
        cache: dir.join("tba.csv"),
        model: dir.join("agent.tbaq"),
        reports: dir.join("reports"),
        lambda: 1.0,
        jobs: 1,
        ..Default::default()
    }
}

fn criteria4_5() -> (Outcome, Outcome) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = acceptance_config(dir.path());
    let start = Instant::now();
    pipeline::gen_maps(&cfg, &cfg.maps).unwrap();
    let cache = pipeline::build_dataset(&cfg).unwrap();
    pipeline::train_agent(&cfg).unwrap();
    let ev = pipeline::evaluate_run(&cfg).unwrap();
    let elapsed = start.elapsed();

    let params = pipeline::reward_params(&cfg, &cache).unwrap();
    let mean = |rs: &[eval::AllocationResult]| {
        rs.iter().map(|r| r.episode_return(&params)).sum::<f64>() / rs.len() as f64
    };
    let (agent, oracle) = (mean(&ev.proposed), mean(&ev.oracle));
    let ratio = agent / oracle;
    let c4 = outcome(
        ratio >= RETURN_RATIO && elapsed <= TIME_BUDGET,
        format!(
            "held-out mean return {agent:.3} vs oracle {oracle:.3} (ratio {ratio:.3}), \
             pipeline {:.0} s single-core",
            elapsed.as_secs_f64()
        ),
    );

    let test: Vec<_> = cache.manifest().frames_in(Split::Test);
    let (mut hi, mut lo) = (Vec::new(), Vec::new());
    for (entry, res) in test.iter().zip(&ev.proposed) {
        assert_eq!(entry.frame_id, res.frame_id);
        for (&m, &qp) in entry.mask_ratios.iter().zip(&res.qps) {
            if m > 0.5 {
                hi.push(qp as f64);
            } else if m < 0.05 {
                lo.push(qp as f64);
            }
        }
    }
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let gap = avg(&lo) - avg(&hi);
    let row = &ev.report.rows[0];
    let c5 = outcome(
        !hi.is_empty() && !lo.is_empty() && gap >= QP_GAP && row.proposed.dist < row.baseline.dist,
        format!(
            "mean QP {:.2} (mask > 0.5, {} CTUs) vs {:.2} (mask < 0.05, {} CTUs), gap {gap:.2}; \
             DIST {:.1}% vs Baseline {:.1}% at QP {}",
            avg(&hi),
            hi.len(),
            avg(&lo),
            lo.len(),
            100.0 * row.proposed.dist,
            100.0 * row.baseline.dist,
            row.baseline_qp.unwrap()
        ),
    );
    print!("{}", ev.report.to_text().unwrap());
    (c4, c5)
}

fn determinism_run(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let spec = SynthSpec::corpus(0, 12, 192);
    let spec_path = dir.join("spec.json");
    fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();
    let mut cfg = acceptance_config(dir);
    cfg.synth_spec = Some(spec_path);
    cfg.train.total_steps = 2000;
    pipeline::gen_maps(&cfg, &cfg.maps).unwrap();
    pipeline::build_dataset(&cfg).unwrap();
    pipeline::train_agent(&cfg).unwrap();
    pipeline::evaluate_run(&cfg).unwrap();
    [
        cfg.cache.clone(),
        manifest_path(&cfg.cache),
        cfg.model.clone(),
        cfg.train_log(),
        cfg.report_csv(),
        cfg.report_txt(),
        cfg.allocation_csv(),
    ]
    .iter()
    .map(|p| {
        let name = p.strip_prefix(dir).unwrap().display().to_string();
        (name, fs::read(p).unwrap())
    })
    .collect()
}

fn criterion6() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ra, rb) = (determinism_run(a.path()), determinism_run(b.path()));
    let differing: Vec<&str> = ra
        .iter()
        .zip(&rb)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let names: Vec<&str> = ra.iter().map(|x| x.0.as_str()).collect();
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("identical: {}", names.join(", "))
        } else {
            format!("differ: {}", differing.join(", "))
        },
    )
}

fn criterion7() -> Outcome {
    let (inputs, cache) = common::corpus(CORPUS_SEED, 4, 256);
    let frames = common::contexts(&inputs);
    let params = RewardParams::new(1.0, cache.manifest().distortion_scale).unwrap();
    let zero = QNetwork::zeros(Architecture::default());
    let src = CacheSource(&cache);
    let agent = eval::agent_run(&zero, &frames, &src, params).unwrap();
    let anchor = eval::fixed_qp_run(&frames, &src, 22).unwrap();
    let rewards_zero = agent
        .iter()
        .flat_map(|r| r.ctus.iter().zip(&r.anchor))
        .all(|(c, a)| tba::env::reward(a.bpp, c.bpp, c.wdist, a.wdist, &params) == 0.0);
    let br = Summary::of(&agent)
        .unwrap()
        .scores(params.distortion_scale)
        .br;
    let br_text = format!("{:.1}", 100.0 * br);
    let identical = agent == anchor;

    let bijection = (MIN_QP..=MAX_QP).all(|qp| {
        let a = Action::from_qp(qp).unwrap();
        a.qp() == qp && Action::from_index(a.index()).unwrap() == a
    }) && (0..30).all(|i| Action::from_index(i).unwrap().index() == i);
    let tc = TrainConfig::default();
    let eps = tc.epsilon();
    let endpoints = eps.at(0) == tc.epsilon_start
        && eps.at(tc.epsilon_decay_steps) == tc.epsilon_end
        && eps.at(10 * tc.epsilon_decay_steps) == tc.epsilon_end;
    outcome(
        identical && rewards_zero && br_text == "0.0" && bijection && endpoints,
        format!(
            "zero agent equals QP 22 anchor: {identical}, all rewards 0: {rewards_zero}, \
             BR {br_text}%, bijection {bijection}, epsilon endpoints {endpoints}"
        ),
    )
}

fn report(n: u32, name: &str, res: Option<Outcome>) -> bool {
    match res {
        Some(o) => {
            println!(
                "criterion {n} ({name}): {} | {}",
                if o.pass { "PASS" } else { "FAIL" },
                o.detail
            );
            o.pass
        }
        None => {
            println!("criterion {n} ({name}): SKIPPED | TBA_ACCEPTANCE_QUICK set");
            true
        }
    }
}

fn main() {
    let quick = std::env::var_os("TBA_ACCEPTANCE_QUICK").is_some_and(|v| v != "0");
    let mut failed = 0;
    let mut tally = |pass: bool| failed += usize::from(!pass);
    tally(report(1, "relative-saving arithmetic", Some(criterion1())));
    tally(report(2, "codec correctness", Some(criterion2())));
    tally(report(3, "gradient oracle", Some(criterion3())));
    let (c4, c5) = if quick {
        (None, None)
    } else {
        let (a, b) = criteria4_5();
        (Some(a), Some(b))
    };
    tally(report(4, "bandit-oracle equivalence", c4));
    tally(report(5, "behavioral allocation", c5));
    tally(report(6, "pipeline determinism", (!quick).then(criterion6)));
    tally(report(7, "anchor identities", Some(criterion7())));
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        if std::env::var_os("TBA_ACCEPTANCE_STRICT").is_some_and(|v| v != "0") {
            std::process::exit(1);
        }
    }
}
