//! Evaluation against fixed-QP encodes: anchor, equivalent-rate and
//! equivalent-distortion baselines, the brute-force oracle, and the
//! BR/DIST report.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::agent::{argmax, Architecture, QNetwork};
use crate::codec::CTU_PIXELS;
use crate::dataset::ANCHOR_QP;
use crate::env::{
    reward, run_episode, Action, FrameContext, Measurement, RateSource, RewardParams, GLOBAL_DIM,
    LOCAL_CHANNELS, MAX_QP, MIN_QP, N_ACTIONS,
};
use crate::error::{Error, Result};

/// One frame encoded with a per-CTU QP allocation, next to its anchor encode.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    pub frame_id: String,
    pub qps: Vec<u8>,
    pub ctus: Vec<Measurement>,
    pub anchor: Vec<Measurement>,
    pub total_bits: u64,
    pub bpp: f64,
    /// Mean CTU weighted distortion.
    pub wdist: f64,
    pub anchor_bpp: f64,
    pub anchor_wdist: f64,
}

impl AllocationResult {
    /// Bit-rate reduction relative to the anchor.
    pub fn br_fraction(&self) -> f64 {
        if self.anchor_bpp > 0.0 {
            1.0 - self.bpp / self.anchor_bpp
        } else {
            0.0
        }
    }

    /// Undiscounted episode return of this allocation.
    pub fn episode_return(&self, params: &RewardParams) -> f64 {
        self.ctus
            .iter()
            .zip(&self.anchor)
            .map(|(c, a)| reward(a.bpp, c.bpp, c.wdist, a.wdist, params))
            .sum()
    }
}

/// Measures `qps` (one per CTU, raster order) on `ctx`.
pub fn allocate(
    ctx: &FrameContext,
    source: &dyn RateSource,
    qps: &[u8],
) -> Result<AllocationResult> {
    let n = ctx.n_ctus();
    if qps.len() != n {
        return Err(Error::domain(format!(
            "{} QPs for {} CTUs in frame {}",
            qps.len(),
            n,
            ctx.frame_id()
        )));
    }
    let mut ctus = Vec::with_capacity(n);
    let mut anchor = Vec::with_capacity(n);
    for (i, &qp) in qps.iter().enumerate() {
        if !(MIN_QP..=MAX_QP).contains(&qp) {
            return Err(Error::domain(format!(
                "QP {qp} outside {MIN_QP}..={MAX_QP}"
            )));
        }
        let a = source.measure(ctx, i, ANCHOR_QP)?;
        ctus.push(if qp == ANCHOR_QP {
            a
        } else {
            source.measure(ctx, i, qp)?
        });
        anchor.push(a);
    }
    let pixels = (n * CTU_PIXELS) as f64;
    let total_bits = ctus.iter().map(|m| m.bits).sum();
    let anchor_bits: u64 = anchor.iter().map(|m| m.bits).sum();
    Ok(AllocationResult {
        frame_id: ctx.frame_id().to_string(),
        qps: qps.to_vec(),
        total_bits,
        bpp: total_bits as f64 / pixels,
        wdist: ctus.iter().map(|m| m.wdist).sum::<f64>() / n as f64,
        anchor_bpp: anchor_bits as f64 / pixels,
        anchor_wdist: anchor.iter().map(|m| m.wdist).sum::<f64>() / n as f64,
        ctus,
        anchor,
    })
}

pub fn fixed_qp_run(
    frames: &[FrameContext],
    source: &dyn RateSource,
    qp: u8,
) -> Result<Vec<AllocationResult>> {
    frames
        .par_iter()
        .map(|ctx| allocate(ctx, source, &vec![qp; ctx.n_ctus()]))
        .collect()
}

/// Fails with a configuration error unless `net` consumes the environment's state.
pub fn check_model(net: &QNetwork) -> Result<()> {
    let a = net.architecture();
    let want = Architecture::default();
    if a.input_side != want.input_side
        || a.input_channels != LOCAL_CHANNELS
        || a.global_dim != GLOBAL_DIM
        || a.actions != N_ACTIONS
    {
        return Err(Error::config(format!(
            "model expects {}x{}x{} local input, {} globals and {} actions; \
             the environment provides {}x{}x{LOCAL_CHANNELS}, {GLOBAL_DIM} and {N_ACTIONS}",
            a.input_side,
            a.input_side,
            a.input_channels,
            a.global_dim,
            a.actions,
            want.input_side,
            want.input_side
        )));
    }
    Ok(())
}

/// Greedy (epsilon = 0) allocation by `net`.
pub fn agent_run(
    net: &QNetwork,
    frames: &[FrameContext],
    source: &dyn RateSource,
    params: RewardParams,
) -> Result<Vec<AllocationResult>> {
    check_model(net)?;
    frames
        .par_iter()
        .map(|ctx| {
            let ep = run_episode(ctx, source, params, |s| {
                Action::from_index(argmax(&net.forward(s)?))
            })?;
            allocate(ctx, source, &ep.qps)
        })
        .collect()
}

/// Per-CTU reward maximizer over all 30 QPs; ties go to the lower QP.
pub fn oracle_allocation(
    frames: &[FrameContext],
    source: &dyn RateSource,
    params: RewardParams,
) -> Result<Vec<AllocationResult>> {
    frames
        .par_iter()
        .map(|ctx| {
            let mut qps = Vec::with_capacity(ctx.n_ctus());
            for i in 0..ctx.n_ctus() {
                let a = source.measure(ctx, i, ANCHOR_QP)?;
                let mut best = (f64::NEG_INFINITY, ANCHOR_QP);
                for qp in MIN_QP..=MAX_QP {
                    let c = source.measure(ctx, i, qp)?;
                    let r = reward(a.bpp, c.bpp, c.wdist, a.wdist, &params);
                    if r > best.0 {
                        best = (r, qp);
                    }
                }
                qps.push(best.1);
            }
            allocate(ctx, source, &qps)
        })
        .collect()
}

/// Corpus means over a set of frame results.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub frames: usize,
    pub bpp: f64,
    pub wdist: f64,
    pub anchor_bpp: f64,
    pub anchor_wdist: f64,
    pub mean_qp: f64,
}

impl Summary {
    pub fn of(results: &[AllocationResult]) -> Result<Self> {
        if results.is_empty() {
            return Err(Error::domain("no frames to summarize"));
        }
        let n = results.len() as f64;
        let mean = |f: fn(&AllocationResult) -> f64| results.iter().map(f).sum::<f64>() / n;
        let (qp_sum, qp_n) = results.iter().fold((0u64, 0usize), |(s, c), r| {
            (
                s + r.qps.iter().map(|&q| q as u64).sum::<u64>(),
                c + r.qps.len(),
            )
        });
        Ok(Summary {
            frames: results.len(),
            bpp: mean(|r| r.bpp),
            wdist: mean(|r| r.wdist),
            anchor_bpp: mean(|r| r.anchor_bpp),
            anchor_wdist: mean(|r| r.anchor_wdist),
            mean_qp: qp_sum as f64 / qp_n.max(1) as f64,
        })
    }

    /// BR is the corpus bit-rate reduction against the anchor; DIST is the
    /// mean weighted-distortion excess over the anchor divided by `scale`.
    pub fn scores(&self, distortion_scale: f64) -> Scores {
        Scores {
            br: if self.anchor_bpp > 0.0 {
                1.0 - self.bpp / self.anchor_bpp
            } else {
                0.0
            },
            dist: (self.wdist - self.anchor_wdist) / distortion_scale,
        }
    }
}

/// BR and DIST as fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub br: f64,
    pub dist: f64,
}

/// All 30 fixed-QP runs.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub entries: Vec<(u8, Summary)>,
}

pub fn fixed_qp_sweep(frames: &[FrameContext], source: &dyn RateSource) -> Result<Sweep> {
    let entries = (MIN_QP..=MAX_QP)
        .map(|qp| Ok((qp, Summary::of(&fixed_qp_run(frames, source, qp)?)?)))
        .collect::<Result<_>>()?;
    Ok(Sweep { entries })
}

impl Sweep {
    fn closest(
        &self,
        key: impl Fn(&Summary) -> f64,
        target: f64,
        prefer_high: bool,
    ) -> (u8, Summary) {
        let mut best = self.entries[0];
        for &(qp, s) in &self.entries[1..] {
            let (d, db) = ((key(&s) - target).abs(), (key(&best.1) - target).abs());
            if d < db || (d == db && prefer_high) {
                best = (qp, s);
            }
        }
        best
    }
}

/// Fixed QP whose corpus mean bpp is closest to `target_bpp`; ties go to the lower QP.
pub fn find_equivalent_rate_baseline(sweep: &Sweep, target_bpp: f64) -> (u8, Summary) {
    sweep.closest(|s| s.bpp, target_bpp, false)
}

/// Fixed QP whose corpus mean weighted distortion is closest to
/// `target_wdist`; ties go to the higher QP.
pub fn find_equivalent_distortion_baseline(sweep: &Sweep, target_wdist: f64) -> (u8, Summary) {
    sweep.closest(|s| s.wdist, target_wdist, true)
}

/// Extra bit-rate saving of the proposed scheme over a baseline, relative
/// to what the baseline still spends.
pub fn relative_saving(br_proposed: f64, br_baseline: f64) -> Result<f64> {
    if !br_baseline.is_finite() || br_baseline >= 1.0 || !br_proposed.is_finite() {
        return Err(Error::domain(format!(
            "relative saving undefined for proposed {br_proposed}, baseline {br_baseline}"
        )));
    }
    Ok((br_proposed - br_baseline) / (1.0 - br_baseline))
}

/// One row of the BR/DIST table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub task: String,
    pub proposed: Scores,
    pub baseline: Scores,
    pub baseline_star: Scores,
    pub baseline_qp: Option<u8>,
    pub baseline_star_qp: Option<u8>,
    pub oracle: Option<Scores>,
    pub proposed_return: Option<f64>,
    pub oracle_return: Option<f64>,
}

impl ReportRow {
    pub fn new(task: &str, proposed: Scores, baseline: Scores, baseline_star: Scores) -> Self {
        ReportRow {
            task: task.to_string(),
            proposed,
            baseline,
            baseline_star,
            baseline_qp: None,
            baseline_star_qp: None,
            oracle: None,
            proposed_return: None,
            oracle_return: None,
        }
    }

    pub fn relative_saving(&self) -> Result<f64> {
        relative_saving(self.proposed.br, self.baseline_star.br)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

pub const REPORT_COLUMNS: [&str; 14] = [
    "task",
    "proposed_br",
    "proposed_dist",
    "baseline_qp",
    "baseline_br",
    "baseline_dist",
    "baseline_star_qp",
    "baseline_star_br",
    "baseline_star_dist",
    "relative_saving",
    "oracle_br",
    "oracle_dist",
    "proposed_return",
    "oracle_return",
];

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

fn opt<T>(v: Option<T>, f: impl Fn(T) -> String) -> String {
    v.map(f).unwrap_or_default()
}

impl Report {
    /// Formatted cells in [`REPORT_COLUMNS`] order; both renderings read these.
    pub fn cells(&self) -> Result<Vec<Vec<String>>> {
        self.rows
            .iter()
            .map(|r| {
                Ok(vec![
                    r.task.clone(),
                    pct(r.proposed.br),
                    pct(r.proposed.dist),
                    opt(r.baseline_qp, |q| q.to_string()),
                    pct(r.baseline.br),
                    pct(r.baseline.dist),
                    opt(r.baseline_star_qp, |q| q.to_string()),
                    pct(r.baseline_star.br),
                    pct(r.baseline_star.dist),
                    pct(r.relative_saving()?),
                    opt(r.oracle, |s| pct(s.br)),
                    opt(r.oracle, |s| pct(s.dist)),
                    opt(r.proposed_return, |v| format!("{v:.3}")),
                    opt(r.oracle_return, |v| format!("{v:.3}")),
                ])
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::format(e.to_string());
        w.write_record(REPORT_COLUMNS).map_err(io)?;
        for row in self.cells()? {
            w.write_record(&row).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::format(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv of utf-8 cells"))
    }

    pub fn to_text(&self) -> Result<String> {
        let cells = self.cells()?;
        let width = self
            .rows
            .iter()
            .map(|r| r.task.len())
            .max()
            .unwrap_or(0)
            .max(4);
        let mut s = String::new();
        let _ = writeln!(s, "BR: bit-rate reduction vs QP 22 (%); DIST: weighted-distortion excess vs QP 22 / distortion scale (%)");
        let _ = writeln!(
            s,
            "{:width$} | {:>7} {:>7} | {:>4} {:>7} {:>7} | {:>4} {:>7} {:>7}",
            "task", "Prop BR", "DIST", "QP", "Base BR", "DIST", "QP", "Base* BR", "DIST"
        );
        let _ = writeln!(s, "{}", "-".repeat(width + 68));
        for c in &cells {
            let _ = writeln!(
                s,
                "{:width$} | {:>7} {:>7} | {:>4} {:>7} {:>7} | {:>4} {:>8} {:>7}",
                c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7], c[8]
            );
        }
        for (r, c) in self.rows.iter().zip(&cells) {
            let _ = writeln!(s, "{}: relative saving vs Baseline* {}%", c[0], c[9]);
            if r.oracle.is_some() {
                let _ = writeln!(s, "{}: oracle BR {}% DIST {}%", c[0], c[10], c[11]);
            }
            if r.proposed_return.is_some() || r.oracle_return.is_some() {
                let _ = writeln!(
                    s,
                    "{}: mean episode return proposed {} oracle {}",
                    c[0], c[12], c[13]
                );
            }
        }
        Ok(s)
    }
}

/// BR/DIST pairs of the three vision tasks in the original study.
pub fn table2() -> Report {
    let s = |br, dist| Scores { br, dist };
    Report {
        rows: vec![
            ReportRow::new(
                "classification",
                s(0.852, 0.037),
                s(0.872, 0.122),
                s(0.740, 0.035),
            ),
            ReportRow::new(
                "detection",
                s(0.802, 0.027),
                s(0.793, 0.186),
                s(0.262, 0.022),
            ),
            ReportRow::new(
                "segmentation",
                s(0.662, 0.068),
                s(0.664, 0.119),
                s(0.185, 0.068),
            ),
        ],
    }
}

/// Everything `evaluate` computes for one frame set.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub anchor: Summary,
    pub proposed: Vec<AllocationResult>,
    pub oracle: Vec<AllocationResult>,
    pub sweep: Sweep,
    pub report: Report,
}

pub fn evaluate(
    task: &str,
    net: &QNetwork,
    frames: &[FrameContext],
    source: &dyn RateSource,
    params: RewardParams,
) -> Result<Evaluation> {
    let proposed = agent_run(net, frames, source, params)?;
    let oracle = oracle_allocation(frames, source, params)?;
    let sweep = fixed_qp_sweep(frames, source)?;
    let scale = params.distortion_scale;
    let p = Summary::of(&proposed)?;
    let o = Summary::of(&oracle)?;
    let (bq, b) = find_equivalent_rate_baseline(&sweep, p.bpp);
    let (sq, bs) = find_equivalent_distortion_baseline(&sweep, p.wdist);
    let mean_return = |rs: &[AllocationResult]| {
        rs.iter().map(|r| r.episode_return(&params)).sum::<f64>() / rs.len() as f64
    };
    let mut row = ReportRow::new(task, p.scores(scale), b.scores(scale), bs.scores(scale));
    row.baseline_qp = Some(bq);
    row.baseline_star_qp = Some(sq);
    row.oracle = Some(o.scores(scale));
    row.proposed_return = Some(mean_return(&proposed));
    row.oracle_return = Some(mean_return(&oracle));
    Ok(Evaluation {
        anchor: sweep.entries[0].1,
        proposed,
        oracle,
        sweep,
        report: Report { rows: vec![row] },
    })
}

/// `frame_id,ctu_index,qp,bits,wdist` rows for every CTU.
pub fn write_allocations(results: &[AllocationResult], path: &Path) -> Result<()> {
    crate::io::write_atomic(path, |w| {
        writeln!(w, "frame_id,ctu_index,qp,bits,wdist")?;
        for r in results {
            for (i, (qp, m)) in r.qps.iter().zip(&r.ctus).enumerate() {
                writeln!(w, "{},{},{},{},{:.8e}", r.frame_id, i, qp, m.bits, m.wdist)?;
            }
        }
        Ok(())
    })
}
