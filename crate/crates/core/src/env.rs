//! Sequential per-CTU QP decision process over one frame.
//!
//! An episode walks the CTUs of a frame in raster order. At each CTU the
//! agent sees the CTU's luma and importance channels plus a 15-entry global
//! vector, picks a QP in 22..=51, and is rewarded for the bits it saves
//! against the QP 22 anchor minus any extra weighted distortion it causes.

use crate::codec::{CtuGrid, CtuTransform, LumaFrame, CTU_PIXELS, CTU_SIZE};
use crate::dataset::{TbaCache, ANCHOR_QP};
use crate::error::{Error, Result};
use crate::importance::{
    instance_count, mask_ratio, weighted_distortion, TaskMaps, DEFAULT_MASK_THRESHOLD,
};

pub const N_ACTIONS: usize = 30;
pub const MIN_QP: u8 = 22;
pub const MAX_QP: u8 = 51;
pub const GLOBAL_DIM: usize = 15;
pub const LOCAL_CHANNELS: usize = 2;
/// Length of the interleaved (y, x, channel) local observation.
pub const LOCAL_LEN: usize = CTU_PIXELS * LOCAL_CHANNELS;

const CTU_COUNT_NORM: f64 = 256.0;
const INSTANCE_NORM: f64 = 8.0;
const QP_SPAN: f64 = (MAX_QP - MIN_QP) as f64;

/// A QP decision, stored as its index into 22..=51.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Action(u8);

impl Action {
    pub fn from_index(index: usize) -> Result<Self> {
        if index >= N_ACTIONS {
            return Err(Error::domain(format!(
                "action index {index} outside 0..{N_ACTIONS}"
            )));
        }
        Ok(Action(index as u8))
    }

    pub fn from_qp(qp: u8) -> Result<Self> {
        if !(MIN_QP..=MAX_QP).contains(&qp) {
            return Err(Error::domain(format!(
                "qp {qp} outside {MIN_QP}..={MAX_QP}"
            )));
        }
        Ok(Action(qp - MIN_QP))
    }

    pub fn anchor() -> Self {
        Action(0)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn qp(self) -> u8 {
        MIN_QP + self.0
    }

    pub fn all() -> impl Iterator<Item = Action> {
        (0..N_ACTIONS as u8).map(Action)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardParams {
    pub lambda: f64,
    pub distortion_scale: f64,
}

impl RewardParams {
    pub fn new(lambda: f64, distortion_scale: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite())
            || !(distortion_scale > 0.0 && distortion_scale.is_finite())
        {
            return Err(Error::domain(format!(
                "lambda ({lambda}) and distortion scale ({distortion_scale}) must be positive"
            )));
        }
        Ok(RewardParams {
            lambda,
            distortion_scale,
        })
    }
}

/// `lambda * (bpp_anchor - bpp_chosen) - max(0, wdist_chosen - wdist_anchor) / scale`
pub fn reward(
    bpp_anchor: f64,
    bpp_chosen: f64,
    wdist_chosen: f64,
    wdist_anchor: f64,
    params: &RewardParams,
) -> f64 {
    let saved = bpp_anchor - bpp_chosen;
    let excess = (wdist_chosen - wdist_anchor).max(0.0);
    params.lambda * saved - excess / params.distortion_scale
}

/// Per-CTU map features of a frame, computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub grid: CtuGrid,
    pub mask_ratios: Vec<f64>,
    pub instance_counts: Vec<usize>,
    pub frame_mask_ratio: f64,
}

/// A frame, its maps, and derived features: everything an episode needs.
#[derive(Debug, Clone)]
pub struct FrameContext {
    pub frame: LumaFrame,
    pub maps: TaskMaps,
    pub features: FrameFeatures,
}

impl FrameContext {
    pub fn new(frame: LumaFrame, maps: TaskMaps) -> Result<Self> {
        if !maps.matches(&frame) {
            return Err(Error::domain(format!(
                "maps do not match the padded size of frame {}",
                frame.frame_id
            )));
        }
        let grid = frame.grid();
        let mut mask_ratios = Vec::with_capacity(grid.total());
        let mut instance_counts = Vec::with_capacity(grid.total());
        for i in 0..grid.total() {
            let rect = grid.rect(i);
            mask_ratios.push(mask_ratio(&maps.importance, rect, DEFAULT_MASK_THRESHOLD)?);
            instance_counts.push(instance_count(&maps.instances, rect)?);
        }
        let frame_mask_ratio = mask_ratio(
            &maps.importance,
            maps.importance.full_rect(),
            DEFAULT_MASK_THRESHOLD,
        )?;
        Ok(FrameContext {
            features: FrameFeatures {
                grid,
                mask_ratios,
                instance_counts,
                frame_mask_ratio,
            },
            frame,
            maps,
        })
    }

    pub fn frame_id(&self) -> &str {
        &self.frame.frame_id
    }

    pub fn n_ctus(&self) -> usize {
        self.features.grid.total()
    }

    /// Writes the interleaved (luma / 255, importance) channels of a CTU.
    pub fn write_local(&self, ctu_index: usize, out: &mut [f64]) {
        assert_eq!(out.len(), LOCAL_LEN);
        let rect = self.features.grid.rect(ctu_index);
        let w = self.frame.width;
        let levels = self.maps.importance.levels();
        for r in 0..CTU_SIZE {
            let row = (rect.y + r) * w + rect.x;
            for c in 0..CTU_SIZE {
                let o = (r * CTU_SIZE + c) * LOCAL_CHANNELS;
                out[o] = self.frame.samples[row + c] as f64 / 255.0;
                out[o + 1] = levels[row + c] as f64 / 255.0;
            }
        }
    }
}

/// Agent observation for one CTU.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub frame_id: String,
    pub ctu_index: usize,
    /// Interleaved (y, x, channel) luma/importance, all in [0, 1].
    pub local: Vec<f64>,
    pub global: [f64; GLOBAL_DIM],
}

/// Neighbor offsets in feature order: left, above, above-left, above-right.
const NEIGHBORS: [(isize, isize); 4] = [(-1, 0), (0, -1), (-1, -1), (1, -1)];

/// The global feature vector for `ctu_index` given the QPs already chosen
/// for the CTUs before it.
pub fn global_features(
    ctx: &FrameContext,
    ctu_index: usize,
    decided_qps: &[u8],
) -> Result<[f64; GLOBAL_DIM]> {
    let n = ctx.n_ctus();
    if ctu_index >= n {
        return Err(Error::domain(format!(
            "CTU index {ctu_index} outside 0..{n}"
        )));
    }
    if decided_qps.len() != ctu_index {
        return Err(Error::domain(format!(
            "{} decided QPs given for CTU {ctu_index}",
            decided_qps.len()
        )));
    }
    let f = &ctx.features;
    let inst = |i: usize| (f.instance_counts[i] as f64 / INSTANCE_NORM).min(1.0);
    let mut g = [0.0; GLOBAL_DIM];
    g[0] = n as f64 / CTU_COUNT_NORM;
    g[1] = ctu_index as f64 / n as f64;
    g[2] = f.mask_ratios[ctu_index];
    for (k, &(dc, dr)) in NEIGHBORS.iter().enumerate() {
        if let Some(j) = f.grid.neighbor(ctu_index, dc, dr) {
            g[3 + k] = f.mask_ratios[j];
            g[9 + k] = inst(j);
        }
    }
    g[7] = f.frame_mask_ratio;
    g[8] = inst(ctu_index);
    for (k, &(dc, dr)) in NEIGHBORS[..2].iter().enumerate() {
        if let Some(j) = f.grid.neighbor(ctu_index, dc, dr) {
            let qp = decided_qps.get(j).copied().unwrap_or(ANCHOR_QP);
            g[13 + k] = (qp as f64 - MIN_QP as f64) / QP_SPAN;
        }
    }
    Ok(g)
}

pub fn make_state(ctx: &FrameContext, ctu_index: usize, decided_qps: &[u8]) -> Result<State> {
    let global = global_features(ctx, ctu_index, decided_qps)?;
    let mut local = vec![0.0; LOCAL_LEN];
    ctx.write_local(ctu_index, &mut local);
    Ok(State {
        frame_id: ctx.frame_id().to_string(),
        ctu_index,
        local,
        global,
    })
}

/// Rate and weighted distortion of one CTU at one QP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub bits: u64,
    pub bpp: f64,
    pub wdist: f64,
}

/// Where an episode gets its per-CTU rate/distortion from.
pub trait RateSource: Sync {
    fn measure(&self, ctx: &FrameContext, ctu_index: usize, qp: u8) -> Result<Measurement>;
}

/// Training mode: lookups in a precomputed cache.
pub struct CacheSource<'a>(pub &'a TbaCache);

impl RateSource for CacheSource<'_> {
    fn measure(&self, ctx: &FrameContext, ctu_index: usize, qp: u8) -> Result<Measurement> {
        let r = self.0.get(ctx.frame_id(), ctu_index, qp)?;
        Ok(Measurement {
            bits: r.bits,
            bpp: r.bpp,
            wdist: r.wdist,
        })
    }
}

/// Inference mode: encode the CTU on demand.
pub struct LiveSource;

impl RateSource for LiveSource {
    fn measure(&self, ctx: &FrameContext, ctu_index: usize, qp: u8) -> Result<Measurement> {
        let rect = ctx.features.grid.rect(ctu_index);
        let t = CtuTransform::new(&ctx.frame.ctu(rect))?;
        let c = t.encode(qp)?;
        let weights = ctx.maps.importance.rect_weights(rect);
        Ok(Measurement {
            bits: c.bits,
            bpp: c.bpp,
            wdist: crate::dataset::canonical(weighted_distortion(t.source(), &c.recon, &weights)),
        })
    }
}

/// Reward of taking `action` at `ctu_index`.
pub fn ctu_reward(
    source: &dyn RateSource,
    ctx: &FrameContext,
    ctu_index: usize,
    action: Action,
    params: &RewardParams,
) -> Result<f64> {
    let anchor = source.measure(ctx, ctu_index, ANCHOR_QP)?;
    let chosen = if action.qp() == ANCHOR_QP {
        anchor
    } else {
        source.measure(ctx, ctu_index, action.qp())?
    };
    Ok(reward(
        anchor.bpp,
        chosen.bpp,
        chosen.wdist,
        anchor.wdist,
        params,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: State,
    pub action: Action,
    pub reward: f64,
    /// `None` at the end of the frame.
    pub next_state: Option<State>,
    pub done: bool,
}

/// One pass over a frame's CTUs.
pub struct Episode<'a> {
    ctx: &'a FrameContext,
    source: &'a dyn RateSource,
    params: RewardParams,
    qps: Vec<u8>,
    state: Option<State>,
}

impl<'a> Episode<'a> {
    pub fn new(
        ctx: &'a FrameContext,
        source: &'a dyn RateSource,
        params: RewardParams,
    ) -> Result<Self> {
        if ctx.n_ctus() == 0 {
            return Err(Error::domain("frame has no CTUs"));
        }
        let state = make_state(ctx, 0, &[])?;
        Ok(Episode {
            ctx,
            source,
            params,
            qps: Vec::with_capacity(ctx.n_ctus()),
            state: Some(state),
        })
    }

    /// Current observation, `None` once the frame is finished.
    pub fn state(&self) -> Option<&State> {
        self.state.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.state.is_none()
    }

    pub fn qps(&self) -> &[u8] {
        &self.qps
    }

    pub fn step(&mut self, action: Action) -> Result<Transition> {
        let state = self
            .state
            .take()
            .ok_or_else(|| Error::domain("step called on a finished episode"))?;
        let ctu = state.ctu_index;
        let r = match ctu_reward(self.source, self.ctx, ctu, action, &self.params) {
            Ok(r) => r,
            Err(e) => {
                self.state = Some(state);
                return Err(e);
            }
        };
        self.qps.push(action.qp());
        let done = ctu + 1 == self.ctx.n_ctus();
        let next_state = if done {
            None
        } else {
            Some(make_state(self.ctx, ctu + 1, &self.qps)?)
        };
        self.state = next_state.clone();
        Ok(Transition {
            state,
            action,
            reward: r,
            next_state,
            done,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub qps: Vec<u8>,
    pub rewards: Vec<f64>,
    /// Undiscounted sum of `rewards`.
    pub ret: f64,
}

pub fn run_episode<P>(
    ctx: &FrameContext,
    source: &dyn RateSource,
    params: RewardParams,
    mut policy: P,
) -> Result<EpisodeOutcome>
where
    P: FnMut(&State) -> Result<Action>,
{
    let mut ep = Episode::new(ctx, source, params)?;
    let mut rewards = Vec::with_capacity(ctx.n_ctus());
    while let Some(state) = ep.state() {
        let a = policy(state)?;
        rewards.push(ep.step(a)?.reward);
    }
    Ok(EpisodeOutcome {
        qps: ep.qps.clone(),
        ret: rewards.iter().sum(),
        rewards,
    })
}
