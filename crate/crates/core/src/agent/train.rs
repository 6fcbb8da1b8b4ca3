use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{Architecture, QNetwork, Scratch, Trace};
use super::replay::ReplayBuffer;
use super::{argmax, EpsilonSchedule};
use crate::dataset::TbaCache;
use crate::env::{
    Action, CacheSource, Episode, FrameContext, RewardParams, Transition, GLOBAL_DIM, LOCAL_LEN,
    N_ACTIONS,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub target_sync_steps: u64,
    pub warmup: usize,
    pub buffer_capacity: usize,
    pub total_steps: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 20_000,
            learning_rate: 1e-3,
            batch_size: 64,
            target_sync_steps: 500,
            warmup: 1_000,
            buffer_capacity: 50_000,
            total_steps: 30_000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.gamma)
            && self.epsilon_end >= 0.0
            && self.epsilon_end <= self.epsilon_start
            && self.epsilon_start <= 1.0
            && self.learning_rate > 0.0
            && self.batch_size > 0
            && self.target_sync_steps > 0
            && self.buffer_capacity > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "invalid training configuration {self:?}"
            )))
        }
    }

    pub fn epsilon(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.epsilon_start,
            end: self.epsilon_end,
            decay_steps: self.epsilon_decay_steps,
        }
    }
}

/// A minibatch of transitions laid out for the network. Terminal samples
/// carry zeroed next-state inputs that the target ignores.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub locals: Vec<f64>,
    pub globals: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_locals: Vec<f64>,
    pub next_globals: Vec<f64>,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn from_transitions<'a>(items: impl IntoIterator<Item = &'a Transition>) -> Self {
        let mut b = Batch::default();
        for t in items {
            b.locals.extend_from_slice(&t.state.local);
            b.globals.extend_from_slice(&t.state.global);
            b.actions.push(t.action.index());
            b.rewards.push(t.reward);
            match &t.next_state {
                Some(s) if !t.done => {
                    b.next_locals.extend_from_slice(&s.local);
                    b.next_globals.extend_from_slice(&s.global);
                }
                _ => {
                    b.next_locals.extend(std::iter::repeat_n(0.0, LOCAL_LEN));
                    b.next_globals.extend_from_slice(&[0.0; GLOBAL_DIM]);
                }
            }
            b.dones.push(t.done);
        }
        b
    }
}

/// One-step TD targets: `r` at terminals, else `r + gamma * max_a Q_target(s', a)`.
pub fn td_targets(batch: &Batch, target_net: &QNetwork, gamma: f64) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    td_targets_into(batch, target_net, gamma, &mut Trace::default(), &mut out)?;
    Ok(out)
}

fn td_targets_into(
    batch: &Batch,
    target_net: &QNetwork,
    gamma: f64,
    trace: &mut Trace,
    out: &mut Vec<f64>,
) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    let needs_next = gamma != 0.0 && batch.dones.iter().any(|d| !d);
    if needs_next {
        target_net.forward_into(&batch.next_locals, &batch.next_globals, batch.len(), trace)?;
    }
    let actions = target_net.architecture().actions;
    out.clear();
    out.extend((0..batch.len()).map(|i| {
        if batch.dones[i] || !needs_next {
            batch.rewards[i]
        } else {
            let row = &trace.output[i * actions..(i + 1) * actions];
            batch.rewards[i] + gamma * row[argmax(row)]
        }
    }));
    Ok(())
}

/// Squared-error loss and its parameter gradient, without updating.
pub fn loss_and_grad(net: &QNetwork, batch: &Batch, targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut buf = StepBuffers::default();
    let loss = loss_and_grad_into(net, batch, targets, &mut buf)?;
    Ok((loss, buf.grads))
}

fn loss_and_grad_into(
    net: &QNetwork,
    batch: &Batch,
    targets: &[f64],
    buf: &mut StepBuffers,
) -> Result<f64> {
    let n = batch.len();
    let actions = net.architecture().actions;
    net.forward_into(&batch.locals, &batch.globals, n, &mut buf.online)?;
    buf.d_out.clear();
    buf.d_out.resize(n * actions, 0.0);
    let mut loss = 0.0;
    for i in 0..n {
        let q = buf.online.output[i * actions + batch.actions[i]];
        let err = q - targets[i];
        loss += err * err;
        buf.d_out[i * actions + batch.actions[i]] = 2.0 * err / n as f64;
    }
    loss /= n as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }
    buf.grads.resize(net.params().len(), 0.0);
    net.backward_into(&buf.online, &buf.d_out, &mut buf.grads, &mut buf.scratch);
    Ok(loss)
}

/// Working memory kept across [`train_step_with`] calls.
#[derive(Debug, Clone, Default)]
pub struct StepBuffers {
    online: Trace,
    target: Trace,
    scratch: Scratch,
    grads: Vec<f64>,
    d_out: Vec<f64>,
    targets: Vec<f64>,
}

/// One plain gradient-descent step on the mean squared TD error.
/// Returns the loss before the update.
pub fn train_step(
    net: &mut QNetwork,
    target_net: &QNetwork,
    batch: &Batch,
    gamma: f64,
    lr: f64,
) -> Result<f64> {
    train_step_with(
        net,
        target_net,
        batch,
        gamma,
        lr,
        &mut StepBuffers::default(),
    )
}

/// [`train_step`] reusing `buf`.
pub fn train_step_with(
    net: &mut QNetwork,
    target_net: &QNetwork,
    batch: &Batch,
    gamma: f64,
    lr: f64,
    buf: &mut StepBuffers,
) -> Result<f64> {
    let mut targets = std::mem::take(&mut buf.targets);
    td_targets_into(batch, target_net, gamma, &mut buf.target, &mut targets)?;
    let loss = loss_and_grad_into(net, batch, &targets, buf);
    buf.targets = targets;
    let loss = loss?;
    if let Some(g) = buf.grads.iter().find(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient {g}")));
    }
    if loss > 0.0 {
        net.sgd_update(&buf.grads, lr);
    }
    Ok(loss)
}

pub fn sync_target(net: &QNetwork, target_net: &mut QNetwork) {
    target_net.copy_from(net);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub step: u64,
    pub epsilon: f64,
    /// Mean loss over the episode's updates; `None` during warmup.
    pub loss: Option<f64>,
    /// Mean undiscounted return over the last [`RETURN_WINDOW`] episodes.
    pub mean_return: f64,
}

pub const RETURN_WINDOW: usize = 10;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: QNetwork,
    pub log: Vec<TrainLogRow>,
}

/// Replay entry; local channels are re-read from the frame when sampled.
#[derive(Debug, Clone)]
struct Experience {
    frame: u32,
    ctu: u32,
    global: [f64; GLOBAL_DIM],
    action: u8,
    reward: f64,
    next_global: [f64; GLOBAL_DIM],
    done: bool,
}

fn assemble(batch: &mut Batch, items: &[&Experience], frames: &[FrameContext]) {
    let n = items.len();
    batch.locals.resize(n * LOCAL_LEN, 0.0);
    batch.next_locals.resize(n * LOCAL_LEN, 0.0);
    batch.globals.clear();
    batch.next_globals.clear();
    batch.actions.clear();
    batch.rewards.clear();
    batch.dones.clear();
    for (i, e) in items.iter().enumerate() {
        let ctx = &frames[e.frame as usize];
        ctx.write_local(
            e.ctu as usize,
            &mut batch.locals[i * LOCAL_LEN..(i + 1) * LOCAL_LEN],
        );
        let next = &mut batch.next_locals[i * LOCAL_LEN..(i + 1) * LOCAL_LEN];
        if e.done {
            next.fill(0.0);
        } else {
            ctx.write_local(e.ctu as usize + 1, next);
        }
        batch.globals.extend_from_slice(&e.global);
        batch.next_globals.extend_from_slice(&e.next_global);
        batch.actions.push(e.action as usize);
        batch.rewards.push(e.reward);
        batch.dones.push(e.done);
    }
}

/// Trains a fresh network on `frames`, whose rates and distortions come
/// from `cache`. Deterministic for a fixed `config.seed`.
pub fn train(
    cache: &TbaCache,
    frames: &[FrameContext],
    params: RewardParams,
    arch: Architecture,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if frames.is_empty() {
        return Err(Error::config("training split is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = QNetwork::new(arch, rng.gen());
    let mut target = net.clone();
    let mut log = Vec::new();
    if config.total_steps == 0 {
        return Ok(TrainOutcome { net, log });
    }

    let source = CacheSource(cache);
    let schedule = config.epsilon();
    let mut buffer: ReplayBuffer<Experience> = ReplayBuffer::new(config.buffer_capacity);
    let mut batch = Batch::default();
    let mut buffers = StepBuffers::default();
    let mut order: Vec<usize> = Vec::new();
    let mut recent: std::collections::VecDeque<f64> = Default::default();
    let mut step = 0u64;

    while step < config.total_steps {
        if order.is_empty() {
            order = (0..frames.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let fi = order.pop().expect("refilled above");
        let ctx = &frames[fi];
        let mut episode = Episode::new(ctx, &source, params)?;
        let mut ret = 0.0;
        let mut losses = Vec::new();
        while let Some(state) = episode.state() {
            let eps = schedule.at(step);
            let action = if rng.gen::<f64>() < eps {
                Action::from_index(rng.gen_range(0..N_ACTIONS))?
            } else {
                Action::from_index(argmax(&net.forward(state)?))?
            };
            let t = episode.step(action)?;
            ret += t.reward;
            buffer.push(Experience {
                frame: fi as u32,
                ctu: t.state.ctu_index as u32,
                global: t.state.global,
                action: action.index() as u8,
                reward: t.reward,
                next_global: t
                    .next_state
                    .as_ref()
                    .map(|s| s.global)
                    .unwrap_or([0.0; GLOBAL_DIM]),
                done: t.done,
            });

            if buffer.len() >= config.warmup.max(1) {
                let picked = buffer.sample(config.batch_size, &mut rng);
                assemble(&mut batch, &picked, frames);
                let loss = train_step_with(
                    &mut net,
                    &target,
                    &batch,
                    config.gamma,
                    config.learning_rate,
                    &mut buffers,
                )
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!(
                        "{m} at step {step} (frame {}, epsilon {eps:.3})",
                        ctx.frame_id()
                    )),
                    other => other,
                })?;
                losses.push(loss);
            }
            step += 1;
            if step.is_multiple_of(config.target_sync_steps) {
                sync_target(&net, &mut target);
            }
            if step >= config.total_steps {
                break;
            }
        }
        if recent.len() == RETURN_WINDOW {
            recent.pop_front();
        }
        recent.push_back(ret);
        let row = TrainLogRow {
            step,
            epsilon: schedule.at(step),
            loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
            mean_return: recent.iter().sum::<f64>() / recent.len() as f64,
        };
        if log.len() % 20 == 0 {
            log::info!(
                "step {} eps {:.3} loss {} mean return {:.3}",
                row.step,
                row.epsilon,
                row.loss.map_or("-".to_string(), |l| format!("{l:.4}")),
                row.mean_return
            );
        }
        log.push(row);
    }
    Ok(TrainOutcome { net, log })
}

/// `step,epsilon,loss,mean_return` CSV; the loss field is empty during warmup.
pub fn write_log(rows: &[TrainLogRow], path: &std::path::Path) -> Result<()> {
    crate::io::write_atomic(path, |w| {
        writeln!(w, "step,epsilon,loss,mean_return")?;
        for r in rows {
            let loss = r.loss.map(|l| format!("{l:.9e}")).unwrap_or_default();
            writeln!(
                w,
                "{},{:.9e},{},{:.9e}",
                r.step, r.epsilon, loss, r.mean_return
            )?;
        }
        Ok(())
    })
}
