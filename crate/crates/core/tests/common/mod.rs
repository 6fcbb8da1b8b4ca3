#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tba::agent::train::loss_and_grad;
use tba::agent::{Architecture, Batch, QNetwork};
use tba::dataset::{build_cache_from, FrameInput, TbaCache};
use tba::env::{FrameContext, GLOBAL_DIM, N_ACTIONS};
use tba::synth::{synth_frame, synth_maps, SynthSpec};

/// In-memory synthetic corpus with its cache over QP 22..51.
pub fn corpus(seed: u64, n: usize, side: usize) -> (Vec<FrameInput>, TbaCache) {
    let spec = SynthSpec::corpus(seed, n, side);
    let inputs: Vec<FrameInput> = (0..n)
        .map(|i| {
            FrameInput::in_memory(
                synth_frame(&spec, i).unwrap(),
                synth_maps(&spec, i).unwrap(),
            )
        })
        .collect();
    let cache = build_cache_from(&inputs, 22, 51, 0).unwrap();
    (inputs, cache)
}

pub fn contexts(inputs: &[FrameInput]) -> Vec<FrameContext> {
    inputs
        .iter()
        .map(|i| FrameContext::new(i.frame.clone(), i.maps.clone()).unwrap())
        .collect()
}

/// Small network touching every layer type.
pub fn tiny_arch() -> Architecture {
    Architecture {
        input_side: 8,
        input_channels: 2,
        conv_channels: [3, 4, 3, 2],
        global_dim: GLOBAL_DIM,
        global_hidden: 6,
        hidden: [7, 5],
        actions: N_ACTIONS,
    }
}

pub fn random_batch(arch: &Architecture, n: usize, rng: &mut ChaCha8Rng) -> Batch {
    let len = arch.local_len();
    Batch {
        locals: (0..n * len).map(|_| rng.gen()).collect(),
        globals: (0..n * GLOBAL_DIM)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
        actions: (0..n).map(|_| rng.gen_range(0..arch.actions)).collect(),
        rewards: (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        next_locals: vec![0.0; n * len],
        next_globals: vec![0.0; n * GLOBAL_DIM],
        dones: vec![true; n],
    }
}

/// Gradients below this magnitude are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-5;

fn pattern(net: &QNetwork, batch: &Batch) -> Vec<bool> {
    net.forward_trace(&batch.locals, &batch.globals, batch.len())
        .unwrap()
        .activation_pattern()
}

/// Max relative error between the analytic gradient of the training loss
/// and central differences with step `h`, over every parameter whose
/// perturbation stays on one linear piece of the activations. Also returns
/// how many parameters were skipped for crossing a kink.
pub fn gradient_check(seed: u64, h: f64) -> (f64, usize) {
    let arch = tiny_arch();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = QNetwork::new(arch, rng.gen());
    // non-zero biases so every bias gradient path is exercised off the origin
    for p in net.params_mut().iter_mut() {
        *p += rng.gen_range(-0.05..0.05);
    }
    let batch = random_batch(&arch, 1 + (seed as usize % 3), &mut rng);
    let targets = batch.rewards.clone();
    let (_, grad) = loss_and_grad(&net, &batch, &targets).unwrap();
    let base = pattern(&net, &batch);
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    for i in 0..net.params().len() {
        let orig = net.params()[i];
        net.params_mut()[i] = orig + h;
        let up = loss_and_grad(&net, &batch, &targets).unwrap().0;
        let up_kink = pattern(&net, &batch) != base;
        net.params_mut()[i] = orig - h;
        let down = loss_and_grad(&net, &batch, &targets).unwrap().0;
        let down_kink = pattern(&net, &batch) != base;
        net.params_mut()[i] = orig;
        if up_kink || down_kink {
            skipped += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * h);
        let denom = grad[i].abs().max(numeric.abs()).max(GRAD_FLOOR);
        worst = worst.max((grad[i] - numeric).abs() / denom);
    }
    (worst, skipped)
}
