//! Two-branch Q-network with hand-written backpropagation.
//!
//! Local branch: four 3x3 stride-2 convolutions over the (luma, importance)
//! CTU stack. Global branch: one dense layer lifting the 15 global features.
//! The flattened conv output and the lifted global vector are concatenated
//! and fed through two hidden dense layers and a linear output layer with
//! one unit per QP action. Hidden units use LeakyReLU.
//!
//! Activations are NHWC. All parameters live in one flat vector, layer by
//! layer in declaration order (weights then bias), which is also the order
//! the model file stores them in.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{State, GLOBAL_DIM, LOCAL_CHANNELS, N_ACTIONS};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;
const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PAD: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub input_side: usize,
    pub input_channels: usize,
    pub conv_channels: [usize; 4],
    pub global_dim: usize,
    pub global_hidden: usize,
    pub hidden: [usize; 2],
    pub actions: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            input_side: crate::codec::CTU_SIZE,
            input_channels: LOCAL_CHANNELS,
            conv_channels: [8, 16, 32, 32],
            global_dim: GLOBAL_DIM,
            global_hidden: 64,
            hidden: [256, 128],
            actions: N_ACTIONS,
        }
    }
}

fn conv_out(side: usize) -> usize {
    (side + 2 * PAD - KERNEL) / STRIDE + 1
}

impl Architecture {
    pub fn local_len(&self) -> usize {
        self.input_side * self.input_side * self.input_channels
    }

    pub fn conv_sides(&self) -> [usize; 5] {
        let mut s = [self.input_side; 5];
        for i in 0..4 {
            s[i + 1] = conv_out(s[i]);
        }
        s
    }

    pub fn flat_conv(&self) -> usize {
        let s = self.conv_sides()[4];
        s * s * self.conv_channels[3]
    }

    pub fn concat_dim(&self) -> usize {
        self.flat_conv() + self.global_hidden
    }

    /// Layer table in declaration order.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let sides = self.conv_sides();
        let mut kinds = Vec::new();
        let mut in_c = self.input_channels;
        for (i, &out_c) in self.conv_channels.iter().enumerate() {
            kinds.push(LayerKind::Conv {
                in_channels: in_c,
                out_channels: out_c,
                in_side: sides[i],
                out_side: sides[i + 1],
            });
            in_c = out_c;
        }
        kinds.push(LayerKind::Dense {
            inputs: self.global_dim,
            outputs: self.global_hidden,
        });
        kinds.push(LayerKind::Dense {
            inputs: self.concat_dim(),
            outputs: self.hidden[0],
        });
        kinds.push(LayerKind::Dense {
            inputs: self.hidden[0],
            outputs: self.hidden[1],
        });
        kinds.push(LayerKind::Dense {
            inputs: self.hidden[1],
            outputs: self.actions,
        });
        let mut off = 0;
        kinds
            .into_iter()
            .map(|kind| {
                let (fan_in, fan_out) = kind.fan();
                let spec = LayerSpec {
                    kind,
                    weight_offset: off,
                    weight_len: fan_in * fan_out,
                    bias_offset: off + fan_in * fan_out,
                    bias_len: fan_out,
                };
                off += fan_in * fan_out + fan_out;
                spec
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.weight_len + l.bias_len)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        in_channels: usize,
        out_channels: usize,
        in_side: usize,
        out_side: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
}

impl LayerKind {
    /// (weight rows, weight columns) = (fan in, fan out).
    pub fn fan(&self) -> (usize, usize) {
        match *self {
            LayerKind::Conv {
                in_channels,
                out_channels,
                ..
            } => (KERNEL * KERNEL * in_channels, out_channels),
            LayerKind::Dense { inputs, outputs } => (inputs, outputs),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub weight_offset: usize,
    pub weight_len: usize,
    pub bias_offset: usize,
    pub bias_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    arch: Architecture,
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
}

/// Saved activations of one batched forward pass. A trace reused for the
/// same network shape and batch size keeps its buffers.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    key: Option<(Architecture, usize)>,
    batch: usize,
    /// im2col matrices per conv layer.
    cols: [Vec<f64>; 4],
    /// Pre-activations: conv 0-3, global dense, fc1, fc2.
    pre: [Vec<f64>; 7],
    /// Conv outputs after the activation.
    act: [Vec<f64>; 4],
    global_in: Vec<f64>,
    global_act: Vec<f64>,
    concat: Vec<f64>,
    hidden1: Vec<f64>,
    hidden2: Vec<f64>,
    pub output: Vec<f64>,
}

impl Trace {
    /// Which pre-activations are positive, in a fixed order. Two traces
    /// with equal patterns lie on the same linear piece of the network.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.pre.iter().flatten().map(|&z| z > 0.0).collect()
    }
}

/// Working memory for [`QNetwork::backward_into`].
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    cols: Vec<f64>,
}

/// Resizes `v` to `len`, zero-filling only when the length changes.
fn sized(v: &mut Vec<f64>, len: usize) -> &mut [f64] {
    if v.len() != len {
        v.clear();
        v.resize(len, 0.0);
    }
    v
}

impl QNetwork {
    pub fn zeros(arch: Architecture) -> Self {
        let layers = arch.layers();
        let n = layers.iter().map(|l| l.weight_len + l.bias_len).sum();
        QNetwork {
            arch,
            layers,
            params: vec![0.0; n],
        }
    }

    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn new(arch: Architecture, seed: u64) -> Self {
        let mut net = Self::zeros(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in net.layers.clone() {
            let bound = 1.0 / (l.kind.fan().0 as f64).sqrt();
            for w in &mut net.params[l.weight_offset..l.weight_offset + l.weight_len] {
                *w = rng.gen_range(-bound..=bound);
            }
        }
        net
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(arch);
        if params.len() != net.params.len() {
            return Err(Error::domain(format!(
                "{} parameters given, architecture needs {}",
                params.len(),
                net.params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `params -= lr * grads`
    pub fn sgd_update(&mut self, grads: &[f64], lr: f64) {
        assert_eq!(grads.len(), self.params.len());
        for (p, g) in self.params.iter_mut().zip(grads) {
            *p -= lr * g;
        }
    }

    pub fn copy_from(&mut self, other: &QNetwork) {
        assert_eq!(self.arch, other.arch, "architecture mismatch");
        self.params.copy_from_slice(&other.params);
    }

    fn weights(&self, l: usize) -> &[f64] {
        let s = &self.layers[l];
        &self.params[s.weight_offset..s.weight_offset + s.weight_len]
    }

    fn bias(&self, l: usize) -> &[f64] {
        let s = &self.layers[l];
        &self.params[s.bias_offset..s.bias_offset + s.bias_len]
    }

    /// Q-values for one state.
    pub fn forward(&self, state: &State) -> Result<Vec<f64>> {
        self.forward_batch(&state.local, &state.global, 1)
    }

    /// Q-values for `batch` states laid out back to back.
    pub fn forward_batch(&self, locals: &[f64], globals: &[f64], batch: usize) -> Result<Vec<f64>> {
        Ok(self.forward_trace(locals, globals, batch)?.output)
    }

    pub fn forward_trace(&self, locals: &[f64], globals: &[f64], batch: usize) -> Result<Trace> {
        let mut trace = Trace::default();
        self.forward_into(locals, globals, batch, &mut trace)?;
        Ok(trace)
    }

    fn conv_dims(&self, l: usize) -> (usize, usize, usize, usize) {
        match self.layers[l].kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                in_side,
                out_side,
            } => (in_channels, out_channels, in_side, out_side),
            LayerKind::Dense { .. } => unreachable!("first four layers are convolutions"),
        }
    }

    fn dense_dims(&self, l: usize) -> (usize, usize) {
        match self.layers[l].kind {
            LayerKind::Dense { inputs, outputs } => (inputs, outputs),
            LayerKind::Conv { .. } => unreachable!("layers 4.. are dense"),
        }
    }

    /// Batched forward pass recording what [`Self::backward_into`] needs.
    pub fn forward_into(
        &self,
        locals: &[f64],
        globals: &[f64],
        batch: usize,
        t: &mut Trace,
    ) -> Result<()> {
        let a = &self.arch;
        if locals.len() != batch * a.local_len() || globals.len() != batch * a.global_dim {
            return Err(Error::domain(format!(
                "input sizes {}/{} do not fit a batch of {batch}",
                locals.len(),
                globals.len()
            )));
        }
        if t.key != Some((*a, batch)) {
            *t = Trace {
                key: Some((*a, batch)),
                ..Trace::default()
            };
        }
        t.batch = batch;
        for l in 0..4 {
            let (in_ch, out_ch, in_side, out_side) = self.conv_dims(l);
            let rows = batch * out_side * out_side;
            let k = KERNEL * KERNEL * in_ch;
            let input: &[f64] = if l == 0 { locals } else { &t.act[l - 1] };
            // padding cells are never written, so they stay zero across reuse
            im2col(
                input,
                batch,
                in_side,
                in_ch,
                out_side,
                sized(&mut t.cols[l], rows * k),
            );
            let z = sized(&mut t.pre[l], rows * out_ch);
            fill_bias(z, self.bias(l));
            gemm(
                rows,
                k,
                out_ch,
                &t.cols[l],
                false,
                self.weights(l),
                false,
                z,
                1.0,
            );
            leaky_into(&t.pre[l], sized(&mut t.act[l], rows * out_ch));
        }
        let flat = a.flat_conv();
        let gh = a.global_hidden;

        sized(&mut t.global_in, globals.len()).copy_from_slice(globals);
        let zg = sized(&mut t.pre[4], batch * gh);
        fill_bias(zg, self.bias(4));
        gemm(
            batch,
            a.global_dim,
            gh,
            globals,
            false,
            self.weights(4),
            false,
            zg,
            1.0,
        );
        leaky_into(&t.pre[4], sized(&mut t.global_act, batch * gh));

        let cd = a.concat_dim();
        let concat = sized(&mut t.concat, batch * cd);
        for b in 0..batch {
            concat[b * cd..b * cd + flat].copy_from_slice(&t.act[3][b * flat..(b + 1) * flat]);
            concat[b * cd + flat..(b + 1) * cd]
                .copy_from_slice(&t.global_act[b * gh..(b + 1) * gh]);
        }

        let z1 = sized(&mut t.pre[5], batch * a.hidden[0]);
        fill_bias(z1, self.bias(5));
        gemm(
            batch,
            cd,
            a.hidden[0],
            &t.concat,
            false,
            self.weights(5),
            false,
            z1,
            1.0,
        );
        leaky_into(&t.pre[5], sized(&mut t.hidden1, batch * a.hidden[0]));

        let z2 = sized(&mut t.pre[6], batch * a.hidden[1]);
        fill_bias(z2, self.bias(6));
        gemm(
            batch,
            a.hidden[0],
            a.hidden[1],
            &t.hidden1,
            false,
            self.weights(6),
            false,
            z2,
            1.0,
        );
        leaky_into(&t.pre[6], sized(&mut t.hidden2, batch * a.hidden[1]));

        let out = sized(&mut t.output, batch * a.actions);
        fill_bias(out, self.bias(7));
        gemm(
            batch,
            a.hidden[1],
            a.actions,
            &t.hidden2,
            false,
            self.weights(7),
            false,
            out,
            1.0,
        );

        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite Q-value {} (sample {}, action {})",
                out[i],
                i / a.actions,
                i % a.actions
            )));
        }
        Ok(())
    }

    /// Gradient of `sum(d_output * output)` with respect to every parameter.
    pub fn backward(&self, trace: &Trace, d_output: &[f64]) -> Vec<f64> {
        let mut grads = vec![0.0; self.params.len()];
        self.backward_into(trace, d_output, &mut grads, &mut Scratch::default());
        grads
    }

    /// As [`Self::backward`], overwriting `grads` and reusing `s`.
    pub fn backward_into(&self, t: &Trace, d_output: &[f64], grads: &mut [f64], s: &mut Scratch) {
        let a = &self.arch;
        let b = t.batch;
        assert_eq!(d_output.len(), b * a.actions);
        assert_eq!(grads.len(), self.params.len());
        let (mut da, mut db) = (std::mem::take(&mut s.a), std::mem::take(&mut s.b));

        self.dense_backward(7, &t.hidden2, d_output, b, grads, Some(&mut da));
        leaky_grad_in_place(&t.pre[6], sized(&mut da, b * a.hidden[1]));
        self.dense_backward(6, &t.hidden1, &da, b, grads, Some(&mut db));
        leaky_grad_in_place(&t.pre[5], sized(&mut db, b * a.hidden[0]));
        self.dense_backward(5, &t.concat, &db, b, grads, Some(&mut da));

        let flat = a.flat_conv();
        let cd = a.concat_dim();
        let gh = a.global_hidden;
        let d_act = sized(&mut db, b * flat);
        let d_g = sized(&mut s.c, b * gh);
        for i in 0..b {
            d_act[i * flat..(i + 1) * flat].copy_from_slice(&da[i * cd..i * cd + flat]);
            d_g[i * gh..(i + 1) * gh].copy_from_slice(&da[i * cd + flat..(i + 1) * cd]);
        }
        leaky_grad_in_place(&t.pre[4], d_g);
        self.dense_backward(4, &t.global_in, &s.c, b, grads, None);

        // db holds the gradient w.r.t. the current conv layer's output
        for l in (0..4).rev() {
            let (in_ch, out_ch, in_side, out_side) = self.conv_dims(l);
            let rows = b * out_side * out_side;
            let k = KERNEL * KERNEL * in_ch;
            leaky_grad_in_place(&t.pre[l], &mut db);
            let spec = self.layers[l];
            let (gw, gb) = split_grads(grads, &spec);
            gemm(k, rows, out_ch, &t.cols[l], true, &db, false, gw, 0.0);
            column_sums(&db, rows, out_ch, gb);
            if l > 0 {
                let d_cols = sized(&mut s.cols, rows * k);
                gemm(
                    rows,
                    out_ch,
                    k,
                    &db,
                    false,
                    self.weights(l),
                    true,
                    d_cols,
                    0.0,
                );
                let d_in = sized(&mut da, b * in_side * in_side * in_ch);
                col2im(&s.cols, b, in_side, in_ch, out_side, d_in);
                std::mem::swap(&mut da, &mut db);
            }
        }
        s.a = da;
        s.b = db;
    }

    /// Writes the dense layer's parameter gradients and, if asked, the
    /// gradient with respect to its input.
    fn dense_backward(
        &self,
        l: usize,
        input: &[f64],
        d_z: &[f64],
        batch: usize,
        grads: &mut [f64],
        d_in: Option<&mut Vec<f64>>,
    ) {
        let (inputs, outputs) = self.dense_dims(l);
        let spec = self.layers[l];
        let (gw, gb) = split_grads(grads, &spec);
        gemm(inputs, batch, outputs, input, true, d_z, false, gw, 0.0);
        column_sums(d_z, batch, outputs, gb);
        if let Some(d_in) = d_in {
            let d_in = sized(d_in, batch * inputs);
            gemm(
                batch,
                outputs,
                inputs,
                d_z,
                false,
                self.weights(l),
                true,
                d_in,
                0.0,
            );
        }
    }
}

fn split_grads<'g>(grads: &'g mut [f64], spec: &LayerSpec) -> (&'g mut [f64], &'g mut [f64]) {
    let (head, tail) = grads.split_at_mut(spec.bias_offset);
    (
        &mut head[spec.weight_offset..spec.weight_offset + spec.weight_len],
        &mut tail[..spec.bias_len],
    )
}

fn fill_bias(z: &mut [f64], bias: &[f64]) {
    for row in z.chunks_exact_mut(bias.len()) {
        row.copy_from_slice(bias);
    }
}

fn column_sums(m: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for r in 0..rows {
        for (o, v) in out.iter_mut().zip(&m[r * cols..(r + 1) * cols]) {
            *o += v;
        }
    }
}

pub fn leaky_relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn leaky_into(z: &[f64], out: &mut [f64]) {
    for (o, &v) in out.iter_mut().zip(z) {
        *o = leaky_relu(v);
    }
}

fn leaky_grad_in_place(z: &[f64], d: &mut [f64]) {
    debug_assert_eq!(z.len(), d.len());
    for (d, &z) in d.iter_mut().zip(z) {
        if z <= 0.0 {
            *d *= LEAKY_SLOPE;
        }
    }
}

/// `c = beta * c + op(a) * op(b)` for row-major matrices, where `op(a)` is
/// m x k and `op(b)` is k x n.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_trans {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the asserts above pin every slice to exactly the extent the
    // strides address, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Valid kernel columns `kx0..kx1` and the input column of `kx0`, for output column `ox`.
fn kx_span(ox: usize, side: usize) -> (usize, usize, usize) {
    let left = (ox * STRIDE) as isize - PAD as isize;
    let kx0 = (-left).max(0) as usize;
    let kx1 = KERNEL.min((side as isize - left) as usize);
    (kx0, kx1, (left + kx0 as isize) as usize)
}

/// NHWC input -> rows of (ky, kx, channel) patches, one row per output pixel.
/// Cells that fall on the zero padding are left untouched.
fn im2col(x: &[f64], batch: usize, side: usize, ch: usize, out_side: usize, cols: &mut [f64]) {
    let k = KERNEL * KERNEL * ch;
    debug_assert_eq!(cols.len(), batch * out_side * out_side * k);
    for b in 0..batch {
        let img = &x[b * side * side * ch..(b + 1) * side * side * ch];
        for oy in 0..out_side {
            for ox in 0..out_side {
                let row = ((b * out_side + oy) * out_side + ox) * k;
                let (kx0, kx1, ix0) = kx_span(ox, side);
                let run = (kx1 - kx0) * ch;
                for ky in 0..KERNEL {
                    let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                    if iy < 0 || iy >= side as isize {
                        continue;
                    }
                    let src = (iy as usize * side + ix0) * ch;
                    let dst = row + (ky * KERNEL + kx0) * ch;
                    cols[dst..dst + run].copy_from_slice(&img[src..src + run]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`].
fn col2im(cols: &[f64], batch: usize, side: usize, ch: usize, out_side: usize, x: &mut [f64]) {
    let k = KERNEL * KERNEL * ch;
    x.fill(0.0);
    for b in 0..batch {
        let img = &mut x[b * side * side * ch..(b + 1) * side * side * ch];
        for oy in 0..out_side {
            for ox in 0..out_side {
                let row = ((b * out_side + oy) * out_side + ox) * k;
                let (kx0, kx1, ix0) = kx_span(ox, side);
                let run = (kx1 - kx0) * ch;
                for ky in 0..KERNEL {
                    let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                    if iy < 0 || iy >= side as isize {
                        continue;
                    }
                    let dst = (iy as usize * side + ix0) * ch;
                    let src = row + (ky * KERNEL + kx0) * ch;
                    for (d, s) in img[dst..dst + run].iter_mut().zip(&cols[src..src + run]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_topology() {
        let a = Architecture::default();
        assert_eq!(a.conv_sides(), [64, 32, 16, 8, 4]);
        assert_eq!(a.flat_conv(), 512);
        assert_eq!(a.concat_dim(), 576);
        let layers = a.layers();
        assert_eq!(layers.len(), 8);
        assert_eq!(layers[0].kind.fan(), (18, 8));
        assert_eq!(layers[7].kind.fan(), (128, 30));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = QNetwork::zeros(Architecture::default());
        let q = net
            .forward_batch(&vec![0.7; net.arch.local_len()], &[0.3; GLOBAL_DIM], 1)
            .unwrap();
        assert_eq!(q, vec![0.0; N_ACTIONS]);
    }

    #[test]
    fn batch_rows_match_single_forward() {
        let net = QNetwork::new(Architecture::default(), 3);
        let n = net.arch.local_len();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let locals: Vec<f64> = (0..2 * n).map(|_| rng.gen()).collect();
        let globals: Vec<f64> = (0..2 * GLOBAL_DIM).map(|_| rng.gen()).collect();
        let both = net.forward_batch(&locals, &globals, 2).unwrap();
        let second = net
            .forward_batch(&locals[n..], &globals[GLOBAL_DIM..], 1)
            .unwrap();
        for (x, y) in both[N_ACTIONS..].iter().zip(&second) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn im2col_adjoint() {
        // <im2col(x), y> == <x, col2im(y)>
        let (b, side, ch) = (2, 6, 3);
        let out = conv_out(side);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..b * side * side * ch).map(|_| rng.gen()).collect();
        let y: Vec<f64> = (0..b * out * out * 9 * ch).map(|_| rng.gen()).collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&x, b, side, ch, out, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&y, b, side, ch, out, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(p, q)| p * q).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(p, q)| p * q).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn reused_buffers_match_fresh_ones() {
        let net = QNetwork::new(Architecture::default(), 5);
        let n = net.arch.local_len();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut trace = Trace::default();
        let mut scratch = Scratch::default();
        let mut grads = vec![0.0; net.params.len()];
        for batch in [3, 3, 1, 3] {
            let locals: Vec<f64> = (0..batch * n).map(|_| rng.gen()).collect();
            let globals: Vec<f64> = (0..batch * GLOBAL_DIM).map(|_| rng.gen()).collect();
            let d: Vec<f64> = (0..batch * N_ACTIONS)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            net.forward_into(&locals, &globals, batch, &mut trace)
                .unwrap();
            let fresh = net.forward_trace(&locals, &globals, batch).unwrap();
            assert_eq!(trace.output, fresh.output);
            net.backward_into(&trace, &d, &mut grads, &mut scratch);
            assert_eq!(grads, net.backward(&fresh, &d));
        }
    }

    #[test]
    fn non_finite_is_numeric_error() {
        let mut net = QNetwork::new(Architecture::default(), 1);
        let last = *net.layers().last().unwrap();
        net.params_mut()[last.bias_offset] = f64::NAN;
        let r = net.forward_batch(&vec![0.0; net.arch.local_len()], &[0.0; GLOBAL_DIM], 1);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
