//! Four-head convolutional actor-critic network with explicit forward and
//! backward passes.
//!
//! ```text
//! obs 10×10×4 ─ conv3×3(4→16) ─ relu ─ conv3×3(16→16) ─ relu ─ maxpool2×2
//!   ─ flatten(400) ‖ goal_vec(2) ─ dense(402→128) ─ relu ─ heads(128→8)
//! heads: [0..5) policy logits, 5 value, 6 blocking logit, 7 on-goal logit
//! ```
//!
//! Activations are stored pixel-major (`[pixel][channel]`) so convolutions
//! become matrix products over im2col patches.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::world::{Observation, OBS_CHANNELS, OBS_SIZE};

pub const PIXELS: usize = OBS_SIZE * OBS_SIZE;
pub const C0: usize = OBS_CHANNELS;
pub const C1: usize = 16;
pub const C2: usize = 16;
pub const POOLED: usize = OBS_SIZE / 2;
pub const FLAT: usize = POOLED * POOLED * C2;
pub const DENSE_IN: usize = FLAT + 2;
pub const HIDDEN: usize = 128;
pub const HEADS: usize = 8;
pub const HEAD_VALUE: usize = 5;
pub const HEAD_BLOCK: usize = 6;
pub const HEAD_ON_GOAL: usize = 7;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Ordered parameter blocks of the reference architecture.
pub fn layout() -> Vec<Block> {
    let specs: [(&str, Vec<usize>); 8] = [
        ("conv1.weight", vec![C1, 3, 3, C0]),
        ("conv1.bias", vec![C1]),
        ("conv2.weight", vec![C2, 3, 3, C1]),
        ("conv2.bias", vec![C2]),
        ("dense.weight", vec![HIDDEN, DENSE_IN]),
        ("dense.bias", vec![HIDDEN]),
        ("heads.weight", vec![HEADS, HIDDEN]),
        ("heads.bias", vec![HEADS]),
    ];
    let mut offset = 0;
    specs
        .into_iter()
        .map(|(name, shape)| {
            let len = shape.iter().product();
            let b = Block { name: name.to_string(), shape, offset, len };
            offset += len;
            b
        })
        .collect()
}

/// 55 528 parameters.
pub fn param_count() -> usize {
    layout().iter().map(|b| b.len).sum()
}

/// Name of the block holding flat parameter index `i`.
pub fn block_of(i: usize) -> Option<String> {
    layout().into_iter().find(|b| i >= b.offset && i < b.offset + b.len).map(|b| b.name)
}

const W1: usize = 0;
const B1: usize = W1 + C1 * 9 * C0;
const W2: usize = B1 + C1;
const B2: usize = W2 + C2 * 9 * C1;
const W3: usize = B2 + C2;
const B3: usize = W3 + HIDDEN * DENSE_IN;
const WH: usize = B3 + HIDDEN;
const BH: usize = WH + HEADS * HIDDEN;
const TOTAL: usize = BH + HEADS;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub values: Vec<f64>,
}

/// Same layout as [`PolicyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: Vec<f64>,
}

impl Gradients {
    pub fn zeros() -> Self {
        Gradients { values: vec![0.0; TOTAL] }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|g| *g *= s);
    }

    /// First block containing a non-finite entry.
    pub fn first_non_finite_block(&self) -> Option<String> {
        self.values.iter().position(|g| !g.is_finite()).and_then(block_of)
    }
}

impl PolicyParams {
    pub fn zeros() -> Self {
        PolicyParams { values: vec![0.0; TOTAL] }
    }

    /// He-uniform initialization for the hidden layers, small heads, zero biases.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros();
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, gain: f64| {
            let bound = gain * (6.0 / fan_in as f64).sqrt();
            for v in &mut p.values[range] {
                *v = rng.gen_range(-bound..bound);
            }
        };
        fill(W1..B1, 9 * C0, 1.0);
        fill(W2..B2, 9 * C1, 1.0);
        fill(W3..B3, DENSE_IN, 1.0);
        fill(WH..BH, HIDDEN, 0.1);
        p
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Raw network outputs for one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOutput {
    pub logits: [f64; 5],
    pub value: f64,
    pub block_logit: f64,
    pub on_goal_logit: f64,
}

impl ForwardOutput {
    pub fn p_block(&self) -> f64 {
        sigmoid(self.block_logit)
    }

    pub fn p_on_goal(&self) -> f64 {
        sigmoid(self.on_goal_logit)
    }

    /// Unmasked softmax over the five actions.
    pub fn probabilities(&self) -> [f64; 5] {
        let max = self.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p = self.logits.map(|z| (z - max).exp());
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= s);
        p
    }

    fn from_row(row: &[f64]) -> Self {
        ForwardOutput {
            logits: [row[0], row[1], row[2], row[3], row[4]],
            value: row[HEAD_VALUE],
            block_logit: row[HEAD_BLOCK],
            on_goal_logit: row[HEAD_ON_GOAL],
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// `C = A·B + beta·C` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k.max(1) - 1) * csa || k == 0);
    assert!(b.len() > (k.max(1) - 1) * rsb + (n - 1) * csb || k == 0);
    assert!(c.len() >= (m - 1) * rsc + n);
    // SAFETY: the assertions above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// im2col for a 3×3 "same" convolution over `n` images of `channels`.
fn im2col(input: &[f64], n: usize, channels: usize, out: &mut [f64]) {
    let width = 9 * channels;
    out.fill(0.0);
    for img in 0..n {
        let base = img * PIXELS;
        for r in 0..OBS_SIZE {
            for c in 0..OBS_SIZE {
                let row = &mut out[(base + r * OBS_SIZE + c) * width..][..width];
                for ky in 0..3 {
                    let rr = r + ky;
                    if !(1..=OBS_SIZE).contains(&rr) {
                        continue;
                    }
                    for kx in 0..3 {
                        let cc = c + kx;
                        if !(1..=OBS_SIZE).contains(&cc) {
                            continue;
                        }
                        let src = (base + (rr - 1) * OBS_SIZE + (cc - 1)) * channels;
                        row[(ky * 3 + kx) * channels..][..channels].copy_from_slice(&input[src..src + channels]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch gradients back onto pixels.
fn col2im(cols: &[f64], n: usize, channels: usize, out: &mut [f64]) {
    let width = 9 * channels;
    out.fill(0.0);
    for img in 0..n {
        let base = img * PIXELS;
        for r in 0..OBS_SIZE {
            for c in 0..OBS_SIZE {
                let row = &cols[(base + r * OBS_SIZE + c) * width..][..width];
                for ky in 0..3 {
                    let rr = r + ky;
                    if !(1..=OBS_SIZE).contains(&rr) {
                        continue;
                    }
                    for kx in 0..3 {
                        let cc = c + kx;
                        if !(1..=OBS_SIZE).contains(&cc) {
                            continue;
                        }
                        let dst = (base + (rr - 1) * OBS_SIZE + (cc - 1)) * channels;
                        for (o, g) in out[dst..dst + channels].iter_mut().zip(&row[(ky * 3 + kx) * channels..]) {
                            *o += g;
                        }
                    }
                }
            }
        }
    }
}

fn add_bias_relu(z: &mut [f64], a: &mut [f64], bias: &[f64]) {
    for (zr, ar) in z.chunks_exact_mut(bias.len()).zip(a.chunks_exact_mut(bias.len())) {
        for ((zv, av), b) in zr.iter_mut().zip(ar.iter_mut()).zip(bias) {
            *zv += b;
            *av = zv.max(0.0);
        }
    }
}

/// Intermediate values of a batched forward pass, kept for backprop.
pub struct Activations {
    n: usize,
    patches1: Vec<f64>,
    z1: Vec<f64>,
    patches2: Vec<f64>,
    z2: Vec<f64>,
    /// Flat index into `z2` of each pooled maximum.
    argmax: Vec<usize>,
    dense_in: Vec<f64>,
    z3: Vec<f64>,
    a3: Vec<f64>,
    /// `[n][HEADS]` raw head outputs.
    pub heads: Vec<f64>,
}

impl Activations {
    pub fn output(&self, i: usize) -> ForwardOutput {
        ForwardOutput::from_row(&self.heads[i * HEADS..(i + 1) * HEADS])
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

pub fn forward(params: &PolicyParams, obs: &Observation) -> ForwardOutput {
    forward_batch(params, std::slice::from_ref(obs)).output(0)
}

pub fn forward_batch(params: &PolicyParams, batch: &[Observation]) -> Activations {
    forward_batch_refs(params, &batch.iter().collect::<Vec<_>>())
}

pub fn forward_batch_refs(params: &PolicyParams, batch: &[&Observation]) -> Activations {
    assert_eq!(params.values.len(), TOTAL, "parameter layout mismatch");
    let w = &params.values;
    let n = batch.len();
    let rows = n * PIXELS;

    let mut x0 = vec![0.0; rows * C0];
    for (i, obs) in batch.iter().enumerate() {
        assert_eq!(obs.channels.len(), Observation::LEN, "observation shape mismatch");
        for ch in 0..C0 {
            for p in 0..PIXELS {
                x0[(i * PIXELS + p) * C0 + ch] = obs.channels[ch * PIXELS + p];
            }
        }
    }

    let mut patches1 = vec![0.0; rows * 9 * C0];
    im2col(&x0, n, C0, &mut patches1);
    let mut z1 = vec![0.0; rows * C1];
    gemm(rows, 9 * C0, C1, &patches1, (9 * C0, 1), &w[W1..B1], (1, 9 * C0), 0.0, &mut z1, C1);
    let mut a1 = vec![0.0; rows * C1];
    add_bias_relu(&mut z1, &mut a1, &w[B1..W2]);

    let mut patches2 = vec![0.0; rows * 9 * C1];
    im2col(&a1, n, C1, &mut patches2);
    let mut z2 = vec![0.0; rows * C2];
    gemm(rows, 9 * C1, C2, &patches2, (9 * C1, 1), &w[W2..B2], (1, 9 * C1), 0.0, &mut z2, C2);
    let mut a2 = vec![0.0; rows * C2];
    add_bias_relu(&mut z2, &mut a2, &w[B2..W3]);

    let mut dense_in = vec![0.0; n * DENSE_IN];
    let mut argmax = vec![0usize; n * FLAT];
    for i in 0..n {
        for pr in 0..POOLED {
            for pc in 0..POOLED {
                for ch in 0..C2 {
                    let mut best = usize::MAX;
                    let mut best_v = f64::NEG_INFINITY;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let idx = (i * PIXELS + (2 * pr + dy) * OBS_SIZE + 2 * pc + dx) * C2 + ch;
                        if a2[idx] > best_v {
                            best_v = a2[idx];
                            best = idx;
                        }
                    }
                    let f = (pr * POOLED + pc) * C2 + ch;
                    dense_in[i * DENSE_IN + f] = best_v;
                    argmax[i * FLAT + f] = best;
                }
            }
        }
        dense_in[i * DENSE_IN + FLAT] = batch[i].goal_vec[0];
        dense_in[i * DENSE_IN + FLAT + 1] = batch[i].goal_vec[1];
    }

    let mut z3 = vec![0.0; n * HIDDEN];
    gemm(n, DENSE_IN, HIDDEN, &dense_in, (DENSE_IN, 1), &w[W3..B3], (1, DENSE_IN), 0.0, &mut z3, HIDDEN);
    let mut a3 = vec![0.0; n * HIDDEN];
    add_bias_relu(&mut z3, &mut a3, &w[B3..WH]);

    let mut heads = vec![0.0; n * HEADS];
    gemm(n, HIDDEN, HEADS, &a3, (HIDDEN, 1), &w[WH..BH], (1, HIDDEN), 0.0, &mut heads, HEADS);
    for row in heads.chunks_exact_mut(HEADS) {
        for (h, b) in row.iter_mut().zip(&w[BH..TOTAL]) {
            *h += b;
        }
    }

    Activations { n, patches1, z1, patches2, z2, argmax, dense_in, z3, a3, heads }
}

/// Backpropagates `d_heads` (`[n][HEADS]`, gradient of the loss with respect
/// to the head outputs) and accumulates parameter gradients into `grads`.
pub fn backward_batch(params: &PolicyParams, acts: &Activations, d_heads: &[f64], grads: &mut Gradients) {
    let w = &params.values;
    let g = &mut grads.values;
    let n = acts.n;
    let rows = n * PIXELS;
    assert_eq!(d_heads.len(), n * HEADS);

    // heads
    gemm(HEADS, n, HIDDEN, d_heads, (1, HEADS), &acts.a3, (HIDDEN, 1), 1.0, &mut g[WH..BH], HIDDEN);
    for row in d_heads.chunks_exact(HEADS) {
        for (gb, d) in g[BH..TOTAL].iter_mut().zip(row) {
            *gb += d;
        }
    }
    let mut dz3 = vec![0.0; n * HIDDEN];
    gemm(n, HEADS, HIDDEN, d_heads, (HEADS, 1), &w[WH..BH], (HIDDEN, 1), 0.0, &mut dz3, HIDDEN);
    relu_mask(&mut dz3, &acts.z3);

    // dense
    gemm(HIDDEN, n, DENSE_IN, &dz3, (1, HIDDEN), &acts.dense_in, (DENSE_IN, 1), 1.0, &mut g[W3..B3], DENSE_IN);
    col_sums(&dz3, HIDDEN, &mut g[B3..WH]);
    let mut d_dense_in = vec![0.0; n * DENSE_IN];
    gemm(n, HIDDEN, DENSE_IN, &dz3, (HIDDEN, 1), &w[W3..B3], (DENSE_IN, 1), 0.0, &mut d_dense_in, DENSE_IN);

    // max-pool routes each gradient to its winning input
    let mut dz2 = vec![0.0; rows * C2];
    for i in 0..n {
        for f in 0..FLAT {
            dz2[acts.argmax[i * FLAT + f]] += d_dense_in[i * DENSE_IN + f];
        }
    }
    relu_mask(&mut dz2, &acts.z2);

    // conv2
    gemm(C2, rows, 9 * C1, &dz2, (1, C2), &acts.patches2, (9 * C1, 1), 1.0, &mut g[W2..B2], 9 * C1);
    col_sums(&dz2, C2, &mut g[B2..W3]);
    let mut d_patches2 = vec![0.0; rows * 9 * C1];
    gemm(rows, C2, 9 * C1, &dz2, (C2, 1), &w[W2..B2], (9 * C1, 1), 0.0, &mut d_patches2, 9 * C1);
    let mut dz1 = vec![0.0; rows * C1];
    col2im(&d_patches2, n, C1, &mut dz1);
    relu_mask(&mut dz1, &acts.z1);

    // conv1
    gemm(C1, rows, 9 * C0, &dz1, (1, C1), &acts.patches1, (9 * C0, 1), 1.0, &mut g[W1..B1], 9 * C0);
    col_sums(&dz1, C1, &mut g[B1..W2]);
}

fn relu_mask(d: &mut [f64], z: &[f64]) {
    for (dv, zv) in d.iter_mut().zip(z) {
        if *zv <= 0.0 {
            *dv = 0.0;
        }
    }
}

fn col_sums(m: &[f64], cols: usize, out: &mut [f64]) {
    for row in m.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous() {
        let l = layout();
        assert_eq!(param_count(), TOTAL);
        assert_eq!(TOTAL, 55_528);
        for w in l.windows(2) {
            assert_eq!(w[0].offset + w[0].len, w[1].offset);
        }
        assert_eq!(block_of(W2).as_deref(), Some("conv2.weight"));
        assert_eq!(block_of(TOTAL), None);
    }

    #[test]
    fn im2col_adjoint() {
        // <im2col(x), y> == <x, col2im(y)>
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..2 * PIXELS * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..2 * PIXELS * 27).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&x, 2, 3, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&y, 2, 3, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn batch_matches_single() {
        let p = PolicyParams::init(3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let obs: Vec<Observation> = (0..3)
            .map(|_| Observation {
                channels: (0..Observation::LEN).map(|_| f64::from(rng.gen_bool(0.3) as u8)).collect(),
                goal_vec: [0.6, -0.8],
            })
            .collect();
        let batch = forward_batch(&p, &obs);
        for (i, o) in obs.iter().enumerate() {
            assert_eq!(batch.output(i), forward(&p, o));
        }
    }

    #[test]
    fn numerically_safe_helpers() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
    }
}
