//! Integer emulation of the encoder as it would run on fixed-point
//! neuromorphic hardware.
//!
//! Weights are quantised per layer with a symmetric scale. Traces, membrane
//! potentials and the heads' inputs are fixed-point integers with
//! `state_bits - 8` fractional bits; products accumulate in 64-bit integers,
//! or 128-bit when the word sizes could overflow that. Values that leave the
//! representable range saturate and are counted.

use crate::autodiff::{ParamStore, Tensor};
use crate::events::FrameSequence;

use super::encoder::{EncoderParams, LayerKind, SpikingEncoder, Stage, LOGVAR_CLAMP};
use super::{LifParams, SnnError};

/// Fractional bits of the decay constants.
const DECAY_BITS: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantScheme {
    pub weight_bits: u32,
    pub state_bits: u32,
}

impl Default for QuantScheme {
    fn default() -> Self {
        Self {
            weight_bits: 8,
            state_bits: 24,
        }
    }
}

impl QuantScheme {
    pub fn validate(&self) -> Result<(), SnnError> {
        for (name, b) in [("weight", self.weight_bits), ("state", self.state_bits)] {
            if !(4..=32).contains(&b) {
                return Err(SnnError::Quant(format!("{name} bits {b} outside [4, 32]")));
            }
        }
        if self.state_bits < 12 {
            return Err(SnnError::Quant(format!(
                "state needs at least 12 bits (8 integer + 4 fractional), got {}",
                self.state_bits
            )));
        }
        Ok(())
    }

    pub fn frac_bits(&self) -> u32 {
        self.state_bits - 8
    }

    fn weight_max(&self) -> i64 {
        (1i64 << (self.weight_bits - 1)) - 1
    }

    fn state_max(&self) -> i64 {
        (1i64 << (self.state_bits - 1)) - 1
    }
}

/// One layer's integer weights: real weight = `scale * q`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantLayer {
    pub shape: Vec<usize>,
    pub q: Vec<i32>,
    pub scale: f64,
    pub bias: Vec<f32>,
}

impl QuantLayer {
    pub fn quantize(w: &Tensor, b: &Tensor, scheme: &QuantScheme) -> Self {
        let qmax = scheme.weight_max();
        let max_abs = w.max_abs() as f64;
        let scale = if max_abs > 0.0 { max_abs / qmax as f64 } else { 1.0 };
        let q = w
            .data()
            .iter()
            .map(|&v| ((v as f64 / scale).round_ties_even() as i64).clamp(-qmax, qmax) as i32)
            .collect();
        Self {
            shape: w.shape().to_vec(),
            q,
            scale,
            bias: b.data().to_vec(),
        }
    }

    pub fn dequantized(&self) -> Tensor {
        let data = self.q.iter().map(|&q| (q as f64 * self.scale) as f32).collect();
        Tensor::new(self.shape.clone(), data).expect("own shape")
    }

    fn fan_in(&self) -> usize {
        self.shape[1..].iter().product()
    }
}

#[derive(Debug, Clone)]
pub struct QuantizedEncoder {
    pub scheme: QuantScheme,
    plan: Vec<Stage>,
    lif: LifParams,
    /// One entry per LIF layer.
    pub layers: Vec<QuantLayer>,
    pub mu: QuantLayer,
    pub logvar: QuantLayer,
    input: [usize; 3],
}

pub fn quantize_encoder(
    encoder: &SpikingEncoder,
    store: &ParamStore,
    params: &EncoderParams,
    scheme: QuantScheme,
) -> Result<QuantizedEncoder, SnnError> {
    scheme.validate()?;
    let q = |(w, b)| QuantLayer::quantize(store.get(w), store.get(b), &scheme);
    Ok(QuantizedEncoder {
        scheme,
        plan: encoder.plan().to_vec(),
        lif: encoder.spec().lif,
        layers: params.layers.iter().map(|&p| q(p)).collect(),
        mu: q(params.mu),
        logvar: q(params.logvar),
        input: encoder.spec().input,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantOutput {
    pub mu: Tensor,
    pub logvar: Tensor,
    /// Number of state values that had to be saturated.
    pub overflows: u64,
}

/// Integer accumulator, 64 or 128 bits wide.
trait Acc: Copy + Default + std::ops::AddAssign + std::ops::Mul<Output = Self> {
    fn from_i64(v: i64) -> Self;
    fn to_f64(self) -> f64;
}

impl Acc for i64 {
    fn from_i64(v: i64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Acc for i128 {
    fn from_i64(v: i64) -> Self {
        v as i128
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

/// `round(v / 2^shift)` with ties to even.
fn shift_round(v: i128, shift: u32) -> i128 {
    if shift == 0 {
        return v;
    }
    let floor = v >> shift;
    let rem = v - (floor << shift);
    let half = 1i128 << (shift - 1);
    if rem > half || (rem == half && floor & 1 == 1) {
        floor + 1
    } else {
        floor
    }
}

struct Fixed {
    frac: u32,
    max: i64,
    overflows: u64,
}

impl Fixed {
    fn saturate(&mut self, v: i128) -> i64 {
        let m = self.max as i128;
        if v > m || v < -m - 1 {
            self.overflows += 1;
            v.clamp(-m - 1, m) as i64
        } else {
            v as i64
        }
    }

    fn from_real(&mut self, v: f64) -> i64 {
        let scaled = (v * (1u64 << self.frac) as f64).round_ties_even();
        self.saturate(scaled.clamp(-1e30, 1e30) as i128)
    }

    /// `d * x + (1 - d) * y` with `d` in `DECAY_BITS` fixed point.
    fn mix(&mut self, d: i64, x: i64, y: i64) -> i64 {
        let one = 1i128 << DECAY_BITS;
        let v = d as i128 * x as i128 + (one - d as i128) * y as i128;
        self.saturate(shift_round(v, DECAY_BITS))
    }
}

struct IntLayer {
    p: Vec<i64>,
    q: Vec<i64>,
    r: Vec<i64>,
    u: Vec<i64>,
}

/// `sum_i w[o, i] * x[i]` over the flattened input, or a convolution, for
/// nonzero inputs only. Returns real-valued drive `scale * acc`.
fn drive<A: Acc>(stage: &Stage, layer: &QuantLayer, x: &[i64], out: &mut [f64], frac: u32) {
    let unit = layer.scale / (1u64 << frac) as f64;
    match stage.kind {
        LayerKind::Conv {
            kernel,
            padding,
            stride,
            ..
        } => {
            let (ci, h, w) = (stage.input[0], stage.input[1], stage.input[2]);
            let (co, ho, wo) = (stage.output[0], stage.output[1], stage.output[2]);
            let mut acc = vec![A::default(); co * ho * wo];
            let k2 = kernel * kernel;
            for c in 0..ci {
                for y in 0..h {
                    for xx in 0..w {
                        let v = x[(c * h + y) * w + xx];
                        if v == 0 {
                            continue;
                        }
                        let v = A::from_i64(v);
                        for ky in 0..kernel {
                            let ny = y + padding;
                            if ny < ky || (ny - ky) % stride != 0 || (ny - ky) / stride >= ho {
                                continue;
                            }
                            let oy = (ny - ky) / stride;
                            for kx in 0..kernel {
                                let nx = xx + padding;
                                if nx < kx || (nx - kx) % stride != 0 || (nx - kx) / stride >= wo {
                                    continue;
                                }
                                let ox = (nx - kx) / stride;
                                for o in 0..co {
                                    let wq = layer.q[(o * ci + c) * k2 + ky * kernel + kx];
                                    acc[(o * ho + oy) * wo + ox] += A::from_i64(wq as i64) * v;
                                }
                            }
                        }
                    }
                }
            }
            for (o, a) in out.iter_mut().zip(acc) {
                *o = a.to_f64() * unit;
            }
        }
        _ => {
            let n = layer.fan_in();
            for (o, row) in out.iter_mut().zip(layer.q.chunks_exact(n)) {
                let mut acc = A::default();
                for (&wq, &v) in row.iter().zip(x) {
                    if v != 0 {
                        acc += A::from_i64(wq as i64) * A::from_i64(v);
                    }
                }
                *o = acc.to_f64() * unit;
            }
        }
    }
}

impl QuantizedEncoder {
    /// Whether `fan_in` products of full-scale weights and states can
    /// exceed an i64.
    fn needs_wide(&self, fan_in: usize) -> bool {
        let bits = (self.scheme.weight_bits - 1)
            + (self.scheme.state_bits - 1)
            + (usize::BITS - fan_in.max(1).leading_zeros());
        bits > 62
    }

    fn drive(&self, stage: &Stage, layer: &QuantLayer, x: &[i64], out: &mut [f64]) {
        let frac = self.scheme.frac_bits();
        if self.needs_wide(layer.fan_in()) {
            drive::<i128>(stage, layer, x, out, frac)
        } else {
            drive::<i64>(stage, layer, x, out, frac)
        }
    }

    pub fn encode(&self, frames: &FrameSequence) -> Result<QuantOutput, SnnError> {
        let got = [
            frames.frame_len() / (frames.height() * frames.width()).max(1),
            frames.height(),
            frames.width(),
        ];
        if got != self.input {
            return Err(SnnError::InputShape {
                expected: self.input,
                got,
            });
        }
        let mut fx = Fixed {
            frac: self.scheme.frac_bits(),
            max: self.scheme.state_max(),
            overflows: 0,
        };
        let decay = |d: f32| (d as f64 * (1u64 << DECAY_BITS) as f64).round_ties_even() as i64;
        let (alpha, beta, gamma) = (decay(self.lif.alpha()), decay(self.lif.beta()), decay(self.lif.gamma()));
        let th = fx.from_real(self.lif.threshold as f64);
        let one = 1i64 << fx.frac;

        let lif_stages: Vec<&Stage> = self.plan.iter().filter(|s| s.is_lif()).collect();
        let mut state: Vec<IntLayer> = lif_stages
            .iter()
            .map(|st| {
                let n_in = st.input.iter().product();
                let n_out = st.output.iter().product();
                IntLayer {
                    p: vec![0; n_in],
                    q: vec![0; n_in],
                    r: vec![0; n_out],
                    u: vec![0; n_out],
                }
            })
            .collect();
        let biases: Vec<Vec<i64>> = self
            .layers
            .iter()
            .map(|l| l.bias.iter().map(|&b| fx.from_real(b as f64)).collect())
            .collect();

        let mut real = Vec::new();
        for t in 0..frames.bins() {
            // Spike counts flowing between layers, as plain integers.
            let mut spikes: Vec<i64> = frames.frame(t).iter().map(|&c| c as i64).collect();
            let mut shape = self.input.to_vec();
            let mut li = 0;
            for st in &self.plan {
                match st.kind {
                    LayerKind::Pool(1) => {}
                    LayerKind::Pool(k) => {
                        spikes = sum_pool_int(&spikes, &shape, k);
                        shape = st.output.clone();
                    }
                    _ => {
                        let layer = &self.layers[li];
                        let s = &mut state[li];
                        real.resize(s.u.len(), 0.0);
                        self.drive(st, layer, &s.p, &mut real);
                        let plane = s.u.len() / biases[li].len();
                        let mut out = vec![0i64; s.u.len()];
                        for i in 0..s.u.len() {
                            let b = biases[li][i / plane];
                            let refr = shift_round(th as i128 * s.r[i] as i128, fx.frac);
                            let d = fx.from_real(real[i]) as i128;
                            s.u[i] = fx.saturate(d + b as i128 - refr);
                            out[i] = (s.u[i] >= th) as i64;
                        }
                        for i in 0..s.p.len() {
                            let (p, q) = (s.p[i], s.q[i]);
                            s.p[i] = fx.mix(alpha, p, q);
                            let sin = fx.saturate((spikes[i] as i128) << fx.frac);
                            s.q[i] = fx.mix(beta, q, sin);
                        }
                        for i in 0..s.r.len() {
                            s.r[i] = fx.mix(gamma, s.r[i], out[i] * one);
                        }
                        spikes = out;
                        shape = st.output.clone();
                        li += 1;
                    }
                }
            }
        }

        let u_last = &state.last().expect("validated plan").u;
        let head = |layer: &QuantLayer| -> Vec<f32> {
            let stage = Stage {
                row: 0,
                kind: LayerKind::Dense {
                    units: layer.shape[0],
                },
                input: vec![layer.fan_in()],
                output: vec![layer.shape[0]],
            };
            let mut out = vec![0.0; layer.shape[0]];
            self.drive(&stage, layer, u_last, &mut out);
            out.iter().zip(&layer.bias).map(|(&d, &b)| (d + b as f64) as f32).collect()
        };
        let mu = head(&self.mu);
        let logvar = head(&self.logvar)
            .into_iter()
            .map(|v| v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP))
            .collect();
        Ok(QuantOutput {
            mu: Tensor::from_vec(mu),
            logvar: Tensor::from_vec(logvar),
            overflows: fx.overflows,
        })
    }
}

fn sum_pool_int(x: &[i64], shape: &[usize], k: usize) -> Vec<i64> {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let (ho, wo) = (h / k, w / k);
    let mut out = vec![0; c * ho * wo];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                out[(ch * ho + y / k) * wo + xx / k] += x[(ch * h + y) * w + xx];
            }
        }
    }
    out
}

/// Free-function form of [`QuantizedEncoder::encode`].
pub fn quant_encode(encoder: &QuantizedEncoder, frames: &FrameSequence) -> Result<QuantOutput, SnnError> {
    encoder.encode(frames)
}
