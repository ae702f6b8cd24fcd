//! Oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::collections::BTreeMap;

use hgvae::autodiff::{ConvGeometry, Eager, Graph, ParamId, ParamStore, Tape, Tensor, Unary, Var, Binary};
use hgvae::events::{time_surface, FrameSequence, BIN_US};
use hgvae::snn::{
    lif_step, EncoderParams, EncoderSpec, LayerKind, LayerSpec, LayerState, LifParams, SpikingEncoder, Synapse,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f32 = 1e-3;
pub const FD_TOL: f64 = 1e-3;

type Build = dyn Fn(&mut Tape, &[Var]) -> Var;

pub fn random(shape: &[usize], lo: f32, hi: f32, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Reduces an arbitrary output to a scalar with fixed random weights so every
/// output element contributes a distinct amount.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let shape = tape.value(&y).shape().to_vec();
    let r = random(&shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    let r = tape.constant(r);
    let p = tape.mul(&y, &r).unwrap();
    tape.sum(&p)
}

/// The same reduction as [`weighted_sum`], accumulated in f64 so the
/// difference quotient is not swamped by f32 summation error.
fn loss_value(build: &Build, inputs: &[Tensor], scalar_out: bool) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let y = tape.value(&out).clone();
    if scalar_out {
        return y.item().unwrap() as f64;
    }
    let r = random(y.shape(), -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(99));
    y.data().iter().zip(r.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// Largest norm-wise relative error between the tape gradient and central
/// differences over all inputs.
fn fd_error(build: &Build, inputs: Vec<Tensor>, scalar_out: bool) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = build(&mut tape, &vars);
    let l = if scalar_out { y } else { weighted_sum(&mut tape, y, 99) };
    let grads = tape.backward(l).unwrap();

    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match grads.wrt(*v) {
            Some(g) => g.data().iter().map(|&x| x as f64).collect(),
            None => vec![0.0; inputs[i].len()],
        };
        let mut numeric = Vec::with_capacity(inputs[i].len());
        for j in 0..inputs[i].len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= H;
            let d = (loss_value(build, &plus, scalar_out) - loss_value(build, &minus, scalar_out))
                / (2.0 * H as f64);
            numeric.push(d);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-3);
        worst = worst.max(diff / norm);
    }
    worst
}

fn instances() -> impl Iterator<Item = ChaCha8Rng> {
    (0..20u64).map(|s| ChaCha8Rng::seed_from_u64(1000 + s))
}

pub fn conv2d_gradients(report: &mut FdReport) {
    for mut rng in instances() {
        let (c, o, k) = (rng.gen_range(1..3), rng.gen_range(1..3), rng.gen_range(1..4));
        let (p, s) = (rng.gen_range(0..k), rng.gen_range(1..3));
        let h = rng.gen_range(k.max(2)..6);
        let geom = ConvGeometry::new(p, s);
        let inputs = vec![
            random(&[c, h, h], -1.0, 1.0, &mut rng),
            random(&[o, c, k, k], -1.0, 1.0, &mut rng),
            random(&[o], -1.0, 1.0, &mut rng),
        ];
        let build = move |t: &mut Tape, v: &[Var]| t.conv2d(&v[0], &v[1], &v[2], geom).unwrap();
        report.check("conv2d", &build, inputs, false);
    }
}

pub fn conv_transpose2d_gradients(report: &mut FdReport) {
    for mut rng in instances() {
        let (c, o, k) = (rng.gen_range(1..3), rng.gen_range(1..3), rng.gen_range(2..5));
        let s = rng.gen_range(1..3);
        let p = rng.gen_range(0..k / 2 + 1);
        let h = rng.gen_range(1..4);
        let geom = ConvGeometry::new(p, s);
        if geom.transpose_out(h, k).is_none() {
            continue;
        }
        let inputs = vec![
            random(&[c, h, h], -1.0, 1.0, &mut rng),
            random(&[c, o, k, k], -1.0, 1.0, &mut rng),
            random(&[o], -1.0, 1.0, &mut rng),
        ];
        let build =
            move |t: &mut Tape, v: &[Var]| t.conv_transpose2d(&v[0], &v[1], &v[2], geom).unwrap();
        report.check("conv_transpose2d", &build, inputs, false);
    }
}

pub fn pool_affine_reshape_gather_gradients(report: &mut FdReport) {
    for mut rng in instances() {
        let k = rng.gen_range(1..3);
        let hw = k * rng.gen_range(1..4);
        let x = random(&[2, hw, hw], -1.0, 1.0, &mut rng);
        let build = move |t: &mut Tape, v: &[Var]| t.sum_pool(&v[0], k).unwrap();
        report.check("sum_pool", &build, vec![x], false);

        let (n, m) = (rng.gen_range(1..6), rng.gen_range(1..5));
        let inputs = vec![
            random(&[n], -1.0, 1.0, &mut rng),
            random(&[m, n], -1.0, 1.0, &mut rng),
            random(&[m], -1.0, 1.0, &mut rng),
        ];
        let build = |t: &mut Tape, v: &[Var]| t.affine(&v[0], &v[1], &v[2]).unwrap();
        report.check("affine", &build, inputs, false);

        let x = random(&[2, 3], -1.0, 1.0, &mut rng);
        let idx: Vec<usize> = (0..4).map(|_| rng.gen_range(0..6)).collect();
        let build = move |t: &mut Tape, v: &[Var]| {
            let r = t.reshape(&v[0], &[6]).unwrap();
            t.gather(&r, &idx).unwrap()
        };
        report.check("reshape+gather", &build, vec![x], false);
    }
}

pub fn elementwise_gradients(report: &mut FdReport) {
    for mut rng in instances() {
        let shape = [rng.gen_range(1..4), rng.gen_range(1..4)];
        let k: f32 = rng.gen_range(-2.0..2.0);
        // Non-smooth ops are sampled away from their kinks.
        let away = |rng: &mut ChaCha8Rng| {
            let mut t = random(&shape, 0.1, 1.0, rng);
            for v in t.data_mut() {
                if rng.gen_bool(0.5) {
                    *v = -*v;
                }
            }
            t
        };
        let cases: Vec<(Unary, Tensor)> = vec![
            (Unary::Scale(k), random(&shape, -1.0, 1.0, &mut rng)),
            (Unary::Sigmoid, random(&shape, -3.0, 3.0, &mut rng)),
            (Unary::Exp, random(&shape, -1.0, 1.0, &mut rng)),
            (Unary::Log, random(&shape, 0.5, 2.0, &mut rng)),
            (Unary::Square, random(&shape, -2.0, 2.0, &mut rng)),
            (Unary::Relu, away(&mut rng)),
            (Unary::Clamp(-0.05, 0.05), away(&mut rng)),
        ];
        for (op, x) in cases {
            let build = move |t: &mut Tape, v: &[Var]| t.unary(op, &v[0]);
            let name = match op {
                Unary::Scale(_) => "Scale".to_string(),
                Unary::Clamp(..) => "Clamp".to_string(),
                other => format!("{other:?}"),
            };
            report.check(&name, &build, vec![x], false);
        }
        for op in [Binary::Add, Binary::Sub, Binary::Mul] {
            let a = random(&shape, -1.0, 1.0, &mut rng);
            let b = random(&shape, -1.0, 1.0, &mut rng);
            let build = move |t: &mut Tape, v: &[Var]| t.binary(op, &v[0], &v[1]).unwrap();
            report.check(&format!("{op:?}"), &build, vec![a.clone(), b], false);
            let s = Tensor::scalar(rng.gen_range(-1.0..1.0));
            report.check(&format!("{op:?} scalar rhs"), &build, vec![a.clone(), s.clone()], false);
            report.check(&format!("{op:?} scalar lhs"), &build, vec![s, a], false);
        }
        let alpha: f32 = rng.gen_range(0.0..1.0);
        let build = move |t: &mut Tape, v: &[Var]| t.mix(&v[0], &v[1], alpha).unwrap();
        let (x, y) = (random(&shape, -1.0, 1.0, &mut rng), random(&shape, -1.0, 1.0, &mut rng));
        report.check("mix", &build, vec![x, y], false);

        let th: f32 = rng.gen_range(0.2..1.5);
        let build = move |t: &mut Tape, v: &[Var]| t.fast_sigmoid(&v[0], th, 10.0);
        let mut u = away(&mut rng);
        for v in u.data_mut() {
            *v = th + 0.5 * *v;
        }
        report.check("fast_sigmoid", &build, vec![u], false);
    }
}

pub fn reduction_and_loss_gradients(report: &mut FdReport) {
    for mut rng in instances() {
        let n = rng.gen_range(2..7);
        let x = random(&[n], -2.0, 2.0, &mut rng);
        let build = |t: &mut Tape, v: &[Var]| t.sum(&v[0]);
        report.check("sum", &build, vec![x.clone()], true);
        let build = |t: &mut Tape, v: &[Var]| t.mean(&v[0]);
        report.check("mean", &build, vec![x.clone()], true);

        let target = rng.gen_range(0..n);
        let build = move |t: &mut Tape, v: &[Var]| t.softmax_cross_entropy(&v[0], target).unwrap();
        report.check("softmax_cross_entropy", &build, vec![x.clone()], true);

        let targets = random(&[n], 0.0, 1.0, &mut rng);
        let build = move |t: &mut Tape, v: &[Var]| t.bce_with_logits(&v[0], &targets).unwrap();
        report.check("bce_with_logits", &build, vec![x], true);
    }
}

/// conv -> fast sigmoid -> pool -> affine, the smooth stand-in for a spiking
/// layer, checked end to end.
pub fn smooth_subnetwork_gradients(report: &mut FdReport) {
    for mut rng in instances() {
        let inputs = vec![
            random(&[2, 4, 4], 0.0, 1.0, &mut rng),
            random(&[3, 2, 3, 3], -0.5, 0.5, &mut rng),
            random(&[3], -0.2, 0.2, &mut rng),
            random(&[4, 12], -0.5, 0.5, &mut rng),
            random(&[4], -0.2, 0.2, &mut rng),
        ];
        let build = move |t: &mut Tape, v: &[Var]| {
            let c = t.conv2d(&v[0], &v[1], &v[2], ConvGeometry::new(1, 1)).unwrap();
            let s = t.fast_sigmoid(&c, 0.3, 2.0);
            let p = t.sum_pool(&s, 2).unwrap();
            let f = t.reshape(&p, &[12]).unwrap();
            let y = t.affine(&f, &v[3], &v[4]).unwrap();
            let sq = t.unary(Unary::Square, &y);
            let e = t.unary(Unary::Sigmoid, &sq);
            t.sub(&y, &e).unwrap()
        };
        report.check("smooth subnetwork", &build, inputs, false);
    }
}


/// Worst finite-difference error and instance count per primitive.
#[derive(Default)]
pub struct FdReport {
    pub entries: BTreeMap<String, (usize, f64)>,
}

impl FdReport {
    pub fn check(&mut self, name: &str, build: &Build, inputs: Vec<Tensor>, scalar_out: bool) {
        let err = fd_error(build, inputs, scalar_out);
        let e = self.entries.entry(name.to_string()).or_insert((0, 0.0));
        e.0 += 1;
        e.1 = e.1.max(err);
    }

    /// Primitives whose worst error reaches the tolerance.
    pub fn failures(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, &(_, e))| !(e < FD_TOL))
            .map(|(n, &(k, e))| format!("{n}: {e:.3e} over {k} instances"))
            .collect()
    }

    pub fn min_instances(&self) -> usize {
        self.entries.values().map(|&(k, _)| k).min().unwrap_or(0)
    }
}

/// Every primitive family in one report.
pub fn all_gradients() -> FdReport {
    let mut r = FdReport::default();
    conv2d_gradients(&mut r);
    conv_transpose2d_gradients(&mut r);
    pool_affine_reshape_gather_gradients(&mut r);
    elementwise_gradients(&mut r);
    reduction_and_loss_gradients(&mut r);
    smooth_subnetwork_gradients(&mut r);
    r
}

pub fn random_frames(bins: usize, side: usize, density: f64, rng: &mut ChaCha8Rng) -> FrameSequence {
    let n = bins * 2 * side * side;
    let counts = (0..n)
        .map(|_| if rng.gen_bool(density) { rng.gen_range(1..4) } else { 0 })
        .collect();
    FrameSequence::from_counts(bins, BIN_US, side, side, counts).unwrap()
}

/// 2x8x8 input, one conv layer, a dense readout and 4-d heads.
pub fn tiny_spec(threshold: f32) -> EncoderSpec {
    EncoderSpec {
        input: [2, 8, 8],
        layers: vec![
            LayerSpec {
                row: 1,
                kind: LayerKind::Pool(2),
            },
            LayerSpec {
                row: 2,
                kind: LayerKind::Conv {
                    channels: 3,
                    kernel: 3,
                    padding: 1,
                    stride: 1,
                },
            },
            LayerSpec {
                row: 3,
                kind: LayerKind::Dense { units: 6 },
            },
        ],
        latent_dim: 4,
        lif: LifParams {
            threshold,
            ..LifParams::default()
        },
        truncation: 100,
    }
}

pub fn tiny_encoder(threshold: f32, seed: u64) -> (SpikingEncoder, ParamStore, EncoderParams) {
    let enc = SpikingEncoder::new(tiny_spec(threshold)).unwrap();
    let mut store = ParamStore::new();
    let params = enc.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (enc, store, params)
}

/// Worst elementwise gap between `time_surface` and the synaptic trace Q of
/// an identity pass-through LIF layer, over 100 random streams.
pub fn trace_equivalence_error() -> f32 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut identity = Tensor::zeros(&[2, 2, 1, 1]);
    identity.data_mut()[0] = 1.0;
    identity.data_mut()[3] = 1.0;
    let bias = Tensor::zeros(&[2]);
    let mut worst = 0.0f32;
    for i in 0..100 {
        let tau = [5.0, 10.0, 20.0][i % 3];
        let bins = rng.gen_range(1..60);
        let frames = random_frames(bins, 6, 0.2, &mut rng);
        let lif = LifParams {
            tau_syn: tau,
            ..LifParams::default()
        };
        let mut st = LayerState::zeros(&[2, 6, 6], &[2, 6, 6]);
        for t in 0..bins {
            let x = Tensor::new(vec![2, 6, 6], frames.frame_f32(t)).unwrap();
            lif_step(&mut Eager, Synapse::Conv(ConvGeometry::new(0, 1)), &lif, &mut st, &x, &identity, &bias)
                .unwrap();
        }
        let ts = time_surface(&frames, tau).unwrap();
        for (q, t) in st.q.data().iter().zip(&ts.data) {
            worst = worst.max((q - t).abs());
        }
    }
    worst
}

/// 150-step rollout cut every 50 steps. Returns the largest input gradient
/// before step 100 and after it.
pub fn truncation_gradients() -> (f32, f32) {
    let (enc, store, params) = tiny_encoder(0.05, 5);
    let frames = random_frames(150, 8, 0.3, &mut ChaCha8Rng::seed_from_u64(4));
    let mut tape = Tape::new();
    let inputs: Vec<Var> = (0..150)
        .map(|t| tape.leaf(enc.input_frame(&frames, t).unwrap()))
        .collect();
    let (mu, lv) = enc.encode_on_tape(&mut tape, &store, &params, &inputs, Some(50)).unwrap();
    let s = tape.add(&mu, &lv).unwrap();
    let loss = tape.sum(&s);
    let grads = tape.backward(loss).unwrap();
    let max_over = |vars: &[Var]| {
        vars.iter()
            .filter_map(|v| grads.wrt(*v))
            .map(|g| g.max_abs())
            .fold(0.0, f32::max)
    };
    (max_over(&inputs[..100]), max_over(&inputs[100..]))
}

/// Two single-neuron LIF layers in series, five steps, loss = final U of the
/// second neuron. Returns the worst relative error of the tape's parameter
/// gradients against a reverse pass below is derived by hand from the update
/// equations, with the fast-sigmoid surrogate standing in for dS/dU.
pub fn two_neuron_error() -> f64 {
    let lif = LifParams {
        threshold: 0.3,
        ..LifParams::default()
    };
    let (a, b, g, th, k) = (
        lif.alpha() as f64,
        lif.beta() as f64,
        lif.gamma() as f64,
        lif.threshold as f64,
        lif.slope as f64,
    );
    let sg = |u: f64| 1.0 / (1.0 + k * (u - th).abs()).powi(2);
    let (w1, b1, w2, b2) = (30.0f64, 0.05f64, 80.0f64, -0.02f64);
    let xs = [2.0f64, 1.0, 0.0, 3.0, 1.0];
    let steps = xs.len();

    // Forward, recording what the reverse pass needs.
    #[derive(Clone, Copy, Default)]
    struct Pre {
        pa: f64,
        ua: f64,
        pb: f64,
        ub: f64,
    }
    let mut pre = Vec::new();
    let (mut pa, mut qa, mut ra, mut pb, mut qb, mut rb) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let mut spikes = Vec::new();
    for &x in &xs {
        let ua = w1 * pa + b1 - th * ra;
        let sa = (ua >= th) as u8 as f64;
        let ub = w2 * pb + b2 - th * rb;
        let sb = (ub >= th) as u8 as f64;
        pre.push(Pre { pa, ua, pb, ub });
        spikes.push((sa, sb));
        (pa, qa, ra) = (a * pa + (1.0 - a) * qa, b * qa + (1.0 - b) * x, g * ra + (1.0 - g) * sa);
        (pb, qb, rb) = (a * pb + (1.0 - a) * qb, b * qb + (1.0 - b) * sa, g * rb + (1.0 - g) * sb);
    }
    assert!(spikes.iter().any(|s| s.0 == 1.0));

    // Reverse. `n*` are adjoints of the state leaving the step.
    let (mut npa, mut nqa, mut nra, mut npb, mut nqb, mut nrb) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut gw1, mut gb1, mut gw2, mut gb2) = (0.0, 0.0, 0.0, 0.0);
    for t in (0..steps).rev() {
        let s = pre[t];
        let gub_ext = if t == steps - 1 { 1.0 } else { 0.0 };
        let mut gpb = a * npb;
        let gqb = b * nqb + (1.0 - a) * npb;
        let mut grb = g * nrb;
        let gsb = (1.0 - g) * nrb;
        let mut gsa = (1.0 - b) * nqb;
        let gub = gub_ext + gsb * sg(s.ub);
        gw2 += gub * s.pb;
        gb2 += gub;
        gpb += w2 * gub;
        grb -= th * gub;

        let mut gpa = a * npa;
        let gqa = b * nqa + (1.0 - a) * npa;
        let mut gra = g * nra;
        gsa += (1.0 - g) * nra;
        let gua = gsa * sg(s.ua);
        gw1 += gua * s.pa;
        gb1 += gua;
        gpa += w1 * gua;
        gra -= th * gua;

        (npa, nqa, nra, npb, nqb, nrb) = (gpa, gqa, gra, gpb, gqb, grb);
    }

    let mut tape = Tape::new();
    let t = |v: f64| Tensor::from_vec(vec![v as f32]);
    let m = |v: f64| Tensor::new(vec![1, 1], vec![v as f32]).unwrap();
    let pw1 = tape.param(ParamId(0), &m(w1));
    let pb1 = tape.param(ParamId(1), &t(b1));
    let pw2 = tape.param(ParamId(2), &m(w2));
    let pb2 = tape.param(ParamId(3), &t(b2));
    let zero = |tape: &mut Tape| LayerState {
        p: tape.constant(t(0.0)),
        q: tape.constant(t(0.0)),
        r: tape.constant(t(0.0)),
        u: tape.constant(t(0.0)),
        s: tape.constant(t(0.0)),
    };
    let mut la = zero(&mut tape);
    let mut lb = zero(&mut tape);
    for (i, &x) in xs.iter().enumerate() {
        let xv = tape.constant(t(x));
        let sa = lif_step(&mut tape, Synapse::Dense, &lif, &mut la, &xv, &pw1, &pb1).unwrap();
        let sb = lif_step(&mut tape, Synapse::Dense, &lif, &mut lb, &sa, &pw2, &pb2).unwrap();
        assert_eq!(tape.value(&sa).data()[0] as f64, spikes[i].0);
        assert_eq!(tape.value(&sb).data()[0] as f64, spikes[i].1);
    }
    let loss = tape.sum(&lb.u);
    assert!((tape.value(&loss).data()[0] as f64 - pre[steps - 1].ub).abs() < 1e-5);
    let grads = tape.backward(loss).unwrap();
    let mut worst = 0.0f64;
    for (id, expected) in [(0, gw1), (1, gb1), (2, gw2), (3, gb2)] {
        let got = grads.param(ParamId(id)).unwrap().data()[0] as f64;
        worst = worst.max((got - expected).abs() / expected.abs().max(1.0));
    }
    worst
}
