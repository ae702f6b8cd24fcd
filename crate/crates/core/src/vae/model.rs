//! Parameters and forward passes of the full model.

use std::ops::Range;

use rand::Rng;

use crate::autodiff::{ConvGeometry, Eager, Graph, ParamId, ParamStore, Tape, Tensor, Unary, Var};
use crate::events::{time_surface, FrameSequence};
use crate::snn::{EncoderParams, EncoderState, LayerKind, SpikingEncoder, LOGVAR_CLAMP};

use super::data::presence;
use super::{EncoderKind, TrainConfig, VaeError};

const DEC_FC: usize = 128;
const DEC_KERNEL: usize = 4;

/// Transposed-convolution decoder from the latent vector to a `[2, S, S]`
/// time-surface estimate.
#[derive(Debug, Clone)]
pub struct Decoder {
    fc: (ParamId, ParamId),
    /// `(weight, bias, geometry)` per upsampling stage.
    up: Vec<(ParamId, ParamId, ConvGeometry)>,
}

/// Output channels of each upsampling stage for an `size`-pixel output: a
/// 1x1 to 4x4 stage, then doublings with halving channels, ending at 2.
pub(crate) fn decoder_channels(size: usize) -> Vec<usize> {
    let doublings = (size / 4).trailing_zeros() as usize;
    let mut ch = vec![DEC_FC];
    for i in 0..doublings {
        ch.push(if i + 1 == doublings { 2 } else { (DEC_FC >> (i + 1)).max(8) });
    }
    if doublings == 0 {
        ch[0] = 2;
    }
    ch
}

/// The excitation classifier `c` and inhibition classifier `k` of one label
/// stream, plus the latent block they guard.
#[derive(Debug, Clone)]
pub struct GuidedPair {
    pub name: String,
    pub block: Range<usize>,
    pub exc: (ParamId, ParamId),
    pub inh: (ParamId, ParamId),
    /// Latent indices outside `block`, the input of `k`.
    pub rest: Vec<usize>,
}

/// Encoder work that does not depend on the sampled latent and can be
/// shared between the two phases of a training step.
#[derive(Debug, Clone)]
pub enum Prefix {
    /// LIF state at the last truncation boundary.
    Spiking(EncoderState<Tensor>),
    /// The final time surface, the conventional encoder's input.
    Conventional(Tensor),
}

#[derive(Debug, Clone)]
pub struct Model {
    config: TrainConfig,
    pub store: ParamStore,
    encoder: SpikingEncoder,
    enc: EncoderParams,
    decoder: Decoder,
    guided: Vec<GuidedPair>,
}

fn uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (1.0 / fan_in.max(1) as f32).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

/// Name and shape of every non-encoder parameter, with its fan-in.
fn extra_layout(config: &TrainConfig) -> Vec<(String, Vec<usize>, usize)> {
    let l = config.latent_dim;
    let mut out = vec![
        ("dec.fc.w".to_string(), vec![DEC_FC, l], l),
        ("dec.fc.b".to_string(), vec![DEC_FC], l),
    ];
    let mut ci = DEC_FC;
    for (i, co) in decoder_channels(config.input_size).into_iter().enumerate() {
        let fan = co * DEC_KERNEL * DEC_KERNEL;
        out.push((format!("dec.up{}.w", i + 1), vec![ci, co, DEC_KERNEL, DEC_KERNEL], fan));
        out.push((format!("dec.up{}.b", i + 1), vec![co], fan));
        ci = co;
    }
    for s in &config.streams {
        let m = s.classes;
        out.push((format!("cls.{}.exc.w", s.name), vec![m, m], m));
        out.push((format!("cls.{}.exc.b", s.name), vec![m], m));
        out.push((format!("cls.{}.inh.w", s.name), vec![m, l - m], l - m));
        out.push((format!("cls.{}.inh.b", s.name), vec![m], l - m));
    }
    out
}

impl Model {
    /// Fresh model with every parameter drawn from `rng`.
    pub fn new<R: Rng + ?Sized>(config: TrainConfig, rng: &mut R) -> Result<Self, VaeError> {
        config.validate().map_err(|message| VaeError::Config { line: 0, message })?;
        let encoder = SpikingEncoder::new(config.encoder_spec())?;
        let mut store = ParamStore::new();
        encoder.init_params(&mut store, rng)?;
        for (name, shape, fan) in extra_layout(&config) {
            store.insert(&name, uniform(&shape, fan, rng))?;
        }
        Self::assemble(config, store, encoder)
    }

    /// Model over previously saved parameters; every expected name must be
    /// present with the expected shape.
    pub fn from_params(config: TrainConfig, params: &[(String, Tensor)]) -> Result<Self, VaeError> {
        config.validate().map_err(|message| VaeError::Config { line: 0, message })?;
        let encoder = SpikingEncoder::new(config.encoder_spec())?;
        // Build the layout with placeholder values, then overwrite.
        let mut store = ParamStore::new();
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        encoder.init_params(&mut store, &mut rng)?;
        for (name, shape, _) in extra_layout(&config) {
            store.insert(&name, Tensor::zeros(&shape))?;
        }
        store.load(params)?;
        Self::assemble(config, store, encoder)
    }

    fn assemble(config: TrainConfig, store: ParamStore, encoder: SpikingEncoder) -> Result<Self, VaeError> {
        let enc = encoder.lookup_params(&store)?;
        let id = |name: String| store.id(&name).ok_or(VaeError::Data(format!("missing parameter {name}")));
        let pair = |base: String| -> Result<(ParamId, ParamId), VaeError> {
            Ok((id(format!("{base}.w"))?, id(format!("{base}.b"))?))
        };
        let fc = pair("dec.fc".into())?;
        let mut up = Vec::new();
        let n = decoder_channels(config.input_size).len();
        for i in 0..n {
            let (w, b) = pair(format!("dec.up{}", i + 1))?;
            let padding = if i == 0 { 0 } else { 1 };
            up.push((w, b, ConvGeometry::new(padding, 2)));
        }
        let mut guided = Vec::new();
        for (s, stream) in config.streams.iter().enumerate() {
            let block = config.guided_block(s);
            let rest = (0..config.latent_dim).filter(|i| !block.contains(i)).collect();
            guided.push(GuidedPair {
                name: stream.name.clone(),
                block,
                exc: pair(format!("cls.{}.exc", stream.name))?,
                inh: pair(format!("cls.{}.inh", stream.name))?,
                rest,
            });
        }
        Ok(Self {
            config,
            store,
            encoder,
            enc,
            decoder: Decoder { fc, up },
            guided,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn encoder(&self) -> &SpikingEncoder {
        &self.encoder
    }

    pub fn encoder_params(&self) -> &EncoderParams {
        &self.enc
    }

    pub fn guided(&self) -> &[GuidedPair] {
        &self.guided
    }

    /// Encoder and decoder parameters.
    pub fn vae_param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.enc.ids().collect();
        ids.push(self.decoder.fc.0);
        ids.push(self.decoder.fc.1);
        ids.extend(self.decoder.up.iter().flat_map(|&(w, b, _)| [w, b]));
        ids
    }

    pub fn excitation_ids(&self) -> Vec<ParamId> {
        self.guided.iter().flat_map(|p| [p.exc.0, p.exc.1]).collect()
    }

    pub fn inhibition_ids(&self) -> Vec<ParamId> {
        self.guided.iter().flat_map(|p| [p.inh.0, p.inh.1]).collect()
    }

    /// Binds a `(weight, bias)` pair, as parameters or as frozen constants.
    pub fn bind<G: Graph>(&self, g: &mut G, (w, b): (ParamId, ParamId), trainable: bool) -> (G::Value, G::Value) {
        if trainable {
            (g.param(w, self.store.get(w)), g.param(b, self.store.get(b)))
        } else {
            (g.constant(self.store.get(w).clone()), g.constant(self.store.get(b).clone()))
        }
    }

    pub fn prefix(&self, frames: &FrameSequence) -> Result<Prefix, VaeError> {
        match self.config.encoder {
            EncoderKind::Spiking => Ok(Prefix::Spiking(self.encoder.training_prefix(&self.store, &self.enc, frames)?)),
            EncoderKind::Conventional => {
                let spec = self.encoder.spec();
                if [2, frames.height(), frames.width()] != spec.input {
                    return Err(crate::snn::SnnError::InputShape {
                        expected: spec.input,
                        got: [frames.frame_len() / (frames.height() * frames.width()).max(1), frames.height(), frames.width()],
                    }
                    .into());
                }
                let ts = time_surface(&presence(frames), self.config.ts_tau)?;
                Ok(Prefix::Conventional(Tensor::new(spec.input.to_vec(), ts.data)?))
            }
        }
    }

    /// Posterior `(mu, logvar)` without recording, continuing from `prefix`.
    pub fn encode_from(&self, frames: &FrameSequence, prefix: &Prefix) -> Result<(Tensor, Tensor), VaeError> {
        match prefix {
            Prefix::Spiking(state) => {
                let mut state = state.clone();
                let start = state.steps;
                self.encoder.advance(&self.store, &self.enc, &mut state, frames, start..frames.bins())?;
                let out = self.encoder.readout(&self.store, &self.enc, &state)?;
                Ok((out.mu, out.logvar))
            }
            Prefix::Conventional(image) => {
                let x = image.clone();
                self.conventional(&mut Eager, x)
            }
        }
    }

    /// Posterior `(mu, logvar)` of a whole sample.
    pub fn encode(&self, frames: &FrameSequence) -> Result<(Tensor, Tensor), VaeError> {
        let prefix = self.prefix(frames)?;
        self.encode_from(frames, &prefix)
    }

    /// The differentiable part of the encoder, recorded on `tape`.
    pub fn encode_on_tape(&self, tape: &mut Tape, frames: &FrameSequence, prefix: &Prefix) -> Result<(Var, Var), VaeError> {
        match prefix {
            Prefix::Spiking(state) => Ok(self.encoder.finish_on_tape(tape, &self.store, &self.enc, frames, state)?),
            Prefix::Conventional(image) => {
                let x = tape.constant(image.clone());
                self.conventional(tape, x)
            }
        }
    }

    /// The conventional-encoder ablation: the same conv stack applied once to
    /// a static image with sigmoid activations; heads read the dense layer's
    /// pre-activation just as the spiking heads read membrane potential.
    fn conventional<G: Graph>(&self, g: &mut G, image: G::Value) -> Result<(G::Value, G::Value), VaeError> {
        let mut x = image;
        let mut li = 0;
        let mut pre = None;
        for st in self.encoder.plan() {
            match st.kind {
                LayerKind::Pool(1) => {}
                LayerKind::Pool(k) => {
                    let s = g.sum_pool(&x, k)?;
                    x = g.scale(&s, 1.0 / (k * k) as f32);
                }
                LayerKind::Conv { .. } => {
                    let (w, b) = self.bind(g, self.enc.layers[li], true);
                    let geom = match st.synapse() {
                        Some(crate::snn::Synapse::Conv(geom)) => geom,
                        _ => unreachable!("conv stage"),
                    };
                    let y = g.conv2d(&x, &w, &b, geom)?;
                    x = g.unary(Unary::Sigmoid, &y);
                    li += 1;
                }
                LayerKind::Dense { .. } => {
                    let (w, b) = self.bind(g, self.enc.layers[li], true);
                    let flat = g.reshape(&x, &st.trace_shape())?;
                    let y = g.affine(&flat, &w, &b)?;
                    x = g.unary(Unary::Sigmoid, &y);
                    pre = Some(y);
                    li += 1;
                }
            }
        }
        let h = pre.expect("plan ends in a dense layer");
        let (mw, mb) = self.bind(g, self.enc.mu, true);
        let (lw, lb) = self.bind(g, self.enc.logvar, true);
        let mu = g.affine(&h, &mw, &mb)?;
        let lv = g.affine(&h, &lw, &lb)?;
        let lv = g.unary(Unary::Clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP), &lv);
        Ok((mu, lv))
    }

    /// Decodes a latent vector to a `[2, S, S]` image in (0, 1).
    pub fn decode<G: Graph>(&self, g: &mut G, z: &G::Value) -> Result<G::Value, VaeError> {
        let (w, b) = self.bind(g, self.decoder.fc, true);
        let h = g.affine(z, &w, &b)?;
        let h = g.unary(Unary::Relu, &h);
        let mut x = g.reshape(&h, &[DEC_FC, 1, 1])?;
        let last = self.decoder.up.len() - 1;
        for (i, &(w, b, geom)) in self.decoder.up.iter().enumerate() {
            let (w, b) = self.bind(g, (w, b), true);
            let y = g.conv_transpose2d(&x, &w, &b, geom)?;
            x = g.unary(if i == last { Unary::Sigmoid } else { Unary::Relu }, &y);
        }
        Ok(x)
    }

    /// Eager decode of a plain latent vector.
    pub fn decode_tensor(&self, z: &Tensor) -> Result<Tensor, VaeError> {
        self.decode(&mut Eager, z)
    }

    /// Excitation logits of stream `s` from a full latent vector.
    pub fn excitation_logits(&self, s: usize, z: &Tensor) -> Result<Tensor, VaeError> {
        let p = &self.guided[s];
        let z_m = Tensor::from_vec(z.data()[p.block.clone()].to_vec());
        let (w, b) = self.bind(&mut Eager, p.exc, true);
        Ok(Eager.affine(&z_m, &w, &b)?)
    }

    /// Predicted class of stream `s`: argmax of the excitation logits, first
    /// index on ties.
    pub fn classify(&self, s: usize, z: &Tensor) -> Result<usize, VaeError> {
        Ok(argmax(self.excitation_logits(s, z)?.data()))
    }
}

pub(crate) fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
