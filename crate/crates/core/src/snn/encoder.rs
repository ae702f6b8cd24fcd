use rand::Rng;

use crate::autodiff::{
    ConvGeometry, Eager, Graph, ParamId, ParamStore, Tape, Tensor, Unary, Var,
};
use crate::events::FrameSequence;

use super::lif::{lif_step, LayerState, LifParams, Synapse};
use super::SnnError;

/// Log-variance head output is clamped to this range.
pub const LOGVAR_CLAMP: f32 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerKind {
    /// Non-overlapping `k`x`k` sum pooling of the spikes passed on.
    Pool(usize),
    Conv {
        channels: usize,
        kernel: usize,
        padding: usize,
        stride: usize,
    },
    /// Fully connected LIF layer over the flattened input.
    Dense { units: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    /// Row number in the architecture table; names the layer's parameters.
    pub row: usize,
    pub kind: LayerKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSpec {
    /// Input `[channels, height, width]` per time bin.
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub latent_dim: usize,
    pub lif: LifParams,
    /// Gradients are cut every this many steps when training.
    pub truncation: usize,
}

impl EncoderSpec {
    /// The full-size encoder: 32x32x2 input, four 7x7 conv layers with
    /// 32/64/64/128 channels, a 128-unit dense layer and 100-d heads.
    pub fn standard() -> Self {
        Self::narrow(1)
    }

    /// Same topology with every conv channel count divided by `div`.
    pub fn narrow(div: usize) -> Self {
        let div = div.max(1);
        let conv = |row, channels: usize| LayerSpec {
            row,
            kind: LayerKind::Conv {
                channels: (channels / div).max(1),
                kernel: 7,
                padding: 3,
                stride: 1,
            },
        };
        let pool = |row, k| LayerSpec {
            row,
            kind: LayerKind::Pool(k),
        };
        Self {
            input: [2, 32, 32],
            layers: vec![
                pool(1, 2),
                conv(2, 32),
                pool(3, 1),
                conv(4, 64),
                pool(5, 2),
                conv(6, 64),
                pool(7, 1),
                conv(8, 128),
                pool(9, 1),
                LayerSpec {
                    row: 10,
                    kind: LayerKind::Dense { units: 128 },
                },
            ],
            latent_dim: 100,
            lif: LifParams::default(),
            truncation: 100,
        }
    }

    /// Resolves every layer's input and output shape.
    pub fn plan(&self) -> Result<Vec<Stage>, SnnError> {
        self.lif.validate()?;
        if self.latent_dim == 0 {
            return Err(SnnError::InvalidSpec("latent dimension must be positive".into()));
        }
        if self.truncation == 0 {
            return Err(SnnError::InvalidSpec("truncation window must be positive".into()));
        }
        let mut shape = self.input.to_vec();
        let mut stages = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = shape.clone();
            let bad = |msg: String| SnnError::InvalidSpec(format!("row {}: {msg}", layer.row));
            match layer.kind {
                LayerKind::Pool(k) => {
                    if input.len() != 3 || k == 0 || input[1] % k != 0 || input[2] % k != 0 {
                        return Err(bad(format!("cannot pool {input:?} by {k}")));
                    }
                    shape = vec![input[0], input[1] / k, input[2] / k];
                }
                LayerKind::Conv {
                    channels,
                    kernel,
                    padding,
                    stride,
                } => {
                    if input.len() != 3 || channels == 0 || kernel == 0 || stride == 0 {
                        return Err(bad(format!("conv on {input:?}")));
                    }
                    let geom = ConvGeometry::new(padding, stride);
                    let (h, w) = geom
                        .conv_out(input[1], kernel)
                        .zip(geom.conv_out(input[2], kernel))
                        .ok_or_else(|| bad(format!("{kernel}x{kernel} kernel does not fit {input:?}")))?;
                    shape = vec![channels, h, w];
                }
                LayerKind::Dense { units } => {
                    if units == 0 {
                        return Err(bad("dense layer needs units".into()));
                    }
                    shape = vec![units];
                }
            }
            stages.push(Stage {
                row: layer.row,
                kind: layer.kind,
                input,
                output: shape.clone(),
            });
        }
        if !stages.iter().any(|s| s.is_lif()) {
            return Err(SnnError::InvalidSpec("encoder has no LIF layer".into()));
        }
        if stages.last().is_some_and(|s| !s.is_lif()) {
            return Err(SnnError::InvalidSpec("last layer must be a LIF layer".into()));
        }
        Ok(stages)
    }
}

/// A layer with resolved shapes. For dense layers `input` is the unflattened
/// shape arriving from the previous layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub row: usize,
    pub kind: LayerKind,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
}

impl Stage {
    pub fn is_lif(&self) -> bool {
        !matches!(self.kind, LayerKind::Pool(_))
    }

    pub fn synapse(&self) -> Option<Synapse> {
        match self.kind {
            LayerKind::Pool(_) => None,
            LayerKind::Conv { padding, stride, .. } => {
                Some(Synapse::Conv(ConvGeometry::new(padding, stride)))
            }
            LayerKind::Dense { .. } => Some(Synapse::Dense),
        }
    }

    /// Shape of the presynaptic traces.
    pub fn trace_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Dense { .. } => vec![self.input.iter().product()],
            _ => self.input.clone(),
        }
    }

    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match self.kind {
            LayerKind::Pool(_) => None,
            LayerKind::Conv {
                channels, kernel, ..
            } => Some(vec![channels, self.input[0], kernel, kernel]),
            LayerKind::Dense { units } => Some(vec![units, self.input.iter().product()]),
        }
    }

    pub fn weight_name(&self) -> String {
        format!("enc.layer{}.w", self.row)
    }

    pub fn bias_name(&self) -> String {
        format!("enc.layer{}.b", self.row)
    }
}

/// Handles of the encoder's tensors in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// `(weight, bias)` per LIF layer, in layer order.
    pub layers: Vec<(ParamId, ParamId)>,
    pub mu: (ParamId, ParamId),
    pub logvar: (ParamId, ParamId),
}

impl EncoderParams {
    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers
            .iter()
            .chain([&self.mu, &self.logvar])
            .flat_map(|&(w, b)| [w, b])
    }
}

/// Recurrent state of every LIF layer plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState<V> {
    pub layers: Vec<LayerState<V>>,
    pub steps: usize,
}

impl EncoderState<Tensor> {
    fn lift<G: Graph>(&self, g: &mut G) -> EncoderState<G::Value> {
        EncoderState {
            layers: self
                .layers
                .iter()
                .map(|l| l.map(|t| g.constant(t.clone())))
                .collect(),
            steps: self.steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub mu: Tensor,
    pub logvar: Tensor,
    /// Membrane potential of the readout layer after the last step.
    pub u_final: Tensor,
}

struct Bound<V> {
    layers: Vec<(V, V)>,
    mu: (V, V),
    logvar: (V, V),
}

/// The spiking encoder: a validated [`EncoderSpec`] and its resolved plan.
#[derive(Debug, Clone)]
pub struct SpikingEncoder {
    spec: EncoderSpec,
    plan: Vec<Stage>,
}

impl SpikingEncoder {
    pub fn new(spec: EncoderSpec) -> Result<Self, SnnError> {
        let plan = spec.plan()?;
        Ok(Self { spec, plan })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn plan(&self) -> &[Stage] {
        &self.plan
    }

    pub fn lif_stages(&self) -> impl Iterator<Item = &Stage> {
        self.plan.iter().filter(|s| s.is_lif())
    }

    /// Width of the readout layer feeding the heads.
    pub fn readout_dim(&self) -> usize {
        self.plan.last().expect("validated plan").output.iter().product()
    }

    /// Adds freshly initialised encoder parameters to `store`, uniform in
    /// `±sqrt(1/fan_in)` for weights and biases alike.
    pub fn init_params<R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<EncoderParams, SnnError> {
        let mut layers = Vec::new();
        for st in self.lif_stages() {
            let ws = st.weight_shape().expect("lif stage");
            let fan_in = ws[1..].iter().product();
            let w = store.insert(&st.weight_name(), uniform(&ws, fan_in, rng))?;
            let b = store.insert(&st.bias_name(), uniform(&ws[..1], fan_in, rng))?;
            layers.push((w, b));
        }
        let (r, l) = (self.readout_dim(), self.spec.latent_dim);
        let mut head = |name: &str| -> Result<(ParamId, ParamId), SnnError> {
            let w = store.insert(&format!("head.{name}.w"), uniform(&[l, r], r, rng))?;
            let b = store.insert(&format!("head.{name}.b"), uniform(&[l], r, rng))?;
            Ok((w, b))
        };
        let mu = head("mu")?;
        let logvar = head("logvar")?;
        Ok(EncoderParams { layers, mu, logvar })
    }

    /// Finds existing encoder parameters by name, checking shapes.
    pub fn lookup_params(&self, store: &ParamStore) -> Result<EncoderParams, SnnError> {
        let find = |name: String, shape: &[usize]| -> Result<ParamId, SnnError> {
            match store.id(&name) {
                Some(id) if store.get(id).shape() == shape => Ok(id),
                _ => Err(SnnError::Param(name)),
            }
        };
        let mut layers = Vec::new();
        for st in self.lif_stages() {
            let ws = st.weight_shape().expect("lif stage");
            layers.push((find(st.weight_name(), &ws)?, find(st.bias_name(), &ws[..1])?));
        }
        let (r, l) = (self.readout_dim(), self.spec.latent_dim);
        let head = |name: &str| -> Result<(ParamId, ParamId), SnnError> {
            Ok((
                find(format!("head.{name}.w"), &[l, r])?,
                find(format!("head.{name}.b"), &[l])?,
            ))
        };
        Ok(EncoderParams {
            layers,
            mu: head("mu")?,
            logvar: head("logvar")?,
        })
    }

    pub fn zero_state(&self) -> EncoderState<Tensor> {
        EncoderState {
            layers: self
                .lif_stages()
                .map(|st| LayerState::zeros(&st.trace_shape(), &st.output))
                .collect(),
            steps: 0,
        }
    }

    /// Converts bin `t` into an input tensor after checking its shape.
    pub fn input_frame(&self, frames: &FrameSequence, t: usize) -> Result<Tensor, SnnError> {
        self.check_frames(frames)?;
        Ok(Tensor::new(self.spec.input.to_vec(), frames.frame_f32(t))?)
    }

    fn check_frames(&self, frames: &FrameSequence) -> Result<(), SnnError> {
        let got = [frames.frame_len() / (frames.height() * frames.width()).max(1), frames.height(), frames.width()];
        if got != self.spec.input {
            return Err(SnnError::InputShape {
                expected: self.spec.input,
                got,
            });
        }
        Ok(())
    }

    fn bind<G: Graph>(&self, g: &mut G, store: &ParamStore, params: &EncoderParams) -> Bound<G::Value> {
        let mut pair = |(w, b): (ParamId, ParamId)| (g.param(w, store.get(w)), g.param(b, store.get(b)));
        Bound {
            layers: params.layers.iter().map(|&p| pair(p)).collect(),
            mu: pair(params.mu),
            logvar: pair(params.logvar),
        }
    }

    /// One time step through every layer. When `detach_every` is set, the
    /// state is cut from the graph before steps that are multiples of it.
    fn step<G: Graph>(
        &self,
        g: &mut G,
        bound: &Bound<G::Value>,
        state: &mut EncoderState<G::Value>,
        input: &G::Value,
        detach_every: Option<usize>,
    ) -> Result<(), SnnError> {
        if let Some(n) = detach_every {
            if state.steps > 0 && state.steps % n == 0 {
                for l in &mut state.layers {
                    *l = l.map(|v| g.detach(v));
                }
            }
        }
        let lif = &self.spec.lif;
        let mut spikes = input.clone();
        let mut li = 0;
        for st in &self.plan {
            match st.kind {
                LayerKind::Pool(1) => {}
                LayerKind::Pool(k) => spikes = g.sum_pool(&spikes, k)?,
                _ => {
                    if matches!(st.kind, LayerKind::Dense { .. }) && g.value(&spikes).rank() != 1 {
                        spikes = g.reshape(&spikes, &st.trace_shape())?;
                    }
                    let (w, b) = &bound.layers[li];
                    let synapse = st.synapse().expect("lif stage");
                    spikes = lif_step(g, synapse, lif, &mut state.layers[li], &spikes, w, b)?;
                    li += 1;
                }
            }
        }
        state.steps += 1;
        Ok(())
    }

    fn heads<G: Graph>(
        &self,
        g: &mut G,
        bound: &Bound<G::Value>,
        state: &EncoderState<G::Value>,
    ) -> Result<(G::Value, G::Value), SnnError> {
        let u = &state.layers.last().expect("validated plan").u;
        let flat = g.reshape(u, &[self.readout_dim()])?;
        let mu = g.affine(&flat, &bound.mu.0, &bound.mu.1)?;
        let lv = g.affine(&flat, &bound.logvar.0, &bound.logvar.1)?;
        let lv = g.unary(Unary::Clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP), &lv);
        Ok((mu, lv))
    }

    /// Advances `state` through bins `range` of `frames`, without recording.
    pub fn advance(
        &self,
        store: &ParamStore,
        params: &EncoderParams,
        state: &mut EncoderState<Tensor>,
        frames: &FrameSequence,
        range: std::ops::Range<usize>,
    ) -> Result<(), SnnError> {
        self.check_frames(frames)?;
        let bound = self.bind(&mut Eager, store, params);
        for t in range {
            let x = self.input_frame(frames, t)?;
            self.step(&mut Eager, &bound, state, &x, None)?;
        }
        Ok(())
    }

    /// Applies the heads to the current state.
    pub fn readout(
        &self,
        store: &ParamStore,
        params: &EncoderParams,
        state: &EncoderState<Tensor>,
    ) -> Result<EncoderOutput, SnnError> {
        let bound = self.bind(&mut Eager, store, params);
        let (mu, logvar) = self.heads(&mut Eager, &bound, state)?;
        Ok(EncoderOutput {
            mu,
            logvar,
            u_final: state.layers.last().expect("validated plan").u.clone(),
        })
    }

    /// Full rollout over every bin from a zero state.
    pub fn encode(
        &self,
        store: &ParamStore,
        params: &EncoderParams,
        frames: &FrameSequence,
    ) -> Result<EncoderOutput, SnnError> {
        let mut state = self.zero_state();
        self.advance(store, params, &mut state, frames, 0..frames.bins())?;
        self.readout(store, params, &state)
    }

    /// Full rollout recorded on `tape`, one input value per step, cutting
    /// the state from the graph every `detach_every` steps.
    pub fn encode_on_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        params: &EncoderParams,
        inputs: &[Var],
        detach_every: Option<usize>,
    ) -> Result<(Var, Var), SnnError> {
        let bound = self.bind(tape, store, params);
        let mut state = self.zero_state().lift(tape);
        for x in inputs {
            self.step(tape, &bound, &mut state, x, detach_every)?;
        }
        self.heads(tape, &bound, &state)
    }

    /// Last truncation boundary strictly before the final step of a
    /// `bins`-step rollout. Steps before it cannot receive gradient.
    pub fn truncation_boundary(&self, bins: usize) -> usize {
        let n = self.spec.truncation;
        if bins == 0 {
            0
        } else {
            (bins - 1) / n * n
        }
    }

    /// Eager state after the steps that training never differentiates.
    pub fn training_prefix(
        &self,
        store: &ParamStore,
        params: &EncoderParams,
        frames: &FrameSequence,
    ) -> Result<EncoderState<Tensor>, SnnError> {
        let mut state = self.zero_state();
        let boundary = self.truncation_boundary(frames.bins());
        self.advance(store, params, &mut state, frames, 0..boundary)?;
        Ok(state)
    }

    /// Records the remaining steps after `prefix` on `tape`.
    pub fn finish_on_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        params: &EncoderParams,
        frames: &FrameSequence,
        prefix: &EncoderState<Tensor>,
    ) -> Result<(Var, Var), SnnError> {
        self.check_frames(frames)?;
        let bound = self.bind(tape, store, params);
        let mut state = prefix.lift(tape);
        for t in prefix.steps..frames.bins() {
            let x = tape.constant(self.input_frame(frames, t)?);
            self.step(tape, &bound, &mut state, &x, None)?;
        }
        self.heads(tape, &bound, &state)
    }

    /// Training rollout. Steps before the last truncation boundary run
    /// eagerly; only the final window is recorded. Produces the same values
    /// and gradients as [`encode_on_tape`](Self::encode_on_tape) with
    /// `detach_every = truncation`.
    pub fn encode_for_training(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        params: &EncoderParams,
        frames: &FrameSequence,
    ) -> Result<(Var, Var), SnnError> {
        let prefix = self.training_prefix(store, params, frames)?;
        self.finish_on_tape(tape, store, params, frames, &prefix)
    }
}

fn uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (1.0 / fan_in.max(1) as f32).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}
