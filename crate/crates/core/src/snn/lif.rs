use crate::autodiff::{ConvGeometry, Graph, Tensor};
use crate::events::decay_factor;

use super::SnnError;

/// Time constants and threshold shared by every LIF layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifParams {
    pub tau_mem: f64,
    pub tau_syn: f64,
    pub tau_ref: f64,
    pub threshold: f32,
    pub dt_ms: f64,
    /// Steepness of the fast-sigmoid surrogate used in the backward pass.
    pub slope: f32,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            tau_mem: 20.0,
            tau_syn: 10.0,
            tau_ref: 2.0,
            threshold: 1.0,
            dt_ms: 1.0,
            slope: 10.0,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<(), SnnError> {
        for (name, v) in [
            ("tau_mem", self.tau_mem),
            ("tau_syn", self.tau_syn),
            ("tau_ref", self.tau_ref),
            ("dt", self.dt_ms),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SnnError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(SnnError::InvalidParams(format!(
                "threshold must be positive, got {}",
                self.threshold
            )));
        }
        if !(self.slope > 0.0 && self.slope.is_finite()) {
            return Err(SnnError::InvalidParams(format!("slope must be positive, got {}", self.slope)));
        }
        for (name, d) in [("alpha", self.alpha()), ("beta", self.beta()), ("gamma", self.gamma())] {
            if !(d > 0.0 && d < 1.0) {
                return Err(SnnError::InvalidParams(format!("{name} = {d} is not in (0, 1)")));
            }
        }
        Ok(())
    }

    /// Membrane-trace decay per step.
    pub fn alpha(&self) -> f32 {
        decay_factor(self.dt_ms, self.tau_mem)
    }

    /// Synaptic-trace decay per step.
    pub fn beta(&self) -> f32 {
        decay_factor(self.dt_ms, self.tau_syn)
    }

    /// Refractory-trace decay per step.
    pub fn gamma(&self) -> f32 {
        decay_factor(self.dt_ms, self.tau_ref)
    }
}

/// How a layer's membrane is driven by its presynaptic trace `P`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Synapse {
    /// `W` is `[out, in, k, k]`, `P` is `[in, h, w]`.
    Conv(ConvGeometry),
    /// `W` is `[out, in]`, `P` is `[in]`.
    Dense,
}

/// Per-layer state. `p` and `q` have the layer's input shape; `r`, `u` and
/// `s` its output shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState<V> {
    pub p: V,
    pub q: V,
    pub r: V,
    pub u: V,
    pub s: V,
}

impl LayerState<Tensor> {
    pub fn zeros(input: &[usize], output: &[usize]) -> Self {
        Self {
            p: Tensor::zeros(input),
            q: Tensor::zeros(input),
            r: Tensor::zeros(output),
            u: Tensor::zeros(output),
            s: Tensor::zeros(output),
        }
    }
}

impl<V> LayerState<V> {
    pub fn map<W>(&self, mut f: impl FnMut(&V) -> W) -> LayerState<W> {
        LayerState {
            p: f(&self.p),
            q: f(&self.q),
            r: f(&self.r),
            u: f(&self.u),
            s: f(&self.s),
        }
    }
}

/// One simulation step of a LIF layer; returns the emitted spikes.
///
/// `U` and `S` are computed from the traces as they stand, then the traces
/// decay towards their inputs:
///
/// ```text
/// U  = W*P - U_th*R + b        S = [U >= U_th]
/// P' = a*P + (1-a)*Q           Q' = b*Q + (1-b)*S_in
/// R' = g*R + (1-g)*S
/// ```
pub fn lif_step<G: Graph>(
    g: &mut G,
    synapse: Synapse,
    lif: &LifParams,
    state: &mut LayerState<G::Value>,
    s_in: &G::Value,
    w: &G::Value,
    b: &G::Value,
) -> Result<G::Value, SnnError> {
    let drive = match synapse {
        Synapse::Conv(geom) => g.conv2d(&state.p, w, b, geom)?,
        Synapse::Dense => g.affine(&state.p, w, b)?,
    };
    let refractory = g.scale(&state.r, lif.threshold);
    let u = g.sub(&drive, &refractory)?;
    let s = g.spike(&u, lif.threshold, lif.slope);
    let p = g.mix(&state.p, &state.q, lif.alpha())?;
    let q = g.mix(&state.q, s_in, lif.beta())?;
    let r = g.mix(&state.r, &s, lif.gamma())?;
    *state = LayerState {
        p,
        q,
        r,
        u,
        s: s.clone(),
    };
    Ok(s)
}
