//! Training configuration and its flat `key = value` text form.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::autodiff::AdamConfig;
use crate::snn::{EncoderSpec, LifParams, QuantScheme};

use super::VaeError;

/// A label stream gets its own guided block of `classes` latent dims.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelStream {
    pub name: String,
    pub classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    /// The LIF encoder rolled over every bin.
    Spiking,
    /// Same conv shapes over the final time surface, smooth activations.
    Conventional,
}

impl FromStr for EncoderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "snn" => Ok(EncoderKind::Spiking),
            "conv" => Ok(EncoderKind::Conventional),
            other => Err(format!("unknown encoder {other:?} (expected snn or conv)")),
        }
    }
}

impl EncoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Spiking => "snn",
            EncoderKind::Conventional => "conv",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub streams: Vec<LabelStream>,
    pub latent_dim: usize,
    pub lambda_recon: f32,
    pub lambda_kl: f32,
    pub lambda_exc: f32,
    pub lambda_inh: f32,
    pub lr: f32,
    /// Learning rate of the inhibition classifiers' own optimiser.
    pub lr_adv: f32,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub truncation: usize,
    pub guided: bool,
    pub encoder: EncoderKind,
    pub tau_mem: f64,
    pub tau_syn: f64,
    pub tau_ref: f64,
    pub threshold: f32,
    pub slope: f32,
    /// Divides every encoder conv channel count.
    pub channel_div: usize,
    pub crop_ms: u64,
    /// Side of the square encoder input after spatial downsampling.
    pub input_size: usize,
    /// Time constant of the reconstruction-target time surface.
    pub ts_tau: f64,
    pub eval_every: usize,
    pub workers: usize,
    pub quant_bits: u32,
    pub quant_state_bits: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let lif = LifParams::default();
        Self {
            streams: vec![LabelStream {
                name: "label".into(),
                classes: 4,
            }],
            latent_dim: 100,
            lambda_recon: 1.0,
            lambda_kl: 1e-3,
            lambda_exc: 1.0,
            lambda_inh: 1.0,
            lr: 1e-3,
            lr_adv: 1e-3,
            batch: 16,
            epochs: 10,
            seed: 0,
            truncation: 100,
            guided: true,
            encoder: EncoderKind::Spiking,
            tau_mem: lif.tau_mem,
            tau_syn: lif.tau_syn,
            tau_ref: lif.tau_ref,
            threshold: lif.threshold,
            slope: lif.slope,
            channel_div: 1,
            crop_ms: 200,
            input_size: 32,
            ts_tau: lif.tau_syn,
            eval_every: 1,
            workers: 1,
            quant_bits: 8,
            quant_state_bits: 24,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("{key}: cannot parse {value:?}"))
}

fn parse_switch(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(format!("{key}: expected on or off, got {value:?}")),
    }
}

fn parse_streams(value: &str) -> Result<Vec<LabelStream>, String> {
    let mut out: Vec<LabelStream> = Vec::new();
    for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, classes) = part
            .split_once(':')
            .ok_or_else(|| format!("streams: expected name:classes, got {part:?}"))?;
        let name = name.trim();
        if name.is_empty() || out.iter().any(|s| s.name == name) {
            return Err(format!("streams: empty or repeated name in {part:?}"));
        }
        out.push(LabelStream {
            name: name.to_string(),
            classes: parse_num("streams", classes.trim())?,
        });
    }
    Ok(out)
}

impl TrainConfig {
    /// Parses config text over the defaults. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self, VaeError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| VaeError::Config {
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            cfg.set(key.trim(), value.trim()).map_err(err)?;
        }
        cfg.validate().map_err(|message| VaeError::Config { line: 0, message })?;
        Ok(cfg)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "classes" => {
                self.streams = vec![LabelStream {
                    name: "label".into(),
                    classes: parse_num(key, value)?,
                }]
            }
            "streams" => self.streams = parse_streams(value)?,
            "latent_dim" => self.latent_dim = parse_num(key, value)?,
            "lambda_recon" => self.lambda_recon = parse_num(key, value)?,
            "lambda_kl" => self.lambda_kl = parse_num(key, value)?,
            "lambda_exc" => self.lambda_exc = parse_num(key, value)?,
            "lambda_inh" => self.lambda_inh = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "lr_adv" => self.lr_adv = parse_num(key, value)?,
            "batch" => self.batch = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "truncation" => self.truncation = parse_num(key, value)?,
            "guided" => self.guided = parse_switch(key, value)?,
            "encoder" => self.encoder = value.parse()?,
            "tau_mem" => self.tau_mem = parse_num(key, value)?,
            "tau_syn" => self.tau_syn = parse_num(key, value)?,
            "tau_ref" => self.tau_ref = parse_num(key, value)?,
            "threshold" => self.threshold = parse_num(key, value)?,
            "slope" => self.slope = parse_num(key, value)?,
            "channel_div" => self.channel_div = parse_num(key, value)?,
            "crop_ms" => self.crop_ms = parse_num(key, value)?,
            "input_size" => self.input_size = parse_num(key, value)?,
            "ts_tau" => self.ts_tau = parse_num(key, value)?,
            "eval_every" => self.eval_every = parse_num(key, value)?,
            "workers" => self.workers = parse_num(key, value)?,
            "quant_bits" => self.quant_bits = parse_num(key, value)?,
            "quant_state_bits" => self.quant_state_bits = parse_num(key, value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.streams.is_empty() || self.streams.iter().any(|s| s.classes < 2) {
            return Err("every label stream needs at least 2 classes".into());
        }
        let m = self.num_guided();
        if m >= self.latent_dim {
            return Err(format!(
                "{m} guided dims leave no unguided dims in a {}-d latent",
                self.latent_dim
            ));
        }
        for (name, v) in [
            ("lambda_recon", self.lambda_recon),
            ("lambda_kl", self.lambda_kl),
            ("lambda_exc", self.lambda_exc),
            ("lambda_inh", self.lambda_inh),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be a non-negative number"));
            }
        }
        if !(self.lr > 0.0 && self.lr_adv > 0.0) {
            return Err("learning rates must be positive".into());
        }
        for (name, v) in [
            ("batch", self.batch),
            ("truncation", self.truncation),
            ("channel_div", self.channel_div),
            ("input_size", self.input_size),
            ("eval_every", self.eval_every),
            ("workers", self.workers),
        ] {
            if v == 0 {
                return Err(format!("{name} must be at least 1"));
            }
        }
        if self.input_size < 8 || !self.input_size.is_power_of_two() {
            return Err("input_size must be a power of two, at least 8".into());
        }
        if self.crop_ms == 0 {
            return Err("crop_ms must be positive".into());
        }
        if !(self.ts_tau > 0.0) {
            return Err("ts_tau must be positive".into());
        }
        self.encoder_spec().plan().map_err(|e| e.to_string())?;
        self.quant_scheme().validate().map_err(|e| e.to_string())?;
        Ok(())
    }

    /// Total guided dims over all label streams.
    pub fn num_guided(&self) -> usize {
        self.streams.iter().map(|s| s.classes).sum()
    }

    /// Latent index range of stream `s`'s guided block.
    pub fn guided_block(&self, s: usize) -> std::ops::Range<usize> {
        let start: usize = self.streams[..s].iter().map(|s| s.classes).sum();
        start..start + self.streams[s].classes
    }

    pub fn lif(&self) -> LifParams {
        LifParams {
            tau_mem: self.tau_mem,
            tau_syn: self.tau_syn,
            tau_ref: self.tau_ref,
            threshold: self.threshold,
            dt_ms: 1.0,
            slope: self.slope,
        }
    }

    pub fn encoder_spec(&self) -> EncoderSpec {
        let mut spec = EncoderSpec::narrow(self.channel_div);
        spec.input = [2, self.input_size, self.input_size];
        spec.latent_dim = self.latent_dim;
        spec.lif = self.lif();
        spec.truncation = self.truncation;
        spec
    }

    pub fn adam_adv(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr_adv,
            ..AdamConfig::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    pub fn quant_scheme(&self) -> QuantScheme {
        QuantScheme {
            weight_bits: self.quant_bits,
            state_bits: self.quant_state_bits,
        }
    }

    /// Text form accepted by [`TrainConfig::parse`].
    pub fn to_text(&self) -> String {
        let streams: Vec<String> = self
            .streams
            .iter()
            .map(|s| format!("{}:{}", s.name, s.classes))
            .collect();
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("streams", streams.join(","));
        kv("latent_dim", self.latent_dim.to_string());
        kv("lambda_recon", self.lambda_recon.to_string());
        kv("lambda_kl", self.lambda_kl.to_string());
        kv("lambda_exc", self.lambda_exc.to_string());
        kv("lambda_inh", self.lambda_inh.to_string());
        kv("lr", self.lr.to_string());
        kv("lr_adv", self.lr_adv.to_string());
        kv("batch", self.batch.to_string());
        kv("epochs", self.epochs.to_string());
        kv("seed", self.seed.to_string());
        kv("truncation", self.truncation.to_string());
        kv("guided", if self.guided { "on" } else { "off" }.into());
        kv("encoder", self.encoder.as_str().into());
        kv("tau_mem", self.tau_mem.to_string());
        kv("tau_syn", self.tau_syn.to_string());
        kv("tau_ref", self.tau_ref.to_string());
        kv("threshold", self.threshold.to_string());
        kv("slope", self.slope.to_string());
        kv("channel_div", self.channel_div.to_string());
        kv("crop_ms", self.crop_ms.to_string());
        kv("input_size", self.input_size.to_string());
        kv("ts_tau", self.ts_tau.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("workers", self.workers.to_string());
        kv("quant_bits", self.quant_bits.to_string());
        kv("quant_state_bits", self.quant_state_bits.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
        let custom = TrainConfig::parse(
            "# comment\nstreams = label:4, lighting:3\nlambda_kl = 0.01 # trailing\nguided = off\nencoder = conv\n",
        )
        .unwrap();
        assert_eq!(TrainConfig::parse(&custom.to_text()).unwrap(), custom);
        assert_eq!(custom.num_guided(), 7);
        assert_eq!(custom.guided_block(1), 4..7);
        assert!(!custom.guided);
        assert_eq!(custom.encoder, EncoderKind::Conventional);
    }

    #[test]
    fn classes_shorthand() {
        let cfg = TrainConfig::parse("classes = 11").unwrap();
        assert_eq!(cfg.streams, vec![LabelStream { name: "label".into(), classes: 11 }]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        for (text, line) in [
            ("epochs = 3\nbogus = 1\n", 2),
            ("\n\nlr 0.1\n", 3),
            ("batch = many\n", 1),
            ("guided = maybe\n", 1),
        ] {
            match TrainConfig::parse(text) {
                Err(VaeError::Config { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
        assert!(TrainConfig::parse("classes = 100").is_err());
        assert!(TrainConfig::parse("lambda_kl = -1").is_err());
        assert!(TrainConfig::parse("streams = a:2,a:3").is_err());
        assert!(TrainConfig::parse("input_size = 30").is_err());
    }
}
