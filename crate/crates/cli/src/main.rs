//! `hgvae`: generate synthetic data, train, and inspect guided VAE models.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hgvae::latent::{
    eval_excitation_accuracy, export_latents, fit_centroids, latent_traversal, pseudo_label,
    write_pfm2, EmbeddingTable, TRAVERSAL_RANGE,
};
use hgvae::snn::{quant_encode, quantize_encoder};
use hgvae::vae::{
    eval_samples, load_model, train, write_synthetic, Dataset, EncoderKind, Model, SynthOptions,
    TrainConfig, CHECKPOINT,
};

#[derive(Parser, Debug)]
#[command(name = "hgvae", version, about = "Hybrid guided VAE for event-camera streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic moving-bar dataset.
    GenSynth(GenSynthArgs),
    /// Train a model; writes model.ckpt, config.cfg and metrics.csv.
    Train(TrainArgs),
    /// Excitation accuracy of a checkpoint on one split.
    Eval(EvalArgs),
    /// Export posterior means as an embedding table.
    Encode(EncodeArgs),
    /// Pseudo-label samples by nearest class centroid.
    Label(LabelArgs),
    /// Decode a two-dimension latent traversal to PFM2 images.
    Traverse(TraverseArgs),
    /// Compare the fixed-point encoder against full precision.
    Quantize(QuantizeArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum EncoderArg {
    Snn,
    Conv,
}

/// Flags that override config-file values.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Classes of the single `label` stream.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long, value_enum)]
    guided: Option<Switch>,
    #[arg(long, value_enum)]
    encoder: Option<EncoderArg>,
    #[arg(long)]
    quant_bits: Option<u32>,
    /// Threads for data preparation.
    #[arg(long)]
    workers: Option<usize>,
}

impl Overrides {
    /// Config file (or `fallback`, or defaults) with flags applied on top.
    fn resolve(&self, fallback: Option<&Path>) -> Result<TrainConfig> {
        let path = self.config.as_deref().or(fallback.filter(|p| p.exists()));
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                TrainConfig::parse(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => TrainConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch {
            cfg.batch = v;
        }
        if let Some(v) = self.classes {
            cfg.set("classes", &v.to_string()).map_err(anyhow::Error::msg)?;
        }
        if let Some(v) = self.guided {
            cfg.guided = matches!(v, Switch::On);
        }
        if let Some(v) = self.encoder {
            cfg.encoder = match v {
                EncoderArg::Snn => EncoderKind::Spiking,
                EncoderArg::Conv => EncoderKind::Conventional,
            };
        }
        if let Some(v) = self.quant_bits {
            cfg.quant_bits = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        cfg.validate().map_err(anyhow::Error::msg).context("invalid configuration")?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct GenSynthArgs {
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Training streams per class.
    #[arg(long, default_value_t = 50)]
    per_class: usize,
    #[arg(long, default_value_t = 20)]
    test_per_class: usize,
    /// Tilted-bar variants per class, split `novel`.
    #[arg(long, default_value_t = 10)]
    novel_per_class: usize,
    #[arg(long, default_value_t = 300)]
    duration_ms: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

/// A trained checkpoint plus the config to rebuild it.
#[derive(Args, Debug)]
struct ModelArgs {
    /// `model.ckpt`, or the directory holding it and `config.cfg`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

impl ModelArgs {
    fn load(&self) -> Result<Model> {
        let ckpt = if self.checkpoint.is_dir() {
            self.checkpoint.join(CHECKPOINT)
        } else {
            self.checkpoint.clone()
        };
        let sibling = ckpt.with_file_name(hgvae::vae::CONFIG);
        let cfg = self.overrides.resolve(Some(&sibling))?;
        load_model(&ckpt, Some(&cfg)).with_context(|| format!("loading {}", ckpt.display()))
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Label stream whose labels and guided block the table records.
    #[arg(long, default_value_t = 0)]
    stream: usize,
    /// Embedding table path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct LabelArgs {
    #[arg(long)]
    data: PathBuf,
    /// Labelled split the centroids are fitted on.
    #[arg(long, default_value = "train")]
    reference: String,
    /// Split to label.
    #[arg(long, default_value = "novel")]
    split: String,
    #[arg(long, default_value_t = 0)]
    stream: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct TraverseArgs {
    /// Two latent dims, `a,b`: a descends while b ascends.
    #[arg(long, value_parser = parse_pair)]
    dims: (usize, usize),
    #[arg(long, default_value_t = 9)]
    steps: usize,
    #[arg(long, default_value_t = TRAVERSAL_RANGE)]
    range: f32,
    /// Take the reference point from the first sample of `--split` in this
    /// dataset instead of the origin.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Output directory for `step_XXX.pfm` files.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct QuantizeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Bits of the fixed-point neuron state.
    #[arg(long)]
    state_bits: Option<u32>,
    #[command(flatten)]
    model: ModelArgs,
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected two dims as a,b")?;
    let dim = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((dim(a)?, dim(b)?))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_data(dir: &Path, cfg: &TrainConfig) -> Result<Dataset> {
    Dataset::load(dir, cfg.input_size).with_context(|| format!("loading dataset {}", dir.display()))
}

fn gen_synth(a: &GenSynthArgs) -> Result<()> {
    let opts = SynthOptions {
        classes: a.classes,
        train_per_class: a.per_class,
        test_per_class: a.test_per_class,
        novel_per_class: a.novel_per_class,
        duration_ms: a.duration_ms,
        seed: a.seed,
    };
    let n = write_synthetic(&a.out, &opts).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {n} streams to {}", a.out.display());
    Ok(())
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let cfg = a.overrides.resolve(None)?;
    let ds = load_data(&a.data, &cfg)?;
    println!("epoch,L_recon,L_KL,L_exc,L_inh_cls,L_inh_adv,train_acc,test_acc");
    train(&ds, &cfg, Some(&a.out), |m| println!("{}", m.csv_row())).context("training failed")?;
    println!("checkpoint written to {}", a.out.join(CHECKPOINT).display());
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let model = a.model.load()?;
    let ds = load_data(&a.data, model.config())?;
    let samples = eval_samples(&ds, model.config(), &a.split)?;
    for (k, stream) in model.config().streams.iter().enumerate() {
        let acc = eval_excitation_accuracy(&model, &samples, k)?;
        println!("{},{},{acc}", a.split, stream.name);
    }
    Ok(())
}

fn encode(a: &EncodeArgs) -> Result<()> {
    let model = a.model.load()?;
    let ds = load_data(&a.data, model.config())?;
    let table = export_latents(&model, &ds, &a.split, a.stream)?;
    write_or_print(a.out.as_deref(), &table.to_text())
}

fn label(a: &LabelArgs) -> Result<()> {
    let model = a.model.load()?;
    let ds = load_data(&a.data, model.config())?;
    let reference = export_latents(&model, &ds, &a.reference, a.stream)?;
    let centroids = fit_centroids(&reference)?;
    let table: EmbeddingTable = export_latents(&model, &ds, &a.split, a.stream)?;
    let mut out = String::from("id,true_label,label,confidence,distance,tied\n");
    for r in &table.rows {
        let p = pseudo_label(&r.mu[centroids.block.clone()], &centroids)?;
        let _ = writeln!(out, "{},{},{},{},{},{}", r.id, r.label, p.label, p.confidence, p.distance, p.tied);
    }
    write_or_print(a.out.as_deref(), &out)
}

fn traverse(a: &TraverseArgs) -> Result<()> {
    let model = a.model.load()?;
    let reference = match &a.data {
        Some(dir) => {
            let ds = load_data(dir, model.config())?;
            let samples = eval_samples(&ds, model.config(), &a.split)?;
            let first = samples.first().with_context(|| format!("split {:?} is empty", a.split))?;
            model.encode(&first.frames)?.0.into_data()
        }
        None => vec![0.0; model.config().latent_dim],
    };
    let frames = latent_traversal(&model, &reference, a.dims.0, a.dims.1, a.steps, a.range)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (i, f) in frames.iter().enumerate() {
        write_pfm2(&a.out.join(format!("step_{i:03}.pfm")), f)?;
    }
    println!("wrote {} frames to {}", frames.len(), a.out.display());
    Ok(())
}

fn quantize(a: &QuantizeArgs) -> Result<()> {
    let model = a.model.load()?;
    if model.config().encoder != EncoderKind::Spiking {
        bail!("only the spiking encoder has a fixed-point form");
    }
    let mut scheme = model.config().quant_scheme();
    if let Some(b) = a.state_bits {
        scheme.state_bits = b;
    }
    let qenc = quantize_encoder(model.encoder(), &model.store, model.encoder_params(), scheme)?;
    let ds = load_data(&a.data, model.config())?;
    let samples = eval_samples(&ds, model.config(), &a.split)?;
    if samples.is_empty() {
        bail!("split {:?} is empty", a.split);
    }
    let (mut cos, mut full_hits, mut q_hits, mut labelled, mut overflows) = (Vec::new(), 0, 0, 0, 0);
    for s in &samples {
        let (mu, _) = model.encode(&s.frames)?;
        let q = quant_encode(&qenc, &s.frames)?;
        overflows += q.overflows;
        let dot: f64 = mu.data().iter().zip(q.mu.data()).map(|(&a, &b)| a as f64 * b as f64).sum();
        let norm = |t: &hgvae::autodiff::Tensor| t.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        cos.push(dot / (norm(&mu) * norm(&q.mu)).max(1e-30));
        if let Some(y) = s.labels[0] {
            labelled += 1;
            full_hits += usize::from(model.classify(0, &mu)? == y);
            q_hits += usize::from(model.classify(0, &q.mu)? == y);
        }
    }
    cos.sort_by(f64::total_cmp);
    println!("weight_bits,{}", scheme.weight_bits);
    println!("state_bits,{}", scheme.state_bits);
    println!("median_cosine,{}", cos[cos.len() / 2]);
    if labelled > 0 {
        println!("accuracy_full,{}", full_hits as f64 / labelled as f64);
        println!("accuracy_quantized,{}", q_hits as f64 / labelled as f64);
    }
    println!("saturations,{overflows}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenSynth(a) => gen_synth(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => eval(a),
        Command::Encode(a) => encode(a),
        Command::Label(a) => label(a),
        Command::Traverse(a) => traverse(a),
        Command::Quantize(a) => quantize(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
