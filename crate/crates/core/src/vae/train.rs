//! The two-phase training step and the epoch loop.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{read_checkpoint, write_checkpoint, Adam, Eager, Gradients, Graph, Tape, Tensor};
use crate::latent::eval_excitation_accuracy;

use super::data::{prepare_all, Crop, Dataset, LabeledSample, Sample};
use super::losses::{
    excitation_loss, inhibition_loss, kl_loss, recon_loss, reparameterize, standard_normal,
    InhibitionPhase,
};
use super::{Model, TrainConfig, VaeError};

pub const CHECKPOINT: &str = "model.ckpt";
pub const CONFIG: &str = "config.cfg";
pub const METRICS: &str = "metrics.csv";

/// Batch means of every loss term. Guided terms average over the samples
/// that carry a label for the stream, then sum over streams.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBundle {
    pub recon: f64,
    pub kl: f64,
    pub exc: f64,
    pub inh_cls: f64,
    pub inh_adv: f64,
    pub total: f64,
    /// Excitation-classifier hits on `mu` before the update, over all streams.
    pub correct: usize,
    pub labeled: usize,
}

/// One row of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub losses: LossBundle,
    pub train_acc: f64,
    /// NaN on epochs without evaluation.
    pub test_acc: f64,
}

impl EpochMetrics {
    pub const HEADER: &'static str = "epoch,L_recon,L_KL,L_exc,L_inh_cls,L_inh_adv,train_acc,test_acc";

    pub fn csv_row(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch, l.recon, l.kl, l.exc, l.inh_cls, l.inh_adv, self.train_acc, self.test_acc
        )
    }
}

/// A model with its optimisers and the random stream that drives sampling.
pub struct Trainer {
    pub model: Model,
    adam: Adam,
    adam_k: Adam,
    rng: ChaCha8Rng,
}

impl Trainer {
    /// Seeds everything from `config.seed`; parameter init draws first.
    pub fn new(config: TrainConfig) -> Result<Self, VaeError> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = Model::new(config, &mut rng)?;
        Ok(Self::with_model(model, rng))
    }

    pub fn with_model(model: Model, rng: ChaCha8Rng) -> Self {
        let (main, adv) = (model.config().adam(), model.config().adam_adv());
        Self {
            model,
            adam: Adam::new(main),
            adam_k: Adam::new(adv),
            rng,
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// One inhibition-classifier update followed by one joint update of
    /// encoder, decoder and excitation classifiers.
    pub fn step(&mut self, batch: &[LabeledSample]) -> Result<LossBundle, VaeError> {
        if batch.is_empty() {
            return Err(VaeError::EmptyBatch);
        }
        let model = &self.model;
        let cfg = model.config().clone();
        for s in batch {
            check_labels(&cfg, &s.labels)?;
        }
        let guided = cfg.guided;
        let nb = batch.len();
        let counts: Vec<usize> = (0..cfg.streams.len())
            .map(|k| batch.iter().filter(|s| s.labels[k].is_some()).count())
            .collect();

        // Forward pass shared by both phases; only noise is drawn here.
        let mut out = LossBundle::default();
        let mut fwd = Vec::with_capacity(nb);
        for s in batch {
            let prefix = model.prefix(&s.frames)?;
            let (mu, lv) = model.encode_from(&s.frames, &prefix)?;
            let eps = standard_normal(cfg.latent_dim, &mut self.rng);
            let z = reparameterize(&mut Eager, &mu, &lv, &eps)?;
            for (k, label) in s.labels.iter().enumerate() {
                if let Some(y) = *label {
                    out.labeled += 1;
                    out.correct += usize::from(model.classify(k, &mu)? == y);
                }
            }
            fwd.push((prefix, eps, z));
        }

        if guided {
            let mut tape = Tape::new();
            let mut terms = Vec::new();
            for (k, pair) in model.guided().iter().enumerate() {
                let (w, b) = model.bind(&mut tape, pair.inh, true);
                for (s, (_, _, z)) in batch.iter().zip(&fwd) {
                    let Some(y) = s.labels[k] else { continue };
                    let z = tape.constant(z.clone());
                    let rest = tape.gather(&z, &pair.rest)?;
                    let l = inhibition_loss(&mut tape, &rest, &w, &b, y, InhibitionPhase::Classifier)?;
                    terms.push(tape.scale(&l, 1.0 / counts[k] as f32));
                }
            }
            if let Some(loss) = sum_terms(&mut tape, &terms)? {
                out.inh_cls = tape.value(&loss).item().unwrap_or(0.0) as f64;
                let grads = tape.backward(loss)?;
                self.adam_k.step(&mut self.model.store, &grads);
            }
        }

        let model = &self.model;
        let mut total = Gradients::default();
        for (s, (prefix, eps, _)) in batch.iter().zip(&fwd) {
            let mut tape = Tape::new();
            let (mu, lv) = model.encode_on_tape(&mut tape, &s.frames, prefix)?;
            let z = reparameterize(&mut tape, &mu, &lv, eps)?;
            let x = model.decode(&mut tape, &z)?;
            let target = Tensor::new(vec![2, s.target.height, s.target.width], s.target.data.clone())?;
            let recon = recon_loss(&mut tape, &x, &target)?;
            let kl = kl_loss(&mut tape, &mu, &lv)?;
            out.recon += tape.value(&recon).item().unwrap_or(0.0) as f64 / nb as f64;
            out.kl += tape.value(&kl).item().unwrap_or(0.0) as f64 / nb as f64;
            let mut terms = vec![
                tape.scale(&recon, cfg.lambda_recon),
                tape.scale(&kl, cfg.lambda_kl),
            ];
            if guided {
                for (k, pair) in model.guided().iter().enumerate() {
                    let Some(y) = s.labels[k] else { continue };
                    // per-sample losses are later averaged over the batch,
                    // this turns that into a mean over labelled samples
                    let w_mean = nb as f32 / counts[k] as f32;
                    let z_m = tape.slice(&z, pair.block.start, pair.block.end)?;
                    let (cw, cb) = model.bind(&mut tape, pair.exc, true);
                    let (exc, _) = excitation_loss(&mut tape, &z_m, &cw, &cb, y)?;
                    let rest = tape.gather(&z, &pair.rest)?;
                    let (kw, kb) = model.bind(&mut tape, pair.inh, false);
                    let adv = inhibition_loss(&mut tape, &rest, &kw, &kb, y, InhibitionPhase::Adversarial)?;
                    out.exc += tape.value(&exc).item().unwrap_or(0.0) as f64 / counts[k] as f64;
                    out.inh_adv += tape.value(&adv).item().unwrap_or(0.0) as f64 / counts[k] as f64;
                    terms.push(tape.scale(&exc, cfg.lambda_exc * w_mean));
                    terms.push(tape.scale(&adv, cfg.lambda_inh * w_mean));
                }
            }
            let loss = sum_terms(&mut tape, &terms)?.expect("recon term present");
            total.accumulate(&tape.backward(loss)?);
        }
        total.scale(1.0 / nb as f32);
        self.adam.step(&mut self.model.store, &total);

        out.total = cfg.lambda_recon as f64 * out.recon
            + cfg.lambda_kl as f64 * out.kl
            + cfg.lambda_exc as f64 * out.exc
            + cfg.lambda_inh as f64 * out.inh_adv;
        Ok(out)
    }
}

fn sum_terms<G: Graph>(g: &mut G, terms: &[G::Value]) -> Result<Option<G::Value>, VaeError> {
    let mut it = terms.iter();
    let Some(first) = it.next() else { return Ok(None) };
    let mut acc = first.clone();
    for t in it {
        acc = g.add(&acc, t)?;
    }
    Ok(Some(acc))
}

fn check_labels(cfg: &TrainConfig, labels: &[Option<usize>]) -> Result<(), VaeError> {
    if labels.len() != cfg.streams.len() {
        return Err(VaeError::Data(format!(
            "sample has {} label streams, config has {}",
            labels.len(),
            cfg.streams.len()
        )));
    }
    for (stream, label) in cfg.streams.iter().zip(labels) {
        if let Some(l) = *label {
            if l >= stream.classes {
                return Err(VaeError::Label {
                    stream: stream.name.clone(),
                    label: l,
                    classes: stream.classes,
                });
            }
        }
    }
    Ok(())
}

/// Reorders a dataset's label columns to the config's stream order.
pub(crate) fn select_streams(dataset: &Dataset, cfg: &TrainConfig) -> Result<Vec<Sample>, VaeError> {
    let cols = cfg
        .streams
        .iter()
        .map(|s| {
            dataset
                .streams
                .iter()
                .position(|n| *n == s.name)
                .ok_or_else(|| VaeError::Data(format!("dataset has no label stream {:?}", s.name)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let samples = dataset
        .samples
        .iter()
        .map(|s| Sample {
            labels: cols.iter().map(|&c| s.labels[c]).collect(),
            ..s.clone()
        })
        .collect::<Vec<_>>();
    for s in &samples {
        check_labels(cfg, &s.labels)?;
    }
    Ok(samples)
}

/// Centre-cropped, model-ready samples of one split.
pub fn eval_samples(dataset: &Dataset, cfg: &TrainConfig, split: &str) -> Result<Vec<LabeledSample>, VaeError> {
    let samples = select_streams(dataset, cfg)?;
    let jobs: Vec<(&Sample, Crop)> = samples.iter().filter(|s| s.split == split).map(|s| (s, Crop::Center)).collect();
    prepare_all(&jobs, cfg.crop_ms, cfg.ts_tau, cfg.workers)
}

pub struct TrainOutcome {
    pub model: Model,
    pub metrics: Vec<EpochMetrics>,
}

fn io_err(path: &Path, source: std::io::Error) -> VaeError {
    VaeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `model.ckpt` and `config.cfg` into `dir`.
pub fn save_model(model: &Model, dir: &Path) -> Result<(), VaeError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let ckpt = dir.join(CHECKPOINT);
    fs::write(&ckpt, write_checkpoint(&model.store)).map_err(|e| io_err(&ckpt, e))?;
    let cfg = dir.join(CONFIG);
    fs::write(&cfg, model.config().to_text()).map_err(|e| io_err(&cfg, e))?;
    Ok(())
}

/// Loads a checkpoint; the config comes from `config` or, failing that, the
/// `config.cfg` next to the checkpoint.
pub fn load_model(checkpoint: &Path, config: Option<&TrainConfig>) -> Result<Model, VaeError> {
    let cfg = match config {
        Some(c) => c.clone(),
        None => {
            let path = checkpoint.with_file_name(CONFIG);
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            TrainConfig::parse(&text)?
        }
    };
    let bytes = fs::read(checkpoint).map_err(|e| io_err(checkpoint, e))?;
    let params = read_checkpoint(&bytes)
        .map_err(|e| VaeError::Data(format!("{}: {e}", checkpoint.display())))?;
    Model::from_params(cfg, &params)
}

/// Full training run on the `train` split, evaluating on `test`. With `out`
/// set, the checkpoint, config and metrics log are rewritten every epoch.
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
    out: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome, VaeError> {
    let samples = select_streams(dataset, config)?;
    let train_set: Vec<&Sample> = samples.iter().filter(|s| s.split == "train").collect();
    if train_set.is_empty() {
        return Err(VaeError::Data("dataset has no train samples".into()));
    }
    let test_jobs: Vec<(&Sample, Crop)> = samples
        .iter()
        .filter(|s| s.split == "test")
        .map(|s| (s, Crop::Center))
        .collect();
    let test_set = prepare_all(&test_jobs, config.crop_ms, config.ts_tau, config.workers)?;

    let mut trainer = Trainer::new(config.clone())?;
    let mut metrics = Vec::new();
    let mut log = String::from(EpochMetrics::HEADER);
    log.push('\n');
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(trainer.rng());
        let crops: Vec<u64> = order.iter().map(|_| trainer.rng().gen()).collect();
        let mut sum = LossBundle::default();
        for (chunk, seeds) in order.chunks(config.batch).zip(crops.chunks(config.batch)) {
            let jobs: Vec<(&Sample, Crop)> = chunk
                .iter()
                .zip(seeds)
                .map(|(&i, &seed)| (train_set[i], Crop::Random(seed)))
                .collect();
            let batch = prepare_all(&jobs, config.crop_ms, config.ts_tau, config.workers)?;
            let b = trainer.step(&batch)?;
            let w = batch.len() as f64 / train_set.len() as f64;
            sum.recon += w * b.recon;
            sum.kl += w * b.kl;
            sum.exc += w * b.exc;
            sum.inh_cls += w * b.inh_cls;
            sum.inh_adv += w * b.inh_adv;
            sum.total += w * b.total;
            sum.correct += b.correct;
            sum.labeled += b.labeled;
        }
        let evaluate = !test_set.is_empty() && (epoch % config.eval_every == 0 || epoch == config.epochs);
        let test_acc = if evaluate {
            let accs = (0..config.streams.len())
                .map(|k| eval_excitation_accuracy(&trainer.model, &test_set, k))
                .collect::<Result<Vec<_>, _>>()?;
            accs.iter().sum::<f64>() / accs.len() as f64
        } else {
            f64::NAN
        };
        let m = EpochMetrics {
            epoch,
            losses: sum,
            train_acc: if sum.labeled == 0 { f64::NAN } else { sum.correct as f64 / sum.labeled as f64 },
            test_acc,
        };
        log.push_str(&m.csv_row());
        log.push('\n');
        if let Some(dir) = out {
            save_model(&trainer.model, dir)?;
            let path = dir.join(METRICS);
            fs::write(&path, &log).map_err(|e| io_err(&path, e))?;
        }
        on_epoch(&m);
        metrics.push(m);
    }
    Ok(TrainOutcome {
        model: trainer.model,
        metrics,
    })
}
