//! Labelled event datasets on disk and their preparation into model inputs.
//!
//! A dataset directory holds `manifest.csv` with the header
//! `file,split,<stream>[,<stream>...]` and one event file per row. Label
//! cells are class indices, or `-1` for unlabelled rows.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::events::{
    bin_events, gen_synthetic, parse_event_file, time_surface, write_event_file, EventError,
    random_crop_ms, EventFormat, EventStream, FrameSequence, Shape, SyntheticSpec, TraceImage,
    BIN_US, NUM_DIRECTIONS,
};

use super::VaeError;

pub const MANIFEST: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub file: String,
    pub split: String,
    /// One entry per label stream; `None` when unlabelled.
    pub labels: Vec<Option<usize>>,
    /// Events already downscaled to the encoder input size.
    pub stream: EventStream,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub streams: Vec<String>,
    pub samples: Vec<Sample>,
}

fn io_err(path: &Path, source: std::io::Error) -> VaeError {
    VaeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl Dataset {
    /// Reads the manifest and every event file, downscaling each stream to
    /// `input_size` x `input_size`.
    pub fn load(dir: &Path, input_size: usize) -> Result<Self, VaeError> {
        let manifest = dir.join(MANIFEST);
        let text = fs::read_to_string(&manifest).map_err(|e| io_err(&manifest, e))?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let bad = |line: usize, msg: String| VaeError::Data(format!("{}:{}: {msg}", manifest.display(), line + 1));
        let (hl, header) = lines.next().ok_or_else(|| bad(0, "empty manifest".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 3 || cols[0] != "file" || cols[1] != "split" {
            return Err(bad(hl, format!("header must be file,split,<labels...>, got {header:?}")));
        }
        let streams: Vec<String> = cols[2..].iter().map(|s| s.to_string()).collect();

        let mut rows = Vec::new();
        for (i, line) in lines {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != cols.len() {
                return Err(bad(i, format!("expected {} cells, got {}", cols.len(), cells.len())));
            }
            let labels = cells[2..]
                .iter()
                .map(|c| match c.parse::<i64>() {
                    Ok(-1) => Ok(None),
                    Ok(v) if v >= 0 => Ok(Some(v as usize)),
                    _ => Err(bad(i, format!("bad label {c:?}"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push((cells[0].to_string(), cells[1].to_string(), labels));
        }

        let samples = rows
            .into_par_iter()
            .map(|(file, split, labels)| {
                let path = dir.join(&file);
                let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
                let fmt = EventFormat::detect(&bytes)
                    .ok_or_else(|| VaeError::Data(format!("{}: unknown event format", path.display())))?;
                let raw = parse_event_file(&bytes, fmt)
                    .map_err(|e| VaeError::Data(format!("{}: {e}", path.display())))?;
                let stream = downscale_to(&raw, input_size)
                    .map_err(|e| VaeError::Data(format!("{}: {e}", path.display())))?;
                Ok(Sample {
                    file,
                    split,
                    labels,
                    stream,
                })
            })
            .collect::<Result<Vec<_>, VaeError>>()?;
        Ok(Self { streams, samples })
    }

    pub fn split(&self, name: &str) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == name).collect()
    }

    /// Largest label seen per stream, plus one.
    pub fn classes_seen(&self) -> Vec<usize> {
        (0..self.streams.len())
            .map(|k| {
                self.samples
                    .iter()
                    .filter_map(|s| s.labels[k])
                    .max()
                    .map_or(0, |m| m + 1)
            })
            .collect()
    }
}

fn downscale_to(stream: &EventStream, size: usize) -> Result<EventStream, EventError> {
    let (w, h) = (stream.width() as usize, stream.height() as usize);
    if w != h || size == 0 || w % size != 0 {
        return Err(EventError::NotDivisible {
            height: h,
            width: w,
            factor: if size == 0 { 0 } else { w / size.max(1) },
        });
    }
    stream.downscale((w / size) as u16)
}

/// Which window of a longer stream becomes the model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Crop {
    /// Uniform start drawn from an RNG seeded with this value.
    Random(u64),
    /// The centred window, used for evaluation.
    Center,
}

/// A model-ready sample: binned crop and its time-surface target.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub frames: FrameSequence,
    pub target: TraceImage,
    pub labels: Vec<Option<usize>>,
}

pub fn prepare(sample: &Sample, crop_ms: u64, ts_tau: f64, crop: Crop) -> Result<LabeledSample, VaeError> {
    let bins = sample.stream.duration_us().div_ceil(BIN_US as u64).max(1) as usize;
    let all = bin_events(&sample.stream, BIN_US, bins)?;
    let frames = match crop {
        Crop::Random(seed) => random_crop_ms(&all, crop_ms, &mut ChaCha8Rng::seed_from_u64(seed))?,
        Crop::Center => {
            let len = (crop_ms * 1000 / BIN_US as u64) as usize;
            if len == 0 || len > bins {
                return Err(EventError::TooShort {
                    available_ms: bins as u64 * BIN_US as u64 / 1000,
                    requested_ms: crop_ms,
                }
                .into());
            }
            all.window((bins - len) / 2, len)
        }
    };
    let target = time_surface(&presence(&frames), ts_tau)?;
    Ok(LabeledSample {
        frames,
        target,
        labels: sample.labels.clone(),
    })
}

/// Clamps counts to 1 so the target surface stays in [0, 1), the range of
/// the decoder's sigmoid output.
pub fn presence(frames: &FrameSequence) -> FrameSequence {
    let counts = frames.counts().iter().map(|&c| c.min(1)).collect();
    FrameSequence::from_counts(frames.bins(), frames.bin_us(), frames.height(), frames.width(), counts)
        .expect("same layout")
}

/// Prepares many samples in parallel on `workers` threads; output order
/// follows input order.
pub fn prepare_all(
    samples: &[(&Sample, Crop)],
    crop_ms: u64,
    ts_tau: f64,
    workers: usize,
) -> Result<Vec<LabeledSample>, VaeError> {
    let run = || {
        samples
            .par_iter()
            .map(|&(s, c)| prepare(s, crop_ms, ts_tau, c))
            .collect::<Result<Vec<_>, _>>()
    };
    match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}

/// Options for [`write_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Tilted-bar variants with the same motion directions, split `novel`.
    pub novel_per_class: usize,
    pub duration_ms: u64,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            classes: NUM_DIRECTIONS,
            train_per_class: 50,
            test_per_class: 20,
            novel_per_class: 10,
            duration_ms: 300,
            seed: 0,
        }
    }
}

/// Writes a synthetic moving-pattern dataset: binary event files plus
/// `manifest.csv` with a single `label` stream.
pub fn write_synthetic(dir: &Path, opts: &SynthOptions) -> Result<usize, VaeError> {
    if opts.classes < 2 || opts.classes > NUM_DIRECTIONS {
        return Err(VaeError::Data(format!(
            "synthetic data has 2 to {NUM_DIRECTIONS} classes, got {}",
            opts.classes
        )));
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut jobs = Vec::new();
    for (split, per, shape) in [
        ("train", opts.train_per_class, Shape::Bar),
        ("test", opts.test_per_class, Shape::Bar),
        ("novel", opts.novel_per_class, Shape::Tilted),
    ] {
        for i in 0..per {
            for class in 0..opts.classes {
                let spec = SyntheticSpec {
                    shape,
                    duration_ms: opts.duration_ms,
                    ..SyntheticSpec::new(class, rng.gen())
                };
                jobs.push((format!("{split}_{class}_{i:04}.evt"), split, spec));
            }
        }
    }
    let rows = jobs
        .par_iter()
        .map(|(file, split, spec)| {
            let (stream, label) = gen_synthetic(spec)?;
            let bytes = write_event_file(&stream, EventFormat::Binary)?;
            let path: PathBuf = dir.join(file);
            fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
            Ok(format!("{file},{split},{label}"))
        })
        .collect::<Result<Vec<_>, VaeError>>()?;
    let mut manifest = String::from("file,split,label\n");
    for r in &rows {
        manifest.push_str(r);
        manifest.push('\n');
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| io_err(&path, e))?;
    Ok(rows.len())
}
