use std::fmt::Write as _;
use std::ops::Range;

use rayon::prelude::*;

use crate::vae::{eval_samples, Dataset, LabeledSample, Model, VaeError};

use super::LatentError;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub id: String,
    /// Class index, or -1 when unlabelled.
    pub label: i64,
    pub mu: Vec<f32>,
}

/// Posterior means of a set of samples. `guided` is the latent block of the
/// label stream the rows are labelled with.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub guided: Range<usize>,
    pub dim: usize,
    pub rows: Vec<EmbeddingRow>,
}

impl EmbeddingTable {
    pub fn new(guided: Range<usize>, dim: usize, rows: Vec<EmbeddingRow>) -> Result<Self, LatentError> {
        if guided.start >= guided.end || guided.end > dim {
            return Err(LatentError::Shape(format!("guided block {guided:?} does not fit {dim} dims")));
        }
        if let Some(r) = rows.iter().find(|r| r.mu.len() != dim) {
            return Err(LatentError::Shape(format!("row {:?} has {} dims, expected {dim}", r.id, r.mu.len())));
        }
        Ok(Self { guided, dim, rows })
    }

    pub fn labeled(&self) -> impl Iterator<Item = &EmbeddingRow> {
        self.rows.iter().filter(|r| r.label >= 0)
    }

    /// Indices outside the guided block.
    pub fn unguided(&self) -> Vec<usize> {
        (0..self.dim).filter(|i| !self.guided.contains(i)).collect()
    }

    /// `# guided=a..b`, the `id,label,mu0,...` header, then one row per sample.
    pub fn to_text(&self) -> String {
        let mut out = format!("# guided={}..{}\nid,label", self.guided.start, self.guided.end);
        for d in 0..self.dim {
            let _ = write!(out, ",mu{d}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{}", r.id, r.label);
            for v in &r.mu {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, LatentError> {
        let bad = |line: usize, msg: String| LatentError::Shape(format!("line {}: {msg}", line + 1));
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (i, first) = lines.next().ok_or_else(|| bad(0, "empty table".into()))?;
        let guided = first
            .strip_prefix("# guided=")
            .and_then(|r| r.split_once(".."))
            .and_then(|(a, b)| Some(a.trim().parse::<usize>().ok()?..b.trim().parse::<usize>().ok()?))
            .ok_or_else(|| bad(i, format!("expected '# guided=a..b', got {first:?}")))?;
        let (i, header) = lines.next().ok_or_else(|| bad(i + 1, "missing header".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 || cols[0] != "id" || cols[1] != "label" {
            return Err(bad(i, "header must start with id,label".into()));
        }
        let dim = cols.len() - 2;
        let mut rows = Vec::new();
        for (i, line) in lines {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != dim + 2 {
                return Err(bad(i, format!("{} cells, header has {}", cells.len(), dim + 2)));
            }
            let label = cells[1].parse().map_err(|_| bad(i, format!("bad label {:?}", cells[1])))?;
            let mu = cells[2..]
                .iter()
                .map(|c| c.parse::<f32>().map_err(|_| bad(i, format!("bad value {c:?}"))))
                .collect::<Result<_, _>>()?;
            rows.push(EmbeddingRow {
                id: cells[0].to_string(),
                label,
                mu,
            });
        }
        Self::new(guided, dim, rows)
    }
}

/// Embeds every sample of `split` (centre crop) with its label from config
/// stream `stream`.
pub fn export_latents(model: &Model, dataset: &Dataset, split: &str, stream: usize) -> Result<EmbeddingTable, LatentError> {
    let cfg = model.config();
    let pair = model
        .guided()
        .get(stream)
        .ok_or_else(|| LatentError::Shape(format!("model has no label stream {stream}")))?;
    let ids: Vec<&str> = dataset.samples.iter().filter(|s| s.split == split).map(|s| s.file.as_str()).collect();
    let samples = eval_samples(dataset, cfg, split)?;
    let mus = samples
        .par_iter()
        .map(|s| model.encode(&s.frames).map(|(mu, _)| mu))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = ids
        .iter()
        .zip(samples.iter().zip(mus))
        .map(|(id, (s, mu))| EmbeddingRow {
            id: id.to_string(),
            label: s.labels[stream].map_or(-1, |l| l as i64),
            mu: mu.into_data(),
        })
        .collect();
    EmbeddingTable::new(pair.block.clone(), cfg.latent_dim, rows)
}

/// Fraction of labelled samples whose excitation-classifier argmax on the
/// guided block of `mu` matches the label of config stream `stream`.
pub fn eval_excitation_accuracy(model: &Model, samples: &[LabeledSample], stream: usize) -> Result<f64, VaeError> {
    let hits = samples
        .par_iter()
        .filter_map(|s| s.labels[stream].map(|y| (s, y)))
        .map(|(s, y)| {
            let (mu, _) = model.encode(&s.frames)?;
            Ok(usize::from(model.classify(stream, &mu)? == y))
        })
        .collect::<Result<Vec<_>, VaeError>>()?;
    if hits.is_empty() {
        return Err(VaeError::Data("no labelled samples to evaluate".into()));
    }
    Ok(hits.iter().sum::<usize>() as f64 / hits.len() as f64)
}
