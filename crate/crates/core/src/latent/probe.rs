//! Linear read-outs fitted after training on frozen latents.

use super::LatentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeKind {
    /// Multinomial logistic regression.
    Softmax,
    /// One independent logistic unit per class, like the inhibition adversary.
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOptions {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            epochs: 500,
            lr: 0.5,
            l2: 1e-4,
        }
    }
}

/// Fits a linear probe on standardised `train` features by full-batch
/// gradient descent from zero weights and returns its accuracy on `test`.
pub fn probe_accuracy(
    train: &[(Vec<f32>, usize)],
    test: &[(Vec<f32>, usize)],
    classes: usize,
    kind: ProbeKind,
    opts: ProbeOptions,
) -> Result<f64, LatentError> {
    if train.is_empty() || test.is_empty() || classes < 2 {
        return Err(LatentError::Degenerate("probe needs train and test rows and 2+ classes".into()));
    }
    let d = train[0].0.len();
    if train.iter().chain(test).any(|(x, y)| x.len() != d || *y >= classes) {
        return Err(LatentError::Shape("probe rows differ in width or label range".into()));
    }
    let n = train.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| train.iter().map(|(x, _)| x[j] as f64).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..d)
        .map(|j| {
            let v = train.iter().map(|(x, _)| (x[j] as f64 - mean[j]).powi(2)).sum::<f64>() / n;
            v.sqrt().max(1e-8)
        })
        .collect();
    let norm = |x: &[f32]| -> Vec<f64> { x.iter().enumerate().map(|(j, &v)| (v as f64 - mean[j]) / std[j]).collect() };
    let xs: Vec<Vec<f64>> = train.iter().map(|(x, _)| norm(x)).collect();

    let mut w = vec![vec![0.0f64; d + 1]; classes];
    let logits = |w: &[Vec<f64>], x: &[f64]| -> Vec<f64> {
        w.iter()
            .map(|row| row[d] + row[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    };
    for _ in 0..opts.epochs {
        let mut grad = vec![vec![0.0f64; d + 1]; classes];
        for (x, &(_, y)) in xs.iter().zip(train) {
            let z = logits(&w, x);
            let p: Vec<f64> = match kind {
                ProbeKind::Softmax => {
                    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
                    let s: f64 = e.iter().sum();
                    e.iter().map(|v| v / s).collect()
                }
                ProbeKind::Logistic => z.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
            };
            for c in 0..classes {
                let r = p[c] - f64::from(u8::from(c == y));
                for j in 0..d {
                    grad[c][j] += r * x[j];
                }
                grad[c][d] += r;
            }
        }
        for (row, g) in w.iter_mut().zip(&grad) {
            for j in 0..=d {
                let decay = if j < d { opts.l2 * row[j] } else { 0.0 };
                row[j] -= opts.lr * (g[j] / n + decay);
            }
        }
    }
    let hits = test
        .iter()
        .filter(|(x, y)| {
            let z = logits(&w, &norm(x));
            let mut best = 0;
            for c in 1..classes {
                if z[c] > z[best] {
                    best = c;
                }
            }
            best == *y
        })
        .count();
    Ok(hits as f64 / test.len() as f64)
}
