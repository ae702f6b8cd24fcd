use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::vae::Model;

use super::LatentError;

/// Default half-width of a traversal, in prior standard deviations.
pub const TRAVERSAL_RANGE: f32 = 3.0;

/// Decodes `steps` points moving `dim_a` from `+range` to `-range` while
/// `dim_b` moves from `-range` to `+range`; other dims stay at `reference`.
/// A single step decodes `reference` unchanged.
pub fn latent_traversal(
    model: &Model,
    reference: &[f32],
    dim_a: usize,
    dim_b: usize,
    steps: usize,
    range: f32,
) -> Result<Vec<Tensor>, LatentError> {
    let dim = model.config().latent_dim;
    if reference.len() != dim {
        return Err(LatentError::Shape(format!("reference has {} dims, model has {dim}", reference.len())));
    }
    if dim_a >= dim || dim_b >= dim || dim_a == dim_b {
        return Err(LatentError::Shape(format!(
            "traversal dims {dim_a} and {dim_b} must be distinct and below {dim}"
        )));
    }
    if steps == 0 {
        return Err(LatentError::Shape("traversal needs at least one step".into()));
    }
    if steps == 1 {
        return Ok(vec![model.decode_tensor(&Tensor::from_vec(reference.to_vec()))?]);
    }
    (0..steps)
        .map(|i| {
            let t = i as f32 / (steps - 1) as f32;
            let mut z = reference.to_vec();
            z[dim_a] = range - 2.0 * range * t;
            z[dim_b] = -range + 2.0 * range * t;
            Ok(model.decode_tensor(&Tensor::from_vec(z))?)
        })
        .collect()
}

/// Mean L2 distance between consecutive images.
pub fn mean_step_change(frames: &[Tensor]) -> f64 {
    if frames.len() < 2 {
        return 0.0;
    }
    let total: f64 = frames
        .windows(2)
        .map(|w| {
            w[0].data()
                .iter()
                .zip(w[1].data())
                .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    total / (frames.len() - 1) as f64
}

/// `PFM2 H W` header line then the `[2, H, W]` values as little-endian f32.
pub fn write_pfm2(path: &Path, image: &Tensor) -> Result<(), LatentError> {
    let [c, h, w] = image.shape() else {
        return Err(LatentError::Shape(format!("expected [2, H, W], got {:?}", image.shape())));
    };
    if *c != 2 {
        return Err(LatentError::Shape(format!("expected 2 channels, got {c}")));
    }
    let mut bytes = format!("PFM2 {h} {w}\n").into_bytes();
    for v in image.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|source| LatentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_pfm2(path: &Path) -> Result<Tensor, LatentError> {
    let bytes = fs::read(path).map_err(|source| LatentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = || LatentError::Shape(format!("{}: not a PFM2 image", path.display()));
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(bad)?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad())?;
    let dims: Vec<usize> = header
        .strip_prefix("PFM2 ")
        .ok_or_else(bad)?
        .split(' ')
        .map(|v| v.parse().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    let [h, w] = dims[..] else { return Err(bad()) };
    let body = &bytes[nl + 1..];
    if body.len() != 2 * h * w * 4 {
        return Err(bad());
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(vec![2, h, w], data).map_err(|_| bad())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::TrainConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> Model {
        let cfg = TrainConfig {
            channel_div: 16,
            ..TrainConfig::default()
        };
        Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn endpoints_and_single_step() {
        let m = model();
        let r: Vec<f32> = (0..100).map(|i| (i as f32 * 0.37).sin()).collect();
        let one = latent_traversal(&m, &r, 0, 5, 1, 3.0).unwrap();
        assert_eq!(one, vec![m.decode_tensor(&Tensor::from_vec(r.clone())).unwrap()]);

        let frames = latent_traversal(&m, &r, 0, 5, 7, 3.0).unwrap();
        assert_eq!(frames.len(), 7);
        let mut first = r.clone();
        first[0] = 3.0;
        first[5] = -3.0;
        let mut last = r.clone();
        last[0] = -3.0;
        last[5] = 3.0;
        assert_eq!(frames[0], m.decode_tensor(&Tensor::from_vec(first)).unwrap());
        assert_eq!(frames[6], m.decode_tensor(&Tensor::from_vec(last)).unwrap());
        assert!(latent_traversal(&m, &r, 0, 100, 3, 3.0).is_err());
        assert!(latent_traversal(&m, &r, 4, 4, 3, 3.0).is_err());
    }

    #[test]
    fn pfm2_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.pfm");
        let t = Tensor::new(vec![2, 3, 4], (0..24).map(|i| i as f32 * 0.25 - 1.0).collect()).unwrap();
        write_pfm2(&path, &t).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"PFM2 3 4\n"));
        assert_eq!(bytes.len(), 9 + 24 * 4);
        assert_eq!(read_pfm2(&path).unwrap(), t);
    }
}
