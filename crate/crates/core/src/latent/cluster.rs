use std::collections::BTreeMap;
use std::ops::Range;

use super::{EmbeddingTable, LatentError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimBlock {
    Guided,
    Unguided,
}

fn dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn project(table: &EmbeddingTable, dims: DimBlock) -> Vec<(usize, Vec<f32>)> {
    let idx: Vec<usize> = match dims {
        DimBlock::Guided => table.guided.clone().collect(),
        DimBlock::Unguided => table.unguided(),
    };
    table
        .labeled()
        .map(|r| (r.label as usize, idx.iter().map(|&i| r.mu[i]).collect()))
        .collect()
}

/// Mean silhouette coefficient of the labelled rows, Euclidean distance over
/// the chosen block.
pub fn separation_score(table: &EmbeddingTable, dims: DimBlock) -> Result<f64, LatentError> {
    let pts = project(table, dims);
    let mut sizes = BTreeMap::new();
    for (l, _) in &pts {
        *sizes.entry(*l).or_insert(0usize) += 1;
    }
    if sizes.len() < 2 || sizes.values().any(|&n| n < 2) {
        return Err(LatentError::Degenerate(format!(
            "silhouette needs at least 2 classes with 2 samples each, got sizes {sizes:?}"
        )));
    }
    let classes: Vec<usize> = sizes.keys().copied().collect();
    let mut total = 0.0;
    for (i, (li, pi)) in pts.iter().enumerate() {
        let mut sums: BTreeMap<usize, f64> = classes.iter().map(|&c| (c, 0.0)).collect();
        for (j, (lj, pj)) in pts.iter().enumerate() {
            if i != j {
                *sums.get_mut(lj).expect("known class") += dist(pi, pj);
            }
        }
        let a = sums[li] / (sizes[li] - 1) as f64;
        let b = classes
            .iter()
            .filter(|c| *c != li)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        total += if m > 0.0 { (b - a) / m } else { 0.0 };
    }
    Ok(total / pts.len() as f64)
}

/// Per-class mean of the guided block and mean distance to it.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidModel {
    pub block: Range<usize>,
    pub centroids: Vec<Vec<f32>>,
    pub dispersion: Vec<f64>,
}

/// Fits one centroid per class `0..=max label`; every class must occur.
pub fn fit_centroids(table: &EmbeddingTable) -> Result<CentroidModel, LatentError> {
    let pts = project(table, DimBlock::Guided);
    let classes = pts.iter().map(|(l, _)| l + 1).max().unwrap_or(0);
    if classes == 0 {
        return Err(LatentError::Degenerate("no labelled rows".into()));
    }
    let m = table.guided.len();
    let mut sums = vec![vec![0.0f64; m]; classes];
    let mut counts = vec![0usize; classes];
    for (l, p) in &pts {
        counts[*l] += 1;
        for (s, &v) in sums[*l].iter_mut().zip(p) {
            *s += v as f64;
        }
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(LatentError::Degenerate(format!("class {c} has no rows")));
    }
    let centroids: Vec<Vec<f32>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| s.iter().map(|v| (v / n as f64) as f32).collect())
        .collect();
    let mut dispersion = vec![0.0; classes];
    for (l, p) in &pts {
        dispersion[*l] += dist(p, &centroids[*l]) / counts[*l] as f64;
    }
    Ok(CentroidModel {
        block: table.guided.clone(),
        centroids,
        dispersion,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabel {
    pub label: usize,
    /// Softmin weight of the chosen class over dispersion-scaled distances.
    pub confidence: f64,
    pub distance: f64,
    /// Several classes share the minimal distance.
    pub tied: bool,
}

/// Nearest-centroid label of a guided-block vector.
pub fn pseudo_label(z_m: &[f32], model: &CentroidModel) -> Result<PseudoLabel, LatentError> {
    if z_m.len() != model.block.len() {
        return Err(LatentError::Shape(format!(
            "expected {} guided dims, got {}",
            model.block.len(),
            z_m.len()
        )));
    }
    let d: Vec<f64> = model.centroids.iter().map(|c| dist(z_m, c)).collect();
    let best = d.iter().copied().fold(f64::INFINITY, f64::min);
    let label = d.iter().position(|&v| v == best).expect("at least one class");
    let num_tied = d.iter().filter(|&&v| v == best).count();

    // softmin over d / dispersion; the floor keeps singleton classes finite
    let scaled: Vec<f64> = d
        .iter()
        .zip(&model.dispersion)
        .map(|(&v, &s)| v / s.max(1e-6))
        .collect();
    let lo = scaled.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = scaled.iter().map(|&s| (lo - s).exp()).collect();
    let mut confidence = w[label] / w.iter().sum::<f64>();
    if num_tied > 1 {
        confidence = confidence.min(1.0 / num_tied as f64);
    }
    Ok(PseudoLabel {
        label,
        confidence,
        distance: best,
        tied: num_tied > 1,
    })
}

#[cfg(test)]
mod tests {
    use super::super::EmbeddingRow;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table(rows: Vec<(i64, Vec<f32>)>, guided: Range<usize>) -> EmbeddingTable {
        let dim = rows[0].1.len();
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, (label, mu))| EmbeddingRow { id: format!("r{i}"), label, mu })
            .collect();
        EmbeddingTable::new(guided, dim, rows).unwrap()
    }

    #[test]
    fn tight_far_clusters_score_high() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rows = (0..40)
            .map(|i| {
                let c = (i % 2) as f32 * 100.0;
                (i as i64 % 2, vec![c + rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)])
            })
            .collect();
        assert!(separation_score(&table(rows, 0..1), DimBlock::Guided).unwrap() > 0.9);
    }

    #[test]
    fn shuffled_labels_score_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows = (0..500)
            .map(|_| (rng.gen_range(0..4), (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect();
        let s = separation_score(&table(rows, 0..4), DimBlock::Guided).unwrap();
        assert!(s.abs() < 0.1, "{s}");
    }

    #[test]
    fn singleton_classes_rejected() {
        let rows = vec![(0, vec![0.0, 1.0]), (1, vec![1.0, 0.0])];
        assert!(separation_score(&table(rows, 0..1), DimBlock::Guided).is_err());
    }

    #[test]
    fn centroids_of_singletons_and_duplicates() {
        let rows = vec![(0, vec![1.0, 2.0, 9.0]), (1, vec![-1.0, 0.5, 9.0])];
        let m = fit_centroids(&table(rows.clone(), 0..2)).unwrap();
        assert_eq!(m.centroids, vec![vec![1.0, 2.0], vec![-1.0, 0.5]]);
        assert_eq!(m.dispersion, vec![0.0, 0.0]);
        let mut doubled = rows.clone();
        doubled.extend(rows);
        assert_eq!(fit_centroids(&table(doubled, 0..2)).unwrap().centroids, m.centroids);
        assert!(fit_centroids(&table(vec![(1, vec![0.0, 0.0])], 0..1)).is_err());
    }

    #[test]
    fn centroids_match_direct_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let rows: Vec<(i64, Vec<f32>)> = (0..30)
                .map(|i| (i % 3, (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect()))
                .collect();
            let m = fit_centroids(&table(rows.clone(), 1..4)).unwrap();
            for c in 0..3 {
                for (k, d) in (1..4).enumerate() {
                    let vals: Vec<f64> = rows.iter().filter(|r| r.0 == c).map(|r| r.1[d] as f64).collect();
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    assert!((m.centroids[c as usize][k] as f64 - mean).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn label_at_centroid_and_ties() {
        let m = CentroidModel {
            block: 0..2,
            centroids: (0..6).map(|c| vec![c as f32, 0.0]).collect(),
            dispersion: vec![0.5; 6],
        };
        let p = pseudo_label(&[3.0, 0.0], &m).unwrap();
        assert_eq!((p.label, p.distance, p.tied), (3, 0.0, false));
        // moving away from the centroid only lowers confidence
        for q in [[3.2, 0.0], [2.9, 0.1], [3.0, -0.3]] {
            let o = pseudo_label(&q, &m).unwrap();
            assert_eq!(o.label, 3);
            assert!(o.confidence < p.confidence);
        }

        let m = CentroidModel {
            block: 0..2,
            centroids: vec![vec![9.0, 9.0], vec![9.0, -9.0], vec![0.0, 1.0], vec![9.0, 0.0], vec![-9.0, 0.0], vec![0.0, -1.0]],
            dispersion: vec![1.0; 6],
        };
        let p = pseudo_label(&[0.0, 0.0], &m).unwrap();
        assert_eq!(p.label, 2);
        assert!(p.tied && p.confidence <= 0.5);
    }

    #[test]
    fn translation_leaves_labels_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<(i64, Vec<f32>)> = (0..20).map(|i| (i % 4, vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)])).collect();
        let shift = [2.5f32, -1.0];
        let moved: Vec<(i64, Vec<f32>)> = rows.iter().map(|(l, v)| (*l, vec![v[0] + shift[0], v[1] + shift[1]])).collect();
        let a = fit_centroids(&table(rows, 0..2)).unwrap();
        let b = fit_centroids(&table(moved, 0..2)).unwrap();
        for _ in 0..100 {
            let q = [rng.gen_range(-4.0..4.0f32), rng.gen_range(-4.0..4.0f32)];
            let la = pseudo_label(&q, &a).unwrap().label;
            let lb = pseudo_label(&[q[0] + shift[0], q[1] + shift[1]], &b).unwrap().label;
            assert_eq!(la, lb);
        }
    }
}
