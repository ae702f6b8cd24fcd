//! Loss terms, written once against [`Graph`] so they evaluate eagerly or on
//! a tape with identical values.

use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{AutodiffError, Graph, Tensor, Unary};

/// Standard-normal noise for [`reparameterize`].
pub fn standard_normal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Tensor {
    Tensor::from_vec((0..n).map(|_| rng.sample(StandardNormal)).collect())
}

/// `z = mu + exp(logvar / 2) * eps`; `eps` is a constant, so gradient
/// reaches only `mu` and `logvar`.
pub fn reparameterize<G: Graph>(
    g: &mut G,
    mu: &G::Value,
    logvar: &G::Value,
    eps: &Tensor,
) -> Result<G::Value, AutodiffError> {
    let half = g.scale(logvar, 0.5);
    let sigma = g.unary(Unary::Exp, &half);
    let eps = g.constant(eps.clone());
    let noise = g.mul(&sigma, &eps)?;
    g.add(mu, &noise)
}

/// KL divergence from `N(mu, exp(logvar))` to the standard normal, summed
/// over dims.
pub fn kl_loss<G: Graph>(
    g: &mut G,
    mu: &G::Value,
    logvar: &G::Value,
) -> Result<G::Value, AutodiffError> {
    let n = g.value(mu).len();
    let mu2 = g.unary(Unary::Square, mu);
    let var = g.unary(Unary::Exp, logvar);
    let t = g.add(&mu2, &var)?;
    let t = g.sub(&t, logvar)?;
    let s = g.sum(&t);
    let s = g.scale(&s, 0.5);
    let offset = g.constant(Tensor::scalar(0.5 * n as f32));
    g.sub(&s, &offset)
}

/// Mean squared error over every element.
pub fn recon_loss<G: Graph>(
    g: &mut G,
    x: &G::Value,
    target: &Tensor,
) -> Result<G::Value, AutodiffError> {
    let t = g.constant(target.clone().reshape(g.value(x).shape())?);
    let d = g.sub(x, &t)?;
    let d2 = g.unary(Unary::Square, &d);
    Ok(g.mean(&d2))
}

/// Softmax cross-entropy of `c(z_m)` against `label`; returns the loss and
/// the logits.
pub fn excitation_loss<G: Graph>(
    g: &mut G,
    z_m: &G::Value,
    w: &G::Value,
    b: &G::Value,
    label: usize,
) -> Result<(G::Value, G::Value), AutodiffError> {
    let logits = g.affine(z_m, w, b)?;
    let loss = g.softmax_cross_entropy(&logits, label)?;
    Ok((loss, logits))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InhibitionPhase {
    /// Train `k` to read the label from the unguided dims.
    Classifier,
    /// Train the encoder so `k` outputs 0.5 for every class.
    Adversarial,
}

impl FromStr for InhibitionPhase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "classifier" => Ok(InhibitionPhase::Classifier),
            "adversarial" => Ok(InhibitionPhase::Adversarial),
            other => Err(format!("unknown inhibition phase {other:?}")),
        }
    }
}

/// Per-class logistic cross-entropy of `k(z_rest)`, averaged over classes.
///
/// The classifier phase detaches `z_rest` and targets the one-hot label. The
/// adversarial phase targets 0.5 everywhere; the caller binds `k` as
/// constants so only the encoder moves.
pub fn inhibition_loss<G: Graph>(
    g: &mut G,
    z_rest: &G::Value,
    w: &G::Value,
    b: &G::Value,
    label: usize,
    phase: InhibitionPhase,
) -> Result<G::Value, AutodiffError> {
    let classes = g.value(b).len();
    let (input, targets) = match phase {
        InhibitionPhase::Classifier => {
            if label >= classes {
                return Err(AutodiffError::Shape {
                    op: "inhibition_loss",
                    detail: format!("label {label} with {classes} classes"),
                });
            }
            let mut t = vec![0.0; classes];
            t[label] = 1.0;
            (g.detach(z_rest), Tensor::from_vec(t))
        }
        InhibitionPhase::Adversarial => (z_rest.clone(), Tensor::full(&[classes], 0.5)),
    };
    let logits = g.affine(&input, w, b)?;
    g.bce_with_logits(&logits, &targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Eager, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn item(t: &Tensor) -> f64 {
        t.item().unwrap() as f64
    }

    #[test]
    fn kl_closed_forms() {
        let kl = |mu: Vec<f32>, lv: Vec<f32>| {
            item(&kl_loss(&mut Eager, &Tensor::from_vec(mu), &Tensor::from_vec(lv)).unwrap())
        };
        assert_eq!(kl(vec![0.0; 100], vec![0.0; 100]), 0.0);
        assert!((kl(vec![1.0], vec![0.0]) - 0.5).abs() < 1e-6);
        let e = std::f64::consts::E;
        assert!((kl(vec![0.0], vec![1.0]) - (e - 2.0) / 2.0).abs() < 1e-6);
    }

    #[test]
    fn kl_never_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let mu = standard_normal(10, &mut rng);
            let lv = standard_normal(10, &mut rng).map(|v| 3.0 * v);
            assert!(kl_loss(&mut Eager, &mu, &lv).unwrap().item().unwrap() >= 0.0);
        }
    }

    #[test]
    fn recon_matches_direct_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let x = standard_normal(2 * 8 * 8, &mut rng).reshape(&[2, 8, 8]).unwrap();
            let t = standard_normal(2 * 8 * 8, &mut rng);
            let direct: f64 = x
                .data()
                .iter()
                .zip(t.data())
                .map(|(&a, &b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
                / 128.0;
            let got = item(&recon_loss(&mut Eager, &x, &t).unwrap());
            assert!((got - direct).abs() < 1e-5 * direct.max(1.0));
        }
        let t = Tensor::full(&[2, 4, 4], 0.3);
        let x = t.map(|v| v + 0.1);
        assert!((item(&recon_loss(&mut Eager, &x, &t).unwrap()) - 0.01).abs() < 1e-6);
        assert_eq!(item(&recon_loss(&mut Eager, &t, &t).unwrap()), 0.0);
    }

    #[test]
    fn excitation_closed_forms() {
        let eye = Tensor::new(vec![4, 4], (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect()).unwrap();
        let zero_b = Tensor::zeros(&[4]);
        let (l, _) = excitation_loss(&mut Eager, &Tensor::zeros(&[4]), &eye, &zero_b, 2).unwrap();
        assert!((item(&l) - 4f64.ln()).abs() < 1e-6);
        let z = Tensor::from_vec(vec![0.0, 0.0, 20.0, 0.0]);
        let (l, logits) = excitation_loss(&mut Eager, &z, &eye, &zero_b, 2).unwrap();
        assert!(item(&l) < 1e-8);
        assert_eq!(logits.data(), z.data());
    }

    #[test]
    fn adversarial_optimum_is_ln2() {
        let w = Tensor::zeros(&[4, 6]);
        let b = Tensor::zeros(&[4]);
        let z = Tensor::from_vec(vec![0.3; 6]);
        let l = inhibition_loss(&mut Eager, &z, &w, &b, 1, InhibitionPhase::Adversarial).unwrap();
        assert!((item(&l) - 2f64.ln()).abs() < 1e-6);
        // any non-0.5 output costs more
        let b = Tensor::from_vec(vec![0.2, -0.1, 0.0, 0.4]);
        let l2 = inhibition_loss(&mut Eager, &z, &w, &b, 1, InhibitionPhase::Adversarial).unwrap();
        assert!(item(&l2) > item(&l));
    }

    #[test]
    fn classifier_phase_separable_case_goes_to_zero() {
        let z = Tensor::from_vec(vec![1.0, -1.0]);
        let w = Tensor::new(vec![2, 2], vec![40.0, 0.0, -40.0, 0.0]).unwrap();
        let b = Tensor::zeros(&[2]);
        let l = inhibition_loss(&mut Eager, &z, &w, &b, 0, InhibitionPhase::Classifier).unwrap();
        assert!(item(&l) < 1e-12);
    }

    #[test]
    fn classifier_phase_never_reaches_its_input() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::from_vec(vec![0.5, -0.2, 0.1]));
        let w = tape.leaf(Tensor::new(vec![2, 3], vec![0.3, -0.1, 0.2, 0.5, 0.4, -0.6]).unwrap());
        let b = tape.leaf(Tensor::zeros(&[2]));
        let l = inhibition_loss(&mut tape, &z, &w, &b, 1, InhibitionPhase::Classifier).unwrap();
        let grads = tape.backward(l).unwrap();
        assert!(grads.wrt(z).map_or(true, |g| g.data().iter().all(|&v| v == 0.0)));
        assert!(grads.wrt(w).unwrap().max_abs() > 0.0);
    }

    #[test]
    fn phase_names() {
        assert_eq!("classifier".parse(), Ok(InhibitionPhase::Classifier));
        assert_eq!("adversarial".parse(), Ok(InhibitionPhase::Adversarial));
        assert!("both".parse::<InhibitionPhase>().is_err());
    }

    #[test]
    fn reparameterize_contract() {
        let mu = Tensor::from_vec(vec![0.5, -1.0]);
        let z = reparameterize(&mut Eager, &mu, &Tensor::zeros(&[2]), &Tensor::zeros(&[2])).unwrap();
        assert_eq!(z.data(), mu.data());
        let z = reparameterize(&mut Eager, &mu, &Tensor::zeros(&[2]), &Tensor::full(&[2], 1.0)).unwrap();
        assert_eq!(z.data(), &[1.5, 0.0]);
    }

    #[test]
    fn reparameterized_sample_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mu = Tensor::from_vec(vec![0.7, -2.0, 0.0]);
        let lv = Tensor::from_vec(vec![0.0, 1.0, -2.0]);
        let n = 100_000;
        let mut sum = [0.0f64; 3];
        for _ in 0..n {
            let eps = standard_normal(3, &mut rng);
            let z = reparameterize(&mut Eager, &mu, &lv, &eps).unwrap();
            for (s, &v) in sum.iter_mut().zip(z.data()) {
                *s += v as f64;
            }
        }
        for d in 0..3 {
            let sigma = (lv.data()[d] as f64 / 2.0).exp();
            let mean = sum[d] / n as f64;
            assert!((mean - mu.data()[d] as f64).abs() < 4.0 * sigma / (n as f64).sqrt());
        }
    }
}
