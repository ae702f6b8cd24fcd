use std::time::Instant;

use hgvae::autodiff::{Graph, Tape, Tensor};
use hgvae::events::{gen_synthetic, SyntheticSpec};
use hgvae::vae::{
    inhibition_loss, prepare, Crop, EncoderKind, InhibitionPhase, LabeledSample, Model, Sample,
    TrainConfig, Trainer, VaeError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> TrainConfig {
    TrainConfig {
        channel_div: 16,
        input_size: 16,
        crop_ms: 40,
        truncation: 20,
        threshold: 0.2,
        batch: 2,
        ..TrainConfig::default()
    }
}

fn sample(class: usize, seed: u64, cfg: &TrainConfig) -> LabeledSample {
    let (stream, label) = gen_synthetic(&SyntheticSpec::new(class, seed)).unwrap();
    let stream = stream.downscale((128 / cfg.input_size) as u16).unwrap();
    let s = Sample {
        file: format!("{class}_{seed}"),
        split: "train".into(),
        labels: vec![Some(label)],
        stream,
    };
    prepare(&s, cfg.crop_ms, cfg.ts_tau, Crop::Center).unwrap()
}

#[test]
fn single_sample_overfits() {
    let cfg = TrainConfig {
        lr: 3e-3,
        ..small_config()
    };
    let batch = vec![sample(2, 5, &cfg)];
    let mut trainer = Trainer::new(cfg).unwrap();
    let start = Instant::now();
    let first = trainer.step(&batch).unwrap().recon;
    let mut last = first;
    for _ in 1..200 {
        last = trainer.step(&batch).unwrap().recon;
    }
    eprintln!("overfit: recon {first:.5} -> {last:.5} in {:?}", start.elapsed());
    assert!(last * 10.0 <= first, "recon {first} -> {last}");
}

#[test]
fn unguided_training_leaves_classifiers_alone() {
    let cfg = TrainConfig {
        guided: false,
        ..small_config()
    };
    let batch = vec![sample(0, 1, &cfg), sample(3, 2, &cfg)];
    let mut trainer = Trainer::new(cfg.clone()).unwrap();
    let cls: Vec<_> = trainer.model.excitation_ids().into_iter().chain(trainer.model.inhibition_ids()).collect();
    let before: Vec<Tensor> = cls.iter().map(|&id| trainer.model.store.get(id).clone()).collect();
    let vae_before: Vec<Tensor> = trainer.model.vae_param_ids().iter().map(|&id| trainer.model.store.get(id).clone()).collect();
    for _ in 0..3 {
        let l = trainer.step(&batch).unwrap();
        assert_eq!((l.exc, l.inh_cls, l.inh_adv), (0.0, 0.0, 0.0));
        let expect = cfg.lambda_recon as f64 * l.recon + cfg.lambda_kl as f64 * l.kl;
        assert!((l.total - expect).abs() <= 1e-12 * expect.abs().max(1.0));
    }
    for (&id, t) in cls.iter().zip(&before) {
        assert_eq!(trainer.model.store.get(id), t);
    }
    let moved = trainer
        .model
        .vae_param_ids()
        .iter()
        .zip(&vae_before)
        .any(|(&id, t)| trainer.model.store.get(id) != t);
    assert!(moved);
}

#[test]
fn guided_step_moves_classifiers() {
    let cfg = small_config();
    let batch = vec![sample(0, 1, &cfg), sample(1, 2, &cfg)];
    let mut trainer = Trainer::new(cfg).unwrap();
    let ids: Vec<_> = trainer.model.excitation_ids().into_iter().chain(trainer.model.inhibition_ids()).collect();
    let before: Vec<Tensor> = ids.iter().map(|&id| trainer.model.store.get(id).clone()).collect();
    let l = trainer.step(&batch).unwrap();
    assert!(l.exc > 0.0 && l.inh_cls > 0.0 && l.inh_adv > 0.0);
    for (&id, t) in ids.iter().zip(&before) {
        assert_ne!(trainer.model.store.get(id), t, "{}", trainer.model.store.name(id));
    }
}

#[test]
fn inhibition_phases_touch_disjoint_parameters() {
    let cfg = small_config();
    let s = sample(1, 9, &cfg);
    let model = Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let pair = &model.guided()[0];
    let prefix = model.prefix(&s.frames).unwrap();
    let vae: Vec<_> = model.vae_param_ids();
    let k = model.inhibition_ids();

    for phase in [InhibitionPhase::Classifier, InhibitionPhase::Adversarial] {
        let mut tape = Tape::new();
        let (mu, _) = model.encode_on_tape(&mut tape, &s.frames, &prefix).unwrap();
        let rest = tape.gather(&mu, &pair.rest).unwrap();
        let trainable = phase == InhibitionPhase::Classifier;
        let (w, b) = model.bind(&mut tape, pair.inh, trainable);
        let loss = inhibition_loss(&mut tape, &rest, &w, &b, 1, phase).unwrap();
        let grads = tape.backward(loss).unwrap();
        let touched: Vec<_> = grads.params().filter(|(_, g)| g.max_abs() > 0.0).map(|(id, _)| id).collect();
        match phase {
            InhibitionPhase::Classifier => {
                assert!(touched.iter().all(|id| k.contains(id)));
                assert!(vae.iter().all(|id| grads.param(*id).map_or(true, |g| g.max_abs() == 0.0)));
            }
            InhibitionPhase::Adversarial => {
                assert!(k.iter().all(|id| grads.param(*id).is_none()));
                assert!(touched.iter().any(|id| vae.contains(id)));
            }
        }
    }
}

#[test]
fn empty_batch_and_bad_labels_rejected() {
    let cfg = small_config();
    let mut trainer = Trainer::new(cfg.clone()).unwrap();
    assert!(matches!(trainer.step(&[]), Err(VaeError::EmptyBatch)));
    let mut s = sample(0, 1, &cfg);
    s.labels = vec![Some(7)];
    assert!(matches!(trainer.step(&[s]), Err(VaeError::Label { .. })));
}

#[test]
fn losses_stay_finite_under_random_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for kind in [EncoderKind::Spiking, EncoderKind::Conventional] {
        let cfg = TrainConfig {
            encoder: kind,
            lr: 1e-2,
            crop_ms: 10,
            truncation: 5,
            input_size: 8,
            ..small_config()
        };
        let pool: Vec<LabeledSample> = (0..8).map(|i| sample(i % 4, i as u64, &cfg)).collect();
        let mut trainer = Trainer::new(cfg).unwrap();
        let steps = if kind == EncoderKind::Spiking { 1000 } else { 500 };
        for _ in 0..steps {
            let a = rng.gen_range(0..pool.len());
            let b = rng.gen_range(0..pool.len());
            let l = trainer.step(&[pool[a].clone(), pool[b].clone()]).unwrap();
            for v in [l.recon, l.kl, l.exc, l.inh_cls, l.inh_adv, l.total] {
                assert!(v.is_finite(), "{l:?}");
            }
            assert!(l.kl >= 0.0);
        }
    }
}

#[test]
fn step_timing_full_size_input() {
    // Informational: cost of one narrow-encoder step on a 200 ms, 32x32 crop.
    let cfg = TrainConfig {
        channel_div: 8,
        threshold: 0.2,
        ..TrainConfig::default()
    };
    let batch = vec![sample(0, 1, &cfg), sample(1, 2, &cfg)];
    let mut trainer = Trainer::new(cfg).unwrap();
    let t = Instant::now();
    trainer.step(&batch).unwrap();
    eprintln!("train step, 2 samples: {:?}", t.elapsed());
    let t = Instant::now();
    trainer.model.encode(&batch[0].frames).unwrap();
    eprintln!("eager encode: {:?}", t.elapsed());
}
