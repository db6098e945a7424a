use super::checkpoint::{decode_state, encode_state};
use super::eval::{eval_mask, summarize};
use super::*;
use crate::losses::sda_loss;

fn tiny_data(seed: u64) -> Dataset {
    Dataset::generate(&DataConfig {
        h: 32,
        w: 32,
        frames: 5,
        coils: 2,
        domains: 2,
        include_unseen: false,
        samples_per_domain: 5,
        seed,
        mask_accel: 4,
        acs_lines: 8,
    })
    .unwrap()
}

fn tiny_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        accelerations: vec![4, 8],
        seed,
        generator: GeneratorConfig {
            unrolls: 2,
            base_channels: 4,
            prompt_channels: 2,
            adjacent: 3,
            acs_lines: 8,
            coils: 2,
            residual: true,
            sme_refiner: true,
        },
        domains: 2,
        disc_channels: 4,
        cov_window: 5,
        sda_window: 3,
        ..TrainConfig::default()
    }
}

fn run(trainer: &mut Trainer, data: &Dataset, n: usize) -> Vec<LossRecord> {
    (0..n).map_while(|_| trainer.step(data).unwrap()).collect()
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let data = tiny_data(1);
    let mut a = Trainer::new(tiny_config(5)).unwrap();
    let mut b = Trainer::new(tiny_config(5)).unwrap();
    let ra = run(&mut a, &data, 4);
    let rb = run(&mut b, &data, 4);
    assert_eq!(ra, rb);
    assert_eq!(encode_state(&a.state), encode_state(&b.state));
    let mut c = Trainer::new(tiny_config(6)).unwrap();
    run(&mut c, &data, 4);
    assert_ne!(encode_state(&a.state), encode_state(&c.state));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let data = tiny_data(2);
    let mut full = Trainer::new(tiny_config(3)).unwrap();
    let first = run(&mut full, &data, 3);
    let rest = run(&mut full, &data, 3);

    let mut part = Trainer::new(tiny_config(3)).unwrap();
    assert_eq!(run(&mut part, &data, 3), first);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.gcmr");
    save_checkpoint(&path, &part.state).unwrap();
    let state = load_checkpoint(&path).unwrap();
    assert_eq!(encode_state(&state), encode_state(&part.state));
    let mut resumed = Trainer::from_state(tiny_config(3), state);
    assert_eq!(run(&mut resumed, &data, 3), rest);
    assert_eq!(encode_state(&resumed.state), encode_state(&full.state));
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let data = tiny_data(3);
    let mut t = Trainer::new(tiny_config(1)).unwrap();
    run(&mut t, &data, 2);
    let bytes = encode_state(&t.state);
    let again = encode_state(&decode_state(&bytes).unwrap());
    assert_eq!(bytes, again);
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let t = Trainer::new(tiny_config(1)).unwrap();
    let mut bytes = encode_state(&t.state);
    bytes[0] ^= 0xff;
    assert!(decode_state(&bytes).is_err());
    let bytes = encode_state(&t.state);
    assert!(decode_state(&bytes[..bytes.len() / 2]).is_err());
}

#[test]
fn fidelity_only_matches_manual_step() {
    let data = tiny_data(4);
    let mut cfg = tiny_config(9);
    cfg.terms = Terms { ear: false, sda: false, gan: false };
    cfg.weighting = Weighting::Fixed(LossWeights::from_array([1.0, 0.0, 0.0]));
    let mut t = Trainer::new(cfg.clone()).unwrap();
    let s = data.samples(0)[1];
    let (sample, _, _) = t.prepare_sample(&data, s).unwrap();

    let mut gen = t.state.generator.clone();
    let (trace, cache) = gen.forward(&sample.k0, &sample.mask).unwrap();
    let gt = combined_magnitude(&sample.kg, &reference_maps(&sample.k0, 8).unwrap()).unwrap();
    let mut grads = Vec::new();
    let mut total = 0.0;
    for step in &trace.steps {
        let f = fidelity_loss_target(step.k_out.central(), sample.kg.central(), &gt, &trace.sens).unwrap();
        total += f.total;
        grads.push(StepGrad { k_central: Some(f.grad_k), sens: Some(f.grad_sens), ..StepGrad::default() });
    }
    gen.params.zero_grad();
    gen.backward(&trace, &cache, &grads).unwrap();
    clip_grad_norm(&mut gen.params, cfg.clip);
    let opt = AdamW { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamW::default() };
    opt.step(&mut gen.params, cfg.lr).unwrap();

    let rec = t.train_iteration(&sample).unwrap();
    assert_eq!(rec.fidelity, total);
    assert_eq!(rec.total, total);
    assert_eq!((rec.ear, rec.sda, rec.gan), (0.0, 0.0, 0.0));
    assert_eq!(t.state.generator.params, gen.params);
    assert_eq!(t.state.disc_updates, 0);
}

#[test]
fn discriminator_updates_once_per_step() {
    let data = tiny_data(5);
    let mut t = Trainer::new(tiny_config(2)).unwrap();
    let before = t.state.discriminator.params.clone();
    run(&mut t, &data, 3);
    assert_eq!(t.state.disc_updates, 3 * t.config.generator.unrolls as u64);
    assert_ne!(t.state.discriminator.params, before);
}

#[test]
fn alignment_terms_match_bank_recomputation() {
    let data = tiny_data(6);
    let mut t = Trainer::new(tiny_config(4)).unwrap();
    for _ in 0..6 {
        let rec = t.step(&data).unwrap().unwrap();
        let fresh = sda_loss(&t.state.banks).unwrap();
        for (a, b) in rec.sda_layers.iter().zip(&fresh.per_layer) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
        assert!((rec.sda - fresh.total).abs() <= 1e-12 * fresh.total.abs().max(1.0));
    }
    for tt in 0..t.state.banks.steps() {
        for d in 0..t.state.banks.domains() {
            assert!(t.state.banks.get(tt, d).len() <= t.config.sda_window);
        }
    }
}

#[test]
fn weights_stay_normalized() {
    let data = tiny_data(7);
    let mut t = Trainer::new(tiny_config(8)).unwrap();
    for rec in run(&mut t, &data, 8) {
        let w = rec.weights.as_array();
        assert!((w.iter().sum::<f64>() - 3.0).abs() < 1e-12);
        assert!(w.iter().all(|&v| v >= 0.01 - 1e-15));
        assert!(rec.total.is_finite());
    }
}

#[test]
fn weights_apply_from_the_next_iteration() {
    let data = tiny_data(7);
    let mut t = Trainer::new(tiny_config(8)).unwrap();
    let recs = run(&mut t, &data, 4);
    assert_eq!(recs[0].weights_used, LossWeights::uniform());
    for pair in recs.windows(2) {
        assert_eq!(pair[1].weights_used, pair[0].weights);
    }
}

#[test]
fn epoch_visits_every_sample_once() {
    let data = tiny_data(8);
    let order = epoch_order(&data, 2, 0, 0);
    assert_eq!(order.len(), data.len());
    let mut sorted = order.clone();
    sorted.sort_by_key(|s| (s.seq, s.frame));
    sorted.dedup();
    assert_eq!(sorted.len(), data.len());
    for (i, s) in order.iter().enumerate() {
        assert_eq!(data.domain_of(*s), i % 2);
    }
    assert_ne!(epoch_order(&data, 2, 0, 1), order);
}

#[test]
fn training_stops_after_configured_epochs() {
    let data = tiny_data(9);
    let mut cfg = tiny_config(0);
    cfg.epochs = 1;
    cfg.generator.unrolls = 1;
    let mut t = Trainer::new(cfg).unwrap();
    let recs = run(&mut t, &data, 100);
    assert_eq!(recs.len(), data.len());
    assert!(t.finished());
    assert_eq!(t.state.epoch, 1);
    assert!(recs.iter().all(|r| r.accel == 4));
}

#[test]
fn iteration_cap_stops_early() {
    let data = tiny_data(9);
    let mut cfg = tiny_config(0);
    cfg.max_iterations = Some(2);
    let mut t = Trainer::new(cfg).unwrap();
    assert_eq!(run(&mut t, &data, 10).len(), 2);
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        TrainConfig { epochs: 0, ..tiny_config(0) },
        TrainConfig { accelerations: vec![], ..tiny_config(0) },
        TrainConfig { accelerations: vec![8, 4], ..tiny_config(0) },
        TrainConfig { lr: f64::NAN, ..tiny_config(0) },
        TrainConfig { trajectories: vec![], ..tiny_config(0) },
    ];
    for cfg in bad {
        assert!(Trainer::new(cfg).is_err());
    }
}

#[test]
fn evaluation_table_shape_and_full_mask_baseline() {
    let data = tiny_data(10);
    let gen = Generator::new(tiny_config(0).generator, &mut Rng::new(0)).unwrap();
    let cfg = EvalConfig {
        trajectories: vec![Trajectory::Uniform, Trajectory::Radial],
        accelerations: vec![4, 8],
        seed: 3,
        max_samples: Some(2),
    };
    let rows = evaluate(&gen, &data, &[0, 1], &cfg).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 2);
    assert!(rows.iter().all(|r| r.samples == 2 && r.ssim.mean.is_finite() && r.zf_nmse.mean > 0.0));
    assert_eq!(rows, evaluate(&gen, &data, &[0, 1], &cfg).unwrap());
    let m = eval_mask(&cfg, &gen, 32, 32, 0, Trajectory::Uniform, 4, 0).unwrap();
    assert_eq!(m, eval_mask(&cfg, &gen, 32, 32, 0, Trajectory::Uniform, 4, 0).unwrap());

    let s = data.samples(0)[0];
    let full = SamplingMask::all_ones(3, 32, 32);
    let (_, zf, gt) = eval::reconstruct_sample(&gen, &data, s, &full).unwrap();
    assert!(crate::losses::nmse(&zf, &gt).unwrap() < 1e-24);
    let means = summarize(&rows);
    assert!(means.iter().all(|v| v.is_finite()));
}

#[test]
fn evaluation_requires_samples() {
    let data = tiny_data(10);
    let gen = Generator::new(tiny_config(0).generator, &mut Rng::new(0)).unwrap();
    let cfg = EvalConfig { trajectories: vec![Trajectory::Uniform], accelerations: vec![4], seed: 0, max_samples: None };
    assert!(evaluate(&gen, &data, &[4], &cfg).is_err());
}
