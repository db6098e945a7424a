use genre_core::gcmr::{decode_exact, Tensor};
use genre_core::losses::ear::{ear_loss, ear_mask};
use genre_core::losses::sda::{sda_loss, sym_kl, FeatureBank, GaussianSummary};
use genre_core::mri::{data_consistency, normalize_maps, SENS_EPS};
use genre_core::numerics::{conv2d_same, fft2c, ifft2c};
use genre_core::sampling::{acs_rows, gaussian_line_budget};
use genre_core::trainer::cov::{curriculum_schedule, weights_from_cv, CovHistory, LossWeights, WEIGHT_FLOOR};
use genre_core::{ComplexImage, KSpaceVolume, RealImage, Rng, SamplingMask, Trajectory, C64};
use ndarray::{Array2, Array3, Array4};
use proptest::prelude::*;

fn complex_image(h: usize, w: usize, rng: &mut Rng) -> ComplexImage {
    Array2::from_shape_fn((h, w), |_| C64::new(rng.normal(), rng.normal()))
}

fn real_image(h: usize, w: usize, rng: &mut Rng) -> RealImage {
    Array2::from_shape_fn((h, w), |_| rng.normal())
}

fn volume(dim: (usize, usize, usize, usize), rng: &mut Rng) -> KSpaceVolume {
    KSpaceVolume::new(Array4::from_shape_fn(dim, |_| C64::new(rng.normal(), rng.normal()))).unwrap()
}

fn norm(a: &ComplexImage) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn trajectory() -> impl Strategy<Value = Trajectory> {
    prop_oneof![Just(Trajectory::Uniform), Just(Trajectory::Gaussian), Just(Trajectory::Radial)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn centered_fft_inverts_and_keeps_energy(h in 2usize..24, w in 2usize..24, seed: u64) {
        let x = complex_image(h, w, &mut Rng::new(seed));
        let k = fft2c(&x).unwrap();
        let back = ifft2c(&k).unwrap();
        let err = norm(&(&back - &x)) / norm(&x);
        prop_assert!(err <= 1e-10, "round trip {err}");
        prop_assert!((norm(&k) - norm(&x)).abs() / norm(&x) <= 1e-10);
    }

    #[test]
    fn convolution_is_linear(h in 3usize..16, w in 3usize..16, r in 0usize..3, a in -3.0..3.0f64, b in -3.0..3.0f64, seed: u64) {
        let mut rng = Rng::new(seed);
        let (x, y) = (real_image(h, w, &mut rng), real_image(h, w, &mut rng));
        let k = real_image(2 * r + 1, 2 * r + 1, &mut rng);
        let lhs = conv2d_same(&(&x * a + &y * b), &k).unwrap();
        let rhs = conv2d_same(&x, &k).unwrap() * a + conv2d_same(&y, &k).unwrap() * b;
        let scale = 1.0 + lhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(lhs.iter().zip(&rhs).all(|(p, q)| (p - q).abs() <= 1e-12 * scale));
    }

    #[test]
    fn rng_streams_repeat(seed: u64, stream: u64) {
        let (mut a, mut b) = (Rng::new(seed).fork(stream), Rng::new(seed).fork(stream));
        for _ in 0..64 {
            prop_assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = Rng::new(seed);
        let _ = c.normal();
        let mut d = Rng::from_state(c.state());
        prop_assert_eq!(c.uniform().to_bits(), d.uniform().to_bits());
    }

    #[test]
    fn masks_are_binary_with_full_calibration_band(
        traj in trajectory(),
        h in (12usize..40).prop_map(|h| h * 2),
        frames in 1usize..6,
        accel in prop::sample::select(vec![2usize, 4, 8]),
        acs in prop::sample::select(vec![4usize, 8]),
        static_frames: bool,
        seed: u64,
    ) {
        let w = h;
        let m = SamplingMask::generate(traj, h, w, frames, accel, acs, static_frames, &mut Rng::new(seed)).unwrap();
        let again = SamplingMask::generate(traj, h, w, frames, accel, acs, static_frames, &mut Rng::new(seed)).unwrap();
        prop_assert_eq!(m.array(), again.array());
        prop_assert!(m.array().iter().all(|&v| v <= 1));
        let band = acs_rows(h, acs);
        for f in 0..frames {
            let frame = m.frame(f);
            prop_assert!(frame.iter().any(|&v| v == 1));
            for y in band.clone() {
                prop_assert!(frame.row(y).iter().all(|&v| v == 1), "acs row {} of frame {}", y, f);
            }
            if traj == Trajectory::Gaussian {
                prop_assert_eq!(m.sampled_rows(f).len(), gaussian_line_budget(h, accel) + acs);
            }
            if traj == Trajectory::Uniform {
                let offset = if static_frames { 0 } else { f % accel };
                let expected = (0..h).filter(|y| y % accel == offset || band.contains(y)).count();
                prop_assert_eq!(m.sampled_rows(f).len(), expected);
            }
        }
    }

    #[test]
    fn data_consistency_is_linear(eta in -2.0..2.0f64, a in -3.0..3.0f64, seed: u64) {
        let mut rng = Rng::new(seed);
        let dim = (3, 2, 8, 6);
        let mask = SamplingMask::generate(Trajectory::Uniform, 8, 6, 3, 2, 2, false, &mut rng).unwrap();
        let (kt, k0, g) = (volume(dim, &mut rng), volume(dim, &mut rng), volume(dim, &mut rng));
        let scaled = |v: &KSpaceVolume| KSpaceVolume::new(&v.data * C64::new(a, 0.0)).unwrap();
        let lhs = data_consistency(&scaled(&kt), &scaled(&k0), &mask, eta, &scaled(&g)).unwrap();
        let rhs = data_consistency(&kt, &k0, &mask, eta, &g).unwrap();
        for (p, q) in lhs.data.iter().zip(rhs.data.iter()) {
            prop_assert!((p - q * a).norm() <= 1e-12 * (1.0 + q.norm() * a.abs()));
        }
    }

    #[test]
    fn normalized_maps_have_unit_energy(coils in 1usize..5, seed: u64) {
        let mut rng = Rng::new(seed);
        let raw = Array3::from_shape_fn((coils, 6, 7), |_| C64::new(rng.normal(), rng.normal()));
        let s = normalize_maps(&raw);
        for y in 0..6 {
            for x in 0..7 {
                let raw_rss: f64 = (0..coils).map(|c| raw[[c, y, x]].norm_sqr()).sum::<f64>().sqrt();
                if raw_rss > SENS_EPS {
                    let e: f64 = (0..coils).map(|c| s[[c, y, x]].norm_sqr()).sum();
                    prop_assert!((e - 1.0).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn edge_loss_vanishes_on_truth_and_is_nonnegative(h in 10usize..20, w in 10usize..20, noise in 0.0..0.5f64, seed: u64) {
        let mut rng = Rng::new(seed);
        let gt = real_image(h, w, &mut rng).mapv(f64::abs);
        let rec = &gt + &(real_image(h, w, &mut rng) * noise);
        prop_assert!(ear_loss(&gt, &gt).unwrap().value.abs() <= 1e-12);
        let l = ear_loss(&rec, &gt).unwrap();
        prop_assert!(l.empty_mask || l.value >= -1e-12);
        prop_assert_eq!(ear_mask(&gt, 0.0).b, ear_mask(&gt, 0.0).b);
    }

    #[test]
    fn symmetric_kl_is_a_symmetric_divergence(d in 1usize..6, seed: u64) {
        let mut rng = Rng::new(seed);
        let summary = |rng: &mut Rng| {
            GaussianSummary::new(
                (0..d).map(|_| rng.normal()).collect(),
                (0..d).map(|_| 0.1 + rng.uniform() * 2.0).collect(),
            ).unwrap()
        };
        let (a, b) = (summary(&mut rng), summary(&mut rng));
        let (ab, ba) = (sym_kl(&a, &b).unwrap(), sym_kl(&b, &a).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
        prop_assert_eq!(sym_kl(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn alignment_loss_ignores_domain_order(domains in 2usize..5, per in 2usize..5, seed: u64) {
        let mut rng = Rng::new(seed);
        let vectors: Vec<Vec<Vec<f64>>> = (0..domains)
            .map(|d| (0..per).map(|_| (0..4).map(|_| rng.normal() + d as f64).collect()).collect())
            .collect();
        let mut order: Vec<usize> = (0..domains).collect();
        rng.shuffle(&mut order);
        let fill = |perm: &[usize]| {
            let mut bank = FeatureBank::new(2, domains, per);
            for (slot, &d) in perm.iter().enumerate() {
                for v in &vectors[d] {
                    bank.push(0, slot, v.clone());
                    bank.push(1, slot, v.iter().map(|x| x * 0.5).collect());
                }
            }
            sda_loss(&bank).unwrap().total
        };
        let (a, b) = (fill(&(0..domains).collect::<Vec<_>>()), fill(&order));
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn loss_weights_stay_positive_and_sum_to_three(cv in prop::array::uniform3(0.0..10.0f64)) {
        let w = weights_from_cv(cv).as_array();
        prop_assert!(w.iter().all(|&l| l >= WEIGHT_FLOOR - 1e-15));
        prop_assert!((w.iter().sum::<f64>() - 3.0).abs() <= 1e-12);
    }

    #[test]
    fn weight_history_updates_keep_the_invariant(
        losses in prop::collection::vec(prop::array::uniform3(0.0..5.0f64), 1..80),
        window in 2usize..60,
    ) {
        let mut hist = CovHistory::new(window);
        let mut w = LossWeights::uniform();
        for l in losses {
            hist.push(l);
            prop_assert!(hist.series.iter().all(|s| s.len() <= window));
            w = hist.update(w);
            let a = w.as_array();
            prop_assert!(a.iter().all(|&v| v > 0.0));
            prop_assert!((a.iter().sum::<f64>() - 3.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn curriculum_never_shrinks(epochs in 1usize..30, n in 1usize..5) {
        let accels: Vec<usize> = (1..=n).map(|i| 4 * i).collect();
        let mut prev = 0;
        for e in 0..epochs {
            let s = curriculum_schedule(e, epochs, &accels);
            prop_assert!(!s.is_empty() && s.len() >= prev);
            prev = s.len();
        }
        prop_assert_eq!(curriculum_schedule(epochs - 1, epochs, &accels).len(), if epochs >= n { n } else { prev });
    }

    #[test]
    fn container_round_trip_is_byte_exact(dims in prop::collection::vec(1usize..5, 0..4), seed: u64) {
        let mut rng = Rng::new(seed);
        let n: usize = dims.iter().product();
        let real = Tensor::F64(ndarray::ArrayD::from_shape_fn(dims.clone(), |_| rng.normal()));
        let cplx = Tensor::from_complex(&ndarray::ArrayD::from_shape_fn(dims.clone(), |_| C64::new(rng.normal(), rng.uniform())));
        for t in [real, cplx] {
            let bytes = t.encode();
            let back = decode_exact(&bytes).unwrap();
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(back.encode(), bytes);
            prop_assert_eq!(back.shape().iter().product::<usize>(), n);
        }
    }
}
