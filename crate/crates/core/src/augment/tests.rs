use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand::Rng;

use super::*;

fn random_image(seed: u64, c: usize, h: usize, w: usize) -> Tensor<f32> {
    let mut r = rng::stream(seed, "test:image", 0, 0);
    let data = (0..c * h * w).map(|_| r.random_range(0.0f32..1.0)).collect();
    Tensor::new(&[c, h, w], data).unwrap()
}

fn family(kind: AugKind) -> AugFamily {
    AugFamily { id: 1, kind }
}

#[test]
fn identity_family_is_bitwise() {
    let x = random_image(1, 3, 8, 8);
    let mut r = rng::stream(0, "t", 0, 0);
    let y = apply_family(&family(AugKind::Identity), &x, &mut r).unwrap();
    assert_eq!(x, y);
}

#[test]
fn zero_sigma_noise_is_identity() {
    let x = random_image(2, 3, 8, 8);
    let mut r = rng::stream(0, "t", 0, 0);
    let y = apply_family(&family(AugKind::Noise { sigma: 0.0 }), &x, &mut r).unwrap();
    assert_eq!(x, y);
}

#[test]
fn cutout_quarter_of_32_is_16_square() {
    // 0.5 never occurs in the fixture, so every filled pixel counts as modified.
    let x = random_image(3, 1, 32, 32).map(|v| if v == 0.5 { 0.25 } else { v });
    for seed in 0..20 {
        let mut r = rng::stream(seed, "t", 0, 0);
        let y = cutout(&x, 0.25, 0.5, &mut r).unwrap();
        let changed: Vec<usize> = (0..1024).filter(|&i| x.data()[i] != y.data()[i]).collect();
        assert_eq!(changed.len(), 256);
        let rows: Vec<usize> = changed.iter().map(|i| i / 32).collect();
        let cols: Vec<usize> = changed.iter().map(|i| i % 32).collect();
        let (r0, r1) = (*rows.iter().min().unwrap(), *rows.iter().max().unwrap());
        let (c0, c1) = (*cols.iter().min().unwrap(), *cols.iter().max().unwrap());
        assert_eq!((r1 - r0, c1 - c0), (15, 15));
        assert!(changed.iter().all(|&i| y.data()[i] == 0.5));
    }
}

#[test]
fn cutout_fills_every_channel() {
    let x = Tensor::<f64>::zeros(&[3, 8, 8]);
    let mut r = rng::stream(9, "t", 0, 0);
    let y = cutout(&x, 0.25, 0.5, &mut r).unwrap();
    for ch in y.data().chunks(64) {
        assert_eq!(ch.iter().filter(|&&v| v == 0.5).count(), 16);
    }
}

#[test]
fn zero_rotation_is_identity() {
    let x = random_image(4, 3, 9, 7);
    let y = rotate(&x, 0.0).unwrap();
    for (a, b) in x.data().iter().zip(y.data()) {
        assert!((a - b).abs() <= 1e-6);
    }
}

#[test]
fn quarter_turn_of_marker() {
    // [[a, b], [c, d]] turned a quarter counter-clockwise is [[b, d], [a, c]].
    let x = Tensor::<f64>::from_f64(&[1, 2, 2], &[0.1, 0.2, 0.3, 0.4]).unwrap();
    let y = rotate(&x, 90.0).unwrap();
    assert_eq!(y.data(), Tensor::<f64>::from_f64(&[1, 2, 2], &[0.2, 0.4, 0.1, 0.3]).unwrap().data());
    let y = rotate(&x, -90.0).unwrap();
    assert_eq!(y.data(), &[0.3, 0.1, 0.4, 0.2]);
    let y = rotate(&x, 180.0).unwrap();
    assert_eq!(y.data(), &[0.4, 0.3, 0.2, 0.1]);
}

#[test]
fn bilinear_path_agrees_with_exact_quarter_turn() {
    let x = random_image(5, 2, 6, 6).cast::<f64>();
    let exact = rotate(&x, 90.0).unwrap();
    let resampled = rotate(&x, 90.0 + 1e-9).unwrap();
    for (a, b) in exact.data().iter().zip(resampled.data()) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn rotation_fills_corners_with_zero() {
    let x = Tensor::<f64>::ones(&[1, 16, 16]);
    let y = rotate(&x, 45.0).unwrap();
    assert_eq!(y.data()[0], 0.0);
    assert!((y.data()[8 * 16 + 8] - 1.0).abs() < 1e-12);
}

#[test]
fn transforms_reject_bad_parameters() {
    let x = random_image(6, 1, 4, 4);
    let mut r = rng::stream(0, "t", 0, 0);
    assert!(rotate(&x, f64::NAN).is_err());
    assert!(gaussian_noise(&x, -1.0, &mut r).is_err());
    assert!(cutout(&x, 1.0, 0.5, &mut r).is_err());
    assert!(cutout(&x, 0.0, 0.5, &mut r).is_err());
    assert!(color_jitter(&x, -1.0, 0.0).is_err());
    assert!(AugKind::Geometric {
        max_rotation_deg: 400.0,
        flip_prob: 0.5
    }
    .validate()
    .is_err());
    let bad = Tensor::<f64>::from_f64(&[1, 1, 2], &[0.5, 1.5]).unwrap();
    assert!(apply_family(&family(AugKind::Identity), &bad, &mut r).is_err());
    assert!(apply_family(&family(AugKind::Identity), &Tensor::<f32>::zeros(&[4, 4]), &mut r).is_err());
}

#[test]
fn color_jitter_clamps() {
    let x = Tensor::<f64>::from_f64(&[1, 1, 3], &[0.0, 0.5, 1.0]).unwrap();
    let y = color_jitter(&x, 2.0, 0.1).unwrap();
    assert_eq!(y.data(), &[0.1, 1.0, 1.0]);
}

#[test]
fn partition_validation() {
    assert!(Partition::new(vec![AugKind::Identity], vec![1.0]).is_err());
    assert!(Partition::new(vec![AugKind::Noise { sigma: 0.1 }, AugKind::Identity], vec![0.5, 0.5]).is_err());
    let p = Partition::standard();
    assert_eq!(p.domain_count(), 5);
    assert!(p.with_probabilities(vec![0.5, 0.5, 0.0, 0.0, 0.1]).is_err());
    assert!(p.with_probabilities(vec![0.25; 4]).is_err());
    assert!(p.with_probabilities(vec![1.5, -0.5, 0.0, 0.0, 0.0]).is_err());
    assert!(p.with_probabilities(vec![1.0 + 1e-12, 0.0, 0.0, 0.0, 0.0]).is_ok());
}

fn fixture(n: usize) -> Vec<Tensor<f32>> {
    (0..n).map(|i| random_image(100 + i as u64, 3, 8, 8)).collect()
}

fn run(images: &[Tensor<f32>], p: &Partition, key: AugmentKey) -> Vec<DomainLabeledSample<f32>> {
    label_and_augment(images.iter().enumerate().map(|(i, x)| (i, x, i % 3)), p, key).unwrap()
}

#[test]
fn degenerate_probabilities_leave_images_unchanged() {
    let images = fixture(20);
    let p = Partition::standard().with_probabilities(vec![1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    for (s, x) in run(&images, &p, AugmentKey::training(1, 0)).iter().zip(&images) {
        assert_eq!(s.domain_label, 0);
        assert_eq!(&s.image, x);
    }
}

#[test]
fn uniform_domain_counts_are_binomial() {
    let image = Tensor::<f32>::zeros(&[1, 2, 2]);
    let p = Partition::standard();
    let out = label_and_augment((0..10_000).map(|i| (i, &image, 0)), &p, AugmentKey::training(11, 0)).unwrap();
    let mut counts = [0usize; 5];
    for s in &out {
        counts[s.domain_label] += 1;
    }
    let sd = (10_000.0f64 * 0.2 * 0.8).sqrt();
    for c in counts {
        assert!((c as f64 - 2000.0).abs() < 5.0 * sd, "{counts:?}");
    }
}

#[test]
fn pipeline_is_deterministic_and_keyed() {
    let images = fixture(16);
    let p = Partition::standard();
    let a = run(&images, &p, AugmentKey::training(3, 2));
    let b = run(&images, &p, AugmentKey::training(3, 2));
    assert_eq!(a, b);
    let c = run(&images, &p, AugmentKey::training(3, 3));
    assert_ne!(a, c);
    // A sample's output does not depend on which other samples share its batch.
    let tail = label_and_augment(
        images.iter().enumerate().skip(10).map(|(i, x)| (i, x, i % 3)),
        &p,
        AugmentKey::training(3, 2),
    )
    .unwrap();
    assert_eq!(&a[10..], &tail[..]);
}

#[test]
fn all_variants_mode_emits_each_family() {
    let images = fixture(3);
    let p = Partition::standard();
    let out = label_and_augment_all(images.iter().enumerate().map(|(i, x)| (i, x, 7)), &p, AugmentKey::training(1, 0)).unwrap();
    assert_eq!(out.len(), 15);
    for (j, s) in out.iter().enumerate() {
        assert_eq!(s.domain_label, j % 5);
        assert_eq!(s.source_index, j / 5);
        assert_eq!(s.class_label, 7);
    }
    assert_eq!(out[0].image, images[0]);
}

fn family_id_for(image: &Tensor<f32>, original: &Tensor<f32>, p: &Partition, seed: u64, index: usize) -> usize {
    // Replays the per-sample stream: the family drawn first, then its parameters.
    let key = AugmentKey::training(seed, 0);
    let mut r = key.sample_rng(index);
    let d = p.draw_domain(&mut r);
    assert_eq!(&apply_family(&p.families()[d], original, &mut r).unwrap(), image);
    d
}

proptest! {
    #[test]
    fn samples_keep_labels_shapes_and_range(seed in 0u64..500, n in 1usize..12) {
        let images: Vec<Tensor<f32>> = (0..n).map(|i| random_image(seed * 31 + i as u64, 2, 6, 5)).collect();
        let p = Partition::standard();
        let out = label_and_augment(images.iter().enumerate().map(|(i, x)| (i, x, i % 4)), &p, AugmentKey::training(seed, 1)).unwrap();
        prop_assert_eq!(out.len(), n);
        for (i, s) in out.iter().enumerate() {
            prop_assert_eq!(s.class_label, i % 4);
            prop_assert_eq!(s.image.shape(), images[i].shape());
            prop_assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(s.domain_label < 5);
            let key = AugmentKey::training(seed, 1);
            let mut r = key.sample_rng(i);
            let d = p.draw_domain(&mut r);
            prop_assert_eq!(d, s.domain_label);
            prop_assert_eq!(&apply_family(&p.families()[d], &images[i], &mut r).unwrap(), &s.image);
        }
    }

    #[test]
    fn hflip_is_an_involution(seed in 0u64..1000, h in 1usize..7, w in 1usize..7) {
        let x = random_image(seed, 2, h, w);
        prop_assert_eq!(hflip(&hflip(&x).unwrap()).unwrap(), x);
    }

    #[test]
    fn rotation_stays_in_range(seed in 0u64..200, deg in -360.0f64..360.0) {
        let x = random_image(seed, 1, 7, 7);
        let y = rotate(&x, deg).unwrap();
        prop_assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn replay_matches_pipeline() {
    let images = fixture(6);
    let p = Partition::standard();
    let out = label_and_augment(images.iter().enumerate().map(|(i, x)| (i, x, 0)), &p, AugmentKey::training(5, 0)).unwrap();
    for (i, s) in out.iter().enumerate() {
        assert_eq!(family_id_for(&s.image, &images[i], &p, 5, i), s.domain_label);
    }
}
