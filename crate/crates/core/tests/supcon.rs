mod common;

use common::*;
use corolla::image::Image;
use corolla::rng::stream;
use corolla::supcon::*;
use proptest::prelude::*;

fn angles(deg: &[f64]) -> Vec<Vec<f64>> {
    deg.iter().map(|d| vec![d.to_radians().cos(), d.to_radians().sin()]).collect()
}

fn cfg() -> ContrastiveConfig {
    ContrastiveConfig::default()
}

#[test]
fn four_vector_self_loss_matches_oracle() {
    let z = angles(&[0.0, 10.0, 90.0, 100.0]);
    let pairing = vec![1, 0, 3, 2];
    let batch = EmbeddingBatch::new(to_tensor(&z), BatchLayout::new(vec![0, 0, 1, 1], pairing.clone()).unwrap()).unwrap();
    let (loss, _) = self_contrastive_loss(&batch, &cfg()).unwrap();
    assert!((loss - naive_self_loss(&z, &pairing, 0.05)).abs() < 1e-9);
}

#[test]
fn six_vector_sup_loss_matches_oracle() {
    let z = angles(&[0.0, 15.0, 30.0, 50.0, 180.0, 200.0]);
    let labels = vec![0, 0, 0, 0, 1, 1];
    let layout = BatchLayout::new(labels.clone(), vec![1, 0, 3, 2, 5, 4]).unwrap();
    let batch = EmbeddingBatch::new(to_tensor(&z), layout).unwrap();
    let (loss, diag) = sup_contrastive_loss(&batch, &cfg()).unwrap();
    assert!((loss - naive_sup_loss(&z, &labels, 0.05)).abs() < 1e-9);
    assert_eq!(diag.skipped_anchors, 0);
}

#[test]
fn one_pair_per_class_reduces_exactly() {
    for seed in 0..20 {
        let (_, batch) = random_batch(seed, 3, 8, 1000);
        let labels: Vec<usize> = (0..3).collect();
        let batch = EmbeddingBatch::new(batch.z, BatchLayout::stacked(&labels)).unwrap();
        let s = self_contrastive_loss(&batch, &cfg()).unwrap().0;
        let p = sup_contrastive_loss(&batch, &cfg()).unwrap().0;
        assert_eq!(s.to_bits(), p.to_bits());
    }
}

#[test]
fn gradients_of_both_losses() {
    use corolla::numcore::grad_check;
    for seed in 0..4 {
        let (z, batch) = random_batch(seed, 4, 5, 2);
        let layout = batch.layout.clone();
        let x = to_tensor(&z).map(|v| 1.3 * v);
        for sup in [false, true] {
            let l = layout.clone();
            let report = grad_check(
                move |g, x| {
                    let zn = g.l2_normalize(x, 1, 1e-12)?;
                    let out = if sup { sup_contrastive(g, zn, &l, &cfg())? } else { self_contrastive(g, zn, &l, &cfg())? };
                    Ok(out.loss)
                },
                &x,
                1e-6,
                1e-5,
            )
            .unwrap();
            assert!(report.passed, "{report:?}");
        }
    }
}

#[test]
fn augmentation_golden() {
    let mut img = Image::filled(24, 24, [0.0; 3]);
    for c in 0..3 {
        for y in 0..24 {
            for x in 0..24 {
                img.set(c, y, x, ((3 * x + 5 * y + 7 * c) % 24) as f64 / 23.0);
            }
        }
    }
    let spec = AugmentationSpec { jitter: 0.3, grayscale_p: 0.5, crop_scale: (0.6, 0.9), flip_p: 0.5, ..AugmentationSpec::default() };
    let out = augment(&img, &spec, &mut stream(42, &[7])).unwrap();
    let bytes: Vec<u8> = out.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    let digest = corolla_sha256(&bytes);
    assert_eq!(digest, GOLDEN_AUGMENT_SHA256, "augmented view changed");
    let twice = AugmentationSpec { flip_p: 1.0, ..AugmentationSpec::identity(Branch::Thickness) };
    let back = augment(&augment(&img, &twice, &mut stream(0, &[])).unwrap(), &twice, &mut stream(0, &[])).unwrap();
    assert_eq!(back, img);
}

const GOLDEN_AUGMENT_SHA256: &str = "2bad5839e65a291dffcf11cc0bc3d24169ee19cf11179a50058398a05fe1b716";

fn corolla_sha256(bytes: &[u8]) -> String {
    use sha2::Digest;
    hex::encode(sha2::Sha256::digest(bytes))
}

fn permuted(z: &[Vec<f64>], layout: &BatchLayout, perm: &[usize]) -> (Vec<Vec<f64>>, BatchLayout) {
    // row k of the new batch is row perm[k] of the old one
    let mut inverse = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inverse[p] = k;
    }
    let z2 = perm.iter().map(|&p| z[p].clone()).collect();
    let labels = perm.iter().map(|&p| layout.labels()[p]).collect();
    let pairing = perm.iter().map(|&p| inverse[layout.pairing()[p]]).collect();
    (z2, BatchLayout::new(labels, pairing).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_match_oracle(seed in any::<u64>(), n in 1usize..=8, d in 2usize..=32, classes in 1usize..=3) {
        let (z, batch) = random_batch(seed, n, d, classes);
        let s = self_contrastive_loss(&batch, &cfg()).unwrap().0;
        prop_assert!((s - naive_self_loss(&z, batch.layout.pairing(), 0.05)).abs() < 1e-9);
        let p = sup_contrastive_loss(&batch, &cfg()).unwrap().0;
        prop_assert!((p - naive_sup_loss(&z, batch.layout.labels(), 0.05)).abs() < 1e-9);
    }

    #[test]
    fn row_permutation_invariance(seed in any::<u64>(), n in 2usize..=8, perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let (z, batch) = random_batch(seed, n, 6, 3);
        let mut perm: Vec<usize> = (0..2 * n).collect();
        perm.shuffle(&mut stream(perm_seed, &[]));
        let (z2, layout2) = permuted(&z, &batch.layout, &perm);
        let b2 = EmbeddingBatch::new(to_tensor(&z2), layout2).unwrap();
        let (s1, s2) = (self_contrastive_loss(&batch, &cfg()).unwrap().0, self_contrastive_loss(&b2, &cfg()).unwrap().0);
        prop_assert!((s1 - s2).abs() < 1e-12);
        let (p1, p2) = (sup_contrastive_loss(&batch, &cfg()).unwrap().0, sup_contrastive_loss(&b2, &cfg()).unwrap().0);
        prop_assert!((p1 - p2).abs() < 1e-12);
    }

    #[test]
    fn rotation_invariance(seed in any::<u64>(), n in 2usize..=8, d in 2usize..=16) {
        let (z, batch) = random_batch(seed, n, d, 3);
        let q = random_orthogonal(&mut stream(seed, &[1]), d);
        let rotated = EmbeddingBatch::new(to_tensor(&rotate(&z, &q)), batch.layout.clone()).unwrap();
        for f in [self_contrastive_loss, sup_contrastive_loss] {
            prop_assert!((f(&batch, &cfg()).unwrap().0 - f(&rotated, &cfg()).unwrap().0).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_is_positive_with_negatives(seed in any::<u64>(), n in 2usize..=8) {
        let (_, batch) = random_batch(seed, n, 4, 3);
        prop_assert!(self_contrastive_loss(&batch, &cfg()).unwrap().0 > 0.0);
        if batch.layout.labels().iter().any(|&l| l != batch.layout.labels()[0]) {
            prop_assert!(sup_contrastive_loss(&batch, &cfg()).unwrap().0 > 0.0);
        }
    }
}
