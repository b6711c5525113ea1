//! Property tests over patch extraction, metrics, resizing, dihedral
//! transforms and model selection.

use dpn_core::adaptation::{select_model, ModelPool, PoolEntry};
use dpn_core::data::{build_external_set, compose, dihedral, extract_patches, patch_count, ExternalSetConfig, PatchSource};
use dpn_core::imaging::{bicubic_resize, psnr, ssim, LumaImage};
use dpn_core::model::{CellSpec, Checkpoint, Network, NetworkSpec};
use dpn_core::pipeline::SrOptions;
use proptest::prelude::*;

fn image(h: usize, w: usize, seed: u64) -> LumaImage {
    // Cheap deterministic texture; the exact content does not matter.
    LumaImage::from_fn(h, w, |y, x| {
        let v = (y as u64 * 73 + x as u64 * 151 + seed * 997) % 1009;
        v as f64 / 1008.0
    })
}

/// Counts grid positions by walking them, independently of the closed form.
fn walked_count(h: usize, w: usize, size: usize, stride: usize) -> usize {
    let steps = |len: usize| {
        let mut n = 0;
        let mut start = 0;
        while start + size <= len {
            n += 1;
            start += stride;
        }
        n
    };
    steps(h) * steps(w)
}

fn arb_image(min: usize) -> impl Strategy<Value = LumaImage> {
    (min..min + 20, min..min + 20).prop_flat_map(|(h, w)| {
        prop::collection::vec(0.0f64..=1.0, h * w).prop_map(move |d| LumaImage::new(h, w, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn patch_count_matches_walk(h in 0usize..300, w in 0usize..300, size in 1usize..64, stride in 1usize..40) {
        prop_assert_eq!(patch_count(h, w, size, stride), walked_count(h, w, size, stride));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn extraction_yields_counted_patches(h in 10usize..60, w in 10usize..60, size in 3usize..12, stride in 1usize..9) {
        let hr = image(h, w, 1);
        let inp = image(h, w, 2);
        let pairs = extract_patches(&hr, &inp, size, stride, 2, PatchSource::External).unwrap();
        prop_assert_eq!(pairs.len(), patch_count(h, w, size, stride));
        for p in &pairs {
            prop_assert_eq!(p.input.len(), size * size);
        }
    }

    #[test]
    fn psnr_and_ssim_are_symmetric(a in arb_image(15), seed in 0u64..50, shave in 0usize..2) {
        let (h, w) = a.dims();
        let b = image(h, w, seed);
        let ab = psnr(&a, &b, shave).unwrap();
        prop_assert_eq!(ab, psnr(&b, &a, shave).unwrap());
        let s1 = ssim(&a, &b, shave).unwrap();
        let s2 = ssim(&b, &a, shave).unwrap();
        prop_assert!((s1 - s2).abs() < 1e-12);
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&s1));
    }

    #[test]
    fn psnr_matches_direct_formula(a in arb_image(4), seed in 0u64..50) {
        let (h, w) = a.dims();
        let b = image(h, w, seed);
        let mse: f64 = a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / (h * w) as f64;
        if mse > 0.0 {
            let want = 10.0 * (1.0 / mse).log10();
            prop_assert!((psnr(&a, &b, 0).unwrap().db() - want).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_images_score_perfectly(a in arb_image(11)) {
        prop_assert!(psnr(&a, &a, 0).unwrap().is_identical());
        prop_assert!((ssim(&a, &a, 0).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn resize_preserves_constants(h in 4usize..30, w in 4usize..30, v in 0.0f64..=1.0, k in 0usize..5) {
        let factors = [2.0, 3.0, 4.0, 0.5, 1.0 / 3.0];
        let img = LumaImage::filled(h, w, v);
        let out = bicubic_resize(&img, factors[k]).unwrap();
        for &p in out.pixels() {
            prop_assert!((p - v).abs() < 1e-12, "{} vs {}", p, v);
        }
    }

    #[test]
    fn dihedral_inverse_restores(a in arb_image(4), t in 0u8..8) {
        let there = dihedral::dihedral(&a, t);
        let back = dihedral::dihedral(&there, dihedral::inverse(t));
        prop_assert_eq!(back, a);
    }

    #[test]
    fn dihedral_composition_is_consistent(a in arb_image(4), s in 0u8..8, t in 0u8..8) {
        let twice = dihedral::dihedral(&dihedral::dihedral(&a, t), s);
        prop_assert_eq!(twice, dihedral::dihedral(&a, compose(s, t)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn augmented_pairs_replay_their_transform(seed in 0u64..1000, stride in 9usize..30) {
        let images = [image(60, 70, seed % 7), image(50, 50, seed % 5 + 10)];
        let plain_cfg = ExternalSetConfig { scales: vec![2, 3], stride, patch_size: 17, augment: false, seed };
        let plain = build_external_set(&images, &plain_cfg).unwrap();
        let aug = build_external_set(&images, &ExternalSetConfig { augment: true, ..plain_cfg }).unwrap();
        prop_assert_eq!(plain.len(), aug.len());
        for (p, a) in plain.iter().zip(&aug) {
            prop_assert_eq!(&p.transformed(a.transform_id), a);
            // The residual split stays exact after the transform.
            let hr: Vec<f32> = dihedral::apply(a.transform_id, &p.hr(), p.size, p.size);
            prop_assert_eq!(a.hr(), hr);
        }
    }

    #[test]
    fn pair_hr_is_exact(seed in 0u64..1000) {
        let hr = image(45, 52, seed);
        let input = image(45, 52, seed + 1);
        for p in extract_patches(&hr, &input, 13, 8, 2, PatchSource::External).unwrap() {
            for (v, (i, t)) in p.hr().iter().zip(p.input.iter().zip(&p.target)) {
                prop_assert_eq!(*v, i + t);
            }
        }
    }
}

fn tiny_pool(seeds: &[u64]) -> Vec<PoolEntry> {
    let spec = NetworkSpec {
        extraction: vec![3],
        cells: vec![CellSpec::new(3, 1)],
        reconstruction: vec![1],
        ..NetworkSpec::toy()
    };
    seeds
        .iter()
        .map(|&s| {
            let mut net = Network::build(spec.clone(), s).unwrap();
            // Distinct, visible residuals.
            for p in net.params_mut() {
                for w in p.weights.data_mut() {
                    *w *= 3.0;
                }
            }
            PoolEntry {
                id: format!("m{s:02}"),
                checkpoint: Checkpoint::new(net),
                provenance: String::new(),
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn selection_ignores_pool_order(perm in Just((0u64..5).collect::<Vec<_>>()).prop_shuffle(), top_k in 1usize..4) {
        let lr = image(40, 36, 3);
        let opts = SrOptions::new(2);
        let base = select_model(&ModelPool::new(tiny_pool(&[0, 1, 2, 3, 4])).unwrap(), &lr, &opts, top_k).unwrap();
        let shuffled = select_model(&ModelPool::new(tiny_pool(&perm)).unwrap(), &lr, &opts, top_k).unwrap();
        prop_assert_eq!(base, shuffled);
    }
}
