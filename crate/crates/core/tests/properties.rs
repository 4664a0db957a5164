use candle_core::Device;
use image::{GrayImage, Luma, Rgb, RgbImage};
use proptest::prelude::*;

use omnitext_core::attention::{
    enforce_identity_self_attention, invert_self_attention, reassign_cross_attention,
};
use omnitext_core::eval::{composite_with_input, evaluate_task, normalized_edit_distance, psnr, EvalCase, FloatImage};
use omnitext_core::losses::{content_loss, scalar, style_loss, style_target};
use omnitext_core::masks::{shrink_mask, split_character_masks, to_latent_mask};
use omnitext_core::pipeline::{SamplingSchedule, TaskKind};
use omnitext_core::{AttentionKind, AttentionMap, CharWidthPriors, LatentMask, TokenLayout};

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut cur = vec![i; b.len() + 1];
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Row-stochastic `n x m` map from logits.
fn rows_strategy(n: usize, m: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-4.0f64..4.0, m), n)
        .prop_map(|rows| rows.iter().map(|r| softmax(r)).collect())
}

fn self_map(rows: &[Vec<f64>], dims: (usize, usize)) -> AttentionMap {
    AttentionMap::from_rows(rows, AttentionKind::SelfAttention, dims, &Device::Cpu).unwrap()
}

fn row_sums(map: &AttentionMap) -> Vec<f64> {
    map.to_rows().unwrap().iter().map(|r| r.iter().sum()).collect()
}

/// Scalar-loop version of identity enforcement.
fn sam_oracle(rows: &[Vec<f64>], region: &[Option<usize>]) -> Vec<Vec<f64>> {
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            let Some(k) = region[i] else { return row.clone() };
            let mut out = row.clone();
            let mut mass = 0.0;
            for j in 0..row.len() {
                if region[j] == Some(k) {
                    mass += row[j];
                    out[j] = 0.0;
                }
            }
            out[i] = mass;
            let s: f64 = out.iter().sum();
            out.iter().map(|v| v / s).collect()
        })
        .collect()
}

fn text_strategy() -> impl Strategy<Value = String> {
    "[A-Za-z0-9]{1,8}"
}

fn gray(w: u32, h: u32, bits: &[bool]) -> GrayImage {
    GrayImage::from_fn(w, h, |x, y| Luma([if bits[(y * w + x) as usize] { 255 } else { 0 }]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inversion_keeps_rows_stochastic(rows in rows_strategy(16, 16), on in prop::collection::vec(any::<bool>(), 16)) {
        let mask = LatentMask::from_binary(4, 4, &on).unwrap();
        let out = invert_self_attention(&self_map(&rows, (4, 4)), &mask).unwrap();
        for s in row_sums(&out) {
            prop_assert!((s - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn inversion_fixes_constant_rows(n in 1usize..5, on in prop::collection::vec(any::<bool>(), 16)) {
        let hw = n * n;
        let rows = vec![vec![1.0 / hw as f64; hw]; hw];
        let mask = LatentMask::from_binary(n, n, &on[..hw]).unwrap();
        let out = invert_self_attention(&self_map(&rows, (n, n)), &mask).unwrap().to_rows().unwrap();
        for row in out {
            for v in row {
                prop_assert!((v - 1.0 / hw as f64).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn reassignment_rows_sum_to_exactly_one(rows in rows_strategy(9, 7), on in prop::collection::vec(any::<bool>(), 9)) {
        let layout = TokenLayout::for_text(2, 7).unwrap();
        let map = AttentionMap::from_rows(&rows, AttentionKind::CrossAttention, (3, 3), &Device::Cpu).unwrap();
        let mask = LatentMask::from_binary(3, 3, &on).unwrap();
        let once = reassign_cross_attention(&map, &mask, &layout).unwrap();
        prop_assert!(row_sums(&once).iter().all(|&s| s == 1.0));
        let twice = reassign_cross_attention(&once, &mask, &layout).unwrap();
        prop_assert_eq!(once.to_rows().unwrap(), twice.to_rows().unwrap());
    }

    #[test]
    fn identity_enforcement_matches_oracle_and_is_idempotent(
        rows in rows_strategy(64, 64),
        on in prop::collection::vec(any::<bool>(), 64),
        text in text_strategy(),
    ) {
        let mask = LatentMask::from_binary(8, 8, &on).unwrap();
        prop_assume!(mask.count() > 0);
        let strips = split_character_masks(&mask, &text).unwrap();
        let mut region = vec![None; 64];
        for (k, s) in strips.iter().enumerate() {
            for (i, b) in s.binarized().into_iter().enumerate() {
                if b {
                    region[i] = Some(k);
                }
            }
        }
        let once = enforce_identity_self_attention(&self_map(&rows, (8, 8)), &strips).unwrap();
        let got = once.to_rows().unwrap();
        let want = sam_oracle(&rows, &region);
        for (g, w) in got.iter().zip(&want) {
            for (a, b) in g.iter().zip(w) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }
        for s in row_sums(&once) {
            prop_assert!((s - 1.0).abs() <= 1e-6);
        }
        let twice = enforce_identity_self_attention(&once, &strips).unwrap().to_rows().unwrap();
        for (a, b) in twice.iter().flatten().zip(got.iter().flatten()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn latent_mask_is_monotone(
        bits in prop::collection::vec(any::<bool>(), 32 * 16),
        extra in prop::collection::vec(any::<bool>(), 32 * 16),
    ) {
        let small = gray(32, 16, &bits);
        let grown: Vec<bool> = bits.iter().zip(&extra).map(|(a, b)| *a || *b).collect();
        let large = gray(32, 16, &grown);
        let a = to_latent_mask(&small, (2, 4)).unwrap();
        let b = to_latent_mask(&large, (2, 4)).unwrap();
        for (x, y) in a.values().as_slice().iter().zip(b.values().as_slice()) {
            prop_assert!(x <= y);
        }
    }

    #[test]
    fn shrinking_never_adds_cells(
        x in 0u32..20, w in 8u32..44, source in text_strategy(), target in text_strategy(),
    ) {
        let w = w.min(64 - x);
        let mask = GrayImage::from_fn(64, 16, |px, py| Luma([if px >= x && px < x + w && (2..14).contains(&py) { 255 } else { 0 }]));
        let priors = CharWidthPriors::default();
        let original = to_latent_mask(&mask, (2, 8)).unwrap();
        let (px, lat) = shrink_mask(&mask, &source, &target, &priors, (2, 8)).unwrap();
        prop_assert!(lat.count() <= original.count());
        let (same, _) = shrink_mask(&mask, &source, &source, &priors, (2, 8)).unwrap();
        prop_assert_eq!(same, mask);
        prop_assert!(px.pixels().filter(|p| p[0] > 0).count() > 0);
    }

    #[test]
    fn style_loss_is_permutation_invariant(
        rows in rows_strategy(9, 9),
        target in prop::collection::vec(any::<bool>(), 9),
        reference in prop::collection::vec(0.0f64..1.0, 9),
        perm in Just((0..9usize).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        prop_assume!(target.iter().any(|&b| b));
        let target_mask = LatentMask::from_binary(3, 3, &target).unwrap();
        let gt = style_target(&LatentMask::new(omnitext_core::Plane::new(3, 3, reference.clone()).unwrap()).unwrap()).unwrap();
        let base = scalar(&style_loss(&[self_map(&rows, (3, 3))], &target_mask, &gt).unwrap()).unwrap();
        prop_assert!(base >= 0.0);

        let permuted_rows: Vec<Vec<f64>> = rows.iter().map(|r| perm.iter().map(|&p| r[p]).collect()).collect();
        let permuted_ref: Vec<f64> = perm.iter().map(|&p| reference[p]).collect();
        let gt2 = style_target(&LatentMask::new(omnitext_core::Plane::new(3, 3, permuted_ref).unwrap()).unwrap()).unwrap();
        let other = scalar(&style_loss(&[self_map(&permuted_rows, (3, 3))], &target_mask, &gt2).unwrap()).unwrap();
        prop_assert!((base - other).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn perfect_columns_have_negligible_content_loss(on in prop::collection::vec(any::<bool>(), 16), text in "[A-Z]{1,3}") {
        let mask = LatentMask::from_binary(4, 4, &on).unwrap();
        prop_assume!(mask.count() > 0);
        let strips = split_character_masks(&mask, &text).unwrap();
        let layout = TokenLayout::for_text(strips.len(), 8).unwrap();
        let rows: Vec<Vec<f64>> = (0..16)
            .map(|i| {
                let mut r = vec![0.0; 8];
                let hit = strips.iter().position(|s| s.is_on(i));
                r[hit.map_or(0, |k| layout.char_indices[k])] = 1.0;
                r
            })
            .collect();
        let map = AttentionMap::from_rows(&rows, AttentionKind::CrossAttention, (4, 4), &Device::Cpu).unwrap();
        let loss = scalar(&content_loss(&[map], &layout, &strips, 2.0).unwrap()).unwrap();
        prop_assert!(loss <= 16.0 * 8.0 * 2e-7);
    }

    #[test]
    fn compositing_is_idempotent(seed in any::<u64>(), w in 1u32..12, h in 1u32..12) {
        let px = |x: u32, y: u32, k: u64| ((seed ^ k).wrapping_mul(x as u64 * 31 + y as u64 * 7 + 1) >> 13) as u8;
        let out = RgbImage::from_fn(w, h, |x, y| Rgb([px(x, y, 1), px(x, y, 2), px(x, y, 3)]));
        let inp = RgbImage::from_fn(w, h, |x, y| Rgb([px(x, y, 4), px(x, y, 5), px(x, y, 6)]));
        let mask = GrayImage::from_fn(w, h, |x, y| Luma([px(x, y, 7)]));
        let once = composite_with_input(&out, &inp, &mask).unwrap();
        prop_assert_eq!(composite_with_input(&once, &inp, &mask).unwrap(), once);
    }

    #[test]
    fn psnr_decreases_with_mse(a in 0.001f64..0.2, b in 0.001f64..0.2) {
        prop_assume!((a - b).abs() > 1e-9);
        let base = FloatImage::new(4, 4, 1, vec![0.5; 16]).unwrap();
        let pa = psnr(&base, &base.map(|v| v + a)).unwrap();
        let pb = psnr(&base, &base.map(|v| v + b)).unwrap();
        prop_assert_eq!(a < b, pa > pb);
    }

    #[test]
    fn ned_is_symmetric_and_matches_dp(a in "[a-c]{0,7}", b in "[a-c]{0,7}") {
        let ab = normalized_edit_distance(&a, &b);
        prop_assert_eq!(ab, normalized_edit_distance(&b, &a));
        let len = a.chars().count().max(b.chars().count());
        let want = if len == 0 { 1.0 } else { 1.0 - levenshtein(&a, &b) as f64 / len as f64 };
        prop_assert!((ab - want).abs() <= 1e-12);
        if !a.is_empty() {
            prop_assert_eq!(normalized_edit_distance(&a, &a), 1.0);
        }
    }

    #[test]
    fn schedule_arithmetic(total in 1usize..200, sai in 0.0f64..=1.0, stages in prop::collection::btree_set(0u32..100, 0..5)) {
        let schedule = SamplingSchedule {
            total_steps: total,
            sai_fraction: sai,
            car_fraction: 1.0,
            opt_stages: stages.iter().map(|&s| s as f64 / 100.0).collect(),
            opt_iters: 20,
        };
        schedule.validate().unwrap();
        prop_assert_eq!(schedule.car_steps(), total);
        let exact = sai * total as f64;
        prop_assert!(schedule.sai_steps() as f64 >= exact - 1e-9 && (schedule.sai_steps() as f64) < exact + 1.0);
        let steps = schedule.optimization_steps();
        prop_assert!(steps.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(steps.iter().all(|&s| s < total));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn evaluation_ignores_case_order(perm in Just((0..4usize).collect::<Vec<_>>()).prop_shuffle()) {
        let cases: Vec<EvalCase> = (0..4u32)
            .map(|k| {
                let gt = RgbImage::from_fn(24, 16, |x, y| Rgb([(x * 9 + k * 40) as u8, (y * 13) as u8, k as u8]));
                let mask = GrayImage::from_fn(24, 16, |x, y| Luma([if (4..20).contains(&x) && (4..12).contains(&y) { 255 } else { 0 }]));
                EvalCase {
                    name: format!("c{k}"),
                    input: RgbImage::from_pixel(24, 16, Rgb([k as u8 * 10, 0, 0])),
                    mask,
                    ground_truth: gt,
                    source_text: None,
                    target_text: Some("AB".into()),
                    task: None,
                    reference: None,
                    reference_mask: None,
                }
            })
            .collect();
        let outputs: Vec<RgbImage> = cases
            .iter()
            .map(|c| RgbImage::from_fn(24, 16, |x, y| {
                let p = c.ground_truth.get_pixel(x, y).0;
                Rgb([p[0].wrapping_add(3), p[1], p[2] / 2])
            }))
            .collect();
        for task in [TaskKind::Removal, TaskKind::Editing] {
            let base = evaluate_task(&cases, &outputs, task, None, None).unwrap();
            let sc: Vec<EvalCase> = perm.iter().map(|&i| cases[i].clone()).collect();
            let so: Vec<RgbImage> = perm.iter().map(|&i| outputs[i].clone()).collect();
            let shuffled = evaluate_task(&sc, &so, task, None, None).unwrap();
            prop_assert_eq!(base, shuffled);
        }
    }
}
