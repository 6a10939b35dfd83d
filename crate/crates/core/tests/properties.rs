use laser_core::contrastive::head_vaq_table;
use laser_core::vat::select_token;
use laser_core::vat::TokenSampler;
use laser_core::{
    aggregate_layer_map, apply_crop, build_counterfactual, combine_scores, contrastive_map, crop_box, layer_vaq,
    mask_patches, AttentionTrace, CropBox, DecodeMode, GridGeometry, ImageBuffer, LogitsPair, MaskFill, PatchSet,
    PipelineConfig, PixelRect, TokenLayout,
};
use proptest::prelude::*;

/// Rows scaled to at most half their mass, leaving room for sinks.
fn rows(n: usize, p: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((prop::collection::vec(0.0f64..1.0, p), 0.0f64..0.5), n).prop_map(|rs| {
        rs.into_iter()
            .flat_map(|(r, mass)| {
                let total: f64 = r.iter().sum();
                r.into_iter().map(move |v| if total > 0.0 { v / total * mass } else { 0.0 })
            })
            .collect()
    })
}

fn traces() -> impl Strategy<Value = AttentionTrace<f64>> {
    (1usize..5, 1usize..5, 1u32..5, 1u32..5).prop_flat_map(|(l, h, r, c)| {
        let p = (r * c) as usize;
        (rows(l * h, p), rows(l * h, p)).prop_map(move |(with, without)| {
            let grid = GridGeometry::new(r, c, c * 16, r * 16).unwrap();
            AttentionTrace::new(l, h, grid, TokenLayout::contiguous(1, p, 2, 1), with, without, "prop").unwrap()
        })
    })
}

fn rebuild(t: &AttentionTrace<f64>, with: Vec<f64>, without: Vec<f64>) -> AttentionTrace<f64> {
    AttentionTrace::new(t.layers(), t.heads(), *t.grid(), *t.layout(), with, without, t.source_id()).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1e-12)
}

fn image(w: u32, h: u32, seed: u32) -> ImageBuffer {
    let data = (0..w * h * 3).map(|i| (i.wrapping_mul(2654435761).wrapping_add(seed) >> 13) as u8).collect();
    ImageBuffer::from_rgb(w, h, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn contrastive_entries_are_clipped_and_bounded(t in traces()) {
        for l in 0..t.layers() {
            for h in 0..t.heads() {
                let m = contrastive_map(&t, l, h).unwrap();
                for (v, w) in m.values.iter().zip(t.with_query_row(l, h)) {
                    prop_assert!(*v >= 0.0 && v <= w);
                }
            }
        }
    }

    #[test]
    fn query_invariant_components_cancel(t in traces(), sink in prop::collection::vec(0.0f64..0.1, 16)) {
        let c = &sink[..t.patches()];
        let total: f64 = c.iter().sum();
        let c: Vec<f64> = c.iter().map(|v| if total > 0.5 { v * 0.5 / total } else { *v }).collect();
        let sunk = t.add_query_invariant(&c).unwrap();
        let cfg = PipelineConfig::default();
        for l in 0..t.layers() {
            for h in 0..t.heads() {
                let a = contrastive_map(&t, l, h).unwrap().values;
                let b = contrastive_map(&sunk, l, h).unwrap().values;
                prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-12));
            }
        }
        let (a, b) = (layer_vaq(&t, &cfg).unwrap(), layer_vaq(&sunk, &cfg).unwrap());
        prop_assert!(a.layer_scores.iter().zip(&b.layer_scores).all(|(x, y)| (x - y).abs() <= 1e-12));
        let top = a.layer_scores.iter().copied().fold(0.0, f64::max);
        let runner_up = a.layer_scores.iter().filter(|&&s| s < top).copied().fold(0.0, f64::max);
        // A near-tie may legitimately flip under rounding; otherwise the layer is fixed.
        if top - runner_up > 1e-9 {
            prop_assert_eq!(a.selected_layer, b.selected_layer);
        }
    }

    #[test]
    fn scaling_one_layers_difference_raises_its_vaq(t in traces(), pick in 0usize..5, lambda in 1.1f64..3.0) {
        let layer = pick % t.layers();
        let cfg = PipelineConfig::default();
        let before = layer_vaq(&t, &cfg).unwrap();
        prop_assume!(before.layer_scores[layer] > 1e-9);
        let p = t.patches();
        let mut with = t.with_query().to_vec();
        let mut without = t.without_query().to_vec();
        for h in 0..t.heads() {
            for i in 0..p {
                let k = (layer * t.heads() + h) * p + i;
                // Keep every entry non-negative by scaling about the smaller side.
                let (w, wo) = (with[k], without[k]);
                let lo = w.min(wo);
                with[k] = lo + (w - lo) * lambda;
                without[k] = lo + (wo - lo) * lambda;
            }
        }
        let scale = with.chunks(p).chain(without.chunks(p)).map(|r| r.iter().sum::<f64>()).fold(1.0, f64::max);
        prop_assume!(scale <= 1.0);
        let after = layer_vaq(&rebuild(&t, with, without), &cfg).unwrap();
        prop_assert!(after.layer_scores[layer] > before.layer_scores[layer]);
        let rank = |s: &[f64]| s.iter().enumerate().filter(|&(i, &v)| v > s[layer] || (v == s[layer] && i < layer)).count();
        prop_assert!(rank(&after.layer_scores) <= rank(&before.layer_scores));
    }

    #[test]
    fn head_permutation_keeps_layer_scores(t in traces(), shift in 0usize..5) {
        let (h, p) = (t.heads(), t.patches());
        let perm: Vec<usize> = (0..h).map(|i| (i + shift) % h).collect();
        let permute = |src: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; src.len()];
            for l in 0..t.layers() {
                for (old, &new) in perm.iter().enumerate() {
                    let (a, b) = ((l * h + old) * p, (l * h + new) * p);
                    out[b..b + p].copy_from_slice(&src[a..a + p]);
                }
            }
            out
        };
        let moved = rebuild(&t, permute(t.with_query()), permute(t.without_query()));
        let cfg = PipelineConfig::default();
        let (a, b) = (layer_vaq(&t, &cfg).unwrap(), layer_vaq(&moved, &cfg).unwrap());
        prop_assert!(a.layer_scores.iter().zip(&b.layer_scores).all(|(x, y)| close(*x, *y)));
        let table = head_vaq_table(&t);
        for (l, sel) in a.selections.iter().enumerate() {
            let mut want: Vec<f64> = sel.heads.iter().map(|&h| table[l][h]).collect();
            let mut got: Vec<f64> = b.selections[l].heads.iter().map(|&h| table[l][perm.iter().position(|&x| x == h).unwrap()]).collect();
            want.sort_by(f64::total_cmp);
            got.sort_by(f64::total_cmp);
            prop_assert_eq!(want, got);
        }
    }

    #[test]
    fn identical_heads_aggregate_to_themselves(t in traces()) {
        let (h, p) = (t.heads(), t.patches());
        let copy = |src: &[f64]| -> Vec<f64> {
            (0..t.layers() * h).flat_map(|i| src[(i / h) * h * p..(i / h) * h * p + p].to_vec()).collect()
        };
        let same = rebuild(&t, copy(t.with_query()), copy(t.without_query()));
        let cfg = PipelineConfig { k_head: Some(h), ..Default::default() };
        let profile = layer_vaq(&same, &cfg).unwrap();
        let map = aggregate_layer_map(&same, &profile).unwrap();
        prop_assert_eq!(map.values, contrastive_map(&same, profile.selected_layer, 0).unwrap().values);
    }

    #[test]
    fn crop_box_stays_inside_and_covers_the_peak(
        w in 64u32..4096, h in 64u32..4096, r in 1u32..64, c in 1u32..64,
        pr in 0u32..64, pc in 0u32..64, fraction in 0.01f64..=1.0, min_crop in 1u32..4096,
    ) {
        let grid = GridGeometry::new(r, c, w, h).unwrap();
        let cfg = PipelineConfig { crop_fraction: fraction, min_crop, ..Default::default() };
        let peak = (pr % r, pc % c);
        let b = crop_box(peak, &grid, &cfg).unwrap().rect();
        prop_assert!(b.x0 < b.x1 && b.x1 <= w && b.y0 < b.y1 && b.y1 <= h);
        let rule = |d: u32| {
            let e = (fraction * d as f64).round() as u32;
            if e >= min_crop { e.min(d) } else { d }
        };
        prop_assert_eq!((b.width(), b.height()), (rule(w), rule(h)));
        let (cx, cy) = grid.patch_rect(grid.index_of(peak.0, peak.1)).unwrap().center();
        prop_assert!(b.contains(cx, cy));
    }

    #[test]
    fn masking_is_idempotent_and_commutes_with_cropping(
        r in 1u32..6, c in 1u32..6, picks in prop::collection::vec(0usize..36, 0..6), seed in 0u32..1000,
        x in 0u32..40, y in 0u32..40,
    ) {
        let grid = GridGeometry::new(r, c, 60, 48).unwrap();
        let img = image(60, 48, seed);
        let mut indices: Vec<usize> = picks.into_iter().map(|i| i % grid.patch_count()).collect();
        indices.dedup();
        let set = PatchSet { indices };
        let once = mask_patches(&img, &set, &grid, MaskFill::Gray).unwrap();
        let twice = mask_patches(&once, &set, &grid, MaskFill::Gray).unwrap();
        prop_assert_eq!(once.data(), twice.data());
        let crop = CropBox(PixelRect::new(x.min(59), y.min(47), 60, 48));
        let cf = build_counterfactual(&img, &crop, &set, &grid, MaskFill::Gray).unwrap();
        let crop_of_masked = apply_crop(&once, &crop).unwrap();
        prop_assert_eq!(cf.data(), crop_of_masked.data());
        let plus = apply_crop(&img, &crop).unwrap();
        for yy in 0..cf.height() {
            for xx in 0..cf.width() {
                let (gx, gy) = (xx + crop.rect().x0, yy + crop.rect().y0);
                let masked = set.indices.iter().any(|&p| grid.patch_rect(p).unwrap().contains(gx, gy));
                prop_assert_eq!(cf.pixel(xx, yy) != plus.pixel(xx, yy), masked && plus.pixel(xx, yy) != MaskFill::GRAY);
            }
        }
    }

    #[test]
    fn common_offsets_keep_the_greedy_choice(
        zp in prop::collection::vec(-20.0f64..20.0, 1..32), shift in -50.0f64..50.0, alpha in 0.0f64..4.0, seed in 0u64..99,
    ) {
        let zm: Vec<f64> = zp.iter().enumerate().map(|(i, v)| v * 0.5 - (i % 3) as f64).collect();
        let mut sampler = TokenSampler::new(seed);
        let pick = |p: &[f64], m: &[f64], s: &mut TokenSampler| {
            let pair = LogitsPair::new(0, p.to_vec(), m.to_vec()).unwrap();
            select_token(&combine_scores(&pair, alpha).unwrap().s, DecodeMode::Greedy, 1.0, s)
        };
        let base = pick(&zp, &zm, &mut sampler);
        let sp: Vec<f64> = zp.iter().map(|v| v + shift).collect();
        let sm: Vec<f64> = zm.iter().map(|v| v + shift).collect();
        let s_base = combine_scores(&LogitsPair::new(0, zp.clone(), zm.clone()).unwrap(), alpha).unwrap().s;
        let best = s_base.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let second = s_base.iter().copied().filter(|&v| v < best).fold(f64::NEG_INFINITY, f64::max);
        // Rounding of the shifted sums can only matter for near-ties.
        if best - second > 1e-9 {
            prop_assert_eq!(pick(&sp, &sm, &mut sampler), base);
        }
    }
}

#[test]
fn no_query_effect_means_zero_vaq_and_first_layer() {
    let grid = GridGeometry::new(2, 2, 32, 32).unwrap();
    let w: Vec<f64> = (0..3 * 2 * 4).map(|i| (i % 5) as f64 * 0.05).collect();
    let t = AttentionTrace::new(3, 2, grid, TokenLayout::contiguous(1, 4, 1, 1), w.clone(), w, "flat").unwrap();
    let p = layer_vaq(&t, &PipelineConfig::default()).unwrap();
    assert!(p.layer_scores.iter().all(|&s| s == 0.0));
    assert_eq!(p.selected_layer, 0);
}
