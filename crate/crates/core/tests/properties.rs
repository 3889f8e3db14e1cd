use anchorzip_core::codec::{encode, CodecProfile};
use anchorzip_core::entropy::{
    decode_symbols, dequantize, encode_symbols, estimate_rate, quantize, SymbolModel, ALPHABET_BOUND,
};
use anchorzip_core::ggconv::{ContextModelParams, ModelShape};
use anchorzip_core::hierarchy::{coarse_cell, partition};
use anchorzip_core::naap::{prune_and_merge, PruneConfig};
use anchorzip_core::spatial::build_graph;
use anchorzip_core::{decode, Anchor, AnchorCloud};
use proptest::prelude::*;

fn model_strategy() -> impl Strategy<Value = (SymbolModel, i64)> {
    (-5.0..5.0f64, -4.0..1.0f64, -3.0..0.0f64, -3.0..3.0f64, any::<bool>()).prop_map(|(mu, ls, lstep, z, far)| {
        let sigma = 10f64.powf(ls);
        let step = 10f64.powf(lstep);
        let m = SymbolModel::gaussian(mu, sigma, step, ALPHABET_BOUND).unwrap();
        let x = if far { mu + 40.0 * z } else { mu + sigma * z };
        let q = ((x / step).round() as i64).clamp(-ALPHABET_BOUND, ALPHABET_BOUND);
        (m, q)
    })
}

fn anchor_strategy(c: usize, k: usize) -> impl Strategy<Value = Anchor> {
    (
        prop::array::uniform3(-2.0..2.0f32),
        prop::collection::vec(-3.0..3.0f32, c),
        prop::array::uniform3(0.001..0.5f32),
        prop::collection::vec(prop::array::uniform3(-0.05..0.05f32), k),
        0.0..=1.0f32,
    )
        .prop_map(|(position, feature, scaling, offsets, mean_opacity)| Anchor {
            position,
            feature,
            scaling,
            offsets,
            mean_opacity,
        })
}

fn cloud_strategy(max: usize) -> impl Strategy<Value = AnchorCloud> {
    prop::collection::vec(anchor_strategy(2, 1), 0..max)
        .prop_map(|a| AnchorCloud::new(a, 0.25, 2, 1).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn coder_round_trips(pairs in prop::collection::vec(model_strategy(), 0..400)) {
        let (models, symbols): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let bytes = encode_symbols(&symbols, &models).unwrap();
        prop_assert_eq!(decode_symbols(&bytes, &models, symbols.len()).unwrap(), symbols.clone());
        let est = estimate_rate(&symbols, &models).unwrap();
        prop_assert!((8.0 * bytes.len() as f64 - est).abs() <= 32.0 + 1e-3 * est);
    }

    #[test]
    fn quantization_error_is_bounded(x in -100.0..100.0f64, ls in -2.0..1.0f64) {
        let step = 10f64.powf(ls);
        let q = quantize(x, step).unwrap();
        prop_assert!((x - dequantize(q, step)).abs() <= step / 2.0 * (1.0 + 1e-12));
    }

    #[test]
    fn graph_matches_brute_force(
        pts in prop::collection::vec(prop::array::uniform3(0i8..6), 0..60),
        k in 1usize..6,
        radius in prop::option::of(0.5..4.0f64),
    ) {
        let pts: Vec<[f64; 3]> = pts.iter().map(|p| p.map(|v| v as f64)).collect();
        let g = build_graph(&pts, k, radius).unwrap();
        for i in 0..pts.len() {
            let mut c: Vec<(f64, usize)> = (0..pts.len())
                .filter(|&j| j != i)
                .map(|j| ((0..3).map(|a| (pts[i][a] - pts[j][a]).powi(2)).sum(), j))
                .filter(|&(d, _)| radius.is_none_or(|r| d <= r * r))
                .collect();
            c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want: Vec<u32> = c.into_iter().take(k).map(|(_, j)| j as u32).collect();
            prop_assert_eq!(g.lists()[i].clone(), want);
        }
    }

    #[test]
    fn hierarchy_partitions(cloud in cloud_strategy(80), scale in 1.5..6.0f64) {
        prop_assume!(!cloud.is_empty());
        let h = partition(&cloud, scale).unwrap();
        prop_assert_eq!(h.level1.len() + h.level2.len(), cloud.len());
        let mut all: Vec<usize> = h.level1.iter().chain(&h.level2).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..cloud.len()).collect::<Vec<_>>());
        let cell = |i: usize| coarse_cell(cloud.anchors()[i].position_f64(), h.coarse_voxel_size);
        for (&j, &p) in h.level2.iter().zip(&h.parent_of) {
            prop_assert_eq!(cell(j), cell(p));
            prop_assert!(p < j);
        }
    }

    #[test]
    fn pruning_keeps_survivors_consistent(cloud in cloud_strategy(40), tau in 0.0..0.6f64) {
        prop_assume!(cloud.len() >= 2);
        match prune_and_merge(&cloud, &PruneConfig::new(tau)) {
            Ok((out, rep)) => {
                prop_assert_eq!(out.len(), cloud.len() - rep.pruned_count());
                for (i, t) in rep.merge_target.iter().enumerate() {
                    prop_assert_eq!(t.is_some(), rep.prune_mask[i]);
                    if let Some(t) = t {
                        prop_assert!(!rep.prune_mask[*t]);
                    }
                }
            }
            Err(e) => prop_assert_eq!(e, anchorzip_core::Error::DegenerateScene),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn codec_round_trips(cloud in cloud_strategy(120), seed in 0u64..4) {
        let profile = CodecProfile { embed: 3, hidden: 4, table_resolution: 2, fit_iterations: 0, ..CodecProfile::default() };
        let mut shape = ModelShape::new(2, 1);
        shape.embed = 3;
        shape.phi_hidden = 4;
        shape.head_hidden = 4;
        shape.table_resolution = 2;
        let params = ContextModelParams::seeded(shape, profile.sigma_min, seed).unwrap();
        let out = encode(&cloud, &params, &profile).unwrap();
        prop_assert_eq!(decode(&out.bytes).unwrap(), out.reconstruction.clone());
        prop_assert_eq!(out.reconstruction.len(), cloud.len());
    }
}
