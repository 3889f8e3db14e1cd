use super::*;
use crate::hierarchy::{InheritedEntry, PreliminaryContext};
use crate::spatial::build_graph;
use alloc::vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_table(rng: &mut ChaCha8Rng, d: usize, ch: usize) -> KernelTable {
    let values = (0..d * d * d * ch).map(|_| rng.random_range(-1.0..1.0)).collect();
    KernelTable::from_values(d, ch, values).unwrap()
}

/// Eight-term closed form, written independently of `KernelTable::corners`.
fn closed_form(table: &KernelTable, u: [f64; 3]) -> Vec<f64> {
    let d = table.resolution();
    let g = u.map(|v| v.clamp(0.0, 1.0) * (d - 1) as f64);
    let i0 = g.map(|v| (libm::floor(v) as usize).min(d - 2));
    let t: [f64; 3] = core::array::from_fn(|a| g[a] - i0[a] as f64);
    let mut out = vec![0.0; table.channels()];
    for corner in 0..8usize {
        let b = [corner >> 2 & 1, corner >> 1 & 1, corner & 1];
        let w: f64 = (0..3).map(|a| if b[a] == 1 { t[a] } else { 1.0 - t[a] }).product();
        for (o, v) in out.iter_mut().zip(table.at(i0[0] + b[0], i0[1] + b[1], i0[2] + b[2])) {
            *o += w * v;
        }
    }
    out
}

/// Plain dense forward: ReLU between layers, linear output.
fn dense_oracle(net: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (li, layer) in net.layers.iter().enumerate() {
        let mut y = vec![0.0; layer.outputs];
        for o in 0..layer.outputs {
            let mut acc = layer.bias[o];
            for i in 0..layer.inputs {
                acc += layer.weight[o * layer.inputs + i] * h[i];
            }
            y[o] = if li + 1 < net.layers.len() && net.activation == Activation::Relu { acc.max(0.0) } else { acc };
        }
        h = y;
    }
    h
}

fn random_params(seed: u64, channels: usize, offsets: usize) -> ContextModelParams {
    let mut shape = ModelShape::new(channels, offsets);
    shape.embed = 4;
    shape.phi_hidden = 8;
    shape.head_hidden = 8;
    shape.table_resolution = 3;
    let mut p = ContextModelParams::seeded(shape, DEFAULT_SIGMA_MIN, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
    for g in &mut p.gate {
        *g = rng.random_range(-1.0..1.0);
    }
    p
}

/// Positions on a 1/8 lattice so translations by whole numbers are exact.
fn prelim_fixture(seed: u64, n: usize, channels: usize, offsets: usize, shift: f64) -> PreliminaryContext {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = (0..n)
        .map(|i| InheritedEntry {
            position: core::array::from_fn(|_| rng.random_range(0..16) as f64 / 8.0 + shift),
            parent: i % 3,
            feature: (0..channels).map(|_| rng.random_range(-2.0..2.0)).collect(),
            log_scaling: core::array::from_fn(|_| rng.random_range(-3.0..0.0)),
            offsets: (0..3 * offsets).map(|_| rng.random_range(-0.1..0.1)).collect(),
        })
        .collect();
    PreliminaryContext { entries }
}

#[test]
fn trilinear_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..500 {
        let d = rng.random_range(2..7);
        let table = random_table(&mut rng, d, 3);
        let u: [f64; 3] = core::array::from_fn(|_| rng.random_range(-0.2..1.2));
        let got = trilinear_lookup(&table, u).unwrap();
        for (g, w) in got.iter().zip(closed_form(&table, u)) {
            assert!((g - w).abs() <= 1e-6, "{g} vs {w}");
        }
    }
}

#[test]
fn trilinear_hits_nodes_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let table = random_table(&mut rng, 5, 2);
    for (i, j, k) in [(0, 0, 0), (4, 4, 4), (1, 2, 3), (4, 0, 2)] {
        let u = [i as f64 / 4.0, j as f64 / 4.0, k as f64 / 4.0];
        assert_eq!(trilinear_lookup(&table, u).unwrap(), table.at(i, j, k).to_vec());
    }
    assert!(trilinear_lookup(&table, [f64::NAN, 0.0, 0.0]).is_err());
}

#[test]
fn offset_normalization() {
    assert_eq!(normalize_offset([0.0; 3], 2.0).unwrap(), [0.5; 3]);
    assert_eq!(normalize_offset([2.0, -2.0, 10.0], 2.0).unwrap(), [1.0, 0.0, 1.0]);
    assert_eq!(normalize_offset([1.0, -1.0, 0.0], 2.0).unwrap(), [0.75, 0.25, 0.5]);
    assert!(normalize_offset([0.0; 3], 0.0).is_err());
}

#[test]
fn networks_match_dense_oracle() {
    for seed in 0..10 {
        let p = random_params(seed, 5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let df: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dp: Vec3 = core::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let mut x = df.clone();
        x.extend_from_slice(&dp);
        for (g, w) in feature_branch(&df, dp, &p.phi).unwrap().iter().zip(dense_oracle(&p.phi, &x)) {
            assert!((g - w).abs() <= 1e-6);
        }
        let ctx: Vec<f64> = (0..p.shape.assembled_width()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cv = ContextVector { geometry_feature: ctx[..4].to_vec(), assembled: ctx.clone() };
        let ep = entropy_head(&cv, &p.head, DEFAULT_SIGMA_MIN).unwrap();
        let raw = dense_oracle(&p.head, &ctx);
        let m = p.coded_width();
        for c in 0..m {
            assert!((ep.mu[c] - raw[c]).abs() <= 1e-6);
            let sigma = libm::log1p(libm::exp(raw[m + c])) + DEFAULT_SIGMA_MIN;
            assert!((ep.sigma[c] - sigma).abs() <= 1e-6);
            assert!(ep.sigma[c] >= DEFAULT_SIGMA_MIN);
            assert!((ep.delta_adj[c] - raw[2 * m + c]).abs() <= 1e-6);
        }
    }
}

#[test]
fn aggregation_matches_double_loop() {
    let (c, k) = (3, 1);
    for seed in 0..8 {
        let p = random_params(seed, c, k);
        let prelim = prelim_fixture(seed, 30, c, k, 0.0);
        let graph = build_graph(&prelim.positions(), 6, None).unwrap();
        let scale = 0.7;
        for q in 0..prelim.len() {
            let got = aggregate_context(q, &prelim, &graph, &p.table, &p.phi, scale).unwrap();
            let me = &prelim.entries[q];
            let mut want = vec![0.0; p.shape.embed];
            for j in 0..prelim.len() {
                if !graph.lists()[q].contains(&(j as u32)) {
                    continue;
                }
                let other = &prelim.entries[j];
                let dp: Vec3 = core::array::from_fn(|a| other.position[a] - me.position[a]);
                let u = dp.map(|d| (d / (2.0 * scale) + 0.5).clamp(0.0, 1.0));
                let w = closed_form(&p.table, u);
                let mut x: Vec<f64> = (0..c).map(|i| other.feature[i] - me.feature[i]).collect();
                x.extend_from_slice(&dp);
                let e = dense_oracle(&p.phi, &x);
                for ch in 0..want.len() {
                    want[ch] += w[ch] * e[ch];
                }
            }
            for (g, w) in got.geometry_feature.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-5, "{g} vs {w}");
            }
            let mut assembled = want.clone();
            assembled.extend_from_slice(&me.position);
            assembled.extend_from_slice(&me.log_scaling);
            assembled.extend_from_slice(&me.offsets);
            assert_eq!(got.assembled.len(), assembled.len());
            assert_eq!(&got.assembled[want.len()..], &assembled[want.len()..]);
        }
    }
}

#[test]
fn aggregation_is_translation_invariant_bitwise() {
    let p = random_params(3, 4, 2);
    let a = prelim_fixture(9, 40, 4, 2, 0.0);
    let b = prelim_fixture(9, 40, 4, 2, 64.0);
    let ga = build_graph(&a.positions(), 8, None).unwrap();
    let gb = build_graph(&b.positions(), 8, None).unwrap();
    assert_eq!(ga, gb);
    for q in 0..a.len() {
        let x = aggregate_context(q, &a, &ga, &p.table, &p.phi, 0.5).unwrap();
        let y = aggregate_context(q, &b, &gb, &p.table, &p.phi, 0.5).unwrap();
        let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x.geometry_feature), bits(&y.geometry_feature));
    }
}

#[test]
fn summation_order_is_ascending_index() {
    let prelim = prelim_fixture(4, 20, 1, 0, 0.0);
    let graph = build_graph(&prelim.positions(), 5, None).unwrap();
    for q in 0..prelim.len() {
        let order = summation_order(&graph, q).unwrap();
        assert!(order.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(order.len(), graph.lists()[q].len());
    }
}

#[test]
fn isolated_anchor_has_zero_geometry_feature() {
    let p = random_params(1, 2, 0);
    let prelim = prelim_fixture(1, 2, 2, 0, 0.0);
    let graph = build_graph(&prelim.positions(), 1, Some(1e-9)).unwrap();
    if graph.lists()[0].is_empty() {
        let cv = aggregate_context(0, &prelim, &graph, &p.table, &p.phi, 1.0).unwrap();
        assert!(cv.geometry_feature.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn level2_params_add_gated_parent() {
    let p = random_params(5, 3, 1);
    let prelim = prelim_fixture(5, 10, 3, 1, 0.0);
    let graph = build_graph(&prelim.positions(), 4, None).unwrap();
    let ctx = aggregate_context(2, &prelim, &graph, &p.table, &p.phi, 0.5).unwrap();
    let head = entropy_head(&ctx, &p.head, p.sigma_min).unwrap();
    let ep = p.level2_params(2, &prelim, &graph, 0.5).unwrap();
    let inherited = prelim.entries[2].coded_values();
    for c in 0..ep.len() {
        assert_eq!(ep.mu[c], head.mu[c] + p.gate[c] * inherited[c]);
        assert_eq!(ep.sigma[c], head.sigma[c]);
    }
}

#[test]
fn flat_parameters_round_trip() {
    let p = random_params(11, 6, 3);
    assert_eq!(p.param_count(), p.shape.param_count());
    let flat = p.to_flat();
    assert_eq!(flat.len(), p.param_count());
    let mut q = ContextModelParams::zeros(p.shape, p.sigma_min).unwrap();
    q.load_flat(&flat).unwrap();
    assert_eq!(q, p);
    assert!(q.load_flat(&flat[1..]).is_err());
    let r = p.rounded_to_f32();
    assert!(r.to_flat().iter().all(|v| (*v as f32) as f64 == *v));
    assert_eq!(ContextModelParams::seeded(p.shape, 1e-4, 3).unwrap(), ContextModelParams::seeded(p.shape, 1e-4, 3).unwrap());
}

#[test]
fn neighborhood_scale_policies() {
    let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
    let g = build_graph(&pts, 1, Some(2.5)).unwrap();
    assert_eq!(neighborhood_scale(&g, &pts), 2.5);
    let g = build_graph(&pts, 2, None).unwrap();
    // Edge lengths: 1, 3, 1, 2, 3, 2 -> sorted 1 1 2 2 3 3, p95 rank 6.
    assert_eq!(neighborhood_scale(&g, &pts), 3.0);
    let same = vec![[0.0; 3]; 2];
    assert_eq!(neighborhood_scale(&build_graph(&same, 1, None).unwrap(), &same), 1.0);
}
