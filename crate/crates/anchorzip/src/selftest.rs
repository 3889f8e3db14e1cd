//! Embedded oracle checks run by `anchorzip selftest`.

use anchorzip_core::entropy::{decode_symbols, encode_symbols, SymbolModel, ALPHABET_BOUND};
use anchorzip_core::ggconv::{trilinear_lookup, KernelTable};
use anchorzip_core::math::Vec3;
use anchorzip_core::spatial::build_graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub failures: Vec<String>,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn run_all(seed: u64) -> Vec<SuiteResult> {
    vec![knn_suite(seed), trilinear_suite(seed), coder_suite(seed)]
}

fn brute_knn(points: &[Vec3], k: usize, radius: Option<f64>) -> Vec<Vec<u32>> {
    (0..points.len())
        .map(|i| {
            let mut c: Vec<(f64, usize)> = (0..points.len())
                .filter(|&j| j != i)
                .map(|j| ((0..3).map(|a| (points[i][a] - points[j][a]).powi(2)).sum::<f64>(), j))
                .filter(|&(d, _)| radius.is_none_or(|r| d <= r * r))
                .collect();
            c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            c.into_iter().take(k).map(|(_, j)| j as u32).collect()
        })
        .collect()
}

/// Random clouds, some on a coarse lattice to force distance ties.
pub fn knn_suite(seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6b6e6e);
    let mut failures = Vec::new();
    let cases = 20;
    for case in 0..cases {
        let n = rng.random_range(0..300);
        let lattice = case % 2 == 0;
        let pts: Vec<Vec3> = (0..n)
            .map(|_| {
                std::array::from_fn(|_| {
                    if lattice {
                        rng.random_range(-4i32..4) as f64 * 0.5
                    } else {
                        rng.random_range(-1.0..1.0)
                    }
                })
            })
            .collect();
        let k = [1, 4, 8][case % 3];
        let radius = if case % 4 < 2 { None } else { Some(0.6) };
        match build_graph(&pts, k, radius) {
            Ok(g) if g.lists() == brute_knn(&pts, k, radius).as_slice() => {}
            Ok(_) => failures.push(format!("case {case}: graph differs from brute force (n={n}, k={k})")),
            Err(e) => failures.push(format!("case {case}: {e}")),
        }
    }
    SuiteResult { name: "knn-brute-force", cases, failures }
}

/// Closed-form eight-corner blend at random interior points.
pub fn trilinear_suite(seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7472696c);
    let mut failures = Vec::new();
    let cases = 200;
    for case in 0..cases {
        let d = rng.random_range(2..7usize);
        let ch = rng.random_range(1..5usize);
        let values: Vec<f64> = (0..d * d * d * ch).map(|_| rng.random_range(-1.0..1.0)).collect();
        let Ok(table) = KernelTable::from_values(d, ch, values.clone()) else {
            failures.push(format!("case {case}: table rejected"));
            continue;
        };
        let u: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>());
        let g = u.map(|v| v * (d - 1) as f64);
        let i0 = g.map(|v| (v.floor() as usize).min(d - 2));
        let t: [f64; 3] = std::array::from_fn(|a| g[a] - i0[a] as f64);
        let at = |i: usize, j: usize, k: usize, c: usize| values[((i * d + j) * d + k) * ch + c];
        let got = match trilinear_lookup(&table, u) {
            Ok(v) => v,
            Err(e) => {
                failures.push(format!("case {case}: {e}"));
                continue;
            }
        };
        for c in 0..ch {
            let mut want = 0.0;
            for corner in 0..8 {
                let b = [corner >> 2 & 1, corner >> 1 & 1, corner & 1];
                let w: f64 = (0..3).map(|a| if b[a] == 1 { t[a] } else { 1.0 - t[a] }).product();
                want += w * at(i0[0] + b[0], i0[1] + b[1], i0[2] + b[2], c);
            }
            if (got[c] - want).abs() > 1e-6 {
                failures.push(format!("case {case}: channel {c} got {} want {want}", got[c]));
            }
        }
    }
    SuiteResult { name: "trilinear-closed-form", cases, failures }
}

/// Random Gaussian models, symbols drawn near and far from the mean.
pub fn coder_suite(seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x636f6465);
    let mut failures = Vec::new();
    let cases = 50;
    for case in 0..cases {
        let n = rng.random_range(0..2000);
        let mut models = Vec::with_capacity(n);
        let mut symbols = Vec::with_capacity(n);
        for _ in 0..n {
            let step = 10f64.powf(rng.random_range(-3.0..0.0));
            let mu = rng.random_range(-5.0..5.0);
            let sigma = 10f64.powf(rng.random_range(-4.0..1.0));
            let Ok(m) = SymbolModel::gaussian(mu, sigma, step, ALPHABET_BOUND) else {
                failures.push(format!("case {case}: model rejected"));
                break;
            };
            let x = if rng.random::<f64>() < 0.05 {
                rng.random_range(-30.0..30.0)
            } else {
                Normal::new(mu, sigma).map_or(mu, |d| d.sample(&mut rng))
            };
            let q = (x / step).round().clamp(-(ALPHABET_BOUND as f64), ALPHABET_BOUND as f64) as i64;
            models.push(m);
            symbols.push(q);
        }
        if models.len() != n {
            continue;
        }
        let result = encode_symbols(&symbols, &models).and_then(|b| decode_symbols(&b, &models, n));
        match result {
            Ok(back) if back == symbols => {}
            Ok(_) => failures.push(format!("case {case}: decoded symbols differ")),
            Err(e) => failures.push(format!("case {case}: {e}")),
        }
    }
    SuiteResult { name: "coder-round-trip", cases, failures }
}
