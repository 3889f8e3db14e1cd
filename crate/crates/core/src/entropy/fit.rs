//! Fitting context-model parameters to a fixed cloud by minimizing its
//! estimated bit count.
//!
//! Gradients come from a smooth surrogate of the coded rate,
//! `-log2(g + 2^-16)` with `g` the discretized-Gaussian bin mass of the
//! coded symbol, back-propagated through the head, the gate, the
//! aggregation, the feature branch and the kernel table. Iterates are ranked
//! by the exact rate of the integer coder models, evaluated on the
//! `f32`-rounded parameters the bitstream would carry.

use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::ggconv::{neighborhood_scale, ContextModelParams, EntropyParams};
use crate::hierarchy::{preliminary_context, Hierarchy, PreliminaryContext};
use crate::math::{log2, normal_interval, normal_pdf, sigmoid, softplus_inv, sqrt, tanh, Vec3};
use crate::spatial::{build_graph, NeighborGraph};
use crate::types::{Anchor, AnchorCloud};

use super::{quantize_clamped, AttributeKind, LevelOnePrior, QuantSpec, SymbolModel, ALPHABET_BOUND, MIN_STEP_FRACTION};

const SURROGATE_FLOOR: f64 = 1.0 / 65536.0;
/// Level-2 anchors per gradient chunk. Chunks are reduced in order, so the
/// result does not depend on how many threads processed them.
const CHUNK: usize = 32;
const MAX_RETRIES: usize = 8;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Per-channel coder models for one anchor.
pub fn channel_models(ep: &EntropyParams, quant: &QuantSpec, channels: usize) -> Result<Vec<SymbolModel>> {
    (0..ep.len())
        .map(|c| {
            let step = quant.step(c, channels, ep.delta_adj[c]);
            SymbolModel::gaussian(ep.mu[c], ep.sigma[c], step, ALPHABET_BOUND)
        })
        .collect()
}

/// Level-2 positions with their neighbour graph and offset normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelTwoData {
    pub positions: Vec<Vec3>,
    pub graph: NeighborGraph,
    pub neighborhood_scale: f64,
}

impl LevelTwoData {
    /// Builds the graph and derives the neighbourhood scale, rounded to
    /// `f32` as the container stores it.
    pub fn build(positions: Vec<Vec3>, k: usize, radius: Option<f64>) -> Result<Self> {
        let graph = build_graph(&positions, k, radius)?;
        let scale = neighborhood_scale(&graph, &positions) as f32 as f64;
        Self::with_scale(positions, graph, scale)
    }

    pub fn with_scale(positions: Vec<Vec3>, graph: NeighborGraph, neighborhood_scale: f64) -> Result<Self> {
        if !(neighborhood_scale > 0.0 && neighborhood_scale.is_finite()) {
            return Err(Error::invalid("neighborhood scale must be positive and finite"));
        }
        Ok(Self { positions, graph, neighborhood_scale })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings {
    pub quant: QuantSpec,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Level-2 anchors per gradient step; `None` uses all of them.
    pub batch_size: Option<usize>,
    /// Weight of the squared quantization error, in base-step units, added
    /// to the objective. Only used when the steps are adaptive.
    pub distortion_weight: f64,
}

impl FitSettings {
    pub fn new(quant: QuantSpec, iterations: usize, learning_rate: f64, seed: u64) -> Self {
        Self { quant, iterations, learning_rate, seed, batch_size: None, distortion_weight: 1.0 }
    }

    fn weight(&self) -> f64 {
        if self.quant.adaptive {
            self.distortion_weight
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ContextModelParams,
    /// Exact estimated bits of iterate `t`; entry 0 is the initialization.
    pub trace: Vec<f64>,
    /// Estimated bits plus weighted distortion of iterate `t`.
    pub objective_trace: Vec<f64>,
    pub best_iteration: usize,
    pub final_learning_rate: f64,
}

/// Totals of one pass over the problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Exact coded bits under the integer models.
    pub rate: f64,
    pub distortion: f64,
    pub surrogate: f64,
    pub gradient: Option<Vec<f64>>,
}

impl Evaluation {
    pub fn objective(&self) -> f64 {
        self.rate + self.distortion
    }

    fn is_finite(&self) -> bool {
        self.rate.is_finite()
            && self.distortion.is_finite()
            && self.surrogate.is_finite()
            && self.gradient.as_ref().map_or(true, |g| g.iter().all(|v| v.is_finite()))
    }
}

/// The attributes of a (canonically ordered, position-quantized) cloud split
/// by hierarchy level, plus the level-2 graph.
#[derive(Debug, Clone)]
pub struct FitProblem {
    channels: usize,
    offsets: usize,
    hierarchy: Hierarchy,
    slot_of: Vec<usize>,
    level1_values: Vec<Vec<f64>>,
    level1_positions: Vec<[f32; 3]>,
    level2_values: Vec<Vec<f64>>,
    level2: LevelTwoData,
}

impl FitProblem {
    pub fn new(cloud: &AnchorCloud, hierarchy: &Hierarchy, k: usize, radius: Option<f64>) -> Result<Self> {
        let positions = hierarchy.level2.iter().map(|&i| cloud.anchors()[i].position_f64()).collect();
        Self::with_level2(cloud, hierarchy, LevelTwoData::build(positions, k, radius)?)
    }

    pub fn with_level2(cloud: &AnchorCloud, hierarchy: &Hierarchy, level2: LevelTwoData) -> Result<Self> {
        if hierarchy.anchor_count() != cloud.len() {
            return Err(Error::DimensionMismatch { what: "hierarchy", expected: cloud.len(), found: hierarchy.anchor_count() });
        }
        if level2.positions.len() != hierarchy.level2.len() {
            return Err(Error::DimensionMismatch {
                what: "level-2 positions",
                expected: hierarchy.level2.len(),
                found: level2.positions.len(),
            });
        }
        let a = cloud.anchors();
        let mut slot_of = vec![usize::MAX; cloud.len()];
        for (s, &i) in hierarchy.level1.iter().enumerate() {
            slot_of[i] = s;
        }
        Ok(Self {
            channels: cloud.channel_count(),
            offsets: cloud.offsets_count(),
            hierarchy: hierarchy.clone(),
            slot_of,
            level1_values: hierarchy.level1.iter().map(|&i| a[i].coded_values()).collect(),
            level1_positions: hierarchy.level1.iter().map(|&i| a[i].position).collect(),
            level2_values: hierarchy.level2.iter().map(|&i| a[i].coded_values()).collect(),
            level2,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn offsets(&self) -> usize {
        self.offsets
    }

    pub fn coded_width(&self) -> usize {
        self.channels + 3 + 3 * self.offsets
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    pub fn level2(&self) -> &LevelTwoData {
        &self.level2
    }

    pub fn level1_values(&self) -> &[Vec<f64>] {
        &self.level1_values
    }

    pub fn level2_values(&self) -> &[Vec<f64>] {
        &self.level2_values
    }

    /// Per-channel models shared by every level-1 anchor.
    pub fn level1_models(&self, params: &ContextModelParams, quant: &QuantSpec) -> Result<Vec<SymbolModel>> {
        channel_models(&params.level1.entropy_params(params.sigma_min), quant, self.channels)
    }

    /// Level-1 symbols, anchor by anchor. `strict` reports symbols beyond the
    /// alphabet instead of clamping them.
    pub fn level1_symbols(&self, models: &[SymbolModel], strict: bool) -> Result<Vec<Vec<i64>>> {
        self.level1_values.iter().map(|x| symbols_for(x, models, strict)).collect()
    }

    /// Level-1 anchors as the decoder reconstructs them.
    pub fn decode_level1(&self, models: &[SymbolModel], symbols: &[Vec<i64>]) -> Vec<Anchor> {
        symbols
            .iter()
            .zip(&self.level1_positions)
            .map(|(q, &p)| reconstruct(p, q, models, self.channels, self.offsets))
            .collect()
    }

    pub fn prelim(&self, decoded_level1: &[Anchor]) -> Result<PreliminaryContext> {
        preliminary_context(
            &self.hierarchy,
            |i| self.slot_of.get(i).and_then(|&s| decoded_level1.get(s)),
            &self.level2.positions,
        )
    }

    /// Decoder-visible context for `params`: level-1 reconstruction and the
    /// resulting preliminary context.
    pub fn context_for(&self, params: &ContextModelParams, quant: &QuantSpec) -> Result<PreliminaryContext> {
        let models = self.level1_models(params, quant)?;
        let symbols = self.level1_symbols(&models, false)?;
        self.prelim(&self.decode_level1(&models, &symbols))
    }

    pub fn level2_models(
        &self,
        params: &ContextModelParams,
        prelim: &PreliminaryContext,
        quant: &QuantSpec,
        i: usize,
    ) -> Result<Vec<SymbolModel>> {
        let ep = params.level2_params(i, prelim, &self.level2.graph, self.level2.neighborhood_scale)?;
        channel_models(&ep, quant, self.channels)
    }

    fn check(&self, params: &ContextModelParams) -> Result<()> {
        let shape = params.shape;
        if shape.channels != self.channels || shape.offsets != self.offsets {
            return Err(Error::DimensionMismatch {
                what: "model coded width",
                expected: self.coded_width(),
                found: shape.coded_width(),
            });
        }
        Ok(())
    }

    /// Exact rate, distortion and surrogate over all anchors, with the
    /// surrogate's gradient (in [`ContextModelParams::to_flat`] order) when
    /// requested.
    pub fn evaluate(
        &self,
        params: &ContextModelParams,
        quant: &QuantSpec,
        distortion_weight: f64,
        want_grad: bool,
    ) -> Result<Evaluation> {
        let all: Vec<usize> = (0..self.level2_values.len()).collect();
        self.evaluate_subset(params, quant, distortion_weight, want_grad, &all)
    }

    fn evaluate_subset(
        &self,
        params: &ContextModelParams,
        quant: &QuantSpec,
        weight: f64,
        want_grad: bool,
        level2_subset: &[usize],
    ) -> Result<Evaluation> {
        self.check(params)?;
        let mut grad = if want_grad { Some(ContextModelParams::zeros(params.shape, params.sigma_min)?) } else { None };
        let mut total = self.level1_pass(params, quant, weight, grad.as_mut())?;
        let prelim = self.context_for(params, quant)?;
        let chunks: Vec<&[usize]> = level2_subset.chunks(CHUNK).collect();
        let run = |idx: &&[usize]| self.level2_chunk(params, &prelim, quant, weight, want_grad, idx);
        #[cfg(feature = "parallel")]
        let outs: Vec<Result<Partial>> = {
            use rayon::prelude::*;
            chunks.par_iter().map(run).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let outs: Vec<Result<Partial>> = chunks.iter().map(run).collect();
        let mut flat = grad.map(|g| g.to_flat());
        for out in outs {
            let out = out?;
            total.rate += out.rate;
            total.distortion += out.distortion;
            total.surrogate += out.surrogate;
            if let (Some(f), Some(g)) = (flat.as_mut(), out.grad) {
                for (a, b) in f.iter_mut().zip(g.to_flat()) {
                    *a += b;
                }
            }
        }
        let eval = Evaluation { rate: total.rate, distortion: total.distortion, surrogate: total.surrogate, gradient: flat };
        if !eval.is_finite() {
            return Err(Error::NonFinite("rate evaluation"));
        }
        Ok(eval)
    }

    /// Surrogate objective and its gradient; the quantity the optimizer
    /// descends.
    pub fn surrogate_objective(
        &self,
        params: &ContextModelParams,
        quant: &QuantSpec,
        distortion_weight: f64,
    ) -> Result<(f64, Vec<f64>)> {
        let e = self.evaluate(params, quant, distortion_weight, true)?;
        Ok((e.surrogate + e.distortion, e.gradient.unwrap_or_default()))
    }

    fn level1_pass(
        &self,
        params: &ContextModelParams,
        quant: &QuantSpec,
        weight: f64,
        mut grad: Option<&mut ContextModelParams>,
    ) -> Result<Partial> {
        let ep = params.level1.entropy_params(params.sigma_min);
        let models = channel_models(&ep, quant, self.channels)?;
        let mut out = Partial::default();
        for (c, model) in models.iter().enumerate() {
            let base = quant.base_step(AttributeKind::of_channel(c, self.channels));
            let adj = ep.delta_adj[c];
            for x in &self.level1_values {
                let s = symbol_terms(x[c], model, base, quant.adaptive, weight, grad.is_some());
                out.add(&s);
                if let Some(g) = grad.as_deref_mut() {
                    g.level1.mu[c] += s.d_mu;
                    g.level1.raw_sigma[c] += s.d_sigma * sigmoid(params.level1.raw_sigma[c]);
                    if quant.adaptive {
                        g.level1.delta_adj[c] += s.d_step * step_slope(base, adj);
                    }
                }
            }
        }
        Ok(out)
    }

    fn level2_chunk(
        &self,
        params: &ContextModelParams,
        prelim: &PreliminaryContext,
        quant: &QuantSpec,
        weight: f64,
        want_grad: bool,
        indices: &[usize],
    ) -> Result<Partial> {
        let m = self.coded_width();
        let ce = params.table.channels();
        let mut out = Partial::default();
        let mut g = if want_grad { Some(ContextModelParams::zeros(params.shape, params.sigma_min)?) } else { None };
        for &i in indices {
            let tr = params.level2_traced(i, prelim, &self.level2.graph, self.level2.neighborhood_scale)?;
            let models = channel_models(&tr.params, quant, self.channels)?;
            let x = &self.level2_values[i];
            let mut d_out = vec![0.0; 3 * m];
            for (c, model) in models.iter().enumerate() {
                let base = quant.base_step(AttributeKind::of_channel(c, self.channels));
                let s = symbol_terms(x[c], model, base, quant.adaptive, weight, want_grad);
                out.add(&s);
                if let Some(g) = g.as_mut() {
                    d_out[c] = s.d_mu;
                    d_out[m + c] = s.d_sigma * sigmoid(tr.head.output()[m + c]);
                    if quant.adaptive {
                        d_out[2 * m + c] = s.d_step * step_slope(base, tr.params.delta_adj[c]);
                    }
                    g.gate[c] += s.d_mu * tr.inherited[c];
                }
            }
            let Some(g) = g.as_mut() else { continue };
            let d_in = params.head.backward(&tr.head, &d_out, &mut g.head, true).unwrap_or_default();
            let d_f = &d_in[..ce];
            for nb in &tr.neighbors {
                let table = g.table.values_mut();
                for &(node, wt) in &nb.corners {
                    let row = &mut table[node * ce..(node + 1) * ce];
                    for ((t, df), e) in row.iter_mut().zip(d_f).zip(&nb.embed) {
                        *t += wt * df * e;
                    }
                }
                let d_e: Vec<f64> = d_f.iter().zip(&nb.weight).map(|(a, b)| a * b).collect();
                params.phi.backward(&nb.phi, &d_e, &mut g.phi, false);
            }
        }
        out.grad = g;
        Ok(out)
    }
}

fn symbols_for(x: &[f64], models: &[SymbolModel], strict: bool) -> Result<Vec<i64>> {
    x.iter()
        .zip(models)
        .map(|(&v, m)| {
            if strict {
                super::quantize_bounded(v, m.step(), m.bound())
            } else {
                Ok(quantize_clamped(v, m.step(), m.bound()))
            }
        })
        .collect()
}

/// Decoded anchor from its symbols.
pub(crate) fn reconstruct(position: [f32; 3], q: &[i64], models: &[SymbolModel], channels: usize, offsets: usize) -> Anchor {
    let values: Vec<f64> = q.iter().zip(models).map(|(&q, m)| super::dequantize(q, m.step())).collect();
    Anchor::from_coded(position, &values, channels, offsets)
}

/// `d step / d adj` for the adaptive step, zero where the floor holds.
fn step_slope(base: f64, adj: f64) -> f64 {
    let t = tanh(adj);
    if base * (1.0 + t) < MIN_STEP_FRACTION * base {
        0.0
    } else {
        base * (1.0 - t * t)
    }
}

#[derive(Debug, Default)]
struct Partial {
    rate: f64,
    distortion: f64,
    surrogate: f64,
    grad: Option<ContextModelParams>,
}

impl Partial {
    fn add(&mut self, s: &SymbolTerms) {
        self.rate += s.bits;
        self.distortion += s.distortion;
        self.surrogate += s.surrogate;
    }
}

#[derive(Debug, Default)]
struct SymbolTerms {
    bits: f64,
    distortion: f64,
    surrogate: f64,
    d_mu: f64,
    d_sigma: f64,
    d_step: f64,
}

fn symbol_terms(x: f64, model: &SymbolModel, base: f64, adaptive: bool, weight: f64, want_grad: bool) -> SymbolTerms {
    let step = model.step();
    let q = quantize_clamped(x, step, model.bound());
    let mut t = SymbolTerms { bits: model.bits(q), ..Default::default() };
    let r = x - q as f64 * step;
    if adaptive {
        t.distortion = weight * r * r / (base * base);
    }
    if !want_grad {
        return t;
    }
    let (mu, sigma) = (model.mu(), model.scale());
    let (qa, qb) = (q as f64 - 0.5, q as f64 + 0.5);
    let zl = (qa * step - mu) / sigma;
    let zu = (qb * step - mu) / sigma;
    let g = normal_interval(zl, zu);
    t.surrogate = -log2(g + SURROGATE_FLOOR);
    let d_g = -1.0 / ((g + SURROGATE_FLOOR) * core::f64::consts::LN_2);
    let (pl, pu) = (normal_pdf(zl), normal_pdf(zu));
    t.d_mu = d_g * (pl - pu) / sigma;
    t.d_sigma = d_g * (pl * zl - pu * zu) / sigma;
    t.d_step = d_g * (pu * qb - pl * qa) / sigma;
    if adaptive {
        t.d_step += -2.0 * weight * r * q as f64 / (base * base);
    }
    t
}

/// Per-channel Gaussian matched to the mean and standard deviation of
/// `rows`; the context-free reference model.
pub fn moment_matched(rows: &[Vec<f64>], width: usize, sigma_min: f64) -> LevelOnePrior {
    let mut prior = LevelOnePrior::zeros(width);
    let n = rows.len() as f64;
    for c in 0..width {
        let (mean, var) = if rows.is_empty() {
            (0.0, 1.0)
        } else {
            let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n;
            (mean, rows.iter().map(|r| (r[c] - mean) * (r[c] - mean)).sum::<f64>() / n)
        };
        prior.mu[c] = mean;
        prior.raw_sigma[c] = raw_for_sigma(sqrt(var), sigma_min);
    }
    prior
}

fn raw_for_sigma(sigma: f64, sigma_min: f64) -> f64 {
    softplus_inv((sigma - sigma_min).max(1e-12))
}

/// Data-dependent initialization: moment-matched level-1 prior, and a head
/// whose output layer ignores the aggregated context and predicts each
/// level-2 channel by least-squares regression on the inherited parent value.
/// The starting point is therefore at least as good as a context-free fit up
/// to the regression; fitting then only has to learn the neighbourhood term.
pub fn warm_start(problem: &FitProblem, quant: &QuantSpec, params: &ContextModelParams) -> Result<ContextModelParams> {
    problem.check(params)?;
    let m = problem.coded_width();
    let mut p = params.clone();
    p.level1 = moment_matched(&problem.level1_values, m, p.sigma_min);
    p.gate.iter_mut().for_each(|g| *g = 0.0);
    let n = problem.level2_values.len();
    let prelim = problem.context_for(&p, quant)?;
    let Some(last) = p.head.layers.last_mut() else {
        return Ok(p);
    };
    last.weight.iter_mut().for_each(|w| *w = 0.0);
    last.bias.iter_mut().for_each(|b| *b = 0.0);
    if n == 0 {
        return Ok(p);
    }
    let nf = n as f64;
    for c in 0..m {
        let xs: Vec<f64> = problem.level2_values.iter().map(|r| r[c]).collect();
        let hs: Vec<f64> = prelim.entries.iter().map(|e| e.coded_values()[c]).collect();
        let mx = xs.iter().sum::<f64>() / nf;
        let mh = hs.iter().sum::<f64>() / nf;
        let cov = xs.iter().zip(&hs).map(|(x, h)| (x - mx) * (h - mh)).sum::<f64>() / nf;
        let vh = hs.iter().map(|h| (h - mh) * (h - mh)).sum::<f64>() / nf;
        let gate = if vh > 1e-12 { (cov / vh).clamp(-2.0, 2.0) } else { 0.0 };
        let bias = mx - gate * mh;
        let var = xs.iter().zip(&hs).map(|(x, h)| (x - bias - gate * h).powi(2)).sum::<f64>() / nf;
        p.gate[c] = gate;
        last.bias[c] = bias;
        last.bias[m + c] = raw_for_sigma(sqrt(var), p.sigma_min);
    }
    Ok(p)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// Proposed parameters and moment state after one step; the state is
    /// only committed by the caller once the step is accepted.
    fn propose(&self, x: &[f64], g: &[f64], lr: f64) -> (Vec<f64>, Adam) {
        let t = self.t + 1;
        let c1 = 1.0 - libm::pow(ADAM_BETA1, t as f64);
        let c2 = 1.0 - libm::pow(ADAM_BETA2, t as f64);
        let mut next = Adam { m: self.m.clone(), v: self.v.clone(), t };
        let mut out = x.to_vec();
        for i in 0..x.len() {
            next.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g[i];
            next.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            out[i] -= lr * (next.m[i] / c1) / (sqrt(next.v[i] / c2) + ADAM_EPS);
        }
        (out, next)
    }
}

/// Minimizes the estimated rate (plus weighted distortion when steps are
/// adaptive) of `problem` over the model parameters with Adam.
///
/// The returned parameters are the best recorded iterate whose estimated
/// rate does not exceed the initialization's, so the result is never worse
/// than `init`. With zero iterations `init` is returned unchanged.
pub fn fit_context_model(problem: &FitProblem, init: &ContextModelParams, settings: &FitSettings) -> Result<FitResult> {
    settings.quant.validate()?;
    problem.check(init)?;
    if !(settings.learning_rate > 0.0 && settings.learning_rate.is_finite()) {
        return Err(Error::invalid("learning rate must be positive and finite"));
    }
    if settings.batch_size == Some(0) {
        return Err(Error::invalid("batch size must be positive"));
    }
    let quant = &settings.quant;
    let weight = settings.weight();
    let n2 = problem.level2_values.len();
    let batched = settings.batch_size.filter(|&b| b < n2);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);

    let mut scratch = init.clone();
    let mut eval_at = |flat: &[f64], rng: &mut ChaCha8Rng| -> Result<(Evaluation, Vec<f64>)> {
        scratch.load_flat(flat)?;
        let rounded = scratch.rounded_to_f32();
        match batched {
            None => {
                let e = problem.evaluate(&rounded, quant, weight, true)?;
                let g = e.gradient.clone().unwrap_or_default();
                Ok((e, g))
            }
            Some(b) => {
                let subset = sample_subset(rng, n2, b);
                let g = problem.evaluate_subset(&rounded, quant, weight, true, &subset)?.gradient.unwrap_or_default();
                Ok((problem.evaluate(&rounded, quant, weight, false)?, g))
            }
        }
    };

    let mut x = init.to_flat();
    let (e0, mut grad) = eval_at(&x, &mut rng).map_err(|e| match e.root() {
        Error::NonFinite(_) => Error::NonFinite("initial parameters"),
        _ => e,
    })?;
    let mut trace = vec![e0.rate];
    let mut objective_trace = vec![e0.objective()];
    let mut best = (0usize, e0.objective(), x.clone());
    let mut adam = Adam::new(x.len());
    let mut lr = settings.learning_rate;

    for it in 1..=settings.iterations {
        let mut retries = 0;
        loop {
            let (candidate, next) = adam.propose(&x, &grad, lr);
            let attempt = if candidate.iter().all(|v| v.is_finite()) {
                match eval_at(&candidate, &mut rng) {
                    Ok(r) => Some(r),
                    Err(e) if matches!(e.root(), Error::NonFinite(_)) => None,
                    Err(e) => return Err(e),
                }
            } else {
                None
            };
            if let Some((e, g)) = attempt {
                x = candidate;
                adam = next;
                grad = g;
                trace.push(e.rate);
                objective_trace.push(e.objective());
                if e.rate <= trace[0] && e.objective() < best.1 {
                    best = (it, e.objective(), x.clone());
                }
                break;
            }
            retries += 1;
            lr *= 0.5;
            if retries > MAX_RETRIES {
                return Err(Error::NonFinite("fitting diverged"));
            }
        }
    }

    let params = if best.0 == 0 {
        init.clone()
    } else {
        let mut p = init.clone();
        p.load_flat(&best.2)?;
        p.rounded_to_f32()
    };
    Ok(FitResult { params, trace, objective_trace, best_iteration: best.0, final_learning_rate: lr })
}

fn sample_subset(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + (rng.next_u64() % (n - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx.sort_unstable();
    idx
}
