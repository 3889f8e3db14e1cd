//! Geometry-guided convolution context model.
//!
//! For a level-2 query anchor `i` with neighbours `j` in the level-2 k-NN
//! graph:
//!
//! ```text
//! w_ij   = trilinear(T, normalize(p_j - p_i))          geometry branch
//! e_ij   = phi([f_j - f_i || p_j - p_i])               feature branch
//! f_ctx  = sum_j w_ij * e_ij                           (elementwise)
//! a_ctx  = [f_ctx || p_i || log s_parent || o_parent]
//! mu, sigma, adj = head(a_ctx)
//! ```
//!
//! `f` here are the *inherited* (parent) features, so every context depends
//! only on decoded level-1 data and decoded positions. The mean additionally
//! receives a learnable per-channel skip from the inherited attribute of the
//! same channel (`mu += gate * inherited`), since `a_ctx` carries no absolute
//! parent feature.

mod mlp;
mod table;

pub use mlp::{Activation, Dense, Mlp, MlpTrace};
pub use table::{Corners, KernelTable};

use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::entropy::LevelOnePrior;
use crate::error::{Error, Result};
use crate::hierarchy::PreliminaryContext;
use crate::math::{softplus, sqrt, sub3, Vec3};
use crate::spatial::NeighborGraph;

pub const DEFAULT_EMBED: usize = 12;
pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_TABLE_RESOLUTION: usize = 5;
pub const DEFAULT_SIGMA_MIN: f64 = 1e-4;

/// Trilinear lookup of the kernel table at a normalized offset.
pub fn trilinear_lookup(table: &KernelTable, offset_normalized: [f64; 3]) -> Result<Vec<f64>> {
    let corners = table.corners(offset_normalized)?;
    let mut out = vec![0.0; table.channels()];
    table.blend(&corners, &mut out);
    Ok(out)
}

/// Maps a relative offset into the table's unit cube:
/// `delta / (2 * scale) + 0.5`, clamped to `[0, 1]`.
pub fn normalize_offset(delta_p: Vec3, neighborhood_scale: f64) -> Result<[f64; 3]> {
    if !(neighborhood_scale > 0.0) || !neighborhood_scale.is_finite() {
        return Err(Error::invalid("neighborhood scale must be positive and finite"));
    }
    Ok(delta_p.map(|d| (d / (2.0 * neighborhood_scale) + 0.5).clamp(0.0, 1.0)))
}

/// `phi([delta_f || delta_p])`.
pub fn feature_branch(delta_f: &[f64], delta_p: Vec3, params: &Mlp) -> Result<Vec<f64>> {
    params.forward(&branch_input(delta_f, delta_p))
}

fn branch_input(delta_f: &[f64], delta_p: Vec3) -> Vec<f64> {
    let mut x = Vec::with_capacity(delta_f.len() + 3);
    x.extend_from_slice(delta_f);
    x.extend_from_slice(&delta_p);
    x
}

/// Aggregated geometry feature and the assembled head input.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextVector {
    pub geometry_feature: Vec<f64>,
    pub assembled: Vec<f64>,
}

/// Per-channel Gaussian parameters and step adjustment.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub delta_adj: Vec<f64>,
}

impl EntropyParams {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }
}

/// Neighbours of `query`, in ascending index order so the aggregation sum
/// has one fixed evaluation order.
pub fn summation_order(graph: &NeighborGraph, query: usize) -> Result<Vec<usize>> {
    let mut js: Vec<usize> = graph.neighbors(query)?.iter().map(|&j| j as usize).collect();
    js.sort_unstable();
    Ok(js)
}

pub fn aggregate_context(
    query: usize,
    prelim: &PreliminaryContext,
    graph: &NeighborGraph,
    table: &KernelTable,
    phi: &Mlp,
    neighborhood_scale: f64,
) -> Result<ContextVector> {
    Ok(aggregate_traced(query, prelim, graph, table, phi, neighborhood_scale)?.0)
}

/// Per-neighbour intermediates kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct NeighborTrace {
    pub corners: Corners,
    pub weight: Vec<f64>,
    pub embed: Vec<f64>,
    pub phi: MlpTrace,
}

fn aggregate_traced(
    query: usize,
    prelim: &PreliminaryContext,
    graph: &NeighborGraph,
    table: &KernelTable,
    phi: &Mlp,
    neighborhood_scale: f64,
) -> Result<(ContextVector, Vec<NeighborTrace>)> {
    if graph.len() != prelim.len() {
        return Err(Error::DimensionMismatch {
            what: "level-2 graph vs preliminary context",
            expected: prelim.len(),
            found: graph.len(),
        });
    }
    if phi.output_width() != table.channels() {
        return Err(Error::DimensionMismatch {
            what: "feature branch output vs kernel channels",
            expected: table.channels(),
            found: phi.output_width(),
        });
    }
    let me = prelim
        .entries
        .get(query)
        .ok_or(Error::IndexOutOfRange { index: query, len: prelim.len() })?;
    let ce = table.channels();
    let mut acc = vec![0.0; ce];
    let mut traces = Vec::new();
    for j in summation_order(graph, query)? {
        let other = &prelim.entries[j];
        let dp = sub3(other.position, me.position);
        let df: Vec<f64> = other.feature.iter().zip(&me.feature).map(|(a, b)| a - b).collect();
        let corners = table.corners(normalize_offset(dp, neighborhood_scale)?)?;
        let mut weight = vec![0.0; ce];
        table.blend(&corners, &mut weight);
        let trace = phi.forward_trace(&branch_input(&df, dp))?;
        let embed = trace.output().to_vec();
        for ((a, wi), ei) in acc.iter_mut().zip(&weight).zip(&embed) {
            *a += wi * ei;
        }
        traces.push(NeighborTrace { corners, weight, embed, phi: trace });
    }
    let mut assembled = Vec::with_capacity(ce + 6 + me.offsets.len());
    assembled.extend_from_slice(&acc);
    assembled.extend_from_slice(&me.position);
    assembled.extend_from_slice(&me.log_scaling);
    assembled.extend_from_slice(&me.offsets);
    Ok((ContextVector { geometry_feature: acc, assembled }, traces))
}

/// Splits the head output `[mu | raw sigma | adj]` into entropy parameters,
/// `sigma = softplus(raw) + sigma_min`.
pub fn entropy_head(context: &ContextVector, head: &Mlp, sigma_min: f64) -> Result<EntropyParams> {
    let out = head.forward(&context.assembled)?;
    split_head_output(&out, sigma_min)
}

fn split_head_output(out: &[f64], sigma_min: f64) -> Result<EntropyParams> {
    if out.len() % 3 != 0 {
        return Err(Error::DimensionMismatch { what: "head output", expected: out.len() / 3 * 3, found: out.len() });
    }
    let m = out.len() / 3;
    Ok(EntropyParams {
        mu: out[..m].to_vec(),
        sigma: out[m..2 * m].iter().map(|&r| softplus(r) + sigma_min).collect(),
        delta_adj: out[2 * m..].to_vec(),
    })
}

/// Neighbourhood scale used to normalize offsets: the graph radius when
/// bounded, else the 95th percentile of edge lengths (1 without edges).
pub fn neighborhood_scale(graph: &NeighborGraph, positions: &[Vec3]) -> f64 {
    if let Some(r) = graph.radius() {
        return r;
    }
    let mut d: Vec<f64> = graph
        .lists()
        .iter()
        .enumerate()
        .flat_map(|(i, l)| l.iter().map(move |&j| (i, j as usize)))
        .map(|(i, j)| sqrt(crate::math::dist2(positions[i], positions[j])))
        .filter(|&v| v > 0.0)
        .collect();
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let rank = (0.95 * d.len() as f64).ceil() as usize;
    d[rank.clamp(1, d.len()) - 1]
}

/// Architecture of a context model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub channels: usize,
    pub offsets: usize,
    pub embed: usize,
    pub phi_hidden: usize,
    pub head_hidden: usize,
    pub table_resolution: usize,
}

impl ModelShape {
    pub fn new(channels: usize, offsets: usize) -> Self {
        Self {
            channels,
            offsets,
            embed: DEFAULT_EMBED,
            phi_hidden: DEFAULT_HIDDEN,
            head_hidden: DEFAULT_HIDDEN,
            table_resolution: DEFAULT_TABLE_RESOLUTION,
        }
    }

    /// Attribute values coded per anchor.
    pub fn coded_width(&self) -> usize {
        self.channels + 3 + 3 * self.offsets
    }

    pub fn assembled_width(&self) -> usize {
        self.embed + 3 + 3 + 3 * self.offsets
    }

    /// Parameter count of a model with this shape, saturating on overflow.
    pub fn param_count(&self) -> usize {
        let m = self.coded_width();
        let layers = |w: &[usize]| w.windows(2).fold(0usize, |acc, p| acc.saturating_add(p[0].saturating_mul(p[1]).saturating_add(p[1])));
        let d = self.table_resolution;
        (4 * m)
            .saturating_add(d.saturating_mul(d).saturating_mul(d).saturating_mul(self.embed))
            .saturating_add(layers(&self.phi_widths()))
            .saturating_add(layers(&self.head_widths()))
    }

    fn phi_widths(&self) -> Vec<usize> {
        hidden_chain(self.channels + 3, self.phi_hidden, self.embed)
    }

    fn head_widths(&self) -> Vec<usize> {
        hidden_chain(self.assembled_width(), self.head_hidden, 3 * self.coded_width())
    }
}

fn hidden_chain(input: usize, hidden: usize, output: usize) -> Vec<usize> {
    if hidden == 0 {
        vec![input, output]
    } else {
        vec![input, hidden, output]
    }
}

/// Everything the decoder needs to rebuild the probability models: the
/// level-1 prior, the kernel table, both networks and the mean skip gate.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextModelParams {
    pub shape: ModelShape,
    pub sigma_min: f64,
    pub level1: LevelOnePrior,
    pub table: KernelTable,
    pub phi: Mlp,
    pub head: Mlp,
    pub gate: Vec<f64>,
}

impl ContextModelParams {
    /// All-zero parameters (also the shape used to accumulate gradients).
    pub fn zeros(shape: ModelShape, sigma_min: f64) -> Result<Self> {
        if !(sigma_min > 0.0) {
            return Err(Error::invalid("sigma_min must be positive"));
        }
        let m = shape.coded_width();
        Ok(Self {
            shape,
            sigma_min,
            level1: LevelOnePrior::zeros(m),
            table: KernelTable::zeros(shape.table_resolution, shape.embed)?,
            phi: Mlp::zeros(&shape.phi_widths(), Activation::Relu)?,
            head: Mlp::zeros(&shape.head_widths(), Activation::Relu)?,
            gate: vec![0.0; m],
        })
    }

    /// Seeded initialization: table entries uniform in `[-0.05, 0.05]`,
    /// network weights and biases uniform in `±1/sqrt(fan_in)`, unit-scale
    /// level-1 prior, zero gate.
    pub fn seeded(shape: ModelShape, sigma_min: f64, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(shape, sigma_min)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in p.table.values_mut() {
            *v = 0.05 * symmetric_unit(&mut rng);
        }
        for net in [&mut p.phi, &mut p.head] {
            for layer in &mut net.layers {
                let bound = 1.0 / sqrt(layer.inputs.max(1) as f64);
                for v in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                    *v = bound * symmetric_unit(&mut rng);
                }
            }
        }
        p.level1 = LevelOnePrior::unit(shape.coded_width(), sigma_min);
        Ok(p)
    }

    pub fn coded_width(&self) -> usize {
        self.shape.coded_width()
    }

    pub fn param_count(&self) -> usize {
        self.level1.param_count() + self.table.values().len() + self.phi.param_count() + self.head.param_count() + self.gate.len()
    }

    /// Parameters in serialization order: level-1 prior, table, phi, head,
    /// gate.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend(self.level1.params());
        v.extend_from_slice(self.table.values());
        v.extend(self.phi.params());
        v.extend(self.head.params());
        v.extend_from_slice(&self.gate);
        v
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch { what: "flat parameters", expected: self.param_count(), found: flat.len() });
        }
        let mut it = flat.iter().copied();
        for v in self.level1.params_mut() {
            *v = it.next().unwrap_or_default();
        }
        for v in self.table.values_mut() {
            *v = it.next().unwrap_or_default();
        }
        for v in self.phi.params_mut().chain(self.head.params_mut()) {
            *v = it.next().unwrap_or_default();
        }
        for v in &mut self.gate {
            *v = it.next().unwrap_or_default();
        }
        Ok(())
    }

    /// Rounds every parameter (and `sigma_min`) through `f32`, matching what
    /// the model section stores.
    pub fn rounded_to_f32(&self) -> Self {
        let mut out = self.clone();
        let flat: Vec<f64> = self.to_flat().into_iter().map(|v| v as f32 as f64).collect();
        let _ = out.load_flat(&flat);
        out.sigma_min = self.sigma_min as f32 as f64;
        out
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    /// Level-2 entropy parameters for `query` (an index into `prelim`).
    pub fn level2_params(
        &self,
        query: usize,
        prelim: &PreliminaryContext,
        graph: &NeighborGraph,
        neighborhood_scale: f64,
    ) -> Result<EntropyParams> {
        Ok(self.level2_traced(query, prelim, graph, neighborhood_scale)?.params)
    }

    pub(crate) fn level2_traced(
        &self,
        query: usize,
        prelim: &PreliminaryContext,
        graph: &NeighborGraph,
        neighborhood_scale: f64,
    ) -> Result<Level2Trace> {
        let (context, neighbors) =
            aggregate_traced(query, prelim, graph, &self.table, &self.phi, neighborhood_scale)?;
        let head = self.head.forward_trace(&context.assembled)?;
        let mut params = split_head_output(head.output(), self.sigma_min)?;
        let inherited = prelim.entries[query].coded_values();
        if inherited.len() != params.len() || self.gate.len() != params.len() {
            return Err(Error::DimensionMismatch { what: "inherited attributes", expected: params.len(), found: inherited.len() });
        }
        for ((mu, g), x) in params.mu.iter_mut().zip(&self.gate).zip(&inherited) {
            *mu += g * x;
        }
        Ok(Level2Trace { params, neighbors, head, inherited })
    }
}

/// Forward intermediates of one level-2 prediction.
#[derive(Debug, Clone)]
pub(crate) struct Level2Trace {
    pub params: EntropyParams,
    pub neighbors: Vec<NeighborTrace>,
    pub head: MlpTrace,
    pub inherited: Vec<f64>,
}

fn symmetric_unit(rng: &mut ChaCha8Rng) -> f64 {
    // 53 random bits mapped to [-1, 1).
    let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    2.0 * u - 1.0
}

#[cfg(test)]
mod tests;
