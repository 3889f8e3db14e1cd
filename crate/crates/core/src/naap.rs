//! Neighborhood-aware anchor pruning.
//!
//! Each anchor's mean opacity is smoothed over its k-NN neighbourhood with
//! inverse-distance weights, blended with its own opacity into an importance
//! score, and anchors scoring below `tau` are removed. Before removal, each
//! pruned anchor's offsets, scaling and opacity are folded into its nearest
//! surviving anchor: `merged = (1 - gamma) * survivor + gamma * pruned`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};
use crate::math::{dist2, sqrt, Vec3};
use crate::spatial::{build_graph, KdTree, NeighborGraph};
use crate::types::AnchorCloud;

#[derive(Debug, Clone, PartialEq)]
pub struct PruneConfig {
    /// Blend between own opacity (0) and smoothed opacity (1).
    pub lambda_blend: f64,
    /// Anchors with importance strictly below `tau` are pruned.
    pub tau: f64,
    /// Share of the pruned anchor in a merge.
    pub gamma: f64,
    /// Stabilizer in the inverse-distance weight `1 / (d + epsilon)`.
    pub epsilon: f64,
    pub k: usize,
    pub radius: Option<f64>,
}

impl PruneConfig {
    pub fn new(tau: f64) -> Self {
        Self { lambda_blend: 0.5, tau, gamma: 0.5, epsilon: 1e-8, k: 8, radius: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_blend) {
            return Err(Error::invalid("lambda_blend must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid("gamma must lie in [0, 1]"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if !self.tau.is_finite() {
            return Err(Error::invalid("tau must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneReport {
    pub importance: Vec<f64>,
    pub smoothed_opacity: Vec<f64>,
    pub prune_mask: Vec<bool>,
    /// For every anchor, its merge target (pruned anchors only).
    pub merge_target: Vec<Option<usize>>,
    /// Old index to new index; `None` for removed anchors.
    pub survivor_map: Vec<Option<usize>>,
}

impl PruneReport {
    pub fn pruned_count(&self) -> usize {
        self.prune_mask.iter().filter(|&&m| m).count()
    }

    /// Tab-separated table, one row per input anchor.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("index\tmean_opacity_smoothed\timportance\tpruned\tmerge_target\tnew_index\n");
        for i in 0..self.importance.len() {
            let target = self.merge_target[i].map_or(String::from("-"), |t| alloc::format!("{t}"));
            let new = self.survivor_map[i].map_or(String::from("-"), |t| alloc::format!("{t}"));
            let _ = writeln!(
                s,
                "{i}\t{:.9}\t{:.9}\t{}\t{target}\t{new}",
                self.smoothed_opacity[i],
                self.importance[i],
                u8::from(self.prune_mask[i]),
            );
        }
        s
    }
}

/// Inverse-distance weight between two neighbours.
#[inline]
pub fn dist_weight(a: Vec3, b: Vec3, epsilon: f64) -> f64 {
    1.0 / (sqrt(dist2(a, b)) + epsilon)
}

/// `(ᾱ_i + Σ w_ij ᾱ_j) / (1 + Σ w_ij)` over each anchor's graph neighbours.
pub fn smoothed_opacity(cloud: &AnchorCloud, graph: &NeighborGraph, epsilon: f64) -> Result<Vec<f64>> {
    if graph.len() != cloud.len() {
        return Err(Error::DimensionMismatch {
            what: "graph size vs cloud size",
            expected: cloud.len(),
            found: graph.len(),
        });
    }
    let positions = cloud.positions();
    let alpha = cloud.mean_opacities();
    Ok(graph
        .lists()
        .iter()
        .enumerate()
        .map(|(i, list)| {
            let mut num = alpha[i];
            let mut den = 1.0;
            for &j in list {
                let j = j as usize;
                let w = dist_weight(positions[i], positions[j], epsilon);
                num += w * alpha[j];
                den += w;
            }
            num / den
        })
        .collect())
}

/// `ξ = (1 - λ) ᾱ + λ Φ`.
pub fn importance_scores(mean_opacity: &[f64], smoothed: &[f64], lambda_blend: f64) -> Result<Vec<f64>> {
    if mean_opacity.len() != smoothed.len() {
        return Err(Error::DimensionMismatch {
            what: "importance inputs",
            expected: mean_opacity.len(),
            found: smoothed.len(),
        });
    }
    if !(0.0..=1.0).contains(&lambda_blend) {
        return Err(Error::invalid("lambda_blend must lie in [0, 1]"));
    }
    Ok(mean_opacity
        .iter()
        .zip(smoothed)
        .map(|(&a, &phi)| (1.0 - lambda_blend) * a + lambda_blend * phi)
        .collect())
}

/// Scores, prunes and merges. Survivors keep their relative order, their
/// positions and their features.
pub fn prune_and_merge(cloud: &AnchorCloud, config: &PruneConfig) -> Result<(AnchorCloud, PruneReport)> {
    config.validate()?;
    let n = cloud.len();
    if n == 0 {
        let report = PruneReport {
            importance: vec![],
            smoothed_opacity: vec![],
            prune_mask: vec![],
            merge_target: vec![],
            survivor_map: vec![],
        };
        return Ok((cloud.clone(), report));
    }
    let positions = cloud.positions();
    let graph = build_graph(&positions, config.k, config.radius)?;
    let smoothed = smoothed_opacity(cloud, &graph, config.epsilon)?;
    let importance = importance_scores(&cloud.mean_opacities(), &smoothed, config.lambda_blend)?;
    let prune_mask: Vec<bool> = importance.iter().map(|&xi| xi < config.tau).collect();

    let survivors: Vec<usize> = (0..n).filter(|&i| !prune_mask[i]).collect();
    if survivors.is_empty() {
        return Err(Error::DegenerateScene);
    }
    let tree = KdTree::with_ids(&positions, survivors.clone());
    let mut merge_target = vec![None; n];
    for r in (0..n).filter(|&i| prune_mask[i]) {
        let nearest = tree.knn(positions[r], 1, None, None);
        merge_target[r] = nearest.first().map(|&(_, k)| k);
    }

    let mut anchors: Vec<_> = cloud.anchors().to_vec();
    let g = config.gamma;
    let blend = |keep: f32, take: f32| ((1.0 - g) * keep as f64 + g * take as f64) as f32;
    // Ascending pruned index; each merge sees the survivor's current values.
    for r in 0..n {
        let Some(k) = merge_target[r] else { continue };
        let src = cloud.anchors()[r].clone();
        let dst = &mut anchors[k];
        for (o, so) in dst.offsets.iter_mut().zip(&src.offsets) {
            for a in 0..3 {
                o[a] = blend(o[a], so[a]);
            }
        }
        for a in 0..3 {
            dst.scaling[a] = blend(dst.scaling[a], src.scaling[a]);
        }
        dst.mean_opacity = blend(dst.mean_opacity, src.mean_opacity);
    }

    let mut survivor_map = vec![None; n];
    for (new, &old) in survivors.iter().enumerate() {
        survivor_map[old] = Some(new);
    }
    let kept: Vec<_> = anchors
        .into_iter()
        .enumerate()
        .filter(|(i, _)| !prune_mask[*i])
        .map(|(_, a)| a)
        .collect();
    let out = AnchorCloud::new(kept, cloud.base_voxel_size(), cloud.channel_count(), cloud.offsets_count())?;
    Ok((out, PruneReport { importance, smoothed_opacity: smoothed, prune_mask, merge_target, survivor_map }))
}
