//! TOML codec profiles.
//!
//! Every key is optional; missing keys take the library defaults and unknown
//! keys are rejected.
//!
//! ```toml
//! [prune]
//! tau = 0.2
//! lambda_blend = 0.5
//! gamma = 0.5
//! epsilon = 1e-8
//!
//! [graph]
//! k = 8
//! radius = 0.5          # omit for an unbounded k-NN graph
//! neighborhood_scale = "auto"   # or a number
//!
//! [hierarchy]
//! voxel_scale = 4.0
//!
//! [quant]
//! steps = [0.05, 0.05, 0.002]   # features, log-scaling, offsets
//! adaptive = false
//!
//! [model]
//! embed = 12
//! hidden = 64
//! table_resolution = 5
//! sigma_min = 1e-4
//!
//! [fit]
//! iterations = 150
//! learning_rate = 0.01
//! batch_size = 256
//! distortion_weight = 1.0
//! ```

use std::path::Path;

use anchorzip_core::entropy::QuantSpec;
use anchorzip_core::naap::PruneConfig;
use anchorzip_core::CodecProfile;
use serde::Deserialize;

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileFile {
    pub prune: PruneSection,
    pub graph: GraphSection,
    pub hierarchy: HierarchySection,
    pub quant: QuantSection,
    pub model: ModelSection,
    pub fit: FitSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneSection {
    pub tau: Option<f64>,
    pub lambda_blend: Option<f64>,
    pub gamma: Option<f64>,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ScalePolicy {
    Auto(AutoTag),
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphSection {
    pub k: Option<usize>,
    pub radius: Option<f64>,
    pub neighborhood_scale: Option<ScalePolicy>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HierarchySection {
    pub voxel_scale: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantSection {
    pub steps: Option<[f64; 3]>,
    pub adaptive: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub embed: Option<usize>,
    pub hidden: Option<usize>,
    pub table_resolution: Option<usize>,
    pub sigma_min: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub iterations: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub distortion_weight: Option<f64>,
}

/// Resolved settings for one CLI run.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    /// `prune.tau` is only meaningful when `tau_given` is set.
    pub prune: PruneConfig,
    pub tau_given: bool,
    pub codec: CodecProfile,
}

impl Profile {
    /// Pruning settings; the threshold must come from the profile or
    /// `tau_override`.
    pub fn prune_config(&self, tau_override: Option<f64>) -> AppResult<PruneConfig> {
        let tau = match (tau_override, self.tau_given) {
            (Some(t), _) => t,
            (None, true) => self.prune.tau,
            (None, false) => return Err(AppError::Usage("pruning needs a threshold: pass --tau or set prune.tau".into())),
        };
        let cfg = PruneConfig { tau, ..self.prune.clone() };
        cfg.validate().map_err(|e| AppError::Profile(e.to_string()))?;
        Ok(cfg)
    }
}

impl Default for Profile {
    fn default() -> Self {
        ProfileFile::default().resolve().expect("defaults are valid")
    }
}

impl ProfileFile {
    pub fn parse(text: &str) -> AppResult<Self> {
        toml::from_str(text).map_err(|e| AppError::Profile(e.to_string()))
    }

    pub fn resolve(&self) -> AppResult<Profile> {
        let mut codec = CodecProfile::default();
        let g = &self.graph;
        if let Some(k) = g.k {
            codec.k = k;
        }
        codec.radius = g.radius;
        codec.neighborhood_scale = match g.neighborhood_scale {
            Some(ScalePolicy::Fixed(v)) => Some(v),
            Some(ScalePolicy::Auto(_)) | None => None,
        };
        if let Some(v) = self.hierarchy.voxel_scale {
            codec.voxel_scale = v;
        }
        let steps = self.quant.steps.unwrap_or(codec.quant.base_steps);
        codec.quant = QuantSpec { base_steps: steps, adaptive: self.quant.adaptive.unwrap_or(codec.quant.adaptive) };
        let m = &self.model;
        codec.embed = m.embed.unwrap_or(codec.embed);
        codec.hidden = m.hidden.unwrap_or(codec.hidden);
        codec.table_resolution = m.table_resolution.unwrap_or(codec.table_resolution);
        codec.sigma_min = m.sigma_min.unwrap_or(codec.sigma_min);
        let f = &self.fit;
        codec.fit_iterations = f.iterations.unwrap_or(codec.fit_iterations);
        codec.learning_rate = f.learning_rate.unwrap_or(codec.learning_rate);
        codec.batch_size = f.batch_size.or(codec.batch_size);
        codec.distortion_weight = f.distortion_weight.unwrap_or(codec.distortion_weight);
        codec.validate().map_err(|e| AppError::Profile(e.to_string()))?;

        let p = &self.prune;
        let mut prune = PruneConfig::new(p.tau.unwrap_or(0.0));
        prune.lambda_blend = p.lambda_blend.unwrap_or(prune.lambda_blend);
        prune.gamma = p.gamma.unwrap_or(prune.gamma);
        prune.epsilon = p.epsilon.unwrap_or(prune.epsilon);
        prune.k = codec.k;
        prune.radius = codec.radius;
        prune.validate().map_err(|e| AppError::Profile(e.to_string()))?;
        Ok(Profile { prune, tau_given: p.tau.is_some(), codec })
    }
}

pub fn load_profile(path: Option<&Path>) -> AppResult<Profile> {
    match path {
        None => Ok(Profile::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| AppError::io(p, e))?;
            ProfileFile::parse(&text)?.resolve()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_profile_is_default() {
        let p = ProfileFile::parse("").unwrap().resolve().unwrap();
        assert_eq!(p.codec, CodecProfile::default());
        assert!(!p.tau_given);
        assert!(matches!(p.prune_config(None), Err(AppError::Usage(_))));
        assert_eq!(p.prune_config(Some(0.25)).unwrap().tau, 0.25);
    }

    #[test]
    fn full_profile_maps_every_key() {
        let text = r#"
            [prune]
            tau = 0.3
            lambda_blend = 0.25
            gamma = 0.75
            epsilon = 1e-6
            [graph]
            k = 4
            radius = 0.5
            neighborhood_scale = 0.2
            [hierarchy]
            voxel_scale = 3.0
            [quant]
            steps = [0.1, 0.02, 0.001]
            adaptive = true
            [model]
            embed = 8
            hidden = 32
            table_resolution = 3
            sigma_min = 0.001
            [fit]
            iterations = 10
            learning_rate = 0.05
            batch_size = 64
            distortion_weight = 2.0
        "#;
        let p = ProfileFile::parse(text).unwrap().resolve().unwrap();
        assert_eq!((p.prune.tau, p.prune.lambda_blend, p.prune.gamma, p.prune.epsilon), (0.3, 0.25, 0.75, 1e-6));
        assert_eq!((p.codec.k, p.codec.radius, p.codec.neighborhood_scale), (4, Some(0.5), Some(0.2)));
        assert_eq!(p.prune.k, 4);
        assert_eq!(p.prune_config(None).unwrap().tau, 0.3);
        assert_eq!(p.codec.voxel_scale, 3.0);
        assert_eq!(p.codec.quant.base_steps, [0.1, 0.02, 0.001]);
        assert!(p.codec.quant.adaptive);
        assert_eq!((p.codec.embed, p.codec.hidden, p.codec.table_resolution), (8, 32, 3));
        assert_eq!(p.codec.fit_iterations, 10);
        assert_eq!(p.codec.batch_size, Some(64));
        let auto = ProfileFile::parse("[graph]\nneighborhood_scale = \"auto\"").unwrap().resolve().unwrap();
        assert_eq!(auto.codec.neighborhood_scale, None);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(ProfileFile::parse("[quant]\nstep = 1"), Err(AppError::Profile(_))));
        assert!(matches!(ProfileFile::parse("[nope]"), Err(AppError::Profile(_))));
        let bad = ProfileFile::parse("[quant]\nsteps = [0.0, 1.0, 1.0]").unwrap();
        assert!(matches!(bad.resolve(), Err(AppError::Profile(_))));
    }
}
