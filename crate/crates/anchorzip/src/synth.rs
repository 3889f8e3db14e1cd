//! Synthetic anchor clouds.
//!
//! Positions are uniform in a box (or scattered around cluster centers).
//! Features come from one of three models: independent Gaussians, a smooth
//! random field sampled with random Fourier features, or per-cluster means.

use std::f64::consts::TAU;

use anchorzip_core::math::Vec3;
use anchorzip_core::spatial::build_graph;
use anchorzip_core::{Anchor, AnchorCloud, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

/// Cosine terms per smooth-field channel.
const FOURIER_TERMS: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureModel {
    IidGaussian,
    /// Unit-variance field with squared-exponential correlation
    /// `exp(-d^2 / (2 l^2))`, plus independent noise of std `noise`.
    SmoothField { length_scale: f64, noise: f64 },
    /// Anchors scattered around `clusters` centers with position std
    /// `spread`; features are the cluster mean plus small noise.
    Clustered { clusters: usize, spread: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub count: usize,
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
    pub features: FeatureModel,
    pub channels: usize,
    pub offsets: usize,
    /// Defaults to a size that puts a few anchors in each coarse voxel.
    pub base_voxel_size: Option<f32>,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(count: usize, features: FeatureModel, seed: u64) -> Self {
        Self {
            count,
            bbox_min: [0.0; 3],
            bbox_max: [1.0; 3],
            features,
            channels: 16,
            offsets: 4,
            base_voxel_size: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if (0..3).any(|a| !(self.bbox_max[a] > self.bbox_min[a]) || !(self.bbox_max[a] - self.bbox_min[a]).is_finite()) {
            return Err(Error::InvalidParam("bounding box must have positive finite extent".into()));
        }
        match self.features {
            FeatureModel::SmoothField { length_scale, noise } => {
                if !(length_scale > 0.0 && length_scale.is_finite()) {
                    return Err(Error::InvalidParam("length scale must be positive".into()));
                }
                if !(noise >= 0.0 && noise.is_finite()) {
                    return Err(Error::InvalidParam("noise must be non-negative".into()));
                }
            }
            FeatureModel::Clustered { clusters, spread } => {
                if clusters == 0 {
                    return Err(Error::InvalidParam("cluster count must be positive".into()));
                }
                if !(spread > 0.0 && spread.is_finite()) {
                    return Err(Error::InvalidParam("cluster spread must be positive".into()));
                }
            }
            FeatureModel::IidGaussian => {}
        }
        if let Some(v) = self.base_voxel_size {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParam("base voxel size must be positive".into()));
            }
        }
        Ok(())
    }

    fn extent(&self) -> f64 {
        (0..3).map(|a| self.bbox_max[a] - self.bbox_min[a]).fold(0.0, f64::max)
    }

    /// `extent / n^(1/3) / 1.5`: about 3.4 anchors per fine voxel side, so
    /// a coarse voxel of scale 4 holds many level-2 anchors.
    pub fn voxel_size(&self) -> f32 {
        self.base_voxel_size.unwrap_or_else(|| {
            let n = self.count.max(1) as f64;
            (self.extent() / n.cbrt() / 1.5) as f32
        })
    }
}

/// Random Fourier features for one scalar field.
struct Field {
    freqs: Vec<Vec3>,
    phases: Vec<f64>,
}

impl Field {
    fn new(rng: &mut ChaCha8Rng, length_scale: f64) -> Self {
        let normal = Normal::new(0.0, 1.0 / length_scale).expect("positive length scale");
        let freqs = (0..FOURIER_TERMS).map(|_| [normal.sample(rng), normal.sample(rng), normal.sample(rng)]).collect();
        let phases = (0..FOURIER_TERMS).map(|_| rng.random::<f64>() * TAU).collect();
        Self { freqs, phases }
    }

    fn at(&self, p: Vec3) -> f64 {
        let amp = (2.0 / FOURIER_TERMS as f64).sqrt();
        self.freqs
            .iter()
            .zip(&self.phases)
            .map(|(w, ph)| amp * (w[0] * p[0] + w[1] * p[1] + w[2] * p[2] + ph).cos())
            .sum()
    }
}

pub fn generate(spec: &SynthSpec) -> Result<AnchorCloud, Error> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let eps = spec.voxel_size();
    let (c, k) = (spec.channels, spec.offsets);
    let extent = spec.extent();
    let uniform_point = |rng: &mut ChaCha8Rng| -> Vec3 {
        std::array::from_fn(|a| spec.bbox_min[a] + rng.random::<f64>() * (spec.bbox_max[a] - spec.bbox_min[a]))
    };
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let log_scale0 = (2.0 * eps as f64).ln();
    let offset_std = 2.0 * eps as f64;

    let mut anchors = Vec::with_capacity(spec.count);
    match spec.features {
        FeatureModel::IidGaussian => {
            for _ in 0..spec.count {
                let p = uniform_point(&mut rng);
                let feature = (0..c).map(|_| gauss(&mut rng) as f32).collect();
                let scaling = std::array::from_fn(|_| (log_scale0 + 0.3 * gauss(&mut rng)).exp() as f32);
                let offsets = (0..k).map(|_| std::array::from_fn(|_| (offset_std * gauss(&mut rng)) as f32)).collect();
                anchors.push(finish(p, feature, scaling, offsets, rng.random()));
            }
        }
        FeatureModel::SmoothField { length_scale, noise } => {
            let fields: Vec<Field> = (0..c + 3 + 3 * k).map(|_| Field::new(&mut rng, length_scale * extent)).collect();
            for _ in 0..spec.count {
                let p = uniform_point(&mut rng);
                let mut v = fields.iter().map(|f| f.at(p) + noise * gauss(&mut rng));
                let feature = (0..c).map(|_| v.next().unwrap_or(0.0) as f32).collect();
                let scaling = std::array::from_fn(|_| (log_scale0 + 0.3 * v.next().unwrap_or(0.0)).exp() as f32);
                let offsets = (0..k)
                    .map(|_| std::array::from_fn(|_| (offset_std * v.next().unwrap_or(0.0)) as f32))
                    .collect();
                anchors.push(finish(p, feature, scaling, offsets, rng.random()));
            }
        }
        FeatureModel::Clustered { clusters, spread } => {
            let centers: Vec<Vec3> = (0..clusters).map(|_| uniform_point(&mut rng)).collect();
            let means: Vec<Vec<f64>> = (0..clusters).map(|_| (0..c).map(|_| gauss(&mut rng)).collect()).collect();
            let log_means: Vec<f64> = (0..clusters).map(|_| log_scale0 + 0.3 * gauss(&mut rng)).collect();
            for _ in 0..spec.count {
                let j = rng.random_range(0..clusters);
                let p: Vec3 = std::array::from_fn(|a| centers[j][a] + spread * extent * gauss(&mut rng));
                let feature = means[j].iter().map(|m| (m + 0.1 * gauss(&mut rng)) as f32).collect();
                let scaling = std::array::from_fn(|_| (log_means[j] + 0.05 * gauss(&mut rng)).exp() as f32);
                let offsets = (0..k).map(|_| std::array::from_fn(|_| (offset_std * gauss(&mut rng)) as f32)).collect();
                anchors.push(finish(p, feature, scaling, offsets, rng.random()));
            }
        }
    }
    AnchorCloud::new(anchors, eps, c, k)
}

fn finish(p: Vec3, feature: Vec<f32>, scaling: [f32; 3], offsets: Vec<[f32; 3]>, opacity: f32) -> Anchor {
    Anchor { position: p.map(|v| v as f32), feature, scaling, offsets, mean_opacity: opacity }
}

/// Mean over channels of the Pearson correlation between each anchor's
/// feature and its k nearest neighbours' features, over all graph edges.
pub fn neighbor_correlation(cloud: &AnchorCloud, k: usize) -> Result<f64, Error> {
    let graph = build_graph(&cloud.positions(), k, None)?;
    let c = cloud.channel_count();
    if c == 0 || graph.edge_count() == 0 {
        return Ok(0.0);
    }
    let anchors = cloud.anchors();
    let mut total = 0.0;
    for ch in 0..c {
        let pairs = graph
            .lists()
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().map(move |&j| (i, j as usize)))
            .map(|(i, j)| (anchors[i].feature[ch] as f64, anchors[j].feature[ch] as f64));
        let (mut n, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for (x, y) in pairs {
            n += 1.0;
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
        }
        let cov = sxy / n - sx * sy / (n * n);
        let vx = sxx / n - sx * sx / (n * n);
        let vy = syy / n - sy * sy / (n * n);
        if vx > 0.0 && vy > 0.0 {
            total += cov / (vx * vy).sqrt();
        }
    }
    Ok(total / c as f64)
}
