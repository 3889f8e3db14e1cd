//! Anchor data model.
//!
//! An anchor is identified by its position in [`AnchorCloud::anchors`];
//! every cross-reference in the crate (graphs, hierarchy, merge targets) is an
//! index into that list. All reals are stored as `f32`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{widen3, Vec3};

/// Default feature width.
pub const DEFAULT_CHANNELS: usize = 50;
/// Default number of child offsets per anchor.
pub const DEFAULT_OFFSETS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub position: [f32; 3],
    pub feature: Vec<f32>,
    /// Strictly positive per-axis scale.
    pub scaling: [f32; 3],
    /// `offsets_count` rows of xyz child offsets.
    pub offsets: Vec<[f32; 3]>,
    /// Accumulated average opacity in `[0, 1]`. Consumed by pruning; the
    /// codec does not transmit it.
    pub mean_opacity: f32,
}

impl Anchor {
    /// Number of attribute values the codec quantizes for this anchor.
    pub fn coded_len(&self) -> usize {
        self.feature.len() + 3 + 3 * self.offsets.len()
    }

    /// Attributes in coding order and coding domain: features, log-scaling,
    /// then offsets row by row.
    pub fn coded_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.coded_len());
        out.extend(self.feature.iter().map(|&v| v as f64));
        out.extend(self.scaling.iter().map(|&v| crate::math::ln(v as f64)));
        for row in &self.offsets {
            out.extend(row.iter().map(|&v| v as f64));
        }
        out
    }

    /// Inverse of [`Anchor::coded_values`], rounding to `f32`. Scaling is
    /// exponentiated and kept inside the positive `f32` range. The opacity
    /// is not coded and comes back as 1.
    pub fn from_coded(position: [f32; 3], coded: &[f64], channels: usize, offsets: usize) -> Self {
        debug_assert_eq!(coded.len(), channels + 3 + 3 * offsets);
        let scale = |v: f64| (crate::math::exp(v) as f32).clamp(f32::MIN_POSITIVE, f32::MAX);
        let o = &coded[channels + 3..];
        Anchor {
            position,
            feature: coded[..channels].iter().map(|&v| v as f32).collect(),
            scaling: [scale(coded[channels]), scale(coded[channels + 1]), scale(coded[channels + 2])],
            offsets: (0..offsets).map(|r| [o[3 * r] as f32, o[3 * r + 1] as f32, o[3 * r + 2] as f32]).collect(),
            mean_opacity: 1.0,
        }
    }

    pub fn position_f64(&self) -> Vec3 {
        widen3(self.position)
    }
}

/// An ordered, validated collection of anchors plus scene metadata.
///
/// Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorCloud {
    anchors: Vec<Anchor>,
    base_voxel_size: f32,
    channel_count: usize,
    offsets_count: usize,
}

impl AnchorCloud {
    pub fn new(
        anchors: Vec<Anchor>,
        base_voxel_size: f32,
        channel_count: usize,
        offsets_count: usize,
    ) -> Result<Self> {
        if !(base_voxel_size > 0.0 && base_voxel_size.is_finite()) {
            return Err(Error::invalid(format!(
                "base voxel size must be positive and finite, got {base_voxel_size}"
            )));
        }
        for (i, a) in anchors.iter().enumerate() {
            validate_anchor(i, a, channel_count, offsets_count)?;
        }
        Ok(Self { anchors, base_voxel_size, channel_count, offsets_count })
    }

    pub fn empty(base_voxel_size: f32, channel_count: usize, offsets_count: usize) -> Result<Self> {
        Self::new(Vec::new(), base_voxel_size, channel_count, offsets_count)
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn into_anchors(self) -> Vec<Anchor> {
        self.anchors
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn base_voxel_size(&self) -> f32 {
        self.base_voxel_size
    }

    pub fn channel_count(&self) -> usize {
        self.channel_count
    }

    pub fn offsets_count(&self) -> usize {
        self.offsets_count
    }

    /// `C + 3 + 3 * K_off`.
    pub fn coded_width(&self) -> usize {
        self.channel_count + 3 + 3 * self.offsets_count
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.anchors.iter().map(Anchor::position_f64).collect()
    }

    pub fn mean_opacities(&self) -> Vec<f64> {
        self.anchors.iter().map(|a| a.mean_opacity as f64).collect()
    }
}

fn validate_anchor(i: usize, a: &Anchor, channels: usize, offsets: usize) -> Result<()> {
    let fail = |field: &'static str, reason: alloc::string::String| Error::Validation {
        anchor: i,
        field,
        reason,
    };
    if a.position.iter().any(|v| !v.is_finite()) {
        return Err(fail("position", "non-finite coordinate".into()));
    }
    if a.feature.len() != channels {
        return Err(fail(
            "feature",
            format!("expected {channels} channels, found {}", a.feature.len()),
        ));
    }
    if a.feature.iter().any(|v| !v.is_finite()) {
        return Err(fail("feature", "non-finite value".into()));
    }
    if let Some(s) = a.scaling.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(fail("scaling", format!("components must be positive and finite, got {s}")));
    }
    if a.offsets.len() != offsets {
        return Err(fail(
            "offsets",
            format!("expected {offsets} rows, found {}", a.offsets.len()),
        ));
    }
    if a.offsets.iter().flatten().any(|v| !v.is_finite()) {
        return Err(fail("offsets", "non-finite value".into()));
    }
    if !(0.0..=1.0).contains(&a.mean_opacity) {
        return Err(fail("mean_opacity", format!("must lie in [0, 1], got {}", a.mean_opacity)));
    }
    Ok(())
}
