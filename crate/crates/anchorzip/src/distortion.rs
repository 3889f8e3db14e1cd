//! Attribute distortion between an original and a decoded cloud.
//!
//! Scaling is compared in the log domain, the domain it is quantized in.
//! Both clouds must list anchors in the same order; the codec emits them in
//! canonical order, so undo that with [`reorder`] first.

use anchorzip_core::entropy::AttributeKind;
use anchorzip_core::{AnchorCloud, Error};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KindDistortion {
    pub mse: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Distortion {
    pub position: KindDistortion,
    pub features: KindDistortion,
    pub scaling: KindDistortion,
    pub offsets: KindDistortion,
}

impl Distortion {
    pub fn kind(&self, kind: AttributeKind) -> KindDistortion {
        match kind {
            AttributeKind::Feature => self.features,
            AttributeKind::Scaling => self.scaling,
            AttributeKind::Offset => self.offsets,
        }
    }
}

#[derive(Default)]
struct Acc {
    sum_sq: f64,
    max_abs: f64,
    count: usize,
}

impl Acc {
    fn add(&mut self, a: f64, b: f64) {
        let d = (a - b).abs();
        self.sum_sq += d * d;
        self.max_abs = self.max_abs.max(d);
        self.count += 1;
    }

    fn finish(&self) -> KindDistortion {
        let mse = if self.count == 0 { 0.0 } else { self.sum_sq / self.count as f64 };
        KindDistortion { mse, max_abs: self.max_abs }
    }
}

pub fn attribute_distortion(original: &AnchorCloud, decoded: &AnchorCloud) -> Result<Distortion, Error> {
    let check = |what, expected, found| {
        if expected == found {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { what, expected, found })
        }
    };
    check("anchor count", original.len(), decoded.len())?;
    check("channel count", original.channel_count(), decoded.channel_count())?;
    check("offsets count", original.offsets_count(), decoded.offsets_count())?;
    let (mut pos, mut feat, mut scale, mut off) = (Acc::default(), Acc::default(), Acc::default(), Acc::default());
    for (a, b) in original.anchors().iter().zip(decoded.anchors()) {
        for (x, y) in a.position.iter().zip(&b.position) {
            pos.add(*x as f64, *y as f64);
        }
        for (x, y) in a.feature.iter().zip(&b.feature) {
            feat.add(*x as f64, *y as f64);
        }
        for (x, y) in a.scaling.iter().zip(&b.scaling) {
            scale.add((*x as f64).ln(), (*y as f64).ln());
        }
        for (x, y) in a.offsets.iter().flatten().zip(b.offsets.iter().flatten()) {
            off.add(*x as f64, *y as f64);
        }
    }
    Ok(Distortion { position: pos.finish(), features: feat.finish(), scaling: scale.finish(), offsets: off.finish() })
}

/// `original` permuted into the order the codec emitted (`order[i]` is the
/// original index of decoded anchor `i`).
pub fn reorder(original: &AnchorCloud, order: &[usize]) -> Result<AnchorCloud, Error> {
    if order.len() != original.len() {
        return Err(Error::DimensionMismatch { what: "order", expected: original.len(), found: order.len() });
    }
    let anchors = order
        .iter()
        .map(|&i| original.anchors().get(i).cloned().ok_or(Error::IndexOutOfRange { index: i, len: original.len() }))
        .collect::<Result<Vec<_>, _>>()?;
    AnchorCloud::new(anchors, original.base_voxel_size(), original.channel_count(), original.offsets_count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, FeatureModel, SynthSpec};

    fn cloud() -> AnchorCloud {
        generate(&SynthSpec::new(40, FeatureModel::IidGaussian, 4)).unwrap()
    }

    #[test]
    fn identical_clouds_have_zero_distortion() {
        let c = cloud();
        assert_eq!(attribute_distortion(&c, &c).unwrap(), Distortion::default());
    }

    #[test]
    fn single_channel_perturbation_mse() {
        let c = cloud();
        let delta = 0.125f32;
        let mut anchors = c.anchors().to_vec();
        for a in &mut anchors {
            a.feature[3] += delta;
        }
        let moved = AnchorCloud::new(anchors, c.base_voxel_size(), c.channel_count(), c.offsets_count()).unwrap();
        let d = attribute_distortion(&c, &moved).unwrap();
        // Every anchor moves one channel by delta (up to f32 rounding of the sum).
        let mut expected = 0.0;
        for (a, b) in c.anchors().iter().zip(moved.anchors()) {
            let e = b.feature[3] as f64 - a.feature[3] as f64;
            expected += e * e;
        }
        expected /= (c.len() * c.channel_count()) as f64;
        assert!((d.features.mse - expected).abs() <= 1e-12 * expected);
        let hand = (delta as f64).powi(2) / c.channel_count() as f64;
        assert!((d.features.mse - hand).abs() / hand < 1e-5);
        assert_eq!(d.scaling, KindDistortion::default());
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let c = cloud();
        let shorter = AnchorCloud::new(c.anchors()[1..].to_vec(), c.base_voxel_size(), c.channel_count(), c.offsets_count()).unwrap();
        assert!(matches!(attribute_distortion(&c, &shorter), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn reorder_permutes() {
        let c = cloud();
        let order: Vec<usize> = (0..c.len()).rev().collect();
        let r = reorder(&c, &order).unwrap();
        assert_eq!(r.anchors()[0], c.anchors()[c.len() - 1]);
    }
}
