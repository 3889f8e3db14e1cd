//! Two-level anchor hierarchy.
//!
//! Positions are bucketed on a coarse grid of cell size
//! `voxel_scale * base_voxel_size`. The lowest-index anchor of every occupied
//! coarse cell forms level 1; all other anchors form level 2 and inherit
//! their cell's level-1 anchor as parent.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{floor, Vec3};
use crate::types::AnchorCloud;

pub const DEFAULT_VOXEL_SCALE: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    /// Level-1 anchor indices, ascending.
    pub level1: Vec<usize>,
    /// Level-2 anchor indices, ascending.
    pub level2: Vec<usize>,
    /// Parent (an anchor index in `level1`) of each entry of `level2`.
    pub parent_of: Vec<usize>,
    pub coarse_voxel_size: f64,
    pub voxel_scale: f64,
}

impl Hierarchy {
    pub fn anchor_count(&self) -> usize {
        self.level1.len() + self.level2.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for list in [&self.level1, &self.level2, &self.parent_of] {
            out.extend_from_slice(&(list.len() as u32).to_le_bytes());
            for &i in list.iter() {
                out.extend_from_slice(&(i as u32).to_le_bytes());
            }
        }
        out.extend_from_slice(&self.coarse_voxel_size.to_le_bytes());
        out
    }
}

/// Coarse cell of a position; floors toward negative infinity.
pub fn coarse_cell(p: Vec3, coarse_voxel_size: f64) -> [i64; 3] {
    [
        floor(p[0] / coarse_voxel_size) as i64,
        floor(p[1] / coarse_voxel_size) as i64,
        floor(p[2] / coarse_voxel_size) as i64,
    ]
}

pub fn partition(cloud: &AnchorCloud, voxel_scale: f64) -> Result<Hierarchy> {
    partition_positions(&cloud.positions(), cloud.base_voxel_size() as f64, voxel_scale)
}

pub fn partition_positions(positions: &[Vec3], base_voxel_size: f64, voxel_scale: f64) -> Result<Hierarchy> {
    if !(voxel_scale > 1.0) || !voxel_scale.is_finite() {
        return Err(Error::invalid("voxel_scale must be finite and greater than 1"));
    }
    if positions.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let coarse = voxel_scale * base_voxel_size;
    let mut owner: BTreeMap<[i64; 3], usize> = BTreeMap::new();
    let cells: Vec<[i64; 3]> = positions.iter().map(|&p| coarse_cell(p, coarse)).collect();
    for (i, cell) in cells.iter().enumerate() {
        // Ascending scan: the first index seen in a cell is its minimum.
        owner.entry(*cell).or_insert(i);
    }
    let mut level1 = Vec::new();
    let mut level2 = Vec::new();
    let mut parent_of = Vec::new();
    for (i, cell) in cells.iter().enumerate() {
        let parent = owner[cell];
        if parent == i {
            level1.push(i);
        } else {
            level2.push(i);
            parent_of.push(parent);
        }
    }
    Ok(Hierarchy { level1, level2, parent_of, coarse_voxel_size: coarse, voxel_scale })
}

/// Attributes inherited by one level-2 anchor from its parent.
#[derive(Debug, Clone, PartialEq)]
pub struct InheritedEntry {
    /// The level-2 anchor's own (decoded) position.
    pub position: Vec3,
    pub parent: usize,
    pub feature: Vec<f64>,
    /// Parent scaling, in the log domain the codec quantizes in.
    pub log_scaling: [f64; 3],
    /// Parent offsets, row-major.
    pub offsets: Vec<f64>,
}

impl InheritedEntry {
    /// Parent attributes laid out like [`crate::types::Anchor::coded_values`].
    pub fn coded_values(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.feature.len() + 3 + self.offsets.len());
        v.extend_from_slice(&self.feature);
        v.extend_from_slice(&self.log_scaling);
        v.extend_from_slice(&self.offsets);
        v
    }
}

/// Per level-2 anchor: its position plus its parent's decoded attributes,
/// in `hierarchy.level2` order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PreliminaryContext {
    pub entries: Vec<InheritedEntry>,
}

impl PreliminaryContext {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.entries.iter().map(|e| e.position).collect()
    }
}

/// Builds the preliminary context.
///
/// `level1_attrs(i)` must return the decoded anchor at cloud index `i` (a
/// level-1 anchor); `level2_positions` holds decoded positions in
/// `hierarchy.level2` order.
pub fn preliminary_context<'a, F>(
    hierarchy: &Hierarchy,
    level1_attrs: F,
    level2_positions: &[Vec3],
) -> Result<PreliminaryContext>
where
    F: Fn(usize) -> Option<&'a crate::types::Anchor>,
{
    if level2_positions.len() != hierarchy.level2.len() {
        return Err(Error::DimensionMismatch {
            what: "level-2 positions",
            expected: hierarchy.level2.len(),
            found: level2_positions.len(),
        });
    }
    let entries = hierarchy
        .level2
        .iter()
        .zip(&hierarchy.parent_of)
        .zip(level2_positions)
        .map(|((&j, &parent), &position)| {
            let a = level1_attrs(parent).ok_or(Error::MissingParent(j))?;
            Ok(InheritedEntry {
                position,
                parent,
                feature: a.feature.iter().map(|&v| v as f64).collect(),
                log_scaling: a.scaling.map(|s| crate::math::ln(s as f64)),
                offsets: a.offsets.iter().flatten().map(|&v| v as f64).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PreliminaryContext { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Anchor;
    use alloc::vec;

    fn cloud(points: &[[f32; 3]]) -> AnchorCloud {
        let anchors = points
            .iter()
            .enumerate()
            .map(|(i, &p)| Anchor {
                position: p,
                feature: vec![i as f32],
                scaling: [1.0 + i as f32; 3],
                offsets: vec![[i as f32, 0.0, 0.0]],
                mean_opacity: 1.0,
            })
            .collect();
        AnchorCloud::new(anchors, 0.1, 1, 1).unwrap()
    }

    #[test]
    fn one_voxel_makes_one_parent() {
        let c = cloud(&[[0.01, 0.01, 0.01], [0.02, 0.3, 0.1], [0.39, 0.0, 0.2]]);
        let h = partition(&c, 4.0).unwrap();
        assert_eq!(h.level1, vec![0]);
        assert_eq!(h.level2, vec![1, 2]);
        assert_eq!(h.parent_of, vec![0, 0]);
    }

    #[test]
    fn separate_voxels_have_no_level2() {
        let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let h = partition(&c, 4.0).unwrap();
        assert_eq!(h.level1, vec![0, 1, 2]);
        assert!(h.level2.is_empty());
    }

    #[test]
    fn negative_coordinates_floor_downward() {
        // -0.05 and 0.05 straddle the origin: different coarse cells.
        let c = cloud(&[[-0.05, 0.0, 0.0], [0.05, 0.0, 0.0], [-0.3, 0.0, 0.0]]);
        let h = partition(&c, 4.0).unwrap();
        assert_eq!(h.level1, vec![0, 1]);
        assert_eq!(h.parent_of, vec![0]);
    }

    #[test]
    fn rejects_bad_input() {
        let c = cloud(&[[0.0; 3]]);
        assert!(partition(&c, 1.0).is_err());
        let e = AnchorCloud::empty(0.1, 1, 1).unwrap();
        assert_eq!(partition(&e, 4.0).unwrap_err(), Error::EmptyCloud);
    }

    #[test]
    fn preliminary_context_copies_parent() {
        let c = cloud(&[[0.0, 0.0, 0.0], [0.1, 0.1, 0.1]]);
        let h = partition(&c, 4.0).unwrap();
        let pos = vec![c.anchors()[1].position_f64()];
        let ctx = preliminary_context(&h, |i| c.anchors().get(i), &pos).unwrap();
        assert_eq!(ctx.len(), 1);
        let e = &ctx.entries[0];
        assert_eq!(e.parent, 0);
        assert_eq!(e.feature, vec![0.0]);
        assert_eq!(e.log_scaling, [0.0; 3]);
        assert_eq!(e.position, pos[0]);

        let lonely = cloud(&[[0.0; 3]]);
        let h = partition(&lonely, 4.0).unwrap();
        assert!(preliminary_context(&h, |i| lonely.anchors().get(i), &[]).unwrap().is_empty());
    }

    #[test]
    fn missing_parent_is_reported() {
        let c = cloud(&[[0.0, 0.0, 0.0], [0.1, 0.1, 0.1]]);
        let h = partition(&c, 4.0).unwrap();
        let pos = vec![[0.1; 3]];
        let err = preliminary_context(&h, |_| None, &pos).unwrap_err();
        assert_eq!(err, Error::MissingParent(1));
    }
}
