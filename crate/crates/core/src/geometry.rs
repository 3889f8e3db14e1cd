//! Lossless position coding.
//!
//! Positions are snapped to the base voxel grid, shifted so the smallest
//! voxel index per axis is zero, put in Morton order, and coded as per-axis
//! deltas under an adaptive discretized Laplace model.

use alloc::vec::Vec;

use crate::entropy::{ModelDigest, RangeDecoder, RangeEncoder, SymbolModel};
use crate::error::{Error, Result};
use crate::math::{round, Vec3};

/// Voxel indices (after the per-axis shift) stay below `2^21`, so three of
/// them interleave into one 63-bit Morton key.
pub const VOXEL_BITS: u32 = 21;
pub const VOXEL_LIMIT: i64 = 1 << VOXEL_BITS;
const MIN_LAPLACE_SCALE: f64 = 0.05;

/// Spreads the low 21 bits of `v` to every third bit.
fn spread(v: u64) -> u64 {
    let mut x = v & 0x1f_ffff;
    x = (x | x << 32) & 0x1f00000000ffff;
    x = (x | x << 16) & 0x1f0000ff0000ff;
    x = (x | x << 8) & 0x100f00f00f00f00f;
    x = (x | x << 4) & 0x10c30c30c30c30c3;
    x = (x | x << 2) & 0x1249249249249249;
    x
}

pub fn morton_key(v: [u32; 3]) -> u64 {
    spread(v[0] as u64) | spread(v[1] as u64) << 1 | spread(v[2] as u64) << 2
}

/// Positions on the voxel grid: per-axis origin plus non-negative offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelGrid {
    pub origin: [i32; 3],
    pub voxels: Vec<[u32; 3]>,
}

impl VoxelGrid {
    /// Snaps `positions` to multiples of `voxel_size` (ties away from zero).
    pub fn quantize(positions: &[Vec3], voxel_size: f64) -> Result<Self> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::invalid("voxel size must be positive and finite"));
        }
        let mut raw = Vec::with_capacity(positions.len());
        for p in positions {
            let mut v = [0i64; 3];
            for a in 0..3 {
                let r = round(p[a] / voxel_size);
                if !r.is_finite() || r.abs() > i32::MAX as f64 {
                    return Err(Error::Overflow { value: r.clamp(i64::MIN as f64, i64::MAX as f64) as i64, bound: i32::MAX as i64 });
                }
                v[a] = r as i64;
            }
            raw.push(v);
        }
        let mut origin = [0i64; 3];
        for a in 0..3 {
            origin[a] = raw.iter().map(|v| v[a]).min().unwrap_or(0);
        }
        let mut voxels = Vec::with_capacity(raw.len());
        for v in raw {
            let mut out = [0u32; 3];
            for a in 0..3 {
                let rel = v[a] - origin[a];
                if rel >= VOXEL_LIMIT {
                    return Err(Error::Overflow { value: rel, bound: VOXEL_LIMIT - 1 });
                }
                out[a] = rel as u32;
            }
            voxels.push(out);
        }
        Ok(Self { origin: origin.map(|o| o as i32), voxels })
    }

    /// Indices sorted by Morton key, ties by index.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.voxels.len()).collect();
        idx.sort_by_key(|&i| (morton_key(self.voxels[i]), i));
        idx
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        Self { origin: self.origin, voxels: order.iter().map(|&i| self.voxels[i]).collect() }
    }

    /// Decoded position of voxel `i`.
    pub fn position(&self, i: usize, voxel_size: f32) -> [f32; 3] {
        let v = self.voxels[i];
        core::array::from_fn(|a| ((self.origin[a] as i64 + v[a] as i64) as f64 * voxel_size as f64) as f32)
    }
}

/// Per-axis adaptive Laplace state.
#[derive(Debug, Clone, Copy)]
struct AxisModel {
    sum_abs: f64,
    count: f64,
}

impl AxisModel {
    fn new() -> Self {
        Self { sum_abs: 0.0, count: 0.0 }
    }

    fn model(&self) -> Result<SymbolModel> {
        let b = ((self.sum_abs + 0.5) / (self.count + 1.0)).max(MIN_LAPLACE_SCALE);
        SymbolModel::laplace(b, VOXEL_LIMIT)
    }

    fn update(&mut self, d: i64) {
        self.sum_abs += d.unsigned_abs() as f64;
        self.count += 1.0;
    }
}

/// Coded geometry: the coder payload plus accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryCode {
    pub payload: Vec<u8>,
    pub symbols: usize,
    pub digest: u32,
    pub estimated_bits: f64,
}

/// Codes voxels that are already in canonical order.
pub fn encode_voxels(voxels: &[[u32; 3]]) -> Result<GeometryCode> {
    let mut enc = RangeEncoder::new();
    let mut digest = ModelDigest::new();
    let mut axes = [AxisModel::new(); 3];
    let mut prev = [0i64; 3];
    let mut bits = 0.0;
    for v in voxels {
        for a in 0..3 {
            let d = v[a] as i64 - prev[a];
            let m = axes[a].model()?;
            digest.add(&m);
            bits += m.bits(d);
            m.encode(&mut enc, d)?;
            axes[a].update(d);
            prev[a] = v[a] as i64;
        }
    }
    Ok(GeometryCode { payload: enc.finish(), symbols: 3 * voxels.len(), digest: digest.finish(), estimated_bits: bits })
}

/// Decoded voxels, their model digest and estimated bits.
pub fn decode_voxels(payload: &[u8], count: usize) -> Result<(Vec<[u32; 3]>, u32, f64)> {
    let mut dec = RangeDecoder::new(payload, "geometry");
    let mut digest = ModelDigest::new();
    let mut axes = [AxisModel::new(); 3];
    let mut prev = [0i64; 3];
    let mut bits = 0.0;
    let mut out = Vec::with_capacity(count.min(payload.len().saturating_mul(8) + 1));
    let mut last_key = None;
    for _ in 0..count {
        let mut v = [0u32; 3];
        for a in 0..3 {
            let m = axes[a].model()?;
            digest.add(&m);
            let d = m.decode(&mut dec)?;
            bits += m.bits(d);
            axes[a].update(d);
            let x = prev[a] + d;
            if !(0..VOXEL_LIMIT).contains(&x) {
                return Err(dec.corrupt("voxel index out of range"));
            }
            v[a] = x as u32;
            prev[a] = x;
        }
        let key = morton_key(v);
        if last_key.is_some_and(|k| key < k) {
            return Err(dec.corrupt("voxels not in canonical order"));
        }
        last_key = Some(key);
        out.push(v);
    }
    Ok((out, digest.finish(), bits))
}
