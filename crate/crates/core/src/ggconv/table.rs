use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{floor, round};

/// Learnable `D x D x D x C_e` weight grid over the unit cube. Node `(i, j, k)`
/// sits at `(i, j, k) / (D - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    resolution: usize,
    channels: usize,
    values: Vec<f64>,
}

/// The eight interpolation corners of a query: flat node index and weight.
pub type Corners = [(usize, f64); 8];

impl KernelTable {
    pub fn zeros(resolution: usize, channels: usize) -> Result<Self> {
        Self::from_values(resolution, channels, vec![0.0; resolution.pow(3) * channels])
    }

    pub fn from_values(resolution: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::invalid("kernel table resolution must be at least 2"));
        }
        let want = resolution.pow(3) * channels;
        if values.len() != want {
            return Err(Error::DimensionMismatch { what: "kernel table", expected: want, found: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("kernel table"));
        }
        Ok(Self { resolution, channels, values })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Flat node index of grid node `(i, j, k)`.
    #[inline]
    pub fn node(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.resolution + j) * self.resolution + k
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> &[f64] {
        let n = self.node(i, j, k) * self.channels;
        &self.values[n..n + self.channels]
    }

    /// Corner nodes and trilinear weights for a query in `[0, 1]^3`.
    /// Coordinates outside the cube are clamped.
    pub fn corners(&self, u: [f64; 3]) -> Result<Corners> {
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trilinear query"));
        }
        let d = self.resolution;
        let top = (d - 1) as f64;
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let mut g = u[a].clamp(0.0, 1.0) * top;
            let snapped = round(g);
            if (g - snapped).abs() < 1e-9 {
                g = snapped;
            }
            let i0 = (floor(g) as usize).min(d - 2);
            base[a] = i0;
            frac[a] = g - i0 as f64;
        }
        let mut out = [(0usize, 0.0f64); 8];
        for (c, slot) in out.iter_mut().enumerate() {
            let (bx, by, bz) = (c >> 2 & 1, c >> 1 & 1, c & 1);
            let wx = if bx == 1 { frac[0] } else { 1.0 - frac[0] };
            let wy = if by == 1 { frac[1] } else { 1.0 - frac[1] };
            let wz = if bz == 1 { frac[2] } else { 1.0 - frac[2] };
            *slot = (self.node(base[0] + bx, base[1] + by, base[2] + bz), wx * wy * wz);
        }
        Ok(out)
    }

    /// Blends the corner rows of `corners` into `out`.
    pub fn blend(&self, corners: &Corners, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for &(node, w) in corners {
            let row = &self.values[node * self.channels..(node + 1) * self.channels];
            for (o, &t) in out.iter_mut().zip(row) {
                *o += w * t;
            }
        }
    }
}
