//! Integer probability models for the range coder.
//!
//! A model covers the alphabet `[-bound, bound]`. Symbols inside a window
//! around the mode get the discretized density mass (normalized over the
//! window) scaled into `2^32 - (|W| + 1) * FLOOR_FREQ` units, plus a floor of
//! `FLOOR_FREQ` units each. The last `FLOOR_FREQ` units are an escape: an
//! out-of-window symbol codes the escape and then its position in the
//! out-of-window remainder, uniformly. A window that covers the whole
//! alphabet reserves no escape and spreads `2^32 - |W| * FLOOR_FREQ` units.
//! Every symbol thus has nonzero mass, no symbol inside the window gets less
//! than `2^-16`, and the masses over the full alphabet sum to exactly one.

use crate::error::{Error, Result};
use crate::math::{ceil, laplace_interval, log2, normal_interval, round};

use super::coder::{RangeDecoder, RangeEncoder};

pub const PROB_TOTAL: u64 = 1 << 32;
/// `p_min = FLOOR_FREQ / PROB_TOTAL = 2^-16`.
pub const FLOOR_FREQ: u64 = 1 << 16;
/// Largest window half-width, in symbols.
pub const MAX_HALF_WIDTH: i64 = 1 << 14;
/// Window half-width in units of the Gaussian scale.
const GAUSS_SPAN: f64 = 6.0;
/// Window half-width in units of the Laplace scale.
const LAPLACE_SPAN: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Density {
    Gaussian,
    Laplace,
}

/// Unfloored mass of `N(mu, sigma^2)` on `[(q - 1/2) step, (q + 1/2) step)`.
pub fn gaussian_bin_mass(mu: f64, sigma: f64, step: f64, q: i64) -> f64 {
    let lo = ((q as f64 - 0.5) * step - mu) / sigma;
    let hi = ((q as f64 + 0.5) * step - mu) / sigma;
    normal_interval(lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolModel {
    density: Density,
    mu: f64,
    scale: f64,
    step: f64,
    bound: i64,
    lo: i64,
    hi: i64,
    /// Density mass of the window; zero selects a uniform window.
    window_mass: f64,
    spread: u64,
}

impl SymbolModel {
    /// Discretized Gaussian over `[-bound, bound]`.
    pub fn gaussian(mu: f64, sigma: f64, step: f64, bound: i64) -> Result<Self> {
        Self::build(Density::Gaussian, mu, sigma, step, bound)
    }

    /// Discretized zero-mean Laplace with unit step, for integer residuals.
    pub fn laplace(scale: f64, bound: i64) -> Result<Self> {
        Self::build(Density::Laplace, 0.0, scale, 1.0, bound)
    }

    fn build(density: Density, mu: f64, scale: f64, step: f64, bound: i64) -> Result<Self> {
        if !(mu.is_finite() && scale.is_finite() && step.is_finite()) {
            return Err(Error::NonFinite("symbol model"));
        }
        if !(scale > 0.0 && step > 0.0) || !(1..=1 << 30).contains(&bound) {
            return Err(Error::invalid("symbol model needs positive scale, step and bound"));
        }
        let center = round(mu / step).clamp(-(bound as f64), bound as f64) as i64;
        let span = match density {
            Density::Gaussian => GAUSS_SPAN,
            Density::Laplace => LAPLACE_SPAN,
        };
        let half = ceil(span * scale / step).clamp(1.0, MAX_HALF_WIDTH as f64) as i64;
        let lo = (center - half).max(-bound);
        let hi = (center + half).min(bound);
        let width = (hi - lo + 1) as u64;
        let mut m = Self { density, mu, scale, step, bound, lo, hi, window_mass: 0.0, spread: 0 };
        let escape = u64::from(m.outside() > 0);
        m.spread = PROB_TOTAL - (width + escape) * FLOOR_FREQ;
        let mass = m.edge_mass(lo, hi + 1);
        m.window_mass = if mass.is_finite() && mass > 1e-300 { mass } else { 0.0 };
        Ok(m)
    }

    pub fn density(&self) -> Density {
        self.density
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn bound(&self) -> i64 {
        self.bound
    }

    /// Inclusive window `[lo, hi]`.
    pub fn window(&self) -> (i64, i64) {
        (self.lo, self.hi)
    }

    /// Density mass between the lower edges of symbols `a <= b`.
    fn edge_mass(&self, a: i64, b: i64) -> f64 {
        let ea = (a as f64 - 0.5) * self.step - self.mu;
        let eb = (b as f64 - 0.5) * self.step - self.mu;
        match self.density {
            Density::Gaussian => normal_interval(ea / self.scale, eb / self.scale),
            Density::Laplace => laplace_interval(ea, eb, self.scale),
        }
    }

    /// Cumulative frequency below window symbol `q`, `lo <= q <= hi + 1`.
    fn cum(&self, q: i64) -> u64 {
        let k = (q - self.lo) as u64;
        if q <= self.lo {
            return 0;
        }
        let frac = if self.window_mass > 0.0 {
            if q > self.hi {
                1.0
            } else {
                (self.edge_mass(self.lo, q) / self.window_mass).clamp(0.0, 1.0)
            }
        } else {
            k as f64 / (self.hi - self.lo + 1) as f64
        };
        round(frac * self.spread as f64) as u64 + k * FLOOR_FREQ
    }

    fn escape_start(&self) -> u64 {
        PROB_TOTAL - FLOOR_FREQ
    }

    /// Number of symbols outside the window.
    fn outside(&self) -> u64 {
        (2 * self.bound + 1 - (self.hi - self.lo + 1)) as u64
    }

    fn in_range(&self, q: i64) -> bool {
        (-self.bound..=self.bound).contains(&q)
    }

    /// `(start, freq)` of an in-window symbol.
    fn interval(&self, q: i64) -> (u64, u64) {
        let a = self.cum(q);
        let b = self.cum(q + 1);
        (a, b - a)
    }

    fn outside_index(&self, q: i64) -> u64 {
        if q < self.lo {
            (q + self.bound) as u64
        } else {
            (self.lo + self.bound) as u64 + (q - self.hi - 1) as u64
        }
    }

    fn outside_symbol(&self, idx: u64) -> i64 {
        let below = (self.lo + self.bound) as u64;
        if idx < below {
            idx as i64 - self.bound
        } else {
            self.hi + 1 + (idx - below) as i64
        }
    }

    /// Exact probability the coder assigns to `q` (zero outside the alphabet).
    pub fn probability(&self, q: i64) -> f64 {
        if !self.in_range(q) {
            return 0.0;
        }
        if (self.lo..=self.hi).contains(&q) {
            self.interval(q).1 as f64 / PROB_TOTAL as f64
        } else {
            FLOOR_FREQ as f64 / PROB_TOTAL as f64 / self.outside() as f64
        }
    }

    /// `-log2 P(q)`; infinite outside the alphabet.
    pub fn bits(&self, q: i64) -> f64 {
        if !self.in_range(q) {
            return f64::INFINITY;
        }
        if (self.lo..=self.hi).contains(&q) {
            32.0 - log2(self.interval(q).1 as f64)
        } else {
            16.0 + log2(self.outside() as f64)
        }
    }

    pub fn encode(&self, enc: &mut RangeEncoder, q: i64) -> Result<()> {
        if !self.in_range(q) {
            return Err(Error::Overflow { value: q, bound: self.bound });
        }
        if (self.lo..=self.hi).contains(&q) {
            let (start, freq) = self.interval(q);
            enc.encode(start, freq, PROB_TOTAL);
        } else {
            enc.encode(self.escape_start(), FLOOR_FREQ, PROB_TOTAL);
            enc.encode(self.outside_index(q), 1, self.outside());
        }
        Ok(())
    }

    pub fn decode(&self, dec: &mut RangeDecoder<'_>) -> Result<i64> {
        let v = dec.target(PROB_TOTAL)?;
        let n = self.outside();
        if n > 0 && v >= self.escape_start() {
            dec.consume(self.escape_start(), FLOOR_FREQ);
            let idx = dec.target(n)?;
            dec.consume(idx, 1);
            return Ok(self.outside_symbol(idx));
        }
        // Largest q in [lo, hi] with cum(q) <= v.
        let (mut a, mut b) = (self.lo, self.hi);
        while a < b {
            let mid = a + (b - a + 1) / 2;
            if self.cum(mid) <= v {
                a = mid;
            } else {
                b = mid - 1;
            }
        }
        let (start, freq) = self.interval(a);
        if v >= start + freq {
            return Err(dec.corrupt("target outside symbol interval"));
        }
        dec.consume(start, freq);
        Ok(a)
    }

    /// Feeds the model's defining values into a digest.
    pub fn digest_into(&self, d: &mut ModelDigest) {
        d.bytes(&[self.density as u8]);
        for v in [self.mu, self.scale, self.step] {
            d.bytes(&v.to_bits().to_le_bytes());
        }
        d.bytes(&self.bound.to_le_bytes());
    }
}

/// Probability of `q` under `model`.
pub fn symbol_probability(model: &SymbolModel, q: i64) -> f64 {
    model.probability(q)
}

/// Ideal code length `sum -log2 P(s_i)` in bits.
pub fn estimate_rate(symbols: &[i64], models: &[SymbolModel]) -> Result<f64> {
    if symbols.len() != models.len() {
        return Err(Error::DimensionMismatch { what: "symbols vs models", expected: models.len(), found: symbols.len() });
    }
    Ok(symbols.iter().zip(models).map(|(&q, m)| m.bits(q)).sum())
}

/// CRC-32 over the sequence of models used in a section.
#[derive(Debug, Clone, Default)]
pub struct ModelDigest(crc32fast::Hasher);

impl ModelDigest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.0.update(b);
    }

    pub fn add(&mut self, m: &SymbolModel) {
        m.digest_into(self);
    }

    pub fn finish(self) -> u32 {
        self.0.finalize()
    }
}
