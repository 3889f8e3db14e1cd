//! Quantization, integer probability models, range coding, rate estimation
//! and context-model fitting.

mod coder;
mod fit;
mod model;
mod prior;

pub use coder::{decode_symbols, encode_symbols, RangeDecoder, RangeEncoder};
pub use fit::{
    channel_models, fit_context_model, moment_matched, warm_start, Evaluation, FitProblem, FitResult,
    FitSettings, LevelTwoData,
};
pub use model::{
    estimate_rate, gaussian_bin_mass, symbol_probability, Density, ModelDigest, SymbolModel,
    FLOOR_FREQ, MAX_HALF_WIDTH, PROB_TOTAL,
};
pub use prior::LevelOnePrior;
pub(crate) use fit::reconstruct;

use crate::error::{Error, Result};
use crate::math::{round, tanh};

/// Attribute symbols must satisfy `|q| <= ALPHABET_BOUND`.
pub const ALPHABET_BOUND: i64 = 1 << 15;

/// Smallest effective step, relative to its base step.
pub const MIN_STEP_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttributeKind {
    Feature,
    Scaling,
    Offset,
}

impl AttributeKind {
    pub const ALL: [AttributeKind; 3] = [AttributeKind::Feature, AttributeKind::Scaling, AttributeKind::Offset];

    pub fn name(self) -> &'static str {
        match self {
            AttributeKind::Feature => "features",
            AttributeKind::Scaling => "scaling",
            AttributeKind::Offset => "offsets",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Kind of coded channel `c` when features are `channels` wide.
    pub fn of_channel(c: usize, channels: usize) -> Self {
        if c < channels {
            AttributeKind::Feature
        } else if c < channels + 3 {
            AttributeKind::Scaling
        } else {
            AttributeKind::Offset
        }
    }
}

/// Base quantization steps per attribute kind. Scaling is quantized in the
/// log domain, so its step is a log-ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantSpec {
    pub base_steps: [f64; 3],
    pub adaptive: bool,
}

impl QuantSpec {
    pub fn new(feature: f64, scaling: f64, offsets: f64, adaptive: bool) -> Result<Self> {
        let spec = Self { base_steps: [feature, scaling, offsets], adaptive };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (kind, s) in AttributeKind::ALL.iter().zip(self.base_steps) {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid(alloc::format!(
                    "base step for {} must be positive and finite, got {s}",
                    kind.name()
                )));
            }
        }
        Ok(())
    }

    pub fn base_step(&self, kind: AttributeKind) -> f64 {
        self.base_steps[kind.index()]
    }

    /// Step for coded channel `c` given its predicted adjustment.
    pub fn step(&self, c: usize, channels: usize, delta_adj: f64) -> f64 {
        let base = self.base_step(AttributeKind::of_channel(c, channels));
        if self.adaptive {
            effective_step(base, delta_adj)
        } else {
            base
        }
    }
}

/// `base * (1 + tanh(adj))`, floored at `MIN_STEP_FRACTION * base`.
pub fn effective_step(base_step: f64, delta_adj: f64) -> f64 {
    let s = base_step * (1.0 + tanh(delta_adj));
    let floor = MIN_STEP_FRACTION * base_step;
    if s.is_nan() || s < floor {
        floor
    } else {
        s
    }
}

/// Uniform quantization with ties away from zero.
pub fn quantize(x: f64, step: f64) -> Result<i64> {
    quantize_bounded(x, step, ALPHABET_BOUND)
}

pub fn quantize_bounded(x: f64, step: f64, bound: i64) -> Result<i64> {
    if !(step > 0.0) {
        return Err(Error::invalid("quantization step must be positive"));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("quantizer input"));
    }
    let r = round(x / step);
    if r.abs() > bound as f64 {
        let value = if r.abs() < i64::MAX as f64 { r as i64 } else if r > 0.0 { i64::MAX } else { i64::MIN };
        return Err(Error::Overflow { value, bound });
    }
    Ok(r as i64)
}

/// Quantizes, clamping to the alphabet instead of failing.
pub fn quantize_clamped(x: f64, step: f64, bound: i64) -> i64 {
    let r = round(x / step);
    if r.is_nan() {
        0
    } else {
        r.clamp(-(bound as f64), bound as f64) as i64
    }
}

pub fn dequantize(q: i64, step: f64) -> f64 {
    q as f64 * step
}

#[cfg(test)]
mod tests;
