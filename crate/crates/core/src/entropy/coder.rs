//! Byte-oriented range coder with 64-bit range and carry propagation.

use alloc::vec::Vec;

use crate::error::{Error, Result};

use super::model::SymbolModel;

const TOP: u64 = 1 << 56;
const LOW_MASK: u128 = (1u128 << 64) - 1;

#[derive(Debug, Clone)]
pub struct RangeEncoder {
    low: u128,
    range: u64,
    cache: u8,
    /// The first cache byte is the integer part of the code value and is
    /// always zero, so it is never written.
    has_cache: bool,
    pending: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self { low: 0, range: u64::MAX, cache: 0, has_cache: false, pending: 0, out: Vec::new() }
    }

    /// Narrows to `[start, start + freq)` out of `total`.
    /// Requires `freq > 0`, `start + freq <= total <= 2^32`.
    pub fn encode(&mut self, start: u64, freq: u64, total: u64) {
        debug_assert!(freq > 0 && start + freq <= total && total <= 1 << 32);
        let r = self.range / total;
        self.low += (r as u128) * (start as u128);
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn shift_low(&mut self) {
        if self.low < (0xFFu128 << 56) || self.low > LOW_MASK {
            let carry = (self.low >> 64) as u8;
            if self.has_cache {
                self.out.push(self.cache.wrapping_add(carry));
            }
            for _ in 0..self.pending {
                self.out.push(0xFFu8.wrapping_add(carry));
            }
            self.pending = 0;
            self.cache = ((self.low >> 56) & 0xFF) as u8;
            self.has_cache = true;
        } else {
            self.pending += 1;
        }
        self.low = (self.low << 8) & LOW_MASK;
    }

    /// Emits the shortest byte string that still pins the final interval.
    /// Trailing zero bytes are dropped; the decoder reads zeros past the end.
    pub fn finish(mut self) -> Vec<u8> {
        let end = self.low + self.range as u128;
        for shift in (0..=64u32).rev().step_by(8) {
            let unit = 1u128 << shift;
            let x = self.low.div_ceil(unit) * unit;
            if x < end {
                self.low = x;
                break;
            }
        }
        for _ in 0..10 {
            self.shift_low();
        }
        while self.out.last() == Some(&0) {
            self.out.pop();
        }
        self.out
    }
}

#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    code: u64,
    range: u64,
    r: u64,
    section: &'static str,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8], section: &'static str) -> Self {
        let mut d = Self { bytes, pos: 0, code: 0, range: u64::MAX, r: 0, section };
        for _ in 0..8 {
            d.code = (d.code << 8) | d.next_byte() as u64;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.bytes.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    pub(crate) fn corrupt(&self, reason: &'static str) -> Error {
        Error::corrupt(self.section, self.pos.min(self.bytes.len()), reason)
    }

    /// Cumulative target in `[0, total)`; must be followed by `consume`.
    pub fn target(&mut self, total: u64) -> Result<u64> {
        self.r = self.range / total;
        let v = self.code / self.r;
        if v >= total {
            return Err(self.corrupt("code value outside the coding range"));
        }
        Ok(v)
    }

    pub fn consume(&mut self, start: u64, freq: u64) {
        self.code -= self.r * start;
        self.range = self.r * freq;
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte() as u64;
            self.range <<= 8;
        }
    }

    /// True when more bytes were consumed than the payload holds, beyond the
    /// implicit zero padding the encoder relies on.
    pub fn overran(&self) -> bool {
        self.pos > self.bytes.len() + 8
    }
}

pub fn encode_symbols(symbols: &[i64], models: &[SymbolModel]) -> Result<Vec<u8>> {
    if symbols.len() != models.len() {
        return Err(Error::DimensionMismatch { what: "symbols vs models", expected: models.len(), found: symbols.len() });
    }
    let mut enc = RangeEncoder::new();
    for (&q, m) in symbols.iter().zip(models) {
        m.encode(&mut enc, q)?;
    }
    Ok(enc.finish())
}

pub fn decode_symbols(bytes: &[u8], models: &[SymbolModel], count: usize) -> Result<Vec<i64>> {
    if count != models.len() {
        return Err(Error::DimensionMismatch { what: "symbol count vs models", expected: models.len(), found: count });
    }
    let mut dec = RangeDecoder::new(bytes, "symbols");
    models.iter().map(|m| m.decode(&mut dec)).collect()
}
