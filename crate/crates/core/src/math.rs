//! Scalar helpers over `libm`, so results do not depend on the platform's
//! libm and the encoder and decoder evaluate every model identically.

use core::f64::consts::{FRAC_1_SQRT_2, LN_2};

pub type Vec3 = [f64; 3];

pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn log2(x: f64) -> f64 {
    libm::log2(x)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

/// Round half away from zero.
#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * exp(-0.5 * z * z)
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(z)`.
#[inline]
pub fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z * FRAC_1_SQRT_2)
}

/// `Φ(b) - Φ(a)` for `a <= b`, evaluated on whichever tail avoids
/// cancellation.
pub fn normal_interval(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        normal_sf(a) - normal_sf(b)
    } else if b <= 0.0 {
        normal_cdf(b) - normal_cdf(a)
    } else {
        1.0 - normal_cdf(a) - normal_sf(b)
    }
}

/// Laplace(0, b) CDF.
pub fn laplace_cdf(x: f64, scale: f64) -> f64 {
    if x < 0.0 {
        0.5 * exp(x / scale)
    } else {
        1.0 - 0.5 * exp(-x / scale)
    }
}

/// Mass of Laplace(0, b) on `[a, c]`, `a <= c`.
pub fn laplace_interval(a: f64, c: f64, scale: f64) -> f64 {
    if a >= 0.0 {
        0.5 * (exp(-a / scale) - exp(-c / scale))
    } else if c <= 0.0 {
        0.5 * (exp(c / scale) - exp(a / scale))
    } else {
        1.0 - 0.5 * exp(a / scale) - 0.5 * exp(-c / scale)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        exp(x)
    } else {
        libm::log1p(exp(x))
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        ln(libm::expm1(y))
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub fn bits_from_prob(p: f64) -> f64 {
    -ln(p) / LN_2
}

#[inline]
pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Squared Euclidean distance, summed x, y, z in that order.
#[inline]
pub fn dist2(a: Vec3, b: Vec3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub fn widen3(p: [f32; 3]) -> Vec3 {
    [p[0] as f64, p[1] as f64, p[2] as f64]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_matches_cdf_difference() {
        for &(a, b) in &[(-3.0, -1.0), (-0.5, 0.5), (0.2, 4.0), (-8.0, 8.0)] {
            let direct = normal_cdf(b) - normal_cdf(a);
            assert!((normal_interval(a, b) - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn softplus_round_trips() {
        for &y in &[1e-4, 0.1, 1.0, 7.5, 40.0] {
            assert!((softplus(softplus_inv(y)) - y).abs() < 1e-9 * y.max(1.0));
        }
    }

    #[test]
    fn laplace_interval_is_consistent() {
        let b = 1.7;
        for &(a, c) in &[(-5.0, -1.0), (-0.5, 0.25), (0.5, 3.0)] {
            let direct = laplace_cdf(c, b) - laplace_cdf(a, b);
            assert!((laplace_interval(a, c, b) - direct).abs() < 1e-15);
        }
    }
}
