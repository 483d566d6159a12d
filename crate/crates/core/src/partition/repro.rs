//! Order-independent floating-point sums via 128-bit fixed point.
//!
//! Every term is rounded once onto a grid of spacing `2^-shift`, chosen from
//! a global magnitude bound; the integer sums are exact, so the result is
//! the same bit pattern for any partition of the terms.

use crate::error::Result;

use super::runtime::RankContext;

/// Headroom left above the bound for summing many terms.
const VALUE_BITS: i32 = 96;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixedScale {
    shift: i32,
}

impl FixedScale {
    /// Scale for terms with `|v| <= bound`.
    pub fn for_bound(bound: f64) -> Self {
        if !(bound.is_finite() && bound > 0.0) {
            return FixedScale { shift: 0 };
        }
        let (_, exp) = frexp(bound);
        FixedScale {
            shift: VALUE_BITS - exp,
        }
    }

    #[inline]
    pub fn to_fixed(&self, v: f64) -> i128 {
        (ldexp(v, self.shift)).round() as i128
    }

    #[inline]
    pub fn from_fixed(&self, q: i128) -> f64 {
        ldexp(q as f64, -self.shift)
    }
}

/// `x = m * 2^e` with `0.5 <= |m| < 1`.
fn frexp(x: f64) -> (f64, i32) {
    if x == 0.0 || !x.is_finite() {
        return (x, 0);
    }
    let bits = x.to_bits();
    let raw_exp = ((bits >> 52) & 0x7ff) as i32;
    if raw_exp == 0 {
        let (m, e) = frexp(x * 2f64.powi(64));
        return (m, e - 64);
    }
    let e = raw_exp - 1022;
    let m = f64::from_bits((bits & !(0x7ffu64 << 52)) | (1022u64 << 52));
    (m, e)
}

fn ldexp(x: f64, e: i32) -> f64 {
    // split to keep each factor representable
    let mut v = x;
    let mut e = e;
    while e > 1000 {
        v *= 2f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        v *= 2f64.powi(-1000);
        e += 1000;
    }
    v * 2f64.powi(e)
}

/// Sum of `terms` independent of their order. Non-finite input falls back to
/// a plain sum so NaN and infinities propagate.
pub fn exact_order_sum(terms: &[f64]) -> f64 {
    let bound = terms.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !bound.is_finite() || terms.iter().any(|v| v.is_nan()) {
        return terms.iter().sum();
    }
    let s = FixedScale::for_bound(bound);
    s.from_fixed(terms.iter().map(|&v| s.to_fixed(v)).sum())
}

/// Rank-count invariant global sum of per-rank terms.
pub fn global_sum(ctx: &RankContext, terms: &[f64]) -> Result<f64> {
    let local_bound = terms.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let local_nan = terms.iter().any(|v| v.is_nan());
    let bound = ctx.max_f64(if local_nan { f64::NAN } else { local_bound })?;
    if !bound.is_finite() {
        let plain: f64 = terms.iter().sum();
        return ctx.all_reduce(plain, |a, b| a + b);
    }
    let s = FixedScale::for_bound(bound);
    let local: i128 = terms.iter().map(|&v| s.to_fixed(v)).sum();
    Ok(s.from_fixed(ctx.sum_i128(local)?))
}

/// Rank-count invariant dot product of the owned parts of two vectors.
pub fn global_dot(ctx: &RankContext, x: &[f64], y: &[f64]) -> Result<f64> {
    debug_assert_eq!(x.len(), y.len());
    let prods: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    global_sum(ctx, &prods)
}
