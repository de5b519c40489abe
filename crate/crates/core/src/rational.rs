//! Exact-arithmetic helpers shared by the analysis and report code.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

pub type Prob = BigRational;

/// Decimal exponents beyond this are rejected by [`parse_rational`].
const MAX_DECIMAL_EXPONENT: i32 = 1000;

/// Binary digits kept by [`log2_upper`].
pub const LOG2_PRECISION_BITS: u32 = 12;

pub fn pow2(exp: u32) -> BigInt {
    BigInt::one() << exp as usize
}

/// `2^-exp` as an exact rational.
pub fn inv_pow2(exp: u32) -> Prob {
    BigRational::new(BigInt::one(), pow2(exp))
}

pub fn ratio(num: i64, den: i64) -> Prob {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn integer(v: u64) -> Prob {
    BigRational::from_integer(BigInt::from(v))
}

/// Always `num/den`, including integers (`3/1`) and zero (`0/1`).
pub fn fraction_string(r: &Prob) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

pub fn to_f64(r: &Prob) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Smallest multiple of `2^-LOG2_PRECISION_BITS` that is `>= log2(n)`.
///
/// Exact: with `s` fractional bits, `ceil(2^s log2 n)` is the bit length of
/// `n^(2^s) - 1`.
pub fn log2_upper(n: u64) -> Prob {
    assert!(n >= 1, "log2 of zero");
    if n == 1 {
        return Prob::zero();
    }
    let mut power = BigUint::from(n);
    for _ in 0..LOG2_PRECISION_BITS {
        power = &power * &power;
    }
    let bits = (power - BigUint::one()).bits();
    BigRational::new(BigInt::from(bits), pow2(LOG2_PRECISION_BITS))
}

/// Parses `0.8`, `4/5`, `1`, or `2.5e-3` into an exact rational.
pub fn parse_rational(text: &str) -> Option<Prob> {
    let text = text.trim();
    if let Some((num, den)) = text.split_once('/') {
        let num: BigInt = num.trim().parse().ok()?;
        let den: BigInt = den.trim().parse().ok()?;
        if den.is_zero() {
            return None;
        }
        return Some(BigRational::new(num, den));
    }
    let (mantissa, exp) = match text.split_once(['e', 'E']) {
        Some((m, e)) => (m, e.parse::<i32>().ok()?),
        None => (text, 0),
    };
    let (negative, mantissa) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits: BigInt = format!("0{int_part}{frac_part}").parse().ok()?;
    if exp.abs() > MAX_DECIMAL_EXPONENT || frac_part.len() > MAX_DECIMAL_EXPONENT as usize {
        return None;
    }
    let scale = exp - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let mut r = BigRational::from_integer(digits);
    if scale >= 0 {
        r *= BigRational::from_integer(num_traits::pow(ten, scale as usize));
    } else {
        r /= BigRational::from_integer(num_traits::pow(ten, (-scale) as usize));
    }
    Some(if negative { -r } else { r })
}
