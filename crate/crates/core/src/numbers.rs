//! Exact rational scalars and bit-level accounting.
//!
//! [`Rational`] is always kept in lowest terms with a positive denominator.
//! Values whose denominator is a power of two (dyadic rationals) take a
//! shift-based reduction path, which keeps bounded-norm programs with
//! denominators of several hundred thousand bits tractable.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};
use std::str::FromStr;

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Size of a rational in the bit model: bit-length of the numerator plus
/// bit-length of the denominator, sign excluded.
///
/// Zero is encoded as `0/1` and therefore has `BitLen(1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct BitLen(pub u64);

impl BitLen {
    pub fn get(self) -> u64 {
        self.0
    }
}

impl fmt::Display for BitLen {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl Add for BitLen {
    type Output = BitLen;
    fn add(self, rhs: BitLen) -> BitLen {
        BitLen(self.0 + rhs.0)
    }
}

/// Sign of an exact value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SignClass {
    Negative,
    Zero,
    Positive,
}

impl fmt::Display for SignClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignClass::Negative => "negative",
            SignClass::Zero => "zero",
            SignClass::Positive => "positive",
        })
    }
}

/// Reduced arbitrary-precision fraction.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Rational {
    num: BigInt,
    den: BigInt,
}

fn is_power_of_two(n: &BigInt) -> bool {
    n.sign() == Sign::Plus && n.trailing_zeros() == Some(n.bits() - 1)
}

fn pow2(k: u64) -> BigInt {
    BigInt::one() << k
}

impl Rational {
    /// Builds `num/den`, reducing to lowest terms.
    pub fn new(num: BigInt, den: BigInt) -> Result<Self> {
        if den.is_zero() {
            return Err(Error::ParseRational {
                input: format!("{num}/0"),
                reason: "zero denominator",
            });
        }
        Ok(Self::reduce(num, den))
    }

    pub fn from_integer(n: impl Into<BigInt>) -> Self {
        Rational {
            num: n.into(),
            den: BigInt::one(),
        }
    }

    /// `n / d` for machine integers; panics on `d == 0`.
    pub fn ratio(n: i64, d: i64) -> Self {
        assert!(d != 0, "zero denominator");
        Self::reduce(BigInt::from(n), BigInt::from(d))
    }

    /// `m · 2^{-k}`.
    pub fn dyadic(m: impl Into<BigInt>, k: u64) -> Self {
        Self::reduce(m.into(), pow2(k))
    }

    /// `2^e` for any integer exponent.
    pub fn pow2(e: i64) -> Self {
        if e >= 0 {
            Rational::from_integer(pow2(e as u64))
        } else {
            Rational {
                num: BigInt::one(),
                den: pow2(e.unsigned_abs()),
            }
        }
    }

    fn reduce(mut num: BigInt, mut den: BigInt) -> Self {
        if den.is_negative() {
            num = -num;
            den = -den;
        }
        if num.is_zero() {
            return Rational::zero();
        }
        if den.is_one() {
            return Rational { num, den };
        }
        if is_power_of_two(&den) {
            let shift = num
                .trailing_zeros()
                .unwrap_or(0)
                .min(den.trailing_zeros().unwrap_or(0));
            if shift > 0 {
                num >>= shift;
                den >>= shift;
            }
            return Rational { num, den };
        }
        let g = num.gcd(&den);
        if !g.is_one() {
            num /= &g;
            den /= &g;
        }
        Rational { num, den }
    }

    pub fn zero() -> Self {
        Rational {
            num: BigInt::zero(),
            den: BigInt::one(),
        }
    }

    pub fn one() -> Self {
        Rational::from_integer(1)
    }

    pub fn numer(&self) -> &BigInt {
        &self.num
    }

    pub fn denom(&self) -> &BigInt {
        &self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.num.is_one() && self.den.is_one()
    }

    pub fn is_integer(&self) -> bool {
        self.den.is_one()
    }

    pub fn is_negative(&self) -> bool {
        self.num.is_negative()
    }

    pub fn is_positive(&self) -> bool {
        self.num.is_positive()
    }

    pub fn sign_class(&self) -> SignClass {
        match self.num.sign() {
            Sign::Minus => SignClass::Negative,
            Sign::NoSign => SignClass::Zero,
            Sign::Plus => SignClass::Positive,
        }
    }

    pub fn abs(&self) -> Self {
        Rational {
            num: self.num.abs(),
            den: self.den.clone(),
        }
    }

    /// Multiplicative inverse; `None` for zero.
    pub fn recip(&self) -> Option<Self> {
        if self.is_zero() {
            None
        } else {
            Some(Self::reduce(self.den.clone(), self.num.clone()))
        }
    }

    /// Mathematical floor (toward −∞).
    pub fn floor(&self) -> BigInt {
        self.num.div_floor(&self.den)
    }

    pub fn pow(&self, e: u32) -> Self {
        Rational {
            num: num_traits::pow(self.num.clone(), e as usize),
            den: num_traits::pow(self.den.clone(), e as usize),
        }
    }

    /// Bit-length of numerator plus denominator.
    pub fn bit_length(&self) -> BitLen {
        BitLen(self.num.bits() + self.den.bits())
    }

    /// `⌊2^{-j}·|u|/v⌋ mod 2` for `self = u/v`.
    pub fn bit(&self, j: u64) -> u8 {
        let whole = self.num.magnitude() / self.den.magnitude();
        whole.bit(j) as u8
    }

    /// Bit at a signed binary position: `j ≥ 0` is the integer part as in
    /// [`Rational::bit`], `j < 0` addresses the fractional digits
    /// (`j = −1` is the first digit after the binary point).
    pub fn bit_at(&self, j: i64) -> u8 {
        if j >= 0 {
            return self.bit(j as u64);
        }
        let shifted: BigUint = self.num.magnitude() << j.unsigned_abs();
        let whole = shifted / self.den.magnitude();
        whole.bit(0) as u8
    }

    /// `2^{-k}·⌊q·2^k⌋`: round down to a multiple of `2^{-k}`.
    pub fn round_to_dyadic(&self, k: u64) -> Self {
        if self.is_integer() {
            return self.clone();
        }
        let scaled = (&self.num << k).div_floor(&self.den);
        Rational::dyadic(scaled, k)
    }

    /// True when the denominator divides `2^k`.
    pub fn is_dyadic_with_precision(&self, k: u64) -> bool {
        is_power_of_two(&self.den) && self.den.bits() - 1 <= k
    }

    /// Approximate `log10 |q|` from the bit-lengths of numerator and
    /// denominator; within `log10 2` of the true value for nonzero `q`.
    pub fn log10_proxy(&self) -> f64 {
        if self.is_zero() {
            return f64::NEG_INFINITY;
        }
        (self.num.bits() as f64 - self.den.bits() as f64) * std::f64::consts::LOG10_2
    }

    /// Lossy conversion for reporting.
    pub fn to_f64(&self) -> f64 {
        match (self.num.to_f64(), self.den.to_f64()) {
            (Some(n), Some(d)) if n.is_finite() && d.is_finite() => n / d,
            _ => {
                let shift = self.num.bits() as i64 - self.den.bits() as i64;
                let sign = if self.is_negative() { -1.0 } else { 1.0 };
                sign * 2f64.powi(shift.clamp(-1100, 1100) as i32)
            }
        }
    }

    /// Strict parser for serialized files: rejects non-reduced fractions.
    pub fn parse_canonical(s: &str) -> Result<Self> {
        let (num, den) = parse_parts(s)?;
        let q = Rational::reduce(num.clone(), den.clone());
        if q.num != num || q.den != den {
            return Err(Error::ParseRational {
                input: s.to_string(),
                reason: "fraction is not in lowest terms",
            });
        }
        Ok(q)
    }
}

fn parse_parts(s: &str) -> Result<(BigInt, BigInt)> {
    let err = |reason| Error::ParseRational {
        input: s.to_string(),
        reason,
    };
    let t = s.trim();
    let (negative, body) = if let Some(rest) = t.strip_prefix('-') {
        (true, rest)
    } else if let Some(rest) = t.strip_prefix('\u{2212}') {
        (true, rest)
    } else {
        (false, t)
    };
    let digits = |d: &str| -> Result<BigInt> {
        if d.is_empty() || !d.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err("expected decimal digits"));
        }
        Ok(d.parse::<BigInt>().expect("validated digits"))
    };
    let (n, d) = match body.split_once('/') {
        Some((n, d)) => (digits(n.trim())?, digits(d.trim())?),
        None => (digits(body)?, BigInt::one()),
    };
    if d.is_zero() {
        return Err(err("zero denominator"));
    }
    Ok((if negative { -n } else { n }, d))
}

impl FromStr for Rational {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (n, d) = parse_parts(s)?;
        Ok(Rational::reduce(n, d))
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den.is_one() {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl fmt::Debug for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Rational({self})")
    }
}

impl Default for Rational {
    fn default() -> Self {
        Rational::zero()
    }
}

impl From<i64> for Rational {
    fn from(n: i64) -> Self {
        Rational::from_integer(n)
    }
}

impl From<BigInt> for Rational {
    fn from(n: BigInt) -> Self {
        Rational::from_integer(n)
    }
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Rational::parse_canonical(&s).map_err(serde::de::Error::custom)
    }
}

impl PartialOrd for Rational {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Rational {
    fn cmp(&self, other: &Self) -> Ordering {
        if self.den == other.den {
            return self.num.cmp(&other.num);
        }
        (&self.num * &other.den).cmp(&(&other.num * &self.den))
    }
}

impl<'a> Add<&'a Rational> for &'a Rational {
    type Output = Rational;
    fn add(self, rhs: &'a Rational) -> Rational {
        if self.den == rhs.den {
            return Rational::reduce(&self.num + &rhs.num, self.den.clone());
        }
        Rational::reduce(
            &self.num * &rhs.den + &rhs.num * &self.den,
            &self.den * &rhs.den,
        )
    }
}

impl<'a> Sub<&'a Rational> for &'a Rational {
    type Output = Rational;
    fn sub(self, rhs: &'a Rational) -> Rational {
        if self.den == rhs.den {
            return Rational::reduce(&self.num - &rhs.num, self.den.clone());
        }
        Rational::reduce(
            &self.num * &rhs.den - &rhs.num * &self.den,
            &self.den * &rhs.den,
        )
    }
}

impl<'a> Mul<&'a Rational> for &'a Rational {
    type Output = Rational;
    fn mul(self, rhs: &'a Rational) -> Rational {
        if self.is_zero() || rhs.is_zero() {
            return Rational::zero();
        }
        Rational::reduce(&self.num * &rhs.num, &self.den * &rhs.den)
    }
}

impl<'a> Div<&'a Rational> for &'a Rational {
    type Output = Rational;
    fn div(self, rhs: &'a Rational) -> Rational {
        assert!(!rhs.is_zero(), "division by zero rational");
        Rational::reduce(&self.num * &rhs.den, &self.den * &rhs.num)
    }
}

macro_rules! forward_owned {
    ($($tr:ident $m:ident),*) => {$(
        impl $tr<Rational> for Rational {
            type Output = Rational;
            fn $m(self, rhs: Rational) -> Rational { (&self).$m(&rhs) }
        }
        impl<'a> $tr<&'a Rational> for Rational {
            type Output = Rational;
            fn $m(self, rhs: &'a Rational) -> Rational { (&self).$m(rhs) }
        }
        impl<'a> $tr<Rational> for &'a Rational {
            type Output = Rational;
            fn $m(self, rhs: Rational) -> Rational { self.$m(&rhs) }
        }
    )*};
}
forward_owned!(Add add, Sub sub, Mul mul, Div div);

impl Neg for Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        Rational {
            num: -self.num,
            den: self.den,
        }
    }
}

impl Neg for &Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        -(self.clone())
    }
}

impl AddAssign<&Rational> for Rational {
    fn add_assign(&mut self, rhs: &Rational) {
        *self = &*self + rhs;
    }
}

impl AddAssign for Rational {
    fn add_assign(&mut self, rhs: Rational) {
        *self = &*self + &rhs;
    }
}

impl SubAssign<&Rational> for Rational {
    fn sub_assign(&mut self, rhs: &Rational) {
        *self = &*self - rhs;
    }
}

impl SubAssign for Rational {
    fn sub_assign(&mut self, rhs: Rational) {
        *self = &*self - &rhs;
    }
}

impl MulAssign<&Rational> for Rational {
    fn mul_assign(&mut self, rhs: &Rational) {
        *self = &*self * rhs;
    }
}

impl std::iter::Sum for Rational {
    fn sum<I: Iterator<Item = Rational>>(iter: I) -> Self {
        iter.fold(Rational::zero(), |acc, x| acc + x)
    }
}

impl<'a> std::iter::Sum<&'a Rational> for Rational {
    fn sum<I: Iterator<Item = &'a Rational>>(iter: I) -> Self {
        iter.fold(Rational::zero(), |acc, x| acc + x)
    }
}

/// `⌊2^{-j}·|u|/v⌋ mod 2`.
pub fn bit_extract(q: &Rational, j: u64) -> u8 {
    q.bit(j)
}

/// `2^{-k}·⌊q·2^k⌋`.
pub fn round_to_dyadic(q: &Rational, k: u64) -> Rational {
    q.round_to_dyadic(k)
}

pub fn bit_length(q: &Rational) -> BitLen {
    q.bit_length()
}

/// Least common multiple of the denominators of `values`.
pub fn common_denominator<'a>(values: impl IntoIterator<Item = &'a Rational>) -> BigInt {
    values
        .into_iter()
        .fold(BigInt::one(), |acc, q| acc.lcm(q.denom()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(s: &str) -> Rational {
        s.parse().unwrap()
    }

    #[test]
    fn bit_extract_examples() {
        assert_eq!(bit_extract(&q("11"), 1), 1);
        assert_eq!(bit_extract(&q("11"), 2), 0);
        assert_eq!(bit_extract(&q("7/2"), 0), 1);
        // sign is ignored
        assert_eq!(bit_extract(&q("-11"), 1), 1);
    }

    #[test]
    fn fractional_bits() {
        // 3/4 = 0.11b
        assert_eq!(q("3/4").bit_at(-1), 1);
        assert_eq!(q("3/4").bit_at(-2), 1);
        assert_eq!(q("3/4").bit_at(-3), 0);
        assert_eq!(q("5/8").bit_at(-2), 0);
    }

    #[test]
    fn round_to_dyadic_examples() {
        assert_eq!(round_to_dyadic(&q("13/10"), 2), q("5/4"));
        assert_eq!(round_to_dyadic(&q("3/4"), 2), q("3/4"));
        assert_eq!(round_to_dyadic(&q("-1/3"), 1), q("-1/2"));
    }

    #[test]
    fn bit_length_examples() {
        assert_eq!(bit_length(&q("12/5")), BitLen(7));
        assert_eq!(bit_length(&q("1")), BitLen(2));
        assert_eq!(bit_length(&q("0")), BitLen(1));
    }

    #[test]
    fn parsing_and_display() {
        assert_eq!(q("6/4").to_string(), "3/2");
        assert_eq!(q("\u{2212}3").to_string(), "-3");
        assert_eq!(q(" -4/1 ").to_string(), "-4");
        assert!("1/0".parse::<Rational>().is_err());
        assert!("1/-2".parse::<Rational>().is_err());
        assert!("abc".parse::<Rational>().is_err());
        assert!(Rational::parse_canonical("2/4").is_err());
        assert_eq!(Rational::parse_canonical("-1/2").unwrap(), q("-1/2"));
    }

    #[test]
    fn dyadic_reduction_path() {
        let a = Rational::dyadic(12, 5); // 12/32
        assert_eq!(a, q("3/8"));
        let b = &a * &Rational::dyadic(4, 3);
        assert_eq!(b, q("3/16"));
        assert!(b.is_dyadic_with_precision(4));
        assert!(!b.is_dyadic_with_precision(3));
        assert_eq!(&q("1/3") + &q("1/6"), q("1/2"));
    }

    #[test]
    fn ordering() {
        assert!(q("1/3") < q("1/2"));
        assert!(q("-1/2") < q("-1/3"));
        assert_eq!(q("2/6").cmp(&q("1/3")), Ordering::Equal);
    }

    fn small_rational() -> impl Strategy<Value = Rational> {
        (-10_000i64..10_000, 1i64..10_000).prop_map(|(n, d)| Rational::ratio(n, d))
    }

    proptest! {
        #[test]
        fn reduction_is_idempotent(a in -100_000i64..100_000, b in 1i64..100_000) {
            prop_assert_eq!(Rational::ratio(2 * a, 2 * b), Rational::ratio(a, b));
            let r = Rational::ratio(a, b);
            prop_assert!(r.numer().gcd(r.denom()).is_one() || r.is_zero());
        }

        #[test]
        fn rounding_is_idempotent(x in small_rational(), k in 1u64..20) {
            let once = x.round_to_dyadic(k);
            prop_assert_eq!(once.round_to_dyadic(k), once.clone());
            prop_assert!(once <= x);
            prop_assert!(once.is_dyadic_with_precision(k));
        }

        #[test]
        fn integer_bits_match_binary_digits(u in 0u64..u64::MAX, j in 0u64..64) {
            let digits = format!("{u:b}");
            let expected = digits
                .chars()
                .rev()
                .nth(j as usize)
                .map(|c| if c == '1' { 1 } else { 0 })
                .unwrap_or(0);
            prop_assert_eq!(bit_extract(&Rational::from_integer(u), j), expected);
        }

        #[test]
        fn field_axioms_spot(a in small_rational(), b in small_rational(), c in small_rational()) {
            prop_assert_eq!(&(&a + &b) * &c, &(&a * &c) + &(&b * &c));
            prop_assert_eq!(&(&a - &b) + &b, a.clone());
            if !b.is_zero() {
                prop_assert_eq!(&(&a / &b) * &b, a);
            }
        }

        #[test]
        fn display_round_trip(a in small_rational()) {
            prop_assert_eq!(Rational::parse_canonical(&a.to_string()).unwrap(), a);
        }
    }
}
