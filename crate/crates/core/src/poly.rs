//! Univariate polynomials with rational coefficients.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;

use crate::error::{Error, Result};
use crate::numbers::{BitLen, Rational};

/// `Σ_k r_k T^k`, stored low degree first with no trailing zeros.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct RationalPoly {
    coeffs: Vec<Rational>,
}

impl RationalPoly {
    pub fn new(mut coeffs: Vec<Rational>) -> Self {
        while coeffs.last().is_some_and(Rational::is_zero) {
            coeffs.pop();
        }
        RationalPoly { coeffs }
    }

    pub fn from_ints(coeffs: &[i64]) -> Self {
        RationalPoly::new(coeffs.iter().map(|&c| Rational::from(c)).collect())
    }

    /// `T^k`.
    pub fn monomial(k: usize) -> Self {
        let mut c = vec![Rational::zero(); k + 1];
        c[k] = Rational::one();
        RationalPoly::new(c)
    }

    pub fn coeffs(&self) -> &[Rational] {
        &self.coeffs
    }

    /// Coefficient of `T^k` (zero past the degree).
    pub fn coeff(&self, k: usize) -> Rational {
        self.coeffs.get(k).cloned().unwrap_or_default()
    }

    /// Degree; the zero polynomial reports `None`.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn eval(&self, x: &Rational) -> Rational {
        self.coeffs
            .iter()
            .rev()
            .fold(Rational::zero(), |acc, c| &(&acc * x) + c)
    }

    pub fn derivative(&self) -> RationalPoly {
        RationalPoly::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| c * &Rational::from(k as i64))
                .collect(),
        )
    }

    /// Coefficients of `f(U + j)` by binomial expansion.
    pub fn shift(&self, j: &Rational) -> RationalPoly {
        let n = self.coeffs.len();
        let mut out = vec![Rational::zero(); n];
        // binomial row of (U + j)^k, accumulated incrementally
        let mut row: Vec<BigInt> = vec![BigInt::from(1)];
        for (k, r) in self.coeffs.iter().enumerate() {
            if k > 0 {
                let mut next = vec![BigInt::from(0); k + 1];
                for (q, b) in row.iter().enumerate() {
                    next[q] += b;
                    next[q + 1] += b;
                }
                row = next;
            }
            if r.is_zero() {
                continue;
            }
            let mut jpow = Rational::one();
            // (U+j)^k = Σ_q C(k,q) j^{k-q} U^q, walk q downward
            for q in (0..=k).rev() {
                let term = &(r * &jpow) * &Rational::from_integer(row[q].clone());
                out[q] += term;
                jpow = &jpow * j;
            }
        }
        RationalPoly::new(out)
    }

    pub fn scale(&self, c: &Rational) -> RationalPoly {
        RationalPoly::new(self.coeffs.iter().map(|x| x * c).collect())
    }

    pub fn add(&self, other: &RationalPoly) -> RationalPoly {
        let n = self.coeffs.len().max(other.coeffs.len());
        RationalPoly::new((0..n).map(|k| &self.coeff(k) + &other.coeff(k)).collect())
    }

    pub fn sub(&self, other: &RationalPoly) -> RationalPoly {
        self.add(&other.scale(&Rational::from(-1)))
    }

    /// Sum of coefficient bit-lengths.
    pub fn bit_size(&self) -> BitLen {
        BitLen(self.coeffs.iter().map(|c| c.bit_length().get()).sum())
    }

    /// Comma-separated coefficients `c0,c1,...,cμ`.
    pub fn to_coeff_list(&self) -> String {
        self.coeffs
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// `f(U + j)` for a non-negative integer shift.
pub fn shift_expand(f: &RationalPoly, j: u64) -> RationalPoly {
    f.shift(&Rational::from(j as i64))
}

impl FromStr for RationalPoly {
    type Err = Error;

    /// Parses `c0,c1,...,cμ`.
    fn from_str(s: &str) -> Result<Self> {
        let coeffs = s
            .split(',')
            .map(|t| t.trim().parse::<Rational>())
            .collect::<Result<Vec<_>>>()?;
        Ok(RationalPoly::new(coeffs))
    }
}

impl fmt::Display for RationalPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        let mut first = true;
        for (k, c) in self.coeffs.iter().enumerate().rev() {
            if c.is_zero() {
                continue;
            }
            if !first {
                f.write_str(" + ")?;
            }
            first = false;
            match k {
                0 => write!(f, "{c}")?,
                1 => write!(f, "({c})·T")?,
                _ => write!(f, "({c})·T^{k}")?,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_examples() {
        let sq = RationalPoly::monomial(2);
        assert_eq!(shift_expand(&sq, 1), RationalPoly::from_ints(&[1, 2, 1]));
        let cube = RationalPoly::monomial(3);
        assert_eq!(
            shift_expand(&cube, 2),
            RationalPoly::from_ints(&[8, 12, 6, 1])
        );
        let f: RationalPoly = "1/2,-3,0,2/7".parse().unwrap();
        assert_eq!(shift_expand(&f, 0), f);
    }

    #[test]
    fn shift_agrees_with_evaluation() {
        let f: RationalPoly = "5/3,-1,1/2,0,4".parse().unwrap();
        for j in 0..5u64 {
            let g = shift_expand(&f, j);
            for x in -3..=3i64 {
                let x = Rational::ratio(x, 3);
                assert_eq!(g.eval(&x), f.eval(&(&x + &Rational::from(j as i64))));
            }
        }
    }

    #[test]
    fn trailing_zeros_and_degree() {
        let f = RationalPoly::from_ints(&[1, 2, 0, 0]);
        assert_eq!(f.degree(), Some(1));
        assert_eq!(RationalPoly::from_ints(&[0]).degree(), None);
        assert_eq!(f.derivative(), RationalPoly::from_ints(&[2]));
    }

    #[test]
    fn parse_and_list() {
        let f: RationalPoly = "0, 0, 1".parse().unwrap();
        assert_eq!(f, RationalPoly::monomial(2));
        assert_eq!(f.to_coeff_list(), "0,0,1");
        assert!("1,x".parse::<RationalPoly>().is_err());
    }
}
