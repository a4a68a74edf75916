//! Activation functions: identity, rational polynomials, piecewise-linear
//! maps, and bit-bounded wrappers that round outputs to `k`-bit dyadics.

use crate::error::{Error, Result};
use crate::numbers::Rational;
use crate::poly::RationalPoly;

/// Which piece's slope is reported exactly at a breakpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BreakpointRule {
    #[default]
    Right,
    Left,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Piece {
    pub slope: Rational,
    pub intercept: Rational,
}

impl Piece {
    pub fn new(slope: Rational, intercept: Rational) -> Self {
        Piece { slope, intercept }
    }

    pub fn at(&self, z: &Rational) -> Rational {
        &(&self.slope * z) + &self.intercept
    }
}

/// Piecewise-linear map with rational breakpoints. Piece `i` covers
/// `[b_{i-1}, b_i)`; the value at a breakpoint comes from the piece on
/// its right.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PwlActivation {
    breakpoints: Vec<Rational>,
    pieces: Vec<Piece>,
    rule: BreakpointRule,
}

impl PwlActivation {
    pub fn new(breakpoints: Vec<Rational>, pieces: Vec<Piece>) -> Result<Self> {
        if pieces.len() != breakpoints.len() + 1 {
            return Err(Error::InvalidParameter(format!(
                "{} breakpoints need {} pieces, got {}",
                breakpoints.len(),
                breakpoints.len() + 1,
                pieces.len()
            )));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        Ok(PwlActivation {
            breakpoints,
            pieces,
            rule: BreakpointRule::Right,
        })
    }

    /// Like [`PwlActivation::new`] but rejects jumps at breakpoints.
    pub fn continuous(breakpoints: Vec<Rational>, pieces: Vec<Piece>) -> Result<Self> {
        let act = Self::new(breakpoints, pieces)?;
        if !act.is_continuous() {
            return Err(Error::InvalidParameter(
                "pieces do not agree at every breakpoint".into(),
            ));
        }
        Ok(act)
    }

    pub fn relu() -> Self {
        Self::leaky_relu(Rational::zero())
    }

    pub fn leaky_relu(negative_slope: Rational) -> Self {
        PwlActivation::continuous(
            vec![Rational::zero()],
            vec![
                Piece::new(negative_slope, Rational::zero()),
                Piece::new(Rational::one(), Rational::zero()),
            ],
        )
        .expect("leaky ReLU is continuous")
    }

    pub fn with_rule(mut self, rule: BreakpointRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn breakpoints(&self) -> &[Rational] {
        &self.breakpoints
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn rule(&self) -> BreakpointRule {
        self.rule
    }

    pub fn is_continuous(&self) -> bool {
        self.breakpoints
            .iter()
            .enumerate()
            .all(|(i, b)| self.pieces[i].at(b) == self.pieces[i + 1].at(b))
    }

    /// Index of the piece that owns `z` (breakpoints belong to the right
    /// piece) and the number of comparisons the binary search used.
    pub fn locate(&self, z: &Rational) -> (usize, u64) {
        let (mut lo, mut hi) = (0usize, self.breakpoints.len());
        let mut comparisons = 0;
        // first breakpoint strictly greater than z
        while lo < hi {
            let mid = (lo + hi) / 2;
            comparisons += 1;
            if &self.breakpoints[mid] <= z {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        (lo, comparisons)
    }

    pub fn eval(&self, z: &Rational) -> Rational {
        self.pieces[self.locate(z).0].at(z)
    }

    pub fn derivative(&self, z: &Rational) -> Rational {
        let (mut idx, _) = self.locate(z);
        if self.rule == BreakpointRule::Left && idx > 0 && &self.breakpoints[idx - 1] == z {
            idx -= 1;
        }
        self.pieces[idx].slope.clone()
    }

    /// Piece index when `z` is not a breakpoint.
    pub fn interior_piece(&self, z: &Rational) -> Option<usize> {
        if self.breakpoints.binary_search(z).is_ok() {
            None
        } else {
            Some(self.locate(z).0)
        }
    }
}

pub fn pwl_eval(act: &PwlActivation, z: &Rational) -> Rational {
    act.eval(z)
}

pub fn pwl_derivative(act: &PwlActivation, z: &Rational) -> Rational {
    act.derivative(z)
}

/// Inner function wrapped by a [`BitBoundedActivation`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BaseActivation {
    Identity,
    Poly(RationalPoly),
    Pwl(PwlActivation),
}

impl BaseActivation {
    pub fn eval(&self, z: &Rational) -> Rational {
        match self {
            BaseActivation::Identity => z.clone(),
            BaseActivation::Poly(p) => p.eval(z),
            BaseActivation::Pwl(a) => a.eval(z),
        }
    }

    pub fn derivative(&self, z: &Rational) -> Rational {
        match self {
            BaseActivation::Identity => Rational::one(),
            BaseActivation::Poly(p) => p.derivative().eval(z),
            BaseActivation::Pwl(a) => a.derivative(z),
        }
    }
}

/// Activation whose outputs are rounded down to multiples of `2^{-k}`,
/// optionally after clipping. Backpropagation uses the derivative of the
/// unwrapped base function.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitBoundedActivation {
    base: BaseActivation,
    k: u64,
    clip: Option<(Rational, Rational)>,
}

impl BitBoundedActivation {
    pub fn new(base: BaseActivation, k: u64, clip: Option<(Rational, Rational)>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("precision k must be ≥ 1".into()));
        }
        if let Some((lo, hi)) = &clip {
            if lo > hi {
                return Err(Error::InvalidParameter("clip interval is empty".into()));
            }
            if !lo.is_dyadic_with_precision(k) || !hi.is_dyadic_with_precision(k) {
                return Err(Error::InvalidParameter(format!(
                    "clip bounds must be multiples of 2^-{k}"
                )));
            }
        }
        Ok(BitBoundedActivation { base, k, clip })
    }

    pub fn base(&self) -> &BaseActivation {
        &self.base
    }

    pub fn precision(&self) -> u64 {
        self.k
    }

    pub fn clip(&self) -> Option<&(Rational, Rational)> {
        self.clip.as_ref()
    }

    pub fn eval(&self, z: &Rational) -> Rational {
        let mut v = self.base.eval(z);
        if let Some((lo, hi)) = &self.clip {
            if &v < lo {
                v = lo.clone();
            } else if &v > hi {
                v = hi.clone();
            }
        }
        let out = v.round_to_dyadic(self.k);
        debug_assert!(out.is_dyadic_with_precision(self.k));
        out
    }

    pub fn derivative(&self, z: &Rational) -> Rational {
        self.base.derivative(z)
    }
}

/// Per-vertex activation tag.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub enum Activation {
    #[default]
    Identity,
    Poly(RationalPoly),
    Pwl(PwlActivation),
    BitBounded(BitBoundedActivation),
}

impl Activation {
    pub fn is_identity(&self) -> bool {
        matches!(self, Activation::Identity)
    }

    pub fn eval(&self, z: &Rational) -> Rational {
        match self {
            Activation::Identity => z.clone(),
            Activation::Poly(p) => p.eval(z),
            Activation::Pwl(a) => a.eval(z),
            Activation::BitBounded(a) => a.eval(z),
        }
    }

    pub fn derivative(&self, z: &Rational) -> Rational {
        match self {
            Activation::Identity => Rational::one(),
            Activation::Poly(p) => p.derivative().eval(z),
            Activation::Pwl(a) => a.derivative(z),
            Activation::BitBounded(a) => a.derivative(z),
        }
    }

    /// Rough count of arithmetic operations and comparisons one evaluation costs.
    pub fn op_cost(&self, z: &Rational) -> u64 {
        match self {
            Activation::Identity => 0,
            Activation::Poly(p) => 2 * p.degree().unwrap_or(0) as u64,
            Activation::Pwl(a) => a.locate(z).1 + 2,
            Activation::BitBounded(a) => {
                let inner = match &a.base {
                    BaseActivation::Identity => 0,
                    BaseActivation::Poly(p) => 2 * p.degree().unwrap_or(0) as u64,
                    BaseActivation::Pwl(p) => p.locate(z).1 + 2,
                };
                inner + 3
            }
        }
    }

    /// True for activations whose backward pass stays polynomial in the
    /// bit model: identity, piecewise-linear, and bit-bounded maps.
    pub fn is_bit_tame(&self) -> bool {
        !matches!(self, Activation::Poly(_))
    }

    pub fn has_discontinuity(&self) -> bool {
        match self {
            Activation::Pwl(a) => !a.is_continuous(),
            Activation::BitBounded(_) => true,
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: &str) -> Rational {
        s.parse().unwrap()
    }

    #[test]
    fn relu_values() {
        let relu = PwlActivation::relu();
        assert_eq!(pwl_eval(&relu, &q("-3")), q("0"));
        assert_eq!(pwl_eval(&relu, &q("7/2")), q("7/2"));
        assert_eq!(pwl_eval(&relu, &q("0")), q("0"));
        let leaky = PwlActivation::leaky_relu(q("1/100"));
        assert_eq!(pwl_eval(&leaky, &q("-2")), q("-1/50"));
    }

    #[test]
    fn relu_derivatives() {
        let relu = PwlActivation::relu();
        assert_eq!(pwl_derivative(&relu, &q("5")), q("1"));
        assert_eq!(pwl_derivative(&relu, &q("-5")), q("0"));
        assert_eq!(pwl_derivative(&relu, &q("0")), q("1"));
        let left = PwlActivation::relu().with_rule(BreakpointRule::Left);
        assert_eq!(pwl_derivative(&left, &q("0")), q("0"));
        let leaky = PwlActivation::leaky_relu(q("1/100"));
        assert_eq!(pwl_derivative(&leaky, &q("-1")), q("1/100"));
    }

    #[test]
    fn construction_checks() {
        assert!(PwlActivation::new(
            vec![q("1"), q("1")],
            vec![
                Piece::new(q("0"), q("0")),
                Piece::new(q("0"), q("0")),
                Piece::new(q("0"), q("0")),
            ]
        )
        .is_err());
        assert!(PwlActivation::new(vec![q("1")], vec![Piece::new(q("0"), q("0"))]).is_err());
        // step function: discontinuous at 0
        let pieces = vec![Piece::new(q("0"), q("0")), Piece::new(q("0"), q("1"))];
        assert!(PwlActivation::continuous(vec![q("0")], pieces.clone()).is_err());
        let step = PwlActivation::new(vec![q("0")], pieces).unwrap();
        assert!(!step.is_continuous());
        assert_eq!(step.eval(&q("0")), q("1"));
    }

    #[test]
    fn multi_piece_search() {
        // hard-tanh-like clamp to [-1, 1]
        let act = PwlActivation::continuous(
            vec![q("-1"), q("1")],
            vec![
                Piece::new(q("0"), q("-1")),
                Piece::new(q("1"), q("0")),
                Piece::new(q("0"), q("1")),
            ],
        )
        .unwrap();
        assert_eq!(act.eval(&q("-5")), q("-1"));
        assert_eq!(act.eval(&q("1/3")), q("1/3"));
        assert_eq!(act.eval(&q("9")), q("1"));
        assert_eq!(act.interior_piece(&q("1")), None);
        assert_eq!(act.interior_piece(&q("2")), Some(2));
    }

    #[test]
    fn bit_bounded_identity() {
        let act = BitBoundedActivation::new(BaseActivation::Identity, 2, None).unwrap();
        assert_eq!(act.eval(&q("13/10")), q("5/4"));
        assert_eq!(act.derivative(&q("13/10")), q("1"));
        let clipped = BitBoundedActivation::new(
            BaseActivation::Poly(RationalPoly::monomial(2)),
            3,
            Some((q("-1"), q("1"))),
        )
        .unwrap();
        assert_eq!(clipped.eval(&q("5")), q("1"));
        assert_eq!(clipped.eval(&q("1/3")), q("0"));
        assert!(
            BitBoundedActivation::new(BaseActivation::Identity, 2, Some((q("1/3"), q("1"))))
                .is_err()
        );
    }
}
