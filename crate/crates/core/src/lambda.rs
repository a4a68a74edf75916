//! Product-identity coefficients for polynomial activations.
//!
//! For a polynomial `σ` of degree `μ ≥ 2` the shifted copies
//! `σ(U), σ(U+1), …, σ(U+μ)` span all polynomials of degree `≤ μ`, so `U²`
//! has unique coordinates `λ̃_j` in that basis. Polarization then gives
//!
//! ```text
//! Σ_j λ_j (σ(x+y+j) − σ(x+j) − σ(y+j)) = x·y,   λ_j = λ̃_j / 2.
//! ```

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numbers::{common_denominator, Rational};
use crate::poly::{shift_expand, RationalPoly};

/// Coefficients realizing `x·y` from shifted activation evaluations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LambdaCoeffs {
    /// `λ_0..λ_μ`.
    pub lambdas: Vec<Rational>,
    /// `D`: lcm of the denominators of `σ`'s coefficients and of every `λ_j`.
    pub common_denominator: BigInt,
    /// `λ'_j = D·λ_j`.
    pub integer_lambdas: Vec<BigInt>,
}

impl LambdaCoeffs {
    pub fn degree(&self) -> usize {
        self.lambdas.len() - 1
    }

    /// `λ'_j` as rationals.
    pub fn integer_lambda(&self, j: usize) -> Rational {
        Rational::from_integer(self.integer_lambdas[j].clone())
    }

    /// `1/D`.
    pub fn inverse_denominator(&self) -> Rational {
        Rational::new(BigInt::one(), self.common_denominator.clone()).expect("D ≥ 1")
    }
}

/// Matrix whose column `j` holds the coefficients of `σ(U + j)`.
pub fn shift_matrix(sigma: &RationalPoly) -> Vec<Vec<Rational>> {
    let mu = sigma.degree().unwrap_or(0);
    let columns: Vec<RationalPoly> = (0..=mu as u64).map(|j| shift_expand(sigma, j)).collect();
    (0..=mu)
        .map(|q| columns.iter().map(|c| c.coeff(q)).collect())
        .collect()
}

/// Solves `A·x = b` for an integer matrix by fraction-free (Bareiss)
/// elimination with row pivoting. Returns `None` when `A` is singular.
pub fn bareiss_solve(a: &[Vec<BigInt>], b: &[BigInt]) -> Option<Vec<Rational>> {
    let n = a.len();
    let mut m: Vec<Vec<BigInt>> = a
        .iter()
        .zip(b)
        .map(|(row, rhs)| {
            assert_eq!(row.len(), n, "matrix must be square");
            let mut r = row.clone();
            r.push(rhs.clone());
            r
        })
        .collect();
    let mut prev = BigInt::one();
    for k in 0..n {
        let pivot = (k..n).find(|&r| !m[r][k].is_zero())?;
        m.swap(k, pivot);
        for i in k + 1..n {
            for j in k + 1..=n {
                let v = &m[k][k] * &m[i][j] - &m[i][k] * &m[k][j];
                let (quot, rem) = v.div_rem(&prev);
                debug_assert!(rem.is_zero(), "Bareiss division is exact");
                m[i][j] = quot;
            }
            m[i][k] = BigInt::zero();
        }
        prev = m[k][k].clone();
    }
    let mut x = vec![Rational::zero(); n];
    for i in (0..n).rev() {
        let mut acc = Rational::from_integer(m[i][n].clone());
        for j in i + 1..n {
            acc -= &(&Rational::from_integer(m[i][j].clone()) * &x[j]);
        }
        x[i] = &acc / &Rational::from_integer(m[i][i].clone());
    }
    Some(x)
}

/// Computes `λ_0..λ_μ`, the common denominator `D`, and `λ'_j = D·λ_j`.
pub fn solve_lambda(sigma: &RationalPoly) -> Result<LambdaCoeffs> {
    let mu = match sigma.degree() {
        Some(d) if d >= 2 => d,
        other => return Err(Error::DegreeTooLow(other.unwrap_or(0))),
    };
    let sigma_den = common_denominator(sigma.coeffs());
    let scale = Rational::from_integer(sigma_den.clone());
    let matrix: Vec<Vec<BigInt>> = shift_matrix(sigma)
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|c| {
                    let s = &c * &scale;
                    debug_assert!(s.is_integer());
                    s.numer().clone()
                })
                .collect()
        })
        .collect();
    let mut rhs = vec![BigInt::zero(); mu + 1];
    rhs[2] = sigma_den.clone();
    let shifted = bareiss_solve(&matrix, &rhs).ok_or(Error::SingularSystem)?;
    let half = Rational::ratio(1, 2);
    let lambdas: Vec<Rational> = shifted.iter().map(|l| l * &half).collect();
    let common = sigma_den.lcm(&common_denominator(&lambdas));
    let d = Rational::from_integer(common.clone());
    let integer_lambdas = lambdas
        .iter()
        .map(|l| {
            let v = l * &d;
            debug_assert!(v.is_integer());
            v.numer().clone()
        })
        .collect();
    Ok(LambdaCoeffs {
        lambdas,
        common_denominator: common,
        integer_lambdas,
    })
}

/// `Σ_j λ_j (σ(x+y+j) − σ(x+j) − σ(y+j))`.
pub fn product_identity_value(
    sigma: &RationalPoly,
    lambdas: &[Rational],
    x: &Rational,
    y: &Rational,
) -> Rational {
    let xy = x + y;
    lambdas
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.is_zero())
        .map(|(j, l)| {
            let shift = Rational::from(j as i64);
            let term = &(&sigma.eval(&(&xy + &shift)) - &sigma.eval(&(x + &shift)))
                - &sigma.eval(&(y + &shift));
            l * &term
        })
        .sum()
}

/// `Σ_j 2λ_j σ(U+j) − U²`; the zero polynomial when the coefficients are right.
pub fn shifted_residual(sigma: &RationalPoly, lam: &LambdaCoeffs) -> RationalPoly {
    let two = Rational::from(2);
    let combo = lam
        .lambdas
        .iter()
        .enumerate()
        .fold(RationalPoly::default(), |acc, (j, l)| {
            acc.add(&shift_expand(sigma, j as u64).scale(&(l * &two)))
        });
    combo.sub(&RationalPoly::monomial(2))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentityCounterexample {
    pub x: Rational,
    pub y: Rational,
    pub lhs: Rational,
    pub expected: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentityReport {
    pub trials: usize,
    pub failure: Option<IdentityCounterexample>,
}

impl IdentityReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

/// Random rational with numerator in `[-2^16, 2^16]` and denominator in `[1, 2^16]`.
pub fn random_rational<R: Rng>(rng: &mut R) -> Rational {
    let n: i64 = rng.gen_range(-(1 << 16)..=(1 << 16));
    let d: i64 = rng.gen_range(1..=(1 << 16));
    Rational::ratio(n, d)
}

/// Checks the identity exactly at `trials` seeded random points; stops at
/// the first mismatch.
pub fn verify_product_identity(
    sigma: &RationalPoly,
    lam: &LambdaCoeffs,
    trials: usize,
    seed: u64,
) -> IdentityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..trials {
        let x = random_rational(&mut rng);
        let y = random_rational(&mut rng);
        let lhs = product_identity_value(sigma, &lam.lambdas, &x, &y);
        let expected = &x * &y;
        if lhs != expected {
            return IdentityReport {
                trials: t + 1,
                failure: Some(IdentityCounterexample {
                    x,
                    y,
                    lhs,
                    expected,
                }),
            };
        }
    }
    IdentityReport {
        trials,
        failure: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: &str) -> Rational {
        s.parse().unwrap()
    }

    /// Plain Gauss–Jordan over rationals on the moment system
    /// `Σ_j λ̃_j·[coefficient of U^q in (U+j)^μ] = [q = 2]`, kept independent
    /// of the Bareiss path.
    fn monomial_oracle(mu: usize) -> Vec<Rational> {
        let n = mu + 1;
        let binom = |n: usize, k: usize| -> i64 {
            (0..k).fold(1i64, |acc, i| acc * (n - i) as i64 / (i + 1) as i64)
        };
        let mut a: Vec<Vec<Rational>> = (0..n)
            .map(|q| {
                let mut row: Vec<Rational> = (0..n)
                    .map(|j| Rational::from(binom(mu, q) * (j as i64).pow((mu - q) as u32)))
                    .collect();
                row.push(if q == 2 {
                    Rational::one()
                } else {
                    Rational::zero()
                });
                row
            })
            .collect();
        for col in 0..n {
            let p = (col..n).find(|&r| !a[r][col].is_zero()).unwrap();
            a.swap(col, p);
            let inv = a[col][col].recip().unwrap();
            for v in a[col].iter_mut() {
                *v = &*v * &inv;
            }
            for r in 0..n {
                if r != col && !a[r][col].is_zero() {
                    let f = a[r][col].clone();
                    let pivot_row = a[col].clone();
                    for (v, p) in a[r].iter_mut().zip(&pivot_row) {
                        *v = &*v - &(&f * p);
                    }
                }
            }
        }
        a.iter().map(|row| &row[n] * &q("1/2")).collect()
    }

    #[test]
    fn square_activation() {
        let lam = solve_lambda(&RationalPoly::monomial(2)).unwrap();
        assert_eq!(lam.lambdas, vec![q("1/2"), q("0"), q("0")]);
        assert_eq!(lam.common_denominator, BigInt::from(2));
        assert_eq!(
            lam.integer_lambdas,
            vec![BigInt::from(1), BigInt::from(0), BigInt::from(0)]
        );
    }

    #[test]
    fn cube_activation_matches_moment_oracle() {
        let oracle = monomial_oracle(3);
        assert_eq!(oracle, vec![q("-11/36"), q("1/2"), q("-1/4"), q("1/18")]);
        let lam = solve_lambda(&RationalPoly::monomial(3)).unwrap();
        assert_eq!(lam.lambdas, oracle);
        let at_one =
            product_identity_value(&RationalPoly::monomial(3), &lam.lambdas, &q("1"), &q("1"));
        assert_eq!(at_one, q("1"));
        assert_eq!(lam.common_denominator, BigInt::from(36));
    }

    #[test]
    fn higher_monomials_match_oracle() {
        for mu in 2..=6 {
            let lam = solve_lambda(&RationalPoly::monomial(mu)).unwrap();
            assert_eq!(lam.lambdas, monomial_oracle(mu), "degree {mu}");
        }
    }

    #[test]
    fn degree_below_two_rejected() {
        assert_eq!(
            solve_lambda(&RationalPoly::monomial(1)),
            Err(Error::DegreeTooLow(1))
        );
        assert_eq!(
            solve_lambda(&RationalPoly::from_ints(&[3])),
            Err(Error::DegreeTooLow(0))
        );
        assert_eq!(
            solve_lambda(&RationalPoly::default()),
            Err(Error::DegreeTooLow(0))
        );
    }

    #[test]
    fn identity_examples() {
        let sq = RationalPoly::monomial(2);
        let lam = solve_lambda(&sq).unwrap();
        assert_eq!(
            product_identity_value(&sq, &lam.lambdas, &q("3"), &q("5")),
            q("15")
        );
        assert!(verify_product_identity(&sq, &lam, 50, 7).passed());

        let wrong = LambdaCoeffs {
            lambdas: vec![q("1"), q("0"), q("0")],
            common_denominator: BigInt::from(1),
            integer_lambdas: vec![BigInt::from(1), BigInt::from(0), BigInt::from(0)],
        };
        let report = verify_product_identity(&sq, &wrong, 50, 7);
        let cex = report.failure.expect("scaled coefficients must fail");
        assert_eq!(cex.lhs, &cex.expected * &q("2"));
    }

    #[test]
    fn integerized_identity_holds() {
        let sigma: RationalPoly = "1/3,-2,0,5/7".parse().unwrap();
        let lam = solve_lambda(&sigma).unwrap();
        let d = Rational::from_integer(lam.common_denominator.clone());
        let ints: Vec<Rational> = (0..=3).map(|j| lam.integer_lambda(j)).collect();
        let (x, y) = (q("-7/3"), q("11/5"));
        assert_eq!(
            product_identity_value(&sigma, &ints, &x, &y),
            &(&d * &x) * &y
        );
        assert!(shifted_residual(&sigma, &lam).is_zero());
    }

    #[test]
    fn bareiss_singular() {
        let a = vec![
            vec![BigInt::from(1), BigInt::from(2)],
            vec![BigInt::from(2), BigInt::from(4)],
        ];
        assert!(bareiss_solve(&a, &[BigInt::from(1), BigInt::from(1)]).is_none());
    }
}
