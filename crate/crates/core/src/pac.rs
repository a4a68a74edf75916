//! Rounded-multiplier hypotheses `h_c(x) = round_q(c·x)` on `X_q = {2⁰,…,2^q}`
//! and a Monte-Carlo estimate of how often a learner that only sees `m`
//! samples is fooled by two hypotheses that agree everywhere except `2^q`.
//!
//! The simulation covers two concrete learners; it says nothing about
//! learners in general.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numbers::Rational;

/// `2^{-q}·⌊z·2^q⌋`.
pub fn round_q(z: &Rational, q: u64) -> Rational {
    z.round_to_dyadic(q)
}

/// Hypothesis class of rounded multipliers at precision `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundedMultiplierClass {
    pub q: u64,
}

impl RoundedMultiplierClass {
    pub fn new(q: u64) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidParameter("precision q must be ≥ 1".into()));
        }
        Ok(RoundedMultiplierClass { q })
    }

    /// `{2⁰, …, 2^q}`.
    pub fn domain(&self) -> Vec<Rational> {
        (0..=self.q).map(|k| Rational::pow2(k as i64)).collect()
    }

    pub fn eval(&self, c: &Rational, x: &Rational) -> Rational {
        round_q(&(c * x), self.q)
    }
}

/// Two multipliers sharing their first `2q−1` binary digits and differing
/// only in digit `2q`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdversarialPair {
    pub class: RoundedMultiplierClass,
    pub bits: Vec<u8>,
    pub c1: Rational,
    pub c2: Rational,
}

impl AdversarialPair {
    /// Position `2^q`, the one point where the pair disagrees.
    pub fn witness(&self) -> Rational {
        Rational::pow2(self.class.q as i64)
    }
}

/// Builds `c1 = 0.b₁…b_{2q−1}` and `c2 = c1 + 2^{-2q}` and checks that they
/// agree on `2⁰..2^{q−1}` and differ at `2^q`.
pub fn make_pair(q: u64, bits: &[u8]) -> Result<AdversarialPair> {
    let class = RoundedMultiplierClass::new(q)?;
    let want = 2 * q as usize - 1;
    if bits.len() != want {
        return Err(Error::InvalidParameter(format!(
            "need exactly {want} bits for q = {q}, got {}",
            bits.len()
        )));
    }
    if let Some(b) = bits.iter().find(|&&b| b > 1) {
        return Err(Error::InvalidParameter(format!(
            "bits must be 0 or 1, got {b}"
        )));
    }
    let c1: Rational = bits
        .iter()
        .enumerate()
        .filter(|(_, &b)| b == 1)
        .map(|(i, _)| Rational::pow2(-(i as i64 + 1)))
        .sum();
    let c2 = &c1 + &Rational::pow2(-2 * q as i64);
    let domain = class.domain();
    let (agree, last) = domain.split_at(q as usize);
    for x in agree {
        if class.eval(&c1, x) != class.eval(&c2, x) {
            return Err(Error::InvalidParameter(format!(
                "pair disagrees at x = {x}"
            )));
        }
    }
    if class.eval(&c1, &last[0]) == class.eval(&c2, &last[0]) {
        return Err(Error::InvalidParameter("pair agrees at 2^q".into()));
    }
    Ok(AdversarialPair {
        class,
        bits: bits.to_vec(),
        c1,
        c2,
    })
}

/// How a learner chooses between the two hypotheses of the pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Learner {
    /// Smallest consistent multiplier.
    MinC,
    /// Uniformly random consistent multiplier.
    Random,
}

impl FromStr for Learner {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" | "min-c" | "consistent-min-c" => Ok(Learner::MinC),
            "random" | "consistent-random" => Ok(Learner::Random),
            _ => Err(Error::InvalidParameter(format!("unknown learner {s:?}"))),
        }
    }
}

impl fmt::Display for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Learner::MinC => "min",
            Learner::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub q: u64,
    pub m: u64,
    pub trials: u64,
    pub learner: Learner,
    pub failures: u64,
    pub rate: f64,
    /// `½(q/(q+1))^m`.
    pub floor: f64,
    /// `√(p̂(1−p̂)/trials)`.
    pub std_error: f64,
    pub delta: f64,
    /// `q·ln(1/(2δ))`.
    pub bound: f64,
}

impl SimReport {
    /// `rate ≥ floor − 3σ̂`.
    pub fn meets_floor(&self) -> bool {
        self.rate >= self.floor - 3.0 * self.std_error
    }

    pub const CSV_HEADER: &'static str =
        "q,m,trials,learner,failures,empirical_rate,floor,std_error,delta,bound";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6},{},{:.6}",
            self.q,
            self.m,
            self.trials,
            self.learner,
            self.failures,
            self.rate,
            self.floor,
            self.std_error,
            self.delta,
            self.bound
        )
    }
}

pub fn failure_floor(q: u64, m: u64) -> f64 {
    0.5 * (q as f64 / (q as f64 + 1.0)).powi(m as i32)
}

/// `q·ln(1/(2δ))`.
pub fn sample_bound(q: u64, delta: f64) -> f64 {
    q as f64 * (1.0 / (2.0 * delta)).ln()
}

/// Picks a hypothesis from the pair consistent with the labelled sample.
pub fn learn_from_pair<R: Rng>(
    pair: &AdversarialPair,
    sample: &[(Rational, Rational)],
    learner: Learner,
    rng: &mut R,
) -> Rational {
    let consistent = |c: &Rational| sample.iter().all(|(x, y)| &pair.class.eval(c, x) == y);
    let candidates: Vec<&Rational> = [&pair.c1, &pair.c2]
        .into_iter()
        .filter(|c| consistent(c))
        .collect();
    match (candidates.as_slice(), learner) {
        ([only], _) => (*only).clone(),
        (_, Learner::MinC) => pair.c1.clone(),
        (_, Learner::Random) => {
            if rng.gen_bool(0.5) {
                pair.c1.clone()
            } else {
                pair.c2.clone()
            }
        }
    }
}

/// Monte-Carlo failure rate against the adversarial pair. Each trial draws
/// fresh shared bits, a uniform target from the pair, and `m` uniform samples.
pub fn simulate_lower_bound(
    q: u64,
    m: u64,
    trials: u64,
    learner: Learner,
    seed: u64,
    delta: f64,
) -> Result<SimReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter("need at least one trial".into()));
    }
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::InvalidParameter("δ must lie in (0, 1/2)".into()));
    }
    let class = RoundedMultiplierClass::new(q)?;
    let domain = class.domain();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for _ in 0..trials {
        let bits: Vec<u8> = (0..2 * q - 1).map(|_| rng.gen_range(0..=1)).collect();
        let pair = make_pair(q, &bits)?;
        let target = if rng.gen_bool(0.5) {
            &pair.c1
        } else {
            &pair.c2
        };
        let sample: Vec<(Rational, Rational)> = (0..m)
            .map(|_| {
                let x = domain[rng.gen_range(0..domain.len())].clone();
                let y = class.eval(target, &x);
                (x, y)
            })
            .collect();
        let guess = learn_from_pair(&pair, &sample, learner, &mut rng);
        // disagreement anywhere on X_q means error ≥ 1/(q+1)
        if domain
            .iter()
            .any(|x| class.eval(&guess, x) != class.eval(target, x))
        {
            failures += 1;
        }
    }
    let rate = failures as f64 / trials as f64;
    Ok(SimReport {
        q,
        m,
        trials,
        learner,
        failures,
        rate,
        floor: failure_floor(q, m),
        std_error: (rate * (1.0 - rate) / trials as f64).sqrt(),
        delta,
        bound: sample_bound(q, delta),
    })
}

/// Smallest `c ≥ 0` with `round_q(c·x) = y` for every sample, if any.
pub fn consistent_min_c(sample: &[(Rational, Rational)], q: u64) -> Option<Rational> {
    let step = Rational::pow2(-(q as i64));
    let mut lo = Rational::zero();
    let mut hi: Option<Rational> = None;
    for (x, y) in sample {
        if !x.is_positive() {
            return None;
        }
        // y ≤ c·x < y + 2^{-q}
        let a = y / x;
        let b = &(y + &step) / x;
        if a > lo {
            lo = a;
        }
        if hi.as_ref().is_none_or(|h| &b < h) {
            hi = Some(b);
        }
    }
    match hi {
        Some(h) if lo >= h => None,
        _ => Some(lo),
    }
}

/// Without rounding one labelled example `(x, c·x)` pins `c = y/x`.
pub fn exact_multiplier(x: &Rational, y: &Rational) -> Option<Rational> {
    if x.is_zero() {
        None
    } else {
        Some(y / x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(s: &str) -> Rational {
        s.parse().unwrap()
    }

    #[test]
    fn round_q_examples() {
        assert_eq!(round_q(&q("13/10"), 2), q("5/4"));
        assert_eq!(round_q(&q("5/2"), 2), q("5/2"));
        assert_eq!(round_q(&q("1/3"), 1), q("0"));
    }

    #[test]
    fn pair_examples() {
        let p = make_pair(1, &[1]).unwrap();
        assert_eq!((p.c1.clone(), p.c2.clone()), (q("1/2"), q("3/4")));
        assert_eq!(p.class.eval(&p.c1, &q("1")), q("1/2"));
        assert_eq!(p.class.eval(&p.c2, &q("1")), q("1/2"));
        assert_eq!(p.class.eval(&p.c1, &q("2")), q("1"));
        assert_eq!(p.class.eval(&p.c2, &q("2")), q("3/2"));

        let p = make_pair(1, &[0]).unwrap();
        assert_eq!((p.c1.clone(), p.c2.clone()), (q("0"), q("1/4")));
        assert_eq!(p.class.eval(&p.c2, &q("1")), q("0"));
        assert_eq!(p.class.eval(&p.c2, &q("2")), q("1/2"));

        let p = make_pair(3, &[0; 5]).unwrap();
        assert!(p
            .class
            .domain()
            .iter()
            .all(|x| p.class.eval(&p.c1, x).is_zero()));
        assert!(make_pair(2, &[1, 0]).is_err());
    }

    #[test]
    fn sampling_the_witness_identifies_the_target() {
        let p = make_pair(2, &[1, 0, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for target in [&p.c1, &p.c2] {
            let x = p.witness();
            let sample = vec![(x.clone(), p.class.eval(target, &x))];
            for learner in [Learner::MinC, Learner::Random] {
                assert_eq!(&learn_from_pair(&p, &sample, learner, &mut rng), target);
            }
        }
    }

    #[test]
    fn blind_learner_fails_half_the_time() {
        let r = simulate_lower_bound(3, 0, 4000, Learner::MinC, 7, 0.25).unwrap();
        assert!(r.meets_floor());
        assert!((r.rate - 0.5).abs() < 0.05);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = simulate_lower_bound(2, 3, 500, Learner::Random, 11, 0.1).unwrap();
        let b = simulate_lower_bound(2, 3, 500, Learner::Random, 11, 0.1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn general_consistent_learner() {
        let p = make_pair(2, &[1, 1, 0]).unwrap();
        let sample: Vec<_> = p
            .class
            .domain()
            .into_iter()
            .map(|x| {
                let y = p.class.eval(&p.c2, &x);
                (x, y)
            })
            .collect();
        let c = consistent_min_c(&sample, 2).unwrap();
        assert!(sample.iter().all(|(x, y)| &p.class.eval(&c, x) == y));
        assert!(c <= p.c2);
        assert_eq!(
            consistent_min_c(&[(q("1"), q("1/4")), (q("2"), q("0"))], 2),
            None
        );
    }

    #[test]
    fn real_model_needs_one_sample() {
        let c = q("5/17");
        let x = q("3/2");
        assert_eq!(exact_multiplier(&x, &(&c * &x)), Some(c));
        assert_eq!(exact_multiplier(&q("0"), &q("0")), None);
    }

    proptest! {
        #[test]
        fn pair_invariants(qq in 1u64..=12, raw in prop::collection::vec(0u8..=1, 23)) {
            let bits = &raw[..(2 * qq - 1) as usize];
            let p = make_pair(qq, bits).unwrap();
            let x = p.witness();
            let gap = &p.class.eval(&p.c2, &x) - &p.class.eval(&p.c1, &x);
            prop_assert_eq!(gap, Rational::pow2(-(qq as i64)));
        }
    }
}
