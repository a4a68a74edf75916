#![allow(dead_code)]

use exactnet_core::{Op, Rational, RationalPoly, Slp};
use rand::Rng;

pub fn q(s: &str) -> Rational {
    s.parse().unwrap()
}

/// Constant-1 program with `1..=max_gates` gates; operands are uniform over
/// earlier gates so every op type shows up.
pub fn random_slp<R: Rng>(rng: &mut R, max_gates: usize) -> Slp {
    let mut p = Slp::new(Rational::one(), Vec::new()).unwrap();
    let n = rng.gen_range(1..=max_gates);
    for i in 1..=n {
        let op = match rng.gen_range(0..3) {
            0 => Op::Add,
            1 => Op::Sub,
            _ => Op::Mul,
        };
        p.push(op, rng.gen_range(0..i), rng.gen_range(0..i))
            .unwrap();
    }
    p
}

/// Plain left-to-right evaluation, independent of the library evaluator.
pub fn naive_values(p: &Slp) -> Vec<Rational> {
    let mut vals = vec![p.constant().clone()];
    for g in p.gates() {
        let (a, b) = (&vals[g.left], &vals[g.right]);
        let v = match g.op {
            Op::Add => a + b,
            Op::Sub => a - b,
            Op::Mul => a * b,
        };
        vals.push(v);
    }
    vals
}

/// Activations the gadgets are exercised with.
pub fn sigmas() -> Vec<RationalPoly> {
    vec![
        RationalPoly::monomial(2),
        RationalPoly::from_ints(&[0, 1, 1]),
        RationalPoly::new(vec![q("2"), q("-1"), q("0"), q("1/2")]),
    ]
}
