//! Reduction of a constant-1 program to a bounded-norm program.
//!
//! Every gate `a_i` of the source is simulated by a gate holding
//! `b₀^{e_i}·a_i` with `b₀ = 2^{-m}`. Additions first align both operands to
//! the larger exponent by multiplying with `b₀^t` (repeated squaring, then
//! one multiplication per set bit of `t`); a final alignment lifts the
//! output exponent to `2^n`. The emitted program has exactly `m` gates, so
//! every gate value lies in `[-1, 1]` and the output equals
//! `2^{-m·2^n}·n_P`.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::numbers::Rational;
use crate::slp::{Gate, Op, Slp};

/// Output of [`normalize_bn`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BnProgram {
    /// The bounded-norm program; its constant is `2^{-m}`.
    pub program: Slp,
    /// `m`, the number of emitted gates.
    pub gate_count: usize,
    /// `m·2^n` where `n` is the source length.
    pub scale_exponent: BigUint,
    /// For each source gate `i`, the index in `program` holding `b₀^{e_i}·a_i`.
    pub gate_map: Vec<usize>,
    /// The exponents `e_i`.
    pub exponents: Vec<BigUint>,
}

impl BnProgram {
    /// `scale_exponent` as a machine integer, when it fits.
    pub fn scale_exponent_u64(&self) -> Option<u64> {
        self.scale_exponent.to_u64()
    }
}

/// Gate sink shared by the counting pass and the emission pass.
struct Emitter {
    gates: Vec<Gate>,
    dry_run: bool,
    count: usize,
}

impl Emitter {
    fn emit(&mut self, op: Op, left: usize, right: usize) -> usize {
        self.count += 1;
        if !self.dry_run {
            self.gates.push(Gate { op, left, right });
        }
        self.count
    }

    /// Multiplies gate `z` by `b₀^t` (gate 0 holds `b₀`); `t = 0` is a no-op.
    fn times_b0_pow(&mut self, z: usize, t: &BigUint) -> usize {
        if t.is_zero() {
            return z;
        }
        let top = t.bits() - 1;
        // powers[r] holds b₀^{2^r}
        let mut powers = Vec::with_capacity(top as usize + 1);
        powers.push(0usize);
        for r in 0..top as usize {
            let p = powers[r];
            powers.push(self.emit(Op::Mul, p, p));
        }
        let mut acc = z;
        for (r, &p) in powers.iter().enumerate() {
            if t.bit(r as u64) {
                acc = self.emit(Op::Mul, acc, p);
            }
        }
        acc
    }
}

struct Trace {
    gate_map: Vec<usize>,
    exponents: Vec<BigUint>,
}

fn run(p: &Slp, emitter: &mut Emitter) -> Trace {
    let n = p.len();
    let mut gate_map = Vec::with_capacity(n + 1);
    let mut exponents: Vec<BigUint> = Vec::with_capacity(n + 1);
    gate_map.push(0);
    exponents.push(BigUint::one());
    for g in p.gates() {
        let (j, k) = (g.left, g.right);
        let (idx, e) = match g.op {
            Op::Mul => {
                let idx = emitter.emit(Op::Mul, gate_map[j], gate_map[k]);
                (idx, &exponents[j] + &exponents[k])
            }
            Op::Add | Op::Sub => {
                let e = exponents[j].clone().max(exponents[k].clone());
                let left = emitter.times_b0_pow(gate_map[j], &(&e - &exponents[j]));
                let right = emitter.times_b0_pow(gate_map[k], &(&e - &exponents[k]));
                (emitter.emit(g.op, left, right), e)
            }
        };
        gate_map.push(idx);
        exponents.push(e);
    }
    let target = BigUint::one() << n;
    let last = *gate_map.last().expect("gate 0 present");
    let shift = &target - exponents.last().expect("gate 0 present");
    let out = emitter.times_b0_pow(last, &shift);
    if out != last {
        gate_map.push(out);
        exponents.push(target);
    }
    Trace {
        gate_map,
        exponents,
    }
}

/// Counts the gates the construction will emit without building them.
pub fn count_bn_gates(p: &Slp) -> usize {
    let mut e = Emitter {
        gates: Vec::new(),
        dry_run: true,
        count: 0,
    };
    run(p, &mut e);
    e.count
}

/// Bounded-norm normalization of a program with constant 1.
pub fn normalize_bn(p: &Slp) -> Result<BnProgram> {
    if !p.constant().is_one() {
        return Err(Error::NormalizeConstant(p.constant().clone()));
    }
    let m = count_bn_gates(p);
    let mut e = Emitter {
        gates: Vec::with_capacity(m),
        dry_run: false,
        count: 0,
    };
    let trace = run(p, &mut e);
    debug_assert_eq!(e.count, m);
    let program = Slp::new(Rational::pow2(-(m as i64)), e.gates)?;
    let mut gate_map = trace.gate_map;
    let mut exponents = trace.exponents;
    // the trailing alignment entry is not a source gate
    gate_map.truncate(p.len() + 1);
    exponents.truncate(p.len() + 1);
    Ok(BnProgram {
        program,
        gate_count: m,
        scale_exponent: BigUint::from(m) << p.len(),
        gate_map,
        exponents,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slp::{eval_slp, squaring_chain};

    fn check(p: &Slp) -> BnProgram {
        let bn = normalize_bn(p).unwrap();
        let q = eval_slp(&bn.program, None).unwrap();
        let n_p = eval_slp(p, None).unwrap().value;
        let scale = Rational::pow2(-(bn.scale_exponent_u64().unwrap() as i64));
        assert_eq!(q.value, &scale * &n_p);
        assert_eq!(bn.program.len(), bn.gate_count);
        let one = Rational::one();
        for v in &q.values {
            assert!(v.abs() <= one, "gate value {v} outside [-1,1]");
        }
        bn
    }

    #[test]
    fn single_add() {
        let p = Slp::parse("const 1\nadd 0 0").unwrap();
        let bn = check(&p);
        // exponents: e0 = 1, e1 = 1, output lifted to 2 with one multiplication
        assert_eq!(bn.gate_count, 2);
        assert_eq!(bn.scale_exponent, BigUint::from(4u32));
    }

    #[test]
    fn empty_program() {
        let p = Slp::parse("const 1").unwrap();
        let bn = check(&p);
        assert_eq!(bn.gate_count, 0);
        assert_eq!(bn.program.constant(), &Rational::one());
    }

    #[test]
    fn squaring_chain_needs_no_alignment_after_first_gate() {
        let bn = check(&squaring_chain(4));
        assert!(bn.gate_count <= 8);
    }

    #[test]
    fn mixed_program() {
        let p = Slp::parse("const 1\nadd 0 0\nmul 1 1\nsub 2 0\nmul 3 1\nadd 4 2").unwrap();
        check(&p);
    }

    #[test]
    fn rejects_other_constants() {
        let p = Slp::parse("const 2\nadd 0 0").unwrap();
        assert!(matches!(normalize_bn(&p), Err(Error::NormalizeConstant(_))));
    }

    #[test]
    fn power_gadget_multiplies_by_b0_to_t() {
        // z = b₀ = 1/2, t = 5 = 101b: gate holding z·b₀^5 = 1/64 = (1/2)/32
        let mut e = Emitter {
            gates: Vec::new(),
            dry_run: false,
            count: 0,
        };
        let out = e.times_b0_pow(0, &BigUint::from(5u32));
        let p = Slp::new(Rational::ratio(1, 2), e.gates).unwrap();
        let values = p.values(1 << 20).unwrap();
        assert_eq!(values[out], Rational::ratio(1, 64));
        // two squarings for b₀^2, b₀^4; two multiplications for the set bits
        assert_eq!(p.len(), 4);
    }
}
