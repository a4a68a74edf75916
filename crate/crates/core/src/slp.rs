//! Numeric straight-line programs: text format, exact evaluation, and the
//! bit/sign queries built on it.
//!
//! Source format, one statement per line, `#` starts a comment:
//!
//! ```text
//! const 1
//! add 0 0     # gate 1 = 2
//! mul 1 1     # gate 2 = 4
//! ```
//!
//! Gate 0 is the constant; gate `i` may only reference gates `< i`.

use std::fmt;

use crate::error::{Error, Result};
use crate::numbers::{BitLen, Rational, SignClass};

/// Default cap on the bit-length of any intermediate value.
pub const DEFAULT_MAX_BITS: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Add,
    Sub,
    Mul,
}

impl Op {
    pub fn mnemonic(self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
        }
    }

    pub fn apply(self, a: &Rational, b: &Rational) -> Rational {
        match self {
            Op::Add => a + b,
            Op::Sub => a - b,
            Op::Mul => a * b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Gate {
    pub op: Op,
    pub left: usize,
    pub right: usize,
}

/// A numeric straight-line program `(a₀, a₁, …, a_ℓ)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slp {
    constant: Rational,
    gates: Vec<Gate>,
}

impl Slp {
    /// Validates the forward-reference rule: gate `i` (1-based) reads
    /// only from gates `0..i`.
    pub fn new(constant: Rational, gates: Vec<Gate>) -> Result<Self> {
        for (pos, g) in gates.iter().enumerate() {
            let index = pos + 1;
            for operand in [g.left, g.right] {
                if operand >= index {
                    return Err(Error::ForwardReference {
                        line: index + 1,
                        gate: index,
                        operand,
                    });
                }
            }
        }
        Ok(Slp { constant, gates })
    }

    pub fn constant(&self) -> &Rational {
        &self.constant
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    /// Number of gates `ℓ` (the constant is not counted).
    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    /// Index of the output gate.
    pub fn output(&self) -> usize {
        self.gates.len()
    }

    pub fn count(&self, op: Op) -> usize {
        self.gates.iter().filter(|g| g.op == op).count()
    }

    /// Appends a gate and returns its index.
    pub fn push(&mut self, op: Op, left: usize, right: usize) -> Result<usize> {
        let index = self.gates.len() + 1;
        for operand in [left, right] {
            if operand >= index {
                return Err(Error::ForwardReference {
                    line: index + 1,
                    gate: index,
                    operand,
                });
            }
        }
        self.gates.push(Gate { op, left, right });
        Ok(index)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut constant = None;
        let mut gates = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let mut words = body.split_whitespace();
            let head = words.next().expect("non-empty line");
            let syntax = |message: String| Error::SlpSyntax { line, message };
            if constant.is_none() {
                if head != "const" {
                    return Err(if ["add", "sub", "mul"].contains(&head) {
                        Error::MissingConst
                    } else {
                        syntax(format!("expected `const <rational>`, found {head:?}"))
                    });
                }
                let value = words
                    .next()
                    .ok_or_else(|| syntax("`const` needs a value".into()))?;
                if words.next().is_some() {
                    return Err(syntax("trailing tokens after constant".into()));
                }
                constant = Some(
                    value
                        .parse::<Rational>()
                        .map_err(|e| syntax(e.to_string()))?,
                );
                continue;
            }
            let op = match head {
                "add" => Op::Add,
                "sub" => Op::Sub,
                "mul" => Op::Mul,
                "const" => return Err(syntax("duplicate `const`".into())),
                other => return Err(syntax(format!("unknown operation {other:?}"))),
            };
            let mut operand = || -> Result<usize> {
                let tok = words
                    .next()
                    .ok_or_else(|| syntax(format!("`{head}` needs two operands")))?;
                tok.parse::<usize>()
                    .map_err(|_| syntax(format!("bad gate index {tok:?}")))
            };
            let left = operand()?;
            let right = operand()?;
            if words.next().is_some() {
                return Err(syntax("trailing tokens after operands".into()));
            }
            let gate = gates.len() + 1;
            for o in [left, right] {
                if o >= gate {
                    return Err(Error::ForwardReference {
                        line,
                        gate,
                        operand: o,
                    });
                }
            }
            gates.push(Gate { op, left, right });
        }
        let constant = constant.ok_or(Error::MissingConst)?;
        Ok(Slp { constant, gates })
    }

    /// Exact gate-by-gate evaluation; fails once any value exceeds `max_bits`.
    pub fn eval(&self, max_bits: u64) -> Result<SlpValueReport> {
        let values = self.values(max_bits)?;
        let bit_lengths: Vec<BitLen> = values.iter().map(Rational::bit_length).collect();
        let max_bit_length = bit_lengths.iter().copied().max().unwrap_or_default();
        Ok(SlpValueReport {
            value: values.last().expect("gate 0 always present").clone(),
            bit_lengths,
            max_bit_length,
            values,
        })
    }

    /// All gate values `a₀..a_ℓ`.
    pub fn values(&self, max_bits: u64) -> Result<Vec<Rational>> {
        let check = |q: &Rational, gate: usize| -> Result<()> {
            let bits = q.bit_length().get();
            if bits > max_bits {
                Err(Error::budget(max_bits, bits, format!("gate {gate}")))
            } else {
                Ok(())
            }
        };
        check(&self.constant, 0)?;
        let mut values = Vec::with_capacity(self.gates.len() + 1);
        values.push(self.constant.clone());
        for (pos, g) in self.gates.iter().enumerate() {
            let v = g.op.apply(&values[g.left], &values[g.right]);
            check(&v, pos + 1)?;
            values.push(v);
        }
        Ok(values)
    }

    /// The `j`-th low-order bit of `⌊|n_P|⌋`.
    pub fn bit(&self, j: u64, max_bits: u64) -> Result<u8> {
        Ok(self.eval(max_bits)?.value.bit(j))
    }

    pub fn sign(&self, max_bits: u64) -> Result<SignClass> {
        Ok(self.eval(max_bits)?.value.sign_class())
    }

    /// Program computing `2·n_P − 1`, used by the hinge-loss reduction.
    /// Requires constant 1 so that the constant gate supplies the `1`.
    pub fn doubled_minus_one(&self) -> Result<Slp> {
        if !self.constant.is_one() {
            return Err(Error::InvalidParameter(format!(
                "2·n_P − 1 construction needs constant 1, found {}",
                self.constant
            )));
        }
        let mut q = self.clone();
        let out = q.output();
        let doubled = q.push(Op::Add, out, out)?;
        q.push(Op::Sub, doubled, 0)?;
        Ok(q)
    }
}

impl fmt::Display for Slp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "const {}", self.constant)?;
        for g in &self.gates {
            writeln!(f, "{} {} {}", g.op.mnemonic(), g.left, g.right)?;
        }
        Ok(())
    }
}

impl std::str::FromStr for Slp {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Slp::parse(s)
    }
}

/// Result of exact evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlpValueReport {
    /// `n_P`, the value of the last gate.
    pub value: Rational,
    /// Bit-length of every gate, gate 0 first.
    pub bit_lengths: Vec<BitLen>,
    pub max_bit_length: BitLen,
    pub values: Vec<Rational>,
}

pub fn parse_slp(text: &str) -> Result<Slp> {
    Slp::parse(text)
}

pub fn eval_slp(p: &Slp, max_bits: Option<u64>) -> Result<SlpValueReport> {
    p.eval(max_bits.unwrap_or(DEFAULT_MAX_BITS))
}

pub fn bit_of_slp(p: &Slp, j: u64) -> Result<u8> {
    p.bit(j, DEFAULT_MAX_BITS)
}

pub fn sign_of_slp(p: &Slp) -> Result<SignClass> {
    p.sign(DEFAULT_MAX_BITS)
}

/// `const 1; add 0 0; mul 1 1; …` with `len` gates: value `2^{2^{len−1}}`.
pub fn squaring_chain(len: usize) -> Slp {
    let mut p = Slp::new(Rational::one(), Vec::new()).expect("empty program");
    if len == 0 {
        return p;
    }
    p.push(Op::Add, 0, 0).expect("valid");
    for i in 1..len {
        p.push(Op::Mul, i, i).expect("valid");
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;

    fn q(s: &str) -> Rational {
        s.parse().unwrap()
    }

    #[test]
    fn parse_examples() {
        let p = Slp::parse("const 1\nadd 0 0\n").unwrap();
        assert_eq!(p.constant(), &q("1"));
        assert_eq!(
            p.gates(),
            &[Gate {
                op: Op::Add,
                left: 0,
                right: 0
            }]
        );

        let p = Slp::parse("# squaring\nconst 1\nadd 0 0\nmul 1 1  # 4\nmul 2 2\n").unwrap();
        assert_eq!(p.len(), 3);

        let err = Slp::parse("const 1\nadd 2 0\n").unwrap_err();
        assert!(matches!(
            err,
            Error::ForwardReference {
                line: 2,
                gate: 1,
                operand: 2
            }
        ));
    }

    #[test]
    fn parse_errors() {
        assert_eq!(Slp::parse("add 0 0").unwrap_err(), Error::MissingConst);
        assert_eq!(Slp::parse("# nothing\n").unwrap_err(), Error::MissingConst);
        assert!(matches!(
            Slp::parse("const 1\npow 0 0").unwrap_err(),
            Error::SlpSyntax { line: 2, .. }
        ));
        assert!(matches!(
            Slp::parse("const 1\n\nadd 0").unwrap_err(),
            Error::SlpSyntax { line: 3, .. }
        ));
        assert!(matches!(
            Slp::parse("const x").unwrap_err(),
            Error::SlpSyntax { line: 1, .. }
        ));
        assert!(Slp::parse("const 1\nconst 2").is_err());
    }

    #[test]
    fn display_parses_back() {
        let p = Slp::parse("const -3/4\nadd 0 0\nmul 1 0\nsub 2 1").unwrap();
        assert_eq!(Slp::parse(&p.to_string()).unwrap(), p);
    }

    #[test]
    fn eval_examples() {
        let p = squaring_chain(3);
        assert_eq!(eval_slp(&p, None).unwrap().value, q("16"));
        let half = Slp::parse("const 1/2\nmul 0 0").unwrap();
        assert_eq!(eval_slp(&half, None).unwrap().value, q("1/4"));
    }

    #[test]
    fn squaring_chain_growth() {
        // Independent oracle: shift-based powers of two.
        for len in 1..=20usize {
            let report = eval_slp(&squaring_chain(len), None).unwrap();
            let expected = BigInt::from(1) << (1u64 << (len - 1));
            assert_eq!(report.value, Rational::from_integer(expected));
            for (i, v) in report.values.iter().enumerate().skip(1) {
                // numerator bit-length doubles: 2^{i-1} + 1
                assert_eq!(v.numer().bits(), (1u64 << (i - 1)) + 1);
            }
            assert_eq!(report.max_bit_length.get(), (1u64 << (len - 1)) + 2);
        }
    }

    #[test]
    fn budget_is_enforced() {
        let p = squaring_chain(12);
        let err = p.eval(1000).unwrap_err();
        assert!(err.is_bit_budget());
        assert!(p.eval(4000).is_ok());
    }

    #[test]
    fn bit_and_sign_queries() {
        let p = squaring_chain(3);
        assert_eq!(bit_of_slp(&p, 4).unwrap(), 1);
        assert_eq!(bit_of_slp(&p, 3).unwrap(), 0);
        let frac = Slp::parse("const 11/4").unwrap();
        assert_eq!(bit_of_slp(&frac, 0).unwrap(), 0);

        let zero = Slp::parse("const 1\nsub 0 0").unwrap();
        assert_eq!(sign_of_slp(&zero).unwrap(), SignClass::Zero);
        let two = Slp::parse("const 1\nadd 0 0").unwrap();
        assert_eq!(sign_of_slp(&two).unwrap(), SignClass::Positive);
        let neg = Slp::parse("const 1\nsub 0 0\nsub 1 0").unwrap();
        assert_eq!(sign_of_slp(&neg).unwrap(), SignClass::Negative);
    }

    #[test]
    fn doubled_minus_one() {
        let p = Slp::parse("const 1\nadd 0 0").unwrap();
        let q3 = p.doubled_minus_one().unwrap();
        assert_eq!(eval_slp(&q3, None).unwrap().value, q("3"));
        assert!(Slp::parse("const 2").unwrap().doubled_minus_one().is_err());
    }
}
