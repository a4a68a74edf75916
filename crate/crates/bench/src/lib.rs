//! Fixtures shared by the benchmarks.

use exactnet_core::activation::{Activation, PwlActivation};
use exactnet_core::network::{
    LossSpec, Network, NetworkBuilder, Role, Sample, Theta, VertexVector,
};
use exactnet_core::reduction::{compile_erm, ErmInstance, Gap};
use exactnet_core::slp::squaring_chain;
use exactnet_core::{Op, Rational, RationalPoly, Slp};

/// `const 1`, then alternating doubling and squaring: `len` gates with
/// `len / 2` multiplications.
pub fn mixed_program(len: usize) -> Slp {
    let mut p = Slp::new(Rational::one(), Vec::new()).expect("empty program");
    p.push(Op::Add, 0, 0).expect("valid");
    for i in 2..=len {
        let op = if i % 2 == 0 { Op::Mul } else { Op::Add };
        p.push(op, i - 1, i - 1).expect("valid");
    }
    p
}

pub fn chain(len: usize) -> Slp {
    squaring_chain(len)
}

pub fn gadget_instance(len: usize) -> ErmInstance {
    compile_erm(
        &mixed_program(len),
        &RationalPoly::monomial(2),
        0,
        Gap::default(),
    )
    .expect("compiles")
}

/// Layered ReLU network with dyadic weights and `samples` inputs.
pub fn relu_mlp(
    width: usize,
    depth: usize,
    samples: usize,
) -> (Network, Theta, Vec<Sample>, LossSpec) {
    let mut nb = NetworkBuilder::new();
    let mut prev: Vec<String> = (0..width)
        .map(|k| nb.vertex(format!("x{k}"), Role::Source, Activation::Identity))
        .collect();
    let mut n = 0i64;
    let mut weight = || {
        n += 1;
        Rational::ratio((n * 37) % 17 - 8, 8)
    };
    for layer in 0..depth {
        let cur: Vec<String> = (0..width)
            .map(|k| {
                nb.vertex(
                    format!("h{layer}_{k}"),
                    Role::Hidden,
                    Activation::Pwl(PwlActivation::relu()),
                )
            })
            .collect();
        for to in &cur {
            for from in &prev {
                nb.edge(from, to, weight(), Rational::ratio(1, 4));
            }
        }
        prev = cur;
    }
    nb.vertex("out", Role::Target, Activation::Identity);
    for from in &prev {
        nb.edge(from, "out", weight(), Rational::zero());
    }
    let (net, theta) = nb.build().expect("valid network");
    let out = net.vertex_id("out").expect("target");
    let data = (0..samples)
        .map(|s| {
            let mut x = VertexVector::new();
            for k in 0..width {
                let v = net.vertex_id(&format!("x{k}")).expect("source");
                x.set(v, Rational::ratio((s * width + k) as i64 % 9 - 4, 4));
            }
            Sample::main(x, VertexVector::single(out, Rational::ratio(s as i64, 2)))
        })
        .collect();
    (net, theta, data, LossSpec::Square { target: out })
}
