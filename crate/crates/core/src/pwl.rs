//! One exact gradient step for piecewise-linear networks and the witness
//! verifier for the restricted ERM problem.

use crate::error::{Error, Result};
use crate::instance_file::{instance_bits, theta_bits, theta_bits_lower_bound, Instance};
use crate::network::{LossSpec, Meter, Network, Sample, Theta};
use crate::numbers::{BitLen, Rational};
use crate::reduction::ErmInstance;

pub use crate::activation::{
    pwl_derivative, pwl_eval, BaseActivation, BitBoundedActivation, BreakpointRule, Piece,
    PwlActivation,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GdStepReport {
    /// `θ − η·∇J(θ)`.
    pub theta: Theta,
    pub gradient: Theta,
    pub loss: Rational,
    /// Largest bit-length of any value computed during the step.
    pub max_bit_length: BitLen,
    /// Additions, multiplications, and comparisons performed.
    pub ops: u64,
    /// `N`: total bit-length of parameters, samples and step size plus `|V| + |E|`.
    pub instance_size: u64,
    /// Some activation has a jump; derivatives at its breakpoints are a convention.
    pub discontinuous: bool,
    pub kink_samples: usize,
}

impl GdStepReport {
    /// `max_bit_length ≤ c·N²`.
    pub fn within_bit_envelope(&self, c: u64) -> bool {
        (self.max_bit_length.get() as u128) <= c as u128 * (self.instance_size as u128).pow(2)
    }

    /// `ops ≤ c'·max(n,1)·|E|`.
    pub fn within_op_bound(&self, c: u64, samples: usize, edges: usize) -> bool {
        self.ops as u128 <= c as u128 * samples.max(1) as u128 * edges.max(1) as u128
    }
}

/// `N` for a gradient step.
pub fn step_size_measure(net: &Network, theta: &Theta, dataset: &[Sample], eta: &Rational) -> u64 {
    let scalars: u64 = theta.scalars().map(|q| q.bit_length().get()).sum();
    let data: u64 = dataset
        .iter()
        .flat_map(|s| s.input.iter().chain(s.label.iter()))
        .map(|(_, q)| q.bit_length().get())
        .sum();
    scalars + data + eta.bit_length().get() + (net.vertex_count() + net.edge_count()) as u64
}

/// One full-batch gradient step `θ ← θ − η·∇J(θ)`, exactly.
pub fn gd_step(
    net: &Network,
    theta: &Theta,
    dataset: &[Sample],
    spec: &LossSpec,
    eta: &Rational,
) -> Result<GdStepReport> {
    if let Some(v) = net.vertices().iter().find(|v| !v.activation.is_bit_tame()) {
        return Err(Error::InvalidParameter(format!(
            "vertex {:?} has a polynomial activation; only identity, piecewise-linear and bit-bounded activations are supported",
            v.name
        )));
    }
    if !matches!(spec, LossSpec::Square { .. } | LossSpec::Hinge { .. }) {
        return Err(Error::NotDifferentiable(format!("{} loss", spec.kind())));
    }
    let mut meter = Meter::new(u64::MAX);
    let report = net.gradient_metered(theta, dataset, spec, &mut meter)?;
    let mut updated = theta.clone();
    for (e, g) in report.gradient.params().iter().enumerate() {
        let p = updated.get_mut(crate::network::EdgeId(e));
        p.weight -= &(eta * &g.weight);
        p.bias -= &(eta * &g.bias);
        meter.ops += 4;
        meter.observe(&p.weight, "update")?;
        meter.observe(&p.bias, "update")?;
    }
    Ok(GdStepReport {
        theta: updated,
        gradient: report.gradient,
        loss: report.loss,
        max_bit_length: meter.max_bits,
        ops: meter.ops,
        instance_size: step_size_measure(net, theta, dataset, eta),
        discontinuous: net.has_discontinuity(),
        kink_samples: report.kink_samples,
    })
}

/// `|enc θ| ≤ C₁·|I|^{C₂}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodingBound {
    pub c1: u64,
    pub c2: u32,
}

impl Default for EncodingBound {
    fn default() -> Self {
        EncodingBound { c1: 4, c2: 2 }
    }
}

impl EncodingBound {
    /// `C₁·size^{C₂}`, saturating.
    pub fn limit(&self, size: u64) -> u128 {
        (size as u128)
            .checked_pow(self.c2)
            .and_then(|p| p.checked_mul(self.c1 as u128))
            .unwrap_or(u128::MAX)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WitnessVerdict {
    Accept { loss: Rational },
    RejectLoss { loss: Rational },
    RejectEncoding { encoding_bits: u64, limit: u128 },
}

impl WitnessVerdict {
    pub fn accepted(&self) -> bool {
        matches!(self, WitnessVerdict::Accept { .. })
    }
}

/// Checks the encoding bound, then whether the exact total loss is at most `gamma`.
pub fn verify_witness(
    inst: &ErmInstance,
    theta: &Theta,
    gamma: &Rational,
    bound: EncodingBound,
    max_bits: u64,
) -> Result<WitnessVerdict> {
    theta.check(&inst.network)?;
    let size = instance_bits(&Instance::Erm(inst.clone()));
    let limit = bound.limit(size);
    // skip printing huge numerators when even the lower bound is over the limit
    let lower = theta_bits_lower_bound(theta);
    if lower as u128 > limit {
        return Ok(WitnessVerdict::RejectEncoding {
            encoding_bits: lower,
            limit,
        });
    }
    let encoding_bits = theta_bits(&inst.network, theta);
    if encoding_bits as u128 > limit {
        return Ok(WitnessVerdict::RejectEncoding {
            encoding_bits,
            limit,
        });
    }
    let loss = inst
        .network
        .loss_total(theta, &inst.dataset, &inst.loss, max_bits)?;
    Ok(if &loss <= gamma {
        WitnessVerdict::Accept { loss }
    } else {
        WitnessVerdict::RejectLoss { loss }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::network::{NetworkBuilder, Role, VertexVector};
    use crate::reduction::{Gap, Provenance};
    use crate::slp::DEFAULT_MAX_BITS;

    fn q(s: &str) -> Rational {
        s.parse().unwrap()
    }

    fn relu_unit(w: &str) -> (Network, Theta) {
        let mut nb = NetworkBuilder::new();
        nb.vertex("s", Role::Source, Activation::Identity);
        nb.vertex("t", Role::Target, Activation::Pwl(PwlActivation::relu()));
        nb.edge("s", "t", q(w), q("0"));
        nb.build().unwrap()
    }

    fn sample(net: &Network, x: &str, y: &str) -> Sample {
        Sample::main(
            VertexVector::single(net.vertex_id("s").unwrap(), q(x)),
            VertexVector::single(net.vertex_id("t").unwrap(), q(y)),
        )
    }

    #[test]
    fn relu_step() {
        let (net, theta) = relu_unit("1");
        let t = net.vertex_id("t").unwrap();
        let data = vec![sample(&net, "2", "0")];
        let r = gd_step(
            &net,
            &theta,
            &data,
            &LossSpec::Square { target: t },
            &q("1/2"),
        )
        .unwrap();
        assert_eq!(r.gradient.params()[0].weight, q("4"));
        assert_eq!(r.theta.params()[0].weight, q("-1"));
        assert!(r.within_op_bound(32, 1, 1));
        assert!(r.within_bit_envelope(1));
    }

    #[test]
    fn dead_relu_leaves_theta_unchanged() {
        let (net, theta) = relu_unit("1");
        let t = net.vertex_id("t").unwrap();
        let data = vec![sample(&net, "-2", "3"), sample(&net, "-1/3", "1")];
        let r = gd_step(
            &net,
            &theta,
            &data,
            &LossSpec::Square { target: t },
            &q("1"),
        )
        .unwrap();
        assert!(r.gradient.scalars().all(Rational::is_zero));
        assert_eq!(r.theta, theta);
    }

    #[test]
    fn bit_bounded_forward_and_backward() {
        let mut nb = NetworkBuilder::new();
        nb.vertex("s", Role::Source, Activation::Identity);
        let act = BitBoundedActivation::new(BaseActivation::Identity, 2, None).unwrap();
        nb.vertex("t", Role::Target, Activation::BitBounded(act));
        nb.edge("s", "t", q("1"), q("0"));
        let (net, theta) = nb.build().unwrap();
        let t = net.vertex_id("t").unwrap();
        let data = vec![sample(&net, "13/10", "0")];
        let trace = net
            .forward(&theta, &data[0].input, DEFAULT_MAX_BITS)
            .unwrap();
        assert_eq!(trace.value(t), &q("5/4"));
        let r = gd_step(
            &net,
            &theta,
            &data,
            &LossSpec::Square { target: t },
            &q("1"),
        )
        .unwrap();
        // (5/4 − 0)·1·(13/10)
        assert_eq!(r.gradient.params()[0].weight, q("13/8"));
        assert!(r.discontinuous);
    }

    #[test]
    fn polynomial_activations_are_refused() {
        let mut nb = NetworkBuilder::new();
        nb.vertex("s", Role::Source, Activation::Identity);
        nb.vertex(
            "t",
            Role::Target,
            Activation::Poly(crate::poly::RationalPoly::monomial(2)),
        );
        nb.edge("s", "t", q("1"), q("0"));
        let (net, theta) = nb.build().unwrap();
        let t = net.vertex_id("t").unwrap();
        assert!(gd_step(&net, &theta, &[], &LossSpec::Square { target: t }, &q("1")).is_err());
    }

    fn zero_instance() -> ErmInstance {
        let (network, theta_star) = relu_unit("0");
        let t = network.vertex_id("t").unwrap();
        let dataset = vec![sample(&network, "1", "0"), sample(&network, "-3", "0")];
        ErmInstance {
            network,
            theta_star,
            dataset,
            loss: LossSpec::Square { target: t },
            gap: Gap::default(),
            provenance: Provenance::default(),
        }
    }

    #[test]
    fn witness_verdicts() {
        let inst = zero_instance();
        let zero = Theta::zeros(&inst.network);
        let bound = EncodingBound::default();
        let v = verify_witness(&inst, &zero, &q("0"), bound, DEFAULT_MAX_BITS).unwrap();
        assert!(v.accepted());

        let mut theta = zero.clone();
        theta.get_mut(crate::network::EdgeId(0)).weight = q("1");
        // loss ½·1² from the first sample
        let v = verify_witness(&inst, &theta, &q("1/2"), bound, DEFAULT_MAX_BITS).unwrap();
        assert_eq!(v, WitnessVerdict::Accept { loss: q("1/2") });
        let v = verify_witness(&inst, &theta, &q("49/100"), bound, DEFAULT_MAX_BITS).unwrap();
        assert_eq!(v, WitnessVerdict::RejectLoss { loss: q("1/2") });

        let size = instance_bits(&Instance::Erm(inst.clone()));
        let mut huge = zero.clone();
        huge.get_mut(crate::network::EdgeId(0)).weight =
            Rational::from_integer(num_bigint::BigInt::from(1) << (10 * size * size));
        let v = verify_witness(&inst, &huge, &q("1000"), bound, DEFAULT_MAX_BITS).unwrap();
        assert!(matches!(v, WitnessVerdict::RejectEncoding { .. }));
    }

    #[test]
    fn encoding_limit_is_exact_at_the_boundary() {
        let inst = zero_instance();
        let zero = Theta::zeros(&inst.network);
        let used = theta_bits(&inst.network, &zero);
        // C₂ = 0 makes the limit exactly C₁
        let at = EncodingBound { c1: used, c2: 0 };
        assert!(verify_witness(&inst, &zero, &q("0"), at, DEFAULT_MAX_BITS)
            .unwrap()
            .accepted());
        let below = EncodingBound {
            c1: used - 1,
            c2: 0,
        };
        let v = verify_witness(&inst, &zero, &q("0"), below, DEFAULT_MAX_BITS).unwrap();
        assert_eq!(
            v,
            WitnessVerdict::RejectEncoding {
                encoding_bits: used,
                limit: used as u128 - 1
            }
        );
    }
}
