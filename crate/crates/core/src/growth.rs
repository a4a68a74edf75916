//! Bit-length of the exact first-layer gradient as depth grows, for a
//! square activation versus ReLU.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::activation::{Activation, PwlActivation};
use crate::error::{Error, Result};
use crate::network::{LossSpec, Network, NetworkBuilder, Role, Sample, Theta, VertexVector};
use crate::numbers::Rational;
use crate::poly::RationalPoly;

pub const DEFAULT_WIDTH: usize = 4;
pub const WEIGHT_SCALE: i64 = 3;
/// Weights are `3·k/2⁸` for uniform `k ∈ [−2⁸, 2⁸]`.
pub const WEIGHT_DENOM_LOG2: u32 = 8;
/// Inputs are `n/2⁶³` for uniform `n ∈ [−2⁶³, 2⁶³]`.
pub const INPUT_DENOM_LOG2: u32 = 63;
/// Draws tried per depth before accepting an all-zero first-layer gradient.
pub const MAX_DRAWS: u64 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GrowthActivation {
    Square,
    Relu,
}

impl GrowthActivation {
    pub fn as_str(self) -> &'static str {
        match self {
            GrowthActivation::Square => "square",
            GrowthActivation::Relu => "relu",
        }
    }

    fn activation(self) -> Activation {
        match self {
            GrowthActivation::Square => Activation::Poly(RationalPoly::monomial(2)),
            GrowthActivation::Relu => Activation::Pwl(PwlActivation::relu()),
        }
    }
}

impl fmt::Display for GrowthActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GrowthActivation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "square" | "square-poly" | "poly" => Ok(GrowthActivation::Square),
            "relu" => Ok(GrowthActivation::Relu),
            _ => Err(Error::InvalidParameter(format!("unknown activation {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthRow {
    pub depth: usize,
    pub activation: GrowthActivation,
    /// Largest bit-length among the first-layer weight gradients.
    pub grad_bitlen: u64,
    /// `log₁₀` of the largest first-layer gradient magnitude, from bit-lengths.
    pub log10_proxy: f64,
    pub runtime_ms: u128,
}

impl GrowthRow {
    pub const CSV_HEADER: &'static str = "depth,activation,grad_bitlen,log10_proxy,runtime_ms";

    pub fn csv_row(&self) -> String {
        let proxy = if self.log10_proxy.is_finite() {
            format!("{:.4}", self.log10_proxy)
        } else {
            "-inf".to_string()
        };
        format!(
            "{},{},{},{},{}",
            self.depth, self.activation, self.grad_bitlen, proxy, self.runtime_ms
        )
    }
}

pub fn growth_csv(rows: &[GrowthRow]) -> String {
    let mut out = String::from(GrowthRow::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// A fully connected chain with `depth` hidden layers of `width` units, plus
/// the single sample and loss used for the measurement.
pub struct GrowthNetwork {
    pub network: Network,
    pub theta: Theta,
    pub sample: Sample,
    pub loss: LossSpec,
    /// Edges leaving the input layer.
    pub first_layer: Vec<crate::network::EdgeId>,
}

fn random_weight(rng: &mut ChaCha8Rng) -> Rational {
    let span = 1i64 << WEIGHT_DENOM_LOG2;
    let k = rng.gen_range(-span..=span);
    Rational::ratio(WEIGHT_SCALE * k, span)
}

fn random_input(rng: &mut ChaCha8Rng) -> Rational {
    let span = 1i128 << INPUT_DENOM_LOG2;
    let n = rng.gen_range(-span..=span);
    Rational::new(n.into(), span.into()).expect("nonzero denominator")
}

/// Depth 0 wires the inputs straight to the output. The random stream does
/// not depend on the activation, so both activations see the same weights.
pub fn build_growth_network(
    depth: usize,
    width: usize,
    activation: GrowthActivation,
    seed: u64,
) -> Result<GrowthNetwork> {
    if width == 0 {
        return Err(Error::InvalidParameter("width must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nb = NetworkBuilder::new();
    let inputs: Vec<String> = (0..width)
        .map(|k| nb.vertex(format!("x{k}"), Role::Source, Activation::Identity))
        .collect();
    let mut prev = inputs.clone();
    let mut first_layer_names = Vec::new();
    for layer in 1..=depth {
        let cur: Vec<String> = (0..width)
            .map(|k| {
                nb.vertex(
                    format!("h{layer}_{k}"),
                    Role::Hidden,
                    activation.activation(),
                )
            })
            .collect();
        for to in &cur {
            for from in &prev {
                let e = nb.edge(from, to, random_weight(&mut rng), Rational::zero());
                if layer == 1 {
                    first_layer_names.push(e);
                }
            }
        }
        prev = cur;
    }
    nb.vertex("out", Role::Target, Activation::Identity);
    for from in &prev {
        let e = nb.edge(from, "out", random_weight(&mut rng), Rational::zero());
        if depth == 0 {
            first_layer_names.push(e);
        }
    }
    let (network, theta) = nb.build()?;
    let mut input = VertexVector::new();
    for name in &inputs {
        input.set(network.require_vertex(name)?, random_input(&mut rng));
    }
    let out = network.require_vertex("out")?;
    let first_layer = first_layer_names
        .iter()
        .map(|e| network.require_edge(e))
        .collect::<Result<_>>()?;
    Ok(GrowthNetwork {
        sample: Sample::main(input, VertexVector::new()),
        loss: LossSpec::Square { target: out },
        network,
        theta,
        first_layer,
    })
}

/// Exact first-layer weight gradients for one depth.
pub fn first_layer_gradient(g: &GrowthNetwork, max_bits: u64) -> Result<Vec<Rational>> {
    let report =
        g.network
            .gradient(&g.theta, std::slice::from_ref(&g.sample), &g.loss, max_bits)?;
    Ok(g.first_layer
        .iter()
        .map(|&e| report.gradient.weight(e).clone())
        .collect())
}

/// Seed of the `draw`-th attempt; the first attempt uses `seed` itself.
pub fn draw_seed(seed: u64, draw: u64) -> u64 {
    seed.wrapping_add(draw.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// One row per depth. With `timing` off `runtime_ms` is 0 so that equal seeds
/// give byte-identical CSVs.
pub fn depth_growth_experiment(
    depths: impl IntoIterator<Item = usize>,
    width: usize,
    activation: GrowthActivation,
    seed: u64,
    max_bits: u64,
    timing: bool,
) -> Result<Vec<GrowthRow>> {
    let mut rows = Vec::new();
    for depth in depths {
        let start = Instant::now();
        let mut grads = Vec::new();
        // dead ReLU chains give a zero gradient; redraw deterministically
        for draw in 0..MAX_DRAWS {
            let g = build_growth_network(depth, width, activation, draw_seed(seed, draw))?;
            grads = first_layer_gradient(&g, max_bits).map_err(|e| match e {
                Error::BitBudget {
                    limit,
                    reached,
                    location,
                } => Error::BitBudget {
                    limit,
                    reached,
                    location: format!("depth {depth} ({location})"),
                },
                other => other,
            })?;
            if grads.iter().any(|q| !q.is_zero()) {
                break;
            }
        }
        let grad_bitlen = grads
            .iter()
            .map(|q| q.bit_length().get())
            .max()
            .unwrap_or(1);
        let log10_proxy = grads
            .iter()
            .map(Rational::log10_proxy)
            .fold(f64::NEG_INFINITY, f64::max);
        rows.push(GrowthRow {
            depth,
            activation,
            grad_bitlen,
            log10_proxy,
            runtime_ms: if timing {
                start.elapsed().as_millis()
            } else {
                0
            },
        });
    }
    Ok(rows)
}
