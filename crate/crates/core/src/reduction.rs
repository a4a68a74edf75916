//! Compilers from straight-line programs to network instances.
//!
//! The circuit core has one identity vertex `v_i` per gate. Additions and
//! subtractions are single edges; every multiplication `a_i = a_j·a_k`
//! becomes a gadget of `μ+1` shifted copies of
//! `σ(a_j+a_k+r) − σ(a_j+r) − σ(a_k+r)` summed into `z_i` with weights
//! `±λ'_r`, then scaled by `1/D` into `v_i`.
//!
//! ERM instances add auxiliary samples whose inputs are chosen so that the
//! distinguished parameters reproduce a prescribed vertex-value vector
//! exactly; any parameter vector with zero loss on them agrees with θ* on
//! identity-head edges and up to a symmetry of `σ` on σ-edges.

use std::fmt;

use num_bigint::BigInt;

use crate::activation::Activation;
use crate::bn::normalize_bn;
use crate::error::{Error, Result};
use crate::lambda::{solve_lambda, LambdaCoeffs};
use crate::network::{
    EdgeId, LossSpec, Network, NetworkBuilder, Role, Sample, SampleFlag, Theta, VertexId,
    VertexVector, Wrt,
};
use crate::numbers::{BitLen, Rational};
use crate::poly::RationalPoly;
use crate::slp::{Op, Slp, DEFAULT_MAX_BITS};

/// Promise gap: YES instances have optimum `≤ a`, NO instances `≥ b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Gap {
    pub a: u64,
    pub b: u64,
}

impl Gap {
    pub fn new(a: u64, b: u64) -> Result<Self> {
        if a >= b {
            return Err(Error::InvalidParameter(format!(
                "gap needs a < b, got ({a}, {b})"
            )));
        }
        Ok(Gap { a, b })
    }
}

impl Default for Gap {
    fn default() -> Self {
        Gap { a: 0, b: 1 }
    }
}

/// Multiplication-gadget constants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GadgetMeta {
    /// `λ'_0..λ'_μ`.
    pub integer_lambdas: Vec<BigInt>,
    /// `D`.
    pub common_denominator: BigInt,
    /// Smallest `α₁ ∈ {1..μ+1}` with `σ(α₁) ≠ σ(0)`.
    pub alpha1: u64,
}

/// Where an instance came from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Provenance {
    pub source: Option<Slp>,
    pub sigma: Option<RationalPoly>,
    /// Queried bit; negative indices address fractional binary digits.
    pub bit: Option<i64>,
    pub gadget: Option<GadgetMeta>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    Yes,
    No,
}

impl Decision {
    pub fn from_bool(yes: bool) -> Self {
        if yes {
            Decision::Yes
        } else {
            Decision::No
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Yes => "YES",
            Decision::No => "NO",
        })
    }
}

/// Network, distinguished parameters, dataset, loss, and promise gap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErmInstance {
    pub network: Network,
    pub theta_star: Theta,
    pub dataset: Vec<Sample>,
    pub loss: LossSpec,
    pub gap: Gap,
    pub provenance: Provenance,
}

impl ErmInstance {
    /// Vertex `v_i` simulating gate `i`.
    pub fn gate_vertex(&self, i: usize) -> Option<VertexId> {
        self.network.vertex_id(&gate_name(i))
    }

    pub fn target(&self) -> Option<VertexId> {
        self.loss.target()
    }

    pub fn main_samples(&self) -> impl Iterator<Item = &Sample> {
        self.dataset.iter().filter(|s| s.flag == SampleFlag::Main)
    }

    pub fn aux_samples(&self) -> impl Iterator<Item = &Sample> {
        self.dataset.iter().filter(|s| s.flag == SampleFlag::Aux)
    }

    pub fn report(&self) -> GadgetReport {
        GadgetReport::new(
            &self.network,
            &self.theta_star,
            &self.dataset,
            self.provenance.source.as_ref(),
            self.provenance
                .gadget
                .as_ref()
                .map_or(0, |g| g.integer_lambdas.len() - 1),
            0,
        )
    }
}

/// Size accounting for a compiled instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GadgetReport {
    pub add_gates: usize,
    pub sub_gates: usize,
    pub mul_gates: usize,
    pub mu: usize,
    pub vertices: usize,
    pub edges: usize,
    /// `#mul·(6(μ+1)+1)`.
    pub gadget_vertices: usize,
    /// Counts predicted from the program alone.
    pub expected_vertices: usize,
    pub expected_edges: usize,
    pub aux_samples: usize,
    pub main_samples: usize,
    /// Bit-length of every weight and bias in θ*, weight first per edge.
    pub theta_bit_lengths: Vec<BitLen>,
    pub max_theta_bit_length: BitLen,
}

impl GadgetReport {
    fn new(
        net: &Network,
        theta: &Theta,
        dataset: &[Sample],
        source: Option<&Slp>,
        mu: usize,
        extra: usize,
    ) -> Self {
        let (add, sub, mul, len) = source.map_or((0, 0, 0, 0), |p| {
            (
                p.count(Op::Add),
                p.count(Op::Sub),
                p.count(Op::Mul),
                p.len(),
            )
        });
        let gadget_vertices = mul * (6 * (mu + 1) + 1);
        let theta_bit_lengths: Vec<BitLen> = theta.scalars().map(Rational::bit_length).collect();
        let max_theta_bit_length = theta_bit_lengths.iter().copied().max().unwrap_or(BitLen(1));
        let aux_samples = dataset.iter().filter(|s| s.flag == SampleFlag::Aux).count();
        GadgetReport {
            add_gates: add,
            sub_gates: sub,
            mul_gates: mul,
            mu,
            vertices: net.vertex_count(),
            edges: net.edge_count(),
            gadget_vertices,
            expected_vertices: len + 1 + gadget_vertices + extra,
            expected_edges: 2 * (add + sub) + mul * (10 * (mu + 1) + 1) + extra,
            aux_samples,
            main_samples: dataset.len() - aux_samples,
            theta_bit_lengths,
            max_theta_bit_length,
        }
    }

    pub fn counts_match(&self) -> bool {
        self.vertices == self.expected_vertices && self.edges == self.expected_edges
    }
}

fn gate_name(i: usize) -> String {
    format!("v{i}")
}

struct Core {
    builder: NetworkBuilder,
    lambdas: LambdaCoeffs,
    alpha1: u64,
    output: String,
}

fn build_core(p: &Slp, sigma: &RationalPoly, output_role: Role) -> Result<Core> {
    let lambdas = solve_lambda(sigma)?;
    let mu = lambdas.degree();
    let s0 = sigma.eval(&Rational::zero());
    let alpha1 = (1..=mu as u64 + 1)
        .find(|&a| sigma.eval(&Rational::from(a as i64)) != s0)
        .expect("a non-constant polynomial differs from σ(0) at one of μ+1 points");
    let one = Rational::one;
    let zero = Rational::zero;

    let mut nb = NetworkBuilder::new();
    nb.vertex(gate_name(0), Role::Source, Activation::Identity);
    let last = p.len();
    for (pos, g) in p.gates().iter().enumerate() {
        let i = pos + 1;
        let role = if i == last { output_role } else { Role::Hidden };
        let vi = nb.vertex(gate_name(i), role, Activation::Identity);
        let (vj, vk) = (gate_name(g.left), gate_name(g.right));
        match g.op {
            Op::Add | Op::Sub => {
                let wk = if g.op == Op::Add { one() } else { -one() };
                nb.edge(&vj, &vi, one(), zero());
                nb.edge(&vk, &vi, wk, zero());
            }
            Op::Mul => {
                let z = nb.vertex(format!("z{i}"), Role::Hidden, Activation::Identity);
                for r in 0..=mu {
                    let shift = Rational::from(r as i64);
                    let lt = |t: usize| format!("L{t}_{i}_{r}");
                    let ut = |t: usize| format!("U{t}_{i}_{r}");
                    for t in 1..=3 {
                        nb.vertex(lt(t), Role::Hidden, Activation::Identity);
                        nb.vertex(ut(t), Role::Hidden, Activation::Poly(sigma.clone()));
                    }
                    nb.edge(&vj, &lt(1), one(), shift.clone());
                    nb.edge(&vk, &lt(1), one(), zero());
                    nb.edge(&vj, &lt(2), one(), shift.clone());
                    nb.edge(&vk, &lt(3), one(), shift);
                    for t in 1..=3 {
                        nb.edge(&lt(t), &ut(t), one(), zero());
                    }
                    let lam = lambdas.integer_lambda(r);
                    nb.edge(&ut(1), &z, lam.clone(), zero());
                    nb.edge(&ut(2), &z, -lam.clone(), zero());
                    nb.edge(&ut(3), &z, -lam, zero());
                }
                nb.edge(&z, &vi, lambdas.inverse_denominator(), zero());
            }
        }
    }
    Ok(Core {
        builder: nb,
        lambdas,
        alpha1,
        output: gate_name(last),
    })
}

fn gadget_meta(core: &Core) -> GadgetMeta {
    GadgetMeta {
        integer_lambdas: core.lambdas.integer_lambdas.clone(),
        common_denominator: core.lambdas.common_denominator.clone(),
        alpha1: core.alpha1,
    }
}

fn is_sigma_vertex(net: &Network, v: VertexId) -> bool {
    matches!(net.vertex(v).activation, Activation::Poly(_))
}

/// `x_v = ỹ_v − Σ_{(u,v)} (w*_{uv}·y_u + b*_{uv})`.
fn realizing_input(net: &Network, theta: &Theta, y: &[Rational], pre: &[Rational]) -> VertexVector {
    let mut x = VertexVector::new();
    for v in 0..net.vertex_count() {
        let v = VertexId(v);
        let mut acc = pre[v.0].clone();
        for &e in net.incoming(v) {
            let u = net.edge(e).from;
            let p = theta.get(e);
            acc -= &(&p.weight * &y[u.0]) + &p.bias;
        }
        x.set(v, acc);
    }
    x
}

/// One sample per auxiliary template, in a fixed order: baseline,
/// identity-head edges by edge id, then σ-edges by edge id and `τ`.
fn aux_templates(net: &Network, theta: &Theta, sigma: &RationalPoly, alpha1: u64) -> Vec<Sample> {
    let n = net.vertex_count();
    let mu = sigma.degree().unwrap_or(0);
    let s0 = sigma.eval(&Rational::zero());
    let alpha = Rational::from(alpha1 as i64);
    let y0: Vec<Rational> = (0..n)
        .map(|v| {
            if is_sigma_vertex(net, VertexId(v)) {
                s0.clone()
            } else {
                Rational::zero()
            }
        })
        .collect();
    let pre0 = vec![Rational::zero(); n];
    let sample = |y: &[Rational], pre: &[Rational], tag: String| Sample {
        input: realizing_input(net, theta, y, pre),
        label: VertexVector::from_dense(y),
        flag: SampleFlag::Aux,
        tag,
    };

    let mut out = vec![sample(&y0, &pre0, "baseline".into())];
    for (idx, edge) in net.edges().iter().enumerate() {
        let (p, q) = (edge.from, edge.to);
        if is_sigma_vertex(net, q) {
            continue;
        }
        let mut y = y0.clone();
        let mut pre = pre0.clone();
        if is_sigma_vertex(net, p) {
            y[p.0] = sigma.eval(&alpha);
            pre[p.0] = alpha.clone();
        } else {
            y[p.0] = Rational::one();
            pre[p.0] = Rational::one();
        }
        y[q.0] = theta.weight(EdgeId(idx)) * &(&y[p.0] - &y0[p.0]);
        pre[q.0] = y[q.0].clone();
        out.push(sample(&y, &pre, format!("identity-edge {}", edge.name)));
    }
    for edge in net.edges() {
        let (l, u) = (edge.from, edge.to);
        if !is_sigma_vertex(net, u) {
            continue;
        }
        for tau in 0..=mu {
            let t = Rational::from(tau as i64);
            let mut y = y0.clone();
            let mut pre = pre0.clone();
            y[l.0] = t.clone();
            pre[l.0] = t.clone();
            y[u.0] = sigma.eval(&t);
            pre[u.0] = t;
            out.push(sample(
                &y,
                &pre,
                format!("sigma-edge {} tau={tau}", edge.name),
            ));
        }
    }
    out
}

fn replicate(samples: Vec<Sample>, times: u64) -> Vec<Sample> {
    samples
        .into_iter()
        .flat_map(|s| std::iter::repeat_n(s, times as usize))
        .collect()
}

fn erm_from_core(
    p: &Slp,
    sigma: &RationalPoly,
    core: Core,
    gap: Gap,
    main_label: impl Fn(VertexId) -> VertexVector,
    loss: impl Fn(VertexId) -> LossSpec,
    bit: Option<i64>,
) -> Result<ErmInstance> {
    let meta = gadget_meta(&core);
    let output = core.output.clone();
    let (network, theta_star) = core.builder.build()?;
    let target = network.require_vertex(&output)?;
    let source = network.require_vertex(&gate_name(0))?;
    let mut dataset = replicate(
        aux_templates(&network, &theta_star, sigma, meta.alpha1),
        gap.b + 1,
    );
    let main = Sample::main(
        VertexVector::single(source, p.constant().clone()),
        main_label(target),
    );
    dataset.extend(std::iter::repeat_n(main, gap.b as usize));
    Ok(ErmInstance {
        loss: loss(target),
        network,
        theta_star,
        dataset,
        gap,
        provenance: Provenance {
            source: Some(p.clone()),
            sigma: Some(sigma.clone()),
            bit,
            gadget: Some(meta),
        },
    })
}

/// ERM instance whose loss at θ* is `0` when bit `j` of `n_P` is 1 and `b` otherwise.
pub fn compile_erm(p: &Slp, sigma: &RationalPoly, j: u64, gap: Gap) -> Result<ErmInstance> {
    let gap = Gap::new(gap.a, gap.b)?;
    let core = build_core(p, sigma, Role::Target)?;
    erm_from_core(
        p,
        sigma,
        core,
        gap,
        |_| VertexVector::new(),
        |target| LossSpec::Bit01 { target, j },
        Some(j as i64),
    )
}

/// Hinge-loss instance over the program computing `2·n_P − 1`: main loss
/// at θ* is 0 per sample when `n_P > 0` and at least 2 otherwise.
pub fn compile_hinge_posslp(p: &Slp, sigma: &RationalPoly, copies: u64) -> Result<ErmInstance> {
    if copies == 0 {
        return Err(Error::InvalidParameter("need at least one copy".into()));
    }
    let q = p.doubled_minus_one()?;
    let core = build_core(&q, sigma, Role::Target)?;
    let mut inst = erm_from_core(
        &q,
        sigma,
        core,
        Gap { a: 0, b: copies },
        |target| VertexVector::single(target, Rational::one()),
        |target| LossSpec::Hinge { target },
        None,
    )?;
    inst.provenance.source = Some(q);
    Ok(inst)
}

/// Per-sample losses of the main samples at the given parameters.
pub fn main_losses(inst: &ErmInstance, theta: &Theta) -> Result<Vec<Rational>> {
    inst.main_samples()
        .map(|s| {
            inst.network
                .loss_total(theta, std::slice::from_ref(s), &inst.loss, DEFAULT_MAX_BITS)
        })
        .collect()
}

/// Outcome of checking the auxiliary samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuxCheck {
    pub zero_loss: bool,
    /// Index into the dataset and tag of the first sample that is not reproduced.
    pub violated: Option<(usize, String)>,
}

/// True iff every auxiliary sample is reproduced exactly under `theta`.
pub fn check_zero_aux_loss(inst: &ErmInstance, theta: &Theta) -> Result<AuxCheck> {
    theta.check(&inst.network)?;
    let mut previous: Option<&Sample> = None;
    for (i, s) in inst.dataset.iter().enumerate() {
        if s.flag != SampleFlag::Aux {
            continue;
        }
        // replicated copies are adjacent and identical
        if previous.is_some_and(|p| p == s) {
            continue;
        }
        previous = Some(s);
        let ok = match inst.network.forward(theta, &s.input, DEFAULT_MAX_BITS) {
            Ok(trace) => crate::network::matches_label(&trace, &s.label),
            Err(e) if e.is_bit_budget() => false,
            Err(e) => return Err(e),
        };
        if !ok {
            return Ok(AuxCheck {
                zero_loss: false,
                violated: Some((i, s.tag.clone())),
            });
        }
    }
    Ok(AuxCheck {
        zero_loss: true,
        violated: None,
    })
}

/// Evaluates the total loss at θ* and answers YES iff it is at most `a`.
pub fn decide_at_theta_star(inst: &ErmInstance) -> Result<Decision> {
    decide_at_theta_star_with_budget(inst, DEFAULT_MAX_BITS)
}

pub fn decide_at_theta_star_with_budget(inst: &ErmInstance, max_bits: u64) -> Result<Decision> {
    let loss = inst
        .network
        .loss_total(&inst.theta_star, &inst.dataset, &inst.loss, max_bits)?;
    Ok(Decision::from_bool(
        loss <= Rational::from(inst.gap.a as i64),
    ))
}

/// Which question the gradient instance answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackpropVariant {
    /// Is the gradient `≥ b` (YES) or `≤ −b` (NO)?
    Sign { promise: u64 },
    /// Is bit `j` of `n_P` set?
    Bit { j: u64 },
}

/// Value injected at `v_0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum A0Mode {
    /// Compile the program as given (constant 1).
    #[default]
    Unit,
    /// Compile the bounded-norm version with constant `2^{-m}`.
    BoundedNorm,
}

/// Network with appended target `t` and distinguished edge `e* = (v_ℓ, t)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackpropInstance {
    pub network: Network,
    pub theta_star: Theta,
    pub dataset: Vec<Sample>,
    pub loss: LossSpec,
    pub edge: EdgeId,
    pub variant: BackpropVariant,
    pub mode: A0Mode,
    pub copies: u64,
    /// Constant of the compiled program.
    pub a0: Rational,
    pub provenance: Provenance,
}

/// Answer to a gradient query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackpropAnswer {
    Yes,
    No,
    /// The gradient lies strictly between `−b` and `b`.
    OutsidePromise,
}

impl fmt::Display for BackpropAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackpropAnswer::Yes => "YES",
            BackpropAnswer::No => "NO",
            BackpropAnswer::OutsidePromise => "OUTSIDE-PROMISE",
        })
    }
}

impl BackpropInstance {
    pub fn gradient(&self, max_bits: u64) -> Result<Rational> {
        Ok(self
            .network
            .grad_coordinate(
                &self.theta_star,
                &self.dataset,
                &self.loss,
                self.edge,
                Wrt::Weight,
                max_bits,
            )?
            .value)
    }

    pub fn answer(&self, max_bits: u64) -> Result<BackpropAnswer> {
        let g = self.gradient(max_bits)?;
        Ok(match self.variant {
            BackpropVariant::Sign { promise } => {
                let b = Rational::from(promise as i64);
                if g >= b {
                    BackpropAnswer::Yes
                } else if g <= -b {
                    BackpropAnswer::No
                } else {
                    BackpropAnswer::OutsidePromise
                }
            }
            BackpropVariant::Bit { .. } => {
                let j = self.provenance.bit.expect("bit variant records its query");
                if g.bit_at(j) == 1 {
                    BackpropAnswer::Yes
                } else {
                    BackpropAnswer::No
                }
            }
        })
    }
}

/// Gradient instance with `∂L/∂w_{e*}(θ*) = B·a₀·n_Q`, where `Q` is `p` or
/// its bounded-norm normalization.
pub fn compile_backprop(
    p: &Slp,
    sigma: &RationalPoly,
    variant: BackpropVariant,
    copies: Option<u64>,
    mode: A0Mode,
) -> Result<BackpropInstance> {
    if !p.constant().is_one() {
        return Err(Error::InvalidParameter(format!(
            "gradient reductions need constant 1, found {}",
            p.constant()
        )));
    }
    let required = match variant {
        BackpropVariant::Sign { promise } => {
            if promise == 0 {
                return Err(Error::InvalidParameter("sign promise b must be ≥ 1".into()));
            }
            if mode == A0Mode::BoundedNorm {
                return Err(Error::InvalidParameter(
                    "the sign variant keeps its promise gap only with a₀ = 1".into(),
                ));
            }
            promise
        }
        BackpropVariant::Bit { .. } => 1,
    };
    let copies = copies.unwrap_or(required);
    if copies != required {
        return Err(Error::InvalidParameter(format!(
            "this variant needs exactly {required} copies, got {copies}"
        )));
    }
    let (source, shift) = match mode {
        A0Mode::Unit => (p.clone(), 0i64),
        A0Mode::BoundedNorm => {
            let bn = normalize_bn(p)?;
            let scale = bn.scale_exponent_u64().ok_or_else(|| {
                Error::InvalidParameter(
                    "bounded-norm scale exponent does not fit in 64 bits".into(),
                )
            })?;
            let shift = (bn.gate_count as u64)
                .checked_add(scale)
                .and_then(|s| i64::try_from(s).ok())
                .ok_or_else(|| Error::InvalidParameter("bit shift overflows".into()))?;
            (bn.program, shift)
        }
    };
    let bit = match variant {
        BackpropVariant::Bit { j } => Some(
            i64::try_from(j)
                .ok()
                .and_then(|j| j.checked_sub(shift))
                .ok_or_else(|| Error::InvalidParameter("bit index overflows".into()))?,
        ),
        BackpropVariant::Sign { .. } => None,
    };

    let mut core = build_core(&source, sigma, Role::Hidden)?;
    let meta = gadget_meta(&core);
    core.builder.vertex("t", Role::Target, Activation::Identity);
    let star = core
        .builder
        .edge(&core.output, "t", Rational::zero(), Rational::zero());
    let (network, theta_star) = core.builder.build()?;
    let edge = network.require_edge(&star)?;
    let target = network.require_vertex("t")?;
    let v0 = network.require_vertex(&gate_name(0))?;
    let a0 = source.constant().clone();
    let sample = Sample::main(
        VertexVector::single(v0, a0.clone()),
        VertexVector::single(target, -a0.clone()),
    );
    Ok(BackpropInstance {
        network,
        theta_star,
        dataset: vec![sample; copies as usize],
        loss: LossSpec::Square { target },
        edge,
        variant,
        mode,
        copies,
        a0,
        provenance: Provenance {
            source: Some(source),
            sigma: Some(sigma.clone()),
            bit,
            gadget: Some(meta),
        },
    })
}

impl BackpropInstance {
    pub fn report(&self) -> GadgetReport {
        GadgetReport::new(
            &self.network,
            &self.theta_star,
            &self.dataset,
            self.provenance.source.as_ref(),
            self.provenance
                .gadget
                .as_ref()
                .map_or(0, |g| g.integer_lambdas.len() - 1),
            1,
        )
    }
}
