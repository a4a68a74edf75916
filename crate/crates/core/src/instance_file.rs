//! Canonical JSON encoding of instances and parameter vectors.
//!
//! Rationals are strings `"p"` or `"p/q"` in lowest terms; object keys are
//! sorted, vertices and edges appear in natural identifier order, and the
//! output is compact with no trailing newline. Sizes such as `|I|` are the
//! canonical byte length times eight.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::activation::{
    Activation, BaseActivation, BitBoundedActivation, BreakpointRule, Piece, PwlActivation,
};
use crate::error::{Error, Result};
use crate::network::{
    EdgeParams, EdgeSpec, LossSpec, Network, Role, Sample, SampleFlag, Theta, Vertex, VertexVector,
};
use crate::numbers::Rational;
use crate::poly::RationalPoly;
use crate::reduction::{
    A0Mode, BackpropInstance, BackpropVariant, ErmInstance, GadgetMeta, Gap, Provenance,
};
use crate::slp::Slp;

/// Either kind of compiled instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instance {
    Erm(ErmInstance),
    Backprop(BackpropInstance),
}

impl Instance {
    pub fn network(&self) -> &Network {
        match self {
            Instance::Erm(i) => &i.network,
            Instance::Backprop(i) => &i.network,
        }
    }

    pub fn theta_star(&self) -> &Theta {
        match self {
            Instance::Erm(i) => &i.theta_star,
            Instance::Backprop(i) => &i.theta_star,
        }
    }

    pub fn dataset(&self) -> &[Sample] {
        match self {
            Instance::Erm(i) => &i.dataset,
            Instance::Backprop(i) => &i.dataset,
        }
    }

    pub fn loss(&self) -> &LossSpec {
        match self {
            Instance::Erm(i) => &i.loss,
            Instance::Backprop(i) => &i.loss,
        }
    }
}

impl From<ErmInstance> for Instance {
    fn from(i: ErmInstance) -> Self {
        Instance::Erm(i)
    }
}

impl From<BackpropInstance> for Instance {
    fn from(i: BackpropInstance) -> Self {
        Instance::Backprop(i)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum KindDoc {
    Erm,
    Backprop,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceDoc {
    kind: KindDoc,
    vertices: Vec<VertexDoc>,
    edges: Vec<EdgeDoc>,
    theta: ThetaDoc,
    dataset: Vec<SampleDoc>,
    loss: LossDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gap: Option<GapDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    backprop: Option<BackpropDoc>,
    #[serde(default)]
    provenance: ProvenanceDoc,
}

#[derive(Serialize, Deserialize, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum RoleDoc {
    Source,
    Hidden,
    Target,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VertexDoc {
    id: String,
    role: RoleDoc,
    activation: ActivationDoc,
}

#[derive(Serialize, Deserialize, Default, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum RuleDoc {
    #[default]
    Right,
    Left,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PieceDoc {
    slope: Rational,
    intercept: Rational,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum BaseDoc {
    Identity,
    Poly {
        coeffs: Vec<Rational>,
    },
    Pwl {
        breakpoints: Vec<Rational>,
        pieces: Vec<PieceDoc>,
        #[serde(default)]
        rule: RuleDoc,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ActivationDoc {
    Identity,
    Poly {
        coeffs: Vec<Rational>,
    },
    Pwl {
        breakpoints: Vec<Rational>,
        pieces: Vec<PieceDoc>,
        #[serde(default)]
        rule: RuleDoc,
    },
    BitBounded {
        base: BaseDoc,
        k: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        clip: Option<(Rational, Rational)>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeDoc {
    id: String,
    u: String,
    v: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamDoc {
    w: Rational,
    b: Rational,
}

type ThetaDoc = BTreeMap<String, ParamDoc>;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleDoc {
    input: BTreeMap<String, Rational>,
    label: BTreeMap<String, Rational>,
    flag: u8,
    #[serde(default)]
    tag: String,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum LossDoc {
    Square { target: String },
    Hinge { target: String },
    Bit01 { target: String, j: u64 },
    VectorEquality,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GapDoc {
    a: u64,
    b: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum VariantDoc {
    Sign { promise: u64 },
    Bit { j: u64 },
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ModeDoc {
    Unit,
    Bn,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BackpropDoc {
    edge: String,
    variant: VariantDoc,
    mode: ModeDoc,
    copies: u64,
    a0: Rational,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ProvenanceDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    program: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<Vec<Rational>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bit: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gadget: Option<GadgetDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GadgetDoc {
    lambda_prime: Vec<Rational>,
    #[serde(rename = "D")]
    d: Rational,
    alpha1: u64,
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.into(),
        message: message.into(),
    }
}

fn pwl_doc(a: &PwlActivation) -> (Vec<Rational>, Vec<PieceDoc>, RuleDoc) {
    (
        a.breakpoints().to_vec(),
        a.pieces()
            .iter()
            .map(|p| PieceDoc {
                slope: p.slope.clone(),
                intercept: p.intercept.clone(),
            })
            .collect(),
        match a.rule() {
            BreakpointRule::Right => RuleDoc::Right,
            BreakpointRule::Left => RuleDoc::Left,
        },
    )
}

fn pwl_from_doc(
    breakpoints: Vec<Rational>,
    pieces: Vec<PieceDoc>,
    rule: RuleDoc,
    path: &str,
) -> Result<PwlActivation> {
    let pieces = pieces
        .into_iter()
        .map(|p| Piece::new(p.slope, p.intercept))
        .collect();
    let act = PwlActivation::new(breakpoints, pieces).map_err(|e| schema(path, e.to_string()))?;
    Ok(act.with_rule(match rule {
        RuleDoc::Right => BreakpointRule::Right,
        RuleDoc::Left => BreakpointRule::Left,
    }))
}

fn activation_doc(a: &Activation) -> ActivationDoc {
    match a {
        Activation::Identity => ActivationDoc::Identity,
        Activation::Poly(p) => ActivationDoc::Poly {
            coeffs: p.coeffs().to_vec(),
        },
        Activation::Pwl(p) => {
            let (breakpoints, pieces, rule) = pwl_doc(p);
            ActivationDoc::Pwl {
                breakpoints,
                pieces,
                rule,
            }
        }
        Activation::BitBounded(b) => ActivationDoc::BitBounded {
            base: match b.base() {
                BaseActivation::Identity => BaseDoc::Identity,
                BaseActivation::Poly(p) => BaseDoc::Poly {
                    coeffs: p.coeffs().to_vec(),
                },
                BaseActivation::Pwl(p) => {
                    let (breakpoints, pieces, rule) = pwl_doc(p);
                    BaseDoc::Pwl {
                        breakpoints,
                        pieces,
                        rule,
                    }
                }
            },
            k: b.precision(),
            clip: b.clip().cloned(),
        },
    }
}

fn activation_from_doc(doc: ActivationDoc, path: &str) -> Result<Activation> {
    Ok(match doc {
        ActivationDoc::Identity => Activation::Identity,
        ActivationDoc::Poly { coeffs } => Activation::Poly(RationalPoly::new(coeffs)),
        ActivationDoc::Pwl {
            breakpoints,
            pieces,
            rule,
        } => Activation::Pwl(pwl_from_doc(breakpoints, pieces, rule, path)?),
        ActivationDoc::BitBounded { base, k, clip } => {
            let base = match base {
                BaseDoc::Identity => BaseActivation::Identity,
                BaseDoc::Poly { coeffs } => BaseActivation::Poly(RationalPoly::new(coeffs)),
                BaseDoc::Pwl {
                    breakpoints,
                    pieces,
                    rule,
                } => BaseActivation::Pwl(pwl_from_doc(breakpoints, pieces, rule, path)?),
            };
            Activation::BitBounded(
                BitBoundedActivation::new(base, k, clip)
                    .map_err(|e| schema(path, e.to_string()))?,
            )
        }
    })
}

fn theta_doc(net: &Network, theta: &Theta) -> ThetaDoc {
    net.edges()
        .iter()
        .zip(theta.params())
        .map(|(e, p)| {
            (
                e.name.clone(),
                ParamDoc {
                    w: p.weight.clone(),
                    b: p.bias.clone(),
                },
            )
        })
        .collect()
}

fn theta_from_doc(net: &Network, mut doc: ThetaDoc, path: &str) -> Result<Theta> {
    let mut params = Vec::with_capacity(net.edge_count());
    for e in net.edges() {
        let p = doc
            .remove(&e.name)
            .ok_or_else(|| schema(format!("{path}.{}", e.name), "missing parameters for edge"))?;
        params.push(EdgeParams::new(p.w, p.b));
    }
    if let Some(extra) = doc.keys().next() {
        return Err(schema(format!("{path}.{extra}"), "no such edge"));
    }
    Theta::new(net, params)
}

fn vector_doc(net: &Network, v: &VertexVector) -> BTreeMap<String, Rational> {
    v.iter()
        .map(|(id, q)| (net.vertex(id).name.clone(), q.clone()))
        .collect()
}

fn vector_from_doc(
    net: &Network,
    doc: BTreeMap<String, Rational>,
    path: &str,
) -> Result<VertexVector> {
    let mut out = VertexVector::new();
    for (name, q) in doc {
        let id = net
            .vertex_id(&name)
            .ok_or_else(|| schema(format!("{path}.{name}"), "no such vertex"))?;
        out.set(id, q);
    }
    Ok(out)
}

fn vertex_ref(net: &Network, name: &str, path: &str) -> Result<crate::network::VertexId> {
    net.vertex_id(name)
        .ok_or_else(|| schema(path, format!("no vertex named {name:?}")))
}

fn int_rational(n: &num_bigint::BigInt) -> Rational {
    Rational::from_integer(n.clone())
}

fn rational_int(q: &Rational, path: &str) -> Result<num_bigint::BigInt> {
    if q.is_integer() {
        Ok(q.numer().clone())
    } else {
        Err(schema(path, "expected an integer"))
    }
}

fn provenance_doc(p: &Provenance) -> ProvenanceDoc {
    ProvenanceDoc {
        program: p.source.as_ref().map(ToString::to_string),
        sigma: p.sigma.as_ref().map(|s| s.coeffs().to_vec()),
        bit: p.bit,
        gadget: p.gadget.as_ref().map(|g| GadgetDoc {
            lambda_prime: g.integer_lambdas.iter().map(int_rational).collect(),
            d: int_rational(&g.common_denominator),
            alpha1: g.alpha1,
        }),
    }
}

fn provenance_from_doc(doc: ProvenanceDoc) -> Result<Provenance> {
    let source = doc
        .program
        .map(|text| Slp::parse(&text).map_err(|e| schema("provenance.program", e.to_string())))
        .transpose()?;
    let gadget = doc
        .gadget
        .map(|g| -> Result<GadgetMeta> {
            Ok(GadgetMeta {
                integer_lambdas: g
                    .lambda_prime
                    .iter()
                    .enumerate()
                    .map(|(i, q)| rational_int(q, &format!("provenance.gadget.lambda_prime[{i}]")))
                    .collect::<Result<_>>()?,
                common_denominator: rational_int(&g.d, "provenance.gadget.D")?,
                alpha1: g.alpha1,
            })
        })
        .transpose()?;
    Ok(Provenance {
        source,
        sigma: doc.sigma.map(RationalPoly::new),
        bit: doc.bit,
        gadget,
    })
}

fn loss_doc(net: &Network, loss: &LossSpec) -> LossDoc {
    let name = |v: crate::network::VertexId| net.vertex(v).name.clone();
    match *loss {
        LossSpec::Square { target } => LossDoc::Square {
            target: name(target),
        },
        LossSpec::Hinge { target } => LossDoc::Hinge {
            target: name(target),
        },
        LossSpec::Bit01 { target, j } => LossDoc::Bit01 {
            target: name(target),
            j,
        },
        LossSpec::VectorEquality => LossDoc::VectorEquality,
    }
}

fn loss_from_doc(net: &Network, doc: LossDoc) -> Result<LossSpec> {
    Ok(match doc {
        LossDoc::Square { target } => LossSpec::Square {
            target: vertex_ref(net, &target, "loss.target")?,
        },
        LossDoc::Hinge { target } => LossSpec::Hinge {
            target: vertex_ref(net, &target, "loss.target")?,
        },
        LossDoc::Bit01 { target, j } => LossSpec::Bit01 {
            target: vertex_ref(net, &target, "loss.target")?,
            j,
        },
        LossDoc::VectorEquality => LossSpec::VectorEquality,
    })
}

fn network_doc(net: &Network) -> (Vec<VertexDoc>, Vec<EdgeDoc>) {
    let vertices = net
        .vertices()
        .iter()
        .map(|v| VertexDoc {
            id: v.name.clone(),
            role: match v.role {
                Role::Source => RoleDoc::Source,
                Role::Hidden => RoleDoc::Hidden,
                Role::Target => RoleDoc::Target,
            },
            activation: activation_doc(&v.activation),
        })
        .collect();
    let edges = net
        .edges()
        .iter()
        .map(|e| EdgeDoc {
            id: e.name.clone(),
            u: net.vertex(e.from).name.clone(),
            v: net.vertex(e.to).name.clone(),
        })
        .collect();
    (vertices, edges)
}

fn network_from_doc(vertices: Vec<VertexDoc>, edges: Vec<EdgeDoc>) -> Result<Network> {
    let mut names = std::collections::HashSet::new();
    let mut vs = Vec::with_capacity(vertices.len());
    for (i, v) in vertices.into_iter().enumerate() {
        let path = format!("vertices[{i}]");
        if !names.insert(v.id.clone()) {
            return Err(schema(
                format!("{path}.id"),
                format!("duplicate vertex id {:?}", v.id),
            ));
        }
        let role = match v.role {
            RoleDoc::Source => Role::Source,
            RoleDoc::Hidden => Role::Hidden,
            RoleDoc::Target => Role::Target,
        };
        let activation = activation_from_doc(v.activation, &format!("{path}.activation"))?;
        vs.push(Vertex::new(v.id, role, activation));
    }
    let mut es = Vec::with_capacity(edges.len());
    for (i, e) in edges.into_iter().enumerate() {
        for (end, field) in [(&e.u, "u"), (&e.v, "v")] {
            if !names.contains(end) {
                return Err(schema(
                    format!("edges[{i}].{field}"),
                    format!("edge {:?} refers to unknown vertex {end:?}", e.id),
                ));
            }
        }
        es.push(EdgeSpec::new(e.id, e.u, e.v));
    }
    Network::new(vs, es).map_err(|e| schema("edges", e.to_string()))
}

fn sample_doc(net: &Network, s: &Sample) -> SampleDoc {
    SampleDoc {
        input: vector_doc(net, &s.input),
        label: vector_doc(net, &s.label),
        flag: s.flag.bit(),
        tag: s.tag.clone(),
    }
}

fn sample_from_doc(net: &Network, doc: SampleDoc, i: usize) -> Result<Sample> {
    let path = format!("dataset[{i}]");
    let flag = match doc.flag {
        0 => SampleFlag::Aux,
        1 => SampleFlag::Main,
        other => {
            return Err(schema(
                format!("{path}.flag"),
                format!("flag must be 0 or 1, got {other}"),
            ))
        }
    };
    Ok(Sample {
        input: vector_from_doc(net, doc.input, &format!("{path}.input"))?,
        label: vector_from_doc(net, doc.label, &format!("{path}.label"))?,
        flag,
        tag: doc.tag,
    })
}

fn to_doc(inst: &Instance) -> InstanceDoc {
    let net = inst.network();
    let (vertices, edges) = network_doc(net);
    let (kind, gap, backprop, provenance) = match inst {
        Instance::Erm(i) => (
            KindDoc::Erm,
            Some(GapDoc {
                a: i.gap.a,
                b: i.gap.b,
            }),
            None,
            &i.provenance,
        ),
        Instance::Backprop(i) => (
            KindDoc::Backprop,
            None,
            Some(BackpropDoc {
                edge: net.edge(i.edge).name.clone(),
                variant: match i.variant {
                    BackpropVariant::Sign { promise } => VariantDoc::Sign { promise },
                    BackpropVariant::Bit { j } => VariantDoc::Bit { j },
                },
                mode: match i.mode {
                    A0Mode::Unit => ModeDoc::Unit,
                    A0Mode::BoundedNorm => ModeDoc::Bn,
                },
                copies: i.copies,
                a0: i.a0.clone(),
            }),
            &i.provenance,
        ),
    };
    InstanceDoc {
        kind,
        vertices,
        edges,
        theta: theta_doc(net, inst.theta_star()),
        dataset: inst.dataset().iter().map(|s| sample_doc(net, s)).collect(),
        loss: loss_doc(net, inst.loss()),
        gap,
        backprop,
        provenance: provenance_doc(provenance),
    }
}

fn from_doc(doc: InstanceDoc) -> Result<Instance> {
    let network = network_from_doc(doc.vertices, doc.edges)?;
    let theta_star = theta_from_doc(&network, doc.theta, "theta")?;
    let dataset = doc
        .dataset
        .into_iter()
        .enumerate()
        .map(|(i, s)| sample_from_doc(&network, s, i))
        .collect::<Result<Vec<_>>>()?;
    let loss = loss_from_doc(&network, doc.loss)?;
    let provenance = provenance_from_doc(doc.provenance)?;
    match doc.kind {
        KindDoc::Erm => {
            let gap = doc
                .gap
                .ok_or_else(|| schema("gap", "ERM instances need a gap"))?;
            let gap = Gap::new(gap.a, gap.b).map_err(|e| schema("gap", e.to_string()))?;
            Ok(Instance::Erm(ErmInstance {
                network,
                theta_star,
                dataset,
                loss,
                gap,
                provenance,
            }))
        }
        KindDoc::Backprop => {
            let bp = doc
                .backprop
                .ok_or_else(|| schema("backprop", "gradient instances need a backprop block"))?;
            let edge = network
                .edge_id(&bp.edge)
                .ok_or_else(|| schema("backprop.edge", format!("no edge named {:?}", bp.edge)))?;
            Ok(Instance::Backprop(BackpropInstance {
                network,
                theta_star,
                dataset,
                loss,
                edge,
                variant: match bp.variant {
                    VariantDoc::Sign { promise } => BackpropVariant::Sign { promise },
                    VariantDoc::Bit { j } => BackpropVariant::Bit { j },
                },
                mode: match bp.mode {
                    ModeDoc::Unit => A0Mode::Unit,
                    ModeDoc::Bn => A0Mode::BoundedNorm,
                },
                copies: bp.copies,
                a0: bp.a0,
                provenance,
            }))
        }
    }
}

fn canonical<T: Serialize>(value: &T) -> String {
    // serde_json::Value keeps object keys in a BTreeMap, so this sorts them
    let v = serde_json::to_value(value).expect("documents contain only strings, numbers, and maps");
    serde_json::to_string(&v).expect("serializing a Value cannot fail")
}

fn parse_json<'de, T: Deserialize<'de>>(text: &'de str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        schema(
            if path == "." { "$".to_string() } else { path },
            e.inner().to_string(),
        )
    })?;
    de.end().map_err(|e| schema("$", e.to_string()))?;
    Ok(value)
}

/// Canonical serialization.
pub fn serialize_instance(inst: &Instance) -> String {
    canonical(&to_doc(inst))
}

pub fn parse_instance(text: &str) -> Result<Instance> {
    from_doc(parse_json(text)?)
}

/// Canonical serialization of a parameter vector: `{"<edge>": {"b": …, "w": …}, …}`.
pub fn serialize_theta(net: &Network, theta: &Theta) -> String {
    canonical(&theta_doc(net, theta))
}

pub fn parse_theta(net: &Network, text: &str) -> Result<Theta> {
    theta_from_doc(net, parse_json(text)?, "$")
}

/// `|I|` in bits.
pub fn instance_bits(inst: &Instance) -> u64 {
    8 * serialize_instance(inst).len() as u64
}

/// `|enc θ|` in bits.
pub fn theta_bits(net: &Network, theta: &Theta) -> u64 {
    8 * serialize_theta(net, theta).len() as u64
}

/// A lower bound on [`theta_bits`] that never materializes decimal strings:
/// each scalar contributes at least the digit count implied by its bit-length.
pub fn theta_bits_lower_bound(theta: &Theta) -> u64 {
    theta
        .scalars()
        .map(|q| {
            let bits = |n: &num_bigint::BigInt| n.bits().max(1);
            // n ≥ 2^{bits−1} has more than (bits−1)·log10(2) decimal digits;
            // the constant sits just under log10(2) so rounding never overshoots
            #[allow(clippy::approx_constant)]
            let digits =
                |n: &num_bigint::BigInt| ((bits(n) - 1) as f64 * 0.301_029_99).floor() as u64 + 1;
            8 * (digits(q.numer()) + if q.is_integer() { 0 } else { digits(q.denom()) })
        })
        .sum()
}
