//! Feed-forward DAG networks with per-edge weights and biases, exact
//! forward evaluation, losses, and reverse-mode gradients.
//!
//! Node rule: `f_v = σ_v(x_v + Σ_{(u,v)∈E} (w_{uv}·f_u + b_{uv}))`, where the
//! input vector `x` injects additively at every vertex. Sources have no
//! incoming edges, so they simply return `x_s`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt;

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::numbers::{BitLen, Rational};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VertexId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeId(pub usize);

impl VertexId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl EdgeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Source,
    Hidden,
    Target,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Source => "source",
            Role::Hidden => "hidden",
            Role::Target => "target",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Role::Source),
            "hidden" => Ok(Role::Hidden),
            "target" => Ok(Role::Target),
            _ => Err(Error::InvalidParameter(format!(
                "unknown vertex role {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vertex {
    pub name: String,
    pub role: Role,
    pub activation: Activation,
}

impl Vertex {
    pub fn new(name: impl Into<String>, role: Role, activation: Activation) -> Self {
        Vertex {
            name: name.into(),
            role,
            activation,
        }
    }
}

/// Edge given by endpoint names, before validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSpec {
    pub name: String,
    pub from: String,
    pub to: String,
}

impl EdgeSpec {
    pub fn new(name: impl Into<String>, from: impl Into<String>, to: impl Into<String>) -> Self {
        EdgeSpec {
            name: name.into(),
            from: from.into(),
            to: to.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub name: String,
    pub from: VertexId,
    pub to: VertexId,
}

/// Orders identifiers so that embedded integers compare numerically:
/// `e2 < e10`, `v9 < v10 < w0`.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let (mut xs, mut ys) = (a.as_bytes(), b.as_bytes());
    loop {
        match (xs.first(), ys.first()) {
            (None, None) => return a.cmp(b),
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(x), Some(y)) if x.is_ascii_digit() && y.is_ascii_digit() => {
                let lx = xs.iter().take_while(|c| c.is_ascii_digit()).count();
                let ly = ys.iter().take_while(|c| c.is_ascii_digit()).count();
                let (dx, dy) = (&xs[..lx], &ys[..ly]);
                let tx = trim_zeros(dx);
                let ty = trim_zeros(dy);
                let ord = tx.len().cmp(&ty.len()).then_with(|| tx.cmp(ty));
                if ord != Ordering::Equal {
                    return ord;
                }
                xs = &xs[lx..];
                ys = &ys[ly..];
            }
            (Some(x), Some(y)) => {
                if x != y {
                    return x.cmp(y);
                }
                xs = &xs[1..];
                ys = &ys[1..];
            }
        }
    }
}

fn trim_zeros(d: &[u8]) -> &[u8] {
    let k = d.iter().take_while(|&&c| c == b'0').count();
    &d[k..]
}

/// A validated DAG. Vertices and edges are stored in natural identifier
/// order, so two networks built from the same specs in any order are equal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    incoming: Vec<Vec<EdgeId>>,
    topo: Vec<VertexId>,
    vertex_index: HashMap<String, VertexId>,
    edge_index: HashMap<String, EdgeId>,
}

impl Network {
    pub fn new(mut vertices: Vec<Vertex>, mut edges: Vec<EdgeSpec>) -> Result<Self> {
        vertices.sort_by(|a, b| natural_cmp(&a.name, &b.name));
        edges.sort_by(|a, b| natural_cmp(&a.name, &b.name));

        let mut vertex_index = HashMap::with_capacity(vertices.len());
        for (i, v) in vertices.iter().enumerate() {
            if vertex_index.insert(v.name.clone(), VertexId(i)).is_some() {
                return Err(Error::Network(format!("duplicate vertex id {:?}", v.name)));
            }
            if v.role == Role::Source && !v.activation.is_identity() {
                return Err(Error::Network(format!(
                    "source vertex {:?} must use the identity activation",
                    v.name
                )));
            }
        }
        let mut edge_index = HashMap::with_capacity(edges.len());
        let mut resolved = Vec::with_capacity(edges.len());
        let mut incoming = vec![Vec::new(); vertices.len()];
        for (i, e) in edges.into_iter().enumerate() {
            let lookup = |end: &str| {
                vertex_index.get(end).copied().ok_or_else(|| {
                    Error::Network(format!(
                        "edge {:?} refers to unknown vertex {end:?}",
                        e.name
                    ))
                })
            };
            let from = lookup(&e.from)?;
            let to = lookup(&e.to)?;
            if vertices[to.0].role == Role::Source {
                return Err(Error::Network(format!(
                    "edge {:?} enters source vertex {:?}",
                    e.name, e.to
                )));
            }
            if edge_index.insert(e.name.clone(), EdgeId(i)).is_some() {
                return Err(Error::Network(format!("duplicate edge id {:?}", e.name)));
            }
            incoming[to.0].push(EdgeId(i));
            resolved.push(Edge {
                name: e.name,
                from,
                to,
            });
        }
        let topo = topological_order(vertices.len(), &resolved)?;
        Ok(Network {
            vertices,
            edges: resolved,
            incoming,
            topo,
            vertex_index,
            edge_index,
        })
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn vertex(&self, v: VertexId) -> &Vertex {
        &self.vertices[v.0]
    }

    pub fn edge(&self, e: EdgeId) -> &Edge {
        &self.edges[e.0]
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex_id(&self, name: &str) -> Option<VertexId> {
        self.vertex_index.get(name).copied()
    }

    pub fn edge_id(&self, name: &str) -> Option<EdgeId> {
        self.edge_index.get(name).copied()
    }

    pub fn require_vertex(&self, name: &str) -> Result<VertexId> {
        self.vertex_id(name)
            .ok_or_else(|| Error::Network(format!("no vertex named {name:?}")))
    }

    pub fn require_edge(&self, name: &str) -> Result<EdgeId> {
        self.edge_id(name)
            .ok_or_else(|| Error::Network(format!("no edge named {name:?}")))
    }

    pub fn incoming(&self, v: VertexId) -> &[EdgeId] {
        &self.incoming[v.0]
    }

    /// Cached topological order; ties are broken by vertex index.
    pub fn topological_order(&self) -> &[VertexId] {
        &self.topo
    }

    pub fn targets(&self) -> Vec<VertexId> {
        self.ids_with_role(Role::Target)
    }

    pub fn sources(&self) -> Vec<VertexId> {
        self.ids_with_role(Role::Source)
    }

    fn ids_with_role(&self, role: Role) -> Vec<VertexId> {
        (0..self.vertices.len())
            .map(VertexId)
            .filter(|v| self.vertices[v.0].role == role)
            .collect()
    }

    /// True when a vertex carries a discontinuous activation.
    pub fn has_discontinuity(&self) -> bool {
        self.vertices
            .iter()
            .any(|v| v.activation.has_discontinuity())
    }

    pub fn forward(&self, theta: &Theta, x: &VertexVector, max_bits: u64) -> Result<EvalTrace> {
        self.forward_metered(theta, x, &mut Meter::new(max_bits))
    }

    pub fn forward_metered(
        &self,
        theta: &Theta,
        x: &VertexVector,
        meter: &mut Meter,
    ) -> Result<EvalTrace> {
        theta.check(self)?;
        let n = self.vertices.len();
        let mut preactivations = vec![Rational::zero(); n];
        let mut values = vec![Rational::zero(); n];
        let mut bit_lengths = vec![BitLen(1); n];
        for &v in &self.topo {
            let name = &self.vertices[v.0].name;
            let mut z = x.get(v);
            for &e in &self.incoming[v.0] {
                let p = &theta.params[e.0];
                let u = self.edges[e.0].from;
                let term = &p.weight * &values[u.0];
                meter.observe(&term, name)?;
                z += term;
                z += &p.bias;
                meter.ops += 3;
                meter.observe(&z, name)?;
            }
            let act = &self.vertices[v.0].activation;
            meter.ops += act.op_cost(&z);
            let f = act.eval(&z);
            meter.observe(&f, name)?;
            bit_lengths[v.0] = z.bit_length().max(f.bit_length());
            preactivations[v.0] = z;
            values[v.0] = f;
        }
        let max_bit_length = bit_lengths.iter().copied().max().unwrap_or(BitLen(1));
        Ok(EvalTrace {
            preactivations,
            values,
            bit_lengths,
            max_bit_length,
        })
    }

    /// Propagates the adjoint `seed = ∂L/∂f_t` backwards and adds the
    /// per-edge contributions into `grad`.
    fn accumulate_gradient(
        &self,
        theta: &Theta,
        trace: &EvalTrace,
        seed: (VertexId, Rational),
        grad: &mut [EdgeParams],
        meter: &mut Meter,
    ) -> Result<()> {
        let mut adjoint = vec![Rational::zero(); self.vertices.len()];
        adjoint[seed.0 .0] = seed.1;
        for &v in self.topo.iter().rev() {
            if adjoint[v.0].is_zero() || self.incoming[v.0].is_empty() {
                continue;
            }
            let vertex = &self.vertices[v.0];
            let slope = vertex.activation.derivative(&trace.preactivations[v.0]);
            let delta = &adjoint[v.0] * &slope;
            meter.ops += 1 + vertex.activation.op_cost(&trace.preactivations[v.0]);
            meter.observe(&delta, &vertex.name)?;
            if delta.is_zero() {
                continue;
            }
            for &e in &self.incoming[v.0] {
                let u = self.edges[e.0].from;
                let g = &mut grad[e.0];
                g.weight += &delta * &trace.values[u.0];
                g.bias += &delta;
                let back = &theta.params[e.0].weight * &delta;
                adjoint[u.0] += back;
                meter.ops += 5;
                meter.observe(&g.weight, &self.edges[e.0].name)?;
                meter.observe(&g.bias, &self.edges[e.0].name)?;
                meter.observe(&adjoint[u.0], &self.vertices[u.0].name)?;
            }
        }
        Ok(())
    }

    /// Exact total loss `Σ_i L(f_θ(x_i), y_i)`.
    pub fn loss_total(
        &self,
        theta: &Theta,
        dataset: &[Sample],
        spec: &LossSpec,
        max_bits: u64,
    ) -> Result<Rational> {
        let mut meter = Meter::new(max_bits);
        let mut total = Rational::zero();
        for s in dataset {
            let trace = self.forward_metered(theta, &s.input, &mut meter)?;
            total += sample_loss(spec, &trace, s);
        }
        Ok(total)
    }

    /// Exact gradient of the total loss with respect to every edge parameter.
    pub fn gradient(
        &self,
        theta: &Theta,
        dataset: &[Sample],
        spec: &LossSpec,
        max_bits: u64,
    ) -> Result<GradientReport> {
        self.gradient_metered(theta, dataset, spec, &mut Meter::new(max_bits))
    }

    pub fn gradient_metered(
        &self,
        theta: &Theta,
        dataset: &[Sample],
        spec: &LossSpec,
        meter: &mut Meter,
    ) -> Result<GradientReport> {
        theta.check(self)?;
        let mut grad = vec![EdgeParams::zero(); self.edges.len()];
        let mut kink_samples = 0;
        let mut loss = Rational::zero();
        for (i, s) in dataset.iter().enumerate() {
            if s.flag == SampleFlag::Aux {
                return Err(Error::NotDifferentiable(format!(
                    "sample {i} is auxiliary and uses the vector-equality loss"
                )));
            }
            let trace = self.forward_metered(theta, &s.input, meter)?;
            loss += sample_loss(spec, &trace, s);
            let (target, slope, kink) = loss_slope(spec, &trace, s)?;
            meter.ops += 3;
            if kink {
                kink_samples += 1;
            }
            if !slope.is_zero() {
                self.accumulate_gradient(theta, &trace, (target, slope), &mut grad, meter)?;
            }
        }
        Ok(GradientReport {
            gradient: Theta { params: grad },
            loss,
            kink_samples,
            ops: meter.ops,
            max_bit_length: meter.max_bits,
        })
    }

    /// One partial derivative `∂L/∂w_e` or `∂L/∂b_e`.
    pub fn grad_coordinate(
        &self,
        theta: &Theta,
        dataset: &[Sample],
        spec: &LossSpec,
        edge: EdgeId,
        wrt: Wrt,
        max_bits: u64,
    ) -> Result<GradCoordinate> {
        if edge.0 >= self.edges.len() {
            return Err(Error::Network(format!(
                "edge index {} out of range",
                edge.0
            )));
        }
        let report = self.gradient(theta, dataset, spec, max_bits)?;
        let p = &report.gradient.params[edge.0];
        Ok(GradCoordinate {
            value: match wrt {
                Wrt::Weight => p.weight.clone(),
                Wrt::Bias => p.bias.clone(),
            },
            at_kink: report.kink_samples > 0,
        })
    }
}

fn topological_order(n: usize, edges: &[Edge]) -> Result<Vec<VertexId>> {
    let mut indegree = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in edges {
        indegree[e.to.0] += 1;
        out[e.from.0].push(e.to.0);
    }
    // min-heap on vertex index for a deterministic order
    let mut ready: BinaryHeap<std::cmp::Reverse<usize>> = (0..n)
        .filter(|&v| indegree[v] == 0)
        .map(std::cmp::Reverse)
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(std::cmp::Reverse(v)) = ready.pop() {
        order.push(VertexId(v));
        for &w in &out[v] {
            indegree[w] -= 1;
            if indegree[w] == 0 {
                ready.push(std::cmp::Reverse(w));
            }
        }
    }
    if order.len() != n {
        return Err(Error::Network("graph contains a cycle".into()));
    }
    Ok(order)
}

/// Incremental construction with automatically numbered edges `e0, e1, …`.
#[derive(Debug, Default, Clone)]
pub struct NetworkBuilder {
    vertices: Vec<Vertex>,
    edges: Vec<EdgeSpec>,
    params: Vec<EdgeParams>,
}

impl NetworkBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn vertex(
        &mut self,
        name: impl Into<String>,
        role: Role,
        activation: Activation,
    ) -> String {
        let name = name.into();
        self.vertices
            .push(Vertex::new(name.clone(), role, activation));
        name
    }

    pub fn edge(&mut self, from: &str, to: &str, weight: Rational, bias: Rational) -> String {
        let name = format!("e{}", self.edges.len());
        self.edges.push(EdgeSpec::new(name.clone(), from, to));
        self.params.push(EdgeParams { weight, bias });
        name
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Builds the network and the parameter vector recorded with each edge.
    pub fn build(self) -> Result<(Network, Theta)> {
        let named: Vec<(String, EdgeParams)> = self
            .edges
            .iter()
            .map(|e| e.name.clone())
            .zip(self.params)
            .collect();
        let net = Network::new(self.vertices, self.edges)?;
        let mut theta = Theta::zeros(&net);
        for (name, p) in named {
            let e = net.require_edge(&name)?;
            theta.params[e.0] = p;
        }
        Ok((net, theta))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EdgeParams {
    pub weight: Rational,
    pub bias: Rational,
}

impl EdgeParams {
    pub fn new(weight: Rational, bias: Rational) -> Self {
        EdgeParams { weight, bias }
    }

    pub fn zero() -> Self {
        Self::default()
    }
}

/// One `(w, b)` pair per edge, indexed like [`Network::edges`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Theta {
    params: Vec<EdgeParams>,
}

impl Theta {
    pub fn new(net: &Network, params: Vec<EdgeParams>) -> Result<Self> {
        let theta = Theta { params };
        theta.check(net)?;
        Ok(theta)
    }

    pub fn zeros(net: &Network) -> Self {
        Theta {
            params: vec![EdgeParams::zero(); net.edge_count()],
        }
    }

    pub fn check(&self, net: &Network) -> Result<()> {
        if self.params.len() != net.edge_count() {
            return Err(Error::ThetaMismatch {
                expected: net.edge_count(),
                got: self.params.len(),
            });
        }
        Ok(())
    }

    pub fn params(&self) -> &[EdgeParams] {
        &self.params
    }

    pub fn get(&self, e: EdgeId) -> &EdgeParams {
        &self.params[e.0]
    }

    pub fn get_mut(&mut self, e: EdgeId) -> &mut EdgeParams {
        &mut self.params[e.0]
    }

    pub fn weight(&self, e: EdgeId) -> &Rational {
        &self.params[e.0].weight
    }

    pub fn bias(&self, e: EdgeId) -> &Rational {
        &self.params[e.0].bias
    }

    pub fn coordinate(&self, e: EdgeId, wrt: Wrt) -> &Rational {
        match wrt {
            Wrt::Weight => &self.params[e.0].weight,
            Wrt::Bias => &self.params[e.0].bias,
        }
    }

    pub fn coordinate_mut(&mut self, e: EdgeId, wrt: Wrt) -> &mut Rational {
        match wrt {
            Wrt::Weight => &mut self.params[e.0].weight,
            Wrt::Bias => &mut self.params[e.0].bias,
        }
    }

    /// Adds a vertex bias by folding it into the first incoming edge.
    pub fn add_node_bias(&mut self, net: &Network, v: VertexId, b: &Rational) -> Result<()> {
        let e = *net.incoming(v).first().ok_or_else(|| {
            Error::Network(format!(
                "vertex {:?} has no incoming edge",
                net.vertex(v).name
            ))
        })?;
        self.params[e.0].bias += b;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Every weight and bias, weight first per edge.
    pub fn scalars(&self) -> impl Iterator<Item = &Rational> {
        self.params.iter().flat_map(|p| [&p.weight, &p.bias])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Wrt {
    Weight,
    Bias,
}

impl std::str::FromStr for Wrt {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weight" | "w" => Ok(Wrt::Weight),
            "bias" | "b" => Ok(Wrt::Bias),
            _ => Err(Error::InvalidParameter(format!(
                "expected weight or bias, got {s:?}"
            ))),
        }
    }
}

/// Sparse vector indexed by vertex; absent coordinates are zero.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VertexVector(BTreeMap<VertexId, Rational>);

impl VertexVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single(v: VertexId, value: Rational) -> Self {
        let mut out = Self::new();
        out.set(v, value);
        out
    }

    pub fn get(&self, v: VertexId) -> Rational {
        self.0.get(&v).cloned().unwrap_or_default()
    }

    /// Sets a coordinate; zero removes it.
    pub fn set(&mut self, v: VertexId, value: Rational) {
        if value.is_zero() {
            self.0.remove(&v);
        } else {
            self.0.insert(v, value);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (VertexId, &Rational)> {
        self.0.iter().map(|(&v, q)| (v, q))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Dense copy of length `n`.
    pub fn to_dense(&self, n: usize) -> Vec<Rational> {
        let mut out = vec![Rational::zero(); n];
        for (v, q) in self.iter() {
            out[v.0] = q.clone();
        }
        out
    }

    pub fn from_dense(values: &[Rational]) -> Self {
        let mut out = Self::new();
        for (i, q) in values.iter().enumerate() {
            out.set(VertexId(i), q.clone());
        }
        out
    }
}

/// Whether a sample is the scored one or an auxiliary forcing sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleFlag {
    Aux,
    Main,
}

impl SampleFlag {
    pub fn bit(self) -> u8 {
        match self {
            SampleFlag::Aux => 0,
            SampleFlag::Main => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub input: VertexVector,
    pub label: VertexVector,
    pub flag: SampleFlag,
    /// Free-form description used in diagnostics.
    pub tag: String,
}

impl Sample {
    pub fn main(input: VertexVector, label: VertexVector) -> Self {
        Sample {
            input,
            label,
            flag: SampleFlag::Main,
            tag: "main".into(),
        }
    }
}

/// Per-sample loss. Auxiliary samples always use exact vector equality
/// over all vertices; main samples use the declared kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LossSpec {
    /// `½(f_t − y_t)²`.
    Square { target: VertexId },
    /// `max{0, 1 − y_t·f_t}`.
    Hinge { target: VertexId },
    /// `1[bit_j(f_t) ≠ 1]`.
    Bit01 { target: VertexId, j: u64 },
    /// `1[f ≠ y]` over the full vertex vector.
    VectorEquality,
}

impl LossSpec {
    pub fn target(&self) -> Option<VertexId> {
        match *self {
            LossSpec::Square { target }
            | LossSpec::Hinge { target }
            | LossSpec::Bit01 { target, .. } => Some(target),
            LossSpec::VectorEquality => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LossSpec::Square { .. } => "square",
            LossSpec::Hinge { .. } => "hinge",
            LossSpec::Bit01 { .. } => "bit01",
            LossSpec::VectorEquality => "vector_equality",
        }
    }
}

/// True iff every vertex value matches the label exactly.
pub fn matches_label(trace: &EvalTrace, label: &VertexVector) -> bool {
    let mut expected = label.iter().peekable();
    for (i, f) in trace.values.iter().enumerate() {
        let want = match expected.peek() {
            Some((v, q)) if v.0 == i => {
                let q = (*q).clone();
                expected.next();
                q
            }
            _ => Rational::zero(),
        };
        if *f != want {
            return false;
        }
    }
    expected.next().is_none()
}

pub fn sample_loss(spec: &LossSpec, trace: &EvalTrace, sample: &Sample) -> Rational {
    let indicator = |b: bool| if b { Rational::one() } else { Rational::zero() };
    if sample.flag == SampleFlag::Aux {
        return indicator(!matches_label(trace, &sample.label));
    }
    match *spec {
        LossSpec::Square { target } => {
            let d = &trace.values[target.0] - &sample.label.get(target);
            &(&d * &d) * &Rational::ratio(1, 2)
        }
        LossSpec::Hinge { target } => {
            let s = &Rational::one() - &(&sample.label.get(target) * &trace.values[target.0]);
            if s.is_positive() {
                s
            } else {
                Rational::zero()
            }
        }
        LossSpec::Bit01 { target, j } => indicator(trace.values[target.0].bit(j) != 1),
        LossSpec::VectorEquality => indicator(!matches_label(trace, &sample.label)),
    }
}

/// `∂L/∂f_t` for one main sample, plus whether the hinge kink was hit.
fn loss_slope(
    spec: &LossSpec,
    trace: &EvalTrace,
    sample: &Sample,
) -> Result<(VertexId, Rational, bool)> {
    match *spec {
        LossSpec::Square { target } => Ok((
            target,
            &trace.values[target.0] - &sample.label.get(target),
            false,
        )),
        LossSpec::Hinge { target } => {
            let y = sample.label.get(target);
            let s = &Rational::one() - &(&y * &trace.values[target.0]);
            if s.is_positive() {
                Ok((target, -y, false))
            } else {
                // subgradient 0 at the kink, flagged to the caller
                Ok((target, Rational::zero(), s.is_zero()))
            }
        }
        LossSpec::Bit01 { .. } | LossSpec::VectorEquality => Err(Error::NotDifferentiable(
            format!("{} loss has no derivative", spec.kind()),
        )),
    }
}

/// Node values and bit-lengths of one forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalTrace {
    pub preactivations: Vec<Rational>,
    pub values: Vec<Rational>,
    /// Per vertex, the larger of the pre-activation and value bit-lengths.
    pub bit_lengths: Vec<BitLen>,
    pub max_bit_length: BitLen,
}

impl EvalTrace {
    pub fn value(&self, v: VertexId) -> &Rational {
        &self.values[v.0]
    }
}

/// Counts arithmetic operations and tracks the largest intermediate
/// bit-length, failing once the budget is exceeded.
#[derive(Debug, Clone)]
pub struct Meter {
    pub ops: u64,
    pub max_bits: BitLen,
    limit: u64,
}

impl Meter {
    pub fn new(limit: u64) -> Self {
        Meter {
            ops: 0,
            max_bits: BitLen(1),
            limit,
        }
    }

    pub fn limit(&self) -> u64 {
        self.limit
    }

    pub fn observe(&mut self, q: &Rational, location: &str) -> Result<()> {
        let bits = q.bit_length();
        if bits.get() > self.limit {
            return Err(Error::budget(self.limit, bits.get(), location));
        }
        if bits > self.max_bits {
            self.max_bits = bits;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GradientReport {
    /// Partial derivatives shaped like the parameter vector.
    pub gradient: Theta,
    pub loss: Rational,
    /// Main samples whose hinge loss sat exactly at the kink.
    pub kink_samples: usize,
    pub ops: u64,
    pub max_bit_length: BitLen,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GradCoordinate {
    pub value: Rational,
    /// Set when some hinge term was evaluated at its kink (subgradient 0 used).
    pub at_kink: bool,
}

impl fmt::Display for GradCoordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::PwlActivation;
    use crate::poly::RationalPoly;
    use crate::slp::DEFAULT_MAX_BITS;
    use proptest::prelude::*;

    fn q(s: &str) -> Rational {
        s.parse().unwrap()
    }

    fn single_edge(act: Activation, w: &str, b: &str) -> (Network, Theta) {
        let mut nb = NetworkBuilder::new();
        nb.vertex("s", Role::Source, Activation::Identity);
        nb.vertex("t", Role::Target, act);
        nb.edge("s", "t", q(w), q(b));
        nb.build().unwrap()
    }

    fn input(net: &Network, name: &str, value: &str) -> VertexVector {
        VertexVector::single(net.vertex_id(name).unwrap(), q(value))
    }

    #[test]
    fn single_edge_square_activation() {
        let (net, theta) = single_edge(Activation::Poly(RationalPoly::monomial(2)), "2", "1");
        let trace = net
            .forward(&theta, &input(&net, "s", "3"), DEFAULT_MAX_BITS)
            .unwrap();
        assert_eq!(trace.value(net.vertex_id("t").unwrap()), &q("49"));
    }

    #[test]
    fn identity_chain() {
        let mut nb = NetworkBuilder::new();
        nb.vertex("v0", Role::Source, Activation::Identity);
        for i in 1..=7 {
            let role = if i == 7 { Role::Target } else { Role::Hidden };
            nb.vertex(format!("v{i}"), role, Activation::Identity);
            nb.edge(&format!("v{}", i - 1), &format!("v{i}"), q("1"), q("0"));
        }
        let (net, theta) = nb.build().unwrap();
        let trace = net
            .forward(&theta, &input(&net, "v0", "-5/9"), DEFAULT_MAX_BITS)
            .unwrap();
        assert_eq!(trace.value(net.vertex_id("v7").unwrap()), &q("-5/9"));
    }

    #[test]
    fn validation() {
        let v = |n: &str, r| Vertex::new(n, r, Activation::Identity);
        let dangling = Network::new(
            vec![v("a", Role::Source), v("b", Role::Target)],
            vec![EdgeSpec::new("e0", "a", "c")],
        );
        assert!(matches!(dangling, Err(Error::Network(m)) if m.contains("\"e0\"")));
        let cycle = Network::new(
            vec![v("a", Role::Hidden), v("b", Role::Hidden)],
            vec![EdgeSpec::new("e0", "a", "b"), EdgeSpec::new("e1", "b", "a")],
        );
        assert!(cycle.is_err());
        let dup = Network::new(vec![v("a", Role::Source), v("a", Role::Target)], vec![]);
        assert!(dup.is_err());
        let into_source = Network::new(
            vec![v("a", Role::Source), v("b", Role::Source)],
            vec![EdgeSpec::new("e0", "a", "b")],
        );
        assert!(into_source.is_err());
    }

    #[test]
    fn canonical_order_is_natural() {
        let v = |n: &str| Vertex::new(n, Role::Hidden, Activation::Identity);
        let net = Network::new(vec![v("v10"), v("v2"), v("a"), v("v1")], vec![]).unwrap();
        let names: Vec<_> = net.vertices().iter().map(|v| v.name.as_str()).collect();
        assert_eq!(names, ["a", "v1", "v2", "v10"]);
        assert_eq!(natural_cmp("e02", "e2"), Ordering::Less);
        assert_eq!(natural_cmp("L1_10_0", "L1_9_3"), Ordering::Greater);
    }

    #[test]
    fn losses() {
        let (net, theta) = single_edge(Activation::Identity, "1", "0");
        let t = net.vertex_id("t").unwrap();
        let sample = |x: &str, y: &str| Sample::main(input(&net, "s", x), input(&net, "t", y));
        let total = |spec: &LossSpec, x: &str, y: &str| {
            net.loss_total(&theta, &[sample(x, y)], spec, DEFAULT_MAX_BITS)
                .unwrap()
        };
        assert_eq!(total(&LossSpec::Square { target: t }, "3", "-1"), q("8"));
        assert_eq!(total(&LossSpec::Hinge { target: t }, "5", "1"), q("0"));
        assert_eq!(total(&LossSpec::Hinge { target: t }, "-1", "1"), q("2"));
        assert_eq!(
            total(&LossSpec::Bit01 { target: t, j: 4 }, "16", "0"),
            q("0")
        );
        assert_eq!(
            total(&LossSpec::Bit01 { target: t, j: 3 }, "16", "0"),
            q("1")
        );
    }

    #[test]
    fn vector_equality_checks_every_vertex() {
        let (net, theta) = single_edge(Activation::Identity, "2", "0");
        let (s, t) = (net.vertex_id("s").unwrap(), net.vertex_id("t").unwrap());
        let trace = net
            .forward(&theta, &VertexVector::single(s, q("3")), DEFAULT_MAX_BITS)
            .unwrap();
        let mut label = VertexVector::single(s, q("3"));
        label.set(t, q("6"));
        assert!(matches_label(&trace, &label));
        label.set(s, Rational::zero());
        assert!(!matches_label(&trace, &label));
    }

    #[test]
    fn gradient_of_appended_edge() {
        // s → t0 (identity, carries n), t0 → t with w = 0: gradient a₀·n
        let mut nb = NetworkBuilder::new();
        nb.vertex("s", Role::Source, Activation::Identity);
        nb.vertex("t0", Role::Hidden, Activation::Identity);
        nb.vertex("t", Role::Target, Activation::Identity);
        nb.edge("s", "t0", q("7"), q("0"));
        let e = nb.edge("t0", "t", q("0"), q("0"));
        let (net, theta) = nb.build().unwrap();
        let (s, t) = (net.vertex_id("s").unwrap(), net.vertex_id("t").unwrap());
        let a0 = q("3");
        // x_t = a₀ on the target makes f_t = a₀ at w = 0
        let mut x = VertexVector::single(s, q("1"));
        x.set(t, a0.clone());
        let data = vec![Sample::main(x, VertexVector::single(t, -a0.clone()))];
        let spec = LossSpec::Square { target: t };
        let e = net.edge_id(&e).unwrap();
        let g = net
            .grad_coordinate(&theta, &data, &spec, e, Wrt::Weight, DEFAULT_MAX_BITS)
            .unwrap();
        // (f_t − y)·f_t0 = (a₀ + a₀)·7
        assert_eq!(g.value, &(&a0 + &a0) * &q("7"));
        assert!(!g.at_kink);
    }

    #[test]
    fn empty_dataset_gives_zero_gradient() {
        let (net, theta) = single_edge(Activation::Poly(RationalPoly::monomial(3)), "2", "1");
        let t = net.vertex_id("t").unwrap();
        let g = net
            .grad_coordinate(
                &theta,
                &[],
                &LossSpec::Square { target: t },
                EdgeId(0),
                Wrt::Weight,
                64,
            )
            .unwrap();
        assert_eq!(g.value, Rational::zero());
    }

    #[test]
    fn bit01_and_aux_are_rejected() {
        let (net, theta) = single_edge(Activation::Identity, "1", "0");
        let t = net.vertex_id("t").unwrap();
        let data = vec![Sample::main(input(&net, "s", "1"), VertexVector::new())];
        let err = net.gradient(&theta, &data, &LossSpec::Bit01 { target: t, j: 0 }, 64);
        assert!(matches!(err, Err(Error::NotDifferentiable(_))));
        let mut aux = data[0].clone();
        aux.flag = SampleFlag::Aux;
        let err = net.gradient(&theta, &[aux], &LossSpec::Square { target: t }, 64);
        assert!(matches!(err, Err(Error::NotDifferentiable(_))));
    }

    #[test]
    fn hinge_kink_is_flagged() {
        let (net, theta) = single_edge(Activation::Identity, "1", "0");
        let t = net.vertex_id("t").unwrap();
        let data = vec![Sample::main(input(&net, "s", "1"), input(&net, "t", "1"))];
        let g = net
            .grad_coordinate(
                &theta,
                &data,
                &LossSpec::Hinge { target: t },
                EdgeId(0),
                Wrt::Weight,
                64,
            )
            .unwrap();
        assert!(g.at_kink);
        assert_eq!(g.value, Rational::zero());
    }

    #[test]
    fn bit_budget_is_enforced() {
        let (net, theta) = single_edge(Activation::Poly(RationalPoly::monomial(2)), "1", "0");
        let x = input(&net, "s", &format!("{}", 1u64 << 40));
        let err = net.forward(&theta, &x, 64).unwrap_err();
        assert!(err.is_bit_budget());
    }

    #[test]
    fn node_bias_lands_on_an_incoming_edge() {
        let (net, mut theta) = single_edge(Activation::Identity, "1", "0");
        let t = net.vertex_id("t").unwrap();
        theta.add_node_bias(&net, t, &q("5/2")).unwrap();
        let trace = net.forward(&theta, &input(&net, "s", "1"), 64).unwrap();
        assert_eq!(trace.value(t), &q("7/2"));
    }

    /// Small layered DAG with a skip connection: s → a → b → t plus s → b.
    fn skip_net(act: Activation, ws: [i64; 4]) -> (Network, Theta) {
        let mut nb = NetworkBuilder::new();
        nb.vertex("s", Role::Source, Activation::Identity);
        nb.vertex("a", Role::Hidden, act.clone());
        nb.vertex("b", Role::Hidden, act);
        nb.vertex("t", Role::Target, Activation::Identity);
        nb.edge("s", "a", Rational::from(ws[0]), q("1/3"));
        nb.edge("a", "b", Rational::from(ws[1]), q("-1/2"));
        nb.edge("s", "b", Rational::from(ws[2]), q("0"));
        nb.edge("b", "t", Rational::from(ws[3]), q("1"));
        nb.build().unwrap()
    }

    proptest! {
        // loss is a quadratic polynomial in any weight of an identity
        // network, so the central difference is exact
        #[test]
        fn central_difference_exact_for_linear_networks(
            ws in prop::array::uniform4(-4i64..=4),
            x in -8i64..=8,
            y in -8i64..=8,
            edge in 0usize..4,
        ) {
            let (net, theta) = skip_net(Activation::Identity, ws);
            let t = net.vertex_id("t").unwrap();
            let data = vec![Sample::main(input(&net, "s", &x.to_string()), input(&net, "t", &y.to_string()))];
            let spec = LossSpec::Square { target: t };
            let g = net.grad_coordinate(&theta, &data, &spec, EdgeId(edge), Wrt::Weight, 4096).unwrap();
            for h in [q("1"), q("1/7")] {
                let mut plus = theta.clone();
                *plus.coordinate_mut(EdgeId(edge), Wrt::Weight) += &h;
                let mut minus = theta.clone();
                *minus.coordinate_mut(EdgeId(edge), Wrt::Weight) -= &h;
                let lp = net.loss_total(&plus, &data, &spec, 4096).unwrap();
                let lm = net.loss_total(&minus, &data, &spec, 4096).unwrap();
                prop_assert_eq!(&(&lp - &lm) / &(&h + &h), g.value.clone());
            }
        }

        // forward is reproducible and the gradient does not depend on
        // inputs injected at vertices with zero adjoint
        #[test]
        fn gradient_ignores_inputs_behind_dead_relu(
            ws in prop::array::uniform4(-4i64..=4),
            x in -8i64..=8,
            junk in -8i64..=8,
        ) {
            let (net, theta) = skip_net(Activation::Pwl(PwlActivation::relu()), ws);
            let (t, a) = (net.vertex_id("t").unwrap(), net.vertex_id("a").unwrap());
            let spec = LossSpec::Square { target: t };
            let base = Sample::main(input(&net, "s", &x.to_string()), VertexVector::new());
            let g0 = net.gradient(&theta, std::slice::from_ref(&base), &spec, 4096).unwrap();
            let again = net.gradient(&theta, std::slice::from_ref(&base), &spec, 4096).unwrap();
            prop_assert_eq!(&g0, &again);
            // push a deep into its zero region, then vary the extra input there
            let mut s1 = base.clone();
            s1.input.set(a, Rational::from(-1000));
            let mut s2 = base.clone();
            s2.input.set(a, Rational::from(-1000 + junk));
            let g1 = net.gradient(&theta, &[s1], &spec, 4096).unwrap();
            let g2 = net.gradient(&theta, &[s2], &spec, 4096).unwrap();
            prop_assert_eq!(g1.gradient, g2.gradient);
        }
    }
}
