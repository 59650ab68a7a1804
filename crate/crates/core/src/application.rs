//! Distributed data-flow application model: modules, typed edges with
//! fractional selectivity, and the loops whose latency is measured.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::Sensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EdgeKind {
    EventBased,
    Periodic { period_ms: f64 },
}

/// Output rule of a module: on each input tuple of type `input`, emit one
/// tuple on the edge carrying `output` with probability `probability`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectivityRule {
    pub input: String,
    pub output: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleSpec {
    pub name: String,
    #[serde(default)]
    pub ram_mb: f64,
    #[serde(default)]
    pub selectivity: Vec<SelectivityRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub source: String,
    pub destination: String,
    pub tuple_type: String,
    pub cpu_mi: f64,
    pub nw_bytes: u64,
    pub kind: EdgeKind,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSpec {
    pub name: String,
    pub elements: Vec<String>,
}

/// Where instances of a module must run, independent of the placement policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pin {
    /// One instance on each named device.
    Devices(Vec<String>),
    /// One instance on every device of this reporting class.
    Class(String),
}

/// Application document, as written in JSON or built programmatically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApplicationSpec {
    pub name: String,
    pub modules: Vec<ModuleSpec>,
    /// Tuple types emitted by sensors.
    #[serde(default)]
    pub sensors: Vec<String>,
    /// Actuator types that receive tuples.
    #[serde(default)]
    pub actuators: Vec<String>,
    pub edges: Vec<EdgeSpec>,
    #[serde(default)]
    pub loops: Vec<LoopSpec>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub pins: BTreeMap<String, Pin>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ModuleId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Endpoint {
    Module(ModuleId),
    /// Index into [`ApplicationSpec::sensors`].
    Sensor(usize),
    /// Index into [`ApplicationSpec::actuators`].
    Actuator(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AppViolation {
    DuplicateName(String),
    DuplicateTupleType(String),
    DanglingEndpoint {
        tuple_type: String,
        endpoint: String,
    },
    InvalidEdge {
        tuple_type: String,
        reason: &'static str,
    },
    BadSelectivity {
        module: String,
        rule: String,
        reason: &'static str,
    },
    UnknownPinnedModule(String),
    CyclicDependency(Vec<String>),
    CyclicTupleFlow(Vec<String>),
    LoopTooShort(String),
    LoopUnknownElement {
        name: String,
        element: String,
    },
    LoopMissingEdge {
        name: String,
        from: String,
        to: String,
    },
}

impl fmt::Display for AppViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use AppViolation::*;
        match self {
            DuplicateName(n) => write!(f, "name `{n}` is declared more than once"),
            DuplicateTupleType(t) => write!(f, "tuple type `{t}` is carried by more than one edge"),
            DanglingEndpoint { tuple_type, endpoint } => {
                write!(f, "edge `{tuple_type}` references unknown endpoint `{endpoint}`")
            }
            InvalidEdge { tuple_type, reason } => write!(f, "edge `{tuple_type}`: {reason}"),
            BadSelectivity { module, rule, reason } => write!(f, "module `{module}` rule `{rule}`: {reason}"),
            UnknownPinnedModule(m) => write!(f, "pin refers to unknown module `{m}`"),
            CyclicDependency(c) => write!(f, "cyclic dependency among up-direction edges: {}", c.join(" -> ")),
            CyclicTupleFlow(c) => write!(f, "selectivity rules form a tuple cycle: {}", c.join(" -> ")),
            LoopTooShort(n) => write!(f, "loop `{n}` needs at least two elements"),
            LoopUnknownElement { name, element } => {
                write!(f, "loop `{name}` references unknown `{element}`")
            }
            LoopMissingEdge { name, from, to } => {
                write!(f, "loop `{name}`: no edge from `{from}` to `{to}`")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum AppError {
    #[error("malformed application JSON at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid application: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<AppViolation>),
}

#[derive(Debug, Clone)]
pub struct ResolvedLoop {
    pub name: String,
    pub elements: Vec<Endpoint>,
    /// Edges joining the first two elements; emission on one opens the loop.
    pub first_edges: Vec<EdgeId>,
    /// Edges joining the last two elements; arrival on one closes it.
    pub last_edges: Vec<EdgeId>,
}

/// A validated application graph.
#[derive(Debug, Clone)]
pub struct Application {
    spec: ApplicationSpec,
    module_index: HashMap<String, ModuleId>,
    edge_index: HashMap<String, EdgeId>,
    endpoints: Vec<(Endpoint, Endpoint)>,
    reactions: Vec<Vec<(EdgeId, f64)>>,
    up_preds: Vec<Vec<ModuleId>>,
    periodic_out: Vec<Vec<EdgeId>>,
    sensor_edges: Vec<Vec<EdgeId>>,
    flow_order: Vec<EdgeId>,
    loops: Vec<ResolvedLoop>,
}

/// Output produced by one selectivity draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputTuple {
    pub edge: EdgeId,
    pub cpu_mi: f64,
    pub nw_bytes: u64,
}

/// Builds and validates an application from its parts.
pub fn build_application(spec: ApplicationSpec) -> Result<Application, AppError> {
    Application::new(spec)
}

pub fn parse_application_json(text: &str) -> Result<Application, AppError> {
    let spec: ApplicationSpec = serde_json::from_str(text).map_err(|e| AppError::Json {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Application::new(spec)
}

fn find_cycle<N: Copy + Eq + std::hash::Hash>(nodes: &[N], succ: impl Fn(N) -> Vec<N>) -> Option<Vec<N>> {
    // Iterative three-colour DFS; returns the first cycle found.
    let mut colour: HashMap<N, u8> = HashMap::new();
    for &start in nodes {
        if colour.contains_key(&start) {
            continue;
        }
        let mut stack: Vec<(N, Vec<N>, usize)> = vec![(start, succ(start), 0)];
        let mut path = vec![start];
        colour.insert(start, 1);
        while let Some((_, next, i)) = stack.last_mut() {
            if *i < next.len() {
                let n = next[*i];
                *i += 1;
                match colour.get(&n) {
                    Some(1) => {
                        let pos = path.iter().position(|&p| p == n).unwrap();
                        let mut cycle = path[pos..].to_vec();
                        cycle.push(n);
                        return Some(cycle);
                    }
                    Some(_) => {}
                    None => {
                        colour.insert(n, 1);
                        path.push(n);
                        let s = succ(n);
                        stack.push((n, s, 0));
                    }
                }
            } else {
                let (n, _, _) = stack.pop().unwrap();
                colour.insert(n, 2);
                path.pop();
            }
        }
    }
    None
}

impl Application {
    pub fn new(spec: ApplicationSpec) -> Result<Self, AppError> {
        let mut v = Vec::new();

        let mut names = HashSet::new();
        for n in spec
            .modules
            .iter()
            .map(|m| &m.name)
            .chain(&spec.sensors)
            .chain(&spec.actuators)
        {
            if !names.insert(n.as_str()) {
                v.push(AppViolation::DuplicateName(n.clone()));
            }
        }
        let module_index: HashMap<String, ModuleId> = spec
            .modules
            .iter()
            .enumerate()
            .map(|(i, m)| (m.name.clone(), ModuleId(i)))
            .collect();
        let resolve = |name: &str| -> Option<Endpoint> {
            if let Some(&m) = module_index.get(name) {
                Some(Endpoint::Module(m))
            } else if let Some(i) = spec.sensors.iter().position(|s| s == name) {
                Some(Endpoint::Sensor(i))
            } else {
                spec.actuators.iter().position(|a| a == name).map(Endpoint::Actuator)
            }
        };

        let mut edge_index = HashMap::new();
        let mut endpoints = Vec::with_capacity(spec.edges.len());
        for (i, e) in spec.edges.iter().enumerate() {
            if edge_index.insert(e.tuple_type.clone(), EdgeId(i)).is_some() {
                v.push(AppViolation::DuplicateTupleType(e.tuple_type.clone()));
            }
            let src = resolve(&e.source);
            let dst = resolve(&e.destination);
            for (name, r) in [(&e.source, src), (&e.destination, dst)] {
                if r.is_none() {
                    v.push(AppViolation::DanglingEndpoint {
                        tuple_type: e.tuple_type.clone(),
                        endpoint: name.clone(),
                    });
                }
            }
            let bad = |reason| AppViolation::InvalidEdge {
                tuple_type: e.tuple_type.clone(),
                reason,
            };
            if matches!(src, Some(Endpoint::Actuator(_))) {
                v.push(bad("an actuator cannot be an edge source"));
            }
            if matches!(dst, Some(Endpoint::Sensor(_))) {
                v.push(bad("a sensor cannot be an edge destination"));
            }
            if matches!(src, Some(Endpoint::Sensor(_))) && matches!(e.kind, EdgeKind::Periodic { .. }) {
                v.push(bad("sensor edges are driven by the sensor distribution, not a period"));
            }
            if !(e.cpu_mi.is_finite() && e.cpu_mi >= 0.0) {
                v.push(bad("cpu_mi must be >= 0"));
            }
            if let EdgeKind::Periodic { period_ms } = e.kind {
                if !(period_ms.is_finite() && period_ms > 0.0) {
                    v.push(bad("period_ms must be > 0"));
                }
            }
            endpoints.push((
                src.unwrap_or(Endpoint::Sensor(usize::MAX)),
                dst.unwrap_or(Endpoint::Actuator(usize::MAX)),
            ));
        }

        let mut reactions = vec![Vec::new(); spec.edges.len()];
        for (mi, m) in spec.modules.iter().enumerate() {
            for r in &m.selectivity {
                let label = format!("{} -> {}", r.input, r.output);
                let bad = |reason| AppViolation::BadSelectivity {
                    module: m.name.clone(),
                    rule: label.clone(),
                    reason,
                };
                if !(0.0..=1.0).contains(&r.probability) {
                    v.push(bad("probability must lie in [0, 1]"));
                }
                let input = edge_index.get(&r.input).copied();
                let output = edge_index.get(&r.output).copied();
                match input {
                    Some(e) if endpoints[e.0].1 == Endpoint::Module(ModuleId(mi)) => {}
                    _ => v.push(bad("input must be an edge into this module")),
                }
                match output {
                    Some(e) if endpoints[e.0].0 == Endpoint::Module(ModuleId(mi)) => {
                        if matches!(spec.edges[e.0].kind, EdgeKind::Periodic { .. }) {
                            v.push(bad("output edge is periodic"));
                        }
                    }
                    _ => v.push(bad("output must be an edge out of this module")),
                }
                if let (Some(i), Some(o)) = (input, output) {
                    reactions[i.0].push((o, r.probability));
                }
            }
        }

        for m in spec.pins.keys() {
            if !module_index.contains_key(m) {
                v.push(AppViolation::UnknownPinnedModule(m.clone()));
            }
        }

        let mut up_preds = vec![Vec::new(); spec.modules.len()];
        for (i, e) in spec.edges.iter().enumerate() {
            if let (Endpoint::Module(s), Endpoint::Module(d)) = endpoints[i] {
                if e.direction == Direction::Up && !up_preds[d.0].contains(&s) {
                    up_preds[d.0].push(s);
                }
            }
        }
        let module_ids: Vec<ModuleId> = (0..spec.modules.len()).map(ModuleId).collect();
        let mut up_succ = vec![Vec::new(); spec.modules.len()];
        for (d, preds) in up_preds.iter().enumerate() {
            for p in preds {
                up_succ[p.0].push(ModuleId(d));
            }
        }
        if let Some(c) = find_cycle(&module_ids, |m| up_succ[m.0].clone()) {
            v.push(AppViolation::CyclicDependency(
                c.iter().map(|m| spec.modules[m.0].name.clone()).collect(),
            ));
        }

        let edge_ids: Vec<EdgeId> = (0..spec.edges.len()).map(EdgeId).collect();
        let flow_cycle = find_cycle(&edge_ids, |e| reactions[e.0].iter().map(|r| r.0).collect());
        if let Some(c) = &flow_cycle {
            v.push(AppViolation::CyclicTupleFlow(
                c.iter().map(|e| spec.edges[e.0].tuple_type.clone()).collect(),
            ));
        }

        let mut loops = Vec::new();
        for l in &spec.loops {
            if l.elements.len() < 2 {
                v.push(AppViolation::LoopTooShort(l.name.clone()));
                continue;
            }
            let mut elements = Vec::new();
            for el in &l.elements {
                match resolve(el) {
                    Some(e) => elements.push(e),
                    None => v.push(AppViolation::LoopUnknownElement {
                        name: l.name.clone(),
                        element: el.clone(),
                    }),
                }
            }
            if elements.len() != l.elements.len() {
                continue;
            }
            let joining = |a: Endpoint, b: Endpoint| -> Vec<EdgeId> {
                endpoints
                    .iter()
                    .enumerate()
                    .filter(|(_, &(s, d))| s == a && d == b)
                    .map(|(i, _)| EdgeId(i))
                    .collect()
            };
            let mut ok = true;
            for (i, w) in elements.windows(2).enumerate() {
                if joining(w[0], w[1]).is_empty() {
                    ok = false;
                    v.push(AppViolation::LoopMissingEdge {
                        name: l.name.clone(),
                        from: l.elements[i].clone(),
                        to: l.elements[i + 1].clone(),
                    });
                }
            }
            if ok {
                let k = elements.len();
                loops.push(ResolvedLoop {
                    name: l.name.clone(),
                    first_edges: joining(elements[0], elements[1]),
                    last_edges: joining(elements[k - 2], elements[k - 1]),
                    elements,
                });
            }
        }

        if !v.is_empty() {
            return Err(AppError::Invalid(v));
        }

        let mut periodic_out = vec![Vec::new(); spec.modules.len()];
        let mut sensor_edges = vec![Vec::new(); spec.sensors.len()];
        for (i, e) in spec.edges.iter().enumerate() {
            match endpoints[i].0 {
                Endpoint::Module(m) if matches!(e.kind, EdgeKind::Periodic { .. }) => periodic_out[m.0].push(EdgeId(i)),
                Endpoint::Sensor(s) => sensor_edges[s].push(EdgeId(i)),
                _ => {}
            }
        }

        // Topological order of the edge-reaction graph (acyclic, checked above).
        let mut indeg = vec![0usize; spec.edges.len()];
        for rs in &reactions {
            for (o, _) in rs {
                indeg[o.0] += 1;
            }
        }
        let mut ready: Vec<EdgeId> = edge_ids.iter().copied().filter(|e| indeg[e.0] == 0).rev().collect();
        let mut flow_order = Vec::with_capacity(spec.edges.len());
        while let Some(e) = ready.pop() {
            flow_order.push(e);
            for (o, _) in reactions[e.0].iter().rev() {
                indeg[o.0] -= 1;
                if indeg[o.0] == 0 {
                    ready.push(*o);
                }
            }
        }

        Ok(Application {
            spec,
            module_index,
            edge_index,
            endpoints,
            reactions,
            up_preds,
            periodic_out,
            sensor_edges,
            flow_order,
            loops,
        })
    }

    pub fn spec(&self) -> &ApplicationSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.spec).expect("application serializes");
        s.push('\n');
        s
    }

    pub fn module_count(&self) -> usize {
        self.spec.modules.len()
    }

    pub fn module_ids(&self) -> impl Iterator<Item = ModuleId> {
        (0..self.spec.modules.len()).map(ModuleId)
    }

    pub fn module(&self, id: ModuleId) -> &ModuleSpec {
        &self.spec.modules[id.0]
    }

    pub fn module_id(&self, name: &str) -> Option<ModuleId> {
        self.module_index.get(name).copied()
    }

    pub fn edge_count(&self) -> usize {
        self.spec.edges.len()
    }

    pub fn edge(&self, id: EdgeId) -> &EdgeSpec {
        &self.spec.edges[id.0]
    }

    pub fn edge_id(&self, tuple_type: &str) -> Option<EdgeId> {
        self.edge_index.get(tuple_type).copied()
    }

    pub fn source(&self, id: EdgeId) -> Endpoint {
        self.endpoints[id.0].0
    }

    pub fn destination(&self, id: EdgeId) -> Endpoint {
        self.endpoints[id.0].1
    }

    pub fn endpoint_name(&self, e: Endpoint) -> &str {
        match e {
            Endpoint::Module(m) => &self.spec.modules[m.0].name,
            Endpoint::Sensor(s) => &self.spec.sensors[s],
            Endpoint::Actuator(a) => &self.spec.actuators[a],
        }
    }

    /// Modules feeding `m` over up-direction edges; the placement dependency DAG.
    pub fn up_predecessors(&self, m: ModuleId) -> &[ModuleId] {
        &self.up_preds[m.0]
    }

    pub fn periodic_edges(&self, m: ModuleId) -> &[EdgeId] {
        &self.periodic_out[m.0]
    }

    pub fn sensor_type_index(&self, tuple_type: &str) -> Option<usize> {
        self.spec.sensors.iter().position(|s| s == tuple_type)
    }

    pub fn actuator_type_index(&self, actuator_type: &str) -> Option<usize> {
        self.spec.actuators.iter().position(|s| s == actuator_type)
    }

    /// Edges leaving sensors of the given type index.
    pub fn sensor_edges(&self, sensor_type: usize) -> &[EdgeId] {
        &self.sensor_edges[sensor_type]
    }

    /// Selectivity rules triggered by a tuple arriving on `input`.
    pub fn reactions(&self, input: EdgeId) -> &[(EdgeId, f64)] {
        &self.reactions[input.0]
    }

    pub fn loops(&self) -> &[ResolvedLoop] {
        &self.loops
    }

    pub fn pins(&self) -> &BTreeMap<String, Pin> {
        &self.spec.pins
    }

    /// Draws the outputs produced by processing a tuple that arrived on
    /// `input`, calling `emit` once per emitted edge in rule order.
    /// Probabilities of exactly 0 or 1 consume no randomness.
    pub fn for_each_output<R: Rng + ?Sized>(&self, input: EdgeId, rng: &mut R, mut emit: impl FnMut(EdgeId)) {
        for &(edge, p) in &self.reactions[input.0] {
            let fire = if p >= 1.0 {
                true
            } else if p <= 0.0 {
                false
            } else {
                rng.random::<f64>() < p
            };
            if fire {
                emit(edge);
            }
        }
    }
}

/// Applies the fractional selectivity model of the module that consumes
/// `input_tuple_type`. Unknown tuple types produce nothing.
pub fn apply_selectivity<R: Rng + ?Sized>(app: &Application, input_tuple_type: &str, rng: &mut R) -> Vec<OutputTuple> {
    let Some(input) = app.edge_id(input_tuple_type) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    app.for_each_output(input, rng, |edge| {
        let e = app.edge(edge);
        out.push(OutputTuple {
            edge,
            cpu_mi: e.cpu_mi,
            nw_bytes: e.nw_bytes,
        });
    });
    out
}

/// Steady-state tuple rates and the CPU demand they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMap {
    /// Tuples per millisecond on each edge, indexed by [`EdgeId`].
    pub edge_rates: Vec<f64>,
    /// Instructions per millisecond arriving at each module, indexed by
    /// [`ModuleId`]; compared directly against device MIPS.
    pub module_demand: Vec<f64>,
    pub warnings: Vec<String>,
}

impl RateMap {
    pub fn rate(&self, e: EdgeId) -> f64 {
        self.edge_rates[e.0]
    }

    pub fn demand(&self, m: ModuleId) -> f64 {
        self.module_demand[m.0]
    }
}

pub fn propagate_rates<'a>(app: &Application, sensors: impl IntoIterator<Item = &'a Sensor>) -> RateMap {
    let mut warnings = Vec::new();
    let mut sensor_rate = vec![0.0; app.spec.sensors.len()];
    for s in sensors {
        match app.sensor_type_index(&s.tuple_type) {
            Some(i) if !app.sensor_edges[i].is_empty() => sensor_rate[i] += 1.0 / s.distribution.mean_ms(),
            _ => warnings.push(format!(
                "sensor `{}` emits `{}`, which no module consumes",
                s.name, s.tuple_type
            )),
        }
    }

    let mut rates = vec![0.0; app.edge_count()];
    for (i, e) in app.spec.edges.iter().enumerate() {
        match (app.endpoints[i].0, e.kind) {
            (Endpoint::Sensor(s), _) => rates[i] = sensor_rate[s],
            (_, EdgeKind::Periodic { period_ms }) => rates[i] = 1.0 / period_ms,
            _ => {}
        }
    }
    for &e in &app.flow_order {
        let r = rates[e.0];
        for &(o, p) in &app.reactions[e.0] {
            rates[o.0] += r * p;
        }
    }

    let mut demand = vec![0.0; app.module_count()];
    for (i, e) in app.spec.edges.iter().enumerate() {
        if let Endpoint::Module(m) = app.endpoints[i].1 {
            demand[m.0] += rates[i] * e.cpu_mi;
        }
    }
    RateMap {
        edge_rates: rates,
        module_demand: demand,
        warnings,
    }
}
