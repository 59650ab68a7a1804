//! Physical topology: a rooted tree of fog devices with sensors and actuators
//! attached to them, plus its JSON form.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

/// Reporting class assigned to devices whose JSON omits `class`.
pub const DEFAULT_CLASS: &str = "device";
pub const CLOUD_CLASS: &str = "cloud";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FogDevice {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    pub parent: Option<String>,
    pub mips: f64,
    pub ram_mb: f64,
    pub storage_mb: f64,
    #[serde(rename = "uplink_bw_bytes_per_ms")]
    pub uplink_bw: f64,
    #[serde(rename = "downlink_bw_bytes_per_ms")]
    pub downlink_bw: f64,
    #[serde(rename = "busy_power_w")]
    pub busy_power: f64,
    #[serde(rename = "idle_power_w")]
    pub idle_power: f64,
    pub uplink_latency_ms: f64,
}

/// Inter-emission time model of a sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value_ms", rename_all = "snake_case")]
pub enum Distribution {
    Deterministic(f64),
    Exponential(f64),
}

impl Distribution {
    pub fn mean_ms(&self) -> f64 {
        match *self {
            Distribution::Deterministic(v) | Distribution::Exponential(v) => v,
        }
    }

    /// Same kind of distribution with the given mean.
    pub fn with_kind(kind: DistributionKind, mean_ms: f64) -> Self {
        match kind {
            DistributionKind::Deterministic => Distribution::Deterministic(mean_ms),
            DistributionKind::Exponential => Distribution::Exponential(mean_ms),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionKind {
    Deterministic,
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sensor {
    pub name: String,
    pub tuple_type: String,
    pub gateway: String,
    pub gateway_latency_ms: f64,
    pub distribution: Distribution,
    pub tuple_cpu_mi: f64,
    pub tuple_nw_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Actuator {
    pub name: String,
    pub actuator_type: String,
    pub gateway: String,
    pub gateway_latency_ms: f64,
}

/// Raw topology document. May be invalid; see [`PhysicalTopology::validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalTopology {
    pub schema_version: u32,
    pub devices: Vec<FogDevice>,
    #[serde(default)]
    pub sensors: Vec<Sensor>,
    #[serde(default)]
    pub actuators: Vec<Actuator>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Violation {
    UnsupportedSchema(u32),
    NoDevices,
    DuplicateName(String),
    NoRoot,
    MultipleRoots(Vec<String>),
    UnknownParent { device: String, parent: String },
    Cycle(Vec<String>),
    NonPositiveCapacity { entity: String, field: &'static str },
    InvalidPower(String),
    NegativeValue { entity: String, field: &'static str },
    DanglingGateway { entity: String, gateway: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnsupportedSchema(v) => write!(f, "unsupported schema_version {v} (expected {SCHEMA_VERSION})"),
            Violation::NoDevices => write!(f, "topology has no devices"),
            Violation::DuplicateName(n) => write!(f, "name `{n}` is used more than once"),
            Violation::NoRoot => write!(f, "no parentless (root) device"),
            Violation::MultipleRoots(r) => write!(f, "multiple root devices: {}", r.join(", ")),
            Violation::UnknownParent { device, parent } => {
                write!(f, "device `{device}` names unknown parent `{parent}`")
            }
            Violation::Cycle(c) => write!(f, "parent cycle: {}", c.join(" -> ")),
            Violation::NonPositiveCapacity { entity, field } => {
                write!(f, "`{entity}`: {field} must be > 0")
            }
            Violation::InvalidPower(d) => write!(f, "`{d}`: power must satisfy busy >= idle >= 0"),
            Violation::NegativeValue { entity, field } => {
                write!(f, "`{entity}`: {field} must be >= 0")
            }
            Violation::DanglingGateway { entity, gateway } => {
                write!(f, "`{entity}` is attached to unknown device `{gateway}`")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("malformed topology JSON at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid topology: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

fn non_negative(v: f64) -> bool {
    v.is_finite() && v >= 0.0
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

impl PhysicalTopology {
    pub fn new(devices: Vec<FogDevice>, sensors: Vec<Sensor>, actuators: Vec<Actuator>) -> Self {
        PhysicalTopology {
            schema_version: SCHEMA_VERSION,
            devices,
            sensors,
            actuators,
        }
    }

    /// Every invariant violation, each naming the offending entity.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            out.push(Violation::UnsupportedSchema(self.schema_version));
        }
        if self.devices.is_empty() {
            out.push(Violation::NoDevices);
        }

        let mut seen = HashSet::new();
        let names = self
            .devices
            .iter()
            .map(|d| d.name.as_str())
            .chain(self.sensors.iter().map(|s| s.name.as_str()))
            .chain(self.actuators.iter().map(|a| a.name.as_str()));
        for n in names {
            if !seen.insert(n) {
                out.push(Violation::DuplicateName(n.to_string()));
            }
        }

        let by_name: HashMap<&str, &FogDevice> = self.devices.iter().map(|d| (d.name.as_str(), d)).collect();

        for d in &self.devices {
            if !positive(d.mips) {
                out.push(Violation::NonPositiveCapacity {
                    entity: d.name.clone(),
                    field: "mips",
                });
            }
            for (v, field) in [
                (d.uplink_bw, "uplink_bw_bytes_per_ms"),
                (d.downlink_bw, "downlink_bw_bytes_per_ms"),
            ] {
                if d.parent.is_some() && !positive(v) {
                    out.push(Violation::NonPositiveCapacity {
                        entity: d.name.clone(),
                        field,
                    });
                }
            }
            for (v, field) in [
                (d.ram_mb, "ram_mb"),
                (d.storage_mb, "storage_mb"),
                (d.uplink_latency_ms, "uplink_latency_ms"),
            ] {
                if !non_negative(v) {
                    out.push(Violation::NegativeValue {
                        entity: d.name.clone(),
                        field,
                    });
                }
            }
            if !(non_negative(d.idle_power) && d.busy_power.is_finite() && d.busy_power >= d.idle_power) {
                out.push(Violation::InvalidPower(d.name.clone()));
            }
            if let Some(p) = &d.parent {
                if !by_name.contains_key(p.as_str()) {
                    out.push(Violation::UnknownParent {
                        device: d.name.clone(),
                        parent: p.clone(),
                    });
                }
            }
        }

        let roots: Vec<String> = self
            .devices
            .iter()
            .filter(|d| d.parent.is_none())
            .map(|d| d.name.clone())
            .collect();
        match roots.len() {
            0 if !self.devices.is_empty() => out.push(Violation::NoRoot),
            0 | 1 => {}
            _ => out.push(Violation::MultipleRoots(roots)),
        }

        // Walk parent chains; each cycle is reported once, starting from its
        // lexicographically smallest member.
        let mut reported: HashSet<String> = HashSet::new();
        for d in &self.devices {
            let mut chain: Vec<&str> = vec![d.name.as_str()];
            let mut pos: HashMap<&str, usize> = HashMap::from([(d.name.as_str(), 0)]);
            let mut cur = d;
            while let Some(p) = cur.parent.as_deref() {
                let Some(next) = by_name.get(p) else { break };
                if let Some(&i) = pos.get(p) {
                    let mut cycle: Vec<String> = chain[i..].iter().map(|s| s.to_string()).collect();
                    let min = cycle
                        .iter()
                        .enumerate()
                        .min_by(|a, b| a.1.cmp(b.1))
                        .map(|(i, _)| i)
                        .unwrap();
                    cycle.rotate_left(min);
                    if reported.insert(cycle[0].clone()) {
                        let mut closed = cycle.clone();
                        closed.push(cycle[0].clone());
                        out.push(Violation::Cycle(closed));
                    }
                    break;
                }
                pos.insert(p, chain.len());
                chain.push(p);
                cur = next;
            }
        }

        for s in &self.sensors {
            if !by_name.contains_key(s.gateway.as_str()) {
                out.push(Violation::DanglingGateway {
                    entity: s.name.clone(),
                    gateway: s.gateway.clone(),
                });
            }
            if !positive(s.distribution.mean_ms()) {
                out.push(Violation::NonPositiveCapacity {
                    entity: s.name.clone(),
                    field: "distribution.value_ms",
                });
            }
            for (v, field) in [
                (s.gateway_latency_ms, "gateway_latency_ms"),
                (s.tuple_cpu_mi, "tuple_cpu_mi"),
            ] {
                if !non_negative(v) {
                    out.push(Violation::NegativeValue {
                        entity: s.name.clone(),
                        field,
                    });
                }
            }
        }
        for a in &self.actuators {
            if !by_name.contains_key(a.gateway.as_str()) {
                out.push(Violation::DanglingGateway {
                    entity: a.name.clone(),
                    gateway: a.gateway.clone(),
                });
            }
            if !non_negative(a.gateway_latency_ms) {
                out.push(Violation::NegativeValue {
                    entity: a.name.clone(),
                    field: "gateway_latency_ms",
                });
            }
        }
        out
    }
}

pub fn parse_topology_json(text: &str) -> Result<Topology, TopologyError> {
    let doc: PhysicalTopology = serde_json::from_str(text).map_err(|e| TopologyError::Json {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Topology::new(doc)
}

/// Canonical JSON: fixed key order, two-space indentation, trailing newline.
pub fn serialize_topology_json(topology: &PhysicalTopology) -> Result<String, TopologyError> {
    let violations = topology.validate();
    if !violations.is_empty() {
        return Err(TopologyError::Invalid(violations));
    }
    let mut s = serde_json::to_string_pretty(topology).expect("topology serializes");
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DeviceId(pub usize);

/// A validated topology with a tree index.
#[derive(Debug, Clone)]
pub struct Topology {
    doc: PhysicalTopology,
    index: HashMap<String, DeviceId>,
    parent: Vec<Option<DeviceId>>,
    children: Vec<Vec<DeviceId>>,
    level: Vec<usize>,
    root: DeviceId,
    // Euler-tour interval per device, for O(1) subtree membership.
    enter: Vec<usize>,
    exit: Vec<usize>,
    sensor_gateway: Vec<DeviceId>,
    actuator_gateway: Vec<DeviceId>,
}

impl Topology {
    pub fn new(doc: PhysicalTopology) -> Result<Self, TopologyError> {
        let violations = doc.validate();
        if !violations.is_empty() {
            return Err(TopologyError::Invalid(violations));
        }
        let index: HashMap<String, DeviceId> = doc
            .devices
            .iter()
            .enumerate()
            .map(|(i, d)| (d.name.clone(), DeviceId(i)))
            .collect();
        let n = doc.devices.len();
        let parent: Vec<Option<DeviceId>> = doc
            .devices
            .iter()
            .map(|d| d.parent.as_ref().map(|p| index[p]))
            .collect();
        let mut children = vec![Vec::new(); n];
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                children[p.0].push(DeviceId(i));
            }
        }
        for c in &mut children {
            c.sort_by(|a, b| doc.devices[a.0].name.cmp(&doc.devices[b.0].name));
        }
        let root = DeviceId(parent.iter().position(Option::is_none).expect("validated root"));

        let mut level = vec![0; n];
        let mut enter = vec![0; n];
        let mut exit = vec![0; n];
        let mut clock = 0;
        let mut stack = vec![(root, false)];
        while let Some((d, done)) = stack.pop() {
            if done {
                exit[d.0] = clock;
                continue;
            }
            enter[d.0] = clock;
            clock += 1;
            stack.push((d, true));
            for &c in children[d.0].iter().rev() {
                level[c.0] = level[d.0] + 1;
                stack.push((c, false));
            }
        }

        let sensor_gateway = doc.sensors.iter().map(|s| index[&s.gateway]).collect();
        let actuator_gateway = doc.actuators.iter().map(|a| index[&a.gateway]).collect();
        Ok(Topology {
            doc,
            index,
            parent,
            children,
            level,
            root,
            enter,
            exit,
            sensor_gateway,
            actuator_gateway,
        })
    }

    pub fn document(&self) -> &PhysicalTopology {
        &self.doc
    }

    pub fn to_json(&self) -> String {
        serialize_topology_json(&self.doc).expect("validated topology")
    }

    pub fn len(&self) -> usize {
        self.doc.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc.devices.is_empty()
    }

    pub fn device_ids(&self) -> impl Iterator<Item = DeviceId> {
        (0..self.doc.devices.len()).map(DeviceId)
    }

    pub fn device(&self, id: DeviceId) -> &FogDevice {
        &self.doc.devices[id.0]
    }

    pub fn id(&self, name: &str) -> Option<DeviceId> {
        self.index.get(name).copied()
    }

    pub fn root(&self) -> DeviceId {
        self.root
    }

    pub fn parent(&self, id: DeviceId) -> Option<DeviceId> {
        self.parent[id.0]
    }

    pub fn children(&self, id: DeviceId) -> &[DeviceId] {
        &self.children[id.0]
    }

    pub fn level(&self, id: DeviceId) -> usize {
        self.level[id.0]
    }

    pub fn class(&self, id: DeviceId) -> &str {
        match &self.doc.devices[id.0].class {
            Some(c) => c,
            None if id == self.root => CLOUD_CLASS,
            None => DEFAULT_CLASS,
        }
    }

    /// True when `node` lies in the subtree rooted at `ancestor` (inclusive).
    pub fn in_subtree(&self, ancestor: DeviceId, node: DeviceId) -> bool {
        self.enter[ancestor.0] <= self.enter[node.0] && self.exit[node.0] <= self.exit[ancestor.0]
    }

    pub fn is_leaf(&self, id: DeviceId) -> bool {
        self.children[id.0].is_empty()
    }

    /// Childless devices in lexicographic name order.
    pub fn leaves(&self) -> Vec<DeviceId> {
        let mut v: Vec<DeviceId> = self.device_ids().filter(|&d| self.is_leaf(d)).collect();
        v.sort_by(|a, b| self.device(*a).name.cmp(&self.device(*b).name));
        v
    }

    /// Device ids from `id` up to and including the root.
    pub fn path_ids(&self, id: DeviceId) -> Vec<DeviceId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.parent[cur.0] {
            path.push(p);
            cur = p;
        }
        path
    }

    pub fn path_to_root(&self, device: &str) -> Result<Vec<String>, TopologyError> {
        let id = self
            .id(device)
            .ok_or_else(|| TopologyError::UnknownDevice(device.to_string()))?;
        Ok(self
            .path_ids(id)
            .into_iter()
            .map(|d| self.device(d).name.clone())
            .collect())
    }

    pub fn sensors(&self) -> &[Sensor] {
        &self.doc.sensors
    }

    pub fn actuators(&self) -> &[Actuator] {
        &self.doc.actuators
    }

    pub fn sensor_gateway(&self, sensor: usize) -> DeviceId {
        self.sensor_gateway[sensor]
    }

    pub fn actuator_gateway(&self, actuator: usize) -> DeviceId {
        self.actuator_gateway[actuator]
    }

    /// Indices of sensors attached to any device in `id`'s subtree.
    pub fn sensors_in_subtree(&self, id: DeviceId) -> Vec<usize> {
        (0..self.doc.sensors.len())
            .filter(|&s| self.in_subtree(id, self.sensor_gateway[s]))
            .collect()
    }

    /// Device counts per class, for summaries.
    pub fn class_counts(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for d in self.device_ids() {
            *m.entry(self.class(d).to_string()).or_insert(0) += 1;
        }
        m
    }
}
