//! Module placement: the policy interface and the two built-in policies,
//! cloud-only and edge-ward.
//!
//! Edge-ward placement walks every leaf-to-root path (leaves in name order).
//! The path keeps a worklist of modules whose up-direction predecessors all
//! have an instance on the path. At each device, each listed module is tried
//! in turn: an instance already on the path absorbs the new demand and climbs
//! toward the root while its demand is at least the host's free MIPS;
//! otherwise the module lands on the current device if its demand fits, or
//! waits for the next device up. Every placement re-extends the worklist, so
//! a chain of small modules can land on one device.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::application::{propagate_rates, Application, ModuleId, Pin};
use crate::topology::{DeviceId, Topology};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlacementError {
    #[error("module `{module}` is pinned to unknown device `{device}`")]
    UnknownDevice { module: String, device: String },
    #[error("pin refers to unknown module `{0}`")]
    UnknownModule(String),
    #[error("module `{module}` is pinned to class `{class}`, which no device has")]
    EmptyClass { module: String, class: String },
    #[error("module `{module}` cannot be placed on the path from `{leaf}`: demand {demand:.3} MIPS exceeds every device up to the root")]
    Unplaceable { module: String, leaf: String, demand: f64 },
    #[error("unknown placement policy `{0}`")]
    UnknownPolicy(String),
}

/// Module name -> where its instances must run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlacementConstraints(pub BTreeMap<String, Pin>);

impl PlacementConstraints {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pin(mut self, module: impl Into<String>, pin: Pin) -> Self {
        self.0.insert(module.into(), pin);
        self
    }

    pub fn from_app(app: &Application) -> Self {
        PlacementConstraints(app.pins().clone())
    }

    pub fn get(&self, module: &str) -> Option<&Pin> {
        self.0.get(module)
    }

    /// Pinned modules with their resolved devices, in module order.
    pub fn resolve(
        &self,
        app: &Application,
        topo: &Topology,
    ) -> Result<BTreeMap<ModuleId, Vec<DeviceId>>, PlacementError> {
        let mut out = BTreeMap::new();
        for (module, pin) in &self.0 {
            let m = app
                .module_id(module)
                .ok_or_else(|| PlacementError::UnknownModule(module.clone()))?;
            let devices = match pin {
                Pin::Devices(names) => names
                    .iter()
                    .map(|n| {
                        topo.id(n).ok_or_else(|| PlacementError::UnknownDevice {
                            module: module.clone(),
                            device: n.clone(),
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?,
                Pin::Class(class) => {
                    let ds: Vec<DeviceId> = topo.device_ids().filter(|&d| topo.class(d) == class).collect();
                    if ds.is_empty() {
                        return Err(PlacementError::EmptyClass {
                            module: module.clone(),
                            class: class.clone(),
                        });
                    }
                    ds
                }
            };
            out.insert(m, devices);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub module: String,
    pub device: String,
    /// MIPS charged to the device for this instance.
    pub demand: f64,
}

/// Module instances and their host devices, sorted by (module, device).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlacementMap {
    pub policy: String,
    pub instances: Vec<Instance>,
}

impl PlacementMap {
    pub fn new(policy: impl Into<String>, mut instances: Vec<Instance>) -> Self {
        instances.sort_by(|a, b| (&a.module, &a.device).cmp(&(&b.module, &b.device)));
        PlacementMap {
            policy: policy.into(),
            instances,
        }
    }

    pub fn devices_of<'a>(&'a self, module: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.instances
            .iter()
            .filter(move |i| i.module == module)
            .map(|i| i.device.as_str())
    }

    /// `module -> [devices]`, for compact assertions and summaries.
    pub fn by_module(&self) -> BTreeMap<String, Vec<String>> {
        let mut m: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for i in &self.instances {
            m.entry(i.module.clone()).or_default().push(i.device.clone());
        }
        m
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// MIPS demand of each module, as seen from the subtree of each device.
#[derive(Debug, Clone, PartialEq)]
pub struct Demands {
    per_device: Vec<Vec<f64>>,
}

impl Demands {
    /// Demands from steady-state rate propagation over the sensors attached
    /// within each device's subtree.
    pub fn from_rates(app: &Application, topo: &Topology) -> Self {
        let sensors = topo.sensors();
        let per_device = topo
            .device_ids()
            .map(|d| {
                let subset = topo.sensors_in_subtree(d);
                propagate_rates(app, subset.iter().map(|&s| &sensors[s])).module_demand
            })
            .collect();
        Demands { per_device }
    }

    /// Demands given explicitly per (device, module).
    pub fn from_fn(app: &Application, topo: &Topology, mut f: impl FnMut(&str, &str) -> f64) -> Self {
        let per_device = topo
            .device_ids()
            .map(|d| {
                app.module_ids()
                    .map(|m| f(&topo.device(d).name, &app.module(m).name))
                    .collect()
            })
            .collect();
        Demands { per_device }
    }

    pub fn get(&self, device: DeviceId, module: ModuleId) -> f64 {
        self.per_device[device.0][module.0]
    }
}

/// One decision of the edge-ward walk, for auditing against hand traces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum TraceStep {
    Pinned {
        module: String,
        device: String,
        demand: f64,
    },
    Placed {
        module: String,
        device: String,
        demand: f64,
    },
    Merged {
        module: String,
        from: String,
        to: String,
        demand: f64,
    },
    RootFallback {
        module: String,
        device: String,
    },
}

impl fmt::Display for TraceStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceStep::Pinned { module, device, demand } => write!(f, "pin {module} @ {device} ({demand})"),
            TraceStep::Placed { module, device, demand } => write!(f, "place {module} @ {device} ({demand})"),
            TraceStep::Merged {
                module,
                from,
                to,
                demand,
            } => write!(f, "merge {module} {from} -> {to} ({demand})"),
            TraceStep::RootFallback { module, device } => write!(f, "fallback {module} @ {device}"),
        }
    }
}

/// A module-placement policy. Implementations must be deterministic.
pub trait PlacementPolicy: Send + Sync {
    fn name(&self) -> &str;

    fn place(
        &self,
        app: &Application,
        topo: &Topology,
        constraints: &PlacementConstraints,
        demands: &Demands,
    ) -> Result<PlacementMap, PlacementError>;
}

pub struct CloudOnly;

pub struct EdgeWard;

impl PlacementPolicy for CloudOnly {
    fn name(&self) -> &str {
        "cloud"
    }

    fn place(
        &self,
        app: &Application,
        topo: &Topology,
        constraints: &PlacementConstraints,
        demands: &Demands,
    ) -> Result<PlacementMap, PlacementError> {
        place_cloud_only(app, topo, constraints, demands)
    }
}

impl PlacementPolicy for EdgeWard {
    fn name(&self) -> &str {
        "edgeward"
    }

    fn place(
        &self,
        app: &Application,
        topo: &Topology,
        constraints: &PlacementConstraints,
        demands: &Demands,
    ) -> Result<PlacementMap, PlacementError> {
        place_edge_ward(app, topo, constraints, demands)
    }
}

/// Named policies; `cloud` and `edgeward` are always present.
pub struct PolicyRegistry {
    policies: BTreeMap<String, Box<dyn PlacementPolicy>>,
}

impl Default for PolicyRegistry {
    fn default() -> Self {
        let mut r = PolicyRegistry {
            policies: BTreeMap::new(),
        };
        r.register(Box::new(CloudOnly));
        r.register(Box::new(EdgeWard));
        r
    }
}

impl PolicyRegistry {
    pub fn register(&mut self, policy: Box<dyn PlacementPolicy>) {
        self.policies.insert(policy.name().to_string(), policy);
    }

    pub fn get(&self, name: &str) -> Result<&dyn PlacementPolicy, PlacementError> {
        self.policies
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| PlacementError::UnknownPolicy(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.policies.keys().map(String::as_str)
    }
}

fn pinned_instances(pins: &BTreeMap<ModuleId, Vec<DeviceId>>, demands: &Demands) -> Vec<(ModuleId, DeviceId, f64)> {
    let mut out = Vec::new();
    for (&m, devices) in pins {
        for &d in devices {
            out.push((m, d, demands.get(d, m)));
        }
    }
    out
}

fn to_map(policy: &str, app: &Application, topo: &Topology, inst: &[(ModuleId, DeviceId, f64)]) -> PlacementMap {
    PlacementMap::new(
        policy,
        inst.iter()
            .map(|&(m, d, demand)| Instance {
                module: app.module(m).name.clone(),
                device: topo.device(d).name.clone(),
                demand,
            })
            .collect(),
    )
}

/// Every module on the cloud root, except pinned modules.
pub fn place_cloud_only(
    app: &Application,
    topo: &Topology,
    constraints: &PlacementConstraints,
    demands: &Demands,
) -> Result<PlacementMap, PlacementError> {
    let pins = constraints.resolve(app, topo)?;
    let mut inst = pinned_instances(&pins, demands);
    let root = topo.root();
    for m in app.module_ids() {
        if !pins.contains_key(&m) {
            inst.push((m, root, demands.get(root, m)));
        }
    }
    Ok(to_map("cloud", app, topo, &inst))
}

pub fn place_edge_ward(
    app: &Application,
    topo: &Topology,
    constraints: &PlacementConstraints,
    demands: &Demands,
) -> Result<PlacementMap, PlacementError> {
    place_edge_ward_traced(app, topo, constraints, demands).map(|(m, _)| m)
}

/// Edge-ward placement that also returns every decision it made.
pub fn place_edge_ward_traced(
    app: &Application,
    topo: &Topology,
    constraints: &PlacementConstraints,
    demands: &Demands,
) -> Result<(PlacementMap, Vec<TraceStep>), PlacementError> {
    let pins = constraints.resolve(app, topo)?;
    let name = |d: DeviceId| topo.device(d).name.clone();
    let mname = |m: ModuleId| app.module(m).name.clone();

    let mut avail: Vec<f64> = topo.device_ids().map(|d| topo.device(d).mips).collect();
    // Live instances; merges remove and re-add.
    let mut instances: Vec<(ModuleId, DeviceId, f64)> = Vec::new();
    let mut trace = Vec::new();

    for (m, d, demand) in pinned_instances(&pins, demands) {
        avail[d.0] -= demand;
        instances.push((m, d, demand));
        trace.push(TraceStep::Pinned {
            module: mname(m),
            device: name(d),
            demand,
        });
    }

    let has_instance = |instances: &[(ModuleId, DeviceId, f64)], m: ModuleId| instances.iter().any(|i| i.0 == m);

    for leaf in topo.leaves() {
        let path = topo.path_ids(leaf);
        let on_path = |instances: &[(ModuleId, DeviceId, f64)], m: ModuleId| {
            instances
                .iter()
                .position(|&(im, host, _)| im == m && path.contains(&host))
        };
        let mut place_list: Vec<ModuleId> = Vec::new();
        let mut placed_on_path: BTreeSet<ModuleId> = BTreeSet::new();

        // Modules join placeList once every up-predecessor has an instance on
        // this path; placing one module can make its successors eligible at
        // the same device.
        let extend = |place_list: &mut Vec<ModuleId>,
                      placed_on_path: &BTreeSet<ModuleId>,
                      instances: &[(ModuleId, DeviceId, f64)]| {
            for w in app.module_ids() {
                if pins.contains_key(&w) || place_list.contains(&w) || placed_on_path.contains(&w) {
                    continue;
                }
                if demands.get(leaf, w) <= 0.0 {
                    continue;
                }
                if app.up_predecessors(w).iter().all(|&p| on_path(instances, p).is_some()) {
                    place_list.push(w);
                }
            }
        };

        for &d in &path {
            extend(&mut place_list, &placed_on_path, &instances);
            let mut remaining = Vec::with_capacity(place_list.len());
            let mut i = 0;
            while i < place_list.len() {
                let theta = place_list[i];
                i += 1;
                let req = demands.get(leaf, theta);
                if let Some(idx) = on_path(&instances, theta) {
                    let (_, from, old) = instances.swap_remove(idx);
                    let merged = old + req;
                    avail[from.0] += old;
                    let mut f = from;
                    while merged >= avail[f.0] {
                        f = topo.parent(f).ok_or_else(|| PlacementError::Unplaceable {
                            module: mname(theta),
                            leaf: name(leaf),
                            demand: merged,
                        })?;
                    }
                    avail[f.0] -= merged;
                    instances.push((theta, f, merged));
                    trace.push(TraceStep::Merged {
                        module: mname(theta),
                        from: name(from),
                        to: name(f),
                        demand: merged,
                    });
                } else if req <= avail[d.0] {
                    avail[d.0] -= req;
                    instances.push((theta, d, req));
                    trace.push(TraceStep::Placed {
                        module: mname(theta),
                        device: name(d),
                        demand: req,
                    });
                } else {
                    remaining.push(theta);
                    continue;
                }
                placed_on_path.insert(theta);
                extend(&mut place_list, &placed_on_path, &instances);
            }
            place_list = remaining;
        }

        if let Some(&m) = place_list.first() {
            return Err(PlacementError::Unplaceable {
                module: mname(m),
                leaf: name(leaf),
                demand: demands.get(leaf, m),
            });
        }
    }

    // Modules that no path needed still get an instance.
    let root = topo.root();
    for m in app.module_ids() {
        if !has_instance(&instances, m) {
            instances.push((m, root, 0.0));
            trace.push(TraceStep::RootFallback {
                module: mname(m),
                device: name(root),
            });
        }
    }

    Ok((to_map("edgeward", app, topo, &instances), trace))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PlacementViolation {
    UnplacedModule(String),
    UnknownModule(String),
    UnknownDevice {
        module: String,
        device: String,
    },
    PinnedElsewhere {
        module: String,
        device: String,
    },
    MissingPinnedInstance {
        module: String,
        device: String,
    },
    BadPin(String),
    RamExceeded {
        device: String,
        used_mb: f64,
        capacity_mb: f64,
    },
}

impl fmt::Display for PlacementViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use PlacementViolation::*;
        match self {
            UnplacedModule(m) => write!(f, "module `{m}` has no instance"),
            UnknownModule(m) => write!(f, "instance of unknown module `{m}`"),
            UnknownDevice { module, device } => {
                write!(f, "`{module}` placed on unknown device `{device}`")
            }
            PinnedElsewhere { module, device } => {
                write!(f, "pinned module `{module}` placed on `{device}`")
            }
            MissingPinnedInstance { module, device } => {
                write!(f, "pinned module `{module}` has no instance on `{device}`")
            }
            BadPin(e) => write!(f, "{e}"),
            RamExceeded {
                device,
                used_mb,
                capacity_mb,
            } => write!(f, "`{device}` hosts {used_mb} MB of modules but has {capacity_mb} MB"),
        }
    }
}

pub fn validate_placement(
    map: &PlacementMap,
    app: &Application,
    topo: &Topology,
    constraints: &PlacementConstraints,
) -> Vec<PlacementViolation> {
    let mut out = Vec::new();
    let pins = match constraints.resolve(app, topo) {
        Ok(p) => p,
        Err(e) => {
            out.push(PlacementViolation::BadPin(e.to_string()));
            BTreeMap::new()
        }
    };
    let mut ram: HashMap<DeviceId, f64> = HashMap::new();
    for i in &map.instances {
        let m = app.module_id(&i.module);
        let d = topo.id(&i.device);
        match (m, d) {
            (None, _) => out.push(PlacementViolation::UnknownModule(i.module.clone())),
            (_, None) => out.push(PlacementViolation::UnknownDevice {
                module: i.module.clone(),
                device: i.device.clone(),
            }),
            (Some(m), Some(d)) => {
                *ram.entry(d).or_default() += app.module(m).ram_mb;
                if let Some(allowed) = pins.get(&m) {
                    if !allowed.contains(&d) {
                        out.push(PlacementViolation::PinnedElsewhere {
                            module: i.module.clone(),
                            device: i.device.clone(),
                        });
                    }
                }
            }
        }
    }
    for m in app.module_ids() {
        let name = &app.module(m).name;
        if let Some(devices) = pins.get(&m) {
            for &d in devices {
                let dn = &topo.device(d).name;
                if !map.instances.iter().any(|i| &i.module == name && &i.device == dn) {
                    out.push(PlacementViolation::MissingPinnedInstance {
                        module: name.clone(),
                        device: dn.clone(),
                    });
                }
            }
        } else if !map.instances.iter().any(|i| &i.module == name) {
            out.push(PlacementViolation::UnplacedModule(name.clone()));
        }
    }
    let mut ram: Vec<(DeviceId, f64)> = ram.into_iter().collect();
    ram.sort_by_key(|r| r.0);
    for (d, used) in ram {
        let cap = topo.device(d).ram_mb;
        if used > cap {
            out.push(PlacementViolation::RamExceeded {
                device: topo.device(d).name.clone(),
                used_mb: used,
                capacity_mb: cap,
            });
        }
    }
    out
}
