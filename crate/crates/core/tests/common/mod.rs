//! Fixtures shared by the integration and acceptance tests.
#![allow(dead_code)]

use fogsim::application::{
    Application, ApplicationSpec, Direction, EdgeKind, EdgeSpec, LoopSpec, ModuleSpec, SelectivityRule,
};
use fogsim::placement::{Demands, PlacementConstraints};
use fogsim::topology::{Actuator, Distribution, FogDevice, PhysicalTopology, Sensor, Topology};

pub const CLOUD_MIPS: f64 = 10_000.0;

pub fn device(name: &str, parent: Option<&str>, mips: f64) -> FogDevice {
    FogDevice {
        name: name.into(),
        class: None,
        parent: parent.map(Into::into),
        mips,
        ram_mb: 1024.0,
        storage_mb: 1000.0,
        uplink_bw: 1000.0,
        downlink_bw: 1000.0,
        busy_power: 100.0,
        idle_power: 50.0,
        uplink_latency_ms: 1.0,
    }
}

pub fn sensor(name: &str, tuple_type: &str, gateway: &str, dist: Distribution) -> Sensor {
    Sensor {
        name: name.into(),
        tuple_type: tuple_type.into(),
        gateway: gateway.into(),
        gateway_latency_ms: 1.0,
        distribution: dist,
        tuple_cpu_mi: 100.0,
        tuple_nw_bytes: 100,
    }
}

pub fn actuator(name: &str, actuator_type: &str, gateway: &str) -> Actuator {
    Actuator {
        name: name.into(),
        actuator_type: actuator_type.into(),
        gateway: gateway.into(),
        gateway_latency_ms: 1.0,
    }
}

pub fn module(name: &str, rules: &[(&str, &str)]) -> ModuleSpec {
    ModuleSpec {
        name: name.into(),
        ram_mb: 10.0,
        selectivity: rules
            .iter()
            .map(|&(input, output)| SelectivityRule {
                input: input.into(),
                output: output.into(),
                probability: 1.0,
            })
            .collect(),
    }
}

pub fn edge(source: &str, destination: &str, tuple_type: &str, direction: Direction) -> EdgeSpec {
    EdgeSpec {
        source: source.into(),
        destination: destination.into(),
        tuple_type: tuple_type.into(),
        cpu_mi: 100.0,
        nw_bytes: 100,
        kind: EdgeKind::EventBased,
        direction,
    }
}

/// cloud (10000 MIPS) -> gw -> {a, b}; one sensor `S` on each leaf.
pub fn two_leaf_topology(gw_mips: f64, leaf_mips: f64) -> Topology {
    let devices = vec![
        device("cloud", None, CLOUD_MIPS),
        device("gw", Some("cloud"), gw_mips),
        device("a", Some("gw"), leaf_mips),
        device("b", Some("gw"), leaf_mips),
    ];
    let sensors = ["a", "b"]
        .map(|g| sensor(&format!("s-{g}"), "S", g, Distribution::Deterministic(10.0)))
        .to_vec();
    Topology::new(PhysicalTopology::new(devices, sensors, vec![])).expect("valid fixture")
}

/// cloud (10000 MIPS) -> gw -> a; one sensor `S` on `a`.
pub fn single_path_topology(gw_mips: f64, leaf_mips: f64) -> Topology {
    let devices = vec![
        device("cloud", None, CLOUD_MIPS),
        device("gw", Some("cloud"), gw_mips),
        device("a", Some("gw"), leaf_mips),
    ];
    let sensors = vec![sensor("s-a", "S", "a", Distribution::Deterministic(10.0))];
    Topology::new(PhysicalTopology::new(devices, sensors, vec![])).expect("valid fixture")
}

/// `S -> X`: one module fed by the sensor.
pub fn single_module_app() -> Application {
    Application::new(ApplicationSpec {
        name: "single".into(),
        modules: vec![module("X", &[])],
        sensors: vec!["S".into()],
        actuators: vec![],
        edges: vec![edge("S", "X", "S", Direction::Up)],
        loops: vec![],
        pins: Default::default(),
    })
    .expect("valid fixture")
}

/// `S -> A -> B`: a two-module chain.
pub fn chain_app() -> Application {
    Application::new(ApplicationSpec {
        name: "chain".into(),
        modules: vec![module("A", &[("S", "AB")]), module("B", &[])],
        sensors: vec!["S".into()],
        actuators: vec![],
        edges: vec![edge("S", "A", "S", Direction::Up), edge("A", "B", "AB", Direction::Up)],
        loops: vec![],
        pins: Default::default(),
    })
    .expect("valid fixture")
}

/// Per-leaf demand of each module: `(module, MIPS)`; every other device
/// sees the sum over the leaves below it.
pub fn leaf_demands(app: &Application, topo: &Topology, per_leaf: &[(&str, f64)]) -> Demands {
    let leaves: Vec<String> = topo.leaves().into_iter().map(|d| topo.device(d).name.clone()).collect();
    Demands::from_fn(app, topo, |device, module| {
        let d = per_leaf.iter().find(|(m, _)| *m == module).map_or(0.0, |&(_, v)| v);
        let below = leaves
            .iter()
            .filter(|l| topo.path_to_root(l).expect("leaf").iter().any(|p| p == device))
            .count();
        d * below as f64
    })
}

pub fn no_pins() -> PlacementConstraints {
    PlacementConstraints::new()
}

/// Sensor -> Proc -> Act loop on one device under the cloud: used by the
/// end-to-end runtime tests.
pub fn echo_app(cpu_mi: f64) -> Application {
    let mut up = edge("S", "Proc", "S", Direction::Up);
    up.cpu_mi = cpu_mi;
    Application::new(ApplicationSpec {
        name: "echo".into(),
        modules: vec![module("Proc", &[("S", "OUT")])],
        sensors: vec!["S".into()],
        actuators: vec!["ACT".into()],
        edges: vec![up, edge("Proc", "ACT", "OUT", Direction::Down)],
        loops: vec![LoopSpec {
            name: "echo".into(),
            elements: ["S", "Proc", "ACT"].map(String::from).to_vec(),
        }],
        pins: Default::default(),
    })
    .expect("valid fixture")
}
