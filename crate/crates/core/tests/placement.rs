//! Edge-ward and cloud-only placement against hand-worked traces.

mod common;

use common::*;
use fogsim::application::Pin;
use fogsim::placement::{
    place_cloud_only, place_edge_ward, place_edge_ward_traced, validate_placement, Instance, PlacementConstraints,
    PlacementError, PlacementMap, PlacementViolation, PolicyRegistry, TraceStep,
};

fn placed(module: &str, device: &str, demand: f64) -> TraceStep {
    TraceStep::Placed {
        module: module.into(),
        device: device.into(),
        demand,
    }
}

fn merged(module: &str, from: &str, to: &str, demand: f64) -> TraceStep {
    TraceStep::Merged {
        module: module.into(),
        from: from.into(),
        to: to.into(),
        demand,
    }
}

// Leaves too small for X (100 < 200). Path a: X waits at a, lands on gw
// (200 <= 300). Path b: X already sits on gw, so the demands merge to 400;
// with gw's 200 restored, 400 >= 300 and the instance climbs to the cloud.
#[test]
fn shared_module_exceeding_gateway_is_pushed_to_parent() {
    let topo = two_leaf_topology(300.0, 100.0);
    let app = single_module_app();
    let demands = leaf_demands(&app, &topo, &[("X", 200.0)]);
    let (map, trace) = place_edge_ward_traced(&app, &topo, &no_pins(), &demands).unwrap();
    assert_eq!(trace, vec![placed("X", "gw", 200.0), merged("X", "gw", "cloud", 400.0)]);
    assert_eq!(
        map.instances,
        vec![Instance {
            module: "X".into(),
            device: "cloud".into(),
            demand: 400.0
        }]
    );
}

// Same walk with a 500-MIPS gateway: 400 < 500, the merged instance stays.
#[test]
fn shared_module_within_gateway_stays() {
    let topo = two_leaf_topology(500.0, 100.0);
    let app = single_module_app();
    let demands = leaf_demands(&app, &topo, &[("X", 200.0)]);
    let (map, trace) = place_edge_ward_traced(&app, &topo, &no_pins(), &demands).unwrap();
    assert_eq!(trace, vec![placed("X", "gw", 200.0), merged("X", "gw", "gw", 400.0)]);
    assert_eq!(map.by_module()["X"], vec!["gw".to_string()]);
}

// The climb condition is `merged >= avail`: exactly filling the gateway
// still pushes the instance up.
#[test]
fn merged_demand_equal_to_capacity_climbs() {
    let topo = two_leaf_topology(400.0, 100.0);
    let app = single_module_app();
    let demands = leaf_demands(&app, &topo, &[("X", 200.0)]);
    let (_, trace) = place_edge_ward_traced(&app, &topo, &no_pins(), &demands).unwrap();
    assert_eq!(trace[1], merged("X", "gw", "cloud", 400.0));
}

// Leaves fit X, so each leaf hosts its own instance and nothing merges.
#[test]
fn module_fitting_every_leaf_stays_at_the_edge() {
    let topo = two_leaf_topology(300.0, 1000.0);
    let app = single_module_app();
    let demands = leaf_demands(&app, &topo, &[("X", 200.0)]);
    let (map, trace) = place_edge_ward_traced(&app, &topo, &no_pins(), &demands).unwrap();
    assert_eq!(trace, vec![placed("X", "a", 200.0), placed("X", "b", 200.0)]);
    assert_eq!(map.by_module()["X"], vec!["a".to_string(), "b".to_string()]);
}

// Chain S -> A -> B, leaves 500, gw 1000. Path a: A@a (300 <= 500), which
// makes B eligible; B (800) does not fit the 200 left on a, lands on gw.
// Path b: A@b; B's instance on gw is on this path, so 800 + 800 = 1600
// merges and climbs past gw (1600 >= 1000) to the cloud.
#[test]
fn chain_uses_worklist_and_merges_downstream_module() {
    let topo = two_leaf_topology(1000.0, 500.0);
    let app = chain_app();
    let demands = leaf_demands(&app, &topo, &[("A", 300.0), ("B", 800.0)]);
    let (map, trace) = place_edge_ward_traced(&app, &topo, &no_pins(), &demands).unwrap();
    assert_eq!(
        trace,
        vec![
            placed("A", "a", 300.0),
            placed("B", "gw", 800.0),
            placed("A", "b", 300.0),
            merged("B", "gw", "cloud", 1600.0),
        ]
    );
    let by = map.by_module();
    assert_eq!(by["A"], vec!["a".to_string(), "b".to_string()]);
    assert_eq!(by["B"], vec!["cloud".to_string()]);
}

// A chain whose modules both fit the leaf lands entirely on it: placing A
// makes B eligible at the same device.
#[test]
fn small_chain_lands_on_one_device() {
    let topo = single_path_topology(1000.0, 1000.0);
    let app = chain_app();
    let demands = leaf_demands(&app, &topo, &[("A", 300.0), ("B", 300.0)]);
    let (_, trace) = place_edge_ward_traced(&app, &topo, &no_pins(), &demands).unwrap();
    assert_eq!(trace, vec![placed("A", "a", 300.0), placed("B", "a", 300.0)]);
}

#[test]
fn demand_above_every_device_is_an_error() {
    let topo = single_path_topology(1000.0, 1000.0);
    let app = single_module_app();
    let demands = leaf_demands(&app, &topo, &[("X", 20_000.0)]);
    let err = place_edge_ward(&app, &topo, &no_pins(), &demands).unwrap_err();
    assert_eq!(
        err,
        PlacementError::Unplaceable {
            module: "X".into(),
            leaf: "a".into(),
            demand: 20_000.0
        }
    );
}

#[test]
fn module_without_demand_falls_back_to_root() {
    let topo = single_path_topology(1000.0, 1000.0);
    let app = single_module_app();
    let demands = leaf_demands(&app, &topo, &[]);
    let (map, trace) = place_edge_ward_traced(&app, &topo, &no_pins(), &demands).unwrap();
    assert_eq!(
        trace,
        vec![TraceStep::RootFallback {
            module: "X".into(),
            device: "cloud".into()
        }]
    );
    assert_eq!(map.by_module()["X"], vec!["cloud".to_string()]);
}

#[test]
fn pinned_module_is_charged_and_not_moved() {
    let topo = two_leaf_topology(300.0, 1000.0);
    let app = chain_app();
    let pins = PlacementConstraints::new().pin("A", Pin::Devices(vec!["a".into(), "b".into()]));
    let demands = leaf_demands(&app, &topo, &[("A", 900.0), ("B", 200.0)]);
    let (map, trace) = place_edge_ward_traced(&app, &topo, &pins, &demands).unwrap();
    // 100 MIPS left on each leaf after the pinned A, so B goes to gw, then
    // merges to 400 >= 300 and climbs.
    assert_eq!(
        trace,
        vec![
            TraceStep::Pinned {
                module: "A".into(),
                device: "a".into(),
                demand: 900.0
            },
            TraceStep::Pinned {
                module: "A".into(),
                device: "b".into(),
                demand: 900.0
            },
            placed("B", "gw", 200.0),
            merged("B", "gw", "cloud", 400.0),
        ]
    );
    assert!(validate_placement(&map, &app, &topo, &pins).is_empty());
}

#[test]
fn cloud_only_puts_every_unpinned_module_on_the_root() {
    let topo = two_leaf_topology(300.0, 1000.0);
    let app = chain_app();
    let demands = leaf_demands(&app, &topo, &[("A", 300.0), ("B", 800.0)]);
    let map = place_cloud_only(&app, &topo, &no_pins(), &demands).unwrap();
    assert_eq!(map.policy, "cloud");
    assert_eq!(
        map.instances,
        vec![
            Instance {
                module: "A".into(),
                device: "cloud".into(),
                demand: 600.0
            },
            Instance {
                module: "B".into(),
                device: "cloud".into(),
                demand: 1600.0
            },
        ]
    );

    let pins = PlacementConstraints::new().pin("A", Pin::Devices(vec!["a".into()]));
    let map = place_cloud_only(&app, &topo, &pins, &demands).unwrap();
    let by = map.by_module();
    assert_eq!(by["A"], vec!["a".to_string()]);
    assert_eq!(by["B"], vec!["cloud".to_string()]);
}

#[test]
fn validate_reports_each_violation() {
    let topo = two_leaf_topology(300.0, 1000.0);
    let app = chain_app();
    let pins = PlacementConstraints::new().pin("A", Pin::Devices(vec!["a".into()]));
    let inst = |m: &str, d: &str| Instance {
        module: m.into(),
        device: d.into(),
        demand: 0.0,
    };
    let map = PlacementMap::new(
        "manual",
        vec![inst("A", "gw"), inst("Z", "cloud"), inst("B", "nowhere")],
    );
    assert_eq!(
        validate_placement(&map, &app, &topo, &pins),
        vec![
            PlacementViolation::PinnedElsewhere {
                module: "A".into(),
                device: "gw".into()
            },
            PlacementViolation::UnknownDevice {
                module: "B".into(),
                device: "nowhere".into()
            },
            PlacementViolation::UnknownModule("Z".into()),
            PlacementViolation::MissingPinnedInstance {
                module: "A".into(),
                device: "a".into()
            },
        ]
    );

    let mut small = app.spec().clone();
    small.modules[0].ram_mb = 2000.0;
    let app = fogsim::Application::new(small).unwrap();
    let map = PlacementMap::new("manual", vec![inst("A", "cloud"), inst("B", "cloud")]);
    assert_eq!(
        validate_placement(&map, &app, &topo, &no_pins()),
        vec![PlacementViolation::RamExceeded {
            device: "cloud".into(),
            used_mb: 2010.0,
            capacity_mb: 1024.0
        }]
    );
}

#[test]
fn registry_resolves_built_in_policies() {
    let r = PolicyRegistry::default();
    assert_eq!(r.names().collect::<Vec<_>>(), vec!["cloud", "edgeward"]);
    assert_eq!(r.get("edgeward").unwrap().name(), "edgeward");
    assert_eq!(
        r.get("random").err(),
        Some(PlacementError::UnknownPolicy("random".into()))
    );
}
