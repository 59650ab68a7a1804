//! Builders for the two case studies and their Config 1-5 sweeps.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::application::{
    AppError, Application, ApplicationSpec, Direction, EdgeKind, EdgeSpec, LoopSpec, ModuleSpec, Pin, SelectivityRule,
};
use crate::constants::*;
use crate::kernel::SimTime;
use crate::metrics::MetricsReport;
use crate::placement::{
    validate_placement, Demands, PlacementConstraints, PlacementError, PlacementMap, PlacementViolation, PolicyRegistry,
};
use crate::runtime::{SimConfig, SimError, Simulation};
use crate::topology::{
    Actuator, Distribution, DistributionKind, FogDevice, PhysicalTopology, Sensor, Topology, TopologyError,
};

pub const EEG_LOOP: &str = "EEG -> Client -> Concentration Calculator -> Client -> DISPLAY";
pub const SURVEILLANCE_LOOP: &str = "CAMERA -> Motion Detector -> Object Detector -> Object Tracker -> PTZ_CONTROL";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config {0} is out of range 1..={MAX_CONFIG}")]
    InvalidConfig(u8),
    #[error("duration must be positive, got {0} ms")]
    InvalidDuration(f64),
    #[error("unknown scenario `{0}` (expected eeg or surveillance)")]
    UnknownScenario(String),
    #[error("unknown headset `{0}` (expected A or B)")]
    UnknownHeadset(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Application(#[from] AppError),
    #[error("placement failed: {0}")]
    Placement(#[from] PlacementError),
    #[error("placement `{policy}` is invalid: {}", .violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidPlacement {
        policy: String,
        violations: Vec<PlacementViolation>,
    },
    #[error(transparent)]
    Simulation(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Eeg,
    Surveillance,
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::Eeg => "eeg",
            ScenarioKind::Surveillance => "surveillance",
        })
    }
}

impl FromStr for ScenarioKind {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "eeg" => Ok(ScenarioKind::Eeg),
            "surveillance" => Ok(ScenarioKind::Surveillance),
            _ => Err(ScenarioError::UnknownScenario(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Headset {
    A,
    B,
}

impl Headset {
    pub fn eeg_mi(self) -> f64 {
        match self {
            Headset::A => HEADSET_A_EEG_MI,
            Headset::B => HEADSET_B_EEG_MI,
        }
    }

    pub fn interval_ms(self) -> f64 {
        match self {
            Headset::A => HEADSET_A_INTERVAL_MS,
            Headset::B => HEADSET_B_INTERVAL_MS,
        }
    }
}

impl fmt::Display for Headset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Headset::A => "A",
            Headset::B => "B",
        })
    }
}

impl FromStr for Headset {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(Headset::A),
            "B" | "b" => Ok(Headset::B),
            _ => Err(ScenarioError::UnknownHeadset(s.to_string())),
        }
    }
}

/// Knobs that the case studies leave open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOptions {
    pub distribution: DistributionKind,
    /// Period of the periodic game-state edges.
    pub period_ms: f64,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        ScenarioOptions {
            distribution: DistributionKind::Deterministic,
            period_ms: DEFAULT_PERIOD_MS,
        }
    }
}

/// A topology, an application and the pins that hold regardless of policy.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub topology: Topology,
    pub app: Application,
    pub constraints: PlacementConstraints,
}

/// One named, parameterized experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: ScenarioKind,
    pub config: u8,
    /// Ignored by the surveillance case study.
    pub headset: Headset,
    pub duration_ms: f64,
    pub placement: String,
    pub seed: u64,
    #[serde(default)]
    pub options: ScenarioOptions,
}

impl ScenarioSpec {
    /// Case-study defaults: 3 h for EEG, 1000 s for surveillance.
    pub fn new(name: ScenarioKind, config: u8, headset: Headset, placement: &str) -> Self {
        ScenarioSpec {
            name,
            config,
            headset,
            duration_ms: match name {
                ScenarioKind::Eeg => EEG_DURATION_MS,
                ScenarioKind::Surveillance => SURVEILLANCE_DURATION_MS,
            },
            placement: placement.to_string(),
            seed: 42,
            options: ScenarioOptions::default(),
        }
    }

    pub fn with_duration_ms(mut self, ms: f64) -> Self {
        self.duration_ms = ms;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_options(mut self, options: ScenarioOptions) -> Self {
        self.options = options;
        self
    }

    /// Label such as `eeg-c1-A-edgeward`.
    pub fn label(&self) -> String {
        match self.name {
            ScenarioKind::Eeg => {
                format!("eeg-c{}-{}-{}", self.config, self.headset, self.placement)
            }
            ScenarioKind::Surveillance => {
                format!("surveillance-c{}-{}", self.config, self.placement)
            }
        }
    }

    pub fn build(&self) -> Result<Scenario, ScenarioError> {
        match self.name {
            ScenarioKind::Eeg => build_eeg_with(self.config, self.headset, &self.options),
            ScenarioKind::Surveillance => build_surveillance_with(self.config, &self.options),
        }
    }
}

/// Number of gateway groups (WiFi gateways or surveilled areas) in a config.
pub fn groups(config: u8) -> Result<usize, ScenarioError> {
    if (1..=MAX_CONFIG).contains(&config) {
        Ok(1 << (config - 1))
    } else {
        Err(ScenarioError::InvalidConfig(config))
    }
}

struct Dev<'a> {
    name: String,
    class: &'a str,
    parent: Option<String>,
    mips: f64,
    ram_mb: f64,
    power: (f64, f64),
    latency_ms: f64,
    bw: f64,
}

fn device(d: Dev<'_>) -> FogDevice {
    FogDevice {
        name: d.name,
        class: Some(d.class.to_string()),
        parent: d.parent,
        mips: d.mips,
        ram_mb: d.ram_mb,
        storage_mb: STORAGE_MB,
        uplink_bw: d.bw,
        downlink_bw: d.bw,
        busy_power: d.power.0,
        idle_power: d.power.1,
        uplink_latency_ms: d.latency_ms,
    }
}

/// Cloud root plus ISP gateway, shared by both case studies.
fn backbone() -> Vec<FogDevice> {
    vec![
        device(Dev {
            name: "cloud".into(),
            class: "cloud",
            parent: None,
            mips: CLOUD_MIPS,
            ram_mb: GATEWAY_RAM_MB,
            power: (SERVER_BUSY_W, SERVER_IDLE_W),
            latency_ms: 0.0,
            bw: BACKBONE_BW_BYTES_PER_MS,
        }),
        device(Dev {
            name: "isp-gateway".into(),
            class: "isp_gateway",
            parent: Some("cloud".into()),
            mips: GATEWAY_MIPS,
            ram_mb: GATEWAY_RAM_MB,
            power: (SERVER_BUSY_W, SERVER_IDLE_W),
            latency_ms: ISP_TO_CLOUD_MS,
            bw: BACKBONE_BW_BYTES_PER_MS,
        }),
    ]
}

fn module(name: &str, rules: &[(&str, &str, f64)]) -> ModuleSpec {
    ModuleSpec {
        name: name.into(),
        ram_mb: MODULE_RAM_MB,
        selectivity: rules
            .iter()
            .map(|&(input, output, probability)| SelectivityRule {
                input: input.into(),
                output: output.into(),
                probability,
            })
            .collect(),
    }
}

fn edge(
    src: &str,
    dst: &str,
    tuple_type: &str,
    (cpu_mi, nw_bytes): (f64, u64),
    kind: EdgeKind,
    direction: Direction,
) -> EdgeSpec {
    EdgeSpec {
        source: src.into(),
        destination: dst.into(),
        tuple_type: tuple_type.into(),
        cpu_mi,
        nw_bytes,
        kind,
        direction,
    }
}

pub fn build_eeg(config: u8, headset: Headset) -> Result<Scenario, ScenarioError> {
    build_eeg_with(config, headset, &ScenarioOptions::default())
}

/// EEG game: cloud, ISP gateway, N WiFi gateways with 4 smartphones each;
/// every smartphone has an EEG headset and a DISPLAY.
pub fn build_eeg_with(config: u8, headset: Headset, opts: &ScenarioOptions) -> Result<Scenario, ScenarioError> {
    let n = groups(config)?;
    let mut devices = backbone();
    let (mut sensors, mut actuators) = (Vec::new(), Vec::new());
    for g in 0..n {
        let gw = format!("wifi-gateway-{g:02}");
        devices.push(device(Dev {
            name: gw.clone(),
            class: "wifi_gateway",
            parent: Some("isp-gateway".into()),
            mips: GATEWAY_MIPS,
            ram_mb: GATEWAY_RAM_MB,
            power: (SERVER_BUSY_W, SERVER_IDLE_W),
            latency_ms: WIFI_TO_ISP_MS,
            bw: LINK_BW_BYTES_PER_MS,
        }));
        for p in 0..DEVICES_PER_GROUP {
            let phone = format!("smartphone-{g:02}-{p}");
            devices.push(device(Dev {
                name: phone.clone(),
                class: "smartphone",
                parent: Some(gw.clone()),
                mips: SMARTPHONE_MIPS,
                ram_mb: SMARTPHONE_RAM_MB,
                power: (SMARTPHONE_BUSY_W, SMARTPHONE_IDLE_W),
                latency_ms: PHONE_TO_WIFI_MS,
                bw: LINK_BW_BYTES_PER_MS,
            }));
            sensors.push(Sensor {
                name: format!("eeg-{g:02}-{p}"),
                tuple_type: "EEG".into(),
                gateway: phone.clone(),
                gateway_latency_ms: HEADSET_TO_PHONE_MS,
                distribution: Distribution::with_kind(opts.distribution, headset.interval_ms()),
                tuple_cpu_mi: headset.eeg_mi(),
                tuple_nw_bytes: EEG_NW_BYTES,
            });
            actuators.push(Actuator {
                name: format!("display-{g:02}-{p}"),
                actuator_type: "DISPLAY".into(),
                gateway: phone,
                gateway_latency_ms: ACTUATOR_LATENCY_MS,
            });
        }
    }
    let topology = Topology::new(PhysicalTopology::new(devices, sensors, actuators))?;
    let app = Application::new(eeg_app(headset, opts.period_ms))?;
    let constraints = PlacementConstraints::from_app(&app);
    Ok(Scenario {
        name: format!("eeg-c{config}-{headset}"),
        topology,
        app,
        constraints,
    })
}

/// The EEG tractor-beam game application.
pub fn eeg_app(headset: Headset, period_ms: f64) -> ApplicationSpec {
    use Direction::*;
    let periodic = EdgeKind::Periodic { period_ms };
    let ev = EdgeKind::EventBased;
    ApplicationSpec {
        name: "eeg-tractor-beam".into(),
        modules: vec![
            module(
                "Client",
                &[
                    ("EEG", "_SENSOR", 1.0),
                    ("CONCENTRATION", "SELF_STATE_UPDATE", 1.0),
                    ("GLOBAL_GAME_STATE", "GLOBAL_STATE_UPDATE", 1.0),
                ],
            ),
            module("Concentration Calculator", &[("_SENSOR", "CONCENTRATION", 1.0)]),
            module("Coordinator", &[]),
        ],
        sensors: vec!["EEG".into()],
        actuators: vec!["DISPLAY".into()],
        edges: vec![
            edge("EEG", "Client", "EEG", (headset.eeg_mi(), EEG_NW_BYTES), ev, Up),
            edge("Client", "Concentration Calculator", "_SENSOR", SENSOR_EDGE, ev, Up),
            edge(
                "Concentration Calculator",
                "Coordinator",
                "PLAYER_GAME_STATE",
                PLAYER_GAME_STATE,
                periodic,
                Up,
            ),
            edge(
                "Concentration Calculator",
                "Client",
                "CONCENTRATION",
                CONCENTRATION,
                ev,
                Down,
            ),
            edge(
                "Coordinator",
                "Client",
                "GLOBAL_GAME_STATE",
                GLOBAL_GAME_STATE,
                periodic,
                Down,
            ),
            edge(
                "Client",
                "DISPLAY",
                "GLOBAL_STATE_UPDATE",
                GLOBAL_STATE_UPDATE,
                ev,
                Down,
            ),
            edge("Client", "DISPLAY", "SELF_STATE_UPDATE", SELF_STATE_UPDATE, ev, Down),
        ],
        loops: vec![LoopSpec {
            name: EEG_LOOP.into(),
            elements: ["EEG", "Client", "Concentration Calculator", "Client", "DISPLAY"]
                .map(String::from)
                .to_vec(),
        }],
        pins: [
            ("Client".to_string(), Pin::Class("smartphone".into())),
            ("Coordinator".to_string(), Pin::Class("cloud".into())),
        ]
        .into(),
    }
}

pub fn build_surveillance(config: u8) -> Result<Scenario, ScenarioError> {
    build_surveillance_with(config, &ScenarioOptions::default())
}

/// Intelligent surveillance: cloud, ISP gateway, N area gateways with 4
/// smart cameras each; every camera has a video sensor and a PTZ actuator.
pub fn build_surveillance_with(config: u8, opts: &ScenarioOptions) -> Result<Scenario, ScenarioError> {
    let n = groups(config)?;
    let mut devices = backbone();
    let (mut sensors, mut actuators) = (Vec::new(), Vec::new());
    for g in 0..n {
        let gw = format!("area-gateway-{g:02}");
        devices.push(device(Dev {
            name: gw.clone(),
            class: "area_gateway",
            parent: Some("isp-gateway".into()),
            mips: GATEWAY_MIPS,
            ram_mb: GATEWAY_RAM_MB,
            power: (SERVER_BUSY_W, SERVER_IDLE_W),
            latency_ms: AREA_TO_ISP_MS,
            bw: LINK_BW_BYTES_PER_MS,
        }));
        for c in 0..DEVICES_PER_GROUP {
            let cam = format!("camera-{g:02}-{c}");
            devices.push(device(Dev {
                name: cam.clone(),
                class: "camera",
                parent: Some(gw.clone()),
                mips: CAMERA_MIPS,
                ram_mb: CAMERA_RAM_MB,
                power: (SMARTPHONE_BUSY_W, SMARTPHONE_IDLE_W),
                latency_ms: CAMERA_TO_AREA_MS,
                bw: LINK_BW_BYTES_PER_MS,
            }));
            sensors.push(Sensor {
                name: format!("video-{g:02}-{c}"),
                tuple_type: "CAMERA".into(),
                gateway: cam.clone(),
                gateway_latency_ms: CAMERA_SENSOR_LATENCY_MS,
                distribution: Distribution::with_kind(opts.distribution, CAMERA_INTERVAL_MS),
                tuple_cpu_mi: RAW_VIDEO_STREAM.0,
                tuple_nw_bytes: RAW_VIDEO_STREAM.1,
            });
            actuators.push(Actuator {
                name: format!("ptz-{g:02}-{c}"),
                actuator_type: "PTZ_CONTROL".into(),
                gateway: cam,
                gateway_latency_ms: ACTUATOR_LATENCY_MS,
            });
        }
    }
    let topology = Topology::new(PhysicalTopology::new(devices, sensors, actuators))?;
    let app = Application::new(surveillance_app())?;
    let constraints = PlacementConstraints::from_app(&app);
    Ok(Scenario {
        name: format!("surveillance-c{config}"),
        topology,
        app,
        constraints,
    })
}

/// The intelligent-surveillance application; PTZ Control is the actuator.
pub fn surveillance_app() -> ApplicationSpec {
    use Direction::*;
    let ev = EdgeKind::EventBased;
    ApplicationSpec {
        name: "intelligent-surveillance".into(),
        modules: vec![
            module("Motion Detector", &[("RAW_VIDEO_STREAM", "MOTION_VIDEO_STREAM", 1.0)]),
            module(
                "Object Detector",
                &[
                    ("MOTION_VIDEO_STREAM", "OBJECT_LOCATION", 1.0),
                    ("MOTION_VIDEO_STREAM", "DETECTED_OBJECT", DETECTED_OBJECT_SELECTIVITY),
                ],
            ),
            module("Object Tracker", &[("OBJECT_LOCATION", "PTZ_PARAMS", 1.0)]),
            module("User Interface", &[]),
        ],
        sensors: vec!["CAMERA".into()],
        actuators: vec!["PTZ_CONTROL".into()],
        edges: vec![
            edge(
                "CAMERA",
                "Motion Detector",
                "RAW_VIDEO_STREAM",
                RAW_VIDEO_STREAM,
                ev,
                Up,
            ),
            edge(
                "Motion Detector",
                "Object Detector",
                "MOTION_VIDEO_STREAM",
                MOTION_VIDEO_STREAM,
                ev,
                Up,
            ),
            edge(
                "Object Detector",
                "User Interface",
                "DETECTED_OBJECT",
                DETECTED_OBJECT,
                ev,
                Up,
            ),
            edge(
                "Object Detector",
                "Object Tracker",
                "OBJECT_LOCATION",
                OBJECT_LOCATION,
                ev,
                Up,
            ),
            edge("Object Tracker", "PTZ_CONTROL", "PTZ_PARAMS", PTZ_PARAMS, ev, Down),
        ],
        loops: vec![LoopSpec {
            name: SURVEILLANCE_LOOP.into(),
            elements: [
                "CAMERA",
                "Motion Detector",
                "Object Detector",
                "Object Tracker",
                "PTZ_CONTROL",
            ]
            .map(String::from)
            .to_vec(),
        }],
        pins: [
            ("Motion Detector".to_string(), Pin::Class("camera".into())),
            ("User Interface".to_string(), Pin::Class("cloud".into())),
        ]
        .into(),
    }
}

/// Places `scenario` with the named policy and checks the result.
pub fn place(scenario: &Scenario, policy: &str) -> Result<PlacementMap, ScenarioError> {
    let registry = PolicyRegistry::default();
    let policy = registry.get(policy)?;
    let demands = Demands::from_rates(&scenario.app, &scenario.topology);
    let map = policy.place(&scenario.app, &scenario.topology, &scenario.constraints, &demands)?;
    let violations = validate_placement(&map, &scenario.app, &scenario.topology, &scenario.constraints);
    if !violations.is_empty() {
        return Err(ScenarioError::InvalidPlacement {
            policy: policy.name().to_string(),
            violations,
        });
    }
    Ok(map)
}

/// Places and simulates a built scenario.
pub fn simulate(scenario: &Scenario, policy: &str, config: SimConfig) -> Result<MetricsReport, ScenarioError> {
    let map = place(scenario, policy)?;
    let mut sim = Simulation::new(&scenario.topology, &scenario.app, &map, config)?;
    sim.run()?;
    Ok(sim.report(&scenario.name))
}

/// Builds, places, simulates and reports one scenario.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<MetricsReport, ScenarioError> {
    let duration = SimTime::from_ms_f64(spec.duration_ms)
        .filter(|d| *d > SimTime::ZERO)
        .ok_or(ScenarioError::InvalidDuration(spec.duration_ms))?;
    let scenario = spec.build()?;
    simulate(&scenario, &spec.placement, SimConfig::new(spec.seed, duration))
}
