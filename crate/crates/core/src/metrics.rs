//! Loop latency, network usage and energy accounting, and the run report.

use std::collections::{BTreeMap, HashMap};
use std::hash::{BuildHasherDefault, Hasher};

use serde::{Deserialize, Serialize};

use crate::kernel::SimTime;
use crate::placement::Instance;

const TICKS_PER_SECOND: f64 = 1e9;

/// Lineages are dense sequential integers, so a multiplicative hash spreads
/// them well and is much cheaper than SipHash.
#[derive(Debug, Clone, Copy, Default)]
struct LineageHasher(u64);

impl Hasher for LineageHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0.rotate_left(8) ^ b as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        }
    }

    fn write_u64(&mut self, n: u64) {
        self.0 = (self.0 ^ n).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    }
}

/// Outcome of closing a loop instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LoopEnd {
    Recorded(SimTime),
    /// The lineage already completed this loop.
    Duplicate,
    /// No origin was ever recorded for the lineage.
    Orphan,
}

/// Open and completed instances of one application loop.
#[derive(Debug, Clone, Default)]
pub struct LoopTracker {
    name: String,
    open: HashMap<u64, SimTime, BuildHasherDefault<LineageHasher>>,
    closed: Vec<u64>,
    completed: u64,
    total_ticks: u128,
    min: Option<SimTime>,
    max: Option<SimTime>,
    duplicates: u64,
    orphans: u64,
}

impl LoopTracker {
    pub fn new(name: impl Into<String>) -> Self {
        LoopTracker {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Records the start of a loop instance. A second origin for an open
    /// lineage keeps the earlier time.
    pub fn on_loop_origin(&mut self, lineage: u64, t: SimTime) {
        if !self.is_closed(lineage) {
            self.open.entry(lineage).or_insert(t);
        }
    }

    pub fn on_loop_end(&mut self, lineage: u64, t: SimTime) -> LoopEnd {
        match self.open.remove(&lineage) {
            Some(start) => {
                let delay = t.saturating_sub(start);
                self.mark_closed(lineage);
                self.completed += 1;
                self.total_ticks += delay.ticks() as u128;
                self.min = Some(self.min.map_or(delay, |m| m.min(delay)));
                self.max = Some(self.max.map_or(delay, |m| m.max(delay)));
                LoopEnd::Recorded(delay)
            }
            None if self.is_closed(lineage) => {
                self.duplicates += 1;
                LoopEnd::Duplicate
            }
            None => {
                self.orphans += 1;
                LoopEnd::Orphan
            }
        }
    }

    fn is_closed(&self, lineage: u64) -> bool {
        let (w, b) = ((lineage / 64) as usize, lineage % 64);
        self.closed.get(w).is_some_and(|word| word & (1 << b) != 0)
    }

    fn mark_closed(&mut self, lineage: u64) {
        let (w, b) = ((lineage / 64) as usize, lineage % 64);
        if self.closed.len() <= w {
            self.closed.resize(w + 1, 0);
        }
        self.closed[w] |= 1 << b;
    }

    pub fn completed(&self) -> u64 {
        self.completed
    }

    pub fn open_count(&self) -> usize {
        self.open.len()
    }

    pub fn duplicates(&self) -> u64 {
        self.duplicates
    }

    pub fn orphans(&self) -> u64 {
        self.orphans
    }

    /// Mean delay in ms; exact over integer ticks, so independent of the
    /// order in which instances completed.
    pub fn average_ms(&self) -> Option<f64> {
        (self.completed > 0).then(|| (self.total_ticks as f64 / self.completed as f64) * SimTime::quantum_ms())
    }

    pub fn report(&self) -> LoopReport {
        LoopReport {
            name: self.name.clone(),
            completed: self.completed,
            average_delay_ms: self.average_ms(),
            min_delay_ms: self.min.map(SimTime::as_ms),
            max_delay_ms: self.max.map(SimTime::as_ms),
            open_at_horizon: self.open.len() as u64,
            duplicates: self.duplicates,
            orphans: self.orphans,
        }
    }
}

/// Linear power model integrated over piecewise-constant utilization.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyAccount {
    idle_w: f64,
    busy_w: f64,
    started: SimTime,
    last_update: SimTime,
    utilization: f64,
    // Sum of utilization x ticks; the idle floor is added on read.
    weighted_ticks: f64,
}

impl EnergyAccount {
    pub fn new(idle_w: f64, busy_w: f64, start: SimTime) -> Self {
        EnergyAccount {
            idle_w,
            busy_w,
            started: start,
            last_update: start,
            utilization: 0.0,
            weighted_ticks: 0.0,
        }
    }

    /// Charges the interval since the last update at the previous
    /// utilization, then switches to `utilization` (clamped to [0, 1]).
    pub fn update(&mut self, now: SimTime, utilization: f64) {
        debug_assert!(now >= self.last_update);
        let dt = now.saturating_sub(self.last_update).ticks();
        if self.utilization > 0.0 {
            self.weighted_ticks += self.utilization * dt as f64;
        }
        self.last_update = self.last_update.max(now);
        self.utilization = utilization.clamp(0.0, 1.0);
    }

    pub fn utilization(&self) -> f64 {
        self.utilization
    }

    pub fn last_update(&self) -> SimTime {
        self.last_update
    }

    fn elapsed_ticks(&self) -> f64 {
        (self.last_update - self.started).ticks() as f64
    }

    /// Energy charged up to the last update, in joules.
    pub fn joules(&self) -> f64 {
        (self.idle_w * self.elapsed_ticks() + (self.busy_w - self.idle_w) * self.weighted_ticks) / TICKS_PER_SECOND
    }

    pub fn idle_floor(&self) -> f64 {
        self.idle_w * self.elapsed_ticks() / TICKS_PER_SECOND
    }

    pub fn busy_ceiling(&self) -> f64 {
        self.busy_w * self.elapsed_ticks() / TICKS_PER_SECOND
    }

    pub fn mean_utilization(&self) -> f64 {
        let t = self.elapsed_ticks();
        if t > 0.0 {
            self.weighted_ticks / t
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransferRecord {
    pub link: LinkId,
    pub nw_bytes: u64,
    pub latency: SimTime,
}

/// Network usage as the sum of bytes x link latency, plus raw byte counters.
#[derive(Debug, Clone, Default)]
pub struct NetworkUsageAccount {
    links: Vec<String>,
    bytes: Vec<u64>,
    transfers: Vec<u64>,
    byte_ticks: u128,
    log: Option<Vec<TransferRecord>>,
}

impl NetworkUsageAccount {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keeps every transfer for later replay.
    pub fn with_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn add_link(&mut self, name: impl Into<String>) -> LinkId {
        self.links.push(name.into());
        self.bytes.push(0);
        self.transfers.push(0);
        LinkId(self.links.len() - 1)
    }

    pub fn link_name(&self, id: LinkId) -> &str {
        &self.links[id.0]
    }

    pub fn record_transfer(&mut self, link: LinkId, nw_bytes: u64, latency: SimTime) {
        self.byte_ticks += nw_bytes as u128 * latency.ticks() as u128;
        self.bytes[link.0] += nw_bytes;
        self.transfers[link.0] += 1;
        if let Some(log) = &mut self.log {
            log.push(TransferRecord {
                link,
                nw_bytes,
                latency,
            });
        }
    }

    /// Exact usage in byte x tick units.
    pub fn byte_ticks(&self) -> u128 {
        self.byte_ticks
    }

    pub fn usage_byte_ms(&self) -> f64 {
        self.byte_ticks as f64 * SimTime::quantum_ms()
    }

    pub fn link_bytes(&self, id: LinkId) -> u64 {
        self.bytes[id.0]
    }

    pub fn total_bytes(&self) -> u64 {
        self.bytes.iter().sum()
    }

    pub fn log(&self) -> Option<&[TransferRecord]> {
        self.log.as_deref()
    }

    pub fn link_reports(&self) -> Vec<LinkReport> {
        let mut v: Vec<LinkReport> = self
            .links
            .iter()
            .enumerate()
            .filter(|&(i, _)| self.transfers[i] > 0)
            .map(|(i, name)| LinkReport {
                link: name.clone(),
                bytes: self.bytes[i],
                transfers: self.transfers[i],
            })
            .collect();
        v.sort_by(|a, b| a.link.cmp(&b.link));
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopReport {
    pub name: String,
    pub completed: u64,
    pub average_delay_ms: Option<f64>,
    pub min_delay_ms: Option<f64>,
    pub max_delay_ms: Option<f64>,
    pub open_at_horizon: u64,
    pub duplicates: u64,
    pub orphans: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkReport {
    pub link: String,
    pub bytes: u64,
    pub transfers: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkReport {
    /// Sum over transfers of bytes x link latency (byte*ms).
    pub usage_byte_ms: f64,
    /// `usage_byte_ms` divided by simulated seconds.
    pub usage_byte_ms_per_s: f64,
    pub total_bytes: u64,
    pub links: Vec<LinkReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceEnergy {
    pub device: String,
    pub class: String,
    pub joules: f64,
    pub idle_floor_j: f64,
    pub busy_ceiling_j: f64,
    pub mean_utilization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub total_j: f64,
    pub classes: BTreeMap<String, f64>,
    pub devices: Vec<DeviceEnergy>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TupleCounts {
    /// Sensor tuples that reached their gateway (a sensor emission is
    /// handled on arrival, so the last link latency before the horizon is
    /// not counted here nor in flight).
    pub sensor_emissions: u64,
    pub periodic_emissions: u64,
    pub module_emissions: u64,
    pub executed: u64,
    pub actuator_deliveries: u64,
    pub undeliverable: u64,
    /// Extra copies created when a down tuple is replicated.
    pub fanout_copies: u64,
    pub in_flight_at_horizon: u64,
    pub executing_at_horizon: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EnergyTiers {
    pub cloud_j: f64,
    pub gateways_j: f64,
    pub edge_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub placement_policy: String,
    pub seed: u64,
    pub duration_ms: f64,
    pub loops: Vec<LoopReport>,
    pub network: NetworkReport,
    pub energy: EnergyReport,
    pub tuples: TupleCounts,
    pub events_processed: u64,
    pub peak_event_queue: u64,
    pub peak_active_executions: u64,
    pub peak_memory_estimate_bytes: u64,
    pub placement: Vec<Instance>,
}

impl MetricsReport {
    /// Average delay of the first loop, the headline latency figure.
    pub fn primary_loop_delay_ms(&self) -> Option<f64> {
        self.loops.first().and_then(|l| l.average_delay_ms)
    }

    pub fn class_energy(&self, class: &str) -> f64 {
        self.energy.classes.get(class).copied().unwrap_or(0.0)
    }

    /// Energy split into cloud, gateway classes (`*_gateway`) and the rest.
    pub fn energy_tiers(&self) -> EnergyTiers {
        let mut t = EnergyTiers::default();
        for (class, j) in &self.energy.classes {
            if class == "cloud" {
                t.cloud_j += j;
            } else if class.ends_with("_gateway") {
                t.gateways_j += j;
            } else {
                t.edge_j += j;
            }
        }
        t
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// One `metric,scope,value` row per figure, in a fixed order.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "scope", "value"]).unwrap();
        let mut row = |metric: &str, scope: &str, value: String| {
            w.write_record([metric, scope, value.as_str()]).unwrap();
        };
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        row("duration_ms", "run", self.duration_ms.to_string());
        for l in &self.loops {
            row("loop_average_delay_ms", &l.name, opt(l.average_delay_ms));
            row("loop_completed", &l.name, l.completed.to_string());
        }
        row("network_usage_byte_ms", "total", self.network.usage_byte_ms.to_string());
        row(
            "network_usage_byte_ms_per_s",
            "total",
            self.network.usage_byte_ms_per_s.to_string(),
        );
        row("network_bytes", "total", self.network.total_bytes.to_string());
        for l in &self.network.links {
            row("link_bytes", &l.link, l.bytes.to_string());
        }
        row("energy_j", "total", self.energy.total_j.to_string());
        for (c, j) in &self.energy.classes {
            row("energy_class_j", c, j.to_string());
        }
        for d in &self.energy.devices {
            row("energy_device_j", &d.device, d.joules.to_string());
        }
        let t = &self.tuples;
        for (k, v) in [
            ("sensor_emissions", t.sensor_emissions),
            ("periodic_emissions", t.periodic_emissions),
            ("module_emissions", t.module_emissions),
            ("executed", t.executed),
            ("actuator_deliveries", t.actuator_deliveries),
            ("undeliverable", t.undeliverable),
            ("fanout_copies", t.fanout_copies),
            ("in_flight_at_horizon", t.in_flight_at_horizon),
            ("executing_at_horizon", t.executing_at_horizon),
        ] {
            row("tuples", k, v.to_string());
        }
        row("events_processed", "run", self.events_processed.to_string());
        row(
            "peak_memory_estimate_bytes",
            "run",
            self.peak_memory_estimate_bytes.to_string(),
        );
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}
