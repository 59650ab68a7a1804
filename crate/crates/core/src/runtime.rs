//! Tuple lifecycle on a placed system: sensor emission, routing along the
//! tree, processor-shared execution, completion and actuator delivery.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::application::{Application, Direction, EdgeId, EdgeKind, Endpoint, ModuleId};
use crate::kernel::{EntityId, Event, Kernel, KernelError, RunError, RunStats, SimTime};
use crate::metrics::{
    DeviceEnergy, EnergyAccount, EnergyReport, LinkId, LoopEnd, LoopTracker, MetricsReport, NetworkReport,
    NetworkUsageAccount, TupleCounts,
};
use crate::placement::PlacementMap;
use crate::topology::{DeviceId, Distribution, Topology};

/// Loops are tracked in a per-tuple bitmask.
pub const MAX_LOOPS: usize = 64;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("placement references unknown module `{0}`")]
    UnknownModule(String),
    #[error("placement references unknown device `{0}`")]
    UnknownDevice(String),
    #[error("application defines {0} loops; at most {MAX_LOOPS} are supported")]
    TooManyLoops(usize),
    #[error("unknown tuple type `{0}`")]
    UnknownTupleType(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

impl From<RunError<SimError>> for SimError {
    fn from(e: RunError<SimError>) -> Self {
        match e {
            RunError::Kernel(k) => SimError::Kernel(k),
            RunError::Dispatch(d) => d.source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub duration: SimTime,
    /// Keep every network transfer for replay.
    #[serde(default)]
    pub record_transfers: bool,
    /// Keep every module completion.
    #[serde(default)]
    pub record_completions: bool,
}

impl SimConfig {
    pub fn new(seed: u64, duration: SimTime) -> Self {
        SimConfig {
            seed,
            duration,
            record_transfers: false,
            record_completions: false,
        }
    }
}

/// Unit of work and communication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tuple {
    pub edge: EdgeId,
    pub cpu_mi: f64,
    pub nw_bytes: u64,
    /// Shared by every tuple derived from one sensor emission or periodic tick.
    pub lineage: u64,
    /// Gateway of the sensor that started the lineage, if any.
    pub origin: Option<DeviceId>,
    /// Bit `i` set once loop `i` has been opened for this lineage.
    pub loops: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    SensorEmit {
        sensor: usize,
    },
    Arrival {
        device: DeviceId,
        tuple: Tuple,
    },
    ActuatorArrival {
        actuator: usize,
        tuple: Tuple,
    },
    Completion {
        device: DeviceId,
        epoch: u64,
    },
    PeriodicTick {
        device: DeviceId,
        edge: EdgeId,
        period: SimTime,
    },
}

#[derive(Debug)]
struct PsEntry<J> {
    finish: f64,
    seq: u64,
    job: J,
}

impl<J> PartialEq for PsEntry<J> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<J> Eq for PsEntry<J> {}

impl<J> PartialOrd for PsEntry<J> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<J> Ord for PsEntry<J> {
    // Min-heap on (finish, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .finish
            .total_cmp(&self.finish)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Processor sharing: capacity split equally over active executions.
///
/// Work is tracked in virtual time, the MI each active execution has received
/// since the device was created, so an arrival or completion costs
/// O(log n) instead of touching every execution.
#[derive(Debug)]
pub struct ProcessorSharing<J> {
    mips: f64,
    vtime: f64,
    last: SimTime,
    jobs: BinaryHeap<PsEntry<J>>,
    seq: u64,
}

impl<J> ProcessorSharing<J> {
    pub fn new(mips: f64) -> Self {
        ProcessorSharing {
            mips,
            vtime: 0.0,
            last: SimTime::ZERO,
            jobs: BinaryHeap::new(),
            seq: 0,
        }
    }

    pub fn active(&self) -> usize {
        self.jobs.len()
    }

    /// MIPS currently allocated to each active execution.
    pub fn allocated_mips(&self) -> f64 {
        if self.jobs.is_empty() {
            0.0
        } else {
            self.mips / self.jobs.len() as f64
        }
    }

    fn advance(&mut self, now: SimTime) {
        debug_assert!(now >= self.last);
        if !self.jobs.is_empty() {
            self.vtime += (now - self.last).as_ms() * self.allocated_mips();
        }
        self.last = now;
    }

    /// Starts an execution of `mi` instructions at `now`.
    pub fn submit(&mut self, now: SimTime, mi: f64, job: J) {
        self.advance(now);
        self.seq += 1;
        self.jobs.push(PsEntry {
            finish: self.vtime + mi.max(0.0),
            seq: self.seq,
            job,
        });
    }

    /// When the next execution finishes if nothing else arrives, rounded up
    /// to the clock quantum.
    pub fn next_completion(&self) -> Option<SimTime> {
        let top = self.jobs.peek()?;
        let ms = (top.finish - self.vtime).max(0.0) * self.jobs.len() as f64 / self.mips;
        Some(self.last + SimTime::from_ms_f64_ceil(ms).unwrap_or(SimTime::ZERO))
    }

    /// Retires the execution that finishes first. Call at the time returned
    /// by [`ProcessorSharing::next_completion`].
    pub fn complete(&mut self, now: SimTime) -> Option<J> {
        self.advance(now);
        let top = self.jobs.pop()?;
        // The completion instant was rounded up; absorb the overshoot.
        self.vtime = self.vtime.max(top.finish);
        Some(top.job)
    }

    /// Instructions still owed to each active execution.
    pub fn remaining(&self, now: SimTime) -> Vec<(&J, f64)> {
        let v = if self.jobs.is_empty() {
            self.vtime
        } else {
            self.vtime + now.saturating_sub(self.last).as_ms() * self.allocated_mips()
        };
        let mut out: Vec<_> = self
            .jobs
            .iter()
            .map(|e| (e.seq, &e.job, (e.finish - v).max(0.0)))
            .collect();
        out.sort_by_key(|e| e.0);
        out.into_iter().map(|(_, j, r)| (j, r)).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Job {
    module: ModuleId,
    tuple: Tuple,
}

/// Per-device runtime state.
#[derive(Debug)]
pub struct DeviceRuntimeState {
    ps: ProcessorSharing<Job>,
    epoch: u64,
    energy: EnergyAccount,
    up_busy_until: SimTime,
    down_busy_until: SimTime,
}

impl DeviceRuntimeState {
    pub fn active_executions(&self) -> usize {
        self.ps.active()
    }

    pub fn allocated_mips(&self) -> f64 {
        self.ps.allocated_mips()
    }

    pub fn energy(&self) -> &EnergyAccount {
        &self.energy
    }
}

/// A finished module execution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRecord {
    pub at: SimTime,
    pub device: String,
    pub module: String,
    pub tuple_type: String,
    pub lineage: u64,
}

struct State<'a> {
    topo: &'a Topology,
    app: &'a Application,
    config: SimConfig,
    rng: ChaCha8Rng,
    n_modules: usize,
    n_act_types: usize,
    hosted: Vec<bool>,
    subtree_module: Vec<bool>,
    subtree_actuator: Vec<bool>,
    /// Actuators grouped by gateway and type; `attached_at[device * n_act_types + type]`
    /// is the range of `attached` holding that group.
    attached: Vec<usize>,
    attached_at: Vec<Range<usize>>,
    sensor_edges: Vec<Vec<EdgeId>>,
    devices: Vec<DeviceRuntimeState>,
    uplink: Vec<LinkId>,
    downlink: Vec<LinkId>,
    sensor_link: Vec<LinkId>,
    actuator_link: Vec<LinkId>,
    /// Link latencies, rounded to the clock once.
    link_latency: Vec<SimTime>,
    sensor_latency: Vec<SimTime>,
    actuator_latency: Vec<SimTime>,
    network: NetworkUsageAccount,
    trackers: Vec<LoopTracker>,
    opens: Vec<u64>,
    closes_at_module: Vec<u64>,
    closes_at_actuator: Vec<u64>,
    counts: TupleCounts,
    next_lineage: u64,
    active_total: u64,
    peak_active: u64,
    peak_open_loops: u64,
    completions: Option<Vec<CompletionRecord>>,
    /// End of the current `run_until`; actuator deliveries due by then
    /// are recorded without an event.
    horizon: SimTime,
    scratch: Vec<EdgeId>,
    branch_buf: Vec<DeviceId>,
    device_entity: Vec<EntityId>,
    sensor_entity: Vec<EntityId>,
    actuator_entity: Vec<EntityId>,
}

/// A placed application on a topology, ready to run.
pub struct Simulation<'a> {
    kernel: Kernel<Payload>,
    state: State<'a>,
    placement: PlacementMap,
}

impl<'a> Simulation<'a> {
    pub fn new(
        topo: &'a Topology,
        app: &'a Application,
        placement: &PlacementMap,
        config: SimConfig,
    ) -> Result<Self, SimError> {
        if app.loops().len() > MAX_LOOPS {
            return Err(SimError::TooManyLoops(app.loops().len()));
        }
        let nd = topo.len();
        let nm = app.module_count();
        let na = app.spec().actuators.len();
        let mut kernel = Kernel::new();

        let mut hosted = vec![false; nd * nm];
        for inst in &placement.instances {
            let m = app
                .module_id(&inst.module)
                .ok_or_else(|| SimError::UnknownModule(inst.module.clone()))?;
            let d = topo
                .id(&inst.device)
                .ok_or_else(|| SimError::UnknownDevice(inst.device.clone()))?;
            hosted[d.0 * nm + m.0] = true;
        }
        let mut subtree_module = vec![false; nd * nm];
        for d in topo.device_ids() {
            for m in 0..nm {
                if hosted[d.0 * nm + m] {
                    for p in topo.path_ids(d) {
                        subtree_module[p.0 * nm + m] = true;
                    }
                }
            }
        }

        let actuator_type: Vec<Option<usize>> = topo
            .actuators()
            .iter()
            .map(|a| app.actuator_type_index(&a.actuator_type))
            .collect();
        let mut groups = vec![Vec::new(); nd * na];
        let mut subtree_actuator = vec![false; nd * na];
        for (i, t) in actuator_type.iter().enumerate() {
            let g = topo.actuator_gateway(i);
            if let Some(t) = t {
                groups[g.0 * na + t].push(i);
                for p in topo.path_ids(g) {
                    subtree_actuator[p.0 * na + t] = true;
                }
            }
        }

        let mut attached = Vec::with_capacity(actuator_type.len());
        let attached_at = groups
            .into_iter()
            .map(|g| {
                let start = attached.len();
                attached.extend(g);
                start..attached.len()
            })
            .collect();

        let sensor_edges = topo
            .sensors()
            .iter()
            .map(|s| match app.sensor_type_index(&s.tuple_type) {
                Some(t) => app.sensor_edges(t).to_vec(),
                None => {
                    log::warn!(
                        "sensor `{}` emits `{}`, which the application ignores",
                        s.name,
                        s.tuple_type
                    );
                    Vec::new()
                }
            })
            .collect::<Vec<_>>();

        let mut network = NetworkUsageAccount::new();
        if config.record_transfers {
            network = network.with_log();
        }
        let mut uplink = Vec::with_capacity(nd);
        let mut downlink = Vec::with_capacity(nd);
        let mut devices = Vec::with_capacity(nd);
        let mut device_entity = Vec::with_capacity(nd);
        for d in topo.device_ids() {
            let dev = topo.device(d);
            let parent = topo.parent(d).map(|p| topo.device(p).name.as_str()).unwrap_or("-");
            uplink.push(network.add_link(format!("{}->{}", dev.name, parent)));
            downlink.push(network.add_link(format!("{}->{}", parent, dev.name)));
            devices.push(DeviceRuntimeState {
                ps: ProcessorSharing::new(dev.mips),
                epoch: 0,
                energy: EnergyAccount::new(dev.idle_power, dev.busy_power, SimTime::ZERO),
                up_busy_until: SimTime::ZERO,
                down_busy_until: SimTime::ZERO,
            });
            device_entity.push(kernel.register(dev.name.clone()));
        }
        let sensor_link = topo
            .sensors()
            .iter()
            .map(|s| network.add_link(format!("{}->{}", s.name, s.gateway)))
            .collect();
        let actuator_link = topo
            .actuators()
            .iter()
            .map(|a| network.add_link(format!("{}->{}", a.gateway, a.name)))
            .collect();
        let sensor_entity = topo.sensors().iter().map(|s| kernel.register(s.name.clone())).collect();
        let actuator_entity = topo
            .actuators()
            .iter()
            .map(|a| kernel.register(a.name.clone()))
            .collect();

        let ne = app.edge_count();
        let (mut opens, mut closes_at_module, mut closes_at_actuator) =
            (vec![0u64; ne], vec![0u64; ne], vec![0u64; ne]);
        for (i, l) in app.loops().iter().enumerate() {
            for e in &l.first_edges {
                opens[e.0] |= 1 << i;
            }
            let last = *l.elements.last().expect("validated loop");
            for e in &l.last_edges {
                match last {
                    Endpoint::Actuator(_) => closes_at_actuator[e.0] |= 1 << i,
                    _ => closes_at_module[e.0] |= 1 << i,
                }
            }
        }

        let state = State {
            topo,
            app,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            completions: config.record_completions.then(Vec::new),
            horizon: SimTime::ZERO,
            config,
            n_modules: nm,
            n_act_types: na,
            hosted,
            subtree_module,
            subtree_actuator,
            attached,
            attached_at,
            sensor_edges,
            devices,
            uplink,
            downlink,
            sensor_link,
            actuator_link,
            link_latency: topo
                .device_ids()
                .map(|d| ms_round(topo.device(d).uplink_latency_ms))
                .collect(),
            sensor_latency: topo.sensors().iter().map(|s| ms_round(s.gateway_latency_ms)).collect(),
            actuator_latency: topo
                .actuators()
                .iter()
                .map(|a| ms_round(a.gateway_latency_ms))
                .collect(),
            network,
            trackers: app.loops().iter().map(|l| LoopTracker::new(&l.name)).collect(),
            opens,
            closes_at_module,
            closes_at_actuator,
            counts: TupleCounts::default(),
            next_lineage: 0,
            active_total: 0,
            peak_active: 0,
            peak_open_loops: 0,
            scratch: Vec::new(),
            branch_buf: Vec::new(),
            device_entity,
            sensor_entity,
            actuator_entity,
        };
        let mut sim = Simulation {
            kernel,
            state,
            placement: placement.clone(),
        };
        sim.schedule_sources()?;
        Ok(sim)
    }

    fn schedule_sources(&mut self) -> Result<(), SimError> {
        let st = &mut self.state;
        for (i, s) in st.topo.sensors().iter().enumerate() {
            if st.sensor_edges[i].is_empty() {
                continue;
            }
            let delay = st.sample_interval(&s.distribution) + st.sensor_latency[i];
            self.kernel
                .schedule(delay, st.sensor_entity[i], Payload::SensorEmit { sensor: i })?;
        }
        for inst in &self.placement.instances {
            let m = st.app.module_id(&inst.module).expect("checked");
            let d = st.topo.id(&inst.device).expect("checked");
            for &e in st.app.periodic_edges(m) {
                if let EdgeKind::Periodic { period_ms } = st.app.edge(e).kind {
                    let period = SimTime::from_ms_f64(period_ms).ok_or(KernelError::InvalidDelay(period_ms))?;
                    self.kernel.schedule(
                        period,
                        st.device_entity[d.0],
                        Payload::PeriodicTick {
                            device: d,
                            edge: e,
                            period,
                        },
                    )?;
                }
            }
        }
        Ok(())
    }

    /// Delivers a tuple of the given type to `device` at time `at`, as if it
    /// had arrived over a link. Lets tests drive executions directly.
    pub fn inject(&mut self, at: SimTime, device: &str, tuple_type: &str) -> Result<(), SimError> {
        let d = self
            .state
            .topo
            .id(device)
            .ok_or_else(|| SimError::UnknownDevice(device.to_string()))?;
        let edge = self
            .state
            .app
            .edge_id(tuple_type)
            .ok_or_else(|| SimError::UnknownTupleType(tuple_type.to_string()))?;
        let e = self.state.app.edge(edge);
        let tuple = Tuple {
            edge,
            cpu_mi: e.cpu_mi,
            nw_bytes: e.nw_bytes,
            lineage: self.state.fresh_lineage(),
            origin: None,
            loops: 0,
        };
        self.kernel
            .schedule_at(at, self.state.device_entity[d.0], Payload::Arrival { device: d, tuple })?;
        Ok(())
    }

    /// Runs to the configured duration.
    pub fn run(&mut self) -> Result<RunStats, SimError> {
        let t = self.state.config.duration;
        self.run_until(t)
    }

    pub fn run_until(&mut self, t_end: SimTime) -> Result<RunStats, SimError> {
        let state = &mut self.state;
        state.horizon = t_end;
        Ok(self.kernel.run_until(t_end, |k, ev| state.dispatch(k, ev))?)
    }

    pub fn now(&self) -> SimTime {
        self.kernel.now()
    }

    pub fn kernel(&self) -> &Kernel<Payload> {
        &self.kernel
    }

    pub fn placement(&self) -> &PlacementMap {
        &self.placement
    }

    pub fn network(&self) -> &NetworkUsageAccount {
        &self.state.network
    }

    pub fn loops(&self) -> &[LoopTracker] {
        &self.state.trackers
    }

    pub fn device_state(&self, device: &str) -> Option<&DeviceRuntimeState> {
        self.state.topo.id(device).map(|d| &self.state.devices[d.0])
    }

    pub fn completions(&self) -> Option<&[CompletionRecord]> {
        self.state.completions.as_deref()
    }

    pub fn counts(&self) -> TupleCounts {
        let mut c = self.state.counts.clone();
        let (mut in_flight, mut executing) = (0, 0);
        for ev in self.kernel.queue().pending() {
            if matches!(ev.payload, Payload::Arrival { .. } | Payload::ActuatorArrival { .. }) {
                in_flight += 1;
            }
        }
        for d in &self.state.devices {
            executing += d.ps.active() as u64;
        }
        c.in_flight_at_horizon = in_flight;
        c.executing_at_horizon = executing;
        c
    }

    fn peak_memory_estimate(&self) -> u64 {
        let st = &self.state;
        let event = std::mem::size_of::<Event<Payload>>() as u64;
        let job = std::mem::size_of::<PsEntry<Job>>() as u64;
        let devices = (std::mem::size_of::<DeviceRuntimeState>() * st.devices.len()) as u64;
        let flags = ((st.hosted.len() * 2 + st.subtree_actuator.len()) as u64) + st.opens.len() as u64 * 24;
        // Open-loop map entries and the closed-lineage bitsets.
        let loops = st.peak_open_loops * 32 + st.trackers.len() as u64 * (st.next_lineage / 8 + 8);
        self.kernel.queue().peak_len() as u64 * event + st.peak_active * job + devices + flags + loops
    }

    /// Flushes energy to the current clock and assembles the run report.
    pub fn report(&self, scenario: &str) -> MetricsReport {
        finalize_report(self, scenario)
    }
}

/// Report for a finished (or paused) simulation.
pub fn finalize_report(sim: &Simulation<'_>, scenario: &str) -> MetricsReport {
    let st = &sim.state;
    let now = sim.kernel.now();
    let secs = now.as_ms() / 1000.0;
    let usage = st.network.usage_byte_ms();
    let mut devices = Vec::with_capacity(st.devices.len());
    let mut classes = std::collections::BTreeMap::new();
    let mut total = 0.0;
    for d in st.topo.device_ids() {
        let mut acc = st.devices[d.0].energy.clone();
        let u = acc.utilization();
        acc.update(now, u);
        let j = acc.joules();
        let class = st.topo.class(d).to_string();
        *classes.entry(class.clone()).or_insert(0.0) += j;
        total += j;
        devices.push(DeviceEnergy {
            device: st.topo.device(d).name.clone(),
            class,
            joules: j,
            idle_floor_j: acc.idle_floor(),
            busy_ceiling_j: acc.busy_ceiling(),
            mean_utilization: acc.mean_utilization(),
        });
    }
    devices.sort_by(|a, b| a.device.cmp(&b.device));
    MetricsReport {
        scenario: scenario.to_string(),
        placement_policy: sim.placement.policy.clone(),
        seed: st.config.seed,
        duration_ms: now.as_ms(),
        loops: st.trackers.iter().map(LoopTracker::report).collect(),
        network: NetworkReport {
            usage_byte_ms: usage,
            usage_byte_ms_per_s: if secs > 0.0 { usage / secs } else { 0.0 },
            total_bytes: st.network.total_bytes(),
            links: st.network.link_reports(),
        },
        energy: EnergyReport {
            total_j: total,
            classes,
            devices,
        },
        tuples: sim.counts(),
        events_processed: sim.kernel.events_processed(),
        peak_event_queue: sim.kernel.queue().peak_len() as u64,
        peak_active_executions: st.peak_active,
        peak_memory_estimate_bytes: sim.peak_memory_estimate(),
        placement: sim.placement.instances.clone(),
    }
}

fn ms_round(ms: f64) -> SimTime {
    SimTime::from_ms_f64(ms).unwrap_or(SimTime::ZERO)
}

impl State<'_> {
    fn fresh_lineage(&mut self) -> u64 {
        self.next_lineage += 1;
        self.next_lineage - 1
    }

    fn sample_interval(&mut self, dist: &Distribution) -> SimTime {
        match *dist {
            Distribution::Deterministic(ms) => ms_round(ms),
            Distribution::Exponential(mean) => {
                let x: f64 = Exp::new(1.0 / mean).expect("positive mean").sample(&mut self.rng);
                ms_round(x)
            }
        }
    }

    fn dispatch(&mut self, k: &mut Kernel<Payload>, ev: Event<Payload>) -> Result<(), SimError> {
        match ev.payload {
            Payload::SensorEmit { sensor } => self.emit_sensor_tuple(k, sensor),
            Payload::Arrival { device, tuple } => self.process_tuple_arrival(k, device, tuple),
            Payload::ActuatorArrival { actuator, tuple } => {
                self.deliver_to_actuator(k.now(), actuator, tuple);
                Ok(())
            }
            Payload::Completion { device, epoch } => {
                if self.devices[device.0].epoch == epoch {
                    self.check_completion(k, device)?;
                }
                Ok(())
            }
            Payload::PeriodicTick { device, edge, period } => {
                self.counts.periodic_emissions += 1;
                let lineage = self.fresh_lineage();
                let tuple = self.new_tuple(k.now(), edge, lineage, None, 0);
                self.route(k, device, tuple)?;
                k.schedule(
                    period,
                    self.device_entity[device.0],
                    Payload::PeriodicTick { device, edge, period },
                )?;
                Ok(())
            }
        }
    }

    /// Builds a tuple on `edge` and opens the loops that start with it.
    fn new_tuple(&mut self, now: SimTime, edge: EdgeId, lineage: u64, origin: Option<DeviceId>, loops: u64) -> Tuple {
        let e = self.app.edge(edge);
        let mut tuple = Tuple {
            edge,
            cpu_mi: e.cpu_mi,
            nw_bytes: e.nw_bytes,
            lineage,
            origin,
            loops,
        };
        let mut opening = self.opens[edge.0] & !loops;
        while opening != 0 {
            let i = opening.trailing_zeros() as usize;
            opening &= opening - 1;
            self.trackers[i].on_loop_origin(lineage, now);
            tuple.loops |= 1 << i;
            let open = self.trackers[i].open_count() as u64;
            self.peak_open_loops = self.peak_open_loops.max(open);
        }
        tuple
    }

    /// Fires when a sensor's tuples reach its gateway, one link latency
    /// after emission, and schedules the next emission's arrival.
    fn emit_sensor_tuple(&mut self, k: &mut Kernel<Payload>, sensor: usize) -> Result<(), SimError> {
        let now = k.now();
        let s = &self.topo.sensors()[sensor];
        let (cpu_mi, nw_bytes) = (s.tuple_cpu_mi, s.tuple_nw_bytes);
        let gateway = self.topo.sensor_gateway(sensor);
        let latency = self.sensor_latency[sensor];
        let emitted = now - latency;
        let lineage = self.fresh_lineage();
        let edges = std::mem::take(&mut self.sensor_edges[sensor]);
        for &e in &edges {
            self.counts.sensor_emissions += 1;
            let mut tuple = self.new_tuple(emitted, e, lineage, Some(gateway), 0);
            tuple.cpu_mi = cpu_mi;
            tuple.nw_bytes = nw_bytes;
            self.network
                .record_transfer(self.sensor_link[sensor], nw_bytes, latency);
            self.route(k, gateway, tuple)?;
        }
        self.sensor_edges[sensor] = edges;
        let next = {
            let dist = self.topo.sensors()[sensor].distribution;
            self.sample_interval(&dist)
        };
        k.schedule(next, self.sensor_entity[sensor], Payload::SensorEmit { sensor })?;
        Ok(())
    }

    fn process_tuple_arrival(
        &mut self,
        k: &mut Kernel<Payload>,
        device: DeviceId,
        tuple: Tuple,
    ) -> Result<(), SimError> {
        self.route(k, device, tuple)
    }

    fn hosts(&self, d: DeviceId, m: ModuleId) -> bool {
        self.hosted[d.0 * self.n_modules + m.0]
    }

    /// Executes locally, forwards, or fans out a tuple present at `device`.
    fn route(&mut self, k: &mut Kernel<Payload>, device: DeviceId, tuple: Tuple) -> Result<(), SimError> {
        match self.app.destination(tuple.edge) {
            Endpoint::Module(m) => {
                if self.hosts(device, m) {
                    self.submit(k, device, m, tuple);
                    return Ok(());
                }
                match self.app.edge(tuple.edge).direction {
                    Direction::Up => match self.topo.parent(device) {
                        Some(_) => self.send_up(k, device, tuple),
                        None => {
                            self.undeliverable(device, tuple);
                            Ok(())
                        }
                    },
                    Direction::Down => {
                        let nm = self.n_modules;
                        let mut branches = std::mem::take(&mut self.branch_buf);
                        self.branches(&mut branches, device, tuple.origin, |c| {
                            self.subtree_module[c.0 * nm + m.0]
                        });
                        let r = self.fan_out(k, device, tuple, 0..0, &branches);
                        self.branch_buf = branches;
                        r
                    }
                }
            }
            Endpoint::Actuator(t) => {
                let na = self.n_act_types;
                let here = self.attached_at[device.0 * na + t].clone();
                if tuple.origin == Some(device) && !here.is_empty() {
                    return self.fan_out(k, device, tuple, here, &[]);
                }
                let mut branches = std::mem::take(&mut self.branch_buf);
                self.branches(&mut branches, device, tuple.origin, |c| {
                    self.subtree_actuator[c.0 * na + t]
                });
                let r = if branches.len() == 1 && tuple.origin.is_some_and(|g| self.topo.in_subtree(branches[0], g)) {
                    self.fan_out(k, device, tuple, 0..0, &branches)
                } else {
                    self.fan_out(k, device, tuple, here, &branches)
                };
                self.branch_buf = branches;
                r
            }
            Endpoint::Sensor(_) => {
                self.undeliverable(device, tuple);
                Ok(())
            }
        }
    }

    /// Children of `device` whose subtree satisfies `has`, narrowed to the
    /// branch holding the lineage's origin when that branch qualifies.
    fn branches(
        &self,
        out: &mut Vec<DeviceId>,
        device: DeviceId,
        origin: Option<DeviceId>,
        has: impl Fn(DeviceId) -> bool,
    ) {
        out.clear();
        out.extend(self.topo.children(device).iter().copied().filter(|&c| has(c)));
        if let Some(g) = origin {
            if let Some(&c) = out.iter().find(|&&c| self.topo.in_subtree(c, g)) {
                out.clear();
                out.push(c);
            }
        }
    }

    fn fan_out(
        &mut self,
        k: &mut Kernel<Payload>,
        device: DeviceId,
        tuple: Tuple,
        actuators: Range<usize>,
        children: &[DeviceId],
    ) -> Result<(), SimError> {
        let n = actuators.len() + children.len();
        if n == 0 {
            self.undeliverable(device, tuple);
            return Ok(());
        }
        self.counts.fanout_copies += n as u64 - 1;
        for i in actuators {
            let a = self.attached[i];
            let latency = self.actuator_latency[a];
            self.network
                .record_transfer(self.actuator_link[a], tuple.nw_bytes, latency);
            // An actuator only records the arrival, so it needs no event
            // unless the arrival falls past the horizon.
            let at = k.now() + latency;
            if at <= self.horizon {
                self.deliver_to_actuator(at, a, tuple);
            } else {
                k.schedule_at(
                    at,
                    self.actuator_entity[a],
                    Payload::ActuatorArrival { actuator: a, tuple },
                )?;
            }
        }
        for &c in children {
            self.send_down(k, c, tuple)?;
        }
        Ok(())
    }

    fn undeliverable(&mut self, device: DeviceId, tuple: Tuple) {
        self.counts.undeliverable += 1;
        log::debug!(
            "undeliverable `{}` at `{}`",
            self.app.edge(tuple.edge).tuple_type,
            self.topo.device(device).name
        );
    }

    /// FIFO serialization then propagation: arrival at
    /// `max(now, busy_until) + bytes/bandwidth + latency`.
    fn transfer(now: SimTime, busy_until: &mut SimTime, nw_bytes: u64, bw: f64, latency: SimTime) -> SimTime {
        let start = now.max(*busy_until);
        let serialization = if nw_bytes == 0 {
            SimTime::ZERO
        } else {
            ms_round(nw_bytes as f64 / bw)
        };
        *busy_until = start + serialization;
        *busy_until + latency
    }

    fn send_up(&mut self, k: &mut Kernel<Payload>, child: DeviceId, tuple: Tuple) -> Result<(), SimError> {
        let parent = self.topo.parent(child).expect("caller checked");
        let dev = self.topo.device(child);
        let latency = self.link_latency[child.0];
        let at = Self::transfer(
            k.now(),
            &mut self.devices[child.0].up_busy_until,
            tuple.nw_bytes,
            dev.uplink_bw,
            latency,
        );
        self.network
            .record_transfer(self.uplink[child.0], tuple.nw_bytes, latency);
        k.schedule_at(
            at,
            self.device_entity[parent.0],
            Payload::Arrival { device: parent, tuple },
        )?;
        Ok(())
    }

    fn send_down(&mut self, k: &mut Kernel<Payload>, child: DeviceId, tuple: Tuple) -> Result<(), SimError> {
        let dev = self.topo.device(child);
        let latency = self.link_latency[child.0];
        let at = Self::transfer(
            k.now(),
            &mut self.devices[child.0].down_busy_until,
            tuple.nw_bytes,
            dev.downlink_bw,
            latency,
        );
        self.network
            .record_transfer(self.downlink[child.0], tuple.nw_bytes, latency);
        k.schedule_at(
            at,
            self.device_entity[child.0],
            Payload::Arrival { device: child, tuple },
        )?;
        Ok(())
    }

    fn submit(&mut self, k: &mut Kernel<Payload>, device: DeviceId, module: ModuleId, tuple: Tuple) {
        let now = k.now();
        let st = &mut self.devices[device.0];
        if st.ps.active() == 0 {
            st.energy.update(now, 1.0);
        }
        st.ps.submit(now, tuple.cpu_mi, Job { module, tuple });
        self.active_total += 1;
        self.peak_active = self.peak_active.max(self.active_total);
        self.update_allocated_mips(k, device);
    }

    /// Re-arms the device's single pending completion after its set of
    /// executions changed. Earlier completion events become stale.
    fn update_allocated_mips(&mut self, k: &mut Kernel<Payload>, device: DeviceId) {
        let st = &mut self.devices[device.0];
        st.epoch += 1;
        if let Some(at) = st.ps.next_completion() {
            let epoch = st.epoch;
            k.schedule_at(
                at.max(k.now()),
                self.device_entity[device.0],
                Payload::Completion { device, epoch },
            )
            .expect("completion is never in the past");
        }
    }

    fn check_completion(&mut self, k: &mut Kernel<Payload>, device: DeviceId) -> Result<(), SimError> {
        let now = k.now();
        let st = &mut self.devices[device.0];
        let Some(job) = st.ps.complete(now) else {
            return Ok(());
        };
        if st.ps.active() == 0 {
            st.energy.update(now, 0.0);
        }
        self.active_total -= 1;
        self.counts.executed += 1;
        self.update_allocated_mips(k, device);
        if let Some(log) = &mut self.completions {
            log.push(CompletionRecord {
                at: now,
                device: self.topo.device(device).name.clone(),
                module: self.app.module(job.module).name.clone(),
                tuple_type: self.app.edge(job.tuple.edge).tuple_type.clone(),
                lineage: job.tuple.lineage,
            });
        }

        let input = job.tuple;
        self.close_loops(now, input, self.closes_at_module[input.edge.0]);

        let mut outputs = std::mem::take(&mut self.scratch);
        outputs.clear();
        self.app.for_each_output(input.edge, &mut self.rng, |e| outputs.push(e));
        for &e in &outputs {
            self.counts.module_emissions += 1;
            let tuple = self.new_tuple(now, e, input.lineage, input.origin, input.loops);
            self.route(k, device, tuple)?;
        }
        self.scratch = outputs;
        Ok(())
    }

    fn close_loops(&mut self, now: SimTime, tuple: Tuple, candidates: u64) {
        let mut closing = candidates & tuple.loops;
        while closing != 0 {
            let i = closing.trailing_zeros() as usize;
            closing &= closing - 1;
            if let LoopEnd::Orphan = self.trackers[i].on_loop_end(tuple.lineage, now) {
                log::warn!("loop `{}` closed without origin", self.trackers[i].name());
            }
        }
    }

    fn deliver_to_actuator(&mut self, now: SimTime, _actuator: usize, tuple: Tuple) {
        self.counts.actuator_deliveries += 1;
        self.close_loops(now, tuple, self.closes_at_actuator[tuple.edge.0]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ms(v: f64) -> SimTime {
        SimTime::from_ms_f64(v).unwrap()
    }

    /// Runs a PS device to exhaustion, returning completion times in order.
    fn drain(ps: &mut ProcessorSharing<u32>, arrivals: &[(f64, f64, u32)]) -> Vec<(u32, SimTime)> {
        let mut out = Vec::new();
        let mut pending: Vec<_> = arrivals.iter().map(|&(t, mi, j)| (ms(t), mi, j)).collect();
        pending.reverse();
        loop {
            let next_arrival = pending.last().map(|a| a.0);
            match (ps.next_completion(), next_arrival) {
                (Some(c), Some(a)) if c <= a => out.push((0, c)),
                (Some(c), None) => out.push((0, c)),
                (_, Some(_)) => {
                    let (t, mi, j) = pending.pop().unwrap();
                    ps.submit(t, mi, j);
                    continue;
                }
                (None, None) => break,
            }
            let t = out.last().unwrap().1;
            let j = ps.complete(t).unwrap();
            out.last_mut().unwrap().0 = j;
        }
        out
    }

    #[test]
    fn single_execution_takes_mi_over_mips() {
        let mut ps = ProcessorSharing::new(3000.0);
        let done = drain(&mut ps, &[(0.0, 2000.0, 1)]);
        assert_eq!(done.len(), 1);
        assert!((done[0].1.as_ms() - 2.0 / 3.0).abs() <= SimTime::quantum_ms());
    }

    #[test]
    fn equal_split_between_two_executions() {
        let mut ps = ProcessorSharing::new(3000.0);
        ps.submit(SimTime::ZERO, 10.0, 1);
        ps.submit(SimTime::ZERO, 10.0, 2);
        assert_eq!(ps.allocated_mips(), 1500.0);
    }

    #[test]
    fn second_arrival_doubles_remaining_time() {
        // 3000 MI alone at 1000 MIPS would end at 3; halfway through (1.5)
        // a long job arrives, so the remaining 1500 MI take 3 instead of 1.5.
        let mut ps = ProcessorSharing::new(1000.0);
        let done = drain(&mut ps, &[(0.0, 3000.0, 1), (1.5, 1e9, 2)]);
        assert_eq!(done[0].0, 1);
        assert!((done[0].1.as_ms() - 4.5).abs() <= SimTime::quantum_ms());
    }

    #[test]
    fn transfer_serializes_fifo() {
        let mut busy = SimTime::ZERO;
        let a = State::transfer(SimTime::ZERO, &mut busy, 500, 500.0, ms(2.0));
        let b = State::transfer(SimTime::ZERO, &mut busy, 500, 500.0, ms(2.0));
        assert_eq!((a, b), (ms(3.0), ms(4.0)));
        let mut idle = SimTime::ZERO;
        assert_eq!(State::transfer(ms(1.0), &mut idle, 0, 500.0, ms(2.0)), ms(3.0));
    }
}
