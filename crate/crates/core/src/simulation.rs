//! The packet-level network simulation: event types and their handlers.
//!
//! Every queue visit costs three events: the packet entering the queue, its
//! serialization finishing, and its arrival at the far end of the link.
//! Packets are routed by index into their flow's route set, so a packet
//! whose flow has already completed is discarded on arrival.

use std::io::{self, Write};
use std::time::Instant;

use rand::rngs::SmallRng;
use rand::SeedableRng;
use serde::Serialize;

use crate::memory::{self, Ledger};
use crate::netmodel::{EnqueueOutcome, Packet, PacketKind, PacketPool, QueueLimits, QueueStats, Queues};
use crate::routing::{materialize_route, PathPolicy, Route, RoutingTables};
use crate::sim::{Handler, Scheduler, SimTime};
use crate::telemetry::{Aggregates, Telemetry};
use crate::topology::{RouterId, Topology};
use crate::transport::{FlowState, NdpConfig, PullPacers, PullRequest, RouteSet};
use crate::workload::{FlowSpec, SizeDistribution};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Event {
    /// The next flow in arrival order starts.
    FlowArrival,
    Enqueue { queue: u32, pkt: u32 },
    ServiceDone { queue: u32 },
    /// A packet reaches the end of the link behind its current queue.
    Arrive { pkt: u32 },
    PullPace { host: u32 },
    Timeout { flow: u32 },
}

const EVENT_KINDS: usize = 6;
const EVENT_NAMES: [&str; EVENT_KINDS] = ["flow_arrival", "enqueue", "service_done", "arrive", "pull_pace", "timeout"];

impl Event {
    fn kind(&self) -> usize {
        match self {
            Event::FlowArrival => 0,
            Event::Enqueue { .. } => 1,
            Event::ServiceDone { .. } => 2,
            Event::Arrive { .. } => 3,
            Event::PullPace { .. } => 4,
            Event::Timeout { .. } => 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimConfig {
    pub ndp: NdpConfig,
    #[serde(skip)]
    pub host_queue: QueueLimits,
    #[serde(skip)]
    pub router_queue: QueueLimits,
    /// Delay between a packet reaching a router and entering its output queue.
    pub switch_latency: SimTime,
    /// Flows arriving before this time are left out of the FCT aggregates.
    pub warmup_cutoff: SimTime,
    pub memory_budget: Option<u64>,
    pub path_policy: PathPolicy,
    /// Seed for per-flow path choice.
    pub seed: u64,
    /// Simulated time at which to stop even if flows are still running.
    pub horizon: Option<SimTime>,
}

impl SimConfig {
    /// Router queues hold 8 full packets of data and 8 headers.
    pub fn new(ndp: NdpConfig) -> Self {
        SimConfig {
            ndp,
            host_queue: QueueLimits::Unbounded,
            router_queue: QueueLimits::Trim {
                data_bytes: 8 * ndp.mtu as u32,
                headers: 8,
            },
            switch_latency: SimTime::ZERO,
            warmup_cutoff: SimTime::ZERO,
            memory_budget: None,
            path_policy: PathPolicy::default(),
            seed: 1,
            horizon: None,
        }
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::new(NdpConfig::default())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PacketCounts {
    pub injected: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// Arrived after their flow had completed.
    pub late: u64,
}

impl PacketCounts {
    pub fn in_network(&self) -> i64 {
        self.injected as i64 - (self.delivered + self.dropped + self.late) as i64
    }
}

/// Packet fates, by what the sender or receiver originally sent. Data that
/// was trimmed in the network still counts as data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PacketLedger {
    pub data: PacketCounts,
    pub probe: PacketCounts,
    pub ack: PacketCounts,
    pub nack: PacketCounts,
    pub pull: PacketCounts,
    /// Data packets that reached the receiver as trimmed headers.
    pub data_delivered_trimmed: u64,
}

impl PacketLedger {
    fn class(&mut self, p: &Packet) -> &mut PacketCounts {
        if p.flags & Packet::TRIMMED != 0 {
            return &mut self.data;
        }
        match p.kind {
            PacketKind::Data => &mut self.data,
            PacketKind::Header => &mut self.probe,
            PacketKind::Ack => &mut self.ack,
            PacketKind::Nack => &mut self.nack,
            PacketKind::Pull => &mut self.pull,
        }
    }

    pub fn classes(&self) -> [PacketCounts; 5] {
        [self.data, self.probe, self.ack, self.nack, self.pull]
    }

    /// Full-size data packets that reached their receiver.
    pub fn data_delivered_full(&self) -> u64 {
        self.data.delivered - self.data_delivered_trimmed
    }

    /// Whether every injected packet is accounted for, given the packets
    /// still held in the network.
    pub fn reconciles(&self, live: u64) -> bool {
        let classes = self.classes();
        classes.iter().all(|c| c.in_network() >= 0)
            && classes.iter().map(|c| c.in_network()).sum::<i64>() == live as i64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    /// No events left: every flow has completed.
    Quiescent,
    Horizon,
    MemoryBudget { accounted: u64, budget: u64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct RunStats {
    pub stop: StopReason,
    pub flows_total: u64,
    pub flows_started: u64,
    pub flows_completed: u64,
    /// Flows started or scheduled that did not complete.
    pub flows_incomplete: u64,
    pub events: u64,
    pub events_by_kind: Vec<(&'static str, u64)>,
    pub sim_end_ps: u64,
    pub wall_secs: f64,
    pub events_per_sec: f64,
    pub events_per_data_packet: f64,
    pub packets: PacketLedger,
    pub packets_reconciled: bool,
    pub packets_peak_in_network: u32,
    pub queues: QueueStats,
    pub memory: Ledger,
    pub peak_rss_bytes: Option<u64>,
}

/// Network state plus everything the event handlers touch.
pub struct Network<'a, W: Write> {
    topo: &'a Topology,
    tables: &'a RoutingTables,
    specs: &'a [FlowSpec],
    cfg: SimConfig,
    next_flow: usize,
    flows: Vec<Option<Box<FlowState>>>,
    queues: Queues,
    pool: PacketPool,
    pacers: PullPacers,
    telemetry: Telemetry<W>,
    ledger: Ledger,
    packets: PacketLedger,
    out: Vec<Packet>,
    events_by_kind: [u64; EVENT_KINDS],
    started: u64,
    completed: u64,
    stop: Option<StopReason>,
    io_error: Option<io::Error>,
}

impl<'a, W: Write> Network<'a, W> {
    /// `specs` must be sorted by arrival; flow `i` is `specs[i]`.
    pub fn new(
        topo: &'a Topology,
        tables: &'a RoutingTables,
        specs: &'a [FlowSpec],
        sizes: &SizeDistribution,
        cfg: SimConfig,
        csv: Option<W>,
    ) -> io::Result<Self> {
        assert!(specs.windows(2).all(|w| w[0].arrival <= w[1].arrival), "flows must be sorted by arrival");
        assert!(cfg.ndp.validate().is_ok(), "{:?}", cfg.ndp.validate());
        let cutoff = cfg.warmup_cutoff;
        let queues = Queues::new(topo, cfg.ndp.mtu, cfg.host_queue, cfg.router_queue);
        let pacers = PullPacers::new(topo.servers(), topo.link().serialization(cfg.ndp.mtu as u64));
        let mut net = Network {
            topo,
            tables,
            specs,
            cfg,
            next_flow: 0,
            flows: (0..specs.len()).map(|_| None).collect(),
            queues,
            pool: PacketPool::new(),
            pacers,
            telemetry: Telemetry::new(sizes, csv, cutoff)?,
            ledger: Ledger::default(),
            packets: PacketLedger::default(),
            out: Vec::with_capacity(32),
            events_by_kind: [0; EVENT_KINDS],
            started: 0,
            completed: 0,
            stop: None,
            io_error: None,
        };
        let fixed = topo.heap_bytes()
            + tables.heap_bytes()
            + net.queues.heap_bytes()
            + net.pacers.heap_bytes()
            + net.flows.capacity() * std::mem::size_of::<Option<Box<FlowState>>>()
            + std::mem::size_of_val(specs);
        net.ledger.set_fixed(fixed as u64);
        Ok(net)
    }

    pub fn packets(&self) -> &PacketLedger {
        &self.packets
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn live_flows(&self) -> usize {
        self.flows.iter().filter(|f| f.is_some()).count()
    }

    fn flow_rng(&self, id: usize) -> SmallRng {
        SmallRng::seed_from_u64(self.cfg.seed ^ (id as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }

    fn accounted(&self, s: &Scheduler<Event>) -> u64 {
        self.ledger.total() + self.pool.heap_bytes() as u64 + s.queue().heap_bytes() as u64
    }

    fn routes_for(&self, spec: &FlowSpec, rng: &mut SmallRng) -> RouteSet {
        let (rs, rd) = (self.topo.router_of(spec.src), self.topo.router_of(spec.dst));
        let paths = self
            .tables
            .sample_paths_with(self.topo, rs, rd, self.cfg.ndp.paths as usize, self.cfg.path_policy, rng);
        let mut rev: Vec<RouterId> = Vec::with_capacity(paths[0].len());
        let routes: Vec<(Route, Route)> = paths
            .iter()
            .map(|p| {
                rev.clear();
                rev.extend(p.iter().rev());
                (
                    materialize_route(self.topo, p, spec.src, spec.dst).expect("sampled path is valid"),
                    materialize_route(self.topo, &rev, spec.dst, spec.src).expect("sampled path is valid"),
                )
            })
            .collect();
        RouteSet::new(&routes)
    }

    fn flow_bytes(f: &FlowState) -> (u64, u64) {
        (
            (std::mem::size_of::<FlowState>() + f.heap_bytes()) as u64,
            f.routes().heap_bytes() as u64,
        )
    }

    fn inject(&mut self, s: &mut Scheduler<Event>, f: &FlowState, p: Packet) {
        self.packets.class(&p).injected += 1;
        let queue = f.routes().queue(p.path, p.is_reverse(), 0).expect("routes are non-empty");
        let pkt = self.pool.alloc(p);
        s.schedule_in(SimTime::ZERO, Event::Enqueue { queue, pkt });
    }

    fn inject_out(&mut self, s: &mut Scheduler<Event>, f: &FlowState, out: &mut Vec<Packet>) {
        for p in out.drain(..) {
            self.inject(s, f, p);
        }
    }

    fn flow_arrival(&mut self, s: &mut Scheduler<Event>) {
        let id = self.next_flow;
        let spec = self.specs[id];
        self.next_flow += 1;
        if let Some(budget) = self.cfg.memory_budget {
            let accounted = self.accounted(s);
            if accounted > budget {
                self.halt(s, StopReason::MemoryBudget { accounted, budget });
                return;
            }
        }
        if let Some(next) = self.specs.get(self.next_flow) {
            s.schedule(next.arrival, Event::FlowArrival).expect("arrivals are sorted");
        }
        let mut rng = self.flow_rng(id);
        let routes = self.routes_for(&spec, &mut rng);
        let mut f = Box::new(FlowState::new(id as u32, spec, routes, &self.cfg.ndp, self.topo.link(), rng));
        let mut out = std::mem::take(&mut self.out);
        f.start(&mut out);
        self.inject_out(s, &f, &mut out);
        self.out = out;
        f.timer = Some(s.schedule_in(f.rto, Event::Timeout { flow: id as u32 }));
        let (fb, pb) = Self::flow_bytes(&f);
        f.charged = (fb, pb);
        self.ledger.charge(fb, pb, f.routes().paths() as u64);
        self.started += 1;
        self.flows[id] = Some(f);
    }

    fn start_service(&mut self, s: &mut Scheduler<Event>, queue: u32) {
        if let Some((_, ser)) = self.queues.start_service(&self.pool, queue) {
            s.schedule_in(ser, Event::ServiceDone { queue });
        }
    }

    fn enqueue(&mut self, s: &mut Scheduler<Event>, queue: u32, pkt: u32) {
        match self.queues.enqueue(&mut self.pool, queue, pkt) {
            EnqueueOutcome::Dropped => {
                let p = *self.pool.get(pkt);
                self.packets.class(&p).dropped += 1;
                self.pool.release(pkt);
            }
            EnqueueOutcome::Accepted | EnqueueOutcome::Trimmed => {
                if !self.queues.is_busy(queue) {
                    self.start_service(s, queue);
                }
            }
        }
    }

    fn service_done(&mut self, s: &mut Scheduler<Event>, queue: u32) {
        let pkt = self.queues.finish_service(&self.pool, queue);
        s.schedule_in(self.topo.link().delay, Event::Arrive { pkt });
        self.start_service(s, queue);
    }

    fn arrive(&mut self, s: &mut Scheduler<Event>, pkt: u32) {
        let p = *self.pool.get(pkt);
        let Some(f) = self.flows[p.flow as usize].as_deref() else {
            self.packets.class(&p).late += 1;
            self.pool.release(pkt);
            return;
        };
        let hop = p.hop + 1;
        match f.routes().queue(p.path, p.is_reverse(), hop) {
            Some(queue) => {
                self.pool.get_mut(pkt).hop = hop;
                s.schedule_in(self.cfg.switch_latency, Event::Enqueue { queue, pkt });
            }
            None => {
                self.pool.release(pkt);
                self.packets.class(&p).delivered += 1;
                if p.flags & Packet::TRIMMED != 0 {
                    self.packets.data_delivered_trimmed += 1;
                }
                self.deliver(s, p);
            }
        }
    }

    fn deliver(&mut self, s: &mut Scheduler<Event>, p: Packet) {
        let id = p.flow as usize;
        let mut f = self.flows[id].take().expect("delivery to a live flow");
        let now = s.now();
        let mut out = std::mem::take(&mut self.out);
        if p.is_reverse() {
            let done = f.on_sender_packet(&p, now, &mut out);
            self.inject_out(s, &f, &mut out);
            self.out = out;
            if done {
                self.complete(s, f);
                return;
            }
        } else {
            let req = f.on_receiver_packet(&p, &mut out);
            self.inject_out(s, &f, &mut out);
            self.out = out;
            if let PullRequest::On { path } = req {
                let host = f.spec.dst;
                match self.pacers.request(host, id as u32, path, now) {
                    Ok(()) => {
                        let pull = f.emit_pull(path).expect("receiver still needs data");
                        self.inject(s, &f, pull);
                    }
                    Err(Some(at)) => {
                        s.schedule(at, Event::PullPace { host }).expect("pacer slot is not in the past");
                    }
                    Err(None) => {}
                }
            }
        }
        self.flows[id] = Some(f);
    }

    fn complete(&mut self, s: &mut Scheduler<Event>, f: Box<FlowState>) {
        if let Some(h) = f.timer {
            s.cancel(h);
        }
        self.ledger.release(f.charged.0, f.charged.1);
        self.completed += 1;
        if let Err(e) = self.telemetry.record(&f.outcome(s.now())) {
            self.io_error = Some(e);
            s.stop();
        }
    }

    fn pull_pace(&mut self, s: &mut Scheduler<Event>, host: u32) {
        let now = s.now();
        while let Some((flow, path)) = self.pacers.pop(host) {
            let Some(mut f) = self.flows[flow as usize].take() else {
                continue;
            };
            let pull = f.emit_pull(path);
            if let Some(pull) = pull {
                self.pacers.mark_sent(host, now);
                self.inject(s, &f, pull);
                self.flows[flow as usize] = Some(f);
                break;
            }
            self.flows[flow as usize] = Some(f);
        }
        if let Some(at) = self.pacers.next_due(host) {
            s.schedule(at.max(now), Event::PullPace { host }).expect("pacer slot is not in the past");
        }
    }

    fn timeout(&mut self, s: &mut Scheduler<Event>, flow: u32) {
        let Some(mut f) = self.flows[flow as usize].take() else {
            return;
        };
        let mut out = std::mem::take(&mut self.out);
        let next = f.on_timeout(s.now(), &mut out);
        self.inject_out(s, &f, &mut out);
        self.out = out;
        f.timer = Some(s.schedule(next, Event::Timeout { flow }).expect("timer fires in the future"));
        self.flows[flow as usize] = Some(f);
    }

    fn halt(&mut self, s: &mut Scheduler<Event>, reason: StopReason) {
        self.stop = Some(reason);
        s.stop();
    }
}

impl<W: Write> Handler<Event> for Network<'_, W> {
    fn handle(&mut self, s: &mut Scheduler<Event>, ev: Event) {
        self.events_by_kind[ev.kind()] += 1;
        match ev {
            Event::FlowArrival => self.flow_arrival(s),
            Event::Enqueue { queue, pkt } => self.enqueue(s, queue, pkt),
            Event::ServiceDone { queue } => self.service_done(s, queue),
            Event::Arrive { pkt } => self.arrive(s, pkt),
            Event::PullPace { host } => self.pull_pace(s, host),
            Event::Timeout { flow } => self.timeout(s, flow),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("writing flow records failed: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
}

/// A network together with its event scheduler.
pub struct Simulation<'a, W: Write> {
    sched: Scheduler<Event>,
    net: Network<'a, W>,
}

impl<'a, W: Write> Simulation<'a, W> {
    pub fn new(
        topo: &'a Topology,
        tables: &'a RoutingTables,
        specs: &'a [FlowSpec],
        sizes: &SizeDistribution,
        cfg: SimConfig,
        csv: Option<W>,
    ) -> io::Result<Self> {
        let mut sched = Scheduler::new();
        if let Some(first) = specs.first() {
            sched
                .schedule(first.arrival, Event::FlowArrival)
                .expect("arrivals are not negative");
        }
        Ok(Simulation {
            sched,
            net: Network::new(topo, tables, specs, sizes, cfg, csv)?,
        })
    }

    pub fn network(&self) -> &Network<'a, W> {
        &self.net
    }

    pub fn scheduler(&self) -> &Scheduler<Event> {
        &self.sched
    }

    /// Runs to quiescence, the horizon or the memory budget, whichever
    /// comes first.
    pub fn run(mut self) -> Result<(RunStats, Option<W>, Aggregates), RunError> {
        let start = Instant::now();
        match self.net.cfg.horizon {
            Some(h) => self.sched.run_until(&mut self.net, h)?,
            None => self.sched.run(&mut self.net)?,
        };
        let wall = start.elapsed().as_secs_f64();
        let net = self.net;
        if let Some(e) = net.io_error {
            return Err(RunError::Io(e));
        }
        let stop = net.stop.unwrap_or(if self.sched.pending() == 0 {
            StopReason::Quiescent
        } else {
            StopReason::Horizon
        });
        let events = self.sched.executed();
        let data = net.packets.data_delivered_full();
        let stats = RunStats {
            stop,
            flows_total: net.specs.len() as u64,
            flows_started: net.started,
            flows_completed: net.completed,
            flows_incomplete: net.specs.len() as u64 - net.completed,
            events,
            events_by_kind: EVENT_NAMES.iter().copied().zip(net.events_by_kind).collect(),
            sim_end_ps: self.sched.now().as_ps(),
            wall_secs: wall,
            events_per_sec: events as f64 / wall.max(1e-9),
            events_per_data_packet: if data == 0 { 0.0 } else { events as f64 / data as f64 },
            packets: net.packets,
            packets_reconciled: net.packets.reconciles(net.pool.live() as u64),
            packets_peak_in_network: net.pool.peak(),
            queues: net.queues.stats(),
            memory: net.ledger,
            peak_rss_bytes: memory::peak_rss_bytes(),
        };
        let (csv, agg) = net.telemetry.into_writer()?;
        Ok((stats, csv, agg))
    }
}
