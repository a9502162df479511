//! NDP-style receiver-driven transport.
//!
//! A flow opens by sending its first window as headers only. The receiver
//! answers every header with a NACK and every data packet with an ACK, and
//! queues one pull per arrival at its host's pull pacer. Each pull lets the
//! sender transmit one packet, NACKed sequence numbers first. Pulls carry a
//! cumulative count so a lost pull is made up by the next one. A
//! progress timer re-probes outstanding packets if control traffic is lost.

use std::collections::VecDeque;

use arrayvec::ArrayVec;
use rand::rngs::SmallRng;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::netmodel::{Packet, PacketKind, HEADER_BYTES};
use crate::routing::Route;
use crate::sim::{EventHandle, SimTime};
use crate::topology::{LinkParams, QueueId, ServerId};
use crate::workload::FlowSpec;

pub const MAX_WINDOW: usize = 32;
pub const MAX_PATHS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NdpConfig {
    pub mtu: u16,
    /// Congestion window and size of the initial header-only burst, packets.
    pub window: u16,
    /// Paths sampled per flow.
    pub paths: u8,
    /// Retransmission timeout as a multiple of the base round-trip time.
    pub rto_factor: u32,
}

impl Default for NdpConfig {
    fn default() -> Self {
        NdpConfig {
            mtu: 9000,
            window: 8,
            paths: 5,
            rto_factor: 10,
        }
    }
}

impl NdpConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.mtu <= HEADER_BYTES {
            return Err(format!("mtu must exceed the {HEADER_BYTES} B header"));
        }
        if self.window == 0 || self.window as usize > MAX_WINDOW {
            return Err(format!("window must lie in 1..={MAX_WINDOW}"));
        }
        if self.paths == 0 || self.paths as usize > MAX_PATHS {
            return Err(format!("paths must lie in 1..={MAX_PATHS}"));
        }
        if self.rto_factor == 0 {
            return Err("rto factor must be positive".into());
        }
        Ok(())
    }
}

/// Forward and reverse queue sequences of a flow's paths. All paths are
/// shortest paths, so they share one length.
#[derive(Clone, Debug, Default)]
pub struct RouteSet {
    /// End of each route in `fwd` and `rev`.
    ends: Box<[u16]>,
    fwd: Vec<QueueId>,
    rev: Vec<QueueId>,
}

impl RouteSet {
    /// Routes may differ in length; each reverse route matches its forward
    /// route's length.
    pub fn new(routes: &[(Route, Route)]) -> Self {
        let total: usize = routes.iter().map(|(f, _)| f.len()).sum();
        assert!(total <= u16::MAX as usize);
        let mut fwd = Vec::with_capacity(total);
        let mut rev = Vec::with_capacity(total);
        let mut ends = Vec::with_capacity(routes.len());
        for (f, r) in routes {
            assert!(f.len() == r.len() && f.len() <= u8::MAX as usize, "bad route pair");
            fwd.extend_from_slice(&f.queues);
            rev.extend_from_slice(&r.queues);
            ends.push(fwd.len() as u16);
        }
        RouteSet {
            ends: ends.into_boxed_slice(),
            fwd,
            rev,
        }
    }

    pub fn paths(&self) -> usize {
        self.ends.len()
    }

    /// Queues on the longest route.
    pub fn hops(&self) -> usize {
        (0..self.paths()).map(|p| self.span(p).len()).max().unwrap_or(0)
    }

    fn span(&self, path: usize) -> std::ops::Range<usize> {
        let start = if path == 0 { 0 } else { self.ends[path - 1] as usize };
        start..self.ends[path] as usize
    }

    /// Queue at `hop` on `path`, or `None` past the end of the route.
    pub fn queue(&self, path: u8, reverse: bool, hop: u8) -> Option<QueueId> {
        let span = self.span(path as usize);
        let i = span.start + hop as usize;
        if i >= span.end {
            return None;
        }
        Some(if reverse { self.rev[i] } else { self.fwd[i] })
    }

    pub fn heap_bytes(&self) -> usize {
        (self.fwd.capacity() + self.rev.capacity()) * std::mem::size_of::<QueueId>()
            + self.ends.len() * std::mem::size_of::<u16>()
    }
}

#[derive(Clone, Debug)]
struct Bits(Box<[u64]>);

impl Bits {
    fn new(n: u32) -> Self {
        Bits(vec![0; (n as usize).div_ceil(64)].into_boxed_slice())
    }

    fn get(&self, i: u32) -> bool {
        self.0[(i / 64) as usize] >> (i % 64) & 1 == 1
    }

    /// Sets bit `i`, returning whether it was clear.
    fn set(&mut self, i: u32) -> bool {
        let w = &mut self.0[(i / 64) as usize];
        let was = *w >> (i % 64) & 1;
        *w |= 1 << (i % 64);
        was == 0
    }

    fn bytes(&self) -> usize {
        self.0.len() * 8
    }
}

/// Per-flow result, emitted once when the sender sees its last ACK.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowOutcome {
    pub flow: u32,
    pub src: ServerId,
    pub dst: ServerId,
    pub size: u32,
    pub arrival: SimTime,
    pub fct: SimTime,
    pub retransmissions: u32,
    pub paths_used: u32,
}

/// What a receiver asks of its host after handling a packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PullRequest {
    None,
    /// Queue one pull to go out on `path`.
    On { path: u8 },
}

/// Sender and receiver state of one flow.
#[derive(Debug)]
pub struct FlowState {
    pub id: u32,
    pub spec: FlowSpec,
    packets: u32,
    routes: RouteSet,
    rng: SmallRng,
    window: u16,
    mtu: u16,
    // sender
    next_new: u32,
    acked_count: u32,
    credit: u32,
    last_pull: u32,
    in_flight: ArrayVec<u32, MAX_WINDOW>,
    rtx: VecDeque<u32>,
    acked: Bits,
    sent: Bits,
    retransmissions: u32,
    paths_used: u32,
    // receiver
    received: Bits,
    received_count: u32,
    pulls_sent: u32,
    // timer
    pub timer: Option<EventHandle>,
    pub last_progress: SimTime,
    pub rto: SimTime,
    /// Flow and route bytes charged to the memory ledger at start.
    pub charged: (u64, u64),
}

impl FlowState {
    pub fn new(
        id: u32,
        spec: FlowSpec,
        routes: RouteSet,
        cfg: &NdpConfig,
        link: LinkParams,
        rng: SmallRng,
    ) -> Self {
        assert!(spec.size > 0, "flows carry at least one byte");
        let packets = spec.size.div_ceil(cfg.mtu as u32);
        let h = routes.hops() as u64;
        let base_rtt = SimTime(
            h * (link.serialization(cfg.mtu as u64).as_ps() + link.delay.as_ps())
                + h * (link.serialization(HEADER_BYTES as u64).as_ps() + link.delay.as_ps()),
        );
        FlowState {
            id,
            spec,
            packets,
            routes,
            rng,
            window: cfg.window,
            mtu: cfg.mtu,
            next_new: 0,
            acked_count: 0,
            credit: 0,
            last_pull: 0,
            in_flight: ArrayVec::new(),
            rtx: VecDeque::new(),
            acked: Bits::new(packets),
            sent: Bits::new(packets),
            retransmissions: 0,
            paths_used: 0,
            received: Bits::new(packets),
            received_count: 0,
            pulls_sent: 0,
            timer: None,
            last_progress: spec.arrival,
            rto: SimTime(base_rtt.as_ps() * cfg.rto_factor as u64),
            charged: (0, 0),
        }
    }

    pub fn packets(&self) -> u32 {
        self.packets
    }

    pub fn routes(&self) -> &RouteSet {
        &self.routes
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    pub fn is_complete(&self) -> bool {
        self.acked_count == self.packets
    }

    pub fn receiver_done(&self) -> bool {
        self.received_count == self.packets
    }

    pub fn retransmissions(&self) -> u32 {
        self.retransmissions
    }

    pub fn outcome(&self, now: SimTime) -> FlowOutcome {
        FlowOutcome {
            flow: self.id,
            src: self.spec.src,
            dst: self.spec.dst,
            size: self.spec.size,
            arrival: self.spec.arrival,
            fct: now - self.spec.arrival,
            retransmissions: self.retransmissions,
            paths_used: self.paths_used.count_ones(),
        }
    }

    /// Heap bytes owned by the flow besides its routes.
    pub fn heap_bytes(&self) -> usize {
        self.acked.bytes()
            + self.sent.bytes()
            + self.received.bytes()
            + self.rtx.capacity() * 4
    }

    fn payload(&self, seq: u32) -> u16 {
        if seq + 1 < self.packets {
            self.mtu
        } else {
            (self.spec.size - seq * self.mtu as u32) as u16
        }
    }

    fn pick_path(&mut self) -> u8 {
        let k = self.routes.paths();
        let p = if k == 1 { 0 } else { self.rng.gen_range(0..k) as u8 };
        self.paths_used |= 1 << p;
        p
    }

    fn forward(&self, kind: PacketKind, seq: u32, size: u16, path: u8, flags: u8) -> Packet {
        Packet {
            flow: self.id,
            seq,
            size,
            kind,
            path,
            hop: 0,
            flags,
        }
    }

    fn probe(&mut self, seq: u32, out: &mut Vec<Packet>) {
        let path = self.pick_path();
        out.push(self.forward(PacketKind::Header, seq, HEADER_BYTES, path, Packet::PROBE));
    }

    /// The opening burst: the first window of sequence numbers as headers.
    pub fn start(&mut self, out: &mut Vec<Packet>) {
        let n = self.packets.min(self.window as u32);
        for seq in 0..n {
            self.probe(seq, out);
        }
        self.next_new = n;
    }

    fn try_send(&mut self, out: &mut Vec<Packet>) {
        while self.credit > 0 && self.in_flight.len() < self.window as usize {
            let seq = loop {
                match self.rtx.pop_front() {
                    Some(s) if self.acked.get(s) => continue,
                    Some(s) => break Some(s),
                    None if self.next_new < self.packets => {
                        self.next_new += 1;
                        break Some(self.next_new - 1);
                    }
                    None => break None,
                }
            };
            let Some(seq) = seq else { return };
            self.credit -= 1;
            if !self.sent.set(seq) {
                self.retransmissions += 1;
            }
            self.in_flight.push(seq);
            let path = self.pick_path();
            out.push(self.forward(PacketKind::Data, seq, self.payload(seq), path, 0));
        }
    }

    fn forget_in_flight(&mut self, seq: u32) {
        if let Some(i) = self.in_flight.iter().position(|&s| s == seq) {
            self.in_flight.swap_remove(i);
        }
    }

    /// Handles an ACK, NACK or pull at the sender. Returns true when this
    /// ACK completed the flow.
    pub fn on_sender_packet(&mut self, p: &Packet, now: SimTime, out: &mut Vec<Packet>) -> bool {
        self.last_progress = now;
        match p.kind {
            PacketKind::Ack => {
                self.forget_in_flight(p.seq);
                if self.acked.set(p.seq) {
                    self.acked_count += 1;
                    if let Some(i) = self.rtx.iter().position(|&s| s == p.seq) {
                        self.rtx.remove(i);
                    }
                    if self.is_complete() {
                        return true;
                    }
                }
            }
            PacketKind::Nack => {
                self.forget_in_flight(p.seq);
                if !self.acked.get(p.seq) && !self.rtx.contains(&p.seq) {
                    self.rtx.push_back(p.seq);
                }
            }
            PacketKind::Pull => {
                if p.seq > self.last_pull {
                    self.credit += p.seq - self.last_pull;
                    self.last_pull = p.seq;
                }
            }
            PacketKind::Data | PacketKind::Header => {
                unreachable!("forward packet delivered to sender")
            }
        }
        self.try_send(out);
        false
    }

    /// Handles data or a header at the receiver.
    pub fn on_receiver_packet(&mut self, p: &Packet, out: &mut Vec<Packet>) -> PullRequest {
        let reply = |kind| Packet {
            flow: self.id,
            seq: p.seq,
            size: HEADER_BYTES,
            kind,
            path: p.path,
            hop: 0,
            flags: Packet::REVERSE | (p.flags & Packet::PROBE),
        };
        match p.kind {
            PacketKind::Data => {
                if self.received.set(p.seq) {
                    self.received_count += 1;
                }
                out.push(reply(PacketKind::Ack));
            }
            PacketKind::Header => {
                if self.received.get(p.seq) {
                    out.push(reply(PacketKind::Ack));
                } else {
                    out.push(reply(PacketKind::Nack));
                }
            }
            _ => unreachable!("reverse packet delivered to receiver"),
        }
        if self.receiver_done() {
            PullRequest::None
        } else {
            PullRequest::On { path: p.path }
        }
    }

    /// A pull leaving the receiver's pacer, or `None` if no longer needed.
    pub fn emit_pull(&mut self, path: u8) -> Option<Packet> {
        if self.receiver_done() {
            return None;
        }
        self.pulls_sent += 1;
        Some(Packet {
            flow: self.id,
            seq: self.pulls_sent,
            size: HEADER_BYTES,
            kind: PacketKind::Pull,
            path,
            hop: 0,
            flags: Packet::REVERSE,
        })
    }

    /// Fired by the progress timer. Without progress for a full timeout,
    /// outstanding packets are re-probed as headers, and if none are
    /// outstanding the next packet to send is probed. Returns the time the
    /// timer should fire next.
    pub fn on_timeout(&mut self, now: SimTime, out: &mut Vec<Packet>) -> SimTime {
        let due = self.last_progress + self.rto;
        if now < due {
            return due;
        }
        self.in_flight.clear();
        let mut probed = 0;
        for seq in 0..self.next_new {
            if probed == self.window as usize {
                break;
            }
            if !self.acked.get(seq) && !self.rtx.contains(&seq) {
                self.probe(seq, out);
                probed += 1;
            }
        }
        if probed == 0 {
            if let Some(&seq) = self.rtx.front() {
                self.probe(seq, out);
            } else if self.next_new < self.packets {
                self.next_new += 1;
                self.probe(self.next_new - 1, out);
            }
        }
        self.last_progress = now;
        now + self.rto
    }
}

/// One pull pacer per receiving host; pulls leave at most once per
/// full-packet serialization time.
#[derive(Debug)]
pub struct PullPacers {
    interval: SimTime,
    next_free: Vec<SimTime>,
    waiting: Vec<VecDeque<(u32, u8)>>,
}

impl PullPacers {
    pub fn new(hosts: u32, interval: SimTime) -> Self {
        PullPacers {
            interval,
            next_free: vec![SimTime::ZERO; hosts as usize],
            waiting: (0..hosts).map(|_| VecDeque::new()).collect(),
        }
    }

    pub fn interval(&self) -> SimTime {
        self.interval
    }

    /// Registers a pull. `Ok(())` means send it now; `Err(Some(t))` means it
    /// was queued and a pacing event must be scheduled at `t`; `Err(None)`
    /// means it was queued behind an already scheduled event.
    pub fn request(&mut self, host: ServerId, flow: u32, path: u8, now: SimTime) -> Result<(), Option<SimTime>> {
        let h = host as usize;
        let q = &mut self.waiting[h];
        if q.is_empty() && self.next_free[h] <= now {
            self.next_free[h] = now + self.interval;
            return Ok(());
        }
        q.push_back((flow, path));
        Err((q.len() == 1).then_some(self.next_free[h]))
    }

    /// Next queued pull of `host`.
    pub fn pop(&mut self, host: ServerId) -> Option<(u32, u8)> {
        self.waiting[host as usize].pop_front()
    }

    /// Records a pull leaving `host` at `now`.
    pub fn mark_sent(&mut self, host: ServerId, now: SimTime) {
        self.next_free[host as usize] = now + self.interval;
    }

    /// When the next pacing event of `host` is due, if pulls are waiting.
    pub fn next_due(&self, host: ServerId) -> Option<SimTime> {
        let h = host as usize;
        (!self.waiting[h].is_empty()).then_some(self.next_free[h])
    }

    pub fn heap_bytes(&self) -> usize {
        self.next_free.capacity() * 8
            + self.waiting.capacity() * std::mem::size_of::<VecDeque<(u32, u8)>>()
            + self.waiting.iter().map(|q| q.capacity() * 8).sum::<usize>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn route_sets_mix_lengths() {
        let r = |q: &[u32]| Route { queues: q.to_vec() };
        let set = RouteSet::new(&[(r(&[0, 4, 3]), r(&[1, 5, 2])), (r(&[0, 6, 7, 3]), r(&[1, 8, 9, 2]))]);
        assert_eq!((set.paths(), set.hops()), (2, 4));
        assert_eq!(set.queue(0, false, 2), Some(3));
        assert_eq!(set.queue(0, false, 3), None);
        assert_eq!(set.queue(1, false, 3), Some(3));
        assert_eq!(set.queue(1, true, 1), Some(8));
        assert_eq!(set.queue(1, true, 4), None);
    }

    fn flow(size: u32) -> FlowState {
        let route = Route { queues: vec![0, 4, 3] };
        let back = Route { queues: vec![1, 5, 2] };
        let spec = FlowSpec {
            arrival: SimTime(100),
            src: 0,
            dst: 1,
            size,
        };
        FlowState::new(
            7,
            spec,
            RouteSet::new(&[(route, back)]),
            &NdpConfig::default(),
            LinkParams::default(),
            SmallRng::seed_from_u64(1),
        )
    }

    fn reply(kind: PacketKind, seq: u32) -> Packet {
        Packet {
            flow: 7,
            seq,
            size: HEADER_BYTES,
            kind,
            path: 0,
            hop: 0,
            flags: Packet::REVERSE,
        }
    }

    #[test]
    fn opening_burst_is_header_only() {
        let mut f = flow(100_000);
        assert_eq!(f.packets(), 12);
        let mut out = Vec::new();
        f.start(&mut out);
        assert_eq!(out.len(), 8);
        assert!(out.iter().all(|p| p.kind == PacketKind::Header && p.size == HEADER_BYTES));
        let mut out = Vec::new();
        flow(5000).start(&mut out);
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn nacked_sequence_goes_first() {
        let mut f = flow(100_000);
        let mut out = Vec::new();
        f.start(&mut out);
        out.clear();
        f.on_sender_packet(&reply(PacketKind::Nack, 3), SimTime(1), &mut out);
        assert!(out.is_empty());
        f.on_sender_packet(&reply(PacketKind::Pull, 1), SimTime(2), &mut out);
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].kind, out[0].seq), (PacketKind::Data, 3));
        assert_eq!(f.retransmissions(), 0);
        // a cumulative pull covering two lost pulls grants two sends
        f.on_sender_packet(&reply(PacketKind::Pull, 3), SimTime(3), &mut out);
        assert_eq!(out.iter().map(|p| p.seq).collect::<Vec<_>>(), vec![3, 8, 9]);
        assert_eq!(out[2].size, 9000);
    }

    #[test]
    fn trimmed_data_counts_a_retransmission() {
        let mut f = flow(9000);
        let mut out = Vec::new();
        f.start(&mut out);
        f.on_sender_packet(&reply(PacketKind::Nack, 0), SimTime(1), &mut out);
        f.on_sender_packet(&reply(PacketKind::Pull, 1), SimTime(1), &mut out);
        f.on_sender_packet(&reply(PacketKind::Nack, 0), SimTime(2), &mut out);
        f.on_sender_packet(&reply(PacketKind::Pull, 2), SimTime(2), &mut out);
        assert_eq!(f.retransmissions(), 1);
        assert!(f.on_sender_packet(&reply(PacketKind::Ack, 0), SimTime(3), &mut out));
    }

    #[test]
    fn completion_is_reported_once() {
        let mut f = flow(2000);
        let mut out = Vec::new();
        f.start(&mut out);
        assert!(f.on_sender_packet(&reply(PacketKind::Ack, 0), SimTime(50), &mut out));
        assert!(!f.on_sender_packet(&reply(PacketKind::Ack, 0), SimTime(60), &mut out));
        assert_eq!(f.outcome(SimTime(500)).fct, SimTime(400));
    }

    #[test]
    fn window_limits_in_flight() {
        let mut f = flow(1_000_000);
        let mut out = Vec::new();
        f.start(&mut out);
        f.on_sender_packet(&reply(PacketKind::Pull, 20), SimTime(1), &mut out);
        assert_eq!(f.in_flight(), 8);
        assert_eq!(out.iter().filter(|p| p.kind == PacketKind::Data).count(), 8);
    }

    #[test]
    fn receiver_acks_nacks_and_stops_pulling() {
        let mut f = flow(9000 + 10);
        let mut out = Vec::new();
        let mut data = Packet {
            flow: 7,
            seq: 0,
            size: 9000,
            kind: PacketKind::Data,
            path: 0,
            hop: 3,
            flags: 0,
        };
        assert_eq!(f.on_receiver_packet(&data, &mut out), PullRequest::On { path: 0 });
        data.kind = PacketKind::Header;
        data.seq = 1;
        f.on_receiver_packet(&data, &mut out);
        data.seq = 0;
        f.on_receiver_packet(&data, &mut out);
        assert_eq!(
            out.iter().map(|p| p.kind).collect::<Vec<_>>(),
            vec![PacketKind::Ack, PacketKind::Nack, PacketKind::Ack]
        );
        assert!(out.iter().all(|p| p.is_reverse()));
        data.kind = PacketKind::Data;
        data.seq = 1;
        data.size = 10;
        assert_eq!(f.on_receiver_packet(&data, &mut out), PullRequest::None);
        assert!(f.emit_pull(0).is_none());
    }

    #[test]
    fn timeout_reprobes_outstanding() {
        let mut f = flow(100_000);
        let mut out = Vec::new();
        f.start(&mut out);
        out.clear();
        let rto = f.rto;
        assert_eq!(f.on_timeout(SimTime(100) + SimTime(1), &mut out), SimTime(100) + rto);
        assert!(out.is_empty());
        let next = f.on_timeout(SimTime(100) + rto, &mut out);
        assert_eq!(out.len(), 8);
        assert!(out.iter().all(|p| p.kind == PacketKind::Header));
        assert_eq!(next, SimTime(100) + rto + rto);
    }

    #[test]
    fn pacer_spaces_pulls() {
        let mut p = PullPacers::new(2, SimTime(10));
        assert_eq!(p.request(0, 1, 0, SimTime(0)), Ok(()));
        assert_eq!(p.request(0, 2, 0, SimTime(3)), Err(Some(SimTime(10))));
        assert_eq!(p.request(0, 3, 0, SimTime(4)), Err(None));
        assert_eq!(p.request(1, 4, 0, SimTime(4)), Ok(()));
        assert_eq!(p.pop(0), Some((2, 0)));
        p.mark_sent(0, SimTime(10));
        assert_eq!(p.next_due(0), Some(SimTime(20)));
        assert_eq!(p.pop(0), Some((3, 0)));
        p.mark_sent(0, SimTime(20));
        assert_eq!(p.next_due(0), None);
        assert_eq!(p.request(0, 5, 0, SimTime(25)), Err(Some(SimTime(30))));
        assert_eq!(p.request(0, 6, 0, SimTime(31)), Err(None));
    }
}
