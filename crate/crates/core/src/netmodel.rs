//! Output queues and the packets moving between them.
//!
//! There are no switch or link objects. A queue serializes packets at the
//! link rate and hands them to the next queue on the packet's route after
//! the propagation delay. Queued packets live in a shared slab and are
//! chained through intrusive lists, so a queue is a few words of state.

use serde::Serialize;

use crate::sim::SimTime;
use crate::topology::{LinkParams, QueueId, Topology};

pub const HEADER_BYTES: u16 = 64;
pub const NONE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[repr(u8)]
pub enum PacketKind {
    Data,
    /// A data packet cut down to its header, either by a full queue or by the
    /// sender as a probe.
    Header,
    Ack,
    Nack,
    Pull,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Packet {
    pub flow: u32,
    /// Sequence number, or the cumulative pull count for pulls.
    pub seq: u32,
    pub size: u16,
    pub kind: PacketKind,
    /// Index of the flow path the packet travels on.
    pub path: u8,
    /// Index into the route of the queue the packet is at or heading to.
    pub hop: u8,
    pub flags: u8,
}

impl Packet {
    /// Travelling from receiver to sender.
    pub const REVERSE: u8 = 1;
    /// Trimmed in the network rather than sent as a header.
    pub const TRIMMED: u8 = 2;
    /// Header sent by the sender in place of data.
    pub const PROBE: u8 = 4;

    pub fn is_reverse(&self) -> bool {
        self.flags & Self::REVERSE != 0
    }

    pub fn is_control(&self) -> bool {
        self.kind != PacketKind::Data
    }

    pub fn trim(&mut self) {
        debug_assert_eq!(self.kind, PacketKind::Data);
        self.kind = PacketKind::Header;
        self.size = HEADER_BYTES;
        self.flags |= Self::TRIMMED;
    }
}

/// Slab of packets with a free list; `next` doubles as the queue links.
#[derive(Default, Debug)]
pub struct PacketPool {
    slots: Vec<Packet>,
    next: Vec<u32>,
    free: u32,
    live: u32,
    peak: u32,
}

impl PacketPool {
    pub fn new() -> Self {
        PacketPool {
            free: NONE,
            ..Default::default()
        }
    }

    pub fn alloc(&mut self, p: Packet) -> u32 {
        self.live += 1;
        self.peak = self.peak.max(self.live);
        if self.free != NONE {
            let i = self.free;
            self.free = self.next[i as usize];
            self.slots[i as usize] = p;
            self.next[i as usize] = NONE;
            i
        } else {
            self.slots.push(p);
            self.next.push(NONE);
            (self.slots.len() - 1) as u32
        }
    }

    pub fn release(&mut self, i: u32) {
        self.live -= 1;
        self.next[i as usize] = self.free;
        self.free = i;
    }

    pub fn get(&self, i: u32) -> &Packet {
        &self.slots[i as usize]
    }

    pub fn get_mut(&mut self, i: u32) -> &mut Packet {
        &mut self.slots[i as usize]
    }

    pub fn live(&self) -> u32 {
        self.live
    }

    pub fn peak(&self) -> u32 {
        self.peak
    }

    pub fn heap_bytes(&self) -> usize {
        self.slots.capacity() * std::mem::size_of::<Packet>() + self.next.capacity() * 4
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueueLimits {
    Unbounded,
    /// Data capacity in bytes and control slots; data beyond capacity is
    /// trimmed to a header.
    Trim { data_bytes: u32, headers: u16 },
    /// Data capacity in bytes and control slots; data beyond capacity is
    /// dropped.
    DropTail { data_bytes: u32, headers: u16 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Accepted,
    Trimmed,
    Dropped,
}

#[derive(Clone, Copy, Debug)]
struct List {
    head: u32,
    tail: u32,
}

impl List {
    const EMPTY: List = List {
        head: NONE,
        tail: NONE,
    };

    fn push(&mut self, pool: &mut PacketPool, i: u32) {
        pool.next[i as usize] = NONE;
        if self.tail == NONE {
            self.head = i;
        } else {
            pool.next[self.tail as usize] = i;
        }
        self.tail = i;
    }

    fn pop(&mut self, pool: &PacketPool) -> Option<u32> {
        if self.head == NONE {
            return None;
        }
        let i = self.head;
        self.head = pool.next[i as usize];
        if self.head == NONE {
            self.tail = NONE;
        }
        Some(i)
    }
}

#[derive(Clone, Copy, Debug)]
struct QueueState {
    data: List,
    headers: List,
    in_service: u32,
    data_bytes: u32,
    header_count: u16,
}

/// Per-queue byte and packet counters, aggregated over the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct QueueStats {
    pub accepted: u64,
    pub trimmed: u64,
    pub dropped_data: u64,
    pub dropped_control: u64,
    pub max_data_bytes: u32,
}

/// All output queues of a network, addressed by [`QueueId`].
#[derive(Debug)]
pub struct Queues {
    states: Vec<QueueState>,
    host_queues: u32,
    host_limits: QueueLimits,
    router_limits: QueueLimits,
    link: LinkParams,
    ser_header: SimTime,
    ser_mtu: SimTime,
    mtu: u16,
    stats: QueueStats,
}

impl Queues {
    /// Server uplinks get `host_limits`, every other queue `router_limits`.
    pub fn new(t: &Topology, mtu: u16, host_limits: QueueLimits, router_limits: QueueLimits) -> Self {
        let idle = QueueState {
            data: List::EMPTY,
            headers: List::EMPTY,
            in_service: NONE,
            data_bytes: 0,
            header_count: 0,
        };
        let link = t.link();
        Queues {
            states: vec![idle; t.queue_count() as usize],
            host_queues: t.servers(),
            host_limits,
            router_limits,
            link,
            ser_header: link.serialization(HEADER_BYTES as u64),
            ser_mtu: link.serialization(mtu as u64),
            mtu,
            stats: QueueStats::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn link(&self) -> LinkParams {
        self.link
    }

    pub fn stats(&self) -> QueueStats {
        self.stats
    }

    pub fn mtu(&self) -> u16 {
        self.mtu
    }

    pub fn serialization(&self, size: u16) -> SimTime {
        if size == HEADER_BYTES {
            self.ser_header
        } else if size == self.mtu {
            self.ser_mtu
        } else {
            self.link.serialization(size as u64)
        }
    }

    fn limits(&self, q: QueueId) -> QueueLimits {
        if q < self.host_queues {
            self.host_limits
        } else {
            self.router_limits
        }
    }

    pub fn is_busy(&self, q: QueueId) -> bool {
        self.states[q as usize].in_service != NONE
    }

    /// Queued data bytes, including a data packet in service.
    pub fn data_bytes(&self, q: QueueId) -> u32 {
        self.states[q as usize].data_bytes
    }

    /// Queued control packets, including one in service.
    pub fn header_count(&self, q: QueueId) -> u16 {
        self.states[q as usize].header_count
    }

    /// Admits packet `i`, trimming or dropping it when the queue is full.
    /// A dropped packet is left in the pool for the caller to release.
    pub fn enqueue(&mut self, pool: &mut PacketPool, q: QueueId, i: u32) -> EnqueueOutcome {
        let limits = self.limits(q);
        let (cap_data, cap_hdr, trims) = match limits {
            QueueLimits::Unbounded => (u32::MAX, u16::MAX, false),
            QueueLimits::Trim { data_bytes, headers } => (data_bytes, headers, true),
            QueueLimits::DropTail { data_bytes, headers } => (data_bytes, headers, false),
        };
        let st = &mut self.states[q as usize];
        let pkt = pool.get_mut(i);
        let mut outcome = EnqueueOutcome::Accepted;
        if pkt.kind == PacketKind::Data {
            if st.data_bytes.saturating_add(pkt.size as u32) <= cap_data {
                st.data_bytes += pkt.size as u32;
                self.stats.max_data_bytes = self.stats.max_data_bytes.max(st.data_bytes);
                st.data.push(pool, i);
                self.stats.accepted += 1;
                return outcome;
            }
            if !trims {
                self.stats.dropped_data += 1;
                return EnqueueOutcome::Dropped;
            }
            pkt.trim();
            outcome = EnqueueOutcome::Trimmed;
        }
        if st.header_count >= cap_hdr {
            if outcome == EnqueueOutcome::Trimmed {
                self.stats.dropped_data += 1;
            } else {
                self.stats.dropped_control += 1;
            }
            return EnqueueOutcome::Dropped;
        }
        st.header_count += 1;
        st.headers.push(pool, i);
        if outcome == EnqueueOutcome::Trimmed {
            self.stats.trimmed += 1;
        } else {
            self.stats.accepted += 1;
        }
        outcome
    }

    /// Starts serving the next packet if `q` is idle, control packets first.
    /// Returns the packet and its serialization time.
    pub fn start_service(&mut self, pool: &PacketPool, q: QueueId) -> Option<(u32, SimTime)> {
        let st = &mut self.states[q as usize];
        if st.in_service != NONE {
            return None;
        }
        let i = st.headers.pop(pool).or_else(|| st.data.pop(pool))?;
        st.in_service = i;
        Some((i, self.serialization(pool.get(i).size)))
    }

    /// Ends service of the packet at the head of `q` and returns it.
    pub fn finish_service(&mut self, pool: &PacketPool, q: QueueId) -> u32 {
        let st = &mut self.states[q as usize];
        let i = st.in_service;
        assert!(i != NONE, "queue {q} finished service while idle");
        st.in_service = NONE;
        let p = pool.get(i);
        if p.kind == PacketKind::Data {
            st.data_bytes -= p.size as u32;
        } else {
            st.header_count -= 1;
        }
        i
    }

    pub fn heap_bytes(&self) -> usize {
        self.states.capacity() * std::mem::size_of::<QueueState>()
    }
}
