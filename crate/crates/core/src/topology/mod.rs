//! Router graphs for the supported network families.
//!
//! A [`Topology`] is an undirected simple graph over routers stored as a
//! compressed adjacency array with sorted neighbor lists, plus the servers
//! attached to it. Servers hang off a prefix of the routers (all of them
//! except for fat trees, where only edge routers carry servers), `p` per
//! router. Server `s` is attached to router `s / p`.

mod galois;
mod generators;

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::SimTime;

pub use galois::{prime_power, GaloisField};
pub use generators::{
    build_dragonfly, build_fat_tree, build_hyperx, build_jellyfish, build_slim_fly,
    build_xpander, slim_fly_delta,
};

pub type RouterId = u32;
pub type ServerId = u32;
/// Index of a queue in the network-wide queue table.
pub type QueueId = u32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("invalid {family} parameters: {reason}")]
    InvalidParameter { family: &'static str, reason: String },
    #[error("edge ({0}, {1}) is a self-loop")]
    SelfLoop(RouterId, RouterId),
    #[error("edge ({0}, {1}) appears more than once")]
    DuplicateEdge(RouterId, RouterId),
    #[error("edge ({0}, {1}) references a router outside 0..{2}")]
    UnknownRouter(RouterId, RouterId, u32),
    #[error("could not build a connected {0} instance")]
    Disconnected(&'static str),
}

fn invalid(family: &'static str, reason: impl Into<String>) -> TopologyError {
    TopologyError::InvalidParameter {
        family,
        reason: reason.into(),
    }
}

/// Link characteristics shared by every link in the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkParams {
    pub rate_bps: u64,
    /// Propagation delay of one hop.
    pub delay: SimTime,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams {
            rate_bps: 10_000_000_000,
            delay: SimTime::from_ns(500),
        }
    }
}

impl LinkParams {
    /// Time to put `bytes` on the wire, rounded up to the next picosecond.
    pub fn serialization(&self, bytes: u64) -> SimTime {
        let ps = (bytes as u128 * 8 * 1_000_000_000_000).div_ceil(self.rate_bps as u128);
        SimTime(ps as u64)
    }
}

/// Which generator produced a topology, with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Family {
    SlimFly { q: u32 },
    FatTree { k: u32 },
    Jellyfish { routers: u32, degree: u32, seed: u64 },
    Xpander { degree: u32, lifts: u32, seed: u64 },
    HyperX { dims: Vec<u32> },
    Dragonfly { a: u32, h: u32 },
    Custom,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::SlimFly { .. } => "slimfly",
            Family::FatTree { .. } => "fattree",
            Family::Jellyfish { .. } => "jellyfish",
            Family::Xpander { .. } => "xpander",
            Family::HyperX { .. } => "hyperx",
            Family::Dragonfly { .. } => "dragonfly",
            Family::Custom => "custom",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Topology {
    family: Family,
    offsets: Vec<u32>,
    neighbors: Vec<RouterId>,
    servers_per_router: u32,
    attached_routers: u32,
    link: LinkParams,
}

impl Topology {
    /// Builds a topology from an undirected edge list. Servers are attached
    /// to routers `0..attached_routers`, `servers_per_router` each.
    pub fn from_edges(
        family: Family,
        routers: u32,
        edges: &[(RouterId, RouterId)],
        servers_per_router: u32,
        attached_routers: u32,
    ) -> Result<Self, TopologyError> {
        let mut degree = vec![0u32; routers as usize];
        for &(u, v) in edges {
            if u >= routers || v >= routers {
                return Err(TopologyError::UnknownRouter(u, v, routers));
            }
            if u == v {
                return Err(TopologyError::SelfLoop(u, v));
            }
            degree[u as usize] += 1;
            degree[v as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(routers as usize + 1);
        offsets.push(0u32);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill: Vec<u32> = offsets[..routers as usize].to_vec();
        let mut neighbors = vec![0; edges.len() * 2];
        for &(u, v) in edges {
            neighbors[fill[u as usize] as usize] = v;
            fill[u as usize] += 1;
            neighbors[fill[v as usize] as usize] = u;
            fill[v as usize] += 1;
        }
        for r in 0..routers as usize {
            let list = &mut neighbors[offsets[r] as usize..offsets[r + 1] as usize];
            list.sort_unstable();
            if let Some(w) = list.windows(2).find(|w| w[0] == w[1]) {
                return Err(TopologyError::DuplicateEdge(r as u32, w[0]));
            }
        }
        Ok(Topology {
            family,
            offsets,
            neighbors,
            servers_per_router,
            attached_routers: attached_routers.min(routers),
            link: LinkParams::default(),
        })
    }

    pub fn with_link(mut self, link: LinkParams) -> Self {
        self.link = link;
        self
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn link(&self) -> LinkParams {
        self.link
    }

    pub fn routers(&self) -> u32 {
        self.offsets.len() as u32 - 1
    }

    /// Number of undirected inter-router links.
    pub fn links(&self) -> u64 {
        self.neighbors.len() as u64 / 2
    }

    pub fn servers_per_router(&self) -> u32 {
        self.servers_per_router
    }

    /// Routers that carry servers: `0..attached_routers()`.
    pub fn attached_routers(&self) -> u32 {
        self.attached_routers
    }

    pub fn servers(&self) -> u32 {
        self.attached_routers * self.servers_per_router
    }

    /// Inter-router cables plus server cables.
    pub fn cables(&self) -> u64 {
        self.links() + self.servers() as u64
    }

    pub fn neighbors(&self, r: RouterId) -> &[RouterId] {
        &self.neighbors[self.offsets[r as usize] as usize..self.offsets[r as usize + 1] as usize]
    }

    pub fn degree(&self, r: RouterId) -> u32 {
        self.offsets[r as usize + 1] - self.offsets[r as usize]
    }

    pub fn max_degree(&self) -> u32 {
        (0..self.routers()).map(|r| self.degree(r)).max().unwrap_or(0)
    }

    pub fn is_adjacent(&self, a: RouterId, b: RouterId) -> bool {
        self.neighbors(a).binary_search(&b).is_ok()
    }

    /// Position of `b` in `a`'s neighbor list.
    pub fn neighbor_index(&self, a: RouterId, b: RouterId) -> Option<u32> {
        self.neighbors(a).binary_search(&b).ok().map(|i| i as u32)
    }

    pub fn router_of(&self, s: ServerId) -> RouterId {
        s / self.servers_per_router
    }

    pub fn servers_of(&self, r: RouterId) -> std::ops::Range<ServerId> {
        if r < self.attached_routers {
            r * self.servers_per_router..(r + 1) * self.servers_per_router
        } else {
            0..0
        }
    }

    /// Iterates undirected edges with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (RouterId, RouterId)> + '_ {
        (0..self.routers()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .filter(move |&&v| u < v)
                .map(move |&v| (u, v))
        })
    }

    // Queue layout: server uplinks, then router-to-server downlinks, then one
    // queue per directed inter-router link in adjacency order.

    pub fn queue_count(&self) -> u32 {
        2 * self.servers() + self.neighbors.len() as u32
    }

    pub fn uplink_queue(&self, s: ServerId) -> QueueId {
        s
    }

    pub fn downlink_queue(&self, s: ServerId) -> QueueId {
        self.servers() + s
    }

    pub fn link_queue(&self, from: RouterId, to: RouterId) -> Option<QueueId> {
        let i = self.neighbor_index(from, to)?;
        Some(2 * self.servers() + self.offsets[from as usize] + i)
    }

    /// True for queues that sit in a router (everything but server uplinks).
    pub fn is_router_queue(&self, q: QueueId) -> bool {
        q >= self.servers()
    }

    /// Hop distances from `src`; `u16::MAX` marks unreachable routers.
    pub fn bfs_distances(&self, src: RouterId, dist: &mut Vec<u16>, frontier: &mut VecDeque<u32>) {
        dist.clear();
        dist.resize(self.routers() as usize, u16::MAX);
        frontier.clear();
        dist[src as usize] = 0;
        frontier.push_back(src);
        while let Some(u) = frontier.pop_front() {
            let du = dist[u as usize];
            for &v in self.neighbors(u) {
                if dist[v as usize] == u16::MAX {
                    dist[v as usize] = du + 1;
                    frontier.push_back(v);
                }
            }
        }
    }

    pub fn is_connected(&self) -> bool {
        if self.routers() == 0 {
            return true;
        }
        let mut dist = Vec::new();
        let mut fr = VecDeque::new();
        self.bfs_distances(0, &mut dist, &mut fr);
        dist.iter().all(|&d| d != u16::MAX)
    }

    /// Connectivity, degree histogram, diameter and element counts.
    pub fn validate(&self) -> ValidationReport {
        let mut hist = BTreeMap::new();
        for r in 0..self.routers() {
            *hist.entry(self.degree(r)).or_insert(0u32) += 1;
        }
        let mut dist = Vec::new();
        let mut fr = VecDeque::new();
        let mut connected = true;
        let mut diameter = 0u32;
        for r in 0..self.routers() {
            self.bfs_distances(r, &mut dist, &mut fr);
            for &d in &dist {
                if d == u16::MAX {
                    connected = false;
                } else {
                    diameter = diameter.max(d as u32);
                }
            }
            if !connected {
                break;
            }
        }
        ValidationReport {
            connected,
            degree_histogram: hist,
            diameter: connected.then_some(diameter),
            routers: self.routers(),
            links: self.links(),
            servers: self.servers(),
            cables: self.cables(),
        }
    }

    /// Writes one `u v` line per undirected edge, 0-indexed, `u < v`.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (u, v) in self.edges() {
            writeln!(w, "{u} {v}")?;
        }
        Ok(())
    }

    /// Bytes held by the adjacency arrays.
    pub fn heap_bytes(&self) -> usize {
        self.offsets.capacity() * 4 + self.neighbors.capacity() * 4
    }

    /// Router count, network degree and concentration of a Jellyfish built
    /// from the same routers, cables and servers.
    pub fn equivalent_jellyfish(&self) -> (u32, u32, u32) {
        let n = self.routers();
        let mut degree = (2 * self.links() / n as u64) as u32;
        if (n as u64 * degree as u64) % 2 == 1 {
            degree -= 1;
        }
        (n, degree, self.servers() / n)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub connected: bool,
    pub degree_histogram: BTreeMap<u32, u32>,
    /// `None` when the graph is disconnected.
    pub diameter: Option<u32>,
    pub routers: u32,
    pub links: u64,
    pub servers: u32,
    pub cables: u64,
}

/// `p = ceil(f * k' / 2)`: servers per router giving oversubscription `f`
/// on a router with network degree `k'`.
pub fn concentration_for_oversubscription(degree: u32, factor: f64) -> u32 {
    (factor * degree as f64 / 2.0).ceil() as u32
}

/// A complete description of a topology to generate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub family: FamilySpec,
    /// Servers per router; when absent it follows from `oversubscription`.
    pub servers_per_router: Option<u32>,
    pub oversubscription: f64,
    pub seed: u64,
    pub link: LinkParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum FamilySpec {
    SlimFly { q: u32 },
    FatTree { k: u32 },
    Jellyfish { routers: u32, degree: u32 },
    Xpander { degree: u32, lifts: u32 },
    HyperX { dims: Vec<u32> },
    Dragonfly { a: u32, h: u32 },
}

impl FamilySpec {
    /// Network degree of the generated routers (maximum for fat trees).
    pub fn network_degree(&self) -> Result<u32, TopologyError> {
        Ok(match self {
            FamilySpec::SlimFly { q } => {
                let delta = slim_fly_delta(*q)?;
                ((3 * *q as i64 - delta) / 2) as u32
            }
            FamilySpec::FatTree { k } => *k,
            FamilySpec::Jellyfish { degree, .. } | FamilySpec::Xpander { degree, .. } => *degree,
            FamilySpec::HyperX { dims } => dims.iter().map(|s| s.saturating_sub(1)).sum(),
            FamilySpec::Dragonfly { a, h } => a.saturating_sub(1) + h,
        })
    }
}

impl TopologySpec {
    pub fn new(family: FamilySpec) -> Self {
        TopologySpec {
            family,
            servers_per_router: None,
            oversubscription: 1.0,
            seed: 1,
            link: LinkParams::default(),
        }
    }

    pub fn concentration(&self) -> Result<u32, TopologyError> {
        if let Some(p) = self.servers_per_router {
            return Ok(p);
        }
        if !(self.oversubscription >= 1.0) {
            return Err(invalid(
                "oversubscription",
                format!("factor {} must be at least 1", self.oversubscription),
            ));
        }
        // Fat tree edge routers have k/2 uplinks, the rest have k' links.
        let degree = self.family.network_degree()?;
        Ok(concentration_for_oversubscription(degree, self.oversubscription))
    }

    pub fn build(&self) -> Result<Topology, TopologyError> {
        let p = self.concentration()?;
        let topo = match &self.family {
            FamilySpec::SlimFly { q } => build_slim_fly(*q, p)?,
            FamilySpec::FatTree { k } => build_fat_tree(*k, p)?,
            FamilySpec::Jellyfish { routers, degree } => {
                build_jellyfish(*routers, *degree, p, self.seed)?
            }
            FamilySpec::Xpander { degree, lifts } => build_xpander(*degree, *lifts, p, self.seed)?,
            FamilySpec::HyperX { dims } => build_hyperx(dims, p)?,
            FamilySpec::Dragonfly { a, h } => build_dragonfly(*a, *h, p)?,
        };
        Ok(topo.with_link(self.link))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Topology {
        Topology::from_edges(Family::Custom, 3, &[(0, 1), (1, 2)], 1, 3).unwrap()
    }

    #[test]
    fn from_edges_rejects_bad_input() {
        assert_eq!(
            Topology::from_edges(Family::Custom, 2, &[(0, 0)], 1, 2).unwrap_err(),
            TopologyError::SelfLoop(0, 0)
        );
        assert!(matches!(
            Topology::from_edges(Family::Custom, 2, &[(0, 1), (1, 0)], 1, 2),
            Err(TopologyError::DuplicateEdge(..))
        ));
        assert!(matches!(
            Topology::from_edges(Family::Custom, 2, &[(0, 2)], 1, 2),
            Err(TopologyError::UnknownRouter(..))
        ));
    }

    #[test]
    fn disconnected_graph_is_reported() {
        let t = Topology::from_edges(Family::Custom, 4, &[(0, 1), (2, 3)], 1, 4).unwrap();
        let rep = t.validate();
        assert!(!rep.connected);
        assert_eq!(rep.diameter, None);
    }

    #[test]
    fn degree_sum_is_twice_edge_count() {
        let t = path3();
        let sum: u32 = (0..3).map(|r| t.degree(r)).sum();
        assert_eq!(sum as u64, 2 * t.links());
        assert_eq!(t.validate().diameter, Some(2));
    }

    #[test]
    fn queue_layout_is_dense_and_distinct() {
        let t = path3();
        let mut ids = vec![];
        for s in 0..t.servers() {
            ids.push(t.uplink_queue(s));
            ids.push(t.downlink_queue(s));
        }
        for (u, v) in t.edges().collect::<Vec<_>>() {
            ids.push(t.link_queue(u, v).unwrap());
            ids.push(t.link_queue(v, u).unwrap());
        }
        ids.sort();
        assert_eq!(ids, (0..t.queue_count()).collect::<Vec<_>>());
        assert_eq!(t.link_queue(0, 2), None);
    }

    #[test]
    fn edge_list_export() {
        let mut out = Vec::new();
        path3().write_edge_list(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "0 1\n1 2\n");
    }

    #[test]
    fn serialization_time_is_exact() {
        let link = LinkParams::default();
        assert_eq!(link.serialization(9000), SimTime::from_ns(7_200));
        assert_eq!(link.serialization(64), SimTime::from_ps(51_200));
    }

    #[test]
    fn oversubscribed_concentration() {
        assert_eq!(concentration_for_oversubscription(17, 5.0), 43);
        assert_eq!(concentration_for_oversubscription(35, 5.0), 88);
        assert_eq!(concentration_for_oversubscription(79, 5.0), 198);
        assert_eq!(concentration_for_oversubscription(12, 1.0), 6);
    }
}
