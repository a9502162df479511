//! Shortest-path routing tables and per-flow route construction.
//!
//! For every ordered router pair `(r, d)` the tables hold the ECMP set: the
//! neighbors of `r` one hop closer to `d`. Sets are stored as neighbor
//! indices in one compressed array indexed by `d * N_r + r`, so nothing is
//! kept per server pair and routes exist only while their flow is active.
//! Flows that find fewer shortest paths than they want can top up with
//! paths one hop longer.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{QueueId, RouterId, ServerId, Topology};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RoutingError {
    #[error("topology is disconnected: router {0} cannot reach router {1}")]
    Disconnected(RouterId, RouterId),
    #[error("routers {0} and {1} are not adjacent")]
    NotAdjacent(RouterId, RouterId),
    #[error("router path must run from router {expected_src} to router {expected_dst}")]
    WrongEndpoints {
        expected_src: RouterId,
        expected_dst: RouterId,
    },
    #[error("router path is empty")]
    EmptyPath,
}

/// Which paths a flow may spread its packets over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathPolicy {
    /// Shortest paths only.
    Shortest,
    /// Shortest paths, topped up with paths one hop longer when there are
    /// fewer shortest paths than the flow wants.
    #[default]
    Detour,
}

#[derive(Clone, Debug)]
pub struct RoutingTables {
    routers: u32,
    offsets: Vec<u32>,
    hops: Vec<u16>,
    dist: Vec<u8>,
}

impl RoutingTables {
    /// One BFS per destination; the ECMP set of `r` towards `d` keeps the
    /// neighbors whose distance to `d` is one less than `r`'s.
    pub fn compute(t: &Topology) -> Result<Self, RoutingError> {
        let n = t.routers() as usize;
        assert!(t.max_degree() <= u16::MAX as u32 + 1);
        let mut offsets = Vec::with_capacity(n * n + 1);
        let mut hops = Vec::with_capacity(n * n);
        let mut dist_table = Vec::with_capacity(n * n);
        let mut dist = Vec::new();
        let mut frontier = VecDeque::new();
        offsets.push(0u32);
        for d in 0..n as u32 {
            t.bfs_distances(d, &mut dist, &mut frontier);
            for r in 0..n as u32 {
                let dr = dist[r as usize];
                if dr == u16::MAX {
                    return Err(RoutingError::Disconnected(r, d));
                }
                assert!(dr < u8::MAX as u16, "diameter beyond 254 hops");
                dist_table.push(dr as u8);
                if dr > 0 {
                    for (i, &v) in t.neighbors(r).iter().enumerate() {
                        if dist[v as usize] + 1 == dr {
                            hops.push(i as u16);
                        }
                    }
                }
                let end = u32::try_from(hops.len()).expect("next-hop table exceeds 2^32 entries");
                offsets.push(end);
            }
        }
        hops.shrink_to_fit();
        Ok(RoutingTables {
            routers: n as u32,
            offsets,
            hops,
            dist: dist_table,
        })
    }

    pub fn routers(&self) -> u32 {
        self.routers
    }

    /// Non-empty ECMP sets, `N_r (N_r - 1)` for a connected graph. Rows of a
    /// router towards itself are empty and not counted.
    pub fn entry_count(&self) -> u64 {
        let n = self.routers as u64;
        n * n.saturating_sub(1)
    }

    /// Total next-hop references over all entries.
    pub fn next_hop_count(&self) -> u64 {
        self.hops.len() as u64
    }

    pub fn distance(&self, from: RouterId, to: RouterId) -> u32 {
        self.dist[self.slot(from, to)] as u32
    }

    /// Indices into `t.neighbors(from)` of the next hops towards `to`.
    pub fn next_hops(&self, from: RouterId, to: RouterId) -> &[u16] {
        let i = self.slot(from, to);
        &self.hops[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }

    pub fn heap_bytes(&self) -> usize {
        self.offsets.capacity() * 4 + self.hops.capacity() * 2 + self.dist.capacity()
    }

    fn slot(&self, from: RouterId, to: RouterId) -> usize {
        to as usize * self.routers as usize + from as usize
    }

    /// Number of shortest paths from `from` to `to`, saturating at `cap`.
    pub fn count_paths(&self, t: &Topology, from: RouterId, to: RouterId, cap: u64) -> u64 {
        if from == to {
            return 1;
        }
        let mut total = 0;
        for &i in self.next_hops(from, to) {
            let v = t.neighbors(from)[i as usize];
            total += self.count_paths(t, v, to, cap - total);
            if total >= cap {
                return cap;
            }
        }
        total
    }

    /// Up to `k` distinct shortest router paths, both endpoints included.
    /// All paths are returned when there are at most `k`; otherwise distinct
    /// paths are drawn by descending through uniformly chosen next hops.
    pub fn sample_paths<R: Rng>(
        &self,
        t: &Topology,
        src: RouterId,
        dst: RouterId,
        k: usize,
        rng: &mut R,
    ) -> Vec<Vec<RouterId>> {
        assert!(k >= 1);
        if src == dst {
            return vec![vec![src]];
        }
        let mut out = Vec::with_capacity(k);
        if self.count_paths(t, src, dst, k as u64 + 1) <= k as u64 {
            let mut prefix = vec![src];
            self.enumerate(t, dst, &mut prefix, &mut out);
            return out;
        }
        let len = self.distance(src, dst) as usize + 1;
        while out.len() < k {
            let mut path = Vec::with_capacity(len);
            let mut at = src;
            path.push(at);
            while at != dst {
                at = self.descend(t, at, dst, rng);
                path.push(at);
            }
            if !out.contains(&path) {
                out.push(path);
            }
        }
        out
    }

    /// Like [`sample_paths`](Self::sample_paths), then under
    /// [`PathPolicy::Detour`] adds distinct paths one hop longer until there
    /// are `k` or no new ones turn up. Shortest paths come first.
    pub fn sample_paths_with<R: Rng>(
        &self,
        t: &Topology,
        src: RouterId,
        dst: RouterId,
        k: usize,
        policy: PathPolicy,
        rng: &mut R,
    ) -> Vec<Vec<RouterId>> {
        let mut out = self.sample_paths(t, src, dst, k, rng);
        if policy == PathPolicy::Detour && src != dst {
            self.add_detours(t, src, dst, k, &mut out, rng);
        }
        out
    }

    // A detour descends to some router, steps to a neighbor at the same
    // distance from `dst`, then descends again. Distances strictly fall
    // except for that one step, so the path never revisits a router.
    fn add_detours<R: Rng>(
        &self,
        t: &Topology,
        src: RouterId,
        dst: RouterId,
        k: usize,
        out: &mut Vec<Vec<RouterId>>,
        rng: &mut R,
    ) {
        let d = self.distance(src, dst) as usize;
        let mut attempts = 0;
        while out.len() < k && attempts < 16 * k {
            attempts += 1;
            let mut path = Vec::with_capacity(d + 2);
            let mut at = src;
            path.push(at);
            for _ in 0..rng.gen_range(0..d) {
                at = self.descend(t, at, dst, rng);
                path.push(at);
            }
            let level = self.distance(at, dst);
            let mut pick = None;
            let mut seen = 0;
            for &v in t.neighbors(at) {
                if self.distance(v, dst) == level {
                    seen += 1;
                    if rng.gen_range(0..seen) == 0 {
                        pick = Some(v);
                    }
                }
            }
            let Some(v) = pick else { continue };
            at = v;
            path.push(at);
            while at != dst {
                at = self.descend(t, at, dst, rng);
                path.push(at);
            }
            if !out.contains(&path) {
                out.push(path);
            }
        }
    }

    fn descend<R: Rng>(&self, t: &Topology, at: RouterId, dst: RouterId, rng: &mut R) -> RouterId {
        let set = self.next_hops(at, dst);
        t.neighbors(at)[set[rng.gen_range(0..set.len())] as usize]
    }

    fn enumerate(
        &self,
        t: &Topology,
        dst: RouterId,
        prefix: &mut Vec<RouterId>,
        out: &mut Vec<Vec<RouterId>>,
    ) {
        let at = *prefix.last().unwrap();
        if at == dst {
            out.push(prefix.clone());
            return;
        }
        for &i in self.next_hops(at, dst) {
            prefix.push(t.neighbors(at)[i as usize]);
            self.enumerate(t, dst, prefix, out);
            prefix.pop();
        }
    }
}

/// The queues a packet visits, in order. The last queue is the link into the
/// destination server.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Route {
    pub queues: Vec<QueueId>,
}

impl Route {
    pub fn len(&self) -> usize {
        self.queues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queues.is_empty()
    }
}

/// `[uplink(src)] + [link(a -> b) for each router hop] + [downlink(dst)]`.
pub fn materialize_route(
    t: &Topology,
    router_path: &[RouterId],
    src: ServerId,
    dst: ServerId,
) -> Result<Route, RoutingError> {
    let (first, last) = match router_path {
        [] => return Err(RoutingError::EmptyPath),
        [f, .., l] => (*f, *l),
        [f] => (*f, *f),
    };
    let (rs, rd) = (t.router_of(src), t.router_of(dst));
    if first != rs || last != rd {
        return Err(RoutingError::WrongEndpoints {
            expected_src: rs,
            expected_dst: rd,
        });
    }
    let mut queues = Vec::with_capacity(router_path.len() + 1);
    queues.push(t.uplink_queue(src));
    for w in router_path.windows(2) {
        queues.push(t.link_queue(w[0], w[1]).ok_or(RoutingError::NotAdjacent(w[0], w[1]))?);
    }
    queues.push(t.downlink_queue(dst));
    Ok(Route { queues })
}
