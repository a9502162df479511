use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{invalid, Family, GaloisField, RouterId, Topology, TopologyError};

/// `delta` in `q = 4w + delta`, for prime powers `q`.
pub fn slim_fly_delta(q: u32) -> Result<i64, TopologyError> {
    if super::prime_power(q).is_none() {
        return Err(invalid("slimfly", format!("q = {q} is not a prime power")));
    }
    match q % 4 {
        0 => Ok(0),
        1 => Ok(1),
        3 => Ok(-1),
        _ => Err(invalid(
            "slimfly",
            format!("q = {q} is not of the form 4w + delta with delta in {{-1, 0, 1}}"),
        )),
    }
}

/// MMS graph on `2q^2` routers with network degree `(3q - delta) / 2`.
///
/// Routers `(0, x, y)` and `(1, m, c)` over GF(q). Within a subgraph, routers
/// in the same column are joined when their difference lies in the generator
/// set (`X` for subgraph 0, `X'` for subgraph 1); across subgraphs
/// `(0, x, y) ~ (1, m, c)` iff `y = m x + c`.
pub fn build_slim_fly(q: u32, servers_per_router: u32) -> Result<Topology, TopologyError> {
    let delta = slim_fly_delta(q)?;
    if q < 3 {
        return Err(invalid("slimfly", format!("q = {q} is too small")));
    }
    let f = GaloisField::new(q)?;
    let xi = f.primitive_element();
    let w = (q as i64 - delta) / 4;
    let pw = |e: i64| f.pow(xi, e as u32);
    let (x0, x1): (Vec<u32>, Vec<u32>) = match delta {
        1 => (
            (0..(q as i64 - 1) / 2).map(|i| pw(2 * i)).collect(),
            (0..(q as i64 - 1) / 2).map(|i| pw(2 * i + 1)).collect(),
        ),
        -1 => (
            (0..w)
                .map(|i| pw(2 * i))
                .chain((w..2 * w).map(|i| pw(2 * i - 1)))
                .collect(),
            (0..w)
                .map(|i| pw(2 * i + 1))
                .chain((w..2 * w).map(|i| pw(2 * i)))
                .collect(),
        ),
        _ => (
            (0..q as i64 / 2).map(|i| pw(2 * i)).collect(),
            (0..q as i64 / 2).map(|i| pw(2 * i + 1)).collect(),
        ),
    };
    let mut in0 = vec![false; q as usize];
    let mut in1 = vec![false; q as usize];
    x0.iter().for_each(|&v| in0[v as usize] = true);
    x1.iter().for_each(|&v| in1[v as usize] = true);

    let id = |side: u32, a: u32, b: u32| side * q * q + a * q + b;
    let mut edges = Vec::new();
    for a in 0..q {
        for b in 0..q {
            for b2 in b + 1..q {
                let d = f.sub(b, b2);
                if in0[d as usize] {
                    edges.push((id(0, a, b), id(0, a, b2)));
                }
                if in1[d as usize] {
                    edges.push((id(1, a, b), id(1, a, b2)));
                }
            }
        }
    }
    for x in 0..q {
        for m in 0..q {
            for c in 0..q {
                let y = f.add(f.mul(m, x), c);
                edges.push((id(0, x, y), id(1, m, c)));
            }
        }
    }
    let routers = 2 * q * q;
    Topology::from_edges(
        Family::SlimFly { q },
        routers,
        &edges,
        servers_per_router,
        routers,
    )
}

/// Three-stage fat tree from `k`-port routers: `k` pods of `k/2` edge and
/// `k/2` aggregation routers, `(k/2)^2` cores. Routers are numbered edge,
/// aggregation, core; only edge routers carry servers.
pub fn build_fat_tree(k: u32, servers_per_edge: u32) -> Result<Topology, TopologyError> {
    if k < 2 || k % 2 != 0 {
        return Err(invalid("fattree", format!("radix k = {k} must be even and >= 2")));
    }
    let half = k / 2;
    let edge_count = k * half;
    let agg_base = edge_count;
    let core_base = 2 * edge_count;
    let routers = core_base + half * half;
    let mut edges = Vec::new();
    for pod in 0..k {
        for e in 0..half {
            for a in 0..half {
                edges.push((pod * half + e, agg_base + pod * half + a));
            }
        }
        for a in 0..half {
            for c in 0..half {
                edges.push((agg_base + pod * half + a, core_base + a * half + c));
            }
        }
    }
    Topology::from_edges(
        Family::FatTree { k },
        routers,
        &edges,
        servers_per_edge,
        edge_count,
    )
}

struct Graph {
    adj: Vec<Vec<RouterId>>,
}

impl Graph {
    fn new(n: u32, cap: usize) -> Self {
        Graph {
            adj: (0..n).map(|_| Vec::with_capacity(cap)).collect(),
        }
    }

    fn has(&self, u: RouterId, v: RouterId) -> bool {
        self.adj[u as usize].contains(&v)
    }

    fn link(&mut self, u: RouterId, v: RouterId) {
        debug_assert!(u != v && !self.has(u, v));
        self.adj[u as usize].push(v);
        self.adj[v as usize].push(u);
    }

    fn unlink(&mut self, u: RouterId, v: RouterId) {
        let a = &mut self.adj[u as usize];
        a.swap_remove(a.iter().position(|&x| x == v).unwrap());
        let b = &mut self.adj[v as usize];
        b.swap_remove(b.iter().position(|&x| x == u).unwrap());
    }

    fn degree(&self, u: RouterId) -> u32 {
        self.adj[u as usize].len() as u32
    }

    fn random_edge<R: Rng>(&self, rng: &mut R) -> Option<(RouterId, RouterId)> {
        for _ in 0..64 {
            let u = rng.gen_range(0..self.adj.len()) as RouterId;
            let a = &self.adj[u as usize];
            if !a.is_empty() {
                return Some((u, a[rng.gen_range(0..a.len())]));
            }
        }
        None
    }

    fn components(&self) -> Vec<u32> {
        let mut comp = vec![u32::MAX; self.adj.len()];
        let mut next = 0;
        let mut queue = VecDeque::new();
        for s in 0..self.adj.len() {
            if comp[s] != u32::MAX {
                continue;
            }
            comp[s] = next;
            queue.push_back(s as u32);
            while let Some(u) = queue.pop_front() {
                for &v in &self.adj[u as usize] {
                    if comp[v as usize] == u32::MAX {
                        comp[v as usize] = next;
                        queue.push_back(v);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    // Whether `u` and `v` stay connected once edge (u, v) is removed.
    fn on_cycle(&self, u: RouterId, v: RouterId) -> bool {
        let mut seen = vec![false; self.adj.len()];
        let mut stack = vec![u];
        seen[u as usize] = true;
        while let Some(x) = stack.pop() {
            for &y in &self.adj[x as usize] {
                if x == u && y == v {
                    continue;
                }
                if y == v {
                    return true;
                }
                if !seen[y as usize] {
                    seen[y as usize] = true;
                    stack.push(y);
                }
            }
        }
        false
    }

    fn edge_list(&self) -> Vec<(RouterId, RouterId)> {
        let mut out = Vec::new();
        for (u, list) in self.adj.iter().enumerate() {
            for &v in list {
                if (u as RouterId) < v {
                    out.push((u as RouterId, v));
                }
            }
        }
        out
    }
}

// Fills free ports with random non-adjacent pairs; when the remaining free
// ports cannot be paired directly, an existing edge is split to absorb them.
fn random_regular<R: Rng>(n: u32, r: u32, rng: &mut R) -> Option<Graph> {
    let mut g = Graph::new(n, r as usize);
    let mut free: Vec<RouterId> = (0..n).collect();
    let mut stalls = 0u32;
    while !free.is_empty() {
        free.retain(|&u| g.degree(u) < r);
        if free.is_empty() {
            break;
        }
        let mut linked = false;
        if free.len() >= 2 {
            for _ in 0..4 * free.len() {
                let a = free[rng.gen_range(0..free.len())];
                let b = free[rng.gen_range(0..free.len())];
                if a != b && !g.has(a, b) {
                    g.link(a, b);
                    linked = true;
                    break;
                }
            }
            if !linked && free.len() <= 4 * r as usize {
                'scan: for i in 0..free.len() {
                    for j in i + 1..free.len() {
                        if !g.has(free[i], free[j]) {
                            g.link(free[i], free[j]);
                            linked = true;
                            break 'scan;
                        }
                    }
                }
            }
        }
        if linked {
            continue;
        }
        stalls += 1;
        if stalls > 100 * n {
            return None;
        }
        let u = free[0];
        if r - g.degree(u) >= 2 {
            let (x, y) = g.random_edge(rng)?;
            if x != u && y != u && !g.has(u, x) && !g.has(u, y) {
                g.unlink(x, y);
                g.link(u, x);
                g.link(u, y);
            }
        } else {
            let v = *free.get(1)?;
            let (x, y) = g.random_edge(rng)?;
            let fresh = |z: RouterId| z != u && z != v;
            if fresh(x) && fresh(y) && !g.has(u, x) && !g.has(v, y) {
                g.unlink(x, y);
                g.link(u, x);
                g.link(v, y);
            }
        }
    }
    Some(g)
}

// Degree-preserving swaps between components until the graph is connected.
fn repair_connectivity<R: Rng>(g: &mut Graph, rng: &mut R) -> bool {
    for _ in 0..10_000 {
        let comp = g.components();
        let Some(other) = comp.iter().position(|&c| c != comp[0]) else {
            return true;
        };
        let pick = |g: &Graph, c: u32, rng: &mut R| -> Option<(RouterId, RouterId)> {
            let members: Vec<RouterId> = (0..comp.len() as u32)
                .filter(|&u| comp[u as usize] == c)
                .collect();
            for _ in 0..256 {
                let u = *members.choose(rng)?;
                let v = *g.adj[u as usize].choose(rng)?;
                if g.on_cycle(u, v) {
                    return Some((u, v));
                }
            }
            None
        };
        let (Some((a1, a2)), Some((b1, b2))) =
            (pick(g, comp[0], rng), pick(g, comp[other], rng))
        else {
            return false;
        };
        g.unlink(a1, a2);
        g.unlink(b1, b2);
        g.link(a1, b1);
        g.link(a2, b2);
    }
    false
}

/// Random `degree`-regular graph on `routers` routers, connected,
/// deterministic under `seed`.
pub fn build_jellyfish(
    routers: u32,
    degree: u32,
    servers_per_router: u32,
    seed: u64,
) -> Result<Topology, TopologyError> {
    if routers < 2 || degree == 0 || degree >= routers {
        return Err(invalid(
            "jellyfish",
            format!("need 1 <= degree < routers, got {routers} routers of degree {degree}"),
        ));
    }
    if (routers as u64 * degree as u64) % 2 == 1 {
        return Err(invalid(
            "jellyfish",
            format!("routers x degree = {routers} x {degree} must be even"),
        ));
    }
    if degree == 1 && routers > 2 {
        return Err(invalid("jellyfish", "a 1-regular graph on more than 2 routers is disconnected"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..16 {
        let Some(mut g) = random_regular(routers, degree, &mut rng) else {
            continue;
        };
        if repair_connectivity(&mut g, &mut rng) {
            return Topology::from_edges(
                Family::Jellyfish {
                    routers,
                    degree,
                    seed,
                },
                routers,
                &g.edge_list(),
                servers_per_router,
                routers,
            );
        }
    }
    Err(TopologyError::Disconnected("jellyfish"))
}

/// Random `lifts`-lift of the complete graph `K_{degree+1}`: every router
/// of `K_{degree+1}` becomes `lifts` routers and every edge a random perfect
/// matching between the two fibers. `lifts = 1` returns `K_{degree+1}`.
pub fn build_xpander(
    degree: u32,
    lifts: u32,
    servers_per_router: u32,
    seed: u64,
) -> Result<Topology, TopologyError> {
    if degree < 1 || lifts < 1 {
        return Err(invalid(
            "xpander",
            format!("degree ({degree}) and lift count ({lifts}) must be positive"),
        ));
    }
    if degree < 2 && lifts > 1 {
        return Err(invalid("xpander", "lifts of K_2 are disconnected"));
    }
    let base = degree + 1;
    let routers = base * lifts;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<u32> = (0..lifts).collect();
    for _ in 0..64 {
        let mut edges = Vec::with_capacity((routers * degree / 2) as usize);
        for u in 0..base {
            for v in u + 1..base {
                perm.shuffle(&mut rng);
                for (i, &j) in perm.iter().enumerate() {
                    edges.push((u * lifts + i as u32, v * lifts + j));
                }
            }
        }
        let topo = Topology::from_edges(
            Family::Xpander {
                degree,
                lifts,
                seed,
            },
            routers,
            &edges,
            servers_per_router,
            routers,
        )?;
        if topo.is_connected() {
            return Ok(topo);
        }
    }
    Err(TopologyError::Disconnected("xpander"))
}

/// Hamming graph: routers are coordinate vectors, adjacent when they differ
/// in exactly one coordinate.
pub fn build_hyperx(dims: &[u32], servers_per_router: u32) -> Result<Topology, TopologyError> {
    if dims.is_empty() {
        return Err(invalid("hyperx", "at least one dimension is required"));
    }
    if let Some(s) = dims.iter().find(|&&s| s < 2) {
        return Err(invalid("hyperx", format!("dimension size {s} is below 2")));
    }
    let routers = dims
        .iter()
        .try_fold(1u32, |acc, &s| acc.checked_mul(s))
        .ok_or_else(|| invalid("hyperx", "router count overflows"))?;
    let mut strides = Vec::with_capacity(dims.len());
    let mut stride = 1;
    for &s in dims {
        strides.push(stride);
        stride *= s;
    }
    let mut edges = Vec::new();
    for r in 0..routers {
        for (d, &s) in dims.iter().enumerate() {
            let coord = (r / strides[d]) % s;
            for other in coord + 1..s {
                edges.push((r, r + (other - coord) * strides[d]));
            }
        }
    }
    Topology::from_edges(
        Family::HyperX {
            dims: dims.to_vec(),
        },
        routers,
        &edges,
        servers_per_router,
        routers,
    )
}

/// Dragonfly with `a` routers per group, `h` global links per router and
/// `a h + 1` groups. Groups are complete graphs and every pair of groups
/// shares exactly one global link; group `i` reaches group `j` through its
/// global port `(j - i - 1) mod g`, which lives on router `port / h`.
pub fn build_dragonfly(a: u32, h: u32, servers_per_router: u32) -> Result<Topology, TopologyError> {
    if a == 0 || h == 0 {
        return Err(invalid(
            "dragonfly",
            format!("a = {a} and h = {h} must both be positive to place global links"),
        ));
    }
    let groups = a * h + 1;
    let routers = groups * a;
    let mut edges = Vec::new();
    for g in 0..groups {
        for i in 0..a {
            for j in i + 1..a {
                edges.push((g * a + i, g * a + j));
            }
        }
    }
    for gi in 0..groups {
        for gj in gi + 1..groups {
            let port_i = gj - gi - 1;
            let port_j = groups - (gj - gi) - 1;
            edges.push((gi * a + port_i / h, gj * a + port_j / h));
        }
    }
    Topology::from_edges(
        Family::Dragonfly { a, h },
        routers,
        &edges,
        servers_per_router,
        routers,
    )
}
