//! Traffic generation: server pairings, flow sizes and arrival times.
//!
//! Every generator is a pure function of its seed. Pairings and flows use
//! separate ChaCha streams, and each flow consumes exactly two draws, so the
//! same seed yields the same flows at every arrival rate, with arrival
//! times scaled to the window.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::SimTime;
use crate::topology::{RouterId, ServerId, Topology};

const DEFAULT_CDF: &str = include_str!("../data/websearch_cdf.txt");

/// Flows per server per second used when only a flow count is given.
pub const DEFAULT_LAMBDA: f64 = 40.0;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("size distribution line {line}: {reason}")]
    BadCdf { line: usize, reason: String },
    #[error("size distribution is empty")]
    EmptyCdf,
    #[error("could not read size distribution: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid workload: {0}")]
    Invalid(String),
}

/// Discrete flow-size distribution given by `(size, cumulative probability)`
/// points.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SizeDistribution {
    sizes: Vec<u32>,
    cum: Vec<f64>,
}

impl SizeDistribution {
    /// Parses one `size_bytes cum_prob` pair per line; blank lines and lines
    /// starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self, WorkloadError> {
        let mut sizes: Vec<u32> = Vec::new();
        let mut cum: Vec<f64> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| WorkloadError::BadCdf {
                line: n + 1,
                reason: reason.to_string(),
            };
            let mut it = line.split_whitespace();
            let (Some(s), Some(p), None) = (it.next(), it.next(), it.next()) else {
                return Err(bad("expected `size_bytes cum_prob`"));
            };
            let s: u32 = s.parse().map_err(|_| bad("size is not a positive integer"))?;
            let p: f64 = p.parse().map_err(|_| bad("probability is not a number"))?;
            if s == 0 {
                return Err(bad("sizes must be positive"));
            }
            if !(p > 0.0 && p <= 1.0) {
                return Err(bad("cumulative probability outside (0, 1]"));
            }
            if sizes.last().is_some_and(|&l| s <= l) {
                return Err(bad("sizes must be strictly increasing"));
            }
            if cum.last().is_some_and(|&l| p <= l) {
                return Err(bad("cumulative probabilities must be strictly increasing"));
            }
            sizes.push(s);
            cum.push(p);
        }
        match cum.last() {
            None => Err(WorkloadError::EmptyCdf),
            Some(&l) if (l - 1.0).abs() > 1e-9 => Err(WorkloadError::BadCdf {
                line: text.lines().count(),
                reason: format!("final cumulative probability is {l}, not 1"),
            }),
            _ => {
                *cum.last_mut().unwrap() = 1.0;
                Ok(SizeDistribution { sizes, cum })
            }
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, WorkloadError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn sizes(&self) -> &[u32] {
        &self.sizes
    }

    pub fn probability(&self, i: usize) -> f64 {
        self.cum[i] - if i == 0 { 0.0 } else { self.cum[i - 1] }
    }

    pub fn mean(&self) -> f64 {
        (0..self.sizes.len())
            .map(|i| self.sizes[i] as f64 * self.probability(i))
            .sum()
    }

    /// Expected packets per flow with `mtu`-byte packets.
    pub fn mean_packets(&self, mtu: u32) -> f64 {
        (0..self.sizes.len())
            .map(|i| self.sizes[i].div_ceil(mtu) as f64 * self.probability(i))
            .sum()
    }

    /// Size for a uniform draw `u` in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> u32 {
        let i = self.cum.partition_point(|&c| c <= u);
        self.sizes[i.min(self.sizes.len() - 1)]
    }

    /// Index of the smallest listed size that is at least `size`.
    pub fn bucket_of(&self, size: u32) -> usize {
        self.sizes
            .partition_point(|&s| s < size)
            .min(self.sizes.len() - 1)
    }
}

impl Default for SizeDistribution {
    fn default() -> Self {
        Self::parse(DEFAULT_CDF).expect("bundled distribution is valid")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowSpec {
    pub arrival: SimTime,
    pub src: ServerId,
    pub dst: ServerId,
    pub size: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "lowercase")]
pub enum Pattern {
    Permutation,
    /// A fraction of sources send to the servers of one hotspot router.
    Skewed {
        fraction: f64,
        hotspot: Option<RouterId>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub pattern: Pattern,
    /// Mean flows per server; fractional counts are spread over servers.
    pub flows_per_server: f64,
    pub window: SimTime,
    pub seed: u64,
}

impl WorkloadSpec {
    /// Resolves any two of flows per server, arrival rate and window into a
    /// spec. With only a flow count the window follows from
    /// [`DEFAULT_LAMBDA`]; with only a rate the window must be given.
    pub fn resolve(
        pattern: Pattern,
        flows_per_server: Option<f64>,
        lambda: Option<f64>,
        window: Option<SimTime>,
        seed: u64,
    ) -> Result<Self, WorkloadError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(v)
            } else {
                Err(WorkloadError::Invalid(format!("{name} must be positive, got {v}")))
            }
        };
        let (n, w) = match (flows_per_server, lambda, window) {
            (Some(_), Some(_), Some(_)) => {
                return Err(WorkloadError::Invalid(
                    "give at most two of flows per server, lambda and window".into(),
                ))
            }
            (Some(n), l, None) => {
                let l = positive("lambda", l.unwrap_or(DEFAULT_LAMBDA))?;
                let n = positive("flows per server", n)?;
                (n, SimTime::from_secs_f64(n / l))
            }
            (Some(n), None, Some(w)) => (positive("flows per server", n)?, w),
            (None, Some(l), Some(w)) => (positive("lambda", l)? * w.as_secs_f64(), w),
            (None, _, None) | (None, None, Some(_)) => {
                return Err(WorkloadError::Invalid(
                    "give flows per server, or lambda together with a window".into(),
                ))
            }
        };
        if w == SimTime::ZERO {
            return Err(WorkloadError::Invalid("injection window must be positive".into()));
        }
        if let Pattern::Skewed { fraction, .. } = pattern {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(WorkloadError::Invalid(format!(
                    "hotspot fraction must lie in (0, 1], got {fraction}"
                )));
            }
        }
        Ok(WorkloadSpec {
            pattern,
            flows_per_server: n,
            window: w,
            seed,
        })
    }

    /// Flows per server per second.
    pub fn lambda(&self) -> f64 {
        self.flows_per_server / self.window.as_secs_f64()
    }

    pub fn total_flows(&self, servers: u32) -> u64 {
        (self.flows_per_server * servers as f64).round() as u64
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// A random destination for every server such that sources and
/// destinations sit on different routers; index = source server.
pub fn generate_permutation(t: &Topology, seed: u64) -> Vec<ServerId> {
    let n = t.servers();
    assert!(t.attached_routers() >= 2, "a permutation needs two server-carrying routers");
    let mut rng = stream(seed, 1);
    let mut dst: Vec<ServerId> = (0..n).collect();
    dst.shuffle(&mut rng);
    let ok = |s: u32, d: u32| t.router_of(s) != t.router_of(d);
    for s in 0..n {
        while !ok(s, dst[s as usize]) {
            let o = rng.gen_range(0..n);
            if ok(s, dst[o as usize]) && ok(o, dst[s as usize]) {
                dst.swap(s as usize, o as usize);
            }
        }
    }
    dst
}

/// Redirects `round(fraction * N)` randomly chosen sources to uniformly
/// chosen servers of the hotspot router (random when not given).
pub fn apply_hotspot(
    t: &Topology,
    pairing: &mut [ServerId],
    fraction: f64,
    hotspot: Option<RouterId>,
    seed: u64,
) -> Result<RouterId, WorkloadError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(WorkloadError::Invalid(format!(
            "hotspot fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let mut rng = stream(seed, 2);
    let hot = match hotspot {
        Some(r) if r < t.attached_routers() => r,
        Some(r) => {
            return Err(WorkloadError::Invalid(format!(
                "hotspot router {r} carries no servers"
            )))
        }
        None => rng.gen_range(0..t.attached_routers()),
    };
    let targets = t.servers_of(hot);
    let mut sources: Vec<ServerId> = (0..t.servers()).collect();
    sources.shuffle(&mut rng);
    let count = (fraction * t.servers() as f64).round() as usize;
    for &s in &sources[..count] {
        let choices = targets.len() as u32 - u32::from(targets.contains(&s));
        if choices == 0 {
            continue;
        }
        let mut d = targets.start + rng.gen_range(0..choices);
        if targets.contains(&s) && d >= s {
            d += 1;
        }
        pairing[s as usize] = d;
    }
    Ok(hot)
}

/// The pairing selected by `spec.pattern`.
pub fn generate_pairing(t: &Topology, spec: &WorkloadSpec) -> Result<Vec<ServerId>, WorkloadError> {
    let mut pairing = generate_permutation(t, spec.seed);
    if let Pattern::Skewed { fraction, hotspot } = spec.pattern {
        apply_hotspot(t, &mut pairing, fraction, hotspot, spec.seed)?;
    }
    Ok(pairing)
}

/// Flows for `pairing`, sorted by arrival; a flow's id is its index.
pub fn generate_flows(
    pairing: &[ServerId],
    spec: &WorkloadSpec,
    sizes: &SizeDistribution,
) -> Vec<FlowSpec> {
    let n = pairing.len() as u32;
    let total = spec.total_flows(n);
    let base = total / n as u64;
    let extra = (total % n as u64) as usize;
    let mut rng = stream(spec.seed, 3);
    let mut order: Vec<u32> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut bonus = vec![false; n as usize];
    for &s in &order[..extra] {
        bonus[s as usize] = true;
    }
    let window = spec.window.as_ps() as u128;
    let mut flows = Vec::with_capacity(total as usize);
    for s in 0..n {
        for _ in 0..base + u64::from(bonus[s as usize]) {
            let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
            let a = rng.next_u64() >> 11;
            flows.push(FlowSpec {
                arrival: SimTime(((a as u128 * window) >> 53) as u64),
                src: s,
                dst: pairing[s as usize],
                size: sizes.quantile(u),
            });
        }
    }
    flows.sort_by_key(|f| f.arrival);
    flows
}
