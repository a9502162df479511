//! Shared fixtures for the benchmarks.

use megasim_core::experiment::Prepared;
use megasim_core::{Experiment, FamilySpec, Pattern, SimConfig, SizeDistribution, Topology, TopologySpec, WorkloadSpec};

pub fn slim_fly(q: u32, p: u32) -> Topology {
    let mut s = TopologySpec::new(FamilySpec::SlimFly { q });
    s.servers_per_router = Some(p);
    s.build().expect("valid Slim Fly")
}

/// Permutation workload on a Slim Fly, ready to run.
pub fn slim_fly_experiment(q: u32, p: u32, flows_per_server: f64) -> (Experiment, Prepared) {
    let mut topo = TopologySpec::new(FamilySpec::SlimFly { q });
    topo.servers_per_router = Some(p);
    let workload = WorkloadSpec::resolve(Pattern::Permutation, Some(flows_per_server), None, None, 1)
        .expect("valid workload");
    let e = Experiment::new(topo, workload, SizeDistribution::default(), SimConfig::default());
    let prepared = e.prepare().expect("experiment builds");
    (e, prepared)
}

/// Deterministic, well-spread event times.
pub fn scattered_times(n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| i.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 40).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_build() {
        assert_eq!(slim_fly(5, 2).servers(), 100);
        let (_, p) = slim_fly_experiment(5, 2, 1.0);
        assert_eq!(p.flows.len(), 100);
        let t = scattered_times(1000);
        assert_eq!(t.len(), 1000);
        assert!(t.iter().any(|&x| x != t[0]));
    }
}
