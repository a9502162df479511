use std::collections::{HashSet, VecDeque};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use megasim_core::{
    EventQueue, FamilySpec, FlowSpec, PathPolicy, RoutingTables, SimConfig, SimTime, Simulation, SizeDistribution, StopReason,
    Topology, TopologySpec,
};

fn bfs(t: &Topology, src: u32) -> Vec<u32> {
    let mut dist = vec![u32::MAX; t.routers() as usize];
    let mut q = VecDeque::from([src]);
    dist[src as usize] = 0;
    while let Some(u) = q.pop_front() {
        for &v in t.neighbors(u) {
            if dist[v as usize] == u32::MAX {
                dist[v as usize] = dist[u as usize] + 1;
                q.push_back(v);
            }
        }
    }
    dist
}

fn jellyfish(routers: u32, degree: u32, p: u32, seed: u64) -> Topology {
    let mut s = TopologySpec::new(FamilySpec::Jellyfish { routers, degree });
    s.servers_per_router = Some(p);
    s.seed = seed;
    s.build().unwrap()
}

fn run_csv(t: &Topology, flows: &[FlowSpec], seed: u64) -> (megasim_core::RunStats, String) {
    let tables = RoutingTables::compute(t).unwrap();
    let sizes = SizeDistribution::default();
    let mut cfg = SimConfig::default();
    cfg.seed = seed;
    let sim = Simulation::new(t, &tables, flows, &sizes, cfg, Some(Vec::new())).unwrap();
    let (stats, csv, _) = sim.run().unwrap();
    (stats, String::from_utf8(csv.unwrap()).unwrap())
}

fn flows_strategy(servers: u32) -> impl Strategy<Value = Vec<FlowSpec>> {
    prop::collection::vec((0..servers, 1..servers, 1u32..120_000, 0u64..2_000_000_000), 1..24).prop_map(
        move |raw| {
            let mut v: Vec<FlowSpec> = raw
                .into_iter()
                .map(|(src, off, size, arrival)| FlowSpec {
                    arrival: SimTime(arrival),
                    src,
                    dst: (src + off) % servers,
                    size,
                })
                .collect();
            v.sort_by_key(|f| f.arrival);
            v
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn events_pop_in_time_then_insertion_order(
        times in prop::collection::vec(0u64..50, 1..200),
        cancel in prop::collection::vec(any::<bool>(), 200),
    ) {
        let mut q = EventQueue::new();
        let mut handles = Vec::new();
        for (i, &t) in times.iter().enumerate() {
            handles.push(q.push(SimTime(t), i));
        }
        let mut live: Vec<(u64, usize)> = Vec::new();
        for (i, &t) in times.iter().enumerate() {
            if cancel[i] {
                q.cancel(handles[i]);
            } else {
                live.push((t, i));
            }
        }
        live.sort();
        let mut popped = Vec::new();
        while let Some((t, i)) = q.pop() {
            popped.push((t.as_ps(), i));
        }
        prop_assert_eq!(popped, live);
    }

    #[test]
    fn sampled_paths_are_shortest_and_distinct(
        routers in 8u32..40,
        degree in 3u32..6,
        seed in any::<u64>(),
        k in 1usize..8,
    ) {
        prop_assume!(degree < routers);
        prop_assume!((routers * degree) % 2 == 0);
        let t = jellyfish(routers, degree, 1, seed);
        let tables = RoutingTables::compute(&t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for src in (0..routers).step_by(3) {
            let dist = bfs(&t, src);
            for dst in 0..routers {
                prop_assert_eq!(tables.distance(src, dst), dist[dst as usize]);
                let paths = tables.sample_paths(&t, src, dst, k, &mut rng);
                prop_assert!(!paths.is_empty() && paths.len() <= k);
                let distinct: HashSet<_> = paths.iter().collect();
                prop_assert_eq!(distinct.len(), paths.len());
                for p in &paths {
                    prop_assert_eq!(p.len() as u32 - 1, dist[dst as usize]);
                    prop_assert_eq!((p[0], *p.last().unwrap()), (src, dst));
                    for w in p.windows(2) {
                        prop_assert!(t.is_adjacent(w[0], w[1]));
                    }
                }
            }
        }
    }

    #[test]
    fn detours_are_one_hop_longer_and_simple(
        routers in 8u32..40,
        degree in 3u32..6,
        seed in any::<u64>(),
        k in 1usize..8,
    ) {
        prop_assume!(degree < routers);
        prop_assume!((routers * degree) % 2 == 0);
        let t = jellyfish(routers, degree, 1, seed);
        let tables = RoutingTables::compute(&t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for src in (0..routers).step_by(5) {
            let dist = bfs(&t, src);
            for dst in (0..routers).filter(|&d| d != src) {
                let d = dist[dst as usize] as usize;
                let shortest = tables.count_paths(&t, src, dst, k as u64) as usize;
                let paths = tables.sample_paths_with(&t, src, dst, k, PathPolicy::Detour, &mut rng);
                prop_assert!(paths.len() >= shortest && paths.len() <= k);
                for (i, p) in paths.iter().enumerate() {
                    prop_assert_eq!(p.len(), if i < shortest { d + 1 } else { d + 2 });
                    let distinct: HashSet<_> = p.iter().collect();
                    prop_assert_eq!(distinct.len(), p.len());
                    for w in p.windows(2) {
                        prop_assert!(t.is_adjacent(w[0], w[1]));
                    }
                }
                let distinct: HashSet<_> = paths.iter().collect();
                prop_assert_eq!(distinct.len(), paths.len());
            }
        }
    }

    #[test]
    fn path_sampling_is_deterministic(seed in any::<u64>()) {
        let t = jellyfish(30, 4, 1, 5);
        let tables = RoutingTables::compute(&t).unwrap();
        let a = tables.sample_paths(&t, 0, 17, 5, &mut ChaCha8Rng::seed_from_u64(seed));
        let b = tables.sample_paths(&t, 0, 17, 5, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn packets_are_conserved_and_runs_repeat(
        flows in flows_strategy(24),
        topo_seed in 0u64..4,
        seed in any::<u64>(),
    ) {
        let t = jellyfish(12, 3, 2, topo_seed);
        let (a, csv_a) = run_csv(&t, &flows, seed);
        prop_assert_eq!(a.stop, StopReason::Quiescent);
        prop_assert!(a.packets_reconciled);
        prop_assert_eq!(a.flows_completed, flows.len() as u64);
        prop_assert_eq!(a.packets.data.in_network() + a.packets.probe.in_network(), 0);
        let (b, csv_b) = run_csv(&t, &flows, seed);
        prop_assert_eq!(csv_a, csv_b);
        prop_assert_eq!(a.events, b.events);
    }

    #[test]
    fn fct_respects_the_unloaded_lower_bound(flows in flows_strategy(24), seed in any::<u64>()) {
        let t = jellyfish(12, 3, 2, 1);
        let tables = RoutingTables::compute(&t).unwrap();
        let link = t.link();
        let (_, csv) = run_csv(&t, &flows, seed);
        for line in csv.lines().skip(1) {
            let f: Vec<u64> = line.split(',').map(|x| x.parse().unwrap()).collect();
            let (src, dst, size, fct) = (f[1] as u32, f[2] as u32, f[3], f[5]);
            let hops = tables.distance(t.router_of(src), t.router_of(dst)) as u64 + 2;
            // probe out, pull back, smallest data packet out, ACK back
            let h = link.serialization(64).as_ps() + link.delay.as_ps();
            let smallest = size - (size.div_ceil(9000) - 1) * 9000;
            let floor = 3 * hops * h + hops * (link.serialization(smallest).as_ps() + link.delay.as_ps());
            prop_assert!(fct >= floor, "flow {line}: fct {fct} < {floor}");
        }
    }
}
