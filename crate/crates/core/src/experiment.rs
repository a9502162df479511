//! One complete run: topology, routing tables, workload, simulation and the
//! summary written at the end.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::memory::{ElementCosts, REFERENCE_COSTS};
use crate::routing::{RoutingError, RoutingTables};
use crate::simulation::{RunError, RunStats, SimConfig, Simulation};
use crate::telemetry::{Aggregates, FctReport};
use crate::topology::{FamilySpec, Topology, TopologyError, TopologySpec};
use crate::workload::{generate_flows, generate_pairing, FlowSpec, SizeDistribution, WorkloadError, WorkloadSpec};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("{0}")]
    Config(String),
}

#[derive(Clone, Debug, Serialize)]
pub struct Experiment {
    pub topology: TopologySpec,
    pub workload: WorkloadSpec,
    #[serde(skip)]
    pub sizes: SizeDistribution,
    pub sim: SimConfig,
    /// Leading fraction of the window whose flows are not aggregated.
    pub warmup_fraction: f64,
}

/// Everything built before the first event.
pub struct Prepared {
    pub topology: Topology,
    pub tables: RoutingTables,
    pub flows: Vec<FlowSpec>,
    pub setup_secs: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TopologySummary {
    pub family: String,
    pub routers: u32,
    pub servers: u32,
    pub servers_per_router: u32,
    pub links: u64,
    pub cables: u64,
    pub max_degree: u32,
}

#[derive(Clone, Debug, Serialize)]
pub struct RoutingSummary {
    pub entries: u64,
    pub next_hops: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct WorkloadSummary {
    pub flows: u64,
    pub flows_per_server: f64,
    pub lambda_per_server_per_sec: f64,
    pub window_ps: u64,
    pub mean_size_bytes: f64,
    pub mean_packets_per_flow: f64,
}

/// Measured memory next to the per-element reference model.
#[derive(Clone, Debug, Serialize)]
pub struct MemoryModel {
    pub reference: ElementCosts,
    /// Reference bytes if every flow and its paths were resident at once.
    pub reference_all_flows_bytes: u64,
    pub reference_routing_bytes: u64,
    pub measured_mean_flow_bytes: f64,
    pub measured_mean_path_bytes: f64,
    pub measured_peak_flow_and_path_bytes: u64,
    /// Sum of every flow's and path's bytes over the run.
    pub measured_cumulative_flow_and_path_bytes: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub experiment: Experiment,
    pub topology: TopologySummary,
    pub routing: RoutingSummary,
    pub workload: WorkloadSummary,
    pub setup_secs: f64,
    pub run: RunStats,
    pub memory_model: MemoryModel,
    pub fct: FctReport,
}

impl Experiment {
    pub fn new(topology: TopologySpec, workload: WorkloadSpec, sizes: SizeDistribution, sim: SimConfig) -> Self {
        Experiment {
            topology,
            workload,
            sizes,
            sim,
            warmup_fraction: 0.0,
        }
    }

    pub fn prepare(&self) -> Result<Prepared, ExperimentError> {
        self.sim.ndp.validate().map_err(ExperimentError::Config)?;
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(ExperimentError::Config(format!(
                "warmup fraction must lie in [0, 1), got {}",
                self.warmup_fraction
            )));
        }
        if self.sizes.sizes().last().is_some_and(|&s| s.div_ceil(self.sim.ndp.mtu as u32) > 1 << 24) {
            return Err(ExperimentError::Config("flow sizes beyond 2^24 packets".into()));
        }
        let start = Instant::now();
        let topology = self.topology.build()?;
        let tables = RoutingTables::compute(&topology)?;
        let pairing = generate_pairing(&topology, &self.workload)?;
        let flows = generate_flows(&pairing, &self.workload, &self.sizes);
        Ok(Prepared {
            topology,
            tables,
            flows,
            setup_secs: start.elapsed().as_secs_f64(),
        })
    }

    pub fn run<W: Write>(
        &self,
        prepared: &Prepared,
        csv: Option<W>,
    ) -> Result<(Summary, Option<W>, Aggregates), ExperimentError> {
        let mut sim_cfg = self.sim.clone();
        sim_cfg.warmup_cutoff =
            crate::sim::SimTime((self.workload.window.as_ps() as f64 * self.warmup_fraction) as u64);
        let sim = Simulation::new(
            &prepared.topology,
            &prepared.tables,
            &prepared.flows,
            &self.sizes,
            sim_cfg,
            csv,
        )
        .map_err(RunError::from)?;
        let (run, csv, agg) = sim.run()?;
        let summary = self.summarize(prepared, run, agg.report());
        Ok((summary, csv, agg))
    }

    fn summarize(&self, p: &Prepared, run: RunStats, fct: FctReport) -> Summary {
        let t = &p.topology;
        let flows = p.flows.len() as u64;
        let paths = self.sim.ndp.paths as u64;
        let m = &run.memory;
        Summary {
            experiment: self.clone(),
            topology: TopologySummary {
                family: t.family().name().to_string(),
                routers: t.routers(),
                servers: t.servers(),
                servers_per_router: t.servers_per_router(),
                links: t.links(),
                cables: t.cables(),
                max_degree: t.max_degree(),
            },
            routing: RoutingSummary {
                entries: p.tables.entry_count(),
                next_hops: p.tables.next_hop_count(),
                bytes: p.tables.heap_bytes() as u64,
            },
            workload: WorkloadSummary {
                flows,
                flows_per_server: self.workload.flows_per_server,
                lambda_per_server_per_sec: self.workload.lambda(),
                window_ps: self.workload.window.as_ps(),
                mean_size_bytes: self.sizes.mean(),
                mean_packets_per_flow: self.sizes.mean_packets(self.sim.ndp.mtu as u32),
            },
            setup_secs: p.setup_secs,
            memory_model: MemoryModel {
                reference: REFERENCE_COSTS,
                reference_all_flows_bytes: REFERENCE_COSTS.all_flows_resident(flows, paths),
                reference_routing_bytes: p.tables.entry_count() * REFERENCE_COSTS.routing_entry,
                measured_mean_flow_bytes: m.mean_flow_bytes(),
                measured_mean_path_bytes: m.mean_path_bytes(),
                measured_peak_flow_and_path_bytes: m.peak_flow_bytes + m.peak_path_bytes,
                measured_cumulative_flow_and_path_bytes: m.cumulative_flow_bytes + m.cumulative_path_bytes,
            },
            run,
            fct,
        }
    }
}

/// A Jellyfish built from the routers, cables and servers of `t`.
pub fn equivalent_jellyfish_spec(t: &Topology, template: &TopologySpec) -> TopologySpec {
    let (routers, degree, p) = t.equivalent_jellyfish();
    TopologySpec {
        family: FamilySpec::Jellyfish { routers, degree },
        servers_per_router: Some(p),
        oversubscription: 1.0,
        seed: template.seed,
        link: template.link,
    }
}
