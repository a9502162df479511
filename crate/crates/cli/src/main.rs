mod args;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;

use megasim_core::memory::{self, Ledger};
use megasim_core::{ExperimentError, StopReason, Summary};

use args::{expand_config, Cli};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_MEMORY: u8 = 3;

#[derive(Serialize)]
struct Resources {
    setup_secs: f64,
    run_wall_secs: f64,
    events: u64,
    events_per_sec: f64,
    events_per_data_packet: f64,
    peak_rss_bytes: Option<u64>,
    memory_budget_bytes: Option<u64>,
    topology_bytes: u64,
    routing_bytes: u64,
    accounted: Ledger,
    stop: StopReason,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, message: message.into() }
    }

    fn io(what: &str, path: &Path, e: io::Error) -> Self {
        Failure {
            code: EXIT_FAILURE,
            message: format!("{what} {}: {e}", path.display()),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        let code = match e {
            ExperimentError::Topology(_) | ExperimentError::Workload(_) | ExperimentError::Config(_) => EXIT_USAGE,
            ExperimentError::Routing(_) | ExperimentError::Run(_) => EXIT_FAILURE,
        };
        Failure { code, message: e.to_string() }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let f = File::create(path).map_err(|e| Failure::io("cannot create", path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(io::Error::from)
        .and_then(|_| w.write_all(b"\n"))
        .and_then(|_| w.flush())
        .map_err(|e| Failure::io("cannot write", path, e))
}

fn run(cli: Cli) -> Result<Summary, Failure> {
    let experiment = cli.experiment().map_err(Failure::usage)?;
    let prepared = experiment.prepare()?;
    let t = &prepared.topology;
    eprintln!(
        "{}: {} routers, {} servers, {} flows, setup {:.2} s",
        t.family().name(),
        t.routers(),
        t.servers(),
        prepared.flows.len(),
        prepared.setup_secs
    );

    std::fs::create_dir_all(&cli.out).map_err(|e| Failure::io("cannot create", &cli.out, e))?;
    if let Some(path) = &cli.export_topology {
        File::create(path)
            .map(BufWriter::new)
            .and_then(|w| t.write_edge_list(w))
            .map_err(|e| Failure::io("cannot write", path, e))?;
    }

    let csv_path = cli.out.join("flows.csv");
    let csv = File::create(&csv_path).map_err(|e| Failure::io("cannot create", &csv_path, e))?;
    let (mut summary, csv, agg) = experiment.run(&prepared, Some(BufWriter::with_capacity(1 << 20, csv)))?;
    if let Some(mut w) = csv {
        w.flush().map_err(|e| Failure::io("cannot write", &csv_path, e))?;
    }
    let exact = File::open(&csv_path)
        .and_then(|f| agg.report_exact(BufReader::with_capacity(1 << 20, f)))
        .map_err(|e| Failure::io("cannot read back", &csv_path, e))?;
    summary.fct = exact;

    write_json(&cli.out.join("summary.json"), &summary)?;
    let r = &summary.run;
    let resources = Resources {
        setup_secs: prepared.setup_secs,
        run_wall_secs: r.wall_secs,
        events: r.events,
        events_per_sec: r.events_per_sec,
        events_per_data_packet: r.events_per_data_packet,
        peak_rss_bytes: memory::peak_rss_bytes(),
        memory_budget_bytes: experiment.sim.memory_budget,
        topology_bytes: t.heap_bytes() as u64,
        routing_bytes: prepared.tables.heap_bytes() as u64,
        accounted: r.memory,
        stop: r.stop,
    };
    write_json(&cli.out.join("resources.json"), &resources)?;
    Ok(summary)
}

fn main() -> ExitCode {
    let argv = match expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(s) => {
            let r = &s.run;
            eprintln!(
                "{} of {} flows completed, {} events in {:.2} s ({:.3e} events/s), mean FCT {:.1} us",
                r.flows_completed,
                r.flows_total,
                r.events,
                r.wall_secs,
                r.events_per_sec,
                s.fct.mean_fct_ps / 1e6
            );
            if let StopReason::MemoryBudget { accounted, budget } = r.stop {
                eprintln!("error: accounted memory {accounted} B exceeded the budget of {budget} B");
                return ExitCode::from(EXIT_MEMORY);
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
