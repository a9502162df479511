//! Memory accounting against a budget.
//!
//! Long-lived structures are measured once after construction. Per-flow
//! state and routes are charged when a flow starts and released when it
//! completes, so the ledger tracks current, peak and cumulative bytes.

use serde::{Deserialize, Serialize};

/// Per-element memory model: bytes per flow, per path and per routing entry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementCosts {
    pub flow: u64,
    pub path: u64,
    pub routing_entry: u64,
}

/// 2 kB per flow, 600 B per path, 100 B per routing entry.
pub const REFERENCE_COSTS: ElementCosts = ElementCosts {
    flow: 2_000,
    path: 600,
    routing_entry: 100,
};

impl ElementCosts {
    /// Memory if every flow and its paths were resident at once.
    pub fn all_flows_resident(&self, flows: u64, paths_per_flow: u64) -> u64 {
        flows * (self.flow + paths_per_flow * self.path)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    /// Bytes of structures that live for the whole run.
    pub fixed: u64,
    pub flow_bytes: u64,
    pub path_bytes: u64,
    pub live_flows: u64,
    pub peak_flow_bytes: u64,
    pub peak_path_bytes: u64,
    pub peak_live_flows: u64,
    /// Peak of fixed plus per-flow bytes.
    pub peak_total: u64,
    pub flows_charged: u64,
    pub paths_charged: u64,
    pub cumulative_flow_bytes: u64,
    pub cumulative_path_bytes: u64,
}

impl Ledger {
    pub fn set_fixed(&mut self, bytes: u64) {
        self.fixed = bytes;
        self.peak_total = self.peak_total.max(self.total());
    }

    pub fn charge(&mut self, flow_bytes: u64, path_bytes: u64, paths: u64) {
        self.flow_bytes += flow_bytes;
        self.path_bytes += path_bytes;
        self.live_flows += 1;
        self.flows_charged += 1;
        self.paths_charged += paths;
        self.cumulative_flow_bytes += flow_bytes;
        self.cumulative_path_bytes += path_bytes;
        self.peak_flow_bytes = self.peak_flow_bytes.max(self.flow_bytes);
        self.peak_path_bytes = self.peak_path_bytes.max(self.path_bytes);
        self.peak_live_flows = self.peak_live_flows.max(self.live_flows);
        self.peak_total = self.peak_total.max(self.total());
    }

    pub fn release(&mut self, flow_bytes: u64, path_bytes: u64) {
        self.flow_bytes -= flow_bytes;
        self.path_bytes -= path_bytes;
        self.live_flows -= 1;
    }

    pub fn total(&self) -> u64 {
        self.fixed + self.flow_bytes + self.path_bytes
    }

    /// Mean bytes per charged flow, excluding routes.
    pub fn mean_flow_bytes(&self) -> f64 {
        self.cumulative_flow_bytes as f64 / self.flows_charged.max(1) as f64
    }

    /// Mean bytes per charged path.
    pub fn mean_path_bytes(&self) -> f64 {
        self.cumulative_path_bytes as f64 / self.paths_charged.max(1) as f64
    }
}

fn status_field(name: &str) -> Option<u64> {
    let text = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = text.lines().find(|l| l.starts_with(name))?;
    let kb: u64 = line[name.len()..].trim().trim_end_matches("kB").trim().parse().ok()?;
    Some(kb * 1024)
}

/// Peak resident set size of this process, where the OS reports it.
pub fn peak_rss_bytes() -> Option<u64> {
    status_field("VmHWM:")
}

pub fn current_rss_bytes() -> Option<u64> {
    status_field("VmRSS:")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_costs_of_the_10k_configuration() {
        let total = REFERENCE_COSTS.all_flows_resident(968_000, 5);
        assert_eq!(total, 968_000 * 2_000 + 968_000 * 5 * 600);
        assert_eq!(968_000 * REFERENCE_COSTS.flow, 1_936_000_000);
    }

    #[test]
    fn ledger_tracks_peaks() {
        let mut l = Ledger::default();
        l.set_fixed(100);
        l.charge(10, 20, 2);
        l.charge(30, 40, 3);
        l.release(10, 20);
        assert_eq!((l.flow_bytes, l.path_bytes, l.live_flows), (30, 40, 1));
        assert_eq!((l.peak_flow_bytes, l.peak_path_bytes, l.peak_live_flows), (40, 60, 2));
        assert_eq!(l.peak_total, 200);
        assert_eq!(l.mean_flow_bytes(), 20.0);
        assert_eq!(l.mean_path_bytes(), 12.0);
    }

    #[test]
    fn rss_is_reported_on_linux() {
        if cfg!(target_os = "linux") {
            let peak = peak_rss_bytes().unwrap();
            assert!(peak > 0 && peak >= current_rss_bytes().unwrap() / 2);
        }
    }
}
