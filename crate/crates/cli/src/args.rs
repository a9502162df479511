use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};

use megasim_core::experiment::equivalent_jellyfish_spec;
use megasim_core::topology::LinkParams;
use megasim_core::{
    Experiment, FamilySpec, NdpConfig, PathPolicy, Pattern, SimConfig, SimTime, SizeDistribution, TopologySpec,
    WorkloadSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Slimfly,
    Fattree,
    Jellyfish,
    Xpander,
    Hyperx,
    Dragonfly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PathPolicyArg {
    /// Shortest paths only.
    Shortest,
    /// Top up with paths one hop longer when shortest paths are fewer than --paths.
    Detour,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PatternArg {
    Permutation,
    Skewed,
}

/// Packet-level data center network simulator.
///
/// Every flag may also be given as a `key=value` line in a file passed with
/// --config; flags on the command line take precedence.
#[derive(Debug, Parser)]
#[command(name = "megasim", version, args_override_self = true)]
pub struct Cli {
    /// File of `key=value` lines, one flag per line.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[arg(long, value_enum)]
    pub topology: Option<Family>,
    /// Slim Fly field order.
    #[arg(long)]
    pub q: Option<u32>,
    /// Fat tree router radix.
    #[arg(long)]
    pub k: Option<u32>,
    /// Jellyfish router count.
    #[arg(long)]
    pub routers: Option<u32>,
    /// Jellyfish or Xpander network degree.
    #[arg(long)]
    pub degree: Option<u32>,
    /// Xpander lift count.
    #[arg(long, default_value_t = 1)]
    pub lifts: u32,
    /// HyperX dimension sizes, e.g. 16,16.
    #[arg(long, value_delimiter = ',')]
    pub dims: Vec<u32>,
    /// Dragonfly routers per group.
    #[arg(long)]
    pub group_size: Option<u32>,
    /// Dragonfly global links per router.
    #[arg(long)]
    pub global_links: Option<u32>,
    /// Build a Jellyfish from the routers, cables and servers of another
    /// topology, e.g. `slimfly:q=11,p=40`.
    #[arg(long, value_name = "FAMILY:KEY=VALUE,...")]
    pub match_hardware_of: Option<String>,

    #[arg(long)]
    pub servers_per_switch: Option<u32>,
    #[arg(long, default_value_t = 1.0)]
    pub oversubscription: f64,
    #[arg(long, default_value_t = 10.0)]
    pub link_gbps: f64,
    #[arg(long, default_value_t = 500)]
    pub hop_delay_ns: u64,
    #[arg(long, default_value_t = 0)]
    pub switch_latency_ns: u64,

    #[arg(long)]
    pub flows_per_server: Option<f64>,
    /// Flow arrivals per server per second.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub window_ms: Option<f64>,
    #[arg(long, value_enum, default_value_t = PatternArg::Permutation)]
    pub pattern: PatternArg,
    /// Fraction of sources redirected to the hotspot under --pattern skewed.
    #[arg(long, default_value_t = 0.1)]
    pub hotspot_fraction: f64,
    #[arg(long)]
    pub hotspot_router: Option<u32>,
    /// Flow size distribution: `size_bytes cum_prob` per line.
    #[arg(long, value_name = "FILE")]
    pub size_cdf: Option<PathBuf>,

    #[arg(long, default_value_t = 5)]
    pub paths: u8,
    #[arg(long, value_enum, default_value_t = PathPolicyArg::Detour)]
    pub path_policy: PathPolicyArg,
    #[arg(long, default_value_t = 9000)]
    pub mtu: u16,
    /// Congestion window in packets.
    #[arg(long, default_value_t = 8)]
    pub cwnd: u16,
    /// Router queue capacity in full-size packets.
    #[arg(long, default_value_t = 8)]
    pub queue_packets: u32,

    #[arg(long, default_value_t = 0.0)]
    pub warmup_exclude: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Stop after this much simulated time.
    #[arg(long)]
    pub horizon_ms: Option<f64>,
    #[arg(long, default_value_t = 16.0)]
    pub max_memory_gb: f64,
    #[arg(long, default_value = "megasim-out")]
    pub out: PathBuf,
    /// Also write the router graph, one `u v` edge per line.
    #[arg(long, value_name = "FILE")]
    pub export_topology: Option<PathBuf>,
}

/// Command line with the lines of any --config file spliced in right after
/// the program name, so explicit flags come later and win.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let mut path = None;
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = it.next().cloned();
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(p.into());
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| format!("cannot read config file {}: {e}", path.to_string_lossy()))?;
    let mut out = vec![args[0].clone()];
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key=value", n + 1))?;
        let key = k.trim().replace('_', "-");
        if key == "config" {
            return Err(format!("config line {}: nested config files are not supported", n + 1));
        }
        out.push(format!("--{key}={}", v.trim()).into());
    }
    out.extend(args.into_iter().skip(1));
    Ok(out)
}

fn family_from(kind: Family, kv: &BTreeMap<String, String>) -> Result<FamilySpec, String> {
    let get = |k: &str| -> Result<u32, String> {
        kv.get(k)
            .ok_or_else(|| format!("{} needs `{k}`", name(kind)))?
            .parse()
            .map_err(|_| format!("`{k}` must be a non-negative integer"))
    };
    Ok(match kind {
        Family::Slimfly => FamilySpec::SlimFly { q: get("q")? },
        Family::Fattree => FamilySpec::FatTree { k: get("k")? },
        Family::Jellyfish => FamilySpec::Jellyfish {
            routers: get("routers")?,
            degree: get("degree")?,
        },
        Family::Xpander => FamilySpec::Xpander {
            degree: get("degree")?,
            lifts: kv.get("lifts").map_or(Ok(1), |_| get("lifts"))?,
        },
        Family::Hyperx => {
            let dims = kv.get("dims").ok_or("hyperx needs `dims`")?;
            FamilySpec::HyperX {
                dims: dims
                    .split(['x', ',', ' '])
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse().map_err(|_| format!("bad dimension `{s}`")))
                    .collect::<Result<_, _>>()?,
            }
        }
        Family::Dragonfly => FamilySpec::Dragonfly {
            a: get("group-size")?,
            h: get("global-links")?,
        },
    })
}

fn name(f: Family) -> &'static str {
    match f {
        Family::Slimfly => "slimfly",
        Family::Fattree => "fattree",
        Family::Jellyfish => "jellyfish",
        Family::Xpander => "xpander",
        Family::Hyperx => "hyperx",
        Family::Dragonfly => "dragonfly",
    }
}

fn parse_match(s: &str) -> Result<(Family, BTreeMap<String, String>), String> {
    let (fam, rest) = s.split_once(':').unwrap_or((s, ""));
    let family = Family::from_str(fam, true).map_err(|_| format!("unknown topology `{fam}`"))?;
    let mut kv = BTreeMap::new();
    let mut dims = Vec::new();
    for part in rest.split(',').filter(|p| !p.is_empty()) {
        match part.split_once('=') {
            Some((k, v)) => {
                let k = k.trim().replace('_', "-");
                if k == "dims" {
                    dims.push(v.trim().to_string());
                } else {
                    kv.insert(k, v.trim().to_string());
                }
            }
            // continuation of a comma-separated dims list
            None if !dims.is_empty() => dims.push(part.trim().to_string()),
            None => return Err(format!("expected key=value in `{part}`")),
        }
    }
    if !dims.is_empty() {
        kv.insert("dims".into(), dims.join(","));
    }
    Ok((family, kv))
}

impl Cli {
    fn family_kv(&self) -> BTreeMap<String, String> {
        let mut kv = BTreeMap::new();
        let mut put = |k: &str, v: Option<u32>| {
            if let Some(v) = v {
                kv.insert(k.to_string(), v.to_string());
            }
        };
        put("q", self.q);
        put("k", self.k);
        put("routers", self.routers);
        put("degree", self.degree);
        put("lifts", Some(self.lifts));
        put("group-size", self.group_size);
        put("global-links", self.global_links);
        if !self.dims.is_empty() {
            let d: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
            kv.insert("dims".into(), d.join(","));
        }
        kv
    }

    fn link(&self) -> Result<LinkParams, String> {
        if !(self.link_gbps.is_finite() && self.link_gbps > 0.0) {
            return Err("--link-gbps must be positive".into());
        }
        Ok(LinkParams {
            rate_bps: (self.link_gbps * 1e9).round() as u64,
            delay: SimTime::from_ns(self.hop_delay_ns),
        })
    }

    pub fn topology_spec(&self) -> Result<TopologySpec, String> {
        let link = self.link()?;
        if let Some(m) = &self.match_hardware_of {
            if self.topology.is_some_and(|t| t != Family::Jellyfish) {
                return Err("--match-hardware-of builds a Jellyfish; drop --topology or set it to jellyfish".into());
            }
            let (fam, kv) = parse_match(m)?;
            let mut reference = TopologySpec::new(family_from(fam, &kv)?);
            reference.servers_per_router = match kv.get("p") {
                Some(p) => Some(p.parse().map_err(|_| "`p` must be an integer".to_string())?),
                None => self.servers_per_switch,
            };
            if let Some(f) = kv.get("oversubscription") {
                reference.oversubscription = f.parse().map_err(|_| "`oversubscription` must be a number".to_string())?;
            } else {
                reference.oversubscription = self.oversubscription;
            }
            reference.seed = self.seed;
            reference.link = link;
            let built = reference.build().map_err(|e| e.to_string())?;
            return Ok(equivalent_jellyfish_spec(&built, &reference));
        }
        let fam = self.topology.ok_or("--topology is required")?;
        let mut spec = TopologySpec::new(family_from(fam, &self.family_kv())?);
        spec.servers_per_router = self.servers_per_switch;
        spec.oversubscription = self.oversubscription;
        spec.seed = self.seed;
        spec.link = link;
        Ok(spec)
    }

    pub fn experiment(&self) -> Result<Experiment, String> {
        let topology = self.topology_spec()?;
        let pattern = match self.pattern {
            PatternArg::Permutation => Pattern::Permutation,
            PatternArg::Skewed => Pattern::Skewed {
                fraction: self.hotspot_fraction,
                hotspot: self.hotspot_router,
            },
        };
        let window = match self.window_ms {
            Some(w) if w.is_finite() && w > 0.0 => Some(SimTime::from_secs_f64(w * 1e-3)),
            Some(w) => return Err(format!("--window-ms must be positive, got {w}")),
            None => None,
        };
        let workload = WorkloadSpec::resolve(pattern, self.flows_per_server, self.lambda, window, self.seed)
            .map_err(|e| e.to_string())?;
        let sizes = match &self.size_cdf {
            Some(p) => SizeDistribution::from_file(p).map_err(|e| format!("{}: {e}", p.display()))?,
            None => SizeDistribution::default(),
        };
        let ndp = NdpConfig {
            mtu: self.mtu,
            window: self.cwnd,
            paths: self.paths,
            ..NdpConfig::default()
        };
        ndp.validate()?;
        if self.queue_packets == 0 {
            return Err("--queue-packets must be positive".into());
        }
        let mut sim = SimConfig::new(ndp);
        sim.router_queue = megasim_core::netmodel::QueueLimits::Trim {
            data_bytes: self.queue_packets * self.mtu as u32,
            headers: 8,
        };
        sim.switch_latency = SimTime::from_ns(self.switch_latency_ns);
        sim.path_policy = match self.path_policy {
            PathPolicyArg::Shortest => PathPolicy::Shortest,
            PathPolicyArg::Detour => PathPolicy::Detour,
        };
        sim.seed = self.seed;
        if !(self.max_memory_gb.is_finite() && self.max_memory_gb > 0.0) {
            return Err("--max-memory-gb must be positive".into());
        }
        sim.memory_budget = Some((self.max_memory_gb * (1u64 << 30) as f64) as u64);
        sim.horizon = match self.horizon_ms {
            Some(h) if h.is_finite() && h > 0.0 => Some(SimTime::from_secs_f64(h * 1e-3)),
            Some(h) => return Err(format!("--horizon-ms must be positive, got {h}")),
            None => None,
        };
        let mut e = Experiment::new(topology, workload, sizes, sim);
        e.warmup_fraction = self.warmup_exclude;
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        let v: Vec<OsString> = std::iter::once("megasim").chain(args.iter().copied()).map(Into::into).collect();
        Cli::try_parse_from(v).unwrap()
    }

    #[test]
    fn later_flags_override_earlier_ones() {
        let c = parse(&["--seed=3", "--topology", "slimfly", "--q", "5", "--seed", "9"]);
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn slim_fly_ten_thousand_configuration() {
        let c = parse(&[
            "--topology", "slimfly", "--q", "11", "--servers-per-switch", "40",
            "--flows-per-server", "100", "--paths", "5", "--seed", "1",
        ]);
        let e = c.experiment().unwrap();
        assert_eq!(e.topology.family, FamilySpec::SlimFly { q: 11 });
        assert_eq!(e.workload.total_flows(9680), 968_000);
    }

    #[test]
    fn matching_hardware() {
        let c = parse(&["--match-hardware-of", "slimfly:q=5,p=4"]);
        let t = c.topology_spec().unwrap();
        assert_eq!(t.family, FamilySpec::Jellyfish { routers: 50, degree: 7 });
        assert_eq!(t.servers_per_router, Some(4));
        let c = parse(&["--topology", "fattree", "--match-hardware-of", "slimfly:q=5"]);
        assert!(c.topology_spec().is_err());
        let (f, kv) = parse_match("hyperx:dims=4,4,p=2").unwrap();
        assert_eq!(f, Family::Hyperx);
        assert_eq!(kv["dims"], "4,4");
        assert_eq!(kv["p"], "2");
    }

    #[test]
    fn missing_family_parameter_is_reported() {
        let c = parse(&["--topology", "jellyfish", "--routers", "10", "--flows-per-server", "1"]);
        let err = c.experiment().unwrap_err();
        assert!(err.contains("degree"), "{err}");
    }

    #[test]
    fn config_lines_come_first() {
        let dir = std::env::temp_dir().join(format!("megasim-args-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let f = dir.join("run.conf");
        std::fs::write(&f, "# comment\ntopology=slimfly\nq = 7\nseed=4\nflows_per_server=2\n").unwrap();
        let args: Vec<OsString> = ["megasim", "--config", f.to_str().unwrap(), "--seed", "8"]
            .iter()
            .map(Into::into)
            .collect();
        let c = Cli::try_parse_from(expand_config(args).unwrap()).unwrap();
        assert_eq!((c.q, c.seed, c.flows_per_server), (Some(7), 8, Some(2.0)));
        std::fs::write(&f, "topology\n").unwrap();
        let args: Vec<OsString> = ["megasim", "--config", f.to_str().unwrap()].iter().map(Into::into).collect();
        assert!(expand_config(args).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
