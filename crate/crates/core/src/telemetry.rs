//! Flow completion statistics.
//!
//! Each completed flow is written out as one CSV row and folded into the
//! aggregate of its size bucket. Aggregates are fixed-size log-linear
//! histograms, so memory does not grow with the number of flows. Exact
//! nearest-rank percentiles come from a second pass over the CSV that only
//! keeps the values falling into the histogram bin holding each rank.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::sim::SimTime;
use crate::transport::FlowOutcome;
use crate::workload::SizeDistribution;

pub const CSV_HEADER: &str = "flow_id,src,dst,size_bytes,arrival_ps,fct_ps,retransmissions,paths_used";

const SUB_BITS: u32 = 5;
const SUB: u64 = 1 << SUB_BITS;

/// Log-linear histogram bin of `v`: exact below 32, then 32 bins per octave.
pub fn bin_of(v: u64) -> usize {
    if v < SUB {
        return v as usize;
    }
    let e = 63 - v.leading_zeros();
    let sub = (v >> (e - SUB_BITS)) & (SUB - 1);
    ((e - SUB_BITS + 1) as u64 * SUB + sub) as usize
}

/// Smallest value that falls into bin `b`.
pub fn bin_floor(b: usize) -> u64 {
    let b = b as u64;
    if b < SUB {
        return b;
    }
    let e = b / SUB + SUB_BITS as u64 - 1;
    (SUB + b % SUB) << (e - SUB_BITS as u64)
}

/// Nearest-rank index (1-based) of percentile `p` among `n` values.
pub fn nearest_rank(p: f64, n: u64) -> u64 {
    ((p / 100.0 * n as f64).ceil() as u64).clamp(1, n.max(1))
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(values: &[u64], p: f64) -> Option<u64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    Some(v[nearest_rank(p, v.len() as u64) as usize - 1])
}

#[derive(Clone, Debug, Default)]
struct Histogram {
    bins: Vec<u64>,
}

impl Histogram {
    fn add(&mut self, v: u64) {
        let b = bin_of(v);
        if b >= self.bins.len() {
            self.bins.resize(b + 1, 0);
        }
        self.bins[b] += 1;
    }

    /// Bin containing the value of 1-based rank `r`, and the number of
    /// values in lower bins.
    fn locate(&self, r: u64) -> (usize, u64) {
        let mut below = 0;
        for (b, &c) in self.bins.iter().enumerate() {
            if below + c >= r {
                return (b, below);
            }
            below += c;
        }
        unreachable!("rank beyond histogram total")
    }
}

#[derive(Clone, Debug, Default)]
struct Bucket {
    count: u64,
    sum_fct: u128,
    max_fct: u64,
    min_fct: u64,
    sum_throughput: f64,
    retransmissions: u64,
    hist: Histogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub size_bytes: u32,
    pub count: u64,
    pub mean_fct_ps: f64,
    pub min_fct_ps: u64,
    pub p10_fct_ps: u64,
    pub p99_fct_ps: u64,
    pub max_fct_ps: u64,
    /// Mean of size / FCT, bits per second.
    pub mean_throughput_bps: f64,
    pub mean_retransmissions: f64,
    /// Non-empty histogram bins as `[lower bound ps, count]`.
    pub histogram: Vec<(u64, u64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FctReport {
    pub buckets: Vec<BucketReport>,
    /// Completed flows included in the aggregates.
    pub aggregated: u64,
    /// Completed flows left out because they arrived during warmup.
    pub warmup_excluded: u64,
    pub warmup_cutoff_ps: u64,
    pub completed: u64,
    /// Completion time of the last flow to finish.
    pub last_finish_ps: u64,
    pub mean_fct_ps: f64,
    /// Percentiles are exact when computed from a second pass over the
    /// flow records, histogram estimates otherwise.
    pub exact_percentiles: bool,
}

impl FctReport {
    pub fn bucket(&self, size: u32) -> Option<&BucketReport> {
        self.buckets.iter().find(|b| b.size_bytes == size)
    }
}

/// Streams flow records and keeps per-size aggregates.
pub struct Telemetry<W: Write> {
    sizes: Vec<u32>,
    dist: SizeDistribution,
    buckets: Vec<Bucket>,
    csv: Option<W>,
    warmup_cutoff: SimTime,
    warmup_excluded: u64,
    completed: u64,
    last_finish: SimTime,
}

impl<W: Write> Telemetry<W> {
    /// Flows arriving before `warmup_cutoff` are written out but not
    /// aggregated.
    pub fn new(dist: &SizeDistribution, csv: Option<W>, warmup_cutoff: SimTime) -> io::Result<Self> {
        let mut csv = csv;
        if let Some(w) = csv.as_mut() {
            writeln!(w, "{CSV_HEADER}")?;
        }
        Ok(Telemetry {
            sizes: dist.sizes().to_vec(),
            dist: dist.clone(),
            buckets: vec![Bucket::default(); dist.sizes().len()],
            csv,
            warmup_cutoff,
            warmup_excluded: 0,
            completed: 0,
            last_finish: SimTime::ZERO,
        })
    }

    pub fn completed(&self) -> u64 {
        self.completed
    }

    pub fn record(&mut self, o: &FlowOutcome) -> io::Result<()> {
        if let Some(w) = self.csv.as_mut() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                o.flow,
                o.src,
                o.dst,
                o.size,
                o.arrival.as_ps(),
                o.fct.as_ps(),
                o.retransmissions,
                o.paths_used
            )?;
        }
        self.completed += 1;
        self.last_finish = self.last_finish.max(o.arrival + o.fct);
        if o.arrival < self.warmup_cutoff {
            self.warmup_excluded += 1;
            return Ok(());
        }
        let fct = o.fct.as_ps();
        let b = &mut self.buckets[self.dist.bucket_of(o.size)];
        if b.count == 0 || fct < b.min_fct {
            b.min_fct = fct;
        }
        b.count += 1;
        b.sum_fct += fct as u128;
        b.max_fct = b.max_fct.max(fct);
        b.sum_throughput += o.size as f64 * 8.0 / o.fct.as_secs_f64();
        b.retransmissions += o.retransmissions as u64;
        b.hist.add(fct);
        Ok(())
    }

    /// Bytes held by the aggregates.
    pub fn heap_bytes(&self) -> usize {
        self.buckets.iter().map(|b| b.hist.bins.capacity() * 8).sum::<usize>()
            + self.buckets.capacity() * std::mem::size_of::<Bucket>()
    }

    pub fn flush(&mut self) -> io::Result<()> {
        if let Some(w) = self.csv.as_mut() {
            w.flush()?;
        }
        Ok(())
    }

    /// Ends recording and returns the writer.
    pub fn into_writer(mut self) -> io::Result<(Option<W>, Aggregates)> {
        self.flush()?;
        let agg = Aggregates {
            sizes: self.sizes,
            dist: self.dist,
            buckets: self.buckets,
            warmup_cutoff: self.warmup_cutoff,
            warmup_excluded: self.warmup_excluded,
            completed: self.completed,
            last_finish: self.last_finish,
        };
        Ok((self.csv, agg))
    }
}

/// Aggregates detached from their output stream, ready to report.
#[derive(Clone, Debug)]
pub struct Aggregates {
    sizes: Vec<u32>,
    dist: SizeDistribution,
    buckets: Vec<Bucket>,
    warmup_cutoff: SimTime,
    warmup_excluded: u64,
    completed: u64,
    last_finish: SimTime,
}

struct Probe {
    bucket: usize,
    bin: usize,
    values: Vec<u64>,
}

impl Aggregates {
    /// Report with percentiles resolved from the bins alone (lower bin
    /// bound, within about 3% of the exact value).
    pub fn report(&self) -> FctReport {
        self.build(|bucket, rank| {
            let (bin, _) = self.buckets[bucket].hist.locate(rank);
            bin_floor(bin)
        }, false)
    }

    /// Report with exact percentiles, reading back the CSV written during
    /// the run.
    pub fn report_exact<R: BufRead>(&self, csv: R) -> io::Result<FctReport> {
        let mut probes: Vec<Probe> = Vec::new();
        for (i, b) in self.buckets.iter().enumerate() {
            if b.count == 0 {
                continue;
            }
            for p in [10.0, 99.0] {
                let (bin, _) = b.hist.locate(nearest_rank(p, b.count));
                if !probes.iter().any(|pr| pr.bucket == i && pr.bin == bin) {
                    probes.push(Probe {
                        bucket: i,
                        bin,
                        values: Vec::new(),
                    });
                }
            }
        }
        let bad = |line: usize| io::Error::new(io::ErrorKind::InvalidData, format!("malformed flow record on line {line}"));
        for (n, line) in csv.lines().enumerate() {
            let line = line?;
            if n == 0 {
                if line != CSV_HEADER {
                    return Err(bad(1));
                }
                continue;
            }
            let mut cols = line.split(',');
            let mut field = |k: usize| -> io::Result<u64> {
                cols.nth(k).and_then(|c| c.parse().ok()).ok_or_else(|| bad(n + 1))
            };
            let size = field(3)? as u32;
            let arrival = field(0)?;
            let fct = field(0)?;
            if arrival < self.warmup_cutoff.as_ps() {
                continue;
            }
            let bucket = self.dist.bucket_of(size);
            let bin = bin_of(fct);
            if let Some(pr) = probes.iter_mut().find(|p| p.bucket == bucket && p.bin == bin) {
                pr.values.push(fct);
            }
        }
        for pr in &mut probes {
            pr.values.sort_unstable();
            if pr.values.len() as u64 != self.buckets[pr.bucket].hist.bins[pr.bin] {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    "flow records do not match the recorded aggregates",
                ));
            }
        }
        Ok(self.build(
            |bucket, rank| {
                let (bin, below) = self.buckets[bucket].hist.locate(rank);
                let pr = probes
                    .iter()
                    .find(|p| p.bucket == bucket && p.bin == bin)
                    .expect("probe for every requested rank");
                pr.values[(rank - below - 1) as usize]
            },
            true,
        ))
    }

    fn build(&self, pick: impl Fn(usize, u64) -> u64, exact: bool) -> FctReport {
        let mut buckets = Vec::new();
        let (mut n, mut sum) = (0u64, 0u128);
        for (i, b) in self.buckets.iter().enumerate() {
            if b.count == 0 {
                continue;
            }
            n += b.count;
            sum += b.sum_fct;
            buckets.push(BucketReport {
                size_bytes: self.sizes[i],
                count: b.count,
                mean_fct_ps: b.sum_fct as f64 / b.count as f64,
                min_fct_ps: b.min_fct,
                p10_fct_ps: pick(i, nearest_rank(10.0, b.count)),
                p99_fct_ps: pick(i, nearest_rank(99.0, b.count)),
                max_fct_ps: b.max_fct,
                mean_throughput_bps: b.sum_throughput / b.count as f64,
                mean_retransmissions: b.retransmissions as f64 / b.count as f64,
                histogram: b
                    .hist
                    .bins
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(k, &c)| (bin_floor(k), c))
                    .collect(),
            });
        }
        FctReport {
            buckets,
            aggregated: n,
            warmup_excluded: self.warmup_excluded,
            warmup_cutoff_ps: self.warmup_cutoff.as_ps(),
            completed: self.completed,
            last_finish_ps: self.last_finish.as_ps(),
            mean_fct_ps: if n == 0 { 0.0 } else { sum as f64 / n as f64 },
            exact_percentiles: exact,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn outcome(flow: u32, size: u32, fct: u64) -> FlowOutcome {
        FlowOutcome {
            flow,
            src: 0,
            dst: 1,
            size,
            arrival: SimTime(1_000),
            fct: SimTime(fct),
            retransmissions: 0,
            paths_used: 1,
        }
    }

    #[test]
    fn bins_are_monotone_and_tight() {
        let mut last = 0;
        for v in (0..5000u64).chain([1 << 40, (1 << 40) + 12345, u64::MAX / 2]) {
            let b = bin_of(v);
            assert!(b >= last);
            last = b;
            assert!(bin_floor(b) <= v);
            assert!(bin_of(bin_floor(b)) == b);
            assert!(v < 32 || (v - bin_floor(b)) as f64 / v as f64 <= 1.0 / 32.0);
        }
    }

    #[test]
    fn mean_and_max_by_bucket() {
        let d = SizeDistribution::default();
        let mut t: Telemetry<Vec<u8>> = Telemetry::new(&d, Some(Vec::new()), SimTime::ZERO).unwrap();
        for (i, ms) in [1u64, 2, 9].iter().enumerate() {
            t.record(&outcome(i as u32, 9400, ms * 1_000_000_000)).unwrap();
        }
        let (csv, agg) = t.into_writer().unwrap();
        let r = agg.report();
        assert_eq!(r.buckets.len(), 1);
        let b = &r.buckets[0];
        assert_eq!(b.mean_fct_ps, 4e9);
        assert_eq!(b.max_fct_ps, 9_000_000_000);
        assert_eq!(r.aggregated, 3);
        let text = String::from_utf8(csv.unwrap()).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().nth(1).unwrap(), "0,0,1,9400,1000,1000000000,0,1");
        let exact = agg.report_exact(text.as_bytes()).unwrap();
        assert_eq!(exact.buckets[0].p10_fct_ps, 1_000_000_000);
        assert_eq!(exact.buckets[0].p99_fct_ps, 9_000_000_000);
        let thr = b.mean_throughput_bps;
        let want = (9400.0 * 8.0) * (1.0 / 1e-3 + 1.0 / 2e-3 + 1.0 / 9e-3) / 3.0;
        assert!((thr - want).abs() / want < 1e-12);
    }

    #[test]
    fn exact_percentiles_match_sorting() {
        let d = SizeDistribution::default();
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        let mut t = Telemetry::new(&d, Some(Vec::new()), SimTime::ZERO).unwrap();
        let mut by_size: std::collections::BTreeMap<u32, Vec<u64>> = Default::default();
        for i in 0..1000 {
            let size = d.sizes()[rng.gen_range(0..3)];
            let fct = rng.gen_range(1_000..50_000_000u64);
            by_size.entry(size).or_default().push(fct);
            t.record(&outcome(i, size, fct)).unwrap();
        }
        let (csv, agg) = t.into_writer().unwrap();
        let r = agg.report_exact(&csv.unwrap()[..]).unwrap();
        assert!(r.exact_percentiles);
        for (size, v) in by_size {
            let b = r.bucket(size).unwrap();
            assert_eq!(b.p10_fct_ps, percentile(&v, 10.0).unwrap());
            assert_eq!(b.p99_fct_ps, percentile(&v, 99.0).unwrap());
            assert!(b.p10_fct_ps <= b.p99_fct_ps && b.p99_fct_ps <= b.max_fct_ps);
        }
        let est = agg.report();
        assert!(!est.exact_percentiles);
    }

    #[test]
    fn warmup_flows_are_written_but_not_aggregated() {
        let d = SizeDistribution::default();
        let mut t = Telemetry::new(&d, Some(Vec::new()), SimTime(5_000)).unwrap();
        t.record(&outcome(0, 1000, 10)).unwrap();
        let mut late = outcome(1, 1000, 30);
        late.arrival = SimTime(6_000);
        t.record(&late).unwrap();
        let (csv, agg) = t.into_writer().unwrap();
        let r = agg.report_exact(&csv.unwrap()[..]).unwrap();
        assert_eq!(r.warmup_excluded, 1);
        assert_eq!(r.aggregated, 1);
        assert_eq!(r.completed, 2);
        assert_eq!(r.buckets[0].p10_fct_ps, 30);
        assert_eq!(r.last_finish_ps, 6_030);
    }

    #[test]
    fn empty_buckets_are_omitted() {
        let d = SizeDistribution::default();
        let t: Telemetry<Vec<u8>> = Telemetry::new(&d, None, SimTime::ZERO).unwrap();
        let r = t.into_writer().unwrap().1.report();
        assert!(r.buckets.is_empty());
        assert_eq!(r.mean_fct_ps, 0.0);
    }

    #[test]
    fn nearest_rank_definition() {
        let v: Vec<u64> = (1..=1000).collect();
        assert_eq!(percentile(&v, 10.0), Some(100));
        assert_eq!(percentile(&v, 99.0), Some(990));
        assert_eq!(percentile(&[7], 99.0), Some(7));
        assert_eq!(percentile(&[], 50.0), None);
        assert_eq!(nearest_rank(99.0, 3), 3);
    }

    #[test]
    fn aggregate_memory_is_flat() {
        let d = SizeDistribution::default();
        let mut t: Telemetry<io::Sink> = Telemetry::new(&d, Some(io::sink()), SimTime::ZERO).unwrap();
        for i in 0..10_000 {
            t.record(&outcome(i, d.sizes()[(i % 20) as usize], 1_000_000 + i as u64 * 1000)).unwrap();
        }
        let before = t.heap_bytes();
        for i in 0..1_000_000 {
            t.record(&outcome(i, d.sizes()[(i % 20) as usize], 1_000_000 + (i as u64 % 10_000) * 1000)).unwrap();
        }
        assert_eq!(t.heap_bytes(), before);
    }
}
