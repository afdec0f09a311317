//! Benchmark scenarios: run an NF over generated traffic against a driver,
//! then verify the store holds exactly what the run implies.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::net::Ipv4Addr;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;

use crate::cache::CacheOptions;
use crate::config::FlexConfig;
use crate::driver::{Driver, DriverError, DriverRegistry, LatencyDriver, RespDriver, Snapshot};
use crate::nf::{
    self, combine_countermaps, combine_counters, AsyncCounter, CombineError, LoadBalancer, Nat, NatPool, NfError,
    NfKind, SyncCounter,
};
use crate::runtime::{self, rss_hash, DropReason, FlowLog, OverflowPolicy, RunReport, RuntimeConfig, RuntimeError};
use crate::traffic::{self, ReplayLimit, TrafficError, TrafficSpec};

pub const DEFAULT_REPETITIONS: u32 = 10;
pub const DEFAULT_NAT_POOL: u32 = 65_536;

fn micros<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u128(d.as_micros())
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchScenario {
    pub nf: NfKind,
    pub cores: usize,
    pub driver_label: String,
    pub endpoint: String,
    #[serde(rename = "flush_interval_us", serialize_with = "micros")]
    pub flush_interval: Duration,
    /// `traffic.seed` is the first seed; repetition `i` uses `seed + i`.
    pub traffic: TrafficSpec,
    #[serde(rename = "injected_latency_us", serialize_with = "micros")]
    pub injected_latency: Duration,
    pub repetitions: u32,
    pub nat_pool: u32,
    pub servers: Vec<String>,
    pub nf_id: String,
    pub instance_id: String,
    pub overflow: OverflowPolicy,
}

impl Default for BenchScenario {
    fn default() -> Self {
        Self {
            nf: NfKind::CounterAsync,
            cores: 1,
            driver_label: "flatkvs".into(),
            endpoint: "local".into(),
            flush_interval: crate::config::DEFAULT_FLUSH_INTERVAL,
            traffic: TrafficSpec::default(),
            injected_latency: Duration::ZERO,
            repetitions: DEFAULT_REPETITIONS,
            nat_pool: DEFAULT_NAT_POOL,
            servers: nf::default_servers(),
            nf_id: "nf1".into(),
            instance_id: "ins1".into(),
            overflow: OverflowPolicy::Block,
        }
    }
}

impl BenchScenario {
    pub fn from_config(cfg: &FlexConfig) -> Self {
        Self {
            driver_label: cfg.driver_label.clone(),
            endpoint: cfg.endpoint.clone(),
            flush_interval: cfg.flush_interval,
            nf_id: cfg.nf_id.clone(),
            instance_id: cfg.instance_id.clone(),
            ..Self::default()
        }
    }

    pub fn flex_config(&self) -> FlexConfig {
        FlexConfig {
            driver_label: self.driver_label.clone(),
            endpoint: self.endpoint.clone(),
            flush_interval: self.flush_interval,
            nf_id: self.nf_id.clone(),
            instance_id: self.instance_id.clone(),
        }
    }

    pub fn validate(&self, registry: &DriverRegistry) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Invalid(m));
        if self.cores == 0 {
            return bad("cores must be positive".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions must be positive".into());
        }
        self.flex_config().validate(registry).map_err(|e| BenchError::Invalid(e.to_string()))?;
        self.traffic.validate()?;
        match self.nf {
            NfKind::Nat => {
                NatPool::with_size(self.nat_pool)?;
            }
            NfKind::Lb => {
                LoadBalancer::new(self.servers.clone())?;
            }
            NfKind::CounterSync | NfKind::CounterAsync => {}
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Driver(#[from] DriverError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Nf(#[from] NfError),
    #[error(transparent)]
    Combine(#[from] CombineError),
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Self { name, passed, detail: detail.into() }
    }

    fn eq<T: PartialEq + std::fmt::Debug>(name: &'static str, got: T, want: T) -> Self {
        let passed = got == want;
        Self::new(name, passed, format!("got {got:?}, want {want:?}"))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Repetition {
    pub seed: u64,
    pub run: RunReport,
    pub checks: Vec<Check>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub scenario: BenchScenario,
    pub repetitions: Vec<Repetition>,
    pub mean_pps: f64,
    pub stdev_pps: f64,
    pub median_pps: f64,
    pub passed: bool,
}

impl BenchReport {
    fn from_reps(scenario: BenchScenario, repetitions: Vec<Repetition>) -> Self {
        let pps: Vec<f64> = repetitions.iter().map(|r| r.run.pps).collect();
        let passed = repetitions.iter().all(|r| r.passed);
        Self { scenario, mean_pps: mean(&pps), stdev_pps: stdev(&pps), median_pps: median(&pps), repetitions, passed }
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = (u64, &Check)> {
        self.repetitions.iter().flat_map(|r| r.checks.iter().filter(|c| !c.passed).map(move |c| (r.seed, c)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "nf",
            "driver",
            "endpoint",
            "cores",
            "flush_interval_us",
            "latency_us",
            "seed",
            "packets_in",
            "processed",
            "dropped",
            "nf_dropped",
            "duration_ns",
            "pps",
            "flushes",
            "mutations_flushed",
            "passed",
        ])
        .expect("in-memory csv");
        let s = &self.scenario;
        for r in &self.repetitions {
            let flushes: u64 = r.run.per_core.iter().map(|c| c.flush.flushes_succeeded).sum();
            let muts: u64 = r.run.per_core.iter().map(|c| c.flush.mutations_flushed).sum();
            w.write_record([
                s.nf.to_string(),
                s.driver_label.clone(),
                s.endpoint.clone(),
                s.cores.to_string(),
                s.flush_interval.as_micros().to_string(),
                s.injected_latency.as_micros().to_string(),
                r.seed.to_string(),
                r.run.packets_in.to_string(),
                r.run.processed.to_string(),
                r.run.dropped.to_string(),
                r.run.nf_dropped.to_string(),
                r.run.duration_ns.to_string(),
                format!("{:.0}", r.run.pps),
                flushes.to_string(),
                muts.to_string(),
                r.passed.to_string(),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
    }

    pub fn to_text(&self) -> String {
        let s = &self.scenario;
        let mut out = format!(
            "{} on {}@{}, {} core(s), flush {} us, latency {} us\n",
            s.nf,
            s.driver_label,
            s.endpoint,
            s.cores,
            s.flush_interval.as_micros(),
            s.injected_latency.as_micros()
        );
        let _ = writeln!(
            out,
            "{:>20} {:>12} {:>10} {:>12} {:>9} {:>6}",
            "seed", "processed", "dropped", "pps", "flushes", "ok"
        );
        for r in &self.repetitions {
            let flushes: u64 = r.run.per_core.iter().map(|c| c.flush.flushes_succeeded).sum();
            let _ = writeln!(
                out,
                "{:>20} {:>12} {:>10} {:>12.0} {:>9} {:>6}",
                r.seed,
                r.run.processed,
                r.run.dropped + r.run.nf_dropped,
                r.run.pps,
                flushes,
                if r.passed { "PASS" } else { "FAIL" }
            );
        }
        let _ = writeln!(
            out,
            "mean {:.0} pps, stdev {:.0}, median {:.0}: {}",
            self.mean_pps,
            self.stdev_pps,
            self.median_pps,
            if self.passed { "PASS" } else { "FAIL" }
        );
        for (seed, c) in self.failed_checks() {
            let _ = writeln!(out, "  seed {seed}: {} failed: {}", c.name, c.detail);
        }
        out
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Sample standard deviation.
pub fn stdev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// A new, empty store for one repetition. A remote RESP endpoint is wiped
/// with FLUSHALL since it cannot be recreated.
fn fresh_store(s: &BenchScenario, registry: &DriverRegistry) -> Result<Arc<dyn Driver>, BenchError> {
    if s.driver_label == "resp" && s.endpoint != "local" {
        let d = RespDriver::connect(&s.endpoint)?;
        d.flush_all()?;
        return Ok(Arc::new(d));
    }
    Ok(registry.create(&s.driver_label, &s.endpoint)?)
}

/// Runs every repetition of `s`. Failed correctness checks mark the report
/// failed; they are not errors.
pub fn run_scenario(s: &BenchScenario, registry: &DriverRegistry) -> Result<BenchReport, BenchError> {
    s.validate(registry)?;
    let reps = (0..u64::from(s.repetitions))
        .map(|i| run_repetition(s, s.traffic.seed.wrapping_add(i), registry))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BenchReport::from_reps(s.clone(), reps))
}

pub fn run_repetition(s: &BenchScenario, seed: u64, registry: &DriverRegistry) -> Result<Repetition, BenchError> {
    let spec = TrafficSpec { seed, ..s.traffic.clone() };
    let flows = traffic::generate(&spec)?;
    let source = traffic::replay(&flows, &spec)?;
    let store = fresh_store(s, registry)?;
    let driver: Arc<dyn Driver> = if s.injected_latency.is_zero() {
        store.clone()
    } else {
        Arc::new(LatencyDriver::new(store.clone(), s.injected_latency))
    };
    let cfg = s.flex_config();
    let mut rt = RuntimeConfig::new(s.cores, CacheOptions::from_config(&cfg));
    rt.overflow = s.overflow;
    rt.track_flows = true;

    let outcome = match s.nf {
        NfKind::CounterSync => runtime::run(Arc::new(SyncCounter), &cfg, driver, &rt, source)?,
        NfKind::CounterAsync => runtime::run(Arc::new(AsyncCounter), &cfg, driver, &rt, source)?,
        NfKind::Nat => runtime::run(Arc::new(Nat::new(NatPool::with_size(s.nat_pool)?)), &cfg, driver, &rt, source)?,
        NfKind::Lb => runtime::run(Arc::new(LoadBalancer::new(s.servers.clone())?), &cfg, driver, &rt, source)?,
    };
    let run = outcome.report;
    let logs = outcome.flow_logs.unwrap_or_default();

    let mut checks = vec![
        Check::eq("dispatch_conservation", run.packets_in, run.processed + run.dropped),
        Check::new(
            "drain",
            run.drain_ok(),
            run.per_core.iter().filter_map(|c| c.drain_error.clone()).collect::<Vec<_>>().join("; "),
        ),
        flow_affinity(&logs, s.cores),
    ];
    if run.dropped == 0 {
        let seen: usize = logs.iter().map(|l| l.egress.len() + l.dropped_only.len()).sum();
        let want = (run.packets_in.min(flows.len() as u64)) as usize;
        checks.push(Check::eq("flow_count", seen, want));
    }

    let mut session = store.open_session()?;
    let ins = [s.instance_id.as_str()];
    match s.nf {
        NfKind::CounterSync | NfKind::CounterAsync => {
            let total = combine_counters(&mut *session, &s.nf_id, &ins, nf::COUNTER_ID)?;
            checks.push(Check::eq("conservation", total, run.forwarded as i64));
        }
        NfKind::Nat => {
            let pool = NatPool::with_size(s.nat_pool)?;
            let stored = scan_maps(&mut *session, s, nf::NAT_BINDINGS_ID)?;
            checks.extend(nat_checks(&pool, &logs, &stored, &run, flows.len()));
        }
        NfKind::Lb => {
            let combined = combine_countermaps(&mut *session, &s.nf_id, &ins, nf::LOAD_ID)?;
            let per_core = scan_countermaps(&mut *session, s, nf::LOAD_ID)?;
            checks.extend(lb_checks(&s.servers, &logs, &per_core, &combined));
        }
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(Repetition { seed, run, checks, passed })
}

fn flow_affinity(logs: &[FlowLog], cores: usize) -> Check {
    let mut bad = 0usize;
    let mut owner = HashMap::new();
    for (core, log) in logs.iter().enumerate() {
        for f in log.flows() {
            if owner.insert(*f, core).is_some() || rss_hash(f, cores) != core {
                bad += 1;
            }
        }
    }
    Check::new("flow_affinity", bad == 0, format!("{bad} flow(s) outside their core"))
}

type ByteMap = BTreeMap<Vec<u8>, Vec<u8>>;

fn scan_maps(
    session: &mut dyn crate::driver::Session,
    s: &BenchScenario,
    id: &str,
) -> Result<Vec<ByteMap>, DriverError> {
    let mut per_core = vec![BTreeMap::new(); s.cores];
    for (k, snap) in session.scan_prefix(&s.nf_id, &s.instance_id)? {
        if let (Snapshot::Map(m), true) = (snap, k.structure_id().as_str() == id) {
            if let Some(slot) = per_core.get_mut(k.core_id() as usize) {
                *slot = m;
            }
        }
    }
    Ok(per_core)
}

fn scan_countermaps(
    session: &mut dyn crate::driver::Session,
    s: &BenchScenario,
    id: &str,
) -> Result<Vec<BTreeMap<Vec<u8>, i64>>, DriverError> {
    let mut per_core = vec![BTreeMap::new(); s.cores];
    for (k, snap) in session.scan_prefix(&s.nf_id, &s.instance_id)? {
        if let (Snapshot::CounterMap(m), true) = (snap, k.structure_id().as_str() == id) {
            if let Some(slot) = per_core.get_mut(k.core_id() as usize) {
                *slot = m;
            }
        }
    }
    Ok(per_core)
}

fn nat_checks(
    pool: &NatPool,
    logs: &[FlowLog],
    stored: &[BTreeMap<Vec<u8>, Vec<u8>>],
    run: &RunReport,
    n_flows: usize,
) -> Vec<Check> {
    let n_cores = logs.len() as u32;
    let mut pairs: HashSet<(Ipv4Addr, u16)> = HashSet::new();
    let mut collisions = 0usize;
    let mut outside_chunk = 0usize;
    let mut store_mismatch = 0usize;
    for (core, log) in logs.iter().enumerate() {
        let chunk = pool.chunk(core as u32, n_cores);
        for (flow, e) in &log.egress {
            if !pairs.insert((e.src_ip, e.src_port)) {
                collisions += 1;
            }
            if !pool.index_of(e.src_ip, e.src_port).is_some_and(|i| chunk.contains(&i)) {
                outside_chunk += 1;
            }
            let in_store =
                stored.get(core).and_then(|m| m.get(&flow.to_bytes()[..])).and_then(|v| nf::decode_binding(v));
            if in_store != Some((e.src_ip, e.src_port)) {
                store_mismatch += 1;
            }
        }
    }
    let logged: usize = logs.iter().map(|l| l.egress.len()).sum();
    let stored_total: usize = stored.iter().map(BTreeMap::len).sum();
    let unstable: u64 = logs.iter().map(|l| l.unstable).sum();
    let chunks_disjoint = (1..n_cores).all(|c| pool.chunk(c - 1, n_cores).end <= pool.chunk(c, n_cores).start);
    let exhausted = run.drops(DropReason::PoolExhausted);
    let mut checks = vec![
        Check::new("nat_injective", collisions == 0, format!("{collisions} shared pair(s)")),
        Check::new(
            "nat_stable",
            unstable == 0 && store_mismatch == 0 && stored_total == logged,
            format!("{unstable} flow(s) rebound, {store_mismatch} differ from store, {stored_total} stored vs {logged} logged"),
        ),
        Check::new(
            "nat_chunks_disjoint",
            chunks_disjoint && outside_chunk == 0,
            format!("{outside_chunk} pair(s) outside their core's chunk"),
        ),
    ];
    if pool.size() as usize >= n_flows {
        checks.push(Check::eq("nat_pool_exhausted", exhausted, 0));
    } else {
        checks.push(Check::new(
            "nat_pool_exhausted",
            true,
            format!("{exhausted} packet(s) dropped; pool {} < {n_flows} flows", pool.size()),
        ));
    }
    checks
}

fn lb_checks(
    servers: &[String],
    logs: &[FlowLog],
    per_core: &[BTreeMap<Vec<u8>, i64>],
    combined: &BTreeMap<Vec<u8>, i64>,
) -> Vec<Check> {
    let spread = |m: &BTreeMap<Vec<u8>, i64>| {
        let loads: Vec<i64> = servers.iter().map(|s| m.get(s.as_bytes()).copied().unwrap_or(0)).collect();
        loads.iter().max().copied().unwrap_or(0) - loads.iter().min().copied().unwrap_or(0)
    };
    let worst_core = per_core.iter().map(spread).max().unwrap_or(0);
    let global = spread(combined);

    let mut logged: BTreeMap<Vec<u8>, i64> = BTreeMap::new();
    for log in logs {
        for e in log.egress.values() {
            if let Some(s) = e.annotation.and_then(|i| servers.get(i as usize)) {
                *logged.entry(s.as_bytes().to_vec()).or_default() += 1;
            }
        }
    }
    let unstable: u64 = logs.iter().map(|l| l.unstable).sum();
    vec![
        Check::new("lb_core_balance", worst_core <= 1, format!("worst per-core spread {worst_core}")),
        Check::new(
            "lb_global_balance",
            global <= logs.len() as i64,
            format!("global spread {global}, bound {}", logs.len()),
        ),
        Check::new(
            "lb_totals",
            &logged == combined,
            format!("combined {} server(s), logged {}", combined.len(), logged.len()),
        ),
        Check::new("lb_stable", unstable == 0, format!("{unstable} flow(s) reassigned")),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Cores,
    Driver,
    Interval,
    Nf,
}

impl FromStr for SweepAxis {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        match s {
            "cores" => Ok(SweepAxis::Cores),
            "driver" => Ok(SweepAxis::Driver),
            "interval" => Ok(SweepAxis::Interval),
            "nf" => Ok(SweepAxis::Nf),
            _ => Err(BenchError::Invalid(format!("unknown sweep axis {s:?} (cores, driver, interval, nf)"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub axis: SweepAxis,
    pub value: String,
    pub report: Option<BenchReport>,
    pub error: Option<String>,
    /// Highest mean pps among the cells that share this cell's driver.
    pub best_for_driver: bool,
}

impl SweepCell {
    pub fn passed(&self) -> bool {
        self.report.as_ref().is_some_and(|r| r.passed)
    }
}

/// Applies one sweep value to a copy of `base`. Interval values are microseconds.
pub fn scenario_for(axis: SweepAxis, value: &str, base: &BenchScenario) -> Result<BenchScenario, BenchError> {
    let bad = || BenchError::Invalid(format!("bad {axis:?} value {value:?}"));
    let mut s = base.clone();
    match axis {
        SweepAxis::Cores => s.cores = value.parse().map_err(|_| bad())?,
        SweepAxis::Driver => {
            if value != base.driver_label {
                s.endpoint = "local".into();
            }
            s.driver_label = value.to_owned();
        }
        SweepAxis::Interval => {
            let us: f64 = value.parse().map_err(|_| bad())?;
            if !(us > 0.0 && us.is_finite()) {
                return Err(bad());
            }
            s.flush_interval = Duration::from_secs_f64(us / 1e6);
        }
        SweepAxis::Nf => s.nf = value.parse()?,
    }
    Ok(s)
}

/// Runs one scenario per value. A failing cell is recorded and the sweep goes on.
pub fn sweep(
    axis: SweepAxis,
    values: &[String],
    base: &BenchScenario,
    registry: &DriverRegistry,
) -> Result<Vec<SweepCell>, BenchError> {
    if values.is_empty() {
        return Err(BenchError::Invalid("sweep needs at least one value".into()));
    }
    let mut cells: Vec<SweepCell> = values
        .iter()
        .map(|v| {
            let (report, error) = match scenario_for(axis, v, base).and_then(|s| run_scenario(&s, registry)) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            SweepCell { axis, value: v.clone(), report, error, best_for_driver: false }
        })
        .collect();
    let mut best: HashMap<String, (usize, f64)> = HashMap::new();
    for (i, c) in cells.iter().enumerate() {
        if let Some(r) = &c.report {
            let e = best.entry(r.scenario.driver_label.clone()).or_insert((i, r.mean_pps));
            if r.mean_pps > e.1 {
                *e = (i, r.mean_pps);
            }
        }
    }
    for (i, _) in best.into_values() {
        cells[i].best_for_driver = true;
    }
    Ok(cells)
}

pub fn sweep_to_json(cells: &[SweepCell]) -> String {
    serde_json::to_string_pretty(cells).expect("sweep serializes")
}

fn cell_row(c: &SweepCell) -> Vec<String> {
    let (nf, driver, cores, interval, mean, stdev, median, flushes) = match &c.report {
        Some(r) => {
            let s = &r.scenario;
            let flushes: Vec<f64> = r
                .repetitions
                .iter()
                .map(|rep| rep.run.per_core.iter().map(|c| c.flush.flushes_succeeded).sum::<u64>() as f64)
                .collect();
            (
                s.nf.to_string(),
                s.driver_label.clone(),
                s.cores.to_string(),
                s.flush_interval.as_micros().to_string(),
                format!("{:.0}", r.mean_pps),
                format!("{:.0}", r.stdev_pps),
                format!("{:.0}", r.median_pps),
                format!("{:.0}", mean(&flushes)),
            )
        }
        None => Default::default(),
    };
    vec![
        format!("{:?}", c.axis).to_lowercase(),
        c.value.clone(),
        nf,
        driver,
        cores,
        interval,
        mean,
        stdev,
        median,
        flushes,
        c.passed().to_string(),
        c.best_for_driver.to_string(),
        c.error.clone().unwrap_or_default(),
    ]
}

const SWEEP_HEADER: [&str; 13] = [
    "axis",
    "value",
    "nf",
    "driver",
    "cores",
    "flush_interval_us",
    "mean_pps",
    "stdev_pps",
    "median_pps",
    "mean_flushes",
    "passed",
    "best_for_driver",
    "error",
];

pub fn sweep_to_csv(cells: &[SweepCell]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_HEADER).expect("in-memory csv");
    for c in cells {
        w.write_record(cell_row(c)).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

pub fn sweep_to_text(cells: &[SweepCell]) -> String {
    let rows: Vec<Vec<String>> = std::iter::once(SWEEP_HEADER.iter().map(|s| s.to_string()).collect())
        .chain(cells.iter().map(cell_row))
        .collect();
    let widths: Vec<usize> =
        (0..SWEEP_HEADER.len()).map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Convenience for packet-budget scenarios.
pub fn budget_traffic(n_flows: usize, packets: u64, seed: u64) -> TrafficSpec {
    TrafficSpec { n_flows, seed, limit: ReplayLimit::Budget(packets), ..TrafficSpec::default() }
}
