//! Simulated RSS dispatch onto per-core workers.
//!
//! A single dispatcher hashes every packet's 5-tuple to a core and hands it to
//! that core's bounded queue in batches of [`DISPATCH_BATCH`]. Each worker
//! thread owns one [`CoreCache`] (and through it a flusher and a driver
//! session) and runs the NF handler on its packets.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::hash::Hasher;
use std::net::Ipv4Addr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Instant;

use crossbeam::channel::{self, Receiver, Sender, TrySendError};
use serde::{Deserialize, Serialize};

use crate::api::ApiError;
use crate::cache::{CacheError, CacheOptions, CoreCache, FlushStats};
use crate::config::FlexConfig;
use crate::driver::Driver;

/// Ethernet + IPv4 + TCP headers.
pub const MIN_PACKET_SIZE: u16 = 54;
pub const DEFAULT_PACKET_SIZE: u16 = 64;
pub const DEFAULT_QUEUE_CAPACITY: usize = 64 * 1024;
pub const DISPATCH_BATCH: usize = 64;

/// Direction-sensitive 5-tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowKey {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: u8,
}

impl FlowKey {
    pub const ENCODED_LEN: usize = 13;

    /// Canonical byte encoding, also used as state map key by the NFs.
    pub fn to_bytes(&self) -> [u8; Self::ENCODED_LEN] {
        let mut b = [0u8; Self::ENCODED_LEN];
        b[0..4].copy_from_slice(&self.src_ip.octets());
        b[4..8].copy_from_slice(&self.dst_ip.octets());
        b[8..10].copy_from_slice(&self.src_port.to_be_bytes());
        b[10..12].copy_from_slice(&self.dst_port.to_be_bytes());
        b[12] = self.proto;
        b
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        if b.len() != Self::ENCODED_LEN {
            return None;
        }
        Some(Self {
            src_ip: Ipv4Addr::new(b[0], b[1], b[2], b[3]),
            dst_ip: Ipv4Addr::new(b[4], b[5], b[6], b[7]),
            src_port: u16::from_be_bytes([b[8], b[9]]),
            dst_port: u16::from_be_bytes([b[10], b[11]]),
            proto: b[12],
        })
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{},{}", self.src_ip, self.dst_ip, self.src_port, self.dst_port, self.proto)
    }
}

/// A packet record. Only headers matter here; `size` is metadata for rate math.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Packet {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: u8,
    pub size: u16,
    /// Set by NFs that tag packets, e.g. the load balancer's server index.
    pub annotation: Option<u32>,
}

impl Packet {
    pub fn new(flow: FlowKey, size: u16) -> Self {
        assert!(size >= MIN_PACKET_SIZE, "packet size {size} below {MIN_PACKET_SIZE}");
        Self {
            src_ip: flow.src_ip,
            dst_ip: flow.dst_ip,
            src_port: flow.src_port,
            dst_port: flow.dst_port,
            proto: flow.proto,
            size,
            annotation: None,
        }
    }

    pub fn flow(&self) -> FlowKey {
        FlowKey {
            src_ip: self.src_ip,
            dst_ip: self.dst_ip,
            src_port: self.src_port,
            dst_port: self.dst_port,
            proto: self.proto,
        }
    }

    /// Swaps source and destination, standing in for a MAC swap.
    pub fn reflect(&mut self) {
        std::mem::swap(&mut self.src_ip, &mut self.dst_ip);
        std::mem::swap(&mut self.src_port, &mut self.dst_port);
    }
}

struct Mix(u64);

impl Hasher for Mix {
    fn finish(&self) -> u64 {
        // splitmix64 finalizer
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    fn write(&mut self, bytes: &[u8]) {
        for chunk in bytes.chunks(8) {
            let mut w = [0u8; 8];
            w[..chunk.len()].copy_from_slice(chunk);
            self.0 = (self.0 ^ u64::from_le_bytes(w)).wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(29);
        }
    }
}

/// Core that receives `flow`, in `0..n_cores`.
pub fn rss_hash(flow: &FlowKey, n_cores: usize) -> usize {
    assert!(n_cores >= 1, "n_cores must be positive");
    let mut h = Mix(0x243f_6a88_85a3_08d3);
    h.write(&flow.to_bytes());
    (h.finish() % n_cores as u64) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    QueueOverflow,
    StoreUnavailable,
    Backpressure,
    PoolExhausted,
    Invalid,
}

impl DropReason {
    pub fn from_api(e: &ApiError) -> Self {
        match e {
            ApiError::StoreUnavailable(_) => DropReason::StoreUnavailable,
            ApiError::Backpressure => DropReason::Backpressure,
            _ => DropReason::Invalid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Forward,
    Drop(DropReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CoreInfo {
    pub core_id: u32,
    pub n_cores: u32,
}

/// Packet-processing logic, instantiated once and shared by all workers.
/// `init_core` runs on the worker thread before any packet arrives.
pub trait NetworkFunction: Send + Sync + 'static {
    type Local;

    fn name(&self) -> &str;

    fn init_core(&self, core: CoreInfo, cache: &mut CoreCache) -> Result<Self::Local, ApiError>;

    fn handle(&self, local: &mut Self::Local, cache: &mut CoreCache, packet: &mut Packet) -> Verdict;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverflowPolicy {
    /// The dispatcher waits for queue space; nothing is lost.
    #[default]
    Block,
    /// Packets that find the queue full are dropped and counted.
    Drop,
}

#[derive(Debug, Clone)]
pub struct RuntimeConfig {
    pub n_cores: usize,
    /// Per-core queue capacity in packets.
    pub queue_capacity: usize,
    pub overflow: OverflowPolicy,
    pub cache: CacheOptions,
    /// Record per-flow egress headers on every core (for affinity and NAT checks).
    pub track_flows: bool,
}

impl RuntimeConfig {
    pub fn new(n_cores: usize, cache: CacheOptions) -> Self {
        Self {
            n_cores,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            overflow: OverflowPolicy::default(),
            cache,
            track_flows: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("n_cores must be positive")]
    NoCores,
    #[error("core {core}: {source}")]
    Cache { core: u32, source: CacheError },
    #[error("core {core}: NF init failed: {source}")]
    Init { core: u32, source: ApiError },
    #[error("worker {0} panicked")]
    WorkerPanicked(u32),
}

/// Egress headers of one flow as first seen leaving a core.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Egress {
    pub src_ip: Ipv4Addr,
    pub src_port: u16,
    pub annotation: Option<u32>,
}

#[derive(Debug, Default, Clone)]
pub struct FlowLog {
    pub egress: HashMap<FlowKey, Egress>,
    /// Flows whose packets left the core with differing headers.
    pub unstable: u64,
    /// Flows whose every packet so far was dropped.
    pub dropped_only: HashMap<FlowKey, u64>,
}

impl FlowLog {
    fn record(&mut self, flow: FlowKey, verdict: Verdict, p: &Packet) {
        match verdict {
            Verdict::Forward => {
                let e = Egress { src_ip: p.src_ip, src_port: p.src_port, annotation: p.annotation };
                match self.egress.get(&flow) {
                    Some(prev) if *prev != e => self.unstable += 1,
                    Some(_) => {}
                    None => {
                        self.dropped_only.remove(&flow);
                        self.egress.insert(flow, e);
                    }
                }
            }
            Verdict::Drop(_) => {
                if !self.egress.contains_key(&flow) {
                    *self.dropped_only.entry(flow).or_default() += 1;
                }
            }
        }
    }

    pub fn flows(&self) -> impl Iterator<Item = &FlowKey> {
        self.egress.keys().chain(self.dropped_only.keys())
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CoreReport {
    pub core: u32,
    /// Packets handed to the NF.
    pub processed: u64,
    pub forwarded: u64,
    /// Every drop on this core, queue overflow included.
    pub dropped: u64,
    pub drop_reasons: BTreeMap<DropReason, u64>,
    pub flows: Option<usize>,
    pub flush: FlushStats,
    pub drain_error: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunReport {
    pub nf: String,
    pub cores: usize,
    pub packets_in: u64,
    pub processed: u64,
    pub forwarded: u64,
    /// Packets lost to full queues; `packets_in == processed + dropped`.
    pub dropped: u64,
    /// Packets the NF chose to drop.
    pub nf_dropped: u64,
    pub duration_ns: u64,
    pub pps: f64,
    pub per_core: Vec<CoreReport>,
}

impl RunReport {
    pub fn drain_ok(&self) -> bool {
        self.per_core.iter().all(|c| c.drain_error.is_none())
    }

    pub fn drops(&self, reason: DropReason) -> u64 {
        self.per_core.iter().map(|c| c.drop_reasons.get(&reason).copied().unwrap_or(0)).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    /// One log per core when flow tracking is on.
    pub flow_logs: Option<Vec<FlowLog>>,
}

struct WorkerResult {
    report: CoreReport,
    log: Option<FlowLog>,
    finished: Instant,
}

struct WorkerSlot {
    tx: Option<Sender<Vec<Packet>>>,
    buf: Vec<Packet>,
    queue_drops: u64,
    handle: JoinHandle<WorkerResult>,
}

/// Running set of workers, one per core.
pub struct WorkerPool {
    nf_name: String,
    workers: Vec<WorkerSlot>,
    policy: OverflowPolicy,
    packets_in: u64,
    started: Instant,
}

impl WorkerPool {
    /// Spawns one worker per core and waits until every NF instance is ready.
    pub fn start<N: NetworkFunction>(
        nf: Arc<N>,
        config: &FlexConfig,
        driver: Arc<dyn Driver>,
        rt: &RuntimeConfig,
    ) -> Result<Self, RuntimeError> {
        if rt.n_cores == 0 {
            return Err(RuntimeError::NoCores);
        }
        let capacity = rt.queue_capacity.div_ceil(DISPATCH_BATCH).max(1);
        let (ready_tx, ready_rx) = channel::unbounded();
        let mut workers = Vec::with_capacity(rt.n_cores);
        for core in 0..rt.n_cores as u32 {
            let (tx, rx) = channel::bounded::<Vec<Packet>>(capacity);
            let info = CoreInfo { core_id: core, n_cores: rt.n_cores as u32 };
            let (nf, cfg, driver, opts, ready) =
                (nf.clone(), config.clone(), driver.clone(), rt.cache.clone(), ready_tx.clone());
            let track = rt.track_flows;
            let handle = std::thread::Builder::new()
                .name(format!("worker-{core}"))
                .spawn(move || worker_main(&*nf, info, &cfg, &*driver, opts, track, rx, ready))
                .expect("spawn worker thread");
            workers.push(WorkerSlot { tx: Some(tx), buf: Vec::with_capacity(DISPATCH_BATCH), queue_drops: 0, handle });
        }
        drop(ready_tx);
        let mut failure = None;
        for _ in 0..rt.n_cores {
            match ready_rx.recv() {
                Ok(Ok(())) => {}
                Ok(Err(e)) => failure = failure.or(Some(e)),
                Err(_) => break,
            }
        }
        let pool = Self {
            nf_name: nf.name().to_owned(),
            workers,
            policy: rt.overflow,
            packets_in: 0,
            started: Instant::now(),
        };
        if let Some(e) = failure {
            let _ = pool.finish();
            return Err(e);
        }
        Ok(pool)
    }

    pub fn n_cores(&self) -> usize {
        self.workers.len()
    }

    pub fn dispatch(&mut self, packet: Packet) {
        if self.packets_in == 0 {
            self.started = Instant::now();
        }
        self.packets_in += 1;
        let n = self.workers.len();
        let w = &mut self.workers[rss_hash(&packet.flow(), n)];
        w.buf.push(packet);
        if w.buf.len() >= DISPATCH_BATCH {
            Self::send(w, self.policy);
        }
    }

    fn send(w: &mut WorkerSlot, policy: OverflowPolicy) {
        if w.buf.is_empty() {
            return;
        }
        let batch = std::mem::replace(&mut w.buf, Vec::with_capacity(DISPATCH_BATCH));
        let Some(tx) = &w.tx else { return };
        match policy {
            OverflowPolicy::Block => {
                if let Err(e) = tx.send(batch) {
                    w.queue_drops += e.0.len() as u64;
                }
            }
            OverflowPolicy::Drop => match tx.try_send(batch) {
                Ok(()) => {}
                Err(TrySendError::Full(b)) | Err(TrySendError::Disconnected(b)) => w.queue_drops += b.len() as u64,
            },
        }
    }

    /// Stops dispatch, lets every worker finish its queue and drain its cache.
    pub fn finish(mut self) -> Result<RunOutcome, RuntimeError> {
        for w in &mut self.workers {
            Self::send(w, self.policy);
            w.tx = None;
        }
        let mut per_core = Vec::with_capacity(self.workers.len());
        let mut logs = Vec::new();
        let mut end = self.started;
        for (core, w) in self.workers.into_iter().enumerate() {
            let mut res = w.handle.join().map_err(|_| RuntimeError::WorkerPanicked(core as u32))?;
            end = end.max(res.finished);
            if w.queue_drops > 0 {
                res.report.dropped += w.queue_drops;
                *res.report.drop_reasons.entry(DropReason::QueueOverflow).or_default() += w.queue_drops;
            }
            per_core.push(res.report);
            logs.extend(res.log);
        }
        let duration = end.saturating_duration_since(self.started);
        let processed: u64 = per_core.iter().map(|c| c.processed).sum();
        let forwarded: u64 = per_core.iter().map(|c| c.forwarded).sum();
        let queue_drops: u64 =
            per_core.iter().map(|c| c.drop_reasons.get(&DropReason::QueueOverflow).copied().unwrap_or(0)).sum();
        let report = RunReport {
            nf: self.nf_name,
            cores: per_core.len(),
            packets_in: self.packets_in,
            processed,
            forwarded,
            dropped: queue_drops,
            nf_dropped: processed - forwarded,
            duration_ns: duration.as_nanos() as u64,
            pps: if duration.is_zero() { 0.0 } else { processed as f64 / duration.as_secs_f64() },
            per_core,
        };
        let flow_logs = (!logs.is_empty()).then_some(logs);
        Ok(RunOutcome { report, flow_logs })
    }
}

#[allow(clippy::too_many_arguments)]
fn worker_main<N: NetworkFunction>(
    nf: &N,
    info: CoreInfo,
    cfg: &FlexConfig,
    driver: &dyn Driver,
    opts: CacheOptions,
    track: bool,
    rx: Receiver<Vec<Packet>>,
    ready: Sender<Result<(), RuntimeError>>,
) -> WorkerResult {
    let core = info.core_id;
    let mut report = CoreReport { core, ..CoreReport::default() };
    let setup = CoreCache::open(core, cfg, driver, opts)
        .map_err(|source| RuntimeError::Cache { core, source })
        .and_then(|mut cache| match nf.init_core(info, &mut cache) {
            Ok(local) => Ok((cache, local)),
            Err(source) => Err(RuntimeError::Init { core, source }),
        });
    let (mut cache, mut local) = match setup {
        Ok(v) => {
            let _ = ready.send(Ok(()));
            v
        }
        Err(e) => {
            let _ = ready.send(Err(e));
            // Keep consuming so the dispatcher never blocks on a dead core.
            for batch in rx {
                report.dropped += batch.len() as u64;
                *report.drop_reasons.entry(DropReason::Invalid).or_default() += batch.len() as u64;
            }
            return WorkerResult { report, log: None, finished: Instant::now() };
        }
    };
    drop(ready);

    let mut log = track.then(FlowLog::default);
    for batch in rx {
        for mut p in batch {
            let flow = p.flow();
            let verdict = nf.handle(&mut local, &mut cache, &mut p);
            report.processed += 1;
            match verdict {
                Verdict::Forward => report.forwarded += 1,
                Verdict::Drop(r) => {
                    report.dropped += 1;
                    *report.drop_reasons.entry(r).or_default() += 1;
                }
            }
            if let Some(log) = &mut log {
                log.record(flow, verdict, &p);
            }
        }
    }
    let finished = Instant::now();
    if let Err(e) = cache.drain() {
        report.drain_error = Some(e.to_string());
    }
    report.flush = cache.stats();
    report.flows = log.as_ref().map(|l| l.egress.len() + l.dropped_only.len());
    WorkerResult { report, log, finished }
}

/// Starts a pool, dispatches every packet of `source`, and finishes.
pub fn run<N: NetworkFunction>(
    nf: Arc<N>,
    config: &FlexConfig,
    driver: Arc<dyn Driver>,
    rt: &RuntimeConfig,
    source: impl IntoIterator<Item = Packet>,
) -> Result<RunOutcome, RuntimeError> {
    let mut pool = WorkerPool::start(nf, config, driver, rt)?;
    for p in source {
        pool.dispatch(p);
    }
    pool.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::FlatKvsDriver;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn flow(i: u32) -> FlowKey {
        FlowKey {
            src_ip: Ipv4Addr::from(0xc612_0000 + i),
            dst_ip: Ipv4Addr::new(198, 19, 0, 1),
            src_port: (i % 60000) as u16 + 1024,
            dst_port: 80,
            proto: 6,
        }
    }

    #[test]
    fn rss_single_core() {
        assert!((0..1000).all(|i| rss_hash(&flow(i), 1) == 0));
    }

    #[test]
    fn rss_is_uniform_over_eight_cores() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0u32; 8];
        for _ in 0..50_000 {
            let f = FlowKey {
                src_ip: Ipv4Addr::from(rng.gen::<u32>()),
                dst_ip: Ipv4Addr::from(rng.gen::<u32>()),
                src_port: rng.gen(),
                dst_port: rng.gen(),
                proto: 6,
            };
            counts[rss_hash(&f, 8)] += 1;
        }
        for c in counts {
            assert!((5625..=6875).contains(&c), "{counts:?}");
        }
        // chi-square, 7 degrees of freedom, 0.001 critical value
        let chi: f64 = counts.iter().map(|&c| (c as f64 - 6250.0).powi(2) / 6250.0).sum();
        assert!(chi < 24.32, "chi-square {chi}");
    }

    proptest! {
        #[test]
        fn rss_deterministic_and_in_range(a: u32, b: u32, sp: u16, dp: u16, n in 1usize..64) {
            let f = FlowKey { src_ip: a.into(), dst_ip: b.into(), src_port: sp, dst_port: dp, proto: 6 };
            let c = rss_hash(&f, n);
            prop_assert!(c < n);
            prop_assert_eq!(c, rss_hash(&f, n));
        }

        #[test]
        fn flow_bytes_round_trip(a: u32, b: u32, sp: u16, dp: u16, p: u8) {
            let f = FlowKey { src_ip: a.into(), dst_ip: b.into(), src_port: sp, dst_port: dp, proto: p };
            prop_assert_eq!(FlowKey::from_bytes(&f.to_bytes()), Some(f));
        }
    }

    #[test]
    #[should_panic(expected = "below")]
    fn packets_need_headers() {
        Packet::new(flow(0), 53);
    }

    struct Tally;

    impl NetworkFunction for Tally {
        type Local = crate::api::Counter;

        fn name(&self) -> &str {
            "tally"
        }

        fn init_core(&self, _: CoreInfo, cache: &mut CoreCache) -> Result<Self::Local, ApiError> {
            cache.counter("seen")
        }

        fn handle(&self, c: &mut Self::Local, cache: &mut CoreCache, p: &mut Packet) -> Verdict {
            match c.add_nowait(cache, 1) {
                Ok(()) => {
                    p.annotation = Some(cache.core_id());
                    Verdict::Forward
                }
                Err(e) => Verdict::Drop(DropReason::from_api(&e)),
            }
        }
    }

    fn run_tally(n_cores: usize, packets: u32, policy: OverflowPolicy, capacity: usize) -> RunOutcome {
        let driver: Arc<dyn Driver> = Arc::new(FlatKvsDriver::new());
        let cfg = FlexConfig::new("nf1", "ins1", "flatkvs");
        let mut rt = RuntimeConfig::new(n_cores, CacheOptions::default());
        rt.track_flows = true;
        rt.overflow = policy;
        rt.queue_capacity = capacity;
        let source = (0..packets).map(|i| Packet::new(flow(i % 500), 64));
        run(Arc::new(Tally), &cfg, driver, &rt, source).unwrap()
    }

    #[test]
    fn dispatch_conserves_and_keeps_flow_affinity() {
        let out = run_tally(4, 100_000, OverflowPolicy::Block, DEFAULT_QUEUE_CAPACITY);
        let r = &out.report;
        assert_eq!(r.packets_in, 100_000);
        assert_eq!(r.processed, 100_000);
        assert_eq!(r.dropped, 0);
        assert_eq!(r.per_core.iter().map(|c| c.processed).sum::<u64>(), 100_000);
        let logs = out.flow_logs.unwrap();
        let mut owner = HashMap::new();
        for (core, log) in logs.iter().enumerate() {
            assert_eq!(log.unstable, 0);
            for f in log.flows() {
                assert_eq!(owner.insert(*f, core), None, "flow {f} seen on two cores");
                assert_eq!(rss_hash(f, 4), core);
            }
        }
        assert_eq!(owner.len(), 500);
        assert!(r.drain_ok());
    }

    #[test]
    fn drop_policy_accounts_every_packet() {
        let out = run_tally(2, 200_000, OverflowPolicy::Drop, DISPATCH_BATCH);
        let r = &out.report;
        assert_eq!(r.packets_in, r.processed + r.dropped);
        assert_eq!(r.dropped, r.drops(DropReason::QueueOverflow));
    }

    #[test]
    fn report_json_has_the_documented_fields() {
        let out = run_tally(2, 1000, OverflowPolicy::Block, DEFAULT_QUEUE_CAPACITY);
        let v: serde_json::Value = serde_json::from_str(&out.report.to_json()).unwrap();
        for field in ["cores", "packets_in", "processed", "dropped", "duration_ns", "pps", "per_core"] {
            assert!(v.get(field).is_some(), "{field}");
        }
        assert_eq!(v["per_core"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn zero_cores_is_rejected() {
        let driver: Arc<dyn Driver> = Arc::new(FlatKvsDriver::new());
        let cfg = FlexConfig::new("nf1", "ins1", "flatkvs");
        let rt = RuntimeConfig::new(0, CacheOptions::default());
        assert!(matches!(WorkerPool::start(Arc::new(Tally), &cfg, driver, &rt), Err(RuntimeError::NoCores)));
    }
}
