//! Per-core write-back cache and its background flusher.
//!
//! The worker owns the live values exclusively. Every mutation also lands in
//! a pending log shared with the flusher thread, which swaps the log out every
//! flush interval and applies it as one batch on the core's driver session.
//! Coalescing rules for the pending log:
//!
//! * counter and countermap increments fold into one delta per counter/entry;
//! * absolute writes (blob writes, map sets, set membership) keep the last
//!   value per key;
//! * list appends are kept in issue order;
//! * delete/clear drops everything pending before it for that structure.
//!
//! A failed batch is retained and retried with the same sequence number
//! (exponential backoff, 1 ms to 100 ms) ahead of anything newer, so the store
//! applies each batch exactly once and in order.

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam::channel::{self, Receiver, RecvTimeoutError, Sender};
use indexmap::IndexMap;
use parking_lot::Mutex;
use serde::Serialize;

use crate::api::{
    check_blob, check_element, check_key, ApiError, Counter, CounterMap, List, Map, NameValue, RawHandle, Set,
    StructureId, StructureType,
};
use crate::config::FlexConfig;
use crate::driver::{Driver, DriverError, Mutation, MutationBatch, Session, Snapshot};
use crate::key::StoreKey;

/// Pending mutations beyond which `_nowait` calls report backpressure.
pub const BACKPRESSURE_LIMIT: usize = 1 << 20;
const BACKOFF_BASE: Duration = Duration::from_millis(1);
const BACKOFF_CAP: Duration = Duration::from_millis(100);

static NEXT_CACHE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone)]
pub struct CacheOptions {
    pub flush_interval: Duration,
    /// Start the periodic flusher thread. Without it, state reaches the store
    /// only through waiting calls, [`CoreCache::flush_now`] and drain.
    pub background_flush: bool,
    pub backpressure_limit: usize,
    /// Attempts per batch during drain before giving up.
    pub drain_attempts: u32,
    /// Where undeliverable state is dumped when drain gives up.
    pub dump_dir: Option<PathBuf>,
}

impl Default for CacheOptions {
    fn default() -> Self {
        Self {
            flush_interval: crate::config::DEFAULT_FLUSH_INTERVAL,
            background_flush: true,
            backpressure_limit: BACKPRESSURE_LIMIT,
            drain_attempts: 10,
            dump_dir: None,
        }
    }
}

impl CacheOptions {
    pub fn from_config(cfg: &FlexConfig) -> Self {
        Self { flush_interval: cfg.flush_interval, ..Self::default() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("opening driver session: {0}")]
    Session(#[from] DriverError),
    #[error("invalid NF or instance id: {0}")]
    Key(#[from] crate::key::KeyError),
    #[error("drain failed ({source}); unflushed state dumped to {}", dump.display())]
    DrainFailed { source: DriverError, dump: PathBuf },
}

/// Flush counters of one core. Counts never decrease.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FlushStats {
    pub flushes_attempted: u64,
    pub flushes_succeeded: u64,
    pub mutations_flushed: u64,
    pub last_flush_latency_ns: u64,
    pub retries: u64,
}

#[derive(Debug, Default)]
struct StatsCell {
    attempted: AtomicU64,
    succeeded: AtomicU64,
    mutations: AtomicU64,
    last_latency_ns: AtomicU64,
    retries: AtomicU64,
}

impl StatsCell {
    fn snapshot(&self) -> FlushStats {
        FlushStats {
            flushes_attempted: self.attempted.load(Ordering::Relaxed),
            flushes_succeeded: self.succeeded.load(Ordering::Relaxed),
            mutations_flushed: self.mutations.load(Ordering::Relaxed),
            last_flush_latency_ns: self.last_latency_ns.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CounterOp {
    Add(i64),
    /// Absolute value; `None` deletes.
    Reset(Option<i64>),
}

impl CounterOp {
    fn then_add(self, n: i64, value_after: i64) -> CounterOp {
        match self {
            CounterOp::Add(d) => d.checked_add(n).map_or(CounterOp::Reset(Some(value_after)), CounterOp::Add),
            CounterOp::Reset(_) => CounterOp::Reset(Some(value_after)),
        }
    }
}

#[derive(Debug)]
enum PendingOps {
    NameValue(Option<Vec<u8>>),
    Counter(CounterOp),
    List { clear: bool, appends: Vec<Vec<u8>> },
    Set { clear: bool, members: IndexMap<Vec<u8>, bool> },
    Map { clear: bool, entries: IndexMap<Vec<u8>, Option<Vec<u8>>> },
    CounterMap { clear: bool, entries: IndexMap<Vec<u8>, CounterOp> },
}

impl PendingOps {
    fn empty(ty: StructureType) -> Self {
        match ty {
            StructureType::NameValue => PendingOps::NameValue(None),
            StructureType::Counter => PendingOps::Counter(CounterOp::Add(0)),
            StructureType::List => PendingOps::List { clear: false, appends: Vec::new() },
            StructureType::Set => PendingOps::Set { clear: false, members: IndexMap::new() },
            StructureType::Map => PendingOps::Map { clear: false, entries: IndexMap::new() },
            StructureType::CounterMap => PendingOps::CounterMap { clear: false, entries: IndexMap::new() },
        }
    }

    fn emit(self, key: &StoreKey, batch: &mut MutationBatch) {
        let mut push = |m| batch.push(key.clone(), m);
        match self {
            PendingOps::NameValue(Some(v)) => push(Mutation::SetBlob(v)),
            PendingOps::NameValue(None) => push(Mutation::Delete),
            PendingOps::Counter(CounterOp::Add(d)) => push(Mutation::Incr(d)),
            PendingOps::Counter(CounterOp::Reset(v)) => {
                push(Mutation::Delete);
                if let Some(v) = v {
                    push(Mutation::Incr(v));
                }
            }
            PendingOps::List { clear, appends } => {
                if clear {
                    push(Mutation::ListClear);
                }
                appends.into_iter().for_each(|v| push(Mutation::ListAppend(v)));
            }
            PendingOps::Set { clear, members } => {
                if clear {
                    push(Mutation::Delete);
                }
                for (m, present) in members {
                    push(if present { Mutation::SetAdd(m) } else { Mutation::SetDel(m) });
                }
            }
            PendingOps::Map { clear, entries } => {
                if clear {
                    push(Mutation::Delete);
                }
                for (k, v) in entries {
                    push(match v {
                        Some(v) => Mutation::MapSet(k, v),
                        None => Mutation::MapDel(k),
                    });
                }
            }
            PendingOps::CounterMap { clear, entries } => {
                if clear {
                    push(Mutation::Delete);
                }
                for (k, op) in entries {
                    match op {
                        CounterOp::Add(d) => push(Mutation::MapIncr(k, d)),
                        CounterOp::Reset(None) => push(Mutation::MapDel(k)),
                        CounterOp::Reset(Some(v)) => {
                            push(Mutation::MapDel(k.clone()));
                            push(Mutation::MapIncr(k, v));
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug)]
struct PendingEntry {
    key: StoreKey,
    ops: PendingOps,
}

#[derive(Debug, Default)]
struct PendingLog {
    entries: IndexMap<u32, PendingEntry>,
    /// Upper bound on the number of mutations the log expands to.
    len: usize,
}

impl PendingLog {
    fn entry(&mut self, slot: u32, key: &StoreKey) -> &mut PendingOps {
        &mut self
            .entries
            .entry(slot)
            .or_insert_with(|| PendingEntry { key: key.clone(), ops: PendingOps::empty(key.structure_type()) })
            .ops
    }

    fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn into_batch(self, seq: u64) -> MutationBatch {
        let mut batch = MutationBatch::new(seq);
        for (_, e) in self.entries {
            e.ops.emit(&e.key, &mut batch);
        }
        batch
    }
}

struct Io {
    session: Box<dyn Session>,
    next_seq: u64,
    /// Batch that failed to apply; always retried before anything newer.
    retained: Option<MutationBatch>,
}

impl Io {
    fn next_seq(&mut self) -> u64 {
        let s = self.next_seq;
        self.next_seq += 1;
        s
    }
}

struct Shared {
    pending: Mutex<PendingLog>,
    io: Mutex<Io>,
    retained_len: AtomicUsize,
    stats: StatsCell,
}

impl Shared {
    fn apply(&self, io: &mut Io, batch: MutationBatch, retry: bool) -> Result<(), DriverError> {
        if retry {
            self.stats.retries.fetch_add(1, Ordering::Relaxed);
        }
        self.stats.attempted.fetch_add(1, Ordering::Relaxed);
        let start = Instant::now();
        match io.session.apply(&batch) {
            Ok(_) => {
                self.stats.succeeded.fetch_add(1, Ordering::Relaxed);
                self.stats.mutations.fetch_add(batch.len() as u64, Ordering::Relaxed);
                self.stats.last_latency_ns.store(start.elapsed().as_nanos() as u64, Ordering::Relaxed);
                io.retained = None;
                self.retained_len.store(0, Ordering::Relaxed);
                Ok(())
            }
            Err(e) => {
                self.retained_len.store(batch.len(), Ordering::Relaxed);
                io.retained = Some(batch);
                Err(e)
            }
        }
    }

    fn retry_retained(&self, io: &mut Io) -> Result<(), DriverError> {
        match io.retained.take() {
            Some(b) => self.apply(io, b, true),
            None => Ok(()),
        }
    }

    /// Applies the retained batch, then everything pending. Returns whether a
    /// batch was sent.
    fn flush(&self) -> Result<bool, DriverError> {
        let mut io = self.io.lock();
        let had_retained = io.retained.is_some();
        self.retry_retained(&mut io)?;
        let log = std::mem::take(&mut *self.pending.lock());
        if log.is_empty() {
            return Ok(had_retained);
        }
        let batch = log.into_batch(io.next_seq());
        self.apply(&mut io, batch, false)?;
        Ok(true)
    }

    /// Flushes only one structure's pending mutations (after any retained batch).
    fn flush_slot(&self, slot: u32) -> Result<(), DriverError> {
        let mut io = self.io.lock();
        self.retry_retained(&mut io)?;
        let entry = {
            let mut pending = self.pending.lock();
            let e = pending.entries.swap_remove(&slot);
            if pending.entries.is_empty() {
                pending.len = 0;
            }
            e
        };
        let Some(entry) = entry else { return Ok(()) };
        let mut batch = MutationBatch::new(io.next_seq());
        entry.ops.emit(&entry.key, &mut batch);
        self.apply(&mut io, batch, false)
    }
}

fn flusher_loop(shared: Arc<Shared>, interval: Duration, stop: Receiver<()>) {
    let mut next = Instant::now() + interval;
    let mut backoff = BACKOFF_BASE;
    loop {
        let wait = next.saturating_duration_since(Instant::now());
        match stop.recv_timeout(wait) {
            Err(RecvTimeoutError::Timeout) => {}
            _ => return,
        }
        match shared.flush() {
            Ok(_) => {
                backoff = BACKOFF_BASE;
                next += interval;
                let now = Instant::now();
                // Never burst to catch up after a stall.
                if next < now {
                    next = now + interval;
                }
            }
            Err(_) => {
                next = Instant::now() + backoff;
                backoff = (backoff * 2).min(BACKOFF_CAP);
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Live {
    NameValue(Option<Vec<u8>>),
    Counter(Option<i64>),
    List(Vec<Vec<u8>>),
    Set(HashSet<Vec<u8>>),
    Map(HashMap<Vec<u8>, Vec<u8>>),
    CounterMap(HashMap<Vec<u8>, i64>),
}

impl Live {
    fn empty(ty: StructureType) -> Self {
        match ty {
            StructureType::NameValue => Live::NameValue(None),
            StructureType::Counter => Live::Counter(None),
            StructureType::List => Live::List(Vec::new()),
            StructureType::Set => Live::Set(HashSet::new()),
            StructureType::Map => Live::Map(HashMap::new()),
            StructureType::CounterMap => Live::CounterMap(HashMap::new()),
        }
    }

    fn from_snapshot(ty: StructureType, snap: Option<Snapshot>) -> Self {
        match snap {
            None => Live::empty(ty),
            Some(Snapshot::Blob(b)) => Live::NameValue(Some(b)),
            Some(Snapshot::Counter(v)) => Live::Counter(Some(v)),
            Some(Snapshot::List(l)) => Live::List(l),
            Some(Snapshot::Set(s)) => Live::Set(s.into_iter().collect()),
            Some(Snapshot::Map(m)) => Live::Map(m.into_iter().collect()),
            Some(Snapshot::CounterMap(m)) => Live::CounterMap(m.into_iter().collect()),
        }
    }

    fn to_snapshot(&self) -> Option<Snapshot> {
        let snap = match self {
            Live::NameValue(v) => Snapshot::Blob(v.clone()?),
            Live::Counter(v) => Snapshot::Counter((*v)?),
            Live::List(l) => Snapshot::List(l.clone()),
            Live::Set(s) => Snapshot::Set(s.iter().cloned().collect()),
            Live::Map(m) => Snapshot::Map(m.iter().map(|(k, v)| (k.clone(), v.clone())).collect()),
            Live::CounterMap(m) => Snapshot::CounterMap(m.iter().map(|(k, v)| (k.clone(), *v)).collect()),
        };
        snap.normalize()
    }
}

struct Slot {
    key: StoreKey,
    live: Live,
}

/// Core-local state of one worker: live values plus the pending log feeding
/// the flusher.
pub struct CoreCache {
    id: u64,
    core_id: u32,
    nf_id: String,
    instance_id: String,
    slots: Vec<Slot>,
    by_id: HashMap<StructureId, u32>,
    shared: Arc<Shared>,
    flusher: Option<(Sender<()>, JoinHandle<()>)>,
    opts: CacheOptions,
}

impl std::fmt::Debug for CoreCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoreCache").field("core_id", &self.core_id).field("structures", &self.slots.len()).finish()
    }
}

macro_rules! live_as {
    ($self:ident, $h:expr, $variant:ident) => {{
        match &$self.slot($h).live {
            Live::$variant(v) => v,
            _ => unreachable!("slot type checked by handle"),
        }
    }};
}

impl CoreCache {
    /// Opens a driver session for `core_id` and starts the flusher.
    pub fn open(
        core_id: u32,
        config: &FlexConfig,
        driver: &dyn Driver,
        opts: CacheOptions,
    ) -> Result<Self, CacheError> {
        crate::key::check_token(&config.nf_id)?;
        crate::key::check_token(&config.instance_id)?;
        let session = driver.open_session()?;
        let shared = Arc::new(Shared {
            pending: Mutex::new(PendingLog::default()),
            io: Mutex::new(Io { session, next_seq: 1, retained: None }),
            retained_len: AtomicUsize::new(0),
            stats: StatsCell::default(),
        });
        let flusher = if opts.background_flush {
            let (tx, rx) = channel::bounded(1);
            let s = shared.clone();
            let interval = opts.flush_interval;
            let handle = std::thread::Builder::new()
                .name(format!("flusher-{core_id}"))
                .spawn(move || flusher_loop(s, interval, rx))
                .expect("spawn flusher thread");
            Some((tx, handle))
        } else {
            None
        };
        Ok(Self {
            id: NEXT_CACHE_ID.fetch_add(1, Ordering::Relaxed),
            core_id,
            nf_id: config.nf_id.clone(),
            instance_id: config.instance_id.clone(),
            slots: Vec::new(),
            by_id: HashMap::new(),
            shared,
            flusher,
            opts,
        })
    }

    pub fn core_id(&self) -> u32 {
        self.core_id
    }

    pub fn nf_id(&self) -> &str {
        &self.nf_id
    }

    pub fn instance_id(&self) -> &str {
        &self.instance_id
    }

    pub fn flush_interval(&self) -> Duration {
        self.opts.flush_interval
    }

    /// Creates (or re-opens) a structure on this core. Existing store state
    /// for the key is read into the cache.
    pub fn create_structure(&mut self, ty: StructureType, id: &str) -> Result<RawHandle, ApiError> {
        let sid = StructureId::new(id)?;
        if let Some(&slot) = self.by_id.get(&sid) {
            let existing = self.slots[slot as usize].key.structure_type();
            if existing != ty {
                return Err(ApiError::TypeConflict { id: id.to_owned(), existing });
            }
            return Ok(self.raw(slot, ty));
        }
        let key = StoreKey::new(&self.nf_id, &self.instance_id, self.core_id, ty, sid.clone())
            .map_err(|_| ApiError::InvalidId(id.to_owned()))?;
        let snap = self.shared.io.lock().session.fetch(&key).map_err(|e| ApiError::StoreUnavailable(e.to_string()))?;
        let slot = self.slots.len() as u32;
        self.slots.push(Slot { key, live: Live::from_snapshot(ty, snap) });
        self.by_id.insert(sid, slot);
        Ok(self.raw(slot, ty))
    }

    pub fn counter(&mut self, id: &str) -> Result<Counter, ApiError> {
        self.create_structure(StructureType::Counter, id).map(Counter)
    }

    pub fn name_value(&mut self, id: &str) -> Result<NameValue, ApiError> {
        self.create_structure(StructureType::NameValue, id).map(NameValue)
    }

    pub fn list(&mut self, id: &str) -> Result<List, ApiError> {
        self.create_structure(StructureType::List, id).map(List)
    }

    pub fn set(&mut self, id: &str) -> Result<Set, ApiError> {
        self.create_structure(StructureType::Set, id).map(Set)
    }

    pub fn map(&mut self, id: &str) -> Result<Map, ApiError> {
        self.create_structure(StructureType::Map, id).map(Map)
    }

    pub fn counter_map(&mut self, id: &str) -> Result<CounterMap, ApiError> {
        self.create_structure(StructureType::CounterMap, id).map(CounterMap)
    }

    fn raw(&self, slot: u32, ty: StructureType) -> RawHandle {
        RawHandle { cache_id: self.id, core_id: self.core_id, slot, structure_type: ty }
    }

    fn slot(&self, h: RawHandle) -> &Slot {
        assert_eq!(h.cache_id, self.id, "handle of core {} used on core {}", h.core_id, self.core_id);
        &self.slots[h.slot as usize]
    }

    fn check_room(&self) -> Result<(), ApiError> {
        let queued = self.shared.pending.lock().len + self.shared.retained_len.load(Ordering::Relaxed);
        if queued >= self.opts.backpressure_limit {
            Err(ApiError::Backpressure)
        } else {
            Ok(())
        }
    }

    /// Applies `f` to the live value and records the pending mutation through
    /// `record`, which returns how many new log items it added.
    fn mutate<T>(
        &mut self,
        h: RawHandle,
        f: impl FnOnce(&mut Live) -> Result<T, ApiError>,
        record: impl FnOnce(&mut PendingOps, &T) -> usize,
    ) -> Result<T, ApiError> {
        self.check_room()?;
        assert_eq!(h.cache_id, self.id, "handle of core {} used on core {}", h.core_id, self.core_id);
        let slot = &mut self.slots[h.slot as usize];
        let out = f(&mut slot.live)?;
        let mut pending = self.shared.pending.lock();
        let added = record(pending.entry(h.slot, &slot.key), &out);
        pending.len += added;
        Ok(out)
    }

    pub(crate) fn sync_structure(&mut self, h: RawHandle) -> Result<(), ApiError> {
        self.slot(h);
        self.shared.flush_slot(h.slot).map_err(|e| ApiError::StoreUnavailable(e.to_string()))
    }

    pub(crate) fn counter_value(&self, h: RawHandle) -> i64 {
        live_as!(self, h, Counter).unwrap_or(0)
    }

    pub(crate) fn counter_add(&mut self, h: RawHandle, n: i64) -> Result<i64, ApiError> {
        self.mutate(
            h,
            |live| {
                let Live::Counter(v) = live else { unreachable!() };
                let next = v.unwrap_or(0).checked_add(n).ok_or(ApiError::Overflow)?;
                *v = Some(next);
                Ok(next)
            },
            |ops, &next| {
                let PendingOps::Counter(op) = ops else { unreachable!() };
                *op = op.then_add(n, next);
                1
            },
        )
    }

    pub(crate) fn counter_set(&mut self, h: RawHandle, value: Option<i64>) -> Result<(), ApiError> {
        self.mutate(
            h,
            |live| {
                let Live::Counter(v) = live else { unreachable!() };
                *v = value;
                Ok(())
            },
            |ops, _| {
                let PendingOps::Counter(op) = ops else { unreachable!() };
                *op = CounterOp::Reset(value);
                2
            },
        )
    }

    pub(crate) fn blob_value(&self, h: RawHandle) -> Option<&[u8]> {
        live_as!(self, h, NameValue).as_deref()
    }

    pub(crate) fn blob_write(&mut self, h: RawHandle, value: Option<&[u8]>, must_exist: bool) -> Result<(), ApiError> {
        if let Some(v) = value {
            check_blob(v)?;
        }
        self.mutate(
            h,
            |live| {
                let Live::NameValue(cur) = live else { unreachable!() };
                if must_exist && cur.is_none() {
                    return Err(ApiError::NotFound);
                }
                *cur = value.map(<[u8]>::to_vec);
                Ok(())
            },
            |ops, _| {
                *ops = PendingOps::NameValue(value.map(<[u8]>::to_vec));
                1
            },
        )
    }

    pub(crate) fn map_get(&self, h: RawHandle, k: &[u8]) -> Option<&[u8]> {
        live_as!(self, h, Map).get(k).map(Vec::as_slice)
    }

    pub(crate) fn map_entries(&self, h: RawHandle) -> Vec<(Vec<u8>, Vec<u8>)> {
        let mut v: Vec<_> = live_as!(self, h, Map).iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        v.sort();
        v
    }

    pub(crate) fn map_write(&mut self, h: RawHandle, k: &[u8], value: Option<&[u8]>) -> Result<(), ApiError> {
        check_key(k)?;
        if let Some(v) = value {
            check_blob(v)?;
        }
        if value.is_none() && self.map_get(h, k).is_none() {
            return Ok(());
        }
        self.mutate(
            h,
            |live| {
                let Live::Map(m) = live else { unreachable!() };
                match value {
                    Some(v) => m.insert(k.to_vec(), v.to_vec()),
                    None => m.remove(k),
                };
                Ok(())
            },
            |ops, _| {
                let PendingOps::Map { entries, .. } = ops else { unreachable!() };
                usize::from(entries.insert(k.to_vec(), value.map(<[u8]>::to_vec)).is_none())
            },
        )
    }

    pub(crate) fn countermap_get(&self, h: RawHandle, k: &[u8]) -> Option<i64> {
        live_as!(self, h, CounterMap).get(k).copied()
    }

    pub(crate) fn countermap_entries(&self, h: RawHandle) -> Vec<(Vec<u8>, i64)> {
        let mut v: Vec<_> = live_as!(self, h, CounterMap).iter().map(|(k, v)| (k.clone(), *v)).collect();
        v.sort();
        v
    }

    pub(crate) fn countermap_add(&mut self, h: RawHandle, k: &[u8], n: i64) -> Result<i64, ApiError> {
        check_key(k)?;
        self.mutate(
            h,
            |live| {
                let Live::CounterMap(m) = live else { unreachable!() };
                // Missing entries count as zero, matching HINCRBY.
                let next = m.get(k).copied().unwrap_or(0).checked_add(n).ok_or(ApiError::Overflow)?;
                m.insert(k.to_vec(), next);
                Ok(next)
            },
            |ops, &next| {
                let PendingOps::CounterMap { entries, .. } = ops else { unreachable!() };
                match entries.get_mut(k) {
                    Some(op) => {
                        *op = op.then_add(n, next);
                        0
                    }
                    None => {
                        entries.insert(k.to_vec(), CounterOp::Add(n));
                        1
                    }
                }
            },
        )
    }

    pub(crate) fn countermap_set(&mut self, h: RawHandle, k: &[u8], value: Option<i64>) -> Result<(), ApiError> {
        check_key(k)?;
        if value.is_none() && self.countermap_get(h, k).is_none() {
            return Ok(());
        }
        self.mutate(
            h,
            |live| {
                let Live::CounterMap(m) = live else { unreachable!() };
                match value {
                    Some(v) => m.insert(k.to_vec(), v),
                    None => m.remove(k),
                };
                Ok(())
            },
            |ops, _| {
                let PendingOps::CounterMap { entries, .. } = ops else { unreachable!() };
                usize::from(entries.insert(k.to_vec(), CounterOp::Reset(value)).is_none()) * 2
            },
        )
    }

    pub(crate) fn collection_len(&self, h: RawHandle) -> usize {
        match &self.slot(h).live {
            Live::List(l) => l.len(),
            Live::Set(s) => s.len(),
            Live::Map(m) => m.len(),
            Live::CounterMap(m) => m.len(),
            Live::NameValue(_) | Live::Counter(_) => unreachable!("not a collection"),
        }
    }

    pub(crate) fn clear_collection(&mut self, h: RawHandle) -> Result<(), ApiError> {
        self.mutate(
            h,
            |live| {
                match live {
                    Live::List(l) => l.clear(),
                    Live::Set(s) => s.clear(),
                    Live::Map(m) => m.clear(),
                    Live::CounterMap(m) => m.clear(),
                    Live::NameValue(_) | Live::Counter(_) => unreachable!("not a collection"),
                }
                Ok(())
            },
            |ops, _| {
                *ops = match ops {
                    PendingOps::List { .. } => PendingOps::List { clear: true, appends: Vec::new() },
                    PendingOps::Set { .. } => PendingOps::Set { clear: true, members: IndexMap::new() },
                    PendingOps::Map { .. } => PendingOps::Map { clear: true, entries: IndexMap::new() },
                    PendingOps::CounterMap { .. } => PendingOps::CounterMap { clear: true, entries: IndexMap::new() },
                    _ => unreachable!("not a collection"),
                };
                1
            },
        )
    }

    pub(crate) fn list_get(&self, h: RawHandle, i: usize) -> Result<&[u8], ApiError> {
        let l = live_as!(self, h, List);
        l.get(i).map(Vec::as_slice).ok_or(ApiError::IndexOutOfRange { index: i, len: l.len() })
    }

    pub(crate) fn list_items(&self, h: RawHandle) -> Vec<Vec<u8>> {
        live_as!(self, h, List).clone()
    }

    pub(crate) fn list_push(&mut self, h: RawHandle, v: &[u8]) -> Result<(), ApiError> {
        check_element(v)?;
        self.mutate(
            h,
            |live| {
                let Live::List(l) = live else { unreachable!() };
                l.push(v.to_vec());
                Ok(())
            },
            |ops, _| {
                let PendingOps::List { appends, .. } = ops else { unreachable!() };
                appends.push(v.to_vec());
                1
            },
        )
    }

    pub(crate) fn set_contains(&self, h: RawHandle, v: &[u8]) -> bool {
        live_as!(self, h, Set).contains(v)
    }

    pub(crate) fn set_members(&self, h: RawHandle) -> Vec<Vec<u8>> {
        let mut m: Vec<_> = live_as!(self, h, Set).iter().cloned().collect();
        m.sort();
        m
    }

    pub(crate) fn set_write(&mut self, h: RawHandle, v: &[u8], present: bool) -> Result<bool, ApiError> {
        check_element(v)?;
        if self.set_contains(h, v) == present {
            return Ok(false);
        }
        self.mutate(
            h,
            |live| {
                let Live::Set(s) = live else { unreachable!() };
                if present {
                    s.insert(v.to_vec());
                } else {
                    s.remove(v);
                }
                Ok(true)
            },
            |ops, _| {
                let PendingOps::Set { members, .. } = ops else { unreachable!() };
                usize::from(members.insert(v.to_vec(), present).is_none())
            },
        )
    }

    /// Current live content of a structure, in store form.
    pub fn live_snapshot(&self, h: RawHandle) -> Option<Snapshot> {
        self.slot(h).live.to_snapshot()
    }

    /// Every structure created on this core with its live content.
    pub fn live_state(&self) -> Vec<(StoreKey, Option<Snapshot>)> {
        self.slots.iter().map(|s| (s.key.clone(), s.live.to_snapshot())).collect()
    }

    /// What the next flush would send, without sending it.
    pub fn pending_preview(&self) -> MutationBatch {
        let pending = self.shared.pending.lock();
        let mut batch = MutationBatch::new(0);
        for e in pending.entries.values() {
            let ops = match &e.ops {
                PendingOps::NameValue(v) => PendingOps::NameValue(v.clone()),
                PendingOps::Counter(op) => PendingOps::Counter(*op),
                PendingOps::List { clear, appends } => PendingOps::List { clear: *clear, appends: appends.clone() },
                PendingOps::Set { clear, members } => PendingOps::Set { clear: *clear, members: members.clone() },
                PendingOps::Map { clear, entries } => PendingOps::Map { clear: *clear, entries: entries.clone() },
                PendingOps::CounterMap { clear, entries } => {
                    PendingOps::CounterMap { clear: *clear, entries: entries.clone() }
                }
            };
            ops.emit(&e.key, &mut batch);
        }
        batch
    }

    /// Number of mutations waiting in the pending log or the retained batch.
    pub fn backlog(&self) -> usize {
        self.shared.pending.lock().len + self.shared.retained_len.load(Ordering::Relaxed)
    }

    pub fn stats(&self) -> FlushStats {
        self.shared.stats.snapshot()
    }

    /// Sends whatever is pending right now, on the caller's thread.
    pub fn flush_now(&self) -> Result<bool, DriverError> {
        self.shared.flush()
    }

    fn stop_flusher(&mut self) {
        if let Some((tx, handle)) = self.flusher.take() {
            drop(tx);
            let _ = handle.join();
        }
    }

    /// Stops the flusher and pushes every pending mutation to the store. On
    /// success the store holds exactly the live state of this core.
    pub fn drain(&mut self) -> Result<FlushStats, CacheError> {
        self.stop_flusher();
        let mut backoff = BACKOFF_BASE;
        let mut attempts = 0;
        loop {
            match self.shared.flush() {
                Ok(_) if self.shared.pending.lock().is_empty() => return Ok(self.stats()),
                Ok(_) => continue,
                Err(e) => {
                    attempts += 1;
                    if attempts >= self.opts.drain_attempts {
                        let dump = self.dump_unflushed();
                        return Err(CacheError::DrainFailed { source: e, dump });
                    }
                    std::thread::sleep(backoff);
                    backoff = (backoff * 2).min(BACKOFF_CAP);
                }
            }
        }
    }

    fn dump_unflushed(&self) -> PathBuf {
        #[derive(Serialize)]
        struct Dump<'a> {
            nf_id: &'a str,
            instance_id: &'a str,
            core_id: u32,
            retained: Option<MutationBatch>,
            pending: MutationBatch,
        }
        let dump = Dump {
            nf_id: &self.nf_id,
            instance_id: &self.instance_id,
            core_id: self.core_id,
            retained: self.shared.io.lock().retained.clone(),
            pending: self.pending_preview(),
        };
        let dir = self.opts.dump_dir.clone().unwrap_or_else(std::env::temp_dir);
        let path = dir.join(format!(
            "flexstate-unflushed-{}-{}-{}-{}.json",
            self.nf_id,
            self.instance_id,
            self.core_id,
            std::process::id()
        ));
        let body = serde_json::to_vec_pretty(&dump).unwrap_or_default();
        if let Err(e) = std::fs::write(&path, body) {
            eprintln!("flexstate: cannot write {}: {e}", path.display());
        }
        path
    }
}

impl Drop for CoreCache {
    fn drop(&mut self) {
        self.stop_flusher();
    }
}

#[cfg(test)]
#[path = "../tests/common/model.rs"]
mod model;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::{DriverRegistry, FaultMode, FaultyDriver, FlatKvsDriver, TableStoreDriver};
    use proptest::prelude::*;

    fn cfg() -> FlexConfig {
        FlexConfig::new("nf1", "ins1", "flatkvs")
    }

    fn manual() -> CacheOptions {
        CacheOptions { background_flush: false, ..CacheOptions::default() }
    }

    fn open(driver: &dyn Driver) -> CoreCache {
        CoreCache::open(0, &cfg(), driver, manual()).unwrap()
    }

    #[test]
    fn create_renders_canonical_key() {
        let d = FlatKvsDriver::new();
        let mut c = open(&d);
        let h = c.counter("pktCounter").unwrap();
        assert_eq!(c.live_state()[0].0.to_string(), "nf1@ins1@0@Counter@pktCounter");
        assert_eq!(h.read(&c), 0);
    }

    #[test]
    fn equal_ids_alias() {
        let d = FlatKvsDriver::new();
        let mut c = open(&d);
        let a = c.counter("c").unwrap();
        let b = c.counter("c").unwrap();
        a.add_nowait(&mut c, 3).unwrap();
        assert_eq!(b.read(&c), 3);
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_id_and_type_conflict() {
        let d = FlatKvsDriver::new();
        let mut c = open(&d);
        assert_eq!(c.counter("a@b"), Err(ApiError::InvalidId("a@b".into())));
        c.counter("x").unwrap();
        assert!(matches!(c.map("x"), Err(ApiError::TypeConflict { .. })));
    }

    #[test]
    fn counter_examples() {
        let d = FlatKvsDriver::new();
        let mut c = open(&d);
        let h = c.counter("c").unwrap();
        assert_eq!(h.add(&mut c, 1).unwrap(), 1);
        h.add_nowait(&mut c, 5).unwrap();
        h.add_nowait(&mut c, 3).unwrap();
        assert_eq!(h.read(&c), 9);
        h.set_nowait(&mut c, 10).unwrap();
        h.add_nowait(&mut c, -4).unwrap();
        assert_eq!(h.read(&c), 6);
        h.set_nowait(&mut c, i64::MAX).unwrap();
        assert_eq!(h.add_nowait(&mut c, 1), Err(ApiError::Overflow));
        assert_eq!(h.read(&c), i64::MAX);
    }

    #[test]
    fn set_supersedes_pending_increments() {
        let d = FlatKvsDriver::new();
        let mut c = open(&d);
        let h = c.counter("c").unwrap();
        h.add_nowait(&mut c, 7).unwrap();
        h.set_nowait(&mut c, 10).unwrap();
        h.add_nowait(&mut c, -4).unwrap();
        let key = c.live_state()[0].0.clone();
        assert_eq!(c.pending_preview().ops, vec![(key.clone(), Mutation::Delete), (key, Mutation::Incr(6))]);
    }

    #[test]
    fn increments_coalesce_into_one_mutation() {
        let d = FlatKvsDriver::new();
        let mut c = open(&d);
        let h = c.counter("c").unwrap();
        for _ in 0..1000 {
            h.add_nowait(&mut c, 1).unwrap();
        }
        assert_eq!(h.read(&c), 1000);
        let preview = c.pending_preview();
        assert_eq!(preview.ops.len(), 1);
        assert_eq!(preview.ops[0].1, Mutation::Incr(1000));
        assert!(c.flush_now().unwrap());
        assert_eq!(c.stats().mutations_flushed, 1);
    }

    #[test]
    fn quiescent_flush_sends_nothing() {
        let d = FlatKvsDriver::new();
        let c = open(&d);
        assert!(!c.flush_now().unwrap());
        assert_eq!(c.stats(), FlushStats::default());
    }

    #[test]
    fn namevalue_crud() {
        let d = FlatKvsDriver::new();
        let mut c = open(&d);
        let nv = c.name_value("nv").unwrap();
        assert_eq!(nv.read(&c), None);
        assert_eq!(nv.update(&mut c, b"z"), Err(ApiError::NotFound));
        assert_eq!(nv.delete_nowait(&mut c), Err(ApiError::NotFound));
        nv.create(&mut c, b"x").unwrap();
        assert_eq!(nv.read(&c), Some(&b"x"[..]));
        nv.update(&mut c, b"y").unwrap();
        assert_eq!(nv.read(&c), Some(&b"y"[..]));
        nv.delete(&mut c).unwrap();
        assert_eq!(nv.read(&c), None);
        assert_eq!(nv.create(&mut c, &vec![0; 70_000]), Err(ApiError::BlobTooLarge(70_000)));
    }

    #[test]
    fn map_and_countermap() {
        let d = FlatKvsDriver::new();
        let mut c = open(&d);
        let m = c.map("m").unwrap();
        assert_eq!(m.get(&c, b"k"), None);
        assert_eq!(m.size(&c), 0);
        m.insert_nowait(&mut c, b"k", b"n").unwrap();
        assert!(m.contains(&c, b"k"));
        assert_eq!(m.size(&c), 1);
        assert!(m.remove_nowait(&mut c, b"k").unwrap());
        assert!(!m.remove_nowait(&mut c, b"k").unwrap());
        assert_eq!(m.insert_nowait(&mut c, &[1; 1025], b"v"), Err(ApiError::KeyTooLarge(1025)));

        let cm = c.counter_map("cm").unwrap();
        assert_eq!(cm.add_to_nowait(&mut c, b"k", 7).unwrap(), 7);
        cm.add_to_nowait(&mut c, b"j", 3).unwrap();
        cm.add_to_nowait(&mut c, b"j", -3).unwrap();
        assert_eq!(cm.get(&c, b"j"), Some(0));
        c.drain().unwrap();
        let mut s = d.open_session().unwrap();
        let key = crate::key::build_key("nf1", "ins1", 0, StructureType::CounterMap, "cm").unwrap();
        assert_eq!(
            s.fetch(&key).unwrap(),
            Some(Snapshot::CounterMap([(b"j".to_vec(), 0), (b"k".to_vec(), 7)].into_iter().collect()))
        );
    }

    #[test]
    fn list_and_set() {
        let d = FlatKvsDriver::new();
        let mut c = open(&d);
        let l = c.list("l").unwrap();
        l.push_back_nowait(&mut c, b"a").unwrap();
        l.push_back_nowait(&mut c, b"b").unwrap();
        assert_eq!(l.get(&c, 0).unwrap(), b"a");
        assert_eq!(l.get(&c, 1).unwrap(), b"b");
        assert_eq!(l.get(&c, 2), Err(ApiError::IndexOutOfRange { index: 2, len: 2 }));
        assert_eq!(l.len(&c), 2);
        l.clear_nowait(&mut c).unwrap();
        assert!(l.is_empty(&c));

        let s = c.set("s").unwrap();
        assert!(s.insert_nowait(&mut c, b"x").unwrap());
        assert!(!s.insert_nowait(&mut c, b"x").unwrap());
        assert!(s.contains(&c, b"x"));
        assert_eq!(s.members(&c), vec![b"x".to_vec()]);
    }

    #[test]
    fn hydrates_from_store_on_create() {
        let d = FlatKvsDriver::new();
        {
            let mut c = open(&d);
            let h = c.counter("c").unwrap();
            h.add(&mut c, 41).unwrap();
            let m = c.map("m").unwrap();
            m.insert(&mut c, b"k", b"v").unwrap();
        }
        let mut c = open(&d);
        let h = c.counter("c").unwrap();
        assert_eq!(h.read(&c), 41);
        assert_eq!(c.map("m").unwrap().get(&c, b"k"), Some(&b"v"[..]));
    }

    #[test]
    fn hydration_failure_is_store_unavailable() {
        let d = FaultyDriver::new(Arc::new(FlatKvsDriver::new()));
        let mut c = open(&d);
        d.fail_fetches(1);
        assert!(matches!(c.counter("c"), Err(ApiError::StoreUnavailable(_))));
        assert!(c.counter("c").is_ok());
    }

    #[test]
    fn waiting_call_reports_unavailable_and_keeps_the_mutation() {
        let d = FaultyDriver::new(Arc::new(FlatKvsDriver::new()));
        let mut c = open(&d);
        let h = c.counter("c").unwrap();
        d.fail_applies(1, FaultMode::DropRequest);
        assert!(matches!(h.add(&mut c, 2), Err(ApiError::StoreUnavailable(_))));
        assert_eq!(h.read(&c), 2);
        assert_eq!(h.add(&mut c, 1).unwrap(), 3);
        let mut s = d.open_session().unwrap();
        assert_eq!(s.fetch(&c.live_state()[0].0).unwrap(), Some(Snapshot::Counter(3)));
    }

    #[test]
    fn lost_ack_retry_is_exactly_once() {
        for mode in [FaultMode::DropAck, FaultMode::DropRequest] {
            let d = FaultyDriver::new(Arc::new(TableStoreDriver::new()));
            let mut c = CoreCache::open(0, &cfg(), &d, CacheOptions::default()).unwrap();
            let h = c.counter("c").unwrap();
            d.fail_applies(3, mode);
            for _ in 0..500 {
                h.add_nowait(&mut c, 1).unwrap();
            }
            std::thread::sleep(Duration::from_millis(30));
            c.drain().unwrap();
            assert!(c.stats().retries >= 1, "{mode:?}");
            let mut s = d.open_session().unwrap();
            assert_eq!(s.fetch(&c.live_state()[0].0).unwrap(), Some(Snapshot::Counter(500)), "{mode:?}");
        }
    }

    #[test]
    fn drain_gives_up_and_dumps_state() {
        let dir = tempfile::tempdir().unwrap();
        let d = FaultyDriver::new(Arc::new(FlatKvsDriver::new()));
        let opts = CacheOptions {
            background_flush: false,
            drain_attempts: 3,
            dump_dir: Some(dir.path().to_owned()),
            ..CacheOptions::default()
        };
        let mut c = CoreCache::open(2, &cfg(), &d, opts).unwrap();
        let h = c.counter("c").unwrap();
        h.add_nowait(&mut c, 5).unwrap();
        d.fail_applies(100, FaultMode::DropRequest);
        let Err(CacheError::DrainFailed { dump, .. }) = c.drain() else {
            panic!("drain should fail");
        };
        let body = std::fs::read_to_string(dump).unwrap();
        assert!(body.contains("nf1@ins1@2@Counter@c"), "{body}");
    }

    #[test]
    fn drain_on_empty_cache() {
        let d = FlatKvsDriver::new();
        let mut c = CoreCache::open(0, &cfg(), &d, CacheOptions::default()).unwrap();
        assert_eq!(c.drain().unwrap(), FlushStats::default());
    }

    #[test]
    fn backpressure_when_log_is_full() {
        let d = FlatKvsDriver::new();
        let opts = CacheOptions { backpressure_limit: 4, ..manual() };
        let mut c = CoreCache::open(0, &cfg(), &d, opts).unwrap();
        let l = c.list("l").unwrap();
        for i in 0..4u8 {
            l.push_back_nowait(&mut c, &[i]).unwrap();
        }
        assert_eq!(l.push_back_nowait(&mut c, b"x"), Err(ApiError::Backpressure));
        c.flush_now().unwrap();
        l.push_back_nowait(&mut c, b"x").unwrap();
    }

    #[test]
    fn background_flusher_converges() {
        let d = FlatKvsDriver::new();
        let opts = CacheOptions { flush_interval: Duration::from_millis(1), ..CacheOptions::default() };
        let mut c = CoreCache::open(0, &cfg(), &d, opts).unwrap();
        let h = c.counter("c").unwrap();
        h.add_nowait(&mut c, 9).unwrap();
        let key = c.live_state()[0].0.clone();
        let mut s = d.open_session().unwrap();
        let deadline = Instant::now() + Duration::from_secs(2);
        while s.fetch(&key).unwrap() != Some(Snapshot::Counter(9)) {
            assert!(Instant::now() < deadline, "flusher never flushed");
            std::thread::sleep(Duration::from_millis(1));
        }
        assert!(c.stats().flushes_succeeded >= 1);
    }

    #[test]
    #[should_panic(expected = "used on core")]
    fn foreign_handle_is_detected() {
        let d = FlatKvsDriver::new();
        let mut a = open(&d);
        let b = CoreCache::open(1, &cfg(), &d, manual()).unwrap();
        let h = a.counter("c").unwrap();
        h.read(&b);
    }

    #[test]
    fn handles_are_send_and_copy() {
        fn assert_send<T: Send + Copy>() {}
        assert_send::<Counter>();
        assert_send::<CounterMap>();
        fn assert_cache_send<T: Send>() {}
        assert_cache_send::<CoreCache>();
    }

    #[test]
    fn apply_local_p99_is_small() {
        let d = FlatKvsDriver::new();
        let mut c = CoreCache::open(0, &cfg(), &d, CacheOptions::default()).unwrap();
        let h = c.counter("c").unwrap();
        let mut samples = Vec::with_capacity(100_000);
        for _ in 0..100_000 {
            let t = Instant::now();
            h.add_nowait(&mut c, 1).unwrap();
            samples.push(t.elapsed());
        }
        samples.sort();
        let p99 = samples[samples.len() * 99 / 100];
        assert!(p99 < Duration::from_micros(10), "p99 {p99:?}");
    }

    // Random API call sequences against the model oracle: every read agrees,
    // and after drain the store agrees with both.
    #[derive(Debug, Clone)]
    enum Call {
        CounterAdd(u8, i64),
        CounterSet(u8, i64),
        CounterDelete(u8),
        NvWrite(u8, Option<Vec<u8>>),
        MapInsert(u8, u8, Vec<u8>),
        MapRemove(u8, u8),
        CmAdd(u8, u8, i64),
        CmInsert(u8, u8, i64),
        CmRemove(u8, u8),
        ListPush(u8, Vec<u8>),
        SetInsert(u8, u8),
        SetRemove(u8, u8),
        Clear(u8, u8),
        Flush,
    }

    fn call() -> impl Strategy<Value = Call> {
        let id = 0u8..3;
        let k = 0u8..6;
        let blob = proptest::collection::vec(any::<u8>(), 0..6);
        let n = -1000i64..1000;
        prop_oneof![
            (id.clone(), n.clone()).prop_map(|(i, n)| Call::CounterAdd(i, n)),
            (id.clone(), n.clone()).prop_map(|(i, n)| Call::CounterSet(i, n)),
            id.clone().prop_map(Call::CounterDelete),
            (id.clone(), proptest::option::of(blob.clone())).prop_map(|(i, b)| Call::NvWrite(i, b)),
            (id.clone(), k.clone(), blob.clone()).prop_map(|(i, k, b)| Call::MapInsert(i, k, b)),
            (id.clone(), k.clone()).prop_map(|(i, k)| Call::MapRemove(i, k)),
            (id.clone(), k.clone(), n.clone()).prop_map(|(i, k, n)| Call::CmAdd(i, k, n)),
            (id.clone(), k.clone(), n.clone()).prop_map(|(i, k, n)| Call::CmInsert(i, k, n)),
            (id.clone(), k.clone()).prop_map(|(i, k)| Call::CmRemove(i, k)),
            (id.clone(), blob.clone()).prop_map(|(i, b)| Call::ListPush(i, b)),
            (id.clone(), k.clone()).prop_map(|(i, k)| Call::SetInsert(i, k)),
            (id.clone(), k.clone()).prop_map(|(i, k)| Call::SetRemove(i, k)),
            (id.clone(), 0u8..4).prop_map(|(i, t)| Call::Clear(i, t)),
            Just(Call::Flush),
        ]
    }

    fn run_against_oracle(driver: &dyn Driver, calls: &[Call]) -> Result<(), TestCaseError> {
        use model::ModelStore;
        let mut cache = CoreCache::open(0, &cfg(), driver, manual()).unwrap();
        let mut oracle = ModelStore::default();
        let nm = |ty: StructureType, i: u8| format!("{}{i}", ty.token());
        let key = |ty, i: u8| crate::key::build_key("nf1", "ins1", 0, ty, &nm(ty, i)).unwrap();
        for call in calls {
            match call.clone() {
                Call::CounterAdd(i, n) => {
                    let h = cache.counter(&nm(StructureType::Counter, i)).unwrap();
                    h.add_nowait(&mut cache, n).unwrap();
                    oracle.apply(&key(StructureType::Counter, i), &Mutation::Incr(n));
                }
                Call::CounterSet(i, n) => {
                    let h = cache.counter(&nm(StructureType::Counter, i)).unwrap();
                    h.set_nowait(&mut cache, n).unwrap();
                    oracle.counter_set(&key(StructureType::Counter, i), Some(n));
                }
                Call::CounterDelete(i) => {
                    let h = cache.counter(&nm(StructureType::Counter, i)).unwrap();
                    h.delete_nowait(&mut cache).unwrap();
                    oracle.counter_set(&key(StructureType::Counter, i), None);
                }
                Call::NvWrite(i, b) => {
                    let Ok(h) = cache.name_value(&nm(StructureType::NameValue, i)) else { continue };
                    let _ = match &b {
                        Some(b) => h.create_nowait(&mut cache, b),
                        None => h.delete_nowait(&mut cache),
                    };
                    let m = b.map_or(Mutation::Delete, Mutation::SetBlob);
                    oracle.apply(&key(StructureType::NameValue, i), &m);
                }
                Call::MapInsert(i, k, v) => {
                    let Ok(h) = cache.map(&nm(StructureType::Map, i)) else { continue };
                    h.insert_nowait(&mut cache, &[k], &v).unwrap();
                    oracle.apply(&key(StructureType::Map, i), &Mutation::MapSet(vec![k], v));
                }
                Call::MapRemove(i, k) => {
                    let Ok(h) = cache.map(&nm(StructureType::Map, i)) else { continue };
                    h.remove_nowait(&mut cache, &[k]).unwrap();
                    oracle.apply(&key(StructureType::Map, i), &Mutation::MapDel(vec![k]));
                }
                Call::CmAdd(i, k, n) => {
                    let Ok(h) = cache.counter_map(&nm(StructureType::CounterMap, i)) else { continue };
                    h.add_to_nowait(&mut cache, &[k], n).unwrap();
                    oracle.apply(&key(StructureType::CounterMap, i), &Mutation::MapIncr(vec![k], n));
                }
                Call::CmInsert(i, k, n) => {
                    let Ok(h) = cache.counter_map(&nm(StructureType::CounterMap, i)) else { continue };
                    h.insert_nowait(&mut cache, &[k], n).unwrap();
                    let kk = key(StructureType::CounterMap, i);
                    oracle.apply(&kk, &Mutation::MapDel(vec![k]));
                    oracle.apply(&kk, &Mutation::MapIncr(vec![k], n));
                }
                Call::CmRemove(i, k) => {
                    let Ok(h) = cache.counter_map(&nm(StructureType::CounterMap, i)) else { continue };
                    h.remove_nowait(&mut cache, &[k]).unwrap();
                    oracle.apply(&key(StructureType::CounterMap, i), &Mutation::MapDel(vec![k]));
                }
                Call::ListPush(i, v) => {
                    let Ok(h) = cache.list(&nm(StructureType::List, i)) else { continue };
                    h.push_back_nowait(&mut cache, &v).unwrap();
                    oracle.apply(&key(StructureType::List, i), &Mutation::ListAppend(v));
                }
                Call::SetInsert(i, k) => {
                    let Ok(h) = cache.set(&nm(StructureType::Set, i)) else { continue };
                    h.insert_nowait(&mut cache, &[k]).unwrap();
                    oracle.apply(&key(StructureType::Set, i), &Mutation::SetAdd(vec![k]));
                }
                Call::SetRemove(i, k) => {
                    let Ok(h) = cache.set(&nm(StructureType::Set, i)) else { continue };
                    h.remove_nowait(&mut cache, &[k]).unwrap();
                    oracle.apply(&key(StructureType::Set, i), &Mutation::SetDel(vec![k]));
                }
                Call::Clear(i, t) => {
                    let ty = [StructureType::List, StructureType::Set, StructureType::Map, StructureType::CounterMap]
                        [t as usize];
                    let Ok(h) = cache.create_structure(ty, &nm(ty, i)) else { continue };
                    cache.clear_collection(h).unwrap();
                    oracle.apply(&key(ty, i), &Mutation::Delete);
                }
                Call::Flush => {
                    cache.flush_now().unwrap();
                }
            }
            // read-your-writes: every live structure matches the oracle
            for (k, live) in cache.live_state() {
                prop_assert_eq!(live, oracle.fetch(&k), "after {:?} on {}", call, k);
            }
        }
        cache.drain().unwrap();
        let mut s = driver.open_session().unwrap();
        for (k, live) in cache.live_state() {
            prop_assert_eq!(s.fetch(&k).unwrap(), live, "store vs cache for {}", k);
        }
        Ok(())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn api_sequences_match_oracle_flatkvs(calls in proptest::collection::vec(call(), 1..120)) {
            run_against_oracle(&FlatKvsDriver::new(), &calls)?;
        }

        #[test]
        fn api_sequences_match_oracle_tablestore(calls in proptest::collection::vec(call(), 1..120)) {
            run_against_oracle(&TableStoreDriver::new(), &calls)?;
        }
    }

    #[test]
    fn api_sequences_match_oracle_resp() {
        let reg = DriverRegistry::default();
        let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig::with_cases(16));
        runner
            .run(&proptest::collection::vec(call(), 1..80), |calls| {
                run_against_oracle(&*reg.create("resp", "local").unwrap(), &calls)
            })
            .unwrap();
    }

    #[test]
    fn mixed_list_set_sequence_of_1000_matches_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let calls: Vec<Call> = (0..1000)
            .map(|_| match rng.gen_range(0..4) {
                0 => Call::ListPush(rng.gen_range(0..2), vec![rng.gen()]),
                1 => Call::SetInsert(rng.gen_range(0..2), rng.gen_range(0..16)),
                2 => Call::SetRemove(rng.gen_range(0..2), rng.gen_range(0..16)),
                _ => Call::Flush,
            })
            .collect();
        // list ids 0..2 and set ids 0..2 would collide; shift sets to ids 3..5
        let calls: Vec<Call> = calls
            .into_iter()
            .map(|c| match c {
                Call::SetInsert(i, k) => Call::SetInsert(i + 3, k),
                Call::SetRemove(i, k) => Call::SetRemove(i + 3, k),
                other => other,
            })
            .collect();
        run_against_oracle(&TableStoreDriver::new(), &calls).unwrap();
    }
}
