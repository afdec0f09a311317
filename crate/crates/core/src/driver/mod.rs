//! Data-store drivers.
//!
//! A driver turns key-addressed mutations and lookups into the command
//! language and data layout of one store. Three drivers ship with the crate:
//!
//! * `flatkvs`: in-process flat key space, one store key per structure,
//!   native hash/set/list values (Redis-shaped);
//! * `tablestore`: in-process keyspace/table store where each core is a
//!   keyspace, each structure type a table and collections expand to one row
//!   per entry (Cassandra-shaped);
//! * `resp`: the flat layout spoken over RESP2/TCP, with a bundled minimal
//!   server for local runs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::key::StoreKey;

pub mod fault;
pub mod flat;
pub mod resp;
pub mod server;
pub mod table;

pub use fault::{FaultMode, FaultyDriver};
pub use flat::FlatKvsDriver;
pub use resp::RespDriver;
pub use server::MiniRespServer;
pub use table::TableStoreDriver;

/// One store-level change to a structure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mutation {
    SetBlob(Vec<u8>),
    /// Removes the whole structure.
    Delete,
    Incr(i64),
    MapSet(Vec<u8>, Vec<u8>),
    MapDel(Vec<u8>),
    MapIncr(Vec<u8>, i64),
    ListAppend(Vec<u8>),
    ListClear,
    SetAdd(Vec<u8>),
    SetDel(Vec<u8>),
}

impl Mutation {
    /// Absolute writes can be re-applied without changing the outcome.
    pub fn is_idempotent(&self) -> bool {
        !matches!(self, Mutation::Incr(_) | Mutation::MapIncr(..) | Mutation::ListAppend(_))
    }
}

/// Ordered mutations of one core partition, tagged with the per-session
/// sequence number that makes retries exactly-once.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationBatch {
    pub seq: u64,
    pub ops: Vec<(StoreKey, Mutation)>,
}

impl MutationBatch {
    pub fn new(seq: u64) -> Self {
        Self { seq, ops: Vec::new() }
    }

    pub fn push(&mut self, key: StoreKey, m: Mutation) {
        debug_assert!(self.ops.first().is_none_or(|(k, _)| k.same_partition(&key)), "batch mixes core partitions");
        self.ops.push((key, m));
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// All keys share one `nf@instance@core` prefix.
    pub fn is_single_partition(&self) -> bool {
        match self.ops.first() {
            None => true,
            Some((first, _)) => self.ops.iter().all(|(k, _)| k.same_partition(first)),
        }
    }
}

/// Store content of one structure. Empty collections are never returned:
/// stores do not keep them, so they read back as absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Snapshot {
    Blob(Vec<u8>),
    Counter(i64),
    List(Vec<Vec<u8>>),
    Set(BTreeSet<Vec<u8>>),
    Map(BTreeMap<Vec<u8>, Vec<u8>>),
    CounterMap(BTreeMap<Vec<u8>, i64>),
}

impl Snapshot {
    /// Maps empty collections to `None`.
    pub fn normalize(self) -> Option<Snapshot> {
        let empty = match &self {
            Snapshot::Blob(_) | Snapshot::Counter(_) => false,
            Snapshot::List(l) => l.is_empty(),
            Snapshot::Set(s) => s.is_empty(),
            Snapshot::Map(m) => m.is_empty(),
            Snapshot::CounterMap(m) => m.is_empty(),
        };
        (!empty).then_some(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DriverError {
    #[error("connection lost: {0}")]
    ConnectionLost(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("store rejected command: {0}")]
    Rejected(String),
    #[error("unknown driver {0:?}")]
    UnknownDriver(String),
    #[error("bad endpoint {0:?}")]
    BadEndpoint(String),
}

/// Acknowledgement of an applied batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ack {
    pub seq: u64,
    pub mutations: usize,
    /// `false` when the store had already applied this sequence number.
    pub fresh: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionInfo {
    pub driver_label: String,
    pub endpoint: String,
    pub session_id: u64,
}

static NEXT_SESSION: AtomicU64 = AtomicU64::new(1);

/// Process-unique session id. The high bits are random so that several
/// processes sharing one remote store do not collide.
pub(crate) fn next_session_id() -> u64 {
    use std::sync::OnceLock;
    static SALT: OnceLock<u64> = OnceLock::new();
    let salt = *SALT.get_or_init(|| rand::random::<u64>() & !0xFFFF_FFFF);
    salt | NEXT_SESSION.fetch_add(1, Ordering::Relaxed)
}

/// Operations every data-store driver must provide. Calls on one session are
/// serialized by the caller; distinct sessions are independent.
pub trait Session: Send {
    fn info(&self) -> &SessionInfo;

    /// Applies every mutation in order; returns once the last one is applied.
    fn apply(&mut self, batch: &MutationBatch) -> Result<Ack, DriverError>;

    fn fetch(&mut self, key: &StoreKey) -> Result<Option<Snapshot>, DriverError>;

    /// Every structure of every core of one NF instance, sorted by key.
    fn scan_prefix(&mut self, nf_id: &str, instance_id: &str) -> Result<Vec<(StoreKey, Snapshot)>, DriverError>;
}

pub trait Driver: Send + Sync {
    fn label(&self) -> &str;

    fn endpoint(&self) -> String {
        "local".to_owned()
    }

    fn open_session(&self) -> Result<Box<dyn Session>, DriverError>;
}

/// Tracks the last applied sequence number per session so batch retries
/// are applied at most once.
#[derive(Debug, Default)]
pub(crate) struct SeqTable(HashMap<u64, u64>);

impl SeqTable {
    /// Returns `true` if the batch must be applied, recording it as applied.
    pub(crate) fn admit(&mut self, session: u64, seq: u64) -> bool {
        if seq == 0 {
            return true;
        }
        let last = self.0.entry(session).or_insert(0);
        if seq <= *last {
            false
        } else {
            *last = seq;
            true
        }
    }
}

type Factory = Arc<dyn Fn(&str) -> Result<Arc<dyn Driver>, DriverError> + Send + Sync>;

/// Maps configuration labels to driver constructors.
#[derive(Clone)]
pub struct DriverRegistry {
    factories: BTreeMap<String, Factory>,
}

impl fmt::Debug for DriverRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl DriverRegistry {
    pub fn empty() -> Self {
        Self { factories: BTreeMap::new() }
    }

    pub fn register<F>(&mut self, label: &str, factory: F)
    where
        F: Fn(&str) -> Result<Arc<dyn Driver>, DriverError> + Send + Sync + 'static,
    {
        self.factories.insert(label.to_owned(), Arc::new(factory));
    }

    pub fn contains(&self, label: &str) -> bool {
        self.factories.contains_key(label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    /// Instantiates a fresh driver (and, for in-process stores, a fresh store).
    pub fn create(&self, label: &str, endpoint: &str) -> Result<Arc<dyn Driver>, DriverError> {
        let factory = self.factories.get(label).ok_or_else(|| DriverError::UnknownDriver(label.to_owned()))?;
        factory(endpoint)
    }
}

impl Default for DriverRegistry {
    fn default() -> Self {
        let mut reg = Self::empty();
        reg.register("flatkvs", |endpoint| {
            local_only("flatkvs", endpoint)?;
            Ok(Arc::new(FlatKvsDriver::new()) as Arc<dyn Driver>)
        });
        reg.register("tablestore", |endpoint| {
            local_only("tablestore", endpoint)?;
            Ok(Arc::new(TableStoreDriver::new()) as Arc<dyn Driver>)
        });
        reg.register("resp", |endpoint| {
            let driver =
                if endpoint == "local" { RespDriver::with_local_server()? } else { RespDriver::connect(endpoint)? };
            Ok(Arc::new(driver) as Arc<dyn Driver>)
        });
        reg
    }
}

fn local_only(label: &str, endpoint: &str) -> Result<(), DriverError> {
    if endpoint == "local" {
        Ok(())
    } else {
        Err(DriverError::BadEndpoint(format!("{label} is in-process; endpoint must be \"local\", got {endpoint}")))
    }
}

/// Adds a fixed delay to every store round trip (apply, fetch, scan).
pub struct LatencyDriver {
    inner: Arc<dyn Driver>,
    latency: Duration,
}

impl LatencyDriver {
    pub fn new(inner: Arc<dyn Driver>, latency: Duration) -> Self {
        Self { inner, latency }
    }
}

impl Driver for LatencyDriver {
    fn label(&self) -> &str {
        self.inner.label()
    }

    fn endpoint(&self) -> String {
        self.inner.endpoint()
    }

    fn open_session(&self) -> Result<Box<dyn Session>, DriverError> {
        Ok(Box::new(LatencySession { inner: self.inner.open_session()?, latency: self.latency }))
    }
}

struct LatencySession {
    inner: Box<dyn Session>,
    latency: Duration,
}

impl Session for LatencySession {
    fn info(&self) -> &SessionInfo {
        self.inner.info()
    }

    fn apply(&mut self, batch: &MutationBatch) -> Result<Ack, DriverError> {
        if !batch.is_empty() {
            std::thread::sleep(self.latency);
        }
        self.inner.apply(batch)
    }

    fn fetch(&mut self, key: &StoreKey) -> Result<Option<Snapshot>, DriverError> {
        std::thread::sleep(self.latency);
        self.inner.fetch(key)
    }

    fn scan_prefix(&mut self, nf_id: &str, instance_id: &str) -> Result<Vec<(StoreKey, Snapshot)>, DriverError> {
        std::thread::sleep(self.latency);
        self.inner.scan_prefix(nf_id, instance_id)
    }
}
