//! Fault injection for exercising retry paths.

use std::sync::atomic::{AtomicU32, AtomicU8, Ordering};
use std::sync::Arc;

use crate::key::StoreKey;

use super::{Ack, Driver, DriverError, MutationBatch, Session, SessionInfo, Snapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultMode {
    /// The batch never reaches the store.
    DropRequest,
    /// The batch is applied but the acknowledgement is lost.
    DropAck,
}

#[derive(Default)]
struct Faults {
    pending: AtomicU32,
    mode: AtomicU8,
    fetch_failures: AtomicU32,
}

/// Wraps a driver and fails a configurable number of upcoming calls with
/// [`DriverError::ConnectionLost`].
#[derive(Clone)]
pub struct FaultyDriver {
    inner: Arc<dyn Driver>,
    faults: Arc<Faults>,
}

impl FaultyDriver {
    pub fn new(inner: Arc<dyn Driver>) -> Self {
        Self { inner, faults: Arc::default() }
    }

    /// The next `n` non-empty applies on any session fail.
    pub fn fail_applies(&self, n: u32, mode: FaultMode) {
        self.faults.mode.store(mode as u8, Ordering::SeqCst);
        self.faults.pending.store(n, Ordering::SeqCst);
    }

    pub fn fail_fetches(&self, n: u32) {
        self.faults.fetch_failures.store(n, Ordering::SeqCst);
    }

    pub fn remaining_faults(&self) -> u32 {
        self.faults.pending.load(Ordering::SeqCst)
    }
}

fn take(counter: &AtomicU32) -> bool {
    counter.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1)).is_ok()
}

impl Driver for FaultyDriver {
    fn label(&self) -> &str {
        self.inner.label()
    }

    fn endpoint(&self) -> String {
        self.inner.endpoint()
    }

    fn open_session(&self) -> Result<Box<dyn Session>, DriverError> {
        Ok(Box::new(FaultySession { inner: self.inner.open_session()?, faults: self.faults.clone() }))
    }
}

struct FaultySession {
    inner: Box<dyn Session>,
    faults: Arc<Faults>,
}

impl Session for FaultySession {
    fn info(&self) -> &SessionInfo {
        self.inner.info()
    }

    fn apply(&mut self, batch: &MutationBatch) -> Result<Ack, DriverError> {
        if batch.is_empty() || !take(&self.faults.pending) {
            return self.inner.apply(batch);
        }
        if self.faults.mode.load(Ordering::SeqCst) == FaultMode::DropAck as u8 {
            self.inner.apply(batch)?;
            return Err(DriverError::ConnectionLost("injected: acknowledgement lost".into()));
        }
        Err(DriverError::ConnectionLost("injected: request lost".into()))
    }

    fn fetch(&mut self, key: &StoreKey) -> Result<Option<Snapshot>, DriverError> {
        if take(&self.faults.fetch_failures) {
            return Err(DriverError::ConnectionLost("injected: fetch failed".into()));
        }
        self.inner.fetch(key)
    }

    fn scan_prefix(&mut self, nf_id: &str, instance_id: &str) -> Result<Vec<(StoreKey, Snapshot)>, DriverError> {
        self.inner.scan_prefix(nf_id, instance_id)
    }
}
