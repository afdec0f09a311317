use crate::api::{ApiError, Counter};
use crate::cache::CoreCache;
use crate::runtime::{CoreInfo, DropReason, NetworkFunction, Packet, Verdict};

pub const COUNTER_ID: &str = "pktCounter";

/// Counts packets, waiting for the store to acknowledge every increment.
#[derive(Debug, Default)]
pub struct SyncCounter;

/// Counts packets in the core cache; the flusher carries the total to the store.
#[derive(Debug, Default)]
pub struct AsyncCounter;

impl NetworkFunction for SyncCounter {
    type Local = Counter;

    fn name(&self) -> &str {
        "counter-sync"
    }

    fn init_core(&self, _: CoreInfo, cache: &mut CoreCache) -> Result<Counter, ApiError> {
        cache.counter(COUNTER_ID)
    }

    fn handle(&self, counter: &mut Counter, cache: &mut CoreCache, packet: &mut Packet) -> Verdict {
        match counter.add(cache, 1) {
            Ok(_) => {
                packet.reflect();
                Verdict::Forward
            }
            Err(e) => Verdict::Drop(DropReason::from_api(&e)),
        }
    }
}

impl NetworkFunction for AsyncCounter {
    type Local = Counter;

    fn name(&self) -> &str {
        "counter-async"
    }

    fn init_core(&self, _: CoreInfo, cache: &mut CoreCache) -> Result<Counter, ApiError> {
        cache.counter(COUNTER_ID)
    }

    fn handle(&self, counter: &mut Counter, cache: &mut CoreCache, packet: &mut Packet) -> Verdict {
        match counter.add_nowait(cache, 1) {
            Ok(()) => {
                packet.reflect();
                Verdict::Forward
            }
            Err(e) => Verdict::Drop(DropReason::from_api(&e)),
        }
    }
}
