//! Per-core state caching for multi-core network functions.
//!
//! Each worker core owns a [`CoreCache`]: NF code reads and writes typed
//! structures locally and a per-core flusher pushes coalesced batches to a
//! pluggable key-value backend ([`driver`]). Structures live under keys of the
//! form `nf@instance@core@Type@id`, so cores never share state and a store can
//! be partitioned per core.

// Lets shared test helpers name this crate the same way from unit and integration tests.
extern crate self as flexstate;

pub mod api;
pub mod bench;
pub mod cache;
pub mod config;
pub mod driver;
pub mod key;
pub mod nf;
pub mod runtime;
pub mod traffic;

pub use api::{
    ApiError, Counter, CounterMap, CounterValue, List, Map, NameValue, RawHandle, Set, StructureId, StructureType,
};
pub use cache::{CacheError, CacheOptions, CoreCache, FlushStats};
pub use config::{parse_config, ConfigError, FlexConfig};
pub use driver::{Driver, DriverError, DriverRegistry, Mutation, MutationBatch, Session, Snapshot};
pub use key::{build_key, StoreKey};

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
struct ReadmeDoctests;
