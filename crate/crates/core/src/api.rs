//! Store-agnostic state API.
//!
//! NF code creates typed handles through a [`CoreCache`] and calls them with
//! the same cache. Handles are plain tokens (`Copy + Send`), so they can be
//! built on one thread and moved to the worker that owns the cache. Every call
//! touches only the core-local cache; the `_nowait` forms never wait on the
//! store, the plain forms flush the touched structure and wait for the store
//! acknowledgement.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cache::CoreCache;
use crate::key::KeyError;

/// Longest accepted structure id, in bytes.
pub const MAX_ID_LEN: usize = 128;
/// Longest accepted map key or collection element, in bytes.
pub const MAX_ELEMENT_LEN: usize = 1024;
/// Longest accepted blob, in bytes.
pub const MAX_BLOB_LEN: usize = 64 * 1024;

/// Counter values are plain signed 64-bit integers; arithmetic is checked.
pub type CounterValue = i64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StructureType {
    NameValue,
    Counter,
    List,
    Set,
    Map,
    CounterMap,
}

impl StructureType {
    pub const ALL: [StructureType; 6] = [
        StructureType::NameValue,
        StructureType::Counter,
        StructureType::List,
        StructureType::Set,
        StructureType::Map,
        StructureType::CounterMap,
    ];

    /// Token used inside store keys and as table name.
    pub fn token(self) -> &'static str {
        match self {
            StructureType::NameValue => "NameValue",
            StructureType::Counter => "Counter",
            StructureType::List => "List",
            StructureType::Set => "Set",
            StructureType::Map => "Map",
            StructureType::CounterMap => "Countermap",
        }
    }
}

impl fmt::Display for StructureType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for StructureType {
    type Err = KeyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StructureType::ALL.into_iter().find(|t| t.token() == s).ok_or_else(|| KeyError::UnknownType(s.to_owned()))
    }
}

/// Developer-chosen name of a structure: 1-128 printable bytes, no `@`, no whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct StructureId(String);

impl StructureId {
    pub fn new(id: &str) -> Result<Self, ApiError> {
        if crate::key::is_valid_token(id) && id.len() <= MAX_ID_LEN {
            Ok(Self(id.to_owned()))
        } else {
            Err(ApiError::InvalidId(id.to_owned()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for StructureId {
    type Error = ApiError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        StructureId::new(&value)
    }
}

impl From<StructureId> for String {
    fn from(value: StructureId) -> Self {
        value.0
    }
}

impl fmt::Display for StructureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ApiError {
    #[error("invalid structure id {0:?}")]
    InvalidId(String),
    #[error("structure {id:?} already exists on this core as {existing}")]
    TypeConflict { id: String, existing: StructureType },
    #[error("counter overflow")]
    Overflow,
    #[error("value not found")]
    NotFound,
    #[error("key of {0} bytes exceeds the 1 KiB limit")]
    KeyTooLarge(usize),
    #[error("blob of {0} bytes exceeds the 64 KiB limit")]
    BlobTooLarge(usize),
    #[error("index {index} out of range for list of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("store unavailable: {0}")]
    StoreUnavailable(String),
    #[error("too many unflushed mutations; back off")]
    Backpressure,
}

/// Map and countermap keys: 1 byte to 1 KiB.
pub(crate) fn check_key(bytes: &[u8]) -> Result<(), ApiError> {
    if bytes.is_empty() || bytes.len() > MAX_ELEMENT_LEN {
        Err(ApiError::KeyTooLarge(bytes.len()))
    } else {
        Ok(())
    }
}

/// List and set elements: at most 1 KiB.
pub(crate) fn check_element(bytes: &[u8]) -> Result<(), ApiError> {
    if bytes.len() > MAX_ELEMENT_LEN {
        Err(ApiError::KeyTooLarge(bytes.len()))
    } else {
        Ok(())
    }
}

pub(crate) fn check_blob(bytes: &[u8]) -> Result<(), ApiError> {
    if bytes.len() > MAX_BLOB_LEN {
        Err(ApiError::BlobTooLarge(bytes.len()))
    } else {
        Ok(())
    }
}

/// Untyped part of every handle: which cache, which core, which slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RawHandle {
    pub(crate) cache_id: u64,
    pub(crate) core_id: u32,
    pub(crate) slot: u32,
    pub(crate) structure_type: StructureType,
}

impl RawHandle {
    pub fn core_id(&self) -> u32 {
        self.core_id
    }

    pub fn structure_type(&self) -> StructureType {
        self.structure_type
    }
}

macro_rules! typed_handle {
    ($(#[$doc:meta])* $name:ident, $ty:expr) => {
        $(#[$doc])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub struct $name(pub(crate) RawHandle);

        impl $name {
            pub fn raw(&self) -> RawHandle {
                self.0
            }
        }

        impl TryFrom<RawHandle> for $name {
            type Error = RawHandle;

            fn try_from(raw: RawHandle) -> Result<Self, RawHandle> {
                if raw.structure_type == $ty {
                    Ok($name(raw))
                } else {
                    Err(raw)
                }
            }
        }
    };
}

typed_handle!(
    /// Opaque blob that can be created, read, updated and deleted.
    NameValue,
    StructureType::NameValue
);
typed_handle!(
    /// Signed 64-bit counter.
    Counter,
    StructureType::Counter
);
typed_handle!(List, StructureType::List);
typed_handle!(Set, StructureType::Set);
typed_handle!(Map, StructureType::Map);
typed_handle!(
    /// Map whose values are counters.
    CounterMap,
    StructureType::CounterMap
);

impl Counter {
    pub fn read(&self, cache: &CoreCache) -> CounterValue {
        cache.counter_value(self.0)
    }

    /// Adds `n` and waits for the store to acknowledge the new value.
    pub fn add(&self, cache: &mut CoreCache, n: i64) -> Result<CounterValue, ApiError> {
        let v = cache.counter_add(self.0, n)?;
        cache.sync_structure(self.0)?;
        Ok(v)
    }

    pub fn add_nowait(&self, cache: &mut CoreCache, n: i64) -> Result<(), ApiError> {
        cache.counter_add(self.0, n).map(drop)
    }

    /// Replaces the value; pending increments issued before are superseded.
    pub fn set(&self, cache: &mut CoreCache, v: CounterValue) -> Result<(), ApiError> {
        cache.counter_set(self.0, Some(v))?;
        cache.sync_structure(self.0)
    }

    pub fn set_nowait(&self, cache: &mut CoreCache, v: CounterValue) -> Result<(), ApiError> {
        cache.counter_set(self.0, Some(v))
    }

    /// Removes the counter from the store. Reads return 0 afterwards.
    pub fn delete(&self, cache: &mut CoreCache) -> Result<(), ApiError> {
        cache.counter_set(self.0, None)?;
        cache.sync_structure(self.0)
    }

    pub fn delete_nowait(&self, cache: &mut CoreCache) -> Result<(), ApiError> {
        cache.counter_set(self.0, None)
    }
}

impl NameValue {
    pub fn read<'c>(&self, cache: &'c CoreCache) -> Option<&'c [u8]> {
        cache.blob_value(self.0)
    }

    pub fn create(&self, cache: &mut CoreCache, v: &[u8]) -> Result<(), ApiError> {
        self.create_nowait(cache, v)?;
        cache.sync_structure(self.0)
    }

    pub fn create_nowait(&self, cache: &mut CoreCache, v: &[u8]) -> Result<(), ApiError> {
        cache.blob_write(self.0, Some(v), false)
    }

    pub fn update(&self, cache: &mut CoreCache, v: &[u8]) -> Result<(), ApiError> {
        self.update_nowait(cache, v)?;
        cache.sync_structure(self.0)
    }

    pub fn update_nowait(&self, cache: &mut CoreCache, v: &[u8]) -> Result<(), ApiError> {
        cache.blob_write(self.0, Some(v), true)
    }

    pub fn delete(&self, cache: &mut CoreCache) -> Result<(), ApiError> {
        self.delete_nowait(cache)?;
        cache.sync_structure(self.0)
    }

    pub fn delete_nowait(&self, cache: &mut CoreCache) -> Result<(), ApiError> {
        cache.blob_write(self.0, None, true)
    }
}

impl Map {
    pub fn get<'c>(&self, cache: &'c CoreCache, k: &[u8]) -> Option<&'c [u8]> {
        cache.map_get(self.0, k)
    }

    pub fn contains(&self, cache: &CoreCache, k: &[u8]) -> bool {
        self.get(cache, k).is_some()
    }

    pub fn size(&self, cache: &CoreCache) -> usize {
        cache.collection_len(self.0)
    }

    pub fn insert(&self, cache: &mut CoreCache, k: &[u8], v: &[u8]) -> Result<(), ApiError> {
        self.insert_nowait(cache, k, v)?;
        cache.sync_structure(self.0)
    }

    pub fn insert_nowait(&self, cache: &mut CoreCache, k: &[u8], v: &[u8]) -> Result<(), ApiError> {
        cache.map_write(self.0, k, Some(v))
    }

    /// Returns whether the key was present.
    pub fn remove(&self, cache: &mut CoreCache, k: &[u8]) -> Result<bool, ApiError> {
        let was = self.remove_nowait(cache, k)?;
        cache.sync_structure(self.0)?;
        Ok(was)
    }

    pub fn remove_nowait(&self, cache: &mut CoreCache, k: &[u8]) -> Result<bool, ApiError> {
        let was = self.contains(cache, k);
        cache.map_write(self.0, k, None)?;
        Ok(was)
    }

    /// All entries, sorted by key.
    pub fn entries(&self, cache: &CoreCache) -> Vec<(Vec<u8>, Vec<u8>)> {
        cache.map_entries(self.0)
    }

    pub fn clear(&self, cache: &mut CoreCache) -> Result<(), ApiError> {
        cache.clear_collection(self.0)?;
        cache.sync_structure(self.0)
    }

    pub fn clear_nowait(&self, cache: &mut CoreCache) -> Result<(), ApiError> {
        cache.clear_collection(self.0)
    }
}

impl CounterMap {
    pub fn get(&self, cache: &CoreCache, k: &[u8]) -> Option<CounterValue> {
        cache.countermap_get(self.0, k)
    }

    pub fn contains(&self, cache: &CoreCache, k: &[u8]) -> bool {
        self.get(cache, k).is_some()
    }

    pub fn size(&self, cache: &CoreCache) -> usize {
        cache.collection_len(self.0)
    }

    /// Adds `n` to entry `k`; a missing entry counts as 0.
    pub fn add_to(&self, cache: &mut CoreCache, k: &[u8], n: i64) -> Result<CounterValue, ApiError> {
        let v = cache.countermap_add(self.0, k, n)?;
        cache.sync_structure(self.0)?;
        Ok(v)
    }

    pub fn add_to_nowait(&self, cache: &mut CoreCache, k: &[u8], n: i64) -> Result<CounterValue, ApiError> {
        cache.countermap_add(self.0, k, n)
    }

    pub fn insert(&self, cache: &mut CoreCache, k: &[u8], v: CounterValue) -> Result<(), ApiError> {
        self.insert_nowait(cache, k, v)?;
        cache.sync_structure(self.0)
    }

    pub fn insert_nowait(&self, cache: &mut CoreCache, k: &[u8], v: CounterValue) -> Result<(), ApiError> {
        cache.countermap_set(self.0, k, Some(v))
    }

    pub fn remove(&self, cache: &mut CoreCache, k: &[u8]) -> Result<bool, ApiError> {
        let was = self.remove_nowait(cache, k)?;
        cache.sync_structure(self.0)?;
        Ok(was)
    }

    pub fn remove_nowait(&self, cache: &mut CoreCache, k: &[u8]) -> Result<bool, ApiError> {
        let was = self.contains(cache, k);
        cache.countermap_set(self.0, k, None)?;
        Ok(was)
    }

    pub fn entries(&self, cache: &CoreCache) -> Vec<(Vec<u8>, CounterValue)> {
        cache.countermap_entries(self.0)
    }

    pub fn clear(&self, cache: &mut CoreCache) -> Result<(), ApiError> {
        cache.clear_collection(self.0)?;
        cache.sync_structure(self.0)
    }

    pub fn clear_nowait(&self, cache: &mut CoreCache) -> Result<(), ApiError> {
        cache.clear_collection(self.0)
    }
}

impl List {
    pub fn get<'c>(&self, cache: &'c CoreCache, i: usize) -> Result<&'c [u8], ApiError> {
        cache.list_get(self.0, i)
    }

    pub fn len(&self, cache: &CoreCache) -> usize {
        cache.collection_len(self.0)
    }

    pub fn is_empty(&self, cache: &CoreCache) -> bool {
        self.len(cache) == 0
    }

    pub fn push_back(&self, cache: &mut CoreCache, v: &[u8]) -> Result<(), ApiError> {
        self.push_back_nowait(cache, v)?;
        cache.sync_structure(self.0)
    }

    pub fn push_back_nowait(&self, cache: &mut CoreCache, v: &[u8]) -> Result<(), ApiError> {
        cache.list_push(self.0, v)
    }

    pub fn clear(&self, cache: &mut CoreCache) -> Result<(), ApiError> {
        cache.clear_collection(self.0)?;
        cache.sync_structure(self.0)
    }

    pub fn clear_nowait(&self, cache: &mut CoreCache) -> Result<(), ApiError> {
        cache.clear_collection(self.0)
    }

    pub fn items(&self, cache: &CoreCache) -> Vec<Vec<u8>> {
        cache.list_items(self.0)
    }
}

impl Set {
    pub fn contains(&self, cache: &CoreCache, v: &[u8]) -> bool {
        cache.set_contains(self.0, v)
    }

    /// Members in ascending byte order.
    pub fn members(&self, cache: &CoreCache) -> Vec<Vec<u8>> {
        cache.set_members(self.0)
    }

    pub fn len(&self, cache: &CoreCache) -> usize {
        cache.collection_len(self.0)
    }

    pub fn is_empty(&self, cache: &CoreCache) -> bool {
        self.len(cache) == 0
    }

    pub fn insert(&self, cache: &mut CoreCache, v: &[u8]) -> Result<bool, ApiError> {
        let added = self.insert_nowait(cache, v)?;
        cache.sync_structure(self.0)?;
        Ok(added)
    }

    pub fn insert_nowait(&self, cache: &mut CoreCache, v: &[u8]) -> Result<bool, ApiError> {
        cache.set_write(self.0, v, true)
    }

    pub fn remove(&self, cache: &mut CoreCache, v: &[u8]) -> Result<bool, ApiError> {
        let removed = self.remove_nowait(cache, v)?;
        cache.sync_structure(self.0)?;
        Ok(removed)
    }

    pub fn remove_nowait(&self, cache: &mut CoreCache, v: &[u8]) -> Result<bool, ApiError> {
        cache.set_write(self.0, v, false)
    }

    pub fn clear(&self, cache: &mut CoreCache) -> Result<(), ApiError> {
        cache.clear_collection(self.0)?;
        cache.sync_structure(self.0)
    }

    pub fn clear_nowait(&self, cache: &mut CoreCache) -> Result<(), ApiError> {
        cache.clear_collection(self.0)
    }
}
