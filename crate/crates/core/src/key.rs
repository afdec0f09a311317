//! Partitioned state keys.
//!
//! Every structure lives under a key that combines the NF id, the NF
//! instance id, the core id, the structure type and the structure id. The
//! canonical rendering joins them with `@`, e.g.
//! `nf1@ins1@1@Counter@counter_id`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::api::{StructureId, StructureType};

/// Field separator of the canonical key rendering.
pub const SEPARATOR: char = '@';

/// Upper bound on NF and instance id tokens.
pub const MAX_TOKEN_LEN: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KeyError {
    #[error("invalid token {0:?}: must be 1-128 printable bytes without '@' or whitespace")]
    InvalidToken(String),
    #[error("invalid core id {0:?}")]
    InvalidCore(String),
    #[error("unknown structure type {0:?}")]
    UnknownType(String),
    #[error("malformed key {0:?}: expected 5 '@'-separated fields")]
    Malformed(String),
}

pub(crate) fn is_valid_token(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= MAX_TOKEN_LEN
        && s.chars().all(|c| c != SEPARATOR && !c.is_whitespace() && !c.is_control())
}

pub(crate) fn check_token(s: &str) -> Result<(), KeyError> {
    if is_valid_token(s) {
        Ok(())
    } else {
        Err(KeyError::InvalidToken(s.to_owned()))
    }
}

/// Globally unique identifier of one partitioned state structure.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StoreKey {
    nf_id: String,
    instance_id: String,
    core_id: u32,
    structure_type: StructureType,
    structure_id: StructureId,
}

impl StoreKey {
    pub fn new(
        nf_id: &str,
        instance_id: &str,
        core_id: u32,
        structure_type: StructureType,
        structure_id: StructureId,
    ) -> Result<Self, KeyError> {
        check_token(nf_id)?;
        check_token(instance_id)?;
        Ok(Self { nf_id: nf_id.to_owned(), instance_id: instance_id.to_owned(), core_id, structure_type, structure_id })
    }

    pub fn nf_id(&self) -> &str {
        &self.nf_id
    }

    pub fn instance_id(&self) -> &str {
        &self.instance_id
    }

    pub fn core_id(&self) -> u32 {
        self.core_id
    }

    pub fn structure_type(&self) -> StructureType {
        self.structure_type
    }

    pub fn structure_id(&self) -> &StructureId {
        &self.structure_id
    }

    /// `nf@instance@core`, the part shared by every structure of one core.
    /// The table store uses it as keyspace name.
    pub fn partition(&self) -> String {
        format!("{}@{}@{}", self.nf_id, self.instance_id, self.core_id)
    }

    /// Prefix shared by all keys of one NF instance, trailing separator included.
    pub fn instance_prefix(nf_id: &str, instance_id: &str) -> String {
        format!("{nf_id}@{instance_id}@")
    }

    pub fn same_partition(&self, other: &StoreKey) -> bool {
        self.core_id == other.core_id && self.nf_id == other.nf_id && self.instance_id == other.instance_id
    }
}

/// Builds the key of a structure. Deterministic and injective over its inputs.
pub fn build_key(
    nf_id: &str,
    instance_id: &str,
    core_id: u32,
    structure_type: StructureType,
    structure_id: &str,
) -> Result<StoreKey, KeyError> {
    let id = StructureId::new(structure_id).map_err(|_| KeyError::InvalidToken(structure_id.into()))?;
    StoreKey::new(nf_id, instance_id, core_id, structure_type, id)
}

impl fmt::Display for StoreKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}@{}@{}@{}@{}",
            self.nf_id,
            self.instance_id,
            self.core_id,
            self.structure_type.token(),
            self.structure_id
        )
    }
}

impl FromStr for StoreKey {
    type Err = KeyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let fields: Vec<&str> = s.split(SEPARATOR).collect();
        let [nf, ins, core, ty, id] = fields[..] else {
            return Err(KeyError::Malformed(s.to_owned()));
        };
        // Reject "+1", "01" and friends so rendering stays the inverse of parsing.
        let canonical =
            !core.is_empty() && core.bytes().all(|b| b.is_ascii_digit()) && (core == "0" || !core.starts_with('0'));
        if !canonical {
            return Err(KeyError::InvalidCore(core.to_owned()));
        }
        let core_id = core.parse::<u32>().map_err(|_| KeyError::InvalidCore(core.to_owned()))?;
        let structure_type = ty.parse::<StructureType>()?;
        build_key(nf, ins, core_id, structure_type, id)
    }
}

impl Serialize for StoreKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StoreKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
