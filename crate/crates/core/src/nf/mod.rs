//! Reference network functions and combiners.
//!
//! Everything here is written against the state API alone; which store backs
//! the state is decided by configuration.

mod combine;
mod counter;
mod lb;
mod nat;

use std::fmt;
use std::str::FromStr;

pub use combine::{combine_countermaps, combine_counters, CombineError};
pub use counter::{AsyncCounter, SyncCounter, COUNTER_ID};
pub use lb::{default_servers, LbLocal, LoadBalancer, LB_FLOWS_ID, LOAD_ID};
pub use nat::{decode_binding, Nat, NatLocal, NatPool, NAT_BINDINGS_ID, NAT_CURSOR_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NfKind {
    CounterSync,
    CounterAsync,
    Nat,
    Lb,
}

impl NfKind {
    pub const ALL: [NfKind; 4] = [NfKind::CounterSync, NfKind::CounterAsync, NfKind::Nat, NfKind::Lb];

    pub fn name(self) -> &'static str {
        match self {
            NfKind::CounterSync => "counter-sync",
            NfKind::CounterAsync => "counter-async",
            NfKind::Nat => "nat",
            NfKind::Lb => "lb",
        }
    }
}

impl fmt::Display for NfKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NfKind {
    type Err = NfError;

    fn from_str(s: &str) -> Result<Self, NfError> {
        NfKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| NfError::UnknownNf(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NfError {
    #[error("unknown NF {0:?} (expected counter-sync, counter-async, nat or lb)")]
    UnknownNf(String),
    #[error("load balancer needs at least one server")]
    EmptyServerList,
    #[error("server id {0:?} is not a valid map key")]
    BadServerId(String),
    #[error("NAT pool must hold at least one pair per core")]
    PoolTooSmall,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in NfKind::ALL {
            assert_eq!(k.name().parse::<NfKind>().unwrap(), k);
        }
        assert!("firewall".parse::<NfKind>().is_err());
    }

    // NF sources may only talk to the state API; the store is chosen by config.
    #[test]
    fn nf_sources_name_no_driver() {
        let forbidden = [
            "driver::",
            "FlatKvs",
            "TableStore",
            "RespDriver",
            "MiniRespServer",
            "LatencyDriver",
            "FaultyDriver",
            "flatkvs",
            "tablestore",
            "\"resp\"",
        ];
        let sources = [
            ("mod.rs", include_str!("mod.rs")),
            ("counter.rs", include_str!("counter.rs")),
            ("nat.rs", include_str!("nat.rs")),
            ("lb.rs", include_str!("lb.rs")),
            ("combine.rs", include_str!("combine.rs")),
        ];
        for (file, src) in sources {
            let code = src.split("#[cfg(test)]").next().unwrap();
            for word in forbidden {
                assert!(!code.contains(word), "{file} mentions {word}");
            }
        }
    }
}
