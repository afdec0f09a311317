use crate::api::{check_key, ApiError, CounterMap, Map};
use crate::cache::CoreCache;
use crate::runtime::{CoreInfo, DropReason, NetworkFunction, Packet, Verdict};

use super::NfError;

pub const LB_FLOWS_ID: &str = "lbFlows";
pub const LOAD_ID: &str = "load";

pub fn default_servers() -> Vec<String> {
    (0..8).map(|i| format!("srv{i}")).collect()
}

/// Least-loaded assignment of new flows, judged by this core's own load
/// counters. Packets are tagged with the chosen server's index.
#[derive(Debug, Clone)]
pub struct LoadBalancer {
    servers: Vec<String>,
}

#[derive(Debug)]
pub struct LbLocal {
    flows: Map,
    load: CounterMap,
}

impl LoadBalancer {
    pub fn new(servers: Vec<String>) -> Result<Self, NfError> {
        if servers.is_empty() {
            return Err(NfError::EmptyServerList);
        }
        if let Some(bad) = servers.iter().find(|s| check_key(s.as_bytes()).is_err()) {
            return Err(NfError::BadServerId(bad.clone()));
        }
        Ok(Self { servers })
    }

    pub fn servers(&self) -> &[String] {
        &self.servers
    }

    /// Index of the least-loaded server; ties go to the lowest index.
    pub fn pick(&self, load: impl Fn(&str) -> i64) -> usize {
        let mut best = 0;
        let mut best_load = i64::MAX;
        for (i, s) in self.servers.iter().enumerate() {
            let l = load(s);
            if l < best_load {
                best = i;
                best_load = l;
            }
        }
        best
    }
}

impl NetworkFunction for LoadBalancer {
    type Local = LbLocal;

    fn name(&self) -> &str {
        "lb"
    }

    fn init_core(&self, _: CoreInfo, cache: &mut CoreCache) -> Result<LbLocal, ApiError> {
        Ok(LbLocal { flows: cache.map(LB_FLOWS_ID)?, load: cache.counter_map(LOAD_ID)? })
    }

    fn handle(&self, local: &mut LbLocal, cache: &mut CoreCache, packet: &mut Packet) -> Verdict {
        let flow = packet.flow().to_bytes();
        let assigned = local.flows.get(cache, &flow).and_then(|v| <[u8; 4]>::try_from(v).ok()).map(u32::from_be_bytes);
        let server = match assigned {
            Some(i) => i,
            None => {
                let load = local.load;
                let i = self.pick(|s| load.get(cache, s.as_bytes()).unwrap_or(0));
                if let Err(e) = local.load.add_to_nowait(cache, self.servers[i].as_bytes(), 1) {
                    return Verdict::Drop(DropReason::from_api(&e));
                }
                if let Err(e) = local.flows.insert_nowait(cache, &flow, &(i as u32).to_be_bytes()) {
                    return Verdict::Drop(DropReason::from_api(&e));
                }
                i as u32
            }
        };
        packet.annotation = Some(server);
        Verdict::Forward
    }
}
