use std::net::Ipv4Addr;
use std::ops::Range;

use crate::api::{ApiError, Counter, Map};
use crate::cache::CoreCache;
use crate::runtime::{CoreInfo, DropReason, NetworkFunction, Packet, Verdict};

use super::NfError;

pub const NAT_BINDINGS_ID: &str = "natBindings";
pub const NAT_CURSOR_ID: &str = "natCursor";

/// Ordered pool of external (address, port) pairs. Pair `i` uses address
/// `base + i / 64512` and port `1024 + i % 64512`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NatPool {
    base: Ipv4Addr,
    size: u32,
}

impl NatPool {
    pub const FIRST_PORT: u16 = 1024;
    pub const PORTS_PER_ADDR: u32 = 65536 - Self::FIRST_PORT as u32;
    pub const DEFAULT_BASE: Ipv4Addr = Ipv4Addr::new(100, 64, 0, 0);

    pub fn new(base: Ipv4Addr, size: u32) -> Result<Self, NfError> {
        let addrs = size.div_ceil(Self::PORTS_PER_ADDR);
        if size == 0 || u32::from(base).checked_add(addrs).is_none() {
            return Err(NfError::PoolTooSmall);
        }
        Ok(Self { base, size })
    }

    pub fn with_size(size: u32) -> Result<Self, NfError> {
        Self::new(Self::DEFAULT_BASE, size)
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn pair(&self, i: u32) -> (Ipv4Addr, u16) {
        assert!(i < self.size, "pair {i} outside pool of {}", self.size);
        let ip = Ipv4Addr::from(u32::from(self.base) + i / Self::PORTS_PER_ADDR);
        (ip, Self::FIRST_PORT + (i % Self::PORTS_PER_ADDR) as u16)
    }

    pub fn index_of(&self, ip: Ipv4Addr, port: u16) -> Option<u32> {
        let hi = u32::from(ip).checked_sub(u32::from(self.base))?;
        let lo = u32::from(port.checked_sub(Self::FIRST_PORT)?);
        let i = hi.checked_mul(Self::PORTS_PER_ADDR)?.checked_add(lo)?;
        (i < self.size).then_some(i)
    }

    /// Contiguous share of `core`; shares are disjoint and cover the pool.
    pub fn chunk(&self, core: u32, n_cores: u32) -> Range<u32> {
        let at = |c: u32| (u64::from(self.size) * u64::from(c) / u64::from(n_cores)) as u32;
        at(core)..at(core + 1)
    }
}

fn encode(ip: Ipv4Addr, port: u16) -> [u8; 6] {
    let mut b = [0u8; 6];
    b[..4].copy_from_slice(&ip.octets());
    b[4..].copy_from_slice(&port.to_be_bytes());
    b
}

/// Decodes a stored binding value.
pub fn decode_binding(b: &[u8]) -> Option<(Ipv4Addr, u16)> {
    let b: &[u8; 6] = b.try_into().ok()?;
    Some((Ipv4Addr::new(b[0], b[1], b[2], b[3]), u16::from_be_bytes([b[4], b[5]])))
}

/// Source NAT. Each core hands out pairs of its own chunk, lowest index first,
/// and keeps one binding per flow for the whole run.
#[derive(Debug, Clone)]
pub struct Nat {
    pool: NatPool,
}

#[derive(Debug)]
pub struct NatLocal {
    bindings: Map,
    cursor: Counter,
    chunk: Range<u32>,
}

impl Nat {
    pub fn new(pool: NatPool) -> Self {
        Self { pool }
    }

    pub fn pool(&self) -> &NatPool {
        &self.pool
    }
}

impl NetworkFunction for Nat {
    type Local = NatLocal;

    fn name(&self) -> &str {
        "nat"
    }

    fn init_core(&self, core: CoreInfo, cache: &mut CoreCache) -> Result<NatLocal, ApiError> {
        Ok(NatLocal {
            bindings: cache.map(NAT_BINDINGS_ID)?,
            cursor: cache.counter(NAT_CURSOR_ID)?,
            chunk: self.pool.chunk(core.core_id, core.n_cores),
        })
    }

    fn handle(&self, local: &mut NatLocal, cache: &mut CoreCache, packet: &mut Packet) -> Verdict {
        let flow = packet.flow().to_bytes();
        let (ip, port) = match local.bindings.get(cache, &flow).and_then(decode_binding) {
            Some(pair) => pair,
            None => {
                let next = u64::from(local.chunk.start) + local.cursor.read(cache).max(0) as u64;
                if next >= u64::from(local.chunk.end) {
                    return Verdict::Drop(DropReason::PoolExhausted);
                }
                let pair = self.pool.pair(next as u32);
                // Advance first: a failure after this wastes a pair but never reuses one.
                if let Err(e) = local.cursor.add_nowait(cache, 1) {
                    return Verdict::Drop(DropReason::from_api(&e));
                }
                if let Err(e) = local.bindings.insert_nowait(cache, &flow, &encode(pair.0, pair.1)) {
                    return Verdict::Drop(DropReason::from_api(&e));
                }
                pair
            }
        };
        packet.src_ip = ip;
        packet.src_port = port;
        Verdict::Forward
    }
}
