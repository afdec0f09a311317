//! Seeded synthetic traffic: a fixed set of random flows replayed cyclically.
//!
//! Flow files are plain text:
//!
//! ```text
//! flexstate-flows v1
//! 198.18.4.7,198.19.200.1,40123,443,6
//! ```

use std::collections::HashSet;
use std::net::Ipv4Addr;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::runtime::{FlowKey, Packet, DEFAULT_PACKET_SIZE, MIN_PACKET_SIZE};

pub const FLOW_FILE_HEADER: &str = "flexstate-flows v1";
pub const DEFAULT_FLOWS: usize = 50_000;
pub const DEFAULT_DURATION: Duration = Duration::from_secs(15);

/// Benchmarking range 198.18.0.0/15.
const ADDR_BASE: u32 = 0xc612_0000;
const ADDR_SPAN: u32 = 1 << 17;
const PROTO_TCP: u8 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayLimit {
    Budget(u64),
    #[serde(serialize_with = "secs")]
    Duration(Duration),
}

fn secs<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrafficSpec {
    pub n_flows: usize,
    pub packet_size: u16,
    pub seed: u64,
    pub limit: ReplayLimit,
}

impl Default for TrafficSpec {
    fn default() -> Self {
        Self {
            n_flows: DEFAULT_FLOWS,
            packet_size: DEFAULT_PACKET_SIZE,
            seed: 0,
            limit: ReplayLimit::Duration(DEFAULT_DURATION),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TrafficError {
    #[error("n_flows must be positive")]
    NoFlows,
    #[error("packet size {0} below {MIN_PACKET_SIZE}")]
    PacketTooSmall(u16),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("flow file has no flows")]
    Empty,
    #[error("{0}")]
    Io(String),
}

impl TrafficSpec {
    pub fn validate(&self) -> Result<(), TrafficError> {
        if self.n_flows == 0 {
            return Err(TrafficError::NoFlows);
        }
        if self.packet_size < MIN_PACKET_SIZE {
            return Err(TrafficError::PacketTooSmall(self.packet_size));
        }
        Ok(())
    }
}

/// An ordered set of unique flows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowFile {
    flows: Arc<Vec<FlowKey>>,
}

impl FlowFile {
    pub fn new(flows: Vec<FlowKey>) -> Self {
        Self { flows: Arc::new(flows) }
    }

    pub fn flows(&self) -> &[FlowKey] {
        &self.flows
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::with_capacity(FLOW_FILE_HEADER.len() + 1 + self.flows.len() * 40);
        out.push_str(FLOW_FILE_HEADER);
        out.push('\n');
        for f in self.flows.iter() {
            out.push_str(&f.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, TrafficError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == FLOW_FILE_HEADER => {}
            Some((_, h)) => {
                return Err(TrafficError::Parse {
                    line: 1,
                    msg: format!("expected header {FLOW_FILE_HEADER:?}, got {h:?}"),
                })
            }
            None => return Err(TrafficError::Empty),
        }
        let mut seen = HashSet::new();
        let mut flows = Vec::new();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| TrafficError::Parse { line: i + 1, msg };
            let f = parse_flow(line).map_err(err)?;
            if !seen.insert(f) {
                return Err(err(format!("duplicate flow {f}")));
            }
            flows.push(f);
        }
        if flows.is_empty() {
            return Err(TrafficError::Empty);
        }
        Ok(Self::new(flows))
    }

    pub fn load(path: &Path) -> Result<Self, TrafficError> {
        let text = std::fs::read_to_string(path).map_err(|e| TrafficError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrafficError> {
        std::fs::write(path, self.render()).map_err(|e| TrafficError::Io(format!("{}: {e}", path.display())))
    }
}

fn parse_flow(line: &str) -> Result<FlowKey, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    let [src, dst, sp, dp, proto] = fields[..] else {
        return Err(format!("expected 5 comma-separated fields, got {}", fields.len()));
    };
    let ip = |s: &str| s.parse::<Ipv4Addr>().map_err(|_| format!("bad address {s:?}"));
    let port = |s: &str| s.parse::<u16>().map_err(|_| format!("bad port {s:?}"));
    Ok(FlowKey {
        src_ip: ip(src)?,
        dst_ip: ip(dst)?,
        src_port: port(sp)?,
        dst_port: port(dp)?,
        proto: proto.parse().map_err(|_| format!("bad protocol {proto:?}"))?,
    })
}

/// Draws `spec.n_flows` distinct random flows; the same seed gives the same file.
pub fn generate(spec: &TrafficSpec) -> Result<FlowFile, TrafficError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seen = HashSet::with_capacity(spec.n_flows);
    let mut flows = Vec::with_capacity(spec.n_flows);
    while flows.len() < spec.n_flows {
        let f = FlowKey {
            src_ip: Ipv4Addr::from(ADDR_BASE + rng.gen_range(0..ADDR_SPAN)),
            dst_ip: Ipv4Addr::from(ADDR_BASE + rng.gen_range(0..ADDR_SPAN)),
            src_port: rng.gen_range(1..=u16::MAX),
            dst_port: rng.gen_range(1..=u16::MAX),
            proto: PROTO_TCP,
        };
        if seen.insert(f) {
            flows.push(f);
        }
    }
    Ok(FlowFile::new(flows))
}

/// Cycles through a flow file until the budget or duration is used up.
#[derive(Debug, Clone)]
pub struct Replay {
    flows: Arc<Vec<FlowKey>>,
    size: u16,
    limit: ReplayLimit,
    next: usize,
    emitted: u64,
    deadline: Option<Instant>,
}

/// Clock checks happen once per this many packets in duration mode.
const CLOCK_STRIDE: u64 = 256;

pub fn replay(file: &FlowFile, spec: &TrafficSpec) -> Result<Replay, TrafficError> {
    if file.is_empty() {
        return Err(TrafficError::Empty);
    }
    if spec.packet_size < MIN_PACKET_SIZE {
        return Err(TrafficError::PacketTooSmall(spec.packet_size));
    }
    Ok(Replay {
        flows: file.flows.clone(),
        size: spec.packet_size,
        limit: spec.limit,
        next: 0,
        emitted: 0,
        deadline: None,
    })
}

impl Iterator for Replay {
    type Item = Packet;

    fn next(&mut self) -> Option<Packet> {
        match self.limit {
            ReplayLimit::Budget(n) if self.emitted >= n => return None,
            ReplayLimit::Duration(d) => {
                let deadline = *self.deadline.get_or_insert_with(|| Instant::now() + d);
                if self.emitted.is_multiple_of(CLOCK_STRIDE) && Instant::now() >= deadline {
                    self.limit = ReplayLimit::Budget(self.emitted);
                    return None;
                }
            }
            ReplayLimit::Budget(_) => {}
        }
        let p = Packet::new(self.flows[self.next], self.size);
        self.next = (self.next + 1) % self.flows.len();
        self.emitted += 1;
        Some(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn spec(n: usize, seed: u64, budget: u64) -> TrafficSpec {
        TrafficSpec { n_flows: n, seed, limit: ReplayLimit::Budget(budget), ..TrafficSpec::default() }
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate(&spec(1000, 5, 0)).unwrap();
        assert_eq!(a.render(), generate(&spec(1000, 5, 0)).unwrap().render());
        assert_ne!(a.render(), generate(&spec(1000, 6, 0)).unwrap().render());
    }

    #[test]
    fn fifty_thousand_unique_flows_in_test_range() {
        let f = generate(&spec(50_000, 1, 0)).unwrap();
        assert_eq!(f.len(), 50_000);
        assert_eq!(f.flows().iter().collect::<HashSet<_>>().len(), 50_000);
        let range = |ip: Ipv4Addr| (ADDR_BASE..ADDR_BASE + ADDR_SPAN).contains(&u32::from(ip));
        assert!(f.flows().iter().all(|f| range(f.src_ip) && range(f.dst_ip) && f.proto == 6));
        assert_eq!(f.render().lines().count(), 50_001);
    }

    #[test]
    fn render_parse_identity() {
        let f = generate(&spec(500, 9, 0)).unwrap();
        assert_eq!(FlowFile::parse(&f.render()).unwrap(), f);
    }

    #[test]
    fn parse_errors() {
        assert_eq!(FlowFile::parse(""), Err(TrafficError::Empty));
        assert_eq!(FlowFile::parse("flexstate-flows v1\n"), Err(TrafficError::Empty));
        assert!(matches!(FlowFile::parse("nope\n"), Err(TrafficError::Parse { line: 1, .. })));
        let bad = "flexstate-flows v1\n1.2.3.4,5.6.7.8,1,2\n";
        assert!(matches!(FlowFile::parse(bad), Err(TrafficError::Parse { line: 2, .. })));
        let dup = "flexstate-flows v1\n1.2.3.4,5.6.7.8,1,2,6\n1.2.3.4,5.6.7.8,1,2,6\n";
        assert!(matches!(FlowFile::parse(dup), Err(TrafficError::Parse { line: 3, .. })));
    }

    #[test]
    fn budget_replays_each_flow_equally() {
        let s = spec(50_000, 3, 100_000);
        let f = generate(&s).unwrap();
        let mut counts: HashMap<FlowKey, u32> = HashMap::new();
        for p in replay(&f, &s).unwrap() {
            assert_eq!(p.size, 64);
            *counts.entry(p.flow()).or_default() += 1;
        }
        assert_eq!(counts.len(), 50_000);
        assert!(counts.values().all(|&c| c == 2));
    }

    #[test]
    fn duration_replay_stops() {
        let mut s = spec(10, 3, 0);
        s.limit = ReplayLimit::Duration(Duration::from_millis(20));
        let f = generate(&s).unwrap();
        let t = Instant::now();
        let n = replay(&f, &s).unwrap().count();
        assert!(n > 0);
        assert!(t.elapsed() < Duration::from_secs(2));
    }

    #[test]
    fn replay_of_empty_file_fails() {
        assert_eq!(replay(&FlowFile::new(Vec::new()), &TrafficSpec::default()).unwrap_err(), TrafficError::Empty);
    }

    #[test]
    fn spec_validation() {
        assert_eq!(generate(&spec(0, 1, 1)).unwrap_err(), TrafficError::NoFlows);
        let mut s = spec(1, 1, 1);
        s.packet_size = 40;
        assert_eq!(generate(&s).unwrap_err(), TrafficError::PacketTooSmall(40));
    }
}
