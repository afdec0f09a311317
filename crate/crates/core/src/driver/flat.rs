//! Flat key-space layout.
//!
//! The canonical key string is the store key, used as-is. Counters and blobs
//! are string values, maps and countermaps are hashes, sets are sets and lists
//! are lists. [`FlatKeyspace`] executes the command subset both for the
//! in-process driver and for the bundled RESP server.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use parking_lot::Mutex;

use crate::api::StructureType;
use crate::key::StoreKey;

use super::resp::Reply;
use super::{
    next_session_id, Ack, Driver, DriverError, Mutation, MutationBatch, SeqTable, Session, SessionInfo, Snapshot,
};

/// A command as a list of byte-string arguments, name first.
pub type Command = Vec<Vec<u8>>;

fn cmd(parts: &[&[u8]]) -> Command {
    parts.iter().map(|p| p.to_vec()).collect()
}

/// Store commands implementing one mutation.
pub fn mutation_commands(key: &StoreKey, m: &Mutation) -> Vec<Command> {
    let k = key.to_string().into_bytes();
    let c = match m {
        Mutation::SetBlob(v) => cmd(&[b"SET", &k, v]),
        Mutation::Delete | Mutation::ListClear => cmd(&[b"DEL", &k]),
        Mutation::Incr(n) => cmd(&[b"INCRBY", &k, n.to_string().as_bytes()]),
        Mutation::MapSet(f, v) => cmd(&[b"HSET", &k, f, v]),
        Mutation::MapDel(f) => cmd(&[b"HDEL", &k, f]),
        Mutation::MapIncr(f, n) => cmd(&[b"HINCRBY", &k, f, n.to_string().as_bytes()]),
        Mutation::ListAppend(v) => cmd(&[b"RPUSH", &k, v]),
        Mutation::SetAdd(v) => cmd(&[b"SADD", &k, v]),
        Mutation::SetDel(v) => cmd(&[b"SREM", &k, v]),
    };
    vec![c]
}

/// Command reading back a whole structure.
pub fn fetch_command(key: &StoreKey) -> Command {
    let k = key.to_string().into_bytes();
    match key.structure_type() {
        StructureType::NameValue | StructureType::Counter => cmd(&[b"GET", &k]),
        StructureType::List => cmd(&[b"LRANGE", &k, b"0", b"-1"]),
        StructureType::Set => cmd(&[b"SMEMBERS", &k]),
        StructureType::Map | StructureType::CounterMap => cmd(&[b"HGETALL", &k]),
    }
}

fn protocol(msg: impl Into<String>) -> DriverError {
    DriverError::Protocol(msg.into())
}

fn reply_int(b: &[u8]) -> Result<i64, DriverError> {
    parse_strict_int(b).ok_or_else(|| protocol(format!("not an integer: {:?}", String::from_utf8_lossy(b))))
}

fn bulk_items(items: Vec<Reply>) -> Result<Vec<Vec<u8>>, DriverError> {
    items
        .into_iter()
        .map(|r| match r {
            Reply::Bulk(Some(b)) => Ok(b),
            other => Err(protocol(format!("expected bulk string, got {other:?}"))),
        })
        .collect()
}

/// Interprets the reply to [`fetch_command`].
pub fn decode_fetch(ty: StructureType, reply: Reply) -> Result<Option<Snapshot>, DriverError> {
    let snap = match (ty, reply) {
        (_, Reply::Error(e)) => return Err(DriverError::Rejected(e)),
        (StructureType::NameValue | StructureType::Counter, Reply::Bulk(None)) => return Ok(None),
        (StructureType::NameValue, Reply::Bulk(Some(b))) => Snapshot::Blob(b),
        (StructureType::Counter, Reply::Bulk(Some(b))) => Snapshot::Counter(reply_int(&b)?),
        (_, Reply::Array(None)) => return Ok(None),
        (StructureType::List, Reply::Array(Some(items))) => Snapshot::List(bulk_items(items)?),
        (StructureType::Set, Reply::Array(Some(items))) => Snapshot::Set(bulk_items(items)?.into_iter().collect()),
        (StructureType::Map | StructureType::CounterMap, Reply::Array(Some(items))) => {
            let flat = bulk_items(items)?;
            if flat.len() % 2 != 0 {
                return Err(protocol("odd HGETALL reply"));
            }
            let mut it = flat.into_iter();
            if ty == StructureType::Map {
                let mut m = std::collections::BTreeMap::new();
                while let (Some(k), Some(v)) = (it.next(), it.next()) {
                    m.insert(k, v);
                }
                Snapshot::Map(m)
            } else {
                let mut m = std::collections::BTreeMap::new();
                while let (Some(k), Some(v)) = (it.next(), it.next()) {
                    m.insert(k, reply_int(&v)?);
                }
                Snapshot::CounterMap(m)
            }
        }
        (ty, other) => return Err(protocol(format!("unexpected reply for {ty}: {other:?}"))),
    };
    Ok(snap.normalize())
}

/// `KEYS` pattern matching exactly the keys of one NF instance.
pub fn prefix_pattern(nf_id: &str, instance_id: &str) -> Vec<u8> {
    let mut p = Vec::new();
    for b in StoreKey::instance_prefix(nf_id, instance_id).bytes() {
        if matches!(b, b'*' | b'?' | b'[' | b']' | b'\\') {
            p.push(b'\\');
        }
        p.push(b);
    }
    p.push(b'*');
    p
}

/// Parses a `KEYS` reply, keeping well-formed keys of the given instance.
pub fn parse_key_list(reply: Reply, nf_id: &str, instance_id: &str) -> Result<Vec<StoreKey>, DriverError> {
    let Reply::Array(Some(items)) = reply else {
        return Err(protocol(format!("unexpected KEYS reply {reply:?}")));
    };
    let mut keys: Vec<StoreKey> = bulk_items(items)?
        .into_iter()
        .filter_map(|raw| String::from_utf8(raw).ok()?.parse::<StoreKey>().ok())
        .filter(|k| k.nf_id() == nf_id && k.instance_id() == instance_id)
        .collect();
    keys.sort();
    Ok(keys)
}

/// Integer syntax accepted for stored counters: optional `-`, no leading zeros.
pub(crate) fn parse_strict_int(b: &[u8]) -> Option<i64> {
    let digits = b.strip_prefix(b"-").unwrap_or(b);
    if digits.is_empty()
        || !digits.iter().all(u8::is_ascii_digit)
        || (digits.len() > 1 && digits[0] == b'0')
        || b == b"-0"
    {
        return None;
    }
    std::str::from_utf8(b).ok()?.parse().ok()
}

/// Glob match with `*`, `?` and backslash escapes.
pub(crate) fn glob_match(pattern: &[u8], s: &[u8]) -> bool {
    match pattern.split_first() {
        None => s.is_empty(),
        Some((b'*', rest)) => (0..=s.len()).any(|i| glob_match(rest, &s[i..])),
        Some((b'?', rest)) => !s.is_empty() && glob_match(rest, &s[1..]),
        Some((b'\\', rest)) if !rest.is_empty() => s.first() == Some(&rest[0]) && glob_match(&rest[1..], &s[1..]),
        Some((c, rest)) => s.first() == Some(c) && glob_match(rest, &s[1..]),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Value {
    Str(Vec<u8>),
    Hash(HashMap<Vec<u8>, Vec<u8>>),
    Set(HashSet<Vec<u8>>),
    List(Vec<Vec<u8>>),
}

const WRONGTYPE: &str = "WRONGTYPE Operation against a key holding the wrong kind of value";
const NOT_INT: &str = "ERR value is not an integer or out of range";
const HASH_NOT_INT: &str = "ERR hash value is not an integer";
const OVERFLOW: &str = "ERR increment or decrement would overflow";

/// In-memory flat key space executing a subset of the Redis command set.
#[derive(Debug, Default)]
pub struct FlatKeyspace {
    map: HashMap<Vec<u8>, Value>,
}

macro_rules! arity {
    ($args:expr, $name:expr, $ok:expr) => {
        if !$ok {
            return Reply::err(format!("ERR wrong number of arguments for '{}' command", $name));
        }
    };
}

impl FlatKeyspace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn execute(&mut self, args: &[Vec<u8>]) -> Reply {
        let Some((name, rest)) = args.split_first() else {
            return Reply::err("ERR empty command");
        };
        let upper = name.to_ascii_uppercase();
        let n = rest.len();
        match upper.as_slice() {
            b"PING" => {
                arity!(args, "ping", n <= 1);
                match rest.first() {
                    None => Reply::Simple("PONG".into()),
                    Some(msg) => Reply::bulk(msg.clone()),
                }
            }
            b"FLUSHALL" => {
                self.map.clear();
                Reply::ok()
            }
            b"SET" => {
                arity!(args, "set", n == 2);
                self.map.insert(rest[0].clone(), Value::Str(rest[1].clone()));
                Reply::ok()
            }
            b"GET" => {
                arity!(args, "get", n == 1);
                match self.map.get(&rest[0]) {
                    None => Reply::nil(),
                    Some(Value::Str(v)) => Reply::bulk(v.clone()),
                    Some(_) => Reply::err(WRONGTYPE),
                }
            }
            b"DEL" => {
                arity!(args, "del", n >= 1);
                Reply::Integer(rest.iter().filter(|k| self.map.remove(*k).is_some()).count() as i64)
            }
            b"EXISTS" => {
                arity!(args, "exists", n >= 1);
                Reply::Integer(rest.iter().filter(|k| self.map.contains_key(*k)).count() as i64)
            }
            b"INCRBY" => {
                arity!(args, "incrby", n == 2);
                let Some(by) = parse_strict_int(&rest[1]) else {
                    return Reply::err(NOT_INT);
                };
                let cur = match self.map.get(&rest[0]) {
                    None => 0,
                    Some(Value::Str(v)) => match parse_strict_int(v) {
                        Some(c) => c,
                        None => return Reply::err(NOT_INT),
                    },
                    Some(_) => return Reply::err(WRONGTYPE),
                };
                let Some(next) = cur.checked_add(by) else {
                    return Reply::err(OVERFLOW);
                };
                self.map.insert(rest[0].clone(), Value::Str(next.to_string().into_bytes()));
                Reply::Integer(next)
            }
            b"HSET" => {
                arity!(args, "hset", n >= 3 && n % 2 == 1);
                let h = match self.hash_mut(&rest[0]) {
                    Ok(h) => h,
                    Err(e) => return e,
                };
                let added = rest[1..].chunks(2).filter(|fv| h.insert(fv[0].clone(), fv[1].clone()).is_none()).count();
                Reply::Integer(added as i64)
            }
            b"HGET" => {
                arity!(args, "hget", n == 2);
                match self.map.get(&rest[0]) {
                    None => Reply::nil(),
                    Some(Value::Hash(h)) => Reply::Bulk(h.get(&rest[1]).cloned()),
                    Some(_) => Reply::err(WRONGTYPE),
                }
            }
            b"HDEL" => {
                arity!(args, "hdel", n >= 2);
                let removed = match self.map.get_mut(&rest[0]) {
                    None => 0,
                    Some(Value::Hash(h)) => rest[1..].iter().filter(|f| h.remove(*f).is_some()).count(),
                    Some(_) => return Reply::err(WRONGTYPE),
                };
                self.drop_if_empty(&rest[0]);
                Reply::Integer(removed as i64)
            }
            b"HINCRBY" => {
                arity!(args, "hincrby", n == 3);
                let Some(by) = parse_strict_int(&rest[2]) else {
                    return Reply::err(NOT_INT);
                };
                let h = match self.hash_mut(&rest[0]) {
                    Ok(h) => h,
                    Err(e) => return e,
                };
                let cur = match h.get(&rest[1]) {
                    None => 0,
                    Some(v) => match parse_strict_int(v) {
                        Some(c) => c,
                        None => return Reply::err(HASH_NOT_INT),
                    },
                };
                let Some(next) = cur.checked_add(by) else {
                    self.drop_if_empty(&rest[0]);
                    return Reply::err(OVERFLOW);
                };
                h.insert(rest[1].clone(), next.to_string().into_bytes());
                Reply::Integer(next)
            }
            b"HGETALL" => {
                arity!(args, "hgetall", n == 1);
                match self.map.get(&rest[0]) {
                    None => Reply::array(vec![]),
                    Some(Value::Hash(h)) => Reply::array(
                        h.iter().flat_map(|(k, v)| [Reply::bulk(k.clone()), Reply::bulk(v.clone())]).collect(),
                    ),
                    Some(_) => Reply::err(WRONGTYPE),
                }
            }
            b"SADD" => {
                arity!(args, "sadd", n >= 2);
                let entry = self.map.entry(rest[0].clone()).or_insert_with(|| Value::Set(HashSet::new()));
                let Value::Set(s) = entry else {
                    return Reply::err(WRONGTYPE);
                };
                Reply::Integer(rest[1..].iter().filter(|m| s.insert((*m).clone())).count() as i64)
            }
            b"SREM" => {
                arity!(args, "srem", n >= 2);
                let removed = match self.map.get_mut(&rest[0]) {
                    None => 0,
                    Some(Value::Set(s)) => rest[1..].iter().filter(|m| s.remove(*m)).count(),
                    Some(_) => return Reply::err(WRONGTYPE),
                };
                self.drop_if_empty(&rest[0]);
                Reply::Integer(removed as i64)
            }
            b"SMEMBERS" => {
                arity!(args, "smembers", n == 1);
                match self.map.get(&rest[0]) {
                    None => Reply::array(vec![]),
                    Some(Value::Set(s)) => Reply::array(s.iter().map(|m| Reply::bulk(m.clone())).collect()),
                    Some(_) => Reply::err(WRONGTYPE),
                }
            }
            b"RPUSH" => {
                arity!(args, "rpush", n >= 2);
                let entry = self.map.entry(rest[0].clone()).or_insert_with(|| Value::List(Vec::new()));
                let Value::List(l) = entry else {
                    return Reply::err(WRONGTYPE);
                };
                l.extend(rest[1..].iter().cloned());
                Reply::Integer(l.len() as i64)
            }
            b"LLEN" => {
                arity!(args, "llen", n == 1);
                match self.map.get(&rest[0]) {
                    None => Reply::Integer(0),
                    Some(Value::List(l)) => Reply::Integer(l.len() as i64),
                    Some(_) => Reply::err(WRONGTYPE),
                }
            }
            b"LRANGE" => {
                arity!(args, "lrange", n == 3);
                let (Some(start), Some(stop)) = (parse_strict_int(&rest[1]), parse_strict_int(&rest[2])) else {
                    return Reply::err(NOT_INT);
                };
                match self.map.get(&rest[0]) {
                    None => Reply::array(vec![]),
                    Some(Value::List(l)) => {
                        let len = l.len() as i64;
                        let norm = |i: i64| if i < 0 { (len + i).max(0) } else { i };
                        let (start, stop) = (norm(start), norm(stop).min(len - 1));
                        if start > stop || start >= len {
                            return Reply::array(vec![]);
                        }
                        Reply::array(l[start as usize..=stop as usize].iter().map(|v| Reply::bulk(v.clone())).collect())
                    }
                    Some(_) => Reply::err(WRONGTYPE),
                }
            }
            b"KEYS" => {
                arity!(args, "keys", n == 1);
                let mut keys: Vec<&Vec<u8>> = self.map.keys().filter(|k| glob_match(&rest[0], k)).collect();
                keys.sort();
                Reply::array(keys.into_iter().map(|k| Reply::bulk(k.clone())).collect())
            }
            _ => Reply::err(format!("ERR unknown command '{}'", String::from_utf8_lossy(name))),
        }
    }

    fn hash_mut(&mut self, key: &[u8]) -> Result<&mut HashMap<Vec<u8>, Vec<u8>>, Reply> {
        let entry = self.map.entry(key.to_vec()).or_insert_with(|| Value::Hash(HashMap::new()));
        match entry {
            Value::Hash(h) => Ok(h),
            _ => Err(Reply::err(WRONGTYPE)),
        }
    }

    /// Aggregates never stay behind empty.
    fn drop_if_empty(&mut self, key: &[u8]) {
        let empty = match self.map.get(key) {
            Some(Value::Hash(h)) => h.is_empty(),
            Some(Value::Set(s)) => s.is_empty(),
            Some(Value::List(l)) => l.is_empty(),
            _ => false,
        };
        if empty {
            self.map.remove(key);
        }
    }
}

#[derive(Debug, Default)]
struct Shared {
    keyspace: Mutex<FlatKeyspace>,
    applied: Mutex<SeqTable>,
}

/// In-process flat key-space store.
#[derive(Debug, Default, Clone)]
pub struct FlatKvsDriver {
    shared: Arc<Shared>,
}

impl FlatKvsDriver {
    pub fn new() -> Self {
        Self::default()
    }

    /// Runs a raw command against the store.
    pub fn execute(&self, args: &[Vec<u8>]) -> Reply {
        self.shared.keyspace.lock().execute(args)
    }
}

impl Driver for FlatKvsDriver {
    fn label(&self) -> &str {
        "flatkvs"
    }

    fn open_session(&self) -> Result<Box<dyn Session>, DriverError> {
        Ok(Box::new(FlatSession {
            info: SessionInfo {
                driver_label: "flatkvs".into(),
                endpoint: "local".into(),
                session_id: next_session_id(),
            },
            shared: self.shared.clone(),
        }))
    }
}

struct FlatSession {
    info: SessionInfo,
    shared: Arc<Shared>,
}

impl Session for FlatSession {
    fn info(&self) -> &SessionInfo {
        &self.info
    }

    fn apply(&mut self, batch: &MutationBatch) -> Result<Ack, DriverError> {
        if batch.is_empty() {
            return Ok(Ack { seq: batch.seq, mutations: 0, fresh: true });
        }
        let mut ks = self.shared.keyspace.lock();
        if !self.shared.applied.lock().admit(self.info.session_id, batch.seq) {
            return Ok(Ack { seq: batch.seq, mutations: batch.len(), fresh: false });
        }
        for (key, m) in &batch.ops {
            for c in mutation_commands(key, m) {
                if let Reply::Error(e) = ks.execute(&c) {
                    return Err(DriverError::Rejected(e));
                }
            }
        }
        Ok(Ack { seq: batch.seq, mutations: batch.len(), fresh: true })
    }

    fn fetch(&mut self, key: &StoreKey) -> Result<Option<Snapshot>, DriverError> {
        let reply = self.shared.keyspace.lock().execute(&fetch_command(key));
        decode_fetch(key.structure_type(), reply)
    }

    fn scan_prefix(&mut self, nf_id: &str, instance_id: &str) -> Result<Vec<(StoreKey, Snapshot)>, DriverError> {
        let ks = &mut *self.shared.keyspace.lock();
        let keys =
            parse_key_list(ks.execute(&cmd(&[b"KEYS", &prefix_pattern(nf_id, instance_id)])), nf_id, instance_id)?;
        let mut out = Vec::with_capacity(keys.len());
        for key in keys {
            if let Some(snap) = decode_fetch(key.structure_type(), ks.execute(&fetch_command(&key)))? {
                out.push((key, snap));
            }
        }
        Ok(out)
    }
}
