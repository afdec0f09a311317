//! Keyspace/table layout.
//!
//! The `nf@instance@core` part of a key names a keyspace, the structure type
//! names a table and the structure id is the partition key. Counters and blobs
//! are one row (`key`, `value`); maps, countermaps, sets and lists expand into
//! one row per entry (`key1` = structure id, `key2` = entry key, `value`).
//! List rows use the big-endian append index as `key2`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::Bound;
use std::sync::Arc;

use parking_lot::Mutex;

use crate::api::StructureType;
use crate::key::StoreKey;

use super::{
    next_session_id, Ack, Driver, DriverError, Mutation, MutationBatch, SeqTable, Session, SessionInfo, Snapshot,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Cell {
    Int(i64),
    Blob(Vec<u8>),
}

/// `keyspace.table`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableRef {
    pub keyspace: String,
    pub table: StructureType,
}

impl TableRef {
    pub fn of(key: &StoreKey) -> Self {
        Self { keyspace: key.partition(), table: key.structure_type() }
    }
}

impl fmt::Display for TableRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.keyspace, self.table.token())
    }
}

/// One statement against the table store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Statement {
    /// `INSERT INTO t (key, value)` / `(key1, key2, value)`; upsert.
    Insert {
        table: TableRef,
        key1: Vec<u8>,
        key2: Option<Vec<u8>>,
        value: Cell,
    },
    /// `UPDATE t SET value = value + n WHERE ...`; a missing row counts as 0.
    Add {
        table: TableRef,
        key1: Vec<u8>,
        key2: Option<Vec<u8>>,
        delta: i64,
    },
    /// Inserts a list row after the current last one.
    Append {
        table: TableRef,
        key1: Vec<u8>,
        value: Vec<u8>,
    },
    DeleteRow {
        table: TableRef,
        key1: Vec<u8>,
        key2: Vec<u8>,
    },
    DeletePartition {
        table: TableRef,
        key1: Vec<u8>,
    },
    Select {
        table: TableRef,
        key1: Vec<u8>,
    },
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn single_row(t: StructureType) -> bool {
    matches!(t, StructureType::Counter | StructureType::NameValue)
}

impl fmt::Display for Statement {
    /// CQL-style rendering, for logs and tests.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statement::Insert { table, key1, key2: None, value } => {
                write!(f, "INSERT INTO {table} (key, value) VALUES ({}, {})", text(key1), cell_text(value))
            }
            Statement::Insert { table, key1, key2: Some(k2), value } => write!(
                f,
                "INSERT INTO {table} (key1, key2, value) VALUES ({}, {}, {})",
                text(key1),
                text(k2),
                cell_text(value)
            ),
            Statement::Add { table, key1, key2: None, delta } => {
                write!(f, "UPDATE {table} SET value = value + {delta} WHERE key={}", text(key1))
            }
            Statement::Add { table, key1, key2: Some(k2), delta } => {
                write!(f, "UPDATE {table} SET value = value + {delta} WHERE key1={} AND key2={}", text(key1), text(k2))
            }
            Statement::Append { table, key1, value } => {
                write!(f, "INSERT INTO {table} (key1, key2, value) VALUES ({}, <next>, {})", text(key1), text(value))
            }
            Statement::DeleteRow { table, key1, key2 } => {
                write!(f, "DELETE FROM {table} WHERE key1={} AND key2={}", text(key1), text(key2))
            }
            Statement::DeletePartition { table, key1 } => {
                let col = if single_row(table.table) { "key" } else { "key1" };
                write!(f, "DELETE FROM {table} WHERE {col}={}", text(key1))
            }
            Statement::Select { table, key1 } => {
                if single_row(table.table) {
                    write!(f, "SELECT value FROM {table} WHERE key={}", text(key1))
                } else {
                    write!(f, "SELECT key2, value FROM {table} WHERE key1={}", text(key1))
                }
            }
        }
    }
}

fn cell_text(c: &Cell) -> String {
    match c {
        Cell::Int(n) => n.to_string(),
        Cell::Blob(b) => text(b),
    }
}

/// Statements implementing one mutation.
pub fn translate(key: &StoreKey, m: &Mutation) -> Vec<Statement> {
    let table = TableRef::of(key);
    let key1 = key.structure_id().as_str().as_bytes().to_vec();
    let one = |s| vec![s];
    match m {
        Mutation::SetBlob(v) => one(Statement::Insert { table, key1, key2: None, value: Cell::Blob(v.clone()) }),
        Mutation::Delete | Mutation::ListClear => one(Statement::DeletePartition { table, key1 }),
        Mutation::Incr(n) => one(Statement::Add { table, key1, key2: None, delta: *n }),
        Mutation::MapSet(k, v) => {
            one(Statement::Insert { table, key1, key2: Some(k.clone()), value: Cell::Blob(v.clone()) })
        }
        Mutation::MapDel(k) | Mutation::SetDel(k) => one(Statement::DeleteRow { table, key1, key2: k.clone() }),
        Mutation::MapIncr(k, n) => one(Statement::Add { table, key1, key2: Some(k.clone()), delta: *n }),
        Mutation::ListAppend(v) => one(Statement::Append { table, key1, value: v.clone() }),
        Mutation::SetAdd(v) => {
            one(Statement::Insert { table, key1, key2: Some(v.clone()), value: Cell::Blob(Vec::new()) })
        }
    }
}

pub fn select_for(key: &StoreKey) -> Statement {
    Statement::Select { table: TableRef::of(key), key1: key.structure_id().as_str().as_bytes().to_vec() }
}

type RowKey = (Vec<u8>, Vec<u8>);

/// Rows of one table ordered by (key1, key2). Single-row structures use an
/// empty `key2`.
#[derive(Debug, Default)]
struct Table {
    rows: BTreeMap<RowKey, Cell>,
}

impl Table {
    fn partition<'a>(&'a self, key1: &'a [u8]) -> impl Iterator<Item = (&'a RowKey, &'a Cell)> + 'a {
        let start = (key1.to_vec(), Vec::new());
        self.rows
            .range((Bound::Included(start), Bound::Unbounded))
            .take_while(move |((k1, _), _)| k1.as_slice() == key1)
    }

    fn partition_keys(&self) -> Vec<Vec<u8>> {
        let mut keys: Vec<Vec<u8>> = self.rows.keys().map(|(k1, _)| k1.clone()).collect();
        keys.dedup();
        keys
    }
}

/// In-memory keyspace → table → rows store.
#[derive(Debug, Default)]
pub struct TableEngine {
    keyspaces: HashMap<String, HashMap<StructureType, Table>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rows {
    Done,
    Selected(Vec<(Vec<u8>, Cell)>),
}

impl TableEngine {
    pub fn new() -> Self {
        Self::default()
    }

    fn table_mut(&mut self, t: &TableRef) -> &mut Table {
        self.keyspaces.entry(t.keyspace.clone()).or_default().entry(t.table).or_default()
    }

    fn table(&self, t: &TableRef) -> Option<&Table> {
        self.keyspaces.get(&t.keyspace)?.get(&t.table)
    }

    pub fn execute(&mut self, st: &Statement) -> Result<Rows, DriverError> {
        match st {
            Statement::Insert { table, key1, key2, value } => {
                let k2 = key2.clone().unwrap_or_default();
                self.table_mut(table).rows.insert((key1.clone(), k2), value.clone());
            }
            Statement::Add { table, key1, key2, delta } => {
                let k2 = key2.clone().unwrap_or_default();
                let row = self.table_mut(table).rows.entry((key1.clone(), k2)).or_insert(Cell::Int(0));
                let Cell::Int(v) = row else {
                    return Err(DriverError::Rejected(format!("{st}: value is not a counter")));
                };
                *v = v.checked_add(*delta).ok_or_else(|| DriverError::Rejected(format!("{st}: counter overflow")))?;
            }
            Statement::Append { table, key1, value } => {
                let t = self.table_mut(table);
                let next = t.partition(key1).last().map(|((_, k2), _)| index_of(k2) + 1).unwrap_or(0);
                t.rows.insert((key1.clone(), next.to_be_bytes().to_vec()), Cell::Blob(value.clone()));
            }
            Statement::DeleteRow { table, key1, key2 } => {
                self.table_mut(table).rows.remove(&(key1.clone(), key2.clone()));
            }
            Statement::DeletePartition { table, key1 } => {
                let t = self.table_mut(table);
                let doomed: Vec<RowKey> = t.partition(key1).map(|(k, _)| k.clone()).collect();
                for k in doomed {
                    t.rows.remove(&k);
                }
            }
            Statement::Select { table, key1 } => {
                let rows = self
                    .table(table)
                    .map(|t| t.partition(key1).map(|((_, k2), c)| (k2.clone(), c.clone())).collect())
                    .unwrap_or_default();
                return Ok(Rows::Selected(rows));
            }
        }
        Ok(Rows::Done)
    }

    fn fetch(&self, key: &StoreKey) -> Result<Option<Snapshot>, DriverError> {
        let rows = match self.table(&TableRef::of(key)) {
            Some(t) => t
                .partition(key.structure_id().as_str().as_bytes())
                .map(|((_, k2), c)| (k2.clone(), c.clone()))
                .collect(),
            None => Vec::new(),
        };
        rows_to_snapshot(key.structure_type(), rows)
    }
}

fn index_of(k2: &[u8]) -> u64 {
    let mut b = [0u8; 8];
    b.copy_from_slice(k2);
    u64::from_be_bytes(b)
}

fn wrong_cell(ty: StructureType) -> DriverError {
    DriverError::Protocol(format!("unexpected cell type in {ty} table"))
}

/// Reassembles a structure from its rows, ordered by `key2`.
pub fn rows_to_snapshot(ty: StructureType, rows: Vec<(Vec<u8>, Cell)>) -> Result<Option<Snapshot>, DriverError> {
    if rows.is_empty() {
        return Ok(None);
    }
    let snap = match ty {
        StructureType::Counter => match rows.into_iter().next() {
            Some((_, Cell::Int(v))) => Snapshot::Counter(v),
            _ => return Err(wrong_cell(ty)),
        },
        StructureType::NameValue => match rows.into_iter().next() {
            Some((_, Cell::Blob(b))) => Snapshot::Blob(b),
            _ => return Err(wrong_cell(ty)),
        },
        StructureType::List => Snapshot::List(
            rows.into_iter()
                .map(|(_, c)| match c {
                    Cell::Blob(b) => Ok(b),
                    Cell::Int(_) => Err(wrong_cell(ty)),
                })
                .collect::<Result<_, _>>()?,
        ),
        StructureType::Set => Snapshot::Set(rows.into_iter().map(|(k, _)| k).collect()),
        StructureType::Map => Snapshot::Map(
            rows.into_iter()
                .map(|(k, c)| match c {
                    Cell::Blob(b) => Ok((k, b)),
                    Cell::Int(_) => Err(wrong_cell(ty)),
                })
                .collect::<Result<_, _>>()?,
        ),
        StructureType::CounterMap => Snapshot::CounterMap(
            rows.into_iter()
                .map(|(k, c)| match c {
                    Cell::Int(v) => Ok((k, v)),
                    Cell::Blob(_) => Err(wrong_cell(ty)),
                })
                .collect::<Result<_, _>>()?,
        ),
    };
    Ok(snap.normalize())
}

#[derive(Debug, Default)]
struct Shared {
    engine: Mutex<TableEngine>,
    applied: Mutex<SeqTable>,
}

/// In-process table-organized store.
#[derive(Debug, Default, Clone)]
pub struct TableStoreDriver {
    shared: Arc<Shared>,
}

impl TableStoreDriver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn execute(&self, st: &Statement) -> Result<Rows, DriverError> {
        self.shared.engine.lock().execute(st)
    }

    /// Keyspace names currently holding at least one table.
    pub fn keyspaces(&self) -> Vec<String> {
        let mut ks: Vec<String> = self.shared.engine.lock().keyspaces.keys().cloned().collect();
        ks.sort();
        ks
    }
}

impl Driver for TableStoreDriver {
    fn label(&self) -> &str {
        "tablestore"
    }

    fn open_session(&self) -> Result<Box<dyn Session>, DriverError> {
        Ok(Box::new(TableSession {
            info: SessionInfo {
                driver_label: "tablestore".into(),
                endpoint: "local".into(),
                session_id: next_session_id(),
            },
            shared: self.shared.clone(),
        }))
    }
}

struct TableSession {
    info: SessionInfo,
    shared: Arc<Shared>,
}

impl Session for TableSession {
    fn info(&self) -> &SessionInfo {
        &self.info
    }

    fn apply(&mut self, batch: &MutationBatch) -> Result<Ack, DriverError> {
        if batch.is_empty() {
            return Ok(Ack { seq: batch.seq, mutations: 0, fresh: true });
        }
        let mut engine = self.shared.engine.lock();
        if !self.shared.applied.lock().admit(self.info.session_id, batch.seq) {
            return Ok(Ack { seq: batch.seq, mutations: batch.len(), fresh: false });
        }
        for (key, m) in &batch.ops {
            for st in translate(key, m) {
                engine.execute(&st)?;
            }
        }
        Ok(Ack { seq: batch.seq, mutations: batch.len(), fresh: true })
    }

    fn fetch(&mut self, key: &StoreKey) -> Result<Option<Snapshot>, DriverError> {
        self.shared.engine.lock().fetch(key)
    }

    fn scan_prefix(&mut self, nf_id: &str, instance_id: &str) -> Result<Vec<(StoreKey, Snapshot)>, DriverError> {
        let engine = self.shared.engine.lock();
        let prefix = StoreKey::instance_prefix(nf_id, instance_id);
        let mut out = Vec::new();
        for (ks, tables) in &engine.keyspaces {
            let Some(core) = ks.strip_prefix(&prefix) else { continue };
            let Ok(core_id) = core.parse::<u32>() else { continue };
            if core_id.to_string() != core {
                continue;
            }
            for (ty, table) in tables {
                for id in table.partition_keys() {
                    let Ok(id) = std::str::from_utf8(&id) else { continue };
                    let Ok(key) = crate::key::build_key(nf_id, instance_id, core_id, *ty, id) else {
                        continue;
                    };
                    if let Some(snap) = engine.fetch(&key)? {
                        out.push((key, snap));
                    }
                }
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::key::build_key;

    fn key(ty: StructureType, id: &str) -> StoreKey {
        build_key("nf1", "ins1", 1, ty, id).unwrap()
    }

    #[test]
    fn counter_add_renders_as_update() {
        let st = translate(&key(StructureType::Counter, "counter_id"), &Mutation::Incr(5));
        assert_eq!(st.len(), 1);
        assert_eq!(st[0].to_string(), "UPDATE nf1@ins1@1.Counter SET value = value + 5 WHERE key=counter_id");
    }

    #[test]
    fn map_insert_renders_as_insert() {
        let st = translate(&key(StructureType::Map, "map_id"), &Mutation::MapSet(b"k".to_vec(), b"n".to_vec()));
        assert_eq!(st[0].to_string(), "INSERT INTO nf1@ins1@1.Map (key1, key2, value) VALUES (map_id, k, n)");
    }

    #[test]
    fn countermap_add_to_renders_as_update() {
        let st = translate(&key(StructureType::CounterMap, "cmap_id"), &Mutation::MapIncr(b"k".to_vec(), 2));
        assert_eq!(
            st[0].to_string(),
            "UPDATE nf1@ins1@1.Countermap SET value = value + 2 WHERE key1=cmap_id AND key2=k"
        );
    }

    #[test]
    fn counter_fetch_is_a_select() {
        assert_eq!(
            select_for(&key(StructureType::Counter, "abc")).to_string(),
            "SELECT value FROM nf1@ins1@1.Counter WHERE key=abc"
        );
    }

    #[test]
    fn layout_is_keyspace_table_rows() {
        let d = TableStoreDriver::new();
        let mut s = d.open_session().unwrap();
        let mut b = MutationBatch::new(1);
        b.push(key(StructureType::Counter, "counter_id"), Mutation::Incr(5));
        b.push(key(StructureType::CounterMap, "cmap_id"), Mutation::MapIncr(b"a".to_vec(), 1));
        b.push(key(StructureType::CounterMap, "cmap_id"), Mutation::MapIncr(b"b".to_vec(), 2));
        s.apply(&b).unwrap();
        assert_eq!(d.keyspaces(), ["nf1@ins1@1"]);

        let counter = TableRef { keyspace: "nf1@ins1@1".into(), table: StructureType::Counter };
        assert_eq!(
            d.execute(&Statement::Select { table: counter, key1: b"counter_id".to_vec() }).unwrap(),
            Rows::Selected(vec![(vec![], Cell::Int(5))])
        );
        let cmap = TableRef { keyspace: "nf1@ins1@1".into(), table: StructureType::CounterMap };
        assert_eq!(
            d.execute(&Statement::Select { table: cmap, key1: b"cmap_id".to_vec() }).unwrap(),
            Rows::Selected(vec![(b"a".to_vec(), Cell::Int(1)), (b"b".to_vec(), Cell::Int(2))])
        );
    }

    #[test]
    fn list_rows_keep_append_order() {
        let d = TableStoreDriver::new();
        let mut s = d.open_session().unwrap();
        let k = key(StructureType::List, "l");
        let mut b = MutationBatch::new(0);
        for v in ["c", "a", "b"] {
            b.push(k.clone(), Mutation::ListAppend(v.as_bytes().to_vec()));
        }
        s.apply(&b).unwrap();
        assert_eq!(s.fetch(&k).unwrap(), Some(Snapshot::List(vec![b"c".to_vec(), b"a".to_vec(), b"b".to_vec()])));
    }

    #[test]
    fn partitions_do_not_bleed_into_each_other() {
        let d = TableStoreDriver::new();
        let mut s = d.open_session().unwrap();
        let mut b = MutationBatch::new(0);
        b.push(key(StructureType::Set, "a"), Mutation::SetAdd(b"x".to_vec()));
        b.push(key(StructureType::Set, "ab"), Mutation::SetAdd(b"y".to_vec()));
        b.push(key(StructureType::Set, "a"), Mutation::Delete);
        s.apply(&b).unwrap();
        assert_eq!(s.fetch(&key(StructureType::Set, "a")).unwrap(), None);
        assert!(s.fetch(&key(StructureType::Set, "ab")).unwrap().is_some());
    }

    #[test]
    fn replayed_sequence_is_ignored() {
        let d = TableStoreDriver::new();
        let mut s = d.open_session().unwrap();
        let mut b = MutationBatch::new(1);
        b.push(key(StructureType::Counter, "c"), Mutation::Incr(4));
        assert!(s.apply(&b).unwrap().fresh);
        assert!(!s.apply(&b).unwrap().fresh);
        assert_eq!(s.fetch(&key(StructureType::Counter, "c")).unwrap(), Some(Snapshot::Counter(4)));
    }
}
