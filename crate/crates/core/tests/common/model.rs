//! Reference store: the obvious in-memory semantics of every mutation, written
//! without reusing any driver code. Tests compare drivers and caches to it.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use flexstate::driver::{Mutation, MutationBatch, Snapshot};
use flexstate::key::StoreKey;

#[derive(Debug, Default, Clone)]
pub struct ModelStore {
    data: BTreeMap<String, Snapshot>,
}

impl ModelStore {
    pub fn apply_batch(&mut self, batch: &MutationBatch) {
        for (k, m) in &batch.ops {
            self.apply(k, m);
        }
    }

    pub fn apply(&mut self, key: &StoreKey, m: &Mutation) {
        let name = key.to_string();
        let cur = self.data.remove(&name);
        let next = match (cur, m) {
            (_, Mutation::Delete) => None,
            (_, Mutation::SetBlob(b)) => Some(Snapshot::Blob(b.clone())),
            (c, Mutation::Incr(n)) => {
                let v = match c {
                    Some(Snapshot::Counter(v)) => v,
                    _ => 0,
                };
                Some(Snapshot::Counter(v.wrapping_add(*n)))
            }
            (c, Mutation::MapSet(k, v)) => {
                let mut m = match c {
                    Some(Snapshot::Map(m)) => m,
                    _ => BTreeMap::new(),
                };
                m.insert(k.clone(), v.clone());
                Some(Snapshot::Map(m))
            }
            (Some(Snapshot::Map(mut m)), Mutation::MapDel(k)) => {
                m.remove(k);
                Some(Snapshot::Map(m))
            }
            (Some(Snapshot::CounterMap(mut m)), Mutation::MapDel(k)) => {
                m.remove(k);
                Some(Snapshot::CounterMap(m))
            }
            (c, Mutation::MapDel(_)) => c,
            (c, Mutation::MapIncr(k, n)) => {
                let mut m = match c {
                    Some(Snapshot::CounterMap(m)) => m,
                    _ => BTreeMap::new(),
                };
                *m.entry(k.clone()).or_insert(0) += n;
                Some(Snapshot::CounterMap(m))
            }
            (c, Mutation::ListAppend(v)) => {
                let mut l = match c {
                    Some(Snapshot::List(l)) => l,
                    _ => Vec::new(),
                };
                l.push(v.clone());
                Some(Snapshot::List(l))
            }
            (_, Mutation::ListClear) => None,
            (c, Mutation::SetAdd(v)) => {
                let mut s = match c {
                    Some(Snapshot::Set(s)) => s,
                    _ => BTreeSet::new(),
                };
                s.insert(v.clone());
                Some(Snapshot::Set(s))
            }
            (Some(Snapshot::Set(mut s)), Mutation::SetDel(v)) => {
                s.remove(v);
                Some(Snapshot::Set(s))
            }
            (c, Mutation::SetDel(_)) => c,
        };
        if let Some(s) = next.and_then(Snapshot::normalize) {
            self.data.insert(name, s);
        }
    }

    pub fn counter_set(&mut self, key: &StoreKey, v: Option<i64>) {
        self.data.remove(&key.to_string());
        if let Some(v) = v {
            self.data.insert(key.to_string(), Snapshot::Counter(v));
        }
    }

    pub fn fetch(&self, key: &StoreKey) -> Option<Snapshot> {
        self.data.get(&key.to_string()).cloned()
    }

    /// Every structure of one NF instance, sorted by rendered key.
    pub fn scan_prefix(&self, nf_id: &str, instance_id: &str) -> Vec<(StoreKey, Snapshot)> {
        let prefix = format!("{nf_id}@{instance_id}@");
        self.data
            .range(prefix.clone()..)
            .take_while(|(k, _)| k.starts_with(&prefix))
            .map(|(k, v)| (k.parse().expect("model keys are valid"), v.clone()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }
}
