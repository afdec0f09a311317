use std::collections::BTreeMap;

use crate::api::StructureType;
use crate::{DriverError, Session, Snapshot};

#[derive(Debug, thiserror::Error)]
pub enum CombineError {
    #[error(transparent)]
    Store(#[from] DriverError),
    #[error("sum of {0:?} overflows")]
    Overflow(String),
}

fn scan<'a>(
    session: &'a mut dyn Session,
    nf_id: &'a str,
    instance_ids: &'a [&'a str],
    ty: StructureType,
    structure_id: &'a str,
) -> Result<Vec<Snapshot>, DriverError> {
    let mut out = Vec::new();
    for ins in instance_ids {
        for (key, snap) in session.scan_prefix(nf_id, ins)? {
            if key.structure_type() == ty && key.structure_id().as_str() == structure_id {
                out.push(snap);
            }
        }
    }
    Ok(out)
}

/// Sums a counter over every core of every listed instance. Reads the store only.
pub fn combine_counters(
    session: &mut dyn Session,
    nf_id: &str,
    instance_ids: &[&str],
    structure_id: &str,
) -> Result<i64, CombineError> {
    let mut total = 0i64;
    for snap in scan(session, nf_id, instance_ids, StructureType::Counter, structure_id)? {
        if let Snapshot::Counter(v) = snap {
            total = total.checked_add(v).ok_or_else(|| CombineError::Overflow(structure_id.to_owned()))?;
        }
    }
    Ok(total)
}

/// Key-wise sum of a countermap over every core of every listed instance.
pub fn combine_countermaps(
    session: &mut dyn Session,
    nf_id: &str,
    instance_ids: &[&str],
    structure_id: &str,
) -> Result<BTreeMap<Vec<u8>, i64>, CombineError> {
    let mut total: BTreeMap<Vec<u8>, i64> = BTreeMap::new();
    for snap in scan(session, nf_id, instance_ids, StructureType::CounterMap, structure_id)? {
        if let Snapshot::CounterMap(m) = snap {
            for (k, v) in m {
                let e = total.entry(k).or_default();
                *e = e.checked_add(v).ok_or_else(|| CombineError::Overflow(structure_id.to_owned()))?;
            }
        }
    }
    Ok(total)
}
