#![allow(dead_code)]

pub mod model;

use std::sync::Arc;

use flexstate::driver::{Driver, MutationBatch, RespDriver, Session, Snapshot};
use flexstate::driver::{FlatKvsDriver, Mutation, TableStoreDriver};
use flexstate::{build_key, StoreKey, StructureType};
use rand::seq::SliceRandom;
use rand::Rng;

pub use model::ModelStore;

pub const NF: &str = "nfc";
pub const INS: &str = "ins";

/// One fresh store per driver kind.
pub fn fresh_drivers() -> Vec<Arc<dyn Driver>> {
    vec![
        Arc::new(FlatKvsDriver::new()),
        Arc::new(TableStoreDriver::new()),
        Arc::new(RespDriver::with_local_server().expect("local resp server")),
    ]
}

/// A small key universe: `ids` structures of every type on each of `cores` cores.
pub fn key_universe(cores: u32, ids: usize) -> Vec<StoreKey> {
    let mut keys = Vec::new();
    for core in 0..cores {
        for ty in StructureType::ALL {
            for i in 0..ids {
                keys.push(build_key(NF, INS, core, ty, &format!("{}{i}", ty.token())).unwrap());
            }
        }
    }
    keys
}

fn small_bytes(rng: &mut impl Rng, alphabet: u8) -> Vec<u8> {
    let len = rng.gen_range(1..=3);
    (0..len).map(|_| b'a' + rng.gen_range(0..alphabet)).collect()
}

/// A random mutation that is legal for the key's structure type.
pub fn random_mutation(rng: &mut impl Rng, key: &StoreKey) -> Mutation {
    let field = |rng: &mut _| small_bytes(rng, 4);
    let delta = |rng: &mut _| Rng::gen_range(rng, -1000i64..=1000);
    let roll = rng.gen_range(0..100);
    if roll < 4 {
        return Mutation::Delete;
    }
    match key.structure_type() {
        StructureType::NameValue => Mutation::SetBlob(small_bytes(rng, 26)),
        StructureType::Counter => Mutation::Incr(delta(rng)),
        StructureType::List => {
            if roll < 8 {
                Mutation::ListClear
            } else {
                Mutation::ListAppend(field(rng))
            }
        }
        StructureType::Set => {
            if roll < 40 {
                Mutation::SetDel(field(rng))
            } else {
                Mutation::SetAdd(field(rng))
            }
        }
        StructureType::Map => {
            if roll < 35 {
                Mutation::MapDel(field(rng))
            } else {
                Mutation::MapSet(field(rng), small_bytes(rng, 26))
            }
        }
        StructureType::CounterMap => {
            if roll < 25 {
                Mutation::MapDel(field(rng))
            } else {
                Mutation::MapIncr(field(rng), delta(rng))
            }
        }
    }
}

/// Splits `n_ops` random mutations into single-partition batches of 1..=32
/// operations, numbered from 1.
pub fn random_batches(rng: &mut impl Rng, keys: &[StoreKey], n_ops: usize) -> Vec<MutationBatch> {
    let cores: Vec<u32> = {
        let mut c: Vec<u32> = keys.iter().map(|k| k.core_id()).collect();
        c.dedup();
        c
    };
    let mut out = Vec::new();
    let mut left = n_ops;
    while left > 0 {
        let core = *cores.choose(rng).unwrap();
        let local: Vec<&StoreKey> = keys.iter().filter(|k| k.core_id() == core).collect();
        let size = rng.gen_range(1..=32).min(left);
        let mut batch = MutationBatch::new(out.len() as u64 + 1);
        for _ in 0..size {
            let key = *local.choose(rng).unwrap();
            let m = random_mutation(rng, key);
            batch.push(key.clone(), m);
        }
        left -= size;
        out.push(batch);
    }
    out
}

/// Every key's content as read back through a session.
pub fn read_all(session: &mut dyn Session, keys: &[StoreKey]) -> Vec<Option<Snapshot>> {
    keys.iter().map(|k| session.fetch(k).expect("fetch")).collect()
}

/// Applies one random sequence of `n_ops` mutations to every driver and to
/// the model, comparing all keys at checkpoints and the instance scan at the
/// end. Returns a description of the first disagreement.
pub fn conformance_run(seed: u64, n_ops: usize) -> Result<(), String> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let keys = key_universe(2, 3);
    let batches = random_batches(&mut rng, &keys, n_ops);
    let drivers = fresh_drivers();
    let mut sessions: Vec<Box<dyn Session>> = drivers.iter().map(|d| d.open_session().expect("session")).collect();
    let mut model = ModelStore::default();
    let checkpoint = (batches.len() / 8).max(1);
    for (i, batch) in batches.iter().enumerate() {
        model.apply_batch(batch);
        for (d, s) in drivers.iter().zip(sessions.iter_mut()) {
            s.apply(batch).map_err(|e| format!("seed {seed}: {} apply #{i}: {e}", d.label()))?;
        }
        if (i + 1) % checkpoint == 0 || i + 1 == batches.len() {
            let want: Vec<_> = keys.iter().map(|k| model.fetch(k)).collect();
            for (d, s) in drivers.iter().zip(sessions.iter_mut()) {
                let got = read_all(&mut **s, &keys);
                if let Some(j) = (0..keys.len()).find(|&j| got[j] != want[j]) {
                    return Err(format!(
                        "seed {seed}: {} after batch {i}: {} is {:?}, model has {:?}",
                        d.label(),
                        keys[j],
                        got[j],
                        want[j]
                    ));
                }
            }
        }
    }
    let mut want = model.scan_prefix(NF, INS);
    want.sort_by(|a, b| a.0.cmp(&b.0));
    for (d, s) in drivers.iter().zip(sessions.iter_mut()) {
        let got = s.scan_prefix(NF, INS).map_err(|e| format!("seed {seed}: {} scan: {e}", d.label()))?;
        if got != want {
            return Err(format!(
                "seed {seed}: {} scan returned {} entries, model {}",
                d.label(),
                got.len(),
                want.len()
            ));
        }
    }
    Ok(())
}
