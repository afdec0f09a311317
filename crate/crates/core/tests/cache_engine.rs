mod common;

use std::sync::Arc;
use std::time::Duration;

use common::ModelStore;
use flexstate::driver::{
    Ack, Driver, FaultMode, FaultyDriver, FlatKvsDriver, MutationBatch, RespDriver, SessionInfo, Snapshot,
};
use flexstate::{ApiError, CacheOptions, CoreCache, DriverError, FlexConfig, Session, StoreKey};
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Records every batch the store acknowledged as freshly applied.
struct Recording {
    inner: Arc<dyn Driver>,
    log: Arc<Mutex<Vec<MutationBatch>>>,
}

struct RecordingSession {
    inner: Box<dyn Session>,
    log: Arc<Mutex<Vec<MutationBatch>>>,
}

impl Driver for Recording {
    fn label(&self) -> &str {
        self.inner.label()
    }

    fn open_session(&self) -> Result<Box<dyn Session>, DriverError> {
        Ok(Box::new(RecordingSession { inner: self.inner.open_session()?, log: self.log.clone() }))
    }
}

impl Session for RecordingSession {
    fn info(&self) -> &SessionInfo {
        self.inner.info()
    }

    fn apply(&mut self, batch: &MutationBatch) -> Result<Ack, DriverError> {
        let ack = self.inner.apply(batch)?;
        if ack.fresh {
            self.log.lock().push(batch.clone());
        }
        Ok(ack)
    }

    fn fetch(&mut self, key: &StoreKey) -> Result<Option<Snapshot>, DriverError> {
        self.inner.fetch(key)
    }

    fn scan_prefix(&mut self, nf_id: &str, instance_id: &str) -> Result<Vec<(StoreKey, Snapshot)>, DriverError> {
        self.inner.scan_prefix(nf_id, instance_id)
    }
}

fn bytes(rng: &mut impl Rng) -> Vec<u8> {
    vec![b'a' + rng.gen_range(0..5)]
}

/// Waiting calls may report an unreachable store; the write still stands locally.
fn settled(r: Result<(), ApiError>) {
    match r {
        Ok(()) | Err(ApiError::StoreUnavailable(_)) => {}
        Err(e) => panic!("{e}"),
    }
}

/// Random API traffic against every structure kind, mixing waiting and
/// non-waiting calls.
fn workload(cache: &mut CoreCache, rng: &mut impl Rng, steps: usize) {
    let counter = cache.counter("c").unwrap();
    let nv = cache.name_value("nv").unwrap();
    let list = cache.list("l").unwrap();
    let set = cache.set("s").unwrap();
    let map = cache.map("m").unwrap();
    let cmap = cache.counter_map("cm").unwrap();
    for _ in 0..steps {
        let wait = rng.gen_bool(0.05);
        let k = bytes(rng);
        let n = rng.gen_range(-50..=50);
        match rng.gen_range(0..14) {
            0 if wait => settled(counter.add(cache, n).map(drop)),
            0 => counter.add_nowait(cache, n).unwrap(),
            1 => counter.set_nowait(cache, n).unwrap(),
            2 if nv.read(cache).is_some() => nv.update_nowait(cache, &k).unwrap(),
            2 => nv.create_nowait(cache, &k).unwrap(),
            3 if nv.read(cache).is_some() => nv.delete_nowait(cache).unwrap(),
            4 if wait => settled(list.push_back(cache, &k)),
            4 => list.push_back_nowait(cache, &k).unwrap(),
            5 => list.clear_nowait(cache).unwrap(),
            6 => drop(set.insert_nowait(cache, &k).unwrap()),
            7 => drop(set.remove_nowait(cache, &k).unwrap()),
            8 if wait => settled(map.insert(cache, &k, &bytes(rng))),
            8 => map.insert_nowait(cache, &k, &bytes(rng)).unwrap(),
            9 => drop(map.remove_nowait(cache, &k).unwrap()),
            10 => map.clear_nowait(cache).unwrap(),
            11 => drop(cmap.add_to_nowait(cache, &k, n).unwrap()),
            12 => cmap.insert_nowait(cache, &k, n).unwrap(),
            _ => drop(cmap.remove_nowait(cache, &k).unwrap()),
        }
    }
}

fn replay(log: &[MutationBatch]) -> ModelStore {
    let mut model = ModelStore::default();
    for b in log {
        model.apply_batch(b);
    }
    model
}

fn assert_matches(cache: &CoreCache, model: &ModelStore, store: &dyn Driver) {
    let mut session = store.open_session().unwrap();
    for (key, live) in cache.live_state() {
        assert_eq!(model.fetch(&key), live, "replayed batches disagree with live state at {key}");
        assert_eq!(session.fetch(&key).unwrap(), live, "store disagrees with live state at {key}");
    }
}

#[test]
fn replayed_batches_reproduce_live_state() {
    for seed in 0..6 {
        let store: Arc<dyn Driver> = Arc::new(FlatKvsDriver::new());
        let log = Arc::new(Mutex::new(Vec::new()));
        let rec = Recording { inner: store.clone(), log: log.clone() };
        let opts = CacheOptions { flush_interval: Duration::from_micros(200), ..CacheOptions::default() };
        let mut cache = CoreCache::open(seed as u32, &FlexConfig::new("nf", "ins", "flatkvs"), &rec, opts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            workload(&mut cache, &mut rng, 500);
            std::thread::sleep(Duration::from_micros(300));
        }
        cache.drain().unwrap();
        let log = log.lock();
        assert!(log.len() > 1, "expected several flushes, got {}", log.len());
        assert_matches(&cache, &replay(&log), &*store);
    }
}

#[test]
fn store_faults_do_not_lose_or_duplicate() {
    for mode in [FaultMode::DropRequest, FaultMode::DropAck] {
        let store: Arc<dyn Driver> = Arc::new(RespDriver::with_local_server().unwrap());
        let log = Arc::new(Mutex::new(Vec::new()));
        let faulty = FaultyDriver::new(Arc::new(Recording { inner: store.clone(), log: log.clone() }));
        let opts = CacheOptions { flush_interval: Duration::from_micros(500), ..CacheOptions::default() };
        let mut cache = CoreCache::open(0, &FlexConfig::new("nf", "ins", "resp"), &faulty, opts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for round in 0..10 {
            if round % 3 == 0 {
                faulty.fail_applies(3, mode);
            }
            workload(&mut cache, &mut rng, 300);
            std::thread::sleep(Duration::from_millis(2));
        }
        cache.drain().unwrap();
        assert!(cache.stats().retries > 0, "{mode:?}: faults never hit the flusher");
        assert_matches(&cache, &replay(&log.lock()), &*store);
    }
}

#[test]
fn drain_with_dead_store_dumps_state() {
    let dir = tempfile::tempdir().unwrap();
    let faulty = FaultyDriver::new(Arc::new(FlatKvsDriver::new()));
    let opts = CacheOptions {
        background_flush: false,
        drain_attempts: 3,
        dump_dir: Some(dir.path().to_path_buf()),
        ..CacheOptions::default()
    };
    let mut cache = CoreCache::open(2, &FlexConfig::new("nf", "ins", "flatkvs"), &faulty, opts).unwrap();
    let c = cache.counter("c").unwrap();
    c.add_nowait(&mut cache, 41).unwrap();
    faulty.fail_applies(u32::MAX, FaultMode::DropRequest);
    match cache.drain() {
        Err(flexstate::CacheError::DrainFailed { dump: path, .. }) => {
            let text = std::fs::read_to_string(path).unwrap();
            assert!(text.contains("nf@ins@2@Counter@c"), "{text}");
        }
        other => panic!("expected a failed drain with a dump, got {other:?}"),
    }
}
