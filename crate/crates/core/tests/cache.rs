use std::fs;
use std::io::{self, Read};
use std::sync::atomic::{AtomicUsize, Ordering};

use fairlake_core::bag::{validate_bag, Fetcher, ValidationMode};
use fairlake_core::cache::{DatasetCache, EntryState};
use fairlake_core::fixtures::eye_lake;
use fairlake_core::lake::{Lake, LakeError};
use fairlake_core::provenance::create_dataset;

struct Counting<'a> {
    lake: &'a Lake,
    calls: AtomicUsize,
}

impl<'a> Counting<'a> {
    fn new(lake: &'a Lake) -> Self {
        Counting { lake, calls: AtomicUsize::new(0) }
    }

    fn take(&self) -> usize {
        self.calls.swap(0, Ordering::SeqCst)
    }
}

impl Fetcher for Counting<'_> {
    fn fetch(&self, url: &str) -> io::Result<Box<dyn Read + Send>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.lake.fetcher().fetch(url)
    }
}

struct Broken;

impl Fetcher for Broken {
    fn fetch(&self, url: &str) -> io::Result<Box<dyn Read + Send>> {
        Err(io::Error::other(format!("offline: {url}")))
    }
}

#[test]
fn second_materialization_is_local() {
    let dir = tempfile::tempdir().unwrap();
    let fx = eye_lake(dir.path(), 3).unwrap();
    let cache = DatasetCache::new(&dir.path().join("fresh")).unwrap();
    let fetcher = Counting::new(&fx.lake);
    let first = cache.materialize(fx.lake.minids(), &fetcher, &fx.dataset.minid).unwrap();
    assert_eq!(fetcher.take(), 1 + 6);
    let again = cache.materialize(fx.lake.minids(), &fetcher, &fx.dataset.minid).unwrap();
    assert_eq!(again, first);
    assert_eq!(fetcher.take(), 0);
    assert!(cache.materialize(fx.lake.minids(), &Broken, &fx.dataset.minid).is_ok());

    let twin = create_dataset(&fx.lake, &fx.writer, &fx.members, &["Imaging"], "same content").unwrap();
    assert_ne!(twin.minid, fx.dataset.minid);
    assert_eq!(cache.materialize(fx.lake.minids(), &fetcher, &twin.minid).unwrap(), first);
    assert_eq!(fetcher.take(), 0);

    let entries = cache.entries();
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0].state, EntryState::Verified);
    assert_eq!(entries[0].bag_hash, fx.dataset.bag_hash);
}

#[test]
fn damaged_entries_are_refetched() {
    let dir = tempfile::tempdir().unwrap();
    let fx = eye_lake(dir.path(), 2).unwrap();
    let cache = DatasetCache::new(&dir.path().join("fresh")).unwrap();
    let fetcher = Counting::new(&fx.lake);
    let bag = cache.materialize(fx.lake.minids(), &fetcher, &fx.dataset.minid).unwrap();
    fetcher.take();
    fs::write(bag.join("data/members.csv"), "tampered\n").unwrap();
    let bag = cache.materialize(fx.lake.minids(), &fetcher, &fx.dataset.minid).unwrap();
    assert!(fetcher.take() >= 1);
    assert!(validate_bag(&bag, ValidationMode::Valid).is_ok());
}

#[test]
fn assets_are_shared_between_bags() {
    let dir = tempfile::tempdir().unwrap();
    let fx = eye_lake(dir.path(), 3).unwrap();
    let cache = DatasetCache::new(&dir.path().join("fresh")).unwrap();
    let fetcher = Counting::new(&fx.lake);
    cache.materialize(fx.lake.minids(), &fetcher, &fx.dataset.minid).unwrap();
    fetcher.take();
    let subset = create_dataset(&fx.lake, &fx.writer, &fx.members[..2], &["Imaging"], "two").unwrap();
    let bag = cache.materialize(fx.lake.minids(), &fetcher, &subset.minid).unwrap();
    assert_eq!(fetcher.take(), 1);
    assert!(validate_bag(&bag, ValidationMode::Valid).is_ok());
}

#[test]
fn budget_evicts_least_recently_used() {
    let dir = tempfile::tempdir().unwrap();
    let fx = eye_lake(dir.path(), 3).unwrap();
    let a = create_dataset(&fx.lake, &fx.writer, &fx.members[..1], &[], "a").unwrap();
    let b = create_dataset(&fx.lake, &fx.writer, &fx.members[1..2], &[], "b").unwrap();
    let cache = DatasetCache::new(&dir.path().join("fresh")).unwrap().with_budget(1);
    let fetcher = fx.lake.fetcher();
    cache.materialize(fx.lake.minids(), &fetcher, &a.minid).unwrap();
    cache.materialize(fx.lake.minids(), &fetcher, &b.minid).unwrap();
    let hashes: Vec<String> = cache.entries().into_iter().map(|e| e.bag_hash).collect();
    assert_eq!(hashes, vec![b.bag_hash.clone()]);
    assert!(!dir.path().join("fresh").join(&a.bag_hash).exists());
}

#[test]
fn failures_leave_no_entry() {
    let dir = tempfile::tempdir().unwrap();
    let fx = eye_lake(dir.path(), 2).unwrap();
    let cache = DatasetCache::new(&dir.path().join("fresh")).unwrap();
    assert!(matches!(
        cache.materialize(fx.lake.minids(), &Broken, &fx.dataset.minid),
        Err(LakeError::FetchFailed(_))
    ));
    assert!(cache.entries().is_empty());
    assert!(matches!(
        cache.materialize(fx.lake.minids(), &Broken, "minid:0000000000"),
        Err(LakeError::UnresolvableMinid(_))
    ));
    fx.lake.minids().tombstone(&fx.curator, &fx.dataset.minid).unwrap();
    assert!(matches!(
        cache.materialize(fx.lake.minids(), &fx.lake.fetcher(), &fx.dataset.minid),
        Err(LakeError::UnresolvableMinid(_))
    ));
}

#[test]
fn concurrent_materializations_agree() {
    let dir = tempfile::tempdir().unwrap();
    let fx = eye_lake(dir.path(), 3).unwrap();
    let root = dir.path().join("fresh");
    let fetcher = Counting::new(&fx.lake);
    let paths: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let root = root.clone();
                let fetcher = &fetcher;
                let lake = &fx.lake;
                let minid = fx.dataset.minid.clone();
                s.spawn(move || DatasetCache::new(&root).unwrap().materialize(lake.minids(), fetcher, &minid).unwrap())
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert!(paths.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(fetcher.take(), 1 + 6);
}
