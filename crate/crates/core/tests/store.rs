use std::io::Read;
use std::sync::Arc;

use fairlake_core::store::{ObjectStore, Store, StoreError};
use fairlake_core::{Principal, Role};
use proptest::prelude::*;
use sha2::{Digest, Sha256};

fn writer() -> Principal {
    Principal::new("alice", Role::Writer)
}

fn curator() -> Principal {
    Principal::new("prof", Role::Curator)
}

fn oracle(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn store() -> (tempfile::TempDir, ObjectStore) {
    let dir = tempfile::tempdir().unwrap();
    let s = ObjectStore::open(dir.path()).unwrap();
    s.create_namespace(&writer(), "/eye").unwrap();
    s.create_namespace(&writer(), "/eye/images").unwrap();
    (dir, s)
}

fn put(s: &ObjectStore, path: &str, bytes: &[u8], declared: Option<&str>) -> Result<fairlake_core::store::ObjectVersion, StoreError> {
    s.put(&writer(), path, &mut &bytes[..], declared, "text/plain")
}

#[test]
fn put_with_declared_digest() {
    let (_d, s) = store();
    let digest = oracle(b"hello\n");
    assert_eq!(digest, "5891b5b522d5df086d0ff0b110fbd9d21bb4fc7163af34d08286a2e846f6be03");
    let v1 = put(&s, "/eye/images/a.txt", b"hello\n", Some(&digest)).unwrap();
    assert_eq!((v1.version_id.as_str(), v1.length), ("v1", 6));
    assert_eq!(v1.content_sha256, digest);
    let v2 = put(&s, "/eye/images/a.txt", b"hello\n", None).unwrap();
    assert_eq!(v2.content_sha256, v1.content_sha256);
    assert_ne!(v2.version_id, v1.version_id);
    let wrong = put(&s, "/eye/images/a.txt", b"hello\n", Some(&oracle(b"other")));
    assert!(matches!(wrong, Err(StoreError::ChecksumMismatch { .. })));
    assert_eq!(s.versions("/eye/images/a.txt").unwrap().len(), 2);
}

#[test]
fn reads_and_versions() {
    let (_d, s) = store();
    put(&s, "/eye/images/a.txt", b"one", None).unwrap();
    put(&s, "/eye/images/a.txt", b"two", None).unwrap();
    let (v, bytes) = s.read_all("/eye/images/a.txt", None).unwrap();
    assert_eq!((v.version_id.as_str(), bytes.as_slice()), ("v2", &b"two"[..]));
    assert_eq!(s.read_all("/eye/images/a.txt", Some("v1")).unwrap().1, b"one");
    assert!(matches!(s.read_all("/eye/images/none", None), Err(StoreError::NotFound(_))));
    assert!(matches!(s.read_all("/eye/images/a.txt", Some("v9")), Err(StoreError::VersionNotFound(..))));
    let (_, mut r) = s.get(&Principal::new("bob", Role::Reader), "/eye/images/a.txt", None).unwrap();
    let mut buf = String::new();
    r.read_to_string(&mut buf).unwrap();
    assert_eq!(buf, "two");
}

#[test]
fn namespaces_and_paths() {
    let (_d, s) = store();
    assert!(matches!(put(&s, "/other/a.txt", b"x", None), Err(StoreError::NamespaceMissing(_))));
    assert!(matches!(put(&s, "/eye/../a", b"x", None), Err(StoreError::InvalidPath(_))));
    assert!(matches!(put(&s, "/eye/a b", b"x", None), Err(StoreError::InvalidPath(_))));
    assert!(matches!(s.create_namespace(&writer(), "/x/y"), Err(StoreError::NamespaceMissing(_))));
    s.ensure_namespace(&writer(), "/x/y/z").unwrap();
    assert!(s.namespace_exists("/x/y"));
    let denied = s.put(&Principal::new("bob", Role::Reader), "/eye/a", &mut &b"x"[..], None, "text/plain");
    assert!(matches!(denied, Err(StoreError::AccessDenied(_))));
}

#[test]
fn deletion_keeps_metadata() {
    let (_d, s) = store();
    put(&s, "/eye/images/a.txt", b"one", None).unwrap();
    put(&s, "/eye/images/a.txt", b"two", None).unwrap();
    match s.delete(&writer(), "/eye/images/a.txt", "v1") {
        Err(StoreError::AccessDenied(d)) => assert_eq!(d.rule, "store-delete-curator-only"),
        other => panic!("{other:?}"),
    }
    s.delete(&curator(), "/eye/images/a.txt", "v2").unwrap();
    let (latest, bytes) = s.read_all("/eye/images/a.txt", None).unwrap();
    assert_eq!((latest.version_id.as_str(), bytes.as_slice()), ("v1", &b"one"[..]));
    match s.read_all("/eye/images/a.txt", Some("v2")) {
        Err(StoreError::Gone(meta)) => {
            assert_eq!(meta.content_sha256, oracle(b"two"));
            assert_eq!(meta.length, 3);
            assert_eq!(meta.created_by, "alice");
        }
        other => panic!("{other:?}"),
    }
    let v3 = put(&s, "/eye/images/a.txt", b"three", None).unwrap();
    assert_eq!(v3.version_id, "v3");
    assert_eq!(s.versions("/eye/images/a.txt").unwrap().len(), 3);
    assert!(matches!(s.delete(&curator(), "/eye/images/none", "v1"), Err(StoreError::NotFound(_))));
}

#[test]
fn survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    {
        let s = ObjectStore::open(dir.path()).unwrap();
        s.create_namespace(&writer(), "/a").unwrap();
        put(&s, "/a/f", b"persisted", None).unwrap();
    }
    let s = ObjectStore::open(dir.path()).unwrap();
    assert_eq!(s.read_all("/a/f", Some("v1")).unwrap().1, b"persisted");
    assert_eq!(put(&s, "/a/f", b"more", None).unwrap().version_id, "v2");
}

#[test]
fn concurrent_puts_serialize() {
    let (_d, s) = store();
    let s = Arc::new(s);
    let handles: Vec<_> = (0..8)
        .map(|i| {
            let s = s.clone();
            std::thread::spawn(move || put(&s, "/eye/images/c", format!("payload {i}").as_bytes(), None).unwrap())
        })
        .collect();
    let mut ids: Vec<String> = handles.into_iter().map(|h| h.join().unwrap().version_id).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 8);
    for v in s.versions("/eye/images/c").unwrap() {
        let (meta, bytes) = s.read_all("/eye/images/c", Some(&v.version_id)).unwrap();
        assert_eq!(oracle(&bytes), meta.content_sha256);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn read_back_integrity(sizes in proptest::collection::vec(0usize..(4 << 20), 1..4), seed in any::<u64>()) {
        let (_d, s) = store();
        let mut rng = seed;
        for (i, n) in sizes.iter().enumerate() {
            let bytes: Vec<u8> = (0..*n).map(|_| { rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (rng >> 33) as u8 }).collect();
            let v = put(&s, "/eye/images/blob", &bytes, None).unwrap();
            prop_assert_eq!(v.version_id.clone(), format!("v{}", i + 1));
            prop_assert_eq!(&v.content_sha256, &oracle(&bytes));
            let (meta, back) = s.read_all("/eye/images/blob", Some(&v.version_id)).unwrap();
            prop_assert_eq!(oracle(&back), meta.content_sha256);
            prop_assert_eq!(back.len(), *n);
        }
    }
}
