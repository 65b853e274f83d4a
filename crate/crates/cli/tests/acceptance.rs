//! End-to-end acceptance checks, one line per criterion. Runs as a plain
//! binary (`cargo test --test acceptance`) and exits nonzero if any fail.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Read};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use fairlake_core::bag::{archive_bag, bag_content_hash, create_bag, validate_bag, Bag, Fetcher, PayloadItem, ValidationMode};
use fairlake_core::cache::DatasetCache;
use fairlake_core::catalog::acl::{authorize, authorize_store, Action, Principal, RecordContext, ReleaseState, Role, StoreAction};
use fairlake_core::fixtures::{eye_lake, mouse_lake, CURATOR_TOKEN, WRITER_TOKEN};
use fairlake_core::lake::{Lake, LakeError};
use fairlake_core::provenance::{
    create_dataset, execution_provenance, plan_partition, recorded_config, ExecutionConfig, PartitionSpec,
    CONFIG_TYPE, RUNTIME_TYPE,
};
use fairlake_core::store::StoreError;
use fairlake_core::Rid;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn fail<E: std::fmt::Display>(what: &str) -> impl FnOnce(E) -> String + '_ {
    move |e| format!("{what}: {e}")
}

// ---------------------------------------------------------------- bags

type Payload = Vec<(String, Vec<u8>)>;

fn random_payload(rng: &mut ChaCha8Rng) -> Payload {
    let files = rng.gen_range(1..=50);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    while out.len() < files {
        let depth = rng.gen_range(0..3);
        let mut path = String::from("data");
        for _ in 0..depth {
            path.push_str(&format!("/d{}", rng.gen_range(0..4)));
        }
        path.push_str(&format!("/f{}.bin", rng.gen_range(0..10_000)));
        if !seen.insert(path.clone()) {
            continue;
        }
        let mut bytes = vec![0u8; rng.gen_range(0..=64 * 1024)];
        rng.fill_bytes(&mut bytes);
        out.push((path, bytes));
    }
    out
}

fn info() -> Vec<(String, String)> {
    vec![("Source-Organization".into(), "Example Lab".into())]
}

fn build(root: &Path, files: &Payload) -> Result<(Bag, String), String> {
    let items = files.iter().map(|(p, b)| PayloadItem::bytes(p, b.clone())).collect();
    let bag = create_bag(root, items, &info(), true).map_err(fail("create_bag"))?;
    let hash = bag_content_hash(&bag).map_err(fail("bag_content_hash"))?;
    Ok((bag, hash))
}

/// Builds the bag and its archive in a fresh directory under `parent`.
fn build_archive(parent: &Path, files: &Payload) -> Result<(Vec<u8>, String), String> {
    let dir = tempfile::tempdir_in(parent).map_err(fail("tempdir"))?;
    let (bag, hash) = build(&dir.path().join("bag"), files)?;
    let archive = dir.path().join("bag.tgz");
    archive_bag(&bag, "bag", &archive).map_err(fail("archive_bag"))?;
    Ok((fs::read(&archive).map_err(fail("read archive"))?, hash))
}

fn parallel<T: Send, R: Send>(items: Vec<T>, f: impl Fn(T) -> R + Sync) -> Vec<R> {
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(4).min(16);
    let chunk = items.len().div_ceil(threads).max(1);
    let mut items = items.into_iter().enumerate().collect::<Vec<_>>();
    let mut chunks = Vec::new();
    while !items.is_empty() {
        let rest = items.split_off(chunk.min(items.len()));
        chunks.push(std::mem::replace(&mut items, rest));
    }
    let mut out: Vec<(usize, R)> = std::thread::scope(|s| {
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|c| s.spawn(|| c.into_iter().map(|(i, t)| (i, f(t))).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker")).collect()
    });
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, r)| r).collect()
}

fn fixture_payloads() -> Vec<Payload> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF1);
    (0..20).map(|_| random_payload(&mut rng)).collect()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB16);
    let sets: Vec<(Payload, Payload)> = (0..200)
        .map(|_| {
            let files = random_payload(&mut rng);
            let mut permuted = files.clone();
            permuted.shuffle(&mut rng);
            (files, permuted)
        })
        .collect();
    let first_root = tempfile::tempdir().map_err(fail("tempdir"))?;
    let second_root = tempfile::tempdir().map_err(fail("tempdir"))?;
    let first = parallel(sets.iter().map(|(a, _)| a).collect(), |a| build_archive(first_root.path(), a));
    std::thread::sleep(Duration::from_millis(1100));
    let second = parallel(sets.iter().map(|(_, b)| b).collect(), |b| build_archive(second_root.path(), b));
    let mut identical = 0;
    for (i, (a, b)) in first.into_iter().zip(second).enumerate() {
        let (a, b) = (a?, b?);
        ensure!(a.1 == b.1, "payload set {i}: content hash differs between builds");
        ensure!(a.0 == b.0, "payload set {i}: archive bytes differ between builds");
        identical += 1;
    }

    let fixtures = fixture_payloads();
    let root = tempfile::tempdir().map_err(fail("tempdir"))?;
    let results = parallel(fixtures.into_iter().enumerate().collect(), |(k, files)| -> Result<usize, String> {
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        let (_, base) = build(&root.path().join(format!("base{k}")), &files)?;
        for i in 0..files.len() {
            let mut mutated = files.clone();
            let bytes = &mut mutated[i].1;
            if bytes.is_empty() {
                bytes.push(rng.gen());
            } else {
                let at = rng.gen_range(0..bytes.len());
                bytes[at] ^= rng.gen_range(1..=255u8);
            }
            let (_, hash) = build(&root.path().join(format!("m{k}-{i}")), &mutated)?;
            ensure!(hash != base, "fixture bag {k}: mutating {} left the hash unchanged", files[i].0);
            fs::remove_dir_all(root.path().join(format!("m{k}-{i}"))).ok();
        }
        Ok(files.len())
    });
    let mut mutations = 0;
    for r in results {
        mutations += r?;
    }
    Ok(format!("{identical}/200 identical rebuilds; {mutations}/{mutations} single-byte mutations changed the hash"))
}

fn criterion_2() -> Outcome {
    let root = tempfile::tempdir().map_err(fail("tempdir"))?;
    let results = parallel(fixture_payloads().into_iter().enumerate().collect(), |(k, files)| -> Result<[usize; 3], String> {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + k as u64);
        let (bag, _) = build(&root.path().join(format!("v{k}")), &files)?;
        let detected = |what: &str| -> Result<(), String> {
            let report = validate_bag(&bag.root, ValidationMode::Valid);
            ensure!(!report.is_ok(), "fixture bag {k}: {what} not detected");
            Ok(())
        };
        ensure!(validate_bag(&bag.root, ValidationMode::Valid).is_ok(), "fixture bag {k} is not valid to begin with");
        let mut counts = [0usize; 3];
        let mut targets: Vec<PathBuf> = files.iter().map(|(p, _)| bag.root.join(p)).collect();
        for tag in ["bagit.txt", "bag-info.txt", "manifest-sha256.txt", "tagmanifest-sha256.txt"] {
            targets.push(bag.root.join(tag));
        }
        for path in &targets {
            let original = fs::read(path).map_err(fail("read"))?;
            if !original.is_empty() {
                let mut bytes = original.clone();
                let at = rng.gen_range(0..bytes.len());
                bytes[at] ^= rng.gen_range(1..=255u8);
                fs::write(path, &bytes).map_err(fail("write"))?;
                detected(&format!("corruption of {}", path.display()))?;
                counts[0] += 1;
            }
            fs::remove_file(path).map_err(fail("remove"))?;
            detected(&format!("deletion of {}", path.display()))?;
            counts[1] += 1;
            fs::write(path, &original).map_err(fail("restore"))?;
        }
        for j in 0..5 {
            let extra = bag.root.join(format!("data/d{}/extra{j}.bin", j % 3));
            fs::create_dir_all(extra.parent().unwrap()).map_err(fail("mkdir"))?;
            fs::write(&extra, [j as u8]).map_err(fail("write"))?;
            detected(&format!("insertion of {}", extra.display()))?;
            fs::remove_file(&extra).map_err(fail("remove"))?;
            counts[2] += 1;
        }
        ensure!(validate_bag(&bag.root, ValidationMode::Valid).is_ok(), "fixture bag {k} not restored");
        Ok(counts)
    });
    let mut totals = [0usize; 3];
    for r in results {
        let c = r?;
        for i in 0..3 {
            totals[i] += c[i];
        }
    }
    Ok(format!(
        "detected {0}/{0} corruptions, {1}/{1} deletions, {2}/{2} insertions",
        totals[0], totals[1], totals[2]
    ))
}

// ---------------------------------------------------------------- cache

struct Counting<'a> {
    lake: &'a Lake,
    calls: AtomicUsize,
}

impl Fetcher for Counting<'_> {
    fn fetch(&self, url: &str) -> io::Result<Box<dyn Read + Send>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.lake.fetcher().fetch(url)
    }
}

fn criterion_3() -> Outcome {
    let dir = tempfile::tempdir().map_err(fail("tempdir"))?;
    let fx = eye_lake(dir.path(), 4).map_err(fail("fixture"))?;
    let cache = DatasetCache::new(&dir.path().join("empty-cache")).map_err(fail("cache"))?;
    let counter = Counting { lake: &fx.lake, calls: AtomicUsize::new(0) };
    let first = cache.materialize(fx.lake.minids(), &counter, &fx.dataset.minid).map_err(fail("first"))?;
    let cold = counter.calls.swap(0, Ordering::SeqCst);
    ensure!(cold > 0, "the first materialization fetched nothing");
    let again = cache.materialize(fx.lake.minids(), &counter, &fx.dataset.minid).map_err(fail("second"))?;
    let warm = counter.calls.swap(0, Ordering::SeqCst);
    ensure!(again == first && warm == 0, "second materialization fetched {warm} time(s)");

    let twin = create_dataset(&fx.lake, &fx.writer, &fx.members, &["Imaging"], "same members, new record")
        .map_err(fail("twin dataset"))?;
    ensure!(twin.minid != fx.dataset.minid, "twin dataset reused the minid");
    let via_twin = cache.materialize(fx.lake.minids(), &counter, &twin.minid).map_err(fail("twin"))?;
    let twin_calls = counter.calls.swap(0, Ordering::SeqCst);
    ensure!(via_twin == first && twin_calls == 0, "twin minid fetched {twin_calls} time(s)");
    Ok(format!("cold fetches {cold}; repeat 0; different minid over identical content 0"))
}

// ---------------------------------------------------------------- partitioning

/// Count vector minimizing squared error against the exact quotas
/// n*w_i/W; ties go to the lexicographically largest vector. The optimum
/// lies within one unit of every quota, so each count is searched over
/// floor(quota)-2 ..= floor(quota)+2.
fn brute_force(n: usize, weights: &[u64]) -> Vec<usize> {
    let total = weights.iter().sum::<u64>() as i64;
    let scaled: Vec<i64> = weights.iter().map(|w| n as i64 * *w as i64).collect();
    let lo: Vec<i64> = scaled.iter().map(|s| (s / total - 2).max(0)).collect();
    let hi: Vec<i64> = scaled.iter().map(|s| (s / total + 2).min(n as i64)).collect();
    let mut best: Option<(i128, Vec<usize>)> = None;
    let mut current = lo.clone();
    loop {
        if current.iter().sum::<i64>() == n as i64 {
            let err: i128 = current
                .iter()
                .zip(&scaled)
                .map(|(c, s)| {
                    let d = (c * total - s) as i128;
                    d * d
                })
                .sum();
            let cand: Vec<usize> = current.iter().map(|c| *c as usize).collect();
            let better = match &best {
                None => true,
                Some((e, b)) => err < *e || (err == *e && cand > *b),
            };
            if better {
                best = Some((err, cand));
            }
        }
        let mut i = 0;
        loop {
            if i == current.len() {
                return best.expect("some vector sums to n").1;
            }
            if current[i] < hi[i] {
                current[i] += 1;
                break;
            }
            current[i] = lo[i];
            i += 1;
        }
    }
}

fn members(labels: &[Option<String>]) -> Vec<(Rid, Option<String>)> {
    labels.iter().enumerate().map(|(i, l)| (Rid::from_counter(1000 + i as u64), l.clone())).collect()
}

fn criterion_4() -> Outcome {
    let labels: Vec<Option<String>> =
        (0..100).map(|i| Some(if i % 2 == 0 { "Glaucoma" } else { "Normal" }.to_string())).collect();
    let input = members(&labels);
    let spec = PartitionSpec::new(&[("training", 0.2), ("validation", 0.6), ("testing", 0.2)], Some("Label"), 42);
    let plan = plan_partition(&input, &spec).map_err(fail("plan"))?;
    let label_of: BTreeMap<Rid, String> = input.iter().map(|(r, l)| (*r, l.clone().unwrap())).collect();
    let sizes: Vec<usize> = plan.partitions.iter().map(Vec::len).collect();
    ensure!(sizes == [20, 60, 20], "sizes {sizes:?}");
    for p in &plan.partitions {
        let g = p.iter().filter(|r| label_of[r] == "Glaucoma").count();
        ensure!(g * 2 == p.len(), "partition of {} has {g} Glaucoma", p.len());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    for case in 0..1000 {
        let n = rng.gen_range(1..=200);
        let k = rng.gen_range(1..=4);
        let parts = rng.gen_range(1..=4);
        let weights: Vec<u64> = (0..parts).map(|_| rng.gen_range(1..=10)).collect();
        let total: u64 = weights.iter().sum();
        let labels: Vec<Option<String>> = (0..n).map(|_| Some(format!("L{}", rng.gen_range(0..k)))).collect();
        let names: Vec<String> = (0..parts).map(|i| format!("p{i}")).collect();
        let fractions: Vec<(&str, f64)> =
            names.iter().zip(&weights).map(|(n, w)| (n.as_str(), *w as f64 / total as f64)).collect();
        let seed = rng.gen();
        let spec = PartitionSpec::new(&fractions, Some("Label"), seed);
        let input = members(&labels);
        let plan = plan_partition(&input, &spec).map_err(|e| format!("case {case}: {e}"))?;

        let mut seen = BTreeSet::new();
        for p in &plan.partitions {
            for r in p {
                ensure!(seen.insert(*r), "case {case}: {r} assigned twice");
            }
        }
        ensure!(seen.len() == n, "case {case}: {} of {n} members assigned", seen.len());

        let mut strata: BTreeMap<String, usize> = BTreeMap::new();
        for l in labels.iter().flatten() {
            *strata.entry(l.clone()).or_default() += 1;
        }
        let label_of: BTreeMap<Rid, String> = input.iter().map(|(r, l)| (*r, l.clone().unwrap())).collect();
        for (label, size) in &strata {
            let expected = brute_force(*size, &weights);
            let got: Vec<usize> =
                plan.partitions.iter().map(|p| p.iter().filter(|r| &label_of[r] == label).count()).collect();
            ensure!(got == expected, "case {case}: stratum {label} of {size} split {got:?}, oracle {expected:?}");
        }

        let mut shuffled = input.clone();
        shuffled.shuffle(&mut rng);
        let again = plan_partition(&shuffled, &spec).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(again.partitions == plan.partitions, "case {case}: same seed gave a different assignment");
    }
    Ok("100 subjects -> 20/60/20 with 10/30/10 per label; 1000 random instances match the oracle".into())
}

// ---------------------------------------------------------------- access control

fn criterion_5() -> Outcome {
    let roles = [("reader", Role::Reader), ("writer", Role::Writer), ("curator", Role::Curator)];
    let actions = [("read", Action::Read), ("update", Action::Update), ("delete", Action::Delete)];
    let mut cells = 0;
    for (rname, role) in roles {
        let who = Principal::new("me@example.org", role);
        for (aname, action) in actions {
            for owner in [true, false] {
                for released in [true, false] {
                    let expected = match (rname, aname) {
                        ("curator", _) => true,
                        ("reader", "read") => released,
                        ("reader", _) => false,
                        ("writer", "read") => owner || released,
                        ("writer", _) => owner,
                        _ => unreachable!(),
                    };
                    let ctx = RecordContext {
                        created_by: if owner { "me@example.org" } else { "other@example.org" },
                        release: if released { ReleaseState::Released } else { ReleaseState::Pending },
                    };
                    let got = authorize(&who, action, Some(ctx));
                    ensure!(
                        got.allowed == expected,
                        "{rname} {aname} owner={owner} released={released}: got {} ({}), expected {expected}",
                        got.allowed,
                        got.rule
                    );
                    cells += 1;
                }
            }
        }
    }
    ensure!(cells == 36, "{cells} cells");

    let store = [
        (Role::Reader, StoreAction::Get, true),
        (Role::Reader, StoreAction::Put, false),
        (Role::Reader, StoreAction::Delete, false),
        (Role::Writer, StoreAction::Get, true),
        (Role::Writer, StoreAction::Put, true),
        (Role::Writer, StoreAction::Delete, false),
        (Role::Curator, StoreAction::Get, true),
        (Role::Curator, StoreAction::Put, true),
        (Role::Curator, StoreAction::Delete, true),
    ];
    for (role, action, expected) in store {
        let got = authorize_store(&Principal::new("me", role), action);
        ensure!(got.allowed == expected, "store {role:?} {action:?}: got {}", got.allowed);
    }

    let dir = tempfile::tempdir().map_err(fail("tempdir"))?;
    let fx = eye_lake(dir.path(), 1).map_err(fail("fixture"))?;
    let store = fx.lake.store();
    store.ensure_namespace(&fx.writer, "/acl").map_err(fail("namespace"))?;
    let v = store.put(&fx.writer, "/acl/x.bin", &mut &b"payload"[..], None, "application/octet-stream").map_err(fail("put"))?;
    match store.delete(&fx.writer, "/acl/x.bin", &v.version_id) {
        Err(StoreError::AccessDenied(d)) => ensure!(!d.allowed, "denial marked allowed"),
        other => return Err(format!("writer delete of an object version: {other:?}")),
    }
    ensure!(store.get(&fx.reader, "/acl/x.bin", Some(&v.version_id)).is_ok(), "version lost after a denied delete");
    store.delete(&fx.curator, "/acl/x.bin", &v.version_id).map_err(fail("curator delete"))?;
    Ok("36/36 record cells and 9/9 store cells match; writer version delete refused on a live store".into())
}

// ---------------------------------------------------------------- CLI helpers

fn fairlake(lake: &Path, token: &str, cache: &Path, args: &[&str]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fairlake"));
    for v in ["FAIRLAKE_URL", "FAIRLAKE_TOKEN", "FAIRLAKE_CACHE"] {
        c.env_remove(v);
    }
    c.args(["--url", lake.to_str().unwrap(), "--token", token, "--cache", cache.to_str().unwrap()])
        .args(args)
        .output()
        .expect("fairlake binary runs")
}

fn describe(o: &Output) -> String {
    format!("exit {:?}; stderr: {}", o.status.code(), String::from_utf8_lossy(&o.stderr).trim())
}

fn tree_digests(root: &Path) -> BTreeMap<String, String> {
    walkdir::WalkDir::new(root)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .map(|e| {
            let rel = e.path().strip_prefix(root).unwrap().to_string_lossy().into_owned();
            (rel, sha(&fs::read(e.path()).unwrap()))
        })
        .collect()
}

/// Lake with a completed and a failed CLI execution, shared by criteria 6 and 8.
struct Executions {
    dir: tempfile::TempDir,
    lake: PathBuf,
    config: ExecutionConfig,
    completed: Rid,
    failed: Rid,
    failed_exit: Option<i32>,
    workdir: PathBuf,
}

fn executions() -> Result<Executions, String> {
    let dir = tempfile::tempdir().map_err(fail("tempdir"))?;
    let fx = eye_lake(dir.path(), 4).map_err(fail("fixture"))?;
    let earlier = execution_provenance(&fx.lake, fx.execution).map_err(fail("fixture execution"))?;
    let asset = earlier.output_assets.first().ok_or("fixture execution has no output asset")?.rid;
    let minid = fx.dataset.minid.clone();
    drop(fx);
    let lake = dir.path().join("lake");
    let cache = dir.path().join("cache");
    let config: ExecutionConfig = serde_json::from_value(serde_json::json!({
        "workflow": {
            "name": "member-listing",
            "type": "Training",
            "code_uri": "https://git.example.org/lab/listing/blob/v1/list.sh",
            "code_checksum": "3f786850e387550fdab836ed7e6dc881de23001b"
        },
        "datasets": [minid],
        "assets": [asset.to_string()],
        "parameters": { "sort": "lexical" },
        "description": "sorted listing of the input bag"
    }))
    .map_err(fail("config"))?;
    let config_path = dir.path().join("config.json");
    fs::write(&config_path, serde_json::to_vec_pretty(&config).unwrap()).map_err(fail("write config"))?;
    let c = config_path.to_str().unwrap();

    let workdir = dir.path().join("listing-run");
    let w = workdir.to_str().unwrap();
    let script = "mkdir -p outputs/execution_assets/Report && find data -type f | sort > outputs/execution_assets/Report/sorted.csv";
    let ok = fairlake(&lake, WRITER_TOKEN, &cache, &["run", "--config", c, "--workdir", w, "--", "sh", "-c", script]);
    ensure!(ok.status.success(), "stub workload: {}", describe(&ok));
    let completed = String::from_utf8_lossy(&ok.stdout).trim().parse().map_err(fail("execution RID"))?;

    let bad_dir = dir.path().join("bad");
    let bad = fairlake(
        &lake,
        WRITER_TOKEN,
        &cache,
        &["run", "--config", c, "--workdir", bad_dir.to_str().unwrap(), "--", "sh", "-c", "echo 'loss diverged at epoch 3' >&2; exit 1"],
    );
    let failed = String::from_utf8_lossy(&bad.stdout).trim().parse().map_err(fail("failed execution RID"))?;
    Ok(Executions { dir, lake, config, completed, failed, failed_exit: bad.status.code(), workdir })
}

fn criterion_6(ex: &Executions) -> Outcome {
    let lake = Lake::open(&ex.lake).map_err(fail("open lake"))?;
    let prov = execution_provenance(&lake, ex.completed).map_err(fail("provenance"))?;
    ensure!(prov.status() == "completed", "status {}", prov.status());
    ensure!(prov.workflow.text("URL") == Some(ex.config.workflow.code_uri.as_str()), "workflow URI not recorded");
    ensure!(prov.workflow.text("Checksum") == Some(ex.config.workflow.code_checksum.as_str()), "workflow checksum not recorded");
    let minids: Vec<&str> = prov.datasets.iter().map(|d| d.minid.as_str()).collect();
    ensure!(minids == ex.config.datasets.iter().map(String::as_str).collect::<Vec<_>>(), "input minids {minids:?}");
    let inputs: Vec<String> = prov.input_assets.iter().map(|r| r.rid.to_string()).collect();
    ensure!(inputs == ex.config.assets, "input assets {inputs:?}");
    let outputs: Vec<&str> = prov.output_assets.iter().filter_map(|a| a.text("Filename")).collect();
    ensure!(outputs == ["sorted.csv"], "output assets {outputs:?}");
    let local = fs::read(ex.workdir.join("outputs/execution_assets/Report/sorted.csv")).map_err(fail("output"))?;
    ensure!(prov.output_assets[0].text("SHA256") == Some(sha(&local).as_str()), "output digest differs from the file");
    ensure!(prov.metadata_of_type(CONFIG_TYPE).is_some(), "no config metadata");
    ensure!(prov.metadata_of_type(RUNTIME_TYPE).is_some(), "no runtime log");
    let recorded = recorded_config(&lake, ex.completed).map_err(fail("recorded config"))?;
    ensure!(recorded == ex.config, "recorded config differs");

    ensure!(ex.failed_exit == Some(1), "failing workload made the CLI exit {:?}", ex.failed_exit);
    let bad = execution_provenance(&lake, ex.failed).map_err(fail("failed provenance"))?;
    ensure!(bad.status() == "failed", "failed run has status {}", bad.status());
    let detail = bad.execution.text("Status_Detail").unwrap_or_default();
    ensure!(detail.contains("loss diverged at epoch 3") && detail.contains("status 1"), "status detail {detail:?}");
    ensure!(bad.metadata_of_type(CONFIG_TYPE).is_some() && bad.metadata_of_type(RUNTIME_TYPE).is_some(), "failed run lacks metadata");
    Ok(format!("execution {} complete with workflow, inputs, output, config and log; failing run recorded as failed", ex.completed))
}

fn criterion_7() -> Outcome {
    const TABLE: [&str; 16] = [
        "Globally unique identifier",
        "Persistent identifier",
        "Machine-readable metadata",
        "Standardized metadata",
        "Resource identifier in metadata",
        "Resource discovery through web search",
        "Open, Free, Standardized Access protocol",
        "Protocol to access restricted content",
        "Persistence of resource and metadata",
        "Resource uses formal language",
        "FAIR vocabulary",
        "Linked",
        "Digital resource license",
        "Metadata license",
        "Provenance scheme",
        "Certi. of compliance to comm. standard",
    ];
    let mut lines = Vec::new();
    for name in ["eye", "mouse"] {
        let dir = tempfile::tempdir().map_err(fail("tempdir"))?;
        let built: Result<_, LakeError> = if name == "eye" { eye_lake(dir.path(), 6) } else { mouse_lake(dir.path(), 6) };
        drop(built.map_err(fail("fixture"))?);
        let lake = dir.path().join("lake");
        let before = fs::read(lake.join("catalog.json")).map_err(fail("catalog"))?;
        let out = fairlake(&lake, CURATOR_TOKEN, &dir.path().join("cache"), &["--json", "fair-check"]);
        ensure!(out.status.success(), "{name}: {}", describe(&out));
        let report: Value = serde_json::from_slice(&out.stdout).map_err(fail("report"))?;
        let metrics = report["metrics"].as_array().cloned().unwrap_or_default();
        let names: Vec<&str> = metrics.iter().filter_map(|m| m["metric"].as_str()).collect();
        ensure!(names == TABLE, "{name}: metric rows {names:?}");
        for m in &metrics {
            let expected = m["metric"] != "Linked";
            ensure!(m["satisfied"] == expected, "{name}: {} satisfied={} ({})", m["metric"], m["satisfied"], m["evidence"]);
        }
        let after = fs::read(lake.join("catalog.json")).map_err(fail("catalog"))?;
        ensure!(before == after, "{name}: fair-check changed the catalog");
        lines.push(format!("{name} 15/16 with Linked unsatisfied"));
    }
    Ok(lines.join("; "))
}

fn criterion_8(ex: &Executions) -> Outcome {
    let original = tree_digests(&ex.workdir.join("datasets"));
    let original_assets = tree_digests(&ex.workdir.join("assets"));
    ensure!(!original.is_empty() && !original_assets.is_empty(), "original run has no inputs");
    fs::remove_dir_all(&ex.workdir).map_err(fail("remove workdir"))?;
    fs::remove_dir_all(ex.dir.path().join("cache")).map_err(fail("remove cache"))?;

    let fresh_cache = ex.dir.path().join("fresh-cache");
    let dest = ex.dir.path().join("restored");
    let out = fairlake(
        &ex.lake,
        WRITER_TOKEN,
        &fresh_cache,
        &["--json", "restore", &ex.completed.to_string(), "--dest", dest.to_str().unwrap()],
    );
    ensure!(out.status.success(), "restore: {}", describe(&out));
    let restored = tree_digests(&dest.join("datasets"));
    let restored_assets = tree_digests(&dest.join("assets"));
    ensure!(restored == original, "restored dataset files differ ({} vs {} files)", restored.len(), original.len());
    ensure!(restored_assets == original_assets, "restored assets differ");

    let manifest: Value = serde_json::from_slice(&out.stdout).map_err(fail("manifest"))?;
    let lake = Lake::open(&ex.lake).map_err(fail("open lake"))?;
    let prov = execution_provenance(&lake, ex.completed).map_err(fail("provenance"))?;
    for (used, got) in prov.datasets.iter().zip(manifest["datasets"].as_array().into_iter().flatten()) {
        ensure!(got["bag_hash"] == used.bag_hash.as_str(), "bag hash of {} differs", used.minid);
    }
    for asset in &prov.input_assets {
        let sha_recorded = asset.text("SHA256").unwrap_or_default();
        ensure!(restored_assets.values().any(|d| d == sha_recorded), "asset {} not restored", asset.rid);
    }
    Ok(format!("{} dataset files and {} assets byte-identical after restore", restored.len(), restored_assets.len()))
}

fn main() {
    let started = Instant::now();
    let mut failures = 0;
    let mut report = |n: usize, name: &str, outcome: std::thread::Result<Outcome>| {
        let line = match outcome {
            Ok(Ok(detail)) => format!("criterion {n} ({name}): PASS - {detail}"),
            Ok(Err(why)) => {
                failures += 1;
                format!("criterion {n} ({name}): FAIL - {why}")
            }
            Err(panic) => {
                failures += 1;
                let why = panic.downcast_ref::<String>().cloned().or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()));
                format!("criterion {n} ({name}): FAIL - panicked: {}", why.unwrap_or_default())
            }
        };
        println!("{line}");
    };
    let t = Instant::now();
    report(1, "bag idempotency", catch_unwind(criterion_1));
    let c1 = t.elapsed();
    report(2, "validation sensitivity", catch_unwind(criterion_2));
    report(3, "cache reuse", catch_unwind(criterion_3));
    report(4, "partitioning", catch_unwind(criterion_4));
    report(5, "self-curation access control", catch_unwind(criterion_5));
    let ex = catch_unwind(executions);
    match ex {
        Ok(Ok(ex)) => {
            report(6, "execution lifecycle", catch_unwind(AssertUnwindSafe(|| criterion_6(&ex))));
            report(7, "FAIR report", catch_unwind(criterion_7));
            report(8, "reproducibility closure", catch_unwind(AssertUnwindSafe(|| criterion_8(&ex))));
        }
        other => {
            let why = match other {
                Ok(Err(e)) => e,
                _ => "setup panicked".to_string(),
            };
            report(6, "execution lifecycle", Ok(Err(why.clone())));
            report(7, "FAIR report", catch_unwind(criterion_7));
            report(8, "reproducibility closure", Ok(Err(why)));
        }
    }
    println!("criterion 1 took {:.1}s; all criteria {:.1}s", c1.as_secs_f64(), started.elapsed().as_secs_f64());
    if c1 > Duration::from_secs(120) {
        println!("criterion 1 exceeded its 2 minute budget");
        failures += 1;
    }
    if failures > 0 {
        println!("{failures} criterion check(s) failed");
        std::process::exit(1);
    }
}
