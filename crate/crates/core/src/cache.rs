//! Local cache of materialized dataset bags keyed by bag content hash, plus
//! a digest-keyed cache of individual asset files.
//!
//! Layout: `<root>/<bag_hash>/bag/`, `<root>/<bag_hash>.state`,
//! `<root>/<bag_hash>.lock`, `<root>/assets/<sha256>`. The lock file is held
//! with an advisory lock while an entry is checked or filled, so concurrent
//! processes do not download the same bag twice.

use std::fs::{self, File, OpenOptions};
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::bag::{bag_content_hash, resolve_fetch, unpack_archive, validate_bag, Fetcher, ValidationMode};
use crate::lake::LakeError;
use crate::minid::{Minid, MinidRegistry};
use crate::util::{copy_hashing, is_sha256_hex, now, sha256_file, write_atomic};

pub const CACHE_ENV: &str = "FAIRLAKE_CACHE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryState {
    Downloading,
    Verified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub bag_hash: String,
    pub local_path: PathBuf,
    pub state: EntryState,
    pub last_used: DateTime<Utc>,
    pub bytes: u64,
}

#[derive(Debug, Clone)]
pub struct DatasetCache {
    root: PathBuf,
    budget_bytes: Option<u64>,
}

struct Held(File);

impl Drop for Held {
    fn drop(&mut self) {
        let _ = self.0.unlock();
    }
}

fn dir_size(path: &Path) -> u64 {
    walkdir::WalkDir::new(path)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .filter_map(|e| e.metadata().ok())
        .map(|m| m.len())
        .sum()
}

/// Hard-links `src` to `dest`, copying when linking is not possible.
pub(crate) fn link_or_copy(src: &Path, dest: &Path) -> io::Result<()> {
    if let Some(dir) = dest.parent() {
        fs::create_dir_all(dir)?;
    }
    let _ = fs::remove_file(dest);
    fs::hard_link(src, dest).or_else(|_| fs::copy(src, dest).map(|_| ()))
}

fn copy_file(src: &Path, dest: &Path) -> io::Result<()> {
    if let Some(dir) = dest.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::copy(src, dest).map(|_| ())
}

impl DatasetCache {
    pub fn new(root: &Path) -> io::Result<Self> {
        fs::create_dir_all(root.join("assets"))?;
        fs::create_dir_all(root.join("staging"))?;
        Ok(DatasetCache { root: root.to_path_buf(), budget_bytes: None })
    }

    /// Evicts least recently used bags once their total size exceeds `bytes`.
    pub fn with_budget(mut self, bytes: u64) -> Self {
        self.budget_bytes = Some(bytes);
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn state_path(&self, hash: &str) -> PathBuf {
        self.root.join(format!("{hash}.state"))
    }

    fn entry_dir(&self, hash: &str) -> PathBuf {
        self.root.join(hash)
    }

    fn lock(&self, hash: &str) -> io::Result<Held> {
        let f = OpenOptions::new().create(true).truncate(false).write(true).open(self.root.join(format!("{hash}.lock")))?;
        f.lock()?;
        Ok(Held(f))
    }

    fn read_state(&self, hash: &str) -> Option<CacheEntry> {
        serde_json::from_slice(&fs::read(self.state_path(hash)).ok()?).ok()
    }

    fn write_state(&self, entry: &CacheEntry) -> Result<(), LakeError> {
        write_atomic(&self.state_path(&entry.bag_hash), &serde_json::to_vec_pretty(entry)?)?;
        Ok(())
    }

    fn evict(&self, hash: &str) -> io::Result<()> {
        let _ = fs::remove_file(self.state_path(hash));
        match fs::remove_dir_all(self.entry_dir(hash)) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e),
            _ => Ok(()),
        }
    }

    /// Returns the bag directory of a verified entry after re-validating it;
    /// a corrupted entry is evicted. Caller holds the entry lock.
    fn check(&self, hash: &str) -> Result<Option<PathBuf>, LakeError> {
        let Some(mut entry) = self.read_state(hash) else { return Ok(None) };
        let bag = self.entry_dir(hash).join("bag");
        if entry.state == EntryState::Verified && validate_bag(&bag, ValidationMode::Valid).is_ok() {
            entry.last_used = now();
            self.write_state(&entry)?;
            return Ok(Some(bag));
        }
        self.evict(hash)?;
        Ok(None)
    }

    pub fn entries(&self) -> Vec<CacheEntry> {
        let Ok(dir) = fs::read_dir(&self.root) else { return Vec::new() };
        let mut out: Vec<CacheEntry> = dir
            .filter_map(Result::ok)
            .filter_map(|e| e.file_name().to_str()?.strip_suffix(".state").map(str::to_string))
            .filter_map(|h| self.read_state(&h))
            .collect();
        out.sort_by(|a, b| a.bag_hash.cmp(&b.bag_hash));
        out
    }

    /// Returns a local directory holding the fully resolved, validated bag
    /// named by `minid`. A verified entry for the same content is reused
    /// without contacting `fetcher`.
    pub fn materialize(&self, minids: &MinidRegistry, fetcher: &dyn Fetcher, minid: &str) -> Result<PathBuf, LakeError> {
        let m = minids.resolve(minid).map_err(|_| LakeError::UnresolvableMinid(minid.to_string()))?;
        self.materialize_resolved(&m, fetcher)
    }

    /// Like [`DatasetCache::materialize`], for a minid already resolved
    /// elsewhere (for example by a remote registry).
    pub fn materialize_resolved(&self, m: &Minid, fetcher: &dyn Fetcher) -> Result<PathBuf, LakeError> {
        let minid = m.identifier.as_str();
        if !m.is_active() || m.locations.is_empty() {
            return Err(LakeError::UnresolvableMinid(minid.to_string()));
        }
        let known = m.metadata.get("bag_hash").filter(|h| is_sha256_hex(h)).cloned();
        let mut guard = None;
        if let Some(h) = &known {
            guard = Some(self.lock(h)?);
            if let Some(bag) = self.check(h)? {
                return Ok(bag);
            }
        }

        let staging = tempfile::tempdir_in(self.root.join("staging"))?;
        let archive = staging.path().join("bag.tgz");
        let mut last_err = LakeError::FetchFailed(format!("{minid} has no usable location"));
        let mut fetched = false;
        for loc in &m.locations {
            let attempt = (|| -> Result<(), LakeError> {
                let mut src = fetcher.fetch(loc).map_err(|e| LakeError::FetchFailed(format!("{loc}: {e}")))?;
                let mut out = File::create(&archive)?;
                let (sha, _) = copy_hashing(&mut src, &mut out)?;
                if sha != m.content_sha256 {
                    return Err(LakeError::DigestMismatch {
                        what: loc.clone(),
                        expected: m.content_sha256.clone(),
                        actual: sha,
                    });
                }
                Ok(())
            })();
            match attempt {
                Ok(()) => {
                    fetched = true;
                    break;
                }
                Err(e) => last_err = e,
            }
        }
        if !fetched {
            return Err(last_err);
        }
        let bag = unpack_archive(&archive, &staging.path().join("unpacked"))?;
        let hash = bag_content_hash(&bag)?;
        match &known {
            Some(k) if *k != hash => {
                return Err(LakeError::DigestMismatch { what: format!("{minid} bag"), expected: k.clone(), actual: hash })
            }
            Some(_) => {}
            None => {
                guard = Some(self.lock(&hash)?);
                if let Some(bag) = self.check(&hash)? {
                    return Ok(bag);
                }
            }
        }
        let _guard = guard;
        let dir = self.entry_dir(&hash);
        self.evict(&hash)?;
        let mut entry = CacheEntry {
            bag_hash: hash.clone(),
            local_path: dir.join("bag"),
            state: EntryState::Downloading,
            last_used: now(),
            bytes: 0,
        };
        self.write_state(&entry)?;

        for f in &bag.fetch {
            if let Some(sha) = bag.manifest_digest(&f.path) {
                let cached = self.asset_path(sha);
                if cached.exists() {
                    link_or_copy(&cached, &bag.root.join(&f.path))?;
                }
            }
        }
        let report = resolve_fetch(&bag, fetcher);
        if !report.is_ok() {
            let failed: Vec<String> =
                report.failures().map(|o| format!("{}: {}", o.path, o.error.clone().unwrap_or_default())).collect();
            self.evict(&hash)?;
            return Err(LakeError::FetchFailed(failed.join("; ")));
        }
        let validation = validate_bag(&bag.root, ValidationMode::Valid);
        if !validation.is_ok() {
            self.evict(&hash)?;
            let issues: Vec<String> = validation.issues.iter().map(|i| format!("{}: {}", i.path, i.detail)).collect();
            return Err(LakeError::MaterializationFailed(issues.join("; ")));
        }
        for f in &bag.fetch {
            if let Some(sha) = bag.manifest_digest(&f.path) {
                let cached = self.asset_path(sha);
                if !cached.exists() {
                    link_or_copy(&bag.root.join(&f.path), &cached)?;
                }
            }
        }
        fs::create_dir_all(&dir)?;
        fs::rename(&bag.root, dir.join("bag"))?;
        entry.state = EntryState::Verified;
        entry.bytes = dir_size(&dir);
        entry.last_used = now();
        self.write_state(&entry)?;
        self.enforce_budget(&hash)?;
        Ok(dir.join("bag"))
    }

    fn enforce_budget(&self, keep: &str) -> Result<(), LakeError> {
        let Some(budget) = self.budget_bytes else { return Ok(()) };
        let mut entries: Vec<CacheEntry> =
            self.entries().into_iter().filter(|e| e.state == EntryState::Verified).collect();
        let mut total: u64 = entries.iter().map(|e| e.bytes).sum();
        entries.sort_by_key(|e| e.last_used);
        for e in entries {
            if total <= budget {
                break;
            }
            if e.bag_hash == keep {
                continue;
            }
            let f = OpenOptions::new()
                .create(true)
                .truncate(false)
                .write(true)
                .open(self.root.join(format!("{}.lock", e.bag_hash)))?;
            if f.try_lock().is_ok() {
                let _held = Held(f);
                self.evict(&e.bag_hash)?;
                total = total.saturating_sub(e.bytes);
            }
        }
        Ok(())
    }

    pub fn asset_path(&self, sha256: &str) -> PathBuf {
        self.root.join("assets").join(sha256)
    }

    /// Copies the file with digest `sha256` to `dest`, fetching `url` only
    /// when the digest is not cached yet.
    pub fn fetch_asset(&self, fetcher: &dyn Fetcher, url: &str, sha256: &str, dest: &Path) -> Result<(), LakeError> {
        let cached = self.asset_path(sha256);
        if cached.exists() {
            if sha256_file(&cached)?.0 == sha256 {
                copy_file(&cached, dest)?;
                return Ok(());
            }
            fs::remove_file(&cached)?;
        }
        let mut src = fetcher.fetch(url).map_err(|e| LakeError::FetchFailed(format!("{url}: {e}")))?;
        let mut tmp = tempfile::NamedTempFile::new_in(self.root.join("staging"))?;
        let (sha, _) = copy_hashing(&mut src, tmp.as_file_mut())?;
        if sha != sha256 {
            return Err(LakeError::DigestMismatch { what: url.to_string(), expected: sha256.to_string(), actual: sha });
        }
        tmp.persist(&cached).map_err(|e| e.error)?;
        copy_file(&cached, dest)?;
        Ok(())
    }
}
