//! Versioned, checksummed object store.
//!
//! Layout under the root: `index.json` (namespaces and version metadata),
//! `objects/<sha256(path)>/<version_id>` (immutable bytes) and `staging/`.
//! Uploads are hashed while streaming into staging, then renamed into place
//! under the index lock; a version is visible only once the index commits.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, PoisonError};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::catalog::acl::{authorize_store, AccessDecision, Principal, StoreAction};
use crate::util::{copy_hashing, now, sha256_hex, write_atomic};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("checksum mismatch: declared {declared}, received {actual}")]
    ChecksumMismatch { declared: String, actual: String },
    #[error("namespace {0} does not exist")]
    NamespaceMissing(String),
    #[error("access denied ({})", .0.rule)]
    AccessDenied(AccessDecision),
    #[error("object {0} not found")]
    NotFound(String),
    #[error("object {0} has no version {1}")]
    VersionNotFound(String, String),
    #[error("object {} version {} was deleted", .0.path, .0.version_id)]
    Gone(Box<ObjectVersion>),
    #[error("invalid store path {0:?}")]
    InvalidPath(String),
    #[error("{0} already exists")]
    Conflict(String),
    #[error("store i/o: {0}")]
    Io(#[from] io::Error),
    #[error("store index: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectVersion {
    pub path: String,
    pub version_id: String,
    pub content_sha256: String,
    pub length: u64,
    pub content_type: String,
    pub created_by: String,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub deleted: bool,
}

/// Checks `/seg/seg/...` with each segment matching `[A-Za-z0-9._-]+`.
pub fn validate_path(path: &str) -> Result<Vec<&str>, StoreError> {
    let bad = || StoreError::InvalidPath(path.to_string());
    let rest = path.strip_prefix('/').ok_or_else(bad)?;
    let segments: Vec<&str> = rest.split('/').collect();
    for s in &segments {
        let ok = !s.is_empty()
            && *s != "."
            && *s != ".."
            && s.bytes().all(|b| b.is_ascii_alphanumeric() || b"._-".contains(&b));
        if !ok {
            return Err(bad());
        }
    }
    Ok(segments)
}

fn parent_of(path: &str) -> &str {
    match path.rfind('/') {
        Some(0) | None => "/",
        Some(i) => &path[..i],
    }
}

/// Operations shared by the on-disk store and test doubles.
pub trait Store: Send + Sync {
    fn put(
        &self,
        principal: &Principal,
        path: &str,
        reader: &mut dyn Read,
        declared_sha256: Option<&str>,
        content_type: &str,
    ) -> Result<ObjectVersion, StoreError>;

    /// Metadata of the named version, or the latest live one.
    fn head(&self, path: &str, version_id: Option<&str>) -> Result<ObjectVersion, StoreError>;

    fn open(&self, path: &str, version_id: Option<&str>) -> Result<(ObjectVersion, Box<dyn Read + Send>), StoreError>;

    fn delete(&self, principal: &Principal, path: &str, version_id: &str) -> Result<ObjectVersion, StoreError>;

    fn versions(&self, path: &str) -> Result<Vec<ObjectVersion>, StoreError>;

    fn create_namespace(&self, principal: &Principal, path: &str) -> Result<(), StoreError>;

    fn namespace_exists(&self, path: &str) -> bool;

    fn get(
        &self,
        principal: &Principal,
        path: &str,
        version_id: Option<&str>,
    ) -> Result<(ObjectVersion, Box<dyn Read + Send>), StoreError> {
        require(principal, StoreAction::Get)?;
        self.open(path, version_id)
    }

    /// Creates `path` and any missing ancestors.
    fn ensure_namespace(&self, principal: &Principal, path: &str) -> Result<(), StoreError> {
        let segments = validate_path(path)?;
        let mut current = String::new();
        for s in segments {
            current.push('/');
            current.push_str(s);
            if !self.namespace_exists(&current) {
                self.create_namespace(principal, &current)?;
            }
        }
        Ok(())
    }

    fn read_all(&self, path: &str, version_id: Option<&str>) -> Result<(ObjectVersion, Vec<u8>), StoreError> {
        let (v, mut r) = self.open(path, version_id)?;
        let mut buf = Vec::with_capacity(v.length as usize);
        r.read_to_end(&mut buf)?;
        Ok((v, buf))
    }
}

fn require(principal: &Principal, action: StoreAction) -> Result<(), StoreError> {
    let d = authorize_store(principal, action);
    if d.allowed {
        Ok(())
    } else {
        Err(StoreError::AccessDenied(d))
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Index {
    namespaces: BTreeSet<String>,
    objects: BTreeMap<String, Vec<ObjectVersion>>,
}

impl Index {
    fn select(&self, path: &str, version_id: Option<&str>) -> Result<&ObjectVersion, StoreError> {
        let versions = self.objects.get(path).ok_or_else(|| StoreError::NotFound(path.to_string()))?;
        let v = match version_id {
            Some(id) => versions
                .iter()
                .find(|v| v.version_id == id)
                .ok_or_else(|| StoreError::VersionNotFound(path.to_string(), id.to_string()))?,
            None => match versions.iter().rev().find(|v| !v.deleted) {
                Some(v) => v,
                None => versions.last().expect("objects are created with a version"),
            },
        };
        if v.deleted {
            return Err(StoreError::Gone(Box::new(v.clone())));
        }
        Ok(v)
    }
}

pub struct ObjectStore {
    root: PathBuf,
    index: Mutex<Index>,
}

impl std::fmt::Debug for ObjectStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObjectStore").field("root", &self.root).finish_non_exhaustive()
    }
}

impl ObjectStore {
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        fs::create_dir_all(root.join("objects"))?;
        fs::create_dir_all(root.join("staging"))?;
        let index_path = root.join("index.json");
        let index = if index_path.exists() {
            serde_json::from_slice(&fs::read(&index_path)?)?
        } else {
            Index::default()
        };
        Ok(ObjectStore { root: root.to_path_buf(), index: Mutex::new(index) })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Index> {
        self.index.lock().unwrap_or_else(PoisonError::into_inner)
    }

    fn blob_path(&self, path: &str, version_id: &str) -> PathBuf {
        self.root.join("objects").join(sha256_hex(path.as_bytes())).join(version_id)
    }

    fn save(&self, index: &Index) -> Result<(), StoreError> {
        write_atomic(&self.root.join("index.json"), &serde_json::to_vec(index)?)?;
        Ok(())
    }
}

impl Store for ObjectStore {
    fn put(
        &self,
        principal: &Principal,
        path: &str,
        reader: &mut dyn Read,
        declared_sha256: Option<&str>,
        content_type: &str,
    ) -> Result<ObjectVersion, StoreError> {
        require(principal, StoreAction::Put)?;
        validate_path(path)?;
        {
            let index = self.lock();
            if !index.namespaces.contains(parent_of(path)) && parent_of(path) != "/" {
                return Err(StoreError::NamespaceMissing(parent_of(path).to_string()));
            }
            if index.namespaces.contains(path) {
                return Err(StoreError::Conflict(format!("namespace {path}")));
            }
        }
        let mut staged = tempfile::NamedTempFile::new_in(self.root.join("staging"))?;
        let (digest, length) = copy_hashing(reader, staged.as_file_mut())?;
        staged.as_file().sync_all()?;
        if let Some(declared) = declared_sha256 {
            if !declared.eq_ignore_ascii_case(&digest) {
                return Err(StoreError::ChecksumMismatch { declared: declared.to_string(), actual: digest });
            }
        }
        let mut index = self.lock();
        let count = index.objects.get(path).map_or(0, Vec::len);
        let version = ObjectVersion {
            path: path.to_string(),
            version_id: format!("v{}", count + 1),
            content_sha256: digest,
            length,
            content_type: content_type.to_string(),
            created_by: principal.id.clone(),
            created_at: now(),
            deleted: false,
        };
        let blob = self.blob_path(path, &version.version_id);
        fs::create_dir_all(blob.parent().expect("blob has a parent"))?;
        staged.persist(&blob).map_err(|e| e.error)?;
        index.objects.entry(path.to_string()).or_default().push(version.clone());
        if let Err(e) = self.save(&index) {
            index.objects.get_mut(path).map(Vec::pop);
            let _ = fs::remove_file(&blob);
            return Err(e);
        }
        Ok(version)
    }

    fn head(&self, path: &str, version_id: Option<&str>) -> Result<ObjectVersion, StoreError> {
        self.lock().select(path, version_id).cloned()
    }

    fn open(&self, path: &str, version_id: Option<&str>) -> Result<(ObjectVersion, Box<dyn Read + Send>), StoreError> {
        let v = self.head(path, version_id)?;
        let file = File::open(self.blob_path(path, &v.version_id))?;
        Ok((v, Box::new(file)))
    }

    fn delete(&self, principal: &Principal, path: &str, version_id: &str) -> Result<ObjectVersion, StoreError> {
        require(principal, StoreAction::Delete)?;
        let mut index = self.lock();
        let v = index.select(path, Some(version_id))?.clone();
        let entry = index
            .objects
            .get_mut(path)
            .and_then(|vs| vs.iter_mut().find(|x| x.version_id == version_id))
            .expect("selected above");
        entry.deleted = true;
        if let Err(e) = self.save(&index) {
            if let Some(x) = index.objects.get_mut(path).and_then(|vs| vs.iter_mut().find(|x| x.version_id == version_id)) {
                x.deleted = false;
            }
            return Err(e);
        }
        let _ = fs::remove_file(self.blob_path(path, version_id));
        Ok(ObjectVersion { deleted: true, ..v })
    }

    fn versions(&self, path: &str) -> Result<Vec<ObjectVersion>, StoreError> {
        self.lock().objects.get(path).cloned().ok_or_else(|| StoreError::NotFound(path.to_string()))
    }

    fn create_namespace(&self, principal: &Principal, path: &str) -> Result<(), StoreError> {
        require(principal, StoreAction::Put)?;
        validate_path(path)?;
        let mut index = self.lock();
        let parent = parent_of(path);
        if parent != "/" && !index.namespaces.contains(parent) {
            return Err(StoreError::NamespaceMissing(parent.to_string()));
        }
        if index.objects.contains_key(path) {
            return Err(StoreError::Conflict(format!("object {path}")));
        }
        if index.namespaces.insert(path.to_string()) {
            if let Err(e) = self.save(&index) {
                index.namespaces.remove(path);
                return Err(e);
            }
        }
        Ok(())
    }

    fn namespace_exists(&self, path: &str) -> bool {
        path == "/" || self.lock().namespaces.contains(path)
    }
}
