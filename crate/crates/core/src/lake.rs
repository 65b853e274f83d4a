//! A lake bundles one catalog, object store, minid registry and token
//! registry under a root directory, all drawing identifiers from a single
//! counter.

use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::sync::{Arc, PoisonError, RwLock};

use serde::{Deserialize, Serialize};

use crate::bag::{BagError, Fetcher};
use crate::catalog::acl::{AuthError, Principal, TokenRegistry};
use crate::catalog::{Catalog, CatalogError};
use crate::erm::SchemaError;
use crate::minid::{MinidError, MinidRegistry, SCHEME};
use crate::rid::{Rid, RidMinter};
use crate::store::{ObjectStore, Store, StoreError};
use crate::util::write_atomic;

pub const DEFAULT_BASE_URL: &str = "http://localhost:7878";

/// Errors of the operations that span several components.
#[derive(Debug, thiserror::Error)]
pub enum LakeError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Minid(#[from] MinidError),
    #[error(transparent)]
    Bag(#[from] BagError),
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error("{0} is not a lake (missing lake.json)")]
    NotALake(PathBuf),
    #[error("a lake already exists at {0}")]
    AlreadyExists(PathBuf),
    #[error("lake {0} is in use by another process")]
    Busy(PathBuf),
    #[error("working directory {0} is not empty")]
    WorkdirNotEmpty(PathBuf),
    #[error("dataset membership is empty")]
    EmptyMembership,
    #[error("member {rid} is a {found}, expected {expected}")]
    WrongMemberType { rid: Rid, found: String, expected: String },
    #[error("dataset {0} not found")]
    UnknownDataset(String),
    #[error("unknown dataset type {0:?}")]
    UnknownDatasetType(String),
    #[error("dataset {dataset} content drifted: stored {stored}, computed {computed}")]
    ChecksumDrift { dataset: Rid, stored: String, computed: String },
    #[error("cannot resolve {0}")]
    UnresolvableMinid(String),
    #[error("digest mismatch for {what}: expected {expected}, received {actual}")]
    DigestMismatch { what: String, expected: String, actual: String },
    #[error("fetch failed: {0}")]
    FetchFailed(String),
    #[error("member {0} carries more than one label")]
    NonDisjointLabels(Rid),
    #[error("invalid partition spec: {0}")]
    InvalidPartitionSpec(String),
    #[error("invalid checksum {0:?}")]
    InvalidChecksum(String),
    #[error("invalid execution config: {}", .0.join("; "))]
    ConfigInvalid(Vec<String>),
    #[error("materialization failed: {0}")]
    MaterializationFailed(String),
    #[error("execution handle is {0}")]
    InvalidState(String),
    #[error("workload of execution {execution} failed: {message}")]
    WorkloadFailed { execution: Rid, message: String },
    #[error("upload incomplete: {} file(s) failed", .0.failures().count())]
    PartialUpload(crate::provenance::UploadReport),
    #[error("unknown association {0}")]
    UnknownAssociation(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<SchemaError> for LakeError {
    fn from(e: SchemaError) -> Self {
        LakeError::Catalog(CatalogError::Schema(e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LakeConfig {
    pub prefix: String,
    pub base_url: String,
}

pub struct Lake {
    root: PathBuf,
    config: LakeConfig,
    catalog: Catalog,
    store: Arc<dyn Store>,
    minids: MinidRegistry,
    tokens: RwLock<TokenRegistry>,
    _lock: LockedFile,
}

/// Exclusive advisory lock on `lake.lock`, held while the lake is open so
/// two processes never write the same catalog snapshot.
struct LockedFile(std::fs::File);

impl LockedFile {
    fn acquire(root: &Path) -> Result<Self, LakeError> {
        let f = std::fs::OpenOptions::new().create(true).truncate(false).write(true).open(root.join("lake.lock"))?;
        match f.try_lock() {
            Ok(()) => Ok(LockedFile(f)),
            Err(std::fs::TryLockError::WouldBlock) => Err(LakeError::Busy(root.to_path_buf())),
            Err(std::fs::TryLockError::Error(e)) => Err(e.into()),
        }
    }
}

impl Drop for LockedFile {
    fn drop(&mut self) {
        let _ = self.0.unlock();
    }
}

impl std::fmt::Debug for Lake {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Lake").field("root", &self.root).field("config", &self.config).finish_non_exhaustive()
    }
}

impl Lake {
    /// Creates a new lake with a bootstrapped ML schema.
    pub fn init(root: &Path, prefix: &str, base_url: Option<&str>) -> Result<Lake, LakeError> {
        if root.join("lake.json").exists() {
            return Err(LakeError::AlreadyExists(root.to_path_buf()));
        }
        std::fs::create_dir_all(root)?;
        let lock = LockedFile::acquire(root)?;
        let config = LakeConfig {
            prefix: prefix.to_string(),
            base_url: base_url.unwrap_or(DEFAULT_BASE_URL).trim_end_matches('/').to_string(),
        };
        let minter = Arc::new(RidMinter::default());
        let catalog = Catalog::create(prefix, minter.clone(), Some(root.join("catalog.json")))?;
        catalog.bootstrap_ml_schema()?;
        TokenRegistry::default().save(&root.join("tokens.json"))?;
        write_atomic(&root.join("lake.json"), &serde_json::to_vec_pretty(&config)?)?;
        Ok(Lake {
            root: root.to_path_buf(),
            config,
            catalog,
            store: Arc::new(ObjectStore::open(&root.join("store"))?),
            minids: MinidRegistry::open(&root.join("minids.jsonl"), minter)?,
            tokens: RwLock::new(TokenRegistry::default()),
            _lock: lock,
        })
    }

    pub fn open(root: &Path) -> Result<Lake, LakeError> {
        let cfg = root.join("lake.json");
        if !cfg.exists() {
            return Err(LakeError::NotALake(root.to_path_buf()));
        }
        let lock = LockedFile::acquire(root)?;
        let config: LakeConfig = serde_json::from_slice(&std::fs::read(cfg)?)?;
        let minter = Arc::new(RidMinter::default());
        let minids = MinidRegistry::open(&root.join("minids.jsonl"), minter.clone())?;
        let catalog = Catalog::open(&root.join("catalog.json"), minter)?;
        let tokens = TokenRegistry::load(&root.join("tokens.json"))?;
        Ok(Lake {
            root: root.to_path_buf(),
            config,
            catalog,
            store: Arc::new(ObjectStore::open(&root.join("store"))?),
            minids,
            tokens: RwLock::new(tokens),
            _lock: lock,
        })
    }

    /// Swaps the object store, e.g. for a fault-injecting wrapper.
    pub fn with_store(mut self, store: Arc<dyn Store>) -> Lake {
        self.store = store;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &LakeConfig {
        &self.config
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn store(&self) -> &Arc<dyn Store> {
        &self.store
    }

    pub fn minids(&self) -> &MinidRegistry {
        &self.minids
    }

    pub fn authenticate(&self, token: &str) -> Result<Principal, LakeError> {
        Ok(self.tokens.read().unwrap_or_else(PoisonError::into_inner).authenticate(token)?)
    }

    pub fn add_token(&self, token: &str, principal: Principal) -> Result<(), LakeError> {
        let mut tokens = self.tokens.write().unwrap_or_else(PoisonError::into_inner);
        tokens.insert(token, principal);
        tokens.save(&self.root.join("tokens.json"))?;
        Ok(())
    }

    pub fn token_count(&self) -> usize {
        self.tokens.read().unwrap_or_else(PoisonError::into_inner).len()
    }

    pub fn store_url(&self, path: &str, version_id: &str) -> String {
        format!("{}/store{}?version={}", self.config.base_url, path, version_id)
    }

    /// Inverse of [`Lake::store_url`]: (object path, optional version).
    pub fn parse_store_url<'u>(&self, url: &'u str) -> Option<(&'u str, Option<&'u str>)> {
        let rest = url.strip_prefix(self.config.base_url.as_str())?.strip_prefix("/store")?;
        match rest.split_once("?version=") {
            Some((path, v)) => Some((path, Some(v))),
            None => Some((rest, None)),
        }
    }

    pub fn fetcher(&self) -> LakeFetcher<'_> {
        LakeFetcher { lake: self }
    }
}

/// Resolves this lake's store URLs and `minid:` identifiers locally.
#[derive(Clone, Copy)]
pub struct LakeFetcher<'a> {
    lake: &'a Lake,
}

impl Fetcher for LakeFetcher<'_> {
    fn fetch(&self, url: &str) -> io::Result<Box<dyn Read + Send>> {
        if url.starts_with(SCHEME) {
            let m = self.lake.minids.resolve(url).map_err(|e| io::Error::new(io::ErrorKind::NotFound, e.to_string()))?;
            let mut last = io::Error::new(io::ErrorKind::NotFound, format!("{url} has no locations"));
            for loc in m.locations.iter().filter(|l| !l.starts_with(SCHEME)) {
                match self.fetch(loc) {
                    Ok(r) => return Ok(r),
                    Err(e) => last = e,
                }
            }
            return Err(last);
        }
        let (path, version) = self
            .lake
            .parse_store_url(url)
            .ok_or_else(|| io::Error::new(io::ErrorKind::Unsupported, format!("no route to {url}")))?;
        let (_, reader) = self.lake.store.open(path, version).map_err(|e| match e {
            StoreError::Io(io) => io,
            other => io::Error::new(io::ErrorKind::NotFound, other.to_string()),
        })?;
        Ok(reader)
    }
}
