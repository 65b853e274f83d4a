//! Minids: lightweight persistent identifiers binding a content digest to
//! locations and metadata. The registry is an append-only JSON-lines journal
//! replayed at startup.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, PoisonError, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::catalog::acl::{authorize, AccessDecision, Action, Principal, RecordContext, ReleaseState};
use crate::rid::{encode_base32, RidMinter};
use crate::util::{is_sha256_hex, now};

pub const SCHEME: &str = "minid:";
const SUFFIX_WIDTH: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum MinidError {
    #[error("malformed digest {0:?}")]
    InvalidDigest(String),
    #[error("a minid needs at least one location")]
    NoLocations,
    #[error("unknown identifier {0}")]
    UnknownIdentifier(String),
    #[error("{0} is tombstoned")]
    Tombstoned(String),
    #[error("access denied ({})", .0.rule)]
    AccessDenied(AccessDecision),
    #[error("minid journal: {0}")]
    Io(#[from] io::Error),
    #[error("minid journal entry: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MinidStatus {
    Active,
    Tombstoned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Minid {
    pub identifier: String,
    pub content_sha256: String,
    pub locations: Vec<String>,
    pub title: String,
    pub creator: String,
    pub created_at: DateTime<Utc>,
    pub status: MinidStatus,
    /// Extensible key/value metadata (e.g. `bag_hash`).
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Minid {
    pub fn is_active(&self) -> bool {
        self.status == MinidStatus::Active
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Mint { minid: Minid, counter: u64 },
    Locations { identifier: String, locations: Vec<String>, at: DateTime<Utc> },
    Tombstone { identifier: String, at: DateTime<Utc> },
}

pub struct MinidRegistry {
    minter: Arc<RidMinter>,
    records: RwLock<BTreeMap<String, Minid>>,
    journal: Mutex<Option<File>>,
    path: Option<PathBuf>,
}

impl std::fmt::Debug for MinidRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MinidRegistry").field("path", &self.path).finish_non_exhaustive()
    }
}

impl MinidRegistry {
    pub fn in_memory(minter: Arc<RidMinter>) -> Self {
        MinidRegistry { minter, records: RwLock::default(), journal: Mutex::new(None), path: None }
    }

    /// Replays the journal at `path` (created if absent).
    pub fn open(path: &Path, minter: Arc<RidMinter>) -> Result<Self, MinidError> {
        let mut records = BTreeMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str(&line)? {
                    Event::Mint { minid, counter } => {
                        minter.observe(counter);
                        records.insert(minid.identifier.clone(), minid);
                    }
                    Event::Locations { identifier, locations, .. } => {
                        if let Some(m) = records.get_mut(&identifier) {
                            m.locations = locations;
                        }
                    }
                    Event::Tombstone { identifier, .. } => {
                        if let Some(m) = records.get_mut(&identifier) {
                            m.status = MinidStatus::Tombstoned;
                            m.locations.clear();
                        }
                    }
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(MinidRegistry {
            minter,
            records: RwLock::new(records),
            journal: Mutex::new(Some(file)),
            path: Some(path.to_path_buf()),
        })
    }

    fn append(&self, event: &Event) -> Result<(), MinidError> {
        let mut journal = self.journal.lock().unwrap_or_else(PoisonError::into_inner);
        if let Some(f) = journal.as_mut() {
            let mut line = serde_json::to_vec(event)?;
            line.push(b'\n');
            f.write_all(&line)?;
            f.sync_data()?;
        }
        Ok(())
    }

    pub fn mint(
        &self,
        principal: &Principal,
        content_sha256: &str,
        locations: Vec<String>,
        title: &str,
        metadata: BTreeMap<String, String>,
    ) -> Result<Minid, MinidError> {
        let d = authorize(principal, Action::Create, None);
        if !d.allowed {
            return Err(MinidError::AccessDenied(d));
        }
        if !is_sha256_hex(content_sha256) {
            return Err(MinidError::InvalidDigest(content_sha256.to_string()));
        }
        if locations.is_empty() {
            return Err(MinidError::NoLocations);
        }
        let mut records = self.records.write().unwrap_or_else(PoisonError::into_inner);
        let counter = self.minter.mint_counter();
        let minid = Minid {
            identifier: format!("{SCHEME}{:0>SUFFIX_WIDTH$}", encode_base32(counter)),
            content_sha256: content_sha256.to_string(),
            locations,
            title: title.to_string(),
            creator: principal.id.clone(),
            created_at: now(),
            status: MinidStatus::Active,
            metadata,
        };
        self.append(&Event::Mint { minid: minid.clone(), counter })?;
        records.insert(minid.identifier.clone(), minid.clone());
        Ok(minid)
    }

    pub fn resolve(&self, identifier: &str) -> Result<Minid, MinidError> {
        self.records
            .read()
            .unwrap_or_else(PoisonError::into_inner)
            .get(identifier)
            .cloned()
            .ok_or_else(|| MinidError::UnknownIdentifier(identifier.to_string()))
    }

    /// All identifiers, in mint order.
    pub fn list(&self) -> Vec<Minid> {
        let mut all: Vec<Minid> = self.records.read().unwrap_or_else(PoisonError::into_inner).values().cloned().collect();
        all.sort_by(|a, b| a.identifier.cmp(&b.identifier));
        all
    }

    fn modify(
        &self,
        principal: &Principal,
        identifier: &str,
        event: impl FnOnce() -> Event,
        apply: impl FnOnce(&mut Minid),
    ) -> Result<Minid, MinidError> {
        let mut records = self.records.write().unwrap_or_else(PoisonError::into_inner);
        let m = records.get_mut(identifier).ok_or_else(|| MinidError::UnknownIdentifier(identifier.to_string()))?;
        let ctx = RecordContext { created_by: &m.creator, release: ReleaseState::Released };
        let d = authorize(principal, Action::Update, Some(ctx));
        if !d.allowed {
            return Err(MinidError::AccessDenied(d));
        }
        if !m.is_active() {
            return Err(MinidError::Tombstoned(identifier.to_string()));
        }
        self.append(&event())?;
        apply(m);
        Ok(m.clone())
    }

    /// Replaces the locations; only the creator or a curator may do so.
    pub fn update_locations(
        &self,
        principal: &Principal,
        identifier: &str,
        locations: Vec<String>,
    ) -> Result<Minid, MinidError> {
        if locations.is_empty() {
            return Err(MinidError::NoLocations);
        }
        let ev_locations = locations.clone();
        self.modify(
            principal,
            identifier,
            || Event::Locations { identifier: identifier.to_string(), locations: ev_locations, at: now() },
            |m| m.locations = locations,
        )
    }

    pub fn tombstone(&self, principal: &Principal, identifier: &str) -> Result<Minid, MinidError> {
        self.modify(
            principal,
            identifier,
            || Event::Tombstone { identifier: identifier.to_string(), at: now() },
            |m| {
                m.status = MinidStatus::Tombstoned;
                m.locations.clear();
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::acl::Role;

    #[test]
    fn identifiers_have_ten_char_suffix() {
        let reg = MinidRegistry::in_memory(Arc::new(RidMinter::default()));
        let alice = Principal::new("alice", Role::Writer);
        let m = reg.mint(&alice, &"a".repeat(64), vec!["http://x/1".into()], "t", BTreeMap::new()).unwrap();
        assert_eq!(m.identifier, "minid:0000000001");
    }
}
