use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::catalog::acl::Principal;
use crate::catalog::Mutation;
use crate::erm::ValueKind;
use crate::lake::{Lake, LakeError};
use crate::rid::Rid;
use crate::store::validate_path;
use crate::util::sha256_file;

pub const MANIFEST_COLUMNS: [&str; 3] = ["local_path", "store_path", "entity_type"];

/// One manifest row: a local file, where it goes, and its catalog record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestRow {
    pub line: usize,
    pub local_path: PathBuf,
    pub store_path: String,
    pub entity_type: String,
    pub values: BTreeMap<String, String>,
}

/// Reads a CSV manifest with a header row. Relative local paths are taken
/// from `base_dir`; columns other than the three fixed ones are attribute
/// values, and empty cells are left unset.
pub fn read_manifest<R: Read>(input: R, base_dir: &Path) -> Result<Vec<ManifestRow>, LakeError> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers().map_err(std::io::Error::other)?.clone();
    for c in MANIFEST_COLUMNS {
        if !headers.iter().any(|h| h == c) {
            return Err(LakeError::InvalidState(format!("manifest lacks column {c}")));
        }
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(std::io::Error::other)?;
        let mut row = ManifestRow {
            line: i + 2,
            local_path: PathBuf::new(),
            store_path: String::new(),
            entity_type: String::new(),
            values: BTreeMap::new(),
        };
        for (h, v) in headers.iter().zip(record.iter()) {
            match h {
                "local_path" => row.local_path = base_dir.join(v),
                "store_path" => row.store_path = v.to_string(),
                "entity_type" => row.entity_type = v.to_string(),
                _ if v.is_empty() => {}
                _ => {
                    row.values.insert(h.to_string(), v.to_string());
                }
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Converts a manifest cell to the JSON value of an attribute.
pub fn parse_cell(kind: ValueKind, text: &str) -> Result<Value, String> {
    let bad = |what: &str| format!("{text:?} is not {what}");
    match kind {
        ValueKind::Integer => text.trim().parse::<i64>().map(Value::from).map_err(|_| bad("an integer")),
        ValueKind::Float => text.trim().parse::<f64>().map(Value::from).map_err(|_| bad("a number")),
        ValueKind::Boolean => match text.trim().to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" => Ok(Value::Bool(true)),
            "false" | "no" | "0" => Ok(Value::Bool(false)),
            _ => Err(bad("a boolean")),
        },
        ValueKind::Json => serde_json::from_str(text).map_err(|_| bad("JSON")),
        ValueKind::Text | ValueKind::Timestamp | ValueKind::RidRef | ValueKind::TermRef => Ok(Value::from(text)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum RowStatus {
    Uploaded,
    /// The same content was already uploaded to the same path.
    Skipped,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowOutcome {
    pub line: usize,
    pub local_path: PathBuf,
    pub store_path: String,
    pub rid: Option<Rid>,
    pub version_id: Option<String>,
    pub status: RowStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ManifestReport {
    pub rows: Vec<RowOutcome>,
}

impl ManifestReport {
    pub fn failed(&self) -> usize {
        self.rows.iter().filter(|r| matches!(r.status, RowStatus::Failed(_))).count()
    }

    pub fn count(&self, status: &RowStatus) -> usize {
        self.rows.iter().filter(|r| &r.status == status).count()
    }
}

fn upload_row(lake: &Lake, principal: &Principal, row: &ManifestRow) -> Result<(Rid, String, bool), LakeError> {
    let catalog = lake.catalog();
    let model = catalog.model();
    let t = model.resolve(&row.entity_type)?;
    let def = model.entity_type(&t).expect("resolved");
    if !def.is_asset {
        return Err(LakeError::TypeMismatch(format!("{t} is not an asset type")));
    }
    validate_path(&row.store_path)?;
    let mut values = BTreeMap::new();
    for (name, text) in &row.values {
        let attr = def
            .attribute(name)
            .ok_or_else(|| LakeError::TypeMismatch(format!("{t} has no attribute {name}")))?;
        let v = parse_cell(attr.value_kind, text).map_err(|m| LakeError::TypeMismatch(format!("{name}: {m}")))?;
        values.insert(name.clone(), v);
    }
    let (sha, len) = sha256_file(&row.local_path)?;
    let existing = catalog.scan(&t).into_iter().find(|r| {
        r.text("SHA256") == Some(sha.as_str())
            && r.text("URL").and_then(|u| lake.parse_store_url(u)).is_some_and(|(p, _)| p == row.store_path)
    });
    if let Some(r) = existing {
        let version = r.text("URL").and_then(|u| lake.parse_store_url(u)).and_then(|(_, v)| v).unwrap_or("");
        return Ok((r.rid, version.to_string(), true));
    }
    let store = lake.store();
    let current = store.head(&row.store_path, None).ok().filter(|v| v.content_sha256 == sha && !v.deleted);
    let version_id = match current {
        Some(v) => v.version_id,
        None => {
            let parent = &row.store_path[..row.store_path.rfind('/').expect("validated")];
            if !parent.is_empty() {
                store.ensure_namespace(principal, parent)?;
            }
            let mut f = File::open(&row.local_path)?;
            store.put(principal, &row.store_path, &mut f, Some(&sha), "application/octet-stream")?.version_id
        }
    };
    let filename = row.local_path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    values.entry("Filename".into()).or_insert(Value::from(filename));
    values.insert("URL".into(), Value::from(lake.store_url(&row.store_path, &version_id)));
    values.insert("Length".into(), Value::from(len));
    values.insert("SHA256".into(), Value::from(sha));
    let rid = catalog.apply(principal, vec![Mutation::insert(&t, values)])?[0];
    Ok((rid, version_id, false))
}

/// Uploads every row: store put, then the paired asset record. A row whose
/// content already sits at its target with a record is skipped, so a rerun
/// retries only what failed. Rows run on up to `jobs` threads.
pub fn upload_manifest(
    lake: &Lake,
    principal: &Principal,
    rows: &[ManifestRow],
    jobs: usize,
) -> Result<ManifestReport, LakeError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| LakeError::InvalidState(e.to_string()))?;
    let outcomes: Vec<RowOutcome> = pool.install(|| {
        rows.par_iter()
            .map(|row| {
                let mut out = RowOutcome {
                    line: row.line,
                    local_path: row.local_path.clone(),
                    store_path: row.store_path.clone(),
                    rid: None,
                    version_id: None,
                    status: RowStatus::Uploaded,
                };
                match upload_row(lake, principal, row) {
                    Ok((rid, version, skipped)) => {
                        out.rid = Some(rid);
                        out.version_id = Some(version);
                        if skipped {
                            out.status = RowStatus::Skipped;
                        }
                    }
                    Err(e) => out.status = RowStatus::Failed(e.to_string()),
                }
                out
            })
            .collect()
    });
    Ok(ManifestReport { rows: outcomes })
}
