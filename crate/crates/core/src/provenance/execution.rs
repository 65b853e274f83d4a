use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::{canonical_json, ExecutionConfig};
use super::dataset::find_dataset;
use crate::cache::DatasetCache;
use crate::catalog::acl::Principal;
use crate::catalog::record::Record;
use crate::catalog::Mutation;
use crate::lake::{Lake, LakeError};
use crate::rid::Rid;
use crate::util::{now, sha256_file, timestamp};
use crate::erm::TypeRef;
use crate::values;

pub const ASSETS_DIR: &str = "outputs/execution_assets";
pub const METADATA_DIR: &str = "outputs/execution_metadata";
pub const CONFIG_TYPE: &str = "Execution_Config";
pub const RUNTIME_TYPE: &str = "Runtime_Env";
pub const CONFIG_FILE: &str = "execution-config.json";
pub const RUNTIME_FILE: &str = "environment.json";

fn valid_checksum(s: &str) -> bool {
    (s.len() == 40 || s.len() == 64) && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

/// Registers a workflow, or returns the existing record for the same
/// (code URI, checksum) pair.
pub fn register_workflow(
    lake: &Lake,
    principal: &Principal,
    name: &str,
    workflow_type: &str,
    code_uri: &str,
    code_checksum: &str,
) -> Result<Rid, LakeError> {
    if !valid_checksum(code_checksum) {
        return Err(LakeError::InvalidChecksum(code_checksum.to_string()));
    }
    let t = TypeRef::ml("Workflow");
    let existing = lake
        .catalog()
        .scan(&t)
        .into_iter()
        .find(|r| r.text("URL") == Some(code_uri) && r.text("Checksum") == Some(code_checksum));
    if let Some(r) = existing {
        return Ok(r.rid);
    }
    let values = values! {
        "Name" => name,
        "Workflow_Type" => workflow_type,
        "URL" => code_uri,
        "Checksum" => code_checksum,
    };
    Ok(lake.catalog().apply(principal, vec![Mutation::insert(&t, values)])?[0])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDataset {
    pub minid: String,
    pub dataset_rid: Rid,
    pub bag_hash: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputAsset {
    pub rid: Rid,
    pub filename: String,
    pub sha256: String,
    pub path: PathBuf,
}

/// Local paths of every input, written to `inputs.json` for the workload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputManifest {
    pub execution_rid: Option<Rid>,
    pub working_dir: PathBuf,
    pub datasets: Vec<InputDataset>,
    pub assets: Vec<InputAsset>,
    /// Payload of the single input dataset, when there is exactly one.
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum HandleState {
    Initiated,
    Running,
    Terminal(String),
}

/// A single-use handle on one execution.
#[derive(Debug)]
pub struct ExecutionHandle {
    pub rid: Rid,
    pub workflow_rid: Rid,
    pub working_dir: PathBuf,
    pub config: ExecutionConfig,
    pub inputs: InputManifest,
    principal: Principal,
    state: HandleState,
}

impl ExecutionHandle {
    pub fn status(&self) -> &str {
        match &self.state {
            HandleState::Initiated => "initiated",
            HandleState::Running => "running",
            HandleState::Terminal(s) => s,
        }
    }
}

/// What the workload sees.
#[derive(Debug, Clone)]
pub struct ExecContext {
    pub execution_rid: Rid,
    pub working_dir: PathBuf,
    pub inputs_path: PathBuf,
    pub outputs_dir: PathBuf,
}

impl ExecContext {
    /// Environment variables injected into wrapped commands.
    pub fn env(&self) -> Vec<(String, String)> {
        vec![
            ("FAIRLAKE_EXECUTION_RID".into(), self.execution_rid.to_string()),
            ("FAIRLAKE_WORKDIR".into(), self.working_dir.display().to_string()),
            ("FAIRLAKE_INPUTS".into(), self.inputs_path.display().to_string()),
            ("FAIRLAKE_OUTPUTS".into(), self.outputs_dir.display().to_string()),
        ]
    }
}

fn copy_tree(src: &Path, dest: &Path) -> Result<(), LakeError> {
    for entry in walkdir::WalkDir::new(src) {
        let entry = entry.map_err(std::io::Error::other)?;
        let target = dest.join(entry.path().strip_prefix(src).expect("under src"));
        if entry.file_type().is_dir() {
            fs::create_dir_all(&target)?;
        } else if entry.file_type().is_file() {
            fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}

fn minid_dir_name(minid: &str) -> String {
    minid.replace(':', "-")
}

struct CheckedConfig {
    datasets: Vec<(String, Rid, String)>,
    assets: Vec<Record>,
}

fn check_config(lake: &Lake, config: &ExecutionConfig) -> Result<CheckedConfig, LakeError> {
    let mut errors = Vec::new();
    let w = &config.workflow;
    for (field, value) in [("workflow.name", &w.name), ("workflow.type", &w.workflow_type), ("workflow.code_uri", &w.code_uri)] {
        if value.trim().is_empty() {
            errors.push(format!("{field} is empty"));
        }
    }
    if !valid_checksum(&w.code_checksum) {
        errors.push(format!("workflow.code_checksum {:?} is not a hex digest", w.code_checksum));
    }
    let mut datasets = Vec::new();
    for (i, minid) in config.datasets.iter().enumerate() {
        match lake.minids().resolve(minid) {
            Ok(m) if !m.is_active() => errors.push(format!("datasets[{i}] {minid} is tombstoned")),
            Ok(m) => match m.metadata.get("dataset_rid").and_then(|r| r.parse::<Rid>().ok()) {
                Some(rid) => datasets.push((minid.clone(), rid, m.metadata.get("bag_hash").cloned().unwrap_or_default())),
                None => errors.push(format!("datasets[{i}] {minid} does not name a dataset")),
            },
            Err(_) => errors.push(format!("datasets[{i}] {minid} does not resolve")),
        }
    }
    let mut assets = Vec::new();
    for (i, a) in config.assets.iter().enumerate() {
        let found = a.parse::<Rid>().ok().and_then(|rid| lake.catalog().lookup(rid));
        match found {
            Some(r) if !r.deleted && r.entity_type == TypeRef::ml("Execution_Asset") => assets.push(r),
            _ => errors.push(format!("assets[{i}] {a} is not an execution asset")),
        }
    }
    if errors.is_empty() {
        Ok(CheckedConfig { datasets, assets })
    } else {
        Err(LakeError::ConfigInvalid(errors))
    }
}

/// Places every input dataset and asset under `working_dir` and writes
/// `inputs.json`.
fn materialize_inputs(
    lake: &Lake,
    cache: &DatasetCache,
    working_dir: &Path,
    execution_rid: Option<Rid>,
    datasets: &[(String, Rid, String)],
    assets: &[Record],
) -> Result<InputManifest, LakeError> {
    let fetcher = lake.fetcher();
    let mut manifest = InputManifest {
        execution_rid,
        working_dir: working_dir.to_path_buf(),
        datasets: Vec::new(),
        assets: Vec::new(),
        data_dir: None,
    };
    for (minid, rid, _) in datasets {
        let bag = cache
            .materialize(lake.minids(), &fetcher, minid)
            .map_err(|e| LakeError::MaterializationFailed(format!("{minid}: {e}")))?;
        let dest = working_dir.join("datasets").join(minid_dir_name(minid));
        let _ = fs::remove_dir_all(&dest);
        copy_tree(&bag.join("data"), &dest)?;
        let bag_hash = crate::bag::Bag::open(&bag)
            .and_then(|b| crate::bag::bag_content_hash(&b))
            .map_err(|e| LakeError::MaterializationFailed(e.to_string()))?;
        manifest.datasets.push(InputDataset { minid: minid.clone(), dataset_rid: *rid, bag_hash, path: dest });
    }
    if let [only] = manifest.datasets.as_slice() {
        let data = working_dir.join("data");
        let _ = fs::remove_dir_all(&data);
        copy_tree(&only.path, &data)?;
        manifest.data_dir = Some(data);
    }
    for r in assets {
        let filename = r.text("Filename").unwrap_or("asset").to_string();
        let sha = r.text("SHA256").unwrap_or_default().to_string();
        let dest = working_dir.join("assets").join(r.rid.to_string()).join(&filename);
        cache
            .fetch_asset(&fetcher, r.text("URL").unwrap_or_default(), &sha, &dest)
            .map_err(|e| LakeError::MaterializationFailed(format!("asset {}: {e}", r.rid)))?;
        manifest.assets.push(InputAsset { rid: r.rid, filename, sha256: sha, path: dest });
    }
    fs::write(working_dir.join("inputs.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Validates the config, materializes inputs through the cache, and creates
/// the execution record (status initiated) with its input links. The
/// working directory must be absent or empty.
pub fn execution_init(
    lake: &Lake,
    principal: &Principal,
    config: &ExecutionConfig,
    working_dir: &Path,
    cache: &DatasetCache,
) -> Result<ExecutionHandle, LakeError> {
    let checked = check_config(lake, config)?;
    if fs::read_dir(working_dir).is_ok_and(|mut d| d.next().is_some()) {
        return Err(LakeError::WorkdirNotEmpty(working_dir.to_path_buf()));
    }
    fs::create_dir_all(working_dir.join(ASSETS_DIR))?;
    fs::create_dir_all(working_dir.join(METADATA_DIR))?;
    let mut inputs = materialize_inputs(lake, cache, working_dir, None, &checked.datasets, &checked.assets)?;

    let w = &config.workflow;
    lake.catalog().ensure_term(principal, "Workflow_Type", &w.workflow_type, "")?;
    let workflow_rid = register_workflow(lake, principal, &w.name, &w.workflow_type, &w.code_uri, &w.code_checksum)?;
    let rid = lake.catalog().mint_rid();
    let mut batch = vec![Mutation::Insert {
        entity_type: TypeRef::ml("Execution"),
        rid: Some(rid),
        values: values! {
            "Workflow" => workflow_rid.to_string(),
            "User" => principal.id.clone(),
            "Status" => "initiated",
            "Description" => config.description.clone(),
        },
        release: None,
    }];
    for (minid, dataset, _) in &checked.datasets {
        batch.push(Mutation::insert(
            &TypeRef::ml("Execution_Dataset"),
            values! { "Execution" => rid.to_string(), "Dataset" => dataset.to_string(), "Minid" => minid },
        ));
    }
    for a in &checked.assets {
        batch.push(Mutation::insert(
            &TypeRef::ml("Execution_Asset_Link"),
            values! { "Execution" => rid.to_string(), "Execution_Asset" => a.rid.to_string(), "Role" => "input" },
        ));
    }
    lake.catalog().apply(principal, batch)?;

    inputs.execution_rid = Some(rid);
    fs::write(working_dir.join("inputs.json"), serde_json::to_vec_pretty(&inputs)?)?;
    let config_dir = working_dir.join(METADATA_DIR).join(CONFIG_TYPE);
    fs::create_dir_all(&config_dir)?;
    fs::write(config_dir.join(CONFIG_FILE), config.canonical_bytes())?;
    Ok(ExecutionHandle {
        rid,
        workflow_rid,
        working_dir: working_dir.to_path_buf(),
        config: config.clone(),
        inputs,
        principal: principal.clone(),
        state: HandleState::Initiated,
    })
}

const SECRET_MARKERS: [&str; 6] = ["TOKEN", "SECRET", "PASSWORD", "PASSWD", "KEY", "CREDENTIAL"];

fn runtime_log(started_at: &str, extra_env: &[(String, String)]) -> Value {
    let host = std::env::var("HOSTNAME")
        .ok()
        .or_else(|| fs::read_to_string("/proc/sys/kernel/hostname").ok())
        .map(|h| h.trim().to_string())
        .unwrap_or_default();
    let mut env: BTreeMap<String, String> = std::env::vars().collect();
    env.extend(extra_env.iter().cloned());
    let env: Vec<String> = env
        .into_iter()
        .map(|(k, v)| {
            let secret = SECRET_MARKERS.iter().any(|m| k.to_ascii_uppercase().contains(m));
            format!("{k}={}", if secret { "<redacted>" } else { &v })
        })
        .collect();
    serde_json::json!({
        "host": host,
        "os": format!("{}-{}", std::env::consts::OS, std::env::consts::ARCH),
        "started_at": started_at,
        "tool_versions": { "fairlake": env!("CARGO_PKG_VERSION") },
        "env": env,
    })
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "workload panicked".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionSummary {
    pub rid: Rid,
    pub status: String,
    pub status_detail: String,
    pub duration: f64,
}

/// Runs `workload` as the execution: running on entry, completed or failed
/// on exit, with timing and a runtime log recorded either way. A failing
/// workload is recorded and then reported as [`LakeError::WorkloadFailed`].
pub fn execution_scope<F>(lake: &Lake, handle: &mut ExecutionHandle, workload: F) -> Result<ExecutionSummary, LakeError>
where
    F: FnOnce(&ExecContext) -> Result<(), String>,
{
    if handle.state != HandleState::Initiated {
        return Err(LakeError::InvalidState(handle.status().to_string()));
    }
    let t = TypeRef::ml("Execution");
    let started_at = now();
    let clock = Instant::now();
    lake.catalog().apply(
        &handle.principal,
        vec![Mutation::Update {
            entity_type: t.clone(),
            rid: handle.rid,
            expected_stamp: None,
            values: values! { "Status" => "running", "Started_At" => timestamp(started_at) },
            release: None,
        }],
    )?;
    handle.state = HandleState::Running;
    let ctx = ExecContext {
        execution_rid: handle.rid,
        working_dir: handle.working_dir.clone(),
        inputs_path: handle.working_dir.join("inputs.json"),
        outputs_dir: handle.working_dir.join("outputs"),
    };
    let outcome = match catch_unwind(AssertUnwindSafe(|| workload(&ctx))) {
        Ok(r) => r,
        Err(p) => Err(panic_message(p)),
    };
    let elapsed = clock.elapsed();
    let stopped_at = started_at + chrono::Duration::from_std(elapsed).unwrap_or_default();

    let runtime_dir = handle.working_dir.join(METADATA_DIR).join(RUNTIME_TYPE);
    fs::create_dir_all(&runtime_dir)?;
    let log = runtime_log(&timestamp(started_at), &ctx.env());
    fs::write(runtime_dir.join(RUNTIME_FILE), serde_json::to_vec_pretty(&log)?)?;

    let (status, detail) = match &outcome {
        Ok(()) => ("completed", String::new()),
        Err(m) => ("failed", m.clone()),
    };
    let duration = elapsed.as_secs_f64();
    lake.catalog().apply(
        &handle.principal,
        vec![Mutation::Update {
            entity_type: t,
            rid: handle.rid,
            expected_stamp: None,
            values: values! {
                "Status" => status,
                "Status_Detail" => detail.clone(),
                "Stopped_At" => timestamp(stopped_at),
                "Duration" => duration,
            },
            release: None,
        }],
    )?;
    handle.state = HandleState::Terminal(status.to_string());
    match outcome {
        Ok(()) => Ok(ExecutionSummary { rid: handle.rid, status: status.into(), status_detail: detail, duration }),
        Err(message) => Err(LakeError::WorkloadFailed { execution: handle.rid, message }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Asset,
    Metadata,
}

impl OutputKind {
    fn entity_type(self) -> &'static str {
        match self {
            OutputKind::Asset => "Execution_Asset",
            OutputKind::Metadata => "Execution_Metadata",
        }
    }

    fn vocabulary(self) -> &'static str {
        match self {
            OutputKind::Asset => "Execution_Asset_Type",
            OutputKind::Metadata => "Execution_Metadata_Type",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UploadEntry {
    pub local_path: PathBuf,
    pub kind: OutputKind,
    pub asset_type: String,
    pub sha256: String,
    pub rid: Option<Rid>,
    pub store_path: Option<String>,
    pub version_id: Option<String>,
    /// Already uploaded by an earlier run.
    pub skipped: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UploadReport {
    pub entries: Vec<UploadEntry>,
}

impl UploadReport {
    pub fn failures(&self) -> impl Iterator<Item = &UploadEntry> {
        self.entries.iter().filter(|e| e.error.is_some())
    }

    pub fn uploaded(&self) -> impl Iterator<Item = &UploadEntry> {
        self.entries.iter().filter(|e| e.error.is_none())
    }
}

/// Maps a name onto the store's segment alphabet.
pub(crate) fn store_segment(s: &str) -> String {
    let out: String =
        s.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' }).collect();
    if out.is_empty() || out == "." || out == ".." {
        "_".repeat(out.len().max(1))
    } else {
        out
    }
}

fn relative(path: &Path, base: &Path) -> String {
    path.strip_prefix(base)
        .expect("under base")
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Uploads every file under the well-known output directories, typing each
/// by its first directory. Files already recorded with the same digest are
/// skipped, so a rerun after a partial failure only retries what failed.
pub fn execution_upload(lake: &Lake, handle: &ExecutionHandle) -> Result<UploadReport, LakeError> {
    if !matches!(handle.state, HandleState::Terminal(_)) {
        return Err(LakeError::InvalidState(handle.status().to_string()));
    }
    upload_outputs(lake, &handle.principal, handle.rid, &handle.working_dir)
}

pub(crate) fn upload_outputs(
    lake: &Lake,
    principal: &Principal,
    execution: Rid,
    working_dir: &Path,
) -> Result<UploadReport, LakeError> {
    let mut report = UploadReport::default();
    let mut terms_ready = BTreeSet::new();
    for kind in [OutputKind::Asset, OutputKind::Metadata] {
        let base = working_dir.join(match kind {
            OutputKind::Asset => ASSETS_DIR,
            OutputKind::Metadata => METADATA_DIR,
        });
        if !base.exists() {
            continue;
        }
        let t = TypeRef::ml(kind.entity_type());
        let existing: Vec<Record> =
            lake.catalog().scan(&t).into_iter().filter(|r| r.rid_ref("Execution") == Some(execution)).collect();
        let mut files: Vec<PathBuf> = walkdir::WalkDir::new(&base)
            .into_iter()
            .filter_map(Result::ok)
            .filter(|e| e.file_type().is_file())
            .map(|e| e.into_path())
            .collect();
        files.sort();
        for file in files {
            let rel = relative(&file, &base);
            let mut entry = UploadEntry {
                local_path: file.clone(),
                kind,
                asset_type: String::new(),
                sha256: String::new(),
                rid: None,
                store_path: None,
                version_id: None,
                skipped: false,
                error: None,
            };
            let result = (|| -> Result<(), LakeError> {
                let (asset_type, filename) = rel
                    .split_once('/')
                    .ok_or_else(|| LakeError::InvalidState(format!("{rel} is not inside a type directory")))?;
                entry.asset_type = asset_type.to_string();
                let (sha, len) = sha256_file(&file)?;
                entry.sha256 = sha.clone();
                let type_attr = kind.vocabulary();
                if let Some(done) = existing.iter().find(|r| {
                    r.text(type_attr) == Some(asset_type)
                        && r.text("Filename") == Some(filename)
                        && r.text("SHA256") == Some(sha.as_str())
                }) {
                    entry.rid = Some(done.rid);
                    entry.version_id = done.text("Version_Id").map(str::to_string);
                    entry.skipped = true;
                    return Ok(());
                }
                if terms_ready.insert((kind, asset_type.to_string())) {
                    lake.catalog().ensure_term(principal, kind.vocabulary(), asset_type, "")?;
                }
                let dir = format!(
                    "/ml/executions/{}/{}/{}",
                    store_segment(&execution.to_string()),
                    match kind {
                        OutputKind::Asset => "assets",
                        OutputKind::Metadata => "metadata",
                    },
                    store_segment(asset_type)
                );
                let segments: Vec<String> = filename.split('/').map(store_segment).collect();
                let path = format!("{dir}/{}", segments.join("/"));
                let parent = &path[..path.rfind('/').expect("absolute")];
                let store = lake.store();
                store.ensure_namespace(principal, parent)?;
                let mut f = fs::File::open(&file)?;
                let version = store.put(principal, &path, &mut f, Some(&sha), "application/octet-stream")?;
                entry.store_path = Some(path.clone());
                entry.version_id = Some(version.version_id.clone());
                let rid = lake.catalog().mint_rid();
                let mut batch = vec![Mutation::Insert {
                    entity_type: t.clone(),
                    rid: Some(rid),
                    values: values! {
                        "URL" => lake.store_url(&path, &version.version_id),
                        "Filename" => filename,
                        "Length" => len,
                        "SHA256" => sha.clone(),
                        type_attr => asset_type,
                        "Execution" => execution.to_string(),
                        "Version_Id" => version.version_id.clone(),
                    },
                    release: None,
                }];
                if kind == OutputKind::Asset {
                    batch.push(Mutation::insert(
                        &TypeRef::ml("Execution_Asset_Link"),
                        values! { "Execution" => execution.to_string(), "Execution_Asset" => rid.to_string(), "Role" => "output" },
                    ));
                }
                lake.catalog().apply(principal, batch)?;
                entry.rid = Some(rid);
                Ok(())
            })();
            if let Err(e) = result {
                entry.error = Some(e.to_string());
            }
            report.entries.push(entry);
        }
    }
    if report.failures().next().is_some() {
        return Err(LakeError::PartialUpload(report));
    }
    Ok(report)
}

/// Records that an execution asset relates to a domain record through the
/// association type `association`.
pub fn link_asset(
    lake: &Lake,
    principal: &Principal,
    asset: Rid,
    domain_record: Rid,
    association: &str,
) -> Result<Rid, LakeError> {
    let model = lake.catalog().model();
    let assoc = model.resolve(association).map_err(|_| LakeError::UnknownAssociation(association.to_string()))?;
    let def = model.entity_type(&assoc).expect("resolved");
    let asset_t = TypeRef::ml("Execution_Asset");
    let asset_fk = def
        .foreign_keys
        .iter()
        .find(|fk| fk.target() == asset_t)
        .ok_or_else(|| LakeError::UnknownAssociation(format!("{association} does not reference Execution_Asset")))?;
    match lake.catalog().lookup(asset) {
        Some(r) if !r.deleted && r.entity_type == asset_t => {}
        _ => return Err(LakeError::TypeMismatch(format!("{asset} is not an execution asset"))),
    }
    let target = lake
        .catalog()
        .lookup(domain_record)
        .filter(|r| !r.deleted)
        .ok_or_else(|| LakeError::TypeMismatch(format!("{domain_record} does not exist")))?;
    let domain_fk = def
        .foreign_keys
        .iter()
        .find(|fk| fk.target() == target.entity_type && fk.from != asset_fk.from)
        .ok_or_else(|| {
            LakeError::TypeMismatch(format!("{association} does not reference {}", target.entity_type))
        })?;
    let values = values! { asset_fk.from.clone() => asset.to_string(), domain_fk.from.clone() => domain_record.to_string() };
    Ok(lake.catalog().apply(principal, vec![Mutation::insert(&assoc, values)])?[0])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetUse {
    pub dataset_rid: Rid,
    pub minid: String,
    pub bag_hash: String,
}

/// Everything the catalog knows about one execution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutionProvenance {
    pub execution: Record,
    pub workflow: Record,
    pub datasets: Vec<DatasetUse>,
    pub input_assets: Vec<Record>,
    pub output_assets: Vec<Record>,
    pub metadata: Vec<Record>,
}

impl ExecutionProvenance {
    pub fn status(&self) -> &str {
        self.execution.text("Status").unwrap_or_default()
    }

    pub fn metadata_of_type(&self, t: &str) -> Option<&Record> {
        self.metadata.iter().find(|r| r.text("Execution_Metadata_Type") == Some(t))
    }
}

pub fn execution_provenance(lake: &Lake, rid: Rid) -> Result<ExecutionProvenance, LakeError> {
    let catalog = lake.catalog();
    let execution = catalog
        .lookup(rid)
        .filter(|r| r.entity_type == TypeRef::ml("Execution"))
        .ok_or_else(|| LakeError::Catalog(crate::catalog::CatalogError::NotFound(format!("execution {rid}"))))?;
    let workflow = execution
        .rid_ref("Workflow")
        .and_then(|w| catalog.lookup(w))
        .ok_or_else(|| LakeError::Catalog(crate::catalog::CatalogError::NotFound(format!("workflow of {rid}"))))?;
    let of_execution = |t: &str| -> Vec<Record> {
        catalog.scan(&TypeRef::ml(t)).into_iter().filter(|r| r.rid_ref("Execution") == Some(rid)).collect()
    };
    let datasets = of_execution("Execution_Dataset")
        .into_iter()
        .filter_map(|r| {
            let minid = r.text("Minid")?.to_string();
            let bag_hash = lake.minids().resolve(&minid).ok()?.metadata.get("bag_hash").cloned().unwrap_or_default();
            Some(DatasetUse { dataset_rid: r.rid_ref("Dataset")?, minid, bag_hash })
        })
        .collect();
    let links = of_execution("Execution_Asset_Link");
    let linked = |role: &str| -> Vec<Record> {
        links
            .iter()
            .filter(|l| l.text("Role") == Some(role))
            .filter_map(|l| catalog.lookup(l.rid_ref("Execution_Asset")?))
            .collect()
    };
    Ok(ExecutionProvenance {
        input_assets: linked("input"),
        output_assets: linked("output"),
        metadata: of_execution("Execution_Metadata"),
        datasets,
        workflow,
        execution,
    })
}

/// Rebuilds the inputs of a recorded execution under `dest` using only the
/// catalog, store and registry: the stored configuration names the exact
/// dataset minids and input assets.
pub fn restore_inputs(lake: &Lake, cache: &DatasetCache, rid: Rid, dest: &Path) -> Result<InputManifest, LakeError> {
    let prov = execution_provenance(lake, rid)?;
    let datasets: Vec<(String, Rid, String)> =
        prov.datasets.iter().map(|d| (d.minid.clone(), d.dataset_rid, d.bag_hash.clone())).collect();
    for d in &datasets {
        find_dataset(lake, &d.0)?;
    }
    fs::create_dir_all(dest)?;
    materialize_inputs(lake, cache, dest, Some(rid), &datasets, &prov.input_assets)
}

/// Reads the configuration an execution recorded as metadata.
pub fn recorded_config(lake: &Lake, rid: Rid) -> Result<ExecutionConfig, LakeError> {
    let prov = execution_provenance(lake, rid)?;
    let rec = prov
        .metadata_of_type(CONFIG_TYPE)
        .ok_or_else(|| LakeError::Catalog(crate::catalog::CatalogError::NotFound(format!("config of {rid}"))))?;
    let url = rec.text("URL").unwrap_or_default();
    let (path, version) = lake.parse_store_url(url).ok_or_else(|| LakeError::FetchFailed(url.to_string()))?;
    let (_, bytes) = lake.store().read_all(path, version)?;
    let config = ExecutionConfig::parse(&bytes)?;
    debug_assert_eq!(canonical_json(&serde_json::from_slice(&bytes)?).as_bytes(), bytes.as_slice());
    Ok(config)
}
