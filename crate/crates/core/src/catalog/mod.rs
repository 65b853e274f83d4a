//! The metadata catalog: model introspection, record CRUD and queries with
//! self-curation access control on every call.
//!
//! All state sits behind one `RwLock`. Model changes and record batches take
//! the write lock, so a model change waits for in-flight queries to drain and
//! every batch is applied atomically (an undo log restores the prior state if
//! any record in the batch fails). Optimistic concurrency is per record via
//! its `Stamp`.

pub mod acl;
pub mod query;
pub mod record;
pub mod validate;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, PoisonError, RwLock, RwLockReadGuard, RwLockWriteGuard};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::erm::{Model, ModelChange, SchemaChange, SchemaDef, SchemaError, TypeRef};
use crate::rid::{Rid, RidMinter};
use crate::util::{now, sha256_hex, write_atomic};
use acl::{authorize, AccessDecision, Action, Principal, ReleaseState};
use query::{QuerySpec, RecordPage};
use record::Record;
use validate::ValidationReport;

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("access denied ({})", .0.rule)]
    AccessDenied(AccessDecision),
    #[error("validation failed for {} record(s){}", .0.len(), first_violation(.0))]
    ValidationFailed(Vec<RecordReport>),
    #[error("stale write on {0}")]
    StaleWrite(Rid),
    #[error("record {0} not found")]
    NotFound(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("duplicate vocabulary term {0:?}")]
    DuplicateTerm(String),
    #[error("{0} is not a vocabulary")]
    NotAVocabulary(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("catalog persistence: {0}")]
    Io(#[from] std::io::Error),
    #[error("catalog snapshot: {0}")]
    Json(#[from] serde_json::Error),
}

/// Violations for one record of a failed batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordReport {
    pub index: usize,
    pub rid: Option<Rid>,
    pub violations: ValidationReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyTerm {
    pub rid: Rid,
    pub name: String,
    pub synonyms: Vec<String>,
    pub description: String,
    pub curie: String,
}

impl VocabularyTerm {
    fn from_record(r: &Record) -> Self {
        VocabularyTerm {
            rid: r.rid,
            name: r.text("Name").unwrap_or_default().to_string(),
            synonyms: synonyms_of(&r.values),
            description: r.text("Description").unwrap_or_default().to_string(),
            curie: r.text("ID").unwrap_or_default().to_string(),
        }
    }
}

fn synonyms_of(values: &BTreeMap<String, Value>) -> Vec<String> {
    values
        .get("Synonyms")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
        .unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabularyListing {
    pub entity_type: TypeRef,
    pub terms: Vec<VocabularyTerm>,
}

/// Machine-readable description of everything a client needs to render the
/// catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub model_version: u64,
    pub prefix: String,
    pub schemas: Vec<SchemaDef>,
    pub dataset_link: Option<TypeRef>,
    pub vocabularies: Vec<VocabularyListing>,
    pub annotations: BTreeMap<String, String>,
    pub history: Vec<ModelChange>,
}

impl ModelDocument {
    pub fn domain(&self) -> Option<&SchemaDef> {
        self.schemas.iter().find(|s| s.kind == crate::erm::SchemaKind::Domain)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mutation {
    Insert { entity_type: TypeRef, rid: Option<Rid>, values: BTreeMap<String, Value>, release: Option<ReleaseState> },
    Update {
        entity_type: TypeRef,
        rid: Rid,
        expected_stamp: Option<u64>,
        values: BTreeMap<String, Value>,
        release: Option<ReleaseState>,
    },
    Delete { entity_type: TypeRef, rid: Rid, expected_stamp: Option<u64> },
}

impl Mutation {
    pub fn insert(entity_type: &TypeRef, values: BTreeMap<String, Value>) -> Self {
        Mutation::Insert { entity_type: entity_type.clone(), rid: None, values, release: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationOp {
    Insert,
    Update,
    Delete,
}

#[derive(Debug, Default)]
pub(crate) struct CatalogState {
    pub(crate) model: Model,
    pub(crate) records: BTreeMap<TypeRef, BTreeMap<Rid, Record>>,
    pub(crate) index: HashMap<Rid, TypeRef>,
    pub(crate) term_counter: u64,
    pub(crate) annotations: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    prefix: String,
    last_rid: u64,
    model: Model,
    term_counter: u64,
    annotations: BTreeMap<String, String>,
    records: Vec<Record>,
}

impl CatalogState {
    pub(crate) fn live(&self, t: &TypeRef) -> impl Iterator<Item = &Record> {
        self.records.get(t).into_iter().flat_map(|m| m.values()).filter(|r| !r.deleted)
    }

    pub(crate) fn record(&self, rid: Rid) -> Option<&Record> {
        let t = self.index.get(&rid)?;
        self.records.get(t)?.get(&rid)
    }

    /// A live term of `vocab` whose name or curie equals `key`.
    pub(crate) fn find_term(&self, vocab: &TypeRef, key: &str) -> Option<&Record> {
        self.live(vocab).find(|r| r.text("Name") == Some(key) || r.text("ID") == Some(key))
    }

    fn curie_taken(&self, curie: &str) -> bool {
        self.model
            .entity_types()
            .filter(|(_, d)| d.is_vocabulary)
            .any(|(t, _)| self.records.get(&t).is_some_and(|m| m.values().any(|r| r.text("ID") == Some(curie))))
    }

    fn snapshot(&self, prefix: &str, last_rid: u64) -> Snapshot {
        Snapshot {
            prefix: prefix.to_string(),
            last_rid,
            model: self.model.clone(),
            term_counter: self.term_counter,
            annotations: self.annotations.clone(),
            records: self.records.values().flat_map(|m| m.values().cloned()).collect(),
        }
    }
}

enum Undo {
    Restore(TypeRef, Record),
    Remove(TypeRef, Rid),
}

pub struct Catalog {
    prefix: String,
    minter: Arc<RidMinter>,
    state: RwLock<CatalogState>,
    snapshot_path: Option<PathBuf>,
}

impl std::fmt::Debug for Catalog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Catalog").field("prefix", &self.prefix).finish_non_exhaustive()
    }
}

fn valid_prefix(prefix: &str) -> bool {
    !prefix.is_empty() && prefix.bytes().all(|b| b.is_ascii_uppercase() || b.is_ascii_digit())
}

impl Catalog {
    pub fn in_memory(prefix: &str) -> Result<Self, CatalogError> {
        Self::create(prefix, Arc::new(RidMinter::default()), None)
    }

    pub fn create(prefix: &str, minter: Arc<RidMinter>, snapshot_path: Option<PathBuf>) -> Result<Self, CatalogError> {
        if !valid_prefix(prefix) {
            return Err(CatalogError::InvalidRequest(format!("catalog prefix {prefix:?} must be uppercase alphanumeric")));
        }
        let catalog =
            Catalog { prefix: prefix.to_string(), minter, state: RwLock::new(CatalogState::default()), snapshot_path };
        catalog.persist(&catalog.write())?;
        Ok(catalog)
    }

    /// Loads a snapshot written by a previous process.
    pub fn open(path: &Path, minter: Arc<RidMinter>) -> Result<Self, CatalogError> {
        let snap: Snapshot = serde_json::from_slice(&std::fs::read(path)?)?;
        minter.observe(snap.last_rid);
        let mut state = CatalogState {
            model: snap.model,
            term_counter: snap.term_counter,
            annotations: snap.annotations,
            ..Default::default()
        };
        for r in snap.records {
            minter.observe(r.rid.counter());
            state.index.insert(r.rid, r.entity_type.clone());
            state.records.entry(r.entity_type.clone()).or_default().insert(r.rid, r);
        }
        Ok(Catalog {
            prefix: snap.prefix,
            minter,
            state: RwLock::new(state),
            snapshot_path: Some(path.to_path_buf()),
        })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn minter(&self) -> &Arc<RidMinter> {
        &self.minter
    }

    pub(crate) fn read(&self) -> RwLockReadGuard<'_, CatalogState> {
        self.state.read().unwrap_or_else(PoisonError::into_inner)
    }

    fn write(&self) -> RwLockWriteGuard<'_, CatalogState> {
        self.state.write().unwrap_or_else(PoisonError::into_inner)
    }

    fn persist(&self, state: &CatalogState) -> Result<(), CatalogError> {
        if let Some(path) = &self.snapshot_path {
            let bytes = serde_json::to_vec(&state.snapshot(&self.prefix, self.minter.last()))?;
            write_atomic(path, &bytes)?;
        }
        Ok(())
    }

    fn require(principal: &Principal, action: Action, ctx: Option<acl::RecordContext<'_>>) -> Result<(), CatalogError> {
        let d = authorize(principal, action, ctx);
        if d.allowed {
            Ok(())
        } else {
            Err(CatalogError::AccessDenied(d))
        }
    }

    pub fn mint_rid(&self) -> Rid {
        self.minter.mint()
    }

    pub fn model(&self) -> Model {
        self.read().model.clone()
    }

    pub fn model_version(&self) -> u64 {
        self.read().model.version
    }

    pub fn bootstrap_ml_schema(&self) -> Result<SchemaDef, CatalogError> {
        let mut st = self.write();
        st.model.bootstrap()?;
        self.persist(&st)?;
        Ok(st.model.schema(crate::erm::ML_SCHEMA).cloned().expect("just bootstrapped"))
    }

    pub fn define_domain_schema(&self, principal: &Principal, spec: SchemaDef) -> Result<SchemaDef, CatalogError> {
        Self::require(principal, Action::ModelChange, None)?;
        let mut st = self.write();
        if let Some(next) = st.model.with_domain(spec)? {
            st.model = next;
            self.persist(&st)?;
        }
        Ok(st.model.domain_schema().cloned().expect("domain installed"))
    }

    /// Applies an additive change set atomically; existing records must stay
    /// valid under the new model.
    pub fn evolve_schema(&self, principal: &Principal, changes: &[SchemaChange]) -> Result<Model, CatalogError> {
        Self::require(principal, Action::ModelChange, None)?;
        let mut st = self.write();
        for change in changes {
            if let SchemaChange::AddAttribute { attribute, .. } = change {
                let populated = st.live(&change.target()).next().is_some();
                if populated && !attribute.nullable && attribute.default.is_none() {
                    return Err(SchemaError::BreakingChange(format!(
                        "{}.{} is non-nullable without default on a populated type",
                        change.target(),
                        attribute.name
                    ))
                    .into());
                }
            }
        }
        let next = st.model.with_changes(changes)?;
        let prior = std::mem::replace(&mut st.model, next);
        let mut broken = Vec::new();
        for t in changes.iter().map(SchemaChange::target) {
            let def = st.model.entity_type(&t).expect("validated").clone();
            for r in st.live(&t) {
                let report = st.validate_values(&t, &def, &r.values, Some(r), true);
                if !report.is_empty() {
                    broken.push(format!("{} {}: {}", t, r.rid, report[0].message));
                }
            }
        }
        if !broken.is_empty() {
            st.model = prior;
            return Err(SchemaError::BreakingChange(broken.join("; ")).into());
        }
        if let Err(e) = self.persist(&st) {
            st.model = prior;
            return Err(e);
        }
        Ok(st.model.clone())
    }

    pub fn set_annotation(&self, principal: &Principal, key: &str, value: &str) -> Result<(), CatalogError> {
        Self::require(principal, Action::ModelChange, None)?;
        let mut st = self.write();
        st.annotations.insert(key.to_string(), value.to_string());
        self.persist(&st)
    }

    pub fn annotations(&self) -> BTreeMap<String, String> {
        self.read().annotations.clone()
    }

    pub fn introspect(&self) -> ModelDocument {
        let st = self.read();
        let vocabularies = st
            .model
            .entity_types()
            .filter(|(_, d)| d.is_vocabulary)
            .map(|(t, _)| {
                let terms = st.live(&t).map(VocabularyTerm::from_record).collect();
                VocabularyListing { entity_type: t, terms }
            })
            .collect();
        ModelDocument {
            model_version: st.model.version,
            prefix: self.prefix.clone(),
            schemas: st.model.schemas.clone(),
            dataset_link: st.model.dataset_link(),
            vocabularies,
            annotations: st.annotations.clone(),
            history: st.model.history.clone(),
        }
    }

    fn vocabulary(&self, st: &CatalogState, vocab: &str) -> Result<TypeRef, CatalogError> {
        let t = st.model.resolve(vocab)?;
        if !st.model.entity_type(&t).is_some_and(|d| d.is_vocabulary) {
            return Err(CatalogError::NotAVocabulary(vocab.to_string()));
        }
        Ok(t)
    }

    pub fn add_vocabulary_term(
        &self,
        principal: &Principal,
        vocab: &str,
        name: &str,
        synonyms: &[&str],
        description: &str,
    ) -> Result<VocabularyTerm, CatalogError> {
        let t = self.vocabulary(&self.read(), vocab)?;
        let values = BTreeMap::from([
            ("Name".to_string(), Value::from(name)),
            ("Synonyms".to_string(), Value::from(synonyms.to_vec())),
            ("Description".to_string(), Value::from(description)),
        ]);
        let rid = self.apply(principal, vec![Mutation::insert(&t, values)])?[0];
        let st = self.read();
        Ok(VocabularyTerm::from_record(st.record(rid).expect("inserted")))
    }

    pub fn terms(&self, vocab: &str) -> Result<Vec<VocabularyTerm>, CatalogError> {
        let st = self.read();
        let t = self.vocabulary(&st, vocab)?;
        Ok(st.live(&t).map(VocabularyTerm::from_record).collect())
    }

    /// Looks a term up by name, synonym or curie.
    pub fn term(&self, vocab: &str, key: &str) -> Result<Option<VocabularyTerm>, CatalogError> {
        Ok(self
            .terms(vocab)?
            .into_iter()
            .find(|t| t.name == key || t.curie == key || t.synonyms.iter().any(|s| s == key)))
    }

    /// Ensures a term exists, creating it when absent.
    pub fn ensure_term(&self, principal: &Principal, vocab: &str, name: &str, description: &str) -> Result<VocabularyTerm, CatalogError> {
        if let Some(t) = self.term(vocab, name)? {
            return Ok(t);
        }
        self.add_vocabulary_term(principal, vocab, name, &[], description)
    }

    pub fn validate_record(&self, entity_type: &str, values: &BTreeMap<String, Value>) -> Result<ValidationReport, CatalogError> {
        let st = self.read();
        let t = st.model.resolve(entity_type)?;
        let def = st.model.entity_type(&t).expect("resolved");
        Ok(st.validate_values(&t, def, values, None, false))
    }

    /// Wire-level mutation: `records` are JSON objects; updates and deletes
    /// identify records by `RID` and may carry `Stamp` for optimistic
    /// concurrency and `Release` to change release state.
    pub fn mutate_records(
        &self,
        principal: &Principal,
        entity_type: &str,
        op: MutationOp,
        records: &[Value],
    ) -> Result<Vec<Rid>, CatalogError> {
        let t = self.read().model.resolve(entity_type)?;
        let mut batch = Vec::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            let obj = rec
                .as_object()
                .ok_or_else(|| CatalogError::InvalidRequest(format!("record {i} is not an object")))?;
            let rid = obj
                .get("RID")
                .and_then(Value::as_str)
                .map(|s| s.parse::<Rid>().map_err(|e| CatalogError::InvalidRequest(e.to_string())))
                .transpose()?;
            let stamp = obj.get("Stamp").and_then(Value::as_u64);
            let release = obj
                .get("Release")
                .map(|v| serde_json::from_value::<ReleaseState>(v.clone()))
                .transpose()
                .map_err(|e| CatalogError::InvalidRequest(format!("Release: {e}")))?;
            let values: BTreeMap<String, Value> = obj
                .iter()
                .filter(|(k, _)| !crate::erm::SYSTEM_COLUMNS.contains(&k.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            let need_rid = || CatalogError::InvalidRequest(format!("record {i} lacks RID"));
            batch.push(match op {
                MutationOp::Insert => {
                    if rid.is_some() {
                        return Err(CatalogError::InvalidRequest("RIDs are assigned by the catalog".into()));
                    }
                    Mutation::Insert { entity_type: t.clone(), rid: None, values, release }
                }
                MutationOp::Update => Mutation::Update {
                    entity_type: t.clone(),
                    rid: rid.ok_or_else(need_rid)?,
                    expected_stamp: stamp,
                    values,
                    release,
                },
                MutationOp::Delete => {
                    Mutation::Delete { entity_type: t.clone(), rid: rid.ok_or_else(need_rid)?, expected_stamp: stamp }
                }
            });
        }
        self.apply(principal, batch)
    }

    /// Applies a batch atomically: either every mutation lands or none does.
    pub fn apply(&self, principal: &Principal, batch: Vec<Mutation>) -> Result<Vec<Rid>, CatalogError> {
        let mut st = self.write();
        let term_counter = st.term_counter;
        let mut undo = Vec::new();
        let mut reports = Vec::new();
        let mut rids = Vec::new();
        let mut outcome = Ok(());
        for (index, m) in batch.into_iter().enumerate() {
            match self.apply_one(&mut st, principal, m, &mut undo) {
                Ok((rid, report)) => {
                    if !report.is_empty() {
                        reports.push(RecordReport { index, rid: Some(rid), violations: report });
                    }
                    rids.push(rid);
                }
                Err(e) => {
                    outcome = Err(e);
                    break;
                }
            }
        }
        if outcome.is_ok() && !reports.is_empty() {
            outcome = Err(CatalogError::ValidationFailed(reports));
        }
        if outcome.is_ok() {
            outcome = self.persist(&st);
        }
        if let Err(e) = outcome {
            for u in undo.into_iter().rev() {
                match u {
                    Undo::Restore(t, r) => {
                        st.records.entry(t).or_default().insert(r.rid, r);
                    }
                    Undo::Remove(t, rid) => {
                        st.records.get_mut(&t).map(|m| m.remove(&rid));
                        st.index.remove(&rid);
                    }
                }
            }
            st.term_counter = term_counter;
            return Err(e);
        }
        Ok(rids)
    }

    fn apply_one(
        &self,
        st: &mut CatalogState,
        principal: &Principal,
        m: Mutation,
        undo: &mut Vec<Undo>,
    ) -> Result<(Rid, ValidationReport), CatalogError> {
        match m {
            Mutation::Insert { entity_type: t, rid, mut values, release } => {
                let def = st
                    .model
                    .entity_type(&t)
                    .cloned()
                    .ok_or_else(|| SchemaError::UnknownEntityType(t.to_string()))?;
                Self::require(principal, Action::Create, None)?;
                let rid = match rid {
                    Some(r) if r.counter() <= self.minter.last() && !st.index.contains_key(&r) => r,
                    Some(r) => return Err(CatalogError::InvalidRequest(format!("RID {r} was not reserved"))),
                    None => self.minter.mint(),
                };
                for a in &def.attributes {
                    if let Some(d) = &a.default {
                        values.entry(a.name.clone()).or_insert_with(|| d.clone());
                    }
                }
                let mut release = release.unwrap_or_default();
                if def.is_vocabulary {
                    release = ReleaseState::Released;
                    self.prepare_term(st, &t, None, &mut values)?;
                }
                let report = st.validate_values(&t, &def, &values, None, false);
                let at = now();
                let record = Record {
                    rid,
                    entity_type: t.clone(),
                    values,
                    created_by: principal.id.clone(),
                    created_at: at,
                    modified_at: at,
                    release,
                    stamp: 1,
                    deleted: false,
                };
                st.index.insert(rid, t.clone());
                st.records.entry(t.clone()).or_default().insert(rid, record);
                undo.push(Undo::Remove(t, rid));
                Ok((rid, report))
            }
            Mutation::Update { entity_type: t, rid, expected_stamp, values, release } => {
                let def = st
                    .model
                    .entity_type(&t)
                    .cloned()
                    .ok_or_else(|| SchemaError::UnknownEntityType(t.to_string()))?;
                let prior = Self::existing(st, &t, rid)?.clone();
                Self::require(principal, Action::Update, Some(prior.context()))?;
                if expected_stamp.is_some_and(|s| s != prior.stamp) {
                    return Err(CatalogError::StaleWrite(rid));
                }
                let mut merged = prior.values.clone();
                for (k, v) in values {
                    if v.is_null() {
                        merged.remove(&k);
                    } else {
                        merged.insert(k, v);
                    }
                }
                if def.is_vocabulary {
                    if release == Some(ReleaseState::Pending) {
                        return Err(CatalogError::InvalidRequest("vocabulary terms are always released".into()));
                    }
                    self.prepare_term(st, &t, Some(&prior), &mut merged)?;
                }
                let report = st.validate_values(&t, &def, &merged, Some(&prior), false);
                let rec = st.records.get_mut(&t).and_then(|m| m.get_mut(&rid)).expect("exists");
                rec.values = merged;
                rec.release = release.unwrap_or(rec.release);
                rec.stamp += 1;
                rec.modified_at = now();
                undo.push(Undo::Restore(t, prior));
                Ok((rid, report))
            }
            Mutation::Delete { entity_type: t, rid, expected_stamp } => {
                let prior = Self::existing(st, &t, rid)?.clone();
                Self::require(principal, Action::Delete, Some(prior.context()))?;
                if expected_stamp.is_some_and(|s| s != prior.stamp) {
                    return Err(CatalogError::StaleWrite(rid));
                }
                let rec = st.records.get_mut(&t).and_then(|m| m.get_mut(&rid)).expect("exists");
                rec.deleted = true;
                rec.stamp += 1;
                rec.modified_at = now();
                undo.push(Undo::Restore(t, prior));
                Ok((rid, Vec::new()))
            }
        }
    }

    fn existing<'a>(st: &'a CatalogState, t: &TypeRef, rid: Rid) -> Result<&'a Record, CatalogError> {
        st.records
            .get(t)
            .and_then(|m| m.get(&rid))
            .filter(|r| !r.deleted)
            .ok_or_else(|| CatalogError::NotFound(format!("{t} {rid}")))
    }

    /// Enforces term-name/synonym uniqueness within the vocabulary and assigns
    /// a curie when none is given.
    fn prepare_term(
        &self,
        st: &mut CatalogState,
        vocab: &TypeRef,
        prior: Option<&Record>,
        values: &mut BTreeMap<String, Value>,
    ) -> Result<(), CatalogError> {
        let name = values.get("Name").and_then(Value::as_str).unwrap_or_default().to_string();
        let mut keys = vec![name.clone()];
        keys.extend(synonyms_of(values));
        let mut seen = std::collections::HashSet::new();
        for k in &keys {
            if !seen.insert(k.as_str()) && !k.is_empty() {
                return Err(CatalogError::DuplicateTerm(k.clone()));
            }
        }
        for other in st.live(vocab).filter(|r| Some(r.rid) != prior.map(|p| p.rid)) {
            let mut taken = vec![other.text("Name").unwrap_or_default().to_string()];
            taken.extend(synonyms_of(&other.values));
            if let Some(k) = keys.iter().find(|k| taken.contains(k)) {
                return Err(CatalogError::DuplicateTerm(k.clone()));
            }
        }
        match (prior, values.get("ID").and_then(Value::as_str)) {
            (Some(p), Some(id)) if p.text("ID") == Some(id) => {}
            (Some(_), Some(_)) => return Err(CatalogError::InvalidRequest("term ID is immutable".into())),
            (Some(p), None) => {
                values.insert("ID".into(), p.values.get("ID").cloned().unwrap_or(Value::Null));
            }
            (None, Some(id)) => {
                if st.curie_taken(id) {
                    return Err(CatalogError::DuplicateTerm(id.to_string()));
                }
            }
            (None, None) => {
                let curie = loop {
                    st.term_counter += 1;
                    let c = format!("{}:{:04}", self.prefix, st.term_counter);
                    if !st.curie_taken(&c) {
                        break c;
                    }
                };
                values.insert("ID".into(), Value::String(curie));
            }
        }
        Ok(())
    }

    pub fn query(&self, principal: &Principal, spec: &QuerySpec) -> Result<RecordPage, CatalogError> {
        self.read().run_query(principal, spec)
    }

    /// Fetches one record by RID, whatever its type.
    pub fn get(&self, principal: &Principal, rid: Rid) -> Result<Record, CatalogError> {
        let st = self.read();
        let r = st.record(rid).filter(|r| !r.deleted).ok_or_else(|| CatalogError::NotFound(rid.to_string()))?;
        Self::require(principal, Action::Read, Some(r.context()))?;
        Ok(r.clone())
    }

    /// Entity type of a RID, including tombstoned records.
    pub fn locate(&self, rid: Rid) -> Option<TypeRef> {
        self.read().index.get(&rid).cloned()
    }

    /// Unfiltered view of the live records of a type, for services acting on
    /// behalf of the catalog itself (bag export, integrity checks).
    pub fn scan(&self, t: &TypeRef) -> Vec<Record> {
        self.read().live(t).cloned().collect()
    }

    /// Record by RID without access checks, tombstones included.
    pub fn lookup(&self, rid: Rid) -> Option<Record> {
        self.read().record(rid).cloned()
    }

    /// SHA-256 over the full serialized state; equal digests mean nothing
    /// observable changed.
    pub fn state_digest(&self) -> String {
        let st = self.read();
        let bytes = serde_json::to_vec(&st.snapshot(&self.prefix, 0)).expect("state serializes");
        sha256_hex(&bytes)
    }
}

/// Convenience for building value maps in code.
#[macro_export]
macro_rules! values {
    ($($k:expr => $v:expr),* $(,)?) => {{
        let mut m = ::std::collections::BTreeMap::<String, ::serde_json::Value>::new();
        $( m.insert($k.to_string(), ::serde_json::json!($v)); )*
        m
    }};
}

fn first_violation(reports: &[RecordReport]) -> String {
    reports
        .iter()
        .flat_map(|r| r.violations.iter())
        .next()
        .map(|v| format!(": {}: {}", v.attribute, v.message))
        .unwrap_or_default()
}
