//! Mechanical assessment of a lake against the sixteen FAIR metrics.
//! Every check only reads.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::catalog::acl::{authorize, Action, Principal, RecordContext, ReleaseState, Role};
use crate::catalog::record::Record;
use crate::catalog::ModelDocument;
use crate::erm::{TypeRef, ValueKind};
use crate::lake::Lake;
use crate::minid::{Minid, SCHEME};
use crate::provenance::{find_dataset, CONFIG_TYPE, RUNTIME_TYPE};
use crate::rid::Rid;

pub const METRICS: [&str; 16] = [
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

/// Catalog annotations read as attestations.
pub const LICENSE_ANNOTATION: &str = "license";
pub const METADATA_LICENSE_ANNOTATION: &str = "metadata_license";
pub const COMPLIANCE_ANNOTATION: &str = "compliance_attestation";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricResult {
    pub metric: String,
    pub satisfied: bool,
    pub evidence: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FairReport {
    pub scope: String,
    pub metrics: Vec<MetricResult>,
}

impl FairReport {
    pub fn satisfied(&self) -> usize {
        self.metrics.iter().filter(|m| m.satisfied).count()
    }

    pub fn metric(&self, name: &str) -> Option<&MetricResult> {
        self.metrics.iter().find(|m| m.metric == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FairScope {
    Catalog,
    /// A dataset, by minid or RID.
    Dataset(String),
}

struct Snapshot {
    doc: ModelDocument,
    records: Vec<Record>,
    datasets: Vec<Record>,
    minids: Vec<Minid>,
}

fn all_records(lake: &Lake) -> Vec<Record> {
    let model = lake.catalog().model();
    model.entity_types().flat_map(|(t, _)| lake.catalog().scan(&t)).collect()
}

fn verdict(ok: bool, evidence: String) -> (bool, String) {
    (ok, evidence)
}

fn is_http(url: &str) -> bool {
    url.starts_with("http://") || url.starts_with("https://")
}

fn unique_identifiers(s: &Snapshot) -> (bool, String) {
    let rids: BTreeSet<Rid> = s.records.iter().map(|r| r.rid).collect();
    let prefixed = !s.doc.prefix.is_empty();
    verdict(
        prefixed && rids.len() == s.records.len() && !s.records.is_empty(),
        format!("{} records, {} distinct RIDs, catalog prefix {:?}", s.records.len(), rids.len(), s.doc.prefix),
    )
}

fn persistent_identifiers(lake: &Lake, s: &Snapshot) -> (bool, String) {
    let mut missing = Vec::new();
    for d in &s.datasets {
        let ok = d
            .text("Minid")
            .and_then(|m| lake.minids().resolve(m).ok())
            .is_some_and(|m| m.is_active() && m.metadata.get("dataset_rid") == Some(&d.rid.to_string()));
        if !ok {
            missing.push(d.rid.to_string());
        }
    }
    verdict(
        !s.datasets.is_empty() && missing.is_empty(),
        if missing.is_empty() {
            format!("{} dataset(s), each with an active minid", s.datasets.len())
        } else {
            format!("datasets without a resolvable minid: {}", missing.join(", "))
        },
    )
}

fn machine_readable(lake: &Lake, s: &Snapshot) -> (bool, String) {
    let json = serde_json::to_vec(&s.doc);
    let round_trip = json
        .as_ref()
        .ok()
        .and_then(|b| serde_json::from_slice::<ModelDocument>(b).ok())
        .is_some_and(|d| d == s.doc);
    let types: usize = s.doc.schemas.iter().map(|x| x.entity_types.len()).sum();
    verdict(
        round_trip && s.doc.domain().is_some(),
        format!(
            "model document v{} ({} entity types) served as JSON; round trip {}",
            lake.catalog().model_version(),
            types,
            if round_trip { "exact" } else { "lossy" }
        ),
    )
}

fn standardized(lake: &Lake, s: &Snapshot) -> (bool, String) {
    let model = lake.catalog().model();
    let terms: BTreeMap<TypeRef, BTreeSet<String>> = s
        .doc
        .vocabularies
        .iter()
        .map(|v| {
            let keys = v
                .terms
                .iter()
                .flat_map(|t| [t.name.clone(), t.curie.clone()].into_iter().chain(t.synonyms.iter().cloned()))
                .collect();
            (v.entity_type.clone(), keys)
        })
        .collect();
    let (mut total, mut covered) = (0usize, 0usize);
    let mut strays = Vec::new();
    for r in &s.records {
        let def = model.entity_type(&r.entity_type).expect("live type");
        for a in def.attributes.iter().filter(|a| a.value_kind == ValueKind::TermRef) {
            let Some(v) = r.text(&a.name) else { continue };
            total += 1;
            let vocab = def.foreign_key(&a.name).map(|fk| fk.target());
            if vocab.and_then(|t| terms.get(&t)).is_some_and(|k| k.contains(v)) {
                covered += 1;
            } else if strays.len() < 5 {
                strays.push(format!("{}.{}={v}", r.entity_type, a.name));
            }
        }
    }
    verdict(
        total > 0 && covered == total,
        format!("{covered}/{total} controlled attribute values resolve to vocabulary terms{}", {
            if strays.is_empty() {
                String::new()
            } else {
                format!("; uncontrolled: {}", strays.join(", "))
            }
        }),
    )
}

fn identifier_in_metadata(lake: &Lake, s: &Snapshot) -> (bool, String) {
    let model = lake.catalog().model();
    let datasets_ok = s.datasets.iter().all(|d| d.text("Minid").is_some() && d.text("Bag_Hash").is_some());
    let assets: Vec<&Record> =
        s.records.iter().filter(|r| model.entity_type(&r.entity_type).is_some_and(|d| d.is_asset)).collect();
    let assets_ok = assets.iter().all(|a| a.text("URL").is_some() && a.text("SHA256").is_some());
    verdict(
        !s.datasets.is_empty() && datasets_ok && assets_ok,
        format!(
            "{} dataset record(s) carry minid and bag hash; {} asset record(s) carry URL and SHA256",
            s.datasets.len(),
            assets.len()
        ),
    )
}

fn discoverable(s: &Snapshot) -> (bool, String) {
    let dataset_minids: BTreeSet<&str> = s.datasets.iter().filter_map(|d| d.text("Minid")).collect();
    let listed: Vec<&Minid> = s.minids.iter().filter(|m| dataset_minids.contains(m.identifier.as_str())).collect();
    let ok = listed.iter().all(|m| !m.title.trim().is_empty() && m.locations.iter().any(|l| is_http(l)));
    verdict(
        !listed.is_empty() && ok && listed.len() == dataset_minids.len(),
        format!("{} landing record(s) with titles and HTTP locations", listed.len()),
    )
}

fn open_protocol(lake: &Lake, s: &Snapshot) -> (bool, String) {
    let base = &lake.config().base_url;
    let urls: Vec<&str> = s.records.iter().filter_map(|r| r.text("URL")).collect();
    let via_store = s
        .records
        .iter()
        .filter(|r| r.entity_type.schema == "ml" && r.entity_type.name != "Workflow")
        .filter_map(|r| r.text("URL"))
        .all(|u| lake.parse_store_url(u).is_some());
    verdict(
        is_http(base) && via_store,
        format!("catalog and store served over HTTP at {base}; {} URL(s) recorded", urls.len()),
    )
}

fn restricted_protocol(lake: &Lake) -> (bool, String) {
    let owner = "fair-check-owner";
    let pending = Some(RecordContext { created_by: owner, release: ReleaseState::Pending });
    let outsider = !authorize(&Principal::new("fair-check-other", Role::Reader), Action::Read, pending).allowed;
    let own = authorize(&Principal::new(owner, Role::Writer), Action::Read, pending).allowed;
    let tokens = lake.token_count();
    verdict(
        tokens > 0 && outsider && own,
        format!("bearer-token authentication with {tokens} registered principal(s); pending records hidden from non-owners"),
    )
}

fn persistence(lake: &Lake, s: &Snapshot) -> (bool, String) {
    let mut unresolved = Vec::new();
    for m in &s.minids {
        let stored = m.locations.iter().filter_map(|l| lake.parse_store_url(l)).any(|(p, v)| {
            lake.store().head(p, v).is_ok_and(|o| o.content_sha256 == m.content_sha256)
        });
        if m.is_active() && !stored {
            unresolved.push(m.identifier.clone());
        }
    }
    verdict(
        !s.minids.is_empty() && unresolved.is_empty(),
        if unresolved.is_empty() {
            format!(
                "{} minid(s) resolve, archives retained; deletions leave tombstones",
                s.minids.len()
            )
        } else {
            format!("minids whose archive is gone: {}", unresolved.join(", "))
        },
    )
}

fn formal_language(lake: &Lake, s: &Snapshot) -> (bool, String) {
    let valid = lake.catalog().model().validate_structure().is_ok();
    verdict(
        valid && s.doc.dataset_link.is_some(),
        format!("model expressed as typed ERM JSON with {} schema(s); structure valid: {valid}", s.doc.schemas.len()),
    )
}

fn fair_vocabulary(s: &Snapshot) -> (bool, String) {
    let terms: Vec<_> = s.doc.vocabularies.iter().flat_map(|v| &v.terms).collect();
    let curies: BTreeSet<&str> = terms.iter().map(|t| t.curie.as_str()).collect();
    let prefix = format!("{}:", s.doc.prefix);
    let well_formed = terms.iter().all(|t| t.curie.starts_with(&prefix) && !t.name.trim().is_empty());
    verdict(
        !terms.is_empty() && curies.len() == terms.len() && well_formed,
        format!(
            "{} term(s) across {} vocabularies, each named with a unique {prefix} curie",
            terms.len(),
            s.doc.vocabularies.len()
        ),
    )
}

/// A compact identifier in a namespace other than this catalog's.
fn external_curie(own: &str, value: &str) -> bool {
    let Some((ns, local)) = value.split_once(':') else { return false };
    !ns.is_empty()
        && !local.is_empty()
        && ns != own
        && format!("{ns}:") != SCHEME
        && !local.starts_with("//")
        && ns.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        && ns.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
        && !local.contains(char::is_whitespace)
}

fn linked(s: &Snapshot) -> (bool, String) {
    let links: Vec<String> = s
        .doc
        .vocabularies
        .iter()
        .flat_map(|v| &v.terms)
        .flat_map(|t| t.synonyms.iter().filter(|x| external_curie(&s.doc.prefix, x)).map(move |x| format!("{} -> {x}", t.curie)))
        .collect();
    verdict(
        !links.is_empty(),
        if links.is_empty() {
            "no vocabulary term references an external identifier system".into()
        } else {
            format!("{} external cross-reference(s), e.g. {}", links.len(), links[0])
        },
    )
}

fn annotation(s: &Snapshot, key: &str) -> (bool, String) {
    match s.doc.annotations.get(key).filter(|v| !v.trim().is_empty()) {
        Some(v) => (true, format!("annotation {key}: {v}")),
        None => (false, format!("catalog has no {key} annotation")),
    }
}

fn provenance_scheme(lake: &Lake, s: &Snapshot) -> (bool, String) {
    let of = |name: &str| -> Vec<&Record> { s.records.iter().filter(|r| r.entity_type == TypeRef::ml(name)).collect() };
    let executions = of("Execution");
    let metadata = of("Execution_Metadata");
    let mut incomplete = Vec::new();
    let mut terminal = 0;
    for e in &executions {
        if !matches!(e.text("Status"), Some("completed" | "failed")) {
            continue;
        }
        terminal += 1;
        let workflow = e.rid_ref("Workflow").and_then(|w| lake.catalog().lookup(w));
        let workflow_ok = workflow.is_some_and(|w| w.text("URL").is_some() && w.text("Checksum").is_some());
        let has = |t: &str| {
            metadata
                .iter()
                .any(|m| m.rid_ref("Execution") == Some(e.rid) && m.text("Execution_Metadata_Type") == Some(t))
        };
        if !(workflow_ok && has(CONFIG_TYPE) && has(RUNTIME_TYPE)) {
            incomplete.push(e.rid.to_string());
        }
    }
    verdict(
        terminal > 0 && incomplete.is_empty(),
        if incomplete.is_empty() {
            format!("{terminal} terminal execution(s) link workflow code, inputs, config and runtime log")
        } else {
            format!("executions with incomplete provenance: {}", incomplete.join(", "))
        },
    )
}

/// Evaluates all sixteen metrics. Never fails: problems show up as
/// unsatisfied metrics with their evidence.
pub fn fair_check(lake: &Lake, scope: &FairScope) -> FairReport {
    let records = all_records(lake);
    let mut datasets: Vec<Record> = records.iter().filter(|r| r.entity_type == TypeRef::ml("Dataset")).cloned().collect();
    let mut minids = lake.minids().list();
    let scope_name = match scope {
        FairScope::Catalog => "catalog".to_string(),
        FairScope::Dataset(key) => {
            match find_dataset(lake, key) {
                Ok(d) => {
                    datasets.retain(|r| r.rid == d.rid);
                    minids.retain(|m| m.metadata.get("dataset_rid") == Some(&d.rid.to_string()));
                }
                Err(_) => {
                    datasets.clear();
                    minids.clear();
                }
            }
            format!("dataset {key}")
        }
    };
    let s = Snapshot { doc: lake.catalog().introspect(), records, datasets, minids };
    let results = [
        unique_identifiers(&s),
        persistent_identifiers(lake, &s),
        machine_readable(lake, &s),
        standardized(lake, &s),
        identifier_in_metadata(lake, &s),
        discoverable(&s),
        open_protocol(lake, &s),
        restricted_protocol(lake),
        persistence(lake, &s),
        formal_language(lake, &s),
        fair_vocabulary(&s),
        linked(&s),
        annotation(&s, LICENSE_ANNOTATION),
        annotation(&s, METADATA_LICENSE_ANNOTATION),
        provenance_scheme(lake, &s),
        annotation(&s, COMPLIANCE_ANNOTATION),
    ];
    FairReport {
        scope: scope_name,
        metrics: METRICS
            .iter()
            .zip(results)
            .map(|(m, (satisfied, evidence))| MetricResult { metric: m.to_string(), satisfied, evidence })
            .collect(),
    }
}

/// Plain-text rendering, one metric per line.
pub fn render(report: &FairReport) -> String {
    let mut out = format!("FAIR assessment of {}\n", report.scope);
    for m in &report.metrics {
        out.push_str(&format!("[{}] {}: {}\n", if m.satisfied { "x" } else { " " }, m.metric, m.evidence));
    }
    out.push_str(&format!("{}/{} satisfied\n", report.satisfied(), report.metrics.len()));
    out
}
