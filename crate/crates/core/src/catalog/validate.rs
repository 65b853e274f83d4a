use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::record::Record;
use super::CatalogState;
use crate::erm::{model::value_matches_kind, EntityTypeDef, TypeRef, ValueKind, ML_SCHEMA};
use crate::util::is_sha256_hex;
use crate::Rid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    UnknownAttribute,
    Required,
    Kind,
    DanglingReference,
    UnknownTerm,
    Format,
    StatusTransition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub attribute: String,
    pub rule: Rule,
    pub message: String,
}

impl Violation {
    fn new(attribute: &str, rule: Rule, message: String) -> Self {
        Violation { attribute: attribute.to_string(), rule, message }
    }
}

/// Empty iff the record satisfies every invariant of its entity type.
pub type ValidationReport = Vec<Violation>;

pub const EXECUTION_STATUSES: [&str; 4] = ["initiated", "running", "completed", "failed"];

pub(crate) fn status_transition_allowed(from: &str, to: &str) -> bool {
    from == to || matches!((from, to), ("initiated", "running") | ("running", "completed") | ("running", "failed"))
}

impl CatalogState {
    /// Checks `values` against `def`. `prior` is the stored record for
    /// updates. When `lenient` is set, references to tombstoned records are
    /// accepted (used when re-validating existing data).
    pub(crate) fn validate_values(
        &self,
        t: &TypeRef,
        def: &EntityTypeDef,
        values: &BTreeMap<String, Value>,
        prior: Option<&Record>,
        lenient: bool,
    ) -> ValidationReport {
        let mut report = Vec::new();
        for key in values.keys() {
            if def.attribute(key).is_none() {
                report.push(Violation::new(key, Rule::UnknownAttribute, format!("{t} has no attribute {key}")));
            }
        }
        for attr in &def.attributes {
            let value = values.get(&attr.name).filter(|v| !v.is_null());
            let Some(value) = value else {
                if !attr.nullable && attr.default.is_none() {
                    report.push(Violation::new(
                        &attr.name,
                        Rule::Required,
                        format!("{t}.{} is required", attr.name),
                    ));
                }
                continue;
            };
            if !value_matches_kind(attr.value_kind, value) {
                report.push(Violation::new(
                    &attr.name,
                    Rule::Kind,
                    format!("{t}.{} expects {:?}, got {value}", attr.name, attr.value_kind),
                ));
                continue;
            }
            let Some(fk) = def.foreign_key(&attr.name) else { continue };
            let target = fk.target();
            let text = value.as_str().unwrap_or_default();
            match attr.value_kind {
                ValueKind::RidRef => {
                    let rid: Rid = text.parse().expect("kind checked");
                    match self.records.get(&target).and_then(|m| m.get(&rid)) {
                        Some(r) if lenient || !r.deleted => {}
                        Some(_) => report.push(Violation::new(
                            &attr.name,
                            Rule::DanglingReference,
                            format!("{t}.{} references deleted {target} record {rid}", attr.name),
                        )),
                        None => report.push(Violation::new(
                            &attr.name,
                            Rule::DanglingReference,
                            format!("{t}.{} references missing {target} record {rid}", attr.name),
                        )),
                    }
                }
                ValueKind::TermRef
                    if self.find_term(&target, text).is_none() => {
                        report.push(Violation::new(
                            &attr.name,
                            Rule::UnknownTerm,
                            format!("{text:?} is not a term of {target}"),
                        ));
                    }
                _ => {}
            }
        }
        if def.is_asset {
            if let Some(sum) = values.get("SHA256").and_then(Value::as_str) {
                if !is_sha256_hex(sum) {
                    report.push(Violation::new("SHA256", Rule::Format, "SHA256 must be 64 lowercase hex digits".into()));
                }
            }
            if let Some(len) = values.get("Length").and_then(Value::as_i64) {
                if len < 0 {
                    report.push(Violation::new("Length", Rule::Format, "Length must be non-negative".into()));
                }
            }
        }
        if t.schema == ML_SCHEMA {
            self.ml_rules(t, values, prior, &mut report);
        }
        report
    }

    fn ml_rules(
        &self,
        t: &TypeRef,
        values: &BTreeMap<String, Value>,
        prior: Option<&Record>,
        report: &mut ValidationReport,
    ) {
        match t.name.as_str() {
            "Execution" => {
                let Some(status) = values.get("Status").and_then(Value::as_str) else { return };
                if !EXECUTION_STATUSES.contains(&status) {
                    report.push(Violation::new("Status", Rule::Format, format!("unknown status {status:?}")));
                    return;
                }
                let from = prior.and_then(|p| p.text("Status"));
                match from {
                    None if status != "initiated" => report.push(Violation::new(
                        "Status",
                        Rule::StatusTransition,
                        format!("executions start as initiated, not {status}"),
                    )),
                    Some(from) if !status_transition_allowed(from, status) => report.push(Violation::new(
                        "Status",
                        Rule::StatusTransition,
                        format!("illegal transition {from} -> {status}"),
                    )),
                    _ => {}
                }
            }
            "Execution_Asset_Link" => {
                if let Some(role) = values.get("Role").and_then(Value::as_str) {
                    if role != "input" && role != "output" {
                        report.push(Violation::new("Role", Rule::Format, "Role must be input or output".into()));
                    }
                }
            }
            _ => {}
        }
    }
}
