use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::acl::{authorize, Action, Principal};
use super::record::Record;
use super::{CatalogError, CatalogState};
use crate::erm::{Model, TypeRef, ValueKind, SYSTEM_COLUMNS};
use crate::Rid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">")]
    Gt,
    In,
    Null,
}

impl FilterOp {
    fn from_token(s: &str) -> Option<Self> {
        Some(match s {
            "eq" | "=" => FilterOp::Eq,
            "ne" | "!=" => FilterOp::Ne,
            "lt" | "<" => FilterOp::Lt,
            "gt" | ">" => FilterOp::Gt,
            "in" => FilterOp::In,
            "null" => FilterOp::Null,
            _ => return None,
        })
    }
}

/// `attribute` is `Attr` (base type) or `Type.Attr` (a type on the join path).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    pub attribute: String,
    pub op: FilterOp,
    #[serde(default)]
    pub value: Value,
}

impl Filter {
    pub fn eq(attribute: &str, value: impl Into<Value>) -> Self {
        Filter { attribute: attribute.to_string(), op: FilterOp::Eq, value: value.into() }
    }

    /// Parses the URL form `attribute::op::value`; `in` takes a
    /// comma-separated list and `null` takes `true`/`false`.
    pub fn parse(s: &str) -> Result<Self, CatalogError> {
        let bad = || CatalogError::InvalidQuery(format!("malformed filter {s:?}"));
        let mut parts = s.splitn(3, "::");
        let attribute = parts.next().filter(|a| !a.is_empty()).ok_or_else(bad)?;
        let op = parts.next().and_then(FilterOp::from_token).ok_or_else(bad)?;
        let raw = parts.next().unwrap_or("");
        let value = match op {
            FilterOp::In => Value::Array(raw.split(',').map(|v| Value::String(v.to_string())).collect()),
            FilterOp::Null => Value::Bool(raw.is_empty() || raw == "true"),
            _ => Value::String(raw.to_string()),
        };
        Ok(Filter { attribute: attribute.to_string(), op, value })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub entity_type: String,
    #[serde(default)]
    pub filters: Vec<Filter>,
    /// Entity types visited in order, each connected to the previous one by
    /// a foreign key in either direction.
    #[serde(default)]
    pub joins: Vec<String>,
    #[serde(default)]
    pub projection: Vec<String>,
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default)]
    pub offset: usize,
}

impl QuerySpec {
    pub fn new(entity_type: &str) -> Self {
        QuerySpec { entity_type: entity_type.to_string(), ..Default::default() }
    }

    pub fn filter(mut self, f: Filter) -> Self {
        self.filters.push(f);
        self
    }

    pub fn join(mut self, hop: &str) -> Self {
        self.joins.push(hop.to_string());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordPage {
    pub data: Vec<Record>,
    pub count: usize,
    pub model_version: u64,
}

enum Link {
    /// previous record's `attr` holds the next RID
    Outbound(String),
    /// next record's `attr` holds the previous RID
    Inbound(String),
}

struct Hop {
    ty: TypeRef,
    link: Link,
}

struct CompiledFilter {
    step: usize,
    attribute: String,
    op: FilterOp,
    value: Value,
}

fn coerce(kind: Option<ValueKind>, v: &Value) -> Value {
    let Some(s) = v.as_str() else { return v.clone() };
    match kind {
        Some(ValueKind::Integer) => s.parse::<i64>().map(Value::from).unwrap_or_else(|_| v.clone()),
        Some(ValueKind::Float) => s.parse::<f64>().map(Value::from).unwrap_or_else(|_| v.clone()),
        Some(ValueKind::Boolean) => s.parse::<bool>().map(Value::from).unwrap_or_else(|_| v.clone()),
        _ => v.clone(),
    }
}

fn compare(a: &Value, b: &Value) -> Option<Ordering> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.as_f64()?.partial_cmp(&y.as_f64()?),
        (Value::String(x), Value::String(y)) => Some(x.cmp(y)),
        (Value::Bool(x), Value::Bool(y)) => Some(x.cmp(y)),
        _ => None,
    }
}

impl CompiledFilter {
    fn matches(&self, r: &Record) -> bool {
        let v = r.column(&self.attribute);
        match self.op {
            FilterOp::Null => v.is_none() == self.value.as_bool().unwrap_or(true),
            FilterOp::Eq => v.is_some_and(|v| v == self.value),
            FilterOp::Ne => v.is_some_and(|v| v != self.value),
            FilterOp::Lt => v.is_some_and(|v| compare(&v, &self.value) == Some(Ordering::Less)),
            FilterOp::Gt => v.is_some_and(|v| compare(&v, &self.value) == Some(Ordering::Greater)),
            FilterOp::In => {
                v.is_some_and(|v| self.value.as_array().is_some_and(|vals| vals.contains(&v)))
            }
        }
    }
}

fn connect(model: &Model, from: &TypeRef, to: &TypeRef) -> Result<Link, CatalogError> {
    let mut links = Vec::new();
    if let Some(def) = model.entity_type(from) {
        for fk in def.foreign_keys.iter().filter(|fk| fk.target() == *to) {
            links.push(Link::Outbound(fk.from.clone()));
        }
    }
    if from != to {
        if let Some(def) = model.entity_type(to) {
            for fk in def.foreign_keys.iter().filter(|fk| fk.target() == *from) {
                links.push(Link::Inbound(fk.from.clone()));
            }
        }
    }
    match links.len() {
        1 => Ok(links.pop().unwrap()),
        0 => Err(CatalogError::InvalidQuery(format!("no foreign key connects {from} and {to}"))),
        _ => Err(CatalogError::InvalidQuery(format!("ambiguous join between {from} and {to}"))),
    }
}

impl CatalogState {
    pub(crate) fn run_query(&self, principal: &Principal, spec: &QuerySpec) -> Result<RecordPage, CatalogError> {
        let model = &self.model;
        let base = model.resolve(&spec.entity_type).map_err(|e| CatalogError::InvalidQuery(e.to_string()))?;
        let mut hops = Vec::new();
        let mut prev = base.clone();
        for name in &spec.joins {
            let ty = model.resolve(name).map_err(|e| CatalogError::InvalidQuery(e.to_string()))?;
            let link = connect(model, &prev, &ty)?;
            hops.push(Hop { ty: ty.clone(), link });
            prev = ty;
        }
        let path: Vec<&TypeRef> = std::iter::once(&base).chain(hops.iter().map(|h| &h.ty)).collect();
        let filters = spec
            .filters
            .iter()
            .map(|f| {
                let (step, attr) = match f.attribute.split_once('.') {
                    Some((ty, attr)) => {
                        let step = path
                            .iter()
                            .position(|t| t.name == ty || t.to_string() == ty)
                            .ok_or_else(|| CatalogError::InvalidQuery(format!("{ty} is not on the join path")))?;
                        (step, attr)
                    }
                    None => (0, f.attribute.as_str()),
                };
                let def = model.entity_type(path[step]).expect("resolved");
                let kind = def.attribute(attr).map(|a| a.value_kind);
                if kind.is_none() && !SYSTEM_COLUMNS.contains(&attr) {
                    return Err(CatalogError::InvalidQuery(format!("{} has no attribute {attr}", path[step])));
                }
                let value = match &f.value {
                    Value::Array(items) => Value::Array(items.iter().map(|v| coerce(kind, v)).collect()),
                    v => coerce(kind, v),
                };
                if f.op == FilterOp::In && !value.is_array() {
                    return Err(CatalogError::InvalidQuery("`in` needs a list".into()));
                }
                Ok(CompiledFilter { step, attribute: attr.to_string(), op: f.op, value })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let base_def = model.entity_type(&base).expect("resolved");
        for p in &spec.projection {
            if base_def.attribute(p).is_none() && !SYSTEM_COLUMNS.contains(&p.as_str()) {
                return Err(CatalogError::InvalidQuery(format!("{base} has no attribute {p}")));
            }
        }

        let visible = |r: &&Record| !r.deleted && authorize(principal, Action::Read, Some(r.context())).allowed;
        // inbound hops need a reverse index: referenced RID -> referencing records
        let reverse: Vec<Option<HashMap<Rid, Vec<&Record>>>> = hops
            .iter()
            .map(|h| match &h.link {
                Link::Inbound(attr) => {
                    let mut idx: HashMap<Rid, Vec<&Record>> = HashMap::new();
                    for r in self.live(&h.ty).filter(visible) {
                        if let Some(target) = r.rid_ref(attr) {
                            idx.entry(target).or_default().push(r);
                        }
                    }
                    Some(idx)
                }
                Link::Outbound(_) => None,
            })
            .collect();

        let step_ok = |step: usize, r: &Record| filters.iter().filter(|f| f.step == step).all(|f| f.matches(r));

        fn reach<'a>(
            state: &'a CatalogState,
            hops: &[Hop],
            reverse: &[Option<HashMap<Rid, Vec<&'a Record>>>],
            step: usize,
            current: &'a Record,
            ok: &dyn Fn(usize, &Record) -> bool,
            visible: &dyn Fn(&&Record) -> bool,
        ) -> bool {
            if step == hops.len() {
                return true;
            }
            let hop = &hops[step];
            let next: Vec<&Record> = match &hop.link {
                Link::Outbound(attr) => current
                    .rid_ref(attr)
                    .and_then(|rid| state.records.get(&hop.ty)?.get(&rid))
                    .into_iter()
                    .filter(visible)
                    .collect(),
                Link::Inbound(_) => reverse[step]
                    .as_ref()
                    .and_then(|idx| idx.get(&current.rid))
                    .cloned()
                    .unwrap_or_default(),
            };
            next.into_iter()
                .any(|n| ok(step + 1, n) && reach(state, hops, reverse, step + 1, n, ok, visible))
        }

        let mut rows: Vec<&Record> = self
            .live(&base)
            .filter(visible)
            .filter(|r| step_ok(0, r) && reach(self, &hops, &reverse, 0, r, &step_ok, &visible))
            .collect();
        rows.sort_by_key(|r| r.rid);
        let count = rows.len();
        let data = rows
            .into_iter()
            .skip(spec.offset)
            .take(spec.limit.unwrap_or(usize::MAX))
            .map(|r| {
                let mut r = r.clone();
                if !spec.projection.is_empty() {
                    r.values.retain(|k, _| spec.projection.contains(k));
                }
                r
            })
            .collect();
        Ok(RecordPage { data, count, model_version: model.version })
    }
}
