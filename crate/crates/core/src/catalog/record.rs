use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::acl::{RecordContext, ReleaseState};
use crate::erm::TypeRef;
use crate::util::timestamp;
use crate::Rid;

/// A stored record. `deleted` records are tombstones: their RID stays
/// reserved and references to them keep resolving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub rid: Rid,
    pub entity_type: TypeRef,
    pub values: BTreeMap<String, Value>,
    pub created_by: String,
    pub created_at: DateTime<Utc>,
    pub modified_at: DateTime<Utc>,
    pub release: ReleaseState,
    pub stamp: u64,
    #[serde(default)]
    pub deleted: bool,
}

impl Record {
    pub fn context(&self) -> RecordContext<'_> {
        RecordContext { created_by: &self.created_by, release: self.release }
    }

    pub fn get(&self, attribute: &str) -> Option<&Value> {
        self.values.get(attribute).filter(|v| !v.is_null())
    }

    pub fn text(&self, attribute: &str) -> Option<&str> {
        self.get(attribute).and_then(Value::as_str)
    }

    pub fn rid_ref(&self, attribute: &str) -> Option<Rid> {
        self.text(attribute).and_then(|s| s.parse().ok())
    }

    /// Value of an attribute or system column for filtering.
    pub fn column(&self, name: &str) -> Option<Value> {
        match name {
            "RID" => Some(Value::String(self.rid.to_string())),
            "RCB" => Some(Value::String(self.created_by.clone())),
            "RCT" => Some(Value::String(timestamp(self.created_at))),
            "RMT" => Some(Value::String(timestamp(self.modified_at))),
            "Release" => serde_json::to_value(self.release).ok(),
            "Stamp" => Some(Value::from(self.stamp)),
            other => self.get(other).cloned(),
        }
    }

    /// Wire form: user attributes plus system columns.
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        for (k, v) in &self.values {
            m.insert(k.clone(), v.clone());
        }
        for col in crate::erm::SYSTEM_COLUMNS {
            if let Some(v) = self.column(col) {
                m.insert(col.to_string(), v);
            }
        }
        Value::Object(m)
    }
}
