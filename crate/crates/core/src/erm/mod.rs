//! The entity-relationship model: schema definitions, the fixed ML schema and
//! additive evolution.

mod ml;
pub(crate) mod model;

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use ml::{ml_schema, ASSOCIATION_TYPES, CORE_TYPES, ML_SCHEMA};
pub use model::{Model, ModelChange};

/// Columns every record carries; user attributes may not reuse these names.
pub const SYSTEM_COLUMNS: [&str; 6] = ["RID", "RCB", "RCT", "RMT", "Release", "Stamp"];

/// Attributes forced onto every vocabulary type, in order.
pub const VOCABULARY_COLUMNS: [&str; 4] = ["Name", "Synonyms", "Description", "ID"];

/// Attributes forced onto every asset type, in order.
pub const ASSET_COLUMNS: [&str; 5] = ["URL", "Filename", "Length", "SHA256", "Description"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Text,
    Integer,
    Float,
    Boolean,
    Timestamp,
    Json,
    RidRef,
    TermRef,
}

impl ValueKind {
    pub fn is_reference(self) -> bool {
        matches!(self, ValueKind::RidRef | ValueKind::TermRef)
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeDef {
    pub name: String,
    pub value_kind: ValueKind,
    #[serde(default = "yes")]
    pub nullable: bool,
    #[serde(default)]
    pub default: Option<Value>,
}

impl AttributeDef {
    pub fn new(name: &str, value_kind: ValueKind) -> Self {
        AttributeDef { name: name.to_string(), value_kind, nullable: true, default: None }
    }

    pub fn required(name: &str, value_kind: ValueKind) -> Self {
        AttributeDef { nullable: false, ..AttributeDef::new(name, value_kind) }
    }
}

/// `from` is a local attribute of kind `rid_ref` or `term_ref`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKeyDef {
    pub from: String,
    pub to_schema: String,
    pub to_type: String,
}

impl ForeignKeyDef {
    pub fn new(from: &str, to_schema: &str, to_type: &str) -> Self {
        ForeignKeyDef { from: from.into(), to_schema: to_schema.into(), to_type: to_type.into() }
    }

    pub fn target(&self) -> TypeRef {
        TypeRef::new(&self.to_schema, &self.to_type)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityTypeDef {
    pub name: String,
    #[serde(default)]
    pub is_vocabulary: bool,
    #[serde(default)]
    pub is_asset: bool,
    #[serde(default)]
    pub attributes: Vec<AttributeDef>,
    #[serde(default)]
    pub foreign_keys: Vec<ForeignKeyDef>,
}

impl EntityTypeDef {
    pub fn new(name: &str) -> Self {
        EntityTypeDef {
            name: name.to_string(),
            is_vocabulary: false,
            is_asset: false,
            attributes: Vec::new(),
            foreign_keys: Vec::new(),
        }
    }

    pub fn vocabulary(name: &str) -> Self {
        EntityTypeDef { is_vocabulary: true, ..EntityTypeDef::new(name) }.normalized()
    }

    pub fn asset(name: &str) -> Self {
        EntityTypeDef { is_asset: true, ..EntityTypeDef::new(name) }.normalized()
    }

    pub fn attr(mut self, attribute: AttributeDef) -> Self {
        self.attributes.push(attribute);
        self
    }

    /// Adds a reference attribute together with its foreign key.
    pub fn reference(mut self, name: &str, kind: ValueKind, nullable: bool, to: &TypeRef) -> Self {
        self.attributes.push(AttributeDef { nullable, ..AttributeDef::new(name, kind) });
        self.foreign_keys.push(ForeignKeyDef::new(name, &to.schema, &to.name));
        self
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeDef> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn foreign_key(&self, from: &str) -> Option<&ForeignKeyDef> {
        self.foreign_keys.iter().find(|fk| fk.from == from)
    }

    /// Ensures the fixed vocabulary/asset attributes are present, prepending
    /// any that are missing.
    pub fn normalized(mut self) -> Self {
        let mut core = Vec::new();
        if self.is_vocabulary {
            core.extend(vocabulary_core());
        }
        if self.is_asset {
            core.extend(asset_core());
        }
        let mut seen = std::collections::HashSet::new();
        let missing: Vec<AttributeDef> = core
            .into_iter()
            .filter(|c| self.attribute(&c.name).is_none() && seen.insert(c.name.clone()))
            .collect();
        if !missing.is_empty() {
            let mut attrs = missing;
            attrs.append(&mut self.attributes);
            self.attributes = attrs;
        }
        self
    }
}

pub(crate) fn vocabulary_core() -> Vec<AttributeDef> {
    vec![
        AttributeDef::required("Name", ValueKind::Text),
        AttributeDef { default: Some(Value::Array(vec![])), ..AttributeDef::new("Synonyms", ValueKind::Json) },
        AttributeDef::new("Description", ValueKind::Text),
        AttributeDef::required("ID", ValueKind::Text),
    ]
}

pub(crate) fn asset_core() -> Vec<AttributeDef> {
    vec![
        AttributeDef::required("URL", ValueKind::Text),
        AttributeDef::required("Filename", ValueKind::Text),
        AttributeDef::required("Length", ValueKind::Integer),
        AttributeDef::required("SHA256", ValueKind::Text),
        AttributeDef::new("Description", ValueKind::Text),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaKind {
    Ml,
    Domain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaDef {
    pub name: String,
    pub kind: SchemaKind,
    /// Domain entity type that dataset membership binds to.
    #[serde(default)]
    pub link_target: Option<String>,
    #[serde(default)]
    pub entity_types: Vec<EntityTypeDef>,
}

impl SchemaDef {
    pub fn domain(name: &str, link_target: &str) -> Self {
        SchemaDef {
            name: name.to_string(),
            kind: SchemaKind::Domain,
            link_target: Some(link_target.to_string()),
            entity_types: Vec::new(),
        }
    }

    pub fn with(mut self, entity_type: EntityTypeDef) -> Self {
        self.entity_types.push(entity_type);
        self
    }

    pub fn entity_type(&self, name: &str) -> Option<&EntityTypeDef> {
        self.entity_types.iter().find(|t| t.name == name)
    }

    pub(crate) fn entity_type_mut(&mut self, name: &str) -> Option<&mut EntityTypeDef> {
        self.entity_types.iter_mut().find(|t| t.name == name)
    }
}

/// Schema-qualified entity type name, written `schema:type`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TypeRef {
    pub schema: String,
    #[serde(rename = "type")]
    pub name: String,
}

impl TypeRef {
    pub fn new(schema: &str, name: &str) -> Self {
        TypeRef { schema: schema.to_string(), name: name.to_string() }
    }

    pub fn ml(name: &str) -> Self {
        TypeRef::new(ML_SCHEMA, name)
    }
}

impl fmt::Display for TypeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.schema, self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "change", rename_all = "snake_case")]
pub enum SchemaChange {
    AddEntityType { schema: String, entity_type: EntityTypeDef },
    AddAttribute { schema: String, entity_type: String, attribute: AttributeDef },
    AddForeignKey { schema: String, entity_type: String, foreign_key: ForeignKeyDef },
}

impl SchemaChange {
    pub fn target(&self) -> TypeRef {
        match self {
            SchemaChange::AddEntityType { schema, entity_type } => TypeRef::new(schema, &entity_type.name),
            SchemaChange::AddAttribute { schema, entity_type, .. }
            | SchemaChange::AddForeignKey { schema, entity_type, .. } => TypeRef::new(schema, entity_type),
        }
    }

    pub fn summary(&self) -> String {
        match self {
            SchemaChange::AddEntityType { schema, entity_type } => {
                format!("add entity type {schema}:{}", entity_type.name)
            }
            SchemaChange::AddAttribute { schema, entity_type, attribute } => {
                format!("add attribute {schema}:{entity_type}.{}", attribute.name)
            }
            SchemaChange::AddForeignKey { schema, entity_type, foreign_key } => format!(
                "add foreign key {schema}:{entity_type}.{} -> {}",
                foreign_key.from,
                foreign_key.target()
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SchemaError {
    #[error("catalog already has an ml schema")]
    AlreadyBootstrapped,
    #[error("catalog has no ml schema yet")]
    NotBootstrapped,
    #[error("invalid schema: {}", .0.join("; "))]
    InvalidSpec(Vec<String>),
    #[error("domain schema does not designate a dataset link target")]
    NoLinkTarget,
    #[error("breaking change: {0}")]
    BreakingChange(String),
    #[error("name collision: {0}")]
    NameCollision(String),
    #[error("unknown entity type {0}")]
    UnknownEntityType(String),
}

pub(crate) fn valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}
