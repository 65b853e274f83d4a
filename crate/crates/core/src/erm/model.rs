use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    asset_core, ml_schema, valid_name, vocabulary_core, EntityTypeDef, ForeignKeyDef, SchemaChange,
    SchemaDef, SchemaError, SchemaKind, TypeRef, ValueKind, ML_SCHEMA, SYSTEM_COLUMNS,
};

/// One entry of the linear model history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelChange {
    pub version: u64,
    pub changes: Vec<String>,
}

/// All schemas of a catalog at one model version.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Model {
    pub version: u64,
    pub schemas: Vec<SchemaDef>,
    #[serde(default)]
    pub history: Vec<ModelChange>,
}

pub(crate) fn value_matches_kind(kind: ValueKind, value: &Value) -> bool {
    match kind {
        ValueKind::Text | ValueKind::TermRef => value.is_string(),
        ValueKind::Integer => value.is_i64() || value.is_u64(),
        ValueKind::Float => value.is_number(),
        ValueKind::Boolean => value.is_boolean(),
        ValueKind::Timestamp => value
            .as_str()
            .is_some_and(|s| chrono::DateTime::parse_from_rfc3339(s).is_ok()),
        ValueKind::Json => true,
        ValueKind::RidRef => value.as_str().is_some_and(|s| s.parse::<crate::Rid>().is_ok()),
    }
}

impl Model {
    pub fn is_bootstrapped(&self) -> bool {
        self.schemas.iter().any(|s| s.kind == SchemaKind::Ml)
    }

    pub fn schema(&self, name: &str) -> Option<&SchemaDef> {
        self.schemas.iter().find(|s| s.name == name)
    }

    pub fn domain_schema(&self) -> Option<&SchemaDef> {
        self.schemas.iter().find(|s| s.kind == SchemaKind::Domain)
    }

    /// The domain entity type bound as dataset member, if any.
    pub fn dataset_link(&self) -> Option<TypeRef> {
        let domain = self.domain_schema()?;
        Some(TypeRef::new(&domain.name, domain.link_target.as_deref()?))
    }

    pub fn entity_type(&self, t: &TypeRef) -> Option<&EntityTypeDef> {
        self.schema(&t.schema)?.entity_type(&t.name)
    }

    pub fn entity_types(&self) -> impl Iterator<Item = (TypeRef, &EntityTypeDef)> {
        self.schemas
            .iter()
            .flat_map(|s| s.entity_types.iter().map(move |t| (TypeRef::new(&s.name, &t.name), t)))
    }

    /// Resolves `schema:type`, or a bare type name when it is unambiguous.
    pub fn resolve(&self, name: &str) -> Result<TypeRef, SchemaError> {
        if let Some((schema, ty)) = name.split_once(':') {
            let t = TypeRef::new(schema, ty);
            return self.entity_type(&t).map(|_| t).ok_or_else(|| SchemaError::UnknownEntityType(name.into()));
        }
        let hits: Vec<TypeRef> = self.entity_types().filter(|(_, d)| d.name == name).map(|(t, _)| t).collect();
        match hits.len() {
            1 => Ok(hits.into_iter().next().unwrap()),
            0 => Err(SchemaError::UnknownEntityType(name.into())),
            _ => Err(SchemaError::UnknownEntityType(format!("{name} (ambiguous; qualify with schema)"))),
        }
    }

    /// Foreign keys in any type that point at `target`.
    pub fn inbound(&self, target: &TypeRef) -> Vec<(TypeRef, &ForeignKeyDef)> {
        self.entity_types()
            .flat_map(|(t, def)| {
                def.foreign_keys.iter().filter(|fk| fk.target() == *target).map(move |fk| (t.clone(), fk))
            })
            .collect()
    }

    pub(crate) fn bootstrap(&mut self) -> Result<(), SchemaError> {
        if self.is_bootstrapped() {
            return Err(SchemaError::AlreadyBootstrapped);
        }
        let mut next = self.clone();
        next.schemas.insert(0, ml_schema());
        next.validate_structure()?;
        next.commit(vec!["bootstrap ml schema".into()]);
        *self = next;
        Ok(())
    }

    /// Returns the model with `spec` installed and bound, without committing.
    pub(crate) fn with_domain(&self, spec: SchemaDef) -> Result<Option<Model>, SchemaError> {
        if !self.is_bootstrapped() {
            return Err(SchemaError::NotBootstrapped);
        }
        if spec.kind != SchemaKind::Domain {
            return Err(SchemaError::InvalidSpec(vec!["schema kind must be domain".into()]));
        }
        let link = spec.link_target.clone().ok_or(SchemaError::NoLinkTarget)?;
        let mut spec = spec;
        spec.entity_types = spec.entity_types.into_iter().map(EntityTypeDef::normalized).collect();
        match spec.entity_type(&link) {
            None => return Err(SchemaError::NoLinkTarget),
            Some(t) if t.is_vocabulary => {
                return Err(SchemaError::InvalidSpec(vec![format!("link target {link} is a vocabulary")]))
            }
            Some(_) => {}
        }
        if let Some(existing) = self.domain_schema() {
            if *existing == spec {
                return Ok(None);
            }
            return Err(SchemaError::InvalidSpec(vec![format!(
                "catalog already binds domain schema {}; use schema evolution to extend it",
                existing.name
            )]));
        }
        let mut next = self.clone();
        let binding = ForeignKeyDef::new("Member", &spec.name, &link);
        let summary = format!("define domain schema {} linked at {}:{link}", spec.name, spec.name);
        next.schemas.push(spec);
        next.schemas[0]
            .entity_type_mut("Dataset_Member")
            .expect("ml schema has Dataset_Member")
            .foreign_keys
            .push(binding);
        next.validate_structure()?;
        next.commit(vec![summary]);
        Ok(Some(next))
    }

    /// Applies an additive batch, returning the next model version.
    pub(crate) fn with_changes(&self, changes: &[SchemaChange]) -> Result<Model, SchemaError> {
        if changes.is_empty() {
            return Err(SchemaError::InvalidSpec(vec!["empty change set".into()]));
        }
        let mut next = self.clone();
        for change in changes {
            match change {
                SchemaChange::AddEntityType { schema, entity_type } => {
                    let s = next
                        .schemas
                        .iter_mut()
                        .find(|s| &s.name == schema)
                        .ok_or_else(|| SchemaError::InvalidSpec(vec![format!("unknown schema {schema}")]))?;
                    if s.entity_type(&entity_type.name).is_some() {
                        return Err(SchemaError::NameCollision(format!("{schema}:{}", entity_type.name)));
                    }
                    s.entity_types.push(entity_type.clone().normalized());
                }
                SchemaChange::AddAttribute { schema, entity_type, attribute } => {
                    let t = next.type_mut(schema, entity_type)?;
                    if t.attribute(&attribute.name).is_some() {
                        return Err(SchemaError::NameCollision(format!(
                            "{schema}:{entity_type}.{}",
                            attribute.name
                        )));
                    }
                    t.attributes.push(attribute.clone());
                }
                SchemaChange::AddForeignKey { schema, entity_type, foreign_key } => {
                    let t = next.type_mut(schema, entity_type)?;
                    if t.foreign_key(&foreign_key.from).is_some() {
                        return Err(SchemaError::NameCollision(format!(
                            "foreign key on {schema}:{entity_type}.{}",
                            foreign_key.from
                        )));
                    }
                    t.foreign_keys.push(foreign_key.clone());
                }
            }
        }
        next.validate_structure()?;
        next.commit(changes.iter().map(SchemaChange::summary).collect());
        Ok(next)
    }

    fn type_mut(&mut self, schema: &str, name: &str) -> Result<&mut EntityTypeDef, SchemaError> {
        self.schemas
            .iter_mut()
            .find(|s| s.name == schema)
            .and_then(|s| s.entity_type_mut(name))
            .ok_or_else(|| SchemaError::UnknownEntityType(format!("{schema}:{name}")))
    }

    fn commit(&mut self, changes: Vec<String>) {
        self.version += 1;
        self.history.push(ModelChange { version: self.version, changes });
    }

    /// True when every schema, type, attribute and foreign key of `older`
    /// is present and unchanged here.
    pub fn extends(&self, older: &Model) -> bool {
        older.entity_types().all(|(t, old)| {
            self.entity_type(&t).is_some_and(|new| {
                new.is_vocabulary == old.is_vocabulary
                    && new.is_asset == old.is_asset
                    && old.attributes.iter().all(|a| new.attribute(&a.name) == Some(a))
                    && old.foreign_keys.iter().all(|fk| new.foreign_key(&fk.from) == Some(fk))
            })
        }) && older.schemas.iter().all(|s| {
            self.schema(&s.name).is_some_and(|n| n.kind == s.kind && n.link_target == s.link_target)
        })
    }

    pub fn validate_structure(&self) -> Result<(), SchemaError> {
        let mut problems = Vec::new();
        let ml_count = self.schemas.iter().filter(|s| s.kind == SchemaKind::Ml).count();
        if ml_count > 1 {
            problems.push("more than one ml schema".to_string());
        }
        if self.schemas.iter().filter(|s| s.kind == SchemaKind::Domain).count() > 1 {
            problems.push("more than one domain schema".to_string());
        }
        let mut schema_names = HashSet::new();
        for schema in &self.schemas {
            if !valid_name(&schema.name) && schema.name != ML_SCHEMA {
                problems.push(format!("invalid schema name {:?}", schema.name));
            }
            if !schema_names.insert(schema.name.as_str()) {
                problems.push(format!("duplicate schema name {}", schema.name));
            }
            let mut type_names = HashSet::new();
            for t in &schema.entity_types {
                let q = format!("{}:{}", schema.name, t.name);
                if !valid_name(&t.name) {
                    problems.push(format!("invalid entity type name {q:?}"));
                }
                if !type_names.insert(t.name.as_str()) {
                    problems.push(format!("duplicate entity type {q}"));
                }
                self.check_entity_type(&q, t, &mut problems);
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SchemaError::InvalidSpec(problems))
        }
    }

    fn check_entity_type(&self, q: &str, t: &EntityTypeDef, problems: &mut Vec<String>) {
        let mut attr_names = HashSet::new();
        for a in &t.attributes {
            if !valid_name(&a.name) || SYSTEM_COLUMNS.contains(&a.name.as_str()) {
                problems.push(format!("invalid attribute name {q}.{}", a.name));
            }
            if !attr_names.insert(a.name.as_str()) {
                problems.push(format!("duplicate attribute {q}.{}", a.name));
            }
            if let Some(d) = &a.default {
                if !value_matches_kind(a.value_kind, d) {
                    problems.push(format!("default of {q}.{} does not match its kind", a.name));
                }
            }
            if a.value_kind.is_reference() && t.foreign_key(&a.name).is_none() {
                let unbound_member = q == "ml:Dataset_Member" && a.name == "Member";
                if !unbound_member {
                    problems.push(format!("{q}.{} is a reference without a foreign key", a.name));
                }
            }
        }
        let mut fk_from = HashSet::new();
        for fk in &t.foreign_keys {
            if !fk_from.insert(fk.from.as_str()) {
                problems.push(format!("duplicate foreign key on {q}.{}", fk.from));
            }
            let Some(attr) = t.attribute(&fk.from) else {
                problems.push(format!("foreign key from unknown attribute {q}.{}", fk.from));
                continue;
            };
            let Some(target) = self.entity_type(&fk.target()) else {
                problems.push(format!("dangling foreign key {q}.{} -> {}", fk.from, fk.target()));
                continue;
            };
            match attr.value_kind {
                ValueKind::TermRef if !target.is_vocabulary => problems.push(format!(
                    "{q}.{} is a term_ref but {} is not a vocabulary",
                    fk.from,
                    fk.target()
                )),
                ValueKind::RidRef if target.is_vocabulary => problems.push(format!(
                    "{q}.{} is a rid_ref to vocabulary {}; use term_ref",
                    fk.from,
                    fk.target()
                )),
                ValueKind::TermRef | ValueKind::RidRef => {}
                _ => problems.push(format!("foreign key attribute {q}.{} must be rid_ref or term_ref", fk.from)),
            }
        }
        let mut required = Vec::new();
        if t.is_vocabulary {
            required.extend(vocabulary_core());
        }
        if t.is_asset {
            required.extend(asset_core());
        }
        for core in required {
            match t.attribute(&core.name) {
                Some(a) if a.value_kind == core.value_kind => {}
                Some(_) => problems.push(format!("{q}.{} must have kind {:?}", core.name, core.value_kind)),
                None => problems.push(format!("{q} lacks required attribute {}", core.name)),
            }
        }
    }
}
