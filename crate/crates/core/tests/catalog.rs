use std::collections::BTreeSet;
use std::sync::{Arc, Barrier};

use fairlake_core::catalog::acl::{authorize, authorize_store, Action, RecordContext, ReleaseState, StoreAction};
use fairlake_core::catalog::query::{Filter, QuerySpec};
use fairlake_core::catalog::{Mutation, MutationOp};
use fairlake_core::erm::{AttributeDef, EntityTypeDef, ForeignKeyDef, SchemaChange, SchemaDef, SchemaError, TypeRef, ValueKind};
use fairlake_core::fixtures::{eye_schema, mouse_schema};
use fairlake_core::{values, Catalog, CatalogError, Principal, Role};
use serde_json::{json, Value};

fn curator() -> Principal {
    Principal::new("prof", Role::Curator)
}

fn alice() -> Principal {
    Principal::new("alice", Role::Writer)
}

fn bob() -> Principal {
    Principal::new("bob", Role::Reader)
}

fn eye_catalog() -> Catalog {
    let c = Catalog::in_memory("EYE").unwrap();
    c.bootstrap_ml_schema().unwrap();
    c.define_domain_schema(&curator(), eye_schema()).unwrap();
    for side in ["Left", "Right", "Unknown"] {
        c.add_vocabulary_term(&curator(), "Image_Side", side, &[], "").unwrap();
    }
    for tag in ["Glaucoma", "No Glaucoma"] {
        c.add_vocabulary_term(&curator(), "Diagnosis_Tag", tag, &[], "").unwrap();
    }
    c
}

fn subject(c: &Catalog, who: &Principal, id: &str) -> fairlake_core::Rid {
    c.apply(who, vec![Mutation::insert(&TypeRef::new("eye", "Subject"), values! { "Subject_ID" => id })]).unwrap()[0]
}

#[test]
fn ml_schema_inventory() {
    let c = Catalog::in_memory("T").unwrap();
    c.bootstrap_ml_schema().unwrap();
    let doc = c.introspect();
    let ml = &doc.schemas[0];
    let names = |pred: &dyn Fn(&EntityTypeDef) -> bool| -> BTreeSet<String> {
        ml.entity_types.iter().filter(|t| pred(t)).map(|t| t.name.clone()).collect()
    };
    let vocab = names(&|t| t.is_vocabulary);
    assert_eq!(
        vocab,
        ["Dataset_Type", "Workflow_Type", "Execution_Asset_Type", "Execution_Metadata_Type"]
            .map(String::from)
            .into()
    );
    let assoc: BTreeSet<String> = ["Dataset_Member", "Execution_Dataset", "Execution_Asset_Link"].map(String::from).into();
    let core = names(&|t| !t.is_vocabulary && !assoc.contains(&t.name));
    assert_eq!(
        core,
        ["Dataset", "Workflow", "Execution", "Execution_Asset", "Execution_Metadata"].map(String::from).into()
    );
    assert_eq!(ml.entity_types.len(), 12);
    let exec = ml.entity_type("Execution").unwrap();
    assert_eq!(exec.foreign_key("Workflow").unwrap().to_type, "Workflow");
    let link = ml.entity_type("Execution_Asset_Link").unwrap();
    assert!(link.attribute("Role").is_some());
    assert!(doc.domain().is_none());
    assert!(matches!(c.bootstrap_ml_schema(), Err(CatalogError::Schema(SchemaError::AlreadyBootstrapped))));
}

#[test]
fn domain_binding() {
    let c = eye_catalog();
    assert_eq!(c.model().dataset_link(), Some(TypeRef::new("eye", "Subject")));
    let doc = c.introspect();
    let obs = doc.domain().unwrap().entity_type("Observation").unwrap();
    assert_eq!(obs.foreign_key("Subject").unwrap().to_type, "Subject");

    let m = Catalog::in_memory("MORPH").unwrap();
    m.bootstrap_ml_schema().unwrap();
    m.define_domain_schema(&curator(), mouse_schema()).unwrap();
    assert_eq!(m.model().dataset_link(), Some(TypeRef::new("morph", "Specimen")));
}

#[test]
fn invalid_domain_specs() {
    let c = Catalog::in_memory("T").unwrap();
    c.bootstrap_ml_schema().unwrap();
    let dangling = SchemaDef::domain("d", "A").with(
        EntityTypeDef::new("A").reference("B", ValueKind::RidRef, true, &TypeRef::new("d", "Missing")),
    );
    assert!(matches!(
        c.define_domain_schema(&curator(), dangling),
        Err(CatalogError::Schema(SchemaError::InvalidSpec(_)))
    ));
    let mut unlinked = SchemaDef::domain("d", "A").with(EntityTypeDef::new("A"));
    unlinked.link_target = None;
    assert!(matches!(c.define_domain_schema(&curator(), unlinked), Err(CatalogError::Schema(SchemaError::NoLinkTarget))));
    let dup = SchemaDef::domain("d", "A").with(EntityTypeDef::new("A")).with(EntityTypeDef::new("A"));
    assert!(c.define_domain_schema(&curator(), dup).is_err());
    assert!(matches!(
        c.define_domain_schema(&alice(), eye_schema()),
        Err(CatalogError::AccessDenied(d)) if d.rule == "model-change-curator-only"
    ));
}

#[test]
fn introspection_round_trip_is_fixed_point() {
    let c = eye_catalog();
    let before = c.model_version();
    let domain = c.introspect().domain().unwrap().clone();
    c.define_domain_schema(&curator(), domain).unwrap();
    assert_eq!(c.model_version(), before);
    let text = serde_json::to_string(&c.introspect()).unwrap();
    let back: fairlake_core::catalog::ModelDocument = serde_json::from_str(&text).unwrap();
    assert_eq!(back, c.introspect());
}

#[test]
fn additive_evolution() {
    let c = eye_catalog();
    let s = subject(&c, &alice(), "S1");
    let v = c.model_version();
    let old = c.introspect();
    c.add_vocabulary_term(&curator(), "Gender", "Female", &[], "").unwrap();
    let change = SchemaChange::AddAttribute {
        schema: "eye".into(),
        entity_type: "Subject".into(),
        attribute: AttributeDef::new("Ethnicity", ValueKind::Text),
    };
    c.evolve_schema(&curator(), &[change]).unwrap();
    assert_eq!(c.model_version(), v + 1);
    assert!(c.lookup(s).is_some());
    let record = c.lookup(s).unwrap();
    assert!(c.validate_record("Subject", &record.values).unwrap().is_empty());
    let now = c.introspect();
    for schema in &old.schemas {
        let later = now.schemas.iter().find(|x| x.name == schema.name).unwrap();
        for t in &schema.entity_types {
            let lt = later.entity_type(&t.name).unwrap();
            for a in &t.attributes {
                assert_eq!(lt.attribute(&a.name), Some(a));
            }
        }
    }

    let breaking = SchemaChange::AddAttribute {
        schema: "eye".into(),
        entity_type: "Subject".into(),
        attribute: AttributeDef::required("X", ValueKind::Integer),
    };
    assert!(matches!(
        c.evolve_schema(&curator(), &[breaking]),
        Err(CatalogError::Schema(SchemaError::BreakingChange(_)))
    ));
    assert_eq!(c.model_version(), v + 1);

    let collision = SchemaChange::AddAttribute {
        schema: "eye".into(),
        entity_type: "Subject".into(),
        attribute: AttributeDef::new("Subject_ID", ValueKind::Text),
    };
    assert!(matches!(
        c.evolve_schema(&curator(), &[collision]),
        Err(CatalogError::Schema(SchemaError::NameCollision(_)))
    ));
}

#[test]
fn entity_type_and_foreign_key_together() {
    let c = eye_catalog();
    let v = c.model_version();
    let changes = [
        SchemaChange::AddEntityType {
            schema: "eye".into(),
            entity_type: EntityTypeDef::new("Annotation").attr(AttributeDef::new("Image", ValueKind::RidRef)),
        },
        SchemaChange::AddForeignKey {
            schema: "eye".into(),
            entity_type: "Annotation".into(),
            foreign_key: ForeignKeyDef::new("Image", "eye", "Image"),
        },
    ];
    c.evolve_schema(&curator(), &changes).unwrap();
    assert_eq!(c.model_version(), v + 1);
    let ann = c.model().entity_type(&TypeRef::new("eye", "Annotation")).unwrap().clone();
    assert_eq!(ann.foreign_key("Image").unwrap().to_type, "Image");

    // a failing second change leaves nothing behind
    let bad = [
        SchemaChange::AddEntityType { schema: "eye".into(), entity_type: EntityTypeDef::new("Scratch") },
        SchemaChange::AddForeignKey {
            schema: "eye".into(),
            entity_type: "Scratch".into(),
            foreign_key: ForeignKeyDef::new("Nope", "eye", "Image"),
        },
    ];
    assert!(c.evolve_schema(&curator(), &bad).is_err());
    assert!(c.model().entity_type(&TypeRef::new("eye", "Scratch")).is_none());
    assert_eq!(c.model_version(), v + 1);
}

#[test]
fn vocabulary_terms() {
    let c = eye_catalog();
    assert_eq!(c.terms("Image_Side").unwrap().len(), 3);
    let t = c.add_vocabulary_term(&curator(), "Execution_Asset_Type", "Image Annotation", &[], "").unwrap();
    assert!(t.curie.starts_with("EYE:"));
    assert!(matches!(
        c.add_vocabulary_term(&curator(), "Image_Side", "Left", &[], ""),
        Err(CatalogError::DuplicateTerm(_))
    ));
    c.add_vocabulary_term(&curator(), "Gender", "Female", &["F"], "").unwrap();
    assert!(matches!(c.add_vocabulary_term(&curator(), "Gender", "F", &[], ""), Err(CatalogError::DuplicateTerm(_))));
    assert!(matches!(
        c.add_vocabulary_term(&curator(), "Subject", "x", &[], ""),
        Err(CatalogError::NotAVocabulary(_))
    ));
    let by_name = c.term("Image_Side", "Right").unwrap().unwrap();
    let by_curie = c.term("Image_Side", &by_name.curie).unwrap().unwrap();
    assert_eq!(by_name, by_curie);
    let curies: BTreeSet<String> = c
        .introspect()
        .vocabularies
        .iter()
        .flat_map(|v| v.terms.iter().map(|t| t.curie.clone()))
        .collect();
    let count: usize = c.introspect().vocabularies.iter().map(|v| v.terms.len()).sum();
    assert_eq!(curies.len(), count);
}

#[test]
fn record_validation() {
    let c = eye_catalog();
    let s = subject(&c, &alice(), "S1");
    let obs = c
        .apply(&alice(), vec![Mutation::insert(&TypeRef::new("eye", "Observation"), values! { "Subject" => s.to_string() })])
        .unwrap()[0];
    let image = c
        .apply(
            &alice(),
            vec![Mutation::insert(
                &TypeRef::new("eye", "Image"),
                values! {
                    "Observation" => obs.to_string(), "URL" => "http://x/store/a?version=v1", "Filename" => "a.jpg",
                    "Length" => 3, "SHA256" => "0".repeat(64), "Image_Side" => "Left",
                },
            )],
        )
        .unwrap()[0];
    let good = values! { "Image" => image.to_string(), "Diagnosis_Tag" => "Glaucoma", "Cup_Disk_Ratio" => 0.6 };
    assert!(c.validate_record("Diagnosis", &good).unwrap().is_empty());
    let unknown = values! { "Image" => image.to_string(), "Diagnosis_Tag" => "Maybe Glaucoma" };
    let report = c.validate_record("Diagnosis", &unknown).unwrap();
    assert_eq!(report.len(), 1);
    assert_eq!(report[0].attribute, "Diagnosis_Tag");
    let missing = values! { "Diagnosis_Tag" => "Glaucoma" };
    let report = c.validate_record("Diagnosis", &missing).unwrap();
    assert_eq!(report.len(), 1);
    assert_eq!(report[0].attribute, "Image");
    assert!(matches!(c.validate_record("Nope", &good), Err(CatalogError::Schema(SchemaError::UnknownEntityType(_)))));
}

fn expected_cell(role: Role, action: Action, own: bool, released: bool) -> bool {
    match role {
        Role::Curator => true,
        Role::Writer => match action {
            Action::Read => own || released,
            _ => own,
        },
        Role::Reader => action == Action::Read && released,
    }
}

#[test]
fn self_curation_matrix() {
    let mut cells = 0;
    for role in [Role::Reader, Role::Writer, Role::Curator] {
        for action in [Action::Read, Action::Update, Action::Delete] {
            for own in [true, false] {
                for release in [ReleaseState::Pending, ReleaseState::Released] {
                    let p = Principal::new("me", role);
                    let ctx = RecordContext { created_by: if own { "me" } else { "other" }, release };
                    let d = authorize(&p, action, Some(ctx));
                    assert_eq!(
                        d.allowed,
                        expected_cell(role, action, own, release == ReleaseState::Released),
                        "{role} {action:?} own={own} {release:?}"
                    );
                    assert!(!d.rule.is_empty());
                    cells += 1;
                }
            }
        }
    }
    assert_eq!(cells, 36);
    assert_eq!(
        authorize(&alice(), Action::Update, Some(RecordContext { created_by: "alice", release: ReleaseState::Pending })).rule,
        "self-curation-owner"
    );
    assert_eq!(
        authorize(&bob(), Action::Update, Some(RecordContext { created_by: "alice", release: ReleaseState::Released })).rule,
        "reader-read-only"
    );
    assert!(!authorize_store(&alice(), StoreAction::Delete).allowed);
    assert!(authorize_store(&alice(), StoreAction::Put).allowed);
    assert!(!authorize_store(&bob(), StoreAction::Put).allowed);
    assert!(authorize_store(&curator(), StoreAction::Delete).allowed);
}

#[test]
fn inserts_and_denials() {
    let c = eye_catalog();
    let t = TypeRef::new("eye", "Subject");
    let rids = c
        .mutate_records(
            &alice(),
            "Subject",
            MutationOp::Insert,
            &[json!({"Subject_ID": "a"}), json!({"Subject_ID": "b"}), json!({"Subject_ID": "c"})],
        )
        .unwrap();
    assert_eq!(rids.len(), 3);
    assert_eq!(rids.iter().collect::<BTreeSet<_>>().len(), 3);
    for r in &rids {
        assert_eq!(c.lookup(*r).unwrap().created_by, "alice");
    }
    let denied = c.apply(&bob(), vec![Mutation::insert(&t, values! { "Subject_ID" => "x" })]);
    assert!(matches!(denied, Err(CatalogError::AccessDenied(d)) if d.rule == "reader-read-only"));
}

#[test]
fn failed_batch_changes_nothing() {
    let c = eye_catalog();
    subject(&c, &alice(), "S1");
    let before = c.state_digest();
    let t = TypeRef::new("eye", "Subject");
    let batch = vec![
        Mutation::insert(&t, values! { "Subject_ID" => "ok" }),
        Mutation::insert(&t, values! { "Birth_Year" => "not a number" }),
    ];
    match c.apply(&alice(), batch) {
        Err(CatalogError::ValidationFailed(reports)) => {
            assert_eq!(reports.len(), 1);
            assert_eq!(reports[0].index, 1);
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(c.state_digest(), before);
}

#[test]
fn concurrent_updates_conflict() {
    let c = Arc::new(eye_catalog());
    let s = subject(&c, &alice(), "S1");
    let stamp = c.lookup(s).unwrap().stamp;
    let barrier = Arc::new(Barrier::new(2));
    let handles: Vec<_> = (0..2)
        .map(|i| {
            let (c, barrier) = (c.clone(), barrier.clone());
            std::thread::spawn(move || {
                barrier.wait();
                c.apply(
                    &alice(),
                    vec![Mutation::Update {
                        entity_type: TypeRef::new("eye", "Subject"),
                        rid: s,
                        expected_stamp: Some(stamp),
                        values: values! { "Birth_Year" => 1990 + i },
                        release: None,
                    }],
                )
            })
        })
        .collect();
    let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert_eq!(results.iter().filter(|r| r.is_ok()).count(), 1);
    assert!(results.iter().any(|r| matches!(r, Err(CatalogError::StaleWrite(x)) if *x == s)));
}

#[test]
fn updates_and_tombstones() {
    let c = eye_catalog();
    let s = subject(&c, &alice(), "S1");
    let r0 = c.lookup(s).unwrap();
    c.apply(
        &alice(),
        vec![Mutation::Update {
            entity_type: TypeRef::new("eye", "Subject"),
            rid: s,
            expected_stamp: None,
            values: values! { "Birth_Year" => 1980 },
            release: Some(ReleaseState::Released),
        }],
    )
    .unwrap();
    let r1 = c.lookup(s).unwrap();
    assert!(r1.modified_at >= r0.modified_at);
    assert_eq!(r1.release, ReleaseState::Released);
    assert_eq!(r1.get("Subject_ID"), Some(&Value::from("S1")));
    assert!(c.get(&bob(), s).is_ok());

    let denied = c.apply(
        &Principal::new("carol", Role::Writer),
        vec![Mutation::Delete { entity_type: TypeRef::new("eye", "Subject"), rid: s, expected_stamp: None }],
    );
    assert!(matches!(denied, Err(CatalogError::AccessDenied(d)) if d.rule == "not-owner"));
    c.apply(&alice(), vec![Mutation::Delete { entity_type: TypeRef::new("eye", "Subject"), rid: s, expected_stamp: None }])
        .unwrap();
    assert!(c.lookup(s).unwrap().deleted);
    assert!(c.get(&curator(), s).is_err());
    let next = subject(&c, &alice(), "S2");
    assert_ne!(next, s);
}

#[test]
fn queries() {
    let c = eye_catalog();
    let mut images = Vec::new();
    for (i, (side, tag)) in [("Left", "Glaucoma"), ("Right", "No Glaucoma"), ("Left", "No Glaucoma")].iter().enumerate() {
        let s = subject(&c, &alice(), &format!("S{i}"));
        let obs = c
            .apply(&alice(), vec![Mutation::insert(&TypeRef::new("eye", "Observation"), values! { "Subject" => s.to_string() })])
            .unwrap()[0];
        let image = c
            .apply(
                &alice(),
                vec![Mutation::insert(
                    &TypeRef::new("eye", "Image"),
                    values! {
                        "Observation" => obs.to_string(), "URL" => format!("http://x/store/{i}?version=v1"),
                        "Filename" => format!("{i}.jpg"), "Length" => 1, "SHA256" => "1".repeat(64), "Image_Side" => *side,
                    },
                )],
            )
            .unwrap()[0];
        c.apply(
            &alice(),
            vec![Mutation::insert(
                &TypeRef::new("eye", "Diagnosis"),
                values! { "Image" => image.to_string(), "Diagnosis_Tag" => *tag },
            )],
        )
        .unwrap();
        images.push(image);
    }
    let left = c.query(&curator(), &QuerySpec::new("Image").filter(Filter::eq("Image_Side", "Left"))).unwrap();
    assert_eq!(left.count, 2);
    assert!(left.data.windows(2).all(|w| w[0].rid < w[1].rid));

    let spec = QuerySpec::new("Subject")
        .join("Observation")
        .join("Image")
        .join("Diagnosis")
        .filter(Filter::parse("Diagnosis.Diagnosis_Tag::=::No Glaucoma").unwrap());
    let subjects = c.query(&curator(), &spec).unwrap();
    assert_eq!(subjects.count, 2);
    assert!(subjects.data.iter().all(|r| r.entity_type.name == "Subject"));

    let empty = c.query(&curator(), &QuerySpec::new("Workflow")).unwrap();
    assert_eq!(empty.count, 0);
    assert!(matches!(c.query(&curator(), &QuerySpec::new("Subject").join("Diagnosis")), Err(CatalogError::InvalidQuery(_))));

    // pending records of others are invisible to readers and other writers
    let curator_view = c.query(&curator(), &QuerySpec::new("Subject")).unwrap();
    let reader_view = c.query(&bob(), &QuerySpec::new("Subject")).unwrap();
    assert_eq!(reader_view.count, 0);
    assert_eq!(curator_view.count, 3);
    let own_view = c.query(&alice(), &QuerySpec::new("Subject")).unwrap();
    assert_eq!(own_view.count, 3);
    assert!(reader_view.data.iter().all(|r| curator_view.data.contains(r)));
    for r in &curator_view.data {
        assert_eq!(c.get(&curator(), r.rid).unwrap().rid, r.rid);
    }
}

#[test]
fn snapshot_persists_across_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("catalog.json");
    let minter = Arc::new(fairlake_core::RidMinter::default());
    let c = Catalog::create("EYE", minter, Some(path.clone())).unwrap();
    c.bootstrap_ml_schema().unwrap();
    c.define_domain_schema(&curator(), eye_schema()).unwrap();
    let s = subject(&c, &alice(), "S1");
    let digest = c.state_digest();
    drop(c);
    let minter = Arc::new(fairlake_core::RidMinter::default());
    let reopened = Catalog::open(&path, minter).unwrap();
    assert_eq!(reopened.state_digest(), digest);
    let next = subject(&reopened, &alice(), "S2");
    assert!(next > s);
}
