//! Two small but complete lakes with different domain models: an eye
//! imaging study keyed by subject and a mouse morphology study keyed by
//! specimen. Each has vocabularies, assets in the store, a dataset, a
//! finished execution and catalog-level licence and compliance annotations.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::cache::DatasetCache;
use crate::catalog::acl::{Principal, Role};
use crate::catalog::Mutation;
use crate::erm::{AttributeDef, EntityTypeDef, SchemaDef, TypeRef, ValueKind};
use crate::fair::{COMPLIANCE_ANNOTATION, LICENSE_ANNOTATION, METADATA_LICENSE_ANNOTATION};
use crate::lake::{Lake, LakeError};
use crate::provenance::{
    create_dataset, execution_init, execution_scope, execution_upload, Dataset, ExecutionConfig, WorkflowSpec,
    ASSETS_DIR,
};
use crate::rid::Rid;
use crate::util::sha256_hex;

pub const CURATOR_TOKEN: &str = "curator-token";
pub const WRITER_TOKEN: &str = "writer-token";
pub const READER_TOKEN: &str = "reader-token";

pub struct Fixture {
    pub lake: Lake,
    pub curator: Principal,
    pub writer: Principal,
    pub reader: Principal,
    /// Link-target records (subjects or specimens), in creation order.
    pub members: Vec<Rid>,
    pub dataset: Dataset,
    pub execution: Rid,
}

pub fn eye_schema() -> SchemaDef {
    let t = |n: &str| TypeRef::new("eye", n);
    SchemaDef::domain("eye", "Subject")
        .with(EntityTypeDef::vocabulary("Gender"))
        .with(EntityTypeDef::vocabulary("Image_Side"))
        .with(EntityTypeDef::vocabulary("Diagnosis_Tag"))
        .with(
            EntityTypeDef::new("Subject")
                .attr(AttributeDef::required("Subject_ID", ValueKind::Text))
                .reference("Gender", ValueKind::TermRef, true, &t("Gender"))
                .attr(AttributeDef::new("Birth_Year", ValueKind::Integer)),
        )
        .with(
            EntityTypeDef::new("Observation")
                .reference("Subject", ValueKind::RidRef, false, &t("Subject"))
                .attr(AttributeDef::new("Visit_Date", ValueKind::Text)),
        )
        .with(
            EntityTypeDef::asset("Image")
                .reference("Observation", ValueKind::RidRef, false, &t("Observation"))
                .reference("Image_Side", ValueKind::TermRef, true, &t("Image_Side")),
        )
        .with(
            EntityTypeDef::new("Diagnosis")
                .reference("Image", ValueKind::RidRef, false, &t("Image"))
                .reference("Diagnosis_Tag", ValueKind::TermRef, false, &t("Diagnosis_Tag"))
                .attr(AttributeDef::new("Cup_Disk_Ratio", ValueKind::Float)),
        )
}

pub fn mouse_schema() -> SchemaDef {
    let t = |n: &str| TypeRef::new("morph", n);
    SchemaDef::domain("morph", "Specimen")
        .with(EntityTypeDef::vocabulary("Genotype"))
        .with(EntityTypeDef::vocabulary("Sex"))
        .with(
            EntityTypeDef::new("Specimen")
                .attr(AttributeDef::required("Specimen_ID", ValueKind::Text))
                .reference("Genotype", ValueKind::TermRef, false, &t("Genotype"))
                .reference("Sex", ValueKind::TermRef, true, &t("Sex"))
                .attr(AttributeDef::new("Age_Days", ValueKind::Integer)),
        )
        .with(
            EntityTypeDef::asset("Scan")
                .reference("Specimen", ValueKind::RidRef, false, &t("Specimen"))
                .attr(AttributeDef::new("Resolution_um", ValueKind::Float)),
        )
        .with(
            EntityTypeDef::asset("Landmarks")
                .reference("Scan", ValueKind::RidRef, false, &t("Scan"))
                .attr(AttributeDef::new("Landmark_Count", ValueKind::Integer)),
        )
}

fn principals(lake: &Lake) -> Result<(Principal, Principal, Principal), LakeError> {
    let curator = Principal::new("curator@example.org", Role::Curator);
    let writer = Principal::new("writer@example.org", Role::Writer);
    let reader = Principal::new("reader@example.org", Role::Reader);
    lake.add_token(CURATOR_TOKEN, curator.clone())?;
    lake.add_token(WRITER_TOKEN, writer.clone())?;
    lake.add_token(READER_TOKEN, reader.clone())?;
    Ok((curator, writer, reader))
}

fn annotate(lake: &Lake, curator: &Principal) -> Result<(), LakeError> {
    let c = lake.catalog();
    c.set_annotation(curator, LICENSE_ANNOTATION, "CC-BY-4.0")?;
    c.set_annotation(curator, METADATA_LICENSE_ANNOTATION, "CC0-1.0")?;
    c.set_annotation(curator, COMPLIANCE_ANNOTATION, "BagIt 1.0 packaging; FAIR principles self-assessment")?;
    Ok(())
}

fn terms(lake: &Lake, curator: &Principal, vocab: &str, names: &[(&str, &str)]) -> Result<(), LakeError> {
    for (name, description) in names {
        lake.catalog().add_vocabulary_term(curator, vocab, name, &[], description)?;
    }
    Ok(())
}

/// Stores `bytes` at `path` and returns the asset attributes describing it.
pub fn put_bytes(
    lake: &Lake,
    principal: &Principal,
    path: &str,
    bytes: &[u8],
) -> Result<BTreeMap<String, Value>, LakeError> {
    let store = lake.store();
    let parent = &path[..path.rfind('/').unwrap_or(0)];
    if !parent.is_empty() {
        store.ensure_namespace(principal, parent)?;
    }
    let sha = sha256_hex(bytes);
    let v = store.put(principal, path, &mut &bytes[..], Some(&sha), "application/octet-stream")?;
    let filename = path.rsplit('/').next().unwrap_or(path);
    Ok(BTreeMap::from([
        ("URL".to_string(), Value::from(lake.store_url(path, &v.version_id))),
        ("Filename".to_string(), Value::from(filename)),
        ("Length".to_string(), Value::from(bytes.len())),
        ("SHA256".to_string(), Value::from(sha)),
    ]))
}

fn insert(lake: &Lake, p: &Principal, t: &TypeRef, values: BTreeMap<String, Value>) -> Result<Rid, LakeError> {
    Ok(lake.catalog().apply(p, vec![Mutation::insert(t, values)])?[0])
}

/// Runs a small summarising workload over `dataset` and uploads its outputs.
fn run_summary(lake: &Lake, principal: &Principal, root: &Path, dataset: &Dataset, name: &str) -> Result<Rid, LakeError> {
    let config = ExecutionConfig {
        workflow: WorkflowSpec {
            name: format!("{name} summary"),
            workflow_type: "Feature Extraction".into(),
            code_uri: format!("https://example.org/{name}/summary.py"),
            code_checksum: sha256_hex(format!("{name} summary v1").as_bytes()),
        },
        datasets: vec![dataset.minid.clone()],
        assets: vec![],
        parameters: BTreeMap::from([("threshold".to_string(), Value::from(0.5))]),
        description: format!("Summary statistics for {name}"),
    };
    let cache = DatasetCache::new(&root.join("cache"))?;
    let mut handle = execution_init(lake, principal, &config, &root.join("work"), &cache)?;
    execution_scope(lake, &mut handle, |ctx| {
        let members = fs::read_to_string(ctx.working_dir.join("data/members.csv")).map_err(|e| e.to_string())?;
        let out = ctx.working_dir.join(ASSETS_DIR).join("Report");
        fs::create_dir_all(&out).map_err(|e| e.to_string())?;
        let rows = members.lines().count().saturating_sub(1);
        fs::write(out.join("summary.txt"), format!("members: {rows}\n")).map_err(|e| e.to_string())
    })?;
    execution_upload(lake, &handle)?;
    Ok(handle.rid)
}

/// An eye imaging lake with `subjects` subjects, alternately labelled
/// "Glaucoma" and "Normal", each with one visit and two fundus images.
pub fn eye_lake(root: &Path, subjects: usize) -> Result<Fixture, LakeError> {
    eye_lake_at(root, subjects, None)
}

/// [`eye_lake`] with store locations under `base_url`.
pub fn eye_lake_at(root: &Path, subjects: usize, base_url: Option<&str>) -> Result<Fixture, LakeError> {
    let lake = Lake::init(&root.join("lake"), "EYE", base_url)?;
    let (curator, writer, reader) = principals(&lake)?;
    lake.catalog().define_domain_schema(&curator, eye_schema())?;
    annotate(&lake, &curator)?;
    terms(&lake, &curator, "Gender", &[("Female", "Self-reported female"), ("Male", "Self-reported male")])?;
    terms(&lake, &curator, "Image_Side", &[("Left", "Left eye"), ("Right", "Right eye")])?;
    terms(
        &lake,
        &curator,
        "Diagnosis_Tag",
        &[("Glaucoma", "Glaucomatous optic neuropathy"), ("Normal", "No glaucoma findings")],
    )?;
    terms(&lake, &curator, "Dataset_Type", &[("Imaging", "Image collection")])?;
    terms(&lake, &curator, "Workflow_Type", &[("Feature Extraction", "Derives features from inputs")])?;
    terms(&lake, &curator, "Execution_Asset_Type", &[("Report", "Human-readable result summary")])?;

    let t = |n: &str| TypeRef::new("eye", n);
    let mut members = Vec::new();
    for i in 0..subjects {
        let label = if i % 2 == 0 { "Glaucoma" } else { "Normal" };
        let subject = insert(
            &lake,
            &writer,
            &t("Subject"),
            crate::values! {
                "Subject_ID" => format!("S{i:04}"),
                "Gender" => if i % 3 == 0 { "Female" } else { "Male" },
                "Birth_Year" => 1950 + (i % 40) as i64,
            },
        )?;
        let observation = insert(
            &lake,
            &writer,
            &t("Observation"),
            crate::values! { "Subject" => subject.to_string(), "Visit_Date" => format!("2023-{:02}-15", 1 + i % 12) },
        )?;
        for side in ["Left", "Right"] {
            let bytes = format!("fundus image {i} {side}").into_bytes();
            let mut values = put_bytes(&lake, &writer, &format!("/eye/images/S{i:04}_{side}.jpg"), &bytes)?;
            values.insert("Observation".into(), Value::from(observation.to_string()));
            values.insert("Image_Side".into(), Value::from(side));
            let image = insert(&lake, &writer, &t("Image"), values)?;
            insert(
                &lake,
                &writer,
                &t("Diagnosis"),
                crate::values! {
                    "Image" => image.to_string(),
                    "Diagnosis_Tag" => label,
                    "Cup_Disk_Ratio" => if label == "Glaucoma" { 0.7 } else { 0.3 },
                },
            )?;
        }
        members.push(subject);
    }
    let dataset = create_dataset(&lake, &writer, &members, &["Imaging"], "All subjects with fundus images")?;
    let execution = run_summary(&lake, &writer, root, &dataset, "eye")?;
    Ok(Fixture { lake, curator, writer, reader, members, dataset, execution })
}

/// A mouse morphology lake with `specimens` specimens over three genotypes,
/// each with a micro-CT scan and a landmark file.
pub fn mouse_lake(root: &Path, specimens: usize) -> Result<Fixture, LakeError> {
    let lake = Lake::init(&root.join("lake"), "MORPH", None)?;
    let (curator, writer, reader) = principals(&lake)?;
    lake.catalog().define_domain_schema(&curator, mouse_schema())?;
    annotate(&lake, &curator)?;
    let genotypes = ["Wild type", "Heterozygous", "Homozygous"];
    terms(
        &lake,
        &curator,
        "Genotype",
        &[
            ("Wild type", "No engineered allele"),
            ("Heterozygous", "One mutant allele"),
            ("Homozygous", "Two mutant alleles"),
        ],
    )?;
    terms(&lake, &curator, "Sex", &[("F", "Female"), ("M", "Male")])?;
    terms(&lake, &curator, "Dataset_Type", &[("Morphometrics", "Shape analysis inputs")])?;
    terms(&lake, &curator, "Workflow_Type", &[("Feature Extraction", "Derives features from inputs")])?;
    terms(&lake, &curator, "Execution_Asset_Type", &[("Report", "Human-readable result summary")])?;

    let t = |n: &str| TypeRef::new("morph", n);
    let mut members = Vec::new();
    for i in 0..specimens {
        let specimen = insert(
            &lake,
            &writer,
            &t("Specimen"),
            crate::values! {
                "Specimen_ID" => format!("M{i:04}"),
                "Genotype" => genotypes[i % 3],
                "Sex" => if i % 2 == 0 { "F" } else { "M" },
                "Age_Days" => 17 + (i % 3) as i64,
            },
        )?;
        let mut scan = put_bytes(&lake, &writer, &format!("/morph/scans/M{i:04}.nii"), format!("volume {i}").as_bytes())?;
        scan.insert("Specimen".into(), Value::from(specimen.to_string()));
        scan.insert("Resolution_um".into(), Value::from(35.0));
        let scan = insert(&lake, &writer, &t("Scan"), scan)?;
        let mut marks =
            put_bytes(&lake, &writer, &format!("/morph/landmarks/M{i:04}.csv"), format!("x,y,z\n{i},0,0\n").as_bytes())?;
        marks.insert("Scan".into(), Value::from(scan.to_string()));
        marks.insert("Landmark_Count".into(), Value::from(1));
        insert(&lake, &writer, &t("Landmarks"), marks)?;
        members.push(specimen);
    }
    let dataset = create_dataset(&lake, &writer, &members, &["Morphometrics"], "Embryonic craniofacial scans")?;
    let execution = run_summary(&lake, &writer, root, &dataset, "morph")?;
    Ok(Fixture { lake, curator, writer, reader, members, dataset, execution })
}
