use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bag::{archive_bag, bag_content_hash, create_holey_bag, Bag, PayloadItem, RemoteRef};
use crate::catalog::acl::Principal;
use crate::catalog::record::Record;
use crate::catalog::Mutation;
use crate::erm::{SchemaError, TypeRef, ValueKind};
use crate::lake::{Lake, LakeError};
use crate::rid::Rid;
use crate::values;

pub const DATASET_NAMESPACE: &str = "/ml/datasets";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub rid: Rid,
    pub minid: String,
    pub description: String,
    pub dataset_types: Vec<String>,
    pub members: Vec<Rid>,
    pub bag_hash: String,
    pub archive_sha256: String,
    pub version: u64,
}

fn csv_cell(v: Option<&Value>) -> String {
    match v {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
    }
}

fn write_csv(records: &[&Record], attributes: &[String]) -> Result<Vec<u8>, LakeError> {
    let mut columns: Vec<&str> = attributes.iter().map(String::as_str).collect();
    columns.push("RID");
    columns.sort_unstable();
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(&columns).map_err(std::io::Error::other)?;
    for r in records {
        let row: Vec<String> = columns
            .iter()
            .map(|c| if *c == "RID" { r.rid.to_string() } else { csv_cell(r.values.get(*c)) })
            .collect();
        w.write_record(&row).map_err(std::io::Error::other)?;
    }
    w.into_inner().map_err(|e| std::io::Error::other(e.to_string())).map_err(Into::into)
}

/// Domain records reachable from `members` by following foreign keys
/// backwards (records that reference a member, records that reference
/// those, and so on), grouped by type.
fn reachable(lake: &Lake, link: &TypeRef, members: &BTreeSet<Rid>) -> BTreeMap<TypeRef, BTreeSet<Rid>> {
    let model = lake.catalog().model();
    let domain = model.domain_schema().expect("link implies domain").clone();
    let mut reached: BTreeMap<TypeRef, BTreeSet<Rid>> = BTreeMap::from([(link.clone(), members.clone())]);
    let scans: BTreeMap<TypeRef, Vec<Record>> = domain
        .entity_types
        .iter()
        .map(|d| TypeRef::new(&domain.name, &d.name))
        .map(|t| {
            let records = lake.catalog().scan(&t);
            (t, records)
        })
        .collect();
    loop {
        let mut grew = false;
        for def in &domain.entity_types {
            let t = TypeRef::new(&domain.name, &def.name);
            for fk in &def.foreign_keys {
                let rid_ref = def.attribute(&fk.from).is_some_and(|a| a.value_kind == ValueKind::RidRef);
                let Some(targets) = reached.get(&fk.target()).filter(|_| rid_ref).cloned() else { continue };
                let hits: Vec<Rid> = scans[&t]
                    .iter()
                    .filter(|r| r.rid_ref(&fk.from).is_some_and(|x| targets.contains(&x)))
                    .map(|r| r.rid)
                    .collect();
                let set = reached.entry(t.clone()).or_default();
                for h in hits {
                    grew |= set.insert(h);
                }
            }
        }
        if !grew {
            return reached;
        }
    }
}

/// Writes the reproducible holey bag describing `members` into `dir`.
pub fn export_bag(lake: &Lake, members: &BTreeSet<Rid>, dir: &Path) -> Result<Bag, LakeError> {
    let model = lake.catalog().model();
    let link = model.dataset_link().ok_or(SchemaError::NoLinkTarget)?;
    if members.is_empty() {
        return Err(LakeError::EmptyMembership);
    }
    for rid in members {
        let found = lake.catalog().lookup(*rid).filter(|r| !r.deleted);
        match found {
            Some(r) if r.entity_type == link => {}
            Some(r) => {
                return Err(LakeError::WrongMemberType {
                    rid: *rid,
                    found: r.entity_type.to_string(),
                    expected: link.to_string(),
                })
            }
            None => return Err(LakeError::Catalog(crate::catalog::CatalogError::NotFound(rid.to_string()))),
        }
    }
    let mut items = Vec::new();
    let mut refs = Vec::new();
    for (t, rids) in reachable(lake, &link, members) {
        let def = model.entity_type(&t).expect("domain type");
        let records: Vec<Record> = rids.iter().filter_map(|r| lake.catalog().lookup(*r)).collect();
        let refs_to: Vec<&Record> = records.iter().collect();
        let attributes: Vec<String> = def.attributes.iter().map(|a| a.name.clone()).collect();
        let name = if t == link { "data/members.csv".to_string() } else { format!("data/{}.csv", t.name) };
        items.push(PayloadItem::bytes(&name, write_csv(&refs_to, &attributes)?));
        if def.is_asset {
            for r in &records {
                let filename = r.text("Filename").unwrap_or_default();
                refs.push(RemoteRef {
                    url: r.text("URL").unwrap_or_default().to_string(),
                    length: r.get("Length").and_then(Value::as_u64).unwrap_or(0),
                    path: format!("data/assets/{}/{}/{}", t.name, r.rid, filename),
                    sha256: r.text("SHA256").map(str::to_string),
                });
            }
        }
    }
    Ok(create_holey_bag(dir, items, refs, &[], true)?)
}

pub(crate) struct Published {
    pub bag_hash: String,
    pub minid: String,
}

/// Builds, archives and stores the bag for `members`, then mints its minid.
pub(crate) fn publish(
    lake: &Lake,
    principal: &Principal,
    dataset: Rid,
    version: u64,
    members: &BTreeSet<Rid>,
    title: &str,
) -> Result<Published, LakeError> {
    let tmp = tempfile::tempdir()?;
    let bag = export_bag(lake, members, &tmp.path().join("bag"))?;
    let bag_hash = bag_content_hash(&bag)?;
    let archive = tmp.path().join("bag.tgz");
    let archive_sha256 = archive_bag(&bag, &format!("dataset-{}", &bag_hash[..16]), &archive)?;
    let store = lake.store();
    let path = format!("{DATASET_NAMESPACE}/{bag_hash}.tgz");
    let existing = store.head(&path, None).ok().filter(|v| v.content_sha256 == archive_sha256);
    let version_id = match existing {
        Some(v) => v.version_id,
        None => {
            store.ensure_namespace(principal, DATASET_NAMESPACE)?;
            let mut f = std::fs::File::open(&archive)?;
            store.put(principal, &path, &mut f, Some(&archive_sha256), "application/gzip")?.version_id
        }
    };
    let metadata = BTreeMap::from([
        ("bag_hash".to_string(), bag_hash.clone()),
        ("dataset_rid".to_string(), dataset.to_string()),
        ("dataset_version".to_string(), version.to_string()),
    ]);
    let minid =
        lake.minids().mint(principal, &archive_sha256, vec![lake.store_url(&path, &version_id)], title, metadata)?;
    Ok(Published { bag_hash, minid: minid.identifier })
}

fn member_rows(lake: &Lake, dataset: Rid) -> Vec<Record> {
    lake.catalog()
        .scan(&TypeRef::ml("Dataset_Member"))
        .into_iter()
        .filter(|r| r.rid_ref("Dataset") == Some(dataset))
        .collect()
}

/// Creates a dataset record over `members`, with its bag, archive and minid.
pub fn create_dataset(
    lake: &Lake,
    principal: &Principal,
    members: &[Rid],
    dataset_types: &[&str],
    description: &str,
) -> Result<Dataset, LakeError> {
    let members: BTreeSet<Rid> = members.iter().copied().collect();
    if members.is_empty() {
        return Err(LakeError::EmptyMembership);
    }
    for t in dataset_types {
        if lake.catalog().term("Dataset_Type", t)?.is_none() {
            return Err(LakeError::UnknownDatasetType(t.to_string()));
        }
    }
    let rid = lake.catalog().mint_rid();
    let published = publish(lake, principal, rid, 1, &members, description)?;
    let dataset_t = TypeRef::ml("Dataset");
    let mut batch = vec![Mutation::Insert {
        entity_type: dataset_t,
        rid: Some(rid),
        values: values! {
            "Description" => description,
            "Dataset_Types" => dataset_types,
            "Version" => 1,
            "Minid" => published.minid.clone(),
            "Bag_Hash" => published.bag_hash.clone(),
        },
        release: None,
    }];
    for m in &members {
        batch.push(Mutation::insert(
            &TypeRef::ml("Dataset_Member"),
            values! { "Dataset" => rid.to_string(), "Member" => m.to_string() },
        ));
    }
    if let Err(e) = lake.catalog().apply(principal, batch) {
        let _ = lake.minids().tombstone(principal, &published.minid);
        return Err(e.into());
    }
    dataset(lake, rid)
}

/// Current state of a dataset.
pub fn dataset(lake: &Lake, rid: Rid) -> Result<Dataset, LakeError> {
    let r = lake
        .catalog()
        .lookup(rid)
        .filter(|r| !r.deleted && r.entity_type == TypeRef::ml("Dataset"))
        .ok_or_else(|| LakeError::UnknownDataset(rid.to_string()))?;
    let minid = r.text("Minid").unwrap_or_default().to_string();
    let archive_sha256 = lake.minids().resolve(&minid).map(|m| m.content_sha256).unwrap_or_default();
    let mut members: Vec<Rid> = member_rows(lake, rid).iter().filter_map(|m| m.rid_ref("Member")).collect();
    members.sort();
    members.dedup();
    Ok(Dataset {
        rid,
        minid,
        description: r.text("Description").unwrap_or_default().to_string(),
        dataset_types: r
            .get("Dataset_Types")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
            .unwrap_or_default(),
        members,
        bag_hash: r.text("Bag_Hash").unwrap_or_default().to_string(),
        archive_sha256,
        version: r.get("Version").and_then(Value::as_u64).unwrap_or(0),
    })
}

/// Looks a dataset up by its RID or any minid it has carried.
pub fn find_dataset(lake: &Lake, key: &str) -> Result<Dataset, LakeError> {
    if let Ok(rid) = key.parse::<Rid>() {
        return dataset(lake, rid);
    }
    let m = lake.minids().resolve(key)?;
    let rid = m
        .metadata
        .get("dataset_rid")
        .and_then(|r| r.parse().ok())
        .ok_or_else(|| LakeError::UnknownDataset(key.to_string()))?;
    dataset(lake, rid)
}

/// Changes membership; the dataset moves to the next version with a new bag
/// and minid. An unchanged member set is a no-op.
pub fn update_members(
    lake: &Lake,
    principal: &Principal,
    rid: Rid,
    add: &[Rid],
    remove: &[Rid],
) -> Result<Dataset, LakeError> {
    let current = dataset(lake, rid)?;
    let mut next: BTreeSet<Rid> = current.members.iter().copied().collect();
    next.extend(add.iter().copied());
    for r in remove {
        next.remove(r);
    }
    if next.iter().eq(current.members.iter()) {
        return Ok(current);
    }
    if next.is_empty() {
        return Err(LakeError::EmptyMembership);
    }
    let version = current.version + 1;
    let published = publish(lake, principal, rid, version, &next, &current.description)?;
    let record = lake.catalog().lookup(rid).expect("dataset exists");
    let mut batch = vec![Mutation::Update {
        entity_type: TypeRef::ml("Dataset"),
        rid,
        expected_stamp: Some(record.stamp),
        values: values! {
            "Version" => version,
            "Minid" => published.minid.clone(),
            "Bag_Hash" => published.bag_hash.clone(),
        },
        release: None,
    }];
    let rows = member_rows(lake, rid);
    for row in &rows {
        if row.rid_ref("Member").is_some_and(|m| !next.contains(&m)) {
            batch.push(Mutation::Delete {
                entity_type: TypeRef::ml("Dataset_Member"),
                rid: row.rid,
                expected_stamp: Some(row.stamp),
            });
        }
    }
    let had: BTreeSet<Rid> = rows.iter().filter_map(|r| r.rid_ref("Member")).collect();
    for m in next.difference(&had) {
        batch.push(Mutation::insert(
            &TypeRef::ml("Dataset_Member"),
            values! { "Dataset" => rid.to_string(), "Member" => m.to_string() },
        ));
    }
    if let Err(e) = lake.catalog().apply(principal, batch) {
        let _ = lake.minids().tombstone(principal, &published.minid);
        return Err(e.into());
    }
    dataset(lake, rid)
}

/// Recomputes the bag content hash from current membership and compares it
/// with the stored one.
pub fn dataset_checksum(lake: &Lake, rid: Rid) -> Result<String, LakeError> {
    let ds = dataset(lake, rid)?;
    let tmp = tempfile::tempdir()?;
    let members: BTreeSet<Rid> = ds.members.iter().copied().collect();
    let bag = export_bag(lake, &members, &tmp.path().join("bag"))?;
    let computed = bag_content_hash(&bag)?;
    if computed != ds.bag_hash {
        return Err(LakeError::ChecksumDrift { dataset: rid, stored: ds.bag_hash, computed });
    }
    Ok(computed)
}
