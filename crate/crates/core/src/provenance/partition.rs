use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::dataset::{create_dataset, dataset, Dataset};
use crate::catalog::acl::Principal;
use crate::catalog::record::Record;
use crate::erm::{SchemaError, TypeRef, ValueKind};
use crate::lake::{Lake, LakeError};
use crate::rid::Rid;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    /// Partition names and fractions, in order.
    pub fractions: Vec<(String, f64)>,
    /// `Attr` of the member type, or `Type.Attr` of a domain type connected
    /// to it by foreign keys. Without it all members form one stratum.
    #[serde(default)]
    pub stratify_by: Option<String>,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn new(fractions: &[(&str, f64)], stratify_by: Option<&str>, seed: u64) -> Self {
        PartitionSpec {
            fractions: fractions.iter().map(|(n, f)| (n.to_string(), *f)).collect(),
            stratify_by: stratify_by.map(str::to_string),
            seed,
        }
    }

    pub fn check(&self) -> Result<(), LakeError> {
        let bad = |m: String| Err(LakeError::InvalidPartitionSpec(m));
        if self.fractions.is_empty() {
            return bad("no partitions".into());
        }
        let mut names = BTreeSet::new();
        for (name, f) in &self.fractions {
            if name.trim().is_empty() {
                return bad("empty partition name".into());
            }
            if !names.insert(name) {
                return bad(format!("duplicate partition name {name:?}"));
            }
            if !f.is_finite() || *f < 0.0 || *f > 1.0 {
                return bad(format!("fraction of {name} is {f}, outside [0, 1]"));
            }
        }
        let sum: f64 = self.fractions.iter().map(|(_, f)| f).sum();
        if (sum - 1.0).abs() > EPS {
            return bad(format!("fractions sum to {sum}, not 1"));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `n` items over `fractions`. Equal
/// remainders favour the earlier partition.
pub fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let total: f64 = fractions.iter().sum();
    let quotas: Vec<f64> = fractions.iter().map(|f| f / total * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + EPS).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    let rem = |i: usize| (quotas[i] - counts[i] as f64).max(0.0);
    let rems: Vec<f64> = order.iter().map(|&i| rem(i)).collect();
    order.sort_by(|&a, &b| {
        if (rems[a] - rems[b]).abs() <= EPS {
            a.cmp(&b)
        } else {
            rems[b].total_cmp(&rems[a])
        }
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn stratum_rng(seed: u64, label: Option<&str>) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    match label {
        None => h.update([0u8]),
        Some(l) => {
            h.update([1u8]);
            h.update(l.as_bytes());
        }
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StratumReport {
    pub label: Option<String>,
    pub size: usize,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PartitionPlan {
    /// Members of each partition, sorted, in spec order.
    pub partitions: Vec<Vec<Rid>>,
    pub strata: Vec<StratumReport>,
    /// Strata with fewer members than there are partitions.
    pub warnings: Vec<String>,
}

/// Assigns labelled members to partitions: each stratum is sorted, shuffled
/// by a generator keyed on (seed, label), and cut by apportioned counts.
pub fn plan_partition(members: &[(Rid, Option<String>)], spec: &PartitionSpec) -> Result<PartitionPlan, LakeError> {
    spec.check()?;
    let fractions: Vec<f64> = spec.fractions.iter().map(|(_, f)| *f).collect();
    let mut strata: BTreeMap<Option<&str>, Vec<Rid>> = BTreeMap::new();
    for (rid, label) in members {
        strata.entry(label.as_deref()).or_default().push(*rid);
    }
    let mut partitions = vec![Vec::new(); fractions.len()];
    let mut reports = Vec::new();
    let mut warnings = Vec::new();
    for (label, mut rids) in strata {
        rids.sort();
        rids.dedup();
        rids.shuffle(&mut stratum_rng(spec.seed, label));
        let counts = apportion(rids.len(), &fractions);
        let mut rest = rids.as_slice();
        for (p, &c) in partitions.iter_mut().zip(&counts) {
            let (take, tail) = rest.split_at(c);
            p.extend_from_slice(take);
            rest = tail;
        }
        if rids.len() < fractions.len() {
            warnings.push(format!(
                "stratum {} has {} member(s), fewer than {} partitions",
                label.unwrap_or("(unlabelled)"),
                rids.len(),
                fractions.len()
            ));
        }
        reports.push(StratumReport { label: label.map(str::to_string), size: rids.len(), counts });
    }
    for p in &mut partitions {
        p.sort();
    }
    Ok(PartitionPlan { partitions, strata: reports, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step<'a> {
    /// Follow attribute `.0` of the current records.
    Out(&'a str, &'a TypeRef),
    /// Records of type `.1` whose attribute `.0` points at the current ones.
    In(&'a str, &'a TypeRef),
}

fn cell_text(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        other => Some(other.to_string()),
    }
}

/// Label of every member along `stratify_by`.
pub fn member_labels(lake: &Lake, members: &[Rid], stratify_by: &str) -> Result<Vec<(Rid, Option<String>)>, LakeError> {
    let model = lake.catalog().model();
    let link = model.dataset_link().ok_or(SchemaError::NoLinkTarget)?;
    let (target, attr) = match stratify_by.rsplit_once('.') {
        Some((t, a)) => (model.resolve(t).map_err(|_| LakeError::InvalidPartitionSpec(format!("unknown type {t}")))?, a),
        None => (link.clone(), stratify_by),
    };
    let def = model.entity_type(&target).expect("resolved");
    if attr != "RID" && def.attribute(attr).is_none() {
        return Err(LakeError::InvalidPartitionSpec(format!("{target} has no attribute {attr}")));
    }

    let mut edges: Vec<(TypeRef, String, TypeRef)> = Vec::new();
    for (t, d) in model.entity_types().filter(|(t, _)| t.schema == link.schema) {
        for fk in &d.foreign_keys {
            let rid_ref = d.attribute(&fk.from).is_some_and(|a| a.value_kind == ValueKind::RidRef);
            if rid_ref && fk.to_schema == link.schema {
                edges.push((t.clone(), fk.from.clone(), fk.target()));
            }
        }
    }
    let mut prev: BTreeMap<TypeRef, (TypeRef, Step)> = BTreeMap::new();
    let mut queue = VecDeque::from([link.clone()]);
    let mut seen = BTreeSet::from([link.clone()]);
    while let Some(t) = queue.pop_front() {
        for (from, a, to) in &edges {
            let hop = if *from == t {
                Some((to, Step::Out(a, to)))
            } else if *to == t {
                Some((from, Step::In(a, from)))
            } else {
                None
            };
            if let Some((next, step)) = hop {
                if seen.insert(next.clone()) {
                    prev.insert(next.clone(), (t.clone(), step));
                    queue.push_back(next.clone());
                }
            }
        }
    }
    if !seen.contains(&target) {
        return Err(LakeError::InvalidPartitionSpec(format!("{target} is not connected to {link}")));
    }
    let mut path = Vec::new();
    let mut at = target.clone();
    while let Some((p, step)) = prev.get(&at) {
        path.push(*step);
        at = p.clone();
    }
    path.reverse();

    let mut scans: BTreeMap<&TypeRef, Vec<Record>> = BTreeMap::new();
    for step in &path {
        if let Step::In(_, t) = step {
            scans.entry(t).or_insert_with(|| lake.catalog().scan(t));
        }
    }
    let mut out = Vec::with_capacity(members.len());
    for &m in members {
        let mut current: BTreeSet<Rid> = BTreeSet::from([m]);
        for step in &path {
            current = match step {
                Step::Out(a, _) => {
                    current.iter().filter_map(|r| lake.catalog().lookup(*r)).filter_map(|r| r.rid_ref(a)).collect()
                }
                Step::In(a, t) => scans[t]
                    .iter()
                    .filter(|r| r.rid_ref(a).is_some_and(|x| current.contains(&x)))
                    .map(|r| r.rid)
                    .collect(),
            };
        }
        let labels: BTreeSet<String> = current
            .iter()
            .filter_map(|r| lake.catalog().lookup(*r))
            .filter(|r| !r.deleted)
            .filter_map(|r| if attr == "RID" { Some(r.rid.to_string()) } else { r.get(attr).and_then(cell_text) })
            .collect();
        if labels.len() > 1 {
            return Err(LakeError::NonDisjointLabels(m));
        }
        out.push((m, labels.into_iter().next()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionOutcome {
    /// Partition name and child dataset; empty partitions have no child.
    pub children: Vec<(String, Dataset)>,
    pub plan: PartitionPlan,
}

/// Splits a dataset into child datasets, one per non-empty partition.
pub fn partition_dataset(
    lake: &Lake,
    principal: &Principal,
    parent: Rid,
    spec: &PartitionSpec,
) -> Result<PartitionOutcome, LakeError> {
    spec.check()?;
    let ds = dataset(lake, parent)?;
    let labelled = match &spec.stratify_by {
        Some(s) => member_labels(lake, &ds.members, s)?,
        None => ds.members.iter().map(|m| (*m, None)).collect(),
    };
    let plan = plan_partition(&labelled, spec)?;
    let mut children = Vec::new();
    for ((name, fraction), members) in spec.fractions.iter().zip(&plan.partitions) {
        if members.is_empty() {
            continue;
        }
        lake.catalog().ensure_term(principal, "Dataset_Type", name, "")?;
        let mut description = format!(
            "{name} partition ({fraction}) of dataset {parent} version {}, seed {}",
            ds.version, spec.seed
        );
        if let Some(s) = &spec.stratify_by {
            description.push_str(&format!(", stratified by {s}"));
        }
        for w in &plan.warnings {
            description.push_str(&format!("; warning: {w}"));
        }
        let child = create_dataset(lake, principal, members, &[name.as_str()], &description)?;
        children.push((name.clone(), child));
    }
    Ok(PartitionOutcome { children, plan })
}
