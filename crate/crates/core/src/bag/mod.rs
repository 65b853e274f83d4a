//! BagIt (RFC 8493) bags: creation, parsing, validation, holey-bag
//! resolution, content hashing and deterministic archives.

mod archive;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{self, File};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::Digest;

use crate::util::{copy_hashing, is_sha256_hex, sha256_file, sha256_hex};

pub use archive::{archive_bag, unpack_archive};

pub const BAGIT_VERSION: &str = "1.0";
pub const VOLATILE_KEYS: [&str; 2] = ["Bagging-Date", "Bag-Software-Agent"];
const DECLARATION: &str = "BagIt-Version: 1.0\nTag-File-Character-Encoding: UTF-8\n";

#[derive(Debug, thiserror::Error)]
pub enum BagError {
    #[error("duplicate payload path {0}")]
    DuplicatePath(String),
    #[error("invalid payload path {0:?}")]
    InvalidPath(String),
    #[error("remote entry {0} has no digest")]
    MissingDigest(String),
    #[error("bag is incomplete: {0}")]
    IncompleteBag(String),
    #[error("bag was not built reproducibly")]
    NotReproducible,
    #[error("malformed bag: {0}")]
    Malformed(String),
    #[error("bag i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchEntry {
    pub url: String,
    /// `None` when the fetch file gave "-".
    pub length: Option<u64>,
    pub path: String,
}

/// Digest algorithm of a parsed payload manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Sha256,
    Md5,
}

impl Algorithm {
    fn file_digest(self, path: &Path) -> io::Result<String> {
        match self {
            Algorithm::Sha256 => Ok(sha256_file(path)?.0),
            Algorithm::Md5 => {
                let mut f = File::open(path)?;
                let mut h = md5::Md5::new();
                io::copy(&mut f, &mut DigestWriter(&mut h))?;
                Ok(hex::encode(h.finalize()))
            }
        }
    }
}

struct DigestWriter<'a, D: Digest>(&'a mut D);

impl<D: Digest> Write for DigestWriter<'_, D> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bag {
    pub root: PathBuf,
    pub bag_info: Vec<(String, String)>,
    pub algorithm: Algorithm,
    /// `sha256` holds the digest of `algorithm`.
    pub payload_manifest: Vec<ManifestEntry>,
    pub tag_manifest: Vec<ManifestEntry>,
    pub fetch: Vec<FetchEntry>,
    pub reproducible: bool,
}

pub enum PayloadSource {
    Bytes(Vec<u8>),
    File(PathBuf),
}

pub struct PayloadItem {
    pub path: String,
    pub source: PayloadSource,
}

impl PayloadItem {
    pub fn bytes(path: &str, bytes: impl Into<Vec<u8>>) -> Self {
        PayloadItem { path: path.to_string(), source: PayloadSource::Bytes(bytes.into()) }
    }

    pub fn file(path: &str, file: impl Into<PathBuf>) -> Self {
        PayloadItem { path: path.to_string(), source: PayloadSource::File(file.into()) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteRef {
    pub url: String,
    pub length: u64,
    pub path: String,
    pub sha256: Option<String>,
}

/// Percent-encodes the characters a manifest line cannot carry.
fn encode_path(p: &str) -> String {
    p.replace('%', "%25").replace('\n', "%0A").replace('\r', "%0D")
}

fn decode_path(p: &str) -> String {
    p.replace("%0A", "\n").replace("%0a", "\n").replace("%0D", "\r").replace("%0d", "\r").replace("%25", "%")
}

pub fn validate_payload_path(p: &str) -> Result<(), BagError> {
    let bad = || BagError::InvalidPath(p.to_string());
    let rest = p.strip_prefix("data/").ok_or_else(bad)?;
    if rest.is_empty() || p.contains('\\') || p.contains('\0') {
        return Err(bad());
    }
    if rest.split('/').any(|s| s.is_empty() || s == "." || s == "..") {
        return Err(bad());
    }
    Ok(())
}

fn manifest_text(entries: &[ManifestEntry]) -> String {
    entries.iter().map(|e| format!("{}  {}\n", e.sha256, encode_path(&e.path))).collect()
}

fn bag_info_text(info: &[(String, String)]) -> String {
    info.iter().map(|(k, v)| format!("{k}: {v}\n")).collect()
}

fn sort_entries(entries: &mut [ManifestEntry]) {
    entries.sort_by(|a, b| a.path.as_bytes().cmp(b.path.as_bytes()));
}

/// Builds an on-disk bag at `root` (which must not exist or be empty).
pub fn create_bag(
    root: &Path,
    items: Vec<PayloadItem>,
    bag_info: &[(String, String)],
    reproducible: bool,
) -> Result<Bag, BagError> {
    create_holey_bag(root, items, Vec::new(), bag_info, reproducible)
}

/// Builds a bag whose `refs` are listed in fetch.txt instead of stored.
pub fn create_holey_bag(
    root: &Path,
    items: Vec<PayloadItem>,
    refs: Vec<RemoteRef>,
    bag_info: &[(String, String)],
    reproducible: bool,
) -> Result<Bag, BagError> {
    let mut seen = HashSet::new();
    for p in items.iter().map(|i| &i.path).chain(refs.iter().map(|r| &r.path)) {
        validate_payload_path(p)?;
        if !seen.insert(p.clone()) {
            return Err(BagError::DuplicatePath(p.clone()));
        }
    }
    for r in &refs {
        match &r.sha256 {
            Some(d) if is_sha256_hex(d) => {}
            _ => return Err(BagError::MissingDigest(r.path.clone())),
        }
    }
    fs::create_dir_all(root.join("data"))?;
    let entries = items
        .into_par_iter()
        .map(|item| -> Result<(ManifestEntry, u64), BagError> {
            let dest = root.join(&item.path);
            fs::create_dir_all(dest.parent().expect("payload has a parent"))?;
            let mut out = File::create(&dest)?;
            let (sha256, len) = match item.source {
                PayloadSource::Bytes(b) => copy_hashing(&mut b.as_slice(), &mut out)?,
                PayloadSource::File(src) => copy_hashing(&mut File::open(src)?, &mut out)?,
            };
            Ok((ManifestEntry { path: item.path, sha256 }, len))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut octets: u64 = entries.iter().map(|(_, l)| l).sum();
    let mut payload: Vec<ManifestEntry> = entries.into_iter().map(|(e, _)| e).collect();
    let mut fetch = Vec::new();
    for r in refs {
        octets += r.length;
        payload.push(ManifestEntry { path: r.path.clone(), sha256: r.sha256.expect("checked") });
        fetch.push(FetchEntry { url: r.url, length: Some(r.length), path: r.path });
    }
    sort_entries(&mut payload);
    fetch.sort_by(|a, b| a.path.as_bytes().cmp(b.path.as_bytes()));

    let mut info: BTreeMap<String, String> = bag_info
        .iter()
        .filter(|(k, _)| !(reproducible && VOLATILE_KEYS.contains(&k.as_str())))
        .cloned()
        .collect();
    info.insert("Payload-Oxum".into(), format!("{}.{}", octets, payload.len()));
    if !reproducible {
        info.entry("Bagging-Date".into()).or_insert_with(|| chrono::Utc::now().format("%Y-%m-%d").to_string());
        info.entry("Bag-Software-Agent".into())
            .or_insert_with(|| format!("fairlake {}", env!("CARGO_PKG_VERSION")));
    }
    let bag_info: Vec<(String, String)> = info.into_iter().collect();

    fs::write(root.join("bagit.txt"), DECLARATION)?;
    fs::write(root.join("manifest-sha256.txt"), manifest_text(&payload))?;
    fs::write(root.join("bag-info.txt"), bag_info_text(&bag_info))?;
    if !fetch.is_empty() {
        fs::write(root.join("fetch.txt"), fetch_text(&fetch))?;
    }
    let tag_manifest = write_tag_manifest(root)?;
    Ok(Bag { root: root.to_path_buf(), bag_info, algorithm: Algorithm::Sha256, payload_manifest: payload, tag_manifest, fetch, reproducible })
}

fn fetch_text(fetch: &[FetchEntry]) -> String {
    fetch
        .iter()
        .map(|f| {
            let len = f.length.map_or_else(|| "-".to_string(), |l| l.to_string());
            format!("{} {} {}\n", f.url, len, encode_path(&f.path))
        })
        .collect()
}

const TAG_FILES: [&str; 4] = ["bag-info.txt", "bagit.txt", "fetch.txt", "manifest-sha256.txt"];

fn write_tag_manifest(root: &Path) -> Result<Vec<ManifestEntry>, BagError> {
    let mut entries = Vec::new();
    for name in TAG_FILES {
        let p = root.join(name);
        if p.exists() {
            entries.push(ManifestEntry { path: name.to_string(), sha256: sha256_file(&p)?.0 });
        }
    }
    sort_entries(&mut entries);
    fs::write(root.join("tagmanifest-sha256.txt"), manifest_text(&entries))?;
    Ok(entries)
}

fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, BagError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (digest, path) = l
                .split_once(char::is_whitespace)
                .ok_or_else(|| BagError::Malformed(format!("manifest line {l:?}")))?;
            Ok(ManifestEntry { path: decode_path(path.trim_start()), sha256: digest.to_ascii_lowercase() })
        })
        .collect()
}

fn parse_fetch(text: &str) -> Result<Vec<FetchEntry>, BagError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut parts = l.splitn(3, ' ');
            let (Some(url), Some(len), Some(path)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(BagError::Malformed(format!("fetch line {l:?}")));
            };
            let length = match len {
                "-" => None,
                n => Some(n.parse().map_err(|_| BagError::Malformed(format!("fetch length {n:?}")))?),
            };
            Ok(FetchEntry { url: url.to_string(), length, path: decode_path(path) })
        })
        .collect()
}

fn parse_bag_info(text: &str) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        if line.starts_with([' ', '\t']) {
            if let Some(last) = out.last_mut() {
                last.1.push(' ');
                last.1.push_str(line.trim());
            }
        } else if let Some((k, v)) = line.split_once(':') {
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    out
}

fn read_opt(path: &Path) -> Result<Option<String>, BagError> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

impl Bag {
    /// Parses an existing bag. SHA-256 manifests are preferred; MD5 ones are
    /// accepted when no SHA-256 manifest is present.
    pub fn open(root: &Path) -> Result<Bag, BagError> {
        let declaration = read_opt(&root.join("bagit.txt"))?
            .ok_or_else(|| BagError::IncompleteBag("bagit.txt missing".into()))?;
        if !declaration.contains("BagIt-Version") {
            return Err(BagError::Malformed("bagit.txt lacks BagIt-Version".into()));
        }
        let (algorithm, manifest) = match read_opt(&root.join("manifest-sha256.txt"))? {
            Some(m) => (Algorithm::Sha256, m),
            None => match read_opt(&root.join("manifest-md5.txt"))? {
                Some(m) => (Algorithm::Md5, m),
                None => return Err(BagError::IncompleteBag("no payload manifest".into())),
            },
        };
        let payload_manifest = parse_manifest(&manifest)?;
        let bag_info = read_opt(&root.join("bag-info.txt"))?.map(|t| parse_bag_info(&t)).unwrap_or_default();
        let tag_manifest = match read_opt(&root.join("tagmanifest-sha256.txt"))? {
            Some(t) => parse_manifest(&t)?,
            None => Vec::new(),
        };
        let fetch = read_opt(&root.join("fetch.txt"))?.map(|t| parse_fetch(&t)).transpose()?.unwrap_or_default();
        let reproducible = !bag_info.iter().any(|(k, _)| VOLATILE_KEYS.contains(&k.as_str()));
        Ok(Bag { root: root.to_path_buf(), bag_info, algorithm, payload_manifest, tag_manifest, fetch, reproducible })
    }

    pub fn payload_oxum(&self) -> Option<&str> {
        self.bag_info.iter().find(|(k, _)| k == "Payload-Oxum").map(|(_, v)| v.as_str())
    }

    pub fn manifest_digest(&self, path: &str) -> Option<&str> {
        self.payload_manifest.iter().find(|e| e.path == path).map(|e| e.sha256.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationMode {
    Complete,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    Structure,
    Missing,
    Extra,
    DigestMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BagIssue {
    pub kind: IssueKind,
    pub path: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BagReport {
    pub issues: Vec<BagIssue>,
}

impl BagReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }

    fn push(&mut self, kind: IssueKind, path: &str, detail: impl Into<String>) {
        self.issues.push(BagIssue { kind, path: path.to_string(), detail: detail.into() });
    }
}

fn payload_files(root: &Path) -> io::Result<BTreeSet<String>> {
    let data = root.join("data");
    let mut out = BTreeSet::new();
    if !data.exists() {
        return Ok(out);
    }
    for entry in walkdir::WalkDir::new(&data) {
        let entry = entry.map_err(io::Error::other)?;
        if entry.file_type().is_file() {
            let rel = entry.path().strip_prefix(root).expect("under root");
            let rel: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            out.insert(rel.join("/"));
        }
    }
    Ok(out)
}

/// `Complete` checks structure and presence, letting fetch entries stay
/// unfilled. `Valid` also requires every payload file and re-hashes all of
/// them plus the tag files; SHA-256 bags must carry a tag manifest.
pub fn validate_bag(bag_root: &Path, mode: ValidationMode) -> BagReport {
    let mut report = BagReport::default();
    let bag = match Bag::open(bag_root) {
        Ok(b) => b,
        Err(e) => {
            report.push(IssueKind::Structure, "", e.to_string());
            return report;
        }
    };
    let present = match payload_files(bag_root) {
        Ok(p) => p,
        Err(e) => {
            report.push(IssueKind::Structure, "data", e.to_string());
            return report;
        }
    };
    let manifest: BTreeMap<&str, &str> =
        bag.payload_manifest.iter().map(|e| (e.path.as_str(), e.sha256.as_str())).collect();
    if manifest.len() != bag.payload_manifest.len() {
        report.push(IssueKind::Structure, "manifest", "duplicate manifest paths");
    }
    for e in &bag.payload_manifest {
        if validate_payload_path(&e.path).is_err() {
            report.push(IssueKind::Structure, &e.path, "invalid payload path");
        }
    }
    let fetched: HashSet<&str> = bag.fetch.iter().map(|f| f.path.as_str()).collect();
    for f in &bag.fetch {
        if !manifest.contains_key(f.path.as_str()) {
            report.push(IssueKind::Structure, &f.path, "fetch entry not in payload manifest");
        }
    }
    for p in &present {
        if !manifest.contains_key(p.as_str()) {
            report.push(IssueKind::Extra, p, "file not listed in payload manifest");
        }
    }
    for path in manifest.keys() {
        let here = present.contains(*path);
        let excused = mode == ValidationMode::Complete && fetched.contains(path);
        if !here && !excused {
            report.push(IssueKind::Missing, path, "payload file missing");
        }
    }
    for t in &bag.tag_manifest {
        if !bag_root.join(&t.path).exists() {
            report.push(IssueKind::Missing, &t.path, "tag file missing");
        }
    }
    if let Some(oxum) = bag.payload_oxum() {
        let count = oxum.split_once('.').and_then(|(_, c)| c.parse::<usize>().ok());
        if count != Some(bag.payload_manifest.len()) {
            report.push(IssueKind::Structure, "bag-info.txt", format!("Payload-Oxum {oxum} disagrees with manifest"));
        }
    }
    if mode == ValidationMode::Valid {
        if bag.algorithm == Algorithm::Sha256 && !bag_root.join("tagmanifest-sha256.txt").exists() {
            report.push(IssueKind::Missing, "tagmanifest-sha256.txt", "tag manifest missing; tag files cannot be verified");
        }
        let algorithm = bag.algorithm;
        let mut mismatches: Vec<BagIssue> = bag
            .payload_manifest
            .par_iter()
            .filter(|e| present.contains(&e.path))
            .map(|e| (e.path.clone(), e.sha256.clone(), algorithm))
            .chain(
                bag.tag_manifest
                    .par_iter()
                    .filter(|t| bag_root.join(&t.path).exists())
                    .map(|t| (t.path.clone(), t.sha256.clone(), Algorithm::Sha256)),
            )
            .filter_map(|(path, expected, alg)| match alg.file_digest(&bag_root.join(&path)) {
                Ok(actual) if actual == expected => None,
                Ok(actual) => Some(BagIssue {
                    kind: IssueKind::DigestMismatch,
                    path,
                    detail: format!("expected {expected}, found {actual}"),
                }),
                Err(e) => Some(BagIssue { kind: IssueKind::Missing, path, detail: e.to_string() }),
            })
            .collect();
        mismatches.sort_by(|a, b| a.path.cmp(&b.path));
        report.issues.extend(mismatches);
    }
    report
}

/// The canonical document hashed for a bag's content identity: sorted
/// payload-manifest lines, then sorted non-volatile bag-info lines.
pub fn canonical_document(payload_manifest: &[ManifestEntry], bag_info: &[(String, String)]) -> String {
    let mut lines: Vec<String> =
        payload_manifest.iter().map(|e| format!("{}  {}\n", e.sha256, encode_path(&e.path))).collect();
    lines.sort_by(|a, b| a.as_bytes().cmp(b.as_bytes()));
    let mut info: Vec<String> = bag_info
        .iter()
        .filter(|(k, _)| !VOLATILE_KEYS.contains(&k.as_str()))
        .map(|(k, v)| format!("{k}: {v}\n"))
        .collect();
    info.sort_by(|a, b| a.as_bytes().cmp(b.as_bytes()));
    lines.concat() + &info.concat()
}

pub fn bag_content_hash(bag: &Bag) -> Result<String, BagError> {
    if bag.algorithm != Algorithm::Sha256 {
        return Err(BagError::IncompleteBag("content hash needs a SHA-256 manifest".into()));
    }
    let report = validate_bag(&bag.root, ValidationMode::Complete);
    if let Some(issue) = report.issues.first() {
        return Err(BagError::IncompleteBag(format!("{}: {}", issue.path, issue.detail)));
    }
    Ok(sha256_hex(canonical_document(&bag.payload_manifest, &bag.bag_info).as_bytes()))
}

/// Source of bytes for fetch.txt URLs.
pub trait Fetcher: Send + Sync {
    fn fetch(&self, url: &str) -> io::Result<Box<dyn Read + Send>>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchOutcome {
    pub path: String,
    pub url: String,
    /// `None` on success.
    pub error: Option<String>,
    /// The file was already present with the right digest.
    pub skipped: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchReport {
    pub outcomes: Vec<FetchOutcome>,
}

impl FetchReport {
    pub fn is_ok(&self) -> bool {
        self.outcomes.iter().all(|o| o.error.is_none())
    }

    pub fn failures(&self) -> impl Iterator<Item = &FetchOutcome> {
        self.outcomes.iter().filter(|o| o.error.is_some())
    }
}

/// Downloads every fetch entry, accepting a file only when its digest
/// matches the payload manifest. Entries already present and correct are
/// left alone.
pub fn resolve_fetch(bag: &Bag, fetcher: &dyn Fetcher) -> FetchReport {
    let outcomes = bag
        .fetch
        .par_iter()
        .map(|f| {
            let mut outcome = FetchOutcome { path: f.path.clone(), url: f.url.clone(), error: None, skipped: false };
            let result = (|| -> Result<bool, String> {
                validate_payload_path(&f.path).map_err(|e| e.to_string())?;
                let expected = bag.manifest_digest(&f.path).ok_or("not in payload manifest")?;
                let dest = bag.root.join(&f.path);
                if dest.exists() && bag.algorithm.file_digest(&dest).map_err(|e| e.to_string())? == expected {
                    return Ok(true);
                }
                let dir = dest.parent().expect("payload has a parent");
                fs::create_dir_all(dir).map_err(|e| e.to_string())?;
                let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| e.to_string())?;
                let mut src = fetcher.fetch(&f.url).map_err(|e| format!("fetch failed: {e}"))?;
                let (sha, len) = copy_hashing(&mut src, tmp.as_file_mut()).map_err(|e| e.to_string())?;
                let actual = match bag.algorithm {
                    Algorithm::Sha256 => sha,
                    Algorithm::Md5 => bag.algorithm.file_digest(tmp.path()).map_err(|e| e.to_string())?,
                };
                if actual != expected {
                    return Err(format!("digest mismatch: expected {expected}, received {actual}"));
                }
                if f.length.is_some_and(|l| l != len) {
                    return Err(format!("length mismatch: expected {}, received {len}", f.length.unwrap_or(0)));
                }
                tmp.persist(&dest).map_err(|e| e.error.to_string())?;
                Ok(false)
            })();
            match result {
                Ok(skipped) => outcome.skipped = skipped,
                Err(e) => outcome.error = Some(e),
            }
            outcome
        })
        .collect();
    FetchReport { outcomes }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_encoding_round_trips() {
        let p = "data/odd%name\nwith\rbreaks";
        assert_eq!(decode_path(&encode_path(p)), p);
        assert_eq!(encode_path("data/a.txt"), "data/a.txt");
    }

    #[test]
    fn payload_path_rules() {
        assert!(validate_payload_path("data/a/b.txt").is_ok());
        for bad in ["a.txt", "data/", "data/../x", "data//x", "data/./x", "data\\x"] {
            assert!(validate_payload_path(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn bag_info_continuation_lines() {
        let info = parse_bag_info("Source-Organization: Lab\nExternal-Description: first\n  second\n");
        assert_eq!(info[1], ("External-Description".to_string(), "first second".to_string()));
    }
}
