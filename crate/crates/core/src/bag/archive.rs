use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use flate2::write::GzEncoder;
use flate2::{Compression, GzBuilder};

use super::{Bag, BagError};
use crate::util::sha256_file;

/// Writes `bag` as a gzipped tar under a single top-level directory `name`
/// and returns the archive's SHA-256. Entries are sorted, timestamps are
/// zero, modes are fixed and owner fields are empty, so equal bags give
/// equal bytes.
pub fn archive_bag(bag: &Bag, name: &str, dest: &Path) -> Result<String, BagError> {
    if !bag.reproducible {
        return Err(BagError::NotReproducible);
    }
    if name.is_empty() || name.contains('/') || name == "." || name == ".." {
        return Err(BagError::InvalidPath(name.to_string()));
    }
    let mut entries: Vec<(String, bool)> = Vec::new();
    for entry in walkdir::WalkDir::new(&bag.root).min_depth(1) {
        let entry = entry.map_err(io::Error::other)?;
        let rel = entry.path().strip_prefix(&bag.root).expect("under root");
        let rel: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
        let ft = entry.file_type();
        if ft.is_dir() || ft.is_file() {
            entries.push((rel.join("/"), ft.is_dir()));
        }
    }
    entries.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));

    let out = BufWriter::new(File::create(dest)?);
    let gz: GzEncoder<BufWriter<File>> = GzBuilder::new().mtime(0).write(out, Compression::new(6));
    let mut tar = tar::Builder::new(gz);
    tar.mode(tar::HeaderMode::Deterministic);
    let dir_header = |len: u64, mode: u32, kind: tar::EntryType| {
        let mut h = tar::Header::new_ustar();
        h.set_entry_type(kind);
        h.set_size(len);
        h.set_mode(mode);
        h.set_mtime(0);
        h.set_uid(0);
        h.set_gid(0);
        h.set_username("").expect("empty name fits");
        h.set_groupname("").expect("empty name fits");
        h
    };
    let mut top = dir_header(0, 0o755, tar::EntryType::Directory);
    tar.append_data(&mut top, format!("{name}/"), io::empty())?;
    for (rel, is_dir) in entries {
        let path = format!("{name}/{rel}");
        if is_dir {
            let mut h = dir_header(0, 0o755, tar::EntryType::Directory);
            tar.append_data(&mut h, format!("{path}/"), io::empty())?;
        } else {
            let file = File::open(bag.root.join(&rel))?;
            let len = file.metadata()?.len();
            let mut h = dir_header(len, 0o644, tar::EntryType::Regular);
            tar.append_data(&mut h, &path, file)?;
        }
    }
    let gz = tar.into_inner()?;
    let mut out = gz.finish()?;
    out.flush()?;
    drop(out);
    Ok(sha256_file(dest)?.0)
}

/// Unpacks an archive written by [`archive_bag`] into `dest` and opens the
/// single bag it contains.
pub fn unpack_archive(archive: &Path, dest: &Path) -> Result<Bag, BagError> {
    fs::create_dir_all(dest)?;
    let gz = flate2::read::GzDecoder::new(File::open(archive)?);
    let mut tar = tar::Archive::new(gz);
    tar.set_preserve_mtime(false);
    tar.set_preserve_permissions(false);
    for entry in tar.entries()? {
        let mut entry = entry?;
        let path = entry.path()?.into_owned();
        if path.components().any(|c| !matches!(c, std::path::Component::Normal(_))) {
            return Err(BagError::Malformed(format!("unsafe archive path {}", path.display())));
        }
        entry.unpack_in(dest)?;
    }
    let mut tops = fs::read_dir(dest)?.collect::<Result<Vec<_>, _>>()?;
    if tops.len() != 1 || !tops[0].file_type()?.is_dir() {
        return Err(BagError::Malformed("archive must hold exactly one bag directory".into()));
    }
    Bag::open(&tops.remove(0).path())
}
