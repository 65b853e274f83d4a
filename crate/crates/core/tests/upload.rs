use std::fs;

use fairlake_core::erm::TypeRef;
use fairlake_core::fixtures::eye_lake;
use fairlake_core::lake::Lake;
use fairlake_core::provenance::{read_manifest, upload_manifest, RowStatus};

fn setup(lake: &Lake, dir: &std::path::Path, n: usize) -> String {
    let observation = lake.catalog().scan(&TypeRef::new("eye", "Observation"))[0].rid;
    let files = dir.join("files");
    fs::create_dir_all(&files).unwrap();
    let mut csv = String::from("local_path,store_path,entity_type,Image_Side,Observation\n");
    for i in 0..n {
        fs::write(files.join(format!("img{i}.jpg")), format!("new image {i}")).unwrap();
        let side = if i % 2 == 0 { "Left" } else { "Right" };
        csv.push_str(&format!("files/img{i}.jpg,/eye/new/img{i}.jpg,Image,{side},{observation}\n"));
    }
    csv
}

#[test]
fn manifest_upload_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let fx = eye_lake(dir.path(), 1).unwrap();
    let csv = setup(&fx.lake, dir.path(), 12);
    let rows = read_manifest(csv.as_bytes(), dir.path()).unwrap();
    let images = TypeRef::new("eye", "Image");
    let before = fx.lake.catalog().scan(&images).len();

    let first = upload_manifest(&fx.lake, &fx.writer, &rows, 4).unwrap();
    assert_eq!(first.count(&RowStatus::Uploaded), 12);
    assert_eq!(fx.lake.catalog().scan(&images).len(), before + 12);
    let record = fx.lake.catalog().lookup(first.rows[3].rid.unwrap()).unwrap();
    assert_eq!(record.text("Image_Side"), Some("Right"));
    assert_eq!(record.text("Filename"), Some("img3.jpg"));
    assert_eq!(record.get("Length").and_then(|v| v.as_u64()), Some(11));
    let (path, version) = fx.lake.parse_store_url(record.text("URL").unwrap()).unwrap();
    assert_eq!((path, version), ("/eye/new/img3.jpg", first.rows[3].version_id.as_deref()));

    let second = upload_manifest(&fx.lake, &fx.writer, &rows, 3).unwrap();
    assert_eq!(second.count(&RowStatus::Skipped), 12);
    assert_eq!(fx.lake.catalog().scan(&images).len(), before + 12);
    for (a, b) in first.rows.iter().zip(&second.rows) {
        assert_eq!((a.rid, &a.version_id), (b.rid, &b.version_id));
    }
    assert_eq!(fx.lake.store().versions("/eye/new/img0.jpg").unwrap().len(), 1);
}

#[test]
fn failed_rows_are_retried() {
    let dir = tempfile::tempdir().unwrap();
    let fx = eye_lake(dir.path(), 1).unwrap();
    let mut csv = setup(&fx.lake, dir.path(), 3);
    let obs = fx.lake.catalog().scan(&TypeRef::new("eye", "Observation"))[0].rid;
    csv.push_str(&format!("files/missing.jpg,/eye/new/missing.jpg,Image,Left,{obs}\n"));
    csv.push_str(&format!("files/img0.jpg,/eye/new/bad.jpg,Image,Sideways,{obs}\n"));
    csv.push_str("files/img1.jpg,/eye/new/typed.jpg,Subject,,\n");
    csv.push_str(&format!("files/img2.jpg,relative/path.jpg,Image,Left,{obs}\n"));
    let rows = read_manifest(csv.as_bytes(), dir.path()).unwrap();
    let report = upload_manifest(&fx.lake, &fx.writer, &rows, 2).unwrap();
    assert_eq!(report.count(&RowStatus::Uploaded), 3);
    assert_eq!(report.failed(), 4);
    let failed_lines: Vec<usize> =
        report.rows.iter().filter(|r| matches!(r.status, RowStatus::Failed(_))).map(|r| r.line).collect();
    assert_eq!(failed_lines, vec![5, 6, 7, 8]);

    fs::write(dir.path().join("files/missing.jpg"), "late arrival").unwrap();
    let report = upload_manifest(&fx.lake, &fx.writer, &rows, 2).unwrap();
    assert_eq!(report.count(&RowStatus::Skipped), 3);
    assert_eq!(report.count(&RowStatus::Uploaded), 1);
    assert_eq!(report.rows[3].status, RowStatus::Uploaded);
}

#[test]
fn readers_cannot_upload() {
    let dir = tempfile::tempdir().unwrap();
    let fx = eye_lake(dir.path(), 1).unwrap();
    let csv = setup(&fx.lake, dir.path(), 1);
    let rows = read_manifest(csv.as_bytes(), dir.path()).unwrap();
    let report = upload_manifest(&fx.lake, &fx.reader, &rows, 1).unwrap();
    assert_eq!(report.failed(), 1);
    assert!(fx.lake.store().head("/eye/new/img0.jpg", None).is_err());
}

#[test]
fn manifests_need_the_fixed_columns() {
    assert!(read_manifest("local_path,entity_type\n".as_bytes(), std::path::Path::new(".")).is_err());
}
