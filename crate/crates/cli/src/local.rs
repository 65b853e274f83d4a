use std::fs;
use std::path::Path;
use std::process::{Command as Process, Stdio};
use std::sync::Arc;

use fairlake_core::bag::{validate_bag, ValidationMode};
use fairlake_core::cache::DatasetCache;
use fairlake_core::catalog::acl::{Principal, Role};
use fairlake_core::catalog::query::QuerySpec;
use fairlake_core::erm::{SchemaChange, SchemaDef};
use fairlake_core::fair::{fair_check, render, FairScope};
use fairlake_core::lake::{Lake, LakeError};
use fairlake_core::provenance::{
    create_dataset, execution_init, execution_scope, execution_upload, find_dataset, partition_dataset, read_manifest,
    restore_inputs, upload_manifest, ExecutionConfig, PartitionSpec, RowStatus,
};
use fairlake_core::Rid;
use serde_json::json;

use crate::{cache_root, print_json, Cli, CliError, Command, DatasetCommand, MinidCommand, RunArgs};
use crate::{SchemaCommand, TokenCommand, VocabCommand};

fn new_token() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn principal(cli: &Cli, lake: &Lake) -> Result<Principal, CliError> {
    let token = cli.token.as_deref().ok_or_else(|| CliError::Usage("no token given (--token or FAIRLAKE_TOKEN)".into()))?;
    lake.authenticate(token).map_err(|_| CliError::Usage("the token is not valid for this lake".into()))
}

fn cache(cli: &Cli) -> Result<DatasetCache, CliError> {
    let root = cache_root(cli);
    DatasetCache::new(&root).map_err(|e| CliError::Usage(format!("cache {}: {e}", root.display())))
}

fn parse_rid(s: &str) -> Result<Rid, CliError> {
    s.trim().parse().map_err(|_| CliError::Usage(format!("{s:?} is not a RID")))
}

pub fn run(cli: &Cli, root: &Path) -> Result<(), CliError> {
    if let Command::InitCatalog { prefix, base_url, curator } = &cli.command {
        let lake = Lake::init(root, prefix, base_url.as_deref())?;
        let token = cli.token.clone().unwrap_or_else(new_token);
        lake.add_token(&token, Principal::new(curator, Role::Curator))?;
        if cli.json {
            print_json(&json!({ "root": root, "prefix": prefix, "curator": curator, "token": token }));
        } else {
            eprintln!("created lake {} with prefix {prefix}", root.display());
            println!("{token}");
        }
        return Ok(());
    }
    let lake = Lake::open(root)?;
    if let Command::Serve { listen } = &cli.command {
        return serve(lake, *listen);
    }
    let p = principal(cli, &lake)?;
    match &cli.command {
        Command::Token(TokenCommand::Add { id, role }) => {
            if !p.roles.contains(&Role::Curator) {
                return Err(CliError::Failed("only curators issue tokens".into()));
            }
            let token = new_token();
            lake.add_token(&token, Principal::new(id, *role))?;
            println!("{token}");
        }
        Command::Schema(SchemaCommand::Define { spec }) => {
            let def: SchemaDef = read_json(spec)?;
            lake.catalog().define_domain_schema(&p, def)?;
            report_model(cli, &lake);
        }
        Command::Schema(SchemaCommand::Evolve { changes }) => {
            let changes: Vec<SchemaChange> = read_json(changes)?;
            lake.catalog().evolve_schema(&p, &changes)?;
            report_model(cli, &lake);
        }
        Command::Schema(SchemaCommand::Show) => print_json(&json!(lake.catalog().introspect())),
        Command::Vocab(VocabCommand::Add { vocab, name, synonyms, description }) => {
            let synonyms: Vec<&str> = synonyms.iter().map(String::as_str).collect();
            let term = lake.catalog().add_vocabulary_term(&p, vocab, name, &synonyms, description)?;
            if cli.json {
                print_json(&json!(term));
            } else {
                println!("{} {}", term.rid, term.curie);
            }
        }
        Command::Annotate { key, value } => {
            lake.catalog().set_annotation(&p, key, value)?;
        }
        Command::Upload { manifest, jobs } => upload(cli, &lake, &p, manifest, *jobs)?,
        Command::Dataset(cmd) => dataset(cli, &lake, &p, cmd)?,
        Command::Minid(cmd) => minid(cli, &lake, &p, cmd)?,
        Command::Run(args) => execute(cli, &lake, &p, args)?,
        Command::Restore { execution, dest } => {
            let manifest = restore_inputs(&lake, &cache(cli)?, parse_rid(execution)?, dest)?;
            if cli.json {
                print_json(&json!(manifest));
            } else {
                for d in &manifest.datasets {
                    println!("dataset {}", d.minid);
                }
                for a in &manifest.assets {
                    println!("asset {}", a.rid);
                }
                println!("{}", dest.display());
            }
        }
        Command::FairCheck { dataset } => {
            let scope = match dataset {
                Some(d) => FairScope::Dataset(d.clone()),
                None => FairScope::Catalog,
            };
            let report = fair_check(&lake, &scope);
            if cli.json {
                print_json(&json!(report));
            } else {
                print!("{}", render(&report));
            }
        }
        Command::InitCatalog { .. } | Command::Bag(_) | Command::Serve { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn report_model(cli: &Cli, lake: &Lake) {
    let doc = lake.catalog().introspect();
    if cli.json {
        print_json(&json!(doc));
    } else {
        println!("model version {}", doc.model_version);
    }
}

pub(crate) fn validate(cli: &Cli, dir: &Path, complete: bool) -> Result<(), CliError> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", dir.display())));
    }
    let mode = if complete { ValidationMode::Complete } else { ValidationMode::Valid };
    let report = validate_bag(dir, mode);
    if cli.json {
        print_json(&json!(report));
    } else {
        for issue in &report.issues {
            println!("{:?} {}: {}", issue.kind, issue.path, issue.detail);
        }
        println!("{}", if report.is_ok() { "valid" } else { "invalid" });
    }
    if report.is_ok() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("{} issue(s) in {}", report.issues.len(), dir.display())))
    }
}

fn serve(lake: Lake, listen: std::net::SocketAddr) -> Result<(), CliError> {
    let rt = tokio::runtime::Runtime::new()?;
    eprintln!("serving {} on http://{listen}", lake.root().display());
    rt.block_on(fairlake_server::serve(Arc::new(lake), listen))?;
    Ok(())
}

fn upload(cli: &Cli, lake: &Lake, p: &Principal, manifest: &Path, jobs: usize) -> Result<(), CliError> {
    let file = fs::File::open(manifest).map_err(|e| CliError::Usage(format!("{}: {e}", manifest.display())))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let rows = read_manifest(file, base).map_err(|e| CliError::Usage(e.to_string()))?;
    let report = upload_manifest(lake, p, &rows, jobs)?;
    if cli.json {
        print_json(&json!(report));
    } else {
        for row in &report.rows {
            let status = match &row.status {
                RowStatus::Uploaded => "uploaded".to_string(),
                RowStatus::Skipped => "skipped".to_string(),
                RowStatus::Failed(m) => format!("failed: {m}"),
            };
            let rid = row.rid.map(|r| r.to_string()).unwrap_or_else(|| "-".into());
            println!("{}\t{}\t{rid}\t{status}", row.line, row.store_path);
        }
    }
    match report.failed() {
        0 => Ok(()),
        n => Err(CliError::Failed(format!("{n} of {} row(s) failed; rerun to retry them", report.rows.len()))),
    }
}

fn members(lake: &Lake, p: &Principal, cmd: &DatasetCommand) -> Result<Vec<Rid>, CliError> {
    let DatasetCommand::Create { members, members_file, all, .. } = cmd else { unreachable!() };
    let mut out: Vec<Rid> = members.iter().map(|m| parse_rid(m)).collect::<Result<_, _>>()?;
    if let Some(path) = members_file {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            out.push(parse_rid(line)?);
        }
    }
    if *all {
        let link = lake
            .catalog()
            .introspect()
            .dataset_link
            .ok_or_else(|| CliError::Usage("the catalog has no domain schema yet".into()))?;
        let page = lake.catalog().query(p, &QuerySpec::new(&link.to_string()))?;
        out.extend(page.data.iter().map(|r| r.rid));
    }
    Ok(out)
}

fn dataset(cli: &Cli, lake: &Lake, p: &Principal, cmd: &DatasetCommand) -> Result<(), CliError> {
    match cmd {
        DatasetCommand::Create { types, description, .. } => {
            let members = members(lake, p, cmd)?;
            let types: Vec<&str> = types.iter().map(String::as_str).collect();
            let ds = create_dataset(lake, p, &members, &types, description)?;
            if cli.json {
                print_json(&json!(ds));
            } else {
                println!("{} {}", ds.rid, ds.minid);
            }
        }
        DatasetCommand::Partition { dataset, splits, stratify_by, seed } => {
            let parent = find_dataset(lake, dataset)?;
            let spec = PartitionSpec {
                fractions: splits.clone(),
                stratify_by: stratify_by.clone(),
                seed: *seed,
            };
            let outcome = partition_dataset(lake, p, parent.rid, &spec)?;
            if cli.json {
                print_json(&json!(outcome));
            } else {
                for w in &outcome.plan.warnings {
                    eprintln!("warning: {w}");
                }
                for (name, child) in &outcome.children {
                    println!("{name}\t{}\t{}\t{}", child.rid, child.minid, child.members.len());
                }
            }
        }
        DatasetCommand::Download { dataset } => {
            let ds = find_dataset(lake, dataset)?;
            let path = cache(cli)?.materialize(lake.minids(), &lake.fetcher(), &ds.minid)?;
            if cli.json {
                print_json(&json!({ "dataset": ds.rid, "minid": ds.minid, "path": path }));
            } else {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn minid(cli: &Cli, lake: &Lake, p: &Principal, cmd: &MinidCommand) -> Result<(), CliError> {
    let m = match cmd {
        MinidCommand::Mint { sha256, locations, title } => {
            lake.minids().mint(p, sha256, locations.clone(), title, Default::default()).map_err(LakeError::from)?
        }
        MinidCommand::Resolve { identifier } => lake.minids().resolve(identifier).map_err(LakeError::from)?,
    };
    if cli.json {
        print_json(&json!(m));
    } else {
        println!("{}", m.identifier);
        println!("sha256 {}", m.content_sha256);
        for l in &m.locations {
            println!("location {l}");
        }
    }
    Ok(())
}

fn execute(cli: &Cli, lake: &Lake, p: &Principal, args: &RunArgs) -> Result<(), CliError> {
    let config: ExecutionConfig = read_json(&args.config)?;
    let workdir = match &args.workdir {
        Some(d) => d.clone(),
        None => tempfile::Builder::new().prefix("fairlake-exec-").tempdir()?.keep(),
    };
    let cache = cache(cli)?;
    let mut handle = execution_init(lake, p, &config, &workdir, &cache)?;
    eprintln!("execution {} in {}", handle.rid, workdir.display());
    let outcome = execution_scope(lake, &mut handle, |ctx| {
        let mut child = Process::new(&args.command[0])
            .args(&args.command[1..])
            .current_dir(&ctx.working_dir)
            .envs(ctx.env())
            .stdin(Stdio::null())
            .stdout(std::io::stderr())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| format!("cannot start {}: {e}", args.command[0]))?;
        let stderr = child.stderr.take().expect("piped");
        let tail = std::thread::spawn(move || stderr_tail(stderr));
        let status = child.wait().map_err(|e| e.to_string())?;
        let tail = tail.join().unwrap_or_default();
        let detail = if tail.is_empty() { String::new() } else { format!(": {tail}") };
        match status.code() {
            Some(0) => Ok(()),
            Some(code) => Err(format!("command exited with status {code}{detail}")),
            None => Err(format!("command terminated abnormally ({status}){detail}")),
        }
    });
    let upload = execution_upload(lake, &handle);
    let detail = match outcome {
        Ok(_) => None,
        Err(LakeError::WorkloadFailed { message, .. }) => Some(message),
        Err(e) => return Err(e.into()),
    };
    let upload = upload?;
    if cli.json {
        print_json(&json!({
            "execution": handle.rid,
            "status": if detail.is_none() { "completed" } else { "failed" },
            "status_detail": detail,
            "working_dir": workdir,
            "upload": upload,
        }));
    } else {
        println!("{}", handle.rid);
    }
    match detail {
        None => Ok(()),
        Some(m) => Err(CliError::Failed(format!("execution {} failed: {m}", handle.rid))),
    }
}

/// Copies the workload's stderr through and keeps its last lines.
fn stderr_tail(stderr: std::process::ChildStderr) -> String {
    use std::io::{BufRead, BufReader, Write};
    const KEEP: usize = 20;
    let mut lines = std::collections::VecDeque::new();
    for line in BufReader::new(stderr).lines().map_while(Result::ok) {
        let _ = writeln!(std::io::stderr(), "{line}");
        if lines.len() == KEEP {
            lines.pop_front();
        }
        lines.push_back(line);
    }
    lines.into_iter().collect::<Vec<_>>().join("\n").trim().to_string()
}
