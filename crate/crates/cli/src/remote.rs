use std::fs;
use std::io::{self, Read};
use std::path::Path;

use fairlake_core::bag::Fetcher;
use fairlake_core::minid::Minid;
use reqwest::blocking::{Client, RequestBuilder, Response};
use reqwest::StatusCode;
use serde_json::{json, Value};

use crate::{cache_root, print_json, Cli, CliError, Command, DatasetCommand, MinidCommand, SchemaCommand, VocabCommand};

struct Remote {
    base: String,
    token: String,
    client: Client,
}

impl Remote {
    fn request(&self, method: reqwest::Method, path: &str) -> RequestBuilder {
        self.client.request(method, format!("{}{path}", self.base)).bearer_auth(&self.token)
    }

    /// Sends a request and returns the `data` array of the envelope.
    fn call(&self, req: RequestBuilder) -> Result<Vec<Value>, CliError> {
        let resp = req.send().map_err(|e| CliError::Failed(format!("{}: {e}", self.base)))?;
        let status = resp.status();
        let body: Value = resp.json().map_err(|e| CliError::Failed(format!("unreadable response: {e}")))?;
        if status.is_success() {
            return Ok(body["data"].as_array().cloned().unwrap_or_default());
        }
        let mut message = format!("{status}: {}", body["error"].as_str().unwrap_or("request failed"));
        if let Some(rule) = body["rule"].as_str() {
            message.push_str(&format!(" ({rule})"));
        }
        if let Some(report) = body.get("report") {
            message.push_str(&format!("\n{}", serde_json::to_string_pretty(report).unwrap_or_default()));
        }
        Err(if status == StatusCode::UNAUTHORIZED { CliError::Usage(message) } else { CliError::Failed(message) })
    }

    fn first(&self, req: RequestBuilder) -> Result<Value, CliError> {
        self.call(req)?.into_iter().next().ok_or_else(|| CliError::Failed("empty response".into()))
    }

    fn resolve(&self, identifier: &str) -> Result<Minid, CliError> {
        let v = self.first(self.request(reqwest::Method::GET, &format!("/minid/{identifier}")))?;
        serde_json::from_value(v).map_err(|e| CliError::Failed(format!("malformed minid record: {e}")))
    }
}

/// Fetches bag archives and fetch.txt entries over HTTP, resolving
/// `minid:` locations through the service.
struct HttpFetcher<'a> {
    remote: &'a Remote,
}

fn io_err(e: impl std::fmt::Display) -> io::Error {
    io::Error::other(e.to_string())
}

impl Fetcher for HttpFetcher<'_> {
    fn fetch(&self, url: &str) -> io::Result<Box<dyn Read + Send>> {
        if url.starts_with("minid:") {
            let m = self.remote.resolve(url).map_err(io_err)?;
            let mut last = io::Error::new(io::ErrorKind::NotFound, format!("{url} has no locations"));
            for loc in m.locations.iter().filter(|l| !l.starts_with("minid:")) {
                match self.fetch(loc) {
                    Ok(r) => return Ok(r),
                    Err(e) => last = e,
                }
            }
            return Err(last);
        }
        let mut req = self.remote.client.get(url);
        if url.starts_with(&self.remote.base) {
            req = req.bearer_auth(&self.remote.token);
        }
        let resp: Response = req.send().map_err(io_err)?;
        if !resp.status().is_success() {
            return Err(io::Error::new(io::ErrorKind::NotFound, format!("{url}: {}", resp.status())));
        }
        Ok(Box::new(resp))
    }
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn run(cli: &Cli, base: &str) -> Result<(), CliError> {
    let token = cli.token.clone().ok_or_else(|| CliError::Usage("no token given (--token or FAIRLAKE_TOKEN)".into()))?;
    let client = Client::builder().build().map_err(|e| CliError::Usage(e.to_string()))?;
    let remote = Remote { base: base.to_string(), token, client };
    use reqwest::Method;
    match &cli.command {
        Command::Schema(cmd) => {
            let req = match cmd {
                SchemaCommand::Define { spec } => {
                    remote.request(Method::POST, "/schema").json(&json!({ "schema": read_json(spec)? }))
                }
                SchemaCommand::Evolve { changes } => {
                    remote.request(Method::POST, "/schema").json(&json!({ "changes": read_json(changes)? }))
                }
                SchemaCommand::Show => remote.request(Method::GET, "/model"),
            };
            let doc = remote.first(req)?;
            if cli.json || matches!(cmd, SchemaCommand::Show) {
                print_json(&doc);
            } else {
                println!("model version {}", doc["model_version"]);
            }
        }
        Command::Vocab(VocabCommand::Add { vocab, name, synonyms, description }) => {
            let row = json!({ "Name": name, "Synonyms": synonyms, "Description": description });
            let term = remote.first(remote.request(Method::POST, &format!("/entity/{vocab}")).json(&row))?;
            if cli.json {
                print_json(&term);
            } else {
                println!("{} {}", term["RID"].as_str().unwrap_or_default(), term["ID"].as_str().unwrap_or_default());
            }
        }
        Command::Minid(cmd) => {
            let m = match cmd {
                MinidCommand::Mint { sha256, locations, title } => {
                    let body = json!({ "content_sha256": sha256, "locations": locations, "title": title });
                    remote.first(remote.request(Method::POST, "/minid").json(&body))?
                }
                MinidCommand::Resolve { identifier } => serde_json::to_value(remote.resolve(identifier)?).expect("serializable"),
            };
            if cli.json {
                print_json(&m);
            } else {
                println!("{}", m["identifier"].as_str().unwrap_or_default());
                println!("sha256 {}", m["content_sha256"].as_str().unwrap_or_default());
                for l in m["locations"].as_array().into_iter().flatten() {
                    println!("location {}", l.as_str().unwrap_or_default());
                }
            }
        }
        Command::Dataset(DatasetCommand::Download { dataset }) => {
            if !dataset.starts_with("minid:") {
                return Err(CliError::Usage("over HTTP, name the dataset by its minid".into()));
            }
            let m = remote.resolve(dataset)?;
            let root = cache_root(cli);
            let cache = fairlake_core::cache::DatasetCache::new(&root)
                .map_err(|e| CliError::Usage(format!("cache {}: {e}", root.display())))?;
            let path = cache.materialize_resolved(&m, &HttpFetcher { remote: &remote })?;
            if cli.json {
                print_json(&json!({ "minid": m.identifier, "path": path }));
            } else {
                println!("{}", path.display());
            }
        }
        other => {
            return Err(CliError::Usage(format!(
                "{} needs a local lake; pass its directory as --url",
                command_name(other)
            )))
        }
    }
    Ok(())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::InitCatalog { .. } => "init-catalog",
        Command::Token(_) => "token",
        Command::Schema(_) => "schema",
        Command::Vocab(_) => "vocab",
        Command::Annotate { .. } => "annotate",
        Command::Upload { .. } => "upload",
        Command::Dataset(_) => "dataset",
        Command::Minid(_) => "minid",
        Command::Bag(_) => "bag",
        Command::Run(_) => "run",
        Command::Restore { .. } => "restore",
        Command::FairCheck { .. } => "fair-check",
        Command::Serve { .. } => "serve",
    }
}
