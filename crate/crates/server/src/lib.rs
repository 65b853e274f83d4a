//! HTTP/JSON service over a lake: model introspection, schema evolution,
//! record CRUD and queries, the object store and the minid registry.
//!
//! Every request carries `Authorization: Bearer <token>`. Successful JSON
//! responses have the shape `{"data": [...], "count": n, "model_version": v}`;
//! failures have `{"error": message}` plus `rule` (access decisions) or
//! `report` (validation details, tombstoned versions).

mod error;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{FromRequestParts, Path, Query, RawQuery, Request, State};
use axum::http::header::{AUTHORIZATION, CONTENT_LENGTH, CONTENT_TYPE};
use axum::http::request::Parts;
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use fairlake_core::catalog::query::{Filter, QuerySpec};
use fairlake_core::catalog::{CatalogError, Mutation};
use fairlake_core::catalog::acl::ReleaseState;
use fairlake_core::erm::{SchemaChange, SchemaDef, SYSTEM_COLUMNS};
use fairlake_core::lake::{Lake, LakeError};
use fairlake_core::{Principal, Rid};
use http_body_util::BodyExt;
use serde::Deserialize;
use serde_json::{json, Map, Value};
use tower_http::cors::CorsLayer;

pub use error::ApiError;

/// Header carrying the client's SHA-256 of an uploaded object.
pub const CONTENT_SHA256: &str = "content-sha256";
pub const VERSION_ID: &str = "x-version-id";
pub const OBJECT_SHA256: &str = "x-content-sha256";
pub const OBJECT_LENGTH: &str = "x-content-length";

type ApiResult = Result<Response, ApiError>;

#[derive(Clone)]
struct AppState {
    lake: Arc<Lake>,
}

/// The principal behind the request's bearer token.
struct Caller(Principal);

impl FromRequestParts<AppState> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer ").or_else(|| v.strip_prefix("bearer ")))
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .ok_or_else(ApiError::unauthenticated)?;
        state.lake.authenticate(token).map(Caller).map_err(|_| ApiError::unauthenticated())
    }
}

pub fn router(lake: Arc<Lake>) -> Router {
    Router::new()
        .route("/model", get(model))
        .route("/session", get(session))
        .route("/schema", post(schema))
        .route("/entity/{qualified}", get(query).post(insert).put(update).delete(remove))
        .route("/rid/{rid}", get(by_rid))
        .route("/store/{*path}", get(store_get).put(store_put).post(store_namespace).delete(store_delete))
        .route("/minid", post(minid_mint))
        .route("/minid/{id}", get(minid_resolve).delete(minid_tombstone))
        .route("/minid/{id}/locations", put(minid_locations))
        .layer(CorsLayer::permissive())
        .with_state(AppState { lake })
}

/// Serves `lake` on `addr` until ctrl-c.
pub async fn serve(lake: Arc<Lake>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(lake))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Lake) -> Result<T, ApiError> + Send + 'static,
{
    let lake = state.lake.clone();
    tokio::task::spawn_blocking(move || f(&lake)).await.map_err(|e| ApiError::internal(e.to_string()))?
}

fn envelope(lake: &Lake, data: Vec<Value>, count: Option<usize>) -> Response {
    let count = count.unwrap_or(data.len());
    Json(json!({ "data": data, "count": count, "model_version": lake.catalog().model_version() })).into_response()
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

async fn model(State(s): State<AppState>, Caller(_): Caller) -> ApiResult {
    blocking(&s, |lake| Ok(envelope(lake, vec![to_value(&lake.catalog().introspect())], None))).await
}

async fn session(State(s): State<AppState>, Caller(p): Caller) -> ApiResult {
    blocking(&s, move |lake| Ok(envelope(lake, vec![to_value(&p)], None))).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaRequest {
    #[serde(default)]
    schema: Option<SchemaDef>,
    #[serde(default)]
    changes: Vec<SchemaChange>,
}

/// `{"schema": {...}}` defines the domain schema; `{"changes": [...]}`
/// evolves the model additively.
async fn schema(State(s): State<AppState>, Caller(p): Caller, body: Bytes) -> ApiResult {
    let req: SchemaRequest = parse_json(&body)?;
    blocking(&s, move |lake| {
        let catalog = lake.catalog();
        match (req.schema, req.changes.is_empty()) {
            (Some(def), true) => {
                catalog.define_domain_schema(&p, def)?;
            }
            (None, false) => {
                catalog.evolve_schema(&p, &req.changes)?;
            }
            _ => return Err(ApiError::bad_request("send exactly one of \"schema\" or \"changes\"")),
        }
        Ok(envelope(lake, vec![to_value(&catalog.introspect())], None))
    })
    .await
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed JSON body: {e}")))
}

/// A JSON array of row objects, or a single object.
fn rows(body: &[u8]) -> Result<Vec<Map<String, Value>>, ApiError> {
    match parse_json::<Value>(body)? {
        Value::Array(items) => items
            .into_iter()
            .map(|v| match v {
                Value::Object(m) => Ok(m),
                _ => Err(ApiError::bad_request("each row must be a JSON object")),
            })
            .collect(),
        Value::Object(m) => Ok(vec![m]),
        _ => Err(ApiError::bad_request("body must be a row object or an array of rows")),
    }
}

fn release_of(row: &mut Map<String, Value>) -> Result<Option<ReleaseState>, ApiError> {
    match row.remove("Release") {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v).map(Some).map_err(|_| ApiError::bad_request("Release must be pending or released")),
    }
}

fn string_list(v: Option<&Value>) -> Vec<String> {
    match v {
        Some(Value::Array(a)) => a.iter().filter_map(|x| x.as_str().map(str::to_string)).collect(),
        Some(Value::String(s)) if !s.is_empty() => vec![s.clone()],
        _ => Vec::new(),
    }
}

fn records_json(lake: &Lake, rids: &[Rid]) -> Vec<Value> {
    rids.iter().filter_map(|r| lake.catalog().lookup(*r)).map(|r| r.to_json()).collect()
}

async fn insert(State(s): State<AppState>, Caller(p): Caller, Path(qualified): Path<String>, body: Bytes) -> ApiResult {
    let rows = rows(&body)?;
    blocking(&s, move |lake| {
        let catalog = lake.catalog();
        let model = catalog.model();
        let t = model.resolve(&qualified).map_err(CatalogError::from)?;
        let def = model.entity_type(&t).expect("resolved");
        if def.is_vocabulary {
            let mut rids = Vec::new();
            for row in &rows {
                let name = row.get("Name").and_then(Value::as_str).ok_or_else(|| ApiError::bad_request("vocabulary rows need a Name"))?;
                let synonyms = string_list(row.get("Synonyms"));
                let synonyms: Vec<&str> = synonyms.iter().map(String::as_str).collect();
                let description = row.get("Description").and_then(Value::as_str).unwrap_or_default();
                rids.push(catalog.add_vocabulary_term(&p, &qualified, name, &synonyms, description)?.rid);
            }
            return Ok(envelope(lake, records_json(lake, &rids), None));
        }
        let mut batch = Vec::new();
        for mut row in rows {
            let release = release_of(&mut row)?;
            if let Some(col) = SYSTEM_COLUMNS.iter().find(|c| row.contains_key(**c)) {
                return Err(ApiError::bad_request(format!("{col} is assigned by the catalog")));
            }
            batch.push(Mutation::Insert { entity_type: t.clone(), rid: None, values: row.into_iter().collect(), release });
        }
        let rids = catalog.apply(&p, batch)?;
        Ok(envelope(lake, records_json(lake, &rids), None))
    })
    .await
}

async fn update(State(s): State<AppState>, Caller(p): Caller, Path(qualified): Path<String>, body: Bytes) -> ApiResult {
    let rows = rows(&body)?;
    blocking(&s, move |lake| {
        let catalog = lake.catalog();
        let t = catalog.model().resolve(&qualified).map_err(CatalogError::from)?;
        let mut batch = Vec::new();
        let mut rids = Vec::new();
        for mut row in rows {
            let rid: Rid = row
                .remove("RID")
                .and_then(|v| v.as_str().and_then(|s| s.parse().ok()))
                .ok_or_else(|| ApiError::bad_request("each updated row needs its RID"))?;
            let expected_stamp = match row.remove("Stamp") {
                None | Some(Value::Null) => None,
                Some(v) => Some(v.as_u64().ok_or_else(|| ApiError::bad_request("Stamp must be an integer"))?),
            };
            let release = release_of(&mut row)?;
            for col in ["RCB", "RCT", "RMT"] {
                row.remove(col);
            }
            rids.push(rid);
            batch.push(Mutation::Update { entity_type: t.clone(), rid, expected_stamp, values: row.into_iter().collect(), release });
        }
        catalog.apply(&p, batch)?;
        Ok(envelope(lake, records_json(lake, &rids), None))
    })
    .await
}

fn query_pairs(raw: Option<&str>) -> Vec<(String, String)> {
    raw.map(|q| form_urlencoded::parse(q.as_bytes()).into_owned().collect()).unwrap_or_default()
}

fn parse_rids(text: &str) -> Result<Vec<Rid>, ApiError> {
    text.split(',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| ApiError::bad_request(format!("{s:?} is not a RID"))))
        .collect()
}

async fn remove(State(s): State<AppState>, Caller(p): Caller, Path(qualified): Path<String>, RawQuery(raw): RawQuery) -> ApiResult {
    let mut rids = Vec::new();
    for (k, v) in query_pairs(raw.as_deref()) {
        if k == "rid" || k == "RID" {
            rids.extend(parse_rids(&v)?);
        }
    }
    if rids.is_empty() {
        return Err(ApiError::bad_request("name the records to delete with ?rid=RID[,RID...]"));
    }
    blocking(&s, move |lake| {
        let catalog = lake.catalog();
        let t = catalog.model().resolve(&qualified).map_err(CatalogError::from)?;
        let batch = rids.iter().map(|rid| Mutation::Delete { entity_type: t.clone(), rid: *rid, expected_stamp: None }).collect();
        catalog.apply(&p, batch)?;
        Ok(envelope(lake, records_json(lake, &rids), None))
    })
    .await
}

/// `?filter=Attr::op::value` (repeatable), `?join=Type` (repeatable or
/// comma-separated), `?projection=a,b`, `?limit=`, `?offset=`.
fn query_spec(qualified: &str, raw: Option<&str>) -> Result<QuerySpec, ApiError> {
    let mut spec = QuerySpec::new(qualified);
    for (k, v) in query_pairs(raw) {
        let number = |v: &str| v.parse::<usize>().map_err(|_| ApiError::bad_request(format!("{k} must be a non-negative integer")));
        match k.as_str() {
            "filter" => spec.filters.push(Filter::parse(&v)?),
            "join" => spec.joins.extend(v.split(',').filter(|s| !s.is_empty()).map(str::to_string)),
            "projection" => spec.projection.extend(v.split(',').filter(|s| !s.is_empty()).map(str::to_string)),
            "limit" => spec.limit = Some(number(&v)?),
            "offset" => spec.offset = number(&v)?,
            other => return Err(ApiError::bad_request(format!("unknown query parameter {other:?}"))),
        }
    }
    Ok(spec)
}

async fn query(State(s): State<AppState>, Caller(p): Caller, Path(qualified): Path<String>, RawQuery(raw): RawQuery) -> ApiResult {
    let spec = query_spec(&qualified, raw.as_deref())?;
    blocking(&s, move |lake| {
        let page = lake.catalog().query(&p, &spec)?;
        let data = page.data.iter().map(|r| r.to_json()).collect();
        Ok(envelope(lake, data, Some(page.count)))
    })
    .await
}

async fn by_rid(State(s): State<AppState>, Caller(p): Caller, Path(rid): Path<String>) -> ApiResult {
    let rid: Rid = rid.parse().map_err(|_| ApiError::bad_request(format!("{rid:?} is not a RID")))?;
    blocking(&s, move |lake| {
        let r = lake.catalog().get(&p, rid)?;
        let mut v = r.to_json();
        v["entity_type"] = Value::from(r.entity_type.to_string());
        Ok(envelope(lake, vec![v], None))
    })
    .await
}

fn object_path(path: &str) -> String {
    format!("/{}", path.trim_end_matches('/'))
}

fn version_headers(headers: &mut HeaderMap, v: &fairlake_core::store::ObjectVersion) {
    let mut set = |k: &'static str, val: &str| {
        if let Ok(h) = HeaderValue::from_str(val) {
            headers.insert(k, h);
        }
    };
    set(VERSION_ID, &v.version_id);
    set(OBJECT_SHA256, &v.content_sha256);
    set(OBJECT_LENGTH, &v.length.to_string());
}

async fn store_put(State(s): State<AppState>, Caller(p): Caller, Path(path): Path<String>, req: Request) -> ApiResult {
    let path = object_path(&path);
    let declared = req.headers().get(CONTENT_SHA256).and_then(|v| v.to_str().ok()).map(|v| v.trim().to_ascii_lowercase());
    let content_type = req
        .headers()
        .get(CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("application/octet-stream")
        .to_string();
    let mut spool = tempfile::tempfile().map_err(|e| ApiError::internal(e.to_string()))?;
    let mut body = req.into_body();
    while let Some(frame) = body.frame().await {
        let frame = frame.map_err(|e| ApiError::bad_request(format!("upload interrupted: {e}")))?;
        if let Ok(data) = frame.into_data() {
            spool.write_all(&data).map_err(|e| ApiError::internal(e.to_string()))?;
        }
    }
    blocking(&s, move |lake| {
        use std::io::Seek;
        spool.rewind().map_err(|e| ApiError::internal(e.to_string()))?;
        let v = lake.store().put(&p, &path, &mut spool, declared.as_deref(), &content_type).map_err(LakeError::from)?;
        let mut resp = envelope(lake, vec![to_value(&v)], None);
        *resp.status_mut() = StatusCode::CREATED;
        version_headers(resp.headers_mut(), &v);
        Ok(resp)
    })
    .await
}

#[derive(Deserialize)]
struct StoreParams {
    version: Option<String>,
    versions: Option<String>,
    parents: Option<String>,
}

async fn store_get(
    State(s): State<AppState>,
    Caller(p): Caller,
    Path(path): Path<String>,
    Query(params): Query<StoreParams>,
) -> ApiResult {
    let path = object_path(&path);
    blocking(&s, move |lake| {
        let store = lake.store();
        if params.versions.is_some() {
            let versions = store.versions(&path).map_err(LakeError::from)?;
            return Ok(envelope(lake, versions.iter().map(to_value).collect(), None));
        }
        let (v, mut reader) = store.get(&p, &path, params.version.as_deref()).map_err(LakeError::from)?;
        let mut bytes = Vec::with_capacity(v.length as usize);
        reader.read_to_end(&mut bytes).map_err(|e| ApiError::internal(e.to_string()))?;
        let mut resp = Response::new(Body::from(bytes));
        let headers = resp.headers_mut();
        version_headers(headers, &v);
        headers.insert(CONTENT_LENGTH, HeaderValue::from(v.length));
        if let Ok(ct) = HeaderValue::from_str(&v.content_type) {
            headers.insert(CONTENT_TYPE, ct);
        }
        Ok(resp)
    })
    .await
}


/// Creates a namespace; `?parents=true` also creates missing ancestors.
async fn store_namespace(
    State(s): State<AppState>,
    Caller(p): Caller,
    Path(path): Path<String>,
    Query(params): Query<StoreParams>,
) -> ApiResult {
    let path = object_path(&path);
    blocking(&s, move |lake| {
        let store = lake.store();
        if params.parents.as_deref().is_some_and(|v| v == "true" || v.is_empty()) {
            store.ensure_namespace(&p, &path)
        } else {
            store.create_namespace(&p, &path)
        }
        .map_err(LakeError::from)?;
        let mut resp = envelope(lake, vec![json!({ "namespace": path })], None);
        *resp.status_mut() = StatusCode::CREATED;
        Ok(resp)
    })
    .await
}

async fn store_delete(
    State(s): State<AppState>,
    Caller(p): Caller,
    Path(path): Path<String>,
    Query(params): Query<StoreParams>,
) -> ApiResult {
    let path = object_path(&path);
    let version = params.version.ok_or_else(|| ApiError::bad_request("name the version to delete with ?version="))?;
    blocking(&s, move |lake| {
        let v = lake.store().delete(&p, &path, &version).map_err(LakeError::from)?;
        let mut resp = envelope(lake, vec![to_value(&v)], None);
        version_headers(resp.headers_mut(), &v);
        Ok(resp)
    })
    .await
}

#[derive(Deserialize)]
struct MintRequest {
    content_sha256: String,
    locations: Vec<String>,
    #[serde(default)]
    title: String,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

async fn minid_mint(State(s): State<AppState>, Caller(p): Caller, body: Bytes) -> ApiResult {
    let req: MintRequest = parse_json(&body)?;
    blocking(&s, move |lake| {
        let m = lake.minids().mint(&p, &req.content_sha256, req.locations, &req.title, req.metadata).map_err(LakeError::from)?;
        let mut resp = envelope(lake, vec![to_value(&m)], None);
        *resp.status_mut() = StatusCode::CREATED;
        Ok(resp)
    })
    .await
}

async fn minid_resolve(State(s): State<AppState>, Caller(_): Caller, Path(id): Path<String>) -> ApiResult {
    blocking(&s, move |lake| {
        let m = lake.minids().resolve(&id).map_err(LakeError::from)?;
        Ok(envelope(lake, vec![to_value(&m)], None))
    })
    .await
}

#[derive(Deserialize)]
struct LocationsRequest {
    locations: Vec<String>,
}

async fn minid_locations(State(s): State<AppState>, Caller(p): Caller, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let req: LocationsRequest = parse_json(&body)?;
    blocking(&s, move |lake| {
        let m = lake.minids().update_locations(&p, &id, req.locations).map_err(LakeError::from)?;
        Ok(envelope(lake, vec![to_value(&m)], None))
    })
    .await
}

async fn minid_tombstone(State(s): State<AppState>, Caller(p): Caller, Path(id): Path<String>) -> ApiResult {
    blocking(&s, move |lake| {
        let m = lake.minids().tombstone(&p, &id).map_err(LakeError::from)?;
        Ok(envelope(lake, vec![to_value(&m)], None))
    })
    .await
}
