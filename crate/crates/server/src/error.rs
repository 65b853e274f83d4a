use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use fairlake_core::catalog::acl::AuthError;
use fairlake_core::lake::LakeError;
use fairlake_core::minid::MinidError;
use fairlake_core::store::StoreError;
use fairlake_core::CatalogError;
use serde_json::{json, Map, Value};

/// An error response: status plus `{"error", "rule"|"report"}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
    pub rule: Option<String>,
    pub report: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into(), rule: None, report: None }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }

    pub fn unauthenticated() -> Self {
        ApiError { rule: Some("authentication-required".into()), ..Self::new(StatusCode::UNAUTHORIZED, "missing or invalid bearer token") }
    }

    fn denied(message: String, rule: &str) -> Self {
        ApiError { rule: Some(rule.to_string()), ..Self::new(StatusCode::FORBIDDEN, message) }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = Map::new();
        body.insert("error".into(), Value::from(self.message));
        if let Some(rule) = self.rule {
            body.insert("rule".into(), Value::from(rule));
        }
        if let Some(report) = self.report {
            body.insert("report".into(), report);
        }
        (self.status, Json(Value::Object(body))).into_response()
    }
}

impl From<CatalogError> for ApiError {
    fn from(e: CatalogError) -> Self {
        let message = e.to_string();
        match e {
            CatalogError::AccessDenied(d) => Self::denied(message, &d.rule),
            CatalogError::ValidationFailed(reports) => ApiError {
                report: Some(serde_json::to_value(&reports).unwrap_or(Value::Null)),
                ..Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
            },
            CatalogError::StaleWrite(_) | CatalogError::DuplicateTerm(_) => Self::new(StatusCode::CONFLICT, message),
            CatalogError::NotFound(_) => Self::new(StatusCode::NOT_FOUND, message),
            CatalogError::Schema(_)
            | CatalogError::InvalidQuery(_)
            | CatalogError::NotAVocabulary(_)
            | CatalogError::InvalidRequest(_) => Self::bad_request(message),
            CatalogError::Io(_) | CatalogError::Json(_) => Self::internal(message),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        match e {
            StoreError::AccessDenied(d) => Self::denied(message, &d.rule),
            StoreError::ChecksumMismatch { declared, actual } => ApiError {
                report: Some(json!({ "declared": declared, "actual": actual })),
                ..Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
            },
            StoreError::NamespaceMissing(_) | StoreError::Conflict(_) => Self::new(StatusCode::CONFLICT, message),
            StoreError::NotFound(_) | StoreError::VersionNotFound(..) => Self::new(StatusCode::NOT_FOUND, message),
            StoreError::Gone(v) => ApiError {
                report: Some(serde_json::to_value(&*v).unwrap_or(Value::Null)),
                ..Self::new(StatusCode::GONE, message)
            },
            StoreError::InvalidPath(_) => Self::bad_request(message),
            StoreError::Io(_) | StoreError::Json(_) => Self::internal(message),
        }
    }
}

impl From<MinidError> for ApiError {
    fn from(e: MinidError) -> Self {
        let message = e.to_string();
        match e {
            MinidError::AccessDenied(d) => Self::denied(message, &d.rule),
            MinidError::InvalidDigest(_) | MinidError::NoLocations => Self::bad_request(message),
            MinidError::UnknownIdentifier(_) => Self::new(StatusCode::NOT_FOUND, message),
            MinidError::Tombstoned(_) => Self::new(StatusCode::GONE, message),
            MinidError::Io(_) | MinidError::Json(_) => Self::internal(message),
        }
    }
}

impl From<LakeError> for ApiError {
    fn from(e: LakeError) -> Self {
        match e {
            LakeError::Catalog(e) => e.into(),
            LakeError::Store(e) => e.into(),
            LakeError::Minid(e) => e.into(),
            LakeError::Auth(AuthError::InvalidToken) => Self::unauthenticated(),
            other => Self::internal(other.to_string()),
        }
    }
}
