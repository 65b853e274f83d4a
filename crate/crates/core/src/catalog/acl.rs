//! Self-curation access control.
//!
//! Three roles: a reader sees released content, a writer owns and curates
//! what they create (and sees released content of others), and a curator
//! may do anything. Model changes are reserved for curators.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Reader,
    Writer,
    Curator,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Reader => "reader",
            Role::Writer => "writer",
            Role::Curator => "curator",
        })
    }
}

impl std::str::FromStr for Role {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "reader" => Ok(Role::Reader),
            "writer" => Ok(Role::Writer),
            "curator" => Ok(Role::Curator),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub id: String,
    #[serde(default)]
    pub display_name: String,
    pub roles: BTreeSet<Role>,
}

impl Principal {
    pub fn new(id: &str, role: Role) -> Self {
        Principal { id: id.to_string(), display_name: id.to_string(), roles: BTreeSet::from([role]) }
    }

    pub fn has_role(&self, role: Role) -> bool {
        self.roles.contains(&role)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Read,
    Create,
    Update,
    Delete,
    ModelChange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReleaseState {
    #[default]
    Pending,
    Released,
}

/// What the policy needs to know about an existing record.
#[derive(Debug, Clone, Copy)]
pub struct RecordContext<'a> {
    pub created_by: &'a str,
    pub release: ReleaseState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessDecision {
    pub allowed: bool,
    pub rule: String,
}

impl AccessDecision {
    fn allow(rule: &str) -> Self {
        AccessDecision { allowed: true, rule: rule.to_string() }
    }

    fn deny(rule: &str) -> Self {
        AccessDecision { allowed: false, rule: rule.to_string() }
    }
}

fn decide_for_role(role: Role, who: &str, action: Action, ctx: Option<RecordContext<'_>>) -> AccessDecision {
    if role == Role::Curator {
        return AccessDecision::allow("curator-all");
    }
    match (action, ctx) {
        (Action::ModelChange, _) if role == Role::Writer => AccessDecision::deny("model-change-curator-only"),
        (Action::Create, _) if role == Role::Writer => AccessDecision::allow("writer-create"),
        (Action::ModelChange | Action::Create, _) => AccessDecision::deny("reader-read-only"),
        (Action::Read | Action::Update | Action::Delete, None) => AccessDecision::deny("record-context-required"),
        (Action::Read, Some(c)) => {
            if role == Role::Writer && c.created_by == who {
                AccessDecision::allow("self-curation-owner")
            } else if c.release == ReleaseState::Released {
                AccessDecision::allow("released-readable")
            } else {
                AccessDecision::deny("pending-not-shared")
            }
        }
        (Action::Update | Action::Delete, Some(c)) => {
            if role == Role::Reader {
                AccessDecision::deny("reader-read-only")
            } else if c.created_by == who {
                AccessDecision::allow("self-curation-owner")
            } else {
                AccessDecision::deny("not-owner")
            }
        }
    }
}

/// Total decision function: every input yields exactly one decision.
/// With several roles the strongest allowing role wins; otherwise the
/// strongest role's denial is reported.
pub fn authorize(principal: &Principal, action: Action, ctx: Option<RecordContext<'_>>) -> AccessDecision {
    if principal.roles.is_empty() {
        return AccessDecision::deny("no-role");
    }
    let decisions: Vec<AccessDecision> =
        principal.roles.iter().rev().map(|r| decide_for_role(*r, &principal.id, action, ctx)).collect();
    decisions.iter().find(|d| d.allowed).cloned().unwrap_or_else(|| decisions[0].clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreAction {
    Get,
    Put,
    Delete,
}

/// Object versions are readable by every role; writing needs writer or
/// curator; deleting a version is curator-only because provenance may
/// reference it.
pub fn authorize_store(principal: &Principal, action: StoreAction) -> AccessDecision {
    let top = principal.roles.iter().next_back().copied();
    match (top, action) {
        (None, _) => AccessDecision::deny("no-role"),
        (Some(Role::Curator), _) => AccessDecision::allow("curator-all"),
        (Some(_), StoreAction::Get) => AccessDecision::allow("store-readable"),
        (Some(Role::Writer), StoreAction::Put) => AccessDecision::allow("writer-create"),
        (Some(Role::Writer), StoreAction::Delete) => AccessDecision::deny("store-delete-curator-only"),
        (Some(Role::Reader), _) => AccessDecision::deny("reader-read-only"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuthError {
    #[error("invalid token")]
    InvalidToken,
    #[error("token registry: {0}")]
    Registry(String),
}

/// Static bearer tokens mapped to principals.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TokenRegistry {
    tokens: BTreeMap<String, Principal>,
}

impl TokenRegistry {
    pub fn load(path: &Path) -> Result<Self, AuthError> {
        let text = std::fs::read_to_string(path).map_err(|e| AuthError::Registry(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| AuthError::Registry(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), AuthError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| AuthError::Registry(e.to_string()))?;
        crate::util::write_atomic(path, text.as_bytes()).map_err(|e| AuthError::Registry(e.to_string()))
    }

    pub fn insert(&mut self, token: &str, principal: Principal) {
        self.tokens.insert(token.to_string(), principal);
    }

    pub fn authenticate(&self, token: &str) -> Result<Principal, AuthError> {
        self.tokens.get(token).cloned().ok_or(AuthError::InvalidToken)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn principals(&self) -> impl Iterator<Item = &Principal> {
        self.tokens.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry() -> TokenRegistry {
        let mut r = TokenRegistry::default();
        r.insert("tk-alice", Principal::new("alice", Role::Writer));
        r.insert("tk-prof", Principal::new("prof", Role::Curator));
        r
    }

    #[test]
    fn authenticate_tokens() {
        let r = registry();
        assert_eq!(r.authenticate("tk-alice").unwrap(), Principal::new("alice", Role::Writer));
        assert_eq!(r.authenticate("tk-prof").unwrap().roles, BTreeSet::from([Role::Curator]));
        assert_eq!(r.authenticate("nope"), Err(AuthError::InvalidToken));
    }

    #[test]
    fn named_cases() {
        let alice = Principal::new("alice", Role::Writer);
        let bob = Principal::new("bob", Role::Reader);
        let own = RecordContext { created_by: "alice", release: ReleaseState::Pending };
        let d = authorize(&alice, Action::Update, Some(own));
        assert_eq!(d, AccessDecision::allow("self-curation-owner"));
        let released = RecordContext { created_by: "alice", release: ReleaseState::Released };
        assert_eq!(authorize(&bob, Action::Update, Some(released)), AccessDecision::deny("reader-read-only"));
        assert!(!authorize(&bob, Action::Read, Some(own)).allowed);
        assert_eq!(authorize(&bob, Action::Create, None).rule, "reader-read-only");
        assert!(!authorize(&alice, Action::ModelChange, None).allowed);
    }

    #[test]
    fn strongest_allowing_role_wins() {
        let mut p = Principal::new("carol", Role::Reader);
        p.roles.insert(Role::Writer);
        assert!(authorize(&p, Action::Create, None).allowed);
        let none = Principal { id: "x".into(), display_name: String::new(), roles: BTreeSet::new() };
        assert_eq!(authorize(&none, Action::Read, None).rule, "no-role");
    }

    #[test]
    fn store_matrix() {
        let w = Principal::new("w", Role::Writer);
        assert!(authorize_store(&w, StoreAction::Put).allowed);
        assert!(!authorize_store(&w, StoreAction::Delete).allowed);
        assert!(!authorize_store(&Principal::new("r", Role::Reader), StoreAction::Put).allowed);
        assert!(authorize_store(&Principal::new("c", Role::Curator), StoreAction::Delete).allowed);
    }
}
