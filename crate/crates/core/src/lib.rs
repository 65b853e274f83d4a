//! Catalog, object store, bag packaging, persistent identifiers and ML
//! provenance for a FAIR data lake.

pub mod bag;
pub mod cache;
pub mod catalog;
pub mod erm;
pub mod fair;
pub mod fixtures;
pub mod lake;
pub mod minid;
pub mod provenance;
pub mod rid;
pub mod store;
pub mod util;

pub use catalog::acl::{Principal, Role};
pub use catalog::{Catalog, CatalogError};
pub use rid::{Rid, RidMinter};
