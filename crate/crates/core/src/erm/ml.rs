use super::{AttributeDef, EntityTypeDef, SchemaDef, SchemaKind, TypeRef, ValueKind};

pub const ML_SCHEMA: &str = "ml";

/// The fixed ML schema. `Dataset_Member.Member` is declared but its foreign
/// key is added only when a domain schema binds a link target.
pub fn ml_schema() -> SchemaDef {
    use ValueKind::*;
    let t = TypeRef::ml;
    let entity_types = vec![
        EntityTypeDef::vocabulary("Dataset_Type"),
        EntityTypeDef::vocabulary("Workflow_Type"),
        EntityTypeDef::vocabulary("Execution_Asset_Type"),
        EntityTypeDef::vocabulary("Execution_Metadata_Type"),
        EntityTypeDef::new("Dataset")
            .attr(AttributeDef::new("Description", Text))
            .attr(AttributeDef { default: Some(serde_json::json!([])), ..AttributeDef::new("Dataset_Types", Json) })
            .attr(AttributeDef::required("Version", Integer))
            .attr(AttributeDef::new("Minid", Text))
            .attr(AttributeDef::new("Bag_Hash", Text)),
        EntityTypeDef::new("Workflow")
            .attr(AttributeDef::required("Name", Text))
            .reference("Workflow_Type", TermRef, false, &t("Workflow_Type"))
            .attr(AttributeDef::required("URL", Text))
            .attr(AttributeDef::required("Checksum", Text))
            .attr(AttributeDef::new("Description", Text)),
        EntityTypeDef::new("Execution")
            .reference("Workflow", RidRef, false, &t("Workflow"))
            .attr(AttributeDef::required("User", Text))
            .attr(AttributeDef::required("Status", Text))
            .attr(AttributeDef::new("Status_Detail", Text))
            .attr(AttributeDef::new("Started_At", Timestamp))
            .attr(AttributeDef::new("Stopped_At", Timestamp))
            .attr(AttributeDef::new("Duration", Float))
            .attr(AttributeDef::new("Description", Text)),
        EntityTypeDef::asset("Execution_Asset")
            .reference("Execution_Asset_Type", TermRef, false, &t("Execution_Asset_Type"))
            .reference("Execution", RidRef, false, &t("Execution"))
            .attr(AttributeDef::new("Version_Id", Text)),
        EntityTypeDef::asset("Execution_Metadata")
            .reference("Execution_Metadata_Type", TermRef, false, &t("Execution_Metadata_Type"))
            .reference("Execution", RidRef, false, &t("Execution"))
            .attr(AttributeDef::new("Version_Id", Text)),
        EntityTypeDef::new("Dataset_Member")
            .reference("Dataset", RidRef, false, &t("Dataset"))
            .attr(AttributeDef::required("Member", RidRef)),
        EntityTypeDef::new("Execution_Dataset")
            .reference("Execution", RidRef, false, &t("Execution"))
            .reference("Dataset", RidRef, false, &t("Dataset"))
            .attr(AttributeDef::new("Minid", Text)),
        EntityTypeDef::new("Execution_Asset_Link")
            .reference("Execution", RidRef, false, &t("Execution"))
            .reference("Execution_Asset", RidRef, false, &t("Execution_Asset"))
            .attr(AttributeDef::required("Role", Text)),
    ];
    SchemaDef { name: ML_SCHEMA.to_string(), kind: SchemaKind::Ml, link_target: None, entity_types }
}

/// Entity types of the ML schema by category.
pub const CORE_TYPES: [&str; 5] =
    ["Dataset", "Workflow", "Execution", "Execution_Asset", "Execution_Metadata"];
pub const ASSOCIATION_TYPES: [&str; 3] = ["Dataset_Member", "Execution_Dataset", "Execution_Asset_Link"];
