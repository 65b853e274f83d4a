//! Datasets, workflows and executions: the ML provenance layer on top of a
//! lake.

mod config;
mod dataset;
mod execution;
mod partition;
mod upload;

pub use config::{canonical_json, ExecutionConfig, WorkflowSpec};
pub use dataset::{
    create_dataset, dataset, dataset_checksum, export_bag, find_dataset, update_members, Dataset, DATASET_NAMESPACE,
};
pub use execution::{
    execution_init, execution_provenance, execution_scope, execution_upload, link_asset, recorded_config,
    register_workflow, restore_inputs, DatasetUse, ExecContext, ExecutionHandle, ExecutionProvenance,
    ExecutionSummary, InputAsset, InputDataset, InputManifest, OutputKind, UploadEntry, UploadReport, ASSETS_DIR,
    CONFIG_FILE, CONFIG_TYPE, METADATA_DIR, RUNTIME_FILE, RUNTIME_TYPE,
};
pub use partition::{
    apportion, member_labels, partition_dataset, plan_partition, PartitionOutcome, PartitionPlan, PartitionSpec,
    StratumReport,
};
pub use upload::{
    parse_cell, read_manifest, upload_manifest, ManifestReport, ManifestRow, RowOutcome, RowStatus, MANIFEST_COLUMNS,
};
