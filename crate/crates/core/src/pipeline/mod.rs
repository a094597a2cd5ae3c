//! Dataset construction: prompt creation, image generation, structured
//! extraction and abstraction into user prompt plus thinking text, written
//! as one canonical record per JSONL line.

mod clients;
mod dataset;
mod run;

pub use clients::{Abstraction, HttpPipelineClients, MockEntry, MockFaults, MockPipelineClients, PipelineClients};
pub use dataset::{validate_dataset, validate_dataset_text, DatasetReport, DuplicateId, LineViolation};
pub use run::{
    build_record, run_pipeline, BuildError, DomainCounts, Failure, PipelineConfig, PipelineError, PipelineReport,
    PipelineStage,
};
