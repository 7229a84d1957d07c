//! Trust management: the local repository of keys and certificates, merge of
//! incoming material, trust evaluation, and persistence.

mod evaluate;
mod persist;
mod repository;

use thiserror::Error;

pub use evaluate::{evaluate_graph, TrustAssessment};
pub use persist::{disk_usage, load, persist, read_header, verify_dir, FileVerdict, RepoHeader, HEADER_FILE};
pub use repository::{
    evaluate, merge, repo_size_bytes, ItemKind, MergeItem, MergeReport, RejectReason, Rejection, SubjectRecord,
    TrustRepository,
};

#[derive(Debug, Error)]
pub enum TrustError {
    #[error("corrupt repository: {0}")]
    CorruptRepository(String),
    #[error("repository I/O: {0}")]
    Io(#[from] std::io::Error),
}
