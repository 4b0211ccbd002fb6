use crate::heuristics::Violation;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid warehouse: {0}")]
    InvalidWarehouse(String),
    #[error("location outside warehouse: {0}")]
    InvalidLocation(String),
    #[error("infeasible instance shape: {0}")]
    InfeasibleShape(String),
    #[error("unknown order id {0}")]
    UnknownOrder(u32),
    #[error("unknown item id {0}")]
    UnknownItem(u32),
    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("unsupported schema version {found} (this build reads version {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("exact TSP supports at most {cap} locations, got {got}")]
    TooManyLocations { cap: usize, got: usize },
    #[error("infeasible assignment: {}", format_violations(.0))]
    Infeasible(Vec<Violation>),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Autodiff(#[from] batchforge_autodiff::AdError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn format_violations(vs: &[Violation]) -> String {
    vs.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
