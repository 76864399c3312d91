use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SacError {
    #[error("modifiable {modifiable} written twice with different values in one epoch")]
    WriteOnce { modifiable: u64 },
    #[error("modifiable {modifiable} read before it was written")]
    UnwrittenRead { modifiable: u64 },
    #[error("node {node} has no free child slot")]
    SlotOccupied { node: u64 },
    #[error("{0}")]
    Contract(String),
    #[error("invalid input: {0}")]
    Input(String),
}

pub type Result<T, E = SacError> = std::result::Result<T, E>;
