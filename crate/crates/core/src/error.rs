use crate::index::IndexError;
use crate::material::MaterialError;
use crate::rules::RulesError;
use crate::tablebase::TableError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Rules(#[from] RulesError),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("{0} has pawns on both sides; en-passant positions are not modeled")]
    TwoSidedPawns(String),
    #[error("{signature} has {pieces} pieces, above the cap of {cap}")]
    PieceCap { signature: String, pieces: u32, cap: u32 },
    #[error("generation exceeded {0} passes")]
    TooManyPasses(u32),
    #[error("expected a table for {expected}, got {found}")]
    WrongSignature { expected: String, found: String },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("verification of {signature} failed with {total} violations:\n{details}")]
    VerificationFailed {
        signature: String,
        total: u64,
        details: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad manifest {path}: {source}")]
    Manifest {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("thread pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
