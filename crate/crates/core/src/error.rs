use thiserror::Error;

#[derive(Debug, Error)]
pub enum LobError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("x = {x} lies outside the grid domain (-{half_width}, {half_width}]")]
    OutOfRange { x: f64, half_width: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("moment-infeasible placement at cell {cell}: second moment {second} < squared mean {mean_sq}")]
    MomentInfeasible {
        cell: usize,
        second: f64,
        mean_sq: f64,
    },

    #[error("placement at cell {cell}: {reason}")]
    PlacementBound { cell: usize, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time {t} outside solution range [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("covariance not positive semidefinite at t = {t}: {detail}")]
    NotPsd { t: f64, detail: String },

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("rank-deficient design matrix for model {0}")]
    RankDeficient(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("too many rejected rows: {rejected} of {total}")]
    TooManyRejects { rejected: usize, total: usize },

    #[error("path {index}: {source}")]
    Path {
        index: usize,
        #[source]
        source: Box<LobError>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LobError {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            LobError::InvalidGrid(_) => "invalid_grid",
            LobError::OutOfRange { .. } => "out_of_range",
            LobError::GridMismatch(_) => "grid_mismatch",
            LobError::MomentInfeasible { .. } => "moment_infeasible",
            LobError::PlacementBound { .. } => "placement_bound",
            LobError::InvalidParameter(_) => "invalid_parameter",
            LobError::TimeOutOfRange { .. } => "time_out_of_range",
            LobError::MeshMismatch(_) => "mesh_mismatch",
            LobError::NotPsd { .. } => "not_psd",
            LobError::DegenerateVariance(_) => "degenerate_variance",
            LobError::RankDeficient(_) => "rank_deficient",
            LobError::InsufficientData(_) => "insufficient_data",
            LobError::TooManyRejects { .. } => "too_many_rejects",
            LobError::Path { .. } => "path",
            LobError::Config(_) => "config",
            LobError::Io(_) => "io",
            LobError::Csv(_) => "csv",
            LobError::Json(_) => "json",
        }
    }

    /// Errors caused by the inputs rather than by the computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            LobError::Config(_)
                | LobError::InvalidParameter(_)
                | LobError::InvalidGrid(_)
                | LobError::TooManyRejects { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, LobError>;
