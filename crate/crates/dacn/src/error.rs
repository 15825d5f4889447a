use thiserror::Error;

#[derive(Error, Debug)]
pub enum DacnError {
    #[error("simulation diverged (|T| > {limit} K) at t = {t} min for fault {fault} in mode {mode}")]
    SimulationDiverged {
        t: f64,
        limit: f64,
        fault: String,
        mode: String,
    },

    #[error("non-finite plant state at t = {t} min")]
    NonFiniteState { t: f64 },

    #[error("loss became NaN during {stage} (term: {term}, epoch {epoch})")]
    NanLoss {
        stage: String,
        term: String,
        epoch: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("malformed CSV at {path}:{line}: {msg}")]
    Csv {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("CSV header mismatch in {path}: expected {expected:?}, got {got:?}")]
    CsvHeader {
        path: String,
        expected: Vec<String>,
        got: Vec<String>,
    },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DacnError>;
