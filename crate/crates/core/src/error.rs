use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time {t} is outside the horizon [0, {horizon}]")]
    Domain { t: f64, horizon: f64 },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("non-finite value at t = {t} ({what})")]
    NonFinite { t: f64, what: String },

    /// The norm guard of the integrator tripped. `bound` carries the
    /// sufficient-horizon estimate when one is available for the system.
    #[error("{system} diverged at t = {t} (state norm {norm:.3e}){}", advice(.bound))]
    Divergence {
        system: String,
        t: f64,
        norm: f64,
        bound: Option<f64>,
    },

    #[error("invalid model: {}", .0.join("; "))]
    InvalidModel(Vec<String>),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("chi-square window of {window} steps does not fit in {n_steps} steps")]
    Window { window: usize, n_steps: usize },

    #[error("path {path}: {source}")]
    Path {
        path: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn advice(bound: &Option<f64>) -> String {
    match bound {
        Some(b) if b.is_finite() => format!(
            "; sufficient horizon bound is {b:.4}, reduce lambda or shorten the horizon"
        ),
        Some(_) => String::new(),
        None => "; reduce lambda or shorten the horizon".to_string(),
    }
}

impl Error {
    /// Attach the existence-bound estimate to a divergence error.
    pub fn with_bound(self, value: f64) -> Self {
        match self {
            Error::Divergence {
                system, t, norm, ..
            } => Error::Divergence {
                system,
                t,
                norm,
                bound: Some(value),
            },
            other => other,
        }
    }

    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NonFinite { .. } | Error::Divergence { .. } | Error::Singular(_) => true,
            Error::Path { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Format(format!("{other:?}")),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
