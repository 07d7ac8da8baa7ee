use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("line {line}: malformed JSON: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("{}invalid field `{field}`: {message}", location(*.line, .id.as_deref()))]
    Validation {
        line: Option<usize>,
        id: Option<String>,
        field: &'static str,
        message: String,
    },

    #[error("unsupported trace format: {0}")]
    UnsupportedFormat(String),

    #[error("layer {layer} out of bounds for a model with {num_layers} layers")]
    LayerBounds { layer: usize, num_layers: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration `{field}`: {message}")]
    Config { field: &'static str, message: String },

    #[error("degenerate oracle: all quality values are equal, PRR is undefined")]
    DegenerateOracle,

    #[error("ROC-AUC undefined: only one class present ({positives} positives, {negatives} negatives)")]
    UndefinedAuc { positives: usize, negatives: usize },
}

fn location(line: Option<usize>, id: Option<&str>) -> String {
    match (line, id) {
        (Some(l), Some(id)) => format!("line {l} (id {id}): "),
        (Some(l), None) => format!("line {l}: "),
        (None, Some(id)) => format!("trace {id}: "),
        (None, None) => String::new(),
    }
}

impl Error {
    pub(crate) fn validation(field: &'static str, message: impl Into<String>) -> Self {
        Error::Validation {
            line: None,
            id: None,
            field,
            message: message.into(),
        }
    }

    /// The validated field name, if this is a validation error.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            Error::Validation { field, .. } => Some(field),
            _ => None,
        }
    }

    /// Source line number for errors raised while reading a trace file.
    pub fn line(&self) -> Option<usize> {
        match self {
            Error::Json { line, .. } => Some(*line),
            Error::Validation { line, .. } => *line,
            _ => None,
        }
    }
}
