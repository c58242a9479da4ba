use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Caller supplied an argument outside the operation's domain.
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// Malformed input data. `line` is 1-based when known.
    #[error("{}format error{}: {msg}", source_prefix(.path), line_suffix(.line))]
    Format {
        path: Option<PathBuf>,
        line: Option<usize>,
        msg: String,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A NaN or infinity surfaced where finite values are required.
    #[error("numerical failure: {0}")]
    NonFinite(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn source_prefix(path: &Option<PathBuf>) -> String {
    match path {
        Some(p) => format!("{}: ", p.display()),
        None => String::new(),
    }
}

fn line_suffix(line: &Option<usize>) -> String {
    match line {
        Some(l) => format!(" at line {l}"),
        None => String::new(),
    }
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format {
            path: None,
            line: None,
            msg: msg.into(),
        }
    }

    pub fn format_at(line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            path: None,
            line: Some(line),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches a file path to format errors that lack one.
    pub fn in_file(self, file: impl Into<PathBuf>) -> Self {
        match self {
            Error::Format {
                path: None,
                line,
                msg,
            } => Error::Format {
                path: Some(file.into()),
                line,
                msg,
            },
            other => other,
        }
    }
}
