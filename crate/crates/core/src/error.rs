use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("unknown facet `{0}`")]
    UnknownFacet(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("no template for facet `{0}`")]
    NoFacetTemplate(String),
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("phase ordering violated: {0}")]
    PhaseOrdering(String),
    #[error("ablation requires phase-1 model")]
    AblationRequiresPhase1,
    #[error("toy backend is frozen")]
    FrozenBackend,
    #[error("backend: {0}")]
    Backend(String),
    #[error("relation {relation}: {source}")]
    ForRelation {
        relation: String,
        #[source]
        source: Box<Error>,
    },
    #[error("answer {index}: {source}")]
    ForAnswer {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn at_line(line: usize, source: Error) -> Self {
        Error::AtLine {
            line,
            source: Box::new(source),
        }
    }

    pub fn in_file(path: &std::path::Path, source: Error) -> Self {
        Error::File {
            path: path.display().to_string(),
            source: Box::new(source),
        }
    }

    /// Innermost error, skipping location wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtLine { source, .. }
            | Error::ForRelation { source, .. }
            | Error::ForAnswer { source, .. }
            | Error::File { source, .. } => source.root(),
            other => other,
        }
    }
}
