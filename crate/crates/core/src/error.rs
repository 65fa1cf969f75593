use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("newick syntax error at byte {position}: {message}")]
    NewickSyntax { position: usize, message: String },
    #[error("branch above node '{0}' has no length")]
    MissingBranchLength(String),
    #[error("duplicate taxon label '{0}'")]
    DuplicateTaxon(String),
    #[error("internal node has {0} children; only bifurcating trees are supported")]
    NotBifurcating(usize),
    #[error("tip with empty taxon label")]
    EmptyTaxonLabel,
    #[error("invalid branch length {0}")]
    InvalidBranchLength(String),
    #[error("tree has no tip at positive depth")]
    ZeroDepth,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("column '{0}' has zero standard deviation")]
    ZeroVariance(String),
    #[error("column '{0}' needs at least two observed values")]
    TooFewObservations(String),
    #[error("invalid category code {code} in column '{column}' (expected 1..={levels})")]
    InvalidCategory { column: String, code: String, levels: usize },
    #[error("taxa differ between tree and traits; only in tree: [{}]; only in traits: [{}]", only_in_tree.join(", "), only_in_traits.join(", "))]
    TaxonMismatch {
        only_in_tree: Vec<String>,
        only_in_traits: Vec<String>,
    },
    #[error("unknown column type '{0}' (expected continuous, binary or ordinal(m))")]
    UnknownColumnType(String),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical fault: {0}")]
    Numerical(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NotPositiveDefinite(_) | Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
