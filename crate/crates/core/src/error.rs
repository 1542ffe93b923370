use thiserror::Error;

/// Every failure the library reports.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabError {
    #[error("point ({x}, {y}) lies outside the declared domain")]
    Domain { x: f64, y: f64 },
    #[error("inverse element is not locally invertible: {0}")]
    Singular(String),
    #[error("orbit left the domain at step {index}")]
    Escape { index: usize },
    #[error("no sign change found in [{lo}, {hi}]")]
    Bracket { lo: f64, hi: f64 },
    #[error("root finder stalled with residual {residual:e}")]
    Tolerance { residual: f64 },
    #[error("division by zero: {0}")]
    Division(String),
    #[error("not renormalizable: {0}")]
    NotRenormalizable(String),
    #[error("sample too small: {found} admissible points, need {needed}")]
    Sample { found: usize, needed: usize },
    #[error("continuation lost the branch: {0}")]
    Continuation(String),
    #[error("horizontal straightening failed: {0}")]
    SingularStraighten(String),
    #[error("no critical point in the slice: {0}")]
    NoCriticalPoint(String),
    #[error("level {level}: thinness is below the {precision} arithmetic floor")]
    Depth { level: usize, precision: String },
    #[error("least-squares system ill-conditioned (condition number {cond:e})")]
    Fit { cond: f64 },
    #[error("normal-form residual {residual:e} exceeds tolerance at radius {radius}; halve the radius")]
    ShrinkHint { residual: f64, radius: f64 },
    #[error("degenerate cocycle: zero determinant")]
    Degenerate,
    #[error("Pliss hypothesis fails at prefix {prefix}")]
    Hypothesis { prefix: usize },
    #[error("no tangency: minimal angle {angle} rad")]
    NoTangency { angle: f64 },
    #[error("direction field does not converge: {0}")]
    Field(String),
    #[error("point outside the chart's valid radius")]
    ChartRange,
    #[error("piece membership ambiguous: {0}")]
    Membership(String),
    #[error("order oracle ambiguous: {0}")]
    OrderOracle(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

impl LabError {
    /// Stable machine-readable name.
    pub fn kind(&self) -> &'static str {
        match self {
            LabError::Domain { .. } => "DomainError",
            LabError::Singular(_) => "SingularError",
            LabError::Escape { .. } => "EscapeError",
            LabError::Bracket { .. } => "BracketError",
            LabError::Tolerance { .. } => "ToleranceError",
            LabError::Division(_) => "DivisionError",
            LabError::NotRenormalizable(_) => "NotRenormalizableError",
            LabError::Sample { .. } => "SampleError",
            LabError::Continuation(_) => "ContinuationError",
            LabError::SingularStraighten(_) => "SingularStraightenError",
            LabError::NoCriticalPoint(_) => "NoCriticalPointError",
            LabError::Depth { .. } => "DepthError",
            LabError::Fit { .. } => "FitError",
            LabError::ShrinkHint { .. } => "ShrinkHint",
            LabError::Degenerate => "DegenerateError",
            LabError::Hypothesis { .. } => "HypothesisError",
            LabError::NoTangency { .. } => "NoTangencyError",
            LabError::Field(_) => "FieldError",
            LabError::ChartRange => "ChartRangeError",
            LabError::Membership(_) => "MembershipError",
            LabError::OrderOracle(_) => "OrderOracleError",
            LabError::Config(_) => "ConfigError",
            LabError::Io(_) => "IOError",
        }
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => 2,
            LabError::Io(_) => 3,
            _ => 4,
        }
    }
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

impl From<csv::Error> for LabError {
    fn from(e: csv::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for LabError {
    fn from(e: serde_json::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
