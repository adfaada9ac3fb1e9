use thiserror::Error;

pub type Result<T> = std::result::Result<T, KamError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KamError {
    #[error("truncation degree mismatch: {left} vs {right}")]
    DegreeMismatch { left: usize, right: usize },
    #[error("empty crown: |omega| = {omega:e} is not below r^2 - beta = {limit:e}")]
    EmptyCrown { omega: f64, limit: f64 },
    #[error("invalid norm parameters: {0}")]
    InvalidNormParams(String),
    #[error("exponential overflow guard tripped: |a f(0)| = {0:e}")]
    ExpOverflow(f64),
    #[error("rotation parameter b = {0} outside [-1, 1]")]
    RotationRange(f64),
    #[error("near-identity inverse did not converge after {iters} iterations (last change {change:e})")]
    InverseNonConvergence { iters: usize, change: f64 },
    #[error("near-identity inverse rejected: norm {norm:e} not below {limit:e}")]
    InverseTooLarge { norm: f64, limit: f64 },
    #[error("series not invertible: constant term {0:e}")]
    NotInvertible(f64),
    #[error("branch cut proximity: {0}")]
    BranchCut(String),
    #[error("realness check failed for {what}: imaginary part {imag:e} exceeds {tol:e}")]
    NotReal { what: String, imag: f64, tol: f64 },
    #[error("small divisor at n = {n}: |e^(i n alpha) - 1| = {value:e} below {threshold:e}")]
    SmallDivisor { n: i64, value: f64, threshold: f64 },
    #[error("gamma = {0} is not in the hyperbolic range gamma > 1/2")]
    NotHyperbolic(f64),
    #[error("deck transformation: {0}")]
    Deck(String),
    #[error("singular linear part: {0}")]
    Singular(String),
    #[error("radius search underflow at r = {0:e}")]
    RadiusUnderflow(f64),
    #[error("crown escape: {0}")]
    CrownEscape(String),
    #[error("structural check failed: {0}")]
    Structural(String),
    #[error("parameter set is empty")]
    EmptyParameterSet,
    #[error("containment violated: {0}")]
    Containment(String),
    #[error("omega = {0} out of range: {1}")]
    OmegaOutOfRange(f64, String),
    #[error("duplicate omega {0}")]
    DuplicateOmega(f64),
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("io: {0}")]
    Io(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<KamError>,
    },
}

impl KamError {
    pub fn in_stage(self, stage: &'static str) -> Self {
        KamError::Stage { stage, source: Box::new(self) }
    }

    /// Innermost error after stripping stage annotations.
    pub fn root(&self) -> &KamError {
        match self {
            KamError::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}

impl From<std::io::Error> for KamError {
    fn from(e: std::io::Error) -> Self {
        KamError::Io(e.to_string())
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
