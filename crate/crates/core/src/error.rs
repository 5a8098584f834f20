use thiserror::Error;

/// Errors shared across the graph, tree, influence, detector and attack layers.
#[derive(Debug, Error)]
pub enum SealError {
    #[error("dangling endpoint {0}")]
    DanglingEndpoint(String),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(String, String),
    #[error("unknown vertex {0}")]
    UnknownVertex(String),
    #[error("unknown post {0}")]
    UnknownPost(String),
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("undefined cosine: zero feature vector")]
    ZeroVector,
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("weight {0} outside [0, 1]")]
    WeightOutOfRange(f64),
    #[error("label {0} is not binary")]
    BadLabel(i64),
    #[error("empty graph")]
    EmptyGraph,
    #[error("probability {name}={value} outside [0, 1]")]
    BadProbability { name: &'static str, value: f64 },
    #[error("entropy is undefined for the root node")]
    RootEntropy,
    #[error("tree height K must be at least 2, got {0}")]
    BadHeight(usize),
    #[error("adjusting parameter c must be positive, got {0}")]
    BadAdjustingParameter(f64),
    #[error("theorem regime violated: c={0} outside (0, 2/e]")]
    TheoremRegime(f64),
    #[error("theorem parameter b must be >= 2, got {0}")]
    BadTheoremBound(f64),
    #[error("infeasible budget: slice of {slice} users cannot supply {budget}")]
    InfeasibleBudget { slice: usize, budget: usize },
    #[error("budgets {0} exceed user count {1}")]
    BudgetExceedsUsers(usize, usize),
    #[error("degenerate labels: training needs both classes, {fake} fake / {real} real")]
    DegenerateLabels { fake: usize, real: usize },
    #[error("empty post subset")]
    EmptyPostSubset,
    #[error("black-box query on an unfrozen model")]
    UnfrozenModel,
    #[error("manipulated edge ({0}, {1}) already present in the graph")]
    ManipulatedEdgeExists(String, String),
    #[error("agent exhausted: no controlled account has a feasible post")]
    AgentExhausted,
    #[error("extraction level k={k} must be below tree height K={height}")]
    BadExtractionLevel { k: usize, height: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("phase {phase} failed (seed {seed}): {source}")]
    Phase {
        phase: &'static str,
        seed: u64,
        #[source]
        source: Box<SealError>,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SealError>;

impl SealError {
    /// Wraps an error with the pipeline phase and seed it occurred in.
    pub fn in_phase(self, phase: &'static str, seed: u64) -> SealError {
        SealError::Phase {
            phase,
            seed,
            source: Box::new(self),
        }
    }
}
