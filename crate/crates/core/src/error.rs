use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("node {node} out of range for p={p}")]
    NodeOutOfRange { node: usize, p: usize },
    #[error("self-pair ({0},{0}) is not a valid variable pair")]
    SelfLoop(usize),
    #[error("pair index {k} out of range for {count} pairs")]
    PairOutOfRange { k: usize, count: usize },
    #[error("train and test source sets overlap at node {node}")]
    SplitOverlap { node: usize },
    #[error("column {node} is degenerate (zero variance)")]
    DegenerateColumn { node: usize },
    #[error("function arity mismatch: expected {expected} parent values, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("signal-to-noise ratio must be finite and positive, got {0}")]
    BadSnr(f64),
    #[error("lasso coordinate descent did not converge after {sweeps} sweeps (max delta {max_delta:.3e})")]
    LassoDiverged { sweeps: usize, max_delta: f64 },
    #[error("training knowledge contains a single class after balancing")]
    SingleClassKnowledge,
    #[error("evaluation labels contain a single class")]
    SingleClassLabels,
    #[error("embedding perturbation requires the dual-tower mode")]
    PerturbationNeedsDualMode,
    #[error("schema: {0}")]
    Schema(String),
    #[error("engine: {0}")]
    Engine(#[from] d2cl_nn::NnError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
