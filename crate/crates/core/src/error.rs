use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("jet of order {got} supplied where order {need} is required")]
    JetOrder { need: usize, got: usize },

    #[error("derivative evaluation failed: {0}")]
    Derivative(String),

    #[error("constraint row {row} is not affine in its highest derivative")]
    NotAffine { row: usize },

    #[error("model domain violated: {guard}")]
    Domain { guard: String },

    #[error("state violates velocity-level constraints: {}", describe_rows(.rows))]
    InconsistentState { rows: Vec<(usize, f64)> },

    #[error("overdetermined system has no solution here: residual {residual:.3e} exceeds {tolerance:.3e}")]
    InconsistentDynamics { residual: f64, tolerance: f64 },

    #[error("accelerations are not unique: nullspace of dimension {nullspace_dim}")]
    Ambiguous { nullspace_dim: usize },

    #[error("projection onto the constraint set did not converge (defect {defect:.3e})")]
    Projection { defect: f64 },

    #[error("step failed at t = {time}: {source}")]
    Step { time: f64, source: Box<Error> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

fn describe_rows(rows: &[(usize, f64)]) -> String {
    rows.iter()
        .map(|(i, v)| format!("row {i} residual {v:.3e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
