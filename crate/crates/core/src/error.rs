use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate field: u_min == u_max ({0}), normalization undefined")]
    DegenerateField(f64),

    #[error("sensor placement collides after rounding ({n_sensors} sensors on {n_cells} cells)")]
    SensorCollision { n_cells: usize, n_sensors: usize },

    #[error("density {rho} outside [0, {rho_jam}]")]
    DensityOutOfRange { rho: f64, rho_jam: f64 },

    #[error("shock speed undefined for equal states ({0})")]
    EqualStates(f64),

    #[error("CFL condition violated: v_f*dt/dx = {courant:.4} > {limit:.4}")]
    Cfl { courant: f64, limit: f64 },

    #[error("empty set: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("architecture mismatch: {0}")]
    Architecture(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("unbalanced seed sets: {0}")]
    Unbalanced(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
