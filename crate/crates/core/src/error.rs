use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("range error: j = {j} exceeds m = {m}")]
    Range { j: usize, m: usize },

    #[error("series diverges: |z| = {abs_z} >= 1 and the series does not terminate")]
    Divergence { abs_z: f64 },

    #[error("pole: denominator factor vanishes at index {index}")]
    Pole { index: usize },

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("capacity exceeded: {what} needs {needed}, cap is {cap}")]
    Capacity {
        what: &'static str,
        needed: u128,
        cap: u128,
    },

    #[error("contour infeasible: {0}")]
    ContourInfeasible(String),

    #[error("no convergence after {doublings} node doublings (last change {last_change:e})")]
    Convergence { doublings: usize, last_change: f64 },

    #[error("certified tail bound {bound:e} exceeds allowance {allowed:e}")]
    TailBound { bound: f64, allowed: f64 },

    #[error("point {0} is within the guard distance of a pole")]
    PoleProximity(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("series truncation: last term {last_term:e} exceeds tolerance {tol:e}")]
    Truncation { last_term: f64, tol: f64 },

    #[error("singular or ill-conditioned linear system")]
    IllConditioned,
}
