//! Error type shared by every module in the crate.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A full-register state of `q` spins would exceed the amplitude budget.
    #[error("system of {q} spins exceeds the full-space capacity of {q_max} spins")]
    Capacity { q: usize, q_max: usize },

    /// The pairing enumeration grows factorially; callers are pointed at the
    /// closed-form constructor instead.
    #[error(
        "permutation sum over {n} bottom spins exceeds the pairing budget of {max}; \
         use the closed-form constructor for larger rows"
    )]
    PairingBudget { n: usize, max: usize },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("cannot normalize a state with zero norm")]
    ZeroNorm,

    /// The state has weight outside the span of per-row symmetric states.
    #[error("state lies outside the row-symmetric sector (residual {residual:.3e})")]
    NotInSector { residual: f64 },

    /// Fast-path Schmidt analysis only applies to states of definite total
    /// magnetization; anything else needs a genuine SVD.
    #[error(
        "state has support on {count} magnetization diagonals; the anti-diagonal \
         fast path needs exactly one, run a full SVD for general states"
    )]
    MultiDiagonal { count: usize },

    #[error("photon cutoff {n_max} cannot hold the {required} excitations this run can reach")]
    PhotonCutoff { n_max: usize, required: usize },

    /// The integrator saw the squared norm grow, which the exact no-jump flow
    /// forbids; the step size is too large.
    #[error("squared norm grew by {growth:.3e} in one step; reduce dt")]
    Unstable { growth: f64 },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by a size guard rather than bad input.
    pub fn is_capacity(&self) -> bool {
        matches!(self, Error::Capacity { .. } | Error::PairingBudget { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
