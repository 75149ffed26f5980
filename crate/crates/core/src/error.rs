use alloc::string::String;

/// Errors produced by the simulation core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A caller broke an operation's precondition (lengths, ranges, indices).
    #[error("contract violation: {0}")]
    Contract(String),
    /// An input was empty where at least one element is required.
    #[error("empty input: {0}")]
    Empty(&'static str),
    /// A computation produced a non-finite value.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// Local training diverged.
    #[error("local training diverged at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    /// Configuration values are out of their valid range.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// The requested allocation cannot be satisfied.
    #[error("infeasible allocation: {0}")]
    Infeasible(String),
    /// A module error annotated with the round and client it happened in.
    #[error("round {round}{}: {source}", client.map(|c| alloc::format!(", client {c}")).unwrap_or_default())]
    InRound {
        round: usize,
        client: Option<usize>,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Attaches round (and optionally client) context.
    pub fn in_round(self, round: usize, client: Option<usize>) -> Self {
        Error::InRound {
            round,
            client,
            source: alloc::boxed::Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
