use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value violates its documented bounds.
    #[error("invalid value for `{field}`: {reason}")]
    Config { field: &'static str, reason: String },

    /// A quantity that must be finite was not.
    #[error("non-finite {quantity}{}", at(*.iteration))]
    NonFinite {
        quantity: &'static str,
        iteration: Option<usize>,
    },

    /// The ELBO dropped by more than rounding slack between two recorded
    /// coordinate-ascent iterates. This always indicates a broken update.
    #[error("ELBO decreased at iteration {iteration}: {previous} -> {current}")]
    ElboDecrease {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    /// A matrix that must be symmetric positive definite failed to factor.
    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    /// A derived parameter left its valid range (e.g. a Gamma rate went
    /// nonpositive).
    #[error("invalid derived parameter {quantity} = {value}{}", at(*.iteration))]
    InvalidParameter {
        quantity: &'static str,
        value: f64,
        iteration: Option<usize>,
    },
}

fn at(iteration: Option<usize>) -> String {
    match iteration {
        Some(it) => alloc::format!(" at iteration {it}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Config {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn non_finite(quantity: &'static str) -> Self {
        Error::NonFinite {
            quantity,
            iteration: None,
        }
    }

    /// Attaches an iteration index to numeric errors that do not carry one yet.
    pub fn at_iteration(self, it: usize) -> Self {
        match self {
            Error::NonFinite {
                quantity,
                iteration: None,
            } => Error::NonFinite {
                quantity,
                iteration: Some(it),
            },
            Error::InvalidParameter {
                quantity,
                value,
                iteration: None,
            } => Error::InvalidParameter {
                quantity,
                value,
                iteration: Some(it),
            },
            other => other,
        }
    }

    /// True for errors raised by arithmetic going wrong during a fit, as
    /// opposed to bad inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::ElboDecrease { .. }
                | Error::NotPositiveDefinite
                | Error::InvalidParameter { .. }
        )
    }
}

pub(crate) fn ensure_finite(value: f64, quantity: &'static str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::non_finite(quantity))
    }
}
