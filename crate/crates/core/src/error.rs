use thiserror::Error;

/// A domain invariant that failed, naming the offending field.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid `{field}`: {reason}")]
pub struct InvalidField {
    pub field: String,
    pub reason: String,
}

impl InvalidField {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub(crate) fn check(cond: bool, field: &str, reason: impl FnOnce() -> String) -> Result<(), InvalidField> {
    if cond {
        Ok(())
    } else {
        Err(InvalidField::new(field, reason()))
    }
}

pub(crate) fn check_prob(v: f64, field: &str) -> Result<(), InvalidField> {
    check((0.0..=1.0).contains(&v), field, || format!("{v} is not a probability in [0, 1]"))
}
