//! Decimal formatting shared by the CSV writers.
//!
//! Floats are emitted with 17 significant digits so that parsing the text
//! back reproduces the original value bit for bit.

use crate::num::Real;
use crate::{Error, Result};

/// Formats a scalar with 17 significant digits.
pub(crate) fn fmt<T: Real>(x: T) -> String {
    format!("{:.16e}", x)
}

/// Parses one scalar field; `line` is the 1-based CSV line for diagnostics.
pub(crate) fn parse<T: Real>(field: &str, line: usize) -> Result<T> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Csv {
        line,
        reason: format!("not a number: {field:?}"),
    })?;
    Ok(T::of(v))
}

/// Joins already-formatted fields into one CSV record.
pub(crate) fn record(fields: &[String]) -> String {
    let mut out = fields.join(",");
    out.push('\n');
    out
}
