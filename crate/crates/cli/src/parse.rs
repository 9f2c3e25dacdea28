//! Parsers for the compact value syntaxes accepted on the command line.

use gpdistill::gpr_distill::linspace;

use crate::error::{CliError, CliResult};

fn number(s: &str, what: &str) -> CliResult<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("{what}: `{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(CliError::Usage(format!("{what}: `{s}` is not finite")));
    }
    Ok(v)
}

fn count(s: &str, what: &str) -> CliResult<usize> {
    s.trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("{what}: `{s}` is not a non-negative integer")))
}

/// A comma separated list of numbers.
pub fn parse_list(s: &str) -> CliResult<Vec<f64>> {
    let values = s
        .split(',')
        .map(|p| number(p, "list"))
        .collect::<CliResult<Vec<f64>>>()?;
    if values.is_empty() {
        return Err(CliError::Usage("empty list".into()));
    }
    Ok(values)
}

/// A comma separated list of non-negative integers.
pub fn parse_counts(s: &str) -> CliResult<Vec<usize>> {
    s.split(',').map(|p| count(p, "list")).collect()
}

/// A noise schedule: either `g1,g2,...` or `linspace:first:last:n`.
pub fn parse_schedule(s: &str) -> CliResult<Vec<f64>> {
    let gammas = match s.strip_prefix("linspace:") {
        Some(rest) => {
            let parts: Vec<&str> = rest.split(':').collect();
            let [a, b, n] = parts[..] else {
                return Err(CliError::Usage(format!(
                    "schedule `{s}`: expected linspace:first:last:n"
                )));
            };
            let n = count(n, "schedule length")?;
            if n == 0 {
                return Err(CliError::Usage("schedule length must be at least 1".into()));
            }
            linspace(number(a, "schedule")?, number(b, "schedule")?, n)
        }
        None => parse_list(s)?,
    };
    if let Some(g) = gammas.iter().find(|g| **g <= 0.0) {
        return Err(CliError::Usage(format!("noise parameters must be positive, got {g}")));
    }
    Ok(gammas)
}

/// A closed interval `low:high` with `0 < low <= high`.
pub fn parse_range(s: &str) -> CliResult<(f64, f64)> {
    let Some((a, b)) = s.split_once(':') else {
        return Err(CliError::Usage(format!("range `{s}`: expected low:high")));
    };
    let (a, b) = (number(a, "range")?, number(b, "range")?);
    if !(a > 0.0 && b >= a) {
        return Err(CliError::Usage(format!("range `{s}`: need 0 < low <= high")));
    }
    Ok((a, b))
}

/// An input grid `low:high:n` for one-dimensional prediction.
pub fn parse_grid(s: &str) -> CliResult<(f64, f64, usize)> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, n] = parts[..] else {
        return Err(CliError::Usage(format!("grid `{s}`: expected low:high:n")));
    };
    let (a, b, n) = (number(a, "grid")?, number(b, "grid")?, count(n, "grid")?);
    if n == 0 || b < a {
        return Err(CliError::Usage(format!("grid `{s}`: need low <= high and n >= 1")));
    }
    Ok((a, b, n))
}
