//! Parsing of raw model replies.

use thiserror::Error;

/// Allowed deviation of the parsed sum from 1 before renormalization.
pub const SUM_TOLERANCE: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("no numeric list found in reply")]
    NoList,
    #[error("expected a list of {expected} numbers, found {found}")]
    WrongLength { expected: usize, found: usize },
    #[error("negative probability {0}")]
    Negative(f64),
    #[error("probabilities sum to {0}, more than {SUM_TOLERANCE} away from 1")]
    BadSum(f64),
    #[error("no integer answer found in reply")]
    NoInteger,
    #[error("answer {answer} outside 1..={k}")]
    OutOfRange { answer: i64, k: usize },
}

fn numeric_lists(raw: &str) -> Vec<Vec<f64>> {
    let mut lists = Vec::new();
    let mut rest = raw;
    while let Some(open) = rest.find('[') {
        let after = &rest[open + 1..];
        let Some(close) = after.find(']') else { break };
        let inner = &after[..close];
        let parsed: Option<Vec<f64>> = inner
            .split(',')
            .map(|s| s.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        match parsed {
            Some(v) if !inner.trim().is_empty() => {
                lists.push(v);
                rest = &after[close + 1..];
            }
            _ => rest = after,
        }
    }
    lists
}

/// First numeric `[...]` list of length `k`, checked and renormalized.
/// Lists that already sum to 1 up to rounding are returned unchanged.
pub fn parse_distribution(raw: &str, k: usize) -> Result<Vec<f64>, ParseError> {
    let lists = numeric_lists(raw);
    let list = match lists.iter().find(|l| l.len() == k) {
        Some(l) => l.clone(),
        None => {
            return Err(match lists.first() {
                Some(l) => ParseError::WrongLength {
                    expected: k,
                    found: l.len(),
                },
                None => ParseError::NoList,
            })
        }
    };
    if let Some(&v) = list.iter().find(|&&v| v < 0.0) {
        return Err(ParseError::Negative(v));
    }
    let sum: f64 = list.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(ParseError::BadSum(sum));
    }
    if (sum - 1.0).abs() <= 4.0 * f64::EPSILON * k as f64 {
        return Ok(list);
    }
    Ok(list.into_iter().map(|v| v / sum).collect())
}

/// A single integer answer in `1..=k`, returned 0-based.
pub fn parse_mode(raw: &str, k: usize) -> Result<usize, ParseError> {
    let start = raw
        .find(|c: char| c.is_ascii_digit())
        .ok_or(ParseError::NoInteger)?;
    let end = raw[start..]
        .find(|c: char| !c.is_ascii_digit())
        .map_or(raw.len(), |e| start + e);
    let mut answer: i64 = raw[start..end].parse().map_err(|_| ParseError::NoInteger)?;
    if raw[..start].ends_with('-') {
        answer = -answer;
    }
    if answer < 1 || answer as usize > k {
        return Err(ParseError::OutOfRange { answer, k });
    }
    Ok(answer as usize - 1)
}
