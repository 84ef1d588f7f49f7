//! Acceptance bookkeeping: one verdict line per criterion.
//!
//! The checks themselves live in `tests/acceptance.rs`; run them with
//! `cargo test -p shadowheight-validation --test acceptance`.

use std::fmt;
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// Failed, but the criterion is advisory and does not fail the run.
    SoftFail,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::SoftFail => "FAIL (soft, flagged)",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub verdict: Verdict,
    pub detail: String,
}

impl Outcome {
    pub fn hard(ok: bool, detail: impl Into<String>) -> Self {
        Self {
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            detail: detail.into(),
        }
    }

    pub fn soft(ok: bool, detail: impl Into<String>) -> Self {
        Self {
            verdict: if ok { Verdict::Pass } else { Verdict::SoftFail },
            detail: detail.into(),
        }
    }

    pub fn error(e: impl fmt::Display) -> Self {
        Self::hard(false, format!("error: {e}"))
    }
}

/// `criterion 7 PASS synthetic end-to-end [tolerance] detail (12.3 s)`.
pub fn line(id: u32, title: &str, tolerance: &str, outcome: &Outcome, elapsed: Duration) -> String {
    format!(
        "criterion {id:>2} {} {title} [{tolerance}] {} ({:.1} s)",
        outcome.verdict,
        outcome.detail,
        elapsed.as_secs_f64()
    )
}

/// Criterion ids selected by a comma-separated list such as `1,3,7`; everything when unset.
pub fn selected(filter: Option<&str>) -> Vec<u32> {
    let all: Vec<u32> = (1..=11).collect();
    match filter.map(str::trim).filter(|s| !s.is_empty()) {
        None => all,
        Some(s) => s
            .split(',')
            .filter_map(|t| t.trim().parse().ok())
            .filter(|id| all.contains(id))
            .collect(),
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filters() {
        assert_eq!(selected(None).len(), 11);
        assert_eq!(selected(Some("3, 7,x,12")), vec![3, 7]);
        assert_eq!(selected(Some(" ")).len(), 11);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }

    #[test]
    fn soft_failures_are_labelled() {
        let o = Outcome::soft(false, "x");
        assert!(line(8, "t", "tol", &o, Duration::from_secs(1)).contains("FAIL (soft, flagged)"));
    }
}
