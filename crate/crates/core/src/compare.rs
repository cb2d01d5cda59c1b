//! Output comparison for differential runs.

use core::fmt;

use alloc::string::String;

use crate::tensor::{approx_equal, ComparisonStats, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TolerancePolicy {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        TolerancePolicy { rtol: 1e-4, atol: 1e-6 }
    }
}

impl TolerancePolicy {
    pub fn exact() -> Self {
        TolerancePolicy { rtol: 0.0, atol: 0.0 }
    }

    pub fn is_valid(&self) -> bool {
        self.rtol >= 0.0 && self.atol >= 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Status {
    Pass,
    Fail,
    BackendError,
    Skipped,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::BackendError => "backend_error",
            Status::Skipped => "skipped",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub status: Status,
    pub stats: ComparisonStats,
    /// Set only for failures that went through localization.
    pub failing_layer: Option<String>,
    pub detail: Option<String>,
}

impl Verdict {
    pub fn with_status(status: Status, detail: Option<String>) -> Self {
        Verdict { status, stats: ComparisonStats::default(), failing_layer: None, detail }
    }
}

/// Pass iff the shapes agree and every element is within
/// `atol + rtol * |reference|` of the reference.
pub fn compare_outputs(reference: &Tensor, observed: &Tensor, pol: &TolerancePolicy) -> Verdict {
    let stats = approx_equal(observed, reference, pol.rtol, pol.atol);
    let status = if stats.passed() { Status::Pass } else { Status::Fail };
    Verdict { status, stats, failing_layer: None, detail: None }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn verdicts() {
        let a = Tensor::new(vec![1, 2, 1], vec![46., 43.]).unwrap();
        let pol = TolerancePolicy::default();
        assert_eq!(compare_outputs(&a, &a, &pol).status, Status::Pass);
        let one = Tensor::vector(vec![1.0]);
        let off = Tensor::vector(vec![1.01]);
        assert_eq!(compare_outputs(&one, &off, &pol).status, Status::Fail);
        let r = Tensor::new(vec![1, 2], vec![1., 2.]).unwrap();
        let c = Tensor::new(vec![2, 1], vec![1., 2.]).unwrap();
        let v = compare_outputs(&r, &c, &pol);
        assert_eq!(v.status, Status::Fail);
        assert!(!v.stats.shape_equal);
    }
}
