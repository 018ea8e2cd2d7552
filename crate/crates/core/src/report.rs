//! Named check results with machine-readable serialization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("duplicate check name `{0}`")]
    DuplicateCheck(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Outcome of one named check.
///
/// `advisory` checks are reported but never gate an exit status; `measured`
/// is the worst observed quantity for the check and `tolerance` the bound
/// it was compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub advisory: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub context: String,
}

impl CheckResult {
    pub fn new(name: &str, pass: bool, measured: f64, tolerance: f64, context: String) -> Self {
        CheckResult {
            name: name.to_string(),
            pass,
            advisory: false,
            measured,
            tolerance,
            context,
        }
    }

    pub fn advisory(mut self) -> Self {
        self.advisory = true;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn new() -> Self {
        VerificationReport { checks: Vec::new() }
    }

    /// Adds a check; each name may appear exactly once.
    pub fn push(&mut self, check: CheckResult) -> Result<(), ReportError> {
        if self.checks.iter().any(|c| c.name == check.name) {
            return Err(ReportError::DuplicateCheck(check.name));
        }
        self.checks.push(check);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// True iff every non-advisory check passed.
    pub fn all_required_pass(&self) -> bool {
        self.checks.iter().all(|c| c.advisory || c.pass)
    }

    pub fn failed_names(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.advisory && !c.pass)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn to_json(&self) -> Result<String, ReportError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut report = VerificationReport::new();
        report
            .push(CheckResult::new("a", true, 0.0, 1.0, String::new()))
            .unwrap();
        assert!(report
            .push(CheckResult::new("a", false, 0.0, 1.0, String::new()))
            .is_err());
    }

    #[test]
    fn advisory_does_not_gate() {
        let mut report = VerificationReport::new();
        report
            .push(CheckResult::new("hard", true, 0.0, 1.0, String::new()))
            .unwrap();
        report
            .push(CheckResult::new("soft", false, 9.0, 1.0, String::new()).advisory())
            .unwrap();
        assert!(report.all_required_pass());
        report
            .push(CheckResult::new("hard2", false, 9.0, 1.0, String::new()))
            .unwrap();
        assert!(!report.all_required_pass());
        assert_eq!(report.failed_names(), vec!["hard2"]);
    }

    #[test]
    fn json_roundtrip_is_exact() {
        let mut report = VerificationReport::new();
        report
            .push(CheckResult::new(
                "residual",
                true,
                1.234e-9,
                1e-7,
                "grid=301x64 seed=42".to_string(),
            ))
            .unwrap();
        report
            .push(CheckResult::new("holder", false, 0.3333333333333333, 0.25, String::new()).advisory())
            .unwrap();
        let json = report.to_json().unwrap();
        let back = VerificationReport::from_json(&json).unwrap();
        assert_eq!(report, back);
        // Serialization is deterministic.
        assert_eq!(json, back.to_json().unwrap());
    }
}
