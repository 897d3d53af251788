#![allow(dead_code)]

pub mod gradients;
pub mod kde_oracles;
pub mod metric_oracles;
pub mod normalization;

/// Outcome of one named comparison.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: String) -> Self {
        Check {
            name: name.into(),
            pass,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Panics listing every failed check.
pub fn assert_all(checks: &[Check]) {
    for c in checks {
        println!("{}", c.line());
    }
    let failed: Vec<String> = checks.iter().filter(|c| !c.pass).map(Check::line).collect();
    assert!(failed.is_empty(), "failed checks:\n{}", failed.join("\n"));
}
