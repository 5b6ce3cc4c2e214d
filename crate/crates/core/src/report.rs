//! Check records shared by every verification routine.

use serde::{Deserialize, Serialize};

use crate::mc::MCEstimate;

/// How a check's pass flag is derived from its recorded numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ToleranceRule {
    /// `|lhs_mean - rhs| <= k * lhs_se`
    WithinStdErrors { k: f64 },
    /// `|lhs_mean - rhs| <= k * lhs_se + slack`
    WithinStdErrorsPlusBias { k: f64, slack: f64 },
    /// `|lhs_mean - rhs| <= k * sqrt(lhs_se^2 + rhs_se^2)`
    WithinCombinedStdErrors { k: f64 },
    /// `lhs_mean <= rhs + k * lhs_se`
    AtMostBoundPlusStdErrors { k: f64 },
    /// `|lhs_mean - rhs| <= tol`
    AbsDiffAtMost { tol: f64 },
    /// `lhs_mean + k * (lhs_se + rhs_se) < rhs`
    StrictlyBelow { k: f64 },
}

impl ToleranceRule {
    pub fn passes(&self, lhs_mean: f64, lhs_se: f64, rhs: f64, rhs_se: f64) -> bool {
        let ok = match *self {
            ToleranceRule::WithinStdErrors { k } => (lhs_mean - rhs).abs() <= k * lhs_se,
            ToleranceRule::WithinStdErrorsPlusBias { k, slack } => {
                (lhs_mean - rhs).abs() <= k * lhs_se + slack
            }
            ToleranceRule::WithinCombinedStdErrors { k } => {
                (lhs_mean - rhs).abs() <= k * lhs_se.hypot(rhs_se)
            }
            ToleranceRule::AtMostBoundPlusStdErrors { k } => lhs_mean <= rhs + k * lhs_se,
            ToleranceRule::AbsDiffAtMost { tol } => (lhs_mean - rhs).abs() <= tol,
            ToleranceRule::StrictlyBelow { k } => lhs_mean + k * (lhs_se + rhs_se) < rhs,
        };
        ok && lhs_mean.is_finite() && rhs.is_finite()
    }
}

/// One Monte Carlo (or exact) check against an oracle value or bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check_id: String,
    pub lhs_mean: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    #[serde(default)]
    pub rhs_se: f64,
    pub tolerance_rule: ToleranceRule,
    pub pass: bool,
}

impl CheckRecord {
    pub fn new(check_id: impl Into<String>, lhs: MCEstimate, rhs: f64, rule: ToleranceRule) -> Self {
        Self::with_rhs_se(check_id, lhs, rhs, 0.0, rule)
    }

    pub fn with_rhs_se(
        check_id: impl Into<String>,
        lhs: MCEstimate,
        rhs: f64,
        rhs_se: f64,
        rule: ToleranceRule,
    ) -> Self {
        Self {
            check_id: check_id.into(),
            lhs_mean: lhs.mean,
            lhs_se: lhs.std_error,
            rhs,
            rhs_se,
            tolerance_rule: rule,
            pass: rule.passes(lhs.mean, lhs.std_error, rhs, rhs_se),
        }
    }

    /// Re-evaluates the tolerance rule from the stored numbers.
    pub fn recheck(&self) -> bool {
        self.tolerance_rule
            .passes(self.lhs_mean, self.lhs_se, self.rhs, self.rhs_se)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules() {
        let lhs = MCEstimate { mean: 1.1, std_error: 0.05, replicas: 100 };
        assert!(CheckRecord::new("a", lhs, 1.0, ToleranceRule::WithinStdErrors { k: 3.0 }).pass);
        assert!(!CheckRecord::new("b", lhs, 1.0, ToleranceRule::WithinStdErrors { k: 1.0 }).pass);
        assert!(CheckRecord::new("c", lhs, 1.0, ToleranceRule::AtMostBoundPlusStdErrors { k: 3.0 }).pass);
        assert!(!CheckRecord::new("d", lhs, 0.9, ToleranceRule::AtMostBoundPlusStdErrors { k: 3.0 }).pass);
        assert!(CheckRecord::new("e", lhs, 2.0, ToleranceRule::StrictlyBelow { k: 3.0 }).pass);
        assert!(!CheckRecord::new("f", lhs, f64::NAN, ToleranceRule::AbsDiffAtMost { tol: 1.0 }).pass);
    }

    #[test]
    fn json_shape_and_recheck() {
        let rec = CheckRecord::new(
            "iso",
            MCEstimate { mean: 8.01, std_error: 0.03, replicas: 10 },
            8.0,
            ToleranceRule::WithinStdErrors { k: 3.0 },
        );
        let json = serde_json::to_value(&rec).unwrap();
        assert_eq!(json["lhs_mean"], 8.01);
        assert_eq!(json["tolerance_rule"]["rule"], "within_std_errors");
        let back: CheckRecord = serde_json::from_value(json).unwrap();
        assert_eq!(back.recheck(), back.pass);
    }
}
