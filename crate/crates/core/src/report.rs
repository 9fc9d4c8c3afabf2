//! Verification reports. A report's verdict is a pure function of its
//! recorded quantities and declared checks, so a stored report can be
//! re-evaluated and must reproduce its own `pass` flag.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ResultId {
    Thm1,
    Thm2Ratio,
    ThmGaussNonasymp,
    PropId,
    PropLpft,
    PropLpPerfect,
    LemBalance,
    LemFeatinv,
    LemLpUpper,
    LemAnglePerturb,
    LemSubspaceAngle,
    LemHeadAnticonc,
}

impl ResultId {
    pub const ALL: [ResultId; 12] = [
        ResultId::Thm1,
        ResultId::Thm2Ratio,
        ResultId::ThmGaussNonasymp,
        ResultId::PropId,
        ResultId::PropLpft,
        ResultId::PropLpPerfect,
        ResultId::LemBalance,
        ResultId::LemFeatinv,
        ResultId::LemLpUpper,
        ResultId::LemAnglePerturb,
        ResultId::LemSubspaceAngle,
        ResultId::LemHeadAnticonc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResultId::Thm1 => "THM1",
            ResultId::Thm2Ratio => "THM2_RATIO",
            ResultId::ThmGaussNonasymp => "THM_GAUSS_NONASYMP",
            ResultId::PropId => "PROP_ID",
            ResultId::PropLpft => "PROP_LPFT",
            ResultId::PropLpPerfect => "PROP_LP_PERFECT",
            ResultId::LemBalance => "LEM_BALANCE",
            ResultId::LemFeatinv => "LEM_FEATINV",
            ResultId::LemLpUpper => "LEM_LP_UPPER",
            ResultId::LemAnglePerturb => "LEM_ANGLE_PERTURB",
            ResultId::LemSubspaceAngle => "LEM_SUBSPACE_ANGLE",
            ResultId::LemHeadAnticonc => "LEM_HEAD_ANTICONC",
        }
    }
}

impl std::fmt::Display for ResultId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ResultId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        ResultId::ALL
            .into_iter()
            .find(|id| id.as_str() == upper)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown result id `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
}

impl Relation {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Relation::Le => value <= threshold,
            Relation::Lt => value < threshold,
            Relation::Ge => value >= threshold,
            Relation::Gt => value > threshold,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Lt => "<",
            Relation::Ge => ">=",
            Relation::Gt => ">",
        }
    }
}

/// `quantities[quantity] <relation> threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub quantity: String,
    pub relation: Relation,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub result_id: ResultId,
    pub quantities: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub notes: Vec<String>,
}

impl TheoremReport {
    pub fn new(result_id: ResultId) -> Self {
        Self {
            result_id,
            quantities: BTreeMap::new(),
            checks: Vec::new(),
            pass: true,
            notes: Vec::new(),
        }
    }

    /// Records a quantity. Non-finite values are kept out of the map and
    /// noted instead.
    pub fn record(&mut self, name: &str, value: f64) -> &mut Self {
        if value.is_finite() {
            self.quantities.insert(name.to_string(), value);
        } else {
            self.notes.push(format!("{name} is not finite ({value})"));
        }
        self
    }

    pub fn require(&mut self, name: &str, relation: Relation, threshold: f64) -> &mut Self {
        self.checks.push(Check {
            quantity: name.to_string(),
            relation,
            threshold,
        });
        self
    }

    /// Records `value` and asserts `value <relation> threshold`.
    pub fn assert_that(
        &mut self,
        name: &str,
        value: f64,
        relation: Relation,
        threshold: f64,
    ) -> &mut Self {
        self.record(name, value).require(name, relation, threshold)
    }

    pub fn note(&mut self, text: impl Into<String>) -> &mut Self {
        self.notes.push(text.into());
        self
    }

    pub fn quantity(&self, name: &str) -> Option<f64> {
        self.quantities.get(name).copied()
    }

    /// Re-evaluates every check against the recorded quantities. A check on a
    /// missing quantity fails.
    pub fn evaluate(&self) -> bool {
        self.checks.iter().all(|c| {
            self.quantities
                .get(&c.quantity)
                .is_some_and(|v| c.relation.holds(*v, c.threshold))
        })
    }

    pub fn failed_checks(&self) -> Vec<&Check> {
        self.checks
            .iter()
            .filter(|c| {
                !self
                    .quantities
                    .get(&c.quantity)
                    .is_some_and(|v| c.relation.holds(*v, c.threshold))
            })
            .collect()
    }

    /// A report with no checks is informational (e.g. a vacuous bound).
    pub fn is_assertable(&self) -> bool {
        !self.checks.is_empty()
    }

    pub fn finalize(mut self) -> Self {
        self.pass = self.evaluate();
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports contain only finite numbers")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Markdown table with one line per report.
pub fn summary_table(reports: &[TheoremReport]) -> String {
    let mut out = String::from("| result | verdict | checks | failed |\n|---|---|---|---|\n");
    for r in reports {
        let verdict = match (r.is_assertable(), r.pass) {
            (false, _) => "info",
            (true, true) => "pass",
            (true, false) => "FAIL",
        };
        let failed: Vec<String> = r
            .failed_checks()
            .iter()
            .map(|c| {
                let v = r
                    .quantity(&c.quantity)
                    .map_or("missing".to_string(), |v| format!("{v:.4e}"));
                format!(
                    "{} = {v} !{} {:.4e}",
                    c.quantity,
                    c.relation.symbol(),
                    c.threshold
                )
            })
            .collect();
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} |",
            r.result_id,
            verdict,
            r.checks.len(),
            if failed.is_empty() {
                "-".to_string()
            } else {
                failed.join("; ")
            }
        );
    }
    out
}
