//! Scenario × domain gaps between two arms on the 0–2 item scale.
//!
//! Tables carry domain scores as percent of the domain maximum. Since every
//! item is scored 0–2, an encounter's mean item score in a domain is its
//! percent / 50.

use std::collections::{BTreeMap, BTreeSet};

use crate::table::ScoreTable;
use crate::StatsError;

#[derive(Debug, Clone, PartialEq)]
pub struct GapMap {
    pub arm_a: String,
    pub arm_b: String,
    pub scenarios: Vec<String>,
    pub domains: Vec<String>,
    /// `values[s][d]`: mean item score of A minus that of B.
    pub values: Vec<Vec<f64>>,
}

impl GapMap {
    pub fn get(&self, scenario: &str, domain: &str) -> Option<f64> {
        let s = self.scenarios.iter().position(|x| x == scenario)?;
        let d = self.domains.iter().position(|x| x == domain)?;
        Some(self.values[s][d])
    }

    /// One row per scenario, one column per domain.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario");
        for d in &self.domains {
            out.push(',');
            out.push_str(d);
        }
        out.push('\n');
        for (s, row) in self.scenarios.iter().zip(&self.values) {
            out.push_str(s);
            for v in row {
                out.push_str(&format!(",{v:.4}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn gap_map(
    table: &ScoreTable,
    arm_a: &str,
    arm_b: &str,
    domains: &[&str],
) -> Result<GapMap, StatsError> {
    let scenarios: BTreeSet<&str> = table
        .rows()
        .iter()
        .filter(|r| domains.contains(&r.category.as_str()))
        .map(|r| r.scenario.as_str())
        .collect();
    // (scenario, arm, domain) → (sum of mean item scores, count)
    let mut acc: BTreeMap<(&str, &str, &str), (f64, usize)> = BTreeMap::new();
    for r in table.rows() {
        if (r.arm == arm_a || r.arm == arm_b) && domains.contains(&r.category.as_str()) {
            let e = acc.entry((&r.scenario, &r.arm, &r.category)).or_default();
            e.0 += r.value / 50.0;
            e.1 += 1;
        }
    }
    let mean = |s: &str, arm: &str, d: &str| -> Result<f64, StatsError> {
        acc.get(&(s, arm, d))
            .map(|(sum, n)| sum / *n as f64)
            .ok_or_else(|| StatsError::MissingArm {
                scenario: s.to_owned(),
                arm: arm.to_owned(),
            })
    };
    let mut values = Vec::with_capacity(scenarios.len());
    for s in &scenarios {
        let row = domains
            .iter()
            .map(|d| Ok(mean(s, arm_a, d)? - mean(s, arm_b, d)?))
            .collect::<Result<Vec<_>, StatsError>>()?;
        values.push(row);
    }
    Ok(GapMap {
        arm_a: arm_a.to_owned(),
        arm_b: arm_b.to_owned(),
        scenarios: scenarios.into_iter().map(str::to_owned).collect(),
        domains: domains.iter().map(|d| (*d).to_owned()).collect(),
        values,
    })
}
