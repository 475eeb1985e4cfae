//! Long-format score tables.

use std::collections::{BTreeSet, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::StatsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub encounter_id: String,
    pub arm: String,
    pub scenario: String,
    pub actor: String,
    pub category: String,
    pub value: f64,
}

impl ScoreRecord {
    pub fn new(
        encounter_id: &str,
        arm: &str,
        scenario: &str,
        actor: &str,
        category: &str,
        value: f64,
    ) -> Self {
        Self {
            encounter_id: encounter_id.into(),
            arm: arm.into(),
            scenario: scenario.into(),
            actor: actor.into(),
            category: category.into(),
            value,
        }
    }
}

/// Rows keyed by (encounter, category), which must be unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    rows: Vec<ScoreRecord>,
}

impl ScoreTable {
    pub fn new(rows: Vec<ScoreRecord>) -> Result<Self, StatsError> {
        let mut seen = HashSet::new();
        for (i, r) in rows.iter().enumerate() {
            if !r.value.is_finite() {
                return Err(StatsError::NonFinite(i));
            }
            if !seen.insert((r.encounter_id.as_str(), r.category.as_str())) {
                return Err(StatsError::Duplicate {
                    encounter: r.encounter_id.clone(),
                    category: r.category.clone(),
                });
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ScoreRecord] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn category<'a>(&'a self, category: &'a str) -> impl Iterator<Item = &'a ScoreRecord> + 'a {
        self.rows.iter().filter(move |r| r.category == category)
    }

    pub fn arms(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.arm.as_str()).collect()
    }

    pub fn scenarios(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.scenario.as_str()).collect()
    }

    pub fn actors(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.actor.as_str()).collect()
    }

    pub fn categories(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.category.as_str()).collect()
    }

    /// Values of `category` for `arm`, in row order.
    pub fn values(&self, category: &str, arm: &str) -> Vec<f64> {
        self.category(category)
            .filter(|r| r.arm == arm)
            .map(|r| r.value)
            .collect()
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, StatsError> {
        let rows = csv::Reader::from_reader(input)
            .deserialize()
            .collect::<Result<Vec<ScoreRecord>, _>>()
            .map_err(|e| StatsError::Csv(e.to_string()))?;
        Self::new(rows)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), StatsError> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r).map_err(|e| StatsError::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| StatsError::Csv(e.to_string()))
    }
}
