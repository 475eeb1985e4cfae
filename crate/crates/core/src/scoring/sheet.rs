//! Aggregation of score sheets and the long-format score CSV.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{CaseRubric, Domain, ScoreSheet, ScoringError, UniversalCriterion};
use crate::ids::{ActorId, EncounterId, ScenarioId};
use crate::session::Arm;

pub const TOTAL_CATEGORY: &str = "total";

/// How a 1..=5 rating becomes a percent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikertMapping {
    /// 100 × r / 5.
    #[default]
    OverFive,
    /// 100 × (r − 1) / 4.
    ZeroBased,
}

impl LikertMapping {
    pub fn percent(self, rating: u8) -> Result<f64, ScoringError> {
        if !(1..=5).contains(&rating) {
            return Err(ScoringError::OutOfRange {
                item: "likert rating".into(),
                score: rating.into(),
                min: 1,
                max: 5,
            });
        }
        let r = f64::from(rating);
        Ok(match self {
            Self::OverFive => 100.0 * r / 5.0,
            Self::ZeroBased => 100.0 * (r - 1.0) / 4.0,
        })
    }
}

pub fn likert_percent(rating: u8) -> Result<f64, ScoringError> {
    LikertMapping::default().percent(rating)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterScore {
    pub domain_sum: BTreeMap<Domain, u32>,
    pub domain_max: BTreeMap<Domain, u32>,
    pub domain_percent: BTreeMap<Domain, f64>,
    pub total: u32,
    pub total_max: u32,
    pub total_percent: f64,
    pub universal_rating: BTreeMap<UniversalCriterion, u8>,
    pub universal_percent: BTreeMap<UniversalCriterion, f64>,
}

fn percent(earned: u32, max: u32) -> f64 {
    if max == 0 {
        0.0
    } else {
        100.0 * f64::from(earned) / f64::from(max)
    }
}

pub fn aggregate(
    sheet: &ScoreSheet,
    rubric: &CaseRubric,
    mapping: LikertMapping,
) -> Result<EncounterScore, ScoringError> {
    sheet.validate(rubric)?;
    let mut domain_sum = BTreeMap::new();
    let mut domain_max = BTreeMap::new();
    for (d, items) in &rubric.domains {
        let sum: u32 = items.iter().map(|i| u32::from(sheet.items[&i.id])).sum();
        domain_sum.insert(*d, sum);
        domain_max.insert(*d, rubric.domain_max(*d));
    }
    let domain_percent = domain_sum
        .iter()
        .map(|(d, s)| (*d, percent(*s, domain_max[d])))
        .collect();
    let total = domain_sum.values().sum();
    let total_max = domain_max.values().sum();
    let universal_percent = sheet
        .universal
        .iter()
        .map(|(c, r)| Ok((*c, mapping.percent(*r)?)))
        .collect::<Result<_, ScoringError>>()?;
    Ok(EncounterScore {
        domain_sum,
        domain_max,
        domain_percent,
        total,
        total_max,
        total_percent: percent(total, total_max),
        universal_rating: sheet.universal.clone(),
        universal_percent,
    })
}

/// One observation of the long-format score table. Rubric categories hold
/// percent earned; universal criteria hold the raw rating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub encounter_id: EncounterId,
    pub arm: Arm,
    pub scenario: ScenarioId,
    pub actor: ActorId,
    pub category: String,
    pub value: f64,
}

impl ScoreRow {
    /// Rows for one aggregated encounter: seven domains, the total, then any
    /// universal ratings.
    pub fn from_score(
        encounter_id: &EncounterId,
        sheet: &ScoreSheet,
        score: &EncounterScore,
    ) -> Vec<ScoreRow> {
        let row = |category: &str, value: f64| ScoreRow {
            encounter_id: encounter_id.clone(),
            arm: sheet.encounter.arm,
            scenario: sheet.encounter.scenario.clone(),
            actor: sheet.encounter.actor.clone(),
            category: category.to_owned(),
            value,
        };
        let mut out: Vec<_> = score
            .domain_percent
            .iter()
            .map(|(d, p)| row(d.as_str(), *p))
            .collect();
        out.push(row(TOTAL_CATEGORY, score.total_percent));
        out.extend(
            score
                .universal_rating
                .iter()
                .map(|(c, r)| row(c.as_str(), f64::from(*r))),
        );
        out
    }
}

pub fn write_score_rows<W: Write>(out: W, rows: &[ScoreRow]) -> Result<(), ScoringError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)
            .map_err(|e| ScoringError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| ScoringError::Csv(e.to_string()))
}

pub fn read_score_rows<R: Read>(input: R) -> Result<Vec<ScoreRow>, ScoringError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| ScoringError::Csv(e.to_string()))
}
