//! Ingestion of rater-entered scores.
//!
//! Item scores: CSV `encounter_id,item_id,score`. Universal ratings: CSV
//! `encounter_id,criterion,rating`. Rows for other encounters are ignored.

use std::collections::BTreeMap;

use serde::Deserialize;

use super::{
    CaseRubric, EncounterRef, Rater, RubricItem, ScoreSheet, ScoringError, UniversalCriterion,
};
use crate::ids::EncounterId;

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct ItemRow {
    pub encounter_id: EncounterId,
    pub item_id: String,
    pub score: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct RatingRow {
    pub encounter_id: EncounterId,
    pub criterion: String,
    pub rating: i64,
}

fn parse_csv<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, ScoringError> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| ScoringError::Csv(e.to_string()))
}

pub fn parse_item_csv(text: &str) -> Result<Vec<ItemRow>, ScoringError> {
    parse_csv(text)
}

pub fn parse_rating_csv(text: &str) -> Result<Vec<RatingRow>, ScoringError> {
    parse_csv(text)
}

/// Builds a validated manual sheet for `encounter`, which must carry an
/// encounter id.
pub fn ingest_manual(
    encounter: &EncounterRef,
    rubric: &CaseRubric,
    items: &[ItemRow],
    ratings: &[RatingRow],
    rater_id: &str,
) -> Result<ScoreSheet, ScoringError> {
    let id = encounter
        .encounter_id
        .as_ref()
        .ok_or_else(|| ScoringError::Csv("encounter has no id to match rows against".into()))?;
    let mut scores = BTreeMap::new();
    for row in items.iter().filter(|r| &r.encounter_id == id) {
        if rubric.item(&row.item_id).is_none() {
            return Err(ScoringError::UnknownItem(row.item_id.clone()));
        }
        let max = RubricItem::MAX_SCORE;
        let score = u8::try_from(row.score)
            .ok()
            .filter(|s| *s <= max)
            .ok_or_else(|| ScoringError::OutOfRange {
                item: row.item_id.clone(),
                score: row.score,
                min: 0,
                max,
            })?;
        if scores.insert(row.item_id.clone(), score).is_some() {
            return Err(ScoringError::Duplicate(row.item_id.clone()));
        }
    }
    let mut universal = BTreeMap::new();
    for row in ratings.iter().filter(|r| &r.encounter_id == id) {
        let c: UniversalCriterion = row.criterion.parse()?;
        let rating = u8::try_from(row.rating)
            .ok()
            .filter(|r| (1..=5).contains(r))
            .ok_or_else(|| ScoringError::OutOfRange {
                item: row.criterion.clone(),
                score: row.rating,
                min: 1,
                max: 5,
            })?;
        if universal.insert(c, rating).is_some() {
            return Err(ScoringError::Duplicate(row.criterion.clone()));
        }
    }
    let sheet = ScoreSheet {
        encounter: encounter.clone(),
        items: scores,
        universal,
        rater: Rater::Manual(rater_id.to_owned()),
    };
    sheet.validate(rubric)?;
    Ok(sheet)
}
