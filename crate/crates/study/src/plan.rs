//! Crossover plans: every actor enacts each of their scenarios once per arm,
//! in an arm order drawn per (actor, scenario) pair.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use telesim_core::session::Arm;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("plan needs at least one {0}")]
    Empty(&'static str),
    #[error("duplicate {kind} `{id}`")]
    Duplicate { kind: &'static str, id: String },
    #[error("cannot replicate {wanted} of {available} scenarios")]
    TooManyReplicated { wanted: usize, available: usize },
    #[error("replication needs at least two actors")]
    TooFewActors,
    #[error("replicated scenario `{0}` is not in the plan")]
    UnknownScenario(String),
}

/// Which scenarios get a second actor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReplicationSpec {
    /// Draw this many scenarios with the plan's generator.
    Count(usize),
    Scenarios(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    pub actor: String,
    pub scenario: String,
    pub arm: Arm,
    /// Position of this arm within the (actor, scenario) block.
    pub order_index: u32,
}

impl Assignment {
    pub fn encounter_id(&self) -> String {
        format!("{}__{}__{}", self.actor, self.scenario, self.arm)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyPlan {
    pub seed: u64,
    pub arms: Vec<Arm>,
    /// In execution order for each actor: scenario blocks in scenario order,
    /// arms by order index within a block.
    pub assignments: Vec<Assignment>,
    /// Replicated scenario to its (primary, replicating) actors.
    pub replication: BTreeMap<String, (String, String)>,
}

impl StudyPlan {
    pub fn actors(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.assignments
            .iter()
            .map(|a| a.actor.as_str())
            .filter(|a| seen.insert(*a))
            .collect()
    }

    /// The actor's assignments in the order they are run.
    pub fn actor_queue(&self, actor: &str) -> Vec<&Assignment> {
        self.assignments
            .iter()
            .filter(|a| a.actor == actor)
            .collect()
    }

    /// Arm order for each (actor, scenario) pair.
    pub fn orderings(&self) -> BTreeMap<(&str, &str), Vec<Arm>> {
        let mut out: BTreeMap<(&str, &str), Vec<(u32, Arm)>> = BTreeMap::new();
        for a in &self.assignments {
            out.entry((&a.actor, &a.scenario))
                .or_default()
                .push((a.order_index, a.arm));
        }
        out.into_iter()
            .map(|(k, mut v)| {
                v.sort();
                (k, v.into_iter().map(|(_, arm)| arm).collect())
            })
            .collect()
    }

    pub fn replicated_scenarios(&self) -> Vec<&str> {
        self.replication.keys().map(String::as_str).collect()
    }
}

/// Builds a crossover plan. Scenario `i` goes to actor `i mod |actors|`;
/// each replicated scenario then goes to the least-loaded other actor (ties
/// by roster order). Arm order per (actor, scenario) is a uniform shuffle
/// from a ChaCha8 generator seeded with `seed`.
pub fn make_plan(
    seed: u64,
    scenarios: &[String],
    actors: &[String],
    replication: &ReplicationSpec,
    arms: &[Arm],
) -> Result<StudyPlan, PlanError> {
    check_unique("scenario", scenarios.iter().map(String::as_str))?;
    check_unique("actor", actors.iter().map(String::as_str))?;
    check_unique("arm", arms.iter().map(|a| a.as_str()))?;
    if scenarios.is_empty() {
        return Err(PlanError::Empty("scenario"));
    }
    if actors.is_empty() {
        return Err(PlanError::Empty("actor"));
    }
    if arms.is_empty() {
        return Err(PlanError::Empty("arm"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let replicated: BTreeSet<&str> = match replication {
        ReplicationSpec::Count(k) => {
            if *k > scenarios.len() {
                return Err(PlanError::TooManyReplicated {
                    wanted: *k,
                    available: scenarios.len(),
                });
            }
            let mut pool: Vec<&str> = scenarios.iter().map(String::as_str).collect();
            pool.shuffle(&mut rng);
            pool.into_iter().take(*k).collect()
        }
        ReplicationSpec::Scenarios(list) => {
            check_unique("replicated scenario", list.iter().map(String::as_str))?;
            for s in list {
                if !scenarios.contains(s) {
                    return Err(PlanError::UnknownScenario(s.clone()));
                }
            }
            list.iter().map(String::as_str).collect()
        }
    };
    if !replicated.is_empty() && actors.len() < 2 {
        return Err(PlanError::TooFewActors);
    }

    // (scenario index, actor index) pairs.
    let mut load = vec![0usize; actors.len()];
    let mut pairs = Vec::new();
    for i in 0..scenarios.len() {
        let primary = i % actors.len();
        load[primary] += 1;
        pairs.push((i, primary));
    }
    let mut replication_map = BTreeMap::new();
    for (i, s) in scenarios.iter().enumerate() {
        if !replicated.contains(s.as_str()) {
            continue;
        }
        let primary = i % actors.len();
        let second = (0..actors.len())
            .filter(|&a| a != primary)
            .min_by_key(|&a| (load[a], a))
            .expect("at least two actors");
        load[second] += 1;
        pairs.push((i, second));
        replication_map.insert(s.clone(), (actors[primary].clone(), actors[second].clone()));
    }
    pairs.sort_by_key(|&(s, a)| (a, s));

    let mut assignments = Vec::with_capacity(pairs.len() * arms.len());
    for (s, a) in pairs {
        let mut order = arms.to_vec();
        order.shuffle(&mut rng);
        for (k, arm) in order.into_iter().enumerate() {
            assignments.push(Assignment {
                actor: actors[a].clone(),
                scenario: scenarios[s].clone(),
                arm,
                order_index: k as u32,
            });
        }
    }
    Ok(StudyPlan {
        seed,
        arms: arms.to_vec(),
        assignments,
        replication: replication_map,
    })
}

fn check_unique<'a>(
    kind: &'static str,
    ids: impl Iterator<Item = &'a str>,
) -> Result<(), PlanError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(PlanError::Duplicate {
                kind,
                id: id.to_owned(),
            });
        }
    }
    Ok(())
}
