//! Case rubrics and the declarative grading rules attached to their items.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Domain, ScoringError};
use crate::ids::{FindingId, ManeuverId, ScenarioId};
use crate::pattern::{Pattern, Synonyms};
use crate::session::ManeuverResult;

pub const RUBRIC_SCHEMA: u32 = 1;

/// Something that can happen at one frame of a trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Matcher {
    /// A talker chunk whose text matches.
    TalkerSays(Pattern),
    PatientSays(Pattern),
    /// A patient utterance annotated with the finding.
    PatientDiscloses(FindingId),
    /// A captured frame or maneuver showing the finding.
    Observed(FindingId),
    Maneuver {
        id: ManeuverId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        result: Option<ManeuverResult>,
    },
    FrameRequest,
    /// A talker chunk citing the finding with a supporting frame.
    TalkerCites(FindingId),
}

/// A condition over a whole trace. Every form is monotone: adding frames
/// never turns a satisfied predicate unsatisfied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Pred {
    Exists(Matcher),
    Count {
        matcher: Matcher,
        at_least: u32,
    },
    /// Matches at strictly increasing positions.
    Sequence(Vec<Matcher>),
    All(Vec<Pred>),
    Any(Vec<Pred>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedFlagRule {
    pub finding: FindingId,
    pub probe: Pattern,
}

/// Score 2 when `full` holds, 1 when `partial` holds, else 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RuleSpec", into = "RuleSpec")]
pub enum GradingRule {
    Graded {
        full: Pred,
        partial: Option<Pred>,
    },
    /// 2 if probed and the disclosure was acknowledged, 1 if only probed.
    RedFlag(RedFlagRule),
}

impl GradingRule {
    /// The rule in its general form.
    pub fn expand(&self) -> (Pred, Option<Pred>) {
        match self {
            Self::Graded { full, partial } => (full.clone(), partial.clone()),
            Self::RedFlag(r) => (
                Pred::Sequence(vec![
                    Matcher::TalkerSays(r.probe.clone()),
                    Matcher::PatientDiscloses(r.finding.clone()),
                    Matcher::TalkerCites(r.finding.clone()),
                ]),
                Some(Pred::Exists(Matcher::TalkerSays(r.probe.clone()))),
            ),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    full: Option<Pred>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    partial: Option<Pred>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    red_flag: Option<RedFlagRule>,
}

impl TryFrom<RuleSpec> for GradingRule {
    type Error = String;

    fn try_from(s: RuleSpec) -> Result<Self, String> {
        match (s.full, s.partial, s.red_flag) {
            (Some(full), partial, None) => Ok(Self::Graded { full, partial }),
            (None, None, Some(r)) => Ok(Self::RedFlag(r)),
            _ => Err("a rule is either {full, partial?} or {red_flag}".into()),
        }
    }
}

impl From<GradingRule> for RuleSpec {
    fn from(r: GradingRule) -> Self {
        match r {
            GradingRule::Graded { full, partial } => Self {
                full: Some(full),
                partial,
                red_flag: None,
            },
            GradingRule::RedFlag(r) => Self {
                full: None,
                partial: None,
                red_flag: Some(r),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RubricItem {
    pub id: String,
    pub text: String,
    /// What earns 0, 1 and 2.
    pub anchors: [String; 3],
    #[serde(default)]
    pub non_negotiable: bool,
    pub rule: GradingRule,
}

impl RubricItem {
    pub const MAX_SCORE: u8 = 2;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseRubric {
    pub schema: u32,
    pub scenario: ScenarioId,
    #[serde(default)]
    pub synonyms: Synonyms,
    pub domains: BTreeMap<Domain, Vec<RubricItem>>,
}

impl CaseRubric {
    pub fn parse(json: &str) -> Result<Self, ScoringError> {
        let rubric: Self =
            serde_json::from_str(json).map_err(|e| ScoringError::RubricParse(e.to_string()))?;
        let problems = rubric.violations();
        if problems.is_empty() {
            Ok(rubric)
        } else {
            Err(ScoringError::InvalidRubric(problems))
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.schema != RUBRIC_SCHEMA {
            out.push(format!("schema {} is not {RUBRIC_SCHEMA}", self.schema));
        }
        for d in Domain::ALL {
            if self.domains.get(&d).is_none_or(Vec::is_empty) {
                out.push(format!("domain {d} has no items"));
            }
        }
        let mut seen = BTreeSet::new();
        for item in self.items() {
            if !seen.insert(item.id.as_str()) {
                out.push(format!("duplicate item id `{}`", item.id));
            }
        }
        out
    }

    /// Items in domain order.
    pub fn items(&self) -> impl Iterator<Item = &RubricItem> {
        self.domains.values().flatten()
    }

    pub fn item(&self, id: &str) -> Option<(Domain, &RubricItem)> {
        self.domains
            .iter()
            .find_map(|(d, items)| items.iter().find(|i| i.id == id).map(|i| (*d, i)))
    }

    pub fn domain_max(&self, d: Domain) -> u32 {
        self.domains
            .get(&d)
            .map_or(0, |v| v.len() as u32 * u32::from(RubricItem::MAX_SCORE))
    }
}
