//! A deterministic talker driven by a JSON script: a greeting, an agenda of
//! questions asked in order, canned answers to patient questions, and a
//! closing line. Pending directives always take precedence over the agenda.

use serde::{Deserialize, Serialize};

use super::{DialogueContext, Persona, ResponderBackend, TalkerError, UtterancePlan};
use crate::evidence::Cite;
use crate::ids::FindingId;
use crate::pattern::{Pattern, Synonyms};
use crate::planner::{Directive, GoalKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgendaItem {
    pub say: String,
    #[serde(default)]
    pub frame_request: bool,
    /// Findings the line asserts.
    #[serde(default)]
    pub cites: Vec<FindingId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplyRule {
    /// Matched against what the patient said since the talker last spoke.
    pub when: Pattern,
    pub say: String,
    #[serde(default)]
    pub cites: Vec<FindingId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TalkerScript {
    pub name: String,
    pub persona: Persona,
    pub greeting: String,
    /// Said after the patient reports findings, citing them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acknowledge: Option<String>,
    #[serde(default)]
    pub agenda: Vec<AgendaItem>,
    #[serde(default)]
    pub replies: Vec<ReplyRule>,
    pub closing: String,
}

impl TalkerScript {
    pub fn parse(json: &str) -> Result<Self, TalkerError> {
        serde_json::from_str(json).map_err(|e| TalkerError::Backend {
            backend: "scripted".into(),
            message: format!("invalid talker script: {e}"),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    script: TalkerScript,
}

impl ScriptedBackend {
    pub fn new(script: TalkerScript) -> Self {
        Self { script }
    }

    pub fn script(&self) -> &TalkerScript {
        &self.script
    }

    /// First agenda item not yet spoken.
    fn next_agenda(&self, ctx: &DialogueContext<'_>) -> Option<&AgendaItem> {
        let said: Vec<&str> = ctx.talker_texts().collect();
        self.script.agenda.iter().find(|item| {
            let first = super::split_sentences(&item.say)
                .into_iter()
                .next()
                .unwrap_or_default();
            !said.contains(&first.as_str())
        })
    }

    fn realize_directive(plan: &mut UtterancePlan, d: &Directive) {
        plan.say(&d.instruction, d.cites.clone());
        if d.kind == GoalKind::VisualInspection {
            plan.frame_request = true;
        }
    }
}

impl ResponderBackend for ScriptedBackend {
    fn name(&self) -> &str {
        &self.script.name
    }

    fn reply(
        &self,
        ctx: &DialogueContext<'_>,
        directives: &[Directive],
    ) -> Result<UtterancePlan, TalkerError> {
        let mut plan = UtterancePlan::default();
        if !ctx.talker_has_spoken() {
            plan.say(&self.script.greeting, vec![]);
            return Ok(plan);
        }
        let cites = |ids: &[FindingId]| ids.iter().map(|f| ctx.cite(f)).collect::<Vec<Cite>>();

        let recent: Vec<_> = ctx.recent_patient().collect();
        let heard = recent
            .iter()
            .filter_map(|f| f.as_patient())
            .map(|u| u.text.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        let reported: Vec<Cite> = recent
            .iter()
            .flat_map(|f| {
                f.as_patient()
                    .into_iter()
                    .flat_map(|u| &u.findings)
                    .map(|r| {
                        Cite::supported(
                            r.finding.clone(),
                            crate::evidence::SourceClass::PatientReported,
                            f.seq,
                        )
                    })
            })
            .collect();
        let answer = self
            .script
            .replies
            .iter()
            .find(|r| r.when.matches_text(&heard, &Synonyms::default()));

        if let Some(top) = directives.first() {
            Self::realize_directive(&mut plan, top);
            if let Some(r) = answer {
                plan.say(&r.say, cites(&r.cites));
            }
            if let (Some(ack), false) = (&self.script.acknowledge, reported.is_empty()) {
                plan.say(ack, reported);
            }
            return Ok(plan);
        }

        if let (Some(ack), false) = (&self.script.acknowledge, reported.is_empty()) {
            plan.say(ack, reported);
        }
        if let Some(r) = answer {
            plan.say(&r.say, cites(&r.cites));
        }
        match self.next_agenda(ctx) {
            Some(item) => {
                plan.say(&item.say, cites(&item.cites));
                plan.frame_request |= item.frame_request;
            }
            None => {
                plan.say(&self.script.closing, vec![]);
                plan.closes = true;
            }
        }
        Ok(plan)
    }
}
