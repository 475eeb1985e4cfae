//! Adapter for a hosted model behind an HTTP endpoint. The endpoint receives
//! the persona, the visible log and the directives as JSON and answers with an
//! [`UtterancePlan`].

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{DialogueContext, ResponderBackend, TalkerError, UtterancePlan};
use crate::planner::Directive;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    pub name: String,
    pub endpoint: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Environment variable holding a bearer token, if the endpoint needs one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
}

fn default_timeout_ms() -> u64 {
    30_000
}

#[derive(Serialize)]
struct Request<'a> {
    persona: &'a super::Persona,
    frames: &'a [crate::session::EventFrame],
    directives: &'a [Directive],
}

pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build()
            .into();
        Self { config, agent }
    }

    fn fail(&self, message: impl ToString) -> TalkerError {
        TalkerError::Backend {
            backend: self.config.name.clone(),
            message: message.to_string(),
        }
    }
}

impl ResponderBackend for RemoteBackend {
    fn name(&self) -> &str {
        &self.config.name
    }

    fn reply(
        &self,
        ctx: &DialogueContext<'_>,
        directives: &[Directive],
    ) -> Result<UtterancePlan, TalkerError> {
        let body = Request {
            persona: ctx.persona,
            frames: ctx.frames,
            directives,
        };
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(var) = &self.config.api_key_env {
            let key = std::env::var(var)
                .map_err(|_| self.fail(format!("environment variable {var} is not set")))?;
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| self.fail(e))?;
        resp.body_mut()
            .read_json::<UtterancePlan>()
            .map_err(|e| self.fail(e))
    }
}
