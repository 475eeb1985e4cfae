//! Shared fixtures for the study tests.
#![allow(dead_code)]

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use telesim_core::demo;
use telesim_core::planner::Directive;
use telesim_core::session::Arm;
use telesim_core::talker::{
    DialogueContext, ResponderBackend, ScriptedBackend, TalkerError, UtterancePlan,
};
use telesim_study::runner::TalkerSource;
use telesim_study::{
    make_plan, Backends, ReplicationSpec, RunContext, ScenarioStore, StudyConfig, StudyPlan,
};

/// Generic talker that fails its first `failures` replies.
pub struct Flaky {
    inner: ScriptedBackend,
    remaining: AtomicUsize,
}

impl Flaky {
    pub fn new(failures: usize) -> Self {
        Self {
            inner: ScriptedBackend::new(demo::generic_talker()),
            remaining: AtomicUsize::new(failures),
        }
    }
}

impl ResponderBackend for Flaky {
    fn name(&self) -> &str {
        "flaky"
    }

    fn reply(
        &self,
        ctx: &DialogueContext<'_>,
        directives: &[Directive],
    ) -> Result<UtterancePlan, TalkerError> {
        let left = self.remaining.load(Ordering::SeqCst);
        if left > 0 {
            self.remaining.store(left - 1, Ordering::SeqCst);
            return Err(TalkerError::Backend {
                backend: "flaky".into(),
                message: "connection reset".into(),
            });
        }
        self.inner.reply(ctx, directives)
    }
}

pub fn flaky(failures: usize) -> TalkerSource {
    TalkerSource::Backend {
        backend: Arc::new(Flaky::new(failures)),
        persona: demo::generic_talker().persona,
    }
}

pub fn config(scenarios: &[&str], actors: &[&str], replicated: usize) -> StudyConfig {
    StudyConfig {
        scenarios: scenarios.iter().map(|s| s.to_string()).collect(),
        actors: actors.iter().map(|s| s.to_string()).collect(),
        replication: ReplicationSpec::Count(replicated),
        ..StudyConfig::default()
    }
}

pub fn plan(config: &StudyConfig) -> StudyPlan {
    make_plan(
        config.seed,
        &config.scenarios,
        &config.actors,
        &config.replication,
        &config.arms,
    )
    .unwrap()
}

pub fn context<'a>(
    store: &'a ScenarioStore,
    config: StudyConfig,
    backends: Backends,
    out: &Path,
) -> RunContext<'a> {
    RunContext {
        store,
        backends,
        config,
        out_dir: out.to_owned(),
    }
}

pub fn with_source(arm: Arm, source: TalkerSource) -> Backends {
    let mut b = Backends::default();
    b.set(arm, source);
    b
}
