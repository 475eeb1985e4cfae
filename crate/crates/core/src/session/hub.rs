//! Registry of live sessions, shared between connection handlers.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use super::{
    Listener, Session, SessionConfig, SessionError, SessionId, SharedClock, TalkerChunk,
    TruncationRecord,
};
use crate::ids::ScenarioId;
use crate::planner::Directive;
use crate::session::{FrameBody, Seq};
use crate::trace::EncounterTrace;

pub type SharedSession = Arc<Mutex<Session>>;

pub struct SessionHub {
    clock: SharedClock,
    scenarios: RwLock<BTreeSet<ScenarioId>>,
    sessions: RwLock<HashMap<SessionId, SharedSession>>,
    handles: Mutex<HashMap<String, SessionId>>,
}

impl SessionHub {
    pub fn new(clock: SharedClock, scenarios: impl IntoIterator<Item = ScenarioId>) -> Self {
        Self {
            clock,
            scenarios: RwLock::new(scenarios.into_iter().collect()),
            sessions: RwLock::new(HashMap::new()),
            handles: Mutex::new(HashMap::new()),
        }
    }

    pub fn register_scenario(&self, id: ScenarioId) {
        self.scenarios.write().insert(id);
    }

    pub fn knows_scenario(&self, id: &ScenarioId) -> bool {
        self.scenarios.read().contains(id)
    }

    pub fn open_session(&self, config: SessionConfig) -> Result<SessionId, SessionError> {
        self.open_session_on(config, self.clock.clone())
    }

    /// Opens a session that reads time from `clock` instead of the hub's.
    pub fn open_session_on(
        &self,
        config: SessionConfig,
        clock: SharedClock,
    ) -> Result<SessionId, SessionError> {
        if !self.knows_scenario(&config.scenario_id) {
            return Err(SessionError::UnknownScenario(config.scenario_id));
        }
        // Holding the handle lock across creation keeps concurrent opens on one
        // handle from both succeeding.
        let mut handles = self.handles.lock();
        if let Some(handle) = &config.handle {
            if let Some(existing) = handles.get(handle) {
                let still_open = self
                    .session(*existing)
                    .map(|s| s.lock().is_open())
                    .unwrap_or(false);
                if still_open {
                    return Err(SessionError::DuplicateHandle(handle.clone()));
                }
            }
        }
        let handle = config.handle.clone();
        let session = Session::open(config, clock)?;
        let id = session.id();
        self.sessions
            .write()
            .insert(id, Arc::new(Mutex::new(session)));
        if let Some(handle) = handle {
            handles.insert(handle, id);
        }
        Ok(id)
    }

    pub fn session(&self, id: SessionId) -> Result<SharedSession, SessionError> {
        self.sessions
            .read()
            .get(&id)
            .cloned()
            .ok_or(SessionError::UnknownSession(id))
    }

    pub fn ids(&self) -> Vec<SessionId> {
        let mut ids: Vec<_> = self.sessions.read().keys().copied().collect();
        ids.sort();
        ids
    }

    pub fn submit_frame(&self, id: SessionId, body: FrameBody) -> Result<Seq, SessionError> {
        self.session(id)?.lock().submit(body)
    }

    pub fn post_directive(
        &self,
        id: SessionId,
        directive: Directive,
    ) -> Result<Option<Seq>, SessionError> {
        self.session(id)?.lock().post_directive(directive)
    }

    pub fn apply_barge_in(
        &self,
        id: SessionId,
        in_flight: Vec<TalkerChunk>,
    ) -> Result<TruncationRecord, SessionError> {
        self.session(id)?.lock().apply_barge_in(in_flight)
    }

    pub fn subscribe(&self, id: SessionId, listener: Listener) -> Result<(), SessionError> {
        self.session(id)?.lock().subscribe(listener);
        Ok(())
    }

    pub fn close_session(&self, id: SessionId) -> Result<EncounterTrace, SessionError> {
        self.session(id)?.lock().close()
    }
}
