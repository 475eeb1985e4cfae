//! Encounter orchestration for simulated telehealth consultations.
//!
//! A [`session::Session`] is the append-only event log of one encounter. The
//! [`talker`] speaks to the patient, the [`planner`] watches the log and steers
//! the talker with directives, and [`patient`] plays a scripted standardized
//! patient. Finished sessions freeze into [`trace::EncounterTrace`]s, which the
//! auditor checks for unsupported assertions and [`scoring`] grades against
//! case rubrics.

pub mod demo;
pub mod encounter;
pub mod evidence;
pub mod ids;
pub mod patient;
pub mod pattern;
pub mod planner;
pub mod scoring;
pub mod session;
pub mod talker;
pub mod trace;
