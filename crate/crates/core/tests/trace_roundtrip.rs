//! NDJSON export and import of encounter traces.

mod support;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use telesim_core::trace::{EncounterTrace, TraceError};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn export_then_import_is_identity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trace = support::random_trace(&mut rng);
        let bytes = trace.to_bytes();
        let back = EncounterTrace::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &trace);
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}

fn sample() -> EncounterTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    loop {
        let t = support::random_trace(&mut rng);
        if t.len() >= 3 {
            return t;
        }
    }
}

#[test]
fn header_is_the_first_record() {
    let text = String::from_utf8(sample().to_bytes()).unwrap();
    let first = text.lines().next().unwrap();
    let header: serde_json::Value = serde_json::from_str(first).unwrap();
    assert_eq!(header["schema"], 1);
    assert_eq!(header["scenario"], "fuzz");
    assert_eq!(header["actor"], "actor_01");
    assert!(header.get("arm").is_some());
}

#[test]
fn corrupt_record_is_reported_by_index() {
    let text = String::from_utf8(sample().to_bytes()).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    lines[2] = "{not json".into();
    let err = EncounterTrace::from_bytes(lines.join("\n").as_bytes()).unwrap_err();
    assert!(
        matches!(err, TraceError::Corrupt { record: 2, .. }),
        "{err:?}"
    );
}

#[test]
fn schema_mismatch_and_missing_header_are_distinct_errors() {
    let text = String::from_utf8(sample().to_bytes()).unwrap();
    let bumped = text.replacen("\"schema\":1", "\"schema\":2", 1);
    assert!(matches!(
        EncounterTrace::from_bytes(bumped.as_bytes()),
        Err(TraceError::SchemaMismatch {
            record: 0,
            found: 2
        })
    ));
    assert_eq!(
        EncounterTrace::from_bytes(b"\n\n"),
        Err(TraceError::MissingHeader)
    );
}

#[test]
fn reordered_frames_fail_validation() {
    let text = String::from_utf8(sample().to_bytes()).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.swap(1, 2);
    assert!(matches!(
        EncounterTrace::from_bytes(lines.join("\n").as_bytes()),
        Err(TraceError::Invalid { index: 0, .. })
    ));
}
