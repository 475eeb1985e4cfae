mod support;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use telesim_core::ids::EncounterId;
use telesim_core::scoring::{Domain, EncounterRef, Rater, ScoreSheet, UniversalCriterion};
use telesim_core::session::Arm;
use telesim_study::analyze::{categories, load_inputs, StudyMeta};
use telesim_study::{
    analyze, AnalysisConfig, AnalysisInput, ReportBundle, RunRecord, RunStatus, ScenarioStore,
    StudyPlan,
};

use support::{config, plan};

/// Item score and universal rating for one (arm, actor, scenario) cell.
type Draw = dyn Fn(Arm, &mut ChaCha8Rng) -> (u8, u8);

fn study_plan() -> StudyPlan {
    plan(&config(
        &["asthma", "myasthenia_gravis", "rotator_cuff"],
        &["actor_01", "actor_02", "actor_03"],
        3,
    ))
}

/// Manual sheets for every plan entry, drawn by `draw`.
fn synthetic(
    plan: &StudyPlan,
    store: &ScenarioStore,
    seed: u64,
    draw: &Draw,
) -> Vec<AnalysisInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    plan.assignments
        .iter()
        .map(|a| {
            let rubric = &store.case(&a.scenario).unwrap().rubric;
            let id = a.encounter_id();
            let items: BTreeMap<String, u8> = rubric
                .items()
                .map(|i| (i.id.clone(), draw(a.arm, &mut rng).0))
                .collect();
            let universal: BTreeMap<UniversalCriterion, u8> = UniversalCriterion::ALL
                .iter()
                .map(|c| (*c, draw(a.arm, &mut rng).1))
                .collect();
            AnalysisInput {
                record: RunRecord {
                    entry: a.clone(),
                    encounter_id: id.clone(),
                    trace_path: None,
                    sheet_path: None,
                    status: RunStatus::Ok,
                    repeat_count: 0,
                    error: None,
                },
                sheet: ScoreSheet {
                    encounter: EncounterRef {
                        encounter_id: Some(EncounterId::new(id.as_str())),
                        scenario: a.scenario.as_str().into(),
                        arm: a.arm,
                        actor: a.actor.as_str().into(),
                    },
                    items,
                    universal,
                    rater: Rater::Manual("r1".into()),
                },
                trace: None,
            }
        })
        .collect()
}

fn meta(plan: &StudyPlan) -> StudyMeta {
    StudyMeta {
        seed: plan.seed,
        arms: plan.arms.clone(),
        replicated: plan
            .replicated_scenarios()
            .into_iter()
            .map(str::to_owned)
            .collect(),
        config_hash: "test".into(),
    }
}

fn quick() -> AnalysisConfig {
    AnalysisConfig {
        bootstrap_n: 500,
        ..AnalysisConfig::default()
    }
}

fn thorough_vs_sloppy(arm: Arm, rng: &mut ChaCha8Rng) -> (u8, u8) {
    if arm == Arm::Coclinician {
        (rng.random_range(1..=2), rng.random_range(4..=5))
    } else {
        (rng.random_range(0..=1), rng.random_range(1..=3))
    }
}

#[test]
fn thorough_arm_scores_higher_in_every_domain() {
    let store = ScenarioStore::demo();
    let plan = study_plan();
    let inputs = synthetic(&plan, &store, 1, &thorough_vs_sloppy);
    let bundle = analyze(&inputs, &store, &quick(), &meta(&plan)).unwrap();
    for d in Domain::ALL {
        let c = bundle
            .contrast(d.as_str(), Arm::Coclinician, Arm::Human)
            .unwrap();
        assert!(c.estimate > 0.0 && c.p < 0.05, "{d}: {c:?}");
        assert!(
            bundle.mean(d.as_str(), Arm::Coclinician).unwrap()
                > bundle.mean(d.as_str(), Arm::Human).unwrap()
        );
    }
    let gap = bundle.gap(Arm::Coclinician, Arm::Human).unwrap();
    assert!(gap.values.iter().flatten().all(|v| *v > 0.0));
    assert!(bundle.notes.is_empty(), "{:?}", bundle.notes);
}

#[test]
fn identical_arms_give_zero_gaps_and_contrasts() {
    let store = ScenarioStore::demo();
    let plan = study_plan();
    // Every arm of an (actor, scenario) pair gets the same sheet.
    let mut inputs = synthetic(&plan, &store, 2, &|_, rng: &mut ChaCha8Rng| {
        (rng.random_range(0..=2), rng.random_range(1..=5))
    });
    let firsts: BTreeMap<(String, String), ScoreSheet> = inputs
        .iter()
        .filter(|i| i.record.entry.order_index == 0)
        .map(|i| {
            (
                (
                    i.record.entry.actor.clone(),
                    i.record.entry.scenario.clone(),
                ),
                i.sheet.clone(),
            )
        })
        .collect();
    for input in &mut inputs {
        let e = &input.record.entry;
        let template = &firsts[&(e.actor.clone(), e.scenario.clone())];
        input.sheet.items = template.items.clone();
        input.sheet.universal = template.universal.clone();
    }
    let bundle = analyze(&inputs, &store, &quick(), &meta(&plan)).unwrap();
    for gap in &bundle.gaps {
        assert!(gap.values.iter().flatten().all(|v| *v == 0.0), "{gap:?}");
    }
    assert_eq!(bundle.contrasts.len(), categories().len() * 6);
    for c in &bundle.contrasts {
        assert!(c.estimate.abs() < 1e-9, "{c:?}");
        assert!(c.p > 0.99, "{c:?}");
    }
}

#[test]
fn tau_table_covers_rubric_and_universal_categories() {
    let store = ScenarioStore::demo();
    let plan = study_plan();
    let inputs = synthetic(&plan, &store, 3, &thorough_vs_sloppy);
    let bundle = analyze(&inputs, &store, &quick(), &meta(&plan)).unwrap();
    let got: BTreeSet<&str> = bundle.taus.iter().map(|t| t.category.as_str()).collect();
    let want: BTreeSet<&str> = categories().into_iter().collect();
    assert_eq!(got, want);
    assert_eq!(bundle.taus.len(), 8 + 14);
    // Three replicated scenarios times three compared arms.
    assert!(bundle.taus.iter().all(|t| t.n_pairs == 9));
    assert!(bundle
        .taus
        .iter()
        .filter_map(|t| t.tau_b)
        .all(|t| (-1.0..=1.0).contains(&t)));
    let csv = String::from_utf8(bundle.files()["tau.csv"].clone()).unwrap();
    assert_eq!(csv.lines().count(), 23);
}

#[test]
fn no_replication_means_no_tau_table() {
    let store = ScenarioStore::demo();
    let plan = plan(&config(
        &["asthma", "rotator_cuff"],
        &["actor_01", "actor_02"],
        0,
    ));
    let inputs = synthetic(&plan, &store, 4, &thorough_vs_sloppy);
    let bundle = analyze(&inputs, &store, &quick(), &meta(&plan)).unwrap();
    assert!(bundle.taus.is_empty());
}

#[test]
fn missing_arm_is_an_error() {
    let store = ScenarioStore::demo();
    let plan = study_plan();
    let inputs: Vec<_> = synthetic(&plan, &store, 5, &thorough_vs_sloppy)
        .into_iter()
        .filter(|i| i.record.entry.arm != Arm::ComparatorRealtime)
        .collect();
    let err = analyze(&inputs, &store, &quick(), &meta(&plan)).unwrap_err();
    assert!(err.to_string().contains("comparator_realtime"), "{err}");
}

#[test]
fn bundle_is_bit_reproducible() {
    let store = ScenarioStore::demo();
    let plan = study_plan();
    let run = || -> ReportBundle {
        let inputs = synthetic(&plan, &store, 6, &thorough_vs_sloppy);
        analyze(&inputs, &store, &AnalysisConfig::default(), &meta(&plan)).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.files(), b.files());
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ma, mb) = (a.write(da.path()).unwrap(), b.write(db.path()).unwrap());
    assert_eq!(ma, mb);
    assert_eq!(ma.bootstrap_n, 10_000);
    for name in ma.files.keys().chain([&"manifest.json".to_owned()]) {
        assert_eq!(
            std::fs::read(da.path().join(name)).unwrap(),
            std::fs::read(db.path().join(name)).unwrap()
        );
    }
}

#[test]
fn bootstrap_intervals_bracket_the_mean() {
    let store = ScenarioStore::demo();
    let plan = study_plan();
    let inputs = synthetic(&plan, &store, 7, &thorough_vs_sloppy);
    let bundle = analyze(&inputs, &store, &quick(), &meta(&plan)).unwrap();
    assert_eq!(bundle.cis.len(), categories().len() * 4);
    for ci in &bundle.cis {
        assert!(ci.lower <= ci.mean && ci.mean <= ci.upper, "{ci:?}");
    }
}

#[test]
fn manual_sheets_replace_autograded_ones() {
    let dir = tempfile::tempdir().unwrap();
    let store = ScenarioStore::demo();
    let cfg = config(&["asthma"], &["actor_01"], 0);
    let p = plan(&cfg);
    let ctx = support::context(&store, cfg, telesim_study::Backends::default(), dir.path());
    let records = telesim_study::run_study(&p, &ctx).unwrap();

    let auto = load_inputs(dir.path(), &records).unwrap();
    assert!(auto
        .iter()
        .all(|i| i.sheet.rater == Rater::Autograder && i.trace.is_some()));

    let target = &records[0];
    let mut manual = auto[0].sheet.clone();
    manual.rater = Rater::Manual("r2".into());
    let path = dir.path().join(telesim_study::analyze::manual_sheet_path(
        &target.encounter_id,
    ));
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(&path, serde_json::to_vec(&manual).unwrap()).unwrap();
    let loaded = load_inputs(dir.path(), &records).unwrap();
    assert_eq!(loaded[0].sheet.rater, Rater::Manual("r2".into()));
    assert_eq!(loaded[1].sheet.rater, Rater::Autograder);

    let bundle = analyze(&loaded, &store, &quick(), &meta(&p)).unwrap();
    assert_eq!(bundle.audits.len(), 4);
}

#[test]
fn partially_rated_criterion_only_drops_its_own_tau() {
    let store = ScenarioStore::demo();
    let plan = study_plan();
    let mut inputs = synthetic(&plan, &store, 8, &thorough_vs_sloppy);
    for input in inputs.iter_mut().skip(1) {
        input.sheet.universal.remove(&UniversalCriterion::Empathy);
    }
    let bundle = analyze(&inputs, &store, &quick(), &meta(&plan)).unwrap();
    assert_eq!(bundle.taus.len(), 8 + 13);
    assert!(bundle.taus.iter().all(|t| t.category != "empathy"));
    assert!(
        bundle.notes.iter().any(|n| n.starts_with("tau empathy")),
        "{:?}",
        bundle.notes
    );
}
