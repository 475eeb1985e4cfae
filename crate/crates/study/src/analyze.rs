//! From graded encounters to a report bundle: the long-format score table,
//! fixed-effects fits and arm contrasts, bootstrap intervals, inter-actor
//! tau-b tables, gap maps and per-encounter audit counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use telesim_core::ids::EncounterId;
use telesim_core::scoring::{
    aggregate, Domain, LikertMapping, ScoreRow, ScoreSheet, UniversalCriterion, TOTAL_CATEGORY,
};
use telesim_core::session::Arm;
use telesim_core::trace::{audit, EncounterTrace};
use telesim_stats::{
    bootstrap_mean_ci, fit_ols_fixed_effects, gap_map, kendall_tau_b, pairwise_contrast,
    replication_pairs, GapMap, ScoreRecord, ScoreTable, StatsError,
};
use thiserror::Error;

use crate::runner::RunRecord;
use crate::store::ScenarioStore;

#[derive(Debug, Error)]
pub enum AnalyzeError {
    #[error("no graded encounters for arm {0}")]
    InsufficientData(Arm),
    #[error("encounter `{id}`: {message}")]
    Input { id: String, message: String },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Dropped level of the arm factor.
    pub reference_arm: Arm,
    /// Arms whose per-scenario scores are ranked across the two actors.
    pub compared_arms: Vec<Arm>,
    /// Gap maps to draw, first arm minus second.
    pub gap_pairs: Vec<(Arm, Arm)>,
    pub bootstrap_n: usize,
    pub ci_level: f64,
    pub likert: LikertMapping,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            reference_arm: Arm::Human,
            compared_arms: vec![Arm::Human, Arm::Coclinician, Arm::ComparatorRealtime],
            gap_pairs: vec![
                (Arm::Coclinician, Arm::Human),
                (Arm::Coclinician, Arm::ComparatorRealtime),
                (Arm::Coclinician, Arm::CoclinicianNoPlanner),
            ],
            bootstrap_n: 10_000,
            ci_level: 0.95,
            likert: LikertMapping::OverFive,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.bootstrap_n == 0 {
            return Err("bootstrap_n must be positive".into());
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(format!(
                "ci_level must lie strictly between 0 and 1, got {}",
                self.ci_level
            ));
        }
        Ok(())
    }
}

/// Study facts the analysis needs besides the scores.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyMeta {
    pub seed: u64,
    pub arms: Vec<Arm>,
    pub replicated: Vec<String>,
    pub config_hash: String,
}

/// One graded encounter.
#[derive(Debug, Clone)]
pub struct AnalysisInput {
    pub record: RunRecord,
    pub sheet: ScoreSheet,
    pub trace: Option<EncounterTrace>,
}

/// Manual sheets live here, relative to the study directory, and take the
/// place of the autograded sheet.
pub fn manual_sheet_path(encounter_id: &str) -> PathBuf {
    PathBuf::from("manual").join(format!("{encounter_id}.json"))
}

/// Loads sheets and traces for every successful record under `dir`.
pub fn load_inputs(dir: &Path, records: &[RunRecord]) -> Result<Vec<AnalysisInput>, AnalyzeError> {
    let mut out = Vec::new();
    for record in records.iter().filter(|r| r.succeeded()) {
        let fail = |message: String| AnalyzeError::Input {
            id: record.encounter_id.clone(),
            message,
        };
        let manual = dir.join(manual_sheet_path(&record.encounter_id));
        let sheet_path = if manual.exists() {
            manual
        } else {
            dir.join(
                record
                    .sheet_path
                    .as_ref()
                    .ok_or_else(|| fail("no sheet path".into()))?,
            )
        };
        let text = fs::read_to_string(&sheet_path)
            .map_err(|e| fail(format!("{}: {e}", sheet_path.display())))?;
        let sheet: ScoreSheet = serde_json::from_str(&text).map_err(|e| fail(e.to_string()))?;
        let trace = match &record.trace_path {
            Some(p) => {
                let bytes =
                    fs::read(dir.join(p)).map_err(|e| fail(format!("{}: {e}", p.display())))?;
                Some(EncounterTrace::from_bytes(&bytes).map_err(|e| fail(e.to_string()))?)
            }
            None => None,
        };
        out.push(AnalysisInput {
            record: record.clone(),
            sheet,
            trace,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitRow {
    pub category: String,
    pub n: usize,
    pub df: usize,
    pub residual_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastRow {
    pub category: String,
    pub arm_a: Arm,
    pub arm_b: Arm,
    pub estimate: f64,
    pub se: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CiRow {
    pub category: String,
    pub arm: Arm,
    pub n: usize,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauRow {
    pub category: String,
    /// `None` when one actor's scores are all tied.
    pub tau_b: Option<f64>,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRow {
    pub encounter_id: String,
    pub arm: Arm,
    pub contextual_completions: usize,
    pub observed: usize,
    pub patient_reported: usize,
    pub inferred: usize,
    pub untagged_utterances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config_hash: String,
    pub bootstrap_n: usize,
    pub ci_level: f64,
    pub likert: LikertMapping,
    pub reference_arm: Arm,
    pub encounters: usize,
    /// File name to SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub table: ScoreTable,
    pub fits: Vec<FitRow>,
    pub contrasts: Vec<ContrastRow>,
    pub cis: Vec<CiRow>,
    pub taus: Vec<TauRow>,
    pub gaps: Vec<GapMap>,
    pub audits: Vec<AuditRow>,
    /// Analyses that could not be run, with the reason.
    pub notes: Vec<String>,
    pub manifest: Manifest,
}

/// Score categories in reporting order: the seven domains, the total, then the
/// universal criteria.
pub fn categories() -> Vec<&'static str> {
    Domain::ALL
        .iter()
        .map(|d| d.as_str())
        .chain([TOTAL_CATEGORY])
        .chain(UniversalCriterion::ALL.iter().map(|c| c.as_str()))
        .collect()
}

/// Bootstrap seed for one (category, arm) cell.
fn cell_seed(seed: u64, category: &str, arm: Arm) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(category.as_bytes());
    h.update([0]);
    h.update(arm.as_str().as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

pub fn analyze(
    inputs: &[AnalysisInput],
    store: &ScenarioStore,
    cfg: &AnalysisConfig,
    study: &StudyMeta,
) -> Result<ReportBundle, AnalyzeError> {
    for arm in &study.arms {
        if !inputs.iter().any(|i| i.record.entry.arm == *arm) {
            return Err(AnalyzeError::InsufficientData(*arm));
        }
    }

    let mut rows = Vec::new();
    let mut audits = Vec::new();
    for input in inputs {
        let id = &input.record.encounter_id;
        let case = store
            .case(input.sheet.encounter.scenario.as_str())
            .map_err(|e| AnalyzeError::Input {
                id: id.clone(),
                message: e.to_string(),
            })?;
        let score =
            aggregate(&input.sheet, &case.rubric, cfg.likert).map_err(|e| AnalyzeError::Input {
                id: id.clone(),
                message: e.to_string(),
            })?;
        for r in ScoreRow::from_score(&EncounterId::new(id.as_str()), &input.sheet, &score) {
            rows.push(ScoreRecord::new(
                r.encounter_id.as_str(),
                r.arm.as_str(),
                r.scenario.as_str(),
                r.actor.as_str(),
                &r.category,
                r.value,
            ));
        }
        if let Some(trace) = &input.trace {
            let report = audit(trace);
            audits.push(AuditRow {
                encounter_id: id.clone(),
                arm: input.record.entry.arm,
                contextual_completions: report.contextual_completions.len(),
                observed: report.counts.observed,
                patient_reported: report.counts.patient_reported,
                inferred: report.counts.inferred,
                untagged_utterances: report.untagged_utterances,
            });
        }
    }
    let table = ScoreTable::new(rows)?;
    let present: Vec<&str> = categories()
        .into_iter()
        .filter(|c| table.category(c).next().is_some())
        .collect();
    let arms: Vec<Arm> = Arm::ALL
        .into_iter()
        .filter(|a| study.arms.contains(a))
        .collect();
    let reference = if arms.contains(&cfg.reference_arm) {
        cfg.reference_arm
    } else {
        arms[0]
    };
    let mut notes = Vec::new();

    let mut fits = Vec::new();
    let mut contrasts = Vec::new();
    for category in &present {
        match fit_ols_fixed_effects(&table, category, reference.as_str()) {
            Ok(fit) => {
                fits.push(FitRow {
                    category: (*category).to_owned(),
                    n: fit.n,
                    df: fit.df,
                    residual_variance: fit.residual_variance,
                });
                for (i, a) in arms.iter().enumerate() {
                    for b in &arms[i + 1..] {
                        let c = pairwise_contrast(&fit, a.as_str(), b.as_str())?;
                        contrasts.push(ContrastRow {
                            category: (*category).to_owned(),
                            arm_a: *a,
                            arm_b: *b,
                            estimate: c.estimate,
                            se: c.se,
                            p: c.p,
                        });
                    }
                }
            }
            Err(e) => notes.push(format!("fit {category}: {e}")),
        }
    }

    let mut cis = Vec::new();
    for category in &present {
        for arm in &arms {
            let values = table.values(category, arm.as_str());
            if values.is_empty() {
                continue;
            }
            let seed = cell_seed(study.seed, category, *arm);
            let ci = bootstrap_mean_ci(&values, cfg.bootstrap_n, cfg.ci_level, seed)?;
            cis.push(CiRow {
                category: (*category).to_owned(),
                arm: *arm,
                n: values.len(),
                mean: ci.estimate,
                lower: ci.lower,
                upper: ci.upper,
                seed,
            });
        }
    }

    let mut taus = Vec::new();
    if !study.replicated.is_empty() {
        let compared: Vec<&str> = cfg
            .compared_arms
            .iter()
            .filter(|a| arms.contains(a))
            .map(|a| a.as_str())
            .collect();
        let replicated: Vec<&str> = study.replicated.iter().map(String::as_str).collect();
        // Paired per category so a category rated on only some encounters
        // does not hide the others.
        for category in &present {
            let rows: Vec<ScoreRecord> = table.category(category).cloned().collect();
            let pairs =
                ScoreTable::new(rows).and_then(|t| replication_pairs(&t, &replicated, &compared));
            let (first, second) = match pairs.as_ref().map(|p| p.categories.get(*category)) {
                Ok(Some(v)) => v,
                Ok(None) => continue,
                Err(e) => {
                    notes.push(format!("tau {category}: {e}"));
                    continue;
                }
            };
            let tau_b = match kendall_tau_b(first, second) {
                Ok(t) => Some(t.tau_b),
                Err(StatsError::AllTied) => None,
                Err(e) => return Err(e.into()),
            };
            taus.push(TauRow {
                category: (*category).to_owned(),
                tau_b,
                n_pairs: first.len(),
            });
        }
    }

    let domains: Vec<&str> = Domain::ALL.iter().map(|d| d.as_str()).collect();
    let mut gaps = Vec::new();
    for (a, b) in &cfg.gap_pairs {
        if !(arms.contains(a) && arms.contains(b)) {
            continue;
        }
        match gap_map(&table, a.as_str(), b.as_str(), &domains) {
            Ok(g) => gaps.push(g),
            Err(e) => notes.push(format!("gap {a} vs {b}: {e}")),
        }
    }

    Ok(ReportBundle {
        table,
        fits,
        contrasts,
        cis,
        taus,
        gaps,
        audits,
        notes,
        manifest: Manifest {
            seed: study.seed,
            config_hash: study.config_hash.clone(),
            bootstrap_n: cfg.bootstrap_n,
            ci_level: cfg.ci_level,
            likert: cfg.likert,
            reference_arm: reference,
            encounters: inputs.len(),
            files: BTreeMap::new(),
        },
    })
}

impl ReportBundle {
    pub fn contrast(&self, category: &str, a: Arm, b: Arm) -> Option<&ContrastRow> {
        self.contrasts
            .iter()
            .find(|c| c.category == category && c.arm_a == a && c.arm_b == b)
    }

    pub fn gap(&self, a: Arm, b: Arm) -> Option<&GapMap> {
        self.gaps
            .iter()
            .find(|g| g.arm_a == a.as_str() && g.arm_b == b.as_str())
    }

    /// Mean of `category` for `arm` over its encounters.
    pub fn mean(&self, category: &str, arm: Arm) -> Option<f64> {
        self.cis
            .iter()
            .find(|c| c.category == category && c.arm == arm)
            .map(|c| c.mean)
    }

    /// Rendered artifact files, by name.
    pub fn files(&self) -> BTreeMap<String, Vec<u8>> {
        let mut files = BTreeMap::new();
        let mut scores = Vec::new();
        self.table.write_csv(&mut scores).expect("in-memory write");
        files.insert("scores.csv".to_owned(), scores);

        let mut s = String::from("category,n,df,residual_variance\n");
        for f in &self.fits {
            let _ = writeln!(s, "{},{},{},{}", f.category, f.n, f.df, f.residual_variance);
        }
        files.insert("fits.csv".to_owned(), s.into_bytes());

        let mut s = String::from("category,arm_a,arm_b,estimate,se,p\n");
        for c in &self.contrasts {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                c.category, c.arm_a, c.arm_b, c.estimate, c.se, c.p
            );
        }
        files.insert("contrasts.csv".to_owned(), s.into_bytes());

        let mut s = String::from("category,arm,n,mean,lower,upper,seed\n");
        for c in &self.cis {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                c.category, c.arm, c.n, c.mean, c.lower, c.upper, c.seed
            );
        }
        files.insert("ci.csv".to_owned(), s.into_bytes());

        let mut s = String::from("category,tau_b,n_pairs\n");
        for t in &self.taus {
            let tau = t
                .tau_b
                .map_or_else(|| "undefined".to_owned(), |v| v.to_string());
            let _ = writeln!(s, "{},{},{}", t.category, tau, t.n_pairs);
        }
        files.insert("tau.csv".to_owned(), s.into_bytes());

        for g in &self.gaps {
            files.insert(
                format!("gap_{}_vs_{}.csv", g.arm_a, g.arm_b),
                g.to_csv().into_bytes(),
            );
        }

        let mut s = String::from(
            "encounter_id,arm,contextual_completions,observed,patient_reported,inferred,untagged_utterances\n",
        );
        for a in &self.audits {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                a.encounter_id,
                a.arm,
                a.contextual_completions,
                a.observed,
                a.patient_reported,
                a.inferred,
                a.untagged_utterances
            );
        }
        files.insert("audit.csv".to_owned(), s.into_bytes());

        let mut s = String::new();
        for n in &self.notes {
            let _ = writeln!(s, "{n}");
        }
        files.insert("notes.txt".to_owned(), s.into_bytes());
        files
    }

    /// Writes every artifact plus `manifest.json` under `dir` and returns the
    /// manifest with file hashes filled in.
    pub fn write(&self, dir: &Path) -> Result<Manifest, AnalyzeError> {
        fs::create_dir_all(dir).map_err(|source| AnalyzeError::Io {
            path: dir.to_owned(),
            source,
        })?;
        let mut manifest = self.manifest.clone();
        for (name, bytes) in self.files() {
            manifest
                .files
                .insert(name.clone(), hex::encode(Sha256::digest(&bytes)));
            let path = dir.join(&name);
            fs::write(&path, bytes).map_err(|source| AnalyzeError::Io { path, source })?;
        }
        let path = dir.join("manifest.json");
        let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(|source| AnalyzeError::Io { path, source })?;
        Ok(manifest)
    }
}
