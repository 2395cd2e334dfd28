//! Corpus analysis: verifies each log by replay, runs the grounding
//! measures, aggregates per (view, role, trial) cell and runs the tests.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cgbench_core::catalog::Puzzle;
use cgbench_core::config::{Seat, ViewCondition};
use cgbench_core::session::EndReason;
use cgbench_core::transcript::{list_logs, parse_log, replay, StoreError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotate::ActAnnotator;
use crate::grounding::{
    partition_vocabulary, references, segment_turns, DialogueAct, DialogueActLabel, Definiteness, Party,
    PieceReference, RefType, Utterance,
};
use crate::stats::{chi_square_2x2, cluster_permutation_test, mann_whitney_u, trial_trend, TestResult, DEFAULT_ALPHA};

pub const REPORT_FORMAT: &str = "cgbench-report/1";
/// Sessions needed in each compared group before a test is run.
pub const MIN_PER_GROUP: usize = 2;
const SCORED: std::ops::RangeInclusive<u32> = 1..=4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyzeOptions {
    pub alpha: f64,
    pub n_perm: usize,
    pub seed: u64,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions { alpha: DEFAULT_ALPHA, n_perm: 10_000, seed: 0 }
    }
}

#[derive(Debug, Error)]
pub enum AnalyzeError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("no session logs found in {0}")]
    EmptyCorpus(PathBuf),
    #[error("writing {path}: {message}")]
    Write { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogProvenance {
    pub file: String,
    pub session_id: String,
    pub sha256: String,
    pub format: String,
    pub view: ViewCondition,
    pub role: Seat,
    pub human_role: Option<Seat>,
    pub catalog_hash: String,
    pub trial_set_hash: String,
    pub events: usize,
    pub snapshots_checked: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedLog {
    pub file: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceCounts {
    pub total: usize,
    pub definite: usize,
    pub indefinite: usize,
    pub bare: usize,
    pub descriptive: usize,
    pub identifier: usize,
}

impl ReferenceCounts {
    fn add_ref(&mut self, r: &PieceReference) {
        self.total += 1;
        match r.definiteness {
            Definiteness::Definite => self.definite += 1,
            Definiteness::Indefinite => self.indefinite += 1,
            Definiteness::Bare => self.bare += 1,
        }
        match r.ref_type {
            RefType::Descriptive => self.descriptive += 1,
            RefType::Identifier => self.identifier += 1,
        }
    }

    fn merge(&mut self, o: &ReferenceCounts) {
        self.total += o.total;
        self.definite += o.definite;
        self.indefinite += o.indefinite;
        self.bare += o.bare;
        self.descriptive += o.descriptive;
        self.identifier += o.identifier;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularySizes {
    pub human_only: usize,
    pub ai_only: usize,
    pub joint: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub trial_index: u32,
    pub success: bool,
    pub end_reason: EndReason,
    pub utterances: usize,
    pub words: u64,
    pub references: ReferenceCounts,
    pub acts: BTreeMap<DialogueAct, usize>,
    pub vocabulary: VocabularySizes,
    pub mean_phrase_chars: BTreeMap<Party, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub view: ViewCondition,
    pub role: Seat,
    pub trials: Vec<TrialMetrics>,
}

impl SessionSummary {
    fn scored(&self) -> impl Iterator<Item = &TrialMetrics> {
        self.trials.iter().filter(|t| SCORED.contains(&t.trial_index))
    }

    pub fn scored_words(&self) -> f64 {
        self.scored().map(|t| t.words as f64).sum()
    }

    pub fn mean_scored_turns(&self) -> f64 {
        let (sum, n) = self.scored().fold((0.0, 0usize), |(s, n), t| (s + t.utterances as f64, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub view: ViewCondition,
    pub role: Seat,
    pub trial_index: u32,
    pub n_sessions: usize,
    pub success_rate: f64,
    pub mean_words: f64,
    pub mean_turns: f64,
    /// Pooled words over pooled turns.
    pub words_per_turn: f64,
    pub utterances: usize,
    pub references: ReferenceCounts,
    pub acts: BTreeMap<DialogueAct, usize>,
    pub vocabulary: VocabularySizes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TestOutcome {
    Computed { result: TestResult, significant: bool },
    InsufficientN { need: usize, got: Vec<usize> },
    NotComputable { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestEntry {
    /// What is compared: "view", "role" or "trend".
    pub factor: String,
    pub metric: String,
    pub groups: Vec<String>,
    pub outcome: TestOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub logs: Vec<LogProvenance>,
    pub skipped: Vec<SkippedLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub annotator: String,
    /// Labels per annotator that actually produced them.
    pub labels_by_annotator: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format: String,
    pub alpha: f64,
    pub n_perm: usize,
    pub seed: u64,
    pub corpus: Corpus,
    pub annotation: Annotation,
    pub sessions: Vec<SessionSummary>,
    pub cells: Vec<CellMetrics>,
    pub tests: Vec<TestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub surface: String,
    pub definiteness: Definiteness,
    pub ref_type: RefType,
}

/// One line of `utterances.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    #[serde(flatten)]
    pub utterance: Utterance,
    pub act: DialogueActLabel,
    pub references: Vec<ReferenceRecord>,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub report: MetricsReport,
    pub utterances: Vec<UtteranceRecord>,
}

fn empty_acts() -> BTreeMap<DialogueAct, usize> {
    DialogueAct::ALL.into_iter().map(|a| (a, 0)).collect()
}

fn annotator_key(label: &DialogueActLabel) -> String {
    match &label.annotator {
        crate::grounding::Annotator::RuleBased => "rule_based".into(),
        crate::grounding::Annotator::External { model_name } => format!("external:{model_name}"),
    }
}

struct Processed {
    provenance: LogProvenance,
    summary: SessionSummary,
    records: Vec<UtteranceRecord>,
}

fn process_log(path: &Path, puzzle: &Puzzle, annotator: &dyn ActAnnotator) -> Result<Processed, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("read failed: {e}"))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| "not valid UTF-8".to_string())?;
    let log = parse_log(&text).map_err(|e| e.to_string())?;
    if !log.is_complete() {
        return Err("incomplete log (no footer)".into());
    }
    let replayed = replay(&log, &puzzle.catalog, &puzzle.trials).map_err(|e| format!("replay failed: {e}"))?;
    let lexicon = puzzle.catalog.lexicon();
    let utterances = segment_turns(&log);
    let labels = annotator.annotate(&utterances, lexicon);
    let refs: Vec<Vec<PieceReference>> = utterances.iter().map(|u| references(u, lexicon)).collect();
    let all_refs: Vec<PieceReference> = refs.iter().flatten().cloned().collect();
    let vocab = partition_vocabulary(&all_refs);

    let config = &log.header.config;
    let trials = replayed
        .outcomes()
        .into_iter()
        .map(|o| {
            let t = o.trial_index;
            let in_trial = || utterances.iter().enumerate().filter(move |(_, u)| u.trial_index == t);
            let mut acts = empty_acts();
            let mut references = ReferenceCounts::default();
            for (i, _) in in_trial() {
                *acts.entry(labels[i].act).or_default() += 1;
                refs[i].iter().for_each(|r| references.add_ref(r));
            }
            let v = vocab.get(&t);
            TrialMetrics {
                trial_index: t,
                success: o.success,
                end_reason: o.end_reason,
                utterances: in_trial().count(),
                words: in_trial().map(|(_, u)| u64::from(u.word_count)).sum(),
                references,
                acts,
                vocabulary: VocabularySizes {
                    human_only: v.map_or(0, |v| v.human_only.len()),
                    ai_only: v.map_or(0, |v| v.ai_only.len()),
                    joint: v.map_or(0, |v| v.joint.len()),
                },
                mean_phrase_chars: v.map(|v| v.mean_phrase_chars.clone()).unwrap_or_default(),
            }
        })
        .collect();

    let records = utterances
        .into_iter()
        .zip(labels)
        .zip(refs)
        .map(|((utterance, act), refs)| UtteranceRecord {
            utterance,
            act,
            references: refs
                .into_iter()
                .map(|r| ReferenceRecord { surface: r.surface, definiteness: r.definiteness, ref_type: r.ref_type })
                .collect(),
        })
        .collect();

    let provenance = LogProvenance {
        file: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        session_id: log.header.session_id.clone(),
        sha256: hex::encode(Sha256::digest(&bytes)),
        format: log.header.format.clone(),
        view: config.view,
        role: config.focal_role,
        human_role: config.human_role,
        catalog_hash: log.header.catalog_hash.clone(),
        trial_set_hash: log.header.trial_set_hash.clone(),
        events: log.events.len(),
        snapshots_checked: replayed.snapshots_checked,
    };
    let summary = SessionSummary { session_id: config.session_id.clone(), view: config.view, role: config.focal_role, trials };
    Ok(Processed { provenance, summary, records })
}

/// Analyzes every `*.events.jsonl` file in `corpus`. Logs that fail to
/// parse or replay are skipped and listed in the report.
pub fn analyze_corpus(
    corpus: &Path,
    puzzle: &Puzzle,
    annotator: &dyn ActAnnotator,
    options: &AnalyzeOptions,
) -> Result<Analysis, AnalyzeError> {
    let paths = list_logs(corpus)?;
    if paths.is_empty() {
        return Err(AnalyzeError::EmptyCorpus(corpus.to_path_buf()));
    }
    let results: Vec<(PathBuf, Result<Processed, String>)> =
        paths.par_iter().map(|p| (p.clone(), process_log(p, puzzle, annotator))).collect();

    let mut processed = Vec::new();
    let mut skipped = Vec::new();
    for (path, r) in results {
        let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        match r {
            Ok(p) => processed.push(p),
            Err(reason) => {
                tracing::warn!(%file, %reason, "skipping log");
                skipped.push(SkippedLog { file, reason });
            }
        }
    }
    processed.sort_by(|a, b| a.provenance.session_id.cmp(&b.provenance.session_id).then(a.provenance.file.cmp(&b.provenance.file)));
    let mut ids = BTreeSet::new();
    processed.retain(|p| {
        let fresh = ids.insert(p.provenance.session_id.clone());
        if !fresh {
            skipped.push(SkippedLog { file: p.provenance.file.clone(), reason: format!("duplicate session id {}", p.provenance.session_id) });
        }
        fresh
    });
    skipped.sort_by(|a, b| a.file.cmp(&b.file));

    let mut labels_by_annotator = BTreeMap::new();
    for r in processed.iter().flat_map(|p| &p.records) {
        *labels_by_annotator.entry(annotator_key(&r.act)).or_insert(0) += 1;
    }
    let sessions: Vec<SessionSummary> = processed.iter().map(|p| p.summary.clone()).collect();
    let report = MetricsReport {
        format: REPORT_FORMAT.into(),
        alpha: options.alpha,
        n_perm: options.n_perm,
        seed: options.seed,
        corpus: Corpus { logs: processed.iter().map(|p| p.provenance.clone()).collect(), skipped },
        annotation: Annotation { annotator: annotator.name(), labels_by_annotator },
        cells: aggregate_cells(&sessions),
        tests: run_tests(&sessions, options),
        sessions,
    };
    let utterances = processed.into_iter().flat_map(|p| p.records).collect();
    Ok(Analysis { report, utterances })
}

pub fn aggregate_cells(sessions: &[SessionSummary]) -> Vec<CellMetrics> {
    let mut groups: BTreeMap<(ViewCondition, Seat, u32), Vec<&TrialMetrics>> = BTreeMap::new();
    for s in sessions {
        for t in &s.trials {
            groups.entry((s.view, s.role, t.trial_index)).or_default().push(t);
        }
    }
    groups
        .into_iter()
        .map(|((view, role, trial_index), ts)| {
            let n = ts.len() as f64;
            let words: u64 = ts.iter().map(|t| t.words).sum();
            let utterances: usize = ts.iter().map(|t| t.utterances).sum();
            let mut references = ReferenceCounts::default();
            let mut acts = empty_acts();
            let mut vocabulary = VocabularySizes::default();
            for t in &ts {
                references.merge(&t.references);
                for (a, c) in &t.acts {
                    *acts.entry(*a).or_default() += c;
                }
                vocabulary.human_only += t.vocabulary.human_only;
                vocabulary.ai_only += t.vocabulary.ai_only;
                vocabulary.joint += t.vocabulary.joint;
            }
            CellMetrics {
                view,
                role,
                trial_index,
                n_sessions: ts.len(),
                success_rate: ts.iter().filter(|t| t.success).count() as f64 / n,
                mean_words: words as f64 / n,
                mean_turns: utterances as f64 / n,
                words_per_turn: if utterances == 0 { 0.0 } else { words as f64 / utterances as f64 },
                utterances,
                references,
                acts,
                vocabulary,
            }
        })
        .collect()
}

fn entry(factor: &str, metric: &str, groups: &[&str], outcome: TestOutcome) -> TestEntry {
    TestEntry {
        factor: factor.into(),
        metric: metric.into(),
        groups: groups.iter().map(|g| g.to_string()).collect(),
        outcome,
    }
}

fn computed(r: Result<TestResult, crate::stats::StatsError>, alpha: f64) -> TestOutcome {
    match r {
        Ok(result) => TestOutcome::Computed { significant: result.significant(alpha), result },
        Err(e) => TestOutcome::NotComputable { reason: e.to_string() },
    }
}

fn two_group_tests(
    factor: &str,
    names: [&str; 2],
    groups: [Vec<&SessionSummary>; 2],
    options: &AnalyzeOptions,
    out: &mut Vec<TestEntry>,
) {
    let sizes = vec![groups[0].len(), groups[1].len()];
    let metrics = ["success", "words_per_session", "turns_per_trial"];
    if sizes.iter().any(|&n| n < MIN_PER_GROUP) {
        for m in metrics {
            out.push(entry(factor, m, &names, TestOutcome::InsufficientN { need: MIN_PER_GROUP, got: sizes.clone() }));
        }
        return;
    }
    let counts = groups.each_ref().map(|g| {
        let scored = g.iter().flat_map(|s| s.scored());
        let (succ, total) = scored.fold((0u64, 0u64), |(a, n), t| (a + t.success as u64, n + 1));
        [succ, total - succ]
    });
    out.push(entry(factor, metrics[0], &names, computed(chi_square_2x2(counts), options.alpha)));

    let words = groups.each_ref().map(|g| g.iter().map(|s| s.scored_words()).collect::<Vec<_>>());
    out.push(entry(factor, metrics[1], &names, computed(mann_whitney_u(&words[0], &words[1]), options.alpha)));

    let turns = groups.each_ref().map(|g| g.iter().map(|s| s.mean_scored_turns()).collect::<Vec<_>>());
    out.push(entry(
        factor,
        metrics[2],
        &names,
        computed(cluster_permutation_test(&turns[0], &turns[1], options.n_perm, options.seed), options.alpha),
    ));
}

fn trend_tests(sessions: &[SessionSummary], options: &AnalyzeOptions, out: &mut Vec<TestEntry>) {
    let series = |f: fn(&TrialMetrics) -> f64| -> Vec<Vec<f64>> {
        sessions
            .iter()
            .map(|s| s.scored().map(f).collect::<Vec<f64>>())
            .filter(|v| v.len() >= 2)
            .collect()
    };
    type Metric = (&'static str, fn(&TrialMetrics) -> f64);
    let metrics: [Metric; 2] =
        [("words_per_trial", |t| t.words as f64), ("turns_per_trial", |t| t.utterances as f64)];
    for (name, f) in metrics {
        let s = series(f);
        let outcome = if s.len() < MIN_PER_GROUP {
            TestOutcome::InsufficientN { need: MIN_PER_GROUP, got: vec![s.len()] }
        } else {
            computed(trial_trend(&s), options.alpha)
        };
        out.push(entry("trend", name, &["trials 1-4"], outcome));
    }
}

pub fn run_tests(sessions: &[SessionSummary], options: &AnalyzeOptions) -> Vec<TestEntry> {
    let mut out = Vec::new();
    let by = |pred: &dyn Fn(&SessionSummary) -> bool| sessions.iter().filter(|s| pred(s)).collect::<Vec<_>>();
    two_group_tests(
        "view",
        ["shared", "non_shared"],
        [by(&|s| s.view == ViewCondition::Shared), by(&|s| s.view == ViewCondition::NonShared)],
        options,
        &mut out,
    );
    two_group_tests(
        "role",
        ["helper", "worker"],
        [by(&|s| s.role == Seat::Helper), by(&|s| s.role == Seat::Worker)],
        options,
        &mut out,
    );
    trend_tests(sessions, options, &mut out);
    out
}

/// Formats a number exactly as it appears in the JSON report.
pub fn num<T: Serialize>(v: T) -> String {
    serde_json::to_string(&v).unwrap_or_default()
}

pub fn report_json(report: &MetricsReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn metrics_csv(report: &MetricsReport) -> String {
    let mut s = String::from("condition,role,trial,metric,value\n");
    for c in &report.cells {
        let mut rows: Vec<(String, String)> = vec![
            ("n_sessions".into(), num(c.n_sessions)),
            ("success_rate".into(), num(c.success_rate)),
            ("mean_words".into(), num(c.mean_words)),
            ("mean_turns".into(), num(c.mean_turns)),
            ("words_per_turn".into(), num(c.words_per_turn)),
            ("utterances".into(), num(c.utterances)),
        ];
        let r = &c.references;
        for (k, v) in [
            ("references", r.total),
            ("ref_definite", r.definite),
            ("ref_indefinite", r.indefinite),
            ("ref_bare", r.bare),
            ("ref_descriptive", r.descriptive),
            ("ref_identifier", r.identifier),
        ] {
            rows.push((k.into(), num(v)));
        }
        for (a, v) in &c.acts {
            rows.push((format!("act_{}", a.as_str()), num(v)));
        }
        rows.push(("vocab_human_only".into(), num(c.vocabulary.human_only)));
        rows.push(("vocab_ai_only".into(), num(c.vocabulary.ai_only)));
        rows.push(("vocab_joint".into(), num(c.vocabulary.joint)));
        for (metric, value) in rows {
            let _ = writeln!(s, "{},{},{},{},{}", c.view.as_str(), c.role, c.trial_index, metric, value);
        }
    }
    s
}

pub fn utterances_jsonl(records: &[UtteranceRecord]) -> String {
    records.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
}

/// Plain-text digest of the report. Every figure is copied from it.
pub fn summary_text(report: &MetricsReport) -> String {
    let mut s = String::new();
    let c = &report.corpus;
    let _ = writeln!(s, "Corpus: {} logs analyzed, {} skipped", num(c.logs.len()), num(c.skipped.len()));
    for k in &c.skipped {
        let _ = writeln!(s, "  skipped {}: {}", k.file, k.reason);
    }
    let _ = writeln!(s, "Annotator: {}", report.annotation.annotator);
    for (a, n) in &report.annotation.labels_by_annotator {
        let _ = writeln!(s, "  {a}: {} labels", num(n));
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "view        role    trial  n    success  words    turns    words/turn");
    for cell in &report.cells {
        let _ = writeln!(
            s,
            "{:<11} {:<7} {:<6} {:<4} {:<8} {:<8} {:<8} {}",
            cell.view.as_str(),
            cell.role.as_str(),
            num(cell.trial_index),
            num(cell.n_sessions),
            num(cell.success_rate),
            num(cell.mean_words),
            num(cell.mean_turns),
            num(cell.words_per_turn)
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "Tests (alpha {})", num(report.alpha));
    for t in &report.tests {
        let label = format!("{} / {} [{}]", t.factor, t.metric, t.groups.join(" vs "));
        match &t.outcome {
            TestOutcome::Computed { result, significant } => {
                let _ = writeln!(
                    s,
                    "  {label}: {} = {}, p = {}{}",
                    num(result.statistic_name).trim_matches('"'),
                    num(result.statistic_value),
                    num(result.p_value),
                    if *significant { " (significant)" } else { "" }
                );
            }
            TestOutcome::InsufficientN { .. } => {
                let _ = writeln!(s, "  {label}: insufficient n");
            }
            TestOutcome::NotComputable { reason } => {
                let _ = writeln!(s, "  {label}: not computable ({reason})");
            }
        }
    }
    s
}

/// Writes report.json, metrics.csv, utterances.jsonl and summary.txt.
pub fn write_outputs(analysis: &Analysis, out_dir: &Path) -> Result<Vec<PathBuf>, AnalyzeError> {
    let write = |name: &str, body: String| -> Result<PathBuf, AnalyzeError> {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(|e| AnalyzeError::Write { path: path.clone(), message: e.to_string() })?;
        Ok(path)
    };
    std::fs::create_dir_all(out_dir)
        .map_err(|e| AnalyzeError::Write { path: out_dir.to_path_buf(), message: e.to_string() })?;
    Ok(vec![
        write("report.json", report_json(&analysis.report))?,
        write("metrics.csv", metrics_csv(&analysis.report))?,
        write("utterances.jsonl", utterances_jsonl(&analysis.utterances))?,
        write("summary.txt", summary_text(&analysis.report))?,
    ])
}
