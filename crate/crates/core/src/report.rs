//! Per-app pipeline driver and corpus-level aggregation.
//!
//! `run_app` runs parse, graph construction, taint analysis and sensor
//! inference under one time budget and never panics on bad input; the batch
//! driver fans apps out to worker threads and merges reports in app-id order.
//! JSON output is schema-stable: struct key order is fixed and all lists are
//! deterministically sorted.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::config::SourceSinkConfig;
use crate::graphs::EntryPointModel;
use crate::ir::parse_program;
use crate::sensor::{attribute_all, SensorAttribution, Verdict};
use crate::taint::{analyze_with_options, AnalysisOptions, LeakFlow};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AppStatus {
    Ok,
    TimeoutPartial,
    ParseError,
}

/// One leak with its sensor attribution, as reported.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakEntry {
    #[serde(flatten)]
    pub flow: LeakFlow,
    /// Display name of the inferred sensor, `ambiguous`, or `unknown`.
    pub sensor_type: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sensor_candidates: Vec<String>,
    pub attribution_evidence: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribution_conflict: Option<String>,
}

impl LeakEntry {
    fn new(flow: LeakFlow, attribution: SensorAttribution) -> Self {
        let (sensor_type, candidates) = match attribution.verdict {
            Verdict::Inferred(name) => (name, Vec::new()),
            Verdict::Ambiguous(candidates) => ("ambiguous".to_string(), candidates),
            Verdict::Unknown => ("unknown".to_string(), Vec::new()),
        };
        Self {
            flow,
            sensor_type,
            sensor_candidates: candidates,
            attribution_evidence: attribution.evidence.as_str().to_string(),
            attribution_conflict: attribution.conflict_with,
        }
    }

    pub fn is_inferred(&self) -> bool {
        self.sensor_type != "ambiguous" && self.sensor_type != "unknown"
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timings {
    pub parse_ms: u64,
    pub graphs_ms: u64,
    pub taint_ms: u64,
    pub inference_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppReport {
    pub schema_version: u32,
    pub app: String,
    pub status: AppStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub leaks: Vec<LeakEntry>,
    pub timings: Timings,
}

impl AppReport {
    fn parse_error(app: &str, message: String, timings: Timings) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            app: app.to_string(),
            status: AppStatus::ParseError,
            error: Some(message),
            leaks: Vec::new(),
            timings,
        }
    }
}

/// Analyze one app given as IR text. The budget covers the whole pipeline.
pub fn run_app_source(
    app: &str,
    text: &str,
    config: &SourceSinkConfig,
    budget: Duration,
) -> AppReport {
    run_app_source_with_options(app, text, config, budget, AnalysisOptions::default())
}

pub fn run_app_source_with_options(
    app: &str,
    text: &str,
    config: &SourceSinkConfig,
    budget: Duration,
    options: AnalysisOptions,
) -> AppReport {
    let started = Instant::now();
    let deadline = started.checked_add(budget);
    let mut timings = Timings::default();

    let parse_started = Instant::now();
    let program = match parse_program(text) {
        Ok(program) => program,
        Err(err) => {
            timings.parse_ms = parse_started.elapsed().as_millis() as u64;
            return AppReport::parse_error(app, err.to_string(), timings);
        }
    };
    timings.parse_ms = parse_started.elapsed().as_millis() as u64;

    let entry_model = EntryPointModel::default_android();
    let graphs_started = Instant::now();
    let _callgraph = crate::graphs::build_callgraph(&program, &entry_model);
    timings.graphs_ms = graphs_started.elapsed().as_millis() as u64;

    let taint_started = Instant::now();
    let result = analyze_with_options(&program, config, &entry_model, deadline, options);
    timings.taint_ms = taint_started.elapsed().as_millis() as u64;

    let inference_started = Instant::now();
    let attributions = attribute_all(&result.flows, &program, config);
    timings.inference_ms = inference_started.elapsed().as_millis() as u64;

    let leaks: Vec<LeakEntry> = result
        .flows
        .into_iter()
        .zip(attributions)
        .map(|(flow, attribution)| LeakEntry::new(flow, attribution))
        .collect();

    AppReport {
        schema_version: SCHEMA_VERSION,
        app: app.to_string(),
        status: if result.complete {
            AppStatus::Ok
        } else {
            AppStatus::TimeoutPartial
        },
        error: None,
        leaks,
        timings,
    }
}

/// Analyze one app from a file; IO failures become parse-error reports.
pub fn run_app(path: &Path, config: &SourceSinkConfig, budget: Duration) -> AppReport {
    let app = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    match std::fs::read_to_string(path) {
        Ok(text) => run_app_source(&app, &text, config, budget),
        Err(err) => AppReport::parse_error(
            &app,
            format!("cannot read {}: {err}", path.display()),
            Timings::default(),
        ),
    }
}

#[derive(Debug, Clone)]
pub struct BatchOptions {
    pub budget: Duration,
    pub workers: usize,
    /// Skip apps whose text never mentions `android.hardware.sensor`.
    pub prefilter: bool,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            budget: Duration::from_secs(20 * 60),
            workers: 1,
            prefilter: false,
        }
    }
}

/// Resolve an input path to (app id, file path) pairs: a file stands alone,
/// a directory is scanned recursively for `.ir` files. Ids are paths relative
/// to the scanned root, sorted.
pub fn collect_apps(input: &Path) -> io::Result<Vec<(String, PathBuf)>> {
    let meta = std::fs::metadata(input)?;
    if meta.is_file() {
        let id = input
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| input.display().to_string());
        return Ok(vec![(id, input.to_path_buf())]);
    }
    let mut apps = Vec::new();
    for entry in WalkDir::new(input).sort_by_file_name() {
        let entry = entry.map_err(io::Error::other)?;
        if !entry.file_type().is_file() {
            continue;
        }
        if entry.path().extension().and_then(|e| e.to_str()) != Some("ir") {
            continue;
        }
        let id = entry
            .path()
            .strip_prefix(input)
            .unwrap_or(entry.path())
            .to_string_lossy()
            .into_owned();
        apps.push((id, entry.path().to_path_buf()));
    }
    apps.sort();
    Ok(apps)
}

fn passes_prefilter(text: &str) -> bool {
    text.to_lowercase().contains("android.hardware.sensor")
}

/// Run a batch of apps. Apps are independent: a batch over N apps equals N
/// `run_app` calls; workers only change wall-clock time, not results. Reports
/// come back sorted by app id.
pub fn run_batch(
    apps: &[(String, PathBuf)],
    config: &SourceSinkConfig,
    options: &BatchOptions,
) -> Vec<AppReport> {
    let inputs: Vec<(String, Result<String, String>)> = apps
        .iter()
        .map(|(id, path)| {
            let text = std::fs::read_to_string(path)
                .map_err(|err| format!("cannot read {}: {err}", path.display()));
            (id.clone(), text)
        })
        .collect();

    let slots: Vec<Mutex<Option<AppReport>>> = inputs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = options.workers.max(1).min(inputs.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= inputs.len() {
                    break;
                }
                let (id, text) = &inputs[i];
                let report = match text {
                    Ok(text) => {
                        if options.prefilter && !passes_prefilter(text) {
                            None
                        } else {
                            Some(run_app_source(id, text, config, options.budget))
                        }
                    }
                    Err(message) => Some(AppReport::parse_error(
                        id,
                        message.clone(),
                        Timings::default(),
                    )),
                };
                *slots[i].lock().unwrap() = report;
            });
        }
    });

    let mut reports: Vec<AppReport> = slots
        .into_iter()
        .filter_map(|slot| slot.into_inner().unwrap())
        .collect();
    reports.sort_by(|a, b| a.app.cmp(&b.app));
    reports
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountEntry {
    pub name: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PerAppCount {
    pub app: String,
    pub leaks: u64,
}

/// Corpus-level aggregation: totals, field-vs-method split, ranked source and
/// sensor-type frequency lists, and the per-app leak distribution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub schema_version: u32,
    pub apps_analyzed: u64,
    pub apps_with_leaks: u64,
    pub total_leaks: u64,
    pub field_leaks: u64,
    pub method_leaks: u64,
    pub inferred_attributions: u64,
    pub ambiguous_attributions: u64,
    pub unknown_attributions: u64,
    pub by_source: Vec<CountEntry>,
    pub by_sensor_type: Vec<CountEntry>,
    pub per_app: Vec<PerAppCount>,
}

fn ranked(counts: BTreeMap<String, u64>) -> Vec<CountEntry> {
    let mut entries: Vec<CountEntry> = counts
        .into_iter()
        .map(|(name, count)| CountEntry { name, count })
        .collect();
    entries.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.name.cmp(&b.name)));
    entries
}

pub fn summarize(reports: &[AppReport]) -> CorpusSummary {
    let mut by_source: BTreeMap<String, u64> = BTreeMap::new();
    let mut by_sensor_type: BTreeMap<String, u64> = BTreeMap::new();
    let mut per_app = Vec::with_capacity(reports.len());
    let mut field_leaks = 0;
    let mut method_leaks = 0;
    let mut inferred = 0;
    let mut ambiguous = 0;
    let mut unknown = 0;

    for report in reports {
        per_app.push(PerAppCount {
            app: report.app.clone(),
            leaks: report.leaks.len() as u64,
        });
        for leak in &report.leaks {
            *by_source
                .entry(leak.flow.source.signature.clone())
                .or_default() += 1;
            match leak.flow.source.kind.as_str() {
                "field" => field_leaks += 1,
                _ => method_leaks += 1,
            }
            match leak.sensor_type.as_str() {
                "ambiguous" => ambiguous += 1,
                "unknown" => unknown += 1,
                name => {
                    inferred += 1;
                    *by_sensor_type.entry(name.to_string()).or_default() += 1;
                }
            }
        }
    }
    per_app.sort();

    CorpusSummary {
        schema_version: SCHEMA_VERSION,
        apps_analyzed: reports.len() as u64,
        apps_with_leaks: reports.iter().filter(|r| !r.leaks.is_empty()).count() as u64,
        total_leaks: (field_leaks + method_leaks) as u64,
        field_leaks: field_leaks as u64,
        method_leaks: method_leaks as u64,
        inferred_attributions: inferred as u64,
        ambiguous_attributions: ambiguous as u64,
        unknown_attributions: unknown as u64,
        by_source: ranked(by_source),
        by_sensor_type: ranked(by_sensor_type),
        per_app,
    }
}

/// Whole batch output: per-app reports plus the corpus summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchReport {
    pub apps: Vec<AppReport>,
    pub summary: CorpusSummary,
}

/// Deterministic pretty JSON (fixed key order, trailing newline).
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut out = serde_json::to_string_pretty(value).expect("report types serialize");
    out.push('\n');
    out
}

pub fn app_report_to_text(report: &AppReport) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let status = match report.status {
        AppStatus::Ok => "ok",
        AppStatus::TimeoutPartial => "timeout-partial",
        AppStatus::ParseError => "parse-error",
    };
    writeln!(
        out,
        "app {}: {status}, {} leak(s) [parse {}ms, graphs {}ms, taint {}ms, inference {}ms]",
        report.app,
        report.leaks.len(),
        report.timings.parse_ms,
        report.timings.graphs_ms,
        report.timings.taint_ms,
        report.timings.inference_ms
    )
    .unwrap();
    if let Some(error) = &report.error {
        writeln!(out, "  error: {error}").unwrap();
    }
    for (i, leak) in report.leaks.iter().enumerate() {
        writeln!(
            out,
            "  leak {}: {} {} -> {} at {}",
            i + 1,
            leak.flow.source.kind,
            leak.flow.source.signature,
            leak.flow.sink.signature,
            leak.flow.sink.position
        )
        .unwrap();
        let sensor = if leak.sensor_candidates.is_empty() {
            leak.sensor_type.clone()
        } else {
            format!(
                "{} ({})",
                leak.sensor_type,
                leak.sensor_candidates.join(", ")
            )
        };
        writeln!(out, "    sensor: {sensor} [{}]", leak.attribution_evidence).unwrap();
        if let Some(conflict) = &leak.attribution_conflict {
            writeln!(out, "    single-registration rule disagreed: {conflict}").unwrap();
        }
        writeln!(out, "    path:").unwrap();
        for step in &leak.flow.witness_path {
            writeln!(out, "      {} [{}] {}", step.method, step.index, step.stmt).unwrap();
        }
    }
    out
}

pub fn summary_to_text(summary: &CorpusSummary) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    writeln!(out, "apps analyzed: {}", summary.apps_analyzed).unwrap();
    writeln!(out, "apps with leaks: {}", summary.apps_with_leaks).unwrap();
    writeln!(
        out,
        "total leaks: {} (field {}, method {})",
        summary.total_leaks, summary.field_leaks, summary.method_leaks
    )
    .unwrap();
    writeln!(
        out,
        "attribution: {} inferred, {} ambiguous, {} unknown",
        summary.inferred_attributions, summary.ambiguous_attributions, summary.unknown_attributions
    )
    .unwrap();
    writeln!(out, "by source:").unwrap();
    for entry in &summary.by_source {
        writeln!(out, "  {}: {}", entry.name, entry.count).unwrap();
    }
    writeln!(out, "by sensor type:").unwrap();
    for entry in &summary.by_sensor_type {
        writeln!(out, "  {}: {}", entry.name, entry.count).unwrap();
    }
    writeln!(out, "per app:").unwrap();
    for entry in &summary.per_app {
        writeln!(out, "  {}: {}", entry.app, entry.leaks).unwrap();
    }
    out
}

pub fn batch_to_text(batch: &BatchReport) -> String {
    let mut out = String::new();
    for report in &batch.apps {
        out.push_str(&app_report_to_text(report));
    }
    out.push('\n');
    out.push_str(&summary_to_text(&batch.summary));
    out
}
