//! Experiment plans, grid expansion, parallel execution with resume, and the
//! on-disk result formats (`metrics.csv`, `manifest.json`, `index.json`,
//! summary document).

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{toml_table_to_overrides, EcosystemConfig};
use crate::ecosystem::{self, RunOutput};
use crate::error::{ConfigError, Error, Result};
use crate::metrics::{self, mean_se, MeanSe, MetricsRow, RunSummary};
use crate::niche::NicheGeometry;
use crate::sepcma::SolverSnapshot;
use crate::types::BELIEF_LEVELS;

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const INDEX_FILE: &str = "index.json";
pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Overrides applied to the defaults before any axis value.
    #[serde(default)]
    pub base: BTreeMap<String, Value>,
    #[serde(default)]
    pub axes: Vec<Axis>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

impl ExperimentPlan {
    pub fn from_toml_str(doc: &str) -> Result<Self> {
        let mut table: toml::Table = doc
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let base = match table.remove("base") {
            Some(toml::Value::Table(t)) => toml_table_to_overrides(&t)?.into_iter().collect(),
            Some(_) => return Err(ConfigError::Parse("`base` must be a table".into()).into()),
            None => BTreeMap::new(),
        };
        let rest = serde_json::to_value(&table)?;
        let mut plan: ExperimentPlan = serde_json::from_value(rest).map_err(|e| ConfigError::Parse(e.to_string()))?;
        plan.base = base;
        Ok(plan)
    }

    pub fn with_seed_count(mut self, n: u64) -> Self {
        self.seeds = (0..n).collect();
        self
    }

    /// Adds `key = value` to the base overrides, replacing any earlier value.
    pub fn with_override(mut self, key: &str, value: Value) -> Self {
        self.base.insert(key.to_string(), value);
        self
    }
}

fn axis(name: &str, values: Vec<Value>) -> Axis {
    Axis {
        name: name.to_string(),
        values,
    }
}

fn strings(xs: &[&str]) -> Vec<Value> {
    xs.iter().map(|s| Value::from(*s)).collect()
}

fn numbers(xs: &[f64]) -> Vec<Value> {
    xs.iter().map(|&x| Value::from(x)).collect()
}

const AI_TYPES: [&str; 8] = [
    "none", "act", "evolve", "fix", "influence", "all", "fix_at_zero", "all_zero",
];
const WEIGHT_UPDATES: [&str; 4] = ["fixed", "random", "momentum", "reward"];

pub const BUILTIN_PLANS: [&str; 7] = [
    "scenario1",
    "scenario2",
    "sweep-osparsity",
    "sweep-bsparsity",
    "sweep-influence",
    "sweep-truthfulness",
    "scale300",
];

pub fn builtin_plan(name: &str) -> Option<ExperimentPlan> {
    let plan = |name: &str, description: &str, base: &[(&str, Value)], axes: Vec<Axis>| ExperimentPlan {
        name: name.to_string(),
        description: description.to_string(),
        base: base.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        axes,
        seeds: default_seeds(),
    };
    let all_zero = ("ai_type", Value::from("all_zero"));
    let fixed = ("weight_update", Value::from("fixed"));
    Some(match name {
        "scenario1" => plan(
            name,
            "every AI type under every belief-weight rule",
            &[],
            vec![axis("ai_type", strings(&AI_TYPES)), axis("weight_update", strings(&WEIGHT_UPDATES))],
        ),
        "scenario2" => plan(
            name,
            "no capability, all capabilities, all capabilities with beliefs fixed at zero",
            &[],
            vec![
                axis("ai_type", strings(&["none", "all", "all_zero"])),
                axis("weight_update", strings(&WEIGHT_UPDATES)),
            ],
        ),
        "sweep-osparsity" => plan(
            name,
            "observation sparsity under all_zero",
            &[all_zero],
            vec![
                axis("weight_update", strings(&WEIGHT_UPDATES)),
                axis("o_sparsity", numbers(&[0.0, 0.1, 0.2, 0.5])),
            ],
        ),
        "sweep-bsparsity" => plan(
            name,
            "belief sparsity under all_zero",
            &[all_zero],
            vec![
                axis("weight_update", strings(&WEIGHT_UPDATES)),
                axis("b_sparsity", numbers(&[0.0, 0.1, 0.2, 0.5])),
            ],
        ),
        "sweep-influence" => plan(
            name,
            "weight of the influence term in recommendations under all_zero",
            &[all_zero, fixed],
            vec![axis("k_i", numbers(&[0.2, 0.5, 1.0, 2.0, 5.0]))],
        ),
        "sweep-truthfulness" => plan(
            name,
            "truthfulness penalty under all_zero",
            &[all_zero],
            vec![
                axis("weight_update", strings(&WEIGHT_UPDATES)),
                axis("lambda", numbers(&[0.01, 0.1, 1.0, 10.0])),
            ],
        ),
        "scale300" => {
            let mut p = plan(
                name,
                "300 agents under all_zero",
                &[all_zero, ("scale", Value::from(300)), ("diversity_interval", Value::from(0))],
                vec![axis("weight_update", strings(&WEIGHT_UPDATES))],
            );
            p.seeds = (0..3).collect();
            p
        }
        _ => return None,
    })
}

/// Built-in plan by name, or a TOML plan file.
pub fn load_plan(name_or_path: &str) -> Result<ExperimentPlan> {
    if let Some(p) = builtin_plan(name_or_path) {
        return Ok(p);
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        return Err(ConfigError::Parse(format!(
            "`{name_or_path}` is neither a built-in plan ({}) nor a readable file",
            BUILTIN_PLANS.join(", ")
        ))
        .into());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentPlan::from_toml_str(&text)
}

/// One (condition, seed) cell of an expanded plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedRun {
    pub condition: BTreeMap<String, Value>,
    pub condition_slug: String,
    pub seed: u64,
    pub config: EcosystemConfig,
    /// Directory relative to the output root.
    pub rel_dir: PathBuf,
}

fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn slug_part(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

/// Full factorial expansion: axes vary in declaration order (last axis
/// fastest), seeds ascending innermost.
pub fn expand(plan: &ExperimentPlan) -> Result<Vec<PlannedRun>> {
    let mut seen = HashSet::new();
    if let Some(dup) = plan.seeds.iter().find(|s| !seen.insert(**s)) {
        return Err(Error::Plan {
            axis: "seeds".into(),
            source: ConfigError::invalid("seeds", format!("seed {dup} listed more than once")),
        });
    }
    let mut base = EcosystemConfig::default();
    for (k, v) in &plan.base {
        base.set(k, v).map_err(|source| Error::Plan {
            axis: format!("base.{k}"),
            source,
        })?;
    }
    if let Some(empty) = plan.axes.iter().find(|a| a.values.is_empty()) {
        return Err(Error::Plan {
            axis: empty.name.clone(),
            source: ConfigError::invalid(&empty.name, "axis has no values"),
        });
    }

    let mut combos: Vec<Vec<(usize, usize)>> = vec![Vec::new()];
    for (a, ax) in plan.axes.iter().enumerate() {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                (0..ax.values.len()).map(move |v| {
                    let mut next = c.clone();
                    next.push((a, v));
                    next
                })
            })
            .collect();
    }

    let mut runs = Vec::with_capacity(combos.len() * plan.seeds.len());
    for combo in combos {
        let mut cfg = base.clone();
        let mut condition = BTreeMap::new();
        let mut parts = Vec::new();
        for (a, v) in combo {
            let ax = &plan.axes[a];
            let value = &ax.values[v];
            cfg.set(&ax.name, value).map_err(|source| Error::Plan {
                axis: ax.name.clone(),
                source,
            })?;
            condition.insert(ax.name.clone(), value.clone());
            parts.push(format!("{}-{}", slug_part(&ax.name), slug_part(&value_label(value))));
        }
        let slug = if parts.is_empty() { "base".to_string() } else { parts.join("__") };
        for &seed in &plan.seeds {
            let mut c = cfg.clone();
            c.seed = seed;
            c.validate().map_err(|source| Error::Plan {
                axis: plan.axes.last().map_or_else(|| "base".to_string(), |a| a.name.clone()),
                source,
            })?;
            runs.push(PlannedRun {
                condition: condition.clone(),
                condition_slug: slug.clone(),
                seed,
                config: c,
                rel_dir: PathBuf::from(&slug).join(format!("seed-{seed}")),
            });
        }
    }
    Ok(runs)
}

/// Everything recorded next to a run's metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub condition: BTreeMap<String, Value>,
    pub condition_slug: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: EcosystemConfig,
    pub niche: NicheGeometry,
    pub summary: RunSummary,
    pub solver_snapshots: Vec<SolverSnapshot>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn metrics_header(n_subpops: usize) -> Vec<String> {
    let mut h: Vec<String> = ["generation", "r_aiv", "r_aif", "r_aif_reliable", "r_hb0", "total_views"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..n_subpops).map(|p| format!("within_diversity_{p}")));
    h.push("between_diversity".into());
    for p in 0..n_subpops {
        h.extend((0..BELIEF_LEVELS).map(|b| format!("hist_{p}_{b}")));
    }
    h
}

/// Serializes per-generation rows; diversity cells are empty on generations
/// where it was not computed.
pub fn metrics_csv(rows: &[MetricsRow], n_subpops: usize) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(metrics_header(n_subpops))?;
    for r in rows {
        let mut rec = vec![
            r.generation.to_string(),
            r.r_aiv.to_string(),
            r.r_aif.to_string(),
            r.r_aif_reliable.to_string(),
            r.r_hb0.to_string(),
            r.total_views.to_string(),
        ];
        for p in 0..n_subpops {
            rec.push(r.within_diversity.get(p).map_or_else(String::new, |d| d.to_string()));
        }
        rec.push(r.between_diversity.map_or_else(String::new, |d| d.to_string()));
        for h in &r.histograms {
            rec.extend(h.iter().map(|c| c.to_string()));
        }
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::InvalidInput(format!("csv buffer: {e}")))
}

fn parse_cell<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, path: &Path) -> Result<T> {
    rec.get(idx)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::InvalidInput(format!("{}: bad cell in column {idx}", path.display())))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let n_subpops = header.iter().filter(|h| h.starts_with("within_diversity_")).count();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let mut within = Vec::new();
        for p in 0..n_subpops {
            let cell = &rec[6 + p];
            if !cell.is_empty() {
                within.push(parse_cell(&rec, 6 + p, path)?);
            }
        }
        let between_idx = 6 + n_subpops;
        let between = (!rec[between_idx].is_empty())
            .then(|| parse_cell(&rec, between_idx, path))
            .transpose()?;
        let mut histograms = Vec::with_capacity(n_subpops);
        for p in 0..n_subpops {
            let mut h = [0u32; BELIEF_LEVELS];
            for (b, slot) in h.iter_mut().enumerate() {
                *slot = parse_cell(&rec, between_idx + 1 + p * BELIEF_LEVELS + b, path)?;
            }
            histograms.push(h);
        }
        rows.push(MetricsRow {
            generation: parse_cell(&rec, 0, path)?,
            r_aiv: parse_cell(&rec, 1, path)?,
            r_aif: parse_cell(&rec, 2, path)?,
            r_aif_reliable: parse_cell(&rec, 3, path)?,
            r_hb0: parse_cell(&rec, 4, path)?,
            total_views: parse_cell(&rec, 5, path)?,
            within_diversity: within,
            between_diversity: between,
            histograms,
        });
    }
    Ok(rows)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Runs one planned cell and writes its files under `out_root`.
pub fn run_and_write(planned: &PlannedRun, out_root: &Path) -> Result<RunSummary> {
    let output: RunOutput = ecosystem::run(&planned.config)?;
    let dir = out_root.join(&planned.rel_dir);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_atomic(
        &dir.join(METRICS_FILE),
        &metrics_csv(&output.rows, planned.config.subpop_sizes.len())?,
    )?;
    let manifest = RunManifest {
        schema_version: MANIFEST_SCHEMA,
        condition: planned.condition.clone(),
        condition_slug: planned.condition_slug.clone(),
        seed: planned.seed,
        config_hash: planned.config.content_hash(),
        config: planned.config.clone(),
        niche: output.niche,
        summary: output.summary.clone(),
        solver_snapshots: output.solver_snapshots,
    };
    // the manifest goes last: its presence marks the run complete
    write_atomic(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(output.summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub condition_slug: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub config_hash: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub plan: String,
    pub total: usize,
    pub completed: usize,
    pub skipped: usize,
    pub failed: usize,
    pub runs: Vec<RunRecord>,
}

impl ExecutionReport {
    pub fn exit_code(&self) -> i32 {
        if self.failed > 0 {
            1
        } else {
            0
        }
    }
}

fn already_done(planned: &PlannedRun, out_root: &Path, hash: &str) -> bool {
    let path = out_root.join(&planned.rel_dir).join(MANIFEST_FILE);
    path.exists()
        && out_root.join(&planned.rel_dir).join(METRICS_FILE).exists()
        && read_manifest(&path).is_ok_and(|m| m.config_hash == hash)
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "run panicked".to_string())
}

/// Runs every cell of `plan` on `workers` threads. Cells whose manifest
/// already matches their config hash are skipped. `on_record` is called as
/// each cell finishes.
pub fn execute(
    plan: &ExperimentPlan,
    out_root: &Path,
    workers: usize,
    on_record: &(dyn Fn(&RunRecord) + Sync),
) -> Result<ExecutionReport> {
    let runs = expand(plan)?;
    fs::create_dir_all(out_root).map_err(|e| Error::io(out_root, e))?;
    let next = AtomicUsize::new(0);
    let records: Mutex<Vec<Option<RunRecord>>> = Mutex::new(vec![None; runs.len()]);
    let workers = workers.max(1).min(runs.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(planned) = runs.get(k) else { break };
                let hash = planned.config.content_hash();
                let (status, error) = if already_done(planned, out_root, &hash) {
                    (RunStatus::Skipped, None)
                } else {
                    match catch_unwind(AssertUnwindSafe(|| run_and_write(planned, out_root))) {
                        Ok(Ok(_)) => (RunStatus::Completed, None),
                        Ok(Err(e)) => (RunStatus::Failed, Some(e.to_string())),
                        Err(p) => (RunStatus::Failed, Some(panic_message(p))),
                    }
                };
                if let Some(e) = &error {
                    tracing::error!(run = %planned.rel_dir.display(), "run failed: {e}");
                }
                let record = RunRecord {
                    condition_slug: planned.condition_slug.clone(),
                    seed: planned.seed,
                    dir: planned.rel_dir.clone(),
                    config_hash: hash,
                    status,
                    error,
                };
                on_record(&record);
                records.lock().expect("records lock")[k] = Some(record);
            });
        }
    });

    let runs: Vec<RunRecord> = records
        .into_inner()
        .expect("records lock")
        .into_iter()
        .map(|r| r.expect("every run recorded"))
        .collect();
    let count = |s: RunStatus| runs.iter().filter(|r| r.status == s).count();
    let report = ExecutionReport {
        plan: plan.name.clone(),
        total: runs.len(),
        completed: count(RunStatus::Completed),
        skipped: count(RunStatus::Skipped),
        failed: count(RunStatus::Failed),
        runs,
    };
    write_atomic(&out_root.join(INDEX_FILE), &serde_json::to_vec_pretty(&report)?)?;
    Ok(report)
}

/// Mean and standard error of every run-level statistic for one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition_slug: String,
    pub condition: BTreeMap<String, Value>,
    pub seeds: Vec<u64>,
    pub metrics: BTreeMap<String, MeanSe>,
    /// Final human belief histogram summed over seeds.
    pub human_histogram_final: [u64; BELIEF_LEVELS],
    pub unreliable_fitness_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDocument {
    pub schema_version: u32,
    pub conditions: Vec<ConditionSummary>,
}

impl SummaryDocument {
    pub fn condition(&self, slug: &str) -> Option<&ConditionSummary> {
        self.conditions.iter().find(|c| c.condition_slug == slug)
    }
}

fn run_metrics(s: &RunSummary) -> Vec<(&'static str, Option<f64>)> {
    vec![
        ("r_aiv_window", Some(s.r_aiv_window)),
        ("r_aiv_final", Some(s.r_aiv_final)),
        ("r_aif_window", Some(s.r_aif_window)),
        ("r_aif_final", Some(s.r_aif_final)),
        ("r_hb0_window", Some(s.r_hb0_window)),
        ("r_hb0_final", Some(s.r_hb0_final)),
        ("within_diversity_final", s.within_diversity_final),
        ("between_diversity_final", s.between_diversity_final),
    ]
}

/// Builds the summary document from every run directory under `in_dir`.
/// Run statistics are recomputed from each `metrics.csv`; the manifest
/// supplies the condition and the reporting window.
pub fn summarize(in_dir: &Path) -> Result<SummaryDocument> {
    struct Acc {
        condition: BTreeMap<String, Value>,
        seeds: Vec<u64>,
        values: BTreeMap<&'static str, Vec<f64>>,
        hist: [u64; BELIEF_LEVELS],
        unreliable: usize,
    }
    let mut groups: BTreeMap<String, Acc> = BTreeMap::new();
    let mut manifests: Vec<PathBuf> = walkdir::WalkDir::new(in_dir)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file() && e.file_name() == MANIFEST_FILE)
        .map(|e| e.into_path())
        .collect();
    manifests.sort();
    for path in manifests {
        let manifest = read_manifest(&path)?;
        let csv_path = path.with_file_name(METRICS_FILE);
        let rows = read_metrics_csv(&csv_path)?;
        let s = metrics::summarize_run(&rows, manifest.config.report_window)?;
        let acc = groups.entry(manifest.condition_slug.clone()).or_insert_with(|| Acc {
            condition: manifest.condition.clone(),
            seeds: Vec::new(),
            values: BTreeMap::new(),
            hist: [0; BELIEF_LEVELS],
            unreliable: 0,
        });
        acc.seeds.push(manifest.seed);
        for (k, v) in run_metrics(&s) {
            if let Some(v) = v {
                acc.values.entry(k).or_default().push(v);
            }
        }
        for (h, c) in acc.hist.iter_mut().zip(s.human_histogram_final) {
            *h += c as u64;
        }
        if !s.r_aif_reliable {
            acc.unreliable += 1;
        }
    }
    let conditions = groups
        .into_iter()
        .map(|(slug, mut acc)| {
            acc.seeds.sort_unstable();
            ConditionSummary {
                condition_slug: slug,
                condition: acc.condition,
                seeds: acc.seeds,
                metrics: acc
                    .values
                    .iter()
                    .filter_map(|(k, v)| mean_se(v).map(|m| (k.to_string(), m)))
                    .collect(),
                human_histogram_final: acc.hist,
                unreliable_fitness_runs: acc.unreliable,
            }
        })
        .collect();
    Ok(SummaryDocument {
        schema_version: MANIFEST_SCHEMA,
        conditions,
    })
}

/// [`summarize`] and write the document as JSON.
pub fn summarize_to_file(in_dir: &Path, out_file: &Path) -> Result<SummaryDocument> {
    let doc = summarize(in_dir)?;
    if let Some(parent) = out_file.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_atomic(out_file, &serde_json::to_vec_pretty(&doc)?)?;
    Ok(doc)
}
