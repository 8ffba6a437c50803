//! Acceptance criteria A1-A8 and the P1 property suite.
//!
//! Full-length runs go through the experiment executor into a cache under
//! the cargo target directory, keyed by a fingerprint of this crate's
//! sources, so only the first invocation after a code change pays for them
//! (about 45 minutes on one core). Every criterion prints one line:
//! `ACCEPTANCE <id> PASS|FAIL <detail>`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use digico_core::belief::{belief_scores, sample_belief, BeliefUpdateContext};
use digico_core::ecosystem::{run, sample_observations, RunState};
use digico_core::experiment::{
    execute, expand, summarize, Axis, ConditionSummary, ExperimentPlan, SummaryDocument, METRICS_FILE,
};
use digico_core::rng::{rng_stream, BELIEF, OBSERVATION};
use digico_core::sepcma::{init_solver, SepCmaParams};
use digico_core::{AiType, Belief, EcosystemConfig, WeightUpdate};

// ---------------------------------------------------------------- tolerances

const A1_AIV: (f64, f64) = (0.34, 0.06);
const A2_AIV: (f64, f64) = (0.84, 0.08);
const A2_AIF: (f64, f64) = (0.88, 0.08);
const A3_FIX_AT_ZERO_HB0: (f64, f64) = (0.48, 0.20);
const A3_ALL_ZERO_FIXED_HB0: (f64, f64) = (0.72, 0.12);
const A3_ALL_ZERO_RANDOM_HB0: (f64, f64) = (0.22, 0.08);
const A4_K_I: [f64; 5] = [0.2, 0.5, 1.0, 2.0, 5.0];
const A4_LOW_AIV: (f64, f64) = (0.60, 0.08);
const A4_HIGH_AIV: (f64, f64) = (0.95, 0.04);
const A5_MIN_GAIN: f64 = 0.08;
const A5_HB0_AT_HALF: (f64, f64) = (0.85, 0.10);
const A6_REWARD_DROP: (f64, f64) = (0.08, 0.06);
const A6_OTHER_MAX_SHIFT: f64 = 0.05;
const A7_AIV: (f64, f64) = (0.79, 0.05);
const A7_HB0: (f64, f64) = (0.12, 0.04);
const A7_MIN_P: f64 = 0.01;
const A8_WITHIN: (f64, f64) = (0.1, 0.1);
const A8_BETWEEN: (f64, f64) = (1.0, 1.8);

const P1_BELIEF_DRAWS: usize = 1_000_000;
const P1_BELIEF_REL_TOL: f64 = 0.005;
const P1_OBS_DRAWS: usize = 400_000;
const P1_OBS_REL_TOL: f64 = 0.01;
const P1_SPHERE_GAIN: f64 = 100.0;

const SEEDS_GRID: u64 = 10;
const SEEDS_SWEEP: u64 = 3;
const SEEDS_SWEEP_HB0: u64 = 10;
const SEEDS_SCALE: u64 = 3;

// ------------------------------------------------------------------- helpers

fn line(id: &str, ok: bool, detail: String) -> bool {
    // written past the test harness's capture so the line always shows
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "ACCEPTANCE {id} {} {detail}", if ok { "PASS" } else { "FAIL" });
    let _ = out.flush();
    ok
}

fn within(v: f64, (target, tol): (f64, f64)) -> bool {
    (v - target).abs() <= tol
}

fn source_fingerprint() -> String {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("src");
    let mut files: Vec<PathBuf> = walkdir::WalkDir::new(&src)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .collect();
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(&src).unwrap().to_string_lossy().as_bytes());
        h.update(std::fs::read(&f).unwrap());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn cache_root() -> &'static Path {
    static ROOT: OnceLock<PathBuf> = OnceLock::new();
    ROOT.get_or_init(|| {
        let base = std::env::var_os("DIGICO_ACCEPTANCE_CACHE")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance"));
        base.join(source_fingerprint())
    })
}

/// Runs (or reuses) every cell of `plan` and summarizes it. Executions are
/// serialized: tests share cells and the machine may have a single core.
fn results(plan: ExperimentPlan) -> SummaryDocument {
    static LOCK: Mutex<()> = Mutex::new(());
    let _guard = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let dir = cache_root().join(&plan.name);
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let report = execute(&plan, &dir, workers, &|_| {}).expect("plan executes");
    assert_eq!(report.failed, 0, "failed runs in {}: {:?}", plan.name, report.runs);
    summarize(&dir).expect("summary")
}

fn plan(name: &str, base: &[(&str, Value)], axes: &[(&str, Vec<Value>)], seeds: u64) -> ExperimentPlan {
    ExperimentPlan {
        name: name.to_string(),
        description: String::new(),
        base: base.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        axes: axes
            .iter()
            .map(|(n, v)| Axis {
                name: n.to_string(),
                values: v.clone(),
            })
            .collect(),
        seeds: (0..seeds).collect(),
    }
}

fn strs(xs: &[&str]) -> Vec<Value> {
    xs.iter().map(|s| json!(s)).collect()
}

const WEIGHT_UPDATES: [&str; 4] = ["fixed", "random", "momentum", "reward"];

/// ai_type x weight_update for the three headline AI types, 10 seeds.
fn grid() -> &'static SummaryDocument {
    static DOC: OnceLock<SummaryDocument> = OnceLock::new();
    DOC.get_or_init(|| {
        results(plan(
            "grid",
            &[],
            &[
                ("ai_type", strs(&["none", "fix_at_zero", "all_zero"])),
                ("weight_update", strs(&WEIGHT_UPDATES)),
            ],
            SEEDS_GRID,
        ))
    })
}

fn cell<'a>(doc: &'a SummaryDocument, slug: &str) -> &'a ConditionSummary {
    doc.condition(slug).unwrap_or_else(|| panic!("missing condition {slug}"))
}

fn metric(c: &ConditionSummary, name: &str) -> f64 {
    c.metrics.get(name).unwrap_or_else(|| panic!("{} has no {name}", c.condition_slug)).mean
}

/// Mean of a metric over the per-run values of several conditions.
fn pooled(doc: &SummaryDocument, slugs: &[String], name: &str) -> f64 {
    let (sum, n) = slugs.iter().map(|s| cell(doc, s)).fold((0.0, 0usize), |(sum, n), c| {
        let m = &c.metrics[name];
        (sum + m.mean * m.n as f64, n + m.n)
    });
    sum / n as f64
}

fn grid_slugs(ai_type: &str) -> Vec<String> {
    WEIGHT_UPDATES
        .iter()
        .map(|w| format!("ai_type-{ai_type}__weight_update-{w}"))
        .collect()
}

// ---------------------------------------------------------------- criteria

#[test]
fn a1_chance_baseline() {
    let doc = grid();
    let mut ok = true;
    let mut parts = Vec::new();
    for slug in grid_slugs("none") {
        let v = metric(cell(doc, &slug), "r_aiv_window");
        ok &= within(v, A1_AIV);
        parts.push(format!("{}={v:.4}", slug.rsplit('-').next().unwrap()));
    }
    assert!(line(
        "A1",
        ok,
        format!("None r_AIV per weight update {} (target {} +- {})", parts.join(" "), A1_AIV.0, A1_AIV.1)
    ));
}

#[test]
fn a2_full_capability_dominance() {
    let doc = grid();
    let slugs = grid_slugs("all_zero");
    let aiv = pooled(doc, &slugs, "r_aiv_window");
    let aif = pooled(doc, &slugs, "r_aif_window");
    let ok = within(aiv, A2_AIV) && within(aif, A2_AIF);
    assert!(line(
        "A2",
        ok,
        format!(
            "All Zero r_AIV={aiv:.4} (target {} +- {}), r_AIF={aif:.4} (target {} +- {})",
            A2_AIV.0, A2_AIV.1, A2_AIF.0, A2_AIF.1
        )
    ));
}

#[test]
fn a3_propaganda_effectiveness() {
    let doc = grid();
    let fz = pooled(doc, &grid_slugs("fix_at_zero"), "r_hb0_final");
    let azf = metric(cell(doc, "ai_type-all_zero__weight_update-fixed"), "r_hb0_final");
    let azr = metric(cell(doc, "ai_type-all_zero__weight_update-random"), "r_hb0_final");
    let ok = within(fz, A3_FIX_AT_ZERO_HB0) && within(azf, A3_ALL_ZERO_FIXED_HB0) && within(azr, A3_ALL_ZERO_RANDOM_HB0);
    assert!(line(
        "A3",
        ok,
        format!(
            "r_HB0 Fix-at-Zero={fz:.4} (target {} +- {}), All Zero Fixed={azf:.4} (target {} +- {}), All Zero Random={azr:.4} (target {} +- {})",
            A3_FIX_AT_ZERO_HB0.0,
            A3_FIX_AT_ZERO_HB0.1,
            A3_ALL_ZERO_FIXED_HB0.0,
            A3_ALL_ZERO_FIXED_HB0.1,
            A3_ALL_ZERO_RANDOM_HB0.0,
            A3_ALL_ZERO_RANDOM_HB0.1
        )
    ));
}

#[test]
fn a4_influence_sweep_monotone() {
    let doc = results(plan(
        "influence",
        &[("ai_type", json!("all_zero")), ("weight_update", json!("fixed"))],
        &[("k_i", A4_K_I.iter().map(|&k| json!(k)).collect())],
        SEEDS_SWEEP,
    ));
    let aiv: Vec<f64> = A4_K_I
        .iter()
        .map(|k| metric(cell(&doc, &format!("k_i-{}", json!(k))), "r_aiv_window"))
        .collect();
    let monotone = aiv.windows(2).all(|w| w[1] > w[0]);
    let ok = monotone && within(aiv[0], A4_LOW_AIV) && within(aiv[4], A4_HIGH_AIV);
    let shown: Vec<String> = A4_K_I.iter().zip(&aiv).map(|(k, v)| format!("{k}:{v:.4}")).collect();
    assert!(line(
        "A4",
        ok,
        format!(
            "r_AIV by K_I {} monotone={monotone} (endpoints {} +- {}, {} +- {})",
            shown.join(" "),
            A4_LOW_AIV.0,
            A4_LOW_AIV.1,
            A4_HIGH_AIV.0,
            A4_HIGH_AIV.1
        )
    ));
}

#[test]
fn a5_belief_sparsity_raises_hb0() {
    let doc = results(plan(
        "bsparsity",
        &[("ai_type", json!("all_zero")), ("weight_update", json!("fixed"))],
        &[("b_sparsity", vec![json!(0.0), json!(0.5)])],
        SEEDS_SWEEP_HB0,
    ));
    let lo = metric(cell(&doc, "b_sparsity-0.0"), "r_hb0_final");
    let hi = metric(cell(&doc, "b_sparsity-0.5"), "r_hb0_final");
    let ok = hi - lo >= A5_MIN_GAIN && within(hi, A5_HB0_AT_HALF);
    assert!(line(
        "A5",
        ok,
        format!(
            "All Zero Fixed r_HB0 b_sparsity 0 -> 0.5: {lo:.4} -> {hi:.4} (gain >= {A5_MIN_GAIN}, end {} +- {})",
            A5_HB0_AT_HALF.0, A5_HB0_AT_HALF.1
        )
    ));
}

#[test]
fn a6_truthfulness_effect() {
    let doc = results(plan(
        "truthfulness",
        &[("ai_type", json!("all_zero"))],
        &[
            ("weight_update", strs(&WEIGHT_UPDATES)),
            ("lambda", vec![json!(0.01), json!(10.0)]),
        ],
        SEEDS_SWEEP_HB0,
    ));
    let mut ok = true;
    let mut parts = Vec::new();
    for w in WEIGHT_UPDATES {
        let lo = metric(cell(&doc, &format!("weight_update-{w}__lambda-0.01")), "r_hb0_final");
        let hi = metric(cell(&doc, &format!("weight_update-{w}__lambda-10.0")), "r_hb0_final");
        let drop = lo - hi;
        ok &= if w == "reward" {
            within(drop, A6_REWARD_DROP)
        } else {
            drop.abs() < A6_OTHER_MAX_SHIFT
        };
        parts.push(format!("{w}: {lo:.4}->{hi:.4}"));
    }
    assert!(line(
        "A6",
        ok,
        format!(
            "All Zero r_HB0 lambda 0.01 -> 10: {} (reward drop {} +- {}, others |shift| < {A6_OTHER_MAX_SHIFT})",
            parts.join(", "),
            A6_REWARD_DROP.0,
            A6_REWARD_DROP.1
        )
    ));
}

#[test]
fn a7_scale_effect() {
    let doc = results(plan(
        "scale300",
        &[
            ("ai_type", json!("all_zero")),
            ("scale", json!(300)),
            ("diversity_interval", json!(0)),
        ],
        &[("weight_update", strs(&WEIGHT_UPDATES))],
        SEEDS_SCALE,
    ));
    let slugs: Vec<String> = WEIGHT_UPDATES.iter().map(|w| format!("weight_update-{w}")).collect();
    let aiv = pooled(&doc, &slugs, "r_aiv_window");
    let hb0 = pooled(&doc, &slugs, "r_hb0_final");

    // uniformity of each run's final human belief histogram
    let chi = ChiSquared::new(9.0).unwrap();
    let mut min_p = f64::INFINITY;
    let dir = cache_root().join("scale300");
    for run in expand(&plan(
        "scale300",
        &[("ai_type", json!("all_zero")), ("scale", json!(300)), ("diversity_interval", json!(0))],
        &[("weight_update", strs(&WEIGHT_UPDATES))],
        SEEDS_SCALE,
    ))
    .unwrap()
    {
        let rows = digico_core::experiment::read_metrics_csv(&dir.join(&run.rel_dir).join(METRICS_FILE)).unwrap();
        let last = rows.last().unwrap();
        let mut counts = [0u32; 10];
        for h in &last.histograms[1..] {
            for (c, v) in counts.iter_mut().zip(h) {
                *c += v;
            }
        }
        let n: u32 = counts.iter().sum();
        let expected = n as f64 / 10.0;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        min_p = min_p.min(chi.sf(stat));
    }
    let ok = within(aiv, A7_AIV) && within(hb0, A7_HB0) && min_p > A7_MIN_P;
    assert!(line(
        "A7",
        ok,
        format!(
            "300 agents All Zero r_AIV={aiv:.4} (target {} +- {}), r_HB0={hb0:.4} (target {} +- {}), min chi-square p={min_p:.3e} (> {A7_MIN_P})",
            A7_AIV.0, A7_AIV.1, A7_HB0.0, A7_HB0.1
        )
    ));
}

#[test]
fn a8_diversity_band() {
    let doc = results(plan(
        "ai-types",
        &[("weight_update", json!("fixed"))],
        &[(
            "ai_type",
            strs(&["none", "act", "evolve", "fix", "influence", "all", "fix_at_zero", "all_zero"]),
        )],
        SEEDS_SWEEP,
    ));
    let mut ok = true;
    let (mut w_lo, mut w_hi, mut b_lo, mut b_hi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for c in &doc.conditions {
        let w = metric(c, "within_diversity_final");
        let b = metric(c, "between_diversity_final");
        ok &= within(w, A8_WITHIN) && (A8_BETWEEN.0..=A8_BETWEEN.1).contains(&b);
        (w_lo, w_hi, b_lo, b_hi) = (w_lo.min(w), w_hi.max(w), b_lo.min(b), b_hi.max(b));
    }
    assert!(line(
        "A8",
        ok,
        format!(
            "within diversity [{w_lo:.3}, {w_hi:.3}] (target {} +- {}), between [{b_lo:.3}, {b_hi:.3}] (target [{}, {}]) over {} AI types",
            A8_WITHIN.0,
            A8_WITHIN.1,
            A8_BETWEEN.0,
            A8_BETWEEN.1,
            doc.conditions.len()
        )
    ));
}

// ----------------------------------------------------------------- P1

fn p1_belief_sampling() -> (bool, String) {
    let b = |v| Belief::new(v).unwrap();
    let observed = [(0, b(3)), (1, b(7)), (2, b(3)), (3, b(4))];
    let weights = [0.5, 0.9, 0.2, 0.1];
    let ctx = BeliefUpdateContext {
        belief: b(5),
        observed: &observed,
        weights: &weights,
        c_b: 5.0,
    };
    let scores = belief_scores(&ctx).unwrap();
    // direct evaluation of the contagion score for each candidate
    let direct = |cand: u8, support: f64| {
        let d = (cand as f64 - 5.0).abs().max(0.5);
        (5.0 * support / d).exp()
    };
    let expected = [(3, 0.7), (4, 0.1), (5, 0.0), (7, 0.9)];
    let mut ok = scores.len() == expected.len();
    for ((cand, s), (e_cand, support)) in scores.iter().zip(expected) {
        ok &= cand.value() == e_cand && (s / direct(e_cand, support) - 1.0).abs() < 1e-12;
    }
    let total: f64 = scores.iter().map(|s| s.1).sum();
    let mut counts = [0usize; 10];
    let mut s = rng_stream(101, BELIEF);
    for _ in 0..P1_BELIEF_DRAWS {
        counts[sample_belief(&scores, &mut s).value() as usize] += 1;
    }
    let mut worst: f64 = 0.0;
    for (cand, sc) in &scores {
        let p = sc / total;
        let f = counts[cand.value() as usize] as f64 / P1_BELIEF_DRAWS as f64;
        // relative tolerance on candidates carrying at least 10% of the mass
        if p >= 0.1 {
            worst = worst.max((f / p - 1.0).abs());
        }
    }
    ok &= worst < P1_BELIEF_REL_TOL;
    (ok, format!("belief MC worst rel err {worst:.2e}"))
}

fn p1_observation_sampling() -> (bool, String) {
    let weights = [0.0, 1.0, 2.0, 3.0, 4.0];
    let total: f64 = weights.iter().sum();
    let mut counts = [0usize; 5];
    let mut s = rng_stream(102, OBSERVATION);
    for _ in 0..P1_OBS_DRAWS {
        for j in sample_observations(&weights, 1, &mut s) {
            counts[j] += 1;
        }
    }
    let mut worst: f64 = 0.0;
    for (j, &w) in weights.iter().enumerate() {
        let f = counts[j] as f64 / P1_OBS_DRAWS as f64;
        if w == 0.0 {
            worst = worst.max(if counts[j] == 0 { 0.0 } else { f64::INFINITY });
        } else {
            worst = worst.max((f / (w / total) - 1.0).abs());
        }
    }
    (worst < P1_OBS_REL_TOL, format!("observation worst rel err {worst:.2e}"))
}

fn p1_step_invariants() -> (bool, String) {
    let mut ok = true;
    let cfg = EcosystemConfig {
        ai_type: AiType::AllZero,
        weight_update: WeightUpdate::Fixed,
        generations: 3,
        seed: 5,
        ..EcosystemConfig::default()
    };
    let mut st = RunState::new(cfg).unwrap();
    let w0 = st.w.clone();
    let ai_beliefs: Vec<Belief> = (0..st.n_agents()).filter(|&i| st.fixed_belief[i]).map(|i| st.beliefs[i]).collect();
    let mut steps = 0;
    for _ in 0..3 {
        let gen = st.generation + 1;
        st.fitness.fill(0.0);
        st.views.fill(0);
        for t in 0..st.config.steps_per_generation {
            let out = st.step(t).unwrap();
            let views: u64 = out.views.iter().map(|&v| v as u64).sum();
            ok &= views == out.filled_slots as u64;
            steps += 1;
        }
        st.metrics_row(gen).unwrap();
        st.evolve(gen).unwrap();
        st.generation = gen;
    }
    let still: Vec<Belief> = (0..st.n_agents()).filter(|&i| st.fixed_belief[i]).map(|i| st.beliefs[i]).collect();
    ok &= !ai_beliefs.is_empty() && ai_beliefs == still;
    ok &= st.w.as_slice().iter().zip(w0.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits());
    (ok, format!("view conservation / fixed beliefs / fixed W over {steps} steps"))
}

fn p1_sphere() -> (bool, String) {
    let mut s = rng_stream(103, "sphere");
    let mut st = init_solver(20, SepCmaParams::standard(10), &mut s).unwrap();
    let sphere = |g: &digico_core::Genotype| -g.as_slice().iter().map(|x| x * x).sum::<f64>();
    let mut first = 0.0;
    let mut last = 0.0;
    for gen in 0..500 {
        let pop = st.ask(&mut s).unwrap();
        let f: Vec<f64> = pop.iter().map(sphere).collect();
        let best = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if gen == 0 {
            first = best;
        }
        last = best;
        st.tell(&pop, &f).unwrap();
    }
    let gain = first / last;
    (gain >= P1_SPHERE_GAIN, format!("sphere gain {gain:.3e}"))
}

fn p1_determinism() -> (bool, String) {
    let tiny = |name: &str| {
        let mut p = plan(
            name,
            &[("generations", json!(6)), ("steps_per_generation", json!(10))],
            &[("ai_type", strs(&["none", "all"])), ("weight_update", strs(&["random", "reward"]))],
            2,
        );
        p.name = "determinism".into();
        p
    };
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("w1");
    let b = tmp.path().join("w3");
    execute(&tiny("w1"), &a, 1, &|_| {}).unwrap();
    execute(&tiny("w3"), &b, 3, &|_| {}).unwrap();
    let mut ok = true;
    let mut files = 0;
    for run in expand(&tiny("w1")).unwrap() {
        let fa = std::fs::read(a.join(&run.rel_dir).join(METRICS_FILE)).unwrap();
        let fb = std::fs::read(b.join(&run.rel_dir).join(METRICS_FILE)).unwrap();
        ok &= fa == fb;
        files += 1;
    }
    // and the in-process API agrees with itself
    let cfg = EcosystemConfig {
        generations: 4,
        steps_per_generation: 10,
        ai_type: AiType::All,
        weight_update: WeightUpdate::Momentum,
        ..EcosystemConfig::default()
    };
    let r1 = run(&cfg).unwrap();
    let r2 = run(&cfg).unwrap();
    ok &= r1.summary == r2.summary && r1.final_beliefs == r2.final_beliefs;
    (ok, format!("{files} results files identical for 1 vs 3 workers"))
}

#[test]
fn p1_property_suite() {
    let checks: BTreeMap<&str, (bool, String)> = [
        ("belief-sampling", p1_belief_sampling()),
        ("observation-sampling", p1_observation_sampling()),
        ("step-invariants", p1_step_invariants()),
        ("sphere", p1_sphere()),
        ("determinism", p1_determinism()),
    ]
    .into_iter()
    .collect();
    let ok = checks.values().all(|c| c.0);
    let detail: Vec<String> = checks
        .iter()
        .map(|(k, (pass, d))| format!("{k}={} ({d})", if *pass { "ok" } else { "FAILED" }))
        .collect();
    assert!(line("P1", ok, detail.join("; ")));
}
