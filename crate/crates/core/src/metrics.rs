//! AI-dominance statistics, genotype diversity and belief histograms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Belief, Genotype, BELIEF_LEVELS};

/// Share of all views received by AI agents. With no views at all the AI
/// population fraction is returned as a neutral value.
pub fn ai_views_ratio(views: &[u64], ai_mask: &[bool]) -> f64 {
    let total: u64 = views.iter().sum();
    if total == 0 {
        let n_ai = ai_mask.iter().filter(|&&a| a).count();
        tracing::warn!("no views recorded; reporting the AI population fraction");
        return n_ai as f64 / ai_mask.len().max(1) as f64;
    }
    let ai: u64 = views.iter().zip(ai_mask).filter(|(_, &a)| a).map(|(v, _)| v).sum();
    ai as f64 / total as f64
}

/// AI share of raw fitness, plus whether the denominator was positive.
pub fn ai_fitness_ratio(fitness: &[f64], ai_mask: &[bool]) -> (f64, bool) {
    let total: f64 = fitness.iter().sum();
    let ai: f64 = fitness.iter().zip(ai_mask).filter(|(_, &a)| a).map(|(f, _)| f).sum();
    (ai / total, total > 0.0)
}

/// Fraction of humans (mask `false`) holding belief 0.
pub fn human_belief0_ratio(beliefs: &[Belief], ai_mask: &[bool]) -> f64 {
    let humans: Vec<&Belief> = beliefs.iter().zip(ai_mask).filter(|(_, &a)| !a).map(|(b, _)| b).collect();
    if humans.is_empty() {
        return f64::NAN;
    }
    humans.iter().filter(|b| ***b == Belief::ZERO).count() as f64 / humans.len() as f64
}

pub fn belief_histogram(beliefs: &[Belief]) -> [u32; BELIEF_LEVELS] {
    let mut h = [0u32; BELIEF_LEVELS];
    for b in beliefs {
        h[b.value() as usize] += 1;
    }
    h
}

fn euclid(a: &Genotype, b: &Genotype) -> f64 {
    a.0.iter().zip(&b.0).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_lengths<'a>(mut gs: impl Iterator<Item = &'a Genotype>) -> Result<()> {
    if let Some(first) = gs.next() {
        for g in gs {
            if g.len() != first.len() {
                return Err(Error::LengthMismatch {
                    expected: first.len(),
                    got: g.len(),
                });
            }
        }
    }
    Ok(())
}

/// Mean Euclidean distance over unordered pairs.
pub fn diversity(genotypes: &[Genotype]) -> Result<f64> {
    if genotypes.len() < 2 {
        return Err(Error::InvalidInput("diversity needs at least two genotypes".into()));
    }
    check_lengths(genotypes.iter())?;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..genotypes.len() {
        for b in (a + 1)..genotypes.len() {
            total += euclid(&genotypes[a], &genotypes[b]);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Mean Euclidean distance over pairs drawn from different groups.
pub fn between_diversity(groups: &[&[Genotype]]) -> Result<f64> {
    check_lengths(groups.iter().flat_map(|g| g.iter()))?;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for x in 0..groups.len() {
        for y in (x + 1)..groups.len() {
            for a in groups[x] {
                for b in groups[y] {
                    total += euclid(a, b);
                    pairs += 1;
                }
            }
        }
    }
    if pairs == 0 {
        return Err(Error::InvalidInput("between-group diversity needs two non-empty groups".into()));
    }
    Ok(total / pairs as f64)
}

/// Statistics of one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub generation: usize,
    pub r_aiv: f64,
    pub r_aif: f64,
    pub r_aif_reliable: bool,
    pub r_hb0: f64,
    pub total_views: u64,
    /// Within-subpop diversity, one per subpop; empty on generations where
    /// diversity is not computed.
    pub within_diversity: Vec<f64>,
    pub between_diversity: Option<f64>,
    pub histograms: Vec<[u32; BELIEF_LEVELS]>,
}

/// Per-run scalar summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub generations: usize,
    pub window: usize,
    pub r_aiv_window: f64,
    pub r_aiv_final: f64,
    pub r_aif_window: f64,
    pub r_aif_final: f64,
    pub r_aif_reliable: bool,
    pub r_hb0_window: f64,
    pub r_hb0_final: f64,
    pub within_diversity_final: Option<f64>,
    pub between_diversity_final: Option<f64>,
    pub human_histogram_final: [u32; BELIEF_LEVELS],
}

/// Number of trailing generations in the reporting window (at least one).
pub fn window_len(generations: usize, fraction: f64) -> usize {
    (((generations as f64) * fraction).round() as usize).clamp(1, generations.max(1))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Summarizes a run. `human_histogram_final` sums every non-AI subpop.
pub fn summarize_run(rows: &[MetricsRow], window_fraction: f64) -> Result<RunSummary> {
    let last = rows
        .last()
        .ok_or_else(|| Error::InvalidInput("cannot summarize an empty run".into()))?;
    let w = window_len(rows.len(), window_fraction);
    let tail = &rows[rows.len() - w..];
    let mut human = [0u32; BELIEF_LEVELS];
    for h in last.histograms.iter().skip(1) {
        for (acc, c) in human.iter_mut().zip(h) {
            *acc += c;
        }
    }
    Ok(RunSummary {
        generations: rows.len(),
        window: w,
        r_aiv_window: mean(tail.iter().map(|r| r.r_aiv)),
        r_aiv_final: last.r_aiv,
        r_aif_window: mean(tail.iter().map(|r| r.r_aif)),
        r_aif_final: last.r_aif,
        r_aif_reliable: tail.iter().all(|r| r.r_aif_reliable),
        r_hb0_window: mean(tail.iter().map(|r| r.r_hb0)),
        r_hb0_final: last.r_hb0,
        within_diversity_final: (!last.within_diversity.is_empty())
            .then(|| mean(last.within_diversity.iter().copied())),
        between_diversity_final: last.between_diversity,
        human_histogram_final: human,
    })
}

/// Mean and standard error across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`; absent for a single value.
    pub se: Option<f64>,
    pub n: usize,
}

pub fn mean_se(values: &[f64]) -> Option<MeanSe> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let m = values.iter().sum::<f64>() / n as f64;
    let se = (n >= 2).then(|| {
        let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    });
    Some(MeanSe { mean: m, se, n })
}
