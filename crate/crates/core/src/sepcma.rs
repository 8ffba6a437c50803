//! Separable (diagonal-covariance) CMA-ES with an ask/tell interface.
//!
//! Fitness is maximized. Strategy constants follow the standard sep-CMA-ES
//! defaults; `mean_lr` scales the recombination step of the mean and `cov_lr`
//! scales both covariance learning rates.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::EcosystemConfig;
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::types::Genotype;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SepCmaParams {
    pub population_size: usize,
    pub mean_lr: f64,
    pub cov_lr: f64,
    /// Initial step size.
    pub sigma0: f64,
    /// Standard deviation of the initial mean around the origin.
    pub init_mean_std: f64,
}

impl SepCmaParams {
    /// Textbook settings: full-strength mean and covariance updates.
    pub fn standard(population_size: usize) -> Self {
        SepCmaParams {
            population_size,
            mean_lr: 1.0,
            cov_lr: 1.0,
            sigma0: 0.1,
            init_mean_std: 0.1,
        }
    }

    /// Settings used for the agent policies.
    pub fn from_config(config: &EcosystemConfig, population_size: usize) -> Self {
        SepCmaParams {
            population_size,
            mean_lr: config.mean_lr,
            cov_lr: config.cov_lr,
            sigma0: config.init_cov_scale,
            init_mean_std: config.init_cov_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SepCmaState {
    params: SepCmaParams,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c1: f64,
    c_mu: f64,
    chi_n: f64,

    pub mean: Vec<f64>,
    pub diag_cov: Vec<f64>,
    pub sigma: f64,
    pub p_sigma: Vec<f64>,
    pub p_c: Vec<f64>,
    pub generation: usize,
    awaiting_tell: bool,
}

/// Compact audit record of a solver at some generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSnapshot {
    pub subpop: usize,
    pub generation: usize,
    pub sigma: f64,
    pub mean_norm: f64,
    pub diag_cov_min: f64,
    pub diag_cov_max: f64,
    /// SHA-256 over the little-endian bytes of mean, diag_cov, paths and sigma.
    pub state_sha256: String,
}

pub fn init_solver(dim: usize, params: SepCmaParams, stream: &mut Stream) -> Result<SepCmaState> {
    let lambda = params.population_size;
    if lambda < 2 {
        return Err(Error::InvalidInput(format!(
            "population size must be at least 2, got {lambda}"
        )));
    }
    if dim == 0 {
        return Err(Error::InvalidInput("solver dimension must be positive".into()));
    }
    let n = dim as f64;
    let mu = lambda / 2;
    let raw: Vec<f64> = (0..mu)
        .map(|k| (mu as f64 + 0.5).ln() - ((k + 1) as f64).ln())
        .collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    weights.resize(lambda, 0.0);

    let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
    let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
    let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
    let sep = (n + 2.0) / 3.0;
    let c1_full = 2.0 / ((n + 1.3).powi(2) + mu_eff);
    let c_mu_full = (1.0 - c1_full).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff));
    let mut c1 = (c1_full * sep).min(1.0);
    let mut c_mu = (c_mu_full * sep).max(0.0);
    if c1 + c_mu > 1.0 {
        let s = c1 + c_mu;
        c1 /= s;
        c_mu /= s;
    }
    c1 *= params.cov_lr;
    c_mu *= params.cov_lr;
    let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

    let mean = (0..dim)
        .map(|_| params.init_mean_std * crate::rng::standard_normal(stream))
        .collect();

    Ok(SepCmaState {
        params,
        weights,
        mu_eff,
        c_sigma,
        d_sigma,
        c_c,
        c1,
        c_mu,
        chi_n,
        mean,
        diag_cov: vec![1.0; dim],
        sigma: params.sigma0,
        p_sigma: vec![0.0; dim],
        p_c: vec![0.0; dim],
        generation: 0,
        awaiting_tell: false,
    })
}

impl SepCmaState {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn population_size(&self) -> usize {
        self.params.population_size
    }

    pub fn params(&self) -> SepCmaParams {
        self.params
    }

    /// One draw from the current search distribution; does not touch the
    /// ask/tell protocol.
    pub fn sample(&self, stream: &mut Stream) -> Genotype {
        Genotype(
            self.mean
                .iter()
                .zip(&self.diag_cov)
                .map(|(m, c)| {
                    let z = crate::rng::standard_normal(stream);
                    m + self.sigma * c.sqrt() * z
                })
                .collect(),
        )
    }

    pub fn ask(&mut self, stream: &mut Stream) -> Result<Vec<Genotype>> {
        if self.awaiting_tell {
            return Err(Error::Protocol("ask called twice without tell".into()));
        }
        let out = (0..self.params.population_size).map(|_| self.sample(stream)).collect();
        self.awaiting_tell = true;
        Ok(out)
    }

    /// Rank weight of every candidate; tied fitness values share the average
    /// of the weights of the ranks they span.
    fn rank_weights(&self, fitness: &[f64]) -> Vec<f64> {
        let mut order: Vec<usize> = (0..fitness.len()).collect();
        order.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]).then(a.cmp(&b)));
        let mut out = vec![0.0; fitness.len()];
        let mut start = 0;
        while start < order.len() {
            let mut end = start + 1;
            while end < order.len() && fitness[order[end]] == fitness[order[start]] {
                end += 1;
            }
            let shared = self.weights[start..end].iter().sum::<f64>() / (end - start) as f64;
            for &idx in &order[start..end] {
                out[idx] = shared;
            }
            start = end;
        }
        out
    }

    pub fn tell(&mut self, genotypes: &[Genotype], fitness: &[f64]) -> Result<()> {
        if !self.awaiting_tell {
            return Err(Error::Protocol("tell called without a matching ask".into()));
        }
        let lambda = self.params.population_size;
        if fitness.len() != lambda {
            return Err(Error::LengthMismatch {
                expected: lambda,
                got: fitness.len(),
            });
        }
        if genotypes.len() != lambda {
            return Err(Error::LengthMismatch {
                expected: lambda,
                got: genotypes.len(),
            });
        }
        if let Some(g) = genotypes.iter().find(|g| g.len() != self.dim()) {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                got: g.len(),
            });
        }
        if fitness.iter().any(|f| !f.is_finite()) {
            return Err(Error::non_finite("fitness passed to tell"));
        }

        let n = self.dim();
        let w = self.rank_weights(fitness);
        let mut y_w = vec![0.0; n];
        let mut rank_mu = vec![0.0; n];
        for (g, &wk) in genotypes.iter().zip(&w) {
            if wk == 0.0 {
                continue;
            }
            for d in 0..n {
                let y = (g.0[d] - self.mean[d]) / self.sigma;
                y_w[d] += wk * y;
                rank_mu[d] += wk * y * y;
            }
        }

        let cs = self.c_sigma;
        let cc = self.c_c;
        let norm_s = (cs * (2.0 - cs) * self.mu_eff).sqrt();
        let norm_c = (cc * (2.0 - cc) * self.mu_eff).sqrt();

        for d in 0..n {
            self.mean[d] += self.params.mean_lr * self.sigma * y_w[d];
            self.p_sigma[d] = (1.0 - cs) * self.p_sigma[d] + norm_s * y_w[d] / self.diag_cov[d].sqrt();
        }
        let ps_norm = self.p_sigma.iter().map(|v| v * v).sum::<f64>().sqrt();
        let denom = (1.0 - (1.0 - cs).powf(2.0 * (self.generation + 1) as f64)).sqrt();
        let h_sigma = if ps_norm / denom < (1.4 + 2.0 / (n as f64 + 1.0)) * self.chi_n {
            1.0
        } else {
            0.0
        };
        for d in 0..n {
            self.p_c[d] = (1.0 - cc) * self.p_c[d] + h_sigma * norm_c * y_w[d];
            let c = self.diag_cov[d];
            let rank_one = self.p_c[d] * self.p_c[d] + (1.0 - h_sigma) * cc * (2.0 - cc) * c;
            self.diag_cov[d] = (1.0 - self.c1 - self.c_mu) * c + self.c1 * rank_one + self.c_mu * rank_mu[d];
        }
        self.sigma *= ((cs / self.d_sigma) * (ps_norm / self.chi_n - 1.0)).exp();

        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return Err(Error::non_finite(format!("solver step size ({})", self.sigma)));
        }
        if self.diag_cov.iter().any(|c| !c.is_finite() || *c <= 0.0) {
            return Err(Error::non_finite("solver diagonal covariance"));
        }
        self.generation += 1;
        self.awaiting_tell = false;
        Ok(())
    }

    pub fn snapshot(&self, subpop: usize) -> SolverSnapshot {
        let mut hasher = Sha256::new();
        for v in self.mean.iter().chain(&self.diag_cov).chain(&self.p_sigma).chain(&self.p_c) {
            hasher.update(v.to_le_bytes());
        }
        hasher.update(self.sigma.to_le_bytes());
        SolverSnapshot {
            subpop,
            generation: self.generation,
            sigma: self.sigma,
            mean_norm: self.mean.iter().map(|v| v * v).sum::<f64>().sqrt(),
            diag_cov_min: self.diag_cov.iter().copied().fold(f64::INFINITY, f64::min),
            diag_cov_max: self.diag_cov.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            state_sha256: hasher.finalize().iter().map(|b| format!("{b:02x}")).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Evolve,
    Hold,
}

/// Whether subpopulation `group` runs variation and selection after
/// generation `generation` (1-based). The AI group (0) always evolves.
pub fn schedule_step(generation: usize, group: usize, config: &EcosystemConfig) -> Schedule {
    if group == 0 || !config.ai_type.slows_human_evolution() {
        return Schedule::Evolve;
    }
    if generation % config.evolution_slowdown == 0 {
        Schedule::Evolve
    } else {
        Schedule::Hold
    }
}
