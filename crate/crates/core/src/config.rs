//! Run configuration with the published default parameter table.
//!
//! Overrides are flat `key = value` pairs. Keys are the snake_case field
//! names below, or the snake_case form of the parameter-table names
//! (`observation_capacity`, `belief_factor`, `belief_penalty_in_fitness`, ...).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AiType {
    None,
    Act,
    Evolve,
    Fix,
    Influence,
    All,
    FixAtZero,
    AllZero,
}

impl AiType {
    pub const ALL: [AiType; 8] = [
        AiType::None,
        AiType::Act,
        AiType::Evolve,
        AiType::Fix,
        AiType::Influence,
        AiType::All,
        AiType::FixAtZero,
        AiType::AllZero,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AiType::None => "none",
            AiType::Act => "act",
            AiType::Evolve => "evolve",
            AiType::Fix => "fix",
            AiType::Influence => "influence",
            AiType::All => "all",
            AiType::FixAtZero => "fix_at_zero",
            AiType::AllZero => "all_zero",
        }
    }

    /// Humans act only every `messaging_slowdown` steps.
    pub fn slows_human_messaging(self) -> bool {
        matches!(self, AiType::Act | AiType::All | AiType::AllZero)
    }

    /// Humans evolve only every `evolution_slowdown` generations.
    pub fn slows_human_evolution(self) -> bool {
        matches!(self, AiType::Evolve | AiType::All | AiType::AllZero)
    }

    /// AI influence scores get `influence_increment`.
    pub fn boosts_ai_influence(self) -> bool {
        matches!(self, AiType::Influence | AiType::All | AiType::AllZero)
    }

    /// AI beliefs never change after initialization.
    pub fn fixes_ai_beliefs(self) -> bool {
        matches!(
            self,
            AiType::Fix | AiType::All | AiType::FixAtZero | AiType::AllZero
        )
    }

    /// AI beliefs start at 0.
    pub fn zeroes_ai_beliefs(self) -> bool {
        matches!(self, AiType::FixAtZero | AiType::AllZero)
    }
}

impl fmt::Display for AiType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AiType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = normalize_key(s);
        AiType::ALL
            .into_iter()
            .find(|t| t.name() == key || t.name().replace('_', "") == key.replace('_', ""))
            .ok_or_else(|| format!("unknown AI type `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightUpdate {
    Fixed,
    Random,
    Momentum,
    Reward,
}

impl WeightUpdate {
    pub const ALL: [WeightUpdate; 4] = [
        WeightUpdate::Fixed,
        WeightUpdate::Random,
        WeightUpdate::Momentum,
        WeightUpdate::Reward,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WeightUpdate::Fixed => "fixed",
            WeightUpdate::Random => "random",
            WeightUpdate::Momentum => "momentum",
            WeightUpdate::Reward => "reward",
        }
    }
}

impl fmt::Display for WeightUpdate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightUpdate {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = normalize_key(s);
        WeightUpdate::ALL
            .into_iter()
            .find(|w| w.name() == key)
            .ok_or_else(|| format!("unknown weight update `{s}`"))
    }
}

/// What a channel shows on steps where its owner does not act.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hosting {
    /// The last broadcast stays up and can still be viewed.
    Persist,
    /// The channel is silent and cannot be observed.
    Silent,
}

impl FromStr for Hosting {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize_key(s).as_str() {
            "persist" => Ok(Hosting::Persist),
            "silent" => Ok(Hosting::Silent),
            _ => Err(format!("unknown hosting mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcosystemConfig {
    pub n_agents: usize,
    /// Index 0 is the AI subpopulation.
    pub subpop_sizes: Vec<usize>,
    pub generations: usize,
    pub steps_per_generation: usize,
    pub observation_capacity: usize,
    pub k_c: f64,
    pub k_i: f64,
    pub k_b: f64,
    pub c_b: f64,
    pub lambda: f64,
    pub sigma_r: f64,
    pub sigma_m: f64,
    pub beta: f64,
    pub influence_increment: f64,
    pub messaging_slowdown: usize,
    pub evolution_slowdown: usize,
    pub o_sparsity: f64,
    pub b_sparsity: f64,
    pub ai_type: AiType,
    pub weight_update: WeightUpdate,
    pub niche_dim: usize,
    pub niche_centroids: usize,
    pub hidden_units: usize,
    pub mean_lr: f64,
    pub cov_lr: f64,
    pub init_cov_scale: f64,
    pub init_weight_delta: f64,
    pub hosting: Hosting,
    /// Fraction of final generations averaged for the view/fitness ratios.
    pub report_window: f64,
    /// Genotype diversity is computed every this many generations (and always
    /// on the last one); 0 means last generation only.
    pub diversity_interval: usize,
    pub seed: u64,
}

impl Default for EcosystemConfig {
    fn default() -> Self {
        EcosystemConfig {
            n_agents: 30,
            subpop_sizes: vec![10, 10, 10],
            generations: 1000,
            steps_per_generation: 50,
            observation_capacity: 4,
            k_c: 1.0,
            k_i: 1.0,
            k_b: 1.0,
            c_b: 5.0,
            lambda: 0.10,
            sigma_r: 1.0,
            sigma_m: 0.05,
            beta: 0.20,
            influence_increment: 2.0,
            messaging_slowdown: 2,
            evolution_slowdown: 5,
            o_sparsity: 0.0,
            b_sparsity: 0.0,
            ai_type: AiType::None,
            weight_update: WeightUpdate::Fixed,
            niche_dim: 10,
            niche_centroids: 10,
            hidden_units: 64,
            mean_lr: 0.01,
            cov_lr: 0.01,
            init_cov_scale: 0.1,
            init_weight_delta: 0.1,
            hosting: Hosting::Silent,
            report_window: 0.1,
            diversity_interval: 10,
            seed: 0,
        }
    }
}

/// Lower-cases, trims and turns separators into underscores.
pub fn normalize_key(key: &str) -> String {
    let mut out = String::with_capacity(key.len());
    for c in key.trim().chars() {
        match c {
            ' ' | '-' | '.' => out.push('_'),
            '(' | ')' | '$' | '\\' => {}
            c => out.extend(c.to_lowercase()),
        }
    }
    out
}

/// Maps parameter-table names and short symbols onto field names.
fn canonical_key(key: &str) -> String {
    let key = normalize_key(key);
    let canon = match key.as_str() {
        "total_population_size" | "n" | "population_size" => "n_agents",
        "iterations" | "g" => "generations",
        "time_steps_per_evolutionary_update" | "t" => "steps_per_generation",
        "n_o" => "observation_capacity",
        "observation_coordinate_factor" => "k_c",
        "observation_influence_factor" => "k_i",
        "observation_belief_factor" => "k_b",
        "belief_factor" => "c_b",
        "belief_penalty_in_fitness" | "truthfulness" => "lambda",
        "belief_weight_momentum_factor" | "momentum" => "beta",
        "messaging_rate_slowdown_factor" => "messaging_slowdown",
        "evolution_rate_slowdown_factor" => "evolution_slowdown",
        "observation_sparsity" => "o_sparsity",
        "belief_sparsity" => "b_sparsity",
        "d" => "niche_dim",
        "k" => "niche_centroids",
        "mean_learning_rate" => "mean_lr",
        "covariance_learning_rate" => "cov_lr",
        "initial_covariance_scale" => "init_cov_scale",
        "belief_weight_initial_delta" => "init_weight_delta",
        "policy_hidden_units" => "hidden_units",
        other => other,
    };
    canon.to_string()
}

/// Parses a CLI-style override value: JSON when it parses, bare string otherwise.
pub fn parse_override_value(raw: &str) -> Value {
    serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()))
}

fn as_f64(key: &str, v: &Value) -> Result<f64, ConfigError> {
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(|| ConfigError::invalid(key, "not a number")),
        Value::String(s) => s
            .parse::<f64>()
            .map_err(|_| ConfigError::invalid(key, format!("`{s}` is not a number"))),
        other => Err(ConfigError::invalid(key, format!("expected number, got {other}"))),
    }
}

fn as_u64(key: &str, v: &Value) -> Result<u64, ConfigError> {
    match v {
        Value::Number(n) => n
            .as_u64()
            .ok_or_else(|| ConfigError::invalid(key, "expected a non-negative integer")),
        Value::String(s) => s
            .parse::<u64>()
            .map_err(|_| ConfigError::invalid(key, format!("`{s}` is not a non-negative integer"))),
        other => Err(ConfigError::invalid(key, format!("expected integer, got {other}"))),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize, ConfigError> {
    as_u64(key, v).map(|x| x as usize)
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str, ConfigError> {
    v.as_str()
        .ok_or_else(|| ConfigError::invalid(key, format!("expected string, got {v}")))
}

fn as_usize_list(key: &str, v: &Value) -> Result<Vec<usize>, ConfigError> {
    match v {
        Value::Array(items) => items.iter().map(|x| as_usize(key, x)).collect(),
        Value::String(s) => s
            .trim_matches(|c| c == '[' || c == ']')
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| as_usize(key, &Value::String(p.trim().to_string())))
            .collect(),
        other => Err(ConfigError::invalid(key, format!("expected list, got {other}"))),
    }
}

impl EcosystemConfig {
    /// Defaults with `overrides` applied, then validated.
    pub fn new_config<'a, I>(overrides: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (&'a str, &'a Value)>,
    {
        let mut cfg = EcosystemConfig::default();
        cfg.apply_overrides(overrides)?;
        Ok(cfg)
    }

    /// Applies overrides to this config and re-validates.
    pub fn apply_overrides<'a, I>(&mut self, overrides: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (&'a str, &'a Value)>,
    {
        for (k, v) in overrides {
            self.set(k, v)?;
        }
        self.validate()
    }

    /// Sets one field without validating the whole config.
    pub fn set(&mut self, key: &str, value: &Value) -> Result<(), ConfigError> {
        let key = canonical_key(key);
        let k = key.as_str();
        match k {
            "n_agents" => self.n_agents = as_usize(k, value)?,
            "subpop_sizes" => self.subpop_sizes = as_usize_list(k, value)?,
            "scale" => {
                let n = as_usize(k, value)?;
                if n == 0 || n % 3 != 0 {
                    return Err(ConfigError::invalid(k, "scale must be a positive multiple of 3"));
                }
                self.n_agents = n;
                self.subpop_sizes = vec![n / 3; 3];
            }
            "generations" => self.generations = as_usize(k, value)?,
            "steps_per_generation" => self.steps_per_generation = as_usize(k, value)?,
            "observation_capacity" => self.observation_capacity = as_usize(k, value)?,
            "k_c" => self.k_c = as_f64(k, value)?,
            "k_i" => self.k_i = as_f64(k, value)?,
            "k_b" => self.k_b = as_f64(k, value)?,
            "c_b" => self.c_b = as_f64(k, value)?,
            "lambda" => self.lambda = as_f64(k, value)?,
            "sigma_r" => self.sigma_r = as_f64(k, value)?,
            "sigma_m" => self.sigma_m = as_f64(k, value)?,
            "beta" => self.beta = as_f64(k, value)?,
            "influence_increment" => self.influence_increment = as_f64(k, value)?,
            "messaging_slowdown" => self.messaging_slowdown = as_usize(k, value)?,
            "evolution_slowdown" => self.evolution_slowdown = as_usize(k, value)?,
            "o_sparsity" => self.o_sparsity = as_f64(k, value)?,
            "b_sparsity" => self.b_sparsity = as_f64(k, value)?,
            "ai_type" => {
                self.ai_type = as_str(k, value)?
                    .parse()
                    .map_err(|e: String| ConfigError::invalid(k, e))?
            }
            "weight_update" => {
                self.weight_update = as_str(k, value)?
                    .parse()
                    .map_err(|e: String| ConfigError::invalid(k, e))?
            }
            "hosting" => {
                self.hosting = as_str(k, value)?
                    .parse()
                    .map_err(|e: String| ConfigError::invalid(k, e))?
            }
            "niche_dim" => self.niche_dim = as_usize(k, value)?,
            "niche_centroids" => self.niche_centroids = as_usize(k, value)?,
            "hidden_units" => self.hidden_units = as_usize(k, value)?,
            "mean_lr" => self.mean_lr = as_f64(k, value)?,
            "cov_lr" => self.cov_lr = as_f64(k, value)?,
            "init_cov_scale" => self.init_cov_scale = as_f64(k, value)?,
            "init_weight_delta" => self.init_weight_delta = as_f64(k, value)?,
            "report_window" => self.report_window = as_f64(k, value)?,
            "diversity_interval" => self.diversity_interval = as_usize(k, value)?,
            "seed" => self.seed = as_u64(k, value)?,
            "message_capacity" => {
                if as_usize(k, value)? != 1 {
                    return Err(ConfigError::invalid(k, "only a message capacity of 1 is supported"));
                }
            }
            _ => return Err(ConfigError::UnknownKey(key)),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn positive(field: &str, v: usize) -> Result<(), ConfigError> {
            if v == 0 {
                Err(ConfigError::validation(field, "must be positive"))
            } else {
                Ok(())
            }
        }
        fn real(field: &str, v: f64, lo: f64, hi: f64) -> Result<(), ConfigError> {
            if v.is_finite() && v >= lo && v <= hi {
                Ok(())
            } else {
                Err(ConfigError::validation(field, format!("{v} not in [{lo}, {hi}]")))
            }
        }
        fn strictly_positive(field: &str, v: f64) -> Result<(), ConfigError> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::validation(field, format!("{v} must be > 0")))
            }
        }

        positive("n_agents", self.n_agents)?;
        if self.subpop_sizes.len() < 2 {
            return Err(ConfigError::validation(
                "subpop_sizes",
                "need an AI subpopulation and at least one human subpopulation",
            ));
        }
        if self.subpop_sizes.iter().any(|&s| s < 2) {
            return Err(ConfigError::validation(
                "subpop_sizes",
                "every subpopulation needs at least 2 agents",
            ));
        }
        let total: usize = self.subpop_sizes.iter().sum();
        if total != self.n_agents {
            return Err(ConfigError::validation(
                "subpop_sizes",
                format!("sizes sum to {total}, n_agents is {}", self.n_agents),
            ));
        }
        positive("generations", self.generations)?;
        positive("steps_per_generation", self.steps_per_generation)?;
        positive("observation_capacity", self.observation_capacity)?;
        real("k_c", self.k_c, 0.0, f64::MAX)?;
        real("k_i", self.k_i, 0.0, f64::MAX)?;
        real("k_b", self.k_b, 0.0, f64::MAX)?;
        real("c_b", self.c_b, f64::MIN, f64::MAX)?;
        real("lambda", self.lambda, 0.0, f64::MAX)?;
        strictly_positive("sigma_r", self.sigma_r)?;
        strictly_positive("sigma_m", self.sigma_m)?;
        real("beta", self.beta, 0.0, 1.0)?;
        real("influence_increment", self.influence_increment, f64::MIN, f64::MAX)?;
        positive("messaging_slowdown", self.messaging_slowdown)?;
        positive("evolution_slowdown", self.evolution_slowdown)?;
        real("o_sparsity", self.o_sparsity, 0.0, 1.0)?;
        real("b_sparsity", self.b_sparsity, 0.0, 1.0)?;
        positive("niche_dim", self.niche_dim)?;
        positive("niche_centroids", self.niche_centroids)?;
        positive("hidden_units", self.hidden_units)?;
        real("mean_lr", self.mean_lr, f64::MIN_POSITIVE, 1.0)?;
        real("cov_lr", self.cov_lr, f64::MIN_POSITIVE, 1.0)?;
        strictly_positive("init_cov_scale", self.init_cov_scale)?;
        real("init_weight_delta", self.init_weight_delta, 0.0, f64::MAX)?;
        real("report_window", self.report_window, f64::MIN_POSITIVE, 1.0)?;
        Ok(())
    }

    /// Parses a flat TOML document of overrides on top of the defaults.
    pub fn from_toml_str(doc: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = doc.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let pairs = toml_table_to_overrides(&table)?;
        EcosystemConfig::new_config(pairs.iter().map(|(k, v)| (k.as_str(), v)))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn n_ai(&self) -> usize {
        self.subpop_sizes[0]
    }

    pub fn is_ai(&self, agent: usize) -> bool {
        agent < self.n_ai()
    }

    /// Subpopulation index of every agent.
    pub fn subpop_of(&self) -> Vec<usize> {
        self.subpop_sizes
            .iter()
            .enumerate()
            .flat_map(|(p, &s)| std::iter::repeat_n(p, s))
            .collect()
    }

    /// First agent index of each subpopulation.
    pub fn subpop_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.subpop_sizes
            .iter()
            .map(|&s| {
                let o = acc;
                acc += s;
                o
            })
            .collect()
    }

    /// Content hash of the canonical JSON form, in the style of a git blob id.
    pub fn content_hash(&self) -> String {
        let body = serde_json::to_vec(self).expect("config serializes to JSON");
        let mut hasher = Sha256::new();
        hasher.update(format!("config {}\0", body.len()).as_bytes());
        hasher.update(&body);
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Converts a flat TOML table into override pairs.
pub fn toml_table_to_overrides(table: &toml::Table) -> Result<Vec<(String, Value)>, ConfigError> {
    table
        .iter()
        .map(|(k, v)| {
            let json = serde_json::to_value(v).map_err(|e| ConfigError::invalid(k, e.to_string()))?;
            if json.is_object() {
                return Err(ConfigError::invalid(k, "nested tables are not allowed in a config file"));
            }
            Ok((k.clone(), json))
        })
        .collect()
}
