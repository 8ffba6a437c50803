//! The generation loop: acting, observation sampling, rewards, weight and
//! belief updates, and per-generation evolution of the messaging policies.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{
    self, apply_belief_sparsity, init_beliefs_and_weights, sparsity_count, BeliefUpdateContext, WeightRuleParams,
    WeightStepInputs,
};
use crate::config::{EcosystemConfig, Hosting};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsRow, RunSummary};
use crate::niche::{influence_matrix, InfluenceMatrix, NicheGeometry};
use crate::policy::{self, decode, Policy, PolicyLayout};
use crate::rng::{self, rng_stream, Stream};
use crate::sepcma::{init_solver, schedule_step, Schedule, SepCmaParams, SepCmaState, SolverSnapshot};
use crate::types::{Belief, BeliefWeightMatrix, Genotype, Message, Registers, SquareMatrix, BELIEF_LEVELS};

/// Generations between solver snapshots recorded in the run output.
pub const SNAPSHOT_INTERVAL: usize = 100;

/// Unnormalized probability that `receiver` is shown each sender's current
/// message, after observation sparsity. Silent senders and the receiver
/// itself get 0.
pub fn observation_weights(
    receiver: usize,
    beliefs: &[Belief],
    messages: &[Message],
    niche: &NicheGeometry,
    influence: &InfluenceMatrix,
    config: &EcosystemConfig,
) -> Vec<f64> {
    let b_i = beliefs[receiver].value() as f64;
    let weights: Vec<f64> = messages
        .iter()
        .enumerate()
        .map(|(j, m)| match m.level() {
            Some(level) if j != receiver => (-config.k_c * niche.coord_distance(receiver, j)
                - config.k_i * influence.get(receiver, j)
                - config.k_b * (b_i - level as f64).abs())
            .exp(),
            _ => 0.0,
        })
        .collect();
    apply_observation_sparsity(&weights, config.o_sparsity, receiver)
}

/// Zeroes the `floor(fraction * N)` smallest positive weights, lower index
/// first on ties. Zero weights do not count toward the quota.
pub fn apply_observation_sparsity(weights: &[f64], fraction: f64, self_index: usize) -> Vec<f64> {
    let mut out = weights.to_vec();
    sparsify_in_place(&mut out, fraction, self_index);
    out
}

fn sparsify_in_place(weights: &mut [f64], fraction: f64, self_index: usize) {
    let n = sparsity_count(fraction, weights.len());
    if n == 0 {
        return;
    }
    let mut live: Vec<usize> = (0..weights.len())
        .filter(|&j| j != self_index && weights[j] > 0.0)
        .collect();
    if n >= live.len() {
        live.iter().for_each(|&j| weights[j] = 0.0);
        return;
    }
    live.select_nth_unstable_by(n - 1, |&a, &b| weights[a].total_cmp(&weights[b]).then(a.cmp(&b)));
    for &j in &live[..n] {
        weights[j] = 0.0;
    }
}

/// Draws `min(capacity, #positive)` distinct senders, each draw proportional
/// to the remaining weights. Returns senders in draw order.
pub fn sample_observations(weights: &[f64], capacity: usize, stream: &mut Stream) -> Vec<usize> {
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    let mut live = 0;
    for &w in weights {
        if w > 0.0 {
            live += 1;
            acc += w;
        }
        cumulative.push(acc);
    }
    let k = capacity.min(live);
    let mut chosen = Vec::with_capacity(k);
    if k == live {
        // everything is taken; draw order still follows the weights
        let mut remaining = weights.to_vec();
        for _ in 0..k {
            let j = draw_linear(&remaining, stream);
            remaining[j] = 0.0;
            chosen.push(j);
        }
        return chosen;
    }
    // Rejecting repeats from the full distribution yields the same law as
    // drawing from the renormalized remainder.
    while chosen.len() < k {
        let u = stream.random::<f64>() * acc;
        let j = cumulative.partition_point(|&c| c <= u).min(weights.len() - 1);
        if weights[j] > 0.0 && !chosen.contains(&j) {
            chosen.push(j);
        }
    }
    chosen
}

fn draw_linear(weights: &[f64], stream: &mut Stream) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = stream.random::<f64>() * total;
    for (j, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if u < w {
                return j;
            }
            u -= w;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).expect("at least one positive weight")
}

/// Step reward: views received minus the truthfulness penalty on the hosted
/// message. A silent channel pays no penalty.
pub fn step_rewards(views: &[u32], beliefs: &[Belief], messages: &[Message], lambda: f64) -> Vec<f64> {
    views
        .iter()
        .zip(beliefs)
        .zip(messages)
        .map(|((&v, b), m)| match m.level() {
            Some(level) => v as f64 - lambda * (b.value() as f64 - level as f64).abs(),
            None => v as f64,
        })
        .collect()
}

/// Per-receiver precomputation of the niche and influence terms, shifted by
/// the row maximum, plus the belief-gap factors.
#[derive(Debug, Clone)]
struct ObservationTables {
    n: usize,
    base: Vec<f64>,
    log_base: Vec<f64>,
    gap: [f64; BELIEF_LEVELS],
}

impl ObservationTables {
    fn new(niche: &NicheGeometry, influence: &InfluenceMatrix, config: &EcosystemConfig) -> Self {
        let n = niche.n_agents();
        let mut log_base = vec![f64::NEG_INFINITY; n * n];
        let mut base = vec![0.0; n * n];
        for i in 0..n {
            let row = &mut log_base[i * n..(i + 1) * n];
            for (j, s) in row.iter_mut().enumerate() {
                if j != i {
                    *s = -config.k_c * niche.coord_distance(i, j) - config.k_i * influence.get(i, j);
                }
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (b, s) in base[i * n..(i + 1) * n].iter_mut().zip(row.iter()) {
                *b = (s - max).exp();
            }
        }
        let mut gap = [0.0; BELIEF_LEVELS];
        for (d, g) in gap.iter_mut().enumerate() {
            *g = (-config.k_b * d as f64).exp();
        }
        ObservationTables { n, base, log_base, gap }
    }

    /// Weights proportional to [`observation_weights`] before sparsity.
    fn fill_row(&self, i: usize, belief: Belief, messages: &[Message], k_b: f64, out: &mut [f64]) {
        let n = self.n;
        let base = &self.base[i * n..(i + 1) * n];
        let b = belief.value();
        let mut total = 0.0;
        let mut any_eligible = false;
        for j in 0..n {
            out[j] = match messages[j].level() {
                Some(level) if j != i => {
                    any_eligible = true;
                    base[j] * self.gap[level.abs_diff(b) as usize]
                }
                _ => 0.0,
            };
            total += out[j];
        }
        if total == 0.0 && any_eligible {
            // every eligible sender underflowed against the row maximum;
            // redo the row in log space relative to the eligible maximum
            let logs = &self.log_base[i * n..(i + 1) * n];
            let score = |j: usize, level: u8| logs[j] - k_b * level.abs_diff(b) as f64;
            let max = (0..n)
                .filter_map(|j| messages[j].level().filter(|_| j != i).map(|l| score(j, l)))
                .fold(f64::NEG_INFINITY, f64::max);
            for j in 0..n {
                out[j] = match messages[j].level() {
                    Some(level) if j != i => (score(j, level) - max).exp(),
                    _ => 0.0,
                };
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Streams {
    observation: Stream,
    belief: Stream,
    weight_noise: Stream,
    action: Stream,
    solvers: Vec<Stream>,
}

/// What happened during one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub views: Vec<u32>,
    pub rewards: Vec<f64>,
    /// Number of non-silent register slots filled this step.
    pub filled_slots: usize,
}

/// Full mutable state of a run.
#[derive(Debug, Clone)]
pub struct RunState {
    pub config: EcosystemConfig,
    /// Last completed generation (0 before the first).
    pub generation: usize,
    pub beliefs: Vec<Belief>,
    /// Last message each agent broadcast; SILENT before its first action.
    pub hosted: Vec<Message>,
    /// Messages visible this step.
    pub current: Vec<Message>,
    pub registers: Registers,
    pub w: BeliefWeightMatrix,
    pub delta_w: SquareMatrix,
    pub niche: NicheGeometry,
    pub influence: InfluenceMatrix,
    pub fitness: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Views received during the current generation.
    pub views: Vec<u64>,
    pub solvers: Vec<SepCmaState>,
    /// Genotype currently used by each agent.
    pub genotypes: Vec<Genotype>,
    pub ai_mask: Vec<bool>,
    pub fixed_belief: Vec<bool>,
    policies: Vec<Policy>,
    layout: PolicyLayout,
    slowed_messaging: Vec<bool>,
    offsets: Vec<usize>,
    tables: ObservationTables,
    streams: Streams,
}

impl RunState {
    pub fn new(config: EcosystemConfig) -> Result<Self> {
        config.validate()?;
        let n = config.n_agents;
        let seed = config.seed;
        let mut niche_stream = rng_stream(seed, rng::NICHE);
        let niche = NicheGeometry::generate(config.niche_dim, config.niche_centroids, n, &mut niche_stream)?;
        let ai_mask: Vec<bool> = (0..n).map(|i| config.is_ai(i)).collect();
        let increments: Vec<f64> = ai_mask
            .iter()
            .map(|&ai| {
                if ai && config.ai_type.boosts_ai_influence() {
                    config.influence_increment
                } else {
                    0.0
                }
            })
            .collect();
        let influence = influence_matrix(&niche, &increments)?;
        let tables = ObservationTables::new(&niche, &influence, &config);

        let mut belief_stream = rng_stream(seed, rng::BELIEF);
        let (beliefs, w, delta_w) = init_beliefs_and_weights(&config, &mut belief_stream);

        let layout = PolicyLayout::new(n, config.hidden_units);
        let mut init_stream = rng_stream(seed, rng::POLICY_INIT);
        let mut solvers = Vec::with_capacity(config.subpop_sizes.len());
        let mut solver_streams = Vec::with_capacity(config.subpop_sizes.len());
        let mut genotypes = Vec::with_capacity(n);
        for (p, &size) in config.subpop_sizes.iter().enumerate() {
            let params = SepCmaParams::from_config(&config, size);
            let mut solver = init_solver(layout.param_count(), params, &mut init_stream)?;
            let mut stream = rng_stream(seed, &rng::solver_label(p));
            genotypes.extend(solver.ask(&mut stream)?);
            solvers.push(solver);
            solver_streams.push(stream);
        }
        let policies = genotypes.iter().map(|g| decode(g, layout)).collect::<Result<Vec<_>>>()?;

        let fixed_belief = ai_mask.iter().map(|&ai| ai && config.ai_type.fixes_ai_beliefs()).collect();
        let slowed_messaging = ai_mask
            .iter()
            .map(|&ai| !ai && config.ai_type.slows_human_messaging())
            .collect();
        let offsets = config.subpop_offsets();

        Ok(RunState {
            generation: 0,
            beliefs,
            hosted: vec![Message::SILENT; n],
            current: vec![Message::SILENT; n],
            registers: Registers::silent(n),
            w,
            delta_w,
            niche,
            influence,
            fitness: vec![0.0; n],
            rewards: vec![0.0; n],
            views: vec![0; n],
            solvers,
            genotypes,
            ai_mask,
            fixed_belief,
            policies,
            layout,
            slowed_messaging,
            offsets,
            tables,
            streams: Streams {
                observation: rng_stream(seed, rng::OBSERVATION),
                belief: belief_stream,
                weight_noise: rng_stream(seed, rng::WEIGHT_NOISE),
                action: rng_stream(seed, rng::ACTION),
                solvers: solver_streams,
            },
            config,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.config.n_agents
    }

    /// Whether `agent` picks a new message at within-generation step `t`
    /// (0-based). Everyone acts at `t = 0`.
    pub fn is_due(&self, agent: usize, t: usize) -> bool {
        !self.slowed_messaging[agent] || t % self.config.messaging_slowdown == 0
    }

    /// Runs one step. `t` is the 0-based step index within the generation.
    pub fn step(&mut self, t: usize) -> Result<StepOutcome> {
        let n = self.n_agents();

        // 1. act on the registers sampled in the previous step
        for i in 0..n {
            if self.is_due(i, t) {
                let m = policy::act(&self.policies[i], self.registers.row(i), &mut self.streams.action)?;
                self.hosted[i] = m;
                self.current[i] = m;
            } else if self.config.hosting == Hosting::Silent {
                self.current[i] = Message::SILENT;
            } else {
                self.current[i] = self.hosted[i];
            }
        }

        // 2. observation sampling
        let mut views = vec![0u32; n];
        let mut filled = 0;
        let mut weights = vec![0.0; n];
        for i in 0..n {
            self.tables
                .fill_row(i, self.beliefs[i], &self.current, self.config.k_b, &mut weights);
            sparsify_in_place(&mut weights, self.config.o_sparsity, i);
            let drawn = sample_observations(&weights, self.config.observation_capacity, &mut self.streams.observation);
            let row = self.registers.row_mut(i);
            row.fill(Message::SILENT);
            for j in drawn {
                row[j] = self.current[j];
                views[j] += 1;
                filled += 1;
            }
        }

        // 3. rewards
        let rewards = step_rewards(&views, &self.beliefs, &self.current, self.config.lambda);
        for i in 0..n {
            self.fitness[i] += rewards[i];
            self.views[i] += views[i] as u64;
        }
        self.rewards.clone_from(&rewards);

        // 4. belief weights
        belief::update_weights(
            self.config.weight_update,
            &mut self.w,
            &mut self.delta_w,
            WeightStepInputs {
                messages: &self.current,
                registers: &self.registers,
                rewards: &self.rewards,
            },
            WeightRuleParams::from(&self.config),
            &mut self.streams.weight_noise,
        )?;

        // 5. beliefs, all read from the same snapshot
        let mut next = self.beliefs.clone();
        let mut observed = Vec::with_capacity(self.config.observation_capacity);
        for i in 0..n {
            if self.fixed_belief[i] {
                continue;
            }
            observed.clear();
            for (j, m) in self.registers.row(i).iter().enumerate() {
                if !m.is_silent() {
                    observed.push((j, belief::infer_belief(*m)?));
                }
            }
            if observed.is_empty() {
                continue;
            }
            let sparse;
            let weights = if self.config.b_sparsity > 0.0 {
                sparse = apply_belief_sparsity(self.w.row(i), self.config.b_sparsity, i);
                &sparse[..]
            } else {
                self.w.row(i)
            };
            let ctx = BeliefUpdateContext {
                belief: self.beliefs[i],
                observed: &observed,
                weights,
                c_b: self.config.c_b,
            };
            next[i] = belief::update_belief(&ctx, false, &mut self.streams.belief)?;
        }
        self.beliefs = next;

        Ok(StepOutcome {
            views,
            rewards,
            filled_slots: filled,
        })
    }

    fn wants_diversity(&self, generation: usize) -> bool {
        let every = self.config.diversity_interval;
        generation == self.config.generations || (every > 0 && generation % every == 0)
    }

    /// Metrics for the generation that just finished.
    pub fn metrics_row(&self, generation: usize) -> Result<MetricsRow> {
        let (r_aif, reliable) = metrics::ai_fitness_ratio(&self.fitness, &self.ai_mask);
        let mut histograms = Vec::with_capacity(self.offsets.len());
        let mut groups: Vec<&[Genotype]> = Vec::with_capacity(self.offsets.len());
        for (p, &off) in self.offsets.iter().enumerate() {
            let size = self.config.subpop_sizes[p];
            histograms.push(metrics::belief_histogram(&self.beliefs[off..off + size]));
            groups.push(&self.genotypes[off..off + size]);
        }
        let (within, between) = if self.wants_diversity(generation) {
            let within = groups.iter().map(|g| metrics::diversity(g)).collect::<Result<Vec<_>>>()?;
            (within, Some(metrics::between_diversity(&groups)?))
        } else {
            (Vec::new(), None)
        };
        Ok(MetricsRow {
            generation,
            r_aiv: metrics::ai_views_ratio(&self.views, &self.ai_mask),
            r_aif,
            r_aif_reliable: reliable,
            r_hb0: metrics::human_belief0_ratio(&self.beliefs, &self.ai_mask),
            total_views: self.views.iter().sum(),
            within_diversity: within,
            between_diversity: between,
            histograms,
        })
    }

    /// Hands fitness to every scheduled solver and installs the new genotypes.
    pub fn evolve(&mut self, generation: usize) -> Result<()> {
        for p in 0..self.solvers.len() {
            if schedule_step(generation, p, &self.config) == Schedule::Hold {
                continue;
            }
            let off = self.offsets[p];
            let size = self.config.subpop_sizes[p];
            let solver = &mut self.solvers[p];
            solver.tell(&self.genotypes[off..off + size], &self.fitness[off..off + size])?;
            let fresh = solver.ask(&mut self.streams.solvers[p])?;
            for (k, g) in fresh.into_iter().enumerate() {
                self.policies[off + k] = decode(&g, self.layout)?;
                self.genotypes[off + k] = g;
            }
        }
        Ok(())
    }

    /// Runs all steps of the next generation, records its metrics and evolves.
    pub fn run_generation(&mut self) -> Result<MetricsRow> {
        let generation = self.generation + 1;
        self.fitness.iter_mut().for_each(|f| *f = 0.0);
        self.views.iter_mut().for_each(|v| *v = 0);
        for t in 0..self.config.steps_per_generation {
            self.step(t).map_err(|e| Error::AtStep {
                generation,
                step: t,
                source: Box::new(e),
            })?;
        }
        if self.fitness.iter().any(|f| !f.is_finite()) {
            return Err(Error::non_finite(format!("fitness at generation {generation}")));
        }
        let row = self.metrics_row(generation)?;
        self.evolve(generation).map_err(|e| Error::AtStep {
            generation,
            step: self.config.steps_per_generation,
            source: Box::new(e),
        })?;
        self.generation = generation;
        Ok(row)
    }

    pub fn snapshots(&self) -> Vec<SolverSnapshot> {
        self.solvers.iter().enumerate().map(|(p, s)| s.snapshot(p)).collect()
    }
}

/// Everything a finished run reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutput {
    pub rows: Vec<MetricsRow>,
    pub summary: RunSummary,
    pub final_beliefs: Vec<Belief>,
    pub niche: NicheGeometry,
    /// Solver snapshots every `SNAPSHOT_INTERVAL` generations and at the end.
    pub solver_snapshots: Vec<SolverSnapshot>,
    #[serde(skip)]
    pub final_genotypes: Vec<Genotype>,
}

pub fn run(config: &EcosystemConfig) -> Result<RunOutput> {
    run_with(config, |_, _| {})
}

/// Like [`run`], calling `on_generation` after every generation.
pub fn run_with(config: &EcosystemConfig, mut on_generation: impl FnMut(&RunState, &MetricsRow)) -> Result<RunOutput> {
    let mut state = RunState::new(config.clone())?;
    let mut rows = Vec::with_capacity(config.generations);
    let mut snapshots = state.snapshots();
    for _ in 0..config.generations {
        let row = state.run_generation()?;
        on_generation(&state, &row);
        if state.generation % SNAPSHOT_INTERVAL == 0 || state.generation == config.generations {
            snapshots.extend(state.snapshots());
        }
        rows.push(row);
    }
    let summary = metrics::summarize_run(&rows, config.report_window)?;
    Ok(RunOutput {
        rows,
        summary,
        final_beliefs: state.beliefs,
        niche: state.niche,
        solver_snapshots: snapshots,
        final_genotypes: state.genotypes,
    })
}
