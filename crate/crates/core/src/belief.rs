//! Cognitive-contagion belief updates, belief-weight dynamics and belief
//! sparsity.

use rand::Rng;

use crate::config::{EcosystemConfig, WeightUpdate};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::types::{Belief, BeliefWeightMatrix, Message, Registers, SquareMatrix, BELIEF_LEVELS};

/// Floor on `|b - b_i|` so that messages agreeing with the receiver's own
/// belief get a finite score.
pub const DISTANCE_FLOOR: f64 = 0.5;

/// Maps an observed message to the belief the receiver attributes to its
/// sender.
pub trait BeliefInference: Send + Sync {
    fn infer(&self, observation: Message) -> Result<Belief>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl BeliefInference for Identity {
    fn infer(&self, observation: Message) -> Result<Belief> {
        match observation.level() {
            Some(v) => Belief::new(v),
            None => Err(Error::InvalidInput("cannot infer a belief from a silent register".into())),
        }
    }
}

pub fn infer_belief(observation: Message) -> Result<Belief> {
    Identity.infer(observation)
}

/// Inputs to one agent's belief update.
#[derive(Debug, Clone)]
pub struct BeliefUpdateContext<'a> {
    pub belief: Belief,
    /// Observed senders with the belief inferred from their message.
    pub observed: &'a [(usize, Belief)],
    /// Effective weights of the receiver's row, indexed by sender.
    pub weights: &'a [f64],
    pub c_b: f64,
}

/// Natural-log scores of every candidate belief, in ascending belief order.
///
/// Candidates are the current belief plus each observed belief. Working in
/// log space keeps large weights (Random/Reward rules drift without bound)
/// from overflowing.
pub fn belief_log_scores(ctx: &BeliefUpdateContext<'_>) -> Result<Vec<(Belief, f64)>> {
    let mut support = [0.0f64; BELIEF_LEVELS];
    let mut present = [false; BELIEF_LEVELS];
    present[ctx.belief.value() as usize] = true;
    for &(sender, b) in ctx.observed {
        let w = *ctx.weights.get(sender).ok_or(Error::LengthMismatch {
            expected: sender + 1,
            got: ctx.weights.len(),
        })?;
        if !w.is_finite() {
            return Err(Error::non_finite(format!("belief weight for sender {sender}")));
        }
        support[b.value() as usize] += w;
        present[b.value() as usize] = true;
    }
    let mut out = Vec::new();
    for level in 0..BELIEF_LEVELS {
        if !present[level] {
            continue;
        }
        let b = Belief::new(level as u8)?;
        let dist = (b.distance(ctx.belief) as f64).max(DISTANCE_FLOOR);
        out.push((b, ctx.c_b * support[level] / dist));
    }
    Ok(out)
}

/// Unnormalized scores, `exp` of [`belief_log_scores`].
pub fn belief_scores(ctx: &BeliefUpdateContext<'_>) -> Result<Vec<(Belief, f64)>> {
    Ok(belief_log_scores(ctx)?
        .into_iter()
        .map(|(b, s)| (b, s.exp()))
        .collect())
}

/// Samples a candidate proportionally to `exp(log score)`. A single candidate
/// is returned without consuming randomness.
pub fn sample_belief_log(log_scores: &[(Belief, f64)], stream: &mut Stream) -> Belief {
    if log_scores.len() == 1 {
        return log_scores[0].0;
    }
    let max = log_scores.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_scores.iter().map(|c| (c.1 - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = stream.random::<f64>() * total;
    for (c, w) in log_scores.iter().zip(&weights) {
        if u < *w {
            return c.0;
        }
        u -= w;
    }
    log_scores[log_scores.len() - 1].0
}

/// Samples a candidate proportionally to its (positive) score.
pub fn sample_belief(scores: &[(Belief, f64)], stream: &mut Stream) -> Belief {
    let logs: Vec<(Belief, f64)> = scores.iter().map(|&(b, s)| (b, s.ln())).collect();
    sample_belief_log(&logs, stream)
}

/// One contagion step. Fixed-belief agents keep their belief and draw nothing.
pub fn update_belief(ctx: &BeliefUpdateContext<'_>, fixed: bool, stream: &mut Stream) -> Result<Belief> {
    if fixed {
        return Ok(ctx.belief);
    }
    Ok(sample_belief_log(&belief_log_scores(ctx)?, stream))
}

/// Number of entries removed by a sparsity fraction over `n` agents.
pub fn sparsity_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) + 1e-9).floor() as usize
}

/// Senders whose effective weight is zeroed: the `floor(fraction * N)`
/// smallest weights of the row, skipping `self_index`, lower index first on
/// ties.
pub fn belief_sparsity_mask(row: &[f64], fraction: f64, self_index: usize) -> Vec<bool> {
    let mut mask = vec![false; row.len()];
    let n = sparsity_count(fraction, row.len()).min(row.len().saturating_sub(1));
    if n == 0 {
        return mask;
    }
    let mut order: Vec<usize> = (0..row.len()).filter(|&j| j != self_index).collect();
    order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    for &j in &order[..n] {
        mask[j] = true;
    }
    mask
}

/// Effective weights after belief sparsity. The input row is not modified.
pub fn apply_belief_sparsity(row: &[f64], fraction: f64, self_index: usize) -> Vec<f64> {
    let mask = belief_sparsity_mask(row, fraction, self_index);
    row.iter()
        .zip(&mask)
        .map(|(&w, &m)| if m { 0.0 } else { w })
        .collect()
}

/// What the weight rules may read about the current step.
#[derive(Debug, Clone, Copy)]
pub struct WeightStepInputs<'a> {
    /// Message hosted by each agent this step.
    pub messages: &'a [Message],
    pub registers: &'a Registers,
    pub rewards: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightRuleParams {
    pub sigma_r: f64,
    pub sigma_m: f64,
    pub beta: f64,
}

impl From<&EcosystemConfig> for WeightRuleParams {
    fn from(c: &EcosystemConfig) -> Self {
        WeightRuleParams {
            sigma_r: c.sigma_r,
            sigma_m: c.sigma_m,
            beta: c.beta,
        }
    }
}

/// Applies one step of the weight rule in place. `delta` holds the previous
/// step's increment on entry and this step's increment on return.
pub fn update_weights(
    mode: WeightUpdate,
    w: &mut BeliefWeightMatrix,
    delta: &mut SquareMatrix,
    inputs: WeightStepInputs<'_>,
    params: WeightRuleParams,
    stream: &mut Stream,
) -> Result<()> {
    let n = w.n();
    if delta.n() != n || inputs.messages.len() != n || inputs.rewards.len() != n || inputs.registers.n() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: inputs.messages.len(),
        });
    }
    match mode {
        WeightUpdate::Fixed => {
            delta.as_mut_slice().iter_mut().for_each(|d| *d = 0.0);
        }
        WeightUpdate::Random => {
            for (x, d) in w.as_mut_slice().iter_mut().zip(delta.as_mut_slice()) {
                let eps = params.sigma_r * crate::rng::standard_normal(stream);
                *x += eps;
                *d = eps;
            }
        }
        WeightUpdate::Momentum => {
            for (x, d) in w.as_mut_slice().iter_mut().zip(delta.as_mut_slice()) {
                let eps = params.sigma_m * crate::rng::standard_normal(stream);
                let inc = params.beta * *d + eps;
                *x += inc;
                *d = inc;
            }
        }
        WeightUpdate::Reward => {
            for i in 0..n {
                let regs = inputs.registers.row(i);
                let r_i = inputs.rewards[i];
                let d_row = delta.row_mut(i);
                for j in 0..n {
                    d_row[j] = if !regs[j].is_silent() && regs[j] == inputs.messages[j] {
                        (inputs.rewards[j] - r_i).max(0.0)
                    } else {
                        0.0
                    };
                }
                for (x, d) in w.row_mut(i).iter_mut().zip(delta.row(i)) {
                    *x += d;
                }
            }
        }
    }
    if !w.is_finite() {
        return Err(Error::non_finite("belief weight matrix"));
    }
    Ok(())
}

/// Initial beliefs, `W ~ U(0,1)` and `dW ~ U(-0.1, 0.1)`, drawn in that
/// order: W row-major, dW row-major, then one belief per agent. AI agents in
/// zero-start conditions still consume a draw before being set to 0.
pub fn init_beliefs_and_weights(
    config: &EcosystemConfig,
    stream: &mut Stream,
) -> (Vec<Belief>, BeliefWeightMatrix, SquareMatrix) {
    let n = config.n_agents;
    let delta0 = config.init_weight_delta;
    let w = SquareMatrix::from_fn(n, |_, _| stream.random::<f64>());
    let dw = SquareMatrix::from_fn(n, |_, _| stream.random_range(-delta0..=delta0));
    let beliefs = (0..n)
        .map(|i| {
            let b = Belief::new(stream.random_range(0..BELIEF_LEVELS as u8)).expect("in range");
            if config.is_ai(i) && config.ai_type.zeroes_ai_beliefs() {
                Belief::ZERO
            } else {
                b
            }
        })
        .collect();
    (beliefs, w, dw)
}
