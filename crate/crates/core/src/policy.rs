//! MLP messaging policies decoded from flat genotypes.
//!
//! Parameter order: input-to-hidden weights (row-major, `hidden x input`),
//! hidden biases, hidden-to-output weights (row-major, `output x hidden`),
//! output biases. Hidden units use `tanh`; the output head is a softmax over
//! the message levels.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::types::{Genotype, Message, BELIEF_LEVELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyLayout {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
}

impl PolicyLayout {
    pub fn new(n_agents: usize, hidden_dim: usize) -> Self {
        PolicyLayout {
            input_dim: n_agents,
            hidden_dim,
            output_dim: BELIEF_LEVELS,
        }
    }

    pub fn param_count(&self) -> usize {
        self.input_dim * self.hidden_dim + self.hidden_dim + self.hidden_dim * self.output_dim + self.output_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    layout: PolicyLayout,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    // input-major copy of w1 and `b1 - sum_j w1[:, j]`, the pre-activation of
    // an all-silent input; used by the sparse forward pass
    w1_by_input: Vec<f64>,
    silent_pre: Vec<f64>,
}

pub fn decode(genotype: &Genotype, layout: PolicyLayout) -> Result<Policy> {
    let expected = layout.param_count();
    if genotype.len() != expected {
        return Err(Error::Decode {
            expected,
            got: genotype.len(),
        });
    }
    let (i, h, o) = (layout.input_dim, layout.hidden_dim, layout.output_dim);
    let p = genotype.as_slice();
    let (w1, rest) = p.split_at(h * i);
    let (b1, rest) = rest.split_at(h);
    let (w2, b2) = rest.split_at(o * h);

    let mut w1_by_input = vec![0.0; h * i];
    let mut silent_pre = b1.to_vec();
    for r in 0..h {
        for c in 0..i {
            let w = w1[r * i + c];
            w1_by_input[c * h + r] = w;
            silent_pre[r] -= w;
        }
    }
    Ok(Policy {
        layout,
        w1: w1.to_vec(),
        b1: b1.to_vec(),
        w2: w2.to_vec(),
        b2: b2.to_vec(),
        w1_by_input,
        silent_pre,
    })
}

/// Inverse of [`decode`].
pub fn encode(policy: &Policy) -> Genotype {
    let mut out = Vec::with_capacity(policy.layout.param_count());
    out.extend_from_slice(&policy.w1);
    out.extend_from_slice(&policy.b1);
    out.extend_from_slice(&policy.w2);
    out.extend_from_slice(&policy.b2);
    Genotype(out)
}

/// SILENT stays `-1.0`; a message `m` maps to `m / 9`.
pub fn encode_registers(registers: &[Message]) -> Vec<f64> {
    registers.iter().map(|&m| register_feature(m)).collect()
}

fn register_feature(m: Message) -> f64 {
    match m.level() {
        None => -1.0,
        Some(v) => v as f64 / (BELIEF_LEVELS - 1) as f64,
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl Policy {
    pub fn layout(&self) -> PolicyLayout {
        self.layout
    }

    fn output_logits(&self, hidden: &[f64]) -> Vec<f64> {
        let h = self.layout.hidden_dim;
        self.b2
            .iter()
            .enumerate()
            .map(|(o, b)| {
                let row = &self.w2[o * h..(o + 1) * h];
                b + row.iter().zip(hidden).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }

    /// Dense forward pass on an already featurized input.
    pub fn logits_dense(&self, x: &[f64]) -> Vec<f64> {
        let (i, h) = (self.layout.input_dim, self.layout.hidden_dim);
        let hidden: Vec<f64> = (0..h)
            .map(|r| {
                let row = &self.w1[r * i..(r + 1) * i];
                (self.b1[r] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).tanh()
            })
            .collect();
        self.output_logits(&hidden)
    }

    /// Forward pass that only touches the non-silent registers. Silent slots
    /// contribute `-w`, which is folded into `silent_pre` at decode time.
    pub fn logits(&self, registers: &[Message]) -> Vec<f64> {
        let h = self.layout.hidden_dim;
        let mut pre = self.silent_pre.clone();
        for (c, &m) in registers.iter().enumerate() {
            if m.is_silent() {
                continue;
            }
            let shift = register_feature(m) + 1.0;
            let col = &self.w1_by_input[c * h..(c + 1) * h];
            for (p, w) in pre.iter_mut().zip(col) {
                *p += w * shift;
            }
        }
        pre.iter_mut().for_each(|p| *p = p.tanh());
        self.output_logits(&pre)
    }

    pub fn message_probabilities(&self, registers: &[Message]) -> Result<Vec<f64>> {
        let logits = self.logits(registers);
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::non_finite("policy logits (solver divergence?)"));
        }
        Ok(softmax(&logits))
    }
}

/// Draws an index from a probability vector that sums to one.
pub(crate) fn sample_categorical(probs: &[f64], stream: &mut Stream) -> usize {
    let u: f64 = stream.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // rounding left a sliver above the cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Samples one message from the policy given the agent's own registers.
pub fn act(policy: &Policy, registers: &[Message], stream: &mut Stream) -> Result<Message> {
    if registers.len() != policy.layout.input_dim {
        return Err(Error::LengthMismatch {
            expected: policy.layout.input_dim,
            got: registers.len(),
        });
    }
    let probs = policy.message_probabilities(registers)?;
    Ok(Message::from_level(sample_categorical(&probs, stream) as u8))
}
