//! Domain value types shared by every module.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of distinct belief (and message) levels.
pub const BELIEF_LEVELS: usize = 10;

/// An agent's position on the contested issue, in `0..BELIEF_LEVELS`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Belief(u8);

impl Belief {
    pub const ZERO: Belief = Belief(0);

    pub fn new(value: u8) -> Result<Self> {
        if (value as usize) < BELIEF_LEVELS {
            Ok(Belief(value))
        } else {
            Err(Error::InvalidInput(format!(
                "belief {value} outside 0..{BELIEF_LEVELS}"
            )))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn distance(self, other: Belief) -> u8 {
        self.0.abs_diff(other.0)
    }
}

impl TryFrom<u8> for Belief {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        Belief::new(v)
    }
}

impl From<Belief> for u8 {
    fn from(b: Belief) -> u8 {
        b.0
    }
}

impl fmt::Display for Belief {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Content of a register or a broadcast. `-1` is the SILENT sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub struct Message(i8);

impl Message {
    pub const SILENT: Message = Message(-1);

    pub fn new(value: i8) -> Result<Self> {
        if value == -1 || (0..BELIEF_LEVELS as i8).contains(&value) {
            Ok(Message(value))
        } else {
            Err(Error::InvalidInput(format!("message {value} outside -1..{BELIEF_LEVELS}")))
        }
    }

    pub fn from_level(level: u8) -> Self {
        debug_assert!((level as usize) < BELIEF_LEVELS);
        Message(level as i8)
    }

    pub fn is_silent(self) -> bool {
        self.0 < 0
    }

    pub fn raw(self) -> i8 {
        self.0
    }

    /// The level carried by this message, `None` when silent.
    pub fn level(self) -> Option<u8> {
        (self.0 >= 0).then_some(self.0 as u8)
    }
}

impl TryFrom<i8> for Message {
    type Error = Error;
    fn try_from(v: i8) -> Result<Self> {
        Message::new(v)
    }
}

impl From<Message> for i8 {
    fn from(m: Message) -> i8 {
        m.0
    }
}

impl From<Belief> for Message {
    fn from(b: Belief) -> Self {
        Message(b.0 as i8)
    }
}

/// Per-receiver observation registers for the whole population: row `i`
/// holds one slot per sender.
#[derive(Debug, Clone, PartialEq)]
pub struct Registers {
    n: usize,
    slots: Vec<Message>,
}

impl Registers {
    pub fn silent(n: usize) -> Self {
        Registers {
            n,
            slots: vec![Message::SILENT; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, receiver: usize) -> &[Message] {
        &self.slots[receiver * self.n..(receiver + 1) * self.n]
    }

    pub fn row_mut(&mut self, receiver: usize) -> &mut [Message] {
        &mut self.slots[receiver * self.n..(receiver + 1) * self.n]
    }

    pub fn get(&self, receiver: usize, sender: usize) -> Message {
        self.slots[receiver * self.n + sender]
    }

    pub fn observed_count(&self) -> usize {
        self.slots.iter().filter(|m| !m.is_silent()).count()
    }
}

/// Dense row-major `n x n` real matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        SquareMatrix { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Belief weights: entry `(i, j)` is how much receiver `i` credits sender `j`.
pub type BeliefWeightMatrix = SquareMatrix;

/// Flat parameter vector of one messaging policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Genotype(pub Vec<f64>);

impl Genotype {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Per-agent reward of one step and fitness accumulated over a generation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub reward: f64,
    pub fitness: f64,
}

impl RewardRecord {
    pub fn accumulate(&mut self, reward: f64) {
        self.reward = reward;
        self.fitness += reward;
    }
}
