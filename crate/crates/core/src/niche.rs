//! Niche geometry: a centroidal Voronoi tessellation of `[0,1]^d`, agent
//! placement, and the pairwise influence matrix derived from it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

const LLOYD_TOLERANCE: f64 = 1e-4;
const LLOYD_MAX_ITERS: usize = 100;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn nearest_centroid(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Lloyd's algorithm on `n_samples` uniform points of the unit cube.
///
/// Stops once no centroid moves more than `1e-4` or after 100 iterations.
/// A centroid that loses all its points is reseeded from a random sample.
pub fn build_cvt(d: usize, k: usize, n_samples: usize, stream: &mut Stream) -> Result<Vec<Vec<f64>>> {
    if d == 0 || k == 0 {
        return Err(Error::InvalidInput("CVT needs d >= 1 and k >= 1".into()));
    }
    if n_samples < 10 * k {
        return Err(Error::InvalidInput(format!(
            "CVT needs at least {} samples for {k} centroids, got {n_samples}",
            10 * k
        )));
    }
    let samples: Vec<Vec<f64>> = (0..n_samples)
        .map(|_| (0..d).map(|_| stream.random::<f64>()).collect())
        .collect();
    let mut centroids: Vec<Vec<f64>> = samples[..k].to_vec();

    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for _ in 0..LLOYD_MAX_ITERS {
        for s in sums.iter_mut() {
            s.iter_mut().for_each(|v| *v = 0.0);
        }
        counts.iter_mut().for_each(|c| *c = 0);
        for p in &samples {
            let c = nearest_centroid(p, &centroids);
            counts[c] += 1;
            for (acc, x) in sums[c].iter_mut().zip(p) {
                *acc += x;
            }
        }
        let mut motion: f64 = 0.0;
        for c in 0..k {
            let next: Vec<f64> = if counts[c] == 0 {
                samples[stream.random_range(0..n_samples)].clone()
            } else {
                sums[c].iter().map(|s| s / counts[c] as f64).collect()
            };
            motion = motion.max(sq_dist(&next, &centroids[c]).sqrt());
            centroids[c] = next;
        }
        if motion < LLOYD_TOLERANCE {
            break;
        }
    }
    Ok(centroids)
}

/// Uniform agent coordinates and their nearest-centroid assignment.
pub fn assign_agents(
    centroids: &[Vec<f64>],
    n_agents: usize,
    stream: &mut Stream,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let d = centroids.first().map_or(0, Vec::len);
    let coords: Vec<Vec<f64>> = (0..n_agents)
        .map(|_| (0..d).map(|_| stream.random::<f64>()).collect())
        .collect();
    let cluster_of = coords.iter().map(|c| nearest_centroid(c, centroids)).collect();
    (coords, cluster_of)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NicheGeometry {
    pub centroids: Vec<Vec<f64>>,
    pub agent_coords: Vec<Vec<f64>>,
    pub cluster_of: Vec<usize>,
    /// Sum of the coordinates of each agent's centroid, before any increment.
    pub influence_score: Vec<f64>,
}

impl NicheGeometry {
    pub fn new(centroids: Vec<Vec<f64>>, agent_coords: Vec<Vec<f64>>, cluster_of: Vec<usize>) -> Self {
        let influence_score = cluster_of
            .iter()
            .map(|&c| centroids[c].iter().sum())
            .collect();
        NicheGeometry {
            centroids,
            agent_coords,
            cluster_of,
            influence_score,
        }
    }

    /// CVT with `100·k·d` Lloyd samples, then agent placement.
    pub fn generate(d: usize, k: usize, n_agents: usize, stream: &mut Stream) -> Result<Self> {
        let centroids = build_cvt(d, k, 100 * k * d, stream)?;
        let (coords, cluster_of) = assign_agents(&centroids, n_agents, stream);
        Ok(NicheGeometry::new(centroids, coords, cluster_of))
    }

    pub fn n_agents(&self) -> usize {
        self.agent_coords.len()
    }

    pub fn coord_distance(&self, i: usize, j: usize) -> f64 {
        sq_dist(&self.agent_coords[i], &self.agent_coords[j]).sqrt()
    }
}

/// Pairwise influence advantage `exp((C_i + inc_i) - (C_j + inc_j))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceMatrix {
    n: usize,
    factors: Vec<f64>,
}

impl InfluenceMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.factors[i * self.n + j]
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

pub fn influence_matrix(niche: &NicheGeometry, increments: &[f64]) -> Result<InfluenceMatrix> {
    let n = niche.n_agents();
    if increments.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: increments.len(),
        });
    }
    let score: Vec<f64> = niche
        .influence_score
        .iter()
        .zip(increments)
        .map(|(c, inc)| c + inc)
        .collect();
    let mut factors = Vec::with_capacity(n * n);
    for si in &score {
        for sj in &score {
            factors.push((si - sj).exp());
        }
    }
    Ok(InfluenceMatrix { n, factors })
}
