//! Exact t-SNE.

use std::f64::consts::LN_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::LanguageSpace;
use crate::error::{Error, Result};

/// Entropy tolerance, in bits, of the bandwidth search.
const ENTROPY_TOL: f64 = 1e-5;
const MAX_SEARCH_STEPS: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub exaggeration: f64,
    /// Iterations run with exaggerated `P`; the momentum switch happens at
    /// the same point.
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    /// Standard deviation of the Gaussian initialisation.
    pub init_sd: f64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 5.0,
            iterations: 1000,
            learning_rate: 100.0,
            seed: 0,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            init_sd: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection2D {
    pub coords: Vec<[f64; 2]>,
    /// KL divergence after the last iteration.
    pub kl: f64,
    /// KL divergence at the moment exaggeration ended, if it did.
    pub kl_after_exaggeration: Option<f64>,
    pub iterations: usize,
    pub seed: u64,
}

/// Row-major `n×n` squared Euclidean distances.
pub fn squared_distances(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Conditional `p_{j|i}` (row `i`, zero diagonal) and the achieved entropy
/// of every row in bits.
pub fn conditional_probabilities(
    sq_dist: &[f64],
    n: usize,
    perplexity: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_perplexity(n, perplexity)?;
    if sq_dist.len() != n * n {
        return Err(Error::shape(
            "conditional_probabilities",
            &[n, n],
            &[sq_dist.len()],
        ));
    }
    let target = perplexity.log2();
    let mut p = vec![0.0; n * n];
    let mut entropies = Vec::with_capacity(n);
    for i in 0..n {
        let row = &sq_dist[i * n..(i + 1) * n];
        let (probs, h) = calibrate_row(row, i, target);
        if (h - target).abs() > ENTROPY_TOL || !h.is_finite() {
            return Err(Error::Calibration {
                point: i,
                entropy: h,
                target,
            });
        }
        p[i * n..(i + 1) * n].copy_from_slice(&probs);
        entropies.push(h);
    }
    Ok((p, entropies))
}

fn row_distribution(d: &[f64], i: usize, dmin: f64, beta: f64) -> (Vec<f64>, f64) {
    let mut probs: Vec<f64> = d
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            if j == i {
                0.0
            } else {
                (-beta * (v - dmin)).exp()
            }
        })
        .collect();
    let sum: f64 = probs.iter().sum();
    let weighted: f64 = probs
        .iter()
        .zip(d)
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, (p, v))| p * (v - dmin))
        .sum();
    let entropy = (sum.ln() + beta * weighted / sum) / LN_2;
    probs.iter_mut().for_each(|p| *p /= sum);
    (probs, entropy)
}

/// Bisection on the precision `beta = 1/(2σ²)`. Distances are shifted by
/// their minimum so the largest kernel value is exactly 1.
fn calibrate_row(d: &[f64], i: usize, target: f64) -> (Vec<f64>, f64) {
    let dmin = d
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi, mut beta) = (0.0f64, f64::INFINITY, 1.0f64);
    let mut best = row_distribution(d, i, dmin, beta);
    for _ in 0..MAX_SEARCH_STEPS {
        let (probs, h) = row_distribution(d, i, dmin, beta);
        let gap = h - target;
        if gap.abs() < (best.1 - target).abs() {
            best = (probs, h);
        }
        if gap.abs() < 1e-12 {
            break;
        }
        let next = if gap > 0.0 {
            lo = beta;
            if hi.is_infinite() {
                beta * 2.0
            } else {
                0.5 * (beta + hi)
            }
        } else {
            hi = beta;
            0.5 * (beta + lo)
        };
        if next == beta {
            break;
        }
        beta = next;
    }
    best
}

fn check_perplexity(n: usize, perplexity: f64) -> Result<()> {
    if n < 4 {
        return Err(Error::InvalidArgument(format!(
            "t-SNE needs at least 4 points, got {n}"
        )));
    }
    if !(perplexity > 1.0 && perplexity < n as f64) {
        return Err(Error::InvalidArgument(format!(
            "perplexity must lie in (1, {n}), got {perplexity}"
        )));
    }
    Ok(())
}

/// Symmetrised joint `P` (sums to 1) and the per-row entropies in bits.
pub fn joint_probabilities(rows: &[Vec<f64>], perplexity: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rows.len();
    let (cond, entropies) = conditional_probabilities(&squared_distances(rows), n, perplexity)?;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64);
        }
    }
    Ok((p, entropies))
}

fn student_weights(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut w = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            w[i * n + j] = v;
            w[j * n + i] = v;
            z += 2.0 * v;
        }
    }
    (w, z)
}

/// `KL(P || Q)` for the Student-t affinities of `y`.
pub fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let (w, z) = student_weights(y);
    p.iter()
        .zip(&w)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, w)| p * (p / (w / z)).ln())
        .sum()
}

/// t-SNE over arbitrary rows.
pub fn tsne_rows(rows: &[Vec<f64>], config: &TsneConfig) -> Result<Projection2D> {
    if !(config.learning_rate > 0.0) || !config.learning_rate.is_finite() {
        return Err(Error::InvalidArgument(
            "learning rate must be positive".into(),
        ));
    }
    let n = rows.len();
    let (p, _) = joint_probabilities(rows, config.perplexity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            [a * config.init_sd, b * config.init_sd]
        })
        .collect();
    let mut update = vec![[0.0; 2]; n];
    let mut kl_after_exaggeration = None;
    for it in 0..config.iterations {
        if it == config.exaggeration_iters {
            kl_after_exaggeration = Some(kl_divergence(&p, &y));
        }
        let (exaggeration, momentum) = if it < config.exaggeration_iters {
            (config.exaggeration, config.initial_momentum)
        } else {
            (1.0, config.final_momentum)
        };
        let (w, z) = student_weights(&y);
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let wij = w[i * n + j];
                let coeff = 4.0 * (exaggeration * p[i * n + j] - wij / z) * wij;
                g[0] += coeff * (y[i][0] - y[j][0]);
                g[1] += coeff * (y[i][1] - y[j][1]);
            }
            for k in 0..2 {
                update[i][k] = momentum * update[i][k] - config.learning_rate * g[k];
            }
        }
        for (yi, u) in y.iter_mut().zip(&update) {
            yi[0] += u[0];
            yi[1] += u[1];
        }
        let mean = y
            .iter()
            .fold([0.0; 2], |acc, v| [acc[0] + v[0], acc[1] + v[1]])
            .map(|s| s / n as f64);
        for yi in &mut y {
            yi[0] -= mean[0];
            yi[1] -= mean[1];
        }
    }
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-SNE coordinates diverged".into()));
    }
    Ok(Projection2D {
        kl: kl_divergence(&p, &y),
        coords: y,
        kl_after_exaggeration,
        iterations: config.iterations,
        seed: config.seed,
    })
}

pub fn tsne_project(space: &LanguageSpace, config: &TsneConfig) -> Result<Projection2D> {
    tsne_rows(space.matrix(), config)
}
