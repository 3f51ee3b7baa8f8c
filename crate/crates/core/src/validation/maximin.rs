//! Space-filling training sets: simulated annealing on the minimum pairwise
//! distance of the selected points.

use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::index;
use rand::Rng;

use crate::spatial::{distance_matrix, Coordinates};
use crate::validation::stats;
use crate::Matrix;

/// Cooling schedule. The starting temperature defaults to the median
/// pairwise distance.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct AnnealConfig {
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none"))]
    pub initial_temperature: Option<f64>,
    pub cooling: f64,
    pub iters_per_temperature: usize,
    /// Stop once the temperature falls below this fraction of the start.
    pub stop_ratio: f64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            initial_temperature: None,
            cooling: 0.95,
            iters_per_temperature: 200,
            stop_ratio: 1e-3,
        }
    }
}

/// Smallest distance between two of the listed points; infinite for fewer
/// than two.
pub fn min_pairwise_distance(dist: &Matrix, idx: &[usize]) -> f64 {
    let mut best = f64::INFINITY;
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            best = best.min(dist[(i, j)]);
        }
    }
    best
}

/// Objective trace of one annealing run.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnealOutcome {
    pub indices: Vec<usize>,
    pub min_distance: f64,
    /// Objective after every accepted move.
    pub accepted: Vec<f64>,
}

/// Objective with ties broken by the number of pairs at the minimum, so
/// that moves thinning out the closest pairs are rewarded.
fn energy(dist: &Matrix, idx: &[usize]) -> (f64, usize) {
    let m = min_pairwise_distance(dist, idx);
    let mut count = 0;
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            if dist[(i, j)] <= m * (1.0 + 1e-12) {
                count += 1;
            }
        }
    }
    (m, count)
}

/// Change in objective from `a` to `b`. A change in the minimum dominates;
/// at an equal minimum each extra tied pair costs a small fraction of
/// `scale`.
fn delta(a: (f64, usize), b: (f64, usize), scale: f64) -> f64 {
    if b.0 != a.0 {
        b.0 - a.0
    } else {
        -1e-6 * scale * (b.1 as f64 - a.1 as f64)
    }
}

/// Runs the annealer and records the objective after each accepted swap.
pub fn maximin_anneal<R: Rng + ?Sized>(
    coords: &Coordinates,
    n: usize,
    cfg: &AnnealConfig,
    rng: &mut R,
) -> AnnealOutcome {
    let total = coords.len();
    let n = n.min(total);
    let dist = distance_matrix(coords);
    if n == total || n < 2 {
        let indices: Vec<usize> = if n == total {
            (0..total).collect()
        } else {
            index::sample(rng, total, n).into_vec()
        };
        let m = min_pairwise_distance(&dist, &indices);
        return AnnealOutcome {
            indices,
            min_distance: m,
            accepted: Vec::new(),
        };
    }
    let mut all = Vec::with_capacity(total * (total - 1) / 2);
    for i in 0..total {
        for j in (i + 1)..total {
            all.push(dist[(i, j)]);
        }
    }
    let scale = stats::quantile(&all, 0.5);
    let t0 = cfg.initial_temperature.unwrap_or(scale);

    let mut current: Vec<usize> = index::sample(rng, total, n).into_vec();
    let mut in_set = alloc::vec![false; total];
    for &i in &current {
        in_set[i] = true;
    }
    let mut cur = energy(&dist, &current);
    let mut best = current.clone();
    let mut best_e = cur;
    let mut accepted = Vec::new();

    let mut t = t0;
    loop {
        for _ in 0..cfg.iters_per_temperature {
            let pos = rng.random_range(0..n);
            let cand = loop {
                let c = rng.random_range(0..total);
                if !in_set[c] {
                    break c;
                }
            };
            let old = current[pos];
            current[pos] = cand;
            let e = energy(&dist, &current);
            let d = delta(cur, e, scale);
            let accept = d >= 0.0 || (t > 0.0 && rng.random::<f64>() < Float::exp(d / t));
            if accept {
                in_set[old] = false;
                in_set[cand] = true;
                cur = e;
                accepted.push(e.0);
                if delta(best_e, e, scale) > 0.0 {
                    best_e = e;
                    best = current.clone();
                }
            } else {
                current[pos] = old;
            }
        }
        t *= cfg.cooling;
        if !(t >= cfg.stop_ratio * t0) || t0 <= 0.0 {
            break;
        }
    }
    best.sort_unstable();
    let m = min_pairwise_distance(&dist, &best);
    AnnealOutcome {
        indices: best,
        min_distance: m,
        accepted,
    }
}

/// `n` indices chosen to maximize the smallest pairwise distance.
pub fn maximin_select<R: Rng + ?Sized>(
    coords: &Coordinates,
    n: usize,
    cfg: &AnnealConfig,
    rng: &mut R,
) -> Vec<usize> {
    maximin_anneal(coords, n, cfg, rng).indices
}

/// Best minimum distance among `tries` uniformly random subsets of size `n`.
pub fn best_random_min_distance<R: Rng + ?Sized>(
    coords: &Coordinates,
    n: usize,
    tries: usize,
    rng: &mut R,
) -> f64 {
    let dist = distance_matrix(coords);
    (0..tries)
        .map(|_| min_pairwise_distance(&dist, &index::sample(rng, coords.len(), n).into_vec()))
        .fold(0.0, f64::max)
}
