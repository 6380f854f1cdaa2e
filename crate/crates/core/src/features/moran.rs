//! Local and global Moran's I over k-nearest-neighbor weights.
//!
//! Normalization follows Anselin's convention: with `z_i = x_i − x̄` and
//! `m2 = Σ z²/n`, the local statistic is `I_i = (z_i/m2)·Σ_j w_ij z_j` with
//! row-standardized weights over the k nearest retained cells. Significance
//! comes from conditional permutation: cell i's value is held fixed while
//! its neighbor values are drawn from the remaining cells.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::graph::NeighborGraph;
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

/// LISA quadrant from the signs of (z_i, spatial lag of z).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quadrant {
    HighHigh,
    HighLow,
    LowHigh,
    LowLow,
}

impl Quadrant {
    fn from_signs<S: Scalar>(z: S, lag: S) -> Quadrant {
        match (z >= S::zero(), lag >= S::zero()) {
            (true, true) => Quadrant::HighHigh,
            (true, false) => Quadrant::HighLow,
            (false, true) => Quadrant::LowHigh,
            (false, false) => Quadrant::LowLow,
        }
    }
}

/// Which tail of the permutation distribution counts as "at least as
/// extreme".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sidedness {
    TwoSided,
    Greater,
    Less,
}

impl Default for Sidedness {
    fn default() -> Self {
        Sidedness::TwoSided
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MoranParams {
    /// Neighbors per cell for the row-standardized weights.
    pub k: usize,
    pub n_perm: usize,
    pub seed: u64,
    pub sidedness: Sidedness,
}

impl Default for MoranParams {
    fn default() -> Self {
        Self {
            k: 8,
            n_perm: 999,
            seed: 0,
            sidedness: Sidedness::TwoSided,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LisaResult<S> {
    pub statistic: S,
    /// `(r+1)/(n_perm+1)` for `r` permutations at least as extreme; masked
    /// on a degenerate (constant) field.
    pub p_value: Option<S>,
    pub quadrant: Quadrant,
    /// Row-standardized spatial lag of z.
    pub lag: S,
}

#[derive(Debug, Clone)]
pub struct LisaColumn<S> {
    pub results: Vec<LisaResult<S>>,
    /// Set when the input field is constant: statistics are all zero and
    /// p-values masked.
    pub degenerate: bool,
}

fn moments<S: Scalar>(values: &[S]) -> (Vec<S>, S) {
    let n = S::from_count(values.len());
    let mean = values.iter().copied().sum::<S>() / n;
    let z: Vec<S> = values.iter().map(|&v| v - mean).collect();
    let m2 = z.iter().map(|&v| v * v).sum::<S>() / n;
    (z, m2)
}

fn knn_lag<S: Scalar>(z: &[S], neighbors: &[u32]) -> S {
    let sum: S = neighbors.iter().map(|&j| z[j as usize]).sum();
    sum / S::from_count(neighbors.len())
}

fn extreme_count<S: Scalar>(observed: S, perms: &[S], sidedness: Sidedness) -> usize {
    match sidedness {
        Sidedness::TwoSided => perms.iter().filter(|&&p| p.abs() >= observed.abs()).count(),
        Sidedness::Greater => perms.iter().filter(|&&p| p >= observed).count(),
        Sidedness::Less => perms.iter().filter(|&&p| p <= observed).count(),
    }
}

/// Local Moran's I for every cell of the graph.
pub fn local_moran<S: Scalar>(
    values: &[S],
    graph: &NeighborGraph,
    params: &MoranParams,
) -> Result<LisaColumn<S>> {
    let n = graph.len();
    if values.len() != n {
        return Err(CoreError::LengthMismatch {
            left: values.len(),
            right: n,
        });
    }
    if n < 3 {
        return Err(CoreError::InvalidInput(format!(
            "local Moran needs at least 3 cells, got {n}"
        )));
    }

    let (z, m2) = moments(values);
    if m2 == S::zero() {
        let results = (0..n)
            .map(|_| LisaResult {
                statistic: S::zero(),
                p_value: None,
                quadrant: Quadrant::HighHigh,
                lag: S::zero(),
            })
            .collect();
        return Ok(LisaColumn {
            results,
            degenerate: true,
        });
    }

    let k = params.k.min(n - 1);
    let results: Vec<LisaResult<S>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let neighbors = graph.nearest(i, k);
            let lag = knn_lag(&z, neighbors);
            let scale = z[i] / m2;
            let statistic = scale * lag;

            // Conditional permutation with a per-cell substream so the
            // result does not depend on the parallel schedule.
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(i as u64 + 1);
            let k_eff = neighbors.len();
            let mut perms = Vec::with_capacity(params.n_perm);
            for _ in 0..params.n_perm {
                let draw = rand::seq::index::sample(&mut rng, n - 1, k_eff);
                let mut sum = S::zero();
                for idx in draw.iter() {
                    let j = if idx >= i { idx + 1 } else { idx };
                    sum += z[j];
                }
                perms.push(scale * (sum / S::from_count(k_eff)));
            }
            let r = extreme_count(statistic, &perms, params.sidedness);
            let p = S::from_count(r + 1) / S::from_count(params.n_perm + 1);

            LisaResult {
                statistic,
                p_value: Some(p),
                quadrant: Quadrant::from_signs(z[i], lag),
                lag,
            }
        })
        .collect();

    Ok(LisaColumn {
        results,
        degenerate: false,
    })
}

/// Global Moran's I under the same weights and m2 normalization; equals the
/// mean of the local statistics.
pub fn global_moran<S: Scalar>(values: &[S], graph: &NeighborGraph, k: usize) -> Result<S> {
    let n = graph.len();
    if values.len() != n {
        return Err(CoreError::LengthMismatch {
            left: values.len(),
            right: n,
        });
    }
    let (z, m2) = moments(values);
    if m2 == S::zero() {
        return Err(CoreError::Degenerate("constant field".into()));
    }
    let k = k.min(n - 1);
    let total: S = (0..n)
        .map(|i| z[i] / m2 * knn_lag(&z, graph.nearest(i, k)))
        .sum();
    Ok(total / S::from_count(n))
}

/// Global Moran's I with a full-permutation significance test: the whole
/// field is shuffled `n_perm` times. Returns `(I, p)`.
pub fn global_moran_test<S: Scalar>(
    values: &[S],
    graph: &NeighborGraph,
    k: usize,
    n_perm: usize,
    seed: u64,
    sidedness: Sidedness,
) -> Result<(S, S)> {
    use rand::seq::SliceRandom;

    let observed = global_moran(values, graph, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = values.to_vec();
    let mut perms = Vec::with_capacity(n_perm);
    for _ in 0..n_perm {
        shuffled.shuffle(&mut rng);
        perms.push(global_moran(&shuffled, graph, k)?);
    }
    let r = extreme_count(observed, &perms, sidedness);
    let p = S::from_count(r + 1) / S::from_count(n_perm + 1);
    Ok((observed, p))
}
