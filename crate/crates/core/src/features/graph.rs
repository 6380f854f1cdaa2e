//! k-nearest-neighbor structure over the retained cells.
//!
//! The home-count filter leaves holes in the grid, so neighborhoods are
//! defined by centroid distance over the retained cells rather than by full
//! grid adjacency.

use crate::error::{CoreError, Result};
use crate::grid::{CellIndex, GridSpec};
use crate::Real;

/// For each retained cell, every other retained cell ordered by centroid
/// distance, ties broken by (row, col) so the order is total.
#[derive(Debug, Clone)]
pub struct NeighborGraph {
    pub cells: Vec<CellIndex>,
    centroids: Vec<(Real, Real)>,
    neighbors: Vec<Vec<u32>>,
}

impl NeighborGraph {
    pub fn build(spec: &GridSpec, cells: &[CellIndex]) -> Result<NeighborGraph> {
        if cells.is_empty() {
            return Err(CoreError::InvalidInput("no retained cells".into()));
        }
        let centroids: Vec<(Real, Real)> = cells.iter().map(|&c| spec.centroid(c)).collect();
        let neighbors = (0..cells.len())
            .map(|i| {
                let mut order: Vec<u32> = (0..cells.len() as u32).filter(|&j| j as usize != i).collect();
                order.sort_by(|&a, &b| {
                    let da = sq_dist(centroids[i], centroids[a as usize]);
                    let db = sq_dist(centroids[i], centroids[b as usize]);
                    da.partial_cmp(&db)
                        .unwrap()
                        .then_with(|| cells[a as usize].cmp(&cells[b as usize]))
                });
                order
            })
            .collect();
        Ok(NeighborGraph {
            cells: cells.to_vec(),
            centroids,
            neighbors,
        })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// The `k` nearest cells of `i` (all of them when fewer exist).
    pub fn nearest(&self, i: usize, k: usize) -> &[u32] {
        let all = &self.neighbors[i];
        &all[..k.min(all.len())]
    }

    pub fn centroid(&self, i: usize) -> (Real, Real) {
        self.centroids[i]
    }

    /// Centroid distance in meters.
    pub fn distance(&self, i: usize, j: usize) -> Real {
        sq_dist(self.centroids[i], self.centroids[j]).sqrt()
    }
}

fn sq_dist(a: (Real, Real), b: (Real, Real)) -> Real {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    dx * dx + dy * dy
}
