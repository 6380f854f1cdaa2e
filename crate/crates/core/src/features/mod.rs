//! Endogenous-gentrification feature construction.
//!
//! Per window and statistic family (transaction count, percent sold, median
//! price) the pipeline computes the cell's own value, neighbor-ring
//! averages, local Moran's I features, and distance features, then stacks
//! them at temporal lags 1..δ for each labeled window. Features for the
//! label window at start `s` only ever read windows ending at or before
//! `s`: there is no contemporaneous leakage by construction.

pub mod graph;
pub mod moran;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use graph::NeighborGraph;
pub use moran::{
    global_moran, global_moran_test, local_moran, LisaColumn, LisaResult, MoranParams, Quadrant,
    Sidedness,
};

use crate::error::{CoreError, Result};
use crate::grid::CellIndex;
use crate::panel::{Panel, PanelEntry};
use crate::scalar::Scalar;
use crate::Real;

/// The three per-entry base statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Transactions,
    PctSold,
    MedianPrice,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Transactions, Family::PctSold, Family::MedianPrice];

    pub fn code(self) -> &'static str {
        match self {
            Family::Transactions => "n_transactions",
            Family::PctSold => "pct_sold",
            Family::MedianPrice => "median_price",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureParams {
    /// Neighbor-ring sizes for spatial lags (and LISA neighbor features).
    pub ring_sizes: Vec<usize>,
    /// Neighbor count for the LISA weights.
    pub lisa_k: usize,
    /// Temporal lag depth δ.
    pub delta: usize,
    pub n_perm: usize,
    pub seed: u64,
    pub sidedness: Sidedness,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            ring_sizes: vec![8, 16, 24, 32, 40],
            lisa_k: 8,
            delta: 3,
            n_perm: 999,
            seed: 0,
            sidedness: Sidedness::TwoSided,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    SelfValue,
    WasMissing,
    RingLag,
    LisaStatistic,
    LisaPValue,
    LisaQuadrant,
    LisaNeighborMax,
    LisaNeighborMaxDistance,
    DistanceToMax,
    HomeCount,
}

/// Sidecar schema entry: what a feature column is made of.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub family: Option<Family>,
    pub ring: Option<usize>,
    /// Temporal lag depth; absent for lag-invariant columns.
    pub lag: Option<usize>,
    pub kind: ColumnKind,
}

/// Row identity in an assembled matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowMeta {
    pub cell: CellIndex,
    /// Position of the cell within the panel's retained-cell list.
    pub cell_pos: usize,
    pub label_start_year: i32,
}

/// Column-major feature matrix with named columns; values are fully
/// imputed (missing entries were replaced by the window's cross-cell median
/// with a companion indicator column).
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub schema: Vec<ColumnSchema>,
    pub columns: Vec<Vec<Real>>,
    pub rows: Vec<RowMeta>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.schema.iter().map(|s| s.name.clone()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|s| s.name == name)
    }

    pub fn value(&self, row: usize, col: usize) -> Real {
        self.columns[col][row]
    }
}

/// Assembly result; dropped rows lacked full lag history.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub matrix: FeatureMatrix,
    pub dropped_rows: usize,
}

/// Base statistic columns for one window's entries.
#[derive(Debug, Clone)]
pub struct CellStatistics {
    pub n_transactions: Vec<Real>,
    pub pct_sold: Vec<Real>,
    /// Masked when a cell had no in-window transactions.
    pub median_price: Vec<Option<Real>>,
}

pub fn cell_statistics(entries: &[PanelEntry]) -> Result<CellStatistics> {
    if entries.is_empty() {
        return Err(CoreError::InvalidInput("empty panel".into()));
    }
    Ok(CellStatistics {
        n_transactions: entries.iter().map(|e| e.n_transactions as Real).collect(),
        pct_sold: entries.iter().map(|e| e.y).collect(),
        median_price: entries.iter().map(|e| e.median_price).collect(),
    })
}

/// Unweighted mean over the k nearest cells, skipping masked neighbors with
/// re-normalization. `k_capped` is set when fewer than `k` neighbors exist.
#[derive(Debug, Clone)]
pub struct LagColumn<S> {
    pub values: Vec<Option<S>>,
    pub k_capped: bool,
}

pub fn spatial_lag<S: Scalar>(
    values: &[Option<S>],
    graph: &NeighborGraph,
    k: usize,
) -> LagColumn<S> {
    let n = graph.len();
    let k_capped = k > n.saturating_sub(1);
    let out = (0..n)
        .map(|i| {
            let mut sum = S::zero();
            let mut count = 0usize;
            for &j in graph.nearest(i, k) {
                if let Some(v) = values[j as usize] {
                    sum += v;
                    count += 1;
                }
            }
            if count == 0 {
                None
            } else {
                Some(sum / S::from_count(count))
            }
        })
        .collect();
    LagColumn {
        values: out,
        k_capped,
    }
}

/// Per cell: the maximum local-Moran statistic among its k nearest
/// neighbors and the centroid distance to that neighbor. Ties go to the
/// earlier neighbor in the graph's total order.
pub fn lisa_lag_features<S: Scalar>(
    lisa_stats: &[S],
    graph: &NeighborGraph,
    k: usize,
) -> (Vec<S>, Vec<S>) {
    let n = graph.len();
    let mut max_stat = Vec::with_capacity(n);
    let mut dist = Vec::with_capacity(n);
    for i in 0..n {
        let nbrs = graph.nearest(i, k);
        let mut best = nbrs[0];
        for &j in &nbrs[1..] {
            if lisa_stats[j as usize] > lisa_stats[best as usize] {
                best = j;
            }
        }
        max_stat.push(lisa_stats[best as usize]);
        dist.push(S::from_f64(graph.distance(i, best as usize)).unwrap());
    }
    (max_stat, dist)
}

/// Per cell: centroid distance to the global argmax of the column. Masked
/// cells cannot be the argmax; ties go to the first cell in (row, col)
/// order.
pub fn distance_to_max<S: Scalar>(values: &[Option<S>], graph: &NeighborGraph) -> Result<Vec<S>> {
    let mut best: Option<(usize, S)> = None;
    for (i, v) in values.iter().enumerate() {
        if let Some(v) = *v {
            match best {
                Some((_, b)) if v <= b => {}
                _ => best = Some((i, v)),
            }
        }
    }
    let (argmax, _) = best.ok_or_else(|| CoreError::InvalidInput("all-masked column".into()))?;
    Ok((0..graph.len())
        .map(|i| S::from_f64(graph.distance(i, argmax)).unwrap())
        .collect())
}

fn median_of<S: Scalar>(values: &mut Vec<S>) -> Option<S> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / S::from_count(2)
    })
}

/// Missing-value rule: masked entries take the window's cross-cell median
/// and are marked in a companion indicator column.
#[derive(Debug, Clone)]
pub struct ImputedColumn<S> {
    pub values: Vec<S>,
    pub missing: Vec<S>,
}

pub fn impute_window_median<S: Scalar>(values: &[Option<S>]) -> ImputedColumn<S> {
    let mut present: Vec<S> = values.iter().filter_map(|v| *v).collect();
    let fill = median_of(&mut present).unwrap_or_else(S::zero);
    ImputedColumn {
        values: values.iter().map(|v| v.unwrap_or(fill)).collect(),
        missing: values
            .iter()
            .map(|v| if v.is_some() { S::zero() } else { S::one() })
            .collect(),
    }
}

/// Per-window column templates in their fixed order (lag suffix appended at
/// assembly).
fn window_templates(params: &FeatureParams) -> Vec<ColumnSchema> {
    let mut out = Vec::new();
    let quad_codes = ["hh", "hl", "lh", "ll"];
    for family in Family::ALL {
        let f = family.code();
        let push = |out: &mut Vec<ColumnSchema>, name: String, ring, kind| {
            out.push(ColumnSchema {
                name,
                family: Some(family),
                ring,
                lag: None,
                kind,
            });
        };
        push(&mut out, f.to_string(), None, ColumnKind::SelfValue);
        if family == Family::MedianPrice {
            push(
                &mut out,
                format!("{f}__was_missing"),
                None,
                ColumnKind::WasMissing,
            );
        }
        for &k in &params.ring_sizes {
            push(&mut out, format!("{f}__ring{k}"), Some(k), ColumnKind::RingLag);
        }
        push(&mut out, format!("{f}__lisa_i"), None, ColumnKind::LisaStatistic);
        push(&mut out, format!("{f}__lisa_p"), None, ColumnKind::LisaPValue);
        for code in quad_codes {
            push(
                &mut out,
                format!("{f}__lisa_{code}"),
                None,
                ColumnKind::LisaQuadrant,
            );
        }
        for &k in &params.ring_sizes {
            push(
                &mut out,
                format!("{f}__lisa_max_ring{k}"),
                Some(k),
                ColumnKind::LisaNeighborMax,
            );
            push(
                &mut out,
                format!("{f}__lisa_maxdist_ring{k}"),
                Some(k),
                ColumnKind::LisaNeighborMaxDistance,
            );
        }
        push(&mut out, format!("{f}__dist_to_max"), None, ColumnKind::DistanceToMax);
    }
    out
}

/// The full assembled schema: every window template at lags 1..δ plus the
/// lag-invariant home count.
pub fn feature_catalog(params: &FeatureParams) -> Vec<ColumnSchema> {
    let templates = window_templates(params);
    let mut out = Vec::new();
    for lag in 1..=params.delta {
        for t in &templates {
            out.push(ColumnSchema {
                name: format!("{}__lag{lag}", t.name),
                family: t.family,
                ring: t.ring,
                lag: Some(lag),
                kind: t.kind,
            });
        }
    }
    out.push(ColumnSchema {
        name: "n_homes".into(),
        family: None,
        ring: None,
        lag: None,
        kind: ColumnKind::HomeCount,
    });
    out
}

/// All per-window feature columns for one panel window, template order.
fn window_block(
    panel: &Panel,
    graph: &NeighborGraph,
    params: &FeatureParams,
    window_idx: usize,
) -> Result<Vec<Vec<Real>>> {
    let entries = panel.window_entries(window_idx);
    let stats = cell_statistics(entries)?;
    let n = graph.len();

    // Window-scoped Moran seed so identical fields in different windows
    // still draw independent permutations.
    let window_seed = params
        .seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(panel.window_starts[window_idx] as u64);

    let mut block: Vec<Vec<Real>> = Vec::new();
    for family in Family::ALL {
        let raw: Vec<Option<Real>> = match family {
            Family::Transactions => stats.n_transactions.iter().map(|&v| Some(v)).collect(),
            Family::PctSold => stats.pct_sold.iter().map(|&v| Some(v)).collect(),
            Family::MedianPrice => stats.median_price.clone(),
        };
        let imputed = impute_window_median(&raw);

        block.push(imputed.values.clone());
        if family == Family::MedianPrice {
            block.push(imputed.missing.clone());
        }
        for &k in &params.ring_sizes {
            let lag = spatial_lag(&raw, graph, k);
            block.push(impute_window_median(&lag.values).values);
        }

        let moran_params = MoranParams {
            k: params.lisa_k,
            n_perm: params.n_perm,
            seed: window_seed,
            sidedness: params.sidedness,
        };
        let lisa = local_moran(&imputed.values, graph, &moran_params)?;
        let stats_col: Vec<Real> = lisa.results.iter().map(|r| r.statistic).collect();
        block.push(stats_col.clone());
        block.push(
            lisa.results
                .iter()
                .map(|r| r.p_value.unwrap_or(1.0))
                .collect(),
        );
        for quad in [
            Quadrant::HighHigh,
            Quadrant::HighLow,
            Quadrant::LowHigh,
            Quadrant::LowLow,
        ] {
            block.push(
                lisa.results
                    .iter()
                    .map(|r| if r.quadrant == quad { 1.0 } else { 0.0 })
                    .collect(),
            );
        }
        for &k in &params.ring_sizes {
            let (max_stat, dist) = lisa_lag_features(&stats_col, graph, k);
            block.push(max_stat);
            block.push(dist);
        }
        match distance_to_max(&raw, graph) {
            Ok(col) => block.push(col),
            // All cells masked in this window: no argmax exists; the
            // was_missing indicator already records the situation.
            Err(_) => block.push(vec![0.0; n]),
        }
    }
    Ok(block)
}

/// Assembles feature rows for the requested label-window starts.
///
/// A label at start `s` draws every template column from the windows
/// `[s − d·len, s − (d−1)·len)` for d = 1..δ; those windows end at or
/// before `s`, so no feature uses in-label or post-label data. Label starts
/// whose lag windows are not all present in the panel are dropped and
/// counted.
pub fn assemble(
    panel: &Panel,
    graph: &NeighborGraph,
    params: &FeatureParams,
    label_starts: &[i32],
) -> Result<Assembled> {
    if graph.len() != panel.n_cells() {
        return Err(CoreError::InvalidInput(
            "neighbor graph does not match panel cells".into(),
        ));
    }
    if panel.n_cells() == 0 {
        return Err(CoreError::InvalidInput("panel has no retained cells".into()));
    }
    if params.delta == 0 {
        return Err(CoreError::InvalidInput("lag depth must be positive".into()));
    }
    let len = panel.plan.window_len_years as i32;

    // Which label starts have every lag window in the panel?
    let mut kept_starts: Vec<(i32, Vec<usize>)> = Vec::new();
    let mut dropped_rows = 0usize;
    let mut needed_windows: Vec<usize> = Vec::new();
    for &s in label_starts {
        let lags: Option<Vec<usize>> = (1..=params.delta)
            .map(|d| panel.window_index(s - d as i32 * len))
            .collect();
        match lags {
            Some(idxs) => {
                for &idx in &idxs {
                    if !needed_windows.contains(&idx) {
                        needed_windows.push(idx);
                    }
                }
                kept_starts.push((s, idxs));
            }
            None => dropped_rows += panel.n_cells(),
        }
    }
    if kept_starts.is_empty() {
        return Err(CoreError::InsufficientHistory(format!(
            "no label window has {} lag windows of length {len} inside the panel",
            params.delta
        )));
    }

    let mut blocks: BTreeMap<usize, Vec<Vec<Real>>> = BTreeMap::new();
    for idx in needed_windows {
        blocks.insert(idx, window_block(panel, graph, params, idx)?);
    }

    let schema = feature_catalog(params);
    let n_cells = panel.n_cells();
    let n_rows = kept_starts.len() * n_cells;
    let n_templates = window_templates(params).len();

    let mut columns: Vec<Vec<Real>> = vec![Vec::with_capacity(n_rows); schema.len()];
    let mut rows: Vec<RowMeta> = Vec::with_capacity(n_rows);
    for (s, lag_windows) in &kept_starts {
        for (cell_pos, &cell) in panel.cells.iter().enumerate() {
            rows.push(RowMeta {
                cell,
                cell_pos,
                label_start_year: *s,
            });
            for (d, &w_idx) in lag_windows.iter().enumerate() {
                let block = &blocks[&w_idx];
                for (t, col) in block.iter().enumerate() {
                    columns[d * n_templates + t].push(col[cell_pos]);
                }
            }
            columns[params.delta * n_templates].push(panel.n_homes[cell_pos] as Real);
        }
    }

    Ok(Assembled {
        matrix: FeatureMatrix {
            schema,
            columns,
            rows,
        },
        dropped_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::graph::tests::{full_grid_cells, test_spec};
    use crate::panel::Window;
    use proptest::prelude::*;

    fn entry(n_tx: u32, y: Real, median: Option<Real>) -> PanelEntry {
        PanelEntry {
            cell: CellIndex { row: 0, col: 0 },
            window: Window {
                start_year: 2005,
                len_years: 1,
            },
            n_homes: 20,
            n_homes_sold: (y * 20.0) as u32,
            n_transactions: n_tx,
            median_price: median,
            y,
        }
    }

    #[test]
    fn cell_statistics_extracts_three_columns() {
        let entries = vec![
            entry(3, 0.10, Some(200_000.0)),
            entry(2, 0.05, Some(150_000.0)),
            entry(0, 0.0, None),
        ];
        let stats = cell_statistics(&entries).unwrap();
        assert_eq!(stats.n_transactions, vec![3.0, 2.0, 0.0]);
        assert_eq!(stats.pct_sold, vec![0.10, 0.05, 0.0]);
        assert_eq!(
            stats.median_price,
            vec![Some(200_000.0), Some(150_000.0), None]
        );
    }

    #[test]
    fn spatial_lag_constant_field() {
        let spec = test_spec(3, 3);
        let graph = NeighborGraph::build(&spec, &full_grid_cells(3, 3)).unwrap();
        let values: Vec<Option<f64>> = vec![Some(4.2); 9];
        for k in [2, 5, 8] {
            let lag = spatial_lag(&values, &graph, k);
            assert!(!lag.k_capped);
            assert!(lag.values.iter().all(|v| (v.unwrap() - 4.2).abs() < 1e-12));
        }
    }

    #[test]
    fn spatial_lag_center_of_3x3() {
        let spec = test_spec(3, 3);
        let cells = full_grid_cells(3, 3);
        let graph = NeighborGraph::build(&spec, &cells).unwrap();
        let values: Vec<Option<f64>> = (1..=9).map(|v| Some(v as f64)).collect();
        let lag = spatial_lag(&values, &graph, 8);
        // Center cell (index 4, value 5): mean of the 8 outer values.
        assert!((lag.values[4].unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn spatial_lag_skips_masked_with_renormalization() {
        let spec = test_spec(1, 3);
        let graph = NeighborGraph::build(&spec, &full_grid_cells(1, 3)).unwrap();
        let values = vec![Some(1.0f64), None, Some(5.0)];
        let lag = spatial_lag(&values, &graph, 2);
        assert_eq!(lag.values[0], Some(5.0)); // only the non-masked neighbor
        assert_eq!(lag.values[1], Some(3.0));
        assert_eq!(lag.values[2], Some(1.0));
        // All-masked neighborhood.
        let all_masked = vec![None, Some(1.0f64), None];
        let lag = spatial_lag(&all_masked, &graph, 1);
        assert_eq!(lag.values[1], None);
    }

    #[test]
    fn spatial_lag_flags_capped_k() {
        let spec = test_spec(1, 3);
        let graph = NeighborGraph::build(&spec, &full_grid_cells(1, 3)).unwrap();
        let values = vec![Some(1.0f64), Some(2.0), Some(3.0)];
        assert!(spatial_lag(&values, &graph, 10).k_capped);
    }

    /// Brute-force oracle: sort every other cell by (distance, row, col)
    /// and average the non-masked among the k nearest.
    fn lag_oracle(values: &[Option<f64>], graph: &NeighborGraph, k: usize) -> Vec<Option<f64>> {
        (0..graph.len())
            .map(|i| {
                let mut others: Vec<usize> = (0..graph.len()).filter(|&j| j != i).collect();
                others.sort_by(|&a, &b| {
                    graph
                        .distance(i, a)
                        .partial_cmp(&graph.distance(i, b))
                        .unwrap()
                        .then_with(|| graph.cells[a].cmp(&graph.cells[b]))
                });
                let nearest = &others[..k.min(others.len())];
                let present: Vec<f64> = nearest.iter().filter_map(|&j| values[j]).collect();
                if present.is_empty() {
                    None
                } else {
                    Some(present.iter().sum::<f64>() / present.len() as f64)
                }
            })
            .collect()
    }

    #[test]
    fn spatial_lag_matches_bruteforce_on_irregular_cells() {
        use rand::{Rng, SeedableRng};
        let spec = test_spec(9, 9);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for trial in 0..8 {
            let cells: Vec<CellIndex> = full_grid_cells(9, 9)
                .into_iter()
                .filter(|_| rng.gen_bool(0.55))
                .collect();
            if cells.len() < 5 {
                continue;
            }
            let graph = NeighborGraph::build(&spec, &cells).unwrap();
            let values: Vec<Option<f64>> = (0..cells.len())
                .map(|_| {
                    if rng.gen_bool(0.15) {
                        None
                    } else {
                        Some(rng.gen_range(-2.0..2.0))
                    }
                })
                .collect();
            let k = 3 + trial;
            let got = spatial_lag(&values, &graph, k).values;
            let want = lag_oracle(&values, &graph, k);
            for (g, w) in got.iter().zip(&want) {
                match (g, w) {
                    (Some(g), Some(w)) => assert!((g - w).abs() < 1e-12),
                    (None, None) => {}
                    _ => panic!("mask mismatch"),
                }
            }
        }
    }

    #[test]
    fn lisa_lag_tie_breaks_to_nearest_neighbor() {
        let spec = test_spec(3, 3);
        let cells = full_grid_cells(3, 3);
        let graph = NeighborGraph::build(&spec, &cells).unwrap();
        let stats = vec![7.0f64; 9];
        let (max_stat, dist) = lisa_lag_features(&stats, &graph, 8);
        for i in 0..9 {
            assert_eq!(max_stat[i], 7.0);
            let nearest = graph.nearest(i, 1)[0] as usize;
            assert_eq!(dist[i], graph.distance(i, nearest));
        }
    }

    #[test]
    fn lisa_lag_picks_dominant_neighbor() {
        let spec = test_spec(1, 4);
        let graph = NeighborGraph::build(&spec, &full_grid_cells(1, 4)).unwrap();
        let stats = vec![0.0f64, 0.1, 0.2, 9.0];
        let (max_stat, dist) = lisa_lag_features(&stats, &graph, 3);
        assert_eq!(max_stat[0], 9.0);
        assert_eq!(dist[0], 3_000.0);
    }

    #[test]
    fn lisa_lag_matches_bruteforce_scan() {
        use rand::{Rng, SeedableRng};
        let spec = test_spec(6, 6);
        let cells = full_grid_cells(6, 6);
        let graph = NeighborGraph::build(&spec, &cells).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let stats: Vec<f64> = (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for k in [4, 9, 20] {
            let (max_stat, dist) = lisa_lag_features(&stats, &graph, k);
            for i in 0..36 {
                let nbrs = graph.nearest(i, k);
                let mut best = nbrs[0] as usize;
                for &j in nbrs {
                    if stats[j as usize] > stats[best] {
                        best = j as usize;
                    }
                }
                assert_eq!(max_stat[i], stats[best]);
                assert_eq!(dist[i], graph.distance(i, best));
            }
        }
    }

    #[test]
    fn distance_to_max_basics() {
        let spec = test_spec(1, 2);
        let graph = NeighborGraph::build(&spec, &full_grid_cells(1, 2)).unwrap();
        let values = vec![Some(1.0f64), Some(2.0)];
        let d = distance_to_max(&values, &graph).unwrap();
        assert_eq!(d[1], 0.0); // the argmax cell itself
        assert_eq!(d[0], 1_000.0);
        assert!(distance_to_max::<f64>(&[None, None], &graph).is_err());
    }

    #[test]
    fn distance_to_max_matches_exhaustive_scan() {
        use rand::{Rng, SeedableRng};
        let spec = test_spec(5, 5);
        let cells = full_grid_cells(5, 5);
        let graph = NeighborGraph::build(&spec, &cells).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let values: Vec<Option<f64>> = (0..25).map(|_| Some(rng.gen_range(0.0..10.0))).collect();
        let d = distance_to_max(&values, &graph).unwrap();
        let mut argmax = 0usize;
        for i in 1..25 {
            if values[i].unwrap() > values[argmax].unwrap() {
                argmax = i;
            }
        }
        for i in 0..25 {
            assert_eq!(d[i], graph.distance(i, argmax));
        }
    }

    #[test]
    fn imputation_fills_window_median_and_flags() {
        let col = vec![Some(1.0f64), None, Some(3.0), Some(10.0)];
        let imp = impute_window_median(&col);
        assert_eq!(imp.values, vec![1.0, 3.0, 3.0, 10.0]);
        assert_eq!(imp.missing, vec![0.0, 1.0, 0.0, 0.0]);
    }

    proptest! {
        /// lag(αx + βy) = α·lag(x) + β·lag(y) for a fixed mask pattern.
        #[test]
        fn spatial_lag_is_linear(
            xs in prop::collection::vec(-5.0f64..5.0, 16),
            ys in prop::collection::vec(-5.0f64..5.0, 16),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
            k in 1usize..10,
        ) {
            let spec = test_spec(4, 4);
            let graph = NeighborGraph::build(&spec, &full_grid_cells(4, 4)).unwrap();
            let x: Vec<Option<f64>> = xs.iter().map(|&v| Some(v)).collect();
            let y: Vec<Option<f64>> = ys.iter().map(|&v| Some(v)).collect();
            let combo: Vec<Option<f64>> = xs
                .iter()
                .zip(&ys)
                .map(|(&a, &b)| Some(alpha * a + beta * b))
                .collect();
            let lag_x = spatial_lag(&x, &graph, k).values;
            let lag_y = spatial_lag(&y, &graph, k).values;
            let lag_combo = spatial_lag(&combo, &graph, k).values;
            for i in 0..16 {
                let expect = alpha * lag_x[i].unwrap() + beta * lag_y[i].unwrap();
                prop_assert!((lag_combo[i].unwrap() - expect).abs() < 1e-9);
            }
        }
    }

    // Assembly tests drive the panel end: they build a small panel directly.
    pub(crate) mod assembly {
        use super::*;
        use crate::grid::GridSpec;
        use crate::ingest::{ParcelLocation, TransactionRecord};
        use crate::panel::WindowPlan;
        use chrono::NaiveDate;

        /// 4×4 grid of parcel clusters, 12 homes each, with sales driven by
        /// a deterministic pattern.
        pub(crate) fn build_test_panel(first_year: i32, last_year: i32, len: u32) -> Panel {
            let mut locs = Vec::new();
            let mut recs = Vec::new();
            for gy in 0..4i32 {
                for gx in 0..4i32 {
                    for i in 0..12i32 {
                        let id = format!("p{gy}_{gx}_{i}");
                        let lat = 42.90 + gy as f64 * 0.0093 + (i as f64) * 1e-5;
                        let lon = -78.85 + gx as f64 * 0.0127;
                        locs.push(ParcelLocation {
                            parcel_id: id.clone(),
                            latitude: lat,
                            longitude: lon,
                        });
                        for year in first_year..=last_year {
                            if (year + gy * 3 + gx * 5 + i) % 4 == 0 {
                                recs.push(TransactionRecord {
                                    parcel_id: id.clone(),
                                    date: NaiveDate::from_ymd_opt(year, 6, 1).unwrap(),
                                    price: 40_000 + (i as u64) * 1_000 + year as u64,
                                    deed_type: "DEED".into(),
                                    residential: true,
                                    latitude: Some(lat),
                                    longitude: Some(lon),
                                });
                            }
                        }
                    }
                }
            }
            let spec = GridSpec::build(&locs, 1.0).unwrap();
            let plan = WindowPlan::new(first_year, last_year, len);
            Panel::build(&spec, &recs, &recs, plan, 10).unwrap()
        }

        pub(crate) fn quick_params() -> FeatureParams {
            FeatureParams {
                ring_sizes: vec![3, 6],
                lisa_k: 3,
                delta: 3,
                n_perm: 19,
                seed: 1,
                sidedness: Sidedness::TwoSided,
            }
        }

        #[test]
        fn retains_label_with_full_history_and_drops_without() {
            let panel = build_test_panel(2000, 2009, 1);
            let graph = NeighborGraph::build(&panel.spec, &panel.cells).unwrap();
            let params = quick_params();
            // 2009 has lags 2008, 2007, 2006: retained. 2002 lacks t−3.
            let asm = assemble(&panel, &graph, &params, &[2009, 2002]).unwrap();
            assert_eq!(asm.dropped_rows, panel.n_cells());
            assert_eq!(asm.matrix.n_rows(), panel.n_cells());
            assert!(asm.matrix.rows.iter().all(|r| r.label_start_year == 2009));
        }

        #[test]
        fn no_history_at_all_is_error() {
            let panel = build_test_panel(2000, 2005, 1);
            let graph = NeighborGraph::build(&panel.spec, &panel.cells).unwrap();
            let err = assemble(&panel, &graph, &quick_params(), &[2001]).unwrap_err();
            assert!(matches!(err, CoreError::InsufficientHistory(_)));
        }

        #[test]
        fn column_count_matches_independent_enumeration() {
            let panel = build_test_panel(2000, 2009, 1);
            let graph = NeighborGraph::build(&panel.spec, &panel.cells).unwrap();
            let params = quick_params();
            let asm = assemble(&panel, &graph, &params, &[2009]).unwrap();
            // Independent count: per family and lag, 1 self + R rings +
            // 2 LISA + 4 quadrants + 2R LISA-neighbor + 1 distance; the
            // median family adds a was-missing indicator; plus the
            // lag-invariant home count.
            let r = params.ring_sizes.len();
            let per_family = 1 + r + 2 + 4 + 2 * r + 1;
            let expected = params.delta * (3 * per_family + 1) + 1;
            assert_eq!(asm.matrix.n_cols(), expected);
            let names = asm.matrix.names();
            let unique: std::collections::BTreeSet<&String> = names.iter().collect();
            assert_eq!(unique.len(), names.len(), "column names must be unique");
        }

        #[test]
        fn default_catalog_size() {
            let params = FeatureParams::default();
            // 5 rings: 3 × (1 + 5 + 2 + 4 + 10 + 1) + 1 = 70 per lag; δ = 3
            // lags plus n_homes.
            assert_eq!(feature_catalog(&params).len(), 211);
        }

        #[test]
        fn lag_columns_read_earlier_windows() {
            let panel = build_test_panel(2000, 2009, 1);
            let graph = NeighborGraph::build(&panel.spec, &panel.cells).unwrap();
            let params = quick_params();
            let asm = assemble(&panel, &graph, &params, &[2009]).unwrap();
            let col = asm.matrix.column_index("pct_sold__lag2").unwrap();
            let w = panel.window_index(2007).unwrap();
            for (i, row) in asm.matrix.rows.iter().enumerate() {
                assert_eq!(
                    asm.matrix.value(i, col),
                    panel.entry(w, row.cell_pos).y,
                    "lag-2 pct_sold must equal the 2007 window value"
                );
            }
        }

        /// Fold-scoped construction is leakage-free: a panel built from
        /// pre-cutoff windows yields bit-identical features for the cutoff
        /// label regardless of anything dated later.
        #[test]
        fn future_data_cannot_touch_features() {
            let full_panel = build_test_panel(2000, 2009, 1);
            let graph = NeighborGraph::build(&full_panel.spec, &full_panel.cells).unwrap();
            let params = quick_params();
            let a = assemble(&full_panel, &graph, &params, &[2009]).unwrap();
            let pre_panel = build_test_panel(2000, 2008, 1);
            let pre_graph = NeighborGraph::build(&pre_panel.spec, &pre_panel.cells).unwrap();
            let b = assemble(&pre_panel, &pre_graph, &params, &[2009]).unwrap();
            assert_eq!(a.matrix.columns, b.matrix.columns);
        }
    }
}
