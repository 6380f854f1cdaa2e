//! The (cell, time-window) outcome panel.
//!
//! A cell's home inventory is fixed across windows at the number of distinct
//! parcels ever transacted in it over the supplied inventory records; the
//! outcome `y` is the fraction of those homes sold at least once inside the
//! window. Cells with fewer than the minimum home count are dropped
//! everywhere.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::{CellIndex, GridSpec};
use crate::ingest::TransactionRecord;
use crate::Real;

/// Calendar-year aligned half-open window `[Jan 1 start, Jan 1 start+len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub start_year: i32,
    pub len_years: u32,
}

impl Window {
    pub fn contains(&self, date: NaiveDate) -> bool {
        let start = NaiveDate::from_ymd_opt(self.start_year, 1, 1).unwrap();
        let end = NaiveDate::from_ymd_opt(self.start_year + self.len_years as i32, 1, 1).unwrap();
        date >= start && date < end
    }

    pub fn end_year_exclusive(&self) -> i32 {
        self.start_year + self.len_years as i32
    }
}

/// Enumerates the yearly-stepped windows covering the study period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub first_start_year: i32,
    /// Last calendar year with data; windows must fit entirely within it.
    pub last_data_year: i32,
    pub window_len_years: u32,
    pub step_years: u32,
}

impl WindowPlan {
    pub fn new(first_start_year: i32, last_data_year: i32, window_len_years: u32) -> Self {
        Self {
            first_start_year,
            last_data_year,
            window_len_years,
            step_years: 1,
        }
    }

    /// Start years of every window `[s, s+len)` with `s+len−1 ≤ last_data_year`.
    pub fn starts(&self) -> Vec<i32> {
        let mut out = Vec::new();
        let mut s = self.first_start_year;
        while s + self.window_len_years as i32 - 1 <= self.last_data_year {
            out.push(s);
            s += self.step_years as i32;
        }
        out
    }

    pub fn window(&self, start_year: i32) -> Window {
        Window {
            start_year,
            len_years: self.window_len_years,
        }
    }
}

/// One (cell, window) observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelEntry {
    pub cell: CellIndex,
    pub window: Window,
    /// Fixed denominator: distinct parcels ever transacted in the cell.
    pub n_homes: u32,
    /// Distinct parcels with at least one in-window transaction.
    pub n_homes_sold: u32,
    pub n_transactions: u32,
    /// Absent iff `n_transactions == 0`.
    pub median_price: Option<Real>,
    pub y: Real,
}

/// Dense panel: one entry per retained cell per window, window-major.
#[derive(Debug, Clone)]
pub struct Panel {
    pub spec: GridSpec,
    pub plan: WindowPlan,
    pub min_homes: u32,
    /// Retained cells sorted by (row, col).
    pub cells: Vec<CellIndex>,
    /// Fixed denominators aligned with `cells`.
    pub n_homes: Vec<u32>,
    pub window_starts: Vec<i32>,
    /// `entries[w * cells.len() + c]` is cell `c` in window `w`.
    pub entries: Vec<PanelEntry>,
}

fn record_cell(spec: &GridSpec, r: &TransactionRecord) -> Result<CellIndex> {
    let (lat, lon) = match (r.latitude, r.longitude) {
        (Some(lat), Some(lon)) => (lat, lon),
        _ => {
            return Err(CoreError::InvalidInput(format!(
                "record for parcel {} has no coordinates; run geojoin first",
                r.parcel_id
            )))
        }
    };
    spec.assign(lat, lon)
}

fn median_of_sorted(prices: &[u64]) -> Option<Real> {
    match prices.len() {
        0 => None,
        n if n % 2 == 1 => Some(prices[n / 2] as Real),
        n => Some((prices[n / 2 - 1] as Real + prices[n / 2] as Real) / 2.0),
    }
}

impl Panel {
    /// Builds the panel.
    ///
    /// `sales` feed the numerator statistics (homes sold, transaction
    /// counts, prices); `homes` define the fixed per-cell inventory. The
    /// inventory normally comes from the same records before the price
    /// clause, so a $0 deed still counts the home as existing.
    pub fn build(
        spec: &GridSpec,
        sales: &[TransactionRecord],
        homes: &[TransactionRecord],
        plan: WindowPlan,
        min_homes: u32,
    ) -> Result<Panel> {
        if plan.window_len_years == 0 {
            return Err(CoreError::InvalidInput("window length must be positive".into()));
        }
        if plan.step_years == 0 {
            return Err(CoreError::InvalidInput("window step must be positive".into()));
        }

        // Fixed denominator: distinct parcels per cell across the whole
        // inventory, plus any parcel seen in sales (sales ⊆ homes when the
        // caller wires the filters as documented; the union keeps
        // n_homes_sold ≤ n_homes structurally true).
        let mut inventory: BTreeMap<CellIndex, BTreeSet<&str>> = BTreeMap::new();
        for r in homes.iter().chain(sales.iter()) {
            let cell = record_cell(spec, r)?;
            inventory.entry(cell).or_default().insert(&r.parcel_id);
        }

        let cells: Vec<CellIndex> = inventory
            .iter()
            .filter(|(_, parcels)| parcels.len() as u32 >= min_homes)
            .map(|(&cell, _)| cell)
            .collect();
        let n_homes: Vec<u32> = cells
            .iter()
            .map(|c| inventory[c].len() as u32)
            .collect();
        let cell_pos: BTreeMap<CellIndex, usize> =
            cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();

        // Sales grouped per retained cell, date-sorted.
        let mut by_cell: Vec<Vec<&TransactionRecord>> = vec![Vec::new(); cells.len()];
        for r in sales {
            let cell = record_cell(spec, r)?;
            if let Some(&pos) = cell_pos.get(&cell) {
                by_cell[pos].push(r);
            }
        }
        for v in &mut by_cell {
            v.sort_by_key(|r| (r.date, r.parcel_id.as_str(), r.price));
        }

        let window_starts = plan.starts();
        // Windows are independent; the window-major collect makes the
        // parallel result identical to the sequential one.
        let by_cell = &by_cell;
        let n_homes_ref = &n_homes;
        let cells_ref = &cells;
        let entries: Vec<PanelEntry> = window_starts
            .par_iter()
            .flat_map_iter(|&start| {
                let window = plan.window(start);
                cells_ref.iter().enumerate().map(move |(pos, &cell)| {
                    let mut parcels = BTreeSet::new();
                    let mut prices: Vec<u64> = Vec::new();
                    for r in &by_cell[pos] {
                        if window.contains(r.date) {
                            parcels.insert(r.parcel_id.as_str());
                            prices.push(r.price);
                        }
                    }
                    prices.sort_unstable();
                    let n_homes_sold = parcels.len() as u32;
                    PanelEntry {
                        cell,
                        window,
                        n_homes: n_homes_ref[pos],
                        n_homes_sold,
                        n_transactions: prices.len() as u32,
                        median_price: median_of_sorted(&prices),
                        y: n_homes_sold as Real / n_homes_ref[pos] as Real,
                    }
                })
            })
            .collect();

        Ok(Panel {
            spec: spec.clone(),
            plan,
            min_homes,
            cells,
            n_homes,
            window_starts,
            entries,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn window_index(&self, start_year: i32) -> Option<usize> {
        self.window_starts.iter().position(|&s| s == start_year)
    }

    pub fn entry(&self, window_idx: usize, cell_pos: usize) -> &PanelEntry {
        &self.entries[window_idx * self.cells.len() + cell_pos]
    }

    pub fn window_entries(&self, window_idx: usize) -> &[PanelEntry] {
        let n = self.cells.len();
        &self.entries[window_idx * n..(window_idx + 1) * n]
    }

    /// Outcome column for one window, aligned with `cells`.
    pub fn y_column(&self, window_idx: usize) -> Vec<Real> {
        self.window_entries(window_idx).iter().map(|e| e.y).collect()
    }
}

/// Ground-truth outcomes for an arbitrary window using the panel's retained
/// cells and fixed denominators. Used by the evaluation harness to score a
/// label window that lies outside the panel's own (pre-split) range.
pub fn window_outcomes(
    panel: &Panel,
    records: &[TransactionRecord],
    window: Window,
) -> Result<Vec<Real>> {
    let cell_pos: BTreeMap<CellIndex, usize> = panel
        .cells
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, i))
        .collect();
    let mut sold: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); panel.cells.len()];
    for r in records {
        if !window.contains(r.date) {
            continue;
        }
        let cell = record_cell(&panel.spec, r)?;
        if let Some(&pos) = cell_pos.get(&cell) {
            sold[pos].insert(&r.parcel_id);
        }
    }
    Ok(sold
        .iter()
        .zip(&panel.n_homes)
        .map(|(parcels, &n)| parcels.len() as Real / n as Real)
        .collect())
}
