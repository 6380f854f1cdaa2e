//! The N×M analysis grid: local projection, construction, cell assignment.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::ingest::ParcelLocation;
use crate::Real;

/// Mean Earth radius, meters.
pub const EARTH_RADIUS_M: Real = 6_371_000.0;

/// Local equirectangular projection centered on a reference point.
///
/// City-scale extents (< 20 km) make the distortion negligible, which keeps
/// the pipeline free of geodesy dependencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub ref_lat_deg: Real,
    pub ref_lon_deg: Real,
}

impl Projection {
    /// Degrees → meters east/north of the reference point.
    pub fn project(&self, lat: Real, lon: Real) -> (Real, Real) {
        let x = (lon - self.ref_lon_deg).to_radians()
            * self.ref_lat_deg.to_radians().cos()
            * EARTH_RADIUS_M;
        let y = (lat - self.ref_lat_deg).to_radians() * EARTH_RADIUS_M;
        (x, y)
    }

    /// Meters east/north of the reference point → degrees.
    pub fn invert(&self, x: Real, y: Real) -> (Real, Real) {
        let lat = self.ref_lat_deg + (y / EARTH_RADIUS_M).to_degrees();
        let lon = self.ref_lon_deg
            + (x / (EARTH_RADIUS_M * self.ref_lat_deg.to_radians().cos())).to_degrees();
        (lat, lon)
    }
}

/// Discrete address of a grid cell; row 0 is the southern edge, col 0 the
/// western edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellIndex {
    pub row: u32,
    pub col: u32,
}

/// Geometry of the analysis grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub projection: Projection,
    /// Projected coordinates of the grid's southwest corner, meters.
    pub origin_x_m: Real,
    pub origin_y_m: Real,
    pub cell_side_m: Real,
    pub n_rows: u32,
    pub n_cols: u32,
}

impl GridSpec {
    /// Builds the grid covering all parcels with square cells of area
    /// `a2_km2`. The projection is centered on the parcel centroid and the
    /// origin sits at the bounding box's southwest corner.
    pub fn build(parcels: &[ParcelLocation], a2_km2: Real) -> Result<GridSpec> {
        if parcels.is_empty() {
            return Err(CoreError::InvalidInput("empty parcel list".into()));
        }
        if !(a2_km2 > 0.0) {
            return Err(CoreError::InvalidInput(format!(
                "cell area must be positive, got {a2_km2}"
            )));
        }
        let n = parcels.len() as Real;
        let projection = Projection {
            ref_lat_deg: parcels.iter().map(|p| p.latitude).sum::<Real>() / n,
            ref_lon_deg: parcels.iter().map(|p| p.longitude).sum::<Real>() / n,
        };
        let cell_side_m = a2_km2.sqrt() * 1000.0;

        let mut min_x = Real::INFINITY;
        let mut min_y = Real::INFINITY;
        let mut max_x = Real::NEG_INFINITY;
        let mut max_y = Real::NEG_INFINITY;
        for p in parcels {
            if !p.latitude.is_finite() || !p.longitude.is_finite() {
                return Err(CoreError::InvalidInput(format!(
                    "non-finite coordinates for parcel {}",
                    p.parcel_id
                )));
            }
            let (x, y) = projection.project(p.latitude, p.longitude);
            min_x = min_x.min(x);
            min_y = min_y.min(y);
            max_x = max_x.max(x);
            max_y = max_y.max(y);
        }

        // Cells are half-open, so a parcel exactly on the far boundary must
        // still land in a real cell: size by floor(extent/side) + 1.
        let cells_for = |extent: Real| ((extent / cell_side_m).floor() as u32) + 1;
        Ok(GridSpec {
            projection,
            origin_x_m: min_x,
            origin_y_m: min_y,
            cell_side_m,
            n_rows: cells_for(max_y - min_y),
            n_cols: cells_for(max_x - min_x),
        })
    }

    pub fn n_cells(&self) -> usize {
        self.n_rows as usize * self.n_cols as usize
    }

    /// Assigns a point to its half-open cell: `floor((p − origin)/side)` per
    /// axis, so a point on a shared boundary belongs to the higher-index
    /// cell.
    pub fn assign(&self, lat: Real, lon: Real) -> Result<CellIndex> {
        let (x, y) = self.projection.project(lat, lon);
        self.assign_projected(x, y)
    }

    /// Same as [`GridSpec::assign`] but takes projected meters.
    pub fn assign_projected(&self, x: Real, y: Real) -> Result<CellIndex> {
        let col = ((x - self.origin_x_m) / self.cell_side_m).floor();
        let row = ((y - self.origin_y_m) / self.cell_side_m).floor();
        if col < 0.0 || row < 0.0 || col >= self.n_cols as Real || row >= self.n_rows as Real {
            let (lat, lon) = self.projection.invert(x, y);
            return Err(CoreError::OutsideGrid { lat, lon });
        }
        Ok(CellIndex {
            row: row as u32,
            col: col as u32,
        })
    }

    /// Cell centroid in projected meters.
    pub fn centroid(&self, cell: CellIndex) -> (Real, Real) {
        (
            self.origin_x_m + (cell.col as Real + 0.5) * self.cell_side_m,
            self.origin_y_m + (cell.row as Real + 0.5) * self.cell_side_m,
        )
    }

    /// Closed exterior ring of the cell in (longitude, latitude) order,
    /// counter-clockwise, for GeoJSON export.
    pub fn cell_ring_lonlat(&self, cell: CellIndex) -> [(Real, Real); 5] {
        let x0 = self.origin_x_m + cell.col as Real * self.cell_side_m;
        let y0 = self.origin_y_m + cell.row as Real * self.cell_side_m;
        let x1 = x0 + self.cell_side_m;
        let y1 = y0 + self.cell_side_m;
        let corner = |x, y| {
            let (lat, lon) = self.projection.invert(x, y);
            (lon, lat)
        };
        [
            corner(x0, y0),
            corner(x1, y0),
            corner(x1, y1),
            corner(x0, y1),
            corner(x0, y0),
        ]
    }
}
