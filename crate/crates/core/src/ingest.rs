//! Parsing, validation, filtering, and geolocation of raw deed records.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::Real;

/// One deed event on one parcel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionRecord {
    /// County parcel identifier ("SBL").
    pub parcel_id: String,
    pub date: NaiveDate,
    /// Whole dollars.
    pub price: u64,
    pub deed_type: String,
    pub residential: bool,
    /// Present after geojoin; optional at parse time.
    pub latitude: Option<Real>,
    pub longitude: Option<Real>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParcelLocation {
    pub parcel_id: String,
    pub latitude: Real,
    pub longitude: Real,
}

/// Record-retention policy applied after parsing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub deed_whitelist: BTreeSet<String>,
    /// Records strictly below this price are dropped.
    pub min_price: u64,
    pub residential_only: bool,
    pub date_range: (NaiveDate, NaiveDate),
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            deed_whitelist: ["D1A", "DEED", "D1B", "D1BU"]
                .into_iter()
                .map(str::to_owned)
                .collect(),
            min_price: 5,
            residential_only: true,
            date_range: (
                NaiveDate::from_ymd_opt(2000, 1, 1).unwrap(),
                NaiveDate::from_ymd_opt(2019, 12, 31).unwrap(),
            ),
        }
    }
}

impl FilterPolicy {
    /// Same policy without the price clause. The home inventory used for
    /// panel denominators keeps $0 deeds: a free transfer still evidences
    /// that a home exists.
    pub fn without_price_clause(&self) -> Self {
        let mut p = self.clone();
        p.min_price = 0;
        p
    }

    pub fn validate(&self) -> Result<()> {
        if self.date_range.0 > self.date_range.1 {
            return Err(CoreError::InvalidInput(format!(
                "date range start {} after end {}",
                self.date_range.0, self.date_range.1
            )));
        }
        Ok(())
    }
}

/// Maps logical fields to input column headers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMap {
    pub parcel_id: String,
    pub date: String,
    pub price: String,
    pub deed_type: String,
    pub residential: String,
    pub latitude: Option<String>,
    pub longitude: Option<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            parcel_id: "parcel_id".into(),
            date: "date".into(),
            price: "price".into(),
            deed_type: "deed_type".into(),
            residential: "residential".into(),
            latitude: Some("latitude".into()),
            longitude: Some("longitude".into()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParseOptions {
    pub columns: ColumnMap,
    pub delimiter: u8,
    /// Rows dated outside this range are rejected at parse time (the raw
    /// records contain impossible dates such as 2088).
    pub study_range: (NaiveDate, NaiveDate),
}

impl Default for ParseOptions {
    fn default() -> Self {
        let policy = FilterPolicy::default();
        Self {
            columns: ColumnMap::default(),
            delimiter: b',',
            study_range: policy.date_range,
        }
    }
}

/// A malformed row, kept for the rejects report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    /// 1-based data row number (header not counted).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ParseOutcome {
    pub records: Vec<TransactionRecord>,
    pub rejects: Vec<Reject>,
    /// Exact duplicates (parcel, date, price, deed) dropped, keeping the first.
    pub duplicates_dropped: usize,
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| CoreError::Schema(format!("missing required column '{name}'")))
}

fn parse_bool(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "true" | "t" | "yes" | "y" | "1" => Some(true),
        "false" | "f" | "no" | "n" | "0" => Some(false),
        _ => None,
    }
}

/// Parses delimited text with a header row into transaction records.
///
/// Malformed rows land in the rejects report instead of being silently
/// dropped; a missing required column is a schema error for the whole
/// stream.
pub fn parse_transactions<R: Read>(source: R, opts: &ParseOptions) -> Result<ParseOutcome> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);

    let headers = reader.headers()?.clone();
    let cols = &opts.columns;
    let idx_parcel = header_index(&headers, &cols.parcel_id)?;
    let idx_date = header_index(&headers, &cols.date)?;
    let idx_price = header_index(&headers, &cols.price)?;
    let idx_deed = header_index(&headers, &cols.deed_type)?;
    let idx_res = header_index(&headers, &cols.residential)?;
    let idx_lat = cols
        .latitude
        .as_deref()
        .and_then(|name| headers.iter().position(|h| h.trim() == name));
    let idx_lon = cols
        .longitude
        .as_deref()
        .and_then(|name| headers.iter().position(|h| h.trim() == name));

    let mut records = Vec::new();
    let mut rejects = Vec::new();
    let mut seen = BTreeSet::new();
    let mut duplicates = 0usize;

    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                rejects.push(Reject {
                    row: row_no,
                    reason: format!("unreadable row: {e}"),
                });
                continue;
            }
        };
        let field = |idx: usize| row.get(idx).unwrap_or("");

        let parcel_id = field(idx_parcel).to_owned();
        if parcel_id.is_empty() {
            rejects.push(Reject {
                row: row_no,
                reason: "empty parcel_id".into(),
            });
            continue;
        }
        let date = match NaiveDate::parse_from_str(field(idx_date), "%Y-%m-%d") {
            Ok(d) => d,
            Err(_) => {
                rejects.push(Reject {
                    row: row_no,
                    reason: format!("unparseable date '{}'", field(idx_date)),
                });
                continue;
            }
        };
        if date < opts.study_range.0 || date > opts.study_range.1 {
            rejects.push(Reject {
                row: row_no,
                reason: "date out of range".into(),
            });
            continue;
        }
        let price = match field(idx_price).parse::<u64>() {
            Ok(p) => p,
            Err(_) => {
                rejects.push(Reject {
                    row: row_no,
                    reason: format!("unparseable price '{}'", field(idx_price)),
                });
                continue;
            }
        };
        let deed_type = field(idx_deed).to_owned();
        let residential = match parse_bool(field(idx_res)) {
            Some(b) => b,
            None => {
                rejects.push(Reject {
                    row: row_no,
                    reason: format!("unparseable residential flag '{}'", field(idx_res)),
                });
                continue;
            }
        };
        let parse_coord = |idx: Option<usize>| -> std::result::Result<Option<Real>, String> {
            match idx.map(field) {
                None | Some("") => Ok(None),
                Some(raw) => raw
                    .parse::<Real>()
                    .map(Some)
                    .map_err(|_| format!("unparseable coordinate '{raw}'")),
            }
        };
        let (latitude, longitude) = match (parse_coord(idx_lat), parse_coord(idx_lon)) {
            (Ok(lat), Ok(lon)) => (lat, lon),
            (Err(reason), _) | (_, Err(reason)) => {
                rejects.push(Reject { row: row_no, reason });
                continue;
            }
        };

        let key = (parcel_id.clone(), date, price, deed_type.clone());
        if !seen.insert(key) {
            duplicates += 1;
            continue;
        }
        records.push(TransactionRecord {
            parcel_id,
            date,
            price,
            deed_type,
            residential,
            latitude,
            longitude,
        });
    }

    Ok(ParseOutcome {
        records,
        rejects,
        duplicates_dropped: duplicates,
    })
}

/// Per-clause drop accounting, attributed in the fixed order
/// deed → price → residential → date.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub kept: usize,
    pub dropped_deed: usize,
    pub dropped_price: usize,
    pub dropped_residential: usize,
    pub dropped_date: usize,
}

impl FilterReport {
    pub fn total_dropped(&self) -> usize {
        self.dropped_deed + self.dropped_price + self.dropped_residential + self.dropped_date
    }
}

/// Keeps records satisfying every policy clause; pure.
pub fn filter_transactions(
    records: &[TransactionRecord],
    policy: &FilterPolicy,
) -> (Vec<TransactionRecord>, FilterReport) {
    let mut kept = Vec::new();
    let mut report = FilterReport::default();
    for r in records {
        if !policy.deed_whitelist.contains(&r.deed_type) {
            report.dropped_deed += 1;
        } else if r.price < policy.min_price {
            report.dropped_price += 1;
        } else if policy.residential_only && !r.residential {
            report.dropped_residential += 1;
        } else if r.date < policy.date_range.0 || r.date > policy.date_range.1 {
            report.dropped_date += 1;
        } else {
            kept.push(r.clone());
        }
    }
    report.kept = kept.len();
    (kept, report)
}

/// Attaches coordinates from the location table via shared parcel ids.
///
/// Records without a location row are excluded and reported in `unmatched`.
/// Two location rows for the same parcel with different coordinates are a
/// hard error.
pub fn geojoin(
    records: &[TransactionRecord],
    locations: &[ParcelLocation],
) -> Result<(Vec<TransactionRecord>, Vec<String>)> {
    let mut table: BTreeMap<&str, (Real, Real)> = BTreeMap::new();
    for loc in locations {
        if let Some(&(lat, lon)) = table.get(loc.parcel_id.as_str()) {
            if lat != loc.latitude || lon != loc.longitude {
                return Err(CoreError::ConflictingLocation {
                    parcel_id: loc.parcel_id.clone(),
                    a_lat: lat,
                    a_lon: lon,
                    b_lat: loc.latitude,
                    b_lon: loc.longitude,
                });
            }
        } else {
            table.insert(&loc.parcel_id, (loc.latitude, loc.longitude));
        }
    }

    let mut joined = Vec::with_capacity(records.len());
    let mut unmatched = BTreeSet::new();
    for r in records {
        match table.get(r.parcel_id.as_str()) {
            Some(&(lat, lon)) => {
                let mut out = r.clone();
                out.latitude = Some(lat);
                out.longitude = Some(lon);
                joined.push(out);
            }
            None => {
                unmatched.insert(r.parcel_id.clone());
            }
        }
    }
    Ok((joined, unmatched.into_iter().collect()))
}
