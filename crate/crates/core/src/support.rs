//! Dataset ingestion and finite support grids.
//!
//! Records come from a CSV with columns
//! `base_station,user_type,channel_gain_db,noise_power_db`. Each record turns
//! into a linear-scale gain-to-noise ratio, and the ratios of one base station
//! are min-max normalized into `[0, 1]`.

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Points closer than this in every coordinate are treated as one grid point.
const DEDUP_TOL: f64 = 1e-12;

/// Finite, sorted, duplicate-free set of points in `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportGrid {
    points: Vec<Vec<f64>>,
    dim: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl SupportGrid {
    /// Builds a grid from arbitrary points. Points are sorted
    /// lexicographically and near-duplicates are merged.
    pub fn from_points(mut points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = match points.first() {
            Some(p) => p.len(),
            None => return Err(Error::InvalidInput("support grid must be non-empty".into())),
        };
        if dim == 0 {
            return Err(Error::InvalidInput(
                "support grid points must have dimension >= 1".into(),
            ));
        }
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("support grid points must be finite".into()));
            }
        }
        points.sort_by(|a, b| lex_cmp(a, b));
        points.dedup_by(|b, a| a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= DEDUP_TOL));

        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for p in &points {
            for i in 0..dim {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        Ok(Self { points, dim, lo, hi })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    /// Index of a grid point equal to `x` (within the dedup tolerance).
    pub fn position(&self, x: &[f64]) -> Option<usize> {
        self.points
            .iter()
            .position(|p| p.iter().zip(x).all(|(a, b)| (a - b).abs() <= DEDUP_TOL))
    }

    /// Largest absolute coordinate over all grid points.
    pub fn max_abs_coordinate(&self) -> f64 {
        self.points
            .iter()
            .flat_map(|p| p.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

pub(crate) fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            ord => return ord,
        }
    }
    a.len().cmp(&b.len())
}

/// Uniformly spaced values on `[lo, hi]`; a single level yields the midpoint.
///
/// Values are placed symmetrically about the midpoint so that a symmetric
/// interval produces exactly negated pairs.
pub(crate) fn uniform_levels(lo: f64, hi: f64, levels: usize) -> Vec<f64> {
    let mid = 0.5 * (lo + hi);
    if levels == 1 {
        return vec![mid];
    }
    let half = 0.5 * (hi - lo);
    let denom = (levels - 1) as f64;
    (0..levels)
        .map(|i| {
            let k = 2 * i as i64 - (levels as i64 - 1);
            if i == 0 {
                lo
            } else if i == levels - 1 {
                hi
            } else {
                mid + half * (k as f64) / denom
            }
        })
        .collect()
}

/// Cartesian product of per-dimension value lists, in lexicographic order.
pub(crate) fn cartesian<T: Clone>(axes: &[Vec<T>]) -> Vec<Vec<T>> {
    let mut out: Vec<Vec<T>> = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for prefix in &out {
            for v in axis {
                let mut p = prefix.clone();
                p.push(v.clone());
                next.push(p);
            }
        }
        out = next;
    }
    out
}

/// Uniform grid with `levels` points per dimension on the box `[lo, hi]`.
pub fn build_support_grid(lo: &[f64], hi: &[f64], levels: usize) -> Result<SupportGrid> {
    if lo.len() != hi.len() {
        return Err(Error::DimensionMismatch {
            expected: lo.len(),
            got: hi.len(),
        });
    }
    if lo.is_empty() {
        return Err(Error::InvalidInput("grid dimension must be >= 1".into()));
    }
    if levels < 2 {
        return Err(Error::InvalidParameter(format!("levels must be >= 2, got {levels}")));
    }
    if lo
        .iter()
        .zip(hi)
        .any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite())
    {
        return Err(Error::InvalidBounds);
    }
    let axes: Vec<Vec<f64>> = lo.iter().zip(hi).map(|(&l, &h)| uniform_levels(l, h, levels)).collect();
    SupportGrid::from_points(cartesian(&axes))
}

/// Converts a decibel value to linear scale.
pub fn db_to_linear(x_db: f64) -> Result<f64> {
    if !x_db.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite dB value {x_db}")));
    }
    Ok(10f64.powf(x_db / 10.0))
}

/// Min-max normalization into `[0, 1]`.
pub fn minmax_normalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::InvalidInput("cannot normalize an empty list".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("cannot normalize non-finite values".into()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range <= 0.0 {
        return Err(Error::DegenerateRange(min));
    }
    Ok(values
        .iter()
        .map(|&v| if v == max { 1.0 } else { (v - min) / range })
        .collect())
}

/// User categories in the resource-allocation dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UserType {
    Regular,
    Vip,
    HighDemand,
}

impl UserType {
    pub const ALL: [UserType; 3] = [UserType::Regular, UserType::Vip, UserType::HighDemand];

    pub fn as_str(self) -> &'static str {
        match self {
            UserType::Regular => "Regular",
            UserType::Vip => "VIP",
            UserType::HighDemand => "HighDemand",
        }
    }
}

impl fmt::Display for UserType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UserType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "Regular" => Ok(UserType::Regular),
            "VIP" => Ok(UserType::Vip),
            "HighDemand" | "High-Demand" => Ok(UserType::HighDemand),
            other => Err(Error::UnknownUserType(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub base_station: String,
    pub user_type: UserType,
    pub channel_gain_db: f64,
    pub noise_power_db: f64,
}

impl RawRecord {
    /// Linear-scale channel gain divided by linear-scale noise power.
    pub fn gain_to_noise(&self) -> Result<f64> {
        Ok(db_to_linear(self.channel_gain_db)? / db_to_linear(self.noise_power_db)?)
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    base_station: String,
    user_type: String,
    channel_gain_db: f64,
    noise_power_db: f64,
}

/// Noisy observations `x̂★_1..x̂★_N`, all of dimension `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyDataset {
    samples: Vec<Vec<f64>>,
    dim: usize,
    provenance: String,
}

impl NoisyDataset {
    pub fn new(samples: Vec<Vec<f64>>, provenance: impl Into<String>) -> Result<Self> {
        let dim = match samples.first() {
            Some(s) => s.len(),
            None => return Err(Error::InvalidInput("dataset must contain at least one sample".into())),
        };
        if dim == 0 {
            return Err(Error::InvalidInput("samples must have dimension >= 1".into()));
        }
        for s in &samples {
            if s.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.len(),
                });
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("samples must be finite".into()));
            }
        }
        Ok(Self {
            samples,
            dim,
            provenance: provenance.into(),
        })
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn sample(&self, j: usize) -> &[f64] {
        &self.samples[j]
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }
}

/// Reads every record of the CSV file.
pub fn read_records(path: &Path) -> Result<Vec<RawRecord>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut records = Vec::new();
    for row in reader.deserialize::<CsvRow>() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::MalformedRow {
                line,
                message: e.to_string(),
            }
        })?;
        records.push(RawRecord {
            base_station: row.base_station,
            user_type: row.user_type.parse()?,
            channel_gain_db: row.channel_gain_db,
            noise_power_db: row.noise_power_db,
        });
    }
    Ok(records)
}

fn station_values(records: &[RawRecord], base_station: &str) -> Result<Vec<(UserType, f64)>> {
    let selected: Vec<&RawRecord> = records.iter().filter(|r| r.base_station == base_station).collect();
    if selected.is_empty() {
        return Err(Error::NoRecords(base_station.to_string()));
    }
    let ratios = selected.iter().map(|r| r.gain_to_noise()).collect::<Result<Vec<_>>>()?;
    let scaled = minmax_normalize(&ratios)?;
    Ok(selected.iter().map(|r| r.user_type).zip(scaled).collect())
}

/// One scalar sample per record of `base_station`, normalized over that
/// station's records.
pub fn ingest_dataset(path: &Path, base_station: &str) -> Result<NoisyDataset> {
    let records = read_records(path)?;
    let values = station_values(&records, base_station)?;
    NoisyDataset::new(values.into_iter().map(|(_, v)| vec![v]).collect(), base_station)
}

/// Three-dimensional samples `(Regular, VIP, HighDemand)` for one station.
///
/// Values are normalized over the whole station, grouped by user type in
/// record order, and zipped index by index; the result is truncated to the
/// smallest group.
pub fn ingest_grouped(path: &Path, base_station: &str) -> Result<NoisyDataset> {
    let records = read_records(path)?;
    let values = station_values(&records, base_station)?;
    let groups: Vec<Vec<f64>> = UserType::ALL
        .iter()
        .map(|t| values.iter().filter(|(u, _)| u == t).map(|(_, v)| *v).collect())
        .collect();
    let n = groups.iter().map(Vec::len).min().unwrap_or(0);
    if n == 0 {
        return Err(Error::NoRecords(format!(
            "{base_station} (some user type has no records)"
        )));
    }
    let samples = (0..n).map(|j| groups.iter().map(|g| g[j]).collect()).collect();
    NoisyDataset::new(samples, base_station)
}
