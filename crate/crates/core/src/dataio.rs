//! Input tables (sizes, holdings, returns) and output writers.
//!
//! All inputs are UTF-8 CSV files with a header row whose column names must
//! match exactly. Validation errors name the offending line.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::Serialize;

use crate::{Error, Result};

pub const SIZES_HEADER: [&str; 2] = ["entity_id", "size_usd"];
pub const HOLDINGS_HEADER: [&str; 4] = ["entity_id", "asset_id", "weight", "market_cap_usd"];
pub const RETURNS_HEADER: [&str; 3] = ["entity_id", "date", "return"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeEntry {
    pub entity_id: String,
    pub size: f64,
}

/// A universe of strictly positive sizes with unique entity ids.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeSample {
    entries: Vec<SizeEntry>,
    pub currency_label: String,
}

impl SizeSample {
    pub fn new(entries: Vec<SizeEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for (k, e) in entries.iter().enumerate() {
            if !(e.size > 0.0 && e.size.is_finite()) {
                return Err(Error::invalid(format!(
                    "nonpositive size at row {}: {} = {}",
                    k + 1,
                    e.entity_id,
                    e.size
                )));
            }
            if !seen.insert(e.entity_id.as_str()) {
                return Err(Error::invalid(format!(
                    "duplicate entity_id at row {}: {}",
                    k + 1,
                    e.entity_id
                )));
            }
        }
        Ok(Self {
            entries,
            currency_label: "USD".to_string(),
        })
    }

    /// Builds a sample with generated ids `e000001`, `e000002`, ...
    pub fn from_sizes(sizes: &[f64]) -> Result<Self> {
        Self::new(
            sizes
                .iter()
                .enumerate()
                .map(|(i, &size)| SizeEntry {
                    entity_id: format!("e{:06}", i + 1),
                    size,
                })
                .collect(),
        )
    }

    pub fn empty() -> Self {
        Self {
            entries: Vec::new(),
            currency_label: "USD".to_string(),
        }
    }

    pub fn entries(&self) -> &[SizeEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sizes(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.size).collect()
    }

    pub fn ln_sizes(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.size.ln()).collect()
    }

    /// Multiplies every size by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(
            self.entries
                .iter()
                .map(|e| SizeEntry {
                    entity_id: e.entity_id.clone(),
                    size: e.size * c,
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Position {
    pub entity_id: String,
    pub asset_id: String,
    pub weight: f64,
    pub market_cap: Option<f64>,
}

/// Fund-to-asset positions. Weights are kept as given, never renormalised.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HoldingsTable {
    positions: Vec<Position>,
}

impl HoldingsTable {
    pub fn new(positions: Vec<Position>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(positions.len());
        for (k, p) in positions.iter().enumerate() {
            if !(p.weight >= 0.0 && p.weight.is_finite()) {
                return Err(Error::invalid(format!(
                    "negative or non-finite weight at row {}: ({}, {}) = {}",
                    k + 1,
                    p.entity_id,
                    p.asset_id,
                    p.weight
                )));
            }
            if let Some(cap) = p.market_cap {
                if !(cap > 0.0 && cap.is_finite()) {
                    return Err(Error::invalid(format!(
                        "nonpositive market cap at row {}: {}",
                        k + 1,
                        p.asset_id
                    )));
                }
            }
            if !seen.insert((p.entity_id.as_str(), p.asset_id.as_str())) {
                return Err(Error::invalid(format!(
                    "duplicate (entity, asset) pair at row {}: ({}, {})",
                    k + 1,
                    p.entity_id,
                    p.asset_id
                )));
            }
        }
        Ok(Self { positions })
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn distinct_assets(&self) -> usize {
        self.positions
            .iter()
            .map(|p| p.asset_id.as_str())
            .collect::<HashSet<_>>()
            .len()
    }

    /// Sum of weights per entity, for data-quality reporting.
    pub fn weight_sums(&self) -> BTreeMap<String, f64> {
        let mut out: BTreeMap<String, f64> = BTreeMap::new();
        for p in &self.positions {
            *out.entry(p.entity_id.clone()).or_default() += p.weight;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReturnObs {
    pub date: NaiveDate,
    pub simple_return: f64,
}

/// Per-entity return series, each strictly increasing in date.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ReturnsTable {
    series: BTreeMap<String, Vec<ReturnObs>>,
}

impl ReturnsTable {
    /// Sorts each series by date and validates it.
    pub fn new(series: BTreeMap<String, Vec<ReturnObs>>) -> Result<Self> {
        let mut series = series;
        for (id, obs) in series.iter_mut() {
            obs.sort_by_key(|o| o.date);
            for w in obs.windows(2) {
                if w[0].date == w[1].date {
                    return Err(Error::invalid(format!(
                        "duplicate date {} for entity {id}",
                        w[0].date
                    )));
                }
            }
            if let Some(o) = obs
                .iter()
                .find(|o| !(o.simple_return > -1.0) || !o.simple_return.is_finite())
            {
                return Err(Error::invalid(format!(
                    "return {} <= -1 on {} for entity {id}",
                    o.simple_return, o.date
                )));
            }
        }
        Ok(Self { series })
    }

    pub fn series(&self) -> &BTreeMap<String, Vec<ReturnObs>> {
        &self.series
    }

    pub fn get(&self, entity_id: &str) -> Option<&[ReturnObs]> {
        self.series.get(entity_id).map(Vec::as_slice)
    }
}

fn open_reader(path: &Path, expected: &[&str]) -> Result<csv::Reader<File>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            message: format!(
                "header must be `{}`, found `{}`",
                expected.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    Ok(rdr)
}

fn row_error(path: &Path, rec: &csv::StringRecord, message: String) -> Error {
    Error::Row {
        path: path.to_path_buf(),
        line: rec.position().map_or(0, |p| p.line()),
        message,
    }
}

fn parse_f64(path: &Path, rec: &csv::StringRecord, field: usize, name: &str) -> Result<f64> {
    let raw = rec.get(field).unwrap_or("");
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| row_error(path, rec, format!("malformed {name} `{raw}`")))
}

fn check_width(path: &Path, rec: &csv::StringRecord, width: usize) -> Result<()> {
    if rec.len() != width {
        return Err(row_error(
            path,
            rec,
            format!("expected {width} fields, found {}", rec.len()),
        ));
    }
    Ok(())
}

pub fn load_sizes(path: impl AsRef<Path>) -> Result<SizeSample> {
    let path = path.as_ref();
    let mut rdr = open_reader(path, &SIZES_HEADER)?;
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    let mut rec = csv::StringRecord::new();
    while rdr.read_record(&mut rec)? {
        check_width(path, &rec, 2)?;
        let id = rec[0].to_string();
        let size = parse_f64(path, &rec, 1, "size")?;
        if size <= 0.0 {
            let row = rec.position().map_or(0, |p| p.line() - 1);
            return Err(row_error(
                path,
                &rec,
                format!("nonpositive size at row {row}"),
            ));
        }
        if !seen.insert(id.clone()) {
            return Err(row_error(path, &rec, format!("duplicate entity_id `{id}`")));
        }
        entries.push(SizeEntry {
            entity_id: id,
            size,
        });
    }
    SizeSample::new(entries)
}

pub fn load_holdings(path: impl AsRef<Path>) -> Result<HoldingsTable> {
    let path = path.as_ref();
    let mut rdr = open_reader(path, &HOLDINGS_HEADER)?;
    let mut positions = Vec::new();
    let mut seen = HashSet::new();
    let mut rec = csv::StringRecord::new();
    while rdr.read_record(&mut rec)? {
        check_width(path, &rec, 4)?;
        let entity_id = rec[0].to_string();
        let asset_id = rec[1].to_string();
        let weight = parse_f64(path, &rec, 2, "weight")?;
        if weight < 0.0 {
            return Err(row_error(path, &rec, format!("negative weight {weight}")));
        }
        let market_cap = if rec[3].is_empty() {
            None
        } else {
            let cap = parse_f64(path, &rec, 3, "market_cap_usd")?;
            if cap <= 0.0 {
                return Err(row_error(
                    path,
                    &rec,
                    format!("nonpositive market cap {cap}"),
                ));
            }
            Some(cap)
        };
        if !seen.insert((entity_id.clone(), asset_id.clone())) {
            return Err(row_error(
                path,
                &rec,
                format!("duplicate (entity, asset) pair ({entity_id}, {asset_id})"),
            ));
        }
        positions.push(Position {
            entity_id,
            asset_id,
            weight,
            market_cap,
        });
    }
    HoldingsTable::new(positions)
}

pub fn load_returns(path: impl AsRef<Path>) -> Result<ReturnsTable> {
    let path = path.as_ref();
    let mut rdr = open_reader(path, &RETURNS_HEADER)?;
    let mut series: BTreeMap<String, Vec<ReturnObs>> = BTreeMap::new();
    let mut rec = csv::StringRecord::new();
    while rdr.read_record(&mut rec)? {
        check_width(path, &rec, 3)?;
        let date = NaiveDate::parse_from_str(&rec[1], "%Y-%m-%d")
            .map_err(|e| row_error(path, &rec, format!("malformed date `{}`: {e}", &rec[1])))?;
        let r = parse_f64(path, &rec, 2, "return")?;
        if r <= -1.0 {
            return Err(row_error(path, &rec, format!("return {r} <= -1")));
        }
        series
            .entry(rec[0].to_string())
            .or_default()
            .push(ReturnObs {
                date,
                simple_return: r,
            });
    }
    ReturnsTable::new(series)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_sizes(path: impl AsRef<Path>, sample: &SizeSample) -> Result<()> {
    let mut w = create(path.as_ref())?;
    writeln!(w, "{}", SIZES_HEADER.join(","))?;
    for e in sample.entries() {
        writeln!(w, "{},{}", e.entity_id, e.size)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_holdings(path: impl AsRef<Path>, table: &HoldingsTable) -> Result<()> {
    let mut w = create(path.as_ref())?;
    writeln!(w, "{}", HOLDINGS_HEADER.join(","))?;
    for p in table.positions() {
        match p.market_cap {
            Some(cap) => writeln!(w, "{},{},{},{}", p.entity_id, p.asset_id, p.weight, cap)?,
            None => writeln!(w, "{},{},{},", p.entity_id, p.asset_id, p.weight)?,
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_returns(path: impl AsRef<Path>, table: &ReturnsTable) -> Result<()> {
    let mut w = create(path.as_ref())?;
    writeln!(w, "{}", RETURNS_HEADER.join(","))?;
    for (id, obs) in table.series() {
        for o in obs {
            writeln!(
                w,
                "{},{},{}",
                id,
                o.date.format("%Y-%m-%d"),
                o.simple_return
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes a CSV with the given header and rows of numbers at full precision.
pub fn write_numeric_csv<R>(path: impl AsRef<Path>, header: &[&str], rows: R) -> Result<()>
where
    R: IntoIterator,
    R::Item: AsRef<[f64]>,
{
    let mut w = create(path.as_ref())?;
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let row = row.as_ref();
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes CSV text rows as given (cells are not quoted; ids must not contain commas).
pub fn write_text_csv(
    path: impl AsRef<Path>,
    header: &[String],
    rows: &[Vec<String>],
) -> Result<()> {
    let mut w = create(path.as_ref())?;
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = create(path.as_ref())?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
