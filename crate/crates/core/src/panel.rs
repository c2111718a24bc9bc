//! Panel ingestion and basic transformations.
//!
//! Input files are comma-separated with a header row `date,<label1>,...`,
//! ISO dates (`YYYY-MM-DD`) and `.` as decimal separator. Blank cells and
//! `NA`/`NaN` mark missing observations; any series with a missing value is
//! dropped and reported, never imputed.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// An n × T real panel: rows are series, columns are dates.
#[derive(Debug, Clone, PartialEq)]
pub struct TimePanel {
    pub values: DMatrix<f64>,
    pub labels: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub sectors: Option<Vec<String>>,
    /// Row means removed by [`center`], if the panel was centered.
    pub means: Option<Vec<f64>>,
}

impl TimePanel {
    pub fn new(values: DMatrix<f64>, labels: Vec<String>, dates: Vec<NaiveDate>) -> Result<Self> {
        let panel = TimePanel {
            values,
            labels,
            dates,
            sectors: None,
            means: None,
        };
        panel.validate()?;
        Ok(panel)
    }

    /// Panel with generated labels `S001..` and consecutive daily dates from 2000-01-01.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        let labels = (0..values.nrows()).map(|i| format!("S{:03}", i + 1)).collect();
        let dates = synthetic_dates(values.ncols());
        Self::new(values, labels, dates)
    }

    pub fn with_sectors(mut self, sectors: Vec<String>) -> Result<Self> {
        if sectors.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                actual: sectors.len(),
            });
        }
        self.sectors = Some(sectors);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn t(&self) -> usize {
        self.values.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n() < 2 {
            return Err(Error::TooFewSeries {
                required: 2,
                actual: self.n(),
            });
        }
        if self.t() < 2 {
            return Err(Error::TooFewObservations {
                required: 2,
                actual: self.t(),
            });
        }
        if self.labels.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                actual: self.labels.len(),
            });
        }
        if self.dates.len() != self.t() {
            return Err(Error::DimensionMismatch {
                expected: self.t(),
                actual: self.dates.len(),
            });
        }
        let mut seen = HashSet::new();
        for l in &self.labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::DuplicateLabel(l.clone()));
            }
        }
        if let Some(s) = &self.sectors {
            if s.len() != self.n() {
                return Err(Error::DimensionMismatch {
                    expected: self.n(),
                    actual: s.len(),
                });
            }
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("panel contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    /// Same labels and metadata, new values of identical shape.
    pub fn with_values(&self, values: DMatrix<f64>) -> TimePanel {
        debug_assert_eq!(values.shape(), self.values.shape());
        TimePanel {
            values,
            labels: self.labels.clone(),
            dates: self.dates.clone(),
            sectors: self.sectors.clone(),
            means: None,
        }
    }

    /// Keep columns `start..end`.
    pub fn columns(&self, start: usize, end: usize) -> TimePanel {
        TimePanel {
            values: self.values.columns(start, end - start).into_owned(),
            labels: self.labels.clone(),
            dates: self.dates[start..end].to_vec(),
            sectors: self.sectors.clone(),
            means: None,
        }
    }

    /// Stack two panels with equal T vertically.
    pub fn stack(&self, other: &TimePanel, suffixes: (&str, &str)) -> Result<TimePanel> {
        if self.t() != other.t() {
            return Err(Error::DimensionMismatch {
                expected: self.t(),
                actual: other.t(),
            });
        }
        let n = self.n() + other.n();
        let mut values = DMatrix::zeros(n, self.t());
        values.rows_mut(0, self.n()).copy_from(&self.values);
        values.rows_mut(self.n(), other.n()).copy_from(&other.values);
        let labels = self
            .labels
            .iter()
            .map(|l| format!("{l}{}", suffixes.0))
            .chain(other.labels.iter().map(|l| format!("{l}{}", suffixes.1)))
            .collect();
        let sectors = match (&self.sectors, &other.sectors) {
            (Some(a), Some(b)) => Some(a.iter().chain(b.iter()).cloned().collect()),
            _ => None,
        };
        Ok(TimePanel {
            values,
            labels,
            dates: self.dates.clone(),
            sectors,
            means: None,
        })
    }
}

pub fn synthetic_dates(t: usize) -> Vec<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
    start.iter_days().take(t).collect()
}

/// Sector assignment aligned with a panel's rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorMap {
    tags: Vec<String>,
    names: Vec<String>,
}

impl SectorMap {
    pub fn from_tags(tags: Vec<String>) -> Self {
        let mut names: Vec<String> = Vec::new();
        for t in &tags {
            if !names.contains(t) {
                names.push(t.clone());
            }
        }
        SectorMap { tags, names }
    }

    pub fn for_panel(panel: &TimePanel) -> Option<Self> {
        panel.sectors.clone().map(Self::from_tags)
    }

    /// Every series in a single sector named `all`.
    pub fn single(n: usize) -> Self {
        Self::from_tags(vec!["all".to_string(); n])
    }

    pub fn n(&self) -> usize {
        self.tags.len()
    }

    pub fn tag(&self, i: usize) -> &str {
        &self.tags[i]
    }

    /// Sector names in order of first appearance.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn members(&self, name: &str) -> Vec<usize> {
        self.tags
            .iter()
            .enumerate()
            .filter(|(_, t)| t.as_str() == name)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sizes(&self) -> Vec<(String, usize)> {
        self.names
            .iter()
            .map(|s| (s.clone(), self.members(s).len()))
            .collect()
    }
}

/// Outcome of [`load_panel`]: the panel and the series dropped for gaps.
#[derive(Debug, Clone)]
pub struct LoadReport {
    pub panel: TimePanel,
    pub dropped: Vec<String>,
}

fn parse_cell(cell: &str) -> Option<Option<f64>> {
    let c = cell.trim();
    if c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan") {
        return Some(None);
    }
    c.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some)
}

pub fn load_panel(prices_file: &Path, sectors_file: Option<&Path>) -> Result<LoadReport> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(prices_file)
        .map_err(|e| csv_error(prices_file, e))?;
    let headers = reader
        .headers()
        .map_err(|e| csv_error(prices_file, e))?
        .clone();
    if headers.len() < 2 {
        return Err(Error::format(prices_file, "header needs a date column and at least one series"));
    }
    if !headers[0].eq_ignore_ascii_case("date") {
        return Err(Error::format(prices_file, "first header column must be `date`"));
    }
    let labels: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut seen = HashSet::new();
    for l in &labels {
        if l.is_empty() {
            return Err(Error::format(prices_file, "empty series label in header"));
        }
        if !seen.insert(l.as_str()) {
            return Err(Error::DuplicateLabel(l.clone()));
        }
    }

    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); labels.len()];
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(prices_file, e))?;
        if record.len() != labels.len() + 1 {
            return Err(Error::format(
                prices_file,
                format!("row {} has {} fields, expected {}", line + 2, record.len(), labels.len() + 1),
            ));
        }
        let date = NaiveDate::parse_from_str(&record[0], DATE_FORMAT).map_err(|_| {
            Error::format(prices_file, format!("row {}: bad date `{}`", line + 2, &record[0]))
        })?;
        if let Some(prev) = dates.last() {
            if date <= *prev {
                return Err(Error::format(
                    prices_file,
                    format!("dates not strictly increasing at {date}"),
                ));
            }
        }
        dates.push(date);
        for (j, cell) in record.iter().skip(1).enumerate() {
            let v = parse_cell(cell).ok_or_else(|| {
                Error::format(prices_file, format!("row {}: bad number `{cell}`", line + 2))
            })?;
            columns[j].push(v);
        }
    }

    let mut kept_labels = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (label, col) in labels.into_iter().zip(columns) {
        if col.iter().all(Option::is_some) {
            kept_labels.push(label);
            kept.push(col.into_iter().flatten().collect::<Vec<f64>>());
        } else {
            dropped.push(label);
        }
    }
    if kept.len() < 2 {
        return Err(Error::TooFewSeries {
            required: 2,
            actual: kept.len(),
        });
    }
    let t = dates.len();
    let values = DMatrix::from_fn(kept.len(), t, |i, j| kept[i][j]);
    let mut panel = TimePanel::new(values, kept_labels, dates)?;
    if let Some(path) = sectors_file {
        let map = load_sectors(path)?;
        let tags = panel
            .labels
            .iter()
            .map(|l| map.get(l).cloned().ok_or_else(|| Error::MissingSector(l.clone())))
            .collect::<Result<Vec<_>>>()?;
        panel.sectors = Some(tags);
    }
    Ok(LoadReport { panel, dropped })
}

/// Reads a `label,sector` file.
pub fn load_sectors(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut map = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != 2 {
            return Err(Error::format(path, "expected `label,sector` rows"));
        }
        if map.insert(record[0].to_string(), record[1].to_string()).is_some() {
            return Err(Error::DuplicateLabel(record[0].to_string()));
        }
    }
    Ok(map)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::format(path, format!("{other:?}")),
        }
    } else {
        Error::format(path, e.to_string())
    }
}

/// Percentage log-returns `100 * ln(p_t / p_{t-1})`; drops the first date.
pub fn log_returns(prices: &TimePanel) -> Result<TimePanel> {
    let (n, t) = prices.values.shape();
    if t < 3 {
        return Err(Error::TooFewObservations { required: 3, actual: t });
    }
    for i in 0..n {
        for j in 0..t {
            let v = prices.values[(i, j)];
            if !(v > 0.0) {
                return Err(Error::NonPositivePrice {
                    label: prices.labels[i].clone(),
                    column: j,
                    value: v,
                });
            }
        }
    }
    let values = DMatrix::from_fn(n, t - 1, |i, j| {
        100.0 * (prices.values[(i, j + 1)] / prices.values[(i, j)]).ln()
    });
    Ok(TimePanel {
        values,
        labels: prices.labels.clone(),
        dates: prices.dates[1..].to_vec(),
        sectors: prices.sectors.clone(),
        means: None,
    })
}

/// Inverse of [`log_returns`]: prices from returns and a starting price per series.
pub fn cumulate_returns(returns: &TimePanel, start: &[f64], start_date: NaiveDate) -> TimePanel {
    let (n, t) = returns.values.shape();
    let mut values = DMatrix::zeros(n, t + 1);
    for i in 0..n {
        values[(i, 0)] = start[i];
        let mut log_p = start[i].ln();
        for j in 0..t {
            log_p += returns.values[(i, j)] / 100.0;
            values[(i, j + 1)] = log_p.exp();
        }
    }
    let mut dates = vec![start_date];
    dates.extend_from_slice(&returns.dates);
    TimePanel {
        values,
        labels: returns.labels.clone(),
        dates,
        sectors: returns.sectors.clone(),
        means: None,
    }
}

/// Removes each row's sample mean. The means removed are accumulated in
/// `means`, so centering an already centered panel keeps the original levels.
pub fn center(panel: &TimePanel) -> TimePanel {
    let mut out = panel.clone();
    let mut means = panel.means.clone().unwrap_or_else(|| vec![0.0; panel.n()]);
    for (i, mut row) in out.values.row_iter_mut().enumerate() {
        let m = row.mean();
        row.add_scalar_mut(-m);
        means[i] += m;
    }
    out.means = Some(means);
    out
}

/// Inclusive date range used by [`slice_period`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodFilter {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl PeriodFilter {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start > end {
            return Err(Error::InvalidParameter(format!("period start {start} after end {end}")));
        }
        Ok(PeriodFilter { start, end })
    }

    /// Parses `YYYY-MM-DD:YYYY-MM-DD`.
    pub fn parse(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidParameter(format!("period `{s}` is not START:END")))?;
        let parse = |d: &str| {
            NaiveDate::parse_from_str(d.trim(), DATE_FORMAT)
                .map_err(|_| Error::InvalidParameter(format!("bad date `{d}` in period")))
        };
        Self::new(parse(a)?, parse(b)?)
    }
}

pub fn slice_period(panel: &TimePanel, filter: &PeriodFilter) -> Result<TimePanel> {
    let idx: Vec<usize> = panel
        .dates
        .iter()
        .enumerate()
        .filter(|(_, d)| **d >= filter.start && **d <= filter.end)
        .map(|(i, _)| i)
        .collect();
    let empty = || Error::EmptyPeriod {
        start: filter.start.to_string(),
        end: filter.end.to_string(),
    };
    let (&first, &last) = idx.first().zip(idx.last()).ok_or_else(empty)?;
    if idx.len() < 2 {
        return Err(Error::TooFewObservations {
            required: 2,
            actual: idx.len(),
        });
    }
    let mut out = panel.columns(first, last + 1);
    out.means = panel.means.clone();
    Ok(out)
}
