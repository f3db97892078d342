//! County × period panel storage, ingestion and series transforms.
//!
//! Values live in county-major dense vectors (`index = county * T + period`)
//! with `NaN` marking a missing cell. Periods are integer ordinals: months
//! since 1970-01 for monthly data and years since 1970 for annual data, so all
//! lag arithmetic is exact integer arithmetic.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EPOCH_YEAR: i64 = 1970;

/// Opaque county identifier (FIPS-style code).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CountyId(String);

impl CountyId {
    pub fn new(code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        if code.trim().is_empty() {
            return Err(Error::InvalidArgument("county id must be non-empty".into()));
        }
        Ok(CountyId(code))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CountyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frequency {
    Monthly,
    Annual,
}

impl Frequency {
    /// Parse `YYYY-MM` (monthly) or `YYYY` (annual) into a period ordinal.
    pub fn parse_period(text: &str) -> Option<(Frequency, i64)> {
        let text = text.trim();
        match text.split_once('-') {
            Some((y, m)) => {
                if y.len() != 4 || m.len() != 2 {
                    return None;
                }
                let y: i64 = y.parse().ok()?;
                let m: i64 = m.parse().ok()?;
                if !(1..=12).contains(&m) {
                    return None;
                }
                Some((Frequency::Monthly, (y - EPOCH_YEAR) * 12 + (m - 1)))
            }
            None => {
                if text.len() != 4 {
                    return None;
                }
                let y: i64 = text.parse().ok()?;
                Some((Frequency::Annual, y - EPOCH_YEAR))
            }
        }
    }

    pub fn format_period(self, period: i64) -> String {
        match self {
            Frequency::Monthly => {
                let y = EPOCH_YEAR + period.div_euclid(12);
                let m = period.rem_euclid(12) + 1;
                format!("{y:04}-{m:02}")
            }
            Frequency::Annual => format!("{:04}", EPOCH_YEAR + period),
        }
    }

    /// Default number of outcome and shock lags: 24 months or 2 years.
    pub fn default_lags(self) -> usize {
        match self {
            Frequency::Monthly => 24,
            Frequency::Annual => 2,
        }
    }
}

/// One step of a series transform chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Level,
    /// Natural log; non-positive values become missing.
    Log,
    /// One-period change `x[t] - x[t-1]`.
    Diff,
    /// `ln x[t+h] - ln x[t-1]`.
    LogGrowth(usize),
    Lag(usize),
    Lead(usize),
}

/// A named series plus a chain of transforms applied left to right.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "SeriesRefRepr", into = "SeriesRefRepr")]
pub struct SeriesRef {
    pub name: String,
    pub transforms: Vec<Transform>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SeriesRefRepr {
    Bare(String),
    Full {
        name: String,
        #[serde(default)]
        transforms: Vec<Transform>,
    },
}

impl From<SeriesRefRepr> for SeriesRef {
    fn from(r: SeriesRefRepr) -> Self {
        match r {
            SeriesRefRepr::Bare(name) => SeriesRef::new(name),
            SeriesRefRepr::Full { name, transforms } => SeriesRef { name, transforms },
        }
    }
}

impl From<SeriesRef> for SeriesRefRepr {
    fn from(s: SeriesRef) -> Self {
        if s.transforms.is_empty() {
            SeriesRefRepr::Bare(s.name)
        } else {
            SeriesRefRepr::Full {
                name: s.name,
                transforms: s.transforms,
            }
        }
    }
}

impl SeriesRef {
    pub fn new(name: impl Into<String>) -> Self {
        SeriesRef {
            name: name.into(),
            transforms: Vec::new(),
        }
    }

    pub fn then(mut self, t: Transform) -> Self {
        self.transforms.push(t);
        self
    }

    pub fn log(self) -> Self {
        self.then(Transform::Log)
    }

    pub fn diff(self) -> Self {
        self.then(Transform::Diff)
    }

    pub fn lag(self, k: usize) -> Self {
        self.then(Transform::Lag(k))
    }

    /// Display label used for design column names, e.g. `lag3(log(emp))`.
    pub fn label(&self) -> String {
        let mut s = self.name.clone();
        for t in &self.transforms {
            s = match t {
                Transform::Level => s,
                Transform::Log => format!("log({s})"),
                Transform::Diff => format!("d({s})"),
                Transform::LogGrowth(h) => format!("loggrowth{h}({s})"),
                Transform::Lag(k) => format!("lag{k}({s})"),
                Transform::Lead(h) => format!("lead{h}({s})"),
            };
        }
        s
    }

    pub fn is_log(&self) -> bool {
        self.transforms.contains(&Transform::Log)
    }
}

/// A transformed series plus the number of cells masked because a log was
/// requested of a non-positive value.
#[derive(Debug, Clone, PartialEq)]
pub struct Derived {
    pub values: Vec<f64>,
    pub masked_nonpositive: usize,
}

/// Column mapping for [`load_panel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default = "default_county_col")]
    pub county: String,
    #[serde(default = "default_period_col")]
    pub period: String,
    /// Value columns to read. Empty means every other column, unscaled.
    #[serde(default)]
    pub columns: Vec<ValueColumn>,
}

fn default_county_col() -> String {
    "county".into()
}

fn default_period_col() -> String {
    "period".into()
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            county: default_county_col(),
            period: default_period_col(),
            columns: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueColumn {
    pub source: String,
    /// Series name inside the dataset; defaults to `source`.
    #[serde(default)]
    pub name: Option<String>,
    /// Multiplier applied at ingestion, e.g. `1e-6` for m² to km².
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

/// Static per-county attributes: numeric columns and string tags.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Attributes {
    pub numeric: BTreeMap<String, BTreeMap<CountyId, f64>>,
    pub tags: BTreeMap<String, BTreeMap<CountyId, String>>,
}

/// Rectangular county × period store of named numeric series.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    counties: Vec<CountyId>,
    county_index: HashMap<CountyId, usize>,
    frequency: Frequency,
    first_period: i64,
    n_periods: usize,
    series: BTreeMap<String, Vec<f64>>,
    attributes: BTreeMap<String, Vec<f64>>,
    tags: BTreeMap<String, Vec<Option<String>>>,
}

impl PanelDataset {
    /// Empty panel over the given counties and period range.
    pub fn new(
        counties: Vec<CountyId>,
        frequency: Frequency,
        first_period: i64,
        n_periods: usize,
    ) -> Result<Self> {
        if counties.is_empty() || n_periods == 0 {
            return Err(Error::InvalidData("panel needs at least one county and one period".into()));
        }
        let mut county_index = HashMap::with_capacity(counties.len());
        for (i, c) in counties.iter().enumerate() {
            if county_index.insert(c.clone(), i).is_some() {
                return Err(Error::InvalidData(format!("duplicate county id `{c}`")));
            }
        }
        Ok(PanelDataset {
            counties,
            county_index,
            frequency,
            first_period,
            n_periods,
            series: BTreeMap::new(),
            attributes: BTreeMap::new(),
            tags: BTreeMap::new(),
        })
    }

    pub fn counties(&self) -> &[CountyId] {
        &self.counties
    }

    pub fn n_counties(&self) -> usize {
        self.counties.len()
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn frequency(&self) -> Frequency {
        self.frequency
    }

    pub fn first_period(&self) -> i64 {
        self.first_period
    }

    /// Period ordinal of the `t`-th column.
    pub fn period(&self, t: usize) -> i64 {
        self.first_period + t as i64
    }

    pub fn county_index(&self, id: &CountyId) -> Option<usize> {
        self.county_index.get(id).copied()
    }

    #[inline]
    pub fn idx(&self, c: usize, t: usize) -> usize {
        c * self.n_periods + t
    }

    pub fn series_names(&self) -> impl Iterator<Item = &str> {
        self.series.keys().map(String::as_str)
    }

    pub fn has_series(&self, name: &str) -> bool {
        self.series.contains_key(name)
    }

    pub fn series(&self, name: &str) -> Result<&[f64]> {
        self.series
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownSeries(name.to_string()))
    }

    pub fn value(&self, name: &str, c: usize, t: usize) -> Result<Option<f64>> {
        let v = self.series(name)?[self.idx(c, t)];
        Ok((!v.is_nan()).then_some(v))
    }

    /// Add or replace a series. `values` is county-major with `NaN` for missing.
    pub fn insert_series(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if values.len() != self.n_counties() * self.n_periods {
            return Err(Error::DimensionMismatch(format!(
                "series `{name}` has {} cells, panel has {}",
                values.len(),
                self.n_counties() * self.n_periods
            )));
        }
        if values.iter().any(|v| v.is_infinite()) {
            return Err(Error::InvalidData(format!("series `{name}` contains infinite values")));
        }
        self.series.insert(name, values);
        Ok(())
    }

    pub fn with_series(mut self, name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        self.insert_series(name, values)?;
        Ok(self)
    }

    pub fn attribute(&self, name: &str) -> Result<&[f64]> {
        self.attributes
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn tag(&self, name: &str) -> Result<&[Option<String>]> {
        self.tags
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn attribute_names(&self) -> impl Iterator<Item = &str> {
        self.attributes.keys().map(String::as_str)
    }

    pub fn tag_names(&self) -> impl Iterator<Item = &str> {
        self.tags.keys().map(String::as_str)
    }

    /// Set a numeric per-county attribute (`NaN` = unknown).
    pub fn insert_attribute(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if values.len() != self.n_counties() {
            return Err(Error::DimensionMismatch(format!(
                "attribute `{name}` has {} entries for {} counties",
                values.len(),
                self.n_counties()
            )));
        }
        if name == "population" && values.iter().any(|&p| !p.is_nan() && p <= 0.0) {
            return Err(Error::InvalidData("population attribute must be positive".into()));
        }
        self.attributes.insert(name, values);
        Ok(())
    }

    pub fn insert_tag(&mut self, name: impl Into<String>, values: Vec<Option<String>>) -> Result<()> {
        let name = name.into();
        if values.len() != self.n_counties() {
            return Err(Error::DimensionMismatch(format!(
                "tag `{name}` has {} entries for {} counties",
                values.len(),
                self.n_counties()
            )));
        }
        self.tags.insert(name, values);
        Ok(())
    }

    /// Attach attributes read by [`load_attributes`]. Rows for counties not in
    /// the panel are ignored.
    pub fn attach(&mut self, attrs: &Attributes) -> Result<()> {
        for (name, map) in &attrs.numeric {
            let mut v = vec![f64::NAN; self.n_counties()];
            for (id, &x) in map {
                match self.county_index(id) {
                    Some(i) => v[i] = x,
                    None => log::warn!("attribute `{name}` given for unknown county `{id}`; ignored"),
                }
            }
            self.insert_attribute(name.clone(), v)?;
        }
        for (name, map) in &attrs.tags {
            let mut v = vec![None; self.n_counties()];
            for (id, x) in map {
                if let Some(i) = self.county_index(id) {
                    v[i] = Some(x.clone());
                }
            }
            self.insert_tag(name.clone(), v)?;
        }
        Ok(())
    }

    /// Panel restricted to a subset of counties (in the given order).
    pub fn select_counties(&self, keep: &[usize]) -> Result<PanelDataset> {
        let counties = keep.iter().map(|&i| self.counties[i].clone()).collect();
        let mut out = PanelDataset::new(counties, self.frequency, self.first_period, self.n_periods)?;
        let t = self.n_periods;
        for (name, v) in &self.series {
            let mut w = Vec::with_capacity(keep.len() * t);
            for &c in keep {
                w.extend_from_slice(&v[c * t..(c + 1) * t]);
            }
            out.series.insert(name.clone(), w);
        }
        for (name, v) in &self.attributes {
            out.attributes.insert(name.clone(), keep.iter().map(|&c| v[c]).collect());
        }
        for (name, v) in &self.tags {
            out.tags.insert(name.clone(), keep.iter().map(|&c| v[c].clone()).collect());
        }
        Ok(out)
    }

    /// Shift a county-major series by `offset` periods within each county:
    /// `out[c, t] = v[c, t - offset]`, missing when out of range.
    pub fn shift(&self, values: &[f64], offset: isize) -> Vec<f64> {
        let t_len = self.n_periods as isize;
        let mut out = vec![f64::NAN; values.len()];
        for c in 0..self.n_counties() {
            let base = c * self.n_periods;
            for t in 0..t_len {
                let s = t - offset;
                if (0..t_len).contains(&s) {
                    out[base + t as usize] = values[base + s as usize];
                }
            }
        }
        out
    }

    /// Evaluate a transform chain.
    pub fn evaluate(&self, r: &SeriesRef) -> Result<Derived> {
        let mut values = self.series(&r.name)?.to_vec();
        let mut masked = 0;
        for t in &r.transforms {
            values = match *t {
                Transform::Level => values,
                Transform::Log => {
                    let (v, m) = log_masked(&values);
                    masked += m;
                    v
                }
                Transform::Diff => {
                    let prev = self.shift(&values, 1);
                    values.iter().zip(&prev).map(|(a, b)| a - b).collect()
                }
                Transform::LogGrowth(h) => {
                    let (logged, m) = log_masked(&values);
                    masked += m;
                    self.growth_of(&logged, h)
                }
                Transform::Lag(k) => self.shift(&values, k as isize),
                Transform::Lead(h) => self.shift(&values, -(h as isize)),
            };
        }
        Ok(Derived {
            values,
            masked_nonpositive: masked,
        })
    }

    /// `v[t+h] - v[t-1]` within each county.
    pub(crate) fn growth_of(&self, v: &[f64], h: usize) -> Vec<f64> {
        let ahead = self.shift(v, -(h as isize));
        let behind = self.shift(v, 1);
        ahead.iter().zip(&behind).map(|(a, b)| a - b).collect()
    }

    /// `ln x[c,t+h] - ln x[c,t-1]`; missing when either endpoint is missing,
    /// out of range or non-positive (the latter counted in `masked_nonpositive`).
    pub fn log_growth(&self, series: &str, h: usize) -> Result<Derived> {
        let x = self.series(series)?;
        let t_len = self.n_periods;
        let mut masked = 0;
        let mut values = vec![f64::NAN; x.len()];
        for c in 0..self.n_counties() {
            for t in 1..t_len {
                if t + h >= t_len {
                    break;
                }
                let a = x[self.idx(c, t + h)];
                let b = x[self.idx(c, t - 1)];
                if a.is_nan() || b.is_nan() {
                    continue;
                }
                if a <= 0.0 || b <= 0.0 {
                    masked += 1;
                    continue;
                }
                values[self.idx(c, t)] = a.ln() - b.ln();
            }
        }
        if masked > 0 {
            log::warn!("log_growth({series}, {h}): {masked} cells masked for non-positive values");
        }
        Ok(Derived {
            values,
            masked_nonpositive: masked,
        })
    }

    /// Lags 1..=k of a series; each never crosses a county boundary.
    pub fn make_lags(&self, series: &str, k: usize) -> Result<Vec<Vec<f64>>> {
        if k == 0 {
            return Err(Error::InvalidArgument("lag count must be at least 1; use the base series for lag 0".into()));
        }
        if k >= self.n_periods {
            return Err(Error::InvalidArgument(format!(
                "{k} lags requested but the panel has only {} periods",
                self.n_periods
            )));
        }
        let base = self.series(series)?;
        Ok((1..=k).map(|j| self.shift(base, j as isize)).collect())
    }

    /// Multiplicative month-of-year adjustment per county.
    ///
    /// For each county the log factor of calendar month `m` is the mean of
    /// `ln x` over that county's observations in month `m`, minus the average
    /// of those twelve month means. Factors therefore have geometric mean one
    /// per county. Counties with fewer than 24 observations are passed
    /// through unadjusted.
    pub fn seasonal_adjust(&self, series: &str) -> Result<SeasonalAdjustment> {
        if self.frequency != Frequency::Monthly {
            return Err(Error::InvalidArgument("seasonal adjustment needs monthly data".into()));
        }
        let x = self.series(series)?;
        if x.iter().any(|&v| !v.is_nan() && v <= 0.0) {
            return Err(Error::InvalidData(format!(
                "seasonal adjustment of `{series}` needs strictly positive values"
            )));
        }
        let mut values = x.to_vec();
        let mut factors = vec![[1.0; 12]; self.n_counties()];
        let mut passed_through = Vec::new();
        for c in 0..self.n_counties() {
            let mut sum = [0.0; 12];
            let mut count = [0usize; 12];
            for t in 0..self.n_periods {
                let v = x[self.idx(c, t)];
                if v.is_nan() {
                    continue;
                }
                let m = self.period(t).rem_euclid(12) as usize;
                sum[m] += v.ln();
                count[m] += 1;
            }
            let n_obs: usize = count.iter().sum();
            if n_obs < 24 {
                log::warn!(
                    "seasonal_adjust: county `{}` has {n_obs} observations (< 24); left unadjusted",
                    self.counties[c]
                );
                passed_through.push(self.counties[c].clone());
                continue;
            }
            let present: Vec<usize> = (0..12).filter(|&m| count[m] > 0).collect();
            let grand = present.iter().map(|&m| sum[m] / count[m] as f64).sum::<f64>() / present.len() as f64;
            for &m in &present {
                factors[c][m] = (sum[m] / count[m] as f64 - grand).exp();
            }
            for t in 0..self.n_periods {
                let i = self.idx(c, t);
                if !values[i].is_nan() {
                    values[i] /= factors[c][self.period(t).rem_euclid(12) as usize];
                }
            }
        }
        Ok(SeasonalAdjustment {
            values,
            factors,
            passed_through,
        })
    }

    /// Mean burn conditional on a positive cell, and mean over all cells of
    /// counties that ever burn. Both readings of "mean for counties which
    /// have fires" are reported.
    pub fn burn_summary(&self, series: &str) -> Result<BurnSummary> {
        let x = self.series(series)?;
        let (mut pos_sum, mut pos_n) = (0.0, 0usize);
        let (mut ever_sum, mut ever_n) = (0.0, 0usize);
        let mut max: f64 = 0.0;
        for c in 0..self.n_counties() {
            let row = &x[c * self.n_periods..(c + 1) * self.n_periods];
            let burned = row.iter().any(|&v| v > 0.0);
            for &v in row.iter().filter(|v| !v.is_nan()) {
                if v < 0.0 {
                    return Err(Error::InvalidData(format!("negative burn area in `{series}`")));
                }
                if v > 0.0 {
                    pos_sum += v;
                    pos_n += 1;
                    max = max.max(v);
                }
                if burned {
                    ever_sum += v;
                    ever_n += 1;
                }
            }
        }
        let observed = x.iter().filter(|v| !v.is_nan()).count();
        Ok(BurnSummary {
            mean_given_positive: if pos_n > 0 { pos_sum / pos_n as f64 } else { 0.0 },
            mean_ever_burned_counties: if ever_n > 0 { ever_sum / ever_n as f64 } else { 0.0 },
            fire_frequency: if observed > 0 { pos_n as f64 / observed as f64 } else { 0.0 },
            positive_cells: pos_n,
            max,
        })
    }
}

fn log_masked(values: &[f64]) -> (Vec<f64>, usize) {
    let mut masked = 0;
    let v = values
        .iter()
        .map(|&x| {
            if x.is_nan() {
                f64::NAN
            } else if x <= 0.0 {
                masked += 1;
                f64::NAN
            } else {
                x.ln()
            }
        })
        .collect();
    (v, masked)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalAdjustment {
    pub values: Vec<f64>,
    /// Per county, indexed by calendar month (0 = January).
    pub factors: Vec<[f64; 12]>,
    pub passed_through: Vec<CountyId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BurnSummary {
    pub mean_given_positive: f64,
    pub mean_ever_burned_counties: f64,
    pub fire_frequency: f64,
    pub positive_cells: usize,
    pub max: f64,
}

/// Read a delimited panel. The header must contain the schema's county and
/// period columns; period cells are `YYYY-MM` or `YYYY`. Empty value cells
/// are missing. The period range is the union over all counties.
pub fn load_panel<R: Read>(source: R, schema: &Schema) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let header = rdr.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::EmptyInput);
    }
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let county_col = col(&schema.county)?;
    let period_col = col(&schema.period)?;
    let value_cols: Vec<(usize, String, f64)> = if schema.columns.is_empty() {
        header
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != county_col && i != period_col)
            .map(|(i, h)| (i, h.to_string(), 1.0))
            .collect()
    } else {
        schema
            .columns
            .iter()
            .map(|vc| {
                Ok((
                    col(&vc.source)?,
                    vc.name.clone().unwrap_or_else(|| vc.source.clone()),
                    vc.scale,
                ))
            })
            .collect::<Result<_>>()?
    };
    if value_cols.is_empty() {
        return Err(Error::InvalidArgument("schema names no value column".into()));
    }

    struct Row {
        county: usize,
        period: i64,
        values: Vec<f64>,
    }
    let mut counties: Vec<CountyId> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut seen: HashMap<(usize, i64), usize> = HashMap::new();
    let mut rows = Vec::new();
    let mut frequency = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let code = rec.get(county_col).unwrap_or("");
        if code.is_empty() {
            return Err(Error::EmptyCounty { row: line });
        }
        let ptext = rec.get(period_col).unwrap_or("");
        let (freq, period) = Frequency::parse_period(ptext).ok_or_else(|| Error::BadPeriod {
            row: line,
            value: ptext.to_string(),
        })?;
        match frequency {
            None => frequency = Some(freq),
            Some(f) if f != freq => return Err(Error::MixedFrequency { row: line }),
            _ => {}
        }
        let c = *index.entry(code.to_string()).or_insert_with(|| {
            counties.push(CountyId(code.to_string()));
            counties.len() - 1
        });
        if seen.insert((c, period), line).is_some() {
            return Err(Error::DuplicateRow {
                row: line,
                county: code.to_string(),
                period: ptext.to_string(),
            });
        }
        let mut values = Vec::with_capacity(value_cols.len());
        for (ci, name, scale) in &value_cols {
            let cell = rec.get(*ci).unwrap_or("");
            if cell.is_empty() {
                values.push(f64::NAN);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                row: line,
                column: name.clone(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonNumeric {
                    row: line,
                    column: name.clone(),
                    value: cell.to_string(),
                });
            }
            values.push(v * scale);
        }
        rows.push(Row { county: c, period, values });
    }
    let frequency = frequency.ok_or(Error::EmptyInput)?;
    let first = rows.iter().map(|r| r.period).min().unwrap_or(0);
    let last = rows.iter().map(|r| r.period).max().unwrap_or(0);
    let n_periods = (last - first + 1) as usize;
    let mut panel = PanelDataset::new(counties, frequency, first, n_periods)?;
    let n_cells = panel.n_counties() * n_periods;
    let mut data: Vec<Vec<f64>> = vec![vec![f64::NAN; n_cells]; value_cols.len()];
    for r in rows {
        let i = r.county * n_periods + (r.period - first) as usize;
        for (k, v) in r.values.into_iter().enumerate() {
            data[k][i] = v;
        }
    }
    for ((_, name, _), v) in value_cols.into_iter().zip(data) {
        panel.insert_series(name, v)?;
    }
    Ok(panel)
}

/// Read a per-county attribute file keyed by `county_col`. A column whose
/// non-empty cells all parse as numbers is numeric; anything else is a tag.
pub fn load_attributes<R: Read>(source: R, county_col: &str) -> Result<Attributes> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let header = rdr.headers()?.clone();
    let cc = header
        .iter()
        .position(|h| h == county_col)
        .ok_or_else(|| Error::MissingColumn(county_col.to_string()))?;
    let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut attrs = Attributes::default();
    for (j, name) in header.iter().enumerate() {
        if j == cc {
            continue;
        }
        let cells: Vec<(&str, &str)> = records
            .iter()
            .map(|r| (r.get(cc).unwrap_or(""), r.get(j).unwrap_or("")))
            .collect();
        let numeric = cells
            .iter()
            .all(|(_, v)| v.is_empty() || v.parse::<f64>().map(f64::is_finite).unwrap_or(false));
        if numeric {
            let m = attrs.numeric.entry(name.to_string()).or_default();
            for (c, v) in cells.into_iter().filter(|(_, v)| !v.is_empty()) {
                m.insert(CountyId::new(c)?, v.parse().unwrap());
            }
        } else {
            let m = attrs.tags.entry(name.to_string()).or_default();
            for (c, v) in cells.into_iter().filter(|(_, v)| !v.is_empty()) {
                m.insert(CountyId::new(c)?, v.to_string());
            }
        }
    }
    if let Some(pop) = attrs.numeric.get("population") {
        if let Some((c, _)) = pop.iter().find(|(_, &p)| p <= 0.0) {
            return Err(Error::InvalidData(format!("population of county `{c}` is not positive")));
        }
    }
    Ok(attrs)
}

/// Text form of a float with 17 significant digits (round-trips exactly).
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:.16e}")
    }
}

/// Write the panel as `county,period,<series...>` with series in name order.
/// Rows where every series is missing are omitted.
pub fn write_panel<W: Write>(panel: &PanelDataset, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let names: Vec<&str> = panel.series_names().collect();
    let mut header = vec!["county", "period"];
    header.extend(names.iter().copied());
    w.write_record(&header)?;
    let cols: Vec<&[f64]> = names.iter().map(|n| panel.series(n).unwrap()).collect();
    for (c, id) in panel.counties().iter().enumerate() {
        for t in 0..panel.n_periods() {
            let i = panel.idx(c, t);
            if cols.iter().all(|v| v[i].is_nan()) {
                continue;
            }
            let mut rec = vec![id.as_str().to_string(), panel.frequency().format_period(panel.period(t))];
            rec.extend(cols.iter().map(|v| format_float(v[i])));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io("<panel output>", e))?;
    Ok(())
}

/// Write numeric attributes and tags, one row per county, columns in name order.
pub fn write_attributes<W: Write>(panel: &PanelDataset, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let nums: Vec<&str> = panel.attribute_names().collect();
    let tags: Vec<&str> = panel.tag_names().collect();
    let mut header = vec!["county"];
    header.extend(nums.iter().copied());
    header.extend(tags.iter().copied());
    w.write_record(&header)?;
    for (c, id) in panel.counties().iter().enumerate() {
        let mut rec = vec![id.as_str().to_string()];
        rec.extend(nums.iter().map(|n| format_float(panel.attribute(n).unwrap()[c])));
        rec.extend(tags.iter().map(|n| panel.tag(n).unwrap()[c].clone().unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<attribute output>", e))?;
    Ok(())
}
