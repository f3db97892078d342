//! From a declarative model description to one regression problem per horizon.
//!
//! A [`PreparedModel`] evaluates every base series once (transformed outcome,
//! shock, controls, spatial lags, state indicator, sample mask). Lagged
//! regressors are index shifts of those base vectors, so materializing the
//! design for horizon `h` is a single pass over the panel cells.
//!
//! Column order in every design: shock effect column(s) first (one, or the
//! high/low pair under a state rule), then spatial terms, then shock lags,
//! outcome lags and extra controls.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::panel::{CountyId, Frequency, PanelDataset, SeriesRef, Transform};
use crate::spatial::{spatial_regressors, AdjacencyMatrix};

/// How lagged outcomes enter the control set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeLagForm {
    /// One-period changes of the transformed outcome, `v[t-s] - v[t-s-1]`.
    #[default]
    Change,
    /// Levels of the transformed outcome, `v[t-s]`.
    Level,
}

/// A control series entered at lag 0 and lags `1..=lags`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlSpec {
    pub series: SeriesRef,
    #[serde(default)]
    pub lags: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateScope {
    /// Threshold from each county's own history.
    #[default]
    County,
    /// One pooled threshold over all county-periods.
    Sample,
}

/// Binary state: 1 when the series is strictly above its `percentile`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRule {
    pub series: SeriesRef,
    #[serde(default)]
    pub scope: StateScope,
    pub percentile: f64,
    /// Compute the threshold over strictly positive values only.
    #[serde(default)]
    pub positive_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleFilter {
    All,
    /// Counties strictly above the attribute's median.
    AttributeAboveMedian(String),
    /// Counties at or below the attribute's median.
    AttributeBelowMedian(String),
    /// Counties whose `region` tag equals the value.
    Region(String),
    /// Treated rows plus controls with no shock within `window` periods.
    CleanControl {
        window: usize,
        #[serde(default)]
        treated_above: f64,
    },
    Counties(Vec<CountyId>),
}

impl SampleFilter {
    fn label(&self) -> String {
        match self {
            SampleFilter::All => "all".into(),
            SampleFilter::AttributeAboveMedian(a) => format!("{a} above median"),
            SampleFilter::AttributeBelowMedian(a) => format!("{a} below median"),
            SampleFilter::Region(r) => format!("region = {r}"),
            SampleFilter::CleanControl { window, .. } => format!("clean controls (window {window})"),
            SampleFilter::Counties(c) => format!("county subset ({} counties)", c.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialRule {
    #[serde(default = "default_spatial_lags")]
    pub lags: usize,
    #[serde(default = "yes")]
    pub second_order: bool,
    #[serde(default)]
    pub row_normalize: bool,
}

fn default_spatial_lags() -> usize {
    24
}

fn yes() -> bool {
    true
}

impl Default for SpatialRule {
    fn default() -> Self {
        SpatialRule {
            lags: default_spatial_lags(),
            second_order: true,
            row_normalize: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedEffects {
    #[serde(default = "yes")]
    pub county: bool,
    #[serde(default = "yes")]
    pub period: bool,
}

impl Default for FixedEffects {
    fn default() -> Self {
        FixedEffects {
            county: true,
            period: true,
        }
    }
}

/// Declarative local-projection model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub outcome: SeriesRef,
    pub shock: SeriesRef,
    /// Largest horizon `H`; horizons `0..=H` are estimated.
    pub horizons: usize,
    /// Defaults to 24 (monthly) or 2 (annual).
    #[serde(default)]
    pub outcome_lags: Option<usize>,
    #[serde(default)]
    pub shock_lags: Option<usize>,
    #[serde(default)]
    pub outcome_lag_form: OutcomeLagForm,
    #[serde(default)]
    pub controls: Vec<ControlSpec>,
    #[serde(default)]
    pub fe: FixedEffects,
    #[serde(default)]
    pub state: Option<StateRule>,
    #[serde(default)]
    pub sample: Vec<SampleFilter>,
    #[serde(default)]
    pub spatial: Option<SpatialRule>,
}

impl ModelSpec {
    /// Log-outcome model with default lags and both fixed effects.
    pub fn new(outcome: SeriesRef, shock: SeriesRef, horizons: usize) -> Self {
        ModelSpec {
            outcome,
            shock,
            horizons,
            outcome_lags: None,
            shock_lags: None,
            outcome_lag_form: OutcomeLagForm::Change,
            controls: Vec::new(),
            fe: FixedEffects::default(),
            state: None,
            sample: Vec::new(),
            spatial: None,
        }
    }

    pub fn with_lags(mut self, outcome_lags: usize, shock_lags: usize) -> Self {
        self.outcome_lags = Some(outcome_lags);
        self.shock_lags = Some(shock_lags);
        self
    }

    pub fn resolved_lags(&self, freq: Frequency) -> (usize, usize) {
        (
            self.outcome_lags.unwrap_or(freq.default_lags()),
            self.shock_lags.unwrap_or(freq.default_lags()),
        )
    }
}

/// Materialized regression problem for one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonDesign {
    pub h: usize,
    pub names: Vec<String>,
    /// Number of leading columns that are shock effects.
    pub n_shock: usize,
    pub y: Vec<f64>,
    /// Row-major `n × k`.
    pub x: Vec<f64>,
    /// County index (into the panel) per row.
    pub county: Vec<u32>,
    /// Period offset (into the panel) per row.
    pub period: Vec<u32>,
    pub fe: FixedEffects,
    /// Rows removed because the state indicator was missing.
    pub dropped_state_missing: usize,
    /// Spatial columns removed because they are identically zero on the sample.
    pub dropped_columns: Vec<String>,
}

impl HorizonDesign {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let k = self.n_cols();
        &self.x[r * k..(r + 1) * k]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        let k = self.n_cols();
        (0..self.n_rows()).map(|r| self.x[r * k + j]).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn fe_groups(&self) -> usize {
        let count = |v: &[u32]| v.iter().collect::<HashSet<_>>().len();
        let mut g = 0;
        if self.fe.county {
            g += count(&self.county);
        }
        if self.fe.period {
            g += count(&self.period);
        }
        if self.fe.county && self.fe.period {
            g -= 1;
        }
        g
    }

    /// Keep only rows where `keep[r]` holds.
    pub fn filter_rows(&self, keep: &[bool]) -> HorizonDesign {
        let k = self.n_cols();
        let mut out = HorizonDesign {
            y: Vec::new(),
            x: Vec::new(),
            county: Vec::new(),
            period: Vec::new(),
            names: self.names.clone(),
            dropped_columns: self.dropped_columns.clone(),
            ..*self
        };
        for r in (0..self.n_rows()).filter(|&r| keep[r]) {
            out.y.push(self.y[r]);
            out.x.extend_from_slice(&self.x[r * k..(r + 1) * k]);
            out.county.push(self.county[r]);
            out.period.push(self.period[r]);
        }
        out
    }

    /// True when every county present covers exactly the same periods.
    pub fn is_balanced(&self) -> bool {
        let mut per_county: std::collections::BTreeMap<u32, Vec<u32>> = Default::default();
        for (&c, &t) in self.county.iter().zip(&self.period) {
            per_county.entry(c).or_default().push(t);
        }
        let mut it = per_county.into_values().map(|mut v| {
            v.sort_unstable();
            v
        });
        match it.next() {
            None => true,
            Some(first) => it.all(|v| v == first),
        }
    }

    fn check_identified(&self) -> Result<()> {
        let params = self.n_cols() + self.fe_groups();
        if self.n_rows() <= params {
            return Err(Error::Underidentified {
                rows: self.n_rows(),
                params,
            });
        }
        Ok(())
    }
}

/// Replace the shock column by `I·D` and `(1−I)·D`. Rows with a missing
/// indicator are dropped and counted in `dropped_state_missing`.
pub fn interact_state(design: &HorizonDesign, indicator: &[f64]) -> Result<HorizonDesign> {
    if indicator.len() != design.n_rows() {
        return Err(Error::DimensionMismatch(format!(
            "indicator has {} entries for {} design rows",
            indicator.len(),
            design.n_rows()
        )));
    }
    if design.n_shock != 1 {
        return Err(Error::InvalidArgument("state interaction needs exactly one shock column".into()));
    }
    let k = design.n_cols();
    let shock = design.names[0].clone();
    let mut names = vec![format!("{shock}:high"), format!("{shock}:low")];
    names.extend(design.names[1..].iter().cloned());
    let mut out = HorizonDesign {
        names,
        n_shock: 2,
        y: Vec::with_capacity(design.n_rows()),
        x: Vec::with_capacity(design.n_rows() * (k + 1)),
        county: Vec::with_capacity(design.n_rows()),
        period: Vec::with_capacity(design.n_rows()),
        dropped_columns: design.dropped_columns.clone(),
        ..*design
    };
    for r in 0..design.n_rows() {
        let i = indicator[r];
        if i.is_nan() {
            out.dropped_state_missing += 1;
            continue;
        }
        let row = design.row(r);
        let d = row[0];
        let (hi, lo) = if i == 1.0 { (d, 0.0) } else { (0.0, d) };
        out.x.push(hi);
        out.x.push(lo);
        out.x.extend_from_slice(&row[1..]);
        out.y.push(design.y[r]);
        out.county.push(design.county[r]);
        out.period.push(design.period[r]);
    }
    Ok(out)
}

/// Type-7 percentile (linear interpolation between order statistics) of an
/// ascending slice. `p` in percent.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let pos = (n - 1) as f64 * p / 100.0;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_finite(values: impl Iterator<Item = f64>, positive_only: bool) -> Vec<f64> {
    let mut v: Vec<f64> = values
        .filter(|x| !x.is_nan() && (!positive_only || *x > 0.0))
        .collect();
    v.sort_by(f64::total_cmp);
    v
}

/// 0/1 state series (`NaN` where the underlying value is missing).
pub fn state_indicator(panel: &PanelDataset, rule: &StateRule) -> Result<Vec<f64>> {
    if !(rule.percentile > 0.0 && rule.percentile < 100.0) {
        return Err(Error::InvalidArgument(format!(
            "state percentile {} outside (0, 100)",
            rule.percentile
        )));
    }
    let values = panel.evaluate(&rule.series)?.values;
    let t = panel.n_periods();
    let mark = |v: f64, thr: Option<f64>| match thr {
        _ if v.is_nan() => f64::NAN,
        None => f64::NAN,
        Some(thr) => f64::from(u8::from(v > thr)),
    };
    match rule.scope {
        StateScope::Sample => {
            let s = sorted_finite(values.iter().copied(), rule.positive_only);
            let thr = (!s.is_empty()).then(|| percentile(&s, rule.percentile));
            Ok(values.iter().map(|&v| mark(v, thr)).collect())
        }
        StateScope::County => {
            let mut out = vec![f64::NAN; values.len()];
            for c in 0..panel.n_counties() {
                let row = &values[c * t..(c + 1) * t];
                let s = sorted_finite(row.iter().copied(), rule.positive_only);
                let thr = (!s.is_empty()).then(|| percentile(&s, rule.percentile));
                for (o, &v) in out[c * t..(c + 1) * t].iter_mut().zip(row) {
                    *o = mark(v, thr);
                }
            }
            Ok(out)
        }
    }
}

/// Result of [`clean_control_mask`].
#[derive(Debug, Clone, PartialEq)]
pub struct CleanControlMask {
    /// Per panel cell (county-major): row may enter the sample.
    pub keep: Vec<bool>,
    pub treated: usize,
    pub controls: usize,
    /// Cells whose shock is missing (never kept).
    pub missing: usize,
}

/// Keep `(c,t)` iff the shock at `(c,t)` exceeds `treated_above` (treated), or
/// the shock is exactly zero on every period of `[t−W, t+W]` inside the
/// panel (clean control). Missing shocks inside the window disqualify a
/// control.
pub fn clean_control_mask(
    panel: &PanelDataset,
    shock: &[f64],
    window: usize,
    treated_above: f64,
) -> Result<CleanControlMask> {
    if window == 0 {
        return Err(Error::InvalidArgument("clean-control window must be at least 1".into()));
    }
    let t_len = panel.n_periods();
    if shock.len() != panel.n_counties() * t_len {
        return Err(Error::DimensionMismatch("shock series does not match panel".into()));
    }
    let mut keep = vec![false; shock.len()];
    let (mut treated, mut controls, mut missing) = (0, 0, 0);
    let mut prefix = vec![0usize; t_len + 1];
    for c in 0..panel.n_counties() {
        let row = &shock[c * t_len..(c + 1) * t_len];
        for t in 0..t_len {
            prefix[t + 1] = prefix[t] + usize::from(row[t].is_nan() || row[t] != 0.0);
        }
        for t in 0..t_len {
            let v = row[t];
            if v.is_nan() {
                missing += 1;
                continue;
            }
            if v > treated_above {
                keep[c * t_len + t] = true;
                treated += 1;
                continue;
            }
            let lo = t.saturating_sub(window);
            let hi = (t + window).min(t_len - 1);
            if prefix[hi + 1] - prefix[lo] == 0 {
                keep[c * t_len + t] = true;
                controls += 1;
            }
        }
    }
    if missing > 0 {
        log::warn!("clean_control_mask: {missing} cells with missing shock excluded");
    }
    Ok(CleanControlMask {
        keep,
        treated,
        controls,
        missing,
    })
}

/// Sum of squared shares. Shares not summing to one (within 1e-9) are
/// renormalized with a warning.
pub fn herfindahl(shares: &[f64]) -> Result<f64> {
    if shares.is_empty() {
        return Err(Error::InvalidArgument("herfindahl of an empty share list".into()));
    }
    if shares.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::InvalidArgument("shares must be finite and non-negative".into()));
    }
    let total: f64 = shares.iter().sum();
    if total == 0.0 {
        return Err(Error::InvalidArgument("all shares are zero".into()));
    }
    if (total - 1.0).abs() > 1e-9 {
        log::warn!("herfindahl: shares sum to {total}; renormalizing");
        return Ok(shares.iter().map(|s| (s / total).powi(2)).sum());
    }
    Ok(shares.iter().map(|s| s * s).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MedianSplit {
    pub median: f64,
    pub above: Vec<CountyId>,
    /// At or below the median.
    pub below: Vec<CountyId>,
}

/// Split counties at the median of an attribute; ties go to `below` and
/// missing values to neither group.
pub fn median_split(values: &[(CountyId, f64)]) -> Result<MedianSplit> {
    let s = sorted_finite(values.iter().map(|(_, v)| *v), false);
    if s.len() < 2 {
        return Err(Error::InvalidArgument("median split needs at least two non-missing values".into()));
    }
    let median = percentile(&s, 50.0);
    let (mut above, mut below) = (Vec::new(), Vec::new());
    for (id, v) in values.iter().filter(|(_, v)| !v.is_nan()) {
        if *v > median {
            above.push(id.clone());
        } else {
            below.push(id.clone());
        }
    }
    if above.is_empty() {
        return Err(Error::InvalidData("median split: all values equal, upper group is empty".into()));
    }
    Ok(MedianSplit { median, above, below })
}

fn attribute_split(panel: &PanelDataset, name: &str) -> Result<MedianSplit> {
    let attr = panel.attribute(name)?;
    let pairs: Vec<(CountyId, f64)> = panel.counties().iter().cloned().zip(attr.iter().copied()).collect();
    median_split(&pairs)
}

/// Per-county keep flags for a county-level filter.
fn county_keep(panel: &PanelDataset, ids: &[CountyId]) -> Vec<bool> {
    let mut keep = vec![false; panel.n_counties()];
    for id in ids {
        if let Some(i) = panel.county_index(id) {
            keep[i] = true;
        }
    }
    keep
}

struct Column {
    name: String,
    base: usize,
    lag: usize,
    spatial: bool,
}

/// Model evaluated against a panel, ready to materialize per-horizon designs.
pub struct PreparedModel<'a> {
    panel: &'a PanelDataset,
    spec: ModelSpec,
    outcome: Vec<f64>,
    bases: Vec<Vec<f64>>,
    columns: Vec<Column>,
    state: Option<Vec<f64>>,
    mask: Vec<bool>,
    last_filter: String,
    /// Log transforms that hit non-positive values.
    pub masked_nonpositive: usize,
    /// Clean-control bookkeeping, when that filter is active.
    pub clean_controls: Option<CleanControlMask>,
}

impl<'a> PreparedModel<'a> {
    pub fn new(
        panel: &'a PanelDataset,
        spec: &ModelSpec,
        adjacency: Option<&AdjacencyMatrix>,
    ) -> Result<Self> {
        let (n_ylags, n_dlags) = spec.resolved_lags(panel.frequency());
        let mut masked = 0;
        let outcome_d = panel.evaluate(&spec.outcome)?;
        masked += outcome_d.masked_nonpositive;
        let outcome = outcome_d.values;
        let shock_d = panel.evaluate(&spec.shock)?;
        masked += shock_d.masked_nonpositive;
        let shock = shock_d.values;
        let shock_label = spec.shock.label();
        let outcome_label = spec.outcome.label();

        let mut bases = vec![shock.clone()];
        let mut columns = vec![Column {
            name: shock_label.clone(),
            base: 0,
            lag: 0,
            spatial: false,
        }];

        if let Some(rule) = &spec.spatial {
            let adj = adjacency.ok_or_else(|| {
                Error::InvalidArgument("spatial model requested but no adjacency matrix given".into())
            })?;
            let w = if rule.row_normalize { adj.row_normalized() } else { adj.weights() };
            let mut terms = vec![(format!("W({shock_label})"), spatial_regressors(panel, &w, &shock)?)];
            if rule.second_order {
                let w2 = adj.second_order();
                let w2 = if rule.row_normalize { w2.row_normalized() } else { w2.weights() };
                terms.push((format!("W2({shock_label})"), spatial_regressors(panel, &w2, &shock)?));
            }
            for (name, values) in terms {
                let base = bases.len();
                bases.push(values);
                columns.push(Column {
                    name: name.clone(),
                    base,
                    lag: 0,
                    spatial: true,
                });
                for s in 1..=rule.lags {
                    columns.push(Column {
                        name: format!("lag{s}({name})"),
                        base,
                        lag: s,
                        spatial: true,
                    });
                }
            }
        }

        for s in 1..=n_dlags {
            columns.push(Column {
                name: format!("lag{s}({shock_label})"),
                base: 0,
                lag: s,
                spatial: false,
            });
        }
        if n_ylags > 0 {
            let (label, values) = match spec.outcome_lag_form {
                OutcomeLagForm::Change => (format!("d({outcome_label})"), {
                    let prev = panel.shift(&outcome, 1);
                    outcome.iter().zip(&prev).map(|(a, b)| a - b).collect()
                }),
                OutcomeLagForm::Level => (outcome_label.clone(), outcome.clone()),
            };
            let base = bases.len();
            bases.push(values);
            for s in 1..=n_ylags {
                columns.push(Column {
                    name: format!("lag{s}({label})"),
                    base,
                    lag: s,
                    spatial: false,
                });
            }
        }
        for ctl in &spec.controls {
            let d = panel.evaluate(&ctl.series)?;
            masked += d.masked_nonpositive;
            let label = ctl.series.label();
            let base = bases.len();
            bases.push(d.values);
            for s in 0..=ctl.lags {
                columns.push(Column {
                    name: if s == 0 { label.clone() } else { format!("lag{s}({label})") },
                    base,
                    lag: s,
                    spatial: false,
                });
            }
        }
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::DuplicateColumn(c.name.clone()));
            }
        }
        let max_lag = columns.iter().map(|c| c.lag).max().unwrap_or(0);
        if max_lag >= panel.n_periods() {
            return Err(Error::InvalidArgument(format!(
                "lag {max_lag} exceeds the panel's {} periods",
                panel.n_periods()
            )));
        }

        let state = spec.state.as_ref().map(|r| state_indicator(panel, r)).transpose()?;

        // Sample filters compose by intersection.
        let mut mask = vec![true; panel.n_counties() * panel.n_periods()];
        let mut last_filter = "all".to_string();
        let mut clean_controls = None;
        let t_len = panel.n_periods();
        for f in &spec.sample {
            let county_level = match f {
                SampleFilter::All => None,
                SampleFilter::AttributeAboveMedian(a) => Some(county_keep(panel, &attribute_split(panel, a)?.above)),
                SampleFilter::AttributeBelowMedian(a) => Some(county_keep(panel, &attribute_split(panel, a)?.below)),
                SampleFilter::Region(r) => {
                    let tags = panel.tag("region")?;
                    Some(tags.iter().map(|t| t.as_deref() == Some(r.as_str())).collect())
                }
                SampleFilter::Counties(ids) => {
                    if let Some(id) = ids.iter().find(|id| panel.county_index(id).is_none()) {
                        return Err(Error::UnknownCounty(id.to_string()));
                    }
                    Some(county_keep(panel, ids))
                }
                SampleFilter::CleanControl { window, treated_above } => {
                    let cc = clean_control_mask(panel, &shock, *window, *treated_above)?;
                    mask.iter_mut().zip(&cc.keep).for_each(|(m, k)| *m &= k);
                    clean_controls = Some(cc);
                    None
                }
            };
            if let Some(keep) = county_level {
                for (c, k) in keep.iter().enumerate() {
                    if !k {
                        mask[c * t_len..(c + 1) * t_len].iter_mut().for_each(|m| *m = false);
                    }
                }
            }
            last_filter = f.label();
            if !mask.iter().any(|&m| m) {
                return Err(Error::EmptyDesign { filter: last_filter });
            }
        }

        Ok(PreparedModel {
            panel,
            spec: spec.clone(),
            outcome,
            bases,
            columns,
            state,
            mask,
            last_filter,
            masked_nonpositive: masked,
            clean_controls,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn panel(&self) -> &PanelDataset {
        self.panel
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Per-cell state indicator, when the model has a state rule.
    pub fn state(&self) -> Option<&[f64]> {
        self.state.as_deref()
    }

    pub fn design(&self, h: usize, exec: Exec) -> Result<HorizonDesign> {
        self.design_subset(h, None, exec)
    }

    /// Design for horizon `h`, optionally restricted to counties with
    /// `county_keep[c] == true`.
    pub fn design_subset(&self, h: usize, county_keep: Option<&[bool]>, exec: Exec) -> Result<HorizonDesign> {
        let panel = self.panel;
        let t_len = panel.n_periods();
        let k = self.columns.len();
        let blocks = exec.map(panel.n_counties(), |c| {
            let mut y = Vec::new();
            let mut x = Vec::new();
            let mut periods = Vec::new();
            if county_keep.is_some_and(|keep| !keep[c]) {
                return (y, x, periods);
            }
            let mut row = vec![0.0; k];
            'cells: for t in 1..t_len.saturating_sub(h) {
                let i = c * t_len + t;
                if !self.mask[i] {
                    continue;
                }
                let resp = self.outcome[i + h] - self.outcome[i - 1];
                if resp.is_nan() {
                    continue;
                }
                for (j, col) in self.columns.iter().enumerate() {
                    if col.lag > t {
                        continue 'cells;
                    }
                    let v = self.bases[col.base][i - col.lag];
                    if v.is_nan() {
                        continue 'cells;
                    }
                    row[j] = v;
                }
                y.push(resp);
                x.extend_from_slice(&row);
                periods.push(t as u32);
            }
            (y, x, periods)
        });
        let n: usize = blocks.iter().map(|b| b.0.len()).sum();
        let mut design = HorizonDesign {
            h,
            names: self.column_names(),
            n_shock: 1,
            y: Vec::with_capacity(n),
            x: Vec::with_capacity(n * k),
            county: Vec::with_capacity(n),
            period: Vec::with_capacity(n),
            fe: self.spec.fe,
            dropped_state_missing: 0,
            dropped_columns: Vec::new(),
        };
        for (c, (y, x, p)) in blocks.into_iter().enumerate() {
            design.county.extend(std::iter::repeat_n(c as u32, y.len()));
            design.y.extend(y);
            design.x.extend(x);
            design.period.extend(p);
        }
        if design.n_rows() == 0 {
            return Err(Error::EmptyDesign {
                filter: format!("{} with complete cases at horizon {h}", self.last_filter),
            });
        }

        let spatial: Vec<usize> = (0..k).filter(|&j| self.columns[j].spatial).collect();
        if !spatial.is_empty() {
            let zero: Vec<usize> = spatial
                .into_iter()
                .filter(|&j| (0..design.n_rows()).all(|r| design.x[r * k + j] == 0.0))
                .collect();
            if !zero.is_empty() {
                design = drop_columns(&design, &zero);
            }
        }

        if let Some(state) = &self.state {
            let ind: Vec<f64> = design
                .county
                .iter()
                .zip(&design.period)
                .map(|(&c, &t)| state[c as usize * t_len + t as usize])
                .collect();
            design = interact_state(&design, &ind)?;
            if design.n_rows() == 0 {
                return Err(Error::EmptyDesign {
                    filter: "state indicator availability".into(),
                });
            }
        }
        design.check_identified()?;
        Ok(design)
    }
}

fn drop_columns(d: &HorizonDesign, drop: &[usize]) -> HorizonDesign {
    let k = d.n_cols();
    let keep: Vec<usize> = (0..k).filter(|j| !drop.contains(j)).collect();
    let mut x = Vec::with_capacity(d.n_rows() * keep.len());
    for r in 0..d.n_rows() {
        let row = d.row(r);
        x.extend(keep.iter().map(|&j| row[j]));
    }
    let mut dropped = d.dropped_columns.clone();
    dropped.extend(drop.iter().map(|&j| d.names[j].clone()));
    HorizonDesign {
        names: keep.iter().map(|&j| d.names[j].clone()).collect(),
        x,
        y: d.y.clone(),
        county: d.county.clone(),
        period: d.period.clone(),
        dropped_columns: dropped,
        ..*d
    }
}

/// Convenience: design for one horizon without spatial terms.
pub fn build_design(panel: &PanelDataset, spec: &ModelSpec, h: usize) -> Result<HorizonDesign> {
    PreparedModel::new(panel, spec, None)?.design(h, Exec::default())
}

/// Shock column transform used by the default employment model.
pub fn log_outcome(name: &str) -> SeriesRef {
    SeriesRef::new(name).then(Transform::Log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::CountyId;

    fn ids(n: usize) -> Vec<CountyId> {
        (0..n).map(|i| CountyId::new(format!("c{i}")).unwrap()).collect()
    }

    fn toy_panel(n: usize, t: usize) -> PanelDataset {
        let mut emp = Vec::new();
        let mut burn = Vec::new();
        for c in 0..n {
            for s in 0..t {
                emp.push(100.0 + (c * 7 + s * s) as f64 + ((c + 3 * s) % 5) as f64);
                burn.push(if (c + s) % 3 == 0 { (1 + c + s) as f64 } else { 0.0 });
            }
        }
        PanelDataset::new(ids(n), Frequency::Monthly, 400, t)
            .unwrap()
            .with_series("emp", emp)
            .unwrap()
            .with_series("burn", burn)
            .unwrap()
    }

    #[test]
    fn zero_lag_design_has_only_the_shock() {
        let p = toy_panel(3, 8);
        let spec = ModelSpec::new(log_outcome("emp"), SeriesRef::new("burn"), 0).with_lags(0, 0);
        let d = build_design(&p, &spec, 0).unwrap();
        assert_eq!(d.names, vec!["burn"]);
        // t = 0 has no t-1
        assert_eq!(d.n_rows(), 3 * 7);
    }

    #[test]
    fn twenty_four_lags_give_49_columns() {
        let p = toy_panel(4, 60);
        let spec = ModelSpec::new(log_outcome("emp"), SeriesRef::new("burn"), 0);
        let d = build_design(&p, &spec, 0).unwrap();
        assert_eq!(d.n_cols(), 49);
        for c in 0..4u32 {
            let first = d.county.iter().zip(&d.period).filter(|(&cc, _)| cc == c).map(|(_, &t)| t).min();
            assert_eq!(first, Some(25));
        }
        assert_eq!(d.n_rows(), 4 * (60 - 25));
    }

    #[test]
    fn rows_match_brute_force_enumeration() {
        let mut p = toy_panel(3, 9);
        // punch holes
        let mut emp = p.series("emp").unwrap().to_vec();
        emp[p.idx(1, 4)] = f64::NAN;
        let mut burn = p.series("burn").unwrap().to_vec();
        burn[p.idx(2, 6)] = f64::NAN;
        p.insert_series("emp", emp.clone()).unwrap();
        p.insert_series("burn", burn.clone()).unwrap();
        let h = 2;
        let spec = ModelSpec::new(log_outcome("emp"), SeriesRef::new("burn"), h).with_lags(1, 1);
        let d = build_design(&p, &spec, h).unwrap();
        let mut expected = Vec::new();
        for c in 0..3 {
            for t in 0..9usize {
                let get = |v: &Vec<f64>, s: isize| {
                    if !(0..9).contains(&s) {
                        f64::NAN
                    } else {
                        v[c * 9 + s as usize]
                    }
                };
                let t = t as isize;
                let all = [
                    get(&emp, t + h as isize),
                    get(&emp, t - 1),
                    get(&emp, t - 2),
                    get(&burn, t),
                    get(&burn, t - 1),
                ];
                if all.iter().all(|v| !v.is_nan()) {
                    expected.push((c as u32, t as u32));
                }
            }
        }
        let got: Vec<(u32, u32)> = d.county.iter().copied().zip(d.period.iter().copied()).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn entries_reproduce_raw_panel_values() {
        let p = toy_panel(3, 12);
        let spec = ModelSpec::new(log_outcome("emp"), SeriesRef::new("burn"), 2).with_lags(2, 3);
        let d = build_design(&p, &spec, 2).unwrap();
        let emp = p.series("emp").unwrap();
        let burn = p.series("burn").unwrap();
        let at = |v: &[f64], c: u32, t: i64| v[p.idx(c as usize, t as usize)];
        for r in 0..d.n_rows() {
            let (c, t) = (d.county[r], d.period[r] as i64);
            assert_eq!(d.y[r], at(emp, c, t + 2).ln() - at(emp, c, t - 1).ln());
            let row = d.row(r);
            assert_eq!(row[0], at(burn, c, t));
            for s in 1..=3 {
                assert_eq!(row[d.column_index(&format!("lag{s}(burn)")).unwrap()], at(burn, c, t - s));
            }
            for s in 1..=2 {
                let j = d.column_index(&format!("lag{s}(d(log(emp)))")).unwrap();
                assert_eq!(row[j], at(emp, c, t - s).ln() - at(emp, c, t - s - 1).ln());
            }
        }
    }

    #[test]
    fn duplicate_control_is_rejected() {
        let p = toy_panel(3, 12);
        let mut spec = ModelSpec::new(log_outcome("emp"), SeriesRef::new("burn"), 0).with_lags(1, 1);
        spec.controls.push(ControlSpec {
            series: SeriesRef::new("burn"),
            lags: 0,
        });
        assert!(matches!(build_design(&p, &spec, 0), Err(Error::DuplicateColumn(_))));
    }

    #[test]
    fn empty_filter_is_named() {
        let mut p = toy_panel(3, 12);
        p.insert_tag("region", vec![Some("West".into()); 3]).unwrap();
        let mut spec = ModelSpec::new(log_outcome("emp"), SeriesRef::new("burn"), 0).with_lags(1, 1);
        spec.sample.push(SampleFilter::Region("Northeast".into()));
        match build_design(&p, &spec, 0) {
            Err(Error::EmptyDesign { filter }) => assert!(filter.contains("Northeast")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn constant_series_has_no_high_state() {
        let p = toy_panel(2, 10).with_series("u", vec![5.0; 20]).unwrap();
        let rule = StateRule {
            series: SeriesRef::new("u"),
            scope: StateScope::County,
            percentile: 70.0,
            positive_only: false,
        };
        assert!(state_indicator(&p, &rule).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn county_percentile_matches_sort_oracle() {
        let vals: Vec<f64> = (0..2).flat_map(|_| (1..=10).map(f64::from)).collect();
        let p = toy_panel(2, 10).with_series("u", vals).unwrap();
        let rule = StateRule {
            series: SeriesRef::new("u"),
            scope: StateScope::County,
            percentile: 70.0,
            positive_only: false,
        };
        let ind = state_indicator(&p, &rule).unwrap();
        // type-7: position 0.7 * 9 = 6.3 -> 7 + 0.3 * (8 - 7) = 7.3
        let expected: Vec<f64> = (0..2).flat_map(|_| (1..=10).map(|v| f64::from(u8::from(v as f64 > 7.3)))).collect();
        assert_eq!(ind, expected);
    }

    #[test]
    fn sample_percentile_marks_top_share() {
        let n = 10;
        let t = 100;
        let vals: Vec<f64> = (0..n * t).map(|i| 1.0 + ((i * 7919) % 1000) as f64).collect();
        let p = PanelDataset::new(ids(n), Frequency::Monthly, 0, t)
            .unwrap()
            .with_series("burn", vals.clone())
            .unwrap();
        let rule = StateRule {
            series: SeriesRef::new("burn"),
            scope: StateScope::Sample,
            percentile: 99.0,
            positive_only: true,
        };
        let ind = state_indicator(&p, &rule).unwrap();
        let mut s = vals.clone();
        s.sort_by(f64::total_cmp);
        let thr = percentile(&s, 99.0);
        let marked = ind.iter().filter(|&&v| v == 1.0).count();
        assert_eq!(marked, vals.iter().filter(|&&v| v > thr).count());
        assert_eq!(marked, 10);
    }

    #[test]
    fn all_missing_county_gets_missing_indicator() {
        let mut u = vec![1.0; 20];
        u[10..].iter_mut().for_each(|v| *v = f64::NAN);
        let p = toy_panel(2, 10).with_series("u", u).unwrap();
        let rule = StateRule {
            series: SeriesRef::new("u"),
            scope: StateScope::County,
            percentile: 50.0,
            positive_only: false,
        };
        let ind = state_indicator(&p, &rule).unwrap();
        assert!(ind[10..].iter().all(|v| v.is_nan()));
        assert!(ind[..10].iter().all(|&v| v == 0.0));
    }

    fn small_design() -> HorizonDesign {
        let p = toy_panel(3, 12);
        let spec = ModelSpec::new(log_outcome("emp"), SeriesRef::new("burn"), 1).with_lags(1, 1);
        build_design(&p, &spec, 1).unwrap()
    }

    #[test]
    fn interaction_identity_cases() {
        let d = small_design();
        let n = d.n_rows();
        let hi = interact_state(&d, &vec![1.0; n]).unwrap();
        assert_eq!(hi.column(0), d.column(0));
        assert!(hi.column(1).iter().all(|&v| v == 0.0));
        let lo = interact_state(&d, &vec![0.0; n]).unwrap();
        assert_eq!(lo.column(1), d.column(0));
        assert!(lo.column(0).iter().all(|&v| v == 0.0));
        let mixed: Vec<f64> = (0..n).map(|r| (r % 2) as f64).collect();
        let m = interact_state(&d, &mixed).unwrap();
        for r in 0..n {
            assert_eq!(m.row(r)[0] + m.row(r)[1], d.row(r)[0]);
            assert_eq!(&m.row(r)[2..], &d.row(r)[1..]);
        }
    }

    #[test]
    fn interaction_drops_missing_indicator_rows() {
        let d = small_design();
        let mut ind = vec![1.0; d.n_rows()];
        ind[0] = f64::NAN;
        ind[3] = f64::NAN;
        let m = interact_state(&d, &ind).unwrap();
        assert_eq!(m.dropped_state_missing, 2);
        assert_eq!(m.n_rows(), d.n_rows() - 2);
    }

    #[test]
    fn clean_controls_simple_cases() {
        let p = PanelDataset::new(ids(2), Frequency::Monthly, 0, 100).unwrap();
        let mut burn = vec![0.0; 200];
        burn[100 + 50] = 3.0;
        let m = clean_control_mask(&p, &burn, 36, 0.0).unwrap();
        assert!(m.keep[..100].iter().all(|&k| k));
        for t in 0..100 {
            let expect = t == 50 || (t as i64 - 50).abs() > 36;
            assert_eq!(m.keep[100 + t], expect, "t = {t}");
        }
        assert_eq!(m.treated, 1);
        assert!(clean_control_mask(&p, &burn, 0, 0.0).is_err());
    }

    #[test]
    fn clean_controls_match_double_loop() {
        let n = 5;
        let t_len = 40;
        let p = PanelDataset::new(ids(n), Frequency::Monthly, 0, t_len).unwrap();
        let burn: Vec<f64> = (0..n * t_len)
            .map(|i| if (i * 37 + 11) % 29 == 0 { 2.0 } else { 0.0 })
            .collect();
        let w = 4;
        let m = clean_control_mask(&p, &burn, w, 0.0).unwrap();
        for c in 0..n {
            for t in 0..t_len {
                let treated = burn[c * t_len + t] > 0.0;
                let mut clean = true;
                for s in t.saturating_sub(w)..=(t + w).min(t_len - 1) {
                    if burn[c * t_len + s] != 0.0 {
                        clean = false;
                    }
                }
                assert_eq!(m.keep[c * t_len + t], treated || clean);
            }
        }
    }

    #[test]
    fn herfindahl_examples() {
        assert_eq!(herfindahl(&[1.0]).unwrap(), 1.0);
        assert_eq!(herfindahl(&[0.25; 4]).unwrap(), 0.25);
        assert!((herfindahl(&[0.5, 0.3, 0.2]).unwrap() - 0.38).abs() < 1e-15);
        assert!((herfindahl(&[2.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(herfindahl(&[]).is_err());
        assert!(herfindahl(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn median_split_examples() {
        let mk = |v: &[f64]| -> Vec<(CountyId, f64)> { ids(v.len()).into_iter().zip(v.iter().copied()).collect() };
        let s = median_split(&mk(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.above, ids(4)[2..].to_vec());
        assert_eq!(s.below, ids(4)[..2].to_vec());
        let s = median_split(&mk(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(s.below, ids(3)[..2].to_vec());
        assert!(median_split(&mk(&[2.0, 2.0, 2.0])).is_err());
        assert!(median_split(&mk(&[2.0])).is_err());
        let s = median_split(&mk(&[1.0, f64::NAN, 3.0])).unwrap();
        assert_eq!(s.above.len() + s.below.len(), 2);
    }

    #[test]
    fn underidentified_design_is_rejected() {
        let p = toy_panel(2, 4);
        let spec = ModelSpec::new(log_outcome("emp"), SeriesRef::new("burn"), 0).with_lags(1, 1);
        assert!(matches!(build_design(&p, &spec, 0), Err(Error::Underidentified { .. })));
    }
}
