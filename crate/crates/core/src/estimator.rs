//! One horizon's regression: absorb county and period effects, solve least
//! squares through the cross-product matrix, and form the Driscoll-Kraay
//! covariance from period-summed scores.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{FixedEffects, HorizonDesign};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::{gram, symmetrize, SpdFactor, RANK_TOL};

/// How the DK lag truncation is chosen for horizon `h`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// `m = h + 1`.
    #[default]
    HorizonPlusOne,
    Fixed(usize),
}

impl Bandwidth {
    pub fn resolve(self, h: usize) -> usize {
        match self {
            Bandwidth::HorizonPlusOne => h + 1,
            Bandwidth::Fixed(m) => m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub bandwidth: Bandwidth,
    /// Multiply the DK meat by `T/(T−1)`.
    pub dof_correction: bool,
    pub demean_tol: f64,
    pub max_iter: usize,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            bandwidth: Bandwidth::default(),
            dof_correction: true,
            demean_tol: 1e-10,
            max_iter: 10_000,
            exec: Exec::default(),
        }
    }
}

/// Bookkeeping from [`two_way_demean`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemeanInfo {
    pub iterations: usize,
    /// Groups (county or period) containing a single row.
    pub singletons: usize,
    /// Largest remaining group mean relative to its column scale.
    pub residual: f64,
}

fn dense_labels(labels: &[u32]) -> (Vec<u32>, usize) {
    let max = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    let mut map = vec![u32::MAX; max];
    let mut next = 0u32;
    let out = labels
        .iter()
        .map(|&l| {
            let slot = &mut map[l as usize];
            if *slot == u32::MAX {
                *slot = next;
                next += 1;
            }
            *slot
        })
        .collect();
    (out, next as usize)
}

/// Per-group column sums of a row-major `n × w` block.
fn group_sums(data: &[f64], w: usize, groups: &[u32], n_groups: usize, exec: Exec) -> Vec<f64> {
    exec.chunked_reduce(
        groups.len(),
        |rows| {
            let mut acc = vec![0.0; n_groups * w];
            for r in rows {
                let g = groups[r] as usize;
                let dst = &mut acc[g * w..(g + 1) * w];
                for (d, v) in dst.iter_mut().zip(&data[r * w..(r + 1) * w]) {
                    *d += v;
                }
            }
            acc
        },
        |a, b| a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
    )
    .unwrap_or_else(|| vec![0.0; n_groups * w])
}

struct Groups {
    labels: Vec<u32>,
    inv_size: Vec<f64>,
}

impl Groups {
    fn new(raw: &[u32]) -> (Self, usize) {
        let (labels, n) = dense_labels(raw);
        let mut size = vec![0usize; n];
        labels.iter().for_each(|&g| size[g as usize] += 1);
        let singletons = size.iter().filter(|&&s| s == 1).count();
        let inv_size = size.iter().map(|&s| 1.0 / s as f64).collect();
        (Groups { labels, inv_size }, singletons)
    }

    fn means(&self, data: &[f64], w: usize, exec: Exec) -> Vec<f64> {
        let mut s = group_sums(data, w, &self.labels, self.inv_size.len(), exec);
        for (g, inv) in self.inv_size.iter().enumerate() {
            s[g * w..(g + 1) * w].iter_mut().for_each(|v| *v *= inv);
        }
        s
    }

    fn subtract(&self, data: &mut [f64], w: usize, means: &[f64], exec: Exec) {
        let labels = &self.labels;
        exec.for_each_row_chunk(data, w, |first, chunk| {
            for (i, row) in chunk.chunks_mut(w).enumerate() {
                let g = labels[first + i] as usize;
                for (v, m) in row.iter_mut().zip(&means[g * w..(g + 1) * w]) {
                    *v -= m;
                }
            }
        });
    }
}

/// True when every (county, period) pair occurs exactly once.
fn is_grid(cg: &Groups, pg: &Groups) -> bool {
    let (nc, np) = (cg.inv_size.len(), pg.inv_size.len());
    if cg.labels.len() != nc * np {
        return false;
    }
    let mut seen = vec![false; nc * np];
    cg.labels.iter().zip(&pg.labels).all(|(&c, &p)| {
        let cell = &mut seen[c as usize * np + p as usize];
        !std::mem::replace(cell, true)
    })
}

fn max_rel(means: &[f64], w: usize, scale: &[f64]) -> f64 {
    means
        .chunks(w)
        .flat_map(|g| g.iter().zip(scale).map(|(m, s)| if *s > 0.0 { m.abs() / s } else { 0.0 }))
        .fold(0.0, f64::max)
}

/// In-place absorption of county and/or period effects from every column of
/// the row-major `n × w` block `data`, by alternating projections.
///
/// Convergence is declared when every county and period mean of every column
/// is below `tol` times that column's largest absolute entry at entry.
#[allow(clippy::too_many_arguments)]
pub fn two_way_demean(
    data: &mut [f64],
    w: usize,
    county: &[u32],
    period: &[u32],
    fe: FixedEffects,
    tol: f64,
    max_iter: usize,
    exec: Exec,
) -> Result<DemeanInfo> {
    let n = county.len();
    if period.len() != n || data.len() != n * w {
        return Err(Error::DimensionMismatch(format!(
            "demean: {} values, {} county labels, {} period labels, width {w}",
            data.len(),
            n,
            period.len()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("demeaning tolerance must be positive".into()));
    }
    let mut scale = vec![0.0f64; w];
    for row in data.chunks(w) {
        for (s, v) in scale.iter_mut().zip(row) {
            *s = s.max(v.abs());
        }
    }
    let mut singletons = 0;
    let cg = fe.county.then(|| {
        let (g, s) = Groups::new(county);
        singletons += s;
        g
    });
    let pg = fe.period.then(|| {
        let (g, s) = Groups::new(period);
        singletons += s;
        g
    });
    let info = |iterations, residual| DemeanInfo {
        iterations,
        singletons,
        residual,
    };
    match (cg, pg) {
        (None, None) => Ok(info(0, 0.0)),
        (Some(g), None) | (None, Some(g)) => {
            let m = g.means(data, w, exec);
            g.subtract(data, w, &m, exec);
            Ok(info(1, 0.0))
        }
        (Some(cg), Some(pg)) if is_grid(&cg, &pg) => {
            // Every county observed in every period: the projection is exact.
            let cm = cg.means(data, w, exec);
            let pm = pg.means(data, w, exec);
            let n_c = cg.inv_size.len() as f64;
            let mut grand = vec![0.0; w];
            for g in cm.chunks(w) {
                grand.iter_mut().zip(g).for_each(|(a, b)| *a += b / n_c);
            }
            let (cl, pl) = (&cg.labels, &pg.labels);
            exec.for_each_row_chunk(data, w, |first, chunk| {
                for (i, row) in chunk.chunks_mut(w).enumerate() {
                    let c = cl[first + i] as usize;
                    let p = pl[first + i] as usize;
                    let (cr, pr) = (&cm[c * w..(c + 1) * w], &pm[p * w..(p + 1) * w]);
                    for j in 0..w {
                        row[j] -= cr[j] + pr[j] - grand[j];
                    }
                }
            });
            Ok(info(1, 0.0))
        }
        (Some(cg), Some(pg)) => {
            let mut residual = f64::INFINITY;
            for it in 1..=max_iter {
                let cm = cg.means(data, w, exec);
                let c_res = max_rel(&cm, w, &scale);
                if it > 1 && c_res <= tol {
                    return Ok(info(it - 1, c_res));
                }
                cg.subtract(data, w, &cm, exec);
                let pm = pg.means(data, w, exec);
                residual = max_rel(&pm, w, &scale);
                pg.subtract(data, w, &pm, exec);
            }
            let cm = cg.means(data, w, exec);
            let c_res = max_rel(&cm, w, &scale);
            if c_res <= tol {
                return Ok(info(max_iter, c_res));
            }
            Err(Error::NoConvergence {
                iterations: max_iter,
                residual: residual.max(c_res),
            })
        }
    }
}

/// Least-squares solution on an already demeaned system.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `(XᵀX)⁻¹`.
    pub bread: DMatrix<f64>,
}

/// Solve `min ‖y − Xβ‖²` for row-major `x` (`n × k`).
pub fn ols_fit(x: &[f64], y: &[f64], names: &[String], exec: Exec) -> Result<OlsFit> {
    let k = names.len();
    let n = y.len();
    if x.len() != n * k {
        return Err(Error::DimensionMismatch(format!("x has {} entries for {n} × {k}", x.len())));
    }
    if n < k {
        return Err(Error::Underidentified { rows: n, params: k });
    }
    let g = gram(x, k, exec);
    let xty = exec
        .chunked_reduce(
            n,
            |rows| {
                let mut acc = vec![0.0; k];
                for r in rows {
                    let row = &x[r * k..(r + 1) * k];
                    for (a, v) in acc.iter_mut().zip(row) {
                        *a += v * y[r];
                    }
                }
                acc
            },
            |a, b| a.iter_mut().zip(b).for_each(|(p, q)| *p += q),
        )
        .unwrap_or_else(|| vec![0.0; k]);
    let factor = SpdFactor::new(&g, names)?;
    let coefficients = factor.solve(&xty);
    let residuals = residuals(x, y, &coefficients, exec);
    Ok(OlsFit {
        coefficients,
        residuals,
        bread: factor.inverse(),
    })
}

fn residuals(x: &[f64], y: &[f64], beta: &[f64], exec: Exec) -> Vec<f64> {
    residuals_strided(x, beta.len(), y, beta, exec)
}

/// Residuals `y − Xβ` where row `r` of `X` is `data[r * stride..][..k]`.
fn residuals_strided(data: &[f64], stride: usize, y: &[f64], beta: &[f64], exec: Exec) -> Vec<f64> {
    let k = beta.len();
    let mut e = y.to_vec();
    exec.for_each_row_chunk(&mut e, 1, |first, chunk| {
        for (i, v) in chunk.iter_mut().enumerate() {
            let r = first + i;
            let row = &data[r * stride..r * stride + k];
            *v -= row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
        }
    });
    e
}

/// Period-summed scores `h_t = Σ_c x_ct e_ct`, indexed by label offset from
/// the smallest period. Returns the dense score block, its span and the count
/// of distinct periods.
fn period_scores(
    x: &[f64],
    stride: usize,
    k: usize,
    resid: &[f64],
    period: &[u32],
    exec: Exec,
) -> (Vec<f64>, u32, usize, usize) {
    let lo = period.iter().copied().min().unwrap_or(0);
    let span = period.iter().copied().max().map_or(0, |m| (m - lo) as usize + 1);
    let scores = exec
        .chunked_reduce(
            resid.len(),
            |rows| {
                let mut acc = vec![0.0; span * k];
                for r in rows {
                    let t = (period[r] - lo) as usize;
                    let e = resid[r];
                    let dst = &mut acc[t * k..(t + 1) * k];
                    for (d, v) in dst.iter_mut().zip(&x[r * stride..r * stride + k]) {
                        *d += v * e;
                    }
                }
                acc
            },
            |a, b| a.iter_mut().zip(b).for_each(|(p, q)| *p += q),
        )
        .unwrap_or_default();
    let mut seen = vec![false; span];
    period.iter().for_each(|&p| seen[(p - lo) as usize] = true);
    let distinct = seen.iter().filter(|&&s| s).count();
    (scores, lo, span, distinct)
}

/// Bartlett-weighted long-run covariance of the period scores.
fn dk_meat(scores: &[f64], k: usize, span: usize, m: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(k, k);
    for j in 0..=m.min(span.saturating_sub(1)) {
        let w = if j == 0 { 1.0 } else { 1.0 - j as f64 / (m as f64 + 1.0) };
        let mut omega = DMatrix::zeros(k, k);
        for t in j..span {
            let a = &scores[t * k..(t + 1) * k];
            let b = &scores[(t - j) * k..(t - j + 1) * k];
            if a.iter().all(|v| *v == 0.0) {
                continue;
            }
            for p in 0..k {
                if a[p] == 0.0 {
                    continue;
                }
                for q in 0..k {
                    omega[(p, q)] += a[p] * b[q];
                }
            }
        }
        if j == 0 {
            s += omega;
        } else {
            s += (&omega + omega.transpose()) * w;
        }
    }
    s
}

/// Driscoll-Kraay covariance for the coefficients of a demeaned system.
///
/// `bread` is `(XᵀX)⁻¹`. Lag `j` pairs periods whose labels differ by `j`.
#[allow(clippy::too_many_arguments)]
pub fn dk_covariance(
    x: &[f64],
    k: usize,
    residuals: &[f64],
    period: &[u32],
    bread: &DMatrix<f64>,
    bandwidth: usize,
    dof_correction: bool,
    exec: Exec,
) -> Result<DMatrix<f64>> {
    if x.len() != residuals.len() * k {
        return Err(Error::DimensionMismatch("dk_covariance inputs disagree in size".into()));
    }
    dk_strided(x, k, k, residuals, period, bread, bandwidth, dof_correction, exec)
}

#[allow(clippy::too_many_arguments)]
fn dk_strided(
    x: &[f64],
    stride: usize,
    k: usize,
    residuals: &[f64],
    period: &[u32],
    bread: &DMatrix<f64>,
    bandwidth: usize,
    dof_correction: bool,
    exec: Exec,
) -> Result<DMatrix<f64>> {
    if residuals.len() != period.len() || bread.nrows() != k {
        return Err(Error::DimensionMismatch("dk_covariance inputs disagree in size".into()));
    }
    let (scores, _, span, t) = period_scores(x, stride, k, residuals, period, exec);
    if t == 0 {
        return Err(Error::InvalidArgument("DK covariance with zero periods".into()));
    }
    if bandwidth >= t {
        return Err(Error::InvalidArgument(format!(
            "DK bandwidth {bandwidth} must be below the number of periods {t}"
        )));
    }
    let mut s = dk_meat(&scores, k, span, bandwidth);
    if dof_correction && t > 1 {
        s *= t as f64 / (t as f64 - 1.0);
    }
    let mut v = bread * s * bread;
    symmetrize(&mut v);
    Ok(v)
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub h: usize,
    pub names: Vec<String>,
    pub n_shock: usize,
    pub coefficients: Vec<f64>,
    pub covariance: DMatrix<f64>,
    /// Residuals in design row order.
    pub residuals: Vec<f64>,
    pub n_obs: usize,
    pub n_periods: usize,
    pub dk_bandwidth: usize,
    pub demean: DemeanInfo,
}

impl FitResult {
    pub fn se(&self) -> Vec<f64> {
        (0..self.names.len()).map(|i| self.covariance[(i, i)].max(0.0).sqrt()).collect()
    }

    pub fn coef(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }

    /// Shock effect estimate (first column).
    pub fn beta(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn beta_se(&self) -> f64 {
        self.covariance[(0, 0)].max(0.0).sqrt()
    }
}

fn col_norms(z: &[f64], w: usize) -> Vec<f64> {
    let mut out = vec![0.0; w];
    for row in z.chunks(w) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v * v;
        }
    }
    out
}

/// Demeaned `[X | y]` block for a design.
pub(crate) fn absorbed_system(design: &HorizonDesign, opts: &FitOptions) -> Result<(Vec<f64>, DemeanInfo)> {
    let k = design.n_cols();
    let w = k + 1;
    let mut z = Vec::with_capacity(design.n_rows() * w);
    for r in 0..design.n_rows() {
        z.extend_from_slice(design.row(r));
        z.push(design.y[r]);
    }
    let before = col_norms(&z, w);
    let info = two_way_demean(
        &mut z,
        w,
        &design.county,
        &design.period,
        design.fe,
        opts.demean_tol,
        opts.max_iter,
        opts.exec,
    )?;
    if info.singletons > 0 {
        log::debug!("horizon {}: {} singleton fixed-effect groups kept", design.h, info.singletons);
    }
    let after = col_norms(&z, w);
    for j in 0..k {
        if after[j] <= RANK_TOL * before[j] || after[j] == 0.0 {
            return Err(Error::RankDeficient {
                column: design.names[j].clone(),
                dependent_on: vec!["fixed effects".into()],
            });
        }
    }
    Ok((z, info))
}

fn solve_absorbed(design: &HorizonDesign, opts: &FitOptions) -> Result<(Vec<f64>, Vec<f64>, SpdFactor, DemeanInfo)> {
    let k = design.n_cols();
    let (z, demean) = absorbed_system(design, opts)?;
    let g = gram(&z, k + 1, opts.exec);
    let xtx = g.view((0, 0), (k, k)).into_owned();
    let xty: Vec<f64> = (0..k).map(|i| g[(i, k)]).collect();
    let factor = SpdFactor::new(&xtx, &design.names)?;
    let coefficients = factor.solve(&xty);
    Ok((z, coefficients, factor, demean))
}

/// Point estimates only, without the covariance.
pub fn fit_coefficients(design: &HorizonDesign, opts: &FitOptions) -> Result<Vec<f64>> {
    solve_absorbed(design, opts).map(|(_, b, _, _)| b)
}

/// Estimate one horizon.
pub fn fit(design: &HorizonDesign, opts: &FitOptions) -> Result<FitResult> {
    let exec = opts.exec;
    let k = design.n_cols();
    let w = k + 1;
    let (z, coefficients, factor, demean) = solve_absorbed(design, opts)?;
    let bread = factor.inverse();
    let y: Vec<f64> = z.chunks(w).map(|row| row[k]).collect();
    let residuals = residuals_strided(&z, w, &y, &coefficients, exec);
    drop(y);
    let m = opts.bandwidth.resolve(design.h);
    let covariance = dk_strided(&z, w, k, &residuals, &design.period, &bread, m, opts.dof_correction, exec)?;
    let n_periods = {
        let mut p = design.period.clone();
        p.sort_unstable();
        p.dedup();
        p.len()
    };
    Ok(FitResult {
        h: design.h,
        names: design.names.clone(),
        n_shock: design.n_shock,
        coefficients,
        covariance,
        residuals,
        n_obs: design.n_rows(),
        n_periods,
        dk_bandwidth: m,
        demean,
    })
}

/// Classical homoskedastic OLS covariance `σ̂² (XᵀX)⁻¹`, with `dof` absorbed
/// parameters subtracted from the residual degrees of freedom.
pub fn classical_covariance(residuals: &[f64], bread: &DMatrix<f64>, dof: usize) -> DMatrix<f64> {
    let ssr: f64 = residuals.iter().map(|e| e * e).sum();
    let df = residuals.len().saturating_sub(dof).max(1) as f64;
    bread * (ssr / df)
}

/// Dense `Xβ` helper used by tests and diagnostics.
pub fn predict(x: &[f64], beta: &[f64]) -> Vec<f64> {
    let k = beta.len();
    let b = DVector::from_column_slice(beta);
    x.chunks(k)
        .map(|row| DVector::from_column_slice(row).dot(&b))
        .collect()
}
