//! Horizon loop, rescaling, cumulative effects, confidence bands and the
//! county-dropping jackknife.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::{HorizonDesign, ModelSpec, PreparedModel};
use crate::error::{Error, Result};
use crate::estimator::{fit, fit_coefficients, FitOptions, FitResult};
use crate::exec::Exec;
use crate::linalg::{gram_rows, symmetrize, SpdFactor};
use crate::panel::PanelDataset;
use crate::spatial::AdjacencyMatrix;

/// Average monthly burn area (km²) across counties experiencing fires.
pub const DEFAULT_IMPULSE_KM2: f64 = 13.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrfOptions {
    /// Shock units in one impulse.
    pub impulse_size: f64,
    pub ci_level: f64,
    #[serde(flatten)]
    pub fit: FitOptions,
}

impl Default for IrfOptions {
    fn default() -> Self {
        IrfOptions {
            impulse_size: DEFAULT_IMPULSE_KM2,
            ci_level: 0.95,
            fit: FitOptions::default(),
        }
    }
}

/// Response path of one shock column.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    /// Regressor name of the shock column.
    pub label: String,
    pub horizons: Vec<usize>,
    /// Log units per shock unit.
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub impulse_size: f64,
    /// Percentage points per impulse.
    pub scaled_beta: Vec<f64>,
    pub scaled_se: Vec<f64>,
    pub ci_level: f64,
    pub n_obs: Vec<usize>,
    pub dk_bandwidth: Vec<usize>,
}

impl ImpulseResponse {
    pub fn max_horizon(&self) -> usize {
        self.horizons.len() - 1
    }

    /// Build from raw per-horizon estimates.
    pub fn from_raw(label: impl Into<String>, beta: Vec<f64>, se: Vec<f64>, impulse_size: f64, ci_level: f64) -> Self {
        let n = beta.len();
        ImpulseResponse {
            label: label.into(),
            horizons: (0..n).collect(),
            scaled_beta: beta.iter().map(|b| rescale(*b, impulse_size)).collect(),
            scaled_se: se.iter().map(|s| rescale(*s, impulse_size)).collect(),
            beta,
            se,
            impulse_size,
            ci_level,
            n_obs: vec![0; n],
            dk_bandwidth: vec![0; n],
        }
    }

    pub fn band(&self) -> Vec<(f64, f64)> {
        confidence_band(self, self.ci_level)
    }
}

/// Raw coefficient per shock unit to percentage points per impulse.
pub fn rescale(raw: f64, impulse_size: f64) -> f64 {
    raw * impulse_size * 100.0
}

/// Normal critical value `z_{(1+level)/2}`.
pub fn critical_value(level: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + level / 2.0)
}

/// Per-horizon `scaled_beta ± z · scaled_se`.
pub fn confidence_band(irf: &ImpulseResponse, level: f64) -> Vec<(f64, f64)> {
    assert!(level > 0.0 && level < 1.0, "confidence level must be in (0, 1)");
    let z = critical_value(level);
    irf.scaled_beta
        .iter()
        .zip(&irf.scaled_se)
        .map(|(b, s)| (b - z * s, b + z * s))
        .collect()
}

fn check_impulse(opts: &IrfOptions) -> Result<()> {
    if !(opts.impulse_size > 0.0 && opts.impulse_size.is_finite()) {
        return Err(Error::InvalidArgument(format!("impulse size {} must be positive", opts.impulse_size)));
    }
    if !(opts.ci_level > 0.0 && opts.ci_level < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence level {} outside (0, 1)", opts.ci_level)));
    }
    Ok(())
}

/// Fit every horizon `0..=H`. Horizons run concurrently under a parallel
/// policy, each fit sequential inside, so at most one design per worker is
/// alive at a time.
pub fn fit_horizons(model: &PreparedModel, opts: &IrfOptions) -> Result<Vec<FitResult>> {
    let outer = opts.fit.exec;
    let inner = FitOptions {
        exec: if outer.is_parallel() { Exec::Sequential } else { outer },
        ..opts.fit
    };
    outer.try_map(model.spec().horizons + 1, |h| {
        model
            .design(h, inner.exec)
            .and_then(|d| fit(&d, &inner))
            .map_err(|e| e.at_horizon(h))
    })
}

/// One response per shock column (two under a state rule).
pub fn responses_from_fits(fits: &[FitResult], opts: &IrfOptions) -> Vec<ImpulseResponse> {
    let n_shock = fits[0].n_shock;
    (0..n_shock)
        .map(|j| {
            let beta = fits.iter().map(|f| f.coefficients[j]).collect();
            let se = fits.iter().map(|f| f.covariance[(j, j)].max(0.0).sqrt()).collect();
            let mut irf = ImpulseResponse::from_raw(fits[0].names[j].clone(), beta, se, opts.impulse_size, opts.ci_level);
            irf.n_obs = fits.iter().map(|f| f.n_obs).collect();
            irf.dk_bandwidth = fits.iter().map(|f| f.dk_bandwidth).collect();
            irf
        })
        .collect()
}

/// Responses of every shock column of a prepared model.
pub fn estimate_responses(model: &PreparedModel, opts: &IrfOptions) -> Result<Vec<ImpulseResponse>> {
    check_impulse(opts)?;
    let fits = fit_horizons(model, opts)?;
    Ok(responses_from_fits(&fits, opts))
}

/// Response of the (first) shock column for `spec` on `panel`.
pub fn estimate_irf(
    panel: &PanelDataset,
    spec: &ModelSpec,
    adjacency: Option<&AdjacencyMatrix>,
    opts: &IrfOptions,
) -> Result<ImpulseResponse> {
    let model = PreparedModel::new(panel, spec, adjacency)?;
    Ok(estimate_responses(&model, opts)?.swap_remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeEffect {
    /// Sum of scaled responses over the summed horizons (pp).
    pub phi: f64,
    /// Jackknife standard deviation, when computed.
    pub sd: Option<f64>,
    pub horizon: usize,
    pub include_h0: bool,
    pub draws: Option<usize>,
    pub drop: Option<f64>,
    pub seed: Option<u64>,
}

fn summed_range(h_max: usize, include_h0: bool) -> std::ops::RangeInclusive<usize> {
    (if include_h0 { 0 } else { 1 })..=h_max
}

/// `φ(H) = Σ_{h=1..H} scaled β_h`, or from `h = 0` when `include_h0`.
pub fn cumulative_effect(irf: &ImpulseResponse, horizon: usize, include_h0: bool) -> Result<CumulativeEffect> {
    if horizon > irf.max_horizon() {
        return Err(Error::InvalidArgument(format!(
            "cumulative horizon {horizon} beyond estimated horizon {}",
            irf.max_horizon()
        )));
    }
    let phi = summed_range(horizon, include_h0).map(|h| irf.scaled_beta[h]).sum();
    Ok(CumulativeEffect {
        phi,
        sd: None,
        horizon,
        include_h0,
        draws: None,
        drop: None,
        seed: None,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JackknifeScaling {
    /// Delete-d jackknife: sample covariance times `(N − d)/d`.
    #[default]
    DeleteD,
    /// Plain sample covariance of the draws.
    Raw,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JackknifeMethod {
    /// Cross-product updates on balanced two-way designs, refits otherwise.
    #[default]
    Auto,
    Refit,
    /// Cross-product updates; errors on designs that do not qualify.
    Gram,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JackknifeOptions {
    pub draws: usize,
    /// Fraction of counties dropped per draw.
    pub drop: f64,
    pub seed: u64,
    pub scaling: JackknifeScaling,
    pub method: JackknifeMethod,
    pub include_h0: bool,
}

impl Default for JackknifeOptions {
    fn default() -> Self {
        JackknifeOptions {
            draws: 1000,
            drop: 0.05,
            seed: 0,
            scaling: JackknifeScaling::DeleteD,
            method: JackknifeMethod::Auto,
            include_h0: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct JackknifeResult {
    /// Scaled shock-effect path of every accepted draw (`K × (H+1)`).
    pub paths: Vec<Vec<f64>>,
    /// Covariance of the scaled paths, after scaling.
    pub covariance: DMatrix<f64>,
    pub sd_phi: f64,
    pub n_counties: usize,
    pub n_drop: usize,
    /// Draws that failed to estimate and were resampled.
    pub failed: usize,
    pub factor: f64,
}

impl JackknifeResult {
    pub fn cumulative(&self, point: &CumulativeEffect, opts: &JackknifeOptions) -> CumulativeEffect {
        CumulativeEffect {
            sd: Some(self.sd_phi),
            draws: Some(opts.draws),
            drop: Some(opts.drop),
            seed: Some(opts.seed),
            ..point.clone()
        }
    }
}

/// Counties dropped in attempt `attempt` of draw `k`.
pub fn draw_dropped(seed: u64, k: usize, attempt: usize, n: usize, n_drop: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((attempt as u64) << 32) | k as u64);
    let mut v = index::sample(&mut rng, n, n_drop).into_vec();
    v.sort_unstable();
    v
}

/// Cached per-horizon quantities for cross-product jackknife updates.
///
/// With `z` the county-demeaned `[X | y]` on a balanced design, the two-way
/// demeaned cross products on a county subset `S` are
/// `Σ_{c∈S} G_c − (1/|S|) Σ_t Z_t Z_tᵀ` with `G_c = Σ_t z_ct z_ctᵀ` and
/// `Z_t = Σ_{c∈S} z_ct`.
struct GramCache {
    w: usize,
    n_periods: usize,
    /// Panel county index → slot in the caches.
    slot: Vec<Option<usize>>,
    /// County-demeaned rows per slot, period-ordered (`T × w`).
    z: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
    g_all: Vec<f64>,
    z_all: Vec<f64>,
    names: Vec<String>,
}

impl GramCache {
    fn new(design: &HorizonDesign, n_panel_counties: usize) -> Option<GramCache> {
        if !(design.fe.county && design.fe.period) || !design.is_balanced() {
            return None;
        }
        let k = design.n_cols();
        let w = k + 1;
        let mut slot = vec![None; n_panel_counties];
        let mut z: Vec<Vec<f64>> = Vec::new();
        let mut order: Vec<usize> = (0..design.n_rows()).collect();
        order.sort_by_key(|&r| (design.county[r], design.period[r]));
        for &r in &order {
            let c = design.county[r] as usize;
            let s = *slot[c].get_or_insert_with(|| {
                z.push(Vec::new());
                z.len() - 1
            });
            z[s].extend_from_slice(design.row(r));
            z[s].push(design.y[r]);
        }
        let n_periods = z[0].len() / w;
        let mut g = Vec::with_capacity(z.len());
        let mut g_all = vec![0.0; w * w];
        let mut z_all = vec![0.0; n_periods * w];
        for zc in &mut z {
            for j in 0..w {
                let mean = (0..n_periods).map(|t| zc[t * w + j]).sum::<f64>() / n_periods as f64;
                (0..n_periods).for_each(|t| zc[t * w + j] -= mean);
            }
            let gc = gram_rows(zc, w, 0..n_periods);
            g_all.iter_mut().zip(&gc).for_each(|(a, b)| *a += b);
            z_all.iter_mut().zip(zc.iter()).for_each(|(a, b)| *a += b);
            g.push(gc);
        }
        Some(GramCache {
            w,
            n_periods,
            slot,
            z,
            g,
            g_all,
            z_all,
            names: design.names.clone(),
        })
    }

    fn n_counties(&self) -> usize {
        self.z.len()
    }

    /// Coefficients on the design restricted to counties not in `dropped`.
    fn solve_without(&self, dropped: &[usize]) -> Result<Vec<f64>> {
        let w = self.w;
        let k = w - 1;
        let mut g = self.g_all.clone();
        let mut zt = self.z_all.clone();
        let mut removed = 0;
        for &c in dropped {
            if let Some(s) = self.slot[c] {
                removed += 1;
                g.iter_mut().zip(&self.g[s]).for_each(|(a, b)| *a -= b);
                zt.iter_mut().zip(&self.z[s]).for_each(|(a, b)| *a -= b);
            }
        }
        let n_s = self.n_counties() - removed;
        if n_s == 0 {
            return Err(Error::EmptyDesign {
                filter: "jackknife county subset".into(),
            });
        }
        if n_s * self.n_periods < k + n_s + self.n_periods {
            return Err(Error::Underidentified {
                rows: n_s * self.n_periods,
                params: k + n_s + self.n_periods - 1,
            });
        }
        let inv = 1.0 / n_s as f64;
        let between = gram_rows(&zt, w, 0..self.n_periods);
        g.iter_mut().zip(&between).for_each(|(a, b)| *a -= inv * b);
        let xtx = DMatrix::from_fn(k, k, |i, j| if i <= j { g[i * w + j] } else { g[j * w + i] });
        let xty: Vec<f64> = (0..k).map(|i| g[i * w + k]).collect();
        Ok(SpdFactor::new(&xtx, &self.names)?.solve(&xty))
    }
}

enum HorizonEngine {
    Gram(GramCache),
    Refit,
}

/// County-dropping jackknife of the first shock column's scaled path.
pub fn block_jackknife(model: &PreparedModel, irf_opts: &IrfOptions, opts: &JackknifeOptions) -> Result<JackknifeResult> {
    check_impulse(irf_opts)?;
    if opts.draws < 2 {
        return Err(Error::InvalidArgument("jackknife needs at least two draws".into()));
    }
    if !(0.0..1.0).contains(&opts.drop) {
        return Err(Error::InvalidArgument(format!("drop fraction {} outside [0, 1)", opts.drop)));
    }
    let h_max = model.spec().horizons;
    let exec = irf_opts.fit.exec;
    let inner = FitOptions {
        exec: Exec::Sequential,
        ..irf_opts.fit
    };
    let n_panel = model.panel().n_counties();

    // Sample from counties that enter the full-sample estimation.
    let base = model.design(0, exec).map_err(|e| e.at_horizon(0))?;
    let mut active: Vec<usize> = base.county.iter().map(|&c| c as usize).collect();
    active.sort_unstable();
    active.dedup();
    drop(base);
    let n = active.len();
    let n_drop = (opts.drop * n as f64).round() as usize;
    if n_drop >= n {
        return Err(Error::InvalidArgument("jackknife would drop every county".into()));
    }

    let mut attempt = vec![0usize; opts.draws];
    let mut paths = vec![vec![0.0; h_max + 1]; opts.draws];
    let mut pending: Vec<usize> = (0..opts.draws).collect();
    let mut failed = 0usize;
    let limit = opts.draws / 10;
    while !pending.is_empty() {
        let dropped: Vec<Vec<usize>> = pending
            .iter()
            .map(|&k| {
                draw_dropped(opts.seed, k, attempt[k], n, n_drop)
                    .into_iter()
                    .map(|i| active[i])
                    .collect()
            })
            .collect();
        let mut ok = vec![true; pending.len()];
        for h in 0..=h_max {
            let engine = match opts.method {
                JackknifeMethod::Refit => HorizonEngine::Refit,
                m => {
                    let design = model.design(h, exec).map_err(|e| e.at_horizon(h))?;
                    match GramCache::new(&design, n_panel) {
                        Some(c) => HorizonEngine::Gram(c),
                        None if m == JackknifeMethod::Gram => {
                            return Err(Error::InvalidArgument(format!(
                                "horizon {h}: cross-product jackknife needs a balanced two-way design"
                            )))
                        }
                        None => HorizonEngine::Refit,
                    }
                }
            };
            let betas = exec.map(pending.len(), |i| {
                if !ok[i] {
                    return None;
                }
                let r = match &engine {
                    HorizonEngine::Gram(cache) => cache.solve_without(&dropped[i]),
                    HorizonEngine::Refit => {
                        let mut keep = vec![true; n_panel];
                        dropped[i].iter().for_each(|&c| keep[c] = false);
                        model
                            .design_subset(h, Some(&keep), Exec::Sequential)
                            .and_then(|d| fit_coefficients(&d, &inner))
                    }
                };
                r.ok().map(|b| b[0])
            });
            for (i, b) in betas.into_iter().enumerate() {
                match b {
                    Some(b) => paths[pending[i]][h] = rescale(b, irf_opts.impulse_size),
                    None => ok[i] = false,
                }
            }
        }
        let mut next = Vec::new();
        for (i, &k) in pending.iter().enumerate() {
            if !ok[i] {
                failed += 1;
                attempt[k] += 1;
                next.push(k);
            }
        }
        if failed > limit {
            return Err(Error::JackknifeFailures {
                failed,
                attempted: opts.draws + failed,
            });
        }
        if failed > 0 && !next.is_empty() {
            log::warn!("jackknife: resampling {} failed draws", next.len());
        }
        pending = next;
    }

    let factor = match opts.scaling {
        JackknifeScaling::DeleteD if n_drop > 0 => (n - n_drop) as f64 / n_drop as f64,
        _ => 1.0,
    };
    let covariance = sample_covariance(&paths) * factor;
    let range = summed_range(h_max, opts.include_h0);
    let mut var_phi = 0.0;
    for i in range.clone() {
        for j in range.clone() {
            var_phi += covariance[(i, j)];
        }
    }
    Ok(JackknifeResult {
        paths,
        covariance,
        sd_phi: var_phi.max(0.0).sqrt(),
        n_counties: n,
        n_drop,
        failed,
        factor,
    })
}

/// Sample covariance (denominator `K − 1`) of equal-length rows.
pub fn sample_covariance(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let k = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    let mean: Vec<f64> = (0..p).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / k as f64).collect();
    let mut c = DMatrix::zeros(p, p);
    for r in rows {
        for i in 0..p {
            let di = r[i] - mean[i];
            for j in i..p {
                c[(i, j)] += di * (r[j] - mean[j]);
            }
        }
    }
    c /= (k.max(2) - 1) as f64;
    for i in 0..p {
        for j in 0..i {
            c[(i, j)] = c[(j, i)];
        }
    }
    symmetrize(&mut c);
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn irf(scaled: &[f64]) -> ImpulseResponse {
        let beta: Vec<f64> = scaled.iter().map(|s| s / 100.0).collect();
        let mut r = ImpulseResponse::from_raw("d", beta, vec![0.0; scaled.len()], 1.0, 0.95);
        r.scaled_beta = scaled.to_vec();
        r
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale(0.0, 13.1), 0.0);
        assert!((rescale(-4.58e-6, 13.1) - (-0.0060)).abs() < 5e-5);
        assert_eq!(rescale(3.0e-6, 26.2), 2.0 * rescale(3.0e-6, 13.1));
    }

    #[test]
    fn cumulative_examples() {
        assert_eq!(cumulative_effect(&irf(&[0.0; 5]), 4, false).unwrap().phi, 0.0);
        let c = irf(&[9.0, 0.25, 0.25, 0.25]);
        assert_eq!(cumulative_effect(&c, 3, false).unwrap().phi, 0.75);
        assert_eq!(cumulative_effect(&c, 3, true).unwrap().phi, 9.75);
        let hand = irf(&[5.0, 0.1, -0.2, 0.3]);
        assert!((cumulative_effect(&hand, 3, false).unwrap().phi - 0.2).abs() < 1e-15);
        assert!(cumulative_effect(&hand, 4, false).is_err());
    }

    #[test]
    fn band_examples() {
        let mut r = ImpulseResponse::from_raw("d", vec![0.01], vec![0.005], 1.0, 0.95);
        let (lo, hi) = r.band()[0];
        assert!((lo - 0.020).abs() < 1e-4 && (hi - 1.980).abs() < 1e-4);
        assert!((critical_value(0.95) - 1.959964).abs() < 1e-6);
        r.scaled_se = vec![0.0];
        assert_eq!(r.band()[0], (1.0, 1.0));
        r.scaled_se = vec![0.5];
        let w = |l: f64| {
            let (a, b) = confidence_band(&r, l)[0];
            b - a
        };
        assert!(w(0.5) < w(0.9) && w(0.9) < w(0.99));
    }

    #[test]
    fn identical_rows_have_zero_covariance() {
        let c = sample_covariance(&[vec![1.0, 2.0], vec![1.0, 2.0]]);
        assert_eq!(c, DMatrix::zeros(2, 2));
    }

    #[test]
    fn dropped_sets_are_deterministic_and_distinct() {
        let a = draw_dropped(7, 3, 0, 100, 5);
        assert_eq!(a, draw_dropped(7, 3, 0, 100, 5));
        assert_ne!(a, draw_dropped(7, 4, 0, 100, 5));
        assert_ne!(a, draw_dropped(7, 3, 1, 100, 5));
        assert_eq!(a.len(), 5);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }
}
