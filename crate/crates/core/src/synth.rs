//! Synthetic county-month panels with a planted shock response.
//!
//! Log employment growth follows
//! `Δy_ct = α_c + μ_t + φ Δy_{c,t−1} + Σ_s θ_s D_{c,t−s} / 100 + ε_ct`
//! with burn area `D_ct = η_ct + ρ η_{c,t−1}` and `η` a Bernoulli-lognormal
//! draw. Burns return exactly to zero between fires.
//!
//! The local projection of `y_{t+h} − y_{t−1}` on `D_t` (with lagged controls)
//! does not estimate `θ_h` itself but the cumulated response
//! `b_h = Σ_{s≤h} c_s`, `c_s = φ c_{s−1} + θ_s + ρ θ_{s−1}`, which
//! [`SynthTruth`] carries as `target`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::design::percentile;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::irf::DEFAULT_IMPULSE_KM2;
use crate::panel::{CountyId, Frequency, PanelDataset};
use crate::spatial::AdjacencyMatrix;

pub const REGIONS: [&str; 4] = ["Northeast", "Midwest", "South", "West"];

/// Knots `(h, pp per impulse)` of the default target path.
const DEFAULT_KNOTS: [(f64, f64); 6] = [
    (0.0, -0.002),
    (1.0, -0.006),
    (6.0, -0.005),
    (12.0, -0.003),
    (24.0, -0.015),
    (36.0, 0.0),
];

/// Default response path (pp per impulse) for `h = 0..=h_max`: an initial
/// dip, partial recovery, a deeper trough near two years and a return to
/// zero by three years.
pub fn default_target(h_max: usize) -> Vec<f64> {
    (0..=h_max)
        .map(|h| {
            let x = h as f64;
            let last = DEFAULT_KNOTS[DEFAULT_KNOTS.len() - 1];
            if x >= last.0 {
                return last.1;
            }
            let i = DEFAULT_KNOTS.iter().rposition(|k| k.0 <= x).unwrap();
            let (x0, y0) = DEFAULT_KNOTS[i];
            let (x1, y1) = DEFAULT_KNOTS[i + 1];
            y0 + (y1 - y0) * (x - x0) / (x1 - x0)
        })
        .collect()
}

/// Response kernel of the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// Local-projection target `b_h` in pp per impulse; the structural
    /// kernel is solved for.
    Target(Vec<f64>),
    /// Structural `θ_s` in pp per km².
    Theta(Vec<f64>),
}

impl Kernel {
    /// Structural kernel in pp per km².
    pub fn theta(&self, rho: f64, phi: f64, impulse: f64) -> Vec<f64> {
        match self {
            Kernel::Theta(t) => t.clone(),
            Kernel::Target(b) => theta_from_target(b, rho, phi, impulse),
        }
    }
}

/// Invert the target recursion. The kernel is extended past the target's
/// end until the carry-over tail is negligible, so the target stays flat.
pub fn theta_from_target(target: &[f64], rho: f64, phi: f64, impulse: f64) -> Vec<f64> {
    let b: Vec<f64> = target.iter().map(|v| v / impulse).collect();
    let mut theta = Vec::new();
    let mut c_prev = 0.0;
    let mut b_prev = 0.0;
    let mut s = 0;
    loop {
        let bs = if s < b.len() { b[s] } else { b[b.len() - 1] };
        let c = bs - b_prev;
        let t_prev = theta.last().copied().unwrap_or(0.0);
        let th = c - phi * c_prev - rho * t_prev;
        theta.push(th);
        c_prev = c;
        b_prev = bs;
        s += 1;
        if s >= b.len() && (th.abs() < 1e-18 || s > b.len() + 200) {
            break;
        }
    }
    while theta.len() > 1 && theta.last() == Some(&0.0) {
        theta.pop();
    }
    theta
}

/// Local-projection target (pp per impulse) implied by a structural kernel.
pub fn lp_target(theta: &[f64], rho: f64, phi: f64, impulse: f64, h_max: usize) -> Vec<f64> {
    let th = |s: usize| theta.get(s).copied().unwrap_or(0.0);
    let mut out = Vec::with_capacity(h_max + 1);
    let (mut b, mut c_prev) = (0.0, 0.0);
    for s in 0..=h_max {
        let c = phi * c_prev + th(s) + if s > 0 { rho * th(s - 1) } else { 0.0 };
        b += c;
        c_prev = c;
        out.push(b * impulse);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FireProcess {
    /// Per-period probability of a new fire.
    pub probability: f64,
    /// Location of the log fire size.
    pub log_mean: f64,
    pub log_sd: f64,
    /// Share of a fire's area that carries into the next period.
    pub persistence: f64,
}

impl FireProcess {
    /// Process whose share of burning periods is `frequency` and whose mean
    /// burn given burning is `conditional_mean`.
    pub fn calibrated(frequency: f64, persistence: f64, log_sd: f64, conditional_mean: f64) -> Self {
        let probability = if persistence == 0.0 {
            frequency
        } else {
            1.0 - (1.0 - frequency).sqrt()
        };
        let mut f = FireProcess {
            probability,
            log_mean: 0.0,
            log_sd,
            persistence,
        };
        let size_mean = if persistence == 0.0 {
            conditional_mean
        } else {
            conditional_mean * (2.0 - probability) / (1.0 + persistence)
        };
        f.log_mean = size_mean.ln() - log_sd * log_sd / 2.0;
        f
    }

    fn size_mean(&self) -> f64 {
        (self.log_mean + self.log_sd * self.log_sd / 2.0).exp()
    }
}

impl Default for FireProcess {
    fn default() -> Self {
        FireProcess::calibrated(0.03, 0.3, 1.94, DEFAULT_IMPULSE_KM2)
    }
}

/// State-dependent responses keyed on a synthetic unemployment rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDgp {
    /// Kernel applying to shocks that hit in the high state.
    pub high: Kernel,
    /// County-specific percentile defining the high state.
    #[serde(default = "default_state_pct")]
    pub percentile: f64,
    #[serde(default = "default_unemp_ar")]
    pub ar: f64,
    #[serde(default = "default_unemp_sd")]
    pub sd: f64,
}

fn default_state_pct() -> f64 {
    70.0
}

fn default_unemp_ar() -> f64 {
    0.95
}

fn default_unemp_sd() -> f64 {
    0.3
}

/// A second kernel for counties above the median of an attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDgp {
    pub attribute: String,
    pub above: Kernel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub n_counties: usize,
    pub n_periods: usize,
    pub frequency: Frequency,
    /// First period label (months since 1970-01, or years since 1970).
    pub first_period: i64,
    pub kernel: Kernel,
    pub impulse_size: f64,
    pub county_fe_sd: f64,
    pub period_fe_sd: f64,
    pub noise_sd: f64,
    pub fire: FireProcess,
    /// AR coefficient on employment growth.
    pub outcome_ar: f64,
    pub state: Option<StateDgp>,
    pub split: Option<SplitDgp>,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            n_counties: 500,
            n_periods: 250,
            frequency: Frequency::Monthly,
            first_period: 360,
            kernel: Kernel::Target(default_target(36)),
            impulse_size: DEFAULT_IMPULSE_KM2,
            county_fe_sd: 0.001,
            period_fe_sd: 0.002,
            noise_sd: 0.001,
            fire: FireProcess::default(),
            outcome_ar: 0.0,
            state: None,
            split: None,
            seed: 1,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_counties == 0 || self.n_periods < 2 {
            return bad(format!("need counties and at least two periods, got {} × {}", self.n_counties, self.n_periods));
        }
        for (name, v) in [
            ("county_fe_sd", self.county_fe_sd),
            ("period_fe_sd", self.period_fe_sd),
            ("noise_sd", self.noise_sd),
            ("fire.log_sd", self.fire.log_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be a finite non-negative number"));
            }
        }
        if !(0.0..=1.0).contains(&self.fire.probability) {
            return bad(format!("fire probability {} outside [0, 1]", self.fire.probability));
        }
        if !(0.0..1.0).contains(&self.fire.persistence) {
            return bad(format!("fire persistence {} outside [0, 1)", self.fire.persistence));
        }
        if !(self.outcome_ar.abs() < 1.0) {
            return bad(format!("outcome AR {} must be inside (-1, 1)", self.outcome_ar));
        }
        if !(self.impulse_size > 0.0) {
            return bad("impulse size must be positive".into());
        }
        if let Some(s) = &self.state {
            if self.fire.persistence != 0.0 {
                return bad("state-dependent generation needs fire persistence 0".into());
            }
            if !(s.percentile > 0.0 && s.percentile < 100.0) || !(s.ar.abs() < 1.0) || !(s.sd >= 0.0) {
                return bad("invalid state process".into());
            }
        }
        if let Some(s) = &self.split {
            if s.attribute != "hhi" && s.attribute != "population" {
                return bad(format!("split attribute `{}` is not generated", s.attribute));
            }
        }
        Ok(())
    }

    fn theta(&self, k: &Kernel) -> Vec<f64> {
        k.theta(self.fire.persistence, self.outcome_ar, self.impulse_size)
    }
}

/// Everything planted in a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    /// Structural kernel (pp per km²).
    pub theta: Vec<f64>,
    /// Local-projection estimand for `h = 0..`, pp per impulse.
    pub target: Vec<f64>,
    /// High-state counterparts, when generated.
    pub theta_high: Option<Vec<f64>>,
    pub target_high: Option<Vec<f64>>,
    /// Above-median counterparts, when generated.
    pub theta_above: Option<Vec<f64>>,
    pub target_above: Option<Vec<f64>>,
    pub impulse_size: f64,
    pub county_fe: Vec<f64>,
    pub period_fe: Vec<f64>,
    /// New-fire draws `η` (county-major).
    pub fires: Vec<f64>,
    /// Rook-grid contiguity of the generated counties.
    pub adjacency: AdjacencyMatrix,
}

/// Horizons stored in [`SynthTruth`] targets.
pub const TARGET_HORIZONS: usize = 60;

/// Analytic moments of the configured burn process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantSummary {
    /// `E[D | D > 0]`.
    pub mean_given_positive: f64,
    /// `P(D > 0)`.
    pub fire_frequency: f64,
    pub mean: f64,
}

pub fn plant_summary(config: &DgpConfig) -> PlantSummary {
    let f = &config.fire;
    let p = f.probability;
    if p == 0.0 {
        return PlantSummary {
            mean_given_positive: 0.0,
            fire_frequency: 0.0,
            mean: 0.0,
        };
    }
    let m = f.size_mean();
    let mean = p * m * (1.0 + f.persistence);
    let freq = if f.persistence == 0.0 { p } else { 1.0 - (1.0 - p) * (1.0 - p) };
    PlantSummary {
        mean_given_positive: mean / freq,
        fire_frequency: freq,
        mean,
    }
}

/// Counties on a near-square grid, each bordering up to four others.
pub fn grid_adjacency(counties: Vec<CountyId>) -> AdjacencyMatrix {
    let n = counties.len();
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    let mut edges = Vec::new();
    for i in 0..n {
        if (i + 1) % cols != 0 && i + 1 < n {
            edges.push((i, i + 1));
        }
        if i + cols < n {
            edges.push((i, i + cols));
        }
    }
    AdjacencyMatrix::from_edges(counties, &edges).expect("grid edges are in range")
}

fn county_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct CountyDraw {
    emp: Vec<f64>,
    burn: Vec<f64>,
    eta: Vec<f64>,
    unemp: Option<Vec<f64>>,
    alpha: f64,
    population: f64,
    hhi: f64,
}

/// Draw a panel and its planted truth. Deterministic in `config.seed`, and
/// independent of the execution policy.
pub fn generate(config: &DgpConfig, exec: Exec) -> Result<(PanelDataset, SynthTruth)> {
    config.validate()?;
    let n = config.n_counties;
    let t_len = config.n_periods;
    let theta = config.theta(&config.kernel);
    let theta_high = config.state.as_ref().map(|s| config.theta(&s.high));
    let theta_above = config.split.as_ref().map(|s| config.theta(&s.above));

    let mut prng = county_rng(config.seed, 0);
    let period_fe: Vec<f64> = {
        let d = Normal::new(0.0, config.period_fe_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        (0..t_len).map(|_| d.sample(&mut prng)).collect()
    };
    let width = (n as f64).log10().floor() as usize + 1;
    let ids: Vec<CountyId> = (0..n)
        .map(|i| CountyId::new(format!("{:0width$}", i + 1)).expect("non-empty id"))
        .collect();

    let fire = config.fire;
    let occur = Bernoulli::new(fire.probability).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let size = LogNormal::new(fire.log_mean, fire.log_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let noise = Normal::new(0.0, config.noise_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let alpha_d = Normal::new(0.0, config.county_fe_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let draws = exec.map(n, |c| {
        let mut rng = county_rng(config.seed, c as u64 + 1);
        let alpha = alpha_d.sample(&mut rng);
        let population = (10.0 + 1.2 * rng.sample::<f64, _>(rand_distr::StandardNormal)).exp().round().max(100.0);
        let hhi = rng.random_range(0.05..0.45);
        let eta: Vec<f64> = (0..t_len)
            .map(|_| if occur.sample(&mut rng) { size.sample(&mut rng) } else { 0.0 })
            .collect();
        let burn: Vec<f64> = (0..t_len)
            .map(|t| eta[t] + if t > 0 { fire.persistence * eta[t - 1] } else { 0.0 })
            .collect();
        let unemp = config.state.as_ref().map(|s| {
            let base = 4.0 + rng.random_range(0.0..4.0);
            let e = Normal::new(0.0, s.sd).expect("validated sd");
            let mut u = Vec::with_capacity(t_len);
            let mut dev = 0.0;
            for _ in 0..t_len {
                dev = s.ar * dev + e.sample(&mut rng);
                u.push(base + dev);
            }
            u
        });
        let high: Option<Vec<bool>> = unemp.as_ref().zip(config.state.as_ref()).map(|(u, s)| {
            let mut sorted = u.clone();
            sorted.sort_by(f64::total_cmp);
            let thr = percentile(&sorted, s.percentile);
            u.iter().map(|&v| v > thr).collect()
        });
        let eps: Vec<f64> = (0..t_len).map(|_| noise.sample(&mut rng)).collect();
        let level0 = 9.0 + rng.random_range(0.0..2.0);
        (
            CountyDraw {
                emp: Vec::new(),
                burn,
                eta,
                unemp,
                alpha,
                population,
                hhi,
            },
            high,
            eps,
            level0,
        )
    });

    let split_above: Vec<bool> = match &config.split {
        None => vec![false; n],
        Some(s) => {
            let vals: Vec<f64> = draws
                .iter()
                .map(|(d, ..)| if s.attribute == "hhi" { d.hhi } else { d.population })
                .collect();
            let mut sorted = vals.clone();
            sorted.sort_by(f64::total_cmp);
            let med = percentile(&sorted, 50.0);
            vals.iter().map(|&v| v > med).collect()
        }
    };

    let counties: Vec<CountyDraw> = draws
        .into_iter()
        .enumerate()
        .map(|(c, (mut d, high, eps, level0))| {
            let base_kernel = if split_above[c] {
                theta_above.as_ref().unwrap_or(&theta)
            } else {
                &theta
            };
            let mut y = level0;
            let mut dy_prev = 0.0;
            let mut emp = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let mut effect = 0.0;
                for s in 0..=t {
                    let ds = d.burn[t - s];
                    if ds == 0.0 {
                        continue;
                    }
                    let kernel = match (&high, &theta_high) {
                        (Some(h), Some(th)) if h[t - s] => th,
                        _ => base_kernel,
                    };
                    if let Some(k) = kernel.get(s) {
                        effect += k * ds;
                    }
                }
                let dy = d.alpha + period_fe[t] + config.outcome_ar * dy_prev + effect / 100.0 + eps[t];
                if t > 0 {
                    y += dy;
                }
                dy_prev = if t > 0 { dy } else { 0.0 };
                emp.push(y.exp());
            }
            d.emp = emp;
            d
        })
        .collect();

    let mut panel = PanelDataset::new(ids.clone(), config.frequency, config.first_period, t_len)?;
    let concat = |f: &dyn Fn(&CountyDraw) -> &Vec<f64>| counties.iter().flat_map(|d| f(d).iter().copied()).collect::<Vec<f64>>();
    panel.insert_series("emp", concat(&|d| &d.emp))?;
    panel.insert_series("burn", concat(&|d| &d.burn))?;
    if config.state.is_some() {
        panel.insert_series("unemp", counties.iter().flat_map(|d| d.unemp.clone().unwrap()).collect())?;
    }
    panel.insert_attribute("population", counties.iter().map(|d| d.population).collect())?;
    panel.insert_attribute("hhi", counties.iter().map(|d| d.hhi).collect())?;
    panel.insert_tag(
        "region",
        (0..n).map(|c| Some(REGIONS[c % REGIONS.len()].to_string())).collect(),
    )?;

    let target_of = |th: &Vec<f64>| {
        lp_target(th, config.fire.persistence, config.outcome_ar, config.impulse_size, TARGET_HORIZONS)
    };
    let truth = SynthTruth {
        target: target_of(&theta),
        target_high: theta_high.as_ref().map(target_of),
        target_above: theta_above.as_ref().map(target_of),
        theta,
        theta_high,
        theta_above,
        impulse_size: config.impulse_size,
        county_fe: counties.iter().map(|d| d.alpha).collect(),
        period_fe,
        fires: counties.iter().flat_map(|d| d.eta.iter().copied()).collect(),
        adjacency: grid_adjacency(ids),
    };
    Ok((panel, truth))
}

/// Annual net out-migration rates (percent of population) linked to the
/// year's total burn: `rate = a_c + slope · burn_year / 100 + noise`.
pub fn generate_migration(panel: &PanelDataset, slope: f64, noise_sd: f64, seed: u64) -> Result<PanelDataset> {
    if panel.frequency() != Frequency::Monthly {
        return Err(Error::InvalidArgument("migration panel is built from a monthly panel".into()));
    }
    let burn = panel.series("burn")?;
    let t_len = panel.n_periods();
    let first_year = panel.first_period().div_euclid(12);
    let last_year = (panel.first_period() + t_len as i64 - 1).div_euclid(12);
    let years = (last_year - first_year + 1) as usize;
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rates = Vec::with_capacity(panel.n_counties() * years);
    for c in 0..panel.n_counties() {
        let mut rng = county_rng(seed, (1 << 40) + c as u64);
        let base: f64 = rng.random_range(-0.5..0.5);
        let mut totals = vec![0.0; years];
        for t in 0..t_len {
            let y = ((panel.first_period() + t as i64).div_euclid(12) - first_year) as usize;
            totals[y] += burn[c * t_len + t];
        }
        rates.extend(totals.iter().map(|b| base + slope * b / 100.0 + noise.sample(&mut rng)));
    }
    let mut out = PanelDataset::new(panel.counties().to_vec(), Frequency::Annual, first_year, years)?;
    out.insert_series("netmig", rates)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> DgpConfig {
        DgpConfig {
            n_counties: 20,
            n_periods: 60,
            seed,
            ..DgpConfig::default()
        }
    }

    #[test]
    fn default_target_matches_knots() {
        let b = default_target(40);
        assert_eq!(b[1], -0.006);
        assert_eq!(b[24], -0.015);
        assert_eq!(b[12], -0.003);
        assert_eq!(b[36], 0.0);
        assert_eq!(b[40], 0.0);
        assert!(b[24] < b[23] && b[24] < b[25]);
    }

    #[test]
    fn target_inversion_round_trips() {
        let b = default_target(36);
        for (rho, phi) in [(0.0, 0.0), (0.3, 0.0), (0.3, 0.2), (0.0, -0.4)] {
            let theta = theta_from_target(&b, rho, phi, 13.1);
            let back = lp_target(&theta, rho, phi, 13.1, 50);
            for h in 0..=50 {
                let want = b[h.min(36)];
                assert!((back[h] - want).abs() < 1e-15, "rho {rho} phi {phi} h {h}");
            }
        }
    }

    #[test]
    fn noiseless_no_fire_growth_is_fe_sum() {
        let mut cfg = small(4);
        cfg.noise_sd = 0.0;
        cfg.fire.probability = 0.0;
        let (p, truth) = generate(&cfg, Exec::Sequential).unwrap();
        let g = p.log_growth("emp", 0).unwrap().values;
        for c in 0..cfg.n_counties {
            for t in 1..cfg.n_periods {
                let want = truth.county_fe[c] + truth.period_fe[t];
                assert!((g[p.idx(c, t)] - want).abs() < 1e-12);
            }
        }
        assert!(p.series("burn").unwrap().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn generation_is_deterministic_across_modes() {
        let (a, ta) = generate(&small(9), Exec::Sequential).unwrap();
        let (b, tb) = generate(&small(9), Exec::Parallel).unwrap();
        assert_eq!(a.series("emp").unwrap(), b.series("emp").unwrap());
        assert_eq!(a.series("burn").unwrap(), b.series("burn").unwrap());
        assert_eq!(ta, tb);
        let (c, _) = generate(&small(10), Exec::Sequential).unwrap();
        assert_ne!(a.series("emp").unwrap(), c.series("emp").unwrap());
    }

    #[test]
    fn burns_return_to_zero() {
        let (p, _) = generate(&small(2), Exec::Sequential).unwrap();
        let b = p.series("burn").unwrap();
        let zeros = b.iter().filter(|&&v| v == 0.0).count();
        assert!(zeros > b.len() / 2);
        assert!(b.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn calibration_moments() {
        let f = FireProcess::calibrated(0.03, 0.0, 1.0, 13.1);
        let cfg = DgpConfig {
            fire: f,
            ..DgpConfig::default()
        };
        let s = plant_summary(&cfg);
        assert!((s.mean_given_positive - 13.1).abs() < 1e-12);
        assert!((s.fire_frequency - 0.03).abs() < 1e-15);
        let s = plant_summary(&DgpConfig::default());
        assert!((s.mean_given_positive - 13.1).abs() < 1e-12);
        assert!((s.fire_frequency - 0.03).abs() < 1e-12);
        let mut none = DgpConfig::default();
        none.fire.probability = 0.0;
        assert_eq!(plant_summary(&none).mean_given_positive, 0.0);
    }

    #[test]
    fn invalid_configs() {
        let mut c = small(1);
        c.noise_sd = -1.0;
        assert!(generate(&c, Exec::Sequential).is_err());
        let mut c = small(1);
        c.fire.persistence = 1.0;
        assert!(c.validate().is_err());
        let mut c = small(1);
        c.state = Some(StateDgp {
            high: Kernel::Theta(vec![0.0]),
            percentile: 70.0,
            ar: 0.9,
            sd: 0.3,
        });
        assert!(c.validate().is_err());
    }

    #[test]
    fn grid_is_rook_contiguity() {
        let ids: Vec<CountyId> = (0..9).map(|i| CountyId::new(i.to_string()).unwrap()).collect();
        let w = grid_adjacency(ids);
        assert_eq!(w.n_edges(), 12);
        assert_eq!(w.neighbors(4), &[1, 3, 5, 7]);
        assert_eq!(w.neighbors(0), &[1, 3]);
    }

    #[test]
    fn migration_panel_is_annual() {
        let (p, _) = generate(&small(3), Exec::Sequential).unwrap();
        let m = generate_migration(&p, 0.1, 0.05, 3).unwrap();
        assert_eq!(m.frequency(), Frequency::Annual);
        assert_eq!(m.n_periods(), 5);
        assert_eq!(m.first_period(), 30);
    }
}
