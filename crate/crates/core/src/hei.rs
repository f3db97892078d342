//! Historical and projected employment impacts: causal convolution of a
//! response kernel with burn sequences, and population-weighted regional
//! aggregation.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::irf::ImpulseResponse;
use crate::panel::PanelDataset;

/// Default truncation of the response kernel, in periods.
pub const DEFAULT_TRUNCATION: usize = 36;

/// Per-unit kernel `k_j` (pp per shock unit) for `j = 0..=truncation`.
pub fn hei_kernel(irf: &ImpulseResponse, truncation: usize) -> Result<Vec<f64>> {
    if truncation > irf.max_horizon() {
        return Err(Error::InvalidArgument(format!(
            "truncation {truncation} exceeds the response horizon {}",
            irf.max_horizon()
        )));
    }
    Ok(irf.beta[..=truncation].iter().map(|b| b * 100.0).collect())
}

/// `out[t] = Σ_{j=0..L} kernel[j] · x[t−j]`, history before the start taken
/// as zero.
pub fn convolve(kernel: &[f64], x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|t| {
            kernel
                .iter()
                .enumerate()
                .take(t + 1)
                .map(|(j, k)| k * x[t - j])
                .sum()
        })
        .collect()
}

fn check_burns(burns: &[f64]) -> Result<()> {
    match burns.iter().position(|b| !(*b >= 0.0)) {
        Some(i) => Err(Error::InvalidData(format!(
            "burn sequence entry {i} is {} (must be non-negative)",
            burns[i]
        ))),
        None => Ok(()),
    }
}

/// Impact path of one county's burn history.
pub fn county_hei(irf: &ImpulseResponse, burns: &[f64], truncation: usize) -> Result<Vec<f64>> {
    check_burns(burns)?;
    Ok(convolve(&hei_kernel(irf, truncation)?, burns))
}

/// Impact path of a hypothetical burn sequence.
pub fn project_hei(irf: &ImpulseResponse, projected: &[f64], truncation: usize) -> Result<Vec<f64>> {
    county_hei(irf, projected, truncation)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeiSeries {
    /// County-major impacts (pp); missing where any burn in the window is.
    pub values: Vec<f64>,
    pub n_counties: usize,
    pub n_periods: usize,
    pub truncation: usize,
}

impl HeiSeries {
    pub fn county(&self, c: usize) -> &[f64] {
        &self.values[c * self.n_periods..(c + 1) * self.n_periods]
    }
}

/// Impacts for every county of a panel from its shock series.
pub fn panel_hei(
    panel: &PanelDataset,
    irf: &ImpulseResponse,
    shock: &str,
    truncation: usize,
    exec: Exec,
) -> Result<HeiSeries> {
    let kernel = hei_kernel(irf, truncation)?;
    let d = panel.series(shock)?;
    if let Some(i) = d.iter().position(|v| *v < 0.0) {
        return Err(Error::InvalidData(format!("negative burn at cell {i} of `{shock}`")));
    }
    let t = panel.n_periods();
    let rows = exec.map(panel.n_counties(), |c| convolve(&kernel, &d[c * t..(c + 1) * t]));
    Ok(HeiSeries {
        values: rows.concat(),
        n_counties: panel.n_counties(),
        n_periods: t,
        truncation,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionalHei {
    /// Region names in sorted order.
    pub regions: Vec<String>,
    /// `values[r][t]`.
    pub values: Vec<Vec<f64>>,
    /// Per county: population share within its region.
    pub weights: Vec<f64>,
}

/// Population-weighted mean of county impacts within each region.
pub fn regional_hei(hei: &HeiSeries, populations: &[f64], regions: &[Option<String>]) -> Result<RegionalHei> {
    let n = hei.n_counties;
    if populations.len() != n || regions.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} counties, {} populations, {} region tags",
            populations.len(),
            regions.len()
        )));
    }
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (c, r) in regions.iter().enumerate() {
        let r = r
            .as_deref()
            .ok_or_else(|| Error::InvalidData(format!("county {c} has no region")))?;
        if !(populations[c] >= 0.0) {
            return Err(Error::InvalidData(format!("county {c} has population {}", populations[c])));
        }
        members.entry(r).or_default().push(c);
    }
    let mut weights = vec![0.0; n];
    let mut names = Vec::new();
    let mut values = Vec::new();
    for (region, counties) in members {
        let total: f64 = counties.iter().map(|&c| populations[c]).sum();
        if !(total > 0.0) {
            return Err(Error::InvalidData(format!("region `{region}` has zero total population")));
        }
        counties.iter().for_each(|&c| weights[c] = populations[c] / total);
        let series = (0..hei.n_periods)
            .map(|t| counties.iter().map(|&c| weights[c] * hei.values[c * hei.n_periods + t]).sum())
            .collect();
        names.push(region.to_string());
        values.push(series);
    }
    Ok(RegionalHei {
        regions: names,
        values,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pulse(kernel: &[f64]) -> ImpulseResponse {
        let beta = kernel.iter().map(|k| k / 100.0).collect();
        ImpulseResponse::from_raw("d", beta, vec![0.0; kernel.len()], 13.1, 0.95)
    }

    #[test]
    fn zero_burns_zero_impact() {
        let irf = pulse(&[1.0, -2.0, 0.5]);
        assert!(county_hei(&irf, &[0.0; 10], 2).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_pulse_is_identity() {
        let irf = pulse(&[1.0, 0.0, 0.0, 0.0]);
        let d = [0.0, 3.0, 1.5, 0.0, 7.0];
        assert_eq!(county_hei(&irf, &d, 3).unwrap(), d.to_vec());
    }

    #[test]
    fn toy_convolution() {
        let out = convolve(&[1.0, 2.0, 0.0, 0.0, 0.0], &[0.0, 3.0, 0.0, 1.0, 0.0]);
        assert_eq!(out, vec![0.0, 3.0, 6.0, 1.0, 2.0]);
    }

    #[test]
    fn step_gives_partial_sums() {
        let k = [0.5, -1.0, 0.25, 2.0];
        let out = convolve(&k, &[1.0; 8]);
        let mut s = 0.0;
        for t in 0..8 {
            if t < k.len() {
                s += k[t];
            }
            assert_eq!(out[t], s);
        }
    }

    #[test]
    fn truncation_beyond_horizon_errors() {
        let irf = pulse(&[1.0, 2.0]);
        assert!(county_hei(&irf, &[1.0], 2).is_err());
        assert!(county_hei(&irf, &[-1.0], 1).is_err());
    }

    #[test]
    fn regional_weights() {
        let hei = HeiSeries {
            values: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
            n_counties: 4,
            n_periods: 2,
            truncation: 0,
        };
        let regions = vec![Some("A".into()), Some("A".into()), Some("A".into()), Some("B".into())];
        let r = regional_hei(&hei, &[5.0, 3.0, 2.0, 9.0], &regions).unwrap();
        assert_eq!(r.regions, vec!["A", "B"]);
        assert!((r.values[0][0] - (0.5 * 1.0 + 0.3 * 3.0 + 0.2 * 5.0)).abs() < 1e-15);
        assert_eq!(r.values[1], vec![7.0, 8.0]);
        let total_a: f64 = r.weights[..3].iter().sum();
        assert!((total_a - 1.0).abs() < 1e-12);
        assert!(regional_hei(&hei, &[0.0, 0.0, 0.0, 1.0], &regions).is_err());
    }
}
