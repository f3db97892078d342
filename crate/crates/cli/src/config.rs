//! TOML run configuration.

use std::path::{Path, PathBuf};

use fire_lp::design::{ModelSpec, SpatialRule};
use fire_lp::hei::DEFAULT_TRUNCATION;
use fire_lp::irf::{IrfOptions, JackknifeOptions};
use fire_lp::panel::Schema;
use fire_lp::synth::DgpConfig;
use fire_lp::Exec;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<InputConfig>,
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(default)]
    pub clean_controls: CleanControlConfig,
    #[serde(default)]
    pub spatial: Option<SpatialRule>,
    #[serde(default)]
    pub hei: HeiConfig,
    pub synth: Option<DgpConfig>,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub panel: PathBuf,
    pub attributes: Option<PathBuf>,
    pub adjacency: Option<PathBuf>,
    #[serde(default)]
    pub schema: Schema,
}

/// Unknown keys here are ignored: serde cannot combine `flatten` with
/// `deny_unknown_fields`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    #[serde(flatten)]
    pub irf: IrfOptions,
    pub jackknife: JackknifeOptions,
    /// Horizon of the cumulative effect; defaults to the model's largest.
    pub cumulative_horizon: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanControlConfig {
    pub window: usize,
    pub treated_above: f64,
}

impl Default for CleanControlConfig {
    fn default() -> Self {
        CleanControlConfig {
            window: 36,
            treated_above: 0.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeiConfig {
    pub truncation: usize,
    /// Shock series to convolve; defaults to the model's shock.
    pub shock: Option<String>,
    pub population: String,
    pub region: String,
}

impl Default for HeiConfig {
    fn default() -> Self {
        HeiConfig {
            truncation: DEFAULT_TRUNCATION,
            shock: None,
            population: "population".into(),
            region: "region".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub output_dir: PathBuf,
    /// Worker threads; the rayon default when absent.
    pub threads: Option<usize>,
    pub exec: Exec,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            output_dir: PathBuf::from("out"),
            threads: None,
            exec: Exec::Parallel,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.message().to_string(),
        })?;
        // Relative paths resolve against the config file's directory.
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(i) = &mut cfg.input {
            fix(&mut i.panel);
            i.attributes.as_mut().map(fix);
            i.adjacency.as_mut().map(fix);
        }
        fix(&mut cfg.run.output_dir);
        Ok(cfg)
    }

    pub fn input(&self) -> Result<&InputConfig, CliError> {
        self.input.as_ref().ok_or_else(|| CliError::missing_section("input"))
    }

    pub fn model(&self) -> Result<&ModelSpec, CliError> {
        self.model.as_ref().ok_or_else(|| CliError::missing_section("model"))
    }

    pub fn irf_options(&self) -> IrfOptions {
        IrfOptions {
            fit: fire_lp::FitOptions {
                exec: self.run.exec,
                ..self.inference.irf.fit
            },
            ..self.inference.irf
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fire_lp::estimator::Bandwidth;
    use fire_lp::panel::Transform;

    #[test]
    fn parses_full_config() {
        let text = r#"
            [input]
            panel = "panel.csv"
            attributes = "attrs.csv"
            [input.schema]
            county = "fips"
            columns = [{ source = "burn_m2", name = "burn", scale = 1e-6 }, { source = "emp" }]

            [model]
            outcome = { name = "emp", transforms = ["log"] }
            shock = "burn"
            horizons = 36
            outcome_lags = 24
            sample = [{ attribute_above_median = "hhi" }, { clean_control = { window = 36 } }]

            [model.state]
            series = "unemp"
            scope = "county"
            percentile = 70

            [inference]
            impulse_size = 13.1
            bandwidth = { fixed = 4 }
            dof_correction = false
            [inference.jackknife]
            draws = 200
            seed = 9

            [run]
            output_dir = "results"
            threads = 2
            exec = "sequential"
        "#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        let m = cfg.model.unwrap();
        assert_eq!(m.outcome.transforms, vec![Transform::Log]);
        assert_eq!(m.horizons, 36);
        assert_eq!(m.sample.len(), 2);
        assert_eq!(m.state.unwrap().percentile, 70.0);
        assert_eq!(cfg.inference.irf.fit.bandwidth, Bandwidth::Fixed(4));
        assert!(!cfg.inference.irf.fit.dof_correction);
        assert_eq!(cfg.inference.jackknife.draws, 200);
        assert_eq!(cfg.inference.jackknife.drop, 0.05);
        assert_eq!(cfg.run.exec, Exec::Sequential);
        assert_eq!(cfg.input.unwrap().schema.columns[0].scale, 1e-6);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(toml::from_str::<RunConfig>("[run]\noutput = 'x'\n").is_err());
    }
}
