use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use fire_lp::design::{HorizonDesign, ModelSpec, PreparedModel, SampleFilter};
use fire_lp::hei::{panel_hei, project_hei, regional_hei};
use fire_lp::irf::{
    block_jackknife, cumulative_effect, fit_horizons, responses_from_fits, ImpulseResponse,
};
use fire_lp::panel::{format_float, load_attributes, load_panel, write_attributes, write_panel, PanelDataset};
use fire_lp::report::{read_irf, write_cumulative, write_hei, write_irf};
use fire_lp::spatial::{load_adjacency, AdjacencyMatrix};
use fire_lp::synth::{generate, generate_migration, DgpConfig, SynthTruth};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::OutputDir;

/// Largest tolerated |estimate − truth| / se in a recovery report.
pub const RECOVERY_Z: f64 = 4.0;

#[derive(Debug, Clone, Default)]
pub struct IrfFlags {
    pub state: bool,
    pub spatial: bool,
    pub clean_controls: bool,
    pub split: Option<String>,
    pub region: Option<String>,
    pub debug_designs: bool,
    pub truth: Option<PathBuf>,
}

pub struct Inputs {
    pub panel: PanelDataset,
    pub adjacency: Option<AdjacencyMatrix>,
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::io(path, e))
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs, CliError> {
    let input = cfg.input()?;
    let mut panel = load_panel(open(&input.panel)?, &input.schema).map_err(CliError::at(&input.panel))?;
    if let Some(path) = &input.attributes {
        let attrs = load_attributes(open(path)?, &input.schema.county).map_err(CliError::at(path))?;
        panel.attach(&attrs).map_err(CliError::at(path))?;
    }
    let adjacency = match &input.adjacency {
        Some(path) => Some(load_adjacency(open(path)?, panel.counties()).map_err(CliError::at(path))?),
        None => None,
    };
    log::info!(
        "loaded {} counties × {} periods from {}",
        panel.n_counties(),
        panel.n_periods(),
        input.panel.display()
    );
    Ok(Inputs { panel, adjacency })
}

struct Variant {
    stem: String,
    spec: ModelSpec,
    /// Truth column for each response, in response order.
    truth_columns: Vec<&'static str>,
    /// File suffix for each response.
    suffixes: Vec<&'static str>,
}

fn variants(cfg: &RunConfig, flags: &IrfFlags) -> Result<Vec<Variant>, CliError> {
    let mut spec = cfg.model()?.clone();
    let mut stem = String::from("irf");
    if flags.spatial {
        spec.spatial = Some(cfg.spatial.clone().unwrap_or_default());
        stem.push_str("_spatial");
    }
    if flags.clean_controls {
        spec.sample.push(SampleFilter::CleanControl {
            window: cfg.clean_controls.window,
            treated_above: cfg.clean_controls.treated_above,
        });
        stem.push_str("_clean");
    }
    if let Some(tag) = &flags.region {
        spec.sample.push(SampleFilter::Region(tag.clone()));
        stem.push_str(&format!("_region_{tag}"));
    }
    let (truth_columns, suffixes) = if flags.state {
        if spec.state.is_none() {
            return Err(CliError::Usage("--state needs a [model.state] rule in the config".into()));
        }
        stem.push_str("_state");
        (vec!["target_high", "target"], vec!["_high", "_low"])
    } else {
        spec.state = None;
        (vec!["target"], vec![""])
    };
    Ok(match &flags.split {
        None => vec![Variant {
            stem,
            spec,
            truth_columns,
            suffixes,
        }],
        Some(attr) => {
            let mut above = spec.clone();
            above.sample.push(SampleFilter::AttributeAboveMedian(attr.clone()));
            let mut below = spec;
            below.sample.push(SampleFilter::AttributeBelowMedian(attr.clone()));
            let above_truth = if flags.state { truth_columns.clone() } else { vec!["target_above"] };
            vec![
                Variant {
                    stem: format!("{stem}_{attr}_above"),
                    spec: above,
                    truth_columns: above_truth,
                    suffixes: suffixes.clone(),
                },
                Variant {
                    stem: format!("{stem}_{attr}_below"),
                    spec: below,
                    truth_columns,
                    suffixes,
                },
            ]
        }
    })
}

fn write_design(d: &HorizonDesign, panel: &PanelDataset, w: &mut dyn Write) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["county".to_string(), "period".to_string(), "y".to_string()];
    header.extend(d.names.iter().cloned());
    out.write_record(&header).map_err(|e| CliError::from(fire_lp::Error::from(e)))?;
    for r in 0..d.n_rows() {
        let t = d.period[r] as usize;
        let mut rec = vec![
            panel.counties()[d.county[r] as usize].to_string(),
            panel.frequency().format_period(panel.period(t)),
            format_float(d.y[r]),
        ];
        rec.extend(d.row(r).iter().map(|v| format_float(*v)));
        out.write_record(&rec).map_err(|e| CliError::from(fire_lp::Error::from(e)))?;
    }
    out.flush().map_err(|e| CliError::io(Path::new("<design>"), e))?;
    Ok(())
}

fn irf_writer(irf: &ImpulseResponse) -> impl FnOnce(&mut dyn Write) -> Result<(), CliError> + '_ {
    move |w| write_irf(irf, w).map_err(CliError::from)
}

/// Truth table written by `synth`: `horizon,target[,target_high][,target_above]`.
fn read_truth(path: &Path) -> Result<Vec<(String, Vec<f64>)>, CliError> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let bad = |m: String| CliError::Core {
        path: Some(path.to_path_buf()),
        source: fire_lp::Error::InvalidData(m),
    };
    let header: Vec<String> = r
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut cols: Vec<(String, Vec<f64>)> = header[1..].iter().map(|h| (h.clone(), Vec::new())).collect();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        for (j, col) in cols.iter_mut().enumerate() {
            col.1.push(rec[j + 1].parse().map_err(|_| bad(format!("non-numeric truth value {:?}", &rec[j + 1])))?);
        }
    }
    Ok(cols)
}

struct Recovery {
    file: String,
    max_abs_z: f64,
    rmse: f64,
}

fn recovery(file: String, irf: &ImpulseResponse, truth: &[f64]) -> Result<Recovery, CliError> {
    if truth.len() <= irf.max_horizon() {
        return Err(CliError::Usage(format!(
            "truth covers {} horizons, response has {}",
            truth.len(),
            irf.horizons.len()
        )));
    }
    let mut max_abs_z: f64 = 0.0;
    let mut sq = 0.0;
    for h in 0..irf.horizons.len() {
        let err = irf.scaled_beta[h] - truth[h];
        sq += err * err;
        max_abs_z = max_abs_z.max(err.abs() / irf.scaled_se[h]);
    }
    Ok(Recovery {
        file,
        max_abs_z,
        rmse: (sq / irf.horizons.len() as f64).sqrt(),
    })
}

pub fn irf(cfg: &RunConfig, flags: &IrfFlags, out: &mut OutputDir) -> Result<(), CliError> {
    let inputs = load_inputs(cfg)?;
    let opts = cfg.irf_options();
    let truth = flags.truth.as_deref().map(read_truth).transpose()?;
    let mut report = Vec::new();
    for v in variants(cfg, flags)? {
        let model = PreparedModel::new(&inputs.panel, &v.spec, inputs.adjacency.as_ref())?;
        if flags.debug_designs {
            for h in 0..=v.spec.horizons {
                let d = model.design(h, opts.fit.exec).map_err(CliError::from)?;
                out.write(&format!("designs/{}_h{h}.csv", v.stem), |w| write_design(&d, &inputs.panel, w))?;
            }
        }
        let fits = fit_horizons(&model, &opts)?;
        let responses = responses_from_fits(&fits, &opts);
        for ((irf, suffix), column) in responses.iter().zip(&v.suffixes).zip(&v.truth_columns) {
            let name = format!("{}{suffix}.csv", v.stem);
            out.write(&name, irf_writer(irf))?;
            if let Some(truth) = &truth {
                let path = flags.truth.as_deref().unwrap();
                let t = truth
                    .iter()
                    .find(|(c, _)| c == column)
                    .ok_or_else(|| CliError::Usage(format!("{} has no `{column}` column", path.display())))?;
                report.push(recovery(name, irf, &t.1)?);
            }
        }
    }
    if truth.is_some() {
        let pass = report.iter().all(|r| r.max_abs_z <= RECOVERY_Z);
        out.write("recovery.txt", |w| {
            let io = |e| CliError::io(Path::new("recovery.txt"), e);
            for r in &report {
                let verdict = if r.max_abs_z <= RECOVERY_Z { "PASS" } else { "FAIL" };
                writeln!(w, "{}: max_abs_z = {:.4}, rmse_pp = {:.3e}, {verdict}", r.file, r.max_abs_z, r.rmse).map_err(io)?;
            }
            writeln!(w, "overall = {}", if pass { "PASS" } else { "FAIL" }).map_err(io)
        })?;
    }
    Ok(())
}

fn baseline_response(cfg: &RunConfig, inputs: &Inputs) -> Result<(ImpulseResponse, ModelSpec), CliError> {
    let mut spec = cfg.model()?.clone();
    spec.state = None;
    let model = PreparedModel::new(&inputs.panel, &spec, inputs.adjacency.as_ref())?;
    let opts = cfg.irf_options();
    let fits = fit_horizons(&model, &opts)?;
    Ok((responses_from_fits(&fits, &opts).swap_remove(0), spec))
}

pub fn cumulative(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let inputs = load_inputs(cfg)?;
    let (irf, spec) = baseline_response(cfg, &inputs)?;
    let h = cfg.inference.cumulative_horizon.unwrap_or(spec.horizons);
    let c = cumulative_effect(&irf, h, cfg.inference.jackknife.include_h0)?;
    out.write("irf.csv", irf_writer(&irf))?;
    out.write("cumulative.txt", |w| write_cumulative(&c, w).map_err(CliError::from))?;
    Ok(())
}

pub fn jackknife(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let inputs = load_inputs(cfg)?;
    let (irf, mut spec) = baseline_response(cfg, &inputs)?;
    let h = cfg.inference.cumulative_horizon.unwrap_or(spec.horizons);
    spec.horizons = h;
    let opts = cfg.irf_options();
    let jk_opts = cfg.inference.jackknife;
    let model = PreparedModel::new(&inputs.panel, &spec, inputs.adjacency.as_ref())?;
    let jk = block_jackknife(&model, &opts, &jk_opts)?;
    if jk.failed > 0 {
        log::warn!("jackknife: {} draws failed and were resampled", jk.failed);
    }
    let point = cumulative_effect(&irf, h, jk_opts.include_h0)?;
    let c = jk.cumulative(&point, &jk_opts);
    out.write("irf.csv", irf_writer(&irf))?;
    out.write("cumulative.txt", |w| {
        write_cumulative(&c, &mut *w)?;
        writeln!(w, "failed_draws = {}", jk.failed).map_err(|e| CliError::io(Path::new("cumulative.txt"), e))?;
        writeln!(w, "scaling_factor = {}", format_float(jk.factor))
            .map_err(|e| CliError::io(Path::new("cumulative.txt"), e))
    })?;
    out.write("jackknife_covariance.csv", |w| {
        let mut cw = csv::Writer::from_writer(w);
        let n = jk.covariance.nrows();
        let header: Vec<String> = std::iter::once("horizon".to_string()).chain((0..n).map(|h| format!("h{h}"))).collect();
        cw.write_record(&header).map_err(fire_lp::Error::from)?;
        for i in 0..n {
            let row: Vec<String> = std::iter::once(i.to_string())
                .chain((0..n).map(|j| format_float(jk.covariance[(i, j)])))
                .collect();
            cw.write_record(&row).map_err(fire_lp::Error::from)?;
        }
        cw.flush().map_err(|e| CliError::io(Path::new("jackknife_covariance.csv"), e))
    })?;
    Ok(())
}

pub fn hei(cfg: &RunConfig, irf_path: Option<&Path>, projection: Option<&Path>, out: &mut OutputDir) -> Result<(), CliError> {
    let inputs = load_inputs(cfg)?;
    let opts = cfg.irf_options();
    let irf = match irf_path {
        Some(p) => read_irf(open(p)?, opts.impulse_size, opts.ci_level).map_err(CliError::at(p))?,
        None => baseline_response(cfg, &inputs)?.0,
    };
    let shock = match &cfg.hei.shock {
        Some(s) => s.clone(),
        None => cfg.model()?.shock.name.clone(),
    };
    let panel = &inputs.panel;
    let series = panel_hei(panel, &irf, &shock, cfg.hei.truncation, opts.fit.exec)?;
    let regional = regional_hei(&series, panel.attribute(&cfg.hei.population)?, panel.tag(&cfg.hei.region)?)?;
    out.write("hei.csv", |w| {
        write_hei(&regional, panel.frequency(), panel.first_period(), w).map_err(CliError::from)
    })?;
    if let Some(path) = projection {
        let mut r = csv::Reader::from_reader(open(path)?);
        let mut burns = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| CliError::at(path)(e.into()))?;
            let v = rec.get(rec.len().saturating_sub(1)).unwrap_or("");
            burns.push(v.trim().parse::<f64>().map_err(|_| {
                CliError::at(path)(fire_lp::Error::InvalidData(format!("non-numeric projected burn {v:?}")))
            })?);
        }
        let impact = project_hei(&irf, &burns, cfg.hei.truncation).map_err(CliError::at(path))?;
        out.write("projection.csv", |w| {
            let io = |e| CliError::io(Path::new("projection.csv"), e);
            writeln!(w, "step,impact_pp").map_err(io)?;
            for (t, v) in impact.iter().enumerate() {
                writeln!(w, "{t},{}", format_float(*v)).map_err(io)?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

fn write_truth(truth: &SynthTruth, w: &mut dyn Write) -> Result<(), CliError> {
    let io = |e| CliError::io(Path::new("truth.csv"), e);
    let mut cols: Vec<(&str, &Vec<f64>)> = vec![("target", &truth.target)];
    if let Some(t) = &truth.target_high {
        cols.push(("target_high", t));
    }
    if let Some(t) = &truth.target_above {
        cols.push(("target_above", t));
    }
    let names: Vec<&str> = cols.iter().map(|c| c.0).collect();
    writeln!(w, "horizon,{}", names.join(",")).map_err(io)?;
    for h in 0..truth.target.len() {
        let vals: Vec<String> = cols.iter().map(|c| format_float(c.1[h])).collect();
        writeln!(w, "{h},{}", vals.join(",")).map_err(io)?;
    }
    Ok(())
}

pub fn synth(cfg: &RunConfig, migration: bool, out: &mut OutputDir) -> Result<(), CliError> {
    let dgp: DgpConfig = cfg.synth.clone().unwrap_or_default();
    let (panel, truth) = generate(&dgp, cfg.run.exec)?;
    out.write("panel.csv", |w| write_panel(&panel, w).map_err(CliError::from))?;
    out.write("attributes.csv", |w| write_attributes(&panel, w).map_err(CliError::from))?;
    out.write("adjacency.txt", |w| {
        let io = |e| CliError::io(Path::new("adjacency.txt"), e);
        writeln!(w, "# rook contiguity of the synthetic grid").map_err(io)?;
        let ids = truth.adjacency.counties();
        for i in 0..truth.adjacency.n() {
            for &j in truth.adjacency.neighbors(i) {
                if (j as usize) > i {
                    writeln!(w, "{},{}", ids[i], ids[j as usize]).map_err(io)?;
                }
            }
        }
        Ok(())
    })?;
    out.write("truth.csv", |w| write_truth(&truth, w))?;
    if migration {
        let m = generate_migration(&panel, 0.05, 0.1, dgp.seed)?;
        out.write("migration.csv", |w| write_panel(&m, w).map_err(CliError::from))?;
    }
    Ok(())
}
