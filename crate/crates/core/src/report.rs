//! Delimited text outputs for responses, cumulative effects and impacts.

use std::io::Write;

use crate::error::{Error, Result};
use crate::hei::RegionalHei;
use crate::irf::{CumulativeEffect, ImpulseResponse};
use crate::panel::{format_float, Frequency};

pub const IRF_HEADER: [&str; 6] = ["horizon", "beta", "se", "scaled_beta", "lo", "hi"];
pub const HEI_HEADER: [&str; 3] = ["region", "period", "impact_pp"];

/// One row per horizon: raw and scaled estimates with the confidence band.
pub fn write_irf<W: Write>(irf: &ImpulseResponse, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(IRF_HEADER)?;
    for (i, (lo, hi)) in irf.band().into_iter().enumerate() {
        w.write_record([
            irf.horizons[i].to_string(),
            format_float(irf.beta[i]),
            format_float(irf.se[i]),
            format_float(irf.scaled_beta[i]),
            format_float(lo),
            format_float(hi),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<irf output>", e))?;
    Ok(())
}

/// Parse the output of [`write_irf`] back into a response.
pub fn read_irf<R: std::io::Read>(source: R, impulse_size: f64, ci_level: f64) -> Result<ImpulseResponse> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let header = r.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (hc, bc, sc) = (col("horizon")?, col("beta")?, col("se")?);
    let mut beta = Vec::new();
    let mut se = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let num = |j: usize, name: &str| -> Result<f64> {
            rec[j].parse().map_err(|_| Error::NonNumeric {
                row,
                column: name.to_string(),
                value: rec[j].to_string(),
            })
        };
        let h: usize = rec[hc].parse().map_err(|_| Error::NonNumeric {
            row,
            column: "horizon".into(),
            value: rec[hc].to_string(),
        })?;
        if h != beta.len() {
            return Err(Error::InvalidData(format!("row {row}: horizons must run 0, 1, 2, ...")));
        }
        beta.push(num(bc, "beta")?);
        se.push(num(sc, "se")?);
    }
    if beta.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(ImpulseResponse::from_raw("shock", beta, se, impulse_size, ci_level))
}

/// `key = value` lines.
pub fn write_cumulative<W: Write>(c: &CumulativeEffect, mut sink: W) -> Result<()> {
    let io = |e| Error::io("<cumulative output>", e);
    let mut line = |k: &str, v: String| writeln!(sink, "{k} = {v}").map_err(io);
    line("phi", format_float(c.phi))?;
    line("sd", c.sd.map(format_float).unwrap_or_default())?;
    line("horizon", c.horizon.to_string())?;
    line("include_h0", c.include_h0.to_string())?;
    line("draws", c.draws.map(|d| d.to_string()).unwrap_or_default())?;
    line("drop", c.drop.map(format_float).unwrap_or_default())?;
    line("seed", c.seed.map(|d| d.to_string()).unwrap_or_default())?;
    Ok(())
}

/// Region-major rows of regional impacts.
pub fn write_hei<W: Write>(hei: &RegionalHei, freq: Frequency, first_period: i64, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(HEI_HEADER)?;
    for (r, name) in hei.regions.iter().enumerate() {
        for (t, v) in hei.values[r].iter().enumerate() {
            w.write_record([
                name.clone(),
                freq.format_period(first_period + t as i64),
                format_float(*v),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<hei output>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn irf_round_trip() {
        let irf = ImpulseResponse::from_raw("d", vec![1e-6, -2.5e-7, 0.0], vec![1e-7, 2e-7, 3e-7], 13.1, 0.95);
        let mut buf = Vec::new();
        write_irf(&irf, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("horizon,beta,se,scaled_beta,lo,hi\n"));
        assert_eq!(text.lines().count(), 4);
        let back = read_irf(buf.as_slice(), 13.1, 0.95).unwrap();
        assert_eq!(back.beta, irf.beta);
        assert_eq!(back.se, irf.se);
    }

    #[test]
    fn cumulative_block() {
        let c = CumulativeEffect {
            phi: -0.25,
            sd: Some(0.07),
            horizon: 36,
            include_h0: false,
            draws: Some(1000),
            drop: Some(0.05),
            seed: Some(3),
        };
        let mut buf = Vec::new();
        write_cumulative(&c, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("phi = -2.5000000000000000e-1\n"));
        assert!(text.contains("horizon = 36\n"));
    }

    #[test]
    fn hei_rows() {
        let hei = RegionalHei {
            regions: vec!["South".into(), "West".into()],
            values: vec![vec![0.0, -1.0], vec![0.5, 0.25]],
            weights: vec![1.0, 1.0],
        };
        let mut buf = Vec::new();
        write_hei(&hei, Frequency::Monthly, 360, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "region,period,impact_pp");
        assert_eq!(lines[2], "South,2000-02,-1.0000000000000000e0");
        assert_eq!(lines.len(), 5);
    }
}
