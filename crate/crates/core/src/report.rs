//! CSV rows and verdicts shared by every probe.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::probes::Fit;

/// One measurement. Serialized with the columns
/// `run_id, probe, parameterization, activation, m, L, layer, t, metric, value`;
/// `layer` and `t` are left empty when they do not apply.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub run_id: String,
    pub probe: String,
    pub parameterization: String,
    pub activation: String,
    pub m: usize,
    #[serde(rename = "L")]
    pub depth: usize,
    pub layer: Option<usize>,
    pub t: Option<u64>,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Verdict { name: name.into(), passed, detail: detail.into() }
    }
}

/// Per-width measurements of one quantity, with the power-law fit when at
/// least three widths are present.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub probe: String,
    pub widths: Vec<usize>,
    pub values: Vec<f64>,
    pub fit: Option<Fit>,
    pub verdict: Option<Verdict>,
}

impl ProbeReport {
    pub fn new(probe: impl Into<String>, widths: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let fit = if widths.len() >= 3 {
            let w: Vec<f64> = widths.iter().map(|&m| m as f64).collect();
            Some(crate::probes::fit_scaling_exponent(&w, &values)?)
        } else {
            None
        };
        Ok(ProbeReport { probe: probe.into(), widths, values, fit, verdict: None })
    }

    pub fn terminal_ratio(&self) -> f64 {
        self.values[self.values.len() - 1] / self.values[0]
    }
}

pub fn write_rows<W: Write>(w: W, rows: &[Row]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn rows_to_string(rows: &[Row]) -> Result<String> {
    let mut buf = Vec::new();
    write_rows(&mut buf, rows)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}
