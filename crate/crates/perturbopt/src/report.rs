//! CSV and JSON encodings of the analysis results.

use perturbopt_core::analysis::{
    mrwp_bound, rwp_bound, smoothness_report, LandscapeGrid, SmoothnessReport, SpectrumResult,
    SweepResult, TheoryConstants,
};
use serde::{Deserialize, Serialize};

use crate::error::Result;

fn csv_bytes<F>(header: &[&str], fill: F) -> Vec<u8>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    fill(&mut w).expect("in-memory write");
    w.into_inner().expect("in-memory flush")
}

/// Header `a,b,loss`, `a` varying slowest.
pub fn landscape_csv(g: &LandscapeGrid) -> Vec<u8> {
    csv_bytes(&["a", "b", "loss"], |w| {
        for (i, a) in g.axis_a.iter().enumerate() {
            for (j, b) in g.axis_b.iter().enumerate() {
                w.serialize((a, b, g.at(i, j)))?;
            }
        }
        Ok(())
    })
}

/// Header `ritz_value,weight`, ascending.
pub fn spectrum_csv(s: &SpectrumResult) -> Vec<u8> {
    csv_bytes(&["ritz_value", "weight"], |w| {
        for pair in s.ritz_values.iter().zip(&s.ritz_weights) {
            w.serialize(pair)?;
        }
        Ok(())
    })
}

/// Header `radius,awp_loss,rwp_loss,rwp_stderr,n_samples`; `rwp_loss` is the
/// mean over draws.
pub fn radius_csv(s: &SweepResult) -> Vec<u8> {
    csv_bytes(&["radius", "awp_loss", "rwp_loss", "rwp_stderr", "n_samples"], |w| {
        for i in 0..s.radii.len() {
            w.serialize((s.radii[i], s.awp_loss[i], s.rwp_loss[i], s.rwp_stderr[i], s.n_samples))?;
        }
        Ok(())
    })
}

/// Input of the `bounds` command: the constants plus the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsInput {
    #[serde(flatten)]
    pub constants: TheoryConstants,
    pub gamma0: f64,
    #[serde(rename = "T")]
    pub t: usize,
    pub sigma: f64,
    #[serde(default)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    #[serde(flatten)]
    pub input: BoundsInput,
    pub rwp_bound: f64,
    pub mrwp_bound: Option<f64>,
    /// Present when λ is given and σ > 0.
    pub smoothness: Option<SmoothnessReport>,
}

pub fn bounds_report(input: &BoundsInput) -> Result<BoundsReport> {
    let c = &input.constants;
    let rwp = rwp_bound(c, input.gamma0, input.t, input.sigma)?;
    let (mrwp, smooth) = match input.lambda {
        Some(l) => {
            let m = mrwp_bound(c, input.gamma0, input.t, input.sigma, l)?;
            let s = if input.sigma > 0.0 { Some(smoothness_report(c, input.sigma, l)?) } else { None };
            (Some(m), s)
        }
        None => (None, None),
    };
    Ok(BoundsReport { input: *input, rwp_bound: rwp, mrwp_bound: mrwp, smoothness: smooth })
}
