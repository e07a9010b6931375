#![allow(dead_code)]

use pbec::dynamics::{IntegrationControl, ThresholdSearch};
use pbec::gas::GasSystem;
use pbec::params::ParameterFile;

/// Shipped parameters on a coarser grid, with per-bin rates rescaled so that
/// the orientation-summed rates stay those of the shipped set.
pub fn coarse(levels: usize, bins: usize) -> ParameterFile {
    let mut p = ParameterFile::shipped();
    let scale = p.reservoir.n_bins as f64 / bins as f64;
    p.ladder.n_levels = levels;
    p.reservoir.n_bins = bins;
    p.rates.b_absorb_0 *= scale;
    p.pump.conversion *= scale;
    p
}

pub fn parts(p: &ParameterFile) -> (GasSystem, IntegrationControl, ThresholdSearch) {
    (p.system().unwrap(), p.integration_control(), p.threshold_search())
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
