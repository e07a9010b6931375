//! TOML parameter files.
//!
//! ```toml
//! [ladder]
//! trap_spacing = 9.4e11         # rad/s between transverse levels
//! cutoff_wavelength = 580.0     # nm, ground mode
//! n_levels = 50
//! loss_ratio_h_over_v = 1.0     # κ_H / κ_V
//! energy_splitting = 0.0        # J, H ground mode above V ground mode
//!
//! [reservoir]
//! n_bins = 64                   # orientation bins over [0, π)
//! total_per_bin = 1.0e5         # molecules per bin
//! d_rot = 2.5e11                # 1/s rotational diffusion
//! temperature = 300.0           # K
//!
//! [rates]
//! b_absorb_0 = 781.25           # 1/s per photon per ground-state molecule
//! ground_detuning = -1.177e14   # rad/s, ground mode minus zero-phonon line
//! kappa = 3.75e10               # 1/s, V-mode loss
//! gamma_down = 2.5e8            # 1/s, non-cavity decay
//!
//! [pump]
//! conversion = 1.6e15           # excitations per J
//! wavelength = 532.0            # nm
//! ```
//!
//! Level `n` sits at `ground_detuning + n · trap_spacing` from the zero-phonon
//! line. The optional `[integration]`, `[threshold]` and `[detection]` tables
//! override solver and detector settings. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{IntegrationControl, ThresholdSearch, THRESHOLD_FRACTION};
use crate::error::{Error, Result};
use crate::gas::{
    build_mode_ladder, Anisotropy, GasSystem, ModeLadder, MolecularReservoir, Pump, RateParameters,
};
use crate::polarimetry::DetectionChain;
use crate::stokes::{StokesVector, PUMP_WAVELENGTH_NM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderSection {
    pub trap_spacing: f64,
    pub cutoff_wavelength: f64,
    pub n_levels: usize,
    #[serde(default = "one")]
    pub loss_ratio_h_over_v: f64,
    #[serde(default)]
    pub energy_splitting: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReservoirSection {
    pub n_bins: usize,
    pub total_per_bin: f64,
    pub d_rot: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    pub b_absorb_0: f64,
    pub ground_detuning: f64,
    pub kappa: f64,
    pub gamma_down: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpSection {
    pub conversion: f64,
    #[serde(default = "pump_wavelength")]
    pub wavelength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationSection {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// s
    pub max_time: f64,
    pub stall_criterion: f64,
}

impl Default for IntegrationSection {
    fn default() -> Self {
        let c = IntegrationControl::default();
        Self {
            rel_tol: c.rel_tol,
            abs_tol: c.abs_tol,
            max_time: c.max_time,
            stall_criterion: c.stall_criterion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSection {
    #[serde(default = "threshold_fraction")]
    pub fraction: f64,
    /// W
    pub search_low: f64,
    /// W
    pub search_high: f64,
    #[serde(default = "rel_width")]
    pub rel_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSection {
    /// nm
    #[serde(default = "pump_wavelength")]
    pub qwp_design_wavelength: f64,
    #[serde(default = "unit_gains")]
    pub port_gains: [f64; 2],
}

impl Default for DetectionSection {
    fn default() -> Self {
        Self {
            qwp_design_wavelength: PUMP_WAVELENGTH_NM,
            port_gains: unit_gains(),
        }
    }
}

fn one() -> f64 {
    1.0
}
fn pump_wavelength() -> f64 {
    PUMP_WAVELENGTH_NM
}
fn threshold_fraction() -> f64 {
    THRESHOLD_FRACTION
}
fn rel_width() -> f64 {
    1e-6
}
fn unit_gains() -> [f64; 2] {
    [1.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterFile {
    pub ladder: LadderSection,
    pub reservoir: ReservoirSection,
    pub rates: RatesSection,
    pub pump: PumpSection,
    #[serde(default)]
    pub integration: IntegrationSection,
    pub threshold: ThresholdSection,
    #[serde(default)]
    pub detection: DetectionSection,
}

/// Parameter set shipped with the crate.
pub const DEFAULT_PARAMS: &str = include_str!("../params/default.toml");

impl ParameterFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.system()?;
        file.integration_control().validate()?;
        file.detection_chain(&file.system()?.ladder)?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn shipped() -> Self {
        Self::parse(DEFAULT_PARAMS).expect("shipped parameter file is valid")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("parameter file serializes")
    }

    pub fn anisotropy(&self) -> Anisotropy {
        Anisotropy {
            loss_ratio_h_over_v: self.ladder.loss_ratio_h_over_v,
            energy_splitting: self.ladder.energy_splitting,
        }
    }

    /// Gas system with the pump switched off.
    pub fn system(&self) -> Result<GasSystem> {
        let l = &self.ladder;
        let ladder = build_mode_ladder(l.trap_spacing, l.cutoff_wavelength, l.n_levels, self.anisotropy())?;
        let r = &self.reservoir;
        let reservoir = MolecularReservoir::unexcited(r.n_bins, r.total_per_bin, r.d_rot, r.temperature)?;
        if !self.rates.ground_detuning.is_finite() {
            return Err(Error::param("ground_detuning", "must be finite"));
        }
        if !(self.pump.wavelength > 0.0) {
            return Err(Error::param("pump.wavelength", "must be positive"));
        }
        let params = RateParameters {
            b_absorb_0: self.rates.b_absorb_0,
            detuning: (0..l.n_levels)
                .map(|n| self.rates.ground_detuning + n as f64 * l.trap_spacing)
                .collect(),
            kappa: self.rates.kappa,
            gamma_down: self.rates.gamma_down,
            pump: Pump {
                power: 0.0,
                stokes: StokesVector::vertical(),
                conversion: self.pump.conversion,
            },
        };
        params.validate(&ladder)?;
        Ok(GasSystem {
            ladder,
            reservoir,
            params,
        })
    }

    pub fn integration_control(&self) -> IntegrationControl {
        let i = &self.integration;
        IntegrationControl {
            rel_tol: i.rel_tol,
            abs_tol: i.abs_tol,
            max_time: i.max_time,
            stall_criterion: i.stall_criterion,
            ..IntegrationControl::default()
        }
    }

    pub fn threshold_search(&self) -> ThresholdSearch {
        let t = &self.threshold;
        ThresholdSearch {
            fraction: t.fraction,
            low: t.search_low,
            high: t.search_high,
            rel_width: t.rel_width,
        }
    }

    pub fn detection_chain(&self, ladder: &ModeLadder) -> Result<DetectionChain> {
        DetectionChain::for_ladder(ladder, self.detection.qwp_design_wavelength, self.detection.port_gains)
    }

    pub fn with_anisotropy(&self, anisotropy: Anisotropy) -> Self {
        let mut p = self.clone();
        p.ladder.loss_ratio_h_over_v = anisotropy.loss_ratio_h_over_v;
        p.ladder.energy_splitting = anisotropy.energy_splitting;
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_defaults_parse() {
        let p = ParameterFile::shipped();
        let s = p.system().unwrap();
        assert_eq!(s.ladder.n_levels(), p.ladder.n_levels);
        assert_eq!(s.reservoir.n_bins, p.reservoir.n_bins);
        assert!(s.ladder.anisotropy.is_symmetric());
    }

    #[test]
    fn round_trip() {
        let p = ParameterFile::shipped();
        assert_eq!(ParameterFile::parse(&p.to_toml()).unwrap(), p);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = DEFAULT_PARAMS.replace("[rates]", "[rates]\nbogus = 1.0");
        assert!(matches!(ParameterFile::parse(&text), Err(Error::Config(_))));
        let text = format!("{DEFAULT_PARAMS}\n[extra]\na = 1\n");
        assert!(ParameterFile::parse(&text).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let mut p = ParameterFile::shipped();
        p.ladder.n_levels = 1;
        assert!(ParameterFile::parse(&p.to_toml()).is_err());
        let mut p = ParameterFile::shipped();
        p.rates.kappa = -1.0;
        assert!(ParameterFile::parse(&p.to_toml()).is_err());
    }
}
