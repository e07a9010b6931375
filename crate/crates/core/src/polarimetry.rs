//! Virtual detection chain: cavity emission → optional flip-in QWP → PBS → spectrometer.
//!
//! Port A is the vertical port of the beam splitter, port B the horizontal one.
//! With the QWP inserted at −45° port A reads right-handed and port B
//! left-handed light at the plate's design wavelength.

use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gas::{GasState, ModeLadder};
use crate::stokes::{
    circular_strength, linear_strength, mueller_retarder, pbs_ports, PolarizationStrengthPair,
    StokesVector, WaveplateSpec, PUMP_WAVELENGTH_NM,
};

/// Fast-axis angle of the flip-in QWP that maps right-handed light onto port A.
pub const DETECTION_QWP_AXIS: f64 = -FRAC_PI_4;

/// Half-open wavelength interval `[lower, upper)` in nm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralBin {
    pub lower: f64,
    pub upper: f64,
}

impl SpectralBin {
    pub fn contains(&self, wavelength: f64) -> bool {
        wavelength >= self.lower && wavelength < self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionChain {
    pub qwp: WaveplateSpec,
    pub inserted: bool,
    pub port_gains: [f64; 2],
    pub spectral_bins: Vec<SpectralBin>,
}

impl DetectionChain {
    pub fn new(qwp: WaveplateSpec, port_gains: [f64; 2], spectral_bins: Vec<SpectralBin>) -> Result<Self> {
        if !port_gains.iter().all(|g| *g > 0.0 && g.is_finite()) {
            return Err(Error::param("port_gains", "must be positive"));
        }
        if spectral_bins.iter().any(|b| !(b.lower < b.upper)) {
            return Err(Error::param("spectral_bins", "each bin needs lower < upper"));
        }
        Ok(Self {
            qwp,
            inserted: false,
            port_gains,
            spectral_bins,
        })
    }

    /// One bin per level, edges halfway between neighbouring level wavelengths.
    pub fn for_ladder(ladder: &ModeLadder, qwp_design_wavelength: f64, port_gains: [f64; 2]) -> Result<Self> {
        let qwp = WaveplateSpec::new(
            std::f64::consts::FRAC_PI_2,
            qwp_design_wavelength,
            DETECTION_QWP_AXIS,
        )?;
        Self::new(qwp, port_gains, level_bins(ladder))
    }

    pub fn ideal(ladder: &ModeLadder) -> Self {
        Self::for_ladder(ladder, PUMP_WAVELENGTH_NM, [1.0, 1.0]).expect("unit gains are valid")
    }

    pub fn with_qwp(&self, inserted: bool) -> Self {
        Self {
            inserted,
            ..self.clone()
        }
    }

    pub fn bin_of(&self, wavelength: f64) -> Option<usize> {
        self.spectral_bins.iter().position(|b| b.contains(wavelength))
    }
}

fn level_bins(ladder: &ModeLadder) -> Vec<SpectralBin> {
    let lambdas: Vec<f64> = (0..ladder.n_levels()).map(|n| ladder.wavelength_nm(n)).collect();
    let mid = |a: f64, b: f64| 0.5 * (a + b);
    (0..lambdas.len())
        .map(|n| {
            // wavelengths fall with n
            let upper = if n == 0 {
                lambdas[0] + 0.5 * (lambdas[0] - lambdas[1])
            } else {
                mid(lambdas[n - 1], lambdas[n])
            };
            let lower = if n + 1 == lambdas.len() {
                lambdas[n] - 0.5 * (lambdas[n - 1] - lambdas[n])
            } else {
                mid(lambdas[n], lambdas[n + 1])
            };
            SpectralBin { lower, upper }
        })
        .collect()
}

/// Per-bin port counts; `counts[bin] = [port A, port B]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralCounts {
    pub bins: Vec<SpectralBin>,
    pub counts: Vec<[f64; 2]>,
    pub qwp_inserted: bool,
}

impl SpectralCounts {
    pub fn total(&self) -> [f64; 2] {
        self.counts
            .iter()
            .fold([0.0, 0.0], |acc, c| [acc[0] + c[0], acc[1] + c[1]])
    }
}

/// Light leaving the back mirror, one Stokes vector per level.
pub fn emitted_stokes_per_level(state: &GasState, ladder: &ModeLadder, kappa: f64) -> Vec<StokesVector> {
    let kh = kappa * ladder.anisotropy.loss_ratio_h_over_v;
    state
        .photons
        .iter()
        .map(|[v, h]| {
            let (a, b) = (kappa * v, kh * h);
            StokesVector::new(a + b, a - b, 0.0, 0.0)
        })
        .collect()
}

pub fn detect(levels: &[StokesVector], ladder: &ModeLadder, chain: &DetectionChain) -> Result<SpectralCounts> {
    let mut counts = vec![[0.0; 2]; chain.spectral_bins.len()];
    for (n, s) in levels.iter().enumerate() {
        let wavelength = ladder.wavelength_nm(n);
        let bin = chain.bin_of(wavelength).ok_or(Error::Binning {
            level: n,
            wavelength_nm: wavelength,
        })?;
        let s = if chain.inserted {
            mueller_retarder(&chain.qwp, wavelength)?.apply(*s)
        } else {
            *s
        };
        let (a, b) = pbs_ports(s);
        counts[bin][0] += chain.port_gains[0] * a;
        counts[bin][1] += chain.port_gains[1] * b;
    }
    Ok(SpectralCounts {
        bins: chain.spectral_bins.clone(),
        counts,
        qwp_inserted: chain.inserted,
    })
}

/// Port totals of the ground-level bin and of every other bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationPorts {
    pub condensate: [f64; 2],
    pub thermal: [f64; 2],
}

pub fn split_condensate_thermal(counts: &SpectralCounts, ladder: &ModeLadder) -> Result<PopulationPorts> {
    let ground = ladder.wavelength_nm(0);
    let cbin = counts
        .bins
        .iter()
        .position(|b| b.contains(ground))
        .ok_or(Error::Binning {
            level: 0,
            wavelength_nm: ground,
        })?;
    let mut thermal = [0.0; 2];
    for (i, c) in counts.counts.iter().enumerate() {
        if i != cbin {
            thermal[0] += c[0];
            thermal[1] += c[1];
        }
    }
    Ok(PopulationPorts {
        condensate: counts.counts[cbin],
        thermal,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Multiplicative corrections for ports A and B.
    pub port_corrections: [f64; 2],
    /// QWP retardance at the pump wavelength, rad.
    pub qwp_retardance_at_pump: f64,
}

impl Calibration {
    pub fn identity() -> Self {
        Self {
            port_corrections: [1.0, 1.0],
            qwp_retardance_at_pump: std::f64::consts::FRAC_PI_2,
        }
    }

    pub fn correct(&self, ports: [f64; 2]) -> [f64; 2] {
        [
            ports[0] * self.port_corrections[0],
            ports[1] * self.port_corrections[1],
        ]
    }
}

/// Infers port gains from a known, fully polarized pump sent through the chain
/// at the pump wavelength. Each port is calibrated in whichever basis gives it light.
pub fn calibrate(pump: StokesVector, chain: &DetectionChain) -> Result<Calibration> {
    pump.validate()?;
    if !(pump.s0 > 0.0) || (pump.dop() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidPump(format!(
            "calibration needs a fully polarized pump, got DOP {}",
            pump.dop()
        )));
    }
    let qwp = mueller_retarder(&chain.qwp, PUMP_WAVELENGTH_NM)?;
    let expected_lin = pbs_ports(pump);
    let expected_cir = pbs_ports(qwp.apply(pump));
    let through = |s: StokesVector| {
        let (a, b) = pbs_ports(s);
        [a * chain.port_gains[0], b * chain.port_gains[1]]
    };
    let measured_lin = through(pump);
    let measured_cir = through(qwp.apply(pump));
    let expected_lin = [expected_lin.0, expected_lin.1];
    let expected_cir = [expected_cir.0, expected_cir.1];
    let mut port_corrections = [0.0; 2];
    for port in 0..2 {
        let (e, m) = if expected_lin[port] >= expected_cir[port] {
            (expected_lin[port], measured_lin[port])
        } else {
            (expected_cir[port], measured_cir[port])
        };
        if !(e > 0.0 && m > 0.0) {
            return Err(Error::CalibrationDegenerate { port });
        }
        port_corrections[port] = e / m;
    }
    Ok(Calibration {
        port_corrections,
        qwp_retardance_at_pump: chain.qwp.retardance_at(PUMP_WAVELENGTH_NM),
    })
}

/// Corrected port intensities of one population, normalized by the whole gas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortIntensities {
    pub vertical: f64,
    pub horizontal: f64,
    pub right: f64,
    pub left: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationIntensities {
    pub condensate: PortIntensities,
    pub thermal: PortIntensities,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarizationReport {
    pub condensate: PolarizationStrengthPair,
    pub thermal: PolarizationStrengthPair,
    pub total: PolarizationStrengthPair,
    pub intensities: PopulationIntensities,
}

/// Counts in both measurement bases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisCounts {
    pub linear: SpectralCounts,
    pub circular: SpectralCounts,
}

pub fn measure(state: &GasState, ladder: &ModeLadder, kappa: f64, chain: &DetectionChain) -> Result<BasisCounts> {
    let levels = emitted_stokes_per_level(state, ladder, kappa);
    Ok(BasisCounts {
        linear: detect(&levels, ladder, &chain.with_qwp(false))?,
        circular: detect(&levels, ladder, &chain.with_qwp(true))?,
    })
}

pub fn polarization_report(counts: &BasisCounts, calibration: &Calibration, ladder: &ModeLadder) -> Result<PolarizationReport> {
    let lin = split_condensate_thermal(&counts.linear, ladder)?;
    let cir = split_condensate_thermal(&counts.circular, ladder)?;
    let (lc, lt) = (calibration.correct(lin.condensate), calibration.correct(lin.thermal));
    let (cc, ct) = (calibration.correct(cir.condensate), calibration.correct(cir.thermal));
    let pair = |l: [f64; 2], c: [f64; 2]| -> Result<PolarizationStrengthPair> {
        Ok(PolarizationStrengthPair {
            p_linear: linear_strength(l[0], l[1])?,
            p_circular: circular_strength(c[0], c[1])?,
        })
    };
    let sum = |a: [f64; 2], b: [f64; 2]| [a[0] + b[0], a[1] + b[1]];
    let norm_lin = lc[0] + lc[1] + lt[0] + lt[1];
    let norm_cir = cc[0] + cc[1] + ct[0] + ct[1];
    let scale = |x: f64, n: f64| if n > 0.0 { x / n } else { 0.0 };
    let ports = |l: [f64; 2], c: [f64; 2]| PortIntensities {
        vertical: scale(l[0], norm_lin),
        horizontal: scale(l[1], norm_lin),
        right: scale(c[0], norm_cir),
        left: scale(c[1], norm_cir),
    };
    Ok(PolarizationReport {
        condensate: pair(lc, cc)?,
        thermal: pair(lt, ct)?,
        total: pair(sum(lc, lt), sum(cc, ct))?,
        intensities: PopulationIntensities {
            condensate: ports(lc, cc),
            thermal: ports(lt, ct),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gas::{build_mode_ladder, Anisotropy, MolecularReservoir};
    use crate::stokes::MuellerMatrix;
    use approx::assert_abs_diff_eq;

    fn ladder(loss: f64) -> ModeLadder {
        build_mode_ladder(
            9.4e11,
            580.0,
            20,
            Anisotropy {
                loss_ratio_h_over_v: loss,
                ..Anisotropy::default()
            },
        )
        .unwrap()
    }

    fn state(photons: Vec<[f64; 2]>) -> GasState {
        let reservoir = MolecularReservoir::unexcited(4, 10.0, 1.0, 300.0).unwrap();
        GasState { photons, reservoir }
    }

    #[test]
    fn emitted_stokes_examples() {
        let l = ladder(1.0);
        let s = emitted_stokes_per_level(&state(vec![[2.0, 2.0]; 20]), &l, 3.0);
        assert!(s.iter().all(|s| s.s1 == 0.0 && s.s0 == 12.0));
        let s = emitted_stokes_per_level(&state(vec![[2.0, 0.0]; 20]), &l, 3.0);
        assert_abs_diff_eq!(s[0].dop(), 1.0, epsilon = 1e-15);
        let l = ladder(1.05);
        let s = emitted_stokes_per_level(&state(vec![[1.0, 1.0]; 20]), &l, 1.0);
        assert_abs_diff_eq!(s[3].s1 / s[3].s0, (1.0 - 1.05) / (1.0 + 1.05), epsilon = 1e-15);
    }

    #[test]
    fn bins_cover_every_level_once() {
        let l = ladder(1.0);
        let chain = DetectionChain::ideal(&l);
        for n in 0..l.n_levels() {
            let hits: Vec<usize> = (0..chain.spectral_bins.len())
                .filter(|&b| chain.spectral_bins[b].contains(l.wavelength_nm(n)))
                .collect();
            assert_eq!(hits, vec![n]);
        }
    }

    #[test]
    fn wavelength_outside_bins_is_an_error() {
        let l = ladder(1.0);
        let mut chain = DetectionChain::ideal(&l);
        chain.spectral_bins.pop();
        let levels = vec![StokesVector::vertical(); l.n_levels()];
        assert!(matches!(
            detect(&levels, &l, &chain),
            Err(Error::Binning { level: 19, .. })
        ));
    }

    #[test]
    fn vertical_light_lands_in_port_a() {
        let l = ladder(1.0);
        let chain = DetectionChain::ideal(&l);
        let counts = detect(&vec![StokesVector::vertical(); 20], &l, &chain).unwrap();
        assert_eq!(counts.total(), [20.0, 0.0]);
    }

    #[test]
    fn qwp_at_design_wavelength_switches_basis() {
        let l = ladder(1.0);
        let chain = DetectionChain::for_ladder(&l, l.wavelength_nm(0), [1.0, 1.0])
            .unwrap()
            .with_qwp(true);
        let mut levels = vec![StokesVector::new(0.0, 0.0, 0.0, 0.0); 20];
        levels[0] = StokesVector::right_circular();
        let c = detect(&levels, &l, &chain).unwrap();
        assert_abs_diff_eq!(c.counts[0][0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.counts[0][1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn chromatic_qwp_leaks_linear_into_circular() {
        let l = ladder(1.0);
        let chain = DetectionChain::ideal(&l).with_qwp(true);
        let mut levels = vec![StokesVector::new(0.0, 0.0, 0.0, 0.0); 20];
        levels[0] = StokesVector::vertical();
        let c = detect(&levels, &l, &chain).unwrap();
        let p = circular_strength(c.counts[0][0], c.counts[0][1]).unwrap();
        let oracle = MuellerMatrix::retarder(
            std::f64::consts::FRAC_PI_2 * PUMP_WAVELENGTH_NM / l.wavelength_nm(0),
            -FRAC_PI_4,
        )
        .apply(StokesVector::vertical());
        assert_abs_diff_eq!(p, oracle.s1, epsilon = 1e-12);
        assert!(p.abs() > 0.05 && p.abs() < 0.15);
    }

    #[test]
    fn counts_conserve_intensity() {
        let l = ladder(1.0);
        let st = state((0..20).map(|n| [1.0 + n as f64, 0.5 * n as f64]).collect());
        let levels = emitted_stokes_per_level(&st, &l, 2.0);
        let s0: f64 = levels.iter().map(|s| s.s0).sum();
        for inserted in [false, true] {
            let t = detect(&levels, &l, &DetectionChain::ideal(&l).with_qwp(inserted))
                .unwrap()
                .total();
            assert_abs_diff_eq!(t[0] + t[1], s0, epsilon = 1e-12 * s0);
        }
    }

    #[test]
    fn split_is_exhaustive() {
        let l = ladder(1.0);
        let mut photons = vec![[0.0, 0.0]; 20];
        photons[0] = [5.0, 1.0];
        let c = detect(
            &emitted_stokes_per_level(&state(photons), &l, 1.0),
            &l,
            &DetectionChain::ideal(&l),
        )
        .unwrap();
        let split = split_condensate_thermal(&c, &l).unwrap();
        assert_eq!(split.thermal, [0.0, 0.0]);
        assert_eq!(split.condensate, [5.0, 1.0]);
        let st = state((0..20).map(|n| [1.0 / (1.0 + n as f64), 0.3]).collect());
        let c = detect(&emitted_stokes_per_level(&st, &l, 1.0), &l, &DetectionChain::ideal(&l)).unwrap();
        let split = split_condensate_thermal(&c, &l).unwrap();
        let t = c.total();
        assert_eq!(split.condensate[0] + split.thermal[0], t[0]);
        assert_eq!(split.condensate[1] + split.thermal[1], t[1]);
    }

    #[test]
    fn ideal_chain_calibrates_to_identity() {
        let l = ladder(1.0);
        let c = calibrate(StokesVector::vertical(), &DetectionChain::ideal(&l)).unwrap();
        assert_eq!(c.port_corrections, [1.0, 1.0]);
        assert_abs_diff_eq!(c.qwp_retardance_at_pump, std::f64::consts::FRAC_PI_2, epsilon = 1e-15);
    }

    #[test]
    fn gains_are_inverted() {
        let l = ladder(1.0);
        let chain = DetectionChain::for_ladder(&l, PUMP_WAVELENGTH_NM, [1.1, 0.9]).unwrap();
        let c = calibrate(StokesVector::vertical(), &chain).unwrap();
        assert_abs_diff_eq!(c.port_corrections[0], 1.0 / 1.1, epsilon = 1e-15);
        assert_abs_diff_eq!(c.port_corrections[1], 1.0 / 0.9, epsilon = 1e-15);
    }

    #[test]
    fn partially_polarized_pump_rejected() {
        let l = ladder(1.0);
        let pump = StokesVector::new(1.0, 0.5, 0.0, 0.0);
        assert!(matches!(
            calibrate(pump, &DetectionChain::ideal(&l)),
            Err(Error::InvalidPump(_))
        ));
    }

    #[test]
    fn calibrated_pump_round_trip() {
        let l = ladder(1.0);
        let chain = DetectionChain::for_ladder(&l, PUMP_WAVELENGTH_NM, [1.3, 0.7]).unwrap();
        for (h, q) in [(0.1, 0.4), (0.3, 1.0), (0.0, 0.7), (0.6, 0.2)] {
            let pump = crate::stokes::prepare_pump(h, q, 1.0, PUMP_WAVELENGTH_NM).unwrap();
            let cal = calibrate(pump, &chain).unwrap();
            let qwp = mueller_retarder(&chain.qwp, PUMP_WAVELENGTH_NM).unwrap();
            let port = |s: StokesVector| {
                let (a, b) = pbs_ports(s);
                cal.correct([a * 1.3, b * 0.7])
            };
            let lin = port(pump);
            let cir = port(qwp.apply(pump));
            assert_abs_diff_eq!(linear_strength(lin[0], lin[1]).unwrap(), pump.s1, epsilon = 1e-9);
            assert_abs_diff_eq!(circular_strength(cir[0], cir[1]).unwrap(), pump.s3, epsilon = 1e-9);
        }
    }

    #[test]
    fn symmetric_state_reports_zero() {
        let l = ladder(1.0);
        let st = state((0..20).map(|n| [2.0 / (1.0 + n as f64); 2]).collect());
        let counts = measure(&st, &l, 1.0, &DetectionChain::ideal(&l)).unwrap();
        let r = polarization_report(&counts, &Calibration::identity(), &l).unwrap();
        for p in [r.condensate, r.thermal, r.total] {
            assert_eq!(p.p_linear, 0.0);
            assert_eq!(p.p_circular, 0.0);
        }
        let i = r.intensities;
        let sum = i.condensate.vertical + i.condensate.horizontal + i.thermal.vertical + i.thermal.horizontal;
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_gas_is_undefined() {
        let l = ladder(1.0);
        let st = state(vec![[0.0, 0.0]; 20]);
        let counts = measure(&st, &l, 1.0, &DetectionChain::ideal(&l)).unwrap();
        assert!(matches!(
            polarization_report(&counts, &Calibration::identity(), &l),
            Err(Error::UndefinedPolarization)
        ));
    }
}
