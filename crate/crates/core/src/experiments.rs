//! Scenario runners and their on-disk output.
//!
//! Every run writes `records.csv`, `manifest.toml`, `config.toml` and
//! `params.toml` into its output directory; raster-type runs add `matrices.csv`.
//! The CSV column order is the scenario's coordinate columns followed by
//! [`RECORD_COLUMNS`].

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{find_threshold, second_threshold, steady_state, ThresholdResult, ThresholdSearch};
use crate::error::{Error, Result};
use crate::gas::{Anisotropy, GasState, GasSystem};
use crate::params::ParameterFile;
use crate::polarimetry::{calibrate, measure, polarization_report, DetectionChain, PolarizationReport};
use crate::stokes::{
    circular_strength, linear_strength, meridian_state, mueller_retarder, pbs_ports, prepare_pump,
    raster_hemisphere, PolarizationStrengthPair, StokesVector, PUMP_WAVELENGTH_NM,
};

pub const RECORD_COLUMNS: [&str; 12] = [
    "pump_p_lin",
    "pump_p_cir",
    "cond_p_lin",
    "cond_p_cir",
    "th_p_lin",
    "th_p_cir",
    "tot_p_lin",
    "tot_p_cir",
    "n0_v",
    "n0_h",
    "n_thermal",
    "converged",
];

pub const MATRIX_QUANTITIES: [&str; 6] = [
    "pump_p_lin",
    "pump_p_cir",
    "cond_p_lin",
    "cond_p_cir",
    "th_p_lin",
    "th_p_cir",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    PowerSweep,
    HwpSweep,
    Raster,
    EquatorThresholds,
    Pinning,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::PowerSweep,
        Scenario::HwpSweep,
        Scenario::Raster,
        Scenario::EquatorThresholds,
        Scenario::Pinning,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::PowerSweep => "power-sweep",
            Scenario::HwpSweep => "hwp-sweep",
            Scenario::Raster => "raster",
            Scenario::EquatorThresholds => "equator-thresholds",
            Scenario::Pinning => "pinning",
        }
    }

    pub fn coordinate_columns(self) -> &'static [&'static str] {
        match self {
            Scenario::PowerSweep => &["power_w", "power_rel"],
            Scenario::HwpSweep => &["hwp_angle"],
            Scenario::Raster | Scenario::Pinning => &["i_hwp", "j_qwp", "hwp_angle", "qwp_angle"],
            Scenario::EquatorThresholds => &["phi", "critical_power_w", "critical_power_rel"],
        }
    }
}

/// Absolute powers in W, or a log-spaced grid in units of `P_c(vertical)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PowerGrid {
    Watts(Vec<f64>),
    RelativeLog { from: f64, to: f64, count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PowerLevel {
    Watts(f64),
    /// Multiple of `P_c(vertical)`.
    Relative(f64),
}

/// Explicit angles in rad, or an inclusive linear grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AngleGrid {
    List(Vec<f64>),
    Linspace { from: f64, to: f64, count: usize },
}

impl AngleGrid {
    pub fn values(&self) -> Result<Vec<f64>> {
        match self {
            AngleGrid::List(v) => Ok(v.clone()),
            AngleGrid::Linspace { from, to, count } => linspace(*from, *to, *count),
        }
    }
}

fn linspace(from: f64, to: f64, count: usize) -> Result<Vec<f64>> {
    if count < 2 || !from.is_finite() || !to.is_finite() {
        return Err(Error::Config("grid needs finite ends and at least 2 points".into()));
    }
    Ok((0..count)
        .map(|i| from + (to - from) * i as f64 / (count - 1) as f64)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSweepGrid {
    pub powers: PowerGrid,
}

impl Default for PowerSweepGrid {
    fn default() -> Self {
        Self {
            powers: PowerGrid::RelativeLog {
                from: 0.1,
                to: 3.0,
                count: 40,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HwpSweepGrid {
    pub power: PowerLevel,
    pub angles: AngleGrid,
}

impl Default for HwpSweepGrid {
    fn default() -> Self {
        Self {
            power: PowerLevel::Relative(50.0),
            angles: AngleGrid::Linspace {
                from: 0.0,
                to: PI,
                count: 36,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterGrid {
    pub power: PowerLevel,
    pub n_hwp: usize,
    pub n_qwp: usize,
}

impl Default for RasterGrid {
    fn default() -> Self {
        Self {
            power: PowerLevel::Relative(50.0),
            n_hwp: 10,
            n_qwp: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquatorGrid {
    pub phis: AngleGrid,
}

impl Default for EquatorGrid {
    fn default() -> Self {
        Self {
            phis: AngleGrid::Linspace {
                from: -FRAC_PI_2,
                to: FRAC_PI_2,
                count: 9,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinningGrid {
    #[serde(flatten)]
    pub raster: RasterGrid,
    pub loss_ratio_h_over_v: f64,
    #[serde(default)]
    pub energy_splitting: f64,
}

impl Default for PinningGrid {
    fn default() -> Self {
        Self {
            raster: RasterGrid::default(),
            loss_ratio_h_over_v: 1.05,
            energy_splitting: 0.0,
        }
    }
}

/// One scenario run. Grid tables other than the selected scenario's are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// Parameter file; the shipped defaults when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, rename = "power-sweep")]
    pub power_sweep: PowerSweepGrid,
    #[serde(default, rename = "hwp-sweep")]
    pub hwp_sweep: HwpSweepGrid,
    #[serde(default)]
    pub raster: RasterGrid,
    #[serde(default, rename = "equator-thresholds")]
    pub equator_thresholds: EquatorGrid,
    #[serde(default)]
    pub pinning: PinningGrid,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            params: None,
            out: None,
            workers: None,
            power_sweep: PowerSweepGrid::default(),
            hwp_sweep: HwpSweepGrid::default(),
            raster: RasterGrid::default(),
            equator_thresholds: EquatorGrid::default(),
            pinning: PinningGrid::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }
}

/// Model, solver and detector settings shared by every row of a run.
#[derive(Debug, Clone)]
pub struct Context {
    pub params: ParameterFile,
    pub system: GasSystem,
    pub chain: DetectionChain,
    pub workers: usize,
}

impl Context {
    pub fn new(params: ParameterFile, workers: usize) -> Result<Self> {
        let system = params.system()?;
        let chain = params.detection_chain(&system.ladder)?;
        Ok(Self {
            params,
            system,
            chain,
            workers: workers.max(1),
        })
    }

    pub fn with_anisotropy(&self, anisotropy: Anisotropy) -> Result<Self> {
        Self::new(self.params.with_anisotropy(anisotropy), self.workers)
    }

    pub fn critical_power(&self) -> Result<ThresholdResult> {
        find_threshold(
            &self.system,
            StokesVector::vertical(),
            &self.params.threshold_search(),
            &self.params.integration_control(),
        )
    }

    fn resolve(&self, level: PowerLevel, pc: &mut Option<f64>) -> Result<f64> {
        match level {
            PowerLevel::Watts(w) if w >= 0.0 => Ok(w),
            PowerLevel::Relative(q) if q >= 0.0 => Ok(q * self.pc(pc)?),
            _ => Err(Error::Config("powers must be non-negative".into())),
        }
    }

    fn pc(&self, pc: &mut Option<f64>) -> Result<f64> {
        if let Some(p) = pc {
            return Ok(*p);
        }
        let p = self.critical_power()?.critical_power;
        *pc = Some(p);
        Ok(p)
    }

    fn map<T: Send, F>(&self, n: usize, f: F) -> Result<Vec<T>>
    where
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| (0..n).into_par_iter().map(f).collect())
    }

    /// Steady state at one pump setting, measured through the chain calibrated on that pump.
    pub fn evaluate(&self, power: f64, pump: StokesVector) -> Result<Evaluation> {
        let pump = pump.scaled(1.0 / pump.s0);
        let (state, converged) = match steady_state(
            &self.system.with_pump(power, pump),
            &self.params.integration_control(),
        ) {
            Ok(t) => (t.state, true),
            Err(Error::NonConvergence { state, .. }) | Err(Error::Stiffness { state, .. }) => (*state, false),
            Err(e) => return Err(e),
        };
        let calibration = calibrate(pump, &self.chain)?;
        let qwp = mueller_retarder(&self.chain.qwp, PUMP_WAVELENGTH_NM)?;
        let port = |s: StokesVector| {
            let (a, b) = pbs_ports(s);
            calibration.correct([a * self.chain.port_gains[0], b * self.chain.port_gains[1]])
        };
        let (lin, cir) = (port(pump), port(qwp.apply(pump)));
        let pump_strengths = PolarizationStrengthPair {
            p_linear: linear_strength(lin[0], lin[1])?,
            p_circular: circular_strength(cir[0], cir[1])?,
        };
        let counts = measure(&state, &self.system.ladder, self.system.params.kappa, &self.chain)?;
        let report = polarization_report(&counts, &calibration, &self.system.ladder).ok();
        Ok(Evaluation {
            pump: pump_strengths,
            report,
            state,
            converged,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub pump: PolarizationStrengthPair,
    pub report: Option<PolarizationReport>,
    pub state: GasState,
    pub converged: bool,
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub coordinates: Vec<f64>,
    pub pump: PolarizationStrengthPair,
    pub condensate: PolarizationStrengthPair,
    pub thermal: PolarizationStrengthPair,
    pub total: PolarizationStrengthPair,
    pub report: Option<PolarizationReport>,
    pub n0_v: f64,
    pub n0_h: f64,
    pub n_thermal: f64,
    pub converged: bool,
}

const NAN_PAIR: PolarizationStrengthPair = PolarizationStrengthPair {
    p_linear: f64::NAN,
    p_circular: f64::NAN,
};

impl SweepRecord {
    fn from_evaluation(coordinates: Vec<f64>, e: Evaluation) -> Self {
        let [n0_v, n0_h] = e.state.ground();
        let r = e.report;
        Self {
            coordinates,
            pump: e.pump,
            condensate: r.map_or(NAN_PAIR, |r| r.condensate),
            thermal: r.map_or(NAN_PAIR, |r| r.thermal),
            total: r.map_or(NAN_PAIR, |r| r.total),
            report: r,
            n0_v,
            n0_h,
            n_thermal: e.state.thermal_photons(),
            converged: e.converged,
        }
    }

    fn failed(coordinates: Vec<f64>, pump: PolarizationStrengthPair) -> Self {
        Self {
            coordinates,
            pump,
            condensate: NAN_PAIR,
            thermal: NAN_PAIR,
            total: NAN_PAIR,
            report: None,
            n0_v: f64::NAN,
            n0_h: f64::NAN,
            n_thermal: f64::NAN,
            converged: false,
        }
    }

    pub fn fields(&self) -> Vec<String> {
        let mut out: Vec<String> = self.coordinates.iter().map(|x| format!("{x:?}")).collect();
        for x in [
            self.pump.p_linear,
            self.pump.p_circular,
            self.condensate.p_linear,
            self.condensate.p_circular,
            self.thermal.p_linear,
            self.thermal.p_circular,
            self.total.p_linear,
            self.total.p_circular,
            self.n0_v,
            self.n0_h,
            self.n_thermal,
        ] {
            out.push(format!("{x:?}"));
        }
        out.push(self.converged.to_string());
        out
    }
}

/// `A·cos(4α + φ0)` least-squares fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineFit {
    pub amplitude: f64,
    pub phase: f64,
    pub rms_residual: f64,
}

pub fn fit_cos4(angles: &[f64], values: &[f64]) -> Result<CosineFit> {
    let (mut cc, mut cs, mut ss, mut yc, mut ys) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&a, &y) in angles.iter().zip(values) {
        let (s, c) = (4.0 * a).sin_cos();
        cc += c * c;
        cs += c * s;
        ss += s * s;
        yc += y * c;
        ys += y * s;
    }
    let det = cc * ss - cs * cs;
    if angles.len() != values.len() || !(det > 1e-9 * (cc + ss).powi(2)) {
        return Err(Error::Config("cosine fit needs angles spanning more than one point of cos 4α".into()));
    }
    let a = (yc * ss - ys * cs) / det;
    let b = (ys * cc - yc * cs) / det;
    let sq: f64 = angles
        .iter()
        .zip(values)
        .map(|(&t, &y)| (y - a * (4.0 * t).cos() - b * (4.0 * t).sin()).powi(2))
        .sum();
    Ok(CosineFit {
        amplitude: a.hypot(b),
        phase: (-b).atan2(a),
        rms_residual: (sq / angles.len() as f64).sqrt(),
    })
}

/// Aggregate numbers of a raster-type run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterSummary {
    /// Least-squares slope of condensate against pump `p_linear`.
    pub slope: f64,
    pub max_thermal_abs: f64,
    pub max_condensate_circular_abs: f64,
    /// `|cos δ|` of the detection QWP at the ground-mode wavelength.
    pub chromatic_bound: f64,
    pub fraction_above_0_9: f64,
}

pub fn chromatic_bound(ctx: &Context) -> f64 {
    let lambda = ctx.system.ladder.wavelength_nm(0);
    ctx.chain.qwp.retardance_at(lambda).cos().abs()
}

pub fn summarize_raster(ctx: &Context, records: &[SweepRecord]) -> RasterSummary {
    let xs: Vec<f64> = records.iter().map(|r| r.pump.p_linear).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.condensate.p_linear).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let fold_max = |f: &dyn Fn(&SweepRecord) -> f64| records.iter().map(f).fold(0.0f64, f64::max);
    RasterSummary {
        slope: sxy / sxx,
        max_thermal_abs: fold_max(&|r| r.thermal.p_linear.abs().max(r.thermal.p_circular.abs())),
        max_condensate_circular_abs: fold_max(&|r| r.condensate.p_circular.abs()),
        chromatic_bound: chromatic_bound(ctx),
        fraction_above_0_9: ys.iter().filter(|y| y.abs() > 0.9).count() as f64 / n,
    }
}

/// Scenario-specific numbers recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub critical_power_vertical: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub second_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub second_threshold_rel: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cosine_fit: Option<CosineFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raster: Option<RasterSummary>,
    pub missing_thresholds: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scenario: Scenario,
    pub records: Vec<SweepRecord>,
    /// `(n_hwp, n_qwp)` for raster-type runs.
    pub raster_shape: Option<(usize, usize)>,
    pub summary: RunSummary,
}

impl RunOutput {
    pub fn all_converged(&self) -> bool {
        self.records.iter().all(|r| r.converged)
    }
}

pub fn run_power_sweep(ctx: &Context, grid: &PowerSweepGrid) -> Result<RunOutput> {
    let mut pc = None;
    let pc_value = ctx.pc(&mut pc)?;
    let powers = match &grid.powers {
        PowerGrid::Watts(w) => w.clone(),
        PowerGrid::RelativeLog { from, to, count } => {
            if !(*from > 0.0 && to > from && *count >= 2) {
                return Err(Error::Config("relative-log grid needs 0 < from < to and count ≥ 2".into()));
            }
            let (l0, l1) = (from.ln(), to.ln());
            (0..*count)
                .map(|i| pc_value * (l0 + (l1 - l0) * i as f64 / (*count - 1) as f64).exp())
                .collect()
        }
    };
    if powers.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::Config("powers must be non-negative".into()));
    }
    let records = ctx.map(powers.len(), |i| {
        let e = ctx.evaluate(powers[i], StokesVector::vertical())?;
        Ok(SweepRecord::from_evaluation(vec![powers[i], powers[i] / pc_value], e))
    })?;
    let top = powers.iter().cloned().fold(0.0, f64::max);
    let second = if top > pc_value {
        let search = ThresholdSearch {
            low: pc_value,
            high: top,
            ..ctx.params.threshold_search()
        };
        match second_threshold(&ctx.system, StokesVector::vertical(), &search, &ctx.params.integration_control()) {
            Ok(r) => Some(r.critical_power),
            Err(Error::NoThreshold { .. }) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(RunOutput {
        scenario: Scenario::PowerSweep,
        records,
        raster_shape: None,
        summary: RunSummary {
            critical_power_vertical: Some(pc_value),
            second_threshold: second,
            second_threshold_rel: second.map(|s| s / pc_value),
            ..RunSummary::default()
        },
    })
}

pub fn run_hwp_sweep(ctx: &Context, grid: &HwpSweepGrid) -> Result<RunOutput> {
    let mut pc = None;
    let power = ctx.resolve(grid.power, &mut pc)?;
    let angles = grid.angles.values()?;
    let records = ctx.map(angles.len(), |i| {
        let a = angles[i];
        let pump = prepare_pump(a, 2.0 * a, 1.0, PUMP_WAVELENGTH_NM)?;
        Ok(SweepRecord::from_evaluation(vec![a], ctx.evaluate(power, pump)?))
    })?;
    let values: Vec<f64> = records.iter().map(|r| r.condensate.p_linear).collect();
    Ok(RunOutput {
        scenario: Scenario::HwpSweep,
        summary: RunSummary {
            critical_power_vertical: pc,
            cosine_fit: Some(fit_cos4(&angles, &values)?),
            ..RunSummary::default()
        },
        records,
        raster_shape: None,
    })
}

pub fn run_raster(ctx: &Context, grid: &RasterGrid) -> Result<RunOutput> {
    let mut pc = None;
    let power = ctx.resolve(grid.power, &mut pc)?;
    let points = raster_hemisphere(grid.n_hwp, grid.n_qwp)?;
    let records = ctx.map(points.len(), |k| {
        let p = &points[k];
        let coords = vec![
            (k / grid.n_qwp) as f64,
            (k % grid.n_qwp) as f64,
            p.hwp_angle,
            p.qwp_angle,
        ];
        Ok(SweepRecord::from_evaluation(coords, ctx.evaluate(power, p.stokes)?))
    })?;
    Ok(RunOutput {
        scenario: Scenario::Raster,
        summary: RunSummary {
            critical_power_vertical: pc,
            raster: Some(summarize_raster(ctx, &records)),
            ..RunSummary::default()
        },
        records,
        raster_shape: Some((grid.n_hwp, grid.n_qwp)),
    })
}

pub fn run_pinning(ctx: &Context, grid: &PinningGrid) -> Result<RunOutput> {
    let anisotropy = Anisotropy {
        loss_ratio_h_over_v: grid.loss_ratio_h_over_v,
        energy_splitting: grid.energy_splitting,
    };
    let pinned = ctx.with_anisotropy(anisotropy)?;
    let power = match grid.raster.power {
        PowerLevel::Relative(q) if q >= 0.0 => q * ctx.critical_power()?.critical_power,
        level => ctx.resolve(level, &mut None)?,
    };
    let mut out = run_raster(
        &pinned,
        &RasterGrid {
            power: PowerLevel::Watts(power),
            ..grid.raster.clone()
        },
    )?;
    out.scenario = Scenario::Pinning;
    if let PowerLevel::Relative(q) = grid.raster.power {
        out.summary.critical_power_vertical = Some(power / q);
    }
    Ok(out)
}

pub fn run_equator_thresholds(ctx: &Context, grid: &EquatorGrid) -> Result<RunOutput> {
    let phis = grid.equator_thresholds_values()?;
    let pc = ctx.critical_power()?.critical_power;
    let search = ctx.params.threshold_search();
    let control = ctx.params.integration_control();
    let rows = ctx.map(phis.len(), |i| {
        let pump = meridian_state(phis[i]);
        match find_threshold(&ctx.system, pump, &search, &control) {
            Ok(t) => {
                let e = ctx.evaluate(t.critical_power, pump)?;
                Ok((SweepRecord::from_evaluation(vec![phis[i], t.critical_power, t.critical_power / pc], e), false))
            }
            Err(Error::NoThreshold { .. }) => {
                let pump_pair = PolarizationStrengthPair {
                    p_linear: pump.s1,
                    p_circular: pump.s3,
                };
                Ok((SweepRecord::failed(vec![phis[i], f64::NAN, f64::NAN], pump_pair), true))
            }
            Err(Error::NonConvergence { .. }) | Err(Error::Stiffness { .. }) => {
                let pump_pair = PolarizationStrengthPair {
                    p_linear: pump.s1,
                    p_circular: pump.s3,
                };
                Ok((SweepRecord::failed(vec![phis[i], f64::NAN, f64::NAN], pump_pair), false))
            }
            Err(e) => Err(e),
        }
    })?;
    let missing = rows.iter().filter(|r| r.1).count();
    Ok(RunOutput {
        scenario: Scenario::EquatorThresholds,
        records: rows.into_iter().map(|r| r.0).collect(),
        raster_shape: None,
        summary: RunSummary {
            critical_power_vertical: Some(pc),
            missing_thresholds: missing,
            ..RunSummary::default()
        },
    })
}

impl EquatorGrid {
    fn equator_thresholds_values(&self) -> Result<Vec<f64>> {
        let v = self.phis.values()?;
        if v.iter().any(|p| p.abs() > FRAC_PI_2 + 1e-12) {
            return Err(Error::Config("phi must lie in [-π/2, π/2]".into()));
        }
        Ok(v)
    }
}

pub fn run(ctx: &Context, config: &ScenarioConfig) -> Result<RunOutput> {
    match config.scenario {
        Scenario::PowerSweep => run_power_sweep(ctx, &config.power_sweep),
        Scenario::HwpSweep => run_hwp_sweep(ctx, &config.hwp_sweep),
        Scenario::Raster => run_raster(ctx, &config.raster),
        Scenario::EquatorThresholds => run_equator_thresholds(ctx, &config.equator_thresholds),
        Scenario::Pinning => run_pinning(ctx, &config.pinning),
    }
}

pub fn records_csv(out: &RunOutput) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = out
        .scenario
        .coordinate_columns()
        .iter()
        .chain(RECORD_COLUMNS.iter())
        .copied()
        .collect();
    w.write_record(&header)?;
    for r in &out.records {
        w.write_record(r.fields())?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv output is UTF-8"))
}

fn matrix_value(r: &SweepRecord, quantity: &str) -> f64 {
    match quantity {
        "pump_p_lin" => r.pump.p_linear,
        "pump_p_cir" => r.pump.p_circular,
        "cond_p_lin" => r.condensate.p_linear,
        "cond_p_cir" => r.condensate.p_circular,
        "th_p_lin" => r.thermal.p_linear,
        "th_p_cir" => r.thermal.p_circular,
        _ => unreachable!("unknown matrix quantity"),
    }
}

/// Raster quantities re-indexed as `n_hwp × n_qwp` matrices, one block per quantity.
pub fn matrices_csv(out: &RunOutput) -> Result<Option<String>> {
    let Some((n_hwp, n_qwp)) = out.raster_shape else {
        return Ok(None);
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["quantity".to_string(), "i_hwp".to_string()];
    header.extend((0..n_qwp).map(|j| format!("j{j}")));
    w.write_record(&header)?;
    for q in MATRIX_QUANTITIES {
        for i in 0..n_hwp {
            let mut row = vec![q.to_string(), i.to_string()];
            row.extend((0..n_qwp).map(|j| format!("{:?}", matrix_value(&out.records[i * n_qwp + j], q))));
            w.write_record(&row)?;
        }
    }
    Ok(Some(
        String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv output is UTF-8"),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub scenario: Scenario,
    pub params_sha256: String,
    pub rows: usize,
    pub converged: Vec<bool>,
    pub summary: RunSummary,
    pub config: String,
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Writes the run directory and returns the manifest.
pub fn write_run(dir: &Path, config: &ScenarioConfig, params: &ParameterFile, out: &RunOutput) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let params_text = params.to_toml();
    let config_text = config.to_toml();
    fs::write(dir.join("records.csv"), records_csv(out)?)?;
    if let Some(m) = matrices_csv(out)? {
        fs::write(dir.join("matrices.csv"), m)?;
    }
    fs::write(dir.join("params.toml"), &params_text)?;
    fs::write(dir.join("config.toml"), &config_text)?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        scenario: out.scenario,
        params_sha256: sha256_hex(&params_text),
        rows: out.records.len(),
        converged: out.records.iter().map(|r| r.converged).collect(),
        summary: out.summary.clone(),
        config: config_text,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(dir.join("manifest.toml"), text)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cosine_fit_recovers_parameters() {
        let angles = linspace(0.0, PI, 36).unwrap();
        let values: Vec<f64> = angles.iter().map(|a| 0.92 * (4.0 * a + 0.3).cos()).collect();
        let fit = fit_cos4(&angles, &values).unwrap();
        assert_abs_diff_eq!(fit.amplitude, 0.92, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.phase, 0.3, epsilon = 1e-12);
        assert!(fit.rms_residual < 1e-12);
    }

    #[test]
    fn cosine_fit_rejects_degenerate_grid() {
        assert!(fit_cos4(&[0.0, PI / 2.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn config_round_trip_and_defaults() {
        let c = ScenarioConfig::parse("scenario = \"raster\"\n").unwrap();
        assert_eq!(c, ScenarioConfig::new(Scenario::Raster));
        assert_eq!(ScenarioConfig::parse(&c.to_toml()).unwrap(), c);
        let text = "scenario = \"power-sweep\"\n[power-sweep]\npowers = { watts = [1.0, 2.0] }\n";
        let c = ScenarioConfig::parse(text).unwrap();
        assert_eq!(c.power_sweep.powers, PowerGrid::Watts(vec![1.0, 2.0]));
        let text = "scenario = \"pinning\"\n[pinning]\npower = { relative = 3.0 }\nn_hwp = 2\nn_qwp = 3\nloss_ratio_h_over_v = 1.1\n";
        let c = ScenarioConfig::parse(text).unwrap();
        assert_eq!(c.pinning.raster.n_qwp, 3);
        assert_eq!(c.pinning.raster.power, PowerLevel::Relative(3.0));
    }

    #[test]
    fn config_rejects_unknown_fields() {
        assert!(ScenarioConfig::parse("scenario = \"raster\"\nbogus = 1\n").is_err());
        assert!(ScenarioConfig::parse("scenario = \"bogus\"\n").is_err());
        assert!(ScenarioConfig::parse("scenario = \"pinning\"\n[pinning]\nloss_ratio_h_over_v = 1.1\nbogus = 2\n").is_err());
        assert!(ScenarioConfig::parse("scenario = \"raster\"\n[raster]\npower = { relative = 2.0 }\nn_hwp = 2\nn_qwp = 2\nextra = 1\n").is_err());
    }

    #[test]
    fn csv_header_follows_contract() {
        let out = RunOutput {
            scenario: Scenario::HwpSweep,
            records: vec![],
            raster_shape: None,
            summary: RunSummary::default(),
        };
        let text = records_csv(&out).unwrap();
        assert_eq!(
            text.trim_end(),
            "hwp_angle,pump_p_lin,pump_p_cir,cond_p_lin,cond_p_cir,th_p_lin,th_p_cir,tot_p_lin,tot_p_cir,n0_v,n0_h,n_thermal,converged"
        );
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(
            sha256_hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
