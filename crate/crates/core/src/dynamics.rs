//! Time integration, steady states and condensation thresholds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gas::{GasState, GasSystem, Polarization, RateModel};
use crate::stokes::StokesVector;

/// Default condensate-fraction criterion for threshold detection.
pub const THRESHOLD_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationControl {
    pub rel_tol: f64,
    /// Absolute error floor shared by every component of the state.
    pub abs_tol: f64,
    /// Simulated time limit, s.
    pub max_time: f64,
    /// Steady state is declared when `max_i |dy_i| / (r (|y_i| + abs_tol))`
    /// drops below this value, `r` being the model's slowest loss rate.
    pub stall_criterion: f64,
    /// Upper bound on a single step, s.
    pub max_step: f64,
}

impl Default for IntegrationControl {
    fn default() -> Self {
        Self {
            rel_tol: 1e-7,
            abs_tol: 1e-9,
            max_time: 1e-3,
            stall_criterion: 1e-9,
            max_step: f64::INFINITY,
        }
    }
}

impl IntegrationControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) {
            return Err(Error::param("tolerance", "rel_tol and abs_tol must be positive"));
        }
        if !(self.max_time > 0.0) {
            return Err(Error::param("max_time", "must be positive"));
        }
        if !(self.stall_criterion > 0.0) {
            return Err(Error::param("stall_criterion", "must be positive"));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::param("max_step", "must be positive"));
        }
        Ok(())
    }
}

/// End point of an integration together with step statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub state: GasState,
    pub time: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Residual of the final state in the units of `stall_criterion`.
    pub residual: f64,
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Dormand-Prince 5(4) stepper with FSAL, a PI step-size controller and
/// rejection of steps that leave the physical domain.
struct Stepper<'a> {
    model: &'a RateModel,
    control: IntegrationControl,
    y: Vec<f64>,
    f: Vec<f64>,
    t: f64,
    h: f64,
    err_old: f64,
    accepted: usize,
    rejected: usize,
    k: [Vec<f64>; 6],
    stage: Vec<f64>,
    y_new: Vec<f64>,
    f_new: Vec<f64>,
    template: GasState,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a RateModel, y0: Vec<f64>, control: IntegrationControl, template: GasState) -> Self {
        let n = y0.len();
        let mut f = vec![0.0; n];
        model.derivative(&y0, &mut f);
        let mut s = Self {
            model,
            control,
            y: y0,
            f,
            t: 0.0,
            h: 0.0,
            err_old: 1e-4,
            accepted: 0,
            rejected: 0,
            k: std::array::from_fn(|_| vec![0.0; n]),
            stage: vec![0.0; n],
            y_new: vec![0.0; n],
            f_new: vec![0.0; n],
            template,
        };
        s.h = s.initial_step();
        s
    }

    fn scale(&self, a: f64) -> f64 {
        self.control.abs_tol + self.control.rel_tol * a.abs()
    }

    fn initial_step(&mut self) -> f64 {
        let n = self.y.len() as f64;
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..self.y.len() {
            let sc = self.scale(self.y[i]);
            d0 += (self.y[i] / sc).powi(2);
            d1 += (self.f[i] / sc).powi(2);
        }
        let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
        if d1 == 0.0 {
            return self.control.max_step.min(self.control.max_time);
        }
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(self.control.max_step);
        for i in 0..self.y.len() {
            self.stage[i] = self.y[i] + h0 * self.f[i];
        }
        self.model.derivative(&self.stage, &mut self.f_new);
        let mut d2 = 0.0;
        for i in 0..self.y.len() {
            let sc = self.scale(self.y[i]);
            d2 += ((self.f_new[i] - self.f[i]) / sc).powi(2);
        }
        let d2 = (d2 / n).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(self.control.max_step)
    }

    /// Advances by one accepted step, never beyond `t_end`.
    fn step(&mut self, t_end: f64) -> Result<()> {
        let n = self.y.len();
        if t_end - self.t <= f64::EPSILON * 16.0 * t_end.abs() {
            self.t = t_end;
            return Ok(());
        }
        loop {
            let mut h = self.h.min(self.control.max_step);
            let last = self.t + h >= t_end;
            if last {
                h = t_end - self.t;
            }
            if h <= f64::EPSILON * 16.0 * self.t.abs().max(t_end.abs()) {
                return Err(Error::Stiffness {
                    t: self.t,
                    h,
                    state: Box::new(self.unpack()),
                });
            }
            let [k2, k3, k4, k5, k6, k7] = &mut self.k;
            let y = &self.y;
            let k1 = &self.f;
            let stage = &mut self.stage;
            for i in 0..n {
                stage[i] = y[i] + h * A21 * k1[i];
            }
            self.model.derivative(stage, k2);
            for i in 0..n {
                stage[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            self.model.derivative(stage, k3);
            for i in 0..n {
                stage[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            self.model.derivative(stage, k4);
            for i in 0..n {
                stage[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            self.model.derivative(stage, k5);
            for i in 0..n {
                stage[i] = y[i]
                    + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            self.model.derivative(stage, k6);
            let y_new = &mut self.y_new;
            for i in 0..n {
                y_new[i] = y[i]
                    + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            self.model.derivative(y_new, k7);

            let mut err = 0.0;
            for i in 0..n {
                let e = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = self.control.abs_tol + self.control.rel_tol * y[i].abs().max(y_new[i].abs());
                err += (e / sc).powi(2);
            }
            let err = (err / n as f64).sqrt();
            if !err.is_finite() {
                self.h = h * 0.1;
                self.rejected += 1;
                continue;
            }

            if err <= 1.0 && !in_domain(self.model, &self.y_new) {
                self.h = h * 0.5;
                self.rejected += 1;
                continue;
            }

            const BETA: f64 = 0.04;
            let expo = 0.2 - BETA * 0.75;
            let fac11 = err.powf(expo);
            if err <= 1.0 {
                let fac = (fac11 / self.err_old.powf(BETA) / 0.9).clamp(0.1, 5.0);
                self.err_old = err.max(1e-4);
                std::mem::swap(&mut self.y, &mut self.y_new);
                std::mem::swap(&mut self.f, &mut self.k[5]);
                self.t = if last { t_end } else { self.t + h };
                self.accepted += 1;
                self.h = h / fac;
                return Ok(());
            }
            self.h = h / (fac11 / 0.9).min(5.0);
            self.rejected += 1;
        }
    }

    fn residual(&self) -> f64 {
        weighted_residual(self.model, &self.control, &self.y, &self.f)
    }

    fn unpack(&self) -> GasState {
        self.template.with_values(&self.y)
    }
}

/// Integrates `state0` for `duration` seconds.
pub fn integrate(
    state0: &GasState,
    model: &RateModel,
    duration: f64,
    control: &IntegrationControl,
) -> Result<Trajectory> {
    control.validate()?;
    if !state0.is_valid() {
        return Err(Error::param("state0", "occupations must be finite and within bounds"));
    }
    let mut stepper = Stepper::new(model, state0.to_vec(), *control, state0.clone());
    while stepper.t < duration {
        stepper.step(duration)?;
    }
    Ok(stepper.finish())
}

/// Runs from the vacuum until the residual stalls below `control.stall_criterion`.
pub fn steady_state(system: &GasSystem, control: &IntegrationControl) -> Result<Trajectory> {
    control.validate()?;
    let model = system.rate_model()?;
    relax(&system.vacuum(), &model, control)
}

/// Coordinates the implicit solver works in. For an exchange-symmetric model
/// and initial state only one member of each `V ↔ H` pair is solved for, so
/// the returned state is symmetric bit for bit.
struct Reduction {
    rows: Vec<usize>,
    groups: Vec<Vec<usize>>,
}

impl Reduction {
    fn new(model: &RateModel, y0: &[f64]) -> Self {
        let l = model.n_levels();
        let kb = model.n_bins();
        let symmetric_start = (0..l).all(|n| y0[2 * n] == y0[2 * n + 1])
            && (0..kb).all(|k| y0[2 * l + k] == y0[2 * l + model.mirror_bin(k)]);
        if model.is_exchange_symmetric() && symmetric_start {
            let mut rows = Vec::new();
            let mut groups = Vec::new();
            for n in 0..l {
                rows.push(2 * n);
                groups.push(vec![2 * n, 2 * n + 1]);
            }
            for k in 0..kb {
                let m = model.mirror_bin(k);
                if k < m {
                    rows.push(2 * l + k);
                    groups.push(vec![2 * l + k, 2 * l + m]);
                }
            }
            Self { rows, groups }
        } else {
            let dim = model.dim();
            Self {
                rows: (0..dim).collect(),
                groups: (0..dim).map(|i| vec![i]).collect(),
            }
        }
    }

    fn dim(&self) -> usize {
        self.rows.len()
    }

    fn restrict(&self, y: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|&r| y[r]).collect()
    }

    fn expand(&self, z: &[f64], y: &mut [f64]) {
        for (zj, group) in z.iter().zip(&self.groups) {
            for &c in group {
                y[c] = *zj;
            }
        }
    }

    fn reduce_jacobian(&self, jac: &[f64], full_dim: usize) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| {
            let row = self.rows[i] * full_dim;
            self.groups[j].iter().map(|&c| jac[row + c]).sum()
        })
    }
}

/// Linearly implicit Euler steps in time with a step size that grows as the
/// residual falls, starting from `state0`.
///
/// Each step solves `(I/h - J) Δ = f(y)`. Steps that leave the physical
/// domain are retried with a smaller `h`. The final state is a fixed point
/// of the rate equations to within `control.stall_criterion`.
pub fn relax(state0: &GasState, model: &RateModel, control: &IntegrationControl) -> Result<Trajectory> {
    control.validate()?;
    if !state0.is_valid() {
        return Err(Error::param("state0", "occupations must be finite and within bounds"));
    }
    let dim = model.dim();
    let mut y = state0.to_vec();
    let red = Reduction::new(model, &y);
    let mut f = vec![0.0; dim];
    model.derivative(&y, &mut f);
    let mut residual = weighted_residual(model, control, &y, &f);
    let mut jac = vec![0.0; dim * dim];
    let mut y_new = vec![0.0; dim];
    let mut f_new = vec![0.0; dim];
    let mut h = (1e-3 / model.rate_scale()).min(control.max_step);
    let mut t = 0.0;
    let (mut accepted, mut rejected) = (0usize, 0usize);
    let unpack = |y: &[f64]| state0.with_values(y);
    loop {
        if residual < control.stall_criterion {
            return Ok(Trajectory {
                state: unpack(&y),
                time: t,
                accepted_steps: accepted,
                rejected_steps: rejected,
                residual,
            });
        }
        if t >= control.max_time {
            return Err(Error::NonConvergence {
                t,
                residual,
                state: Box::new(unpack(&y)),
            });
        }
        model.jacobian(&y, &mut jac);
        let j_red = red.reduce_jacobian(&jac, dim);
        let rhs = DVector::from_vec(red.restrict(&f));
        let z = red.restrict(&y);
        loop {
            if h <= f64::EPSILON * t.max(f64::MIN_POSITIVE) || h < 1e-300 {
                return Err(Error::Stiffness {
                    t,
                    h,
                    state: Box::new(unpack(&y)),
                });
            }
            let mut m = -j_red.clone();
            for i in 0..red.dim() {
                m[(i, i)] += 1.0 / h;
            }
            let step = m.lu().solve(&rhs);
            let ok = match step {
                Some(delta) => {
                    let z_new: Vec<f64> = z.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
                    y_new.copy_from_slice(&y);
                    red.expand(&z_new, &mut y_new);
                    in_domain(model, &y_new)
                }
                None => false,
            };
            if ok {
                break;
            }
            h *= 0.25;
            rejected += 1;
        }
        model.derivative(&y_new, &mut f_new);
        let r_new = weighted_residual(model, control, &y_new, &f_new);
        t += h;
        accepted += 1;
        let growth = if r_new > 0.0 { residual / r_new } else { 10.0 };
        h = (h * growth.clamp(0.2, 10.0)).min(control.max_step);
        std::mem::swap(&mut y, &mut y_new);
        std::mem::swap(&mut f, &mut f_new);
        residual = r_new;
    }
}

fn in_domain(model: &RateModel, y: &[f64]) -> bool {
    let split = 2 * model.n_levels();
    let rho = model.total_per_bin();
    y[..split].iter().all(|v| *v >= 0.0 && v.is_finite())
        && y[split..].iter().all(|v| *v >= 0.0 && *v <= rho)
}

fn weighted_residual(model: &RateModel, control: &IntegrationControl, y: &[f64], f: &[f64]) -> f64 {
    let r = model.rate_scale();
    y.iter()
        .zip(f)
        .map(|(y, f)| f.abs() / (r * (y.abs() + control.abs_tol)))
        .fold(0.0, f64::max)
}

impl Stepper<'_> {
    fn finish(self) -> Trajectory {
        let residual = self.residual();
        Trajectory {
            state: self.unpack(),
            time: self.t,
            accepted_steps: self.accepted,
            rejected_steps: self.rejected,
            residual,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub critical_power: f64,
    pub bracket: (f64, f64),
    pub ground_occupations_at_threshold: (f64, f64),
}

/// Which population the threshold criterion watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdCriterion {
    /// Whichever ground polarization holds the larger share of its own photons.
    Leading,
    /// Ground H mode against all H photons.
    Horizontal,
    /// Ground V mode against all V photons.
    Vertical,
}

impl ThresholdCriterion {
    pub fn fraction(self, state: &GasState) -> f64 {
        let share = |pol: Polarization| {
            let total = state.photons_in(pol);
            if total > 0.0 {
                state.photons[0][pol.index()] / total
            } else {
                0.0
            }
        };
        match self {
            ThresholdCriterion::Leading => share(Polarization::V).max(share(Polarization::H)),
            ThresholdCriterion::Vertical => share(Polarization::V),
            ThresholdCriterion::Horizontal => share(Polarization::H),
        }
    }
}

/// Threshold search settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSearch {
    /// Criterion value `θ_c`.
    pub fraction: f64,
    /// Search range, W.
    pub low: f64,
    pub high: f64,
    /// Relative bracket width at which bisection stops.
    pub rel_width: f64,
}

impl ThresholdSearch {
    pub fn new(low: f64, high: f64) -> Self {
        Self {
            fraction: THRESHOLD_FRACTION,
            low,
            high,
            rel_width: 1e-6,
        }
    }
}

fn criterion_met(
    system: &GasSystem,
    stokes: StokesVector,
    power: f64,
    criterion: ThresholdCriterion,
    search: &ThresholdSearch,
    control: &IntegrationControl,
) -> Result<(bool, GasState)> {
    let traj = steady_state(&system.with_pump(power, stokes), control)?;
    let met = criterion.fraction(&traj.state) >= search.fraction;
    Ok((met, traj.state))
}

/// Bisection on pump power for the first power at which `criterion` holds.
pub fn threshold_for(
    system: &GasSystem,
    stokes: StokesVector,
    criterion: ThresholdCriterion,
    search: &ThresholdSearch,
    control: &IntegrationControl,
) -> Result<ThresholdResult> {
    if !(search.low > 0.0 && search.high > search.low) {
        return Err(Error::param("threshold range", "need 0 < low < high"));
    }
    if !(search.rel_width > 0.0) {
        return Err(Error::param("rel_width", "must be positive"));
    }
    let no_threshold = || Error::NoThreshold {
        low: search.low,
        high: search.high,
    };
    let (met_low, _) = criterion_met(system, stokes, search.low, criterion, search, control)?;
    if met_low {
        return Err(no_threshold());
    }
    let (met_high, mut state_high) =
        criterion_met(system, stokes, search.high, criterion, search, control)?;
    if !met_high {
        return Err(no_threshold());
    }
    let (mut lo, mut hi) = (search.low, search.high);
    while hi - lo > search.rel_width * hi {
        let mid = 0.5 * (lo + hi);
        let (met, state) = criterion_met(system, stokes, mid, criterion, search, control)?;
        if met {
            hi = mid;
            state_high = state;
        } else {
            lo = mid;
        }
    }
    let [v, h] = state_high.ground();
    Ok(ThresholdResult {
        critical_power: hi,
        bracket: (lo, hi),
        ground_occupations_at_threshold: (v, h),
    })
}

/// Condensation threshold of the ground level as a whole.
pub fn find_threshold(
    system: &GasSystem,
    pump_stokes: StokesVector,
    search: &ThresholdSearch,
    control: &IntegrationControl,
) -> Result<ThresholdResult> {
    threshold_for(system, pump_stokes, ThresholdCriterion::Leading, search, control)
}

/// Threshold of the ground mode polarized orthogonally to the pump's linear axis.
///
/// For pumps whose axis is closer to horizontal the vertical mode is watched.
pub fn second_threshold(
    system: &GasSystem,
    pump_stokes: StokesVector,
    search: &ThresholdSearch,
    control: &IntegrationControl,
) -> Result<ThresholdResult> {
    let criterion = if pump_stokes.s1 >= 0.0 {
        ThresholdCriterion::Horizontal
    } else {
        ThresholdCriterion::Vertical
    };
    threshold_for(system, pump_stokes, criterion, search, control)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParameterFile;

    fn small(levels: usize, bins: usize, d_rot: f64) -> (GasSystem, IntegrationControl, ThresholdSearch) {
        let mut p = ParameterFile::shipped();
        p.ladder.n_levels = levels;
        let scale = p.reservoir.n_bins as f64 / bins as f64;
        p.reservoir.n_bins = bins;
        p.reservoir.d_rot = d_rot;
        p.rates.b_absorb_0 *= scale;
        p.pump.conversion *= scale;
        (p.system().unwrap(), p.integration_control(), p.threshold_search())
    }

    fn excited_start(system: &GasSystem) -> GasState {
        let mut s = system.vacuum();
        let rho = s.reservoir.total_per_bin;
        for (k, x) in s.reservoir.excited.iter_mut().enumerate() {
            *x = rho * (0.1 + 0.3 * (k as f64 * 0.7).sin().abs());
        }
        for (n, level) in s.photons.iter_mut().enumerate() {
            *level = [10.0 / (n + 1) as f64, 3.0 / (n + 1) as f64];
        }
        s
    }

    #[test]
    fn control_rejects_non_positive_settings() {
        let ok = IntegrationControl::default();
        assert!(ok.validate().is_ok());
        for bad in [
            IntegrationControl { rel_tol: 0.0, ..ok },
            IntegrationControl { abs_tol: -1.0, ..ok },
            IntegrationControl { max_time: 0.0, ..ok },
            IntegrationControl { stall_criterion: f64::NAN, ..ok },
            IntegrationControl { max_step: 0.0, ..ok },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn closed_system_conserves_excitation() {
        let (mut system, control, _) = small(6, 12, 1e9);
        system.params.kappa = 0.0;
        system.params.gamma_down = 0.0;
        let model = system.rate_model().unwrap();
        let s0 = excited_start(&system);
        let traj = integrate(&s0, &model, 2e-9, &control).unwrap();
        let (a, b) = (s0.total_excitation(), traj.state.total_excitation());
        assert!(((b - a) / a).abs() < 1e-10, "{a} -> {b}");
        assert!(traj.accepted_steps > 0);
    }

    #[test]
    fn integration_stays_in_domain() {
        let (system, control, _) = small(6, 12, 1e9);
        let system = system.with_pump(20.0, StokesVector::vertical());
        let model = system.rate_model().unwrap();
        let traj = integrate(&system.vacuum(), &model, 2e-8, &control).unwrap();
        assert!(traj.state.is_valid());
        assert!(traj.state.photons.iter().flatten().all(|v| *v >= 0.0));
        assert!((traj.time - 2e-8).abs() < 1e-20);
    }

    #[test]
    fn relaxation_matches_long_integration() {
        let (system, control, _) = small(6, 12, 1e9);
        let system = system.with_pump(20.0, StokesVector::new(1.0, 0.6, 0.0, 0.8));
        let model = system.rate_model().unwrap();
        let fixed = relax(&system.vacuum(), &model, &control).unwrap();
        let long = integrate(&system.vacuum(), &model, 4e-7, &control).unwrap();
        for (a, b) in fixed.state.to_vec().iter().zip(long.state.to_vec()) {
            assert!((a - b).abs() <= 1e-5 * (a.abs() + 1e-3), "{a} vs {b}");
        }
        assert!(fixed.residual < control.stall_criterion);
    }

    #[test]
    fn asymmetric_start_is_not_symmetrized() {
        let (system, control, _) = small(6, 12, 1e9);
        let model = system.rate_model().unwrap().with_clamped_reservoir();
        assert!(model.is_exchange_symmetric());
        let s0 = excited_start(&system);
        let fixed = relax(&s0, &model, &control).unwrap();
        let long = integrate(&s0, &model, 1e-8, &control).unwrap();
        for (a, b) in fixed.state.photons.iter().flatten().zip(long.state.photons.iter().flatten()) {
            assert!((a - b).abs() <= 1e-6 * a.abs(), "{a} vs {b}");
        }
        assert_eq!(fixed.state.reservoir, s0.reservoir);
    }

    #[test]
    fn circular_pump_gives_identical_polarizations() {
        let (system, control, _) = small(8, 16, 2.5e11);
        for power in [1.0, 5.0, 50.0] {
            let traj = steady_state(&system.with_pump(power, StokesVector::right_circular()), &control).unwrap();
            for level in &traj.state.photons {
                assert_eq!(level[0].to_bits(), level[1].to_bits());
            }
        }
    }

    #[test]
    fn bisection_agrees_with_dense_scan() {
        let (system, control, search) = small(8, 16, 2.5e11);
        let pump = StokesVector::vertical();
        let t = find_threshold(&system, pump, &search, &control).unwrap();
        assert!(t.bracket.0 < t.critical_power && t.bracket.1 == t.critical_power);
        assert!((t.bracket.1 - t.bracket.0) <= search.rel_width * t.critical_power);
        let fraction = |p: f64| {
            let s = steady_state(&system.with_pump(p, pump), &control).unwrap().state;
            ThresholdCriterion::Leading.fraction(&s)
        };
        let scan: Vec<f64> = (0..=40).map(|i| t.critical_power * (0.8 + 0.01 * i as f64)).collect();
        let first = scan.iter().copied().find(|p| fraction(*p) >= search.fraction).unwrap();
        assert!(first >= t.critical_power && first - t.critical_power <= 0.0101 * t.critical_power);
        assert!(fraction(t.bracket.0) < search.fraction);
    }

    #[test]
    fn empty_range_reports_no_threshold() {
        let (system, control, search) = small(8, 16, 2.5e11);
        let low = ThresholdSearch { high: search.low * 2.0, ..search };
        assert!(matches!(
            find_threshold(&system, StokesVector::vertical(), &low, &control),
            Err(Error::NoThreshold { .. })
        ));
        assert!(find_threshold(&system, StokesVector::vertical(), &ThresholdSearch::new(2.0, 1.0), &control).is_err());
    }

    #[test]
    fn second_threshold_ordering() {
        let (system, control, search) = small(8, 16, 2.5e11);
        let first = find_threshold(&system, StokesVector::vertical(), &search, &control).unwrap();
        let second = second_threshold(&system, StokesVector::vertical(), &search, &control).unwrap();
        assert!(second.critical_power > first.critical_power);
        let c = StokesVector::right_circular();
        let a = find_threshold(&system, c, &search, &control).unwrap();
        let b = second_threshold(&system, c, &search, &control).unwrap();
        assert_eq!(a.critical_power, b.critical_power);
    }
}
