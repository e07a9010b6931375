//! Cavity mode ladder, orientation-resolved dye reservoir and the rate
//! equations coupling them.
//!
//! Photons live in a cut-off two-dimensional harmonic ladder: level `n`
//! has `n + 1` transverse modes and each mode comes in a vertical and a
//! horizontal polarization. Levels are tracked as aggregates, so the
//! spontaneous term of level `n` is weighted by its degeneracy.
//!
//! Dye molecules are two-level dipoles binned by their orientation `θ` in
//! the transverse plane (`θ = 0` is vertical). A dipole couples to the
//! vertical modes with `cos²θ` and to the horizontal ones with `sin²θ`.
//! Emission and absorption coefficients are tied by the Kennard-Stepanov
//! Boltzmann factor of the level's detuning from the zero-phonon line.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stokes::StokesVector;

pub const HBAR: f64 = 1.054_571_817e-34;
pub const K_B: f64 = 1.380_649e-23;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarization {
    V,
    H,
}

impl Polarization {
    pub const BOTH: [Polarization; 2] = [Polarization::V, Polarization::H];

    pub fn index(self) -> usize {
        match self {
            Polarization::V => 0,
            Polarization::H => 1,
        }
    }

    pub fn orthogonal(self) -> Self {
        match self {
            Polarization::V => Polarization::H,
            Polarization::H => Polarization::V,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anisotropy {
    /// `κ_H / κ_V`.
    pub loss_ratio_h_over_v: f64,
    /// Energy of the H ground mode above the V ground mode, J.
    pub energy_splitting: f64,
}

impl Default for Anisotropy {
    fn default() -> Self {
        Self {
            loss_ratio_h_over_v: 1.0,
            energy_splitting: 0.0,
        }
    }
}

impl Anisotropy {
    pub fn is_symmetric(&self) -> bool {
        self.loss_ratio_h_over_v == 1.0 && self.energy_splitting == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeLadder {
    /// Angular frequency between neighbouring transverse levels, rad/s.
    pub trap_spacing: f64,
    /// Wavelength of the ground (cut-off) mode, nm.
    pub cutoff_wavelength: f64,
    /// Level energies relative to the ground mode, J.
    pub level_energy: Vec<f64>,
    pub degeneracy: Vec<usize>,
    pub anisotropy: Anisotropy,
}

impl ModeLadder {
    pub fn n_levels(&self) -> usize {
        self.level_energy.len()
    }

    /// Energy of a single mode of level `n` in polarization `pol`, J above the V ground mode.
    pub fn mode_energy(&self, n: usize, pol: Polarization) -> f64 {
        let split = if n == 0 && pol == Polarization::H {
            self.anisotropy.energy_splitting
        } else {
            0.0
        };
        self.level_energy[n] + split
    }

    pub fn wavelength_nm(&self, n: usize) -> f64 {
        let omega_c = 2.0 * PI * SPEED_OF_LIGHT / (self.cutoff_wavelength * 1e-9);
        let omega = omega_c + n as f64 * self.trap_spacing;
        2.0 * PI * SPEED_OF_LIGHT / omega * 1e9
    }

    /// Number of single-particle states including both polarizations.
    pub fn state_count(&self) -> usize {
        self.degeneracy.iter().map(|g| 2 * g).sum()
    }
}

pub fn build_mode_ladder(
    trap_spacing: f64,
    cutoff_wavelength: f64,
    n_levels: usize,
    anisotropy: Anisotropy,
) -> Result<ModeLadder> {
    if n_levels < 2 {
        return Err(Error::param(
            "n_levels",
            "need the ground level and at least one thermal level",
        ));
    }
    if !(trap_spacing > 0.0) {
        return Err(Error::param("trap_spacing", "must be positive"));
    }
    if !(cutoff_wavelength > 0.0) {
        return Err(Error::param("cutoff_wavelength", "must be positive"));
    }
    if !(anisotropy.loss_ratio_h_over_v > 0.0) {
        return Err(Error::param("loss_ratio_h_over_v", "must be positive"));
    }
    if !anisotropy.energy_splitting.is_finite() {
        return Err(Error::param("energy_splitting", "must be finite"));
    }
    let quantum = HBAR * trap_spacing;
    Ok(ModeLadder {
        trap_spacing,
        cutoff_wavelength,
        level_energy: (0..n_levels).map(|n| n as f64 * quantum).collect(),
        degeneracy: (0..n_levels).map(|n| n + 1).collect(),
        anisotropy,
    })
}

/// Emission-to-absorption ratio `exp(-ħΔ / k_B T)` for a detuning `Δ` (rad/s)
/// from the zero-phonon line.
pub fn ks_ratio(detuning: f64, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::param("temperature", "must be positive"));
    }
    Ok((-HBAR * detuning / (K_B * temperature)).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MolecularReservoir {
    pub n_bins: usize,
    pub excited: Vec<f64>,
    pub total_per_bin: f64,
    /// Rotational diffusion constant, 1/s.
    pub d_rot: f64,
    pub temperature: f64,
}

impl MolecularReservoir {
    pub fn unexcited(n_bins: usize, total_per_bin: f64, d_rot: f64, temperature: f64) -> Result<Self> {
        if n_bins < 3 {
            return Err(Error::param("n_bins", "need at least 3 orientation bins"));
        }
        if !(total_per_bin > 0.0) {
            return Err(Error::param("total_per_bin", "must be positive"));
        }
        if !(d_rot >= 0.0) {
            return Err(Error::param("d_rot", "must be non-negative"));
        }
        if !(temperature > 0.0) {
            return Err(Error::param("temperature", "must be positive"));
        }
        Ok(Self {
            n_bins,
            excited: vec![0.0; n_bins],
            total_per_bin,
            d_rot,
            temperature,
        })
    }

    pub fn bin_width(&self) -> f64 {
        PI / self.n_bins as f64
    }

    pub fn theta(&self, k: usize) -> f64 {
        bin_angle(k, self.n_bins)
    }

    pub fn total_excited(&self) -> f64 {
        self.excited.iter().sum()
    }
}

pub fn bin_angle(k: usize, n_bins: usize) -> f64 {
    k as f64 * PI / n_bins as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pump {
    pub power: f64,
    pub stokes: StokesVector,
    /// Molecular excitations per joule of pump energy.
    pub conversion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateParameters {
    /// Absorption coefficient per cavity photon per unit ground-state density, 1/s.
    pub b_absorb_0: f64,
    /// Detuning of each level from the dye zero-phonon line, rad/s.
    pub detuning: Vec<f64>,
    /// Loss rate of the vertical modes, 1/s.
    pub kappa: f64,
    /// Decay of excited molecules outside the cavity modes, 1/s.
    pub gamma_down: f64,
    pub pump: Pump,
}

impl RateParameters {
    pub fn validate(&self, ladder: &ModeLadder) -> Result<()> {
        for (name, v) in [
            ("b_absorb_0", self.b_absorb_0),
            ("kappa", self.kappa),
            ("gamma_down", self.gamma_down),
            ("pump.power", self.pump.power),
            ("pump.conversion", self.pump.conversion),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("{v} is not a non-negative rate")));
            }
        }
        if self.detuning.len() != ladder.n_levels() {
            return Err(Error::param(
                "detuning",
                format!(
                    "{} detunings for {} levels",
                    self.detuning.len(),
                    ladder.n_levels()
                ),
            ));
        }
        self.pump.stokes.validate()
    }

    pub fn with_pump(&self, power: f64, stokes: StokesVector) -> Self {
        let mut p = self.clone();
        p.pump.power = power;
        p.pump.stokes = stokes;
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasState {
    /// Mean occupation of each level, `[V, H]`.
    pub photons: Vec<[f64; 2]>,
    pub reservoir: MolecularReservoir,
}

impl GasState {
    pub fn vacuum(n_levels: usize, reservoir: MolecularReservoir) -> Self {
        Self {
            photons: vec![[0.0; 2]; n_levels],
            reservoir,
        }
    }

    pub fn n_levels(&self) -> usize {
        self.photons.len()
    }

    pub fn total_photons(&self) -> f64 {
        self.photons.iter().map(|p| p[0] + p[1]).sum()
    }

    pub fn photons_in(&self, pol: Polarization) -> f64 {
        self.photons.iter().map(|p| p[pol.index()]).sum()
    }

    pub fn ground(&self) -> [f64; 2] {
        self.photons[0]
    }

    pub fn thermal_photons(&self) -> f64 {
        self.photons[1..].iter().map(|p| p[0] + p[1]).sum()
    }

    /// Photons plus excited molecules.
    pub fn total_excitation(&self) -> f64 {
        self.total_photons() + self.reservoir.total_excited()
    }

    pub fn is_valid(&self) -> bool {
        self.photons
            .iter()
            .flatten()
            .all(|v| v.is_finite() && *v >= 0.0)
            && self.reservoir.excited.iter().all(|x| {
                x.is_finite() && *x >= 0.0 && *x <= self.reservoir.total_per_bin
            })
    }

    pub fn dim(&self) -> usize {
        2 * self.photons.len() + self.reservoir.n_bins
    }

    /// Packs `[N_0V, N_0H, N_1V, …, x_0, x_1, …]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.dim());
        y.extend(self.photons.iter().flatten());
        y.extend(&self.reservoir.excited);
        y
    }

    pub fn load(&mut self, y: &[f64]) {
        let l = self.photons.len();
        for (n, p) in self.photons.iter_mut().enumerate() {
            *p = [y[2 * n], y[2 * n + 1]];
        }
        self.reservoir.excited.copy_from_slice(&y[2 * l..]);
    }

    pub fn with_values(&self, y: &[f64]) -> Self {
        let mut s = self.clone();
        s.load(y);
        s
    }
}

/// Pump rate into each orientation bin, 1/s.
///
/// The linear part of the pump excites dipoles with a `cos²` law about its
/// axis; the circular part averages out over an optical cycle and pumps all
/// orientations equally.
pub fn pump_profile(pump: &Pump, n_bins: usize) -> Result<Vec<f64>> {
    if !(pump.power >= 0.0) {
        return Err(Error::InvalidPump("negative power".into()));
    }
    pump.stokes.validate()?;
    if pump.power == 0.0 {
        return Ok(vec![0.0; n_bins]);
    }
    if !(pump.stokes.s0 > 0.0) {
        return Err(Error::InvalidPump("s0 = 0 with non-zero power".into()));
    }
    let total = pump.power * pump.conversion;
    let p_lin = pump.stokes.linear_dop().min(1.0);
    let axis = pump.stokes.linear_axis();
    Ok((0..n_bins)
        .map(|k| {
            let theta = bin_angle(k, n_bins);
            total * (1.0 + p_lin * (2.0 * (theta - axis)).cos()) / n_bins as f64
        })
        .collect())
}

/// Projection of a dipole at `theta` onto the polarization's cavity modes.
pub fn emission_coupling(theta: f64, pol: Polarization) -> f64 {
    match pol {
        Polarization::V => theta.cos().powi(2),
        Polarization::H => theta.sin().powi(2),
    }
}

/// Dense periodic second-difference operator scaled by `d_rot / Δθ²`.
pub fn diffusion_generator(n_bins: usize, d_rot: f64) -> Result<Vec<Vec<f64>>> {
    if n_bins < 3 {
        return Err(Error::param("n_bins", "need at least 3 orientation bins"));
    }
    if !(d_rot >= 0.0) {
        return Err(Error::param("d_rot", "must be non-negative"));
    }
    let c = d_rot / (PI / n_bins as f64).powi(2);
    let mut m = vec![vec![0.0; n_bins]; n_bins];
    for (k, row) in m.iter_mut().enumerate() {
        row[k] = -2.0 * c;
        row[(k + 1) % n_bins] += c;
        row[(k + n_bins - 1) % n_bins] += c;
    }
    Ok(m)
}

/// Precomputed coefficients of the rate equations for one parameter set.
///
/// The state is packed as in [`GasState::to_vec`]. Sums over orientation bins
/// for the H modes run in an order shifted by `n_bins / 2`, so for an even
/// bin count the V and H channels are evaluated with identical floating-point
/// operations whenever the state is symmetric under `V ↔ H, θ → θ + π/2`.
#[derive(Debug, Clone)]
pub struct RateModel {
    n_levels: usize,
    n_bins: usize,
    coupling: [Vec<f64>; 2],
    degeneracy: Vec<f64>,
    b21: [Vec<f64>; 2],
    b12: f64,
    kappa: [f64; 2],
    gamma_down: f64,
    total_per_bin: f64,
    diffusion: f64,
    pump: Vec<f64>,
    h_offset: usize,
    clamp_reservoir: bool,
}

impl RateModel {
    pub fn new(ladder: &ModeLadder, reservoir: &MolecularReservoir, params: &RateParameters) -> Result<Self> {
        params.validate(ladder)?;
        let n_bins = reservoir.n_bins;
        if n_bins < 3 {
            return Err(Error::param("n_bins", "need at least 3 orientation bins"));
        }
        let temperature = reservoir.temperature;
        let split_detuning = ladder.anisotropy.energy_splitting / HBAR;
        let mut b21 = [Vec::new(), Vec::new()];
        for pol in Polarization::BOTH {
            b21[pol.index()] = params
                .detuning
                .iter()
                .enumerate()
                .map(|(n, &d)| {
                    let d = if n == 0 && pol == Polarization::H {
                        d + split_detuning
                    } else {
                        d
                    };
                    ks_ratio(d, temperature).map(|r| params.b_absorb_0 * r)
                })
                .collect::<Result<_>>()?;
        }
        let g_v: Vec<f64> = (0..n_bins)
            .map(|k| emission_coupling(bin_angle(k, n_bins), Polarization::V))
            .collect();
        let (g_h, h_offset) = if n_bins.is_multiple_of(2) {
            let half = n_bins / 2;
            ((0..n_bins).map(|k| g_v[(k + half) % n_bins]).collect(), half)
        } else {
            (
                (0..n_bins)
                    .map(|k| emission_coupling(bin_angle(k, n_bins), Polarization::H))
                    .collect(),
                0,
            )
        };
        Ok(Self {
            n_levels: ladder.n_levels(),
            n_bins,
            coupling: [g_v, g_h],
            degeneracy: ladder.degeneracy.iter().map(|&g| g as f64).collect(),
            b21,
            b12: params.b_absorb_0,
            kappa: [
                params.kappa,
                params.kappa * ladder.anisotropy.loss_ratio_h_over_v,
            ],
            gamma_down: params.gamma_down,
            total_per_bin: reservoir.total_per_bin,
            diffusion: reservoir.d_rot / reservoir.bin_width().powi(2),
            pump: pump_profile(&params.pump, n_bins)?,
            h_offset,
            clamp_reservoir: false,
        })
    }

    /// Freezes the reservoir: its derivative is reported as zero.
    pub fn with_clamped_reservoir(mut self) -> Self {
        self.clamp_reservoir = true;
        self
    }

    pub fn dim(&self) -> usize {
        2 * self.n_levels + self.n_bins
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn kappa(&self) -> [f64; 2] {
        self.kappa
    }

    pub fn pump(&self) -> &[f64] {
        &self.pump
    }

    pub fn total_per_bin(&self) -> f64 {
        self.total_per_bin
    }

    /// Slowest intrinsic loss rate of the model, used to make residuals dimensionless.
    pub fn rate_scale(&self) -> f64 {
        let s = self.kappa[0].min(self.kappa[1]).min(self.gamma_down);
        if s > 0.0 {
            s
        } else {
            self.kappa[0].max(self.kappa[1]).max(self.gamma_down).max(f64::MIN_POSITIVE)
        }
    }

    pub fn b21(&self, n: usize, pol: Polarization) -> f64 {
        self.b21[pol.index()][n]
    }

    pub fn b12(&self) -> f64 {
        self.b12
    }

    pub fn coupling(&self, pol: Polarization) -> &[f64] {
        &self.coupling[pol.index()]
    }

    /// `(Σ g_u x_k, Σ g_u (ρ - x_k))` for polarization index `u`.
    fn reservoir_overlap(&self, u: usize, x: &[f64]) -> (f64, f64) {
        let g = &self.coupling[u];
        let offset = if u == 1 { self.h_offset } else { 0 };
        let mut excited = 0.0;
        let mut ground = 0.0;
        for k in (offset..self.n_bins).chain(0..offset) {
            excited += g[k] * x[k];
            ground += g[k] * (self.total_per_bin - x[k]);
        }
        (excited, ground)
    }

    /// True when the model is invariant under `V ↔ H` combined with a
    /// half-turn bin shift, evaluated bit for bit.
    pub fn is_exchange_symmetric(&self) -> bool {
        if self.h_offset == 0 || self.kappa[0] != self.kappa[1] || self.b21[0] != self.b21[1] {
            return false;
        }
        let k = self.n_bins;
        (0..k).all(|i| self.pump[i] == self.pump[(i + self.h_offset) % k])
    }

    /// Bin paired with `k` by the exchange symmetry.
    pub fn mirror_bin(&self, k: usize) -> usize {
        (k + self.h_offset) % self.n_bins
    }

    /// Dense Jacobian `∂(dy/dt)/∂y` at `y`, written row-major into `jac`.
    pub fn jacobian(&self, y: &[f64], jac: &mut [f64]) {
        let l = self.n_levels;
        let kb = self.n_bins;
        let dim = self.dim();
        assert_eq!(jac.len(), dim * dim);
        jac.fill(0.0);
        let (photons, x) = y.split_at(2 * l);
        let rho = self.total_per_bin;
        let mut emit = [0.0; 2];
        let mut absorb = [0.0; 2];
        for u in 0..2 {
            let (excited, ground) = self.reservoir_overlap(u, x);
            let g = &self.coupling[u];
            for n in 0..l {
                let row = 2 * n + u;
                let occ = photons[row];
                let b21 = self.b21[u][n];
                jac[row * dim + row] = -self.kappa[u] + b21 * excited - self.b12 * ground;
                let w = b21 * (occ + self.degeneracy[n]) + self.b12 * occ;
                for k in 0..kb {
                    jac[row * dim + 2 * l + k] = g[k] * w;
                }
                emit[u] += b21 * (occ + self.degeneracy[n]);
                absorb[u] += self.b12 * occ;
            }
        }
        if self.clamp_reservoir {
            return;
        }
        for k in 0..kb {
            let row = (2 * l + k) * dim;
            let xk = x[k];
            let mut diag = -self.pump[k] / rho - self.gamma_down - 2.0 * self.diffusion;
            for u in 0..2 {
                let g = self.coupling[u][k];
                diag -= g * (emit[u] + absorb[u]);
                for n in 0..l {
                    jac[row + 2 * n + u] = -g * (self.b21[u][n] * xk - self.b12 * (rho - xk));
                }
            }
            jac[row + 2 * l + k] += diag;
            jac[row + 2 * l + (k + 1) % kb] += self.diffusion;
            jac[row + 2 * l + (k + kb - 1) % kb] += self.diffusion;
        }
    }

    /// Writes `dy/dt` for the packed state `y`.
    pub fn derivative(&self, y: &[f64], dy: &mut [f64]) {
        let l = self.n_levels;
        let (photons, x) = y.split_at(2 * l);
        let (dphotons, dx) = dy.split_at_mut(2 * l);

        // Stimulated-plus-spontaneous emission and absorption rates seen by one molecule.
        let mut emit = [0.0; 2];
        let mut absorb = [0.0; 2];
        for u in 0..2 {
            let (excited, ground) = self.reservoir_overlap(u, x);
            let b21 = &self.b21[u];
            let mut e = 0.0;
            let mut a = 0.0;
            for n in 0..l {
                let occ = photons[2 * n + u];
                let g = self.degeneracy[n];
                dphotons[2 * n + u] = -self.kappa[u] * occ + b21[n] * excited * (occ + g)
                    - self.b12 * ground * occ;
                e += b21[n] * (occ + g);
                a += self.b12 * occ;
            }
            emit[u] = e;
            absorb[u] = a;
        }

        if self.clamp_reservoir {
            dx.fill(0.0);
            return;
        }
        let rho = self.total_per_bin;
        let k_bins = self.n_bins;
        let [g_v, g_h] = &self.coupling;
        for k in 0..k_bins {
            let xk = x[k];
            let left = if k == 0 { x[k_bins - 1] } else { x[k - 1] };
            let right = if k + 1 == k_bins { x[0] } else { x[k + 1] };
            let exchange_v = g_v[k] * (emit[0] * xk - absorb[0] * (rho - xk));
            let exchange_h = g_h[k] * (emit[1] * xk - absorb[1] * (rho - xk));
            dx[k] = self.pump[k] * (1.0 - xk / rho) - self.gamma_down * xk
                + self.diffusion * (left + right - 2.0 * xk)
                - (exchange_v + exchange_h);
        }
    }
}

/// Everything needed to evaluate the rate equations: ladder, reservoir
/// template (its `excited` field is the initial condition) and rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasSystem {
    pub ladder: ModeLadder,
    pub reservoir: MolecularReservoir,
    pub params: RateParameters,
}

impl GasSystem {
    pub fn rate_model(&self) -> Result<RateModel> {
        RateModel::new(&self.ladder, &self.reservoir, &self.params)
    }

    pub fn with_pump(&self, power: f64, stokes: StokesVector) -> Self {
        Self {
            params: self.params.with_pump(power, stokes),
            ..self.clone()
        }
    }

    pub fn with_anisotropy(&self, anisotropy: Anisotropy) -> Self {
        let mut s = self.clone();
        s.ladder.anisotropy = anisotropy;
        s
    }

    pub fn vacuum(&self) -> GasState {
        let mut reservoir = self.reservoir.clone();
        reservoir.excited.fill(0.0);
        GasState::vacuum(self.ladder.n_levels(), reservoir)
    }
}

/// Time derivative of `state` as a [`GasState`]-shaped value.
pub fn rate_rhs(state: &GasState, ladder: &ModeLadder, params: &RateParameters) -> Result<GasState> {
    let model = RateModel::new(ladder, &state.reservoir, params)?;
    let y = state.to_vec();
    let mut dy = vec![0.0; y.len()];
    model.derivative(&y, &mut dy);
    Ok(state.with_values(&dy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ladder(n: usize) -> ModeLadder {
        build_mode_ladder(9.48e11, 580.0, n, Anisotropy::default()).unwrap()
    }

    fn params(l: &ModeLadder, power: f64, stokes: StokesVector) -> RateParameters {
        RateParameters {
            b_absorb_0: 3e4,
            detuning: (0..l.n_levels())
                .map(|n| -2.0e13 + n as f64 * l.trap_spacing)
                .collect(),
            kappa: 2e9,
            gamma_down: 2.5e8,
            pump: Pump {
                power,
                stokes,
                conversion: 1e14,
            },
        }
    }

    #[test]
    fn ladder_shape() {
        assert!(build_mode_ladder(1e12, 580.0, 1, Anisotropy::default()).is_err());
        assert!(build_mode_ladder(0.0, 580.0, 4, Anisotropy::default()).is_err());
        let l = ladder(10);
        assert_abs_diff_eq!(l.level_energy[3] / l.level_energy[1], 3.0, epsilon = 1e-12);
        assert_eq!(l.level_energy[0], 0.0);
        assert!(l.level_energy.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(l.degeneracy[4], 5);
        let big = ladder(50);
        assert_eq!(big.state_count(), 50 * 51);
        assert!(big.wavelength_nm(49) < big.wavelength_nm(0));
        assert_abs_diff_eq!(big.wavelength_nm(0), 580.0, epsilon = 1e-9);
    }

    #[test]
    fn ks_values() {
        assert_eq!(ks_ratio(0.0, 300.0).unwrap(), 1.0);
        let t = 300.0;
        let d = K_B * t / HBAR * 2f64.ln();
        assert_abs_diff_eq!(ks_ratio(d, t).unwrap(), 0.5, epsilon = 1e-14);
        let oracle = (-1e-22f64 / (K_B * 300.0)).exp();
        assert_abs_diff_eq!(ks_ratio(1e-22 / HBAR, 300.0).unwrap(), oracle, epsilon = 1e-15);
        assert_abs_diff_eq!(oracle, 0.9761, epsilon = 1e-4);
        assert!(ks_ratio(0.0, 0.0).is_err());
    }

    #[test]
    fn pump_profiles() {
        let pump = |stokes| Pump {
            power: 1.0,
            stokes,
            conversion: 64.0,
        };
        let circ = pump_profile(&pump(StokesVector::right_circular()), 64).unwrap();
        assert!(circ.iter().all(|&r| r == circ[0]));
        assert_abs_diff_eq!(circ.iter().sum::<f64>(), 64.0, epsilon = 1e-12);

        let vert = pump_profile(&pump(StokesVector::vertical()), 64).unwrap();
        assert_abs_diff_eq!(vert[32], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(vert[0], 2.0, epsilon = 1e-15);

        let ell = pump_profile(
            &pump(StokesVector::new(1.0, 0.5, 0.0, 3f64.sqrt() / 2.0)),
            64,
        )
        .unwrap();
        let max = ell.iter().cloned().fold(f64::MIN, f64::max);
        let min = ell.iter().cloned().fold(f64::MAX, f64::min);
        assert_abs_diff_eq!(max / min, 3.0, epsilon = 1e-12);

        let dark = Pump {
            power: 1.0,
            stokes: StokesVector::unpolarized(0.0),
            conversion: 1.0,
        };
        assert!(matches!(pump_profile(&dark, 8), Err(Error::InvalidPump(_))));
        let off = Pump { power: 0.0, ..dark };
        assert!(pump_profile(&off, 8).unwrap().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn couplings() {
        assert_eq!(emission_coupling(0.0, Polarization::V), 1.0);
        assert_abs_diff_eq!(emission_coupling(PI / 4.0, Polarization::V), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(emission_coupling(PI / 4.0, Polarization::H), 0.5, epsilon = 1e-15);
        for k in 0..17 {
            let th = bin_angle(k, 17);
            let sum = emission_coupling(th, Polarization::V) + emission_coupling(th, Polarization::H);
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-15);
        }
        for n in [3usize, 8, 64] {
            let mean: f64 = (0..n)
                .map(|k| emission_coupling(bin_angle(k, n), Polarization::V))
                .sum::<f64>()
                / n as f64;
            assert_abs_diff_eq!(mean, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn diffusion_conserves_and_fixes_uniform() {
        assert!(diffusion_generator(2, 1.0).is_err());
        let g = diffusion_generator(64, 3.0).unwrap();
        for row in &g {
            assert_eq!(row.iter().sum::<f64>(), 0.0);
            let applied: f64 = row.iter().map(|a| a * 0.7).sum();
            assert_eq!(applied, 0.0);
        }
    }

    #[test]
    fn diffusion_eigenrate_of_second_harmonic() {
        let d_rot = 2.5e8;
        for n in [16usize, 32, 64, 128] {
            let g = diffusion_generator(n, d_rot).unwrap();
            let v: Vec<f64> = (0..n).map(|k| (2.0 * bin_angle(k, n)).cos()).collect();
            // Rayleigh quotient; the circulant's cos(2θ) vector is an exact eigenvector.
            let gv: Vec<f64> = g.iter().map(|r| r.iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
            let lambda = gv.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>()
                / v.iter().map(|a| a * a).sum::<f64>();
            let dtheta = PI / n as f64;
            let rel = (lambda / (-4.0 * d_rot) - 1.0).abs();
            assert!(rel <= dtheta * dtheta / 2.0, "n = {n}: rel {rel}");
        }
    }

    #[test]
    fn vacuum_is_fixed_point() {
        let l = ladder(5);
        let p = params(&l, 0.0, StokesVector::vertical());
        let res = MolecularReservoir::unexcited(8, 1e4, 1e9, 300.0).unwrap();
        let d = rate_rhs(&GasState::vacuum(5, res), &l, &p).unwrap();
        assert!(d.photons.iter().flatten().all(|&v| v == 0.0));
        assert!(d.reservoir.excited.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spontaneous_term_scales_with_degeneracy() {
        let l = ladder(6);
        let p = params(&l, 0.0, StokesVector::vertical());
        let mut res = MolecularReservoir::unexcited(8, 1e4, 0.0, 300.0).unwrap();
        res.excited.fill(100.0);
        let d = rate_rhs(&GasState::vacuum(6, res.clone()), &l, &p).unwrap();
        let model = RateModel::new(&l, &res, &p).unwrap();
        for n in 0..6 {
            let per_channel = d.photons[n][0] / (l.degeneracy[n] as f64 * model.b21(n, Polarization::V));
            let ground = d.photons[0][0] / model.b21(0, Polarization::V);
            assert_abs_diff_eq!(per_channel, ground, epsilon = 1e-9 * ground);
        }
    }

    #[test]
    fn validation_errors() {
        let l = ladder(5);
        let mut p = params(&l, 1.0, StokesVector::vertical());
        p.detuning.pop();
        assert!(p.validate(&l).is_err());
        let mut p = params(&l, 1.0, StokesVector::vertical());
        p.kappa = -1.0;
        assert!(p.validate(&l).is_err());
        assert!(MolecularReservoir::unexcited(2, 1.0, 0.0, 300.0).is_err());
        assert!(MolecularReservoir::unexcited(8, 0.0, 0.0, 300.0).is_err());
    }
}
