//! Stokes/Mueller calculus for pump preparation and detection.
//!
//! Sign conventions: `s1` is vertical minus horizontal, `s3` is right- minus
//! left-handed circular, and every element angle is measured from the
//! vertical axis. With these choices the two measured polarization
//! strengths are plain component ratios, `s1 / s0` and `s3 / s0`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::ops::{Add, Mul};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Design wavelength of the pump laser optics, nm.
pub const PUMP_WAVELENGTH_NM: f64 = 532.0;

const DOP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StokesVector {
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

impl StokesVector {
    pub const fn new(s0: f64, s1: f64, s2: f64, s3: f64) -> Self {
        Self { s0, s1, s2, s3 }
    }

    pub const fn vertical() -> Self {
        Self::new(1.0, 1.0, 0.0, 0.0)
    }

    pub const fn horizontal() -> Self {
        Self::new(1.0, -1.0, 0.0, 0.0)
    }

    pub const fn right_circular() -> Self {
        Self::new(1.0, 0.0, 0.0, 1.0)
    }

    pub const fn unpolarized(intensity: f64) -> Self {
        Self::new(intensity, 0.0, 0.0, 0.0)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.s0, self.s1, self.s2, self.s3]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new(k * self.s0, k * self.s1, k * self.s2, k * self.s3)
    }

    pub fn polarized_intensity(&self) -> f64 {
        (self.s1 * self.s1 + self.s2 * self.s2 + self.s3 * self.s3).sqrt()
    }

    /// Degree of polarization; zero for a dark beam.
    pub fn dop(&self) -> f64 {
        if self.s0 == 0.0 {
            0.0
        } else {
            self.polarized_intensity() / self.s0
        }
    }

    /// Linear degree of polarization `sqrt(s1² + s2²) / s0`.
    pub fn linear_dop(&self) -> f64 {
        if self.s0 == 0.0 {
            0.0
        } else {
            self.s1.hypot(self.s2) / self.s0
        }
    }

    /// Orientation of the linear part, radians from vertical in `(-π/2, π/2]`.
    pub fn linear_axis(&self) -> f64 {
        0.5 * self.s2.atan2(self.s1)
    }

    /// Checks `s0 ≥ 0` and `|s⃗| ≤ s0` to a relative tolerance of 1e-12.
    pub fn is_physical(&self) -> bool {
        let finite = self.as_array().iter().all(|v| v.is_finite());
        finite
            && self.s0 >= 0.0
            && self.polarized_intensity() <= self.s0 * (1.0 + DOP_TOLERANCE) + f64::MIN_POSITIVE
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_physical() {
            Ok(())
        } else {
            Err(Error::param(
                "stokes",
                format!("unphysical Stokes vector {:?}", self.as_array()),
            ))
        }
    }
}

impl Add for StokesVector {
    type Output = StokesVector;

    fn add(self, rhs: Self) -> Self {
        Self::new(
            self.s0 + rhs.s0,
            self.s1 + rhs.s1,
            self.s2 + rhs.s2,
            self.s3 + rhs.s3,
        )
    }
}

/// Linear and circular polarization strengths of one population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarizationStrengthPair {
    pub p_linear: f64,
    pub p_circular: f64,
}

impl PolarizationStrengthPair {
    pub fn norm(&self) -> f64 {
        self.p_linear.hypot(self.p_circular)
    }
}

fn normalized_difference(a: f64, b: f64) -> Result<f64> {
    let total = a + b;
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::UndefinedPolarization);
    }
    Ok(((a - b) / total).clamp(-1.0, 1.0))
}

/// Linear polarization strength from the vertical and horizontal port intensities.
pub fn linear_strength(n_vertical: f64, n_horizontal: f64) -> Result<f64> {
    normalized_difference(n_vertical, n_horizontal)
}

/// Circular polarization strength from the right- and left-handed port intensities.
pub fn circular_strength(n_rh: f64, n_lh: f64) -> Result<f64> {
    normalized_difference(n_rh, n_lh)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuellerMatrix {
    pub m: [[f64; 4]; 4],
}

impl MuellerMatrix {
    pub const fn identity() -> Self {
        Self {
            m: [
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ],
        }
    }

    /// Linear retarder with retardance `delta` and fast axis at `axis` from vertical.
    pub fn retarder(delta: f64, axis: f64) -> Self {
        let (s, c) = (2.0 * axis).sin_cos();
        let (sd, cd) = delta.sin_cos();
        Self {
            m: [
                [1.0, 0.0, 0.0, 0.0],
                [0.0, c * c + s * s * cd, c * s * (1.0 - cd), -s * sd],
                [0.0, c * s * (1.0 - cd), s * s + c * c * cd, c * sd],
                [0.0, s * sd, -c * sd, cd],
            ],
        }
    }

    /// Ideal linear polarizer with transmission axis at `axis` from vertical.
    pub fn linear_polarizer(axis: f64) -> Self {
        let (s, c) = (2.0 * axis).sin_cos();
        Self {
            m: [
                [0.5, 0.5 * c, 0.5 * s, 0.0],
                [0.5 * c, 0.5 * c * c, 0.5 * c * s, 0.0],
                [0.5 * s, 0.5 * c * s, 0.5 * s * s, 0.0],
                [0.0, 0.0, 0.0, 0.0],
            ],
        }
    }

    pub fn apply(&self, s: StokesVector) -> StokesVector {
        let v = s.as_array();
        let mut out = [0.0; 4];
        for (o, row) in out.iter_mut().zip(&self.m) {
            *o = row.iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        StokesVector::from_array(out)
    }

    /// `self · rhs`: light passes `rhs` first.
    pub fn then_after(&self, rhs: &MuellerMatrix) -> MuellerMatrix {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..4).map(|k| self.m[i][k] * rhs.m[k][j]).sum();
            }
        }
        MuellerMatrix { m }
    }
}

impl Mul for MuellerMatrix {
    type Output = MuellerMatrix;

    fn mul(self, rhs: Self) -> Self {
        self.then_after(&rhs)
    }
}

impl Mul<StokesVector> for MuellerMatrix {
    type Output = StokesVector;

    fn mul(self, rhs: StokesVector) -> StokesVector {
        self.apply(rhs)
    }
}

pub fn apply_element(m: &MuellerMatrix, s: StokesVector) -> StokesVector {
    m.apply(s)
}

/// A zeroth-order waveplate. Retardance scales as `design_wavelength / wavelength`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveplateSpec {
    pub design_retardance: f64,
    pub design_wavelength: f64,
    pub fast_axis_angle: f64,
}

impl WaveplateSpec {
    pub fn new(design_retardance: f64, design_wavelength: f64, fast_axis_angle: f64) -> Result<Self> {
        if !(design_retardance > 0.0 && design_retardance < 2.0 * PI) {
            return Err(Error::param(
                "design_retardance",
                format!("{design_retardance} not in (0, 2π)"),
            ));
        }
        if !(design_wavelength > 0.0) {
            return Err(Error::param("design_wavelength", "must be positive"));
        }
        Ok(Self {
            design_retardance,
            design_wavelength,
            fast_axis_angle,
        })
    }

    pub fn quarter_wave(design_wavelength: f64, fast_axis_angle: f64) -> Self {
        Self {
            design_retardance: FRAC_PI_2,
            design_wavelength,
            fast_axis_angle,
        }
    }

    pub fn half_wave(design_wavelength: f64, fast_axis_angle: f64) -> Self {
        Self {
            design_retardance: PI,
            design_wavelength,
            fast_axis_angle,
        }
    }

    pub fn with_axis(self, fast_axis_angle: f64) -> Self {
        Self {
            fast_axis_angle,
            ..self
        }
    }

    pub fn retardance_at(&self, wavelength: f64) -> f64 {
        self.design_retardance * self.design_wavelength / wavelength
    }
}

pub fn mueller_retarder(spec: &WaveplateSpec, wavelength: f64) -> Result<MuellerMatrix> {
    if !(wavelength > 0.0) {
        return Err(Error::param("wavelength", "must be positive"));
    }
    Ok(MuellerMatrix::retarder(
        spec.retardance_at(wavelength),
        spec.fast_axis_angle,
    ))
}

/// Port intensities `(vertical, horizontal)` behind an ideal polarizing beam splitter.
pub fn pbs_ports(s: StokesVector) -> (f64, f64) {
    let v = (0.5 * (s.s0 + s.s1)).max(0.0);
    let h = (0.5 * (s.s0 - s.s1)).max(0.0);
    (v, h)
}

/// Pump state after vertical polarizer → HWP → QWP, both plates designed at 532 nm.
pub fn prepare_pump(hwp_angle: f64, qwp_angle: f64, power: f64, wavelength: f64) -> Result<StokesVector> {
    if !(power >= 0.0) {
        return Err(Error::param("power", "must be non-negative"));
    }
    let hwp = mueller_retarder(&WaveplateSpec::half_wave(PUMP_WAVELENGTH_NM, hwp_angle), wavelength)?;
    let qwp = mueller_retarder(
        &WaveplateSpec::quarter_wave(PUMP_WAVELENGTH_NM, qwp_angle),
        wavelength,
    )?;
    let chain = qwp * hwp * MuellerMatrix::linear_polarizer(0.0);
    Ok(chain.apply(StokesVector::new(power, power, 0.0, 0.0)))
}

/// Great circle through the right-circular pole: `φ = 0` circular, `φ = ±π/2` vertical/horizontal.
pub fn meridian_state(phi: f64) -> StokesVector {
    let (s, c) = phi.sin_cos();
    StokesVector::new(1.0, s, 0.0, c)
}

/// Projection onto the (linear, circular) measurement plane; `s2` is dropped.
pub fn equatorial_projection(s: StokesVector) -> Result<PolarizationStrengthPair> {
    if !(s.s0 > 0.0) {
        return Err(Error::UndefinedPolarization);
    }
    Ok(PolarizationStrengthPair {
        p_linear: s.s1 / s.s0,
        p_circular: s.s3 / s.s0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterPoint {
    pub hwp_angle: f64,
    pub qwp_angle: f64,
    pub stokes: StokesVector,
}

/// Uniform grid in HWP angle `[0, π/4]` and in QWP offset `[0, π/4]` from the
/// HWP output axis. Covers the `s3 ≥ 0` hemisphere from linear to circular.
pub fn raster_hemisphere(n_hwp: usize, n_qwp: usize) -> Result<Vec<RasterPoint>> {
    if n_hwp < 2 || n_qwp < 2 {
        return Err(Error::param("raster", "need at least 2 points per axis"));
    }
    let mut out = Vec::with_capacity(n_hwp * n_qwp);
    for i in 0..n_hwp {
        let hwp_angle = FRAC_PI_4 * i as f64 / (n_hwp - 1) as f64;
        for j in 0..n_qwp {
            let offset = FRAC_PI_4 * j as f64 / (n_qwp - 1) as f64;
            let qwp_angle = 2.0 * hwp_angle + offset;
            let stokes = prepare_pump(hwp_angle, qwp_angle, 1.0, PUMP_WAVELENGTH_NM)?;
            out.push(RasterPoint {
                hwp_angle,
                qwp_angle,
                stokes,
            });
        }
    }
    Ok(out)
}
