//! Equation-of-state models and the pressure potential.
//!
//! Two pressure-density relations are supported: the ideal gas law and the
//! CNGA (California Natural Gas Association) correlation, in which the
//! compressibility factor is `Z = 1/(b1 + b2*p)`. Pipe hydraulics are
//! expressed through the potential `pi(p)`, the antiderivative of density
//! with respect to pressure, so that a pipe relates end-point potentials to
//! the signed square of its mass flow.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// CNGA correlation constants (dimensionless, except the psi conversion).
const CNGA_A1: f64 = 344_400.0;
const CNGA_A2: f64 = 1.785;
const CNGA_A3: f64 = 3.825;
/// Pascals per psi, used by the CNGA correlation.
const PA_PER_PSI: f64 = 6894.75729;

#[derive(Debug, Error, PartialEq)]
pub enum EosError {
    /// `10^(a2*G)` left the representable range; the specific gravity is
    /// implausible for the CNGA correlation.
    #[error("CNGA coefficients overflow for specific gravity {specific_gravity}")]
    OverflowingCoefficient { specific_gravity: f64 },
    /// The potential has no positive preimage for a non-positive value.
    #[error("potential {0} is not positive; no physical pressure attains it")]
    NonPositivePotential(f64),
    #[error("equation-of-state parameter out of range: {0}")]
    InvalidParameter(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EosKind {
    Ideal,
    Cnga,
}

/// Gas properties shared by both equations of state.
///
/// Temperature and composition enter only through `a^2 = R_g * T` for the
/// ideal gas; the CNGA correlation additionally uses the specific gravity
/// and atmospheric pressure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EosParams {
    pub kind: EosKind,
    /// Gas temperature in kelvin.
    pub temperature: f64,
    /// Specific gravity relative to air.
    pub specific_gravity: f64,
    /// Specific gas constant in J/(kg K).
    pub gas_constant: f64,
    /// Atmospheric pressure in pascals.
    pub atmospheric_pressure: f64,
}

impl EosParams {
    pub const DEFAULT_TEMPERATURE: f64 = 288.706;
    pub const DEFAULT_SPECIFIC_GRAVITY: f64 = 0.6;
    pub const DEFAULT_GAS_CONSTANT: f64 = 518.28;
    pub const DEFAULT_ATMOSPHERIC_PRESSURE: f64 = 101_350.0;

    pub fn new(kind: EosKind) -> Self {
        Self {
            kind,
            temperature: Self::DEFAULT_TEMPERATURE,
            specific_gravity: Self::DEFAULT_SPECIFIC_GRAVITY,
            gas_constant: Self::DEFAULT_GAS_CONSTANT,
            atmospheric_pressure: Self::DEFAULT_ATMOSPHERIC_PRESSURE,
        }
    }

    pub fn ideal() -> Self {
        Self::new(EosKind::Ideal)
    }

    pub fn cnga() -> Self {
        Self::new(EosKind::Cnga)
    }

    /// Isothermal sound speed squared, `a^2 = R_g * T`, in m^2/s^2.
    pub fn sound_speed_squared(&self) -> f64 {
        self.gas_constant * self.temperature
    }

    pub fn validate(&self) -> Result<(), EosError> {
        if !(self.temperature > 0.0) {
            return Err(EosError::InvalidParameter("temperature must be positive"));
        }
        if !(self.specific_gravity > 0.0) {
            return Err(EosError::InvalidParameter(
                "specific gravity must be positive",
            ));
        }
        if !(self.gas_constant > 0.0) {
            return Err(EosError::InvalidParameter("gas constant must be positive"));
        }
        if !(self.atmospheric_pressure > 0.0) {
            return Err(EosError::InvalidParameter(
                "atmospheric pressure must be positive",
            ));
        }
        if self.kind == EosKind::Cnga {
            cnga_b_coefficients(self)?;
        }
        Ok(())
    }
}

/// Dimensional CNGA coefficients `(b1, b2)` with `b1` unitless and `b2` in 1/Pa.
///
/// `Z(p) = 1/(b1 + b2*p)` with
/// `b1 = 1 + (p_atm/psi) * a1*10^(a2*G) / (1.8*T)^a3` and
/// `b2 = (1/psi) * a1*10^(a2*G) / (1.8*T)^a3`.
pub fn cnga_b_coefficients(params: &EosParams) -> Result<(f64, f64), EosError> {
    let core = CNGA_A1 * 10f64.powf(CNGA_A2 * params.specific_gravity)
        / (1.8 * params.temperature).powf(CNGA_A3);
    let b1 = 1.0 + (params.atmospheric_pressure / PA_PER_PSI) * core;
    let b2 = core / PA_PER_PSI;
    if !(b1.is_finite() && b2.is_finite() && b1 > 0.0 && b2 > 0.0) {
        return Err(EosError::OverflowingCoefficient {
            specific_gravity: params.specific_gravity,
        });
    }
    Ok((b1, b2))
}

/// Coefficients of the dimensionless density `rho = b1_bar*p + b2_bar*p^2`.
///
/// Ideal gas is exactly `(1, 0)`; the CNGA values are scaled by the Euler
/// group and the nominal pressure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialCoeffs {
    pub b1_bar: f64,
    pub b2_bar: f64,
}

impl PotentialCoeffs {
    pub fn ideal() -> Self {
        Self {
            b1_bar: 1.0,
            b2_bar: 0.0,
        }
    }

    pub fn new(b1_bar: f64, b2_bar: f64) -> Self {
        Self { b1_bar, b2_bar }
    }

    /// Dimensionless density at pressure `p_bar`.
    pub fn density(&self, p_bar: f64) -> f64 {
        self.b1_bar * p_bar + self.b2_bar * p_bar * p_bar
    }

    /// Potential `pi(p) = b1_bar*p^2/2 + b2_bar*p^3/3`, with `pi(0) = 0`.
    pub fn potential(&self, p_bar: f64) -> f64 {
        self.b1_bar * p_bar * p_bar / 2.0 + self.b2_bar * p_bar * p_bar * p_bar / 3.0
    }

    /// Derivative of the potential; identical to [`Self::density`] and kept
    /// as its own entry point for Jacobian assembly.
    pub fn potential_derivative(&self, p_bar: f64) -> f64 {
        self.density(p_bar)
    }

    /// The unique positive pressure whose potential equals `pi_bar`.
    ///
    /// Closed form for the ideal gas; for CNGA the positive cubic root is
    /// isolated by doubling an upper bracket and polished by a safeguarded
    /// Newton iteration to a relative tolerance of 1e-12.
    pub fn potential_inverse(&self, pi_bar: f64) -> Result<f64, EosError> {
        if !(pi_bar > 0.0) {
            return Err(EosError::NonPositivePotential(pi_bar));
        }
        if self.b2_bar == 0.0 {
            return Ok((2.0 * pi_bar / self.b1_bar).sqrt());
        }
        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        while self.potential(hi) < pi_bar {
            hi *= 2.0;
            if !hi.is_finite() {
                return Err(EosError::NonPositivePotential(pi_bar));
            }
        }
        // Newton restricted to the bracket, bisection when it strays.
        let mut x = hi.min((2.0 * pi_bar / self.b1_bar).sqrt().max(hi / 2.0));
        for _ in 0..200 {
            let f = self.potential(x) - pi_bar;
            if f > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            if hi - lo <= 1e-12 * hi {
                break;
            }
            let d = self.density(x);
            let next = x - f / d;
            x = if d > 0.0 && next > lo && next < hi {
                next
            } else {
                0.5 * (lo + hi)
            };
        }
        Ok(x)
    }

    /// Membership in the maximal domain on which the potential is strictly
    /// increasing and which contains all physical (positive) pressures.
    ///
    /// Ideal gas: `p > 0`. CNGA: `p > 0` together with the lower branch
    /// `p <= -(3/2) * b1_bar/b2_bar`.
    pub fn in_generalized_domain(&self, p_bar: f64) -> bool {
        if self.b2_bar == 0.0 {
            p_bar > 0.0
        } else {
            p_bar > 0.0 || p_bar <= -1.5 * self.b1_bar / self.b2_bar
        }
    }
}

/// Dimensionless coefficients for a given gas, Euler group, and nominal pressure.
pub fn dimensionless_coeffs(
    params: &EosParams,
    euler: f64,
    p0: f64,
) -> Result<PotentialCoeffs, EosError> {
    match params.kind {
        EosKind::Ideal => Ok(PotentialCoeffs::ideal()),
        EosKind::Cnga => {
            let (b1, b2) = cnga_b_coefficients(params)?;
            Ok(PotentialCoeffs::new(euler * b1, euler * p0 * b2))
        }
    }
}
