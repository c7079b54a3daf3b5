//! Gaussian plume concentration with Pasquill–Gifford stability classes.
//!
//! Spread parameters follow the Briggs open-country interpolation formulas:
//!
//! | class | σy (m)                      | σz (m)                       |
//! |-------|-----------------------------|------------------------------|
//! | A     | 0.22x (1 + 0.0001x)^-1/2    | 0.20x                        |
//! | B     | 0.16x (1 + 0.0001x)^-1/2    | 0.12x                        |
//! | C     | 0.11x (1 + 0.0001x)^-1/2    | 0.08x (1 + 0.0002x)^-1/2     |
//! | D     | 0.08x (1 + 0.0001x)^-1/2    | 0.06x (1 + 0.0015x)^-1/2     |
//! | E     | 0.06x (1 + 0.0001x)^-1/2    | 0.03x (1 + 0.0003x)^-1       |
//! | F     | 0.04x (1 + 0.0001x)^-1/2    | 0.016x (1 + 0.0003x)^-1      |
//!
//! The vertical profile carries a single total ground reflection and no
//! depletion terms.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DispersionError {
    #[error("downwind distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("receptor height must be non-negative, got {0}")]
    NegativeHeight(f64),
    #[error("invalid release: {0}")]
    InvalidRelease(String),
    #[error("unknown stability class {0:?}")]
    UnknownClass(String),
}

/// Pasquill–Gifford class, A (most unstable) to F (most stable).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StabilityClass {
    A,
    B,
    C,
    D,
    E,
    F,
}

impl StabilityClass {
    pub const ALL: [StabilityClass; 6] = [Self::A, Self::B, Self::C, Self::D, Self::E, Self::F];

    /// Ordinal code 0 (A) .. 5 (F).
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn letter(self) -> char {
        (b'A' + self as u8) as char
    }

    /// σy coefficient and the σz law.
    fn coefficients(self) -> (f64, SigmaZ) {
        match self {
            Self::A => (0.22, SigmaZ::Linear(0.20)),
            Self::B => (0.16, SigmaZ::Linear(0.12)),
            Self::C => (0.11, SigmaZ::Sqrt(0.08, 0.0002)),
            Self::D => (0.08, SigmaZ::Sqrt(0.06, 0.0015)),
            Self::E => (0.06, SigmaZ::Hyperbolic(0.03, 0.0003)),
            Self::F => (0.04, SigmaZ::Hyperbolic(0.016, 0.0003)),
        }
    }
}

enum SigmaZ {
    Linear(f64),
    Sqrt(f64, f64),
    Hyperbolic(f64, f64),
}

impl fmt::Display for StabilityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for StabilityClass {
    type Err = DispersionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Self::A),
            "B" => Ok(Self::B),
            "C" => Ok(Self::C),
            "D" => Ok(Self::D),
            "E" => Ok(Self::E),
            "F" => Ok(Self::F),
            _ => Err(DispersionError::UnknownClass(s.to_string())),
        }
    }
}

fn check_x(x: f64) -> Result<(), DispersionError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(DispersionError::NonPositiveDistance(x))
    }
}

pub fn sigma_y(stability: StabilityClass, x: f64) -> Result<f64, DispersionError> {
    check_x(x)?;
    Ok(sigma_y_unchecked(stability, x))
}

pub fn sigma_z(stability: StabilityClass, x: f64) -> Result<f64, DispersionError> {
    check_x(x)?;
    Ok(sigma_z_unchecked(stability, x))
}

#[inline]
pub(crate) fn sigma_y_unchecked(stability: StabilityClass, x: f64) -> f64 {
    let (cy, _) = stability.coefficients();
    cy * x / (1.0 + 0.0001 * x).sqrt()
}

#[inline]
pub(crate) fn sigma_z_unchecked(stability: StabilityClass, x: f64) -> f64 {
    match stability.coefficients().1 {
        SigmaZ::Linear(c) => c * x,
        SigmaZ::Sqrt(c, k) => c * x / (1.0 + k * x).sqrt(),
        SigmaZ::Hyperbolic(c, k) => c * x / (1.0 + k * x),
    }
}

/// Continuous point release.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReleaseSpec {
    /// Source term, Bq/s.
    pub q: f64,
    /// Wind speed, m/s.
    pub u: f64,
    /// Release height, m.
    pub h: f64,
    pub stability: StabilityClass,
}

impl ReleaseSpec {
    /// Unit source term and unit wind speed.
    pub fn unit(stability: StabilityClass, h: f64) -> Self {
        Self {
            q: 1.0,
            u: 1.0,
            h,
            stability,
        }
    }

    pub fn validate(&self) -> Result<(), DispersionError> {
        if !(self.q > 0.0 && self.q.is_finite()) {
            return Err(DispersionError::InvalidRelease(format!("Q must be positive, got {}", self.q)));
        }
        if !(self.u > 0.0 && self.u.is_finite()) {
            return Err(DispersionError::InvalidRelease(format!("U must be positive, got {}", self.u)));
        }
        if !(0.0..=500.0).contains(&self.h) {
            return Err(DispersionError::InvalidRelease(format!(
                "release height {} outside [0, 500] m",
                self.h
            )));
        }
        Ok(())
    }
}

/// χ(x, y, z) in Bq/m³ for a reflected Gaussian plume.
pub fn concentration(release: &ReleaseSpec, x: f64, y: f64, z: f64) -> Result<f64, DispersionError> {
    release.validate()?;
    check_x(x)?;
    if !(z >= 0.0) {
        return Err(DispersionError::NegativeHeight(z));
    }
    let sy = sigma_y_unchecked(release.stability, x);
    let sz = sigma_z_unchecked(release.stability, x);
    Ok(PlumeSlice::new(release, sy, sz).at(y, z))
}

/// Concentration factors for one downwind slice, with σy and σz fixed.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PlumeSlice {
    prefactor: f64,
    inv_2sy2: f64,
    inv_2sz2: f64,
    h: f64,
}

impl PlumeSlice {
    #[inline]
    pub(crate) fn new(release: &ReleaseSpec, sy: f64, sz: f64) -> Self {
        Self {
            prefactor: release.q / (2.0 * PI * release.u * sy * sz),
            inv_2sy2: 1.0 / (2.0 * sy * sy),
            inv_2sz2: 1.0 / (2.0 * sz * sz),
            h: release.h,
        }
    }

    #[inline]
    pub(crate) fn lateral(&self, y: f64) -> f64 {
        self.prefactor * (-y * y * self.inv_2sy2).exp()
    }

    #[inline]
    pub(crate) fn vertical(&self, z: f64) -> f64 {
        let dm = z - self.h;
        let dp = z + self.h;
        (-dm * dm * self.inv_2sz2).exp() + (-dp * dp * self.inv_2sz2).exp()
    }

    #[inline]
    pub(crate) fn at(&self, y: f64, z: f64) -> f64 {
        self.lateral(y) * self.vertical(z)
    }
}
