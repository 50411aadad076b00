//! Hybrid underactuated model of the biped.
//!
//! Between impacts only gravity changes the angular momentum about the
//! stance foot, so the reduced state (x_com, L_y) obeys a simple ODE driven
//! by COM kinematics; at touchdown the momentum is transferred to the new
//! pivot by a closed-form map. This module also carries the foothold
//! description ([`StoneConfig`]), the orbital-energy band ([`EnergyTarget`]),
//! and the conversions between energy targets and momentum targets.

use crate::lip::{orbital_energy, LipParams, ReducedState};
use thiserror::Error;

/// Errors from hybrid-model evaluation and type validation.
#[derive(Debug, Error, PartialEq)]
pub enum HybridError {
    /// COM height at or below the pivot makes the momentum relation singular.
    #[error("COM height must be positive, got {0}")]
    DegenerateHeight(f64),
    /// The requested orbital energy admits no real momentum at this COM
    /// position.
    #[error("energy target {e_star} at x = {x_com} has negative radicand {radicand}")]
    NegativeRadicand {
        e_star: f64,
        x_com: f64,
        radicand: f64,
    },
    /// Stone distances must be positive and steeper-than-vertical stones are
    /// rejected.
    #[error("invalid stone: distance {l_des}, height {h_des}")]
    InvalidStone { l_des: f64, h_des: f64 },
    /// Energy band must satisfy 0 < e_min <= e_star <= e_max.
    #[error("invalid energy band: [{e_min}, {e_max}] around {e_star}")]
    InvalidEnergyBand {
        e_star: f64,
        e_min: f64,
        e_max: f64,
    },
}

/// COM kinematics relative to the current stance foot, plus the
/// mass-normalized centroidal angular momentum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ComKinematics {
    /// COM position relative to the stance foot, m.
    pub x_com: f64,
    pub z_com: f64,
    /// COM velocity, m/s.
    pub dx_com: f64,
    pub dz_com: f64,
    /// Mass-normalized centroidal angular momentum, y-component, m^2/s.
    pub l_com_y: f64,
}

impl ComKinematics {
    /// Mass-normalized angular momentum about the stance foot:
    /// `L_y = z_com x'_com - x_com z'_com + L_com_y`.
    pub fn momentum_about_pivot(&self) -> f64 {
        self.z_com * self.dx_com - self.x_com * self.dz_com + self.l_com_y
    }

    /// The reduced (underactuated) state carried by these kinematics.
    pub fn reduced_state(&self) -> ReducedState {
        ReducedState::new(self.x_com, self.momentum_about_pivot())
    }
}

/// One foothold relative to the current stance foot: horizontal distance and
/// height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoneConfig {
    l_des: f64,
    h_des: f64,
}

impl StoneConfig {
    /// Validates `l_des > 0` and `|h_des| < l_des` (slope below 45 degrees
    /// of rise per unit run would be `<`; we only exclude slopes at or past
    /// vertical).
    pub fn new(l_des: f64, h_des: f64) -> Result<Self, HybridError> {
        if !(l_des > 0.0) || !(h_des.abs() < l_des) {
            return Err(HybridError::InvalidStone { l_des, h_des });
        }
        Ok(Self { l_des, h_des })
    }

    /// Horizontal distance to the next foothold, m.
    pub fn l_des(&self) -> f64 {
        self.l_des
    }

    /// Height of the next foothold relative to the stance foot, m.
    pub fn h_des(&self) -> f64 {
        self.h_des
    }

    /// Slope of the virtual line connecting the footholds.
    pub fn slope(&self) -> f64 {
        self.h_des / self.l_des
    }
}

/// Desired post-impact orbital energy and the band accepted as viable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyTarget {
    e_star: f64,
    e_min: f64,
    e_max: f64,
}

impl EnergyTarget {
    /// Validates `0 < e_min <= e_star <= e_max`.
    pub fn new(e_star: f64, e_min: f64, e_max: f64) -> Result<Self, HybridError> {
        if !(0.0 < e_min && e_min <= e_star && e_star <= e_max) {
            return Err(HybridError::InvalidEnergyBand {
                e_star,
                e_min,
                e_max,
            });
        }
        Ok(Self {
            e_star,
            e_min,
            e_max,
        })
    }

    /// Degenerate band `[e_star, e_star]`, the default regulation target.
    pub fn exact(e_star: f64) -> Result<Self, HybridError> {
        Self::new(e_star, e_star, e_star)
    }

    pub fn e_star(&self) -> f64 {
        self.e_star
    }

    pub fn e_min(&self) -> f64 {
        self.e_min
    }

    pub fn e_max(&self) -> f64 {
        self.e_max
    }
}

/// COM height measured from the virtual slope through the footholds:
/// `z_com - (h_des / l_des) x_com`.
pub fn virtual_slope_height(x_com: f64, z_com: f64, stone: &StoneConfig) -> f64 {
    z_com - stone.slope() * x_com
}

/// Continuous dynamics of the reduced state:
/// `x'_com = (L_y + x_com z'_com - L_com_y) / z_com`, `L'_y = g x_com`.
pub fn hz_continuous_rhs(
    s: ReducedState,
    k: &ComKinematics,
    g: f64,
) -> Result<(f64, f64), HybridError> {
    if !(k.z_com > 0.0) {
        return Err(HybridError::DegenerateHeight(k.z_com));
    }
    let dx = (s.l_y + s.x_com * k.dz_com - k.l_com_y) / k.z_com;
    let dl = g * s.x_com;
    Ok((dx, dl))
}

/// Impact map of the reduced state when the swing foot lands at
/// `(x_sw, z_sw)` relative to the old stance foot:
/// `x+ = x- - x_sw`, `L+ = L- + x_sw z'_com - z_sw x'_com`.
///
/// This is the angular momentum about the new pivot, which the plastic
/// impact conserves.
pub fn hz_impact_map(s_minus: ReducedState, k_minus: &ComKinematics, x_sw: f64, z_sw: f64) -> ReducedState {
    ReducedState {
        x_com: s_minus.x_com - x_sw,
        l_y: s_minus.l_y + x_sw * k_minus.dz_com - z_sw * k_minus.dx_com,
    }
}

/// A post-impact state is viable when the COM is behind the new pivot, the
/// momentum carries it forward, and the orbital energy lies in the band.
pub fn viable_post_impact(s_plus: ReducedState, p: &LipParams, tgt: &EnergyTarget) -> bool {
    if s_plus.x_com >= 0.0 || s_plus.l_y <= 0.0 {
        return false;
    }
    let e = orbital_energy(s_plus, p);
    tgt.e_min <= e && e <= tgt.e_max
}

/// Positive momentum whose orbit through `x_plus` carries orbital energy
/// `e_star`: `L_des = z_tilde sqrt(e_star + (g / z_tilde) x_plus^2)`.
pub fn momentum_from_energy(
    e_star: f64,
    x_plus: f64,
    z_tilde_plus: f64,
    g: f64,
) -> Result<f64, HybridError> {
    if !(z_tilde_plus > 0.0) {
        return Err(HybridError::DegenerateHeight(z_tilde_plus));
    }
    let radicand = e_star + g / z_tilde_plus * x_plus * x_plus;
    if radicand < 0.0 {
        return Err(HybridError::NegativeRadicand {
            e_star,
            x_com: x_plus,
            radicand,
        });
    }
    Ok(z_tilde_plus * radicand.sqrt())
}
