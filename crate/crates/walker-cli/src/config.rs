//! Scenario configuration: a TOML file with one section per subsystem.
//!
//! Every key has a default, so a minimal config is just a `[terrain]`
//! table (and even that falls back to flat ground).  The full grammar is
//! documented in the repository README; the mirror structs here exist so
//! the on-disk schema is explicit, serde-checked, and round-trips exactly.

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;
use walker_core::hybrid::StoneConfig;
use walker_core::model::LinkParams;
use walker_core::sim::Scenario;
use walker_core::terrain::TerrainError;
use walker_core::{ControllerGains, GaitParams, MpcParams, RobotModel, Terrain};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    /// The TOML error display already carries line/column information.
    #[error("parsing {path}: {source}")]
    Parse {
        path: String,
        source: Box<toml::de::Error>,
    },
    #[error("config value: {0}")]
    Invalid(String),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
}

/// Top-level scenario file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub terrain: TerrainConfig,
    pub gait: GaitConfig,
    pub model: ModelConfig,
    pub gains: GainsConfig,
    pub mpc: MpcConfig,
    pub sim: SimConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainKind {
    Flat,
    Stairs,
    Random,
    Explicit,
}

impl std::str::FromStr for TerrainKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flat" => Ok(Self::Flat),
            "stairs" => Ok(Self::Stairs),
            "random" => Ok(Self::Random),
            "explicit" => Ok(Self::Explicit),
            other => Err(format!(
                "unknown terrain kind {other:?} (expected flat, stairs, random, or explicit)"
            )),
        }
    }
}

/// Stone sequence specification.  Only the keys of the selected `kind`
/// are read; the rest may stay at their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainConfig {
    pub kind: TerrainKind,
    /// Number of stones generated (flat/stairs/random).  Defaults to
    /// enough for the configured step count.
    pub count: Option<usize>,
    /// Stone spacing for flat and stairs, m.
    pub step_length: f64,
    /// Per-stone elevation change for stairs, m.
    pub rise: f64,
    /// Stone spacing range for random terrain, m.
    pub length_min: f64,
    pub length_max: f64,
    /// Random heights are drawn from +-height_max, m.
    pub height_max: f64,
    /// RNG seed for random terrain.
    pub seed: u64,
    /// Explicit stones as `[length, height]` pairs, m.
    pub stones: Vec<[f64; 2]>,
}

impl Default for TerrainConfig {
    fn default() -> Self {
        Self {
            kind: TerrainKind::Flat,
            count: None,
            step_length: 0.7,
            rise: 0.1,
            length_min: 0.2,
            length_max: 0.7,
            height_max: 0.25,
            seed: 0,
            stones: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitConfig {
    /// Pre-impact COM position as a fraction of the step length, in (0,1).
    pub epsilon: f64,
    /// Desired post-impact orbital energy, m^2/s^2.
    pub e_star: f64,
    /// Nominal slope-normal COM height, m.
    pub z_tilde_star: f64,
    /// Swing apex height over the stance foot, m.
    pub z_sw_max: f64,
    /// Terminal swing overshoot below the stone surface, m (negative).
    pub z_sw_neg: f64,
    /// Desired pre-impact torso pitch, rad.
    pub phi_torso: f64,
    /// Base plan weight in pre-impact estimation blending, in [0,1].
    pub blend_weight: f64,
    /// Viability band half-widths below/above `e_star`.
    pub e_band_below: f64,
    pub e_band_above: f64,
}

impl Default for GaitConfig {
    fn default() -> Self {
        let g = GaitParams::default();
        Self {
            epsilon: g.epsilon,
            e_star: g.e_star,
            z_tilde_star: g.z_tilde_star,
            z_sw_max: g.z_sw_max,
            z_sw_neg: g.z_sw_neg,
            phi_torso: g.phi_other_f,
            blend_weight: g.blend_weight,
            e_band_below: g.e_band.0,
            e_band_above: g.e_band.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub mass: f64,
    pub length: f64,
    /// Distance from the proximal joint to the link COM, m.  Defaults to
    /// the midpoint (uniform rod).
    pub com_offset: Option<f64>,
    /// Rotational inertia about the COM, kg m^2.  Defaults to the uniform
    /// rod value m l^2 / 12.
    pub inertia: Option<f64>,
}

impl LinkConfig {
    fn from_params(p: &LinkParams) -> Self {
        Self {
            mass: p.mass,
            length: p.length,
            com_offset: Some(p.com_offset),
            inertia: Some(p.inertia),
        }
    }

    fn to_params(&self) -> LinkParams {
        let uniform = LinkParams::uniform_rod(self.mass, self.length);
        LinkParams {
            mass: self.mass,
            length: self.length,
            com_offset: self.com_offset.unwrap_or(uniform.com_offset),
            inertia: self.inertia.unwrap_or(uniform.inertia),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub gravity: f64,
    pub torso: LinkConfig,
    pub thigh: LinkConfig,
    pub shin: LinkConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let m = RobotModel::default_biped();
        Self {
            gravity: m.g,
            torso: LinkConfig::from_params(&m.torso),
            thigh: LinkConfig::from_params(&m.thigh),
            shin: LinkConfig::from_params(&m.shin),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainsConfig {
    /// Proportional gain on output errors, 1/s^2.
    pub kp: f64,
    /// Derivative gain on output-rate errors, 1/s.
    pub kd: f64,
    /// Diagonal output weights `[torso pitch, z_com, x_sw, z_sw]`.
    pub weight: [f64; 4],
    /// Contact friction coefficient.
    pub mu: f64,
    /// Motor torque bounds, N m.
    pub tau_min: f64,
    pub tau_max: f64,
    /// Tikhonov weight keeping the controller QP strictly convex.
    pub reg: f64,
}

impl Default for GainsConfig {
    fn default() -> Self {
        let g = ControllerGains::default();
        Self {
            kp: g.kp,
            kd: g.kd,
            weight: g.weight.into(),
            mu: g.mu,
            tau_min: g.tau_lb,
            tau_max: g.tau_ub,
            reg: g.reg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    /// Number of inputs in the horizon.
    pub horizon: usize,
    /// Shortest horizon the QP is re-solved over, s.
    pub min_horizon: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        let m = MpcParams::default();
        Self {
            horizon: m.horizon,
            min_horizon: m.min_horizon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Number of steps to attempt.
    pub steps: usize,
    /// Controller period, s.
    pub control_dt: f64,
    /// Wall-clock cap on a single step before it counts as stalled, s.
    pub max_step_time: f64,
    /// Fall threshold as a fraction of the nominal slope-normal height.
    pub fall_height_frac: f64,
    /// Keep per-cycle telemetry (disable for large sweeps).
    pub record_samples: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            control_dt: 1e-3,
            max_step_time: 3.0,
            fall_height_frac: 0.4,
            record_samples: true,
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source: Box::new(source),
        })
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Builds the simulation scenario, validating every subsystem.
    pub fn to_scenario(&self) -> Result<Scenario, ConfigError> {
        let n_steps = self.sim.steps;
        let count = self.terrain.count.unwrap_or(n_steps + 2).max(1);
        let t = &self.terrain;
        let terrain = match t.kind {
            TerrainKind::Flat => Terrain::flat(count, t.step_length)?,
            TerrainKind::Stairs => Terrain::stairs(count, t.step_length, t.rise)?,
            TerrainKind::Random => Terrain::random(
                count,
                (t.length_min, t.length_max),
                t.height_max,
                t.seed,
            )?,
            TerrainKind::Explicit => {
                let stones = t
                    .stones
                    .iter()
                    .map(|&[l, h]| StoneConfig::new(l, h))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| ConfigError::Invalid(format!("explicit stone: {e}")))?;
                Terrain::from_stones(stones)?
            }
        };

        let model = RobotModel::new(
            self.model.torso.to_params(),
            self.model.thigh.to_params(),
            self.model.shin.to_params(),
            self.model.gravity,
        )
        .map_err(|e| ConfigError::Invalid(format!("model: {e}")))?;

        let gait = GaitParams {
            epsilon: self.gait.epsilon,
            e_star: self.gait.e_star,
            z_tilde_star: self.gait.z_tilde_star,
            z_sw_max: self.gait.z_sw_max,
            z_sw_neg: self.gait.z_sw_neg,
            phi_other_f: self.gait.phi_torso,
            blend_weight: self.gait.blend_weight,
            e_band: (self.gait.e_band_below, self.gait.e_band_above),
        };
        gait.validate()
            .map_err(|e| ConfigError::Invalid(format!("gait: {e}")))?;

        let gains = ControllerGains {
            kp: self.gains.kp,
            kd: self.gains.kd,
            weight: Vector4::from(self.gains.weight),
            mu: self.gains.mu,
            tau_lb: self.gains.tau_min,
            tau_ub: self.gains.tau_max,
            reg: self.gains.reg,
        };
        gains
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("gains: {e}")))?;

        let mpc = MpcParams {
            horizon: self.mpc.horizon,
            min_horizon: self.mpc.min_horizon,
        };
        mpc.validate()
            .map_err(|e| ConfigError::Invalid(format!("mpc: {e}")))?;

        let sc = Scenario {
            model,
            gait,
            gains,
            mpc,
            terrain,
            n_steps,
            control_dt: self.sim.control_dt,
            max_step_time: self.sim.max_step_time,
            fall_height_frac: self.sim.fall_height_frac,
            record_samples: self.sim.record_samples,
        };
        sc.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(sc)
    }
}
