//! Experiment configuration: every simulator default in one structured,
//! TOML-loadable tree. Partial files overlay the defaults section by
//! section.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::kinematics::{EncoderDriftModel, MotionLimits, DEFAULT_LINK_LENGTHS};
use crate::nav::{GridSpec, RlHyperparams};
use crate::plume::{Environment, PlumeParams};
use crate::sensors::{EcSensorParams, EnvCorrection, MoxSensorParams, SensorKind};
use crate::{Error, Result};

/// Which navigation policy drives the trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Gradient,
    Belief,
    Rl,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Gradient => "gradient",
            PolicyKind::Belief => "belief",
            PolicyKind::Rl => "rl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialSettings {
    pub algorithm: PolicyKind,
    pub sensor: SensorKind,
    /// s
    pub timeout: f64,
    /// m
    pub success_radius: f64,
    pub trials: usize,
    /// s of plume development after each purge
    pub develop_time: f64,
    pub seed: u64,
    /// m from the shoulder origin to the source
    pub source_range: f64,
    /// deg of base rotation needed to face the source from the start pose
    pub source_bearing: f64,
    /// m
    pub source_height: f64,
    /// start joint angles, deg
    pub start_angles: [f64; 5],
    /// m of Cartesian displacement requested per 1 s action
    pub action_step: f64,
    /// in-plume when the smoothed value exceeds this multiple of the
    /// baseline threshold
    pub in_plume_factor: f64,
    /// s of kinematic integration per substep
    pub substep_dt: f64,
}

impl Default for TrialSettings {
    fn default() -> Self {
        TrialSettings {
            algorithm: PolicyKind::Gradient,
            sensor: SensorKind::Mox,
            timeout: 60.0,
            success_radius: 0.10,
            trials: 5,
            develop_time: 30.0,
            seed: 0,
            source_range: 0.55,
            source_bearing: 180.0,
            source_height: 0.0,
            start_angles: [0.0, 100.0, -160.0, 60.0, 0.0],
            action_step: 0.12,
            in_plume_factor: 1.5,
            substep_dt: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmSettings {
    pub link_lengths: [f64; 4],
    pub limits: MotionLimits,
    pub drift: EncoderDriftModel,
}

impl Default for ArmSettings {
    fn default() -> Self {
        ArmSettings {
            link_lengths: DEFAULT_LINK_LENGTHS,
            limits: MotionLimits::default(),
            drift: EncoderDriftModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorSettings {
    pub mox: MoxSensorParams,
    pub ec: EcSensorParams,
    /// multiplicative measurement noise sigma for both sensors
    pub noise_sigma: f64,
    pub correction: EnvCorrection,
}

impl Default for SensorSettings {
    fn default() -> Self {
        SensorSettings {
            mox: MoxSensorParams::default(),
            ec: EcSensorParams::default(),
            noise_sigma: 0.01,
            correction: EnvCorrection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoutSettings {
    pub window_len: usize,
    pub baseline_mode: crate::bout::BaselineMode,
}

impl Default for BoutSettings {
    fn default() -> Self {
        BoutSettings { window_len: 5, baseline_mode: crate::bout::BaselineMode::Max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeliefSettings {
    /// sliding window capacity
    pub window_cap: usize,
    /// m, residual tolerance for sphere intersections
    pub residual_tol: f64,
    /// k of the fallback r = k/value calibration
    pub default_k: f64,
    /// build a value-to-distance profile from noise-free probes at trial
    /// setup (prior calibration); fall back to k/value when false
    pub calibrate_profile: bool,
    /// navigate to the best EKF landmark once its covariance trace drops
    /// below this, m^2
    pub landmark_commit_trace: f64,
}

impl Default for BeliefSettings {
    fn default() -> Self {
        BeliefSettings {
            window_cap: 5,
            residual_tol: crate::belief::DEFAULT_RESIDUAL_TOL,
            default_k: 0.1,
            calibrate_profile: true,
            landmark_commit_trace: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlSettings {
    pub hyperparams: RlHyperparams,
    pub grid: GridSpec,
    /// policy-weighted Expected SARSA variant instead of the printed
    /// uniform-average rule (off by default)
    pub policy_weighted: bool,
}

impl Default for RlSettings {
    fn default() -> Self {
        RlSettings {
            hyperparams: RlHyperparams::default(),
            grid: GridSpec::default(),
            policy_weighted: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EkfSettings {
    /// encoder pose measurement stds: m, m, m, deg, deg
    pub encoder_pose_std: [f64; 5],
    /// initial pose stds
    pub initial_std: [f64; 5],
    pub merge_radius: f64,
    pub landmark_cap: usize,
}

impl Default for EkfSettings {
    fn default() -> Self {
        EkfSettings {
            encoder_pose_std: [0.02, 0.02, 0.02, 2.0, 2.0],
            initial_std: [1e-3, 1e-3, 1e-3, 0.1, 0.1],
            merge_radius: 0.15,
            landmark_cap: 16,
        }
    }
}

/// The whole simulator configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub trial: TrialSettings,
    pub arm: ArmSettings,
    pub plume: PlumeParams,
    pub environment: Environment,
    pub sensors: SensorSettings,
    pub bout: BoutSettings,
    pub belief: BeliefSettings,
    pub rl: RlSettings,
    pub ekf: EkfSettings,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.trial;
        if t.timeout <= 0.0 {
            return Err(Error::Config(format!("timeout must be > 0, got {}", t.timeout)));
        }
        if t.success_radius <= 0.0 {
            return Err(Error::Config(format!(
                "success_radius must be > 0, got {}",
                t.success_radius
            )));
        }
        if t.trials < 1 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if t.develop_time < 0.0 {
            return Err(Error::Config("develop_time must be >= 0".into()));
        }
        if t.action_step <= 0.0 || t.substep_dt <= 0.0 {
            return Err(Error::Config("action_step and substep_dt must be > 0".into()));
        }
        if t.in_plume_factor <= 0.0 {
            return Err(Error::Config("in_plume_factor must be > 0".into()));
        }
        let reach: f64 = self.arm.link_lengths.iter().sum();
        if t.source_range >= reach {
            return Err(Error::Config(format!(
                "source range {} beyond arm reach {reach}",
                t.source_range
            )));
        }
        if self.bout.window_len == 0 {
            return Err(Error::Config("bout window must be positive".into()));
        }
        self.plume.validate()?;
        self.environment.validate()?;
        self.rl.hyperparams.validate()?;
        self.rl.grid.validate()?;
        Ok(())
    }

    /// Source position implied by the trial geometry, in workspace frame.
    pub fn source_position(&self) -> [f64; 3] {
        let b = self.trial.source_bearing.to_radians();
        [
            self.trial.source_range * b.cos(),
            self.trial.source_range * b.sin(),
            self.trial.source_height,
        ]
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: SimConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("parse {path:?}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("serialize config: {e}")))
    }
}
