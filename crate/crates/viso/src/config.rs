//! TOML run configuration. Every key is optional; missing keys take the
//! library defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use viso_core::fusion::{FusionConfig, KappaMode, ProximalGate};
use viso_core::orchestrator::LoopConfig;
use viso_core::relations::RelationConfig;
use viso_core::scene::SceneConfig;
use viso_core::simenv::{DetectorNoise, ExecutionModel, GraspNoise};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KappaModeName {
    Natural,
    Additive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateName {
    Similar,
    Dissimilar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    pub tick_hz: f64,
    pub max_ticks: u64,
    pub match_radius: f64,

    pub proximity_expansion: f64,
    pub gamma_below: f64,
    pub gamma_hl: f64,

    pub gamma_d: f64,
    pub gamma_theta: f64,
    pub q_max: f64,
    pub kappa_max: f64,
    pub kappa_mode: KappaModeName,
    pub proximal_gate: GateName,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    pub approach_bins: usize,
    pub stale_ticks: u64,

    pub step: f64,
    pub max_steps: usize,
    pub eps_stag: f64,
    pub patience_ticks: u64,

    pub sigma_center: f64,
    pub drop_prob: f64,
    pub mislabel_prob: f64,
    pub v_min: f64,

    pub sigma_contact: f64,
    pub kappa_obs: f64,
    pub q_base: f64,
    pub q_visibility_gain: f64,
    pub grasps_per_view: usize,
    pub max_width: f64,

    pub disturb_prob: f64,
    pub collision_clearance: f64,
    pub max_failures: u32,
    pub history_len: usize,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        Self::from_loop(&LoopConfig::default())
    }
}

type Check<'a> = (&'a str, f64, fn(f64) -> bool, &'a str);

impl RunConfigFile {
    pub fn from_loop(c: &LoopConfig) -> Self {
        Self {
            tick_hz: c.tick_hz,
            max_ticks: c.max_ticks,
            match_radius: c.scene.match_radius,
            proximity_expansion: c.relations.proximity_expansion,
            gamma_below: c.relations.gamma_below,
            gamma_hl: c.relations.gamma_hl,
            gamma_d: c.fusion.gamma_d,
            gamma_theta: c.fusion.gamma_theta,
            q_max: c.fusion.q_max,
            kappa_max: c.fusion.kappa_max,
            kappa_mode: match c.fusion.kappa_mode {
                KappaMode::Natural => KappaModeName::Natural,
                KappaMode::Additive => KappaModeName::Additive,
            },
            proximal_gate: match c.fusion.gate {
                ProximalGate::Similar => GateName::Similar,
                ProximalGate::Dissimilar => GateName::Dissimilar,
            },
            dbscan_eps: c.fusion.dbscan_eps,
            dbscan_min_pts: c.fusion.dbscan_min_pts,
            approach_bins: c.fusion.bins,
            stale_ticks: c.fusion.stale_ticks,
            step: c.step,
            max_steps: c.max_steps,
            eps_stag: c.eps_stag,
            patience_ticks: c.patience_ticks,
            sigma_center: c.detector.sigma_center,
            drop_prob: c.detector.drop_prob,
            mislabel_prob: c.detector.mislabel_prob,
            v_min: c.detector.v_min,
            sigma_contact: c.grasp_noise.sigma_contact,
            kappa_obs: c.grasp_noise.kappa_obs,
            q_base: c.grasp_noise.q_base,
            q_visibility_gain: c.grasp_noise.q_visibility_gain,
            grasps_per_view: c.grasp_noise.per_grasp,
            max_width: c.grasp_noise.max_width,
            disturb_prob: c.execution.disturb_prob,
            collision_clearance: c.execution.collision_clearance,
            max_failures: c.max_failures,
            history_len: c.history_len,
        }
    }

    pub fn to_loop(&self) -> LoopConfig {
        LoopConfig {
            tick_hz: self.tick_hz,
            max_ticks: self.max_ticks,
            scene: SceneConfig {
                match_radius: self.match_radius,
            },
            relations: RelationConfig {
                proximity_expansion: self.proximity_expansion,
                gamma_below: self.gamma_below,
                gamma_hl: self.gamma_hl,
            },
            fusion: FusionConfig {
                gamma_d: self.gamma_d,
                gamma_theta: self.gamma_theta,
                q_max: self.q_max,
                kappa_max: self.kappa_max,
                dbscan_eps: self.dbscan_eps,
                dbscan_min_pts: self.dbscan_min_pts,
                bins: self.approach_bins,
                kappa_mode: match self.kappa_mode {
                    KappaModeName::Natural => KappaMode::Natural,
                    KappaModeName::Additive => KappaMode::Additive,
                },
                gate: match self.proximal_gate {
                    GateName::Similar => ProximalGate::Similar,
                    GateName::Dissimilar => ProximalGate::Dissimilar,
                },
                stale_ticks: self.stale_ticks,
            },
            step: self.step,
            max_steps: self.max_steps,
            eps_stag: self.eps_stag,
            detector: DetectorNoise {
                sigma_center: self.sigma_center,
                drop_prob: self.drop_prob,
                mislabel_prob: self.mislabel_prob,
                v_min: self.v_min,
            },
            grasp_noise: GraspNoise {
                sigma_contact: self.sigma_contact,
                kappa_obs: self.kappa_obs,
                q_base: self.q_base,
                q_visibility_gain: self.q_visibility_gain,
                per_grasp: self.grasps_per_view,
                max_width: self.max_width,
            },
            execution: ExecutionModel {
                disturb_prob: self.disturb_prob,
                collision_clearance: self.collision_clearance,
            },
            patience_ticks: self.patience_ticks,
            max_failures: self.max_failures,
            history_len: self.history_len,
        }
    }

    /// First out-of-range key, as `(key, reason)`.
    pub fn validate(&self) -> Result<(), (String, String)> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        let non_negative = |v: f64| v >= 0.0 && v.is_finite();
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let checks: [Check; 25] = [
            ("tick_hz", self.tick_hz, positive, "must be > 0"),
            ("max_ticks", self.max_ticks as f64, positive, "must be >= 1"),
            ("match_radius", self.match_radius, non_negative, "must be >= 0"),
            ("proximity_expansion", self.proximity_expansion, non_negative, "must be >= 0"),
            ("gamma_below", self.gamma_below, f64::is_finite, "must be finite"),
            ("gamma_hl", self.gamma_hl, non_negative, "must be >= 0"),
            ("gamma_d", self.gamma_d, positive, "must be > 0"),
            ("gamma_theta", self.gamma_theta, |v| v > 0.0 && v <= 2.0, "must be in (0, 2]"),
            ("q_max", self.q_max, unit, "must be in [0, 1]"),
            ("kappa_max", self.kappa_max, positive, "must be > 0"),
            ("dbscan_eps", self.dbscan_eps, positive, "must be > 0"),
            ("approach_bins", self.approach_bins as f64, positive, "must be >= 1"),
            ("step", self.step, |v| v > 0.0 && v <= 1.0, "must be in (0, 1]"),
            ("eps_stag", self.eps_stag, positive, "must be > 0"),
            ("sigma_center", self.sigma_center, non_negative, "must be >= 0"),
            ("drop_prob", self.drop_prob, unit, "must be in [0, 1]"),
            ("mislabel_prob", self.mislabel_prob, unit, "must be in [0, 1]"),
            ("v_min", self.v_min, unit, "must be in [0, 1]"),
            ("sigma_contact", self.sigma_contact, non_negative, "must be >= 0"),
            ("kappa_obs", self.kappa_obs, positive, "must be > 0"),
            ("q_base", self.q_base, unit, "must be in [0, 1]"),
            ("q_visibility_gain", self.q_visibility_gain, non_negative, "must be >= 0"),
            ("max_width", self.max_width, positive, "must be > 0"),
            ("disturb_prob", self.disturb_prob, unit, "must be in [0, 1]"),
            ("collision_clearance", self.collision_clearance, non_negative, "must be >= 0"),
        ];
        for (key, value, ok, reason) in checks {
            if !ok(value) {
                return Err((key.into(), format!("{value} {reason}")));
            }
        }
        let counts = [
            ("dbscan_min_pts", self.dbscan_min_pts as u64),
            ("max_steps", self.max_steps as u64),
            ("grasps_per_view", self.grasps_per_view as u64),
            ("max_failures", self.max_failures as u64),
            ("history_len", self.history_len as u64),
        ];
        for (key, value) in counts {
            if value == 0 {
                return Err((key.into(), "0 must be >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let file: RunConfigFile = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start.min(text.len())].lines().count().max(1)).unwrap_or(0);
            CliError::Parse {
                file: origin.into(),
                line,
                message: e.message().to_string(),
            }
        })?;
        file.validate().map_err(|(key, message)| CliError::Config {
            file: origin.into(),
            key,
            message,
        })?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// The configuration at `path`, or the defaults when no path is given.
pub fn load_or_default(path: Option<&Path>) -> Result<LoopConfig, CliError> {
    match path {
        Some(p) => Ok(RunConfigFile::load(p)?.to_loop()),
        None => Ok(LoopConfig::default()),
    }
}
