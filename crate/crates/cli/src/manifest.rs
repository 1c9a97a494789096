//! Run manifests: everything needed to reproduce a batch evaluation.

use serde::{Deserialize, Serialize};
use splatsim_core::env::demo;
use splatsim_core::env::policy::{ExternalPolicy, Policy, ScriptedPickPlace, ScriptedPush};
use splatsim_core::{CoreError, Result};
use std::path::{Path, PathBuf};
use std::time::Duration;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PolicySpec {
    PickPlace {
        pick: [f64; 3],
        place: [f64; 3],
        hover_height: f64,
        grasp_height: f64,
        phase_frames: usize,
        noise_sigma: f64,
    },
    Push {
        start: [f64; 2],
        goal: [f64; 2],
        frames: usize,
        noise_sigma: f64,
    },
    External {
        command: String,
        #[serde(default)]
        args: Vec<String>,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
}

fn default_timeout_secs() -> u64 {
    30
}

impl PolicySpec {
    pub fn build(&self) -> Result<Box<dyn Policy>> {
        match self {
            PolicySpec::PickPlace {
                pick,
                place,
                hover_height,
                grasp_height,
                phase_frames,
                noise_sigma,
            } => Ok(Box::new(ScriptedPickPlace::new(
                *pick,
                *place,
                *hover_height,
                *grasp_height,
                *phase_frames,
                *noise_sigma,
            ))),
            PolicySpec::Push {
                start,
                goal,
                frames,
                noise_sigma,
            } => Ok(Box::new(ScriptedPush::new(*start, *goal, *frames, *noise_sigma))),
            PolicySpec::External {
                command,
                args,
                timeout_secs,
            } => {
                let mut p = ExternalPolicy::spawn(command, args)?;
                p.timeout = Duration::from_secs(*timeout_secs);
                Ok(Box::new(p))
            }
        }
    }

    /// The demo pick-place policy at a given noise level.
    pub fn demo_pick_place(noise_sigma: f64) -> Self {
        let p = demo::pick_place_policy(noise_sigma);
        PolicySpec::PickPlace {
            pick: p.pick,
            place: p.place,
            hover_height: p.hover_height,
            grasp_height: p.grasp_height,
            phase_frames: p.phase_frames,
            noise_sigma,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum InitialStateSource {
    /// Deterministic grid over the scenario's randomization ranges.
    #[default]
    Grid,
    /// Explicit JSON list of initial states.
    File { path: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    pub policy: PolicySpec,
    #[serde(default)]
    pub initial_states: InitialStateSource,
    pub episodes: usize,
    #[serde(default)]
    pub seed: u64,
    pub out: String,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_workers() -> usize {
    1
}

impl RunManifest {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(CoreError::Invalid("episode count must be >= 1".into()));
        }
        if self.workers == 0 {
            return Err(CoreError::Invalid("workers must be >= 1".into()));
        }
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path_str = path.as_ref().display().to_string();
        let text = std::fs::read_to_string(&path).map_err(|e| CoreError::Io {
            path: path_str.clone(),
            source: e,
        })?;
        let mut m: RunManifest = serde_json::from_str(&text).map_err(|e| CoreError::Parse {
            path: path_str,
            line: e.line(),
            msg: e.to_string(),
        })?;
        m.base_dir = path
            .as_ref()
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CoreError::Invalid(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| CoreError::Io {
            path: path.as_ref().display().to_string(),
            source: e,
        })
    }

    /// Paths in the manifest are relative to the manifest file itself.
    pub fn resolve<P: AsRef<Path>>(&self, rel: P) -> PathBuf {
        let rel = rel.as_ref();
        if rel.is_absolute() {
            rel.to_path_buf()
        } else {
            self.base_dir.join(rel)
        }
    }
}
