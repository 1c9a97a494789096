//! Scenario configuration: JSON description of robot, objects, cameras,
//! randomization ranges, and the task success specification.

use crate::engine::SimParams;
use crate::error::{CoreError, Result};
use crate::geom::OrientedBox;
use crate::metrics::PlanarPolygon;
use crate::render::Camera;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ToyPacking,
    RopeRouting,
    PushT,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobotConfig {
    /// URDF path, relative to the scenario file.
    pub urdf: String,
    pub ee_link: String,
    pub home_joints: Vec<f64>,
    /// ℓ2 cap on joint velocities (Appendix A.1.2 law), rad/s.
    pub velocity_norm_limit: f64,
    /// Links whose meshes act as gripper fingers (contact force source).
    pub finger_links: Vec<String>,
    /// DOF indices driven by the gripper opening, with per-joint signs:
    /// joint value = sign · opening / 2.
    pub gripper_joints: Vec<usize>,
    pub gripper_signs: Vec<f64>,
    pub max_opening: f64,
    pub closing_speed: f64,
    /// Total finger normal force (N) at which closing halts.
    pub force_threshold: f64,
    /// Friction coefficient for robot link contacts.
    pub link_mu: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectConfig {
    pub name: String,
    /// OBJ mesh sampled into an interior lattice (rigid-twin path), or an
    /// explicit JSON point list.
    pub source: ObjectSource,
    pub total_mass: f64,
    pub connection_threshold: f64,
    pub max_neighbors: usize,
    pub stiffness: f64,
    /// Optional per-spring stiffness file (one value per line), produced by
    /// the identification refinement stage.
    pub per_spring_stiffness: Option<String>,
    /// Nominal planar placement applied before episode randomization.
    pub nominal: PlanarPose,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectSource {
    Mesh { path: String, spacing: f64 },
    Points { path: String },
    /// Axis-aligned particle grid (procedural demo objects).
    Grid { center: [f64; 3], counts: [usize; 3], spacing: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StaticMeshConfig {
    pub path: String,
    pub translation: [f64; 3],
    pub mu: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessSpec {
    ToyPacking {
        container: OrientedBox,
        threshold: usize,
        window: usize,
        need: usize,
    },
    RopeRouting {
        openings: [PlanarPolygon; 2],
        seg_threshold: usize,
        window: usize,
        need: usize,
    },
    PushT {
        /// Planar goal pose of the object; targets are the rest particles
        /// placed there.
        goal: PlanarPose,
        tol: f64,
        window: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl PlanarPose {
    pub fn identity() -> Self {
        Self { x: 0.0, y: 0.0, theta: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaRange {
    Continuous(f64, f64),
    Discrete(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanarRanges {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub theta: ThetaRange,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub task: TaskKind,
    pub robot: RobotConfig,
    pub objects: Vec<ObjectConfig>,
    pub static_meshes: Vec<StaticMeshConfig>,
    pub ground_z: Option<f64>,
    pub sim: SimParams,
    /// Episode length in control frames (30 Hz).
    pub horizon_frames: usize,
    pub cameras: Vec<Camera>,
    /// Splat PLY rendered as the scene; optional (headless physics otherwise).
    pub kernels: Option<String>,
    /// Color-transform file applied at render time.
    pub color_transform: Option<String>,
    pub success: SuccessSpec,
    /// Per-object randomization ranges, parallel to `objects`.
    pub randomization: Vec<PlanarRanges>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Scenario {
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path_str = path.as_ref().display().to_string();
        let text = std::fs::read_to_string(&path).map_err(|e| CoreError::Io {
            path: path_str.clone(),
            source: e,
        })?;
        let mut scenario: Scenario =
            serde_json::from_str(&text).map_err(|e| CoreError::Parse {
                path: path_str.clone(),
                line: e.line(),
                msg: e.to_string(),
            })?;
        scenario.base_dir = path
            .as_ref()
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CoreError::Invalid(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| CoreError::Io {
            path: path.as_ref().display().to_string(),
            source: e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() {
            return Err(CoreError::Scenario("no objects defined".into()));
        }
        if self.randomization.len() != self.objects.len() {
            return Err(CoreError::Scenario(
                "randomization ranges must match object count".into(),
            ));
        }
        if self.horizon_frames == 0 {
            return Err(CoreError::Scenario("zero horizon".into()));
        }
        if self.robot.gripper_joints.len() != self.robot.gripper_signs.len() {
            return Err(CoreError::Scenario(
                "gripper joint/sign length mismatch".into(),
            ));
        }
        for c in &self.cameras {
            c.validate()?;
        }
        Ok(())
    }

    pub fn resolve<P: AsRef<Path>>(&self, rel: P) -> PathBuf {
        self.base_dir.join(rel)
    }

    /// FNV-1a hash over the canonical JSON encoding; stamped into artifacts.
    pub fn config_hash(&self) -> u64 {
        let text = serde_json::to_string(self).expect("scenario serializes");
        let mut h: u64 = 0xcbf29ce484222325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}
