//! Digital-twin construction and system identification: spring-mass models
//! built from point sets (distance-threshold connectivity), rigid twins
//! sampled inside meshes, and parameter identification against tracked
//! trajectories (cross-entropy search for global parameters, SPSA refinement
//! for per-spring stiffness).

use crate::engine::{simulate_frame, SimParams, Spring, SpringMassModel};
use crate::error::{CoreError, Result};
use crate::mesh::{MeshQuery, TriangleMesh};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum StiffnessMode {
    Uniform(f64),
    PerSpring(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwinSpec {
    /// Springs connect node pairs within this distance, m.
    pub connection_threshold: f64,
    /// Nearest-neighbor cap per node (union of per-node selections).
    pub max_neighbors: usize,
    pub stiffness_mode: StiffnessMode,
    pub particle_spacing: f64,
    pub total_mass: f64,
}

impl TwinSpec {
    pub fn uniform(connection_threshold: f64, max_neighbors: usize, stiffness: f64) -> Self {
        Self {
            connection_threshold,
            max_neighbors,
            stiffness_mode: StiffnessMode::Uniform(stiffness),
            particle_spacing: 0.02,
            total_mass: 0.1,
        }
    }
}

/// T-block style rigid twin parameters: connection radius 0.5 in the twin
/// frame, 50 neighbors, uniform stiffness 3e4.
pub const RIGID_TWIN_RADIUS: f64 = 0.5;
pub const RIGID_TWIN_MAX_NEIGHBORS: usize = 50;
pub const RIGID_TWIN_STIFFNESS: f64 = 3.0e4;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrackedFrame {
    pub time: f64,
    pub points: Vec<[f64; 3]>,
    pub controls: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackedTrajectory {
    pub frames: Vec<TrackedFrame>,
}

impl TrackedTrajectory {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(CoreError::Invalid("empty trajectory".into()));
        }
        let n = self.frames[0].points.len();
        let k = self.frames[0].controls.len();
        let mut prev_t = f64::NEG_INFINITY;
        for (i, f) in self.frames.iter().enumerate() {
            if f.points.len() != n || f.controls.len() != k {
                return Err(CoreError::Invalid(format!(
                    "frame {i}: inconsistent point/control counts"
                )));
            }
            if f.time <= prev_t {
                return Err(CoreError::Invalid(format!(
                    "frame {i}: time not strictly increasing"
                )));
            }
            prev_t = f.time;
        }
        Ok(())
    }

    pub fn point(&self, frame: usize, idx: usize) -> Vector3<f64> {
        let p = self.frames[frame].points[idx];
        Vector3::new(p[0], p[1], p[2])
    }

    pub fn control(&self, frame: usize, idx: usize) -> Vector3<f64> {
        let c = self.frames[frame].controls[idx];
        Vector3::new(c[0], c[1], c[2])
    }

    /// One JSON frame per line.
    pub fn save_jsonl<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let path_str = path.as_ref().display().to_string();
        let file = std::fs::File::create(&path).map_err(|e| CoreError::Io {
            path: path_str.clone(),
            source: e,
        })?;
        let mut w = BufWriter::new(file);
        for f in &self.frames {
            let line = serde_json::to_string(f).map_err(|e| CoreError::Invalid(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| CoreError::Io {
                path: path_str.clone(),
                source: e,
            })?;
        }
        Ok(())
    }

    pub fn load_jsonl<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path_str = path.as_ref().display().to_string();
        let file = std::fs::File::open(&path).map_err(|e| CoreError::Io {
            path: path_str.clone(),
            source: e,
        })?;
        let mut frames = Vec::new();
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| CoreError::Io {
                path: path_str.clone(),
                source: e,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let frame: TrackedFrame = serde_json::from_str(&line).map_err(|e| CoreError::Parse {
                path: path_str.clone(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
            frames.push(frame);
        }
        let traj = Self { frames };
        traj.validate()?;
        Ok(traj)
    }
}

/// Build a spring-mass model from a point set: springs connect every pair
/// within the connection threshold, capped at `max_neighbors` nearest per
/// node (union of per-node selections). Returns the model and the indices of
/// isolated nodes (no spring), which callers should surface as warnings.
pub fn build_spring_mass(
    points: &[Vector3<f64>],
    spec: &TwinSpec,
    params: SimParams,
) -> Result<(SpringMassModel, Vec<usize>)> {
    if points.is_empty() {
        return Err(CoreError::Invalid("no points to build a twin from".into()));
    }
    if points.len() < 2 {
        return Err(CoreError::Invalid("need at least 2 points".into()));
    }
    let n = points.len();
    let d = spec.connection_threshold;
    let d2 = d * d;

    // Per-node nearest-neighbor selection within the threshold, tie-broken by
    // index for determinism.
    let mut selected: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        let mut neigh: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .filter_map(|j| {
                let dist2 = (points[j] - points[i]).norm_squared();
                (dist2 <= d2).then_some((dist2, j))
            })
            .collect();
        neigh.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &(_, j) in neigh.iter().take(spec.max_neighbors) {
            selected.push((i.min(j), i.max(j)));
        }
    }
    selected.sort_unstable();
    selected.dedup();

    let mut degree = vec![0usize; n];
    let stiffness_of = |k: usize| -> f64 {
        match &spec.stiffness_mode {
            StiffnessMode::Uniform(y) => *y,
            StiffnessMode::PerSpring(ys) => ys[k.min(ys.len().saturating_sub(1))],
        }
    };
    let springs: Vec<Spring> = selected
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            degree[i] += 1;
            degree[j] += 1;
            Spring {
                i,
                j,
                rest_length: (points[j] - points[i]).norm(),
                stiffness: stiffness_of(k),
            }
        })
        .collect();
    let isolated: Vec<usize> = (0..n).filter(|&i| degree[i] == 0).collect();

    let mass = spec.total_mass / n as f64;
    let model = SpringMassModel::new(points.to_vec(), vec![mass; n], springs, params)?;
    Ok((model, isolated))
}

/// Uniformly sample lattice points (voxel centers at `spacing`) inside a
/// closed mesh and connect them with the rigid-twin parameters.
pub fn build_rigid_twin(
    mesh: &TriangleMesh,
    spacing: f64,
    total_mass: f64,
    connection_radius: f64,
    params: SimParams,
) -> Result<SpringMassModel> {
    let points = sample_interior_lattice(mesh, spacing);
    if points.len() < 4 {
        return Err(CoreError::Invalid(format!(
            "spacing {spacing} yields only {} interior points (need >= 4)",
            points.len()
        )));
    }
    let spec = TwinSpec {
        connection_threshold: connection_radius,
        max_neighbors: RIGID_TWIN_MAX_NEIGHBORS,
        stiffness_mode: StiffnessMode::Uniform(RIGID_TWIN_STIFFNESS),
        particle_spacing: spacing,
        total_mass,
    };
    let (model, _isolated) = build_spring_mass(&points, &spec, params)?;
    Ok(model)
}

/// Voxel-center lattice points contained in the mesh.
pub fn sample_interior_lattice(mesh: &TriangleMesh, spacing: f64) -> Vec<Vector3<f64>> {
    let query = MeshQuery::new(mesh.clone());
    let (lo, hi) = mesh.aabb();
    let mut points = Vec::new();
    let counts = [
        ((hi.x - lo.x) / spacing).ceil() as i64,
        ((hi.y - lo.y) / spacing).ceil() as i64,
        ((hi.z - lo.z) / spacing).ceil() as i64,
    ];
    for ix in 0..counts[0] {
        for iy in 0..counts[1] {
            for iz in 0..counts[2] {
                let p = Vector3::new(
                    lo.x + (ix as f64 + 0.5) * spacing,
                    lo.y + (iy as f64 + 0.5) * spacing,
                    lo.z + (iz as f64 + 0.5) * spacing,
                );
                if query.contains(&p) {
                    points.push(p);
                }
            }
        }
    }
    points
}

/// Attach each control point to its nearest particle (kinematic pinning).
pub fn attach_control_points(model: &SpringMassModel, controls: &[Vector3<f64>]) -> Vec<usize> {
    controls
        .iter()
        .map(|c| {
            (0..model.len())
                .min_by(|&a, &b| {
                    let da = (model.positions[a] - c).norm_squared();
                    let db = (model.positions[b] - c).norm_squared();
                    da.partial_cmp(&db).unwrap()
                })
                .expect("nonempty model")
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossMode {
    /// One-to-one correspondence by index (synthetic tracks).
    IndexedMse,
    /// Symmetric Chamfer distance for unordered tracks.
    Chamfer,
}

/// Replay the control points kinematically and return the mean (over frames)
/// of the mean squared distance between simulated particles and tracked
/// points. Simulation faults yield +inf.
pub fn trajectory_loss(
    model: &SpringMassModel,
    traj: &TrackedTrajectory,
    ground_z: Option<f64>,
    mode: LossMode,
) -> f64 {
    if traj.frames.len() < 2 {
        return f64::INFINITY;
    }
    let n_points = traj.frames[0].points.len();
    if mode == LossMode::IndexedMse && n_points != model.len() {
        return f64::INFINITY;
    }
    let mut sim = model.clone();
    let controls0: Vec<Vector3<f64>> =
        (0..traj.frames[0].controls.len()).map(|k| traj.control(0, k)).collect();
    let pinned = attach_control_points(&sim, &controls0);

    let mut total = 0.0;
    let mut frames_counted = 0usize;
    for f in 0..traj.frames.len() - 1 {
        sim.params.frame_dt = traj.frames[f + 1].time - traj.frames[f].time;
        let pins: Vec<(usize, Vector3<f64>, Vector3<f64>)> = pinned
            .iter()
            .enumerate()
            .map(|(k, &p)| (p, sim.positions[p], traj.control(f + 1, k)))
            .collect();
        if simulate_frame(&mut sim, &[], &[], ground_z, &pins, 0).is_err() {
            return f64::INFINITY;
        }
        total += frame_mse(&sim.positions, traj, f + 1, mode);
        frames_counted += 1;
    }
    total / frames_counted as f64
}

fn frame_mse(sim: &[Vector3<f64>], traj: &TrackedTrajectory, frame: usize, mode: LossMode) -> f64 {
    let n = traj.frames[frame].points.len();
    match mode {
        LossMode::IndexedMse => {
            let sum: f64 = (0..n)
                .map(|i| (sim[i] - traj.point(frame, i)).norm_squared())
                .sum();
            sum / n as f64
        }
        LossMode::Chamfer => {
            let fwd: f64 = sim
                .iter()
                .map(|p| {
                    (0..n)
                        .map(|i| (p - traj.point(frame, i)).norm_squared())
                        .fold(f64::INFINITY, f64::min)
                })
                .sum::<f64>()
                / sim.len() as f64;
            let bwd: f64 = (0..n)
                .map(|i| {
                    let t = traj.point(frame, i);
                    sim.iter()
                        .map(|p| (p - t).norm_squared())
                        .fold(f64::INFINITY, f64::min)
                })
                .sum::<f64>()
                / n as f64;
            0.5 * (fwd + bwd)
        }
    }
}

/// Inclusive search box per global parameter.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ParamRanges {
    pub connection_threshold: (f64, f64),
    pub stiffness: (f64, f64),
    pub friction_mu: (f64, f64),
    pub spring_damping: (f64, f64),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GlobalParams {
    pub connection_threshold: f64,
    pub stiffness: f64,
    pub friction_mu: f64,
    pub spring_damping: f64,
}

#[derive(Debug, Clone)]
pub struct IdentificationResult {
    pub params: GlobalParams,
    pub loss: f64,
    /// Best-so-far loss after each generation (non-increasing).
    pub loss_trace: Vec<f64>,
}

pub const CEM_POPULATION: usize = 32;
pub const CEM_ELITES: usize = 8;
pub const CEM_GENERATIONS: usize = 20;

/// Cross-entropy search over the global parameter box, minimizing
/// [`trajectory_loss`] of a model rebuilt from `points` per candidate.
/// Deterministic given the seed; candidate evaluations run in parallel with a
/// fixed aggregation order.
pub fn identify_global_params(
    points: &[Vector3<f64>],
    traj: &TrackedTrajectory,
    ranges: &ParamRanges,
    base_params: SimParams,
    total_mass: f64,
    max_neighbors: usize,
    ground_z: Option<f64>,
    seed: u64,
) -> Result<IdentificationResult> {
    traj.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boxes = [
        ranges.connection_threshold,
        ranges.stiffness,
        ranges.friction_mu,
        ranges.spring_damping,
    ];
    let mut mean = [0.5f64; 4];
    let mut std = [0.3f64; 4];

    let evaluate = |unit: &[f64; 4]| -> f64 {
        let denorm = |k: usize| boxes[k].0 + unit[k] * (boxes[k].1 - boxes[k].0);
        let params = GlobalParams {
            connection_threshold: denorm(0),
            stiffness: denorm(1),
            friction_mu: denorm(2),
            spring_damping: denorm(3),
        };
        candidate_loss(points, traj, &params, base_params, total_mass, max_neighbors, ground_z)
    };

    let mut best_unit = mean;
    let mut best_loss = f64::INFINITY;
    let mut trace = Vec::with_capacity(CEM_GENERATIONS);
    for _gen in 0..CEM_GENERATIONS {
        let candidates: Vec<[f64; 4]> = (0..CEM_POPULATION)
            .map(|_| {
                let mut u = [0.0; 4];
                for k in 0..4 {
                    let g: f64 = sample_gauss(&mut rng);
                    u[k] = (mean[k] + std[k] * g).clamp(0.0, 1.0);
                }
                u
            })
            .collect();
        let losses: Vec<f64> = candidates.par_iter().map(evaluate).collect();
        let mut order: Vec<usize> = (0..CEM_POPULATION).collect();
        order.sort_by(|&a, &b| losses[a].partial_cmp(&losses[b]).unwrap());
        if losses[order[0]] < best_loss {
            best_loss = losses[order[0]];
            best_unit = candidates[order[0]];
        }
        trace.push(best_loss);
        let elites: Vec<&[f64; 4]> = order[..CEM_ELITES].iter().map(|&i| &candidates[i]).collect();
        for k in 0..4 {
            let m: f64 = elites.iter().map(|e| e[k]).sum::<f64>() / CEM_ELITES as f64;
            let v: f64 = elites.iter().map(|e| (e[k] - m).powi(2)).sum::<f64>() / CEM_ELITES as f64;
            mean[k] = m;
            std[k] = v.sqrt().max(0.02);
        }
    }
    if !best_loss.is_finite() {
        return Err(CoreError::Invalid(
            "all identification candidates faulted; widen the parameter box or lower stiffness".into(),
        ));
    }
    let denorm = |k: usize, u: f64| boxes[k].0 + u * (boxes[k].1 - boxes[k].0);
    Ok(IdentificationResult {
        params: GlobalParams {
            connection_threshold: denorm(0, best_unit[0]),
            stiffness: denorm(1, best_unit[1]),
            friction_mu: denorm(2, best_unit[2]),
            spring_damping: denorm(3, best_unit[3]),
        },
        loss: best_loss,
        loss_trace: trace,
    })
}

fn candidate_loss(
    points: &[Vector3<f64>],
    traj: &TrackedTrajectory,
    gp: &GlobalParams,
    base_params: SimParams,
    total_mass: f64,
    max_neighbors: usize,
    ground_z: Option<f64>,
) -> f64 {
    let spec = TwinSpec {
        connection_threshold: gp.connection_threshold,
        max_neighbors,
        stiffness_mode: StiffnessMode::Uniform(gp.stiffness),
        particle_spacing: 0.0,
        total_mass,
    };
    let mut params = base_params;
    params.spring_damping = gp.spring_damping;
    params.friction_mu_ground = gp.friction_mu;
    let Ok((mut model, _)) = build_spring_mass(points, &spec, params) else {
        return f64::INFINITY;
    };
    model.params.substeps = model.stable_substeps(0.5);
    trajectory_loss(&model, traj, ground_z, LossMode::IndexedMse)
}

/// Marsaglia polar method on a uniform source, for a dependency-free
/// deterministic normal sample.
fn sample_gauss<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen_range(-1.0..1.0);
        let v: f64 = rng.gen_range(-1.0..1.0);
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * (-2.0 * s.ln() / s).sqrt();
        }
    }
}

#[derive(Debug, Clone)]
pub struct RefinementResult {
    pub stiffness: Vec<f64>,
    pub loss_trace: Vec<f64>,
    pub diverged: bool,
}

/// SPSA refinement of per-spring stiffness on a log scale. Returns the best
/// iterate; a divergence (loss above 10x the initial) reverts to it and sets
/// the flag.
#[allow(clippy::too_many_arguments)]
pub fn refine_per_spring_stiffness(
    model: &SpringMassModel,
    traj: &TrackedTrajectory,
    iterations: usize,
    ground_z: Option<f64>,
    stiffness_bounds: (f64, f64),
    perturbation: f64,
    step_size: f64,
    seed: u64,
) -> Result<RefinementResult> {
    traj.validate()?;
    let n_springs = model.springs.len();
    let mut log_y: Vec<f64> = model.springs.iter().map(|s| s.stiffness.ln()).collect();
    let (lo, hi) = (stiffness_bounds.0.ln(), stiffness_bounds.1.ln());

    let eval = |log_y: &[f64]| -> f64 {
        let mut m = model.clone();
        for (s, &ly) in m.springs.iter_mut().zip(log_y) {
            s.stiffness = ly.exp();
        }
        m.params.substeps = m.stable_substeps(0.5);
        trajectory_loss(&m, traj, ground_z, LossMode::IndexedMse)
    };

    let initial = eval(&log_y);
    let mut best = log_y.clone();
    let mut best_loss = initial;
    let mut trace = vec![initial];
    let mut diverged = false;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for _ in 0..iterations {
        let delta: Vec<f64> = (0..n_springs)
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let plus: Vec<f64> = log_y
            .iter()
            .zip(&delta)
            .map(|(&y, &d)| (y + perturbation * d).clamp(lo, hi))
            .collect();
        let minus: Vec<f64> = log_y
            .iter()
            .zip(&delta)
            .map(|(&y, &d)| (y - perturbation * d).clamp(lo, hi))
            .collect();
        let (l_plus, l_minus) = rayon::join(|| eval(&plus), || eval(&minus));
        for (cand, loss) in [(&plus, l_plus), (&minus, l_minus)] {
            if loss < best_loss {
                best_loss = loss;
                best = cand.clone();
            }
        }
        if l_plus.is_finite() && l_minus.is_finite() {
            let slope = (l_plus - l_minus) / (2.0 * perturbation);
            for (y, &d) in log_y.iter_mut().zip(&delta) {
                *y = (*y - step_size * slope * d).clamp(lo, hi);
            }
        } else {
            // Faulted probe: fall back toward the best iterate.
            log_y = best.clone();
        }
        let current = eval(&log_y);
        if current < best_loss {
            best_loss = current;
            best = log_y.clone();
        }
        if current > 10.0 * initial.max(1e-12) {
            diverged = true;
            log_y = best.clone();
        }
        trace.push(best_loss);
    }

    Ok(RefinementResult {
        stiffness: best.iter().map(|&y| y.exp()).collect(),
        loss_trace: trace,
        diverged,
    })
}

/// Simulate a model while dragging pinned control particles along given
/// per-frame positions, recording a synthetic tracked trajectory.
pub fn generate_tracked_trajectory(
    model: &SpringMassModel,
    control_particles: &[usize],
    control_positions: &[Vec<Vector3<f64>>],
    frame_dt: f64,
    ground_z: Option<f64>,
) -> Result<TrackedTrajectory> {
    let mut sim = model.clone();
    sim.params.frame_dt = frame_dt;
    sim.params.substeps = sim.stable_substeps(0.5);
    let mut frames = Vec::with_capacity(control_positions.len());
    frames.push(TrackedFrame {
        time: 0.0,
        points: sim.positions.iter().map(|p| [p.x, p.y, p.z]).collect(),
        controls: control_particles
            .iter()
            .map(|&p| sim.positions[p].into())
            .collect(),
    });
    for (f, targets) in control_positions.iter().enumerate().skip(1) {
        let pins: Vec<(usize, Vector3<f64>, Vector3<f64>)> = control_particles
            .iter()
            .zip(targets)
            .map(|(&p, &t)| (p, sim.positions[p], t))
            .collect();
        simulate_frame(&mut sim, &[], &[], ground_z, &pins, 0)?;
        frames.push(TrackedFrame {
            time: f as f64 * frame_dt,
            points: sim.positions.iter().map(|p| [p.x, p.y, p.z]).collect(),
            controls: targets.iter().map(|t| [t.x, t.y, t.z]).collect(),
        });
    }
    Ok(TrackedTrajectory { frames })
}
