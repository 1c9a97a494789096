//! Non-batch commands: alignment tools, system identification, debug
//! rendering, and outcome reports.

use serde::{Deserialize, Serialize};
use splatsim_core::align::{icp_refine, ransac_coarse_align, segment_kernels_to_links, LabeledCloud};
use splatsim_core::color::{fit_color_transform, PixelPairSet, IRLS_ITERATIONS};
use splatsim_core::env::{sample_initial_grid, Environment, Scenario};
use splatsim_core::geom::RigidTransform;
use splatsim_core::metrics::{clopper_pearson, replay_confusion, Confusion};
use splatsim_core::splat::{load_splat_ply, save_splat_ply};
use splatsim_core::twin::{
    build_spring_mass, identify_global_params, refine_per_spring_stiffness, trajectory_loss,
    LossMode, ParamRanges, StiffnessMode, TrackedTrajectory, TwinSpec,
};
use splatsim_core::{CoreError, Result};
use nalgebra::Vector3;
use std::path::Path;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| CoreError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| CoreError::Invalid(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| CoreError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn as_vectors(raw: Vec<[f64; 3]>) -> Vec<Vector3<f64>> {
    raw.into_iter().map(Vector3::from).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformFile {
    pub quat_wxyz: [f64; 4],
    pub translation: [f64; 3],
}

impl From<&RigidTransform> for TransformFile {
    fn from(t: &RigidTransform) -> Self {
        let q = t.rotation.as_ref().coords;
        TransformFile {
            quat_wxyz: [q.w, q.x, q.y, q.z],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

#[derive(Debug, Serialize)]
pub struct PoseAlignReport {
    pub transform: TransformFile,
    pub rms: f64,
    pub iterations: usize,
    pub stalled: bool,
}

/// RANSAC + trimmed ICP between two point-cloud JSON files; writes the
/// refined transform and returns residual diagnostics.
pub fn cmd_align_pose(
    src_path: &Path,
    dst_path: &Path,
    out_path: &Path,
    trials: usize,
    inlier_tol: f64,
    seed: u64,
) -> Result<PoseAlignReport> {
    let src = as_vectors(read_json(src_path)?);
    let dst = as_vectors(read_json(dst_path)?);
    let coarse = ransac_coarse_align(&src, &dst, trials, inlier_tol, seed)?;
    let refined = icp_refine(&src, &dst, &coarse, 100, 1e-10)?;
    let transform = TransformFile::from(&refined.transform);
    write_json(out_path, &transform)?;
    Ok(PoseAlignReport {
        transform,
        rms: refined.rms,
        iterations: refined.iterations,
        stalled: refined.stalled,
    })
}

/// Fit the per-channel polynomial color transform from a JSON list of
/// (simulated, real) RGB pairs and write it as a text file.
pub fn cmd_align_color(
    pairs_path: &Path,
    out_path: &Path,
    degree: usize,
) -> Result<splatsim_core::color::ColorPolynomial> {
    let pairs: Vec<([f64; 3], [f64; 3])> = read_json(pairs_path)?;
    let set = PixelPairSet { pairs };
    let poly = fit_color_transform(&set, degree, IRLS_ITERATIONS)?;
    poly.save(out_path)?;
    Ok(poly)
}

/// Assign each kernel in a splat file the label of its nearest point in a
/// labeled cloud; writes the relabeled splat and returns the label histogram.
pub fn cmd_align_segment(
    splat_path: &Path,
    cloud_path: &Path,
    out_path: &Path,
) -> Result<Vec<(u32, usize)>> {
    #[derive(Deserialize)]
    struct CloudFile {
        points: Vec<[f64; 3]>,
        labels: Vec<u32>,
    }
    let mut kernels = load_splat_ply(splat_path)?;
    let raw: CloudFile = read_json(cloud_path)?;
    let cloud = LabeledCloud {
        points: as_vectors(raw.points),
        labels: raw.labels,
    };
    segment_kernels_to_links(&mut kernels, &cloud)?;
    save_splat_ply(out_path, &kernels)?;
    let mut histogram: std::collections::BTreeMap<u32, usize> = Default::default();
    for k in &kernels.kernels {
        *histogram.entry(k.label.unwrap_or(u32::MAX)).or_default() += 1;
    }
    Ok(histogram.into_iter().collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SysIdConfig {
    pub total_mass: f64,
    pub max_neighbors: usize,
    pub ground_z: Option<f64>,
    pub ranges: ParamRanges,
    #[serde(default = "default_refine_iterations")]
    pub refine_iterations: usize,
    #[serde(default = "default_stiffness_bounds")]
    pub stiffness_bounds: (f64, f64),
    #[serde(default = "default_perturbation")]
    pub perturbation: f64,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
}

fn default_refine_iterations() -> usize {
    30
}
fn default_stiffness_bounds() -> (f64, f64) {
    (1.0, 1e5)
}
fn default_perturbation() -> f64 {
    0.1
}
fn default_step_size() -> f64 {
    0.2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwinSpecFile {
    pub connection_threshold: f64,
    pub friction_mu: f64,
    pub spring_damping: f64,
    pub total_mass: f64,
    pub max_neighbors: usize,
    /// "uniform" or "per_spring".
    pub stiffness_mode: String,
    pub uniform_stiffness: f64,
    pub per_spring_stiffness: Option<Vec<f64>>,
    pub final_loss: f64,
    pub seed: u64,
}

/// Global CEM identification followed (unless `uniform_stiffness`) by SPSA
/// per-spring refinement. Writes the twin spec and both loss traces.
pub fn cmd_sysid(
    points_path: &Path,
    traj_path: &Path,
    config_path: &Path,
    out_dir: &Path,
    uniform_stiffness: bool,
    seed: u64,
) -> Result<TwinSpecFile> {
    let points = as_vectors(read_json(points_path)?);
    let traj = TrackedTrajectory::load_jsonl(traj_path)?;
    let config: SysIdConfig = read_json(config_path)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CoreError::Io {
        path: out_dir.display().to_string(),
        source: e,
    })?;

    let mut base_params = splatsim_core::engine::SimParams::default();
    if let Some(dt) = traj
        .frames
        .windows(2)
        .map(|w| w[1].time - w[0].time)
        .next()
    {
        base_params.frame_dt = dt;
    }
    let global = identify_global_params(
        &points,
        &traj,
        &config.ranges,
        base_params,
        config.total_mass,
        config.max_neighbors,
        config.ground_z,
        seed,
    )?;
    let mut trace_csv = String::from("stage,iteration,loss\n");
    for (i, l) in global.loss_trace.iter().enumerate() {
        trace_csv.push_str(&format!("global,{i},{l}\n"));
    }

    let spec = TwinSpec {
        connection_threshold: global.params.connection_threshold,
        max_neighbors: config.max_neighbors,
        stiffness_mode: StiffnessMode::Uniform(global.params.stiffness),
        particle_spacing: 0.0,
        total_mass: config.total_mass,
    };
    let mut params = base_params;
    params.spring_damping = global.params.spring_damping;
    params.friction_mu_ground = global.params.friction_mu;
    let (model, _isolated) = build_spring_mass(&points, &spec, params)?;

    let (per_spring, final_loss) = if uniform_stiffness || config.refine_iterations == 0 {
        (None, global.loss)
    } else {
        let refined = refine_per_spring_stiffness(
            &model,
            &traj,
            config.refine_iterations,
            config.ground_z,
            config.stiffness_bounds,
            config.perturbation,
            config.step_size,
            seed,
        )?;
        for (i, l) in refined.loss_trace.iter().enumerate() {
            trace_csv.push_str(&format!("refine,{i},{l}\n"));
        }
        let mut refined_model = model.clone();
        for (s, &y) in refined_model.springs.iter_mut().zip(&refined.stiffness) {
            s.stiffness = y;
        }
        let loss = trajectory_loss(&refined_model, &traj, config.ground_z, LossMode::IndexedMse);
        (Some(refined.stiffness), loss)
    };

    std::fs::write(out_dir.join("loss_trace.csv"), trace_csv).map_err(|e| CoreError::Io {
        path: out_dir.join("loss_trace.csv").display().to_string(),
        source: e,
    })?;
    let spec_file = TwinSpecFile {
        connection_threshold: global.params.connection_threshold,
        friction_mu: global.params.friction_mu,
        spring_damping: global.params.spring_damping,
        total_mass: config.total_mass,
        max_neighbors: config.max_neighbors,
        stiffness_mode: if per_spring.is_some() { "per_spring" } else { "uniform" }.into(),
        uniform_stiffness: global.params.stiffness,
        per_spring_stiffness: per_spring,
        final_loss,
        seed,
    };
    write_json(&out_dir.join("twin_spec.json"), &spec_file)?;
    Ok(spec_file)
}

/// Render the scenario's first grid state from one camera into a PNG.
pub fn cmd_render(scenario_path: &Path, camera: usize, out_path: &Path) -> Result<()> {
    let scenario = Scenario::load(scenario_path)?;
    if scenario.kernels.is_none() {
        return Err(CoreError::Invalid(
            "scenario has no splat kernels to render".into(),
        ));
    }
    if camera >= scenario.cameras.len() {
        return Err(CoreError::Invalid(format!(
            "camera index {camera} out of range ({} cameras)",
            scenario.cameras.len()
        )));
    }
    let randomization = scenario.randomization.clone();
    let mut env = Environment::new(scenario)?;
    let states = sample_initial_grid(&randomization, 1);
    let obs = env.reset(&states[0])?;
    obs.images[camera].save_png(out_path)
}

#[derive(Debug, Serialize)]
pub struct OutcomeReport {
    pub file: String,
    pub episodes: usize,
    pub successes: usize,
    pub faults: usize,
    pub success_rate: f64,
    pub interval: (f64, f64),
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub outcomes: Vec<OutcomeReport>,
    /// Present when exactly two outcome files are given: rows = first file,
    /// columns = second, matched by episode id.
    pub confusion: Option<Confusion>,
}

/// Success-rate statistics over outcome files, plus a confusion matrix when
/// comparing exactly two sets (e.g. replay vs original).
pub fn cmd_report(paths: &[std::path::PathBuf]) -> Result<Report> {
    let mut outcomes = Vec::new();
    let mut sets = Vec::new();
    for path in paths {
        let records = crate::runner::load_outcomes(path)?;
        if records.is_empty() {
            return Err(CoreError::Invalid(format!(
                "no outcome records in {}",
                path.display()
            )));
        }
        let successes = records.iter().filter(|r| r.success).count();
        let faults = records.iter().filter(|r| r.fault.is_some()).count();
        outcomes.push(OutcomeReport {
            file: path.display().to_string(),
            episodes: records.len(),
            successes,
            faults,
            success_rate: successes as f64 / records.len() as f64,
            interval: clopper_pearson(successes, records.len(), 0.95)?,
        });
        sets.push(
            records
                .into_iter()
                .map(|r| (r.episode_id, r.success))
                .collect::<Vec<_>>(),
        );
    }
    let confusion = if sets.len() == 2 {
        Some(replay_confusion(&sets[0], &sets[1])?)
    } else {
        None
    };
    Ok(Report { outcomes, confusion })
}
