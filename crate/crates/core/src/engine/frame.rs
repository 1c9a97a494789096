//! Frame-level integration: interpolated kinematic meshes, pinned control
//! particles, and the gripper grasp-halt rule.

use super::stages::{collide_ground, collide_mesh, self_collision, step_springs};
use super::{ContactReport, SpringMassModel};
use crate::error::Result;
use crate::geom::RigidTransform;
use crate::mesh::MeshQuery;
use nalgebra::Vector3;

/// A collision mesh swept over one frame. `poses` holds substeps+1 poses,
/// i.e. the pose at the start of every substep plus the end-of-frame pose.
pub struct KinematicMeshFrame<'a> {
    pub query: &'a MeshQuery,
    pub poses: &'a [RigidTransform],
    pub mu: f64,
    pub link: usize,
}

pub struct StaticMeshFrame<'a> {
    pub query: &'a MeshQuery,
    pub pose: RigidTransform,
    pub mu: f64,
}

/// Integrate one control frame.
///
/// Per substep: spring forces → self collision → kinematic mesh collisions →
/// static mesh collisions → ground collision → position integration. Pinned
/// particles are kinematically overridden (position interpolated across the
/// frame, velocity consistent with the interpolation). Returns the
/// accumulated contact report; faults with the substep index if the state
/// goes non-finite.
pub fn simulate_frame(
    model: &mut SpringMassModel,
    kinematic: &[KinematicMeshFrame<'_>],
    statics: &[StaticMeshFrame<'_>],
    ground_z: Option<f64>,
    pins: &[(usize, Vector3<f64>, Vector3<f64>)],
    link_count: usize,
) -> Result<ContactReport> {
    let substeps = model.params.substeps;
    let dt = model.params.substep_dt();
    let mut report = ContactReport::new(link_count, model.len(), model.params.frame_dt);
    for k in kinematic {
        debug_assert_eq!(k.poses.len(), substeps + 1);
    }

    for tau in 0..substeps {
        step_springs(model, dt);
        self_collision(model);
        for k in kinematic {
            collide_mesh(
                model,
                k.query,
                &k.poses[tau],
                &k.poses[tau + 1],
                k.mu,
                dt,
                &mut report,
                Some(k.link),
            );
        }
        for s in statics {
            collide_mesh(model, s.query, &s.pose, &s.pose, s.mu, dt, &mut report, None);
        }
        if let Some(z0) = ground_z {
            collide_ground(model, z0, &mut report);
        }
        for i in 0..model.len() {
            model.positions[i] += model.velocities[i] * dt;
        }
        let alpha = (tau + 1) as f64 / substeps as f64;
        for &(p, start, end) in pins {
            let target = start + (end - start) * alpha;
            let prev = start + (end - start) * (tau as f64 / substeps as f64);
            model.positions[p] = target;
            model.velocities[p] = (target - prev) / dt;
        }
        model.check_finite(tau)?;
    }
    Ok(report)
}

/// Gripper closing rule: the opening shrinks at `closing_speed` until the
/// total finger normal force reaches `force_threshold`, then freezes. Objects
/// are never attached; the grasp holds only through friction.
pub fn grasp_step(
    opening: f64,
    target_opening: f64,
    closing_speed: f64,
    frame_dt: f64,
    finger_force: f64,
    force_threshold: f64,
) -> f64 {
    if target_opening >= opening {
        // Opening motion is never force-limited.
        return (opening + closing_speed * frame_dt).min(target_opening);
    }
    if finger_force >= force_threshold {
        return opening;
    }
    (opening - closing_speed * frame_dt).max(target_opening).max(0.0)
}
