//! The per-substep solver stages. All loops run in a fixed order so that
//! identical inputs produce bit-identical outputs.

use super::{ContactReport, SpringMassModel};
use crate::geom::RigidTransform;
use crate::mesh::MeshQuery;
use nalgebra::Vector3;
use std::collections::HashMap;

const DEGENERATE_LENGTH: f64 = 1e-9;

/// Velocity update from gravity, spring forces, and global drag. Positions
/// are not touched; integration happens at the end of the substep.
pub fn step_springs(model: &mut SpringMassModel, dt: f64) {
    debug_assert!(dt > 0.0);
    let n = model.len();
    let mut forces = vec![Vector3::zeros(); n];
    let mut degenerate = 0u64;
    for s in &model.springs {
        let delta = model.positions[s.j] - model.positions[s.i];
        let dist = delta.norm();
        if dist < DEGENERATE_LENGTH {
            degenerate += 1;
            continue;
        }
        let dir = delta / dist;
        let elastic = s.stiffness * (dist - s.rest_length);
        let damping = model.params.spring_damping * (model.velocities[s.j] - model.velocities[s.i]).dot(&dir);
        let f = dir * (elastic + damping);
        forces[s.i] += f;
        forces[s.j] -= f;
    }
    model.degenerate_spring_events += degenerate;

    let g = model.params.gravity_vec();
    let drag_scale = (1.0 - dt * model.params.global_drag).max(0.0);
    for i in 0..n {
        let v = model.velocities[i] + (g + forces[i] / model.masses[i]) * dt;
        model.velocities[i] = v * drag_scale;
    }
}

/// Zero-restitution symmetric impulses between unconnected particle pairs
/// closer than the self-collision radius. Pairs come from a uniform spatial
/// hash and are processed in sorted order for determinism.
pub fn self_collision(model: &mut SpringMassModel) {
    let radius = model.params.self_collision_radius;
    if radius <= 0.0 || model.len() < 2 {
        return;
    }
    let pairs = proximity_pairs(&model.positions, radius);
    apply_pair_impulses(model, &pairs);
}

pub(crate) fn apply_pair_impulses(model: &mut SpringMassModel, pairs: &[(usize, usize)]) {
    let radius = model.params.self_collision_radius;
    for &(i, j) in pairs {
        if model.are_connected(i, j) {
            continue;
        }
        let delta = model.positions[j] - model.positions[i];
        let dist = delta.norm();
        if dist >= radius || dist < DEGENERATE_LENGTH {
            continue;
        }
        let n = delta / dist;
        let rel_n = (model.velocities[j] - model.velocities[i]).dot(&n);
        if rel_n >= 0.0 {
            continue; // separating
        }
        let (mi, mj) = (model.masses[i], model.masses[j]);
        // Merge normal components to the common (momentum-preserving) value.
        let vi_n = model.velocities[i].dot(&n);
        let vj_n = model.velocities[j].dot(&n);
        let v_common = (mi * vi_n + mj * vj_n) / (mi + mj);
        model.velocities[i] += n * (v_common - vi_n);
        model.velocities[j] += n * (v_common - vj_n);
    }
}

/// Candidate pairs (i < j, sorted) within `radius`, via a uniform grid.
pub(crate) fn proximity_pairs(positions: &[Vector3<f64>], radius: f64) -> Vec<(usize, usize)> {
    let cell = radius;
    let key = |p: &Vector3<f64>| -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (idx, p) in positions.iter().enumerate() {
        grid.entry(key(p)).or_default().push(idx);
    }
    let r2 = radius * radius;
    let mut pairs = Vec::new();
    for (idx, p) in positions.iter().enumerate() {
        let (cx, cy, cz) = key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &other in bucket {
                            if other > idx && (positions[other] - p).norm_squared() < r2 {
                                pairs.push((idx, other));
                            }
                        }
                    }
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Collide particles against a (possibly moving) triangle mesh.
///
/// Contact model: particles within the contact offset receive (a) a
/// zero-restitution cancellation of the approaching normal relative velocity,
/// (b) a penalty push-out proportional to penetration (rate-limited so deep
/// contacts cannot overshoot), and (c) Coulomb friction clamping the
/// tangential velocity relative to the moving surface. Particles below the
/// actual surface are projected back onto it. Normal impulses accumulate into
/// `report` under `link`.
#[allow(clippy::too_many_arguments)]
pub fn collide_mesh(
    model: &mut SpringMassModel,
    query: &MeshQuery,
    pose_prev: &RigidTransform,
    pose_next: &RigidTransform,
    mu: f64,
    dt: f64,
    report: &mut ContactReport,
    link: Option<usize>,
) {
    let offset = model.params.contact_offset;
    let stiffness = model.params.contact_stiffness;
    let inv_next = pose_next.inverse();
    // Search radius: the offset plus headroom for penetrations developed
    // between substeps.
    let search = offset + 0.05;
    for idx in 0..model.len() {
        let world = model.positions[idx];
        let local = inv_next.apply(&world);
        let Some(hit) = query.closest_within(&local, search) else {
            continue;
        };
        let sd = hit.signed_distance;
        if sd > offset {
            continue;
        }
        let n = pose_next.apply_vector(&hit.normal);
        // Surface velocity of the contact point from the pose sweep.
        let v_surface = (pose_next.apply(&hit.point) - pose_prev.apply(&hit.point)) / dt;
        let v_rel = model.velocities[idx] - v_surface;
        let rel_n = v_rel.dot(&n);

        let cancel = (-rel_n).max(0.0);
        let pen = (offset - sd).max(0.0);
        let mass = model.masses[idx];
        let penalty = (dt * stiffness * pen / mass).min(0.5 * pen / dt);
        let dv_n = cancel + penalty;
        model.velocities[idx] += n * dv_n;

        if mu > 0.0 {
            let v_t = v_rel - n * rel_n;
            let speed_t = v_t.norm();
            if speed_t > 0.0 {
                let cap = mu * dv_n;
                if speed_t <= cap {
                    model.velocities[idx] -= v_t;
                } else {
                    model.velocities[idx] -= v_t * (cap / speed_t);
                }
            }
        }

        if sd < 0.0 {
            model.positions[idx] += n * (-sd);
        }

        let impulse = mass * dv_n;
        match link {
            Some(l) => {
                if l < report.link_normal_impulse.len() {
                    report.link_normal_impulse[l] += impulse;
                }
            }
            None => report.static_normal_impulse += impulse,
        }
        if idx < report.contact_flags.len() {
            report.contact_flags[idx] = true;
        }
    }
}

/// Ground-plane contact: projection to the plane, zero-restitution normal
/// velocity, Coulomb friction against the tangential velocity.
pub fn collide_ground(model: &mut SpringMassModel, z0: f64, report: &mut ContactReport) {
    let mu = model.params.friction_mu_ground;
    for idx in 0..model.len() {
        if model.positions[idx].z > z0 {
            continue;
        }
        model.positions[idx].z = z0;
        let vz = model.velocities[idx].z;
        let cancel = (-vz).max(0.0);
        if vz < 0.0 {
            model.velocities[idx].z = 0.0;
        }
        if mu > 0.0 && cancel > 0.0 {
            let v_t = Vector3::new(model.velocities[idx].x, model.velocities[idx].y, 0.0);
            let speed_t = v_t.norm();
            if speed_t > 0.0 {
                let cap = mu * cancel;
                if speed_t <= cap {
                    model.velocities[idx] -= v_t;
                } else {
                    model.velocities[idx] -= v_t * (cap / speed_t);
                }
            }
        }
        report.ground_normal_impulse += model.masses[idx] * cancel;
        if idx < report.contact_flags.len() {
            report.contact_flags[idx] = true;
        }
    }
}
