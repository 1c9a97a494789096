//! Deterministic spring-mass dynamics with self-, mesh-, and ground-collision
//! handling. One control frame is integrated as `substeps` semi-implicit Euler
//! substeps: spring forces, self collision, kinematic mesh collisions, static
//! mesh collisions, ground collision, then position integration.

mod frame;
mod stages;

pub use frame::{simulate_frame, grasp_step, KinematicMeshFrame, StaticMeshFrame};
pub use stages::{collide_ground, collide_mesh, self_collision, step_springs};

use crate::error::{CoreError, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Spring {
    pub i: usize,
    pub j: usize,
    pub rest_length: f64,
    pub stiffness: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SimParams {
    /// Control frame duration in seconds.
    pub frame_dt: f64,
    pub substeps: usize,
    /// Per-spring damping along the spring axis, N·s/m.
    pub spring_damping: f64,
    /// Uniform velocity drag, 1/s.
    pub global_drag: f64,
    pub self_collision_radius: f64,
    /// Contact penalty stiffness, N/m.
    pub contact_stiffness: f64,
    /// Contact offset around mesh surfaces, m.
    pub contact_offset: f64,
    pub friction_mu_ground: f64,
    pub friction_mu_robot: f64,
    pub friction_mu_mesh: f64,
    pub gravity: [f64; 3],
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            frame_dt: 1.0 / 30.0,
            substeps: 20,
            spring_damping: 0.0,
            global_drag: 0.1,
            self_collision_radius: 0.0,
            contact_stiffness: 1e4,
            contact_offset: 2e-3,
            friction_mu_ground: 0.5,
            friction_mu_robot: 0.8,
            friction_mu_mesh: 0.5,
            gravity: [0.0, 0.0, -9.81],
        }
    }
}

impl SimParams {
    pub fn gravity_vec(&self) -> Vector3<f64> {
        Vector3::new(self.gravity[0], self.gravity[1], self.gravity[2])
    }

    pub fn substep_dt(&self) -> f64 {
        self.frame_dt / self.substeps as f64
    }
}

/// Per-frame contact bookkeeping. Normal impulses are accumulated per
/// kinematic-link index; dividing by the frame duration yields the average
/// normal force over the frame.
#[derive(Debug, Clone, Default)]
pub struct ContactReport {
    pub link_normal_impulse: Vec<f64>,
    pub static_normal_impulse: f64,
    pub ground_normal_impulse: f64,
    pub contact_flags: Vec<bool>,
    pub frame_dt: f64,
}

impl ContactReport {
    pub fn new(links: usize, particles: usize, frame_dt: f64) -> Self {
        Self {
            link_normal_impulse: vec![0.0; links],
            static_normal_impulse: 0.0,
            ground_normal_impulse: 0.0,
            contact_flags: vec![false; particles],
            frame_dt,
        }
    }

    /// Average normal force over the frame for one link, N.
    pub fn link_normal_force(&self, link: usize) -> f64 {
        self.link_normal_impulse.get(link).copied().unwrap_or(0.0) / self.frame_dt
    }

    /// Total average normal force over a set of links (e.g. gripper fingers).
    pub fn total_normal_force(&self, links: &[usize]) -> f64 {
        links.iter().map(|&l| self.link_normal_force(l)).sum()
    }
}

#[derive(Debug, Clone)]
pub struct SpringMassModel {
    pub positions: Vec<Vector3<f64>>,
    pub velocities: Vec<Vector3<f64>>,
    pub masses: Vec<f64>,
    pub springs: Vec<Spring>,
    pub params: SimParams,
    /// Springs whose endpoints became coincident; they exert zero force.
    pub degenerate_spring_events: u64,
    connected: HashSet<(u32, u32)>,
}

impl SpringMassModel {
    pub fn new(
        positions: Vec<Vector3<f64>>,
        masses: Vec<f64>,
        springs: Vec<Spring>,
        params: SimParams,
    ) -> Result<Self> {
        if positions.len() != masses.len() {
            return Err(CoreError::Invalid("positions/masses length mismatch".into()));
        }
        if masses.iter().any(|&m| m <= 0.0) {
            return Err(CoreError::Invalid("non-positive particle mass".into()));
        }
        let mut connected = HashSet::with_capacity(springs.len());
        for s in &springs {
            if s.i == s.j {
                return Err(CoreError::Invalid(format!("spring connects {} to itself", s.i)));
            }
            if s.i >= positions.len() || s.j >= positions.len() {
                return Err(CoreError::Invalid(format!(
                    "spring ({}, {}) out of range",
                    s.i, s.j
                )));
            }
            if s.rest_length <= 0.0 || s.stiffness <= 0.0 {
                return Err(CoreError::Invalid(format!(
                    "spring ({}, {}) needs positive rest length and stiffness",
                    s.i, s.j
                )));
            }
            let key = pair_key(s.i, s.j);
            if !connected.insert(key) {
                return Err(CoreError::Invalid(format!(
                    "duplicate spring ({}, {})",
                    s.i, s.j
                )));
            }
        }
        let n = positions.len();
        Ok(Self {
            positions,
            velocities: vec![Vector3::zeros(); n],
            masses,
            springs,
            params,
            degenerate_spring_events: 0,
            connected,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn are_connected(&self, i: usize, j: usize) -> bool {
        self.connected.contains(&pair_key(i, j))
    }

    pub fn total_momentum(&self) -> Vector3<f64> {
        self.velocities
            .iter()
            .zip(&self.masses)
            .map(|(v, &m)| v * m)
            .sum()
    }

    /// Kinetic + spring potential + gravitational potential energy.
    pub fn mechanical_energy(&self) -> f64 {
        let g = self.params.gravity_vec();
        let kinetic: f64 = self
            .velocities
            .iter()
            .zip(&self.masses)
            .map(|(v, &m)| 0.5 * m * v.norm_squared())
            .sum();
        let elastic: f64 = self
            .springs
            .iter()
            .map(|s| {
                let d = (self.positions[s.j] - self.positions[s.i]).norm();
                0.5 * s.stiffness * (d - s.rest_length).powi(2)
            })
            .sum();
        let potential: f64 = self
            .positions
            .iter()
            .zip(&self.masses)
            .map(|(x, &m)| -m * g.dot(x))
            .sum();
        kinetic + elastic + potential
    }

    /// FNV-1a hash over the full particle state; bit-identical trajectories
    /// produce identical hashes.
    pub fn state_hash(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut feed = |v: f64| {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (x, v) in self.positions.iter().zip(&self.velocities) {
            for k in 0..3 {
                feed(x[k]);
            }
            for k in 0..3 {
                feed(v[k]);
            }
        }
        h
    }

    pub fn check_finite(&self, substep: usize) -> Result<()> {
        for (i, (x, v)) in self.positions.iter().zip(&self.velocities).enumerate() {
            if !(x.iter().all(|c| c.is_finite()) && v.iter().all(|c| c.is_finite())) {
                return Err(CoreError::SimFault {
                    substep,
                    msg: format!("non-finite state at particle {i}"),
                });
            }
        }
        Ok(())
    }

    /// Substep count keeping the stiffest spring neighborhood stable under
    /// semi-implicit Euler (ω·dt ≤ safety), but never below the configured
    /// count.
    pub fn stable_substeps(&self, safety: f64) -> usize {
        let n = self.len();
        if n == 0 || self.springs.is_empty() {
            return self.params.substeps;
        }
        let mut stiffness_sum = vec![0.0f64; n];
        for s in &self.springs {
            stiffness_sum[s.i] += s.stiffness;
            stiffness_sum[s.j] += s.stiffness;
        }
        let omega_max = stiffness_sum
            .iter()
            .zip(&self.masses)
            .map(|(&k, &m)| (2.0 * k / m).sqrt())
            .fold(0.0f64, f64::max);
        if omega_max <= 0.0 {
            return self.params.substeps;
        }
        let dt_max = safety / omega_max;
        let needed = (self.params.frame_dt / dt_max).ceil() as usize;
        needed.max(self.params.substeps)
    }
}

pub(crate) fn pair_key(i: usize, j: usize) -> (u32, u32) {
    let (a, b) = if i < j { (i, j) } else { (j, i) };
    (a as u32, b as u32)
}
