//! Kernel propagation (rigid transforms and linear blend skinning driven by
//! the spring-mass state) and a depth-sorted EWA splatting rasterizer for
//! debug/observation images.

use crate::color::ColorPolynomial;
use crate::engine::Spring;
use crate::error::{CoreError, Result};
use crate::geom::{blend_quaternions, kabsch, RigidTransform};
use crate::splat::GaussianSet;
use nalgebra::{Matrix2, Matrix2x3, Matrix3, UnitQuaternion, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CameraMount {
    Fixed,
    /// Pose follows a robot link: world→camera = (link_pose ∘ offset)⁻¹.
    LinkAttached { link: usize, offset: RigidTransform },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World→camera transform (camera looks down +z).
    pub pose: RigidTransform,
    pub mount: CameraMount,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(CoreError::Invalid("camera focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CoreError::Invalid("camera resolution must be positive".into()));
        }
        Ok(())
    }

    /// Refresh a link-attached pose from the current link pose (camera→world
    /// = link_pose ∘ offset).
    pub fn update_mount(&mut self, link_poses: &[RigidTransform]) {
        if let CameraMount::LinkAttached { link, offset } = &self.mount {
            self.pose = link_poses[*link].compose(offset).inverse();
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbsBinding {
    /// Per kernel: bound particle indices and normalized weights.
    pub indices: Vec<Vec<usize>>,
    pub weights: Vec<Vec<f64>>,
}

impl LbsBinding {
    pub fn validate(&self, particle_count: usize) -> Result<()> {
        if self.indices.len() != self.weights.len() {
            return Err(CoreError::Invalid("binding index/weight length mismatch".into()));
        }
        for (idx, w) in self.indices.iter().zip(&self.weights) {
            if idx.len() != w.len() || idx.iter().any(|&i| i >= particle_count) {
                return Err(CoreError::Invalid("invalid binding entry".into()));
            }
            let sum: f64 = w.iter().sum();
            if w.iter().any(|&x| x < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(CoreError::Invalid("binding weights must be a convex combination".into()));
            }
        }
        Ok(())
    }
}

pub const LBS_NEIGHBORS: usize = 16;
const LBS_EPS: f64 = 1e-6;

/// Bind each kernel to its k nearest particles with inverse-distance weights
/// w ∝ 1/(dist + 1e-6), normalized.
pub fn compute_lbs_weights(
    kernels: &GaussianSet,
    particles: &[Vector3<f64>],
    k: usize,
) -> Result<LbsBinding> {
    if particles.is_empty() {
        return Err(CoreError::Invalid("no particles to bind against".into()));
    }
    let k = k.min(particles.len());
    let entries: Vec<(Vec<usize>, Vec<f64>)> = kernels
        .kernels
        .par_iter()
        .map(|kernel| {
            let mut dist: Vec<(f64, usize)> = particles
                .iter()
                .enumerate()
                .map(|(i, p)| ((p - kernel.position).norm(), i))
                .collect();
            dist.sort_by(|a, b| a.partial_cmp(b).unwrap());
            dist.truncate(k);
            let raw: Vec<f64> = dist.iter().map(|(d, _)| 1.0 / (d + LBS_EPS)).collect();
            let total: f64 = raw.iter().sum();
            (
                dist.iter().map(|&(_, i)| i).collect(),
                raw.iter().map(|r| r / total).collect(),
            )
        })
        .collect();
    Ok(LbsBinding {
        indices: entries.iter().map(|(i, _)| i.clone()).collect(),
        weights: entries.into_iter().map(|(_, w)| w).collect(),
    })
}

/// Estimate a local rigid motion per particle by Procrustes over its spring
/// neighborhood (prev→next). Degenerate neighborhoods fall back to pure
/// translation.
fn local_motions(
    springs: &[Spring],
    prev: &[Vector3<f64>],
    next: &[Vector3<f64>],
) -> Vec<RigidTransform> {
    let n = prev.len();
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for s in springs {
        adjacency[s.i].push(s.j);
        adjacency[s.j].push(s.i);
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut src = vec![prev[i]];
            let mut dst = vec![next[i]];
            for &j in &adjacency[i] {
                src.push(prev[j]);
                dst.push(next[j]);
            }
            kabsch(&src, &dst).unwrap_or(RigidTransform {
                rotation: UnitQuaternion::identity(),
                translation: next[i] - prev[i],
            })
        })
        .collect()
}

/// Advance deformable kernels with the particle motion: position is the
/// weight-blended image of the kernel under each bound particle's local rigid
/// motion; rotation is composed with the blended local rotation. Scale,
/// opacity, and color are untouched.
pub fn lbs_update_kernels(
    kernels: &mut GaussianSet,
    binding: &LbsBinding,
    springs: &[Spring],
    particles_prev: &[Vector3<f64>],
    particles_next: &[Vector3<f64>],
) -> Result<()> {
    if binding.indices.len() != kernels.kernels.len() {
        return Err(CoreError::Invalid("binding built for a different kernel set".into()));
    }
    binding.validate(particles_prev.len())?;
    if particles_prev.len() != particles_next.len() {
        return Err(CoreError::Invalid("particle count changed across the frame".into()));
    }
    let motions = local_motions(springs, particles_prev, particles_next);
    kernels
        .kernels
        .par_iter_mut()
        .zip(&binding.indices)
        .zip(&binding.weights)
        .for_each(|((kernel, idx), w)| {
            let mut pos = Vector3::zeros();
            let mut quats = Vec::with_capacity(idx.len());
            for (&j, &wj) in idx.iter().zip(w) {
                pos += wj * motions[j].apply(&kernel.position);
                quats.push(motions[j].rotation);
            }
            let blended = blend_quaternions(&quats, w);
            kernel.position = pos;
            kernel.rotation = blended * kernel.rotation;
        });
    Ok(())
}

/// Move kernels carrying `label` by the rigid delta pose_next ∘ pose_prev⁻¹.
pub fn update_rigid_kernels(
    kernels: &mut GaussianSet,
    label: u32,
    pose_prev: &RigidTransform,
    pose_next: &RigidTransform,
) {
    let delta = pose_next.compose(&pose_prev.inverse());
    for k in &mut kernels.kernels {
        if k.label == Some(label) {
            k.position = delta.apply(&k.position);
            k.rotation = delta.rotation * k.rotation;
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB in [0,1].
    pub rgb: Vec<[f64; 3]>,
    pub alpha: Vec<f64>,
}

impl RenderImage {
    fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            rgb: vec![[0.0; 3]; width * height],
            alpha: vec![0.0; width * height],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        self.rgb[y * self.width + x]
    }

    pub fn save_png<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut buf = image::RgbaImage::new(self.width as u32, self.height as u32);
        for (i, px) in buf.pixels_mut().enumerate() {
            let c = self.rgb[i];
            let to8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            *px = image::Rgba([to8(c[0]), to8(c[1]), to8(c[2]), to8(self.alpha[i])]);
        }
        buf.save(path.as_ref()).map_err(|e| CoreError::Io {
            path: path.as_ref().display().to_string(),
            source: std::io::Error::other(e),
        })
    }
}

const ALPHA_CAP: f64 = 0.99;
/// Footprint cutoff in standard deviations; wide enough that tile culling is
/// indistinguishable from evaluating every kernel at every pixel (< 1e-6).
const SIGMA_CUTOFF: f64 = 7.0;
const MIN_DEPTH: f64 = 1e-6;

struct Projected {
    depth: f64,
    mean: Vector2<f64>,
    inv_cov: Matrix2<f64>,
    opacity: f64,
    color: [f64; 3],
    radius: f64,
}

fn project_kernels(
    kernels: &GaussianSet,
    camera: &Camera,
    color_transform: Option<&ColorPolynomial>,
) -> Vec<Projected> {
    let rot_wc = camera.pose.rotation.to_rotation_matrix();
    kernels
        .kernels
        .iter()
        .filter_map(|k| {
            let t = camera.pose.apply(&k.position);
            if t.z <= MIN_DEPTH {
                return None; // behind the camera
            }
            let mean = Vector2::new(
                camera.fx * t.x / t.z + camera.cx,
                camera.fy * t.y / t.z + camera.cy,
            );
            let r = k.rotation.to_rotation_matrix();
            let s = Matrix3::from_diagonal(&k.scale.map(|v| v * v));
            let cov_world = r * s * r.transpose();
            let cov_cam = rot_wc * cov_world * rot_wc.transpose();
            let z2 = t.z * t.z;
            let jac = Matrix2x3::new(
                camera.fx / t.z, 0.0, -camera.fx * t.x / z2,
                0.0, camera.fy / t.z, -camera.fy * t.y / z2,
            );
            let mut cov2 = jac * cov_cam * jac.transpose();
            // EWA low-pass: guarantees a minimum pixel footprint.
            cov2[(0, 0)] += 0.3;
            cov2[(1, 1)] += 0.3;
            let det = cov2.determinant();
            if det <= 0.0 {
                return None;
            }
            let inv_cov = cov2.try_inverse()?;
            let max_eig = {
                let mid = 0.5 * (cov2[(0, 0)] + cov2[(1, 1)]);
                let d = (mid * mid - det).max(0.0).sqrt();
                mid + d
            };
            let color = match color_transform {
                Some(poly) => poly.eval(&k.color),
                None => k.color,
            };
            Some(Projected {
                depth: t.z,
                mean,
                inv_cov,
                opacity: k.opacity,
                color,
                radius: SIGMA_CUTOFF * max_eig.sqrt(),
            })
        })
        .collect()
}

fn composite(px: &mut [f64; 3], alpha: &mut f64, p: &Projected, x: f64, y: f64) {
    let d = Vector2::new(x - p.mean.x, y - p.mean.y);
    let power = 0.5 * (d.transpose() * p.inv_cov * d)[(0, 0)];
    let a = (p.opacity * (-power).exp()).min(ALPHA_CAP);
    if a <= 0.0 {
        return;
    }
    for c in 0..3 {
        px[c] = px[c] * (1.0 - a) + p.color[c] * a;
    }
    *alpha = *alpha * (1.0 - a) + a;
}

/// Rasterize the kernel set: perspective EWA splatting with a global
/// back-to-front depth sort and per-pixel alpha compositing. Kernels behind
/// the camera are culled. Deterministic.
pub fn render(
    kernels: &GaussianSet,
    camera: &Camera,
    color_transform: Option<&ColorPolynomial>,
) -> Result<RenderImage> {
    camera.validate()?;
    let mut projected = project_kernels(kernels, camera, color_transform);
    // Back to front; ties keep input order.
    projected.sort_by(|a, b| b.depth.partial_cmp(&a.depth).unwrap());

    let mut img = RenderImage::new(camera.width, camera.height);
    let width = camera.width;
    img.rgb
        .par_chunks_mut(width)
        .zip(img.alpha.par_chunks_mut(width))
        .enumerate()
        .for_each(|(y, (row, alpha_row))| {
            let yf = y as f64;
            for p in &projected {
                if (yf - p.mean.y).abs() > p.radius {
                    continue;
                }
                let x0 = ((p.mean.x - p.radius).floor().max(0.0)) as usize;
                let x1 = ((p.mean.x + p.radius).ceil().min((width - 1) as f64)) as usize;
                if x0 > x1 {
                    continue;
                }
                for x in x0..=x1 {
                    composite(&mut row[x], &mut alpha_row[x], p, x as f64, yf);
                }
            }
        });
    Ok(img)
}

/// Reference rasterizer: every kernel evaluated at every pixel, no footprint
/// culling. Used as the oracle the production path must match.
pub fn render_reference(
    kernels: &GaussianSet,
    camera: &Camera,
    color_transform: Option<&ColorPolynomial>,
) -> Result<RenderImage> {
    camera.validate()?;
    let mut projected = project_kernels(kernels, camera, color_transform);
    projected.sort_by(|a, b| b.depth.partial_cmp(&a.depth).unwrap());
    let mut img = RenderImage::new(camera.width, camera.height);
    for y in 0..camera.height {
        for x in 0..camera.width {
            let i = y * camera.width + x;
            for p in &projected {
                composite(&mut img.rgb[i], &mut img.alpha[i], p, x as f64, y as f64);
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::GaussianKernel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_camera() -> Camera {
        Camera {
            fx: 100.0,
            fy: 100.0,
            cx: 32.0,
            cy: 24.0,
            width: 64,
            height: 48,
            pose: RigidTransform::identity(),
            mount: CameraMount::Fixed,
        }
    }

    fn kernel_at(p: Vector3<f64>, color: [f64; 3]) -> GaussianKernel {
        GaussianKernel {
            position: p,
            rotation: UnitQuaternion::identity(),
            scale: Vector3::repeat(0.05),
            opacity: 1.0,
            color,
            label: None,
        }
    }

    fn random_set(n: usize, seed: u64) -> GaussianSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = GaussianSet::default();
        for _ in 0..n {
            set.kernels.push(GaussianKernel {
                position: Vector3::new(
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(0.8..2.0),
                ),
                rotation: UnitQuaternion::from_euler_angles(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ),
                scale: Vector3::new(
                    rng.gen_range(0.005..0.05),
                    rng.gen_range(0.005..0.05),
                    rng.gen_range(0.005..0.05),
                ),
                opacity: rng.gen_range(0.2..1.0),
                color: [rng.gen(), rng.gen(), rng.gen()],
                label: None,
            });
        }
        set
    }

    #[test]
    fn on_axis_kernel_peaks_at_principal_pixel() {
        let set = GaussianSet {
            kernels: vec![kernel_at(Vector3::new(0.0, 0.0, 1.0), [1.0, 1.0, 1.0])],
            frame: String::new(),
        };
        let img = render(&set, &test_camera(), None).unwrap();
        let peak = img.alpha[24 * 64 + 32];
        for (i, &a) in img.alpha.iter().enumerate() {
            assert!(a <= peak + 1e-12, "pixel {i} alpha {a} exceeds principal {peak}");
        }
        assert!(peak > 0.9);
    }

    #[test]
    fn nearer_kernel_occludes() {
        let set = GaussianSet {
            kernels: vec![
                kernel_at(Vector3::new(0.0, 0.0, 2.0), [0.0, 0.0, 1.0]),
                kernel_at(Vector3::new(0.0, 0.0, 1.0), [1.0, 0.0, 0.0]),
            ],
            frame: String::new(),
        };
        let img = render(&set, &test_camera(), None).unwrap();
        let center = img.pixel(32, 24);
        // The 0.99 alpha cap leaves 1% of the occluded blue kernel visible;
        // the expected composite is 0.99 red over 0.99 blue.
        assert!((center[0] - 0.99).abs() < 1.0 / 255.0, "r = {}", center[0]);
        assert!((center[2] - 0.01 * 0.99).abs() < 1.0 / 255.0, "b = {}", center[2]);
    }

    #[test]
    fn tiled_render_matches_reference() {
        let set = random_set(50, 7);
        let cam = test_camera();
        let fast = render(&set, &cam, None).unwrap();
        let slow = render_reference(&set, &cam, None).unwrap();
        for i in 0..fast.rgb.len() {
            for c in 0..3 {
                assert!(
                    (fast.rgb[i][c] - slow.rgb[i][c]).abs() < 1e-6,
                    "pixel {i} channel {c}"
                );
            }
            assert!((fast.alpha[i] - slow.alpha[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn render_is_deterministic() {
        let set = random_set(30, 11);
        let cam = test_camera();
        let a = render(&set, &cam, None).unwrap();
        let b = render(&set, &cam, None).unwrap();
        assert_eq!(a.rgb, b.rgb);
        assert_eq!(a.alpha, b.alpha);
    }

    #[test]
    fn behind_camera_kernels_are_culled() {
        let set = GaussianSet {
            kernels: vec![kernel_at(Vector3::new(0.0, 0.0, -1.0), [1.0, 1.0, 1.0])],
            frame: String::new(),
        };
        let img = render(&set, &test_camera(), None).unwrap();
        assert!(img.alpha.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn rigid_update_then_moved_camera_matches_original() {
        let set = random_set(40, 13);
        let mut moved = set.clone();
        for k in &mut moved.kernels {
            k.label = Some(3);
        }
        let t = RigidTransform {
            rotation: UnitQuaternion::from_euler_angles(0.3, -0.2, 0.1),
            translation: Vector3::new(0.2, -0.1, 0.4),
        };
        update_rigid_kernels(&mut moved, 3, &RigidTransform::identity(), &t);
        let cam = test_camera();
        let mut cam_moved = cam.clone();
        // world→camera seeing the transformed scene identically: C ∘ T⁻¹
        cam_moved.pose = cam.pose.compose(&t.inverse());
        let a = render(&set, &cam, None).unwrap();
        let b = render(&moved, &cam_moved, None).unwrap();
        for i in 0..a.rgb.len() {
            for c in 0..3 {
                assert!((a.rgb[i][c] - b.rgb[i][c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rigid_updates_compose() {
        let set = {
            let mut s = random_set(20, 17);
            for k in &mut s.kernels {
                k.label = Some(0);
            }
            s
        };
        let p0 = RigidTransform::identity();
        let p1 = RigidTransform {
            rotation: UnitQuaternion::from_euler_angles(0.1, 0.2, -0.1),
            translation: Vector3::new(0.05, 0.0, -0.02),
        };
        let p2 = RigidTransform {
            rotation: UnitQuaternion::from_euler_angles(-0.3, 0.1, 0.2),
            translation: Vector3::new(-0.1, 0.2, 0.03),
        };
        let mut stepped = set.clone();
        update_rigid_kernels(&mut stepped, 0, &p0, &p1);
        update_rigid_kernels(&mut stepped, 0, &p1, &p2);
        let mut direct = set.clone();
        update_rigid_kernels(&mut direct, 0, &p0, &p2);
        for (a, b) in stepped.kernels.iter().zip(&direct.kernels) {
            assert!((a.position - b.position).norm() < 1e-12);
            assert!((a.rotation.inverse() * b.rotation).angle() < 1e-12);
        }
    }

    #[test]
    fn unchanged_pose_is_identity() {
        let set = {
            let mut s = random_set(10, 19);
            for k in &mut s.kernels {
                k.label = Some(1);
            }
            s
        };
        let p = RigidTransform {
            rotation: UnitQuaternion::from_euler_angles(0.4, 0.1, 0.0),
            translation: Vector3::new(1.0, 2.0, 3.0),
        };
        let mut updated = set.clone();
        update_rigid_kernels(&mut updated, 1, &p, &p);
        for (a, b) in updated.kernels.iter().zip(&set.kernels) {
            assert!((a.position - b.position).norm() < 1e-12);
        }
    }

    fn particle_grid() -> (Vec<Vector3<f64>>, Vec<Spring>) {
        let mut pts = Vec::new();
        for x in 0..3 {
            for y in 0..3 {
                for z in 0..3 {
                    pts.push(Vector3::new(x as f64, y as f64, z as f64) * 0.05);
                }
            }
        }
        let mut springs = Vec::new();
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                if (pts[j] - pts[i]).norm() < 0.08 {
                    springs.push(Spring {
                        i,
                        j,
                        rest_length: (pts[j] - pts[i]).norm(),
                        stiffness: 100.0,
                    });
                }
            }
        }
        (pts, springs)
    }

    #[test]
    fn lbs_weights_are_normalized_and_nn_for_k1() {
        let (pts, _) = particle_grid();
        let set = random_set(100, 23);
        let binding = compute_lbs_weights(&set, &pts, LBS_NEIGHBORS).unwrap();
        binding.validate(pts.len()).unwrap();
        for w in &binding.weights {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let nn = compute_lbs_weights(&set, &pts, 1).unwrap();
        for (kernel, idx) in set.kernels.iter().zip(&nn.indices) {
            let brute = pts
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    (a.1 - kernel.position)
                        .norm()
                        .partial_cmp(&(b.1 - kernel.position).norm())
                        .unwrap()
                })
                .unwrap()
                .0;
            assert_eq!(idx[0], brute);
        }
    }

    #[test]
    fn coincident_kernel_weight_dominates() {
        let (pts, _) = particle_grid();
        let set = GaussianSet {
            kernels: vec![kernel_at(pts[13], [1.0; 3])],
            frame: String::new(),
        };
        let binding = compute_lbs_weights(&set, &pts, LBS_NEIGHBORS).unwrap();
        assert_eq!(binding.indices[0][0], 13);
        assert!(binding.weights[0][0] > 0.999);
    }

    #[test]
    fn lbs_reproduces_translation() {
        let (pts, springs) = particle_grid();
        let mut set = random_set(50, 29);
        for k in &mut set.kernels {
            k.position = pts[0] + k.position * 0.1;
        }
        let before = set.clone();
        let binding = compute_lbs_weights(&set, &pts, LBS_NEIGHBORS).unwrap();
        let t = Vector3::new(0.1, -0.2, 0.3);
        let next: Vec<Vector3<f64>> = pts.iter().map(|p| p + t).collect();
        lbs_update_kernels(&mut set, &binding, &springs, &pts, &next).unwrap();
        for (a, b) in set.kernels.iter().zip(&before.kernels) {
            assert!((a.position - b.position - t).norm() < 1e-9);
            assert!((a.rotation.inverse() * b.rotation).angle() < 1e-9);
            assert_eq!(a.scale, b.scale);
            assert_eq!(a.opacity, b.opacity);
            assert_eq!(a.color, b.color);
        }
    }

    #[test]
    fn lbs_reproduces_rotation_about_origin() {
        let (pts, springs) = particle_grid();
        let mut set = random_set(50, 31);
        for k in &mut set.kernels {
            k.position = Vector3::new(0.05, 0.05, 0.05) + k.position * 0.1;
        }
        let before = set.clone();
        let binding = compute_lbs_weights(&set, &pts, LBS_NEIGHBORS).unwrap();
        let rot = UnitQuaternion::from_euler_angles(0.2, -0.15, 0.3);
        let next: Vec<Vector3<f64>> = pts.iter().map(|p| rot * p).collect();
        lbs_update_kernels(&mut set, &binding, &springs, &pts, &next).unwrap();
        for (a, b) in set.kernels.iter().zip(&before.kernels) {
            assert!((a.position - rot * b.position).norm() < 1e-6, "{}", (a.position - rot * b.position).norm());
            assert!(((rot * b.rotation).inverse() * a.rotation).angle() < 1e-6);
        }
    }

    #[test]
    fn lbs_zero_motion_is_identity() {
        let (pts, springs) = particle_grid();
        let mut set = random_set(30, 37);
        let before = set.clone();
        let binding = compute_lbs_weights(&set, &pts, LBS_NEIGHBORS).unwrap();
        lbs_update_kernels(&mut set, &binding, &springs, &pts, &pts).unwrap();
        for (a, b) in set.kernels.iter().zip(&before.kernels) {
            assert!((a.position - b.position).norm() < 1e-12);
            assert!((a.rotation.inverse() * b.rotation).angle() < 1e-9);
        }
    }

    #[test]
    fn png_roundtrips_through_disk() {
        let set = random_set(10, 41);
        let img = render(&set, &test_camera(), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("frame.png");
        img.save_png(&p).unwrap();
        let loaded = image::open(&p).unwrap().to_rgba8();
        assert_eq!(loaded.width(), 64);
        assert_eq!(loaded.height(), 48);
    }
}
