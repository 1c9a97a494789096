//! Real-to-sim calibration: RANSAC + trimmed-ICP positional alignment of
//! splat scans against robot/object geometry, and kernel-to-link
//! segmentation. Color alignment lives in [`crate::color`].

use crate::error::{CoreError, Result};
use crate::geom::{kabsch, RigidTransform};
use crate::mesh::TriangleMesh;
use crate::splat::GaussianSet;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, Default)]
pub struct LabeledCloud {
    pub points: Vec<Vector3<f64>>,
    pub labels: Vec<u32>,
}

impl LabeledCloud {
    pub fn validate(&self, link_count: u32) -> Result<()> {
        if self.points.len() != self.labels.len() {
            return Err(CoreError::Invalid("point/label length mismatch".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= link_count) {
            return Err(CoreError::Invalid(format!(
                "label {bad} out of range for {link_count} links"
            )));
        }
        Ok(())
    }
}

/// A posed link surface; `mesh: None` marks a link without collision/visual
/// geometry (skipped with a warning entry).
pub struct LinkSurface<'a> {
    pub mesh: Option<&'a TriangleMesh>,
    pub pose: RigidTransform,
}

/// Area-weighted surface samples per link, labeled by link index and posed.
/// Returns the cloud plus the indices of links skipped for lack of a mesh.
pub fn sample_link_points(
    links: &[LinkSurface<'_>],
    per_link: usize,
    seed: u64,
) -> (LabeledCloud, Vec<usize>) {
    let mut cloud = LabeledCloud::default();
    let mut skipped = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (li, link) in links.iter().enumerate() {
        let Some(mesh) = link.mesh else {
            skipped.push(li);
            continue;
        };
        for (p, _tri) in mesh.sample_surface(per_link, &mut rng) {
            cloud.points.push(link.pose.apply(&p));
            cloud.labels.push(li as u32);
        }
    }
    (cloud, skipped)
}

/// Uniform grid for radius-bounded nearest-point queries.
struct PointGrid {
    cell: f64,
    origin: Vector3<f64>,
    dims: [i64; 3],
    cells: std::collections::HashMap<[i64; 3], Vec<usize>>,
    points: Vec<Vector3<f64>>,
}

impl PointGrid {
    fn new(points: &[Vector3<f64>], cell: f64) -> Self {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let mut cells: std::collections::HashMap<[i64; 3], Vec<usize>> =
            std::collections::HashMap::new();
        let key = |p: &Vector3<f64>| {
            [
                ((p.x - lo.x) / cell).floor() as i64,
                ((p.y - lo.y) / cell).floor() as i64,
                ((p.z - lo.z) / cell).floor() as i64,
            ]
        };
        for (i, p) in points.iter().enumerate() {
            cells.entry(key(p)).or_default().push(i);
        }
        let dims = [
            ((hi.x - lo.x) / cell).floor() as i64 + 1,
            ((hi.y - lo.y) / cell).floor() as i64 + 1,
            ((hi.z - lo.z) / cell).floor() as i64 + 1,
        ];
        Self {
            cell,
            origin: lo,
            dims,
            cells,
            points: points.to_vec(),
        }
    }

    /// Nearest point within `radius`, if any.
    fn nearest_within(&self, p: &Vector3<f64>, radius: f64) -> Option<(usize, f64)> {
        let span = (radius / self.cell).ceil() as i64;
        let base = [
            ((p.x - self.origin.x) / self.cell).floor() as i64,
            ((p.y - self.origin.y) / self.cell).floor() as i64,
            ((p.z - self.origin.z) / self.cell).floor() as i64,
        ];
        let mut best: Option<(usize, f64)> = None;
        for dx in -span..=span {
            for dy in -span..=span {
                for dz in -span..=span {
                    let k = [base[0] + dx, base[1] + dy, base[2] + dz];
                    if k.iter().zip(&self.dims).any(|(&c, &d)| c < 0 || c >= d) {
                        continue;
                    }
                    if let Some(idx) = self.cells.get(&k) {
                        for &i in idx {
                            let d = (self.points[i] - p).norm();
                            if d <= radius && best.map_or(true, |(_, bd)| d < bd) {
                                best = Some((i, d));
                            }
                        }
                    }
                }
            }
        }
        best
    }
}

fn nearest_brute(points: &[Vector3<f64>], p: &Vector3<f64>) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (i, q) in points.iter().enumerate() {
        let d = (q - p).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    (best.0, best.1.sqrt())
}

/// Coarse global registration: per trial, a non-degenerate source triplet is
/// matched to a target triplet with compatible pairwise distances (within the
/// inlier tolerance), solved by Procrustes, and scored by the number of
/// source points with a target neighbor within the tolerance. Deterministic
/// given the seed.
pub fn ransac_coarse_align(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    trials: usize,
    inlier_tol: f64,
    seed: u64,
) -> Result<RigidTransform> {
    if src.len() < 3 || dst.len() < 3 {
        return Err(CoreError::Registration(
            "need at least 3 points in each cloud".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = PointGrid::new(dst, inlier_tol.max(1e-6));

    // Draw source triplets up front so the congruent-triangle search and
    // scoring can parallelize with a fixed reduction order.
    let mut triplets: Vec<[usize; 3]> = Vec::new();
    while triplets.len() < trials {
        let sa = rng.gen_range(0..src.len());
        let sb = rng.gen_range(0..src.len());
        let sc = rng.gen_range(0..src.len());
        if sa == sb || sb == sc || sa == sc {
            continue;
        }
        // Reject near-collinear triplets: they pin no unique rotation.
        let area = 0.5 * (src[sb] - src[sa]).cross(&(src[sc] - src[sa])).norm();
        if area < 1e-8 {
            continue;
        }
        triplets.push([sa, sb, sc]);
    }

    // For each source triplet, enumerate target triangles congruent within
    // the inlier tolerance (capped per triplet). In random geometry the true
    // correspondence is nearly the only congruent match.
    const MAX_CANDIDATES_PER_TRIPLET: usize = 8;
    let candidates: Vec<[(usize, usize); 3]> = triplets
        .par_iter()
        .flat_map_iter(|&[sa, sb, sc]| {
            let d_ab = (src[sb] - src[sa]).norm();
            let d_ac = (src[sc] - src[sa]).norm();
            let d_bc = (src[sc] - src[sb]).norm();
            let mut found = Vec::new();
            'anchor: for ta in 0..dst.len() {
                for tb in 0..dst.len() {
                    if tb == ta || ((dst[tb] - dst[ta]).norm() - d_ab).abs() > inlier_tol {
                        continue;
                    }
                    for tc in 0..dst.len() {
                        if tc == ta
                            || tc == tb
                            || ((dst[tc] - dst[ta]).norm() - d_ac).abs() > inlier_tol
                            || ((dst[tc] - dst[tb]).norm() - d_bc).abs() > inlier_tol
                        {
                            continue;
                        }
                        found.push([(sa, ta), (sb, tb), (sc, tc)]);
                        if found.len() >= MAX_CANDIDATES_PER_TRIPLET {
                            break 'anchor;
                        }
                    }
                }
            }
            found
        })
        .collect();

    let scored: Vec<(usize, usize)> = candidates
        .par_iter()
        .enumerate()
        .filter_map(|(idx, pairs)| {
            let s: Vec<Vector3<f64>> = pairs.iter().map(|&(i, _)| src[i]).collect();
            let t: Vec<Vector3<f64>> = pairs.iter().map(|&(_, j)| dst[j]).collect();
            let xform = kabsch(&s, &t)?;
            let inliers = src
                .iter()
                .filter(|p| grid.nearest_within(&xform.apply(p), inlier_tol).is_some())
                .count();
            Some((idx, inliers))
        })
        .collect();
    let best = scored
        .iter()
        .max_by_key(|&&(idx, inliers)| (inliers, usize::MAX - idx))
        .copied();

    match best {
        Some((idx, inliers)) if inliers >= 3 => {
            let pairs = candidates[idx];
            let s: Vec<Vector3<f64>> = pairs.iter().map(|&(i, _)| src[i]).collect();
            let t: Vec<Vector3<f64>> = pairs.iter().map(|&(_, j)| dst[j]).collect();
            kabsch(&s, &t)
                .ok_or_else(|| CoreError::Registration("degenerate best triplet".into()))
        }
        _ => Err(CoreError::Registration(
            "no candidate reached 3 inliers; provide a manual pre-alignment as the initial transform".into(),
        )),
    }
}

#[derive(Debug, Clone)]
pub struct IcpResult {
    pub transform: RigidTransform,
    pub rms: f64,
    pub iterations: usize,
    /// Set when the RMS failed to decrease for 5 consecutive iterations; the
    /// best iterate is returned.
    pub stalled: bool,
}

/// Point-to-point ICP with trimmed correspondences: the worst 10% of nearest
/// -neighbor pairs are dropped each iteration. Terminates when the RMS
/// improvement falls below `tol`.
pub fn icp_refine(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    init: &RigidTransform,
    max_iters: usize,
    tol: f64,
) -> Result<IcpResult> {
    if src.len() < 3 || dst.len() < 3 {
        return Err(CoreError::Registration(
            "need at least 3 points in each cloud".into(),
        ));
    }
    let trimmed_len = ((src.len() as f64 * 0.9).ceil() as usize).max(3);

    let rms_of = |xform: &RigidTransform| -> (f64, Vec<(usize, usize)>) {
        let mut pairs: Vec<(f64, usize, usize)> = src
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let q = xform.apply(p);
                let (j, d) = nearest_brute(dst, &q);
                (d, i, j)
            })
            .collect();
        pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pairs.truncate(trimmed_len);
        let rms = (pairs.iter().map(|(d, _, _)| d * d).sum::<f64>() / pairs.len() as f64).sqrt();
        (rms, pairs.into_iter().map(|(_, i, j)| (i, j)).collect())
    };

    let mut current = *init;
    let (mut current_rms, mut corr) = rms_of(&current);
    let mut best = current;
    let mut best_rms = current_rms;
    let mut stall_count = 0usize;
    let mut iterations = 0usize;

    for _ in 0..max_iters {
        let s: Vec<Vector3<f64>> = corr.iter().map(|&(i, _)| src[i]).collect();
        let t: Vec<Vector3<f64>> = corr.iter().map(|&(_, j)| dst[j]).collect();
        let Some(step) = kabsch(&s, &t) else { break };
        let (rms, new_corr) = rms_of(&step);
        iterations += 1;
        let improvement = current_rms - rms;
        if rms < best_rms {
            best_rms = rms;
            best = step;
        }
        if improvement <= 0.0 {
            stall_count += 1;
            if stall_count >= 5 {
                return Ok(IcpResult {
                    transform: best,
                    rms: best_rms,
                    iterations,
                    stalled: true,
                });
            }
        } else {
            stall_count = 0;
        }
        current = step;
        current_rms = rms;
        corr = new_corr;
        if improvement.abs() < tol {
            break;
        }
    }
    let _ = current;
    Ok(IcpResult {
        transform: best,
        rms: best_rms,
        iterations,
        stalled: false,
    })
}

/// Label each kernel with its nearest cloud point's link index.
pub fn segment_kernels_to_links(kernels: &mut GaussianSet, cloud: &LabeledCloud) -> Result<()> {
    if cloud.points.is_empty() {
        return Err(CoreError::Invalid("empty labeled cloud".into()));
    }
    let labels: Vec<u32> = kernels
        .kernels
        .par_iter()
        .map(|k| {
            let (j, _) = nearest_brute(&cloud.points, &k.position);
            cloud.labels[j]
        })
        .collect();
    for (k, l) in kernels.kernels.iter_mut().zip(labels) {
        k.label = Some(l);
    }
    Ok(())
}

/// Per-channel polynomial color map f_c(x) = Σ_k coefficients[k][c] · x^k.

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    fn random_cloud(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)))
            .collect()
    }

    fn test_transform() -> RigidTransform {
        RigidTransform {
            rotation: UnitQuaternion::from_euler_angles(0.2, -0.3, 0.25),
            translation: Vector3::new(0.1, -0.2, 0.15),
        }
    }

    #[test]
    fn ransac_identity_on_identical_clouds() {
        let src = random_cloud(200, 3);
        let t = ransac_coarse_align(&src, &src, 200, 0.005, 7).unwrap();
        assert!(t.rotation.angle() < 1e-9);
        assert!(t.translation.norm() < 1e-9);
    }

    #[test]
    fn ransac_recovers_synthetic_transform() {
        let src = random_cloud(500, 11);
        let truth = test_transform();
        let dst: Vec<Vector3<f64>> = src.iter().map(|p| truth.apply(p)).collect();
        let t = ransac_coarse_align(&src, &dst, 500, 0.005, 13).unwrap();
        let inliers = src
            .iter()
            .zip(&dst)
            .filter(|(p, q)| (t.apply(p) - *q).norm() <= 0.005)
            .count();
        assert!(inliers as f64 >= 0.99 * src.len() as f64, "inliers = {inliers}");
    }

    #[test]
    fn ransac_survives_30_percent_outliers() {
        let src = random_cloud(350, 21);
        let truth = test_transform();
        let mut dst: Vec<Vector3<f64>> = src.iter().map(|p| truth.apply(p)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..150 {
            dst.push(Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ));
        }
        let t = ransac_coarse_align(&src, &dst, 800, 0.005, 31).unwrap();
        let refined = icp_refine(&src, &dst, &t, 30, 1e-10).unwrap();
        let rot_err = (refined.transform.rotation.inverse() * truth.rotation).angle();
        let trans_err = (refined.transform.translation - truth.translation).norm();
        assert!(rot_err < 0.01, "rotation error {rot_err}");
        assert!(trans_err < 0.002, "translation error {trans_err}");
    }

    #[test]
    fn icp_exact_init_is_a_fixed_point() {
        let src = random_cloud(300, 41);
        let truth = test_transform();
        let dst: Vec<Vector3<f64>> = src.iter().map(|p| truth.apply(p)).collect();
        let res = icp_refine(&src, &dst, &truth, 20, 1e-12).unwrap();
        assert!((res.transform.rotation.inverse() * truth.rotation).angle() < 1e-9);
        assert!((res.transform.translation - truth.translation).norm() < 1e-9);
        assert!(res.rms < 1e-9);
    }

    #[test]
    fn icp_recovers_small_perturbation() {
        let src = random_cloud(400, 51);
        let truth = test_transform();
        let dst: Vec<Vector3<f64>> = src.iter().map(|p| truth.apply(p)).collect();
        let init = RigidTransform {
            rotation: UnitQuaternion::from_euler_angles(0.05, 0.03, -0.04) * truth.rotation,
            translation: truth.translation + Vector3::new(0.008, -0.005, 0.006),
        };
        let res = icp_refine(&src, &dst, &init, 60, 1e-12).unwrap();
        let rot_err = (res.transform.rotation.inverse() * truth.rotation).angle();
        let trans_err = (res.transform.translation - truth.translation).norm();
        assert!(rot_err < 0.1_f64.to_radians(), "rotation error {rot_err}");
        assert!(trans_err < 1e-3, "translation error {trans_err}");
    }

    #[test]
    fn segmentation_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let cloud = LabeledCloud {
            points: random_cloud(500, 62),
            labels: (0..500).map(|_| rng.gen_range(0..7)).collect(),
        };
        let mut set = GaussianSet::default();
        for p in random_cloud(1000, 63) {
            set.kernels.push(crate::splat::GaussianKernel {
                position: p,
                rotation: UnitQuaternion::identity(),
                scale: Vector3::repeat(0.01),
                opacity: 1.0,
                color: [0.5; 3],
                label: None,
            });
        }
        segment_kernels_to_links(&mut set, &cloud).unwrap();
        for k in &set.kernels {
            let (j, _) = nearest_brute(&cloud.points, &k.position);
            assert_eq!(k.label, Some(cloud.labels[j]));
        }
    }

    #[test]
    fn two_separated_links_segment_perfectly() {
        let offset = Vector3::new(0.0, 0.0, 0.5);
        let a = random_cloud(100, 71);
        let b: Vec<Vector3<f64>> = random_cloud(100, 72).iter().map(|p| p + offset * 2.0).collect();
        let cloud = LabeledCloud {
            points: a.iter().chain(&b).copied().collect(),
            labels: std::iter::repeat(0u32)
                .take(100)
                .chain(std::iter::repeat(1u32).take(100))
                .collect(),
        };
        let mut set = GaussianSet::default();
        for p in a.iter().chain(&b) {
            set.kernels.push(crate::splat::GaussianKernel {
                position: *p + Vector3::new(0.01, 0.0, 0.0),
                rotation: UnitQuaternion::identity(),
                scale: Vector3::repeat(0.01),
                opacity: 1.0,
                color: [0.5; 3],
                label: None,
            });
        }
        segment_kernels_to_links(&mut set, &cloud).unwrap();
        for (i, k) in set.kernels.iter().enumerate() {
            assert_eq!(k.label, Some(if i < 100 { 0 } else { 1 }));
        }
    }


    #[test]
    fn link_sampling_labels_and_counts() {
        let mesh = crate::mesh::parse_obj(
            "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3\nf 1 3 4\n",
            "quad.obj",
        )
        .unwrap();
        let links = [
            LinkSurface { mesh: Some(&mesh), pose: RigidTransform::identity() },
            LinkSurface { mesh: None, pose: RigidTransform::identity() },
            LinkSurface {
                mesh: Some(&mesh),
                pose: RigidTransform {
                    rotation: UnitQuaternion::identity(),
                    translation: Vector3::new(0.0, 0.0, 2.0),
                },
            },
        ];
        let (cloud, skipped) = sample_link_points(&links, 2000, 9);
        assert_eq!(skipped, vec![1]);
        assert_eq!(cloud.points.len(), 4000);
        assert!(cloud.labels[..2000].iter().all(|&l| l == 0));
        assert!(cloud.labels[2000..].iter().all(|&l| l == 2));
        for (i, p) in cloud.points.iter().enumerate() {
            let z = if i < 2000 { 0.0 } else { 2.0 };
            assert!((p.z - z).abs() < 1e-9);
        }
    }
}
