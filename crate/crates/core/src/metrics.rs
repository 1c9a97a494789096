//! Task success classifiers and sim-vs-real correlation statistics: the three
//! task criteria (toy packing, rope routing, push-T), Pearson r, MMRV,
//! Clopper–Pearson intervals, Beta posteriors, and replay confusion counts.

use crate::error::{CoreError, Result};
use crate::geom::{particles_in_obb, OrientedBox};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Sim,
    Real,
    Replay,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub policy_id: String,
    pub checkpoint_id: String,
    pub episode_id: String,
    pub domain: Domain,
    pub success: bool,
    /// Per-frame raw criterion quantity (in-box count, crossing counts, MSE).
    pub trace: Vec<f64>,
}

impl EpisodeOutcome {
    pub fn validate(&self) -> Result<()> {
        if self.policy_id.is_empty() || self.checkpoint_id.is_empty() || self.episode_id.is_empty()
        {
            return Err(CoreError::Invalid("outcome ids must be nonempty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PolicyScore {
    pub successes: usize,
    pub trials: usize,
}

impl PolicyScore {
    pub fn new(successes: usize, trials: usize) -> Result<Self> {
        if successes > trials {
            return Err(CoreError::Invalid("successes exceed trials".into()));
        }
        Ok(Self { successes, trials })
    }

    pub fn rate(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

pub const TOY_PACKING_TOTAL: usize = 3095;
pub const TOY_PACKING_THRESHOLD: usize = 3050;
pub const SUCCESS_WINDOW: usize = 100;
pub const SUCCESS_NEED: usize = 30;
pub const ROPE_SEGMENT_THRESHOLD: usize = 100;
pub const PUSHT_MSE_TOL: f64 = 0.002;

#[derive(Debug, Clone)]
pub struct SuccessVerdict {
    pub success: bool,
    /// Per-frame criterion values over the evaluated window.
    pub trace: Vec<f64>,
    /// Trajectory was shorter than the window; evaluated on the tail.
    pub truncated: bool,
}

/// Toy packing: success iff, within the final `window` frames, the number of
/// particles inside the box is at least `threshold` on more than `need`
/// frames.
pub fn toy_packing_success(
    frames: &[Vec<Vector3<f64>>],
    obb: &OrientedBox,
    threshold: usize,
    window: usize,
    need: usize,
) -> Result<SuccessVerdict> {
    if frames.is_empty() {
        return Err(CoreError::Invalid("empty trajectory".into()));
    }
    let truncated = frames.len() < window;
    let tail = &frames[frames.len().saturating_sub(window)..];
    let counts: Vec<usize> = tail.iter().map(|f| particles_in_obb(f, obb)).collect();
    let qualifying = counts.iter().filter(|&&c| c >= threshold).count();
    Ok(SuccessVerdict {
        success: qualifying > need,
        trace: counts.iter().map(|&c| c as f64).collect(),
        truncated,
    })
}

/// A planar polygon (an "opening") with a consistent vertex winding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanarPolygon {
    pub vertices: Vec<[f64; 3]>,
}

impl PlanarPolygon {
    fn vertex(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.vertices[i])
    }

    pub fn normal(&self) -> Vector3<f64> {
        let a = self.vertex(0);
        let b = self.vertex(1);
        let c = self.vertex(2);
        (b - a).cross(&(c - a)).normalize()
    }

    /// Does the segment pq cross the polygon interior?
    pub fn intersects_segment(&self, p: &Vector3<f64>, q: &Vector3<f64>) -> bool {
        let n = self.normal();
        let a = self.vertex(0);
        let dp = n.dot(&(p - a));
        let dq = n.dot(&(q - a));
        if dp * dq >= 0.0 {
            return false; // both endpoints on one side (or touching)
        }
        let t = dp / (dp - dq);
        let hit = p + (q - p) * t;
        // Point-in-polygon by winding of cross products against the normal.
        let m = self.vertices.len();
        for i in 0..m {
            let vi = self.vertex(i);
            let vj = self.vertex((i + 1) % m);
            if (vj - vi).cross(&(hit - vi)).dot(&n) <= 0.0 {
                return false;
            }
        }
        true
    }
}

pub fn segment_crossings(segments: &[(Vector3<f64>, Vector3<f64>)], opening: &PlanarPolygon) -> usize {
    segments
        .iter()
        .filter(|(p, q)| opening.intersects_segment(p, q))
        .count()
}

/// Rope routing: success iff both openings see more than `seg_threshold`
/// spring-segment crossings on more than `need` frames within the final
/// `window` frames.
pub fn rope_routing_success(
    frames: &[Vec<(Vector3<f64>, Vector3<f64>)>],
    openings: &[PlanarPolygon; 2],
    seg_threshold: usize,
    window: usize,
    need: usize,
) -> Result<SuccessVerdict> {
    if frames.is_empty() {
        return Err(CoreError::Invalid("empty trajectory".into()));
    }
    let truncated = frames.len() < window;
    let tail = &frames[frames.len().saturating_sub(window)..];
    let mut trace = Vec::with_capacity(tail.len() * 2);
    let mut qualifying = 0usize;
    for f in tail {
        let c0 = segment_crossings(f, &openings[0]);
        let c1 = segment_crossings(f, &openings[1]);
        trace.push(c0 as f64);
        trace.push(c1 as f64);
        if c0 > seg_threshold && c1 > seg_threshold {
            qualifying += 1;
        }
    }
    Ok(SuccessVerdict {
        success: qualifying > need,
        trace,
        truncated,
    })
}

/// Push-T: success iff the mean squared distance to the target particle set
/// drops below `tol` on any frame within the final `window` frames.
pub fn pusht_success(
    frames: &[Vec<Vector3<f64>>],
    target: &[Vector3<f64>],
    tol: f64,
    window: usize,
) -> Result<SuccessVerdict> {
    if frames.is_empty() {
        return Err(CoreError::Invalid("empty trajectory".into()));
    }
    for (i, f) in frames.iter().enumerate() {
        if f.len() != target.len() {
            return Err(CoreError::Invalid(format!(
                "frame {i}: {} particles but target has {}",
                f.len(),
                target.len()
            )));
        }
    }
    let truncated = frames.len() < window;
    let tail = &frames[frames.len().saturating_sub(window)..];
    let trace: Vec<f64> = tail
        .iter()
        .map(|f| {
            f.iter()
                .zip(target)
                .map(|(p, t)| (p - t).norm_squared())
                .sum::<f64>()
                / target.len() as f64
        })
        .collect();
    Ok(SuccessVerdict {
        success: trace.iter().any(|&m| m < tol),
        trace,
        truncated,
    })
}

/// Product-moment correlation. Errors when either side has zero variance.
pub fn pearson(u_sim: &[f64], u_real: &[f64]) -> Result<f64> {
    if u_sim.len() != u_real.len() || u_sim.len() < 2 {
        return Err(CoreError::Invalid(
            "pearson needs two equal-length series of length >= 2".into(),
        ));
    }
    let n = u_sim.len() as f64;
    let mx = u_sim.iter().sum::<f64>() / n;
    let my = u_real.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in u_sim.iter().zip(u_real) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(CoreError::UndefinedCorrelation(
            "zero variance in success rates".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Mean Maximum Rank Variation:
/// RankViolation(i,j) = |u_real,i − u_real,j| · 1[(u_sim,i < u_sim,j) ≠ (u_real,i < u_real,j)],
/// MMRV = meanᵢ maxⱼ RankViolation(i,j). Value-weighted form from the SIMPLER
/// evaluation protocol.
pub fn mmrv(u_sim: &[f64], u_real: &[f64]) -> Result<f64> {
    if u_sim.len() != u_real.len() || u_sim.len() < 2 {
        return Err(CoreError::Invalid(
            "mmrv needs two equal-length series of length >= 2".into(),
        ));
    }
    let n = u_sim.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut worst = 0.0f64;
        for j in 0..n {
            let disagree = (u_sim[i] < u_sim[j]) != (u_real[i] < u_real[j]);
            if disagree {
                worst = worst.max((u_real[i] - u_real[j]).abs());
            }
        }
        total += worst;
    }
    Ok(total / n as f64)
}

/// Quantile of Beta(a, b) by bisecting the regularized incomplete beta
/// function to 1e-10.
pub fn beta_quantile(p: f64, a: f64, b: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if statrs::function::beta::beta_reg(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact binomial (Clopper–Pearson) confidence interval.
pub fn clopper_pearson(k: usize, n: usize, confidence: f64) -> Result<(f64, f64)> {
    if n == 0 || k > n {
        return Err(CoreError::Invalid(format!("invalid counts k={k}, n={n}")));
    }
    if !(0.0..1.0).contains(&confidence) && confidence != 0.95 {
        // handled below by the generic check
    }
    if confidence <= 0.0 || confidence >= 1.0 {
        return Err(CoreError::Invalid("confidence must be in (0,1)".into()));
    }
    let alpha = 1.0 - confidence;
    let lo = if k == 0 {
        0.0
    } else {
        beta_quantile(alpha / 2.0, k as f64, (n - k + 1) as f64)
    };
    let hi = if k == n {
        1.0
    } else {
        beta_quantile(1.0 - alpha / 2.0, (k + 1) as f64, (n - k) as f64)
    };
    Ok((lo, hi))
}

#[derive(Debug, Clone, Copy)]
pub struct BetaPosterior {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaPosterior {
    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    /// Central credible interval at the given mass.
    pub fn credible_interval(&self, mass: f64) -> (f64, f64) {
        let tail = 0.5 * (1.0 - mass);
        (
            beta_quantile(tail, self.alpha, self.beta),
            beta_quantile(1.0 - tail, self.alpha, self.beta),
        )
    }

    pub fn density(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        let ln_b = statrs::function::beta::ln_beta(self.alpha, self.beta);
        ((self.alpha - 1.0) * x.ln() + (self.beta - 1.0) * (1.0 - x).ln() - ln_b).exp()
    }
}

/// Posterior under the uniform prior: Beta(k+1, n−k+1).
pub fn beta_posterior(k: usize, n: usize) -> Result<BetaPosterior> {
    if k > n {
        return Err(CoreError::Invalid(format!("invalid counts k={k}, n={n}")));
    }
    Ok(BetaPosterior {
        alpha: (k + 1) as f64,
        beta: (n - k + 1) as f64,
    })
}

/// Rows = replay outcome, columns = ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Confusion counts over episodes matched by id. Errors listing every id
/// present on only one side.
pub fn replay_confusion(
    replay: &[(String, bool)],
    truth: &[(String, bool)],
) -> Result<Confusion> {
    use std::collections::BTreeMap;
    let replay_map: BTreeMap<&str, bool> =
        replay.iter().map(|(id, s)| (id.as_str(), *s)).collect();
    let truth_map: BTreeMap<&str, bool> = truth.iter().map(|(id, s)| (id.as_str(), *s)).collect();
    let unmatched: Vec<String> = replay_map
        .keys()
        .filter(|id| !truth_map.contains_key(*id))
        .chain(truth_map.keys().filter(|id| !replay_map.contains_key(*id)))
        .map(|s| s.to_string())
        .collect();
    if !unmatched.is_empty() {
        return Err(CoreError::UnmatchedEpisodes(unmatched));
    }
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
    };
    for (id, &r) in &replay_map {
        let t = truth_map[id];
        match (r, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_box() -> OrientedBox {
        OrientedBox::axis_aligned([0.0; 3], [0.5; 3])
    }

    fn frame_with_inside(inside: usize, total: usize) -> Vec<Vector3<f64>> {
        (0..total)
            .map(|i| {
                if i < inside {
                    Vector3::zeros()
                } else {
                    Vector3::new(5.0, 0.0, 0.0)
                }
            })
            .collect()
    }

    #[test]
    fn toy_packing_boundary_counts() {
        let obb = unit_box();
        // All particles inside every final frame: success.
        let frames = vec![frame_with_inside(TOY_PACKING_TOTAL, TOY_PACKING_TOTAL); 100];
        let v = toy_packing_success(&frames, &obb, TOY_PACKING_THRESHOLD, 100, SUCCESS_NEED).unwrap();
        assert!(v.success);

        // One below threshold every frame: failure.
        let frames = vec![frame_with_inside(3049, TOY_PACKING_TOTAL); 100];
        let v = toy_packing_success(&frames, &obb, TOY_PACKING_THRESHOLD, 100, SUCCESS_NEED).unwrap();
        assert!(!v.success);

        // Exactly 30 qualifying frames: failure ("over 30"); 31: success.
        for (qualifying, expect) in [(30usize, false), (31, true)] {
            let mut frames = vec![frame_with_inside(0, TOY_PACKING_TOTAL); 100 - qualifying];
            frames.extend(vec![
                frame_with_inside(TOY_PACKING_THRESHOLD, TOY_PACKING_TOTAL);
                qualifying
            ]);
            let v =
                toy_packing_success(&frames, &obb, TOY_PACKING_THRESHOLD, 100, SUCCESS_NEED).unwrap();
            assert_eq!(v.success, expect, "qualifying = {qualifying}");
        }
    }

    #[test]
    fn short_trajectory_is_truncated_not_fatal() {
        let frames = vec![frame_with_inside(TOY_PACKING_TOTAL, TOY_PACKING_TOTAL); 40];
        let v = toy_packing_success(&frames, &unit_box(), TOY_PACKING_THRESHOLD, 100, SUCCESS_NEED)
            .unwrap();
        assert!(v.truncated);
        assert!(v.success);
        assert_eq!(v.trace.len(), 40);
    }

    fn square_opening(z: f64) -> PlanarPolygon {
        PlanarPolygon {
            vertices: vec![
                [-0.5, -0.5, z],
                [0.5, -0.5, z],
                [0.5, 0.5, z],
                [-0.5, 0.5, z],
            ],
        }
    }

    #[test]
    fn rope_threaded_through_both_openings_succeeds() {
        let openings = [square_opening(0.0), square_opening(0.2)];
        // 150 segments through each opening, every frame.
        let mut segs = Vec::new();
        for z in [0.0, 0.2] {
            for i in 0..150 {
                let x = -0.4 + 0.005 * i as f64;
                segs.push((
                    Vector3::new(x, 0.0, z - 0.01),
                    Vector3::new(x, 0.0, z + 0.01),
                ));
            }
        }
        let frames = vec![segs; 100];
        let v = rope_routing_success(&frames, &openings, ROPE_SEGMENT_THRESHOLD, 100, SUCCESS_NEED)
            .unwrap();
        assert!(v.success);

        // Rope lying flat below both openings: zero crossings.
        let flat: Vec<(Vector3<f64>, Vector3<f64>)> = (0..150)
            .map(|i| {
                let x = 0.01 * i as f64;
                (Vector3::new(x, 0.0, -1.0), Vector3::new(x + 0.01, 0.0, -1.0))
            })
            .collect();
        let frames = vec![flat; 100];
        let v = rope_routing_success(&frames, &openings, ROPE_SEGMENT_THRESHOLD, 100, SUCCESS_NEED)
            .unwrap();
        assert!(!v.success);
        assert!(v.trace.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn crossings_match_brute_force_plane_oracle() {
        let opening = square_opening(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let segs: Vec<(Vector3<f64>, Vector3<f64>)> = (0..500)
            .map(|_| {
                (
                    Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                    Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                )
            })
            .collect();
        let got = segment_crossings(&segs, &opening);
        // Oracle: explicit plane crossing at z = 0.1, then 2D containment.
        let oracle = segs
            .iter()
            .filter(|(p, q)| {
                let dp = p.z - 0.1;
                let dq = q.z - 0.1;
                if dp * dq >= 0.0 {
                    return false;
                }
                let t = dp / (dp - dq);
                let x = p.x + (q.x - p.x) * t;
                let y = p.y + (q.y - p.y) * t;
                x > -0.5 && x < 0.5 && y > -0.5 && y < 0.5
            })
            .count();
        assert_eq!(got, oracle);
    }

    #[test]
    fn pusht_offset_boundaries() {
        let target: Vec<Vector3<f64>> = (0..50)
            .map(|i| Vector3::new(i as f64 * 0.01, 0.0, 0.0))
            .collect();
        let offset = |d: f64| -> Vec<Vec<Vector3<f64>>> {
            vec![target.iter().map(|p| p + Vector3::new(d, 0.0, 0.0)).collect(); 100]
        };
        assert!(pusht_success(&offset(0.0), &target, PUSHT_MSE_TOL, 100).unwrap().success);
        // 5 cm offset → MSE 0.0025: fail. 4 cm → 0.0016: pass.
        assert!(!pusht_success(&offset(0.05), &target, PUSHT_MSE_TOL, 100).unwrap().success);
        assert!(pusht_success(&offset(0.04), &target, PUSHT_MSE_TOL, 100).unwrap().success);
        // Count mismatch errors.
        let bad = vec![vec![Vector3::zeros(); 3]];
        assert!(pusht_success(&bad, &target, PUSHT_MSE_TOL, 100).is_err());
    }

    #[test]
    fn pearson_fixtures_and_oracle() {
        let u = [0.1, 0.5, 0.9];
        assert!((pearson(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        let rev = [0.9, 0.5, 0.1];
        assert!((pearson(&rev, &u).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(
            pearson(&[0.5, 0.5, 0.5], &u),
            Err(CoreError::UndefinedCorrelation(_))
        ));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x: Vec<f64> = (0..10).map(|_| rng.gen()).collect();
            let y: Vec<f64> = (0..10).map(|_| rng.gen()).collect();
            let got = pearson(&x, &y).unwrap();
            // Direct textbook formula.
            let n = 10.0;
            let sx: f64 = x.iter().sum();
            let sy: f64 = y.iter().sum();
            let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
            let sxx: f64 = x.iter().map(|a| a * a).sum();
            let syy: f64 = y.iter().map(|a| a * a).sum();
            let oracle = (n * sxy - sx * sy)
                / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt());
            assert!((got - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn mmrv_worked_example_and_oracle() {
        assert_eq!(mmrv(&[0.1, 0.5, 0.9], &[0.1, 0.5, 0.9]).unwrap(), 0.0);
        let got = mmrv(&[0.1, 0.5, 0.9], &[0.9, 0.5, 0.1]).unwrap();
        assert!((got - 2.0 / 3.0).abs() < 1e-15, "got {got}");

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            // Include ties to exercise the strict-order indicator.
            let sim: Vec<f64> = (0..8).map(|_| (rng.gen_range(0..5) as f64) / 4.0).collect();
            let real: Vec<f64> = (0..8).map(|_| (rng.gen_range(0..5) as f64) / 4.0).collect();
            let got = mmrv(&sim, &real).unwrap();
            let mut total = 0.0;
            for i in 0..8 {
                let mut worst = 0.0f64;
                for j in 0..8 {
                    if (sim[i] < sim[j]) != (real[i] < real[j]) {
                        worst = worst.max((real[i] - real[j]).abs());
                    }
                }
                total += worst;
            }
            assert_eq!(got, total / 8.0);
        }
    }

    #[test]
    fn clopper_pearson_closed_form_and_boundaries() {
        let (lo, hi) = clopper_pearson(0, 20, 0.95).unwrap();
        assert_eq!(lo, 0.0);
        let closed_form = 1.0 - 0.025f64.powf(1.0 / 20.0);
        assert!((hi - closed_form).abs() < 1e-4, "hi = {hi}");

        let (_, hi) = clopper_pearson(20, 20, 0.95).unwrap();
        assert_eq!(hi, 1.0);
        assert!(clopper_pearson(5, 4, 0.95).is_err());
    }

    #[test]
    fn clopper_pearson_intervals_nest_with_confidence() {
        for n in [1usize, 5, 20, 50] {
            for k in 0..=n {
                let (lo90, hi90) = clopper_pearson(k, n, 0.90).unwrap();
                let (lo99, hi99) = clopper_pearson(k, n, 0.99).unwrap();
                assert!(lo99 <= lo90 + 1e-9 && hi99 + 1e-9 >= hi90, "k={k} n={n}");
            }
        }
    }

    #[test]
    fn clopper_pearson_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &p in &[0.1, 0.5, 0.9] {
            let n = 20;
            let mut covered = 0usize;
            let draws = 10_000;
            for _ in 0..draws {
                let k = (0..n).filter(|_| rng.gen::<f64>() < p).count();
                let (lo, hi) = clopper_pearson(k, n, 0.95).unwrap();
                if lo <= p && p <= hi {
                    covered += 1;
                }
            }
            let coverage = covered as f64 / draws as f64;
            assert!(coverage >= 0.95, "p = {p}: coverage {coverage}");
        }
    }

    #[test]
    fn beta_posterior_fixtures() {
        let post = beta_posterior(3, 10).unwrap();
        assert_eq!(post.alpha, 4.0);
        assert_eq!(post.beta, 8.0);
        assert!((post.mean() - 1.0 / 3.0).abs() < 1e-15);

        let prior = beta_posterior(0, 0).unwrap();
        assert_eq!((prior.alpha, prior.beta), (1.0, 1.0));
        assert_eq!(prior.mean(), 0.5);

        // Density integrates to 1 (midpoint rule).
        let post = beta_posterior(7, 19).unwrap();
        let steps = 200_000;
        let mut integral = 0.0;
        for i in 0..steps {
            let x = (i as f64 + 0.5) / steps as f64;
            integral += post.density(x) / steps as f64;
        }
        assert!((integral - 1.0).abs() < 1e-6, "integral = {integral}");
    }

    #[test]
    fn replay_confusion_fixtures() {
        // Self-replay: diagonal only.
        let outcomes: Vec<(String, bool)> = (0..40)
            .map(|i| (format!("ep{i}"), i % 3 == 0))
            .collect();
        let c = replay_confusion(&outcomes, &outcomes).unwrap();
        assert_eq!(c.fp, 0);
        assert_eq!(c.fn_, 0);
        assert_eq!(c.total(), 40);

        // Hand-built lists reproducing counts tp=106, fp=37, fn=25, tn=132.
        let mut replay = Vec::new();
        let mut truth = Vec::new();
        let mut id = 0;
        for (r, t, count) in [
            (true, true, 106),
            (true, false, 37),
            (false, true, 25),
            (false, false, 132),
        ] {
            for _ in 0..count {
                replay.push((format!("e{id}"), r));
                truth.push((format!("e{id}"), t));
                id += 1;
            }
        }
        let c = replay_confusion(&replay, &truth).unwrap();
        assert_eq!(
            c,
            Confusion {
                tp: 106,
                fp: 37,
                fn_: 25,
                tn: 132
            }
        );
        assert_eq!(c.total(), 300);

        // Unmatched ids are all reported.
        let extra = vec![("only_replay".to_string(), true)];
        let other = vec![("only_truth".to_string(), false)];
        match replay_confusion(&extra, &other) {
            Err(CoreError::UnmatchedEpisodes(ids)) => {
                assert!(ids.contains(&"only_replay".to_string()));
                assert!(ids.contains(&"only_truth".to_string()));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
