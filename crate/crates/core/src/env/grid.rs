//! Deterministic initial-state grids over planar pose ranges.

use super::scenario::{PlanarPose, PlanarRanges, ThetaRange};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    /// Planar offsets per object, parallel to the scenario object list.
    pub poses: Vec<PlanarPose>,
    pub episode_id: String,
}

/// Dimension descriptors: a continuous span or a fixed discrete value set.
enum Dim {
    Continuous(f64, f64),
    Discrete(Vec<f64>),
}

/// Evenly spaced values over an inclusive range, computed with a rational
/// lattice ((n−1−i)·lo + i·hi)/(n−1) so identical inputs give bit-identical
/// grids everywhere. A single point collapses to the range midpoint.
fn spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    let d = (n - 1) as f64;
    (0..n)
        .map(|i| ((n - 1 - i) as f64 * lo + i as f64 * hi) / d)
        .collect()
}

/// Balanced factorization of `count` into `dims` ordered factors: among all
/// factorizations, the lexicographically smallest of those minimizing the
/// max/min spread.
fn balanced_factors(count: usize, dims: usize) -> Vec<usize> {
    fn recurse(remaining: usize, dims: usize, acc: &mut Vec<usize>, best: &mut Option<Vec<usize>>) {
        if dims == 1 {
            acc.push(remaining);
            let spread = *acc.iter().max().unwrap() - *acc.iter().min().unwrap();
            let better = match best {
                None => true,
                Some(b) => {
                    let bs = *b.iter().max().unwrap() - *b.iter().min().unwrap();
                    spread < bs || (spread == bs && acc[..] < b[..])
                }
            };
            if better {
                *best = Some(acc.clone());
            }
            acc.pop();
            return;
        }
        for f in 1..=remaining {
            if remaining % f == 0 {
                acc.push(f);
                recurse(remaining / f, dims - 1, acc, best);
                acc.pop();
            }
        }
    }
    let mut best = None;
    recurse(count.max(1), dims, &mut Vec::new(), &mut best);
    best.expect("factorization exists")
}

/// Deterministic evenly spaced grid over every object's (x, y, θ) ranges.
/// Discrete θ sets are enumerated in full; the remaining episode budget is
/// factored over the continuous dimensions as evenly as possible. When the
/// count does not divide exactly, the smallest covering grid is generated and
/// truncated to `count` in enumeration order.
pub fn sample_initial_grid(ranges: &[PlanarRanges], count: usize) -> Vec<InitialState> {
    assert!(count >= 1 && !ranges.is_empty());
    // Zero-width ranges are fixed points, not grid dimensions.
    let continuous = |lo: f64, hi: f64| {
        if lo == hi {
            Dim::Discrete(vec![lo])
        } else {
            Dim::Continuous(lo, hi)
        }
    };
    let mut dims: Vec<Dim> = Vec::new();
    for r in ranges {
        dims.push(continuous(r.x.0, r.x.1));
        dims.push(continuous(r.y.0, r.y.1));
        dims.push(match &r.theta {
            ThetaRange::Continuous(lo, hi) => continuous(*lo, *hi),
            ThetaRange::Discrete(vals) => Dim::Discrete(vals.clone()),
        });
    }
    let discrete_prod: usize = dims
        .iter()
        .filter_map(|d| match d {
            Dim::Discrete(v) => Some(v.len().max(1)),
            _ => None,
        })
        .product();
    let continuous_count = dims
        .iter()
        .filter(|d| matches!(d, Dim::Continuous(_, _)))
        .count();
    let budget = count.div_ceil(discrete_prod).max(1);
    let factors = balanced_factors(budget, continuous_count.max(1));

    let mut fi = 0;
    let values: Vec<Vec<f64>> = dims
        .iter()
        .map(|d| match d {
            Dim::Continuous(lo, hi) => {
                let v = spaced(*lo, *hi, factors[fi]);
                fi += 1;
                v
            }
            Dim::Discrete(v) => v.clone(),
        })
        .collect();

    // Row-major enumeration, truncated to the requested count.
    let total: usize = values.iter().map(Vec::len).product();
    let mut states = Vec::with_capacity(count.min(total));
    let mut idx = vec![0usize; values.len()];
    for ep in 0..total.min(count) {
        let mut poses = Vec::with_capacity(ranges.len());
        for o in 0..ranges.len() {
            poses.push(PlanarPose {
                x: values[3 * o][idx[3 * o]],
                y: values[3 * o + 1][idx[3 * o + 1]],
                theta: values[3 * o + 2][idx[3 * o + 2]],
            });
        }
        states.push(InitialState {
            poses,
            episode_id: format!("ep{ep:03}"),
        });
        // Increment the mixed-radix counter (last dim fastest).
        for d in (0..values.len()).rev() {
            idx[d] += 1;
            if idx[d] < values[d].len() {
                break;
            }
            idx[d] = 0;
        }
    }
    states
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_ranges() -> Vec<PlanarRanges> {
        vec![PlanarRanges {
            x: (-0.05, 0.05),
            y: (-0.05, 0.03),
            theta: ThetaRange::Continuous(-5f64.to_radians(), 5f64.to_radians()),
        }]
    }

    #[test]
    fn toy_packing_grid_has_20_states_in_range() {
        let states = sample_initial_grid(&toy_ranges(), 20);
        assert_eq!(states.len(), 20);
        for s in &states {
            let p = s.poses[0];
            assert!(p.x >= -0.05 && p.x <= 0.05);
            assert!(p.y >= -0.05 && p.y <= 0.03);
            assert!(p.theta.abs() <= 5f64.to_radians() + 1e-12);
        }
        // Deterministic across calls.
        assert_eq!(states, sample_initial_grid(&toy_ranges(), 20));
    }

    #[test]
    fn pusht_theta_only_uses_discrete_set() {
        let allowed: Vec<f64> = [45.0, -45.0, 135.0, -135.0]
            .iter()
            .map(|d: &f64| d.to_radians())
            .collect();
        let ranges = vec![PlanarRanges {
            x: (-0.03, 0.03),
            y: (-0.03, 0.03),
            theta: ThetaRange::Discrete(allowed.clone()),
        }];
        let states = sample_initial_grid(&ranges, 16);
        assert_eq!(states.len(), 16);
        for s in &states {
            assert!(allowed.iter().any(|&a| (s.poses[0].theta - a).abs() < 1e-12));
        }
        // All four angles appear.
        for &a in &allowed {
            assert!(states.iter().any(|s| (s.poses[0].theta - a).abs() < 1e-12));
        }
    }

    #[test]
    fn single_point_range_collapses_to_nominal() {
        let ranges = vec![PlanarRanges {
            x: (-0.02, 0.02),
            y: (-0.02, 0.02),
            theta: ThetaRange::Continuous(-0.1, 0.1),
        }];
        let states = sample_initial_grid(&ranges, 1);
        assert_eq!(states.len(), 1);
        let p = states[0].poses[0];
        assert_eq!((p.x, p.y, p.theta), (0.0, 0.0, 0.0));
    }

    #[test]
    fn rope_grid_of_27_covers_theta_range_evenly() {
        let ranges = vec![PlanarRanges {
            x: (-0.0, 0.0),
            y: (0.0, 0.0),
            theta: ThetaRange::Continuous(-10f64.to_radians(), 10f64.to_radians()),
        }];
        let states = sample_initial_grid(&ranges, 27);
        assert_eq!(states.len(), 27);
        let thetas: Vec<f64> = states.iter().map(|s| s.poses[0].theta).collect();
        assert!((thetas[0] + 10f64.to_radians()).abs() < 1e-12);
        assert!((thetas[26] - 10f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn balanced_factorization_is_deterministic() {
        assert_eq!(balanced_factors(20, 3), vec![2, 2, 5]);
        assert_eq!(balanced_factors(27, 3), vec![3, 3, 3]);
        assert_eq!(balanced_factors(7, 2), vec![1, 7]);
    }
}
