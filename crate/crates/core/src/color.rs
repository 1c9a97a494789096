//! Robust polynomial color alignment: per-channel polynomial transforms
//! fitted by IRLS with brightness-based base weights and Tukey biweight
//! reweighting.

use crate::error::{CoreError, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::{BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorPolynomial {
    pub coefficients: Vec<[f64; 3]>,
}

impl ColorPolynomial {
    pub fn identity(degree: usize) -> Self {
        let mut coefficients = vec![[0.0; 3]; degree + 1];
        coefficients[1] = [1.0; 3];
        Self { coefficients }
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn eval(&self, p: &[f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for c in 0..3 {
            // Horner evaluation, clamped to the displayable range.
            let mut acc = 0.0;
            for k in (0..self.coefficients.len()).rev() {
                acc = acc * p[c] + self.coefficients[k][c];
            }
            out[c] = acc.clamp(0.0, 1.0);
        }
        out
    }

    /// Text format: `degree <d>` then d+1 lines of three coefficients.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let path_str = path.as_ref().display().to_string();
        let io_err = |e| CoreError::Io {
            path: path_str.clone(),
            source: e,
        };
        let mut w = BufWriter::new(std::fs::File::create(&path).map_err(io_err)?);
        writeln!(w, "degree {}", self.degree()).map_err(io_err)?;
        for c in &self.coefficients {
            writeln!(w, "{:.17e} {:.17e} {:.17e}", c[0], c[1], c[2]).map_err(io_err)?;
        }
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path_str = path.as_ref().display().to_string();
        let text = std::fs::read_to_string(&path).map_err(|e| CoreError::Io {
            path: path_str.clone(),
            source: e,
        })?;
        let parse_err = |line: usize, msg: &str| CoreError::Parse {
            path: path_str.clone(),
            line,
            msg: msg.into(),
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
        let degree: usize = header
            .strip_prefix("degree ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| parse_err(1, "expected `degree <d>`"))?;
        let mut coefficients = Vec::with_capacity(degree + 1);
        for _ in 0..=degree {
            let (lineno, line) = lines
                .next()
                .ok_or_else(|| parse_err(degree + 2, "missing coefficient line"))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| parse_err(lineno + 1, "malformed coefficient"))?;
            if vals.len() != 3 {
                return Err(parse_err(lineno + 1, "expected 3 coefficients"));
            }
            coefficients.push([vals[0], vals[1], vals[2]]);
        }
        if coefficients.len() < 2 {
            return Err(parse_err(1, "degree must be >= 1"));
        }
        Ok(Self { coefficients })
    }
}

#[derive(Debug, Clone, Default)]
pub struct PixelPairSet {
    /// (rendered color, captured color) in [0,1]^3.
    pub pairs: Vec<([f64; 3], [f64; 3])>,
}

impl PixelPairSet {
    pub fn push(&mut self, rendered: [f64; 3], captured: [f64; 3]) {
        self.pairs.push((rendered, captured));
    }
}

pub const IRLS_ITERATIONS: usize = 50;
pub const TUKEY_C: f64 = 4.685;
const CHANNEL_NAMES: [&str; 3] = ["red", "green", "blue"];

/// Weighted least-squares solve for one channel. Errors if the design is
/// rank-deficient (e.g. a constant channel).
fn solve_channel(
    pairs: &[([f64; 3], [f64; 3])],
    weights: &[f64],
    degree: usize,
    channel: usize,
) -> Result<Vec<f64>> {
    let cols = degree + 1;
    let n = pairs.len();
    let mut design = DMatrix::zeros(n, cols);
    let mut rhs = DVector::zeros(n);
    for (row, ((p, q), &w)) in pairs.iter().zip(weights).enumerate() {
        let sw = w.max(0.0).sqrt();
        let mut pk = 1.0;
        for k in 0..cols {
            design[(row, k)] = sw * pk;
            pk *= p[channel];
        }
        rhs[row] = sw * q[channel];
    }
    let svd = design.svd(true, true);
    let max_sv = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > max_sv * 1e-10)
        .count();
    if rank < cols {
        return Err(CoreError::RankDeficient {
            channel: CHANNEL_NAMES[channel].into(),
        });
    }
    let sol = svd
        .solve(&rhs, max_sv * 1e-10)
        .map_err(|e| CoreError::Invalid(e.into()))?;
    Ok(sol.iter().copied().collect())
}

/// The weighted residual objective minimized by the fixed-weight inner solve.
pub fn weighted_objective(poly: &ColorPolynomial, pairs: &[([f64; 3], [f64; 3])], weights: &[f64]) -> f64 {
    pairs
        .iter()
        .zip(weights)
        .map(|((p, q), &w)| {
            let mut r2 = 0.0;
            for c in 0..3 {
                let mut acc = 0.0;
                for k in (0..poly.coefficients.len()).rev() {
                    acc = acc * p[c] + poly.coefficients[k][c];
                }
                r2 += (acc - q[c]).powi(2);
            }
            w * r2
        })
        .sum()
}

/// Fit a per-channel polynomial color transform by IRLS. Base weights are the
/// captured color's brightness (‖q‖₂); each round multiplies them by the
/// Tukey biweight of the previous residual norm (c = 4.685, MAD-scaled).
/// Runs exactly `iters` reweighting rounds.
pub fn fit_color_transform(
    pairs: &PixelPairSet,
    degree: usize,
    iters: usize,
) -> Result<ColorPolynomial> {
    if degree < 1 {
        return Err(CoreError::Invalid("polynomial degree must be >= 1".into()));
    }
    if pairs.pairs.len() < degree + 1 {
        return Err(CoreError::Invalid(format!(
            "need at least {} pairs for degree {degree}",
            degree + 1
        )));
    }
    let data = &pairs.pairs;
    let base: Vec<f64> = data
        .iter()
        .map(|(_, q)| (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt())
        .collect();
    // All-black captures would zero every weight; keep a floor.
    let base: Vec<f64> = base.iter().map(|&b| b.max(1e-6)).collect();

    let solve_all = |weights: &[f64]| -> Result<ColorPolynomial> {
        let mut coefficients = vec![[0.0; 3]; degree + 1];
        for c in 0..3 {
            let sol = solve_channel(data, weights, degree, c)?;
            for (k, v) in sol.iter().enumerate() {
                coefficients[k][c] = *v;
            }
        }
        Ok(ColorPolynomial { coefficients })
    };

    let mut weights = base.clone();
    let mut poly = solve_all(&weights)?;
    for _ in 0..iters {
        let residuals: Vec<f64> = data
            .iter()
            .map(|(p, q)| {
                let f = raw_eval(&poly, p);
                ((f[0] - q[0]).powi(2) + (f[1] - q[1]).powi(2) + (f[2] - q[2]).powi(2)).sqrt()
            })
            .collect();
        let mut sorted = residuals.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = sorted[sorted.len() / 2];
        let mut dev: Vec<f64> = residuals.iter().map(|r| (r - median).abs()).collect();
        dev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mad = dev[dev.len() / 2];
        let scale = (1.4826 * mad).max(1e-9);
        weights = base
            .iter()
            .zip(&residuals)
            .map(|(&b, &r)| {
                let u = r / (TUKEY_C * scale);
                if u >= 1.0 {
                    0.0
                } else {
                    b * (1.0 - u * u).powi(2)
                }
            })
            .collect();
        // A pathological round that zeroes every weight falls back to the
        // brightness weights rather than producing a singular solve.
        if weights.iter().all(|&w| w == 0.0) {
            weights = base.clone();
        }
        poly = solve_all(&weights)?;
    }
    Ok(poly)
}

/// Polynomial evaluation without the display clamp (residuals for IRLS).
fn raw_eval(poly: &ColorPolynomial, p: &[f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for c in 0..3 {
        let mut acc = 0.0;
        for k in (0..poly.coefficients.len()).rev() {
            acc = acc * p[c] + poly.coefficients[k][c];
        }
        out[c] = acc;
    }
    out
}

pub fn apply_color_transform(poly: &ColorPolynomial, colors: &[[f64; 3]]) -> Vec<[f64; 3]> {
    colors.iter().map(|p| poly.eval(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pairs<F: Fn(&[f64; 3]) -> [f64; 3]>(n: usize, seed: u64, f: F) -> PixelPairSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = PixelPairSet::default();
        for _ in 0..n {
            let p = [rng.gen(), rng.gen(), rng.gen()];
            set.push(p, f(&p));
        }
        set
    }

    #[test]
    fn identity_data_fits_identity_polynomial() {
        let pairs = random_pairs(500, 81, |p| *p);
        let poly = fit_color_transform(&pairs, 2, IRLS_ITERATIONS).unwrap();
        for (k, c) in poly.coefficients.iter().enumerate() {
            let expect = if k == 1 { 1.0 } else { 0.0 };
            for ch in 0..3 {
                assert!((c[ch] - expect).abs() < 1e-9, "coeff[{k}][{ch}] = {}", c[ch]);
            }
        }
    }

    #[test]
    fn known_quadratic_is_recovered() {
        let truth = ColorPolynomial {
            coefficients: vec![[0.05, 0.02, 0.01], [0.8, 0.9, 1.1], [0.1, -0.05, 0.02]],
        };
        let pairs = random_pairs(10_000, 91, |p| raw_eval(&truth, p));
        let poly = fit_color_transform(&pairs, 2, IRLS_ITERATIONS).unwrap();
        let mut sq = 0.0;
        for k in 0..3 {
            for c in 0..3 {
                sq += (poly.coefficients[k][c] - truth.coefficients[k][c]).powi(2);
            }
        }
        let rmse = (sq / 9.0).sqrt();
        assert!(rmse < 1e-6, "rmse = {rmse}");
    }

    #[test]
    fn tukey_downweights_outliers_vs_plain_least_squares() {
        let truth = ColorPolynomial {
            coefficients: vec![[0.05, 0.02, 0.01], [0.8, 0.9, 1.1], [0.1, -0.05, 0.02]],
        };
        let mut pairs = random_pairs(2000, 101, |p| raw_eval(&truth, p));
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        for i in 0..200 {
            pairs.pairs[i * 10].1 = [rng.gen(), rng.gen(), rng.gen()];
        }
        let coeff_err = |poly: &ColorPolynomial| {
            let mut m = 0.0_f64;
            for k in 0..3 {
                for c in 0..3 {
                    m = m.max((poly.coefficients[k][c] - truth.coefficients[k][c]).abs());
                }
            }
            m
        };
        let robust = fit_color_transform(&pairs, 2, IRLS_ITERATIONS).unwrap();
        // Plain least squares: uniform weights, no reweighting.
        let weights = vec![1.0; pairs.pairs.len()];
        let mut plain_coeffs = vec![[0.0; 3]; 3];
        for c in 0..3 {
            let sol = solve_channel(&pairs.pairs, &weights, 2, c).unwrap();
            for (k, v) in sol.iter().enumerate() {
                plain_coeffs[k][c] = *v;
            }
        }
        let plain = ColorPolynomial { coefficients: plain_coeffs };
        assert!(coeff_err(&robust) < 1e-2, "robust error {}", coeff_err(&robust));
        assert!(
            coeff_err(&plain) > 5.0 * coeff_err(&robust),
            "plain {} vs robust {}",
            coeff_err(&plain),
            coeff_err(&robust)
        );
    }

    #[test]
    fn constant_channel_names_the_deficiency() {
        let mut pairs = PixelPairSet::default();
        let mut rng = ChaCha8Rng::seed_from_u64(111);
        for _ in 0..100 {
            pairs.push([rng.gen(), 0.5, rng.gen()], [rng.gen(), rng.gen(), rng.gen()]);
        }
        let err = fit_color_transform(&pairs, 2, 5).unwrap_err();
        match err {
            CoreError::RankDeficient { channel } => assert_eq!(channel, "green"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn fit_is_invariant_to_pair_order() {
        let truth = ColorPolynomial {
            coefficients: vec![[0.05, 0.02, 0.01], [0.8, 0.9, 1.1], [0.1, -0.05, 0.02]],
        };
        let pairs = random_pairs(300, 121, |p| raw_eval(&truth, p));
        let mut reversed = pairs.clone();
        reversed.pairs.reverse();
        let a = fit_color_transform(&pairs, 2, 10).unwrap();
        let b = fit_color_transform(&reversed, 2, 10).unwrap();
        for k in 0..3 {
            for c in 0..3 {
                assert!((a.coefficients[k][c] - b.coefficients[k][c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn inner_solve_does_not_increase_fixed_weight_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(131);
        let pairs = random_pairs(200, 132, |p| {
            [p[0] * 0.9 + 0.05, p[1].powi(2), p[2] * 0.5 + 0.2]
        });
        let weights: Vec<f64> = (0..200).map(|_| rng.gen_range(0.1..2.0)).collect();
        let arbitrary = ColorPolynomial {
            coefficients: vec![[0.3; 3], [0.4; 3], [0.1; 3]],
        };
        let before = weighted_objective(&arbitrary, &pairs.pairs, &weights);
        let mut coefficients = vec![[0.0; 3]; 3];
        for c in 0..3 {
            let sol = solve_channel(&pairs.pairs, &weights, 2, c).unwrap();
            for (k, v) in sol.iter().enumerate() {
                coefficients[k][c] = *v;
            }
        }
        let solved = ColorPolynomial { coefficients };
        let after = weighted_objective(&solved, &pairs.pairs, &weights);
        assert!(after <= before + 1e-12, "{after} > {before}");
    }

    #[test]
    fn apply_clamps_and_matches_horner_oracle() {
        let poly = ColorPolynomial {
            coefficients: vec![[0.1; 3], [0.0; 3], [0.0; 3]],
        };
        let out = apply_color_transform(&poly, &[[0.3, 0.7, 0.9]]);
        assert_eq!(out[0], [0.1, 0.1, 0.1]);

        let mut rng = ChaCha8Rng::seed_from_u64(141);
        let rand_poly = ColorPolynomial {
            coefficients: (0..4)
                .map(|_| [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)])
                .collect(),
        };
        for _ in 0..100 {
            let p = [rng.gen(), rng.gen(), rng.gen()];
            let got = rand_poly.eval(&p);
            for c in 0..3 {
                // Power-sum oracle, clamped the same way.
                let direct: f64 = rand_poly
                    .coefficients
                    .iter()
                    .enumerate()
                    .map(|(k, coef)| coef[c] * p[c].powi(k as i32))
                    .sum();
                assert!((got[c] - direct.clamp(0.0, 1.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn color_polynomial_file_roundtrip() {
        let poly = ColorPolynomial {
            coefficients: vec![[0.05, 0.02, 0.01], [0.8, 0.9, 1.1], [0.1, -0.05, 0.02]],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("color.txt");
        poly.save(&p).unwrap();
        let loaded = ColorPolynomial::load(&p).unwrap();
        assert_eq!(poly, loaded);
    }
}
