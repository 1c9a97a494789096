//! Gaussian splat kernels and binary-little-endian PLY I/O.
//!
//! File convention follows the de-facto community splat export: raw opacity
//! stored pre-sigmoid, scales stored as logs, color stored as DC spherical
//! harmonics (`rgb = 0.5 + C0 * f_dc`). Higher SH bands (`f_rest_*`) are read
//! and discarded. Our writer emits double-precision properties; the reader
//! accepts both `float` and `double`.

use crate::error::{CoreError, Result};
use crate::geom::RigidTransform;
use nalgebra::{UnitQuaternion, Vector3};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const SH_C0: f64 = 0.28209479177;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    pub position: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    /// Per-axis standard deviation in meters.
    pub scale: Vector3<f64>,
    pub opacity: f64,
    pub color: [f64; 3],
    /// Link index or object id assigned by segmentation; None until labeled.
    pub label: Option<u32>,
}

#[derive(Debug, Clone, Default)]
pub struct GaussianSet {
    pub kernels: Vec<GaussianKernel>,
    pub frame: String,
}

impl GaussianSet {
    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.kernels.iter().map(|k| k.position).collect()
    }

    /// Apply a rigid transform to every kernel (position and orientation).
    pub fn transform(&mut self, t: &RigidTransform) {
        for k in &mut self.kernels {
            k.position = t.apply(&k.position);
            k.rotation = t.rotation * k.rotation;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Header comment marking a file whose fields hold already-activated physical
/// values (no sigmoid/exp/DC maps). Written by [`save_splat_ply`] so that
/// save→load round-trips are bit-exact; community exports lack the marker and
/// go through the standard activation.
const PHYSICAL_MARKER: &str = "comment splatsim_physical 1";

const FIELDS: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
];

#[derive(Clone, Copy)]
enum PropType {
    F32,
    F64,
}

impl PropType {
    fn size(self) -> usize {
        match self {
            PropType::F32 => 4,
            PropType::F64 => 8,
        }
    }
}

/// Load a binary-little-endian splat PLY.
pub fn load_splat_ply<P: AsRef<Path>>(path: P) -> Result<GaussianSet> {
    let path_str = path.as_ref().display().to_string();
    let file = std::fs::File::open(&path).map_err(|e| CoreError::Io {
        path: path_str.clone(),
        source: e,
    })?;
    let mut reader = BufReader::new(file);

    let mut line = String::new();
    let mut props: Vec<(String, PropType)> = Vec::new();
    let mut count = 0usize;
    let mut lineno = 0usize;
    let mut saw_format = false;
    let mut physical = false;
    loop {
        line.clear();
        reader.read_line(&mut line).map_err(|e| CoreError::Io {
            path: path_str.clone(),
            source: e,
        })?;
        lineno += 1;
        let trimmed = line.trim();
        if lineno == 1 && trimmed != "ply" {
            return Err(CoreError::Parse {
                path: path_str,
                line: 1,
                msg: "not a PLY file".into(),
            });
        }
        if trimmed.starts_with("format") {
            if trimmed != "format binary_little_endian 1.0" {
                return Err(CoreError::Parse {
                    path: path_str,
                    line: lineno,
                    msg: format!("unsupported format `{trimmed}`"),
                });
            }
            saw_format = true;
        } else if let Some(rest) = trimmed.strip_prefix("element ") {
            let mut it = rest.split_whitespace();
            let name = it.next().unwrap_or("");
            if name != "vertex" {
                return Err(CoreError::Parse {
                    path: path_str,
                    line: lineno,
                    msg: format!("unsupported element `{name}`"),
                });
            }
            count = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CoreError::Parse {
                    path: path_str.clone(),
                    line: lineno,
                    msg: "bad element count".into(),
                })?;
        } else if let Some(rest) = trimmed.strip_prefix("property ") {
            let mut it = rest.split_whitespace();
            let ty = match it.next() {
                Some("float") | Some("float32") => PropType::F32,
                Some("double") | Some("float64") => PropType::F64,
                other => {
                    return Err(CoreError::Parse {
                        path: path_str,
                        line: lineno,
                        msg: format!("unsupported property type {other:?}"),
                    })
                }
            };
            let name = it.next().unwrap_or("").to_string();
            props.push((name, ty));
        } else if trimmed == PHYSICAL_MARKER {
            physical = true;
        } else if trimmed == "end_header" {
            break;
        }
        if lineno > 4096 {
            return Err(CoreError::Parse {
                path: path_str,
                line: lineno,
                msg: "header too large".into(),
            });
        }
    }
    if !saw_format {
        return Err(CoreError::Parse {
            path: path_str,
            line: lineno,
            msg: "missing format line".into(),
        });
    }
    let mut field_idx = [0usize; 14];
    for (k, f) in FIELDS.iter().enumerate() {
        field_idx[k] = props
            .iter()
            .position(|(n, _)| n == f)
            .ok_or_else(|| CoreError::MissingField {
                path: path_str.clone(),
                field: f.to_string(),
            })?;
    }
    let stride: usize = props.iter().map(|(_, t)| t.size()).sum();
    let mut offsets = Vec::with_capacity(props.len());
    let mut acc = 0usize;
    for (_, t) in &props {
        offsets.push(acc);
        acc += t.size();
    }

    let mut body = Vec::new();
    reader.read_to_end(&mut body).map_err(|e| CoreError::Io {
        path: path_str.clone(),
        source: e,
    })?;
    if body.len() < stride * count {
        return Err(CoreError::Parse {
            path: path_str,
            line: lineno,
            msg: format!("body too short: {} < {}", body.len(), stride * count),
        });
    }

    let read_prop = |elem: usize, prop: usize| -> f64 {
        let off = elem * stride + offsets[prop];
        match props[prop].1 {
            PropType::F32 => f32::from_le_bytes(body[off..off + 4].try_into().unwrap()) as f64,
            PropType::F64 => f64::from_le_bytes(body[off..off + 8].try_into().unwrap()),
        }
    };

    let mut kernels = Vec::with_capacity(count);
    for e in 0..count {
        let mut raw = [0.0f64; 14];
        for k in 0..14 {
            raw[k] = read_prop(e, field_idx[k]);
            if !raw[k].is_finite() {
                return Err(CoreError::NonFinite {
                    path: path_str,
                    index: e,
                    field: FIELDS[k].to_string(),
                });
            }
        }
        let (color, opacity, scale) = if physical {
            (
                [raw[3], raw[4], raw[5]],
                raw[6],
                Vector3::new(raw[7], raw[8], raw[9]),
            )
        } else {
            (
                [
                    0.5 + SH_C0 * raw[3],
                    0.5 + SH_C0 * raw[4],
                    0.5 + SH_C0 * raw[5],
                ],
                sigmoid(raw[6]),
                Vector3::new(raw[7].exp(), raw[8].exp(), raw[9].exp()),
            )
        };
        let quat = nalgebra::Quaternion::new(raw[10], raw[11], raw[12], raw[13]);
        let rotation = if physical {
            // Writer emits unit quaternions; renormalizing would perturb ulps.
            nalgebra::Unit::new_unchecked(quat)
        } else {
            UnitQuaternion::from_quaternion(quat)
        };
        kernels.push(GaussianKernel {
            position: Vector3::new(raw[0], raw[1], raw[2]),
            rotation,
            scale,
            opacity,
            color,
            label: None,
        });
    }
    Ok(GaussianSet {
        kernels,
        frame: String::new(),
    })
}

/// Save a splat PLY in the physical-units variant (marked by a header
/// comment), so that save→load round-trips are bit-exact for every field.
pub fn save_splat_ply<P: AsRef<Path>>(path: P, set: &GaussianSet) -> Result<()> {
    let path_str = path.as_ref().display().to_string();
    let file = std::fs::File::create(&path).map_err(|e| CoreError::Io {
        path: path_str.clone(),
        source: e,
    })?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| CoreError::Io {
        path: path_str.clone(),
        source: e,
    };
    writeln!(w, "ply").map_err(io_err)?;
    writeln!(w, "format binary_little_endian 1.0").map_err(io_err)?;
    writeln!(w, "{PHYSICAL_MARKER}").map_err(io_err)?;
    writeln!(w, "element vertex {}", set.kernels.len()).map_err(io_err)?;
    for f in FIELDS {
        writeln!(w, "property double {f}").map_err(io_err)?;
    }
    writeln!(w, "end_header").map_err(io_err)?;

    for k in &set.kernels {
        let mut raw = [0.0f64; 14];
        raw[0] = k.position.x;
        raw[1] = k.position.y;
        raw[2] = k.position.z;
        raw[3] = k.color[0];
        raw[4] = k.color[1];
        raw[5] = k.color[2];
        raw[6] = k.opacity;
        raw[7] = k.scale[0];
        raw[8] = k.scale[1];
        raw[9] = k.scale[2];
        let q = k.rotation.quaternion();
        raw[10] = q.w;
        raw[11] = q.i;
        raw[12] = q.j;
        raw[13] = q.k;
        for v in raw {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn write_f32_ply(path: &std::path::Path, rows: &[[f32; 14]]) {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
        buf.extend_from_slice(format!("element vertex {}\n", rows.len()).as_bytes());
        for f in FIELDS {
            buf.extend_from_slice(format!("property float {f}\n").as_bytes());
        }
        buf.extend_from_slice(b"end_header\n");
        for row in rows {
            for v in row {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, buf).unwrap();
    }

    #[test]
    fn zero_dc_and_zero_opacity_map_to_gray_half() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.ply");
        let mut row = [0.0f32; 14];
        row[10] = 1.0; // unit quaternion w
        write_f32_ply(&p, &[row]);
        let set = load_splat_ply(&p).unwrap();
        assert_eq!(set.kernels.len(), 1);
        let k = &set.kernels[0];
        assert_eq!(k.color, [0.5, 0.5, 0.5]);
        assert_eq!(k.opacity, 0.5);
    }

    #[test]
    fn log_scale_is_exponentiated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.ply");
        let mut row = [0.0f32; 14];
        row[10] = 1.0;
        let ln002 = (0.02f32).ln();
        row[7] = ln002;
        row[8] = ln002;
        row[9] = ln002;
        write_f32_ply(&p, &[row]);
        let set = load_splat_ply(&p).unwrap();
        let s = set.kernels[0].scale;
        for a in 0..3 {
            assert!((s[a] - 0.02).abs() < 1e-7, "scale {}", s[a]);
        }
    }

    #[test]
    fn missing_field_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ply");
        let mut buf = Vec::new();
        buf.extend_from_slice(b"ply\nformat binary_little_endian 1.0\nelement vertex 0\n");
        for f in &FIELDS[..13] {
            buf.extend_from_slice(format!("property float {f}\n").as_bytes());
        }
        buf.extend_from_slice(b"end_header\n");
        std::fs::write(&p, buf).unwrap();
        match load_splat_ply(&p) {
            Err(CoreError::MissingField { field, .. }) => assert_eq!(field, "rot_3"),
            other => panic!("expected missing field, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_value_reports_element_index() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nan.ply");
        let mut good = [0.0f32; 14];
        good[10] = 1.0;
        let mut bad = good;
        bad[2] = f32::NAN;
        write_f32_ply(&p, &[good, bad]);
        match load_splat_ply(&p) {
            Err(CoreError::NonFinite { index, field, .. }) => {
                assert_eq!(index, 1);
                assert_eq!(field, "z");
            }
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let kernels: Vec<GaussianKernel> = (0..100)
            .map(|_| GaussianKernel {
                position: Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
                rotation: UnitQuaternion::from_euler_angles(
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-3.0..3.0),
                ),
                scale: Vector3::new(
                    rng.gen_range(0.001..0.1),
                    rng.gen_range(0.001..0.1),
                    rng.gen_range(0.001..0.1),
                ),
                opacity: rng.gen_range(0.01..0.99),
                color: [rng.gen(), rng.gen(), rng.gen()],
                label: None,
            })
            .collect();
        let set = GaussianSet {
            kernels,
            frame: String::new(),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.ply");
        save_splat_ply(&p, &set).unwrap();
        let loaded = load_splat_ply(&p).unwrap();
        assert_eq!(loaded.kernels.len(), set.kernels.len());
        for (a, b) in set.kernels.iter().zip(&loaded.kernels) {
            assert_eq!(a.position, b.position);
            assert_eq!(a.scale, b.scale, "scale mismatch");
            assert_eq!(a.opacity, b.opacity, "opacity mismatch");
            assert_eq!(a.color, b.color, "color mismatch");
            let qa = a.rotation.quaternion();
            let qb = b.rotation.quaternion();
            assert_eq!((qa.w, qa.i, qa.j, qa.k), (qb.w, qb.i, qb.j, qb.k));
        }
    }
}
