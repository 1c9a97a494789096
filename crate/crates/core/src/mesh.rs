//! Triangle meshes: ASCII OBJ loading, volume/area utilities, surface
//! sampling, and proximity queries (closest point, signed distance) backed by
//! a small AABB tree. Signed distance uses angle-weighted pseudonormals for
//! closed meshes and falls back to unsigned distance + surface normal for
//! open ones.

use crate::error::{CoreError, Result};
use nalgebra::Vector3;
use std::collections::HashMap;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
    pub name: String,
}

const DEGENERATE_AREA: f64 = 1e-12;

impl TriangleMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>, name: &str) -> Result<Self> {
        for (i, t) in triangles.iter().enumerate() {
            for &v in t {
                if v >= vertices.len() {
                    return Err(CoreError::Invalid(format!(
                        "triangle {i} references vertex {v} out of {}",
                        vertices.len()
                    )));
                }
            }
        }
        // Degenerate triangles are dropped rather than faulting the load.
        let triangles = triangles
            .into_iter()
            .filter(|t| triangle_area(&vertices[t[0]], &vertices[t[1]], &vertices[t[2]]) >= DEGENERATE_AREA)
            .collect();
        Ok(Self {
            vertices,
            triangles,
            name: name.to_string(),
        })
    }

    /// Axis-aligned box mesh (12 triangles), centered at `center`.
    pub fn box_mesh(center: [f64; 3], half_extents: [f64; 3], name: &str) -> Self {
        let c = Vector3::new(center[0], center[1], center[2]);
        let h = half_extents;
        let mut vertices = Vec::with_capacity(8);
        for &z in &[-h[2], h[2]] {
            for &y in &[-h[1], h[1]] {
                for &x in &[-h[0], h[0]] {
                    vertices.push(c + Vector3::new(x, y, z));
                }
            }
        }
        // Outward-facing winding.
        let triangles = vec![
            [0, 2, 1], [1, 2, 3], // bottom (z-)
            [4, 5, 6], [5, 7, 6], // top (z+)
            [0, 1, 4], [1, 5, 4], // front (y-)
            [2, 6, 3], [3, 6, 7], // back (y+)
            [0, 4, 2], [2, 4, 6], // left (x-)
            [1, 3, 5], [3, 7, 5], // right (x+)
        ];
        Self::new(vertices, triangles, name).expect("box mesh is valid")
    }

    pub fn translated(&self, offset: Vector3<f64>) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| v + offset).collect(),
            triangles: self.triangles.clone(),
            name: self.name.clone(),
        }
    }

    pub fn triangle_vertices(&self, i: usize) -> [Vector3<f64>; 3] {
        let t = self.triangles[i];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    /// Signed volume via the divergence theorem; positive for outward winding.
    pub fn volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let a = &self.vertices[t[0]];
                let b = &self.vertices[t[1]];
                let c = &self.vertices[t[2]];
                a.dot(&b.cross(c)) / 6.0
            })
            .sum()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|i| {
                let [a, b, c] = self.triangle_vertices(i);
                triangle_area(&a, &b, &c)
            })
            .sum()
    }

    pub fn aabb(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Every edge shared by exactly two triangles.
    pub fn is_closed(&self) -> bool {
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                *edge_count.entry(key).or_insert(0) += 1;
            }
        }
        edge_count.values().all(|&c| c == 2)
    }

    /// Area-weighted surface samples: (point, triangle index).
    pub fn sample_surface<R: rand::Rng>(&self, n: usize, rng: &mut R) -> Vec<(Vector3<f64>, usize)> {
        let mut cdf = Vec::with_capacity(self.triangles.len());
        let mut acc = 0.0;
        for i in 0..self.triangles.len() {
            let [a, b, c] = self.triangle_vertices(i);
            acc += triangle_area(&a, &b, &c);
            cdf.push(acc);
        }
        let total = acc;
        (0..n)
            .map(|_| {
                let u = rng.gen_range(0.0..total);
                let ti = cdf.partition_point(|&x| x < u).min(self.triangles.len() - 1);
                let [a, b, c] = self.triangle_vertices(ti);
                let (mut r1, r2): (f64, f64) = (rng.gen(), rng.gen());
                r1 = r1.sqrt();
                let p = a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2);
                (p, ti)
            })
            .collect()
    }
}

pub fn triangle_area(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    (b - a).cross(&(c - a)).norm() * 0.5
}

/// Load an ASCII OBJ with v/f records. Quads (and larger polygons) are
/// fan-triangulated. Face indices are 1-based; negative indices are relative
/// to the current vertex count.
pub fn load_mesh_obj<P: AsRef<Path>>(path: P) -> Result<TriangleMesh> {
    let path_str = path.as_ref().display().to_string();
    let text = std::fs::read_to_string(&path).map_err(|e| CoreError::Io {
        path: path_str.clone(),
        source: e,
    })?;
    parse_obj(&text, &path_str)
}

pub fn parse_obj(text: &str, path_str: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim();
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let coords: Vec<f64> = it
                    .take(3)
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| CoreError::Parse {
                        path: path_str.into(),
                        line: lineno,
                        msg: format!("bad vertex: {e}"),
                    })?;
                if coords.len() != 3 {
                    return Err(CoreError::Parse {
                        path: path_str.into(),
                        line: lineno,
                        msg: "vertex needs 3 coordinates".into(),
                    });
                }
                if coords.iter().any(|c| !c.is_finite()) {
                    return Err(CoreError::Parse {
                        path: path_str.into(),
                        line: lineno,
                        msg: "non-finite vertex coordinate".into(),
                    });
                }
                vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in it {
                    let first = tok.split('/').next().unwrap_or("");
                    let raw: i64 = first.parse().map_err(|e| CoreError::Parse {
                        path: path_str.into(),
                        line: lineno,
                        msg: format!("bad face index `{tok}`: {e}"),
                    })?;
                    let resolved = if raw > 0 {
                        (raw - 1) as usize
                    } else if raw < 0 {
                        let back = (-raw) as usize;
                        if back > vertices.len() {
                            return Err(CoreError::Parse {
                                path: path_str.into(),
                                line: lineno,
                                msg: format!("face index {raw} out of range"),
                            });
                        }
                        vertices.len() - back
                    } else {
                        return Err(CoreError::Parse {
                            path: path_str.into(),
                            line: lineno,
                            msg: "face index 0 is invalid".into(),
                        });
                    };
                    if resolved >= vertices.len() {
                        return Err(CoreError::Parse {
                            path: path_str.into(),
                            line: lineno,
                            msg: format!("face index {raw} out of range ({} vertices)", vertices.len()),
                        });
                    }
                    idx.push(resolved);
                }
                if idx.len() < 3 {
                    return Err(CoreError::Parse {
                        path: path_str.into(),
                        line: lineno,
                        msg: "face needs at least 3 indices".into(),
                    });
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let name = Path::new(path_str)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    TriangleMesh::new(vertices, triangles, &name)
}

/// Result of a proximity query against a [`MeshQuery`].
#[derive(Debug, Clone, Copy)]
pub struct SurfaceHit {
    pub point: Vector3<f64>,
    /// Signed for closed meshes (negative inside), unsigned magnitude otherwise.
    pub signed_distance: f64,
    /// Outward surface normal at the closest feature.
    pub normal: Vector3<f64>,
    pub triangle: usize,
}

/// Precomputed acceleration + pseudonormal data for distance queries in the
/// mesh's local frame.
pub struct MeshQuery {
    pub mesh: TriangleMesh,
    closed: bool,
    face_normals: Vec<Vector3<f64>>,
    vertex_normals: Vec<Vector3<f64>>,
    edge_normals: HashMap<(usize, usize), Vector3<f64>>,
    nodes: Vec<BvhNode>,
    order: Vec<usize>,
}

struct BvhNode {
    lo: Vector3<f64>,
    hi: Vector3<f64>,
    // leaf: range into `order`; inner: child indices
    left: usize,
    right: usize,
    start: usize,
    count: usize,
}

impl MeshQuery {
    pub fn new(mesh: TriangleMesh) -> Self {
        let closed = mesh.is_closed();
        let mut face_normals = Vec::with_capacity(mesh.triangles.len());
        for i in 0..mesh.triangles.len() {
            let [a, b, c] = mesh.triangle_vertices(i);
            face_normals.push((b - a).cross(&(c - a)).normalize());
        }
        // Angle-weighted vertex pseudonormals.
        let mut vertex_normals = vec![Vector3::zeros(); mesh.vertices.len()];
        for (ti, t) in mesh.triangles.iter().enumerate() {
            let vs = mesh.triangle_vertices(ti);
            for k in 0..3 {
                let a = vs[k];
                let b = vs[(k + 1) % 3];
                let c = vs[(k + 2) % 3];
                let u = (b - a).normalize();
                let v = (c - a).normalize();
                let angle = u.dot(&v).clamp(-1.0, 1.0).acos();
                vertex_normals[t[k]] += face_normals[ti] * angle;
            }
        }
        for n in &mut vertex_normals {
            if n.norm() > 1e-12 {
                *n = n.normalize();
            }
        }
        let mut edge_normals: HashMap<(usize, usize), Vector3<f64>> = HashMap::new();
        for (ti, t) in mesh.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                *edge_normals.entry(key).or_insert_with(Vector3::zeros) += face_normals[ti];
            }
        }
        for n in edge_normals.values_mut() {
            if n.norm() > 1e-12 {
                *n = n.normalize();
            }
        }

        // Median-split AABB tree over triangles.
        let mut order: Vec<usize> = (0..mesh.triangles.len()).collect();
        let centroids: Vec<Vector3<f64>> = (0..mesh.triangles.len())
            .map(|i| {
                let [a, b, c] = mesh.triangle_vertices(i);
                (a + b + c) / 3.0
            })
            .collect();
        let mut nodes = Vec::new();
        if !order.is_empty() {
            build_bvh(&mesh, &centroids, &mut order, 0, mesh.triangles.len(), &mut nodes);
        }

        Self {
            mesh,
            closed,
            face_normals,
            vertex_normals,
            edge_normals,
            nodes,
            order,
        }
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Closest surface point to `p` if within `max_dist` (unsigned).
    pub fn closest_within(&self, p: &Vector3<f64>, max_dist: f64) -> Option<SurfaceHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best_d2 = max_dist * max_dist;
        let mut best: Option<(Vector3<f64>, usize)> = None;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if aabb_dist2(p, &node.lo, &node.hi) > best_d2 {
                continue;
            }
            if node.count > 0 {
                for &ti in &self.order[node.start..node.start + node.count] {
                    let [a, b, c] = self.mesh.triangle_vertices(ti);
                    let cp = closest_point_on_triangle(p, &a, &b, &c);
                    let d2 = (p - cp).norm_squared();
                    if d2 < best_d2 || (best.is_none() && d2 <= best_d2) {
                        best_d2 = d2;
                        best = Some((cp, ti));
                    }
                }
            } else {
                stack.push(node.left);
                stack.push(node.right);
            }
        }
        let (cp, ti) = best?;
        let dist = best_d2.sqrt();
        let pseudo = self.pseudonormal_at(ti, &cp);
        let delta = p - cp;
        let (signed, normal) = if dist > 1e-12 {
            let dir = delta / dist;
            if self.closed {
                let sign = if delta.dot(&pseudo) >= 0.0 { 1.0 } else { -1.0 };
                (sign * dist, dir * sign)
            } else {
                // Open mesh: unsigned distance, normal oriented toward the query.
                (dist, dir)
            }
        } else {
            (0.0, pseudo)
        };
        Some(SurfaceHit {
            point: cp,
            signed_distance: signed,
            normal,
            triangle: ti,
        })
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        if !self.closed {
            return false;
        }
        match self.closest_within(p, f64::INFINITY) {
            Some(hit) => hit.signed_distance < 0.0,
            None => false,
        }
    }

    fn pseudonormal_at(&self, ti: usize, cp: &Vector3<f64>) -> Vector3<f64> {
        let t = self.mesh.triangles[ti];
        let [a, b, c] = self.mesh.triangle_vertices(ti);
        let (u, v, w) = barycentric(cp, &a, &b, &c);
        let eps = 1e-9;
        let verts = [t[0], t[1], t[2]];
        let bary = [u, v, w];
        let on_vertex = (0..3).find(|&k| bary[k] > 1.0 - eps);
        if let Some(k) = on_vertex {
            return self.vertex_normals[verts[k]];
        }
        let off_vertex = (0..3).find(|&k| bary[k] < eps);
        if let Some(k) = off_vertex {
            let (a, b) = (verts[(k + 1) % 3], verts[(k + 2) % 3]);
            let key = (a.min(b), a.max(b));
            if let Some(n) = self.edge_normals.get(&key) {
                return *n;
            }
        }
        self.face_normals[ti]
    }
}

fn build_bvh(
    mesh: &TriangleMesh,
    centroids: &[Vector3<f64>],
    order: &mut [usize],
    start: usize,
    _len_hint: usize,
    nodes: &mut Vec<BvhNode>,
) -> usize {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for &ti in order.iter() {
        let [a, b, c] = mesh.triangle_vertices(ti);
        for v in [a, b, c] {
            lo = lo.inf(&v);
            hi = hi.sup(&v);
        }
    }
    let idx = nodes.len();
    nodes.push(BvhNode {
        lo,
        hi,
        left: 0,
        right: 0,
        start,
        count: 0,
    });
    if order.len() <= 8 {
        nodes[idx].count = order.len();
        return idx;
    }
    let extent = hi - lo;
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };
    order.sort_by(|&a, &b| centroids[a][axis].partial_cmp(&centroids[b][axis]).unwrap());
    let len = order.len();
    let mid = len / 2;
    let (left_slice, right_slice) = order.split_at_mut(mid);
    let left = build_bvh(mesh, centroids, left_slice, start, mid, nodes);
    let right = build_bvh(mesh, centroids, right_slice, start + mid, len - mid, nodes);
    nodes[idx].left = left;
    nodes[idx].right = right;
    idx
}

fn aabb_dist2(p: &Vector3<f64>, lo: &Vector3<f64>, hi: &Vector3<f64>) -> f64 {
    let mut d2 = 0.0;
    for k in 0..3 {
        let v = p[k];
        if v < lo[k] {
            d2 += (lo[k] - v) * (lo[k] - v);
        } else if v > hi[k] {
            d2 += (v - hi[k]) * (v - hi[k]);
        }
    }
    d2
}

/// Ericson, Real-Time Collision Detection, 5.1.5.
pub fn closest_point_on_triangle(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> Vector3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

fn barycentric(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> (f64, f64, f64) {
    let v0 = b - a;
    let v1 = c - a;
    let v2 = p - a;
    let d00 = v0.dot(&v0);
    let d01 = v0.dot(&v1);
    let d11 = v1.dot(&v1);
    let d20 = v2.dot(&v0);
    let d21 = v2.dot(&v1);
    let denom = d00 * d11 - d01 * d01;
    if denom.abs() < 1e-18 {
        return (1.0, 0.0, 0.0);
    }
    let v = (d11 * d20 - d01 * d21) / denom;
    let w = (d00 * d21 - d01 * d20) / denom;
    (1.0 - v - w, v, w)
}
