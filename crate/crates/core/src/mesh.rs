//! Triangle meshes: procedural builders, topology queries and area sampling.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Triangles below this area (m²) are rejected.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    /// Unit face normals, one per triangle (counter-clockwise winding).
    pub normals: Vec<Vec3>,
}

fn face_normal(a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    (b - a).cross(&(c - a))
}

impl TriangleMesh {
    /// Builds a mesh, checking indices and triangle areas.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mut normals = Vec::with_capacity(triangles.len());
        for (f, t) in triangles.iter().enumerate() {
            if t.iter().any(|&i| i >= vertices.len()) {
                return Err(Error::Parse(format!("triangle {f} indexes past {} vertices", vertices.len())));
            }
            let n = face_normal(&vertices[t[0]], &vertices[t[1]], &vertices[t[2]]);
            if 0.5 * n.norm() <= MIN_TRIANGLE_AREA {
                return Err(Error::Parse(format!("triangle {f} is degenerate")));
            }
            normals.push(n.normalize());
        }
        Ok(Self { vertices, triangles, normals })
    }

    /// Like [`TriangleMesh::new`] but silently drops degenerate triangles.
    pub fn new_filtered(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Self {
        let triangles: Vec<[usize; 3]> = triangles
            .into_iter()
            .filter(|t| {
                t[0] != t[1]
                    && t[1] != t[2]
                    && t[0] != t[2]
                    && 0.5 * face_normal(&vertices[t[0]], &vertices[t[1]], &vertices[t[2]]).norm() > MIN_TRIANGLE_AREA
            })
            .collect();
        Self::new(vertices, triangles).expect("filtered mesh is valid")
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let t = self.triangles[f];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn triangle_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        0.5 * face_normal(&a, &b, &c).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|f| self.triangle_area(f)).sum()
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Undirected edge → incident faces, keyed by sorted vertex pair.
    pub fn edge_faces(&self) -> BTreeMap<(usize, usize), Vec<usize>> {
        let mut map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (f, t) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                map.entry((a.min(b), a.max(b))).or_default().push(f);
            }
        }
        map
    }

    /// Every edge has exactly two incident triangles.
    pub fn is_watertight(&self) -> bool {
        !self.triangles.is_empty() && self.edge_faces().values().all(|f| f.len() == 2)
    }

    /// Face-connected components (faces sharing a vertex), as lists of face indices.
    pub fn connected_components(&self) -> Vec<Vec<usize>> {
        self.components_of(&(0..self.triangles.len()).collect::<Vec<_>>())
    }

    /// Components of a face subset, connected through shared vertices.
    pub fn components_of(&self, faces: &[usize]) -> Vec<Vec<usize>> {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for &f in faces {
            let t = self.triangles[f];
            for k in 1..3 {
                let (a, b) = (find(&mut parent, t[0]), find(&mut parent, t[k]));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &f in faces {
            let root = find(&mut parent, self.triangles[f][0]);
            groups.entry(root).or_default().push(f);
        }
        groups.into_values().collect()
    }

    /// Per-corner normals smoothed across edges flatter than `crease_deg`.
    pub fn corner_normals(&self, crease_deg: f64) -> Vec<[Vec3; 3]> {
        let cos_crease = crease_deg.to_radians().cos();
        let mut vertex_faces = vec![Vec::new(); self.vertices.len()];
        for (f, t) in self.triangles.iter().enumerate() {
            for &v in t {
                vertex_faces[v].push(f);
            }
        }
        self.triangles
            .iter()
            .enumerate()
            .map(|(f, t)| {
                let nf = self.normals[f];
                t.map(|v| {
                    let mut acc = Vec3::zeros();
                    for &g in &vertex_faces[v] {
                        if self.normals[g].dot(&nf) >= cos_crease {
                            acc += self.normals[g] * self.triangle_area(g);
                        }
                    }
                    acc.try_normalize(1e-15).unwrap_or(nf)
                })
            })
            .collect()
    }

    pub fn merge(parts: &[TriangleMesh]) -> TriangleMesh {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        let mut normals = Vec::new();
        for p in parts {
            let base = vertices.len();
            vertices.extend_from_slice(&p.vertices);
            triangles.extend(p.triangles.iter().map(|t| t.map(|i| i + base)));
            normals.extend_from_slice(&p.normals);
        }
        TriangleMesh { vertices, triangles, normals }
    }

    pub fn translated(mut self, offset: Vec3) -> Self {
        self.vertices.iter_mut().for_each(|v| *v += offset);
        self
    }

    /// Distance from `p` to the closest point on the surface (brute force).
    pub fn distance_to(&self, p: &Vec3) -> f64 {
        (0..self.triangles.len())
            .map(|f| {
                let [a, b, c] = self.triangle(f);
                (closest_point_on_triangle(p, &a, &b, &c) - p).norm()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision Detection).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
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
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Axis-aligned box centered at the origin, each face split into an `n × n` grid.
pub fn box_mesh(size: Vec3, n: usize) -> TriangleMesh {
    let n = n.max(1);
    let h = size * 0.5;
    let mut vertices = Vec::new();
    let mut index = HashMap::new();
    let mut triangles = Vec::new();
    // lattice points are shared between faces so the mesh is watertight
    let mut vid = |p: [i64; 3]| -> usize {
        *index.entry(p).or_insert_with(|| {
            vertices.push(Vec3::new(
                -h.x + size.x * p[0] as f64 / n as f64,
                -h.y + size.y * p[1] as f64 / n as f64,
                -h.z + size.z * p[2] as f64 / n as f64,
            ));
            vertices.len() - 1
        })
    };
    let ni = n as i64;
    for axis in 0..3 {
        for side in [0, ni] {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            for i in 0..ni {
                for j in 0..ni {
                    let corner = |di: i64, dj: i64| {
                        let mut p = [0i64; 3];
                        p[axis] = side;
                        p[u] = i + di;
                        p[v] = j + dj;
                        p
                    };
                    let q = [vid(corner(0, 0)), vid(corner(1, 0)), vid(corner(1, 1)), vid(corner(0, 1))];
                    if side == ni {
                        triangles.push([q[0], q[1], q[2]]);
                        triangles.push([q[0], q[2], q[3]]);
                    } else {
                        triangles.push([q[0], q[2], q[1]]);
                        triangles.push([q[0], q[3], q[2]]);
                    }
                }
            }
        }
    }
    TriangleMesh::new(vertices, triangles).expect("box mesh is valid")
}

/// Surface of revolution about +z. `profile` holds `(radius, z)` pairs from
/// bottom to top; end points with zero radius become poles.
pub fn lathe(profile: &[(f64, f64)], segments: usize) -> TriangleMesh {
    let mut vertices = Vec::new();
    let mut rows: Vec<Vec<usize>> = Vec::new();
    for &(r, z) in profile {
        if r <= 0.0 {
            vertices.push(Vec3::new(0.0, 0.0, z));
            rows.push(vec![vertices.len() - 1; segments]);
        } else {
            let row = (0..segments)
                .map(|s| {
                    let a = 2.0 * PI * s as f64 / segments as f64;
                    vertices.push(Vec3::new(r * a.cos(), r * a.sin(), z));
                    vertices.len() - 1
                })
                .collect();
            rows.push(row);
        }
    }
    let mut triangles = Vec::new();
    for w in rows.windows(2) {
        let (lo, hi) = (&w[0], &w[1]);
        for s in 0..segments {
            let t = (s + 1) % segments;
            let quad = [lo[s], lo[t], hi[t], hi[s]];
            if quad[0] != quad[1] {
                triangles.push([quad[0], quad[1], quad[2]]);
            }
            if quad[2] != quad[3] {
                triangles.push([quad[0], quad[2], quad[3]]);
            }
        }
    }
    TriangleMesh::new(vertices, triangles).expect("lathe profile is valid")
}

pub fn icosphere(center: Vec3, radius: f64, subdivisions: usize) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0], [1.0, t, 0.0], [-1.0, -t, 0.0], [1.0, -t, 0.0],
        [0.0, -1.0, t], [0.0, 1.0, t], [0.0, -1.0, -t], [0.0, 1.0, -t],
        [t, 0.0, -1.0], [t, 0.0, 1.0], [-t, 0.0, -1.0], [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vec3::new(p[0], p[1], p[2]).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vs: &mut Vec<Vec3>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                vs.push(((vs[a] + vs[b]) * 0.5).normalize());
                vs.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let ab = midpoint(f[0], f[1], &mut vertices);
            let bc = midpoint(f[1], f[2], &mut vertices);
            let ca = midpoint(f[2], f[0], &mut vertices);
            next.extend([[f[0], ab, ca], [f[1], bc, ab], [f[2], ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let vertices = vertices.into_iter().map(|v| center + v * radius).collect();
    TriangleMesh::new(vertices, faces).expect("icosphere is valid")
}

/// Latitude-longitude sphere; `rings` latitude bands, `segments` around.
pub fn uv_sphere(radius: f64, rings: usize, segments: usize) -> TriangleMesh {
    let profile: Vec<(f64, f64)> = (0..=rings)
        .map(|i| {
            let phi = PI * i as f64 / rings as f64;
            let r = radius * phi.sin();
            (if i == 0 || i == rings { 0.0 } else { r }, -radius * phi.cos())
        })
        .collect();
    lathe(&profile, segments)
}

/// Area-weighted random surface samples.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceSamples {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    /// Source triangle of each sample.
    pub faces: Vec<usize>,
}

pub fn sample_area_weighted<R: rand::Rng>(mesh: &TriangleMesh, n: usize, rng: &mut R) -> SurfaceSamples {
    let corner = mesh.corner_normals(45.0);
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for f in 0..mesh.triangles.len() {
        total += mesh.triangle_area(f);
        cumulative.push(total);
    }
    let mut out = SurfaceSamples { points: Vec::with_capacity(n), normals: Vec::with_capacity(n), faces: Vec::with_capacity(n) };
    for _ in 0..n {
        let x: f64 = rng.gen::<f64>() * total;
        let f = cumulative.partition_point(|&c| c <= x).min(cumulative.len() - 1);
        let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
        let s = r1.sqrt();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
        let [a, b, c] = mesh.triangle(f);
        out.points.push(a * wa + b * wb + c * wc);
        let cn = corner[f];
        out.normals.push((cn[0] * wa + cn[1] * wb + cn[2] * wc).try_normalize(1e-15).unwrap_or(mesh.normals[f]));
        out.faces.push(f);
    }
    out
}
