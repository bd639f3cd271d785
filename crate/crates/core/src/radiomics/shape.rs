//! Shape descriptors from a marching-cubes surface of the mask.
//!
//! The surface is the 0.5 isosurface of the binary mask with vertices at edge
//! midpoints between voxel centers. Per-cube polygons are derived from the cube
//! faces: on each face the crossing points are joined so that inside corners are
//! cut off separately, which keeps neighboring cubes consistent and the mesh
//! closed and consistently oriented. Polygons with more than three vertices are
//! fanned around their centroid.

use std::collections::HashMap;
use std::sync::OnceLock;

use nalgebra::{Matrix3, SymmetricEigen};

use super::FeatureVector;
use crate::error::{Error, Result};
use crate::volume::BinaryMask;

pub const SHAPE_NAMES: [&str; 14] = [
    "MeshVolume",
    "VoxelVolume",
    "SurfaceArea",
    "SurfaceVolumeRatio",
    "Sphericity",
    "Maximum3DDiameter",
    "Maximum2DDiameterSlice",
    "Maximum2DDiameterColumn",
    "Maximum2DDiameterRow",
    "MajorAxisLength",
    "MinorAxisLength",
    "LeastAxisLength",
    "Elongation",
    "Flatness",
];

// corner id = x + 2y + 4z; each face listed counter-clockwise seen from outside the cube
const FACES: [[usize; 4]; 6] = [
    [0, 4, 6, 2],
    [1, 3, 7, 5],
    [0, 1, 5, 4],
    [2, 6, 7, 3],
    [0, 2, 3, 1],
    [4, 5, 7, 6],
];

fn cube_edges() -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(12);
    for a in 0..8 {
        for bit in [1, 2, 4] {
            if a & bit == 0 {
                edges.push((a, a | bit));
            }
        }
    }
    edges
}

type LoopTable = Vec<Vec<Vec<(usize, usize)>>>;

/// For each of the 256 corner configurations, the closed edge loops of its surface patch.
fn loop_table() -> &'static LoopTable {
    static TABLE: OnceLock<LoopTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let edges = cube_edges();
        let edge_id = |a: usize, b: usize| {
            let key = (a.min(b), a.max(b));
            edges.iter().position(|&e| e == key).unwrap()
        };
        (0..256usize)
            .map(|config| {
                let inside = |c: usize| config & (1 << c) != 0;
                let mut next = [usize::MAX; 12];
                for face in FACES {
                    for i in 0..4 {
                        let (a, b) = (face[i], face[(i + 1) % 4]);
                        if !(inside(a) && !inside(b)) {
                            continue;
                        }
                        // walk back over the inside run to its entry edge
                        let mut m = (i + 3) % 4;
                        while inside(face[m]) {
                            m = (m + 3) % 4;
                        }
                        let entry = edge_id(face[m], face[(m + 1) % 4]);
                        next[edge_id(a, b)] = entry;
                    }
                }
                let mut visited = [false; 12];
                let mut loops = Vec::new();
                for start in 0..12 {
                    if next[start] == usize::MAX || visited[start] {
                        continue;
                    }
                    let mut lp = Vec::new();
                    let mut e = start;
                    while !visited[e] {
                        visited[e] = true;
                        lp.push(edges[e]);
                        e = next[e];
                    }
                    loops.push(lp);
                }
                loops
            })
            .collect()
    })
}

/// Closed triangle mesh in millimetres, relative to the mask's bounding-box corner.
#[derive(Clone, Debug, Default)]
pub struct SurfaceMesh {
    /// Edge-midpoint vertices in doubled voxel units (`2 * index` along each axis).
    pub lattice_vertices: Vec<[i64; 3]>,
    pub triangles: Vec<[[f64; 3]; 3]>,
    pub spacing: [f64; 3],
}

impl SurfaceMesh {
    pub fn vertex_mm(&self, v: [i64; 3]) -> [f64; 3] {
        [
            v[0] as f64 * 0.5 * self.spacing[0],
            v[1] as f64 * 0.5 * self.spacing[1],
            v[2] as f64 * 0.5 * self.spacing[2],
        ]
    }

    pub fn area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|[a, b, c]| 0.5 * norm(cross(sub(*b, *a), sub(*c, *a))))
            .sum()
    }

    /// Enclosed volume by the divergence theorem.
    pub fn volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|[a, b, c]| dot(*a, cross(*b, *c)) / 6.0)
            .sum::<f64>()
            .abs()
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Marching-cubes surface of `mask` at level 0.5.
pub fn mesh(mask: &BinaryMask, spacing: [f64; 3]) -> Result<SurfaceMesh> {
    let (lo, hi) = mask.bounding_box().ok_or(Error::EmptyMask)?;
    let g = mask.geometry();
    let table = loop_table();
    let ext = [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1];
    // local box with a one-voxel empty border
    let local = |p: [i64; 3]| -> bool {
        if (0..3).any(|a| p[a] < 0 || p[a] >= ext[a] as i64) {
            return false;
        }
        mask.get(g.index(
            p[0] as usize + lo[0],
            p[1] as usize + lo[1],
            p[2] as usize + lo[2],
        ))
    };

    let mut out = SurfaceMesh {
        spacing,
        ..Default::default()
    };
    let mut seen: HashMap<[i64; 3], ()> = HashMap::new();
    let corner = |c: usize| [(c & 1) as i64, ((c >> 1) & 1) as i64, ((c >> 2) & 1) as i64];

    for z in -1..ext[2] as i64 {
        for y in -1..ext[1] as i64 {
            for x in -1..ext[0] as i64 {
                let mut config = 0usize;
                for c in 0..8 {
                    let o = corner(c);
                    if local([x + o[0], y + o[1], z + o[2]]) {
                        config |= 1 << c;
                    }
                }
                if config == 0 || config == 255 {
                    continue;
                }
                for lp in &table[config] {
                    let verts: Vec<[i64; 3]> = lp
                        .iter()
                        .map(|&(a, b)| {
                            let (ca, cb) = (corner(a), corner(b));
                            [
                                2 * x + ca[0] + cb[0],
                                2 * y + ca[1] + cb[1],
                                2 * z + ca[2] + cb[2],
                            ]
                        })
                        .collect();
                    for v in &verts {
                        if seen.insert(*v, ()).is_none() {
                            out.lattice_vertices.push(*v);
                        }
                    }
                    let mm: Vec<[f64; 3]> = verts.iter().map(|&v| out.vertex_mm(v)).collect();
                    if mm.len() == 3 {
                        out.triangles.push([mm[0], mm[1], mm[2]]);
                    } else {
                        let n = mm.len() as f64;
                        let mut c = [0.0; 3];
                        for v in &mm {
                            for a in 0..3 {
                                c[a] += v[a];
                            }
                        }
                        let c = [c[0] / n, c[1] / n, c[2] / n];
                        for i in 0..mm.len() {
                            out.triangles.push([c, mm[i], mm[(i + 1) % mm.len()]]);
                        }
                    }
                }
            }
        }
    }
    out.lattice_vertices.sort_unstable_by_key(|v| (v[2], v[1], v[0]));
    Ok(out)
}

/// Keeps, for every line parallel to `axis`, only its two end points.
fn line_extremes(points: &[[i64; 3]], axis: usize) -> Vec<[i64; 3]> {
    let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
    let mut ends: HashMap<(i64, i64), ([i64; 3], [i64; 3])> = HashMap::new();
    for &p in points {
        ends.entry((p[a1], p[a2]))
            .and_modify(|(lo, hi)| {
                if p[axis] < lo[axis] {
                    *lo = p;
                }
                if p[axis] > hi[axis] {
                    *hi = p;
                }
            })
            .or_insert((p, p));
    }
    let mut out: Vec<[i64; 3]> = ends
        .into_values()
        .flat_map(|(lo, hi)| if lo == hi { vec![lo] } else { vec![lo, hi] })
        .collect();
    out.sort_unstable();
    out
}

fn max_pairwise(points: &[[i64; 3]], spacing: [f64; 3]) -> f64 {
    let half = [0.5 * spacing[0], 0.5 * spacing[1], 0.5 * spacing[2]];
    let mut best = 0.0f64;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            let d2: f64 = (0..3)
                .map(|a| ((p[a] - q[a]) as f64 * half[a]).powi(2))
                .sum();
            best = best.max(d2);
        }
    }
    best.sqrt()
}

/// Largest vertex distance, optionally restricted to pairs sharing a plane
/// perpendicular to `plane_axis`.
///
/// A point lying strictly between two others on a line is never the unique
/// farthest point from anything, so line interiors are discarded first.
pub(crate) fn max_diameter(vertices: &[[i64; 3]], spacing: [f64; 3], plane_axis: Option<usize>) -> f64 {
    match plane_axis {
        None => {
            let mut pts = line_extremes(vertices, 0);
            pts = line_extremes(&pts, 1);
            pts = line_extremes(&pts, 2);
            max_pairwise(&pts, spacing)
        }
        Some(axis) => {
            let mut planes: HashMap<i64, Vec<[i64; 3]>> = HashMap::new();
            for &v in vertices {
                planes.entry(v[axis]).or_default().push(v);
            }
            let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
            planes
                .values()
                .map(|pts| {
                    let pts = line_extremes(pts, a1);
                    let pts = line_extremes(&pts, a2);
                    max_pairwise(&pts, spacing)
                })
                .fold(0.0, f64::max)
        }
    }
}

pub fn shape_features(mask: &BinaryMask, spacing: [f64; 3]) -> Result<FeatureVector> {
    let surface = mesh(mask, spacing)?;
    let (lo, _) = mask.bounding_box().ok_or(Error::EmptyMask)?;
    let g = mask.geometry();

    let n = mask.count();
    let voxel_volume = n as f64 * spacing.iter().product::<f64>();
    let mesh_volume = surface.volume();
    let area = surface.area();
    let sphericity = (36.0 * std::f64::consts::PI * mesh_volume * mesh_volume).cbrt() / area;

    let v = &surface.lattice_vertices;
    let d3 = max_diameter(v, spacing, None);
    let d_slice = max_diameter(v, spacing, Some(2));
    let d_column = max_diameter(v, spacing, Some(1));
    let d_row = max_diameter(v, spacing, Some(0));

    // population covariance of voxel-center positions
    let pts: Vec<[f64; 3]> = mask
        .indices()
        .map(|i| {
            let c = g.coords(i);
            [
                (c[0] - lo[0]) as f64 * spacing[0],
                (c[1] - lo[1]) as f64 * spacing[1],
                (c[2] - lo[2]) as f64 * spacing[2],
            ]
        })
        .collect();
    let nf = n as f64;
    let mut mean = [0.0; 3];
    for p in &pts {
        for a in 0..3 {
            mean[a] += p[a];
        }
    }
    for m in &mut mean {
        *m /= nf;
    }
    let mut cov = Matrix3::<f64>::zeros();
    for p in &pts {
        for r in 0..3 {
            for c in 0..3 {
                cov[(r, c)] += (p[r] - mean[r]) * (p[c] - mean[c]);
            }
        }
    }
    cov /= nf;
    let mut eig: Vec<f64> = SymmetricEigen::new(cov)
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0))
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let (major, minor, least) = (eig[0], eig[1], eig[2]);
    let (elongation, flatness) = if major > 0.0 {
        ((minor / major).sqrt(), (least / major).sqrt())
    } else {
        (1.0, 1.0)
    };

    Ok(FeatureVector::from_static(
        &SHAPE_NAMES,
        vec![
            mesh_volume,
            voxel_volume,
            area,
            area / mesh_volume,
            sphericity,
            d3,
            d_slice,
            d_column,
            d_row,
            4.0 * major.sqrt(),
            4.0 * minor.sqrt(),
            4.0 * least.sqrt(),
            elongation,
            flatness,
        ],
    ))
}
