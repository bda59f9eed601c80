//! Triangular meshes over planar lattices and embedded surfaces.
//!
//! Meshes carry an `interior` flag per vertex: interior vertices are the data
//! locations, everything else is boundary extension added so that the
//! stochastic-PDE prior's artificial Neumann boundary sits away from the data.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("triangle {0} references vertex {1} outside 0..{2}")]
    IndexOutOfRange(usize, usize, usize),
    #[error("triangle {0} is degenerate (area {1})")]
    DegenerateTriangle(usize, f64),
    #[error("edge ({0}, {1}) is shared by more than two triangles")]
    NonManifoldEdge(usize, usize),
    #[error("interior mask has {0} entries for {1} vertices")]
    MaskLengthMismatch(usize, usize),
    #[error("mask contains no cells")]
    EmptyMask,
    #[error("vertex {0} belongs to no triangle")]
    IsolatedVertex(usize),
}

/// Validated triangular mesh.
#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<[f64; 3]>,
    triangles: Vec<[usize; 3]>,
    interior: Vec<bool>,
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

pub(crate) fn triangle_area(p: [[f64; 3]; 3]) -> f64 {
    0.5 * norm(cross(sub(p[1], p[0]), sub(p[2], p[0])))
}

impl TriMesh {
    /// Validates and constructs a mesh. Rejects out-of-range indices,
    /// degenerate (zero-area) triangles, edges shared by more than two
    /// triangles, and vertices that belong to no triangle.
    pub fn build(
        vertices: Vec<[f64; 3]>,
        triangles: Vec<[usize; 3]>,
        interior: Vec<bool>,
    ) -> Result<TriMesh, MeshError> {
        let nv = vertices.len();
        if interior.len() != nv {
            return Err(MeshError::MaskLengthMismatch(interior.len(), nv));
        }
        let mut used = vec![false; nv];
        let mut edges: Vec<(usize, usize)> = Vec::with_capacity(triangles.len() * 3);
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= nv {
                    return Err(MeshError::IndexOutOfRange(t, v, nv));
                }
                used[v] = true;
            }
            let p = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
            let area = triangle_area(p);
            let max_edge = norm(sub(p[1], p[0]))
                .max(norm(sub(p[2], p[1])))
                .max(norm(sub(p[0], p[2])));
            if !(area > 1e-12 * max_edge * max_edge) {
                return Err(MeshError::DegenerateTriangle(t, area));
            }
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                edges.push((a.min(b), a.max(b)));
            }
        }
        edges.sort_unstable();
        let mut k = 0;
        while k < edges.len() {
            let mut k2 = k + 1;
            while k2 < edges.len() && edges[k2] == edges[k] {
                k2 += 1;
            }
            if k2 - k > 2 {
                return Err(MeshError::NonManifoldEdge(edges[k].0, edges[k].1));
            }
            k = k2;
        }
        if let Some(v) = used.iter().position(|&u| !u) {
            return Err(MeshError::IsolatedVertex(v));
        }
        Ok(TriMesh {
            vertices,
            triangles,
            interior,
        })
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn interior_mask(&self) -> &[bool] {
        &self.interior
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_interior(&self) -> usize {
        self.interior.iter().filter(|&&b| b).count()
    }

    /// Vertex indices of interior (data) locations, in vertex order.
    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.n_vertices()).filter(|&v| self.interior[v]).collect()
    }

    pub fn total_area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| triangle_area([self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]))
            .sum()
    }

    /// Undirected edge list (deduplicated, sorted).
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| {
                [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])]
                    .into_iter()
                    .map(|(a, b)| (a.min(b), a.max(b)))
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }
}

/// Binary 2D mask over a row-major lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask2d {
    pub rows: usize,
    pub cols: usize,
    data: Vec<bool>,
}

impl Mask2d {
    pub fn new(rows: usize, cols: usize, data: Vec<bool>) -> Mask2d {
        assert_eq!(data.len(), rows * cols);
        Mask2d { rows, cols, data }
    }

    pub fn filled(rows: usize, cols: usize) -> Mask2d {
        Mask2d::new(rows, cols, vec![true; rows * cols])
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.data[r * self.cols + c] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Parses lines of `0`/`1` characters (whitespace ignored).
    pub fn parse(text: &str) -> Option<Mask2d> {
        let rows: Vec<Vec<bool>> = text
            .lines()
            .map(|l| l.trim())
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.chars()
                    .filter(|c| !c.is_whitespace())
                    .map(|c| c == '1')
                    .collect()
            })
            .collect();
        let nrows = rows.len();
        if nrows == 0 {
            return None;
        }
        let ncols = rows[0].len();
        if rows.iter().any(|r| r.len() != ncols) {
            return None;
        }
        Some(Mask2d::new(nrows, ncols, rows.concat()))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity((self.cols + 1) * self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                s.push(if self.get(r, c) { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }

    /// Row-major (row, col) coordinates of true cells.
    pub fn true_cells(&self) -> Vec<(usize, usize)> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (r, c)))
            .filter(|&(r, c)| self.get(r, c))
            .collect()
    }
}

/// A lattice-derived mesh with the bookkeeping needed to map data columns
/// (row-major masked cells) to mesh vertices.
#[derive(Debug, Clone)]
pub struct LatticeMesh {
    pub mesh: TriMesh,
    pub mask: Mask2d,
    /// Cell spacing in mm.
    pub spacing: f64,
    /// For the v-th masked cell (row-major), the mesh vertex index.
    pub data_vertices: Vec<usize>,
}

/// Triangulates a binary lattice mask.
///
/// Interior vertices sit at masked cell centers with spacing
/// `fov / max(rows, cols)`. With `boundary_layers == 0` only masked cells are
/// meshed: each 2x2 block of masked cells becomes two triangles split along
/// the lower-left to upper-right diagonal, and blocks with exactly three
/// masked cells become one triangle. With `boundary_layers >= 1`, the fine
/// lattice is extended over the mask's bounding box plus one cell (extension
/// vertices are non-interior), and each layer adds a surrounding rectangular
/// ring whose vertex spacing doubles over the previous layer, stitched to the
/// previous boundary with a triangle fan.
pub fn triangulate_lattice(
    mask: &Mask2d,
    fov: f64,
    boundary_layers: usize,
) -> Result<LatticeMesh, MeshError> {
    assert!(fov > 0.0, "fov must be positive");
    if mask.count() == 0 {
        return Err(MeshError::EmptyMask);
    }
    let h = fov / mask.rows.max(mask.cols) as f64;

    // Cell region to mesh at fine resolution.
    let cells = mask.true_cells();
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0usize, usize::MAX, 0usize);
    for &(r, c) in &cells {
        r0 = r0.min(r);
        r1 = r1.max(r);
        c0 = c0.min(c);
        c1 = c1.max(c);
    }
    // With rings, pad the bounding box by one fine cell (indices may go one
    // below zero, so work in signed cell coordinates).
    let pad: i64 = if boundary_layers > 0 { 1 } else { 0 };
    let (fr0, fr1) = (r0 as i64 - pad, r1 as i64 + pad);
    let (fc0, fc1) = (c0 as i64 - pad, c1 as i64 + pad);

    let center_of = |r: i64, c: i64| -> [f64; 3] { [(c as f64 + 0.5) * h, (r as f64 + 0.5) * h, 0.0] };

    let fine_present = |r: i64, c: i64| -> bool {
        if boundary_layers > 0 {
            r >= fr0 && r <= fr1 && c >= fc0 && c <= fc1
        } else {
            r >= 0 && c >= 0 && (r as usize) < mask.rows && (c as usize) < mask.cols
                && mask.get(r as usize, c as usize)
        }
    };

    // Fine vertices in row-major order over the fine region.
    let mut vertex_id = std::collections::HashMap::new();
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut interior: Vec<bool> = Vec::new();
    let mut data_vertices = Vec::with_capacity(cells.len());
    for r in fr0..=fr1 {
        for c in fc0..=fc1 {
            if fine_present(r, c) {
                let id = vertices.len();
                vertex_id.insert((r, c), id);
                vertices.push(center_of(r, c));
                let is_data = r >= 0
                    && c >= 0
                    && (r as usize) < mask.rows
                    && (c as usize) < mask.cols
                    && mask.get(r as usize, c as usize);
                interior.push(is_data);
                if is_data {
                    data_vertices.push(id);
                }
            }
        }
    }

    // Fine triangulation over 2x2 blocks.
    let mut triangles: Vec<[usize; 3]> = Vec::new();
    for r in fr0..fr1 {
        for c in fc0..fc1 {
            let ll = fine_present(r, c).then(|| vertex_id[&(r, c)]);
            let lr = fine_present(r, c + 1).then(|| vertex_id[&(r, c + 1)]);
            let ul = fine_present(r + 1, c).then(|| vertex_id[&(r + 1, c)]);
            let ur = fine_present(r + 1, c + 1).then(|| vertex_id[&(r + 1, c + 1)]);
            match (ll, lr, ur, ul) {
                (Some(a), Some(b), Some(d), Some(e)) => {
                    triangles.push([a, b, d]);
                    triangles.push([a, d, e]);
                }
                (Some(a), Some(b), Some(d), None) => triangles.push([a, b, d]),
                (Some(a), Some(b), None, Some(e)) => triangles.push([a, b, e]),
                (Some(a), None, Some(d), Some(e)) => triangles.push([a, d, e]),
                (None, Some(b), Some(d), Some(e)) => triangles.push([b, d, e]),
                _ => {}
            }
        }
    }

    // Boundary rings. The inner polygon of the first ring is the fine
    // rectangle's perimeter; each subsequent ring doubles the spacing.
    if boundary_layers > 0 {
        let (xmin, xmax) = ((fc0 as f64 + 0.5) * h, (fc1 as f64 + 0.5) * h);
        let (ymin, ymax) = ((fr0 as f64 + 0.5) * h, (fr1 as f64 + 0.5) * h);
        let cx = 0.5 * (xmin + xmax);
        let cy = 0.5 * (ymin + ymax);

        // Fine perimeter vertices, counter-clockwise.
        let mut inner: Vec<usize> = Vec::new();
        for c in fc0..=fc1 {
            inner.push(vertex_id[&(fr0, c)]);
        }
        for r in (fr0 + 1)..=fr1 {
            inner.push(vertex_id[&(r, fc1)]);
        }
        for c in (fc0..fc1).rev() {
            inner.push(vertex_id[&(fr1, c)]);
        }
        for r in ((fr0 + 1)..fr1).rev() {
            inner.push(vertex_id[&(r, fc0)]);
        }

        let mut half_w = 0.5 * (xmax - xmin);
        let mut half_h = 0.5 * (ymax - ymin);
        for layer in 1..=boundary_layers {
            let spacing = h * (1 << layer) as f64;
            half_w += spacing;
            half_h += spacing;
            // Ring rectangle with per-side uniform subdivision.
            let nx = ((2.0 * half_w / spacing).ceil() as usize).max(1);
            let ny = ((2.0 * half_h / spacing).ceil() as usize).max(1);
            let mut ring: Vec<usize> = Vec::with_capacity(2 * (nx + ny));
            let mut push_ring = |x: f64, y: f64, vertices: &mut Vec<[f64; 3]>, interior: &mut Vec<bool>| -> usize {
                let id = vertices.len();
                vertices.push([x, y, 0.0]);
                interior.push(false);
                id
            };
            for k in 0..nx {
                let x = cx - half_w + 2.0 * half_w * k as f64 / nx as f64;
                ring.push(push_ring(x, cy - half_h, &mut vertices, &mut interior));
            }
            for k in 0..ny {
                let y = cy - half_h + 2.0 * half_h * k as f64 / ny as f64;
                ring.push(push_ring(cx + half_w, y, &mut vertices, &mut interior));
            }
            for k in 0..nx {
                let x = cx + half_w - 2.0 * half_w * k as f64 / nx as f64;
                ring.push(push_ring(x, cy + half_h, &mut vertices, &mut interior));
            }
            for k in 0..ny {
                let y = cy + half_h - 2.0 * half_h * k as f64 / ny as f64;
                ring.push(push_ring(cx - half_w, y, &mut vertices, &mut interior));
            }

            stitch_annulus(&vertices, (cx, cy), &inner, &ring, &mut triangles);
            inner = ring;
        }
    }

    let mesh = TriMesh::build(vertices, triangles, interior)?;
    Ok(LatticeMesh {
        mesh,
        mask: mask.clone(),
        spacing: h,
        data_vertices,
    })
}

/// Triangulates the annulus between two nested polygons that are both
/// star-shaped around `center`, by an angular two-pointer sweep.
fn stitch_annulus(
    vertices: &[[f64; 3]],
    center: (f64, f64),
    inner: &[usize],
    outer: &[usize],
    triangles: &mut Vec<[usize; 3]>,
) {
    let angle = |v: usize| -> f64 {
        let a = (vertices[v][1] - center.1).atan2(vertices[v][0] - center.0);
        if a < 0.0 {
            a + std::f64::consts::TAU
        } else {
            a
        }
    };
    let order_from_min = |poly: &[usize]| -> Vec<usize> {
        let start = (0..poly.len())
            .min_by(|&a, &b| angle(poly[a]).partial_cmp(&angle(poly[b])).unwrap())
            .unwrap();
        (0..poly.len()).map(|k| poly[(start + k) % poly.len()]).collect()
    };
    let inner = order_from_min(inner);
    let outer = order_from_min(outer);
    let unwrapped = |poly: &[usize], k: usize| -> f64 {
        // angle of the k-th step around the polygon, unwrapped past 2*pi
        let a = angle(poly[k % poly.len()]);
        if k >= poly.len() {
            a + std::f64::consts::TAU
        } else {
            a
        }
    };

    let (ni, no) = (inner.len(), outer.len());
    let (mut i, mut j) = (0usize, 0usize);
    while i < ni || j < no {
        let next_inner = unwrapped(&inner, i + 1);
        let next_outer = unwrapped(&outer, j + 1);
        let advance_inner = i < ni && (j >= no || next_inner <= next_outer);
        if advance_inner {
            triangles.push([inner[i % ni], outer[j % no], inner[(i + 1) % ni]]);
            i += 1;
        } else {
            triangles.push([inner[i % ni], outer[j % no], outer[(j + 1) % no]]);
            j += 1;
        }
    }
}
