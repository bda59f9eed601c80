//! Linear finite-element assembly on triangular meshes.
//!
//! The mass matrix is lumped (diagonal), which is what makes the precision
//! matrix of the SPDE prior sparse: `C^{-1}` stays diagonal. The stiffness
//! matrix is the standard piecewise-linear Laplacian; per triangle the entry
//! for vertices i, j is `(e_i . e_j) / (4 A)` where `e_i` is the edge vector
//! opposite vertex i. This form only uses edge vectors and the triangle area,
//! so it applies unchanged to flat triangles embedded in 3D (each triangle is
//! treated in its own plane).

use crate::mesh::TriMesh;
use crate::sparse::SparseSym;

/// Lumped mass matrix: `C_ii = (1/3) * sum of areas of triangles at vertex i`.
pub fn mass_matrix(mesh: &TriMesh) -> SparseSym {
    let mut diag = vec![0.0f64; mesh.n_vertices()];
    for tri in mesh.triangles() {
        let p = [
            mesh.vertices()[tri[0]],
            mesh.vertices()[tri[1]],
            mesh.vertices()[tri[2]],
        ];
        let area = crate::mesh::triangle_area(p);
        for &v in tri {
            diag[v] += area / 3.0;
        }
    }
    SparseSym::diag(&diag)
}

/// Stiffness matrix of the (negative weak) Laplacian.
pub fn stiffness_matrix(mesh: &TriMesh) -> SparseSym {
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(mesh.triangles().len() * 6);
    for tri in mesh.triangles() {
        let p = [
            mesh.vertices()[tri[0]],
            mesh.vertices()[tri[1]],
            mesh.vertices()[tri[2]],
        ];
        let area = crate::mesh::triangle_area(p);
        // Edge opposite vertex k.
        let e = [
            [p[2][0] - p[1][0], p[2][1] - p[1][1], p[2][2] - p[1][2]],
            [p[0][0] - p[2][0], p[0][1] - p[2][1], p[0][2] - p[2][2]],
            [p[1][0] - p[0][0], p[1][1] - p[0][1], p[1][2] - p[0][2]],
        ];
        for a in 0..3 {
            for b in a..3 {
                let dot = e[a][0] * e[b][0] + e[a][1] * e[b][1] + e[a][2] * e[b][2];
                let (i, j) = (tri[a].min(tri[b]), tri[a].max(tri[b]));
                triplets.push((i, j, dot / (4.0 * area)));
            }
        }
    }
    SparseSym::from_triplets(mesh.n_vertices(), triplets)
        .expect("stiffness assembly is symmetric by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{triangulate_lattice, Mask2d, TriMesh};
    use approx::assert_relative_eq;

    fn unit_right_triangle(scale: f64, shift: [f64; 2]) -> TriMesh {
        TriMesh::build(
            vec![
                [shift[0], shift[1], 0.0],
                [scale + shift[0], shift[1], 0.0],
                [shift[0], scale + shift[1], 0.0],
            ],
            vec![[0, 1, 2]],
            vec![true; 3],
        )
        .unwrap()
    }

    #[test]
    fn mass_unit_right_triangle() {
        let c = mass_matrix(&unit_right_triangle(1.0, [0.0, 0.0]));
        let d = c.diagonal();
        for i in 0..3 {
            assert_relative_eq!(d[i], 1.0 / 6.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn mass_unit_square_two_triangles() {
        let mesh = TriMesh::build(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [1.0, 1.0, 0.0],
                [0.0, 1.0, 0.0],
            ],
            vec![[0, 1, 2], [0, 2, 3]],
            vec![true; 4],
        )
        .unwrap();
        let c = mass_matrix(&mesh);
        let d = c.diagonal();
        // Shared-diagonal vertices 0 and 2 touch both triangles.
        assert_relative_eq!(d[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(d[2], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(d[1], 1.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(d[3], 1.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(d.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn mass_scales_quadratically() {
        let c1 = mass_matrix(&unit_right_triangle(1.0, [0.0, 0.0]));
        let c3 = mass_matrix(&unit_right_triangle(3.0, [0.0, 0.0]));
        for (a, b) in c1.diagonal().iter().zip(c3.diagonal()) {
            assert_relative_eq!(9.0 * a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn stiffness_unit_right_triangle() {
        let g = stiffness_matrix(&unit_right_triangle(1.0, [0.0, 0.0])).to_dense();
        let expect = nalgebra::DMatrix::from_row_slice(
            3,
            3,
            &[1.0, -0.5, -0.5, -0.5, 0.5, 0.0, -0.5, 0.0, 0.5],
        );
        assert_relative_eq!((g - expect).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn stiffness_translation_invariant() {
        let g0 = stiffness_matrix(&unit_right_triangle(1.0, [0.0, 0.0])).to_dense();
        let g1 = stiffness_matrix(&unit_right_triangle(1.0, [13.5, -2.25])).to_dense();
        assert_relative_eq!((g0 - g1).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn stiffness_annihilates_constants_and_is_psd() {
        let mut mask = Mask2d::filled(5, 7);
        mask.set(0, 0, false);
        mask.set(4, 6, false);
        let lat = triangulate_lattice(&mask, 7.0, 2).unwrap();
        let g = stiffness_matrix(&lat.mesh);
        let ones = vec![1.0; lat.mesh.n_vertices()];
        let gu = g.mul_vec(&ones);
        for v in gu {
            assert_relative_eq!(v, 0.0, epsilon = 1e-12);
        }
        let eig = g.to_dense().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&l| l > -1e-10));
    }

    #[test]
    fn mass_trace_equals_total_area() {
        let lat = triangulate_lattice(&Mask2d::filled(6, 9), 9.0, 2).unwrap();
        let c = mass_matrix(&lat.mesh);
        let trace: f64 = c.diagonal().iter().sum();
        assert_relative_eq!(trace, lat.mesh.total_area(), max_relative = 1e-10);
        assert!(c.diagonal().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn sparsity_is_edge_local() {
        let lat = triangulate_lattice(&Mask2d::filled(4, 4), 4.0, 0).unwrap();
        let g = stiffness_matrix(&lat.mesh);
        let edges = lat.mesh.edges();
        for &(i, j, _) in g.entries() {
            assert!(i == j || edges.binary_search(&(i, j)).is_ok());
        }
    }

    /// On uniformly refined meshes of a fixed region, C^{-1} G applied to
    /// samples of f(x,y) = x^2 + y^2 converges to -lap f = -4 away from the
    /// boundary. A smoothly distorted grid is used: on a perfectly regular
    /// lattice the discrete operator is already exact for quadratics.
    #[test]
    fn discrete_laplacian_converges() {
        let err_at = |n: usize| -> f64 {
            let warp = |x: f64, y: f64| -> [f64; 3] {
                [
                    x + 0.08 * (1.7 * y).sin(),
                    y + 0.08 * (1.3 * x).sin(),
                    0.0,
                ]
            };
            let h = 4.0 / n as f64;
            let mut vertices = Vec::new();
            for r in 0..=n {
                for c in 0..=n {
                    vertices.push(warp(c as f64 * h, r as f64 * h));
                }
            }
            let mut triangles = Vec::new();
            for r in 0..n {
                for c in 0..n {
                    let v = |rr: usize, cc: usize| rr * (n + 1) + cc;
                    triangles.push([v(r, c), v(r, c + 1), v(r + 1, c + 1)]);
                    triangles.push([v(r, c), v(r + 1, c + 1), v(r + 1, c)]);
                }
            }
            let nv = vertices.len();
            let mesh = TriMesh::build(vertices, triangles, vec![true; nv]).unwrap();
            let c = mass_matrix(&mesh);
            let g = stiffness_matrix(&mesh);
            let f: Vec<f64> = mesh
                .vertices()
                .iter()
                .map(|v| v[0] * v[0] + v[1] * v[1])
                .collect();
            let gf = g.mul_vec(&f);
            let cd = c.diagonal();
            let margin = n / 4;
            let mut max_err: f64 = 0.0;
            for r in margin..=(n - margin) {
                for cc in margin..=(n - margin) {
                    let idx = r * (n + 1) + cc;
                    max_err = max_err.max((gf[idx] / cd[idx] + 4.0).abs());
                }
            }
            max_err
        };
        let e1 = err_at(8);
        let e2 = err_at(16);
        assert!(e2 > 0.0);
        assert!(e1 / e2 > 2.0, "refinement ratio {} too small", e1 / e2);
    }
}
