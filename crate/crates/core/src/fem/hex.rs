//! Tri-linear hexahedral element kernels on cubic cells.
//!
//! Element matrices are linear in the constitutive tensor, so they are
//! assembled from a fixed basis: `Ke(C) = sum_{I<=J} C_IJ * K_IJ`. The same
//! basis gives quadratic forms `ue^T K_IJ ue` for sensitivities and energies
//! without rebuilding matrices.

use crate::material::ElasticityTensor;
use nalgebra::{Matrix6, SMatrix};

/// Voigt index pairs (I <= J) in storage order.
pub const VOIGT_PAIRS: [(usize, usize); 21] = [
    (0, 0),
    (0, 1),
    (0, 2),
    (0, 3),
    (0, 4),
    (0, 5),
    (1, 1),
    (1, 2),
    (1, 3),
    (1, 4),
    (1, 5),
    (2, 2),
    (2, 3),
    (2, 4),
    (2, 5),
    (3, 3),
    (3, 4),
    (3, 5),
    (4, 4),
    (4, 5),
    (5, 5),
];

/// Symmetric 3x3 pairs (xx,yy,zz,yz,xz,xy) for the scalar (diffusion-like)
/// element, same ordering convention as the Voigt shear tail.
pub const SYM3_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];

/// Gauss-Legendre points/weights on [-1,1].
fn gauss_rule(n: usize) -> Vec<(f64, f64)> {
    match n {
        1 => vec![(0.0, 2.0)],
        2 => {
            let a = 1.0 / 3.0f64.sqrt();
            vec![(-a, 1.0), (a, 1.0)]
        }
        3 => {
            let a = (3.0f64 / 5.0).sqrt();
            vec![(-a, 5.0 / 9.0), (0.0, 8.0 / 9.0), (a, 5.0 / 9.0)]
        }
        _ => panic!("unsupported Gauss rule"),
    }
}

/// Reference gradients of the 8 tri-linear shape functions at (xi,eta,zeta).
/// Local node order a = dx + 2*dy + 4*dz with corner signs (2d-1).
pub fn shape_gradients(xi: f64, eta: f64, zeta: f64) -> [[f64; 3]; 8] {
    let mut out = [[0.0; 3]; 8];
    for dz in 0..2usize {
        for dy in 0..2usize {
            for dx in 0..2usize {
                let a = dx + 2 * dy + 4 * dz;
                let sx = 2.0 * dx as f64 - 1.0;
                let sy = 2.0 * dy as f64 - 1.0;
                let sz = 2.0 * dz as f64 - 1.0;
                out[a] = [
                    0.125 * sx * (1.0 + sy * eta) * (1.0 + sz * zeta),
                    0.125 * (1.0 + sx * xi) * sy * (1.0 + sz * zeta),
                    0.125 * (1.0 + sx * xi) * (1.0 + sy * eta) * sz,
                ];
            }
        }
    }
    out
}

/// Strain-displacement rows (Voigt 11,22,33,23,13,12, engineering shear) at a
/// quadrature point of a cube with edge `h`. Columns are node-major dofs
/// (3a + component).
fn b_rows(xi: f64, eta: f64, zeta: f64, h: f64) -> [[f64; 24]; 6] {
    let g = shape_gradients(xi, eta, zeta);
    let scale = 2.0 / h;
    let mut b = [[0.0; 24]; 6];
    for a in 0..8 {
        let (gx, gy, gz) = (g[a][0] * scale, g[a][1] * scale, g[a][2] * scale);
        b[0][3 * a] = gx;
        b[1][3 * a + 1] = gy;
        b[2][3 * a + 2] = gz;
        b[3][3 * a + 1] = gz;
        b[3][3 * a + 2] = gy;
        b[4][3 * a] = gz;
        b[4][3 * a + 2] = gx;
        b[5][3 * a] = gy;
        b[5][3 * a + 1] = gx;
    }
    b
}

/// Elastic stiffness basis for one element size: 21 symmetric 24x24 matrices.
#[derive(Clone)]
pub struct ElasticBasis {
    pub h: f64,
    pub k: Vec<[f64; 576]>,
}

impl ElasticBasis {
    pub fn new(h: f64) -> Self {
        Self::with_quadrature(h, 2)
    }

    /// Quadrature order is exposed for the higher-order verification oracle.
    pub fn with_quadrature(h: f64, npts: usize) -> Self {
        let rule = gauss_rule(npts);
        let mut k = vec![[0.0f64; 576]; 21];
        let detw = (h / 2.0).powi(3);
        for &(zeta, wz) in &rule {
            for &(eta, wy) in &rule {
                for &(xi, wx) in &rule {
                    let w = wx * wy * wz * detw;
                    let b = b_rows(xi, eta, zeta, h);
                    for (p, &(bi, bj)) in VOIGT_PAIRS.iter().enumerate() {
                        let kp = &mut k[p];
                        for r in 0..24 {
                            for c in 0..24 {
                                let mut v = b[bi][r] * b[bj][c];
                                if bi != bj {
                                    v += b[bj][r] * b[bi][c];
                                }
                                kp[24 * r + c] += w * v;
                            }
                        }
                    }
                }
            }
        }
        Self { h, k }
    }

    /// Dense element stiffness for a constitutive tensor.
    pub fn ke(&self, c: &Matrix6<f64>) -> [f64; 576] {
        let mut out = [0.0f64; 576];
        for (p, &(i, j)) in VOIGT_PAIRS.iter().enumerate() {
            let cij = c[(i, j)];
            if cij != 0.0 {
                let kp = &self.k[p];
                for (o, v) in out.iter_mut().zip(kp.iter()) {
                    *o += cij * v;
                }
            }
        }
        out
    }

    /// Quadratic forms `q_p = ue^T K_p ue` over the basis; contracting with a
    /// tensor (derivative) gives `ue^T Ke(dC) ue` cheaply.
    pub fn quad_forms(&self, ue: &[f64; 24]) -> [f64; 21] {
        let mut q = [0.0f64; 21];
        for (p, kp) in self.k.iter().enumerate() {
            let mut acc = 0.0;
            for r in 0..24 {
                let ur = ue[r];
                if ur != 0.0 {
                    let row = &kp[24 * r..24 * r + 24];
                    let mut dot = 0.0;
                    for c in 0..24 {
                        dot += row[c] * ue[c];
                    }
                    acc += ur * dot;
                }
            }
            q[p] = acc;
        }
        q
    }
}

/// `sum_{I<=J} dC_IJ q_IJ` — the quadratic form of `Ke(dC)`.
pub fn contract_quad_forms(dc: &Matrix6<f64>, q: &[f64; 21]) -> f64 {
    let mut acc = 0.0;
    for (p, &(i, j)) in VOIGT_PAIRS.iter().enumerate() {
        acc += dc[(i, j)] * q[p];
    }
    acc
}

/// 24x24 element stiffness with 2x2x2 Gauss quadrature.
pub fn element_stiffness(tensor: &ElasticityTensor, h: f64) -> SMatrix<f64, 24, 24> {
    element_stiffness_with_quadrature(tensor, h, 2)
}

/// Slow-path variant with a selectable quadrature order (1..=3).
pub fn element_stiffness_with_quadrature(
    tensor: &ElasticityTensor,
    h: f64,
    npts: usize,
) -> SMatrix<f64, 24, 24> {
    let ke = ElasticBasis::with_quadrature(h, npts).ke(tensor.voigt());
    SMatrix::<f64, 24, 24>::from_row_slice(&ke)
}

/// Strain (Voigt, engineering shear) at the element centroid.
pub fn centroid_strain(ue: &[f64; 24], h: f64) -> [f64; 6] {
    let b = b_rows(0.0, 0.0, 0.0, h);
    let mut eps = [0.0; 6];
    for (i, row) in b.iter().enumerate() {
        eps[i] = row.iter().zip(ue.iter()).map(|(a, b)| a * b).sum();
    }
    eps
}

/// Scalar (single dof per node) element basis: 6 symmetric 8x8 matrices so
/// that `Ke(A) = sum_p A_p K_p` for a symmetric 3x3 coefficient tensor in
/// (xx,yy,zz,yz,xz,xy) order.
#[derive(Clone)]
pub struct ScalarBasis {
    pub h: f64,
    pub k: [[f64; 64]; 6],
}

impl ScalarBasis {
    pub fn new(h: f64) -> Self {
        let rule = gauss_rule(2);
        let mut k = [[0.0f64; 64]; 6];
        let detw = (h / 2.0).powi(3);
        let scale = 2.0 / h;
        for &(zeta, wz) in &rule {
            for &(eta, wy) in &rule {
                for &(xi, wx) in &rule {
                    let w = wx * wy * wz * detw;
                    let g = shape_gradients(xi, eta, zeta);
                    for (p, &(ci, cj)) in SYM3_PAIRS.iter().enumerate() {
                        for a in 0..8 {
                            for b in 0..8 {
                                let mut v = g[a][ci] * scale * g[b][cj] * scale;
                                if ci != cj {
                                    v += g[a][cj] * scale * g[b][ci] * scale;
                                }
                                k[p][8 * a + b] += w * v;
                            }
                        }
                    }
                }
            }
        }
        Self { h, k }
    }

    pub fn ke(&self, a_sym: &[f64; 6]) -> [f64; 64] {
        let mut out = [0.0f64; 64];
        for p in 0..6 {
            if a_sym[p] != 0.0 {
                for (o, v) in out.iter_mut().zip(self.k[p].iter()) {
                    *o += a_sym[p] * v;
                }
            }
        }
        out
    }

    /// Consistent load for a constant vector source `f`: `be_a = int grad(N_a) . f`.
    pub fn grad_load(&self, f: &[f64; 3]) -> [f64; 8] {
        // For a cube, int grad(N_a) dV = V * grad(N_a)(center)
        let g = shape_gradients(0.0, 0.0, 0.0);
        let vol = self.h.powi(3);
        let scale = 2.0 / self.h;
        let mut out = [0.0; 8];
        for a in 0..8 {
            out[a] = vol * scale * (g[a][0] * f[0] + g[a][1] * f[1] + g[a][2] * f[2]);
        }
        out
    }

    /// Gradient of the tri-linear interpolant at the element centroid.
    pub fn centroid_gradient(&self, phi_e: &[f64; 8]) -> [f64; 3] {
        gradient_at(phi_e, self.h, 0.5, 0.5, 0.5)
    }
}

/// Gradient of the tri-linear interpolant at local coordinates in [0,1]^3.
pub fn gradient_at(phi_e: &[f64; 8], h: f64, x: f64, y: f64, z: f64) -> [f64; 3] {
    let g = shape_gradients(2.0 * x - 1.0, 2.0 * y - 1.0, 2.0 * z - 1.0);
    let scale = 2.0 / h;
    let mut out = [0.0; 3];
    for a in 0..8 {
        for c in 0..3 {
            out[c] += phi_e[a] * g[a][c] * scale;
        }
    }
    out
}

/// Tri-linear interpolation of nodal values at local coordinates in [0,1]^3.
#[inline]
pub fn interpolate_at(vals: &[f64; 8], x: f64, y: f64, z: f64) -> f64 {
    let mut out = 0.0;
    for dz in 0..2usize {
        for dy in 0..2usize {
            for dx in 0..2usize {
                let a = dx + 2 * dy + 4 * dz;
                let wx = if dx == 0 { 1.0 - x } else { x };
                let wy = if dy == 0 { 1.0 - y } else { y };
                let wz = if dz == 0 { 1.0 - z } else { z };
                out += vals[a] * wx * wy * wz;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::ElasticityTensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stiffness_symmetric_and_rigid_body_null_space() {
        let t = ElasticityTensor::isotropic(1.0, 0.3);
        let h = 0.7;
        let ke = element_stiffness(&t, h);
        assert!((ke - ke.transpose()).norm() < 1e-12);

        // rigid translations and rotations produce zero force
        let corners: Vec<[f64; 3]> = (0..8)
            .map(|a| {
                [
                    (a & 1) as f64 * h,
                    ((a >> 1) & 1) as f64 * h,
                    ((a >> 2) & 1) as f64 * h,
                ]
            })
            .collect();
        let mut modes: Vec<[f64; 24]> = Vec::new();
        for c in 0..3 {
            let mut m = [0.0; 24];
            for a in 0..8 {
                m[3 * a + c] = 1.0;
            }
            modes.push(m);
        }
        // rotations about the three axes
        for axis in 0..3 {
            let mut m = [0.0; 24];
            for (a, p) in corners.iter().enumerate() {
                let r = match axis {
                    0 => [0.0, -p[2], p[1]],
                    1 => [p[2], 0.0, -p[0]],
                    _ => [-p[1], p[0], 0.0],
                };
                m[3 * a] = r[0];
                m[3 * a + 1] = r[1];
                m[3 * a + 2] = r[2];
            }
            modes.push(m);
        }
        for m in &modes {
            let v = nalgebra::SVector::<f64, 24>::from_row_slice(m);
            assert!((ke * v).norm() < 1e-10 * v.norm().max(1.0));
        }
    }

    #[test]
    fn higher_order_quadrature_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let mut c = nalgebra::Matrix6::<f64>::zeros();
            for i in 0..6 {
                for j in 0..=i {
                    let v = rng.gen_range(-1.0..1.0);
                    c[(i, j)] = v;
                    c[(j, i)] = v;
                }
            }
            let t = ElasticityTensor::from_voigt(c);
            let k2 = element_stiffness_with_quadrature(&t, 0.31, 2);
            let k3 = element_stiffness_with_quadrature(&t, 0.31, 3);
            assert!((k2 - k3).norm() < 1e-10 * k3.norm());
        }
    }

    #[test]
    fn basis_reassembles_ke_and_quad_forms() {
        let t = ElasticityTensor::isotropic(2.5, 0.25);
        let h = 0.4;
        let basis = ElasticBasis::new(h);
        let ke_basis = basis.ke(t.voigt());
        let ke_direct = element_stiffness(&t, h);
        for r in 0..24 {
            for c in 0..24 {
                assert!((ke_basis[24 * r + c] - ke_direct[(r, c)]).abs() < 1e-12);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let ue: [f64; 24] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let q = basis.quad_forms(&ue);
        let direct: f64 = (0..24)
            .map(|r| ue[r] * (0..24).map(|c| ke_basis[24 * r + c] * ue[c]).sum::<f64>())
            .sum();
        assert!((contract_quad_forms(t.voigt(), &q) - direct).abs() < 1e-10);
    }

    #[test]
    fn scalar_basis_matches_laplacian() {
        // isotropic A = I: row sums vanish, matrix symmetric, energy of a
        // linear field phi = x equals volume
        let h = 0.5;
        let b = ScalarBasis::new(h);
        let ke = b.ke(&[1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        for a in 0..8 {
            let s: f64 = (0..8).map(|c| ke[8 * a + c]).sum();
            assert!(s.abs() < 1e-13);
        }
        let phi: [f64; 8] = std::array::from_fn(|a| ((a & 1) as f64) * h);
        let mut energy = 0.0;
        for i in 0..8 {
            for j in 0..8 {
                energy += phi[i] * ke[8 * i + j] * phi[j];
            }
        }
        assert!((energy - h.powi(3)).abs() < 1e-13);
        let g = b.centroid_gradient(&phi);
        assert!((g[0] - 1.0).abs() < 1e-13 && g[1].abs() < 1e-13 && g[2].abs() < 1e-13);
    }

    #[test]
    fn interpolation_reproduces_trilinear() {
        let vals: [f64; 8] = std::array::from_fn(|a| {
            let x = (a & 1) as f64;
            let y = ((a >> 1) & 1) as f64;
            let z = ((a >> 2) & 1) as f64;
            1.0 + 2.0 * x - y + 0.5 * z + x * y - 0.25 * x * y * z
        });
        let f = |x: f64, y: f64, z: f64| 1.0 + 2.0 * x - y + 0.5 * z + x * y - 0.25 * x * y * z;
        for &(x, y, z) in &[(0.2, 0.7, 0.4), (0.0, 0.0, 1.0), (0.5, 0.5, 0.5)] {
            assert!((interpolate_at(&vals, x, y, z) - f(x, y, z)).abs() < 1e-13);
        }
    }
}
