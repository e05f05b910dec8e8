//! Mapping fields and implicit-geometry projection.
//!
//! Combed frames and widths are upsampled to an intermediate mesh, one scalar
//! mapping field per layer is solved so its gradient follows the layer
//! normal, and the periodic implicit description is sampled onto a fine
//! voxel grid with a prescribed average unit-cell spacing.

use crate::combing::CombedField;
use crate::error::Result;
use crate::fem::hex::{gradient_at, interpolate_at, shape_gradients};
use crate::fem::{MgSolver, MgcgConfig, ScalarLevel};
use crate::grid::Grid3;
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use std::sync::Arc;

/// Combed data resampled onto the intermediate mesh (element-centered).
#[derive(Debug, Clone)]
pub struct IntermediateField {
    pub grid: Grid3,
    pub frames: Vec<Matrix3<f64>>,
    pub widths: Vec<[f64; 3]>,
    pub rho: Vec<f64>,
}

/// Tri-linear interpolation on an element-center lattice with clamped
/// (constant) extension outside the hull of centers.
struct CenterLattice<'a> {
    grid: &'a Grid3,
}

impl<'a> CenterLattice<'a> {
    /// Base element index and local weight per axis for a physical point.
    fn locate(&self, x: [f64; 3]) -> ([usize; 3], [f64; 3]) {
        let mut base = [0usize; 3];
        let mut loc = [0.0f64; 3];
        let dims = [self.grid.nx, self.grid.ny, self.grid.nz];
        for c in 0..3 {
            let p = x[c] / self.grid.h - 0.5;
            let clamped = p.clamp(0.0, (dims[c] - 1) as f64);
            let b = (clamped.floor() as usize).min(dims[c].saturating_sub(2));
            base[c] = b;
            loc[c] = if dims[c] > 1 {
                (clamped - b as f64).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
        (base, loc)
    }

    fn gather<T: Copy, F: Fn(usize) -> T>(&self, base: [usize; 3], get: F) -> [T; 8] {
        std::array::from_fn(|a| {
            let dx = a & 1;
            let dy = (a >> 1) & 1;
            let dz = (a >> 2) & 1;
            let i = (base[0] + dx).min(self.grid.nx - 1);
            let j = (base[1] + dy).min(self.grid.ny - 1);
            let k = (base[2] + dz).min(self.grid.nz - 1);
            get(self.grid.elem_index(i, j, k))
        })
    }
}

/// Nearest orthogonal frame with positive determinant (polar-style
/// correction via SVD).
fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = nalgebra::SVD::new(*m, true, true);
    let u = svd.u.expect("svd with u");
    let vt = svd.v_t.expect("svd with v_t");
    let d = (u * vt).determinant();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum()));
    u * fix * vt
}

/// Tri-linear upsampling of the combed field onto a mesh refined by
/// `factor` per axis; interpolated frames are re-orthonormalized.
pub fn upsample(combed: &CombedField, rho: &[f64], factor: usize) -> IntermediateField {
    let coarse = &combed.grid;
    let fine = coarse.refined(factor);
    let lat = CenterLattice { grid: coarse };
    let n = fine.num_elements();
    let mut frames = vec![Matrix3::<f64>::identity(); n];
    let mut widths = vec![[0.0f64; 3]; n];
    let mut rho_out = vec![0.0f64; n];
    frames
        .par_iter_mut()
        .zip(widths.par_iter_mut())
        .zip(rho_out.par_iter_mut())
        .enumerate()
        .for_each(|(e, ((fr, w), r))| {
            let c = fine.elem_center(e);
            let (base, loc) = lat.locate(c);
            let wts = trilinear_weights(loc);
            let fvals = lat.gather(base, |ce| combed.frames[ce]);
            let wvals = lat.gather(base, |ce| combed.widths[ce]);
            let rvals = lat.gather(base, |ce| rho[ce]);
            let mut m = Matrix3::<f64>::zeros();
            let mut wacc = [0.0f64; 3];
            let mut racc = 0.0;
            for a in 0..8 {
                m += fvals[a] * wts[a];
                for i in 0..3 {
                    wacc[i] += wvals[a][i] * wts[a];
                }
                racc += rvals[a] * wts[a];
            }
            *fr = nearest_rotation(&m);
            *w = std::array::from_fn(|i| wacc[i].clamp(0.0, 1.0));
            *r = racc.clamp(0.0, 1.0);
        });
    IntermediateField {
        grid: fine,
        frames,
        widths,
        rho: rho_out,
    }
}

fn trilinear_weights(loc: [f64; 3]) -> [f64; 8] {
    std::array::from_fn(|a| {
        let wx = if a & 1 == 0 { 1.0 - loc[0] } else { loc[0] };
        let wy = if (a >> 1) & 1 == 0 { 1.0 - loc[1] } else { loc[1] };
        let wz = if (a >> 2) & 1 == 0 { 1.0 - loc[2] } else { loc[2] };
        wx * wy * wz
    })
}

/// Domain split per layer: thin (width below cutoff), solid (density above
/// cutoff) and the active region where the mapping must be accurate.
#[derive(Debug, Clone)]
pub struct ActiveMask {
    pub active: [Vec<bool>; 3],
    pub thin: [Vec<bool>; 3],
    pub solid: Vec<bool>,
}

pub fn active_domain(inter: &IntermediateField) -> ActiveMask {
    let n = inter.grid.num_elements();
    let solid: Vec<bool> = (0..n).map(|e| inter.rho[e] > 0.99).collect();
    let thin: [Vec<bool>; 3] =
        std::array::from_fn(|i| (0..n).map(|e| inter.widths[e][i] < 0.01).collect());
    let active: [Vec<bool>; 3] = std::array::from_fn(|i| {
        (0..n)
            .map(|e| inter.widths[e][i] > 0.01 && inter.rho[e] < 0.99)
            .collect()
    });
    ActiveMask {
        active,
        thin,
        solid,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MappingConfig {
    /// Quadratic penalty on the tangential gradient components.
    pub gamma_phi: f64,
    pub solver: MgcgConfig,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            gamma_phi: 100.0,
            solver: MgcgConfig::default(),
        }
    }
}

/// Objective/constraint weights of one element for a layer, following the
/// printed case order: thin, then solid, then active.
fn alpha_weights(thin: bool, solid: bool) -> (f64, f64) {
    if thin {
        (0.01, 0.0)
    } else if solid {
        (0.1, 0.0)
    } else {
        (1.0, 1.0)
    }
}

/// Solve the least-squares mapping problem for one layer: the gradient of
/// the nodal field follows the layer normal in the active domain, with the
/// tangential components suppressed by a quadratic penalty. The constant
/// null space is pinned at node 0.
pub fn solve_mapping(
    inter: &IntermediateField,
    mask: &ActiveMask,
    layer: usize,
    cfg: &MappingConfig,
) -> Result<Vec<f64>> {
    let grid = &inter.grid;
    let n = grid.num_elements();
    let (t1_idx, t2_idx) = match layer {
        0 => (1, 2),
        1 => (0, 2),
        2 => (0, 1),
        _ => panic!("layer index out of range"),
    };
    let tensors: Vec<[f64; 6]> = (0..n)
        .into_par_iter()
        .map(|e| {
            let (a1, a2) = alpha_weights(mask.thin[layer][e], mask.solid[e]);
            let t1 = inter.frames[e].column(t1_idx);
            let t2 = inter.frames[e].column(t2_idx);
            let mut a = Matrix3::<f64>::identity() * a1;
            if a2 > 0.0 {
                a += (t1 * t1.transpose() + t2 * t2.transpose()) * (cfg.gamma_phi * a2);
            }
            [a[(0, 0)], a[(1, 1)], a[(2, 2)], a[(1, 2)], a[(0, 2)], a[(0, 1)]]
        })
        .collect();

    let mut fixed = vec![false; grid.num_nodes()];
    fixed[0] = true;

    // rhs: int alpha1 * n_layer . grad(v) per element
    let mut rhs = vec![0.0f64; grid.num_nodes()];
    let g0 = shape_gradients(0.0, 0.0, 0.0);
    let vol = grid.elem_volume();
    let scale = 2.0 / grid.h;
    for e in 0..n {
        let (a1, _) = alpha_weights(mask.thin[layer][e], mask.solid[e]);
        let nvec = inter.frames[e].column(layer);
        let nodes = grid.elem_nodes(e);
        for (a, &node) in nodes.iter().enumerate() {
            if fixed[node] {
                continue;
            }
            let gn = vol * scale * (g0[a][0] * nvec[0] + g0[a][1] * nvec[1] + g0[a][2] * nvec[2]);
            rhs[node] += a1 * gn;
        }
    }

    let op = ScalarLevel::from_tensors(grid, tensors, Arc::new(fixed));
    let mut solver = MgSolver::new(Box::new(op), cfg.solver);
    let mut phi = vec![0.0; grid.num_nodes()];
    solver.solve(&rhs, &mut phi)?;
    Ok(phi)
}

/// Gauss quadrature of volume and gradient-norm over the active domain,
/// yielding the periodicity scaling `P = (2 pi / eps) * (V / int ||grad||)`.
pub fn periodicity_scale(grid: &Grid3, phi: &[f64], active: &[bool], epsilon: f64) -> f64 {
    assert!(epsilon > 0.0);
    let g = 0.5 - 0.5 / 3.0f64.sqrt();
    let pts = [g, 1.0 - g];
    let (vol_sum, grad_sum) = (0..grid.num_elements())
        .into_par_iter()
        .filter(|&e| active[e])
        .map(|e| {
            let nodes = grid.elem_nodes(e);
            let pe: [f64; 8] = std::array::from_fn(|a| phi[nodes[a]]);
            let w = grid.elem_volume() / 8.0;
            let mut acc = 0.0;
            for &z in &pts {
                for &y in &pts {
                    for &x in &pts {
                        let gr = gradient_at(&pe, grid.h, x, y, z);
                        acc += w * (gr[0] * gr[0] + gr[1] * gr[1] + gr[2] * gr[2]).sqrt();
                    }
                }
            }
            (grid.elem_volume(), acc)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    if grad_sum == 0.0 {
        return 0.0;
    }
    (2.0 * std::f64::consts::PI / epsilon) * (vol_sum / grad_sum)
}

/// Periodic sawtooth with period 2 pi mapping onto [-1, 1): `S(t) = t/pi` on
/// `[-pi, pi)`.
pub fn sawtooth(t: f64) -> f64 {
    use std::f64::consts::PI;
    let wrapped = (t + PI).rem_euclid(2.0 * PI) - PI;
    wrapped / PI
}

/// Binary voxel design on the fine mesh.
#[derive(Debug, Clone)]
pub struct FineVoxelGrid {
    pub grid: Grid3,
    /// 0 = void, 1 = solid, per element (voxel)
    pub data: Vec<u8>,
}

impl FineVoxelGrid {
    pub fn empty(grid: Grid3) -> Self {
        let n = grid.num_elements();
        Self {
            grid,
            data: vec![0u8; n],
        }
    }

    pub fn solid_fraction(&self) -> f64 {
        self.data.iter().map(|&v| v as usize).sum::<usize>() as f64 / self.data.len() as f64
    }
}

/// Node-averaged values from an element field (each node averages its
/// adjacent elements), giving a conforming tri-linear interpolant.
pub fn element_to_nodal(grid: &Grid3, elem: &[f64]) -> Vec<f64> {
    assert_eq!(elem.len(), grid.num_elements());
    let mut acc = vec![0.0f64; grid.num_nodes()];
    let mut cnt = vec![0u32; grid.num_nodes()];
    for e in 0..grid.num_elements() {
        for node in grid.elem_nodes(e) {
            acc[node] += elem[e];
            cnt[node] += 1;
        }
    }
    for (a, c) in acc.iter_mut().zip(cnt.iter()) {
        *a /= *c as f64;
    }
    acc
}

/// Locate a physical point in the grid, returning the element and local
/// coordinates in [0,1]^3 (points outside are clamped).
#[inline]
pub fn locate(grid: &Grid3, x: [f64; 3]) -> (usize, [f64; 3]) {
    let dims = [grid.nx, grid.ny, grid.nz];
    let mut idx = [0usize; 3];
    let mut loc = [0.0f64; 3];
    for c in 0..3 {
        let p = (x[c] / grid.h).clamp(0.0, dims[c] as f64 - 1e-12);
        let i = (p.floor() as usize).min(dims[c] - 1);
        idx[c] = i;
        loc[c] = (p - i as f64).clamp(0.0, 1.0);
    }
    (grid.elem_index(idx[0], idx[1], idx[2]), loc)
}

/// Sample a nodal field tri-linearly at a physical point.
pub fn sample_nodal(grid: &Grid3, nodal: &[f64], x: [f64; 3]) -> f64 {
    let (e, loc) = locate(grid, x);
    let nodes = grid.elem_nodes(e);
    let vals: [f64; 8] = std::array::from_fn(|a| nodal[nodes[a]]);
    interpolate_at(&vals, loc[0], loc[1], loc[2])
}

/// Gradient of a nodal field at a physical point.
pub fn sample_gradient(grid: &Grid3, nodal: &[f64], x: [f64; 3]) -> [f64; 3] {
    let (e, loc) = locate(grid, x);
    let nodes = grid.elem_nodes(e);
    let vals: [f64; 8] = std::array::from_fn(|a| nodal[nodes[a]]);
    gradient_at(&vals, grid.h, loc[0], loc[1], loc[2])
}

/// Sample an intermediate-mesh nodal field at every fine voxel center.
pub fn sample_to_voxels(inter_grid: &Grid3, nodal: &[f64], fine: &Grid3) -> Vec<f64> {
    (0..fine.num_elements())
        .into_par_iter()
        .map(|v| sample_nodal(inter_grid, nodal, fine.elem_center(v)))
        .collect()
}

/// Gradient norm of an intermediate-mesh nodal field at fine voxel centers.
pub fn gradient_norm_at_voxels(inter_grid: &Grid3, nodal: &[f64], fine: &Grid3) -> Vec<f64> {
    (0..fine.num_elements())
        .into_par_iter()
        .map(|v| {
            let g = sample_gradient(inter_grid, nodal, fine.elem_center(v));
            (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt()
        })
        .collect()
}

/// Project one layer onto the fine grid: a voxel is solid when its periodic
/// phase coordinate lies inside the width band, so a layer's solid fraction
/// equals its width.
pub fn project_layer(
    inter_grid: &Grid3,
    phi: &[f64],
    p_scale: f64,
    fine: &Grid3,
    widths_fine: &[f64],
) -> Vec<u8> {
    assert_eq!(widths_fine.len(), fine.num_elements());
    (0..fine.num_elements())
        .into_par_iter()
        .map(|v| {
            let value = sample_nodal(inter_grid, phi, fine.elem_center(v));
            let phase = 0.5 + 0.5 * sawtooth(p_scale * value);
            u8::from(phase < widths_fine[v])
        })
        .collect()
}

/// Union of binary layers: `rho = min(1, sum rho_i)`.
pub fn combine_layers(fine: &Grid3, layers: &[Vec<u8>]) -> FineVoxelGrid {
    let mut out = FineVoxelGrid::empty(fine.clone());
    for layer in layers {
        assert_eq!(layer.len(), out.data.len());
        out.data
            .par_iter_mut()
            .zip(layer.par_iter())
            .for_each(|(o, &l)| *o = (*o).max(l));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combing::CombedField;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant_combed(grid: &Grid3, frame: Matrix3<f64>, widths: [f64; 3]) -> CombedField {
        CombedField {
            grid: grid.clone(),
            frames: vec![frame; grid.num_elements()],
            widths: vec![widths; grid.num_elements()],
        }
    }

    #[test]
    fn upsample_constant_field() {
        let grid = Grid3::new(3, 3, 3, 1.0 / 3.0);
        let combed = constant_combed(&grid, Matrix3::identity(), [0.2, 0.4, 0.6]);
        let rho = vec![0.37; grid.num_elements()];
        let inter = upsample(&combed, &rho, 4);
        assert_eq!(inter.grid.dims(), (12, 12, 12));
        for e in 0..inter.grid.num_elements() {
            assert!((inter.frames[e] - Matrix3::identity()).norm() < 1e-12);
            assert_relative_eq!(inter.rho[e], 0.37, epsilon = 1e-12);
            assert_relative_eq!(inter.widths[e][1], 0.4, epsilon = 1e-12);
        }
    }

    #[test]
    fn upsample_linear_width_field_interior() {
        let grid = Grid3::new(6, 4, 4, 0.25);
        let mut combed = constant_combed(&grid, Matrix3::identity(), [0.0; 3]);
        let mut rho = vec![0.5; grid.num_elements()];
        for e in 0..grid.num_elements() {
            let c = grid.elem_center(e);
            combed.widths[e] = [0.1 + 0.3 * c[0], 0.2, 0.3];
            rho[e] = 0.2 + 0.1 * c[0];
        }
        let inter = upsample(&combed, &rho, 4);
        for e in 0..inter.grid.num_elements() {
            let c = inter.grid.elem_center(e);
            // interior of the coarse center lattice only (no extrapolation)
            if c[0] > 0.5 * grid.h && c[0] < (grid.nx as f64 - 0.5) * grid.h {
                assert_relative_eq!(inter.widths[e][0], 0.1 + 0.3 * c[0], epsilon = 1e-12);
                assert_relative_eq!(inter.rho[e], 0.2 + 0.1 * c[0], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn upsample_error_contracts_with_refinement() {
        // smooth field: interpolation error should drop ~4x when the coarse
        // grid is refined 2x
        let f =
            |x: f64, y: f64, z: f64| 0.5 + 0.3 * (2.0 * x).sin() * (1.5 * y).cos() + 0.1 * z * z;
        let mut errs = Vec::new();
        for n in [6usize, 12] {
            let grid = Grid3::new(n, n, n, 1.0 / n as f64);
            let mut combed = constant_combed(&grid, Matrix3::identity(), [0.0; 3]);
            for e in 0..grid.num_elements() {
                let c = grid.elem_center(e);
                combed.widths[e][0] = f(c[0], c[1], c[2]);
            }
            let rho = vec![0.5; grid.num_elements()];
            let inter = upsample(&combed, &rho, 4);
            let mut max_err = 0.0f64;
            for e in 0..inter.grid.num_elements() {
                let c = inter.grid.elem_center(e);
                let interior = [c[0], c[1], c[2]]
                    .iter()
                    .all(|&v| v > grid.h && v < 1.0 - grid.h);
                if interior {
                    max_err = max_err.max((inter.widths[e][0] - f(c[0], c[1], c[2])).abs());
                }
            }
            errs.push(max_err);
        }
        assert!(
            errs[1] < errs[0] / 3.0,
            "refinement contraction too weak: {errs:?}"
        );
    }

    #[test]
    fn active_domain_cases() {
        let grid = Grid3::new(3, 1, 1, 1.0);
        let inter = IntermediateField {
            grid: grid.clone(),
            frames: vec![Matrix3::identity(); 3],
            widths: vec![[0.5, 0.5, 0.5], [0.005, 0.5, 0.5], [0.5, 0.5, 0.5]],
            rho: vec![0.5, 0.5, 1.0],
        };
        let mask = active_domain(&inter);
        assert!(mask.active[0][0]);
        assert!(!mask.active[0][1]); // thin
        assert!(mask.thin[0][1]);
        assert!(!mask.active[0][2]); // solid
        assert!(mask.solid[2]);
    }

    fn full_active(grid: &Grid3) -> ActiveMask {
        let n = grid.num_elements();
        ActiveMask {
            active: std::array::from_fn(|_| vec![true; n]),
            thin: std::array::from_fn(|_| vec![false; n]),
            solid: vec![false; n],
        }
    }

    #[test]
    fn mapping_constant_normal_gives_affine_field() {
        for dir in [
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(30f64.to_radians().cos(), 30f64.to_radians().sin(), 0.0),
        ] {
            let grid = Grid3::new(8, 8, 8, 1.0 / 8.0);
            // frame with the layer normal = dir
            let t1 = Vector3::new(-dir[1], dir[0], 0.0);
            let t2 = dir.cross(&t1);
            let frame = Matrix3::from_columns(&[dir, t1, t2]);
            let inter = IntermediateField {
                grid: grid.clone(),
                frames: vec![frame; grid.num_elements()],
                widths: vec![[0.5; 3]; grid.num_elements()],
                rho: vec![0.5; grid.num_elements()],
            };
            let mask = full_active(&grid);
            let cfg = MappingConfig {
                gamma_phi: 100.0,
                solver: MgcgConfig {
                    tol: 1e-10,
                    ..Default::default()
                },
            };
            let phi = solve_mapping(&inter, &mask, 0, &cfg).unwrap();
            // gradient equals dir everywhere
            for e in [0usize, 37, grid.num_elements() - 1] {
                let c = grid.elem_center(e);
                let g = sample_gradient(&grid, &phi, c);
                for c in 0..3 {
                    assert!(
                        (g[c] - dir[c]).abs() < 1e-6,
                        "component {c}: {g:?} vs {dir:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn mapping_penalty_reduces_tangential_drift() {
        // twisting normal field: higher gamma_phi must shrink the tangential
        // gradient residual
        let grid = Grid3::new(8, 8, 8, 1.0 / 8.0);
        let n = grid.num_elements();
        let mut frames = Vec::with_capacity(n);
        for e in 0..n {
            let c = grid.elem_center(e);
            let a = 0.6 * c[2];
            let dir = Vector3::new(a.cos(), a.sin(), 0.0);
            let t1 = Vector3::new(-dir[1], dir[0], 0.0);
            let t2 = dir.cross(&t1);
            frames.push(Matrix3::from_columns(&[dir, t1, t2]));
        }
        let inter = IntermediateField {
            grid: grid.clone(),
            frames,
            widths: vec![[0.5; 3]; n],
            rho: vec![0.5; n],
        };
        let mask = full_active(&grid);
        let mut last = f64::INFINITY;
        for gamma in [10.0, 100.0, 1000.0, 10000.0] {
            let cfg = MappingConfig {
                gamma_phi: gamma,
                solver: MgcgConfig {
                    tol: 1e-10,
                    ..Default::default()
                },
            };
            let phi = solve_mapping(&inter, &mask, 0, &cfg).unwrap();
            let mut resid = 0.0;
            for e in 0..n {
                let c = grid.elem_center(e);
                let g = sample_gradient(&grid, &phi, c);
                let gv = Vector3::new(g[0], g[1], g[2]);
                let t1 = inter.frames[e].column(1);
                let t2 = inter.frames[e].column(2);
                resid += (gv.dot(&t1).powi(2) + gv.dot(&t2).powi(2)) * grid.elem_volume();
            }
            assert!(
                resid < last * (1.0 + 1e-9),
                "gamma {gamma}: residual {resid} did not decrease from {last}"
            );
            last = resid;
        }
    }

    #[test]
    fn periodicity_scale_values() {
        let grid = Grid3::new(4, 4, 4, 0.25);
        // phi = x: ||grad|| = 1
        let mut phi = vec![0.0; grid.num_nodes()];
        for k in 0..=grid.nz {
            for j in 0..=grid.ny {
                for i in 0..=grid.nx {
                    phi[grid.node_index(i, j, k)] = i as f64 * grid.h;
                }
            }
        }
        let active = vec![true; grid.num_elements()];
        let p = periodicity_scale(&grid, &phi, &active, 0.05);
        assert_relative_eq!(p, 2.0 * std::f64::consts::PI / 0.05, epsilon = 1e-9);
        // phi = 2x halves the scale
        let phi2: Vec<f64> = phi.iter().map(|v| 2.0 * v).collect();
        let p2 = periodicity_scale(&grid, &phi2, &active, 0.05);
        assert_relative_eq!(p2, p / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn periodicity_scale_matches_refined_quadrature() {
        let grid = Grid3::new(6, 6, 6, 1.0 / 6.0);
        let f = |x: f64, y: f64, z: f64| (1.3 * x).sin() + 0.4 * y * y - 0.2 * x * z;
        let mut phi = vec![0.0; grid.num_nodes()];
        for k in 0..=grid.nz {
            for j in 0..=grid.ny {
                for i in 0..=grid.nx {
                    phi[grid.node_index(i, j, k)] =
                        f(i as f64 * grid.h, j as f64 * grid.h, k as f64 * grid.h);
                }
            }
        }
        let active = vec![true; grid.num_elements()];
        let eps = 0.1;
        let p = periodicity_scale(&grid, &phi, &active, eps);
        // oracle: dense 8x8x8 sampling per element of the same interpolant
        let mut vol = 0.0;
        let mut grad = 0.0;
        let m = 8;
        for e in 0..grid.num_elements() {
            let nodes = grid.elem_nodes(e);
            let pe: [f64; 8] = std::array::from_fn(|a| phi[nodes[a]]);
            let w = grid.elem_volume() / (m * m * m) as f64;
            for a in 0..m {
                for b in 0..m {
                    for c in 0..m {
                        let loc = [
                            (a as f64 + 0.5) / m as f64,
                            (b as f64 + 0.5) / m as f64,
                            (c as f64 + 0.5) / m as f64,
                        ];
                        let g = gradient_at(&pe, grid.h, loc[0], loc[1], loc[2]);
                        grad += w * (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                    }
                }
            }
            vol += grid.elem_volume();
        }
        let oracle = (2.0 * std::f64::consts::PI / eps) * (vol / grad);
        assert!((p - oracle).abs() / oracle < 1e-3, "{p} vs {oracle}");
    }

    #[test]
    fn sawtooth_values() {
        use std::f64::consts::PI;
        assert_eq!(sawtooth(0.0), 0.0);
        assert_relative_eq!(sawtooth(PI / 2.0), 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..100 {
            let t = rng.gen_range(-30.0..30.0);
            assert!((sawtooth(t + 2.0 * PI) - sawtooth(t)).abs() < 1e-12);
            assert!((-1.0..=1.0).contains(&sawtooth(t)));
        }
    }

    #[test]
    fn projection_fraction_matches_width() {
        // affine phi with unit gradient; uniform width 0.3
        let inter_grid = Grid3::new(4, 4, 4, 0.25);
        let mut phi = vec![0.0; inter_grid.num_nodes()];
        for k in 0..=inter_grid.nz {
            for j in 0..=inter_grid.ny {
                for i in 0..=inter_grid.nx {
                    phi[inter_grid.node_index(i, j, k)] = i as f64 * inter_grid.h;
                }
            }
        }
        let fine = Grid3::new(96, 96, 96, 1.0 / 96.0);
        let eps = 24.0 * fine.h;
        let p = 2.0 * std::f64::consts::PI / eps; // unit gradient
        for w in [0.0, 0.3, 1.0] {
            let widths = vec![w; fine.num_elements()];
            let layer = project_layer(&inter_grid, &phi, p, &fine, &widths);
            let frac =
                layer.iter().map(|&v| v as usize).sum::<usize>() as f64 / layer.len() as f64;
            if w == 0.0 {
                assert_eq!(frac, 0.0);
            } else if w == 1.0 {
                assert_eq!(frac, 1.0);
            } else {
                let period_voxels = eps / fine.h;
                assert!(
                    (frac - w).abs() <= 2.0 / period_voxels,
                    "fraction {frac} vs width {w}"
                );
            }
        }
    }

    #[test]
    fn projection_period_measured_in_voxels() {
        let inter_grid = Grid3::new(4, 4, 4, 0.25);
        let mut phi = vec![0.0; inter_grid.num_nodes()];
        for k in 0..=inter_grid.nz {
            for j in 0..=inter_grid.ny {
                for i in 0..=inter_grid.nx {
                    phi[inter_grid.node_index(i, j, k)] = i as f64 * inter_grid.h;
                }
            }
        }
        let fine = Grid3::new(96, 4, 4, 1.0 / 96.0);
        let eps = 24.0 * fine.h;
        let p = 2.0 * std::f64::consts::PI / eps;
        let widths = vec![0.3; fine.num_elements()];
        let layer = project_layer(&inter_grid, &phi, p, &fine, &widths);
        // wall-to-wall period along x at fixed (j,k): distance between
        // consecutive void->solid transitions
        let mut transitions = Vec::new();
        for i in 1..fine.nx {
            let a = layer[fine.elem_index(i - 1, 0, 0)];
            let b = layer[fine.elem_index(i, 0, 0)];
            if a == 0 && b == 1 {
                transitions.push(i);
            }
        }
        assert!(transitions.len() >= 2);
        for w in transitions.windows(2) {
            let period = (w[1] - w[0]) as f64;
            assert!(
                (period - eps / fine.h).abs() <= 1.0,
                "period {period} voxels vs expected {}",
                eps / fine.h
            );
        }
    }

    #[test]
    fn union_of_three_orthogonal_layers() {
        let inter_grid = Grid3::new(4, 4, 4, 0.25);
        let mk_phi = |axis: usize| {
            let mut phi = vec![0.0; inter_grid.num_nodes()];
            for k in 0..=inter_grid.nz {
                for j in 0..=inter_grid.ny {
                    for i in 0..=inter_grid.nx {
                        let coords = [i, j, k];
                        phi[inter_grid.node_index(i, j, k)] =
                            coords[axis] as f64 * inter_grid.h;
                    }
                }
            }
            phi
        };
        let fine = Grid3::new(96, 96, 96, 1.0 / 96.0);
        let eps = 24.0 * fine.h;
        let p = 2.0 * std::f64::consts::PI / eps;
        let w = 0.1;
        let widths = vec![w; fine.num_elements()];
        let layers: Vec<Vec<u8>> = (0..3)
            .map(|axis| project_layer(&inter_grid, &mk_phi(axis), p, &fine, &widths))
            .collect();
        let union = combine_layers(&fine, &layers);
        let frac = union.solid_fraction();
        let expected = 1.0 - (1.0 - w).powi(3);
        let tol = 3.0 * 2.0 / (eps / fine.h); // voxel error per layer
        assert!(
            (frac - expected).abs() < tol,
            "union fraction {frac} vs {expected}"
        );
        // idempotent union
        let twice = combine_layers(&fine, &[layers[0].clone(), layers[0].clone()]);
        assert_eq!(
            twice.data,
            layers[0]
        );
    }

    #[test]
    fn union_monotone_in_width() {
        let inter_grid = Grid3::new(2, 2, 2, 0.5);
        let mut phi = vec![0.0; inter_grid.num_nodes()];
        for k in 0..=inter_grid.nz {
            for j in 0..=inter_grid.ny {
                for i in 0..=inter_grid.nx {
                    phi[inter_grid.node_index(i, j, k)] =
                        (i as f64 + 0.3 * j as f64) * inter_grid.h;
                }
            }
        }
        let fine = Grid3::new(48, 48, 48, 1.0 / 48.0);
        let p = 2.0 * std::f64::consts::PI / (12.0 * fine.h);
        let w1 = vec![0.2; fine.num_elements()];
        let w2 = vec![0.35; fine.num_elements()];
        let l1 = project_layer(&inter_grid, &phi, p, &fine, &w1);
        let l2 = project_layer(&inter_grid, &phi, p, &fine, &w2);
        for (a, b) in l1.iter().zip(l2.iter()) {
            assert!(b >= a);
        }
    }

    #[test]
    fn mapping_shift_invariance_of_projection() {
        // phi + const translates the pattern but keeps the solid fraction
        let inter_grid = Grid3::new(4, 4, 4, 0.25);
        let mut phi = vec![0.0; inter_grid.num_nodes()];
        for k in 0..=inter_grid.nz {
            for j in 0..=inter_grid.ny {
                for i in 0..=inter_grid.nx {
                    phi[inter_grid.node_index(i, j, k)] = i as f64 * inter_grid.h;
                }
            }
        }
        let fine = Grid3::new(96, 24, 24, 1.0 / 96.0);
        let eps = 24.0 * fine.h;
        let p = 2.0 * std::f64::consts::PI / eps;
        let widths = vec![0.3; fine.num_elements()];
        let l1 = project_layer(&inter_grid, &phi, p, &fine, &widths);
        let shifted: Vec<f64> = phi.iter().map(|v| v + 0.123).collect();
        let l2 = project_layer(&inter_grid, &shifted, p, &fine, &widths);
        let f1 = l1.iter().map(|&v| v as usize).sum::<usize>() as f64;
        let f2 = l2.iter().map(|&v| v as usize).sum::<usize>() as f64;
        let per_layer = 2.0 * (fine.ny * fine.nz) as f64;
        assert!(
            (f1 - f2).abs() <= per_layer,
            "fractions differ by more than two voxel layers"
        );
    }
}
