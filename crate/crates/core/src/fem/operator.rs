//! Matrix-free level operators on structured grids.
//!
//! The product `y = K x` is evaluated node-wise: each node gathers the rows
//! of the element matrices of its (up to eight) adjacent elements. Writes are
//! disjoint, so the loop parallelizes without scatter races and the
//! accumulation order is fixed regardless of worker count.

use super::hex::{ElasticBasis, ScalarBasis};
use crate::grid::Grid3;
use nalgebra::{DMatrix, Matrix6};
use rayon::prelude::*;
use std::sync::Arc;

/// Per-octant prolongation weights: `p[o][fine_local][coarse_local]` maps the
/// corner values of a coarse cell to the corners of its child `o`.
fn octant_prolongation() -> [[[f64; 8]; 8]; 8] {
    let mut p = [[[0.0; 8]; 8]; 8];
    for o in 0..8usize {
        let (ox, oy, oz) = (o & 1, (o >> 1) & 1, (o >> 2) & 1);
        for b in 0..8usize {
            // local coords of child-b corner within the coarse cell, in {0,1/2,1}
            let cx = 0.5 * (ox + (b & 1)) as f64;
            let cy = 0.5 * (oy + ((b >> 1) & 1)) as f64;
            let cz = 0.5 * (oz + ((b >> 2) & 1)) as f64;
            for a in 0..8usize {
                let wx = if a & 1 == 0 { 1.0 - cx } else { cx };
                let wy = if (a >> 1) & 1 == 0 { 1.0 - cy } else { cy };
                let wz = if (a >> 2) & 1 == 0 { 1.0 - cz } else { cz };
                p[o][b][a] = wx * wy * wz;
            }
        }
    }
    p
}

/// `P_o^T K P_o` for an elastic (24x24, node-major) element matrix.
fn galerkin_project_24(k: &[f64; 576], p: &[[f64; 8]; 8]) -> [f64; 576] {
    // tmp = K * P (expand scalar node weights over 3 components)
    let mut tmp = [0.0f64; 576];
    for r in 0..24 {
        for bc in 0..8 {
            for c in 0..3 {
                let mut acc = 0.0;
                for fc in 0..8 {
                    acc += k[24 * r + 3 * fc + c] * p[fc][bc];
                }
                tmp[24 * r + 3 * bc + c] = acc;
            }
        }
    }
    let mut out = [0.0f64; 576];
    for br in 0..8 {
        for r in 0..3 {
            for c in 0..24 {
                let mut acc = 0.0;
                for fr in 0..8 {
                    acc += p[fr][br] * tmp[24 * (3 * fr + r) + c];
                }
                out[24 * (3 * br + r) + c] = acc;
            }
        }
    }
    out
}

/// `P_o^T K P_o` for a scalar (8x8) element matrix.
fn galerkin_project_8(k: &[f64; 64], p: &[[f64; 8]; 8]) -> [f64; 64] {
    let mut tmp = [0.0f64; 64];
    for r in 0..8 {
        for bc in 0..8 {
            let mut acc = 0.0;
            for fc in 0..8 {
                acc += k[8 * r + fc] * p[fc][bc];
            }
            tmp[8 * r + bc] = acc;
        }
    }
    let mut out = [0.0f64; 64];
    for br in 0..8 {
        for c in 0..8 {
            let mut acc = 0.0;
            for fr in 0..8 {
                acc += p[fr][br] * tmp[8 * fr + c];
            }
            out[8 * br + c] = acc;
        }
    }
    out
}

/// Coarsen a per-dof Dirichlet mask by injection at coincident nodes.
fn coarsen_fixed(fine: &Grid3, coarse: &Grid3, fixed: &[bool], node_dofs: usize) -> Vec<bool> {
    let mut out = vec![false; coarse.num_nodes() * node_dofs];
    for kk in 0..=coarse.nz {
        for jj in 0..=coarse.ny {
            for ii in 0..=coarse.nx {
                let cn = coarse.node_index(ii, jj, kk);
                let fnode = fine.node_index(2 * ii, 2 * jj, 2 * kk);
                for c in 0..node_dofs {
                    out[node_dofs * cn + c] = fixed[node_dofs * fnode + c];
                }
            }
        }
    }
    out
}

/// A level of the multigrid hierarchy: a matrix-free SPD operator plus the
/// information needed to build the next-coarser level.
pub trait LevelOperator: Sync + Send {
    fn grid(&self) -> &Grid3;
    fn node_dofs(&self) -> usize;
    fn fixed(&self) -> &[bool];
    fn ndofs(&self) -> usize {
        self.grid().num_nodes() * self.node_dofs()
    }
    /// `y = K x` with eliminated Dirichlet dofs treated as identity rows.
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// Assembled diagonal (1.0 on fixed dofs).
    fn diagonal(&self) -> Vec<f64>;
    fn coarsen(&self) -> Option<Box<dyn LevelOperator>>;
    /// Dense assembly; intended for coarsest-level factorization and tests.
    fn assemble_dense(&self) -> DMatrix<f64>;
}

enum ElasticStore {
    /// One dense 24x24 per element.
    Dense(Vec<[f64; 576]>),
    /// Shared base matrix scaled per element.
    Scaled { ke0: Box<[f64; 576]>, scale: Vec<f64> },
    /// Galerkin-coarsened scaled store: eight octant matrices weighted by the
    /// child scales of each coarse element.
    Octant { q: Box<[[f64; 576]; 8]>, s: Vec<[f64; 8]> },
}

/// Matrix-free elasticity operator (3 dofs per node).
pub struct ElasticLevel {
    grid: Grid3,
    fixed: Arc<Vec<bool>>,
    store: ElasticStore,
    /// Isotropic base tensor for rediscretized coarse levels of scaled stores.
    base: Option<Matrix6<f64>>,
}

impl ElasticLevel {
    /// Per-element dense matrices from constitutive tensors.
    pub fn from_tensors(grid: &Grid3, tensors: &[Matrix6<f64>], fixed: Arc<Vec<bool>>) -> Self {
        assert_eq!(tensors.len(), grid.num_elements());
        assert_eq!(fixed.len(), grid.num_nodes() * 3);
        let basis = ElasticBasis::new(grid.h);
        let ke: Vec<[f64; 576]> = tensors.par_iter().map(|t| basis.ke(t)).collect();
        Self {
            grid: grid.clone(),
            fixed,
            store: ElasticStore::Dense(ke),
            base: None,
        }
    }

    /// Shared isotropic base tensor with a per-element scale factor.
    pub fn from_scaled(
        grid: &Grid3,
        base: &Matrix6<f64>,
        scale: Vec<f64>,
        fixed: Arc<Vec<bool>>,
    ) -> Self {
        assert_eq!(scale.len(), grid.num_elements());
        assert_eq!(fixed.len(), grid.num_nodes() * 3);
        let ke0 = Box::new(ElasticBasis::new(grid.h).ke(base));
        Self {
            grid: grid.clone(),
            fixed,
            store: ElasticStore::Scaled { ke0, scale },
            base: Some(*base),
        }
    }

    /// Row `row` of the element matrix of `e`, dotted against `ue`.
    #[inline]
    fn elem_row_dot(&self, e: usize, row: usize, ue: &[f64; 24]) -> f64 {
        match &self.store {
            ElasticStore::Dense(ke) => {
                let r = &ke[e][24 * row..24 * row + 24];
                let mut acc = 0.0;
                for c in 0..24 {
                    acc += r[c] * ue[c];
                }
                acc
            }
            ElasticStore::Scaled { ke0, scale } => {
                let r = &ke0[24 * row..24 * row + 24];
                let mut acc = 0.0;
                for c in 0..24 {
                    acc += r[c] * ue[c];
                }
                scale[e] * acc
            }
            ElasticStore::Octant { q, s } => {
                let mut acc = 0.0;
                for o in 0..8 {
                    let so = s[e][o];
                    if so != 0.0 {
                        let r = &q[o][24 * row..24 * row + 24];
                        let mut dot = 0.0;
                        for c in 0..24 {
                            dot += r[c] * ue[c];
                        }
                        acc += so * dot;
                    }
                }
                acc
            }
        }
    }

    fn elem_matrix(&self, e: usize) -> [f64; 576] {
        match &self.store {
            ElasticStore::Dense(ke) => ke[e],
            ElasticStore::Scaled { ke0, scale } => {
                let mut out = **ke0;
                for v in out.iter_mut() {
                    *v *= scale[e];
                }
                out
            }
            ElasticStore::Octant { q, s } => {
                let mut out = [0.0; 576];
                for o in 0..8 {
                    let so = s[e][o];
                    if so != 0.0 {
                        for (ov, qv) in out.iter_mut().zip(q[o].iter()) {
                            *ov += so * qv;
                        }
                    }
                }
                out
            }
        }
    }
}

/// Node-gather apply shared by the elastic and scalar operators.
///
/// For each node, loops over adjacent elements and accumulates the node's
/// block of `Ke * ue`. `ROW_DOT(e, local_row, ue)` supplies one row product.
fn node_gather_apply<const ND: usize>(
    grid: &Grid3,
    fixed: &[bool],
    x: &[f64],
    y: &mut [f64],
    row_dot: impl Fn(usize, usize, &[f64; 24]) -> f64 + Sync,
) {
    let (nx, ny, nz) = grid.dims();
    let nxn = nx + 1;
    let nyn = ny + 1;
    let plane = nxn * nyn;
    y.par_chunks_mut(ND * plane)
        .enumerate()
        .for_each(|(kn, yslab)| {
            let mut ue = [0.0f64; 24];
            for jn in 0..nyn {
                for in_ in 0..nxn {
                    let node = in_ + nxn * jn; // within slab
                    let gnode = node + plane * kn;
                    let mut acc = [0.0f64; ND];
                    // adjacent elements: origin = node - (dx,dy,dz)
                    for dz in 0..2usize {
                        if kn < dz || kn - dz >= nz {
                            continue;
                        }
                        for dy in 0..2usize {
                            if jn < dy || jn - dy >= ny {
                                continue;
                            }
                            for dx in 0..2usize {
                                if in_ < dx || in_ - dx >= nx {
                                    continue;
                                }
                                let e =
                                    grid.elem_index(in_ - dx, jn - dy, kn - dz);
                                let local = dx + 2 * dy + 4 * dz;
                                // gather element dofs, zeroing fixed ones
                                let nodes = grid.elem_nodes(e);
                                for (a, &n) in nodes.iter().enumerate() {
                                    for c in 0..ND {
                                        let dof = ND * n + c;
                                        ue[ND * a + c] =
                                            if fixed[dof] { 0.0 } else { x[dof] };
                                    }
                                }
                                for c in 0..ND {
                                    acc[c] += row_dot(e, ND * local + c, &ue);
                                }
                            }
                        }
                    }
                    for c in 0..ND {
                        let dof = ND * gnode + c;
                        yslab[ND * node + c] = if fixed[dof] { x[dof] } else { acc[c] };
                    }
                }
            }
        });
}

fn diagonal_from_elems<const ND: usize>(
    grid: &Grid3,
    fixed: &[bool],
    elem_diag: impl Fn(usize, usize) -> f64,
) -> Vec<f64> {
    let nd = ND;
    let mut out = vec![0.0f64; grid.num_nodes() * nd];
    for e in 0..grid.num_elements() {
        let nodes = grid.elem_nodes(e);
        for (a, &n) in nodes.iter().enumerate() {
            for c in 0..nd {
                out[nd * n + c] += elem_diag(e, nd * a + c);
            }
        }
    }
    for (dof, v) in out.iter_mut().enumerate() {
        if fixed[dof] {
            *v = 1.0;
        }
    }
    out
}

fn assemble_dense_impl<const ND: usize>(
    grid: &Grid3,
    fixed: &[bool],
    elem_matrix: impl Fn(usize) -> Vec<f64>,
) -> DMatrix<f64> {
    let n = grid.num_nodes() * ND;
    let mut m = DMatrix::<f64>::zeros(n, n);
    let edofs = 8 * ND;
    for e in 0..grid.num_elements() {
        let ke = elem_matrix(e);
        let nodes = grid.elem_nodes(e);
        let mut dofs = vec![0usize; edofs];
        for (a, &node) in nodes.iter().enumerate() {
            for c in 0..ND {
                dofs[ND * a + c] = ND * node + c;
            }
        }
        for r in 0..edofs {
            if fixed[dofs[r]] {
                continue;
            }
            for c in 0..edofs {
                if fixed[dofs[c]] {
                    continue;
                }
                m[(dofs[r], dofs[c])] += ke[edofs * r + c];
            }
        }
    }
    for dof in 0..n {
        if fixed[dof] {
            m[(dof, dof)] = 1.0;
        }
    }
    m
}

impl LevelOperator for ElasticLevel {
    fn grid(&self) -> &Grid3 {
        &self.grid
    }

    fn node_dofs(&self) -> usize {
        3
    }

    fn fixed(&self) -> &[bool] {
        &self.fixed
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ndofs());
        assert_eq!(y.len(), self.ndofs());
        node_gather_apply::<3>(&self.grid, &self.fixed, x, y, |e, row, ue| {
            self.elem_row_dot(e, row, ue)
        });
    }

    fn diagonal(&self) -> Vec<f64> {
        match &self.store {
            ElasticStore::Dense(ke) => diagonal_from_elems::<3>(&self.grid, &self.fixed, |e, d| {
                ke[e][24 * d + d]
            }),
            ElasticStore::Scaled { ke0, scale } => {
                diagonal_from_elems::<3>(&self.grid, &self.fixed, |e, d| {
                    scale[e] * ke0[24 * d + d]
                })
            }
            ElasticStore::Octant { q, s } => {
                diagonal_from_elems::<3>(&self.grid, &self.fixed, |e, d| {
                    (0..8).map(|o| s[e][o] * q[o][24 * d + d]).sum()
                })
            }
        }
    }

    fn coarsen(&self) -> Option<Box<dyn LevelOperator>> {
        let coarse = self.grid.coarsened()?;
        let fixed = Arc::new(coarsen_fixed(&self.grid, &coarse, &self.fixed, 3));
        let p8 = octant_prolongation();
        let child_of = |ce: usize, o: usize| {
            let (ci, cj, ck) = coarse.elem_coords(ce);
            self.grid
                .elem_index(2 * ci + (o & 1), 2 * cj + ((o >> 1) & 1), 2 * ck + ((o >> 2) & 1))
        };
        let store = match &self.store {
            // exact Galerkin projection of dense children
            ElasticStore::Dense(_) => {
                let ke: Vec<[f64; 576]> = (0..coarse.num_elements())
                    .into_par_iter()
                    .map(|ce| {
                        let mut out = [0.0f64; 576];
                        for o in 0..8 {
                            let child = self.elem_matrix(child_of(ce, o));
                            let proj = galerkin_project_24(&child, &p8[o]);
                            for (a, b) in out.iter_mut().zip(proj.iter()) {
                                *a += b;
                            }
                        }
                        out
                    })
                    .collect();
                ElasticStore::Dense(ke)
            }
            // rediscretize below the first Galerkin level: average the scale,
            // rebuild the shared base matrix at 2h
            ElasticStore::Octant { .. } => {
                let base = self.base.expect("octant store carries base tensor");
                let ke0 = Box::new(ElasticBasis::new(coarse.h).ke(&base));
                let scale: Vec<f64> = (0..coarse.num_elements())
                    .into_par_iter()
                    .map(|ce| {
                        let mut acc = 0.0;
                        for o in 0..8 {
                            acc += self.octant_mean(child_of(ce, o));
                        }
                        acc / 8.0
                    })
                    .collect();
                ElasticStore::Scaled { ke0, scale }
            }
            ElasticStore::Scaled { ke0, scale } => {
                // exact Galerkin: octant matrices from the shared base
                let mut q = Box::new([[0.0f64; 576]; 8]);
                for o in 0..8 {
                    q[o] = galerkin_project_24(ke0, &p8[o]);
                }
                let s: Vec<[f64; 8]> = (0..coarse.num_elements())
                    .into_par_iter()
                    .map(|ce| std::array::from_fn(|o| scale[child_of(ce, o)]))
                    .collect();
                ElasticStore::Octant { q, s }
            }
        };
        Some(Box::new(ElasticLevel {
            grid: coarse,
            fixed,
            store,
            base: self.base,
        }))
    }

    fn assemble_dense(&self) -> DMatrix<f64> {
        assemble_dense_impl::<3>(&self.grid, &self.fixed, |e| self.elem_matrix(e).to_vec())
    }
}

impl ElasticLevel {
    fn octant_mean(&self, e: usize) -> f64 {
        match &self.store {
            ElasticStore::Octant { s, .. } => s[e].iter().sum::<f64>() / 8.0,
            ElasticStore::Scaled { scale, .. } => scale[e],
            ElasticStore::Dense(_) => unreachable!("dense stores are never averaged"),
        }
    }
}

enum ScalarStore {
    /// Symmetric 3x3 coefficient per element, in (xx,yy,zz,yz,xz,xy) order.
    Tensors { basis: ScalarBasis, a: Vec<[f64; 6]> },
    /// Dense 8x8 per element (Galerkin-coarsened levels).
    Dense(Vec<[f64; 64]>),
}

/// Matrix-free scalar diffusion-type operator (1 dof per node).
pub struct ScalarLevel {
    grid: Grid3,
    fixed: Arc<Vec<bool>>,
    store: ScalarStore,
}

impl ScalarLevel {
    pub fn from_tensors(grid: &Grid3, a: Vec<[f64; 6]>, fixed: Arc<Vec<bool>>) -> Self {
        assert_eq!(a.len(), grid.num_elements());
        assert_eq!(fixed.len(), grid.num_nodes());
        Self {
            grid: grid.clone(),
            fixed,
            store: ScalarStore::Tensors {
                basis: ScalarBasis::new(grid.h),
                a,
            },
        }
    }

    #[inline]
    fn elem_row_dot(&self, e: usize, row: usize, ue: &[f64; 24]) -> f64 {
        match &self.store {
            ScalarStore::Tensors { basis, a } => {
                let ae = &a[e];
                let mut acc = 0.0;
                for p in 0..6 {
                    if ae[p] != 0.0 {
                        let r = &basis.k[p][8 * row..8 * row + 8];
                        let mut dot = 0.0;
                        for c in 0..8 {
                            dot += r[c] * ue[c];
                        }
                        acc += ae[p] * dot;
                    }
                }
                acc
            }
            ScalarStore::Dense(ke) => {
                let r = &ke[e][8 * row..8 * row + 8];
                let mut acc = 0.0;
                for c in 0..8 {
                    acc += r[c] * ue[c];
                }
                acc
            }
        }
    }

    fn elem_matrix(&self, e: usize) -> [f64; 64] {
        match &self.store {
            ScalarStore::Tensors { basis, a } => basis.ke(&a[e]),
            ScalarStore::Dense(ke) => ke[e],
        }
    }
}

impl LevelOperator for ScalarLevel {
    fn grid(&self) -> &Grid3 {
        &self.grid
    }

    fn node_dofs(&self) -> usize {
        1
    }

    fn fixed(&self) -> &[bool] {
        &self.fixed
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ndofs());
        assert_eq!(y.len(), self.ndofs());
        node_gather_apply::<1>(&self.grid, &self.fixed, x, y, |e, row, ue| {
            self.elem_row_dot(e, row, ue)
        });
    }

    fn diagonal(&self) -> Vec<f64> {
        diagonal_from_elems::<1>(&self.grid, &self.fixed, |e, d| match &self.store {
            ScalarStore::Tensors { basis, a } => {
                (0..6).map(|p| a[e][p] * basis.k[p][8 * d + d]).sum()
            }
            ScalarStore::Dense(ke) => ke[e][8 * d + d],
        })
    }

    fn coarsen(&self) -> Option<Box<dyn LevelOperator>> {
        let coarse = self.grid.coarsened()?;
        let fixed = Arc::new(coarsen_fixed(&self.grid, &coarse, &self.fixed, 1));
        let p8 = octant_prolongation();
        let ke: Vec<[f64; 64]> = (0..coarse.num_elements())
            .into_par_iter()
            .map(|ce| {
                let (ci, cj, ck) = coarse.elem_coords(ce);
                let mut out = [0.0f64; 64];
                for o in 0..8usize {
                    let child = self.grid.elem_index(
                        2 * ci + (o & 1),
                        2 * cj + ((o >> 1) & 1),
                        2 * ck + ((o >> 2) & 1),
                    );
                    let proj = galerkin_project_8(&self.elem_matrix(child), &p8[o]);
                    for (a, b) in out.iter_mut().zip(proj.iter()) {
                        *a += b;
                    }
                }
                out
            })
            .collect();
        Some(Box::new(ScalarLevel {
            grid: coarse,
            fixed,
            store: ScalarStore::Dense(ke),
        }))
    }

    fn assemble_dense(&self) -> DMatrix<f64> {
        assemble_dense_impl::<1>(&self.grid, &self.fixed, |e| self.elem_matrix(e).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::ElasticityTensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensors(grid: &Grid3, seed: u64) -> Vec<Matrix6<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..grid.num_elements())
            .map(|_| {
                let e = rng.gen_range(0.1..2.0);
                let nu = rng.gen_range(0.1..0.4);
                *ElasticityTensor::isotropic(e, nu).voigt()
            })
            .collect()
    }

    #[test]
    fn matrix_free_matches_dense_product() {
        let grid = Grid3::new(2, 1, 1, 0.8);
        let mut fixed = vec![false; grid.num_nodes() * 3];
        fixed[0] = true;
        fixed[4] = true;
        let fixed = Arc::new(fixed);
        let op = ElasticLevel::from_tensors(&grid, &random_tensors(&grid, 3), fixed);
        let dense = op.assemble_dense();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..op.ndofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut y = vec![0.0; op.ndofs()];
        op.apply(&x, &mut y);
        let xd = nalgebra::DVector::from_column_slice(&x);
        let yd = &dense * xd;
        for i in 0..op.ndofs() {
            assert!((y[i] - yd[i]).abs() < 1e-12, "dof {i}");
        }
    }

    #[test]
    fn rigid_translation_in_null_space() {
        let grid = Grid3::new(3, 2, 2, 0.5);
        let fixed = Arc::new(vec![false; grid.num_nodes() * 3]);
        let op = ElasticLevel::from_tensors(&grid, &random_tensors(&grid, 5), fixed);
        for c in 0..3 {
            let mut x = vec![0.0; op.ndofs()];
            for n in 0..grid.num_nodes() {
                x[3 * n + c] = 1.0;
            }
            let mut y = vec![0.0; op.ndofs()];
            op.apply(&x, &mut y);
            assert!(y.iter().all(|v| v.abs() < 1e-11));
        }
    }

    #[test]
    fn operator_symmetry() {
        let grid = Grid3::new(2, 3, 2, 1.0);
        let mut fixed = vec![false; grid.num_nodes() * 3];
        for d in [1usize, 7, 20] {
            fixed[d] = true;
        }
        let op = ElasticLevel::from_tensors(&grid, &random_tensors(&grid, 6), Arc::new(fixed));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u: Vec<f64> = (0..op.ndofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..op.ndofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut ku = vec![0.0; op.ndofs()];
        let mut kv = vec![0.0; op.ndofs()];
        op.apply(&u, &mut ku);
        op.apply(&v, &mut kv);
        let a: f64 = ku.iter().zip(&v).map(|(x, y)| x * y).sum();
        let b: f64 = u.iter().zip(&kv).map(|(x, y)| x * y).sum();
        assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn galerkin_coarse_matches_rap() {
        // coarse dense operator equals P^T A P for the node-wise trilinear P
        let grid = Grid3::new(2, 2, 2, 1.0);
        let mut fixed = vec![false; grid.num_nodes() * 3];
        // fix a full corner node
        for c in 0..3 {
            fixed[3 * grid.node_index(0, 0, 0) + c] = true;
        }
        let op = ElasticLevel::from_tensors(&grid, &random_tensors(&grid, 8), Arc::new(fixed));
        let coarse = op.coarsen().unwrap();
        let a_h = coarse.assemble_dense();

        let a = op.assemble_dense();
        let cg = coarse.grid().clone();
        let nfine = op.ndofs();
        let ncoarse = coarse.ndofs();
        let mut p = DMatrix::<f64>::zeros(nfine, ncoarse);
        for kn in 0..=grid.nz {
            for jn in 0..=grid.ny {
                for in_ in 0..=grid.nx {
                    let fine_node = grid.node_index(in_, jn, kn);
                    // trilinear weights from the (single) coarse cell
                    for ck in 0..=cg.nz {
                        for cj in 0..=cg.ny {
                            for ci in 0..=cg.nx {
                                let cnode = cg.node_index(ci, cj, ck);
                                let wx = 1.0 - (in_ as f64 / 2.0 - ci as f64).abs();
                                let wy = 1.0 - (jn as f64 / 2.0 - cj as f64).abs();
                                let wz = 1.0 - (kn as f64 / 2.0 - ck as f64).abs();
                                if wx > 0.0 && wy > 0.0 && wz > 0.0 {
                                    for c in 0..3 {
                                        p[(3 * fine_node + c, 3 * cnode + c)] = wx * wy * wz;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        // compare on free dofs only: the identity rows of eliminated dofs are
        // handled outside the Galerkin product
        let rap = p.transpose() * &a * &p;
        for r in 0..ncoarse {
            if coarse.fixed()[r] {
                continue;
            }
            for c in 0..ncoarse {
                if coarse.fixed()[c] {
                    continue;
                }
                assert!(
                    (a_h[(r, c)] - rap[(r, c)]).abs() < 1e-10,
                    "entry ({r},{c}): {} vs {}",
                    a_h[(r, c)],
                    rap[(r, c)]
                );
            }
        }
    }

    #[test]
    fn scaled_octant_coarsening_matches_dense_path() {
        let grid = Grid3::new(4, 2, 2, 0.5);
        let fixed = Arc::new(vec![false; grid.num_nodes() * 3]);
        let base = *ElasticityTensor::isotropic(1.0, 0.3).voigt();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let scale: Vec<f64> = (0..grid.num_elements())
            .map(|_| rng.gen_range(0.1..1.0))
            .collect();
        let scaled = ElasticLevel::from_scaled(&grid, &base, scale.clone(), fixed.clone());
        let tensors: Vec<Matrix6<f64>> = scale.iter().map(|&s| base * s).collect();
        let dense = ElasticLevel::from_tensors(&grid, &tensors, fixed);
        let c1 = scaled.coarsen().unwrap();
        let c2 = dense.coarsen().unwrap();
        let m1 = c1.assemble_dense();
        let m2 = c2.assemble_dense();
        assert!((&m1 - &m2).norm() < 1e-10 * m2.norm());
    }

    #[test]
    fn scalar_operator_matches_dense_and_nullspace() {
        let grid = Grid3::new(3, 2, 2, 0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a: Vec<[f64; 6]> = (0..grid.num_elements())
            .map(|_| {
                // SPD-ish: diagonal dominant random symmetric tensor
                let d: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.5..2.0));
                let o: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.2..0.2));
                [d[0], d[1], d[2], o[0], o[1], o[2]]
            })
            .collect();
        let mut fixed = vec![false; grid.num_nodes()];
        fixed[0] = true;
        let op = ScalarLevel::from_tensors(&grid, a.clone(), Arc::new(fixed));
        let dense = op.assemble_dense();
        let x: Vec<f64> = (0..op.ndofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut y = vec![0.0; op.ndofs()];
        op.apply(&x, &mut y);
        let yd = &dense * nalgebra::DVector::from_column_slice(&x);
        for i in 0..op.ndofs() {
            assert!((y[i] - yd[i]).abs() < 1e-12);
        }
        // constants lie in the null space of the unconstrained operator
        let free = ScalarLevel::from_tensors(&grid, a, Arc::new(vec![false; grid.num_nodes()]));
        let ones = vec![1.0; free.ndofs()];
        let mut ky = vec![0.0; free.ndofs()];
        free.apply(&ones, &mut ky);
        for v in &ky {
            assert!(v.abs() < 1e-11);
        }
    }
}
