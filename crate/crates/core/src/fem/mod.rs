//! Structured-grid tri-linear hexahedral finite elements with matrix-free
//! multigrid-preconditioned CG, compliance and sensitivities, principal
//! stress directions, and strain-energy fields.

pub mod hex;
pub mod operator;
pub mod solver;

pub use hex::{
    centroid_strain, contract_quad_forms, element_stiffness, element_stiffness_with_quadrature,
    ElasticBasis, ScalarBasis,
};
pub use operator::{ElasticLevel, LevelOperator, ScalarLevel};
pub use solver::{ddot, dense_solve, norm2, MgSolver, MgcgConfig, SolveStats};

use crate::grid::Grid3;
use crate::material::EulerAngles;
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use std::sync::Arc;

/// Fixed dofs and nodal loads of a problem instance on one grid.
#[derive(Debug, Clone)]
pub struct BoundarySpec {
    node_dofs: usize,
    pub fixed: Vec<bool>,
    pub loads: Vec<f64>,
}

impl BoundarySpec {
    pub fn new(grid: &Grid3, node_dofs: usize) -> Self {
        let n = grid.num_nodes() * node_dofs;
        Self {
            node_dofs,
            fixed: vec![false; n],
            loads: vec![0.0; n],
        }
    }

    pub fn fix(&mut self, node: usize, component: usize) {
        let dof = self.node_dofs * node + component;
        self.fixed[dof] = true;
        self.loads[dof] = 0.0;
    }

    pub fn add_load(&mut self, node: usize, component: usize, value: f64) {
        let dof = self.node_dofs * node + component;
        assert!(!self.fixed[dof], "load applied to a fixed dof");
        self.loads[dof] += value;
    }

    /// Total applied force per component.
    pub fn load_resultant(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.node_dofs];
        for (dof, v) in self.loads.iter().enumerate() {
            out[dof % self.node_dofs] += v;
        }
        out
    }

    pub fn shared_fixed(&self) -> Arc<Vec<bool>> {
        Arc::new(self.fixed.clone())
    }
}

/// Gather the 24 element dofs of `e`, zeroing fixed entries.
pub fn gather_elem_u(grid: &Grid3, fixed: &[bool], u: &[f64], e: usize) -> [f64; 24] {
    let nodes = grid.elem_nodes(e);
    let mut ue = [0.0; 24];
    for (a, &n) in nodes.iter().enumerate() {
        for c in 0..3 {
            let dof = 3 * n + c;
            ue[3 * a + c] = if fixed[dof] { 0.0 } else { u[dof] };
        }
    }
    ue
}

/// Compliance `F^T U`.
pub fn compliance(loads: &[f64], u: &[f64]) -> f64 {
    ddot(loads, u)
}

/// Per-element quadratic forms `q_p = ue^T K_p ue` over the stiffness basis.
/// Contracting `q` with a tensor derivative gives `ue^T dKe ue`, the building
/// block of the self-adjoint compliance sensitivities.
pub fn element_quad_forms(
    grid: &Grid3,
    basis: &ElasticBasis,
    fixed: &[bool],
    u: &[f64],
) -> Vec<[f64; 21]> {
    (0..grid.num_elements())
        .into_par_iter()
        .map(|e| {
            let ue = gather_elem_u(grid, fixed, u, e);
            basis.quad_forms(&ue)
        })
        .collect()
}

/// Per-element strain energy density: `ue^T Ke ue / (2 V_e)`, which keeps the
/// energy identity `sum_e sed_e * V_e = F^T U / 2` exact.
pub fn strain_energy_density(
    grid: &Grid3,
    tensors: &[nalgebra::Matrix6<f64>],
    fixed: &[bool],
    u: &[f64],
) -> Vec<f64> {
    let basis = ElasticBasis::new(grid.h);
    let vol = grid.elem_volume();
    (0..grid.num_elements())
        .into_par_iter()
        .map(|e| {
            let ue = gather_elem_u(grid, fixed, u, e);
            let q = basis.quad_forms(&ue);
            contract_quad_forms(&tensors[e], &q) / (2.0 * vol)
        })
        .collect()
}

/// Strain energy density for a scaled-isotropic design (one factor per
/// element against a shared base tensor).
pub fn strain_energy_density_scaled(
    grid: &Grid3,
    base: &nalgebra::Matrix6<f64>,
    scale: &[f64],
    fixed: &[bool],
    u: &[f64],
) -> Vec<f64> {
    let basis = ElasticBasis::new(grid.h);
    let vol = grid.elem_volume();
    (0..grid.num_elements())
        .into_par_iter()
        .map(|e| {
            let ue = gather_elem_u(grid, fixed, u, e);
            let q = basis.quad_forms(&ue);
            scale[e] * contract_quad_forms(base, &q) / (2.0 * vol)
        })
        .collect()
}

/// Element centroid stress `sigma = C : eps` in Voigt order.
pub fn centroid_stress(
    grid: &Grid3,
    tensor: &nalgebra::Matrix6<f64>,
    fixed: &[bool],
    u: &[f64],
    e: usize,
) -> [f64; 6] {
    let ue = gather_elem_u(grid, fixed, u, e);
    let eps = centroid_strain(&ue, grid.h);
    let mut sig = [0.0; 6];
    for i in 0..6 {
        for j in 0..6 {
            sig[i] += tensor[(i, j)] * eps[j];
        }
    }
    sig
}

/// Principal stress directions of a symmetric stress tensor, ordered by
/// eigenvalue `sigma_I >= sigma_II >= sigma_III`, together with the Euler
/// angles that reproduce the eigenbasis through the frame parameterization.
pub struct PrincipalDirections {
    /// Columns are the ordered principal directions.
    pub basis: Matrix3<f64>,
    pub eigenvalues: [f64; 3],
    pub angles: EulerAngles,
}

/// Eigen-decomposition with deterministic sign fixing. The frame map yields
/// improper column triples, so the third direction's sign is chosen to make
/// `det = -1`; direction fields are sign-symmetric, so this loses nothing.
pub fn principal_directions(stress_voigt: &[f64; 6]) -> PrincipalDirections {
    let m = Matrix3::new(
        stress_voigt[0],
        stress_voigt[5],
        stress_voigt[4],
        stress_voigt[5],
        stress_voigt[1],
        stress_voigt[3],
        stress_voigt[4],
        stress_voigt[3],
        stress_voigt[2],
    );
    let eig = nalgebra::SymmetricEigen::new(m);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut cols: Vec<Vector3<f64>> = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    // deterministic sign: largest-magnitude entry positive
    for v in cols.iter_mut().take(2) {
        let mut idx = 0;
        for i in 1..3 {
            if v[i].abs() > v[idx].abs() {
                idx = i;
            }
        }
        if v[idx] < 0.0 {
            *v = -*v;
        }
    }
    // third direction from the cross product, flipped to improper handedness
    cols[2] = -(cols[0].cross(&cols[1]));
    let basis = Matrix3::from_columns(&cols);
    let angles = euler_from_improper_frame(&basis);
    PrincipalDirections {
        basis,
        eigenvalues: [
            eig.eigenvalues[order[0]],
            eig.eigenvalues[order[1]],
            eig.eigenvalues[order[2]],
        ],
        angles,
    }
}

/// Invert the frame parameterization for a column triple with `det = -1`
/// (the orientation produced by the trigonometric normal formulas).
pub fn euler_from_improper_frame(basis: &Matrix3<f64>) -> EulerAngles {
    let n3 = basis.column(2);
    // n3 = (cos t2 cos t3, cos t2 sin t3, -sin t2); principal branch keeps cos t2 >= 0
    let theta2 = (-n3[2]).clamp(-1.0, 1.0).asin();
    let c2 = theta2.cos();
    if c2 > 1e-9 {
        let theta3 = n3[1].atan2(n3[0]);
        // n1_z = cos t1 cos t2, n2_z = sin t1 cos t2
        let theta1 = basis.column(1)[2].atan2(basis.column(0)[2]);
        EulerAngles::new(theta1, theta2, theta3)
    } else {
        // gimbal lock: with sin t2 = +-1 only t1 -+ t3 is determined; fix t3 = 0
        let n1 = basis.column(0);
        let sign = -n3[2];
        let theta1 = if sign > 0.0 {
            (-n1[1]).atan2(n1[0])
        } else {
            n1[1].atan2(n1[0])
        };
        EulerAngles::new(theta1, theta2, 0.0)
    }
}
