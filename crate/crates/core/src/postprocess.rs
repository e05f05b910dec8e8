//! Post-processing of de-homogenized voxel designs: minimum feature size,
//! morphological open-close, connected components, and the iterative
//! strain-energy cleanup with fine-mesh analysis.

use crate::dehomog::FineVoxelGrid;
use crate::error::{Error, Result};
use crate::fem::{self, BoundarySpec, ElasticLevel, MgSolver, MgcgConfig};
use crate::grid::Grid3;
use nalgebra::Matrix6;
use rayon::prelude::*;

/// Local wall-to-wall spacing per voxel: `lambda = 2 pi / (P ||grad phi||)`.
/// Voxels with a vanishing gradient get infinite spacing (masked out of
/// feature-size enforcement).
pub fn local_spacing(grad_norms: &[f64], p_scale: f64) -> Vec<f64> {
    grad_norms
        .par_iter()
        .map(|&g| {
            if g < 1e-12 {
                f64::INFINITY
            } else {
                2.0 * std::f64::consts::PI / (p_scale * g)
            }
        })
        .collect()
}

/// Raise widths wherever the realized feature size `w * lambda` falls below
/// `f_min`. Only ever adds material.
pub fn enforce_feature_size(widths: &mut [f64], spacing: &[f64], f_min: f64) {
    assert_eq!(widths.len(), spacing.len());
    if f_min <= 0.0 {
        return;
    }
    widths
        .par_iter_mut()
        .zip(spacing.par_iter())
        .for_each(|(w, &lam)| {
            if lam.is_finite() {
                let feature = *w * lam;
                if feature < f_min {
                    *w = (f_min / lam).min(1.0);
                }
            }
        });
}

const NEIGHBORS_26: [(i64, i64, i64); 26] = {
    let mut out = [(0i64, 0i64, 0i64); 26];
    let mut idx = 0;
    let mut dz = -1i64;
    while dz <= 1 {
        let mut dy = -1i64;
        while dy <= 1 {
            let mut dx = -1i64;
            while dx <= 1 {
                if !(dx == 0 && dy == 0 && dz == 0) {
                    out[idx] = (dx, dy, dz);
                    idx += 1;
                }
                dx += 1;
            }
            dy += 1;
        }
        dz += 1;
    }
    out
};

/// Keep only the connected component (26-connectivity) with the most solid
/// voxels; ties resolve to the first component in scan order.
pub fn largest_component(grid: &Grid3, data: &mut [u8]) -> Result<usize> {
    assert_eq!(data.len(), grid.num_elements());
    let n = data.len();
    let mut label = vec![0u32; n];
    let mut sizes: Vec<usize> = vec![0]; // label 0 = unlabeled
    let mut stack = Vec::new();
    let (nx, ny, nz) = grid.dims();
    for start in 0..n {
        if data[start] == 0 || label[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32;
        sizes.push(0);
        label[start] = id;
        stack.push(start);
        while let Some(e) = stack.pop() {
            sizes[id as usize] += 1;
            let (i, j, k) = grid.elem_coords(e);
            for (dx, dy, dz) in NEIGHBORS_26 {
                let (ii, jj, kk) = (i as i64 + dx, j as i64 + dy, k as i64 + dz);
                if ii < 0 || jj < 0 || kk < 0 {
                    continue;
                }
                let (ii, jj, kk) = (ii as usize, jj as usize, kk as usize);
                if ii >= nx || jj >= ny || kk >= nz {
                    continue;
                }
                let ne = grid.elem_index(ii, jj, kk);
                if data[ne] != 0 && label[ne] == 0 {
                    label[ne] = id;
                    stack.push(ne);
                }
            }
        }
    }
    if sizes.len() == 1 {
        return Err(Error::EmptyDesign);
    }
    let mut best = 1usize;
    for id in 2..sizes.len() {
        if sizes[id] > sizes[best] {
            best = id;
        }
    }
    let best_label = best as u32;
    data.par_iter_mut()
        .zip(label.par_iter())
        .for_each(|(d, &l)| {
            if *d != 0 && l != best_label {
                *d = 0;
            }
        });
    Ok(sizes[best])
}

/// 1D squared distance transform (lower envelope of parabolas). Sources with
/// infinite value contribute nothing; an all-infinite input stays infinite.
fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q].is_infinite() {
            continue;
        }
        loop {
            let p = v[k];
            // an infinite base parabola is dominated everywhere
            let s = if f[p].is_infinite() {
                f64::NEG_INFINITY
            } else {
                ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64))
                    / (2.0 * (q as f64 - p as f64))
            };
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        d[q] = if f[p].is_infinite() {
            f64::INFINITY
        } else {
            let diff = q as f64 - p as f64;
            diff * diff + f[p]
        };
    }
}

/// Squared Euclidean distance (in voxel units) from every voxel to the set
/// of marked voxels (`mark(e) == true`). Separable three-pass transform.
pub fn squared_distance_to(grid: &Grid3, mark: impl Fn(usize) -> bool + Sync) -> Vec<f64> {
    let (nx, ny, nz) = grid.dims();
    let n = grid.num_elements();
    let mut dist: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|e| if mark(e) { 0.0 } else { f64::INFINITY })
        .collect();
    // pass along x
    dist.par_chunks_mut(nx).for_each(|row| {
        let f: Vec<f64> = row.to_vec();
        let mut v = vec![0usize; nx + 1];
        let mut z = vec![0.0f64; nx + 2];
        edt_1d(&f, row, &mut v, &mut z);
    });
    // pass along y: process each (x, z) column; parallel over z-slabs
    let plane = nx * ny;
    dist.par_chunks_mut(plane).for_each(|slab| {
        let mut f = vec![0.0f64; ny];
        let mut d = vec![0.0f64; ny];
        let mut v = vec![0usize; ny + 1];
        let mut z = vec![0.0f64; ny + 2];
        for i in 0..nx {
            for j in 0..ny {
                f[j] = slab[i + nx * j];
            }
            edt_1d(&f, &mut d, &mut v, &mut z);
            for j in 0..ny {
                slab[i + nx * j] = d[j];
            }
        }
    });
    // pass along z: transform columns into a column-major buffer, then
    // transpose back slab-parallel
    let dist_ref = &dist;
    let cols: Vec<f64> = (0..plane)
        .into_par_iter()
        .flat_map_iter(|ij| {
            let mut f = vec![0.0f64; nz];
            for k in 0..nz {
                f[k] = dist_ref[ij + plane * k];
            }
            let mut d = vec![0.0f64; nz];
            let mut v = vec![0usize; nz + 1];
            let mut z = vec![0.0f64; nz + 2];
            edt_1d(&f, &mut d, &mut v, &mut z);
            d.into_iter()
        })
        .collect();
    let mut out = vec![0.0f64; n];
    out.par_chunks_mut(plane).enumerate().for_each(|(k, slab)| {
        for (ij, v) in slab.iter_mut().enumerate() {
            *v = cols[ij * nz + k];
        }
    });
    out
}

/// Dilation by a Euclidean ball of radius `r` voxels (out-of-domain treated
/// as void).
pub fn dilate(grid: &Grid3, data: &mut [u8], radius: f64) {
    if radius <= 0.0 {
        return;
    }
    let d2 = squared_distance_to(grid, |e| data[e] != 0);
    let r2 = radius * radius + 1e-9;
    data.par_iter_mut().zip(d2.par_iter()).for_each(|(v, &d)| {
        *v = u8::from(d <= r2);
    });
}

/// Erosion by a Euclidean ball of radius `r` voxels (out-of-domain treated
/// as solid, so boundary-touching structures are not eaten).
pub fn erode(grid: &Grid3, data: &mut [u8], radius: f64) {
    if radius <= 0.0 {
        return;
    }
    let d2 = squared_distance_to(grid, |e| data[e] == 0);
    let r2 = radius * radius + 1e-9;
    data.par_iter_mut().zip(d2.par_iter()).for_each(|(v, &d)| {
        *v = u8::from(d > r2);
    });
}

/// Morphological opening then closing with a ball structuring element.
pub fn open_close(grid: &Grid3, data: &mut [u8], radius: f64) {
    if radius <= 0.0 {
        return;
    }
    erode(grid, data, radius);
    dilate(grid, data, radius);
    dilate(grid, data, radius);
    erode(grid, data, radius);
}

/// Fine-mesh verification problem: binary design against a shared stiff
/// tensor, with the void scaled down by `void_scale`.
pub struct FineProblem {
    pub grid: Grid3,
    pub boundary: BoundarySpec,
    pub stiff_tensor: Matrix6<f64>,
    /// stiffness scale of void voxels (1e-9 for verification)
    pub void_scale: f64,
    pub solver: MgcgConfig,
}

impl FineProblem {
    fn scales(&self, data: &[u8]) -> Vec<f64> {
        data.par_iter()
            .map(|&v| if v != 0 { 1.0 } else { self.void_scale })
            .collect()
    }

    /// Solve the state problem for a binary design; returns compliance and
    /// displacements (also used stand-alone to report J^phi).
    pub fn solve(&self, data: &[u8], warm: &mut Vec<f64>) -> Result<f64> {
        let op = ElasticLevel::from_scaled(
            &self.grid,
            &self.stiff_tensor,
            self.scales(data),
            self.boundary.shared_fixed(),
        );
        let mut solver = MgSolver::new(Box::new(op), self.solver);
        solver.solve(&self.boundary.loads, warm)?;
        Ok(fem::compliance(&self.boundary.loads, warm))
    }
}

#[derive(Debug, Clone)]
pub struct CleanupConfig {
    /// threshold exponent: voxels below `10^exponent * mean` are removed
    pub energy_threshold_exponent: f64,
    pub max_iterations: usize,
    /// open-close structuring radius in voxels (f_min / 2)
    pub structuring_radius: f64,
}

impl Default for CleanupConfig {
    fn default() -> Self {
        Self {
            energy_threshold_exponent: -2.5,
            max_iterations: 10,
            structuring_radius: 0.0,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CleanupReport {
    pub iterations: usize,
    pub converged: bool,
    /// solid fraction after each iteration
    pub volume_fractions: Vec<f64>,
    pub compliance: f64,
}

/// Iteratively remove non-load-carrying material: fine solve, void out solid
/// voxels with strain energy density below the threshold, open-close, keep
/// the largest component; repeat until the voxel set is unchanged.
pub fn energy_cleanup(
    voxels: &mut FineVoxelGrid,
    problem: &FineProblem,
    config: &CleanupConfig,
) -> Result<CleanupReport> {
    assert_eq!(voxels.grid.dims(), problem.grid.dims());
    let mut warm = vec![0.0; problem.grid.num_nodes() * 3];
    let mut report = CleanupReport {
        iterations: 0,
        converged: false,
        volume_fractions: Vec::new(),
        compliance: f64::NAN,
    };
    let threshold_factor = 10.0f64.powf(config.energy_threshold_exponent);
    let mut last_j = f64::NAN;
    for _ in 0..config.max_iterations {
        report.iterations += 1;
        let j = problem.solve(&voxels.data, &mut warm)?;
        last_j = j;
        let sed = fem::strain_energy_density_scaled(
            &problem.grid,
            &problem.stiff_tensor,
            &problem.scales(&voxels.data),
            &problem.boundary.fixed,
            &warm,
        );
        let (sum, count) = sed
            .iter()
            .zip(voxels.data.iter())
            .filter(|(_, &d)| d != 0)
            .fold((0.0, 0usize), |(s, c), (&e, _)| (s + e, c + 1));
        if count == 0 {
            return Err(Error::EmptyDesign);
        }
        let cutoff = threshold_factor * (sum / count as f64);
        let before = voxels.data.clone();
        voxels
            .data
            .par_iter_mut()
            .zip(sed.par_iter())
            .for_each(|(d, &e)| {
                if *d != 0 && e < cutoff {
                    *d = 0;
                }
            });
        open_close(&voxels.grid, &mut voxels.data, config.structuring_radius);
        largest_component(&voxels.grid, &mut voxels.data)?;
        report.volume_fractions.push(voxels.solid_fraction());
        if voxels.data == before {
            // the solve at the top of this iteration already analyzed this
            // exact configuration
            report.converged = true;
            report.compliance = last_j;
            break;
        }
    }
    if !report.converged {
        log::warn!(
            "energy cleanup did not reach a fixed point within {} iterations",
            config.max_iterations
        );
        report.compliance = problem.solve(&voxels.data, &mut warm)?;
    }
    let _ = last_j;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::ElasticityTensor;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn local_spacing_values() {
        let p = 2.0 * std::f64::consts::PI / 0.05;
        let lam = local_spacing(&[1.0, 2.0, 0.0], p);
        assert_relative_eq!(lam[0], 0.05, epsilon = 1e-12);
        assert_relative_eq!(lam[1], 0.025, epsilon = 1e-12);
        assert!(lam[2].is_infinite());
    }

    #[test]
    fn feature_size_examples() {
        let spacing = vec![0.05];
        let mut w = vec![0.1];
        enforce_feature_size(&mut w, &spacing, 0.01);
        assert_relative_eq!(w[0], 0.2, epsilon = 1e-12);

        let mut w = vec![0.1];
        enforce_feature_size(&mut w, &spacing, 0.0);
        assert_relative_eq!(w[0], 0.1);

        // never decreases
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..200 {
            let orig: f64 = rng.gen();
            let lam = rng.gen_range(0.01..0.1);
            let fmin = rng.gen_range(0.0..0.02);
            let mut w = vec![orig];
            enforce_feature_size(&mut w, &[lam], fmin);
            assert!(w[0] >= orig - 1e-15);
            assert!(w[0] <= 1.0);
        }
    }

    #[test]
    fn largest_component_keeps_biggest_blob() {
        let grid = Grid3::new(10, 4, 4, 1.0);
        let mut data = vec![0u8; grid.num_elements()];
        // blob A: 10 voxels in a row; blob B: 5 voxels, separated
        for i in 0..10 {
            data[grid.elem_index(i, 0, 0)] = 1;
        }
        for i in 0..5 {
            data[grid.elem_index(i, 3, 3)] = 1;
        }
        let kept = largest_component(&grid, &mut data).unwrap();
        assert_eq!(kept, 10);
        assert_eq!(data.iter().map(|&v| v as usize).sum::<usize>(), 10);
        assert_eq!(data[grid.elem_index(0, 3, 3)], 0);

        // idempotent
        let snapshot = data.clone();
        largest_component(&grid, &mut data).unwrap();
        assert_eq!(snapshot, data);
    }

    #[test]
    fn empty_design_errors() {
        let grid = Grid3::new(2, 2, 2, 1.0);
        let mut data = vec![0u8; grid.num_elements()];
        assert!(matches!(
            largest_component(&grid, &mut data),
            Err(Error::EmptyDesign)
        ));
    }

    /// Independent union-find labeling oracle.
    fn union_find_components(grid: &Grid3, data: &[u8]) -> Vec<usize> {
        let n = data.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut Vec<usize>, mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let (nx, ny, nz) = grid.dims();
        for e in 0..n {
            if data[e] == 0 {
                continue;
            }
            let (i, j, k) = grid.elem_coords(e);
            for (dx, dy, dz) in NEIGHBORS_26 {
                let (ii, jj, kk) = (i as i64 + dx, j as i64 + dy, k as i64 + dz);
                if ii < 0 || jj < 0 || kk < 0 {
                    continue;
                }
                let (ii, jj, kk) = (ii as usize, jj as usize, kk as usize);
                if ii >= nx || jj >= ny || kk >= nz {
                    continue;
                }
                let ne = grid.elem_index(ii, jj, kk);
                if data[ne] != 0 {
                    let (ra, rb) = (find(&mut parent, e), find(&mut parent, ne));
                    if ra != rb {
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
            }
        }
        let mut sizes = std::collections::HashMap::new();
        for e in 0..n {
            if data[e] != 0 {
                let r = find(&mut parent, e);
                *sizes.entry(r).or_insert(0usize) += 1;
            }
        }
        let mut v: Vec<usize> = sizes.values().copied().collect();
        v.sort_unstable();
        v
    }

    #[test]
    fn components_match_union_find_oracle() {
        let grid = Grid3::new(12, 9, 7, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let mut data: Vec<u8> = (0..grid.num_elements())
            .map(|_| u8::from(rng.gen_bool(0.25)))
            .collect();
        let oracle_sizes = union_find_components(&grid, &data);
        let kept = largest_component(&grid, &mut data).unwrap();
        assert_eq!(kept, *oracle_sizes.last().unwrap());
    }

    #[test]
    fn open_close_basic_properties() {
        let grid = Grid3::new(16, 16, 8, 1.0);
        // isolated voxel + a thick slab
        let mut data = vec![0u8; grid.num_elements()];
        data[grid.elem_index(2, 2, 2)] = 1;
        for i in 6..16 {
            for j in 0..16 {
                for k in 0..8 {
                    data[grid.elem_index(i, j, k)] = 1;
                }
            }
        }
        let mut identity = data.clone();
        open_close(&grid, &mut identity, 0.0);
        assert_eq!(identity, data);

        open_close(&grid, &mut data, 1.0);
        assert_eq!(data[grid.elem_index(2, 2, 2)], 0, "lone voxel survives");
        // thick slab unchanged
        for i in 6..16 {
            for j in 0..16 {
                for k in 0..8 {
                    assert_eq!(data[grid.elem_index(i, j, k)], 1);
                }
            }
        }
        // idempotent on its own output
        let snapshot = data.clone();
        open_close(&grid, &mut data, 1.0);
        assert_eq!(snapshot, data);
    }

    #[test]
    fn open_close_idempotent_random() {
        let grid = Grid3::new(14, 11, 9, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for radius in [1.0, 1.5, 2.0] {
            let mut data: Vec<u8> = (0..grid.num_elements())
                .map(|_| u8::from(rng.gen_bool(0.4)))
                .collect();
            open_close(&grid, &mut data, radius);
            let snapshot = data.clone();
            open_close(&grid, &mut data, radius);
            assert_eq!(snapshot, data, "radius {radius}");
        }
    }

    fn beam_problem(grid: &Grid3) -> FineProblem {
        let mut boundary = BoundarySpec::new(grid, 3);
        for k in 0..=grid.nz {
            for j in 0..=grid.ny {
                let n = grid.node_index(0, j, k);
                for c in 0..3 {
                    boundary.fix(n, c);
                }
            }
        }
        boundary.add_load(grid.node_index(grid.nx, grid.ny / 2, grid.nz / 2), 0, 1.0);
        FineProblem {
            grid: grid.clone(),
            boundary,
            stiff_tensor: *ElasticityTensor::isotropic(1.0, 0.3).voigt(),
            void_scale: 1e-9,
            solver: MgcgConfig {
                tol: 1e-9,
                ..Default::default()
            },
        }
    }

    #[test]
    fn cleanup_removes_floating_material() {
        let grid = Grid3::new(16, 8, 8, 1.0 / 8.0);
        let problem = beam_problem(&grid);
        let mut voxels = FineVoxelGrid::empty(grid.clone());
        // load-bearing bar along x in the middle of the cross-section
        for i in 0..16 {
            for j in 2..6 {
                for k in 2..6 {
                    voxels.data[grid.elem_index(i, j, k)] = 1;
                }
            }
        }
        let mut bar_only = voxels.clone();
        // floating blob with a clear one-voxel gap to the bar
        for i in 4..6 {
            for j in 7..8 {
                for k in 7..8 {
                    voxels.data[grid.elem_index(i, j, k)] = 1;
                }
            }
        }
        let _ = &bar_only;
        let mut warm = vec![0.0; grid.num_nodes() * 3];
        let j_before = problem.solve(&voxels.data, &mut warm).unwrap();

        let report = energy_cleanup(&mut voxels, &problem, &CleanupConfig::default()).unwrap();
        assert!(report.converged);
        for i in 4..6 {
            for j in 7..8 {
                for k in 7..8 {
                    assert_eq!(
                        voxels.data[grid.elem_index(i, j, k)],
                        0,
                        "floating blob voxel survived"
                    );
                }
            }
        }
        assert!(
            (report.compliance - j_before).abs() / j_before < 0.005,
            "J changed by more than 0.5%: {} -> {}",
            j_before,
            report.compliance
        );
        // volume non-increasing across iterations
        for w in report.volume_fractions.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn cleanup_fixed_point_on_uniform_tension() {
        // solid block under uniform axial tension: every voxel carries the
        // same energy, so the first pass removes nothing
        let grid = Grid3::new(8, 4, 4, 0.25);
        let mut boundary = BoundarySpec::new(&grid, 3);
        for k in 0..=grid.nz {
            for j in 0..=grid.ny {
                let n = grid.node_index(0, j, k);
                for c in 0..3 {
                    boundary.fix(n, c);
                }
            }
        }
        for k in 0..=grid.nz {
            for j in 0..=grid.ny {
                boundary.add_load(grid.node_index(grid.nx, j, k), 0, 1.0);
            }
        }
        let problem = FineProblem {
            grid: grid.clone(),
            boundary,
            stiff_tensor: *ElasticityTensor::isotropic(1.0, 0.3).voigt(),
            void_scale: 1e-9,
            solver: MgcgConfig {
                tol: 1e-9,
                ..Default::default()
            },
        };
        let mut voxels = FineVoxelGrid::empty(grid.clone());
        voxels.data.fill(1);
        let report = energy_cleanup(&mut voxels, &problem, &CleanupConfig::default()).unwrap();
        assert!(report.converged);
        assert_eq!(report.iterations, 1);
        assert!(voxels.data.iter().all(|&v| v == 1));
    }
}
