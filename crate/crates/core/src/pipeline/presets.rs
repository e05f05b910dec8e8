//! The four benchmark problems: Michell cantilever, Michell's torsion
//! sphere, electrical mast (quarter model) and the L-shaped beam.
//!
//! All domains use a reference length L = 1. Loads are distributed patch or
//! line loads whose resultant magnitude is 1.

use crate::error::{Error, Result};
use crate::fem::BoundarySpec;
use crate::grid::Grid3;
use crate::material::MaterialConstants;
use crate::optimize::OptimizationProblem;

pub const PRESET_NAMES: [&str; 4] = [
    "michell_cantilever",
    "torsion_sphere",
    "electrical_mast",
    "l_beam",
];

/// A fully specified problem geometry on a concrete grid.
pub struct ProblemPreset {
    pub name: String,
    pub problem: OptimizationProblem,
    /// domain extents in units of L
    pub aspect: (usize, usize, usize),
}

/// Axis-aligned rectangle on a grid face, in physical coordinates.
#[derive(Debug, Clone, Copy)]
struct Rect {
    u0: f64,
    u1: f64,
    v0: f64,
    v1: f64,
}

impl Rect {
    fn overlap_1d(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
        (a1.min(b1) - a0.max(b0)).max(0.0)
    }
}

/// Domain faces that carry loads in the presets.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Face {
    XMax,
    ZMax,
}

/// Distribute a uniform pressure over a rectangular patch of a domain face
/// as consistent nodal loads (per face element, the overlap area splits
/// equally over its four nodes).
fn distribute_patch_load(
    grid: &Grid3,
    bc: &mut BoundarySpec,
    face: Face,
    rect: Rect,
    magnitude: f64,
    component: usize,
    sign: f64,
) {
    let h = grid.h;
    // iterate face elements; (u,v) are in-plane coordinates
    let (nu, nv) = match face {
        Face::XMax => (grid.ny, grid.nz),
        Face::ZMax => (grid.nx, grid.ny),
    };
    for v in 0..nv {
        for u in 0..nu {
            let (u0, u1) = (u as f64 * h, (u + 1) as f64 * h);
            let (v0, v1) = (v as f64 * h, (v + 1) as f64 * h);
            let area = Rect::overlap_1d(u0, u1, rect.u0, rect.u1)
                * Rect::overlap_1d(v0, v1, rect.v0, rect.v1);
            if area <= 0.0 {
                continue;
            }
            let load = magnitude * area / 4.0 * sign;
            for dv in 0..2 {
                for du in 0..2 {
                    let node = match face {
                        Face::XMax => grid.node_index(grid.nx, u + du, v + dv),
                        Face::ZMax => grid.node_index(u + du, v + dv, grid.nz),
                    };
                    bc.add_load(node, component, load);
                }
            }
        }
    }
}

fn empty_masks(grid: &Grid3) -> (Vec<bool>, Vec<bool>) {
    (
        vec![false; grid.num_elements()],
        vec![false; grid.num_elements()],
    )
}

fn check_aspect(dims: (usize, usize, usize), aspect: (usize, usize, usize)) -> Result<f64> {
    let (nx, ny, nz) = dims;
    let (ax, ay, az) = aspect;
    if nx % ax != 0 || ny % ay != 0 || nz % az != 0 {
        return Err(Error::Config(format!(
            "dims {dims:?} not divisible by the domain aspect {aspect:?}"
        )));
    }
    let base = nx / ax;
    if ny / ay != base || nz / az != base {
        return Err(Error::Config(format!(
            "dims {dims:?} must be proportional to the domain aspect {aspect:?}"
        )));
    }
    Ok(1.0 / base as f64)
}

/// Michell cantilever: domain 2L x L x L, clamped at x = 0, loaded downward
/// over an L/6 x L/6 patch centered on the free face; the patch elements are
/// solid to a depth of L/24.
fn michell_cantilever(dims: (usize, usize, usize), mat: MaterialConstants) -> Result<ProblemPreset> {
    let aspect = (2usize, 1usize, 1usize);
    let h = check_aspect(dims, aspect)?;
    let grid = Grid3::new(dims.0, dims.1, dims.2, h);
    let mut bc = BoundarySpec::new(&grid, 3);
    for k in 0..=grid.nz {
        for j in 0..=grid.ny {
            let n = grid.node_index(0, j, k);
            for c in 0..3 {
                bc.fix(n, c);
            }
        }
    }
    let patch = Rect {
        u0: 0.5 - 1.0 / 12.0,
        u1: 0.5 + 1.0 / 12.0,
        v0: 0.5 - 1.0 / 12.0,
        v1: 0.5 + 1.0 / 12.0,
    };
    distribute_patch_load(&grid, &mut bc, Face::XMax, patch, 36.0, 2, -1.0);
    let (mut solid, void) = empty_masks(&grid);
    let depth = 1.0 / 24.0;
    for e in 0..grid.num_elements() {
        let c = grid.elem_center(e);
        if c[0] > 2.0 - depth
            && c[1] > patch.u0
            && c[1] < patch.u1
            && c[2] > patch.v0
            && c[2] < patch.v1
        {
            solid[e] = true;
        }
    }
    Ok(ProblemPreset {
        name: "michell_cantilever".into(),
        problem: OptimizationProblem {
            grid,
            boundary: bc,
            passive_solid: solid,
            passive_void: void,
            material: mat,
        },
        aspect,
    })
}

/// Michell's torsion sphere: cube domain; a centered L/12 x L/12 square is
/// clamped at x = 0 and twisted at x = L by a circulating line load of
/// magnitude 3/L along the square's boundary. Solid elements back both
/// squares one element deep.
fn torsion_sphere(dims: (usize, usize, usize), mat: MaterialConstants) -> Result<ProblemPreset> {
    let aspect = (1usize, 1usize, 1usize);
    let h = check_aspect(dims, aspect)?;
    if dims.0 % 24 != 0 {
        return Err(Error::Config(
            "torsion preset needs dims divisible by 24 so the load square lies on grid lines"
                .into(),
        ));
    }
    let grid = Grid3::new(dims.0, dims.1, dims.2, h);
    let mut bc = BoundarySpec::new(&grid, 3);
    let half = 1.0 / 24.0;
    let (c0, c1) = (0.5 - half, 0.5 + half);
    // clamp the support square at x = 0
    for k in 0..=grid.nz {
        for j in 0..=grid.ny {
            let (y, z) = (j as f64 * h, k as f64 * h);
            if (c0 - 1e-12..=c1 + 1e-12).contains(&y) && (c0 - 1e-12..=c1 + 1e-12).contains(&z) {
                let n = grid.node_index(0, j, k);
                for c in 0..3 {
                    bc.fix(n, c);
                }
            }
        }
    }
    // circulating line load on the boundary of the square at x = L:
    // (edge, force component, sign) chosen to produce a torque about +x
    let q = 3.0;
    for j in 0..grid.ny {
        for k in 0..=grid.nz {
            // horizontal edges z = c0 (force -y) and z = c1 (force +y)
            let z = k as f64 * h;
            if (z - c0).abs() < 1e-12 || (z - c1).abs() < 1e-12 {
                let (y0, y1) = (j as f64 * h, (j + 1) as f64 * h);
                let len = Rect::overlap_1d(y0, y1, c0, c1);
                if len > 0.0 {
                    let sign = if (z - c1).abs() < 1e-12 { 1.0 } else { -1.0 };
                    let f = q * len / 2.0 * sign;
                    bc.add_load(grid.node_index(grid.nx, j, k), 1, f);
                    bc.add_load(grid.node_index(grid.nx, j + 1, k), 1, f);
                }
            }
        }
    }
    for k in 0..grid.nz {
        for j in 0..=grid.ny {
            // vertical edges y = c0 (force +z) and y = c1 (force -z)
            let y = j as f64 * h;
            if (y - c0).abs() < 1e-12 || (y - c1).abs() < 1e-12 {
                let (z0, z1) = (k as f64 * h, (k + 1) as f64 * h);
                let len = Rect::overlap_1d(z0, z1, c0, c1);
                if len > 0.0 {
                    let sign = if (y - c0).abs() < 1e-12 { 1.0 } else { -1.0 };
                    let f = q * len / 2.0 * sign;
                    bc.add_load(grid.node_index(grid.nx, j, k), 2, f);
                    bc.add_load(grid.node_index(grid.nx, j, k + 1), 2, f);
                }
            }
        }
    }
    let (mut solid, void) = empty_masks(&grid);
    for e in 0..grid.num_elements() {
        let c = grid.elem_center(e);
        let in_square = c[1] > c0 && c[1] < c1 && c[2] > c0 && c[2] < c1;
        if in_square && (c[0] < h || c[0] > 1.0 - h) {
            solid[e] = true;
        }
    }
    Ok(ProblemPreset {
        name: "torsion_sphere".into(),
        problem: OptimizationProblem {
            grid,
            boundary: bc,
            passive_solid: solid,
            passive_void: void,
            material: mat,
        },
        aspect,
    })
}

/// Electrical mast, quarter model: domain L x L x 3L with symmetry planes at
/// x = 0 and y = 0. The tower axis passes through the symmetry corner; the
/// top face carries a downward L/8 x L/8 patch load there, and the leg at
/// the outer bottom corner (L/8 x L/8) is clamped.
fn electrical_mast(dims: (usize, usize, usize), mat: MaterialConstants) -> Result<ProblemPreset> {
    let aspect = (1usize, 1usize, 3usize);
    let h = check_aspect(dims, aspect)?;
    let grid = Grid3::new(dims.0, dims.1, dims.2, h);
    let mut bc = BoundarySpec::new(&grid, 3);
    // symmetry: no normal displacement through the two cut planes
    for k in 0..=grid.nz {
        for j in 0..=grid.ny {
            bc.fix(grid.node_index(0, j, k), 0);
        }
    }
    for k in 0..=grid.nz {
        for i in 0..=grid.nx {
            bc.fix(grid.node_index(i, 0, k), 1);
        }
    }
    // clamped leg footprint at the outer corner of the base
    let leg = 1.0 / 8.0;
    for j in 0..=grid.ny {
        for i in 0..=grid.nx {
            let (x, y) = (i as f64 * h, j as f64 * h);
            if x >= 1.0 - leg - 1e-12 && y >= 1.0 - leg - 1e-12 {
                let n = grid.node_index(i, j, 0);
                for c in 0..3 {
                    bc.fix(n, c);
                }
            }
        }
    }
    let patch = Rect {
        u0: 0.0,
        u1: 1.0 / 8.0,
        v0: 0.0,
        v1: 1.0 / 8.0,
    };
    distribute_patch_load(&grid, &mut bc, Face::ZMax, patch, 64.0, 2, -1.0);
    let (solid, void) = empty_masks(&grid);
    Ok(ProblemPreset {
        name: "electrical_mast".into(),
        problem: OptimizationProblem {
            grid,
            boundary: bc,
            passive_solid: solid,
            passive_void: void,
            material: mat,
        },
        aspect,
    })
}

/// L-shaped beam: domain L x L x L/2 with a passive void block cut from the
/// region x > 0.4L, y > 0.4L. The top of the vertical arm is clamped and a
/// downward L/6 x L/6 patch loads the tip face of the horizontal arm.
fn l_beam(dims: (usize, usize, usize), mat: MaterialConstants) -> Result<ProblemPreset> {
    let aspect = (2usize, 2usize, 1usize);
    let h = check_aspect(dims, aspect)?;
    // aspect encoded as 2:2:1 so that h = 2/nx; rescale to an L x L x L/2 box
    let grid = Grid3::new(dims.0, dims.1, dims.2, h / 2.0);
    let arm = 0.4;
    let mut bc = BoundarySpec::new(&grid, 3);
    // clamp the top face of the vertical arm (y = L, x <= 0.4 L)
    for k in 0..=grid.nz {
        for i in 0..=grid.nx {
            let x = i as f64 * grid.h;
            if x <= arm + 1e-12 {
                let n = grid.node_index(i, grid.ny, k);
                for c in 0..3 {
                    bc.fix(n, c);
                }
            }
        }
    }
    // downward patch load on the tip face x = L of the horizontal arm,
    // hugging the top edge of the arm and centered in z
    let patch_w = 1.0 / 6.0;
    let rect = Rect {
        u0: arm - patch_w,
        u1: arm,
        v0: 0.25 - patch_w / 2.0,
        v1: 0.25 + patch_w / 2.0,
    };
    distribute_patch_load(&grid, &mut bc, Face::XMax, rect, 36.0, 1, -1.0);
    let (mut solid, mut void) = empty_masks(&grid);
    for e in 0..grid.num_elements() {
        let c = grid.elem_center(e);
        if c[0] > arm && c[1] > arm {
            void[e] = true;
        }
        // solid patch behind the load, one L/24 deep
        if c[0] > 1.0 - 1.0 / 24.0
            && c[1] > rect.u0
            && c[1] < rect.u1
            && c[2] > rect.v0
            && c[2] < rect.v1
        {
            solid[e] = true;
        }
    }
    Ok(ProblemPreset {
        name: "l_beam".into(),
        problem: OptimizationProblem {
            grid,
            boundary: bc,
            passive_solid: solid,
            passive_void: void,
            material: mat,
        },
        aspect,
    })
}

/// Build a preset by name on the given coarse grid dims.
pub fn load_preset(
    name: &str,
    dims: (usize, usize, usize),
    mat: MaterialConstants,
) -> Result<ProblemPreset> {
    let preset = match name {
        "michell_cantilever" => michell_cantilever(dims, mat)?,
        "torsion_sphere" => torsion_sphere(dims, mat)?,
        "electrical_mast" => electrical_mast(dims, mat)?,
        "l_beam" => l_beam(dims, mat)?,
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    preset.problem.validate()?;
    Ok(preset)
}
