//! Structured box grids of hexahedral elements.
//!
//! Elements and nodes are indexed lexicographically, x fastest:
//! `elem(i,j,k) = i + nx*(j + ny*k)` and `node(i,j,k) = i + (nx+1)*(j + (ny+1)*k)`.
//! Local node `a` of an element is the corner `(i+dx, j+dy, k+dz)` with
//! `a = dx + 2*dy + 4*dz`.

use serde::{Deserialize, Serialize};

/// A structured grid of `nx * ny * nz` cubic elements with edge length `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub h: f64,
}

impl Grid3 {
    pub fn new(nx: usize, ny: usize, nz: usize, h: f64) -> Self {
        assert!(nx >= 1 && ny >= 1 && nz >= 1, "grid dims must be >= 1");
        assert!(h > 0.0, "element size must be positive");
        Self { nx, ny, nz, h }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    pub fn num_elements(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn num_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1) * (self.nz + 1)
    }

    #[inline]
    pub fn elem_index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny && k < self.nz);
        i + self.nx * (j + self.ny * k)
    }

    #[inline]
    pub fn elem_coords(&self, e: usize) -> (usize, usize, usize) {
        let i = e % self.nx;
        let j = (e / self.nx) % self.ny;
        let k = e / (self.nx * self.ny);
        (i, j, k)
    }

    #[inline]
    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i <= self.nx && j <= self.ny && k <= self.nz);
        i + (self.nx + 1) * (j + (self.ny + 1) * k)
    }

    /// The eight node indices of element `e`, in local order `a = dx + 2*dy + 4*dz`.
    #[inline]
    pub fn elem_nodes(&self, e: usize) -> [usize; 8] {
        let (i, j, k) = self.elem_coords(e);
        let mut out = [0usize; 8];
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    out[dx + 2 * dy + 4 * dz] = self.node_index(i + dx, j + dy, k + dz);
                }
            }
        }
        out
    }

    /// Center of element `e` in physical coordinates.
    #[inline]
    pub fn elem_center(&self, e: usize) -> [f64; 3] {
        let (i, j, k) = self.elem_coords(e);
        [
            (i as f64 + 0.5) * self.h,
            (j as f64 + 0.5) * self.h,
            (k as f64 + 0.5) * self.h,
        ]
    }

    pub fn elem_volume(&self) -> f64 {
        self.h * self.h * self.h
    }

    /// Total domain volume.
    pub fn volume(&self) -> f64 {
        self.num_elements() as f64 * self.elem_volume()
    }

    /// Face-adjacent (6-connected) neighbors of element `e`.
    pub fn face_neighbors(&self, e: usize) -> impl Iterator<Item = usize> + '_ {
        let (i, j, k) = self.elem_coords(e);
        let mut out: [Option<usize>; 6] = [None; 6];
        if i > 0 {
            out[0] = Some(self.elem_index(i - 1, j, k));
        }
        if i + 1 < self.nx {
            out[1] = Some(self.elem_index(i + 1, j, k));
        }
        if j > 0 {
            out[2] = Some(self.elem_index(i, j - 1, k));
        }
        if j + 1 < self.ny {
            out[3] = Some(self.elem_index(i, j + 1, k));
        }
        if k > 0 {
            out[4] = Some(self.elem_index(i, j, k - 1));
        }
        if k + 1 < self.nz {
            out[5] = Some(self.elem_index(i, j, k + 1));
        }
        out.into_iter().flatten()
    }

    /// All interior faces as element pairs; each face appears exactly once.
    pub fn interior_faces(&self) -> Vec<(usize, usize)> {
        let mut faces =
            Vec::with_capacity(3 * self.num_elements() - self.nx * self.ny - self.ny * self.nz);
        for k in 0..self.nz {
            for j in 0..self.ny {
                for i in 0..self.nx {
                    let e = self.elem_index(i, j, k);
                    if i + 1 < self.nx {
                        faces.push((e, self.elem_index(i + 1, j, k)));
                    }
                    if j + 1 < self.ny {
                        faces.push((e, self.elem_index(i, j + 1, k)));
                    }
                    if k + 1 < self.nz {
                        faces.push((e, self.elem_index(i, j, k + 1)));
                    }
                }
            }
        }
        faces
    }

    /// Grid with all dims halved. Requires even dims.
    pub fn coarsened(&self) -> Option<Grid3> {
        if self.nx % 2 == 0 && self.ny % 2 == 0 && self.nz % 2 == 0 && self.num_elements() > 1 {
            Some(Grid3::new(
                self.nx / 2,
                self.ny / 2,
                self.nz / 2,
                2.0 * self.h,
            ))
        } else {
            None
        }
    }

    /// Grid refined by an integer factor per axis.
    pub fn refined(&self, factor: usize) -> Grid3 {
        assert!(factor >= 1);
        Grid3::new(
            self.nx * factor,
            self.ny * factor,
            self.nz * factor,
            self.h / factor as f64,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_round_trip() {
        let g = Grid3::new(3, 4, 5, 0.5);
        for e in 0..g.num_elements() {
            let (i, j, k) = g.elem_coords(e);
            assert_eq!(g.elem_index(i, j, k), e);
        }
    }

    #[test]
    fn interior_face_count() {
        let g = Grid3::new(3, 2, 2, 1.0);
        // (nx-1)*ny*nz + nx*(ny-1)*nz + nx*ny*(nz-1)
        let expected = 2 * 2 * 2 + 3 * 1 * 2 + 3 * 2 * 1;
        assert_eq!(g.interior_faces().len(), expected);
        // each face exactly once
        let faces = g.interior_faces();
        let mut seen = std::collections::HashSet::new();
        for &(a, b) in &faces {
            assert!(seen.insert((a.min(b), a.max(b))));
        }
    }

    #[test]
    fn neighbors_symmetric() {
        let g = Grid3::new(4, 3, 2, 1.0);
        for e in 0..g.num_elements() {
            for n in g.face_neighbors(e) {
                assert!(g.face_neighbors(n).any(|m| m == e));
            }
        }
    }

    #[test]
    fn coarsening() {
        let g = Grid3::new(8, 4, 6, 0.25);
        let c = g.coarsened().unwrap();
        assert_eq!(c.dims(), (4, 2, 3));
        assert_eq!(c.h, 0.5);
        assert!(c.coarsened().is_none()); // 3 is odd
    }
}
