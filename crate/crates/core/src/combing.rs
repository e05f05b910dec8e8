//! Single-scale width conversion and frame-field combing.
//!
//! The optimizer's hierarchical layer widths are first converted into
//! single-scale widths via the relative layer contributions, then the
//! 6-direction frame field is relabeled element by element (over the 24
//! proper octahedral rotations) into three globally consistent 1-direction
//! fields by density-priority front propagation.

use crate::error::{Error, Result};
use crate::grid::Grid3;
use crate::material::{frame_from_angles, EulerAngles};
use nalgebra::{Matrix3, Vector3};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Relative contribution of each layer to the total material.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerContributions {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

impl LayerContributions {
    pub fn as_array(&self) -> [f64; 3] {
        [self.p1, self.p2, self.p3]
    }
}

/// Contributions from the physical (hierarchical) widths:
/// `p1 = w1/rho, p2 = (1-w1) w2/rho, p3 = (1-w1)(1-w2) w3/rho`.
/// Elements with vanishing density get zero contributions.
pub fn layer_contributions(widths: &[f64; 3], rho: f64) -> LayerContributions {
    if rho <= 1e-12 {
        return LayerContributions {
            p1: 0.0,
            p2: 0.0,
            p3: 0.0,
        };
    }
    let [w1, w2, w3] = *widths;
    LayerContributions {
        p1: w1 / rho,
        p2: (1.0 - w1) * w2 / rho,
        p3: (1.0 - w1) * (1.0 - w2) * w3 / rho,
    }
}

/// Single-scale widths `w_i = alpha * p_i`, with `alpha` the smallest
/// positive root of `rho = 1 - prod(1 - alpha p_i)`. If no admissible root
/// keeps all widths in [0,1], `alpha` is clamped to the largest admissible
/// value.
pub fn single_scale_widths(p: &LayerContributions, rho: f64) -> (f64, [f64; 3]) {
    let parr = p.as_array();
    if rho <= 1e-12 || parr.iter().all(|&v| v == 0.0) {
        return (0.0, [0.0; 3]);
    }
    let pmax = parr.iter().cloned().fold(0.0, f64::max);
    let alpha_max = 1.0 / pmax;
    let f = |a: f64| 1.0 - (1.0 - a * parr[0]) * (1.0 - a * parr[1]) * (1.0 - a * parr[2]);
    // rho(alpha) rises monotonically from 0 to f(alpha_max) = 1 on the
    // admissible interval, so bisection is safe
    let (mut lo, mut hi) = (0.0f64, alpha_max);
    if f(alpha_max) < rho - 1e-12 {
        log::warn!("no admissible root for single-scale widths (rho = {rho}); clamping");
        let w = std::array::from_fn(|i| (alpha_max * parr[i]).min(1.0));
        return (alpha_max, w);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < rho {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * alpha_max.max(1.0) {
            break;
        }
    }
    let alpha = 0.5 * (lo + hi);
    (alpha, std::array::from_fn(|i| (alpha * parr[i]).clamp(0.0, 1.0)))
}

/// The 24 proper rotations of the octahedral group as signed permutation
/// matrices, in a fixed enumeration order (identity first).
pub fn proper_rotations_24() -> Vec<Matrix3<f64>> {
    let mut out = Vec::with_capacity(24);
    let perms = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    for perm in perms {
        for signs in 0..8u8 {
            let mut m = Matrix3::<f64>::zeros();
            for (col, &row) in perm.iter().enumerate() {
                let s = if signs >> col & 1 == 0 { 1.0 } else { -1.0 };
                m[(row, col)] = s;
            }
            if m.determinant() > 0.0 {
                out.push(m);
            }
        }
    }
    // identity first for deterministic tie-breaking
    out.sort_by(|a, b| {
        let da = (a - Matrix3::identity()).norm();
        let db = (b - Matrix3::identity()).norm();
        da.partial_cmp(&db).unwrap()
    });
    out
}

/// Per-element combed frame and widths.
#[derive(Debug, Clone)]
pub struct CombedField {
    pub grid: Grid3,
    /// Column-major frames, one per element; columns are the combed normals.
    pub frames: Vec<Matrix3<f64>>,
    pub widths: Vec<[f64; 3]>,
}

impl CombedField {
    pub fn normal(&self, e: usize, layer: usize) -> Vector3<f64> {
        self.frames[e].column(layer).into_owned()
    }
}

/// Orientation angle between two proper rotations: `psi` from the trace of
/// the relative rotation.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    (((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0)).acos()
}

/// Find the best relabeling of `candidate` against visited neighbor frames:
/// minimizes the summed orientation angle over the 24 proper relabelings.
/// Returns the relabeled frame and the column permutation applied.
pub fn best_frame_match(
    candidate: &Matrix3<f64>,
    neighbors: &[Matrix3<f64>],
    rotations: &[Matrix3<f64>],
) -> (Matrix3<f64>, [usize; 3]) {
    assert!(!neighbors.is_empty());
    let mut best_j = 0;
    let mut best_score = f64::INFINITY;
    for (j, r) in rotations.iter().enumerate() {
        let fj = candidate * r;
        let mut score = 0.0;
        for nb in neighbors {
            score += rotation_angle(&(nb.transpose() * fj));
        }
        if score < best_score - 1e-15 {
            best_score = score;
            best_j = j;
        }
    }
    let r = &rotations[best_j];
    let relabeled = candidate * r;
    // column k of the relabeled frame is +-column perm[k] of the candidate
    let perm = std::array::from_fn(|k| {
        (0..3)
            .find(|&row| r[(row, k)] != 0.0)
            .expect("signed permutation has one entry per column")
    });
    (relabeled, perm)
}

/// Canonicalize a frame from Euler angles into a proper rotation matrix
/// (the trigonometric normal formulas yield `det = -1`; direction fields are
/// sign-symmetric, so the third normal's sign is free).
pub fn proper_frame_from_angles(angles: &EulerAngles) -> Matrix3<f64> {
    let f = frame_from_angles(angles);
    let mut m = f.matrix();
    if m.determinant() < 0.0 {
        let flipped = -m.column(2).into_owned();
        m.set_column(2, &flipped);
    }
    m
}

#[derive(PartialEq)]
struct QueueEntry {
    priority: f64,
    element: usize,
}

impl Eq for QueueEntry {}

impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert so the smallest key pops first,
        // ties broken by the lower element index
        other
            .priority
            .total_cmp(&self.priority)
            .then_with(|| other.element.cmp(&self.element))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Statistics of a combing pass, used by diagnostics and acceptance checks.
#[derive(Debug, Clone)]
pub struct CombReport {
    pub seed: usize,
    /// matched rotation angle per element (0 for the seed)
    pub matched_angles: Vec<f64>,
}

/// Comb the frame field into three globally consistent 1-direction fields by
/// density-priority front propagation from a seed element.
///
/// Elements pop in order of `|0.5 - rho|` (ties by index) but only once a
/// face neighbor has been visited, so the traversal stays contiguous.
pub fn comb_field(
    grid: &Grid3,
    frames: &[Matrix3<f64>],
    widths: &[[f64; 3]],
    rho: &[f64],
) -> Result<(CombedField, CombReport)> {
    let n = grid.num_elements();
    assert_eq!(frames.len(), n);
    assert_eq!(widths.len(), n);
    assert_eq!(rho.len(), n);
    let rotations = proper_rotations_24();

    // seed: all single-scale widths away from 0 and 1; among admissible
    // elements take the most generic one (max-min margin), ties by index
    let margin = |e: usize| -> f64 {
        widths[e]
            .iter()
            .map(|&w| w.min(1.0 - w))
            .fold(f64::INFINITY, f64::min)
    };
    let mut seed = None;
    let mut best_margin = -f64::INFINITY;
    for e in 0..n {
        let m = margin(e);
        let admissible = widths[e].iter().all(|&w| (0.05..=0.95).contains(&w));
        if admissible && m > best_margin {
            best_margin = m;
            seed = Some(e);
        }
    }
    let seed = match seed {
        Some(s) => s,
        None => {
            log::warn!("{}", Error::NoSeed);
            // fallback: maximize the same margin over all elements
            let mut best = 0;
            let mut bm = -f64::INFINITY;
            for e in 0..n {
                let m = margin(e);
                if m > bm {
                    bm = m;
                    best = e;
                }
            }
            best
        }
    };

    let mut out_frames = vec![Matrix3::<f64>::identity(); n];
    let mut out_widths = vec![[0.0f64; 3]; n];
    let mut matched_angles = vec![0.0f64; n];
    let mut visited = vec![false; n];
    let mut queued = vec![false; n];
    let mut heap = BinaryHeap::new();

    out_frames[seed] = frames[seed];
    out_widths[seed] = widths[seed];
    visited[seed] = true;
    queued[seed] = true;
    for nb in grid.face_neighbors(seed) {
        heap.push(QueueEntry {
            priority: (0.5 - rho[nb]).abs(),
            element: nb,
        });
        queued[nb] = true;
    }

    let mut neighbor_frames: Vec<Matrix3<f64>> = Vec::with_capacity(6);
    while let Some(QueueEntry { element: e, .. }) = heap.pop() {
        debug_assert!(!visited[e]);
        neighbor_frames.clear();
        for nb in grid.face_neighbors(e) {
            if visited[nb] {
                neighbor_frames.push(out_frames[nb]);
            }
        }
        assert!(
            !neighbor_frames.is_empty(),
            "front propagation popped an element without visited neighbors"
        );
        let (frame, perm) = best_frame_match(&frames[e], &neighbor_frames, &rotations);
        let mut score = 0.0;
        for nb in &neighbor_frames {
            score += rotation_angle(&(nb.transpose() * frame));
        }
        matched_angles[e] = score / neighbor_frames.len() as f64;
        out_frames[e] = frame;
        out_widths[e] = std::array::from_fn(|k| widths[e][perm[k]]);
        visited[e] = true;
        for nb in grid.face_neighbors(e) {
            if !queued[nb] {
                heap.push(QueueEntry {
                    priority: (0.5 - rho[nb]).abs(),
                    element: nb,
                });
                queued[nb] = true;
            }
        }
    }
    debug_assert!(visited.iter().all(|&v| v));

    Ok((
        CombedField {
            grid: grid.clone(),
            frames: out_frames,
            widths: out_widths,
        },
        CombReport {
            seed,
            matched_angles,
        },
    ))
}

/// Faces whose both elements are mid-density and whose matched relative
/// rotation exceeds pi/4 suggest a direction-field singularity crossing the
/// structure; surfaced as a count, not an error.
pub fn count_misaligned_faces(combed: &CombedField, rho: &[f64]) -> usize {
    let mut count = 0;
    for &(a, b) in &combed.grid.interior_faces() {
        if (0.05..=0.95).contains(&rho[a]) && (0.05..=0.95).contains(&rho[b]) {
            let psi = rotation_angle(&(combed.frames[a].transpose() * combed.frames[b]));
            if psi > std::f64::consts::FRAC_PI_4 {
                count += 1;
            }
        }
    }
    count
}
