//! Element-field regularization: density filtering, width projection with
//! continuation, and the face-based angle-regularization objective.

use crate::grid::Grid3;
use crate::material::{frame_from_angles, frame_gradients, EulerAngles};

/// One step of the projection continuation: sharpness, threshold and how many
/// design iterations to hold them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationStep {
    pub beta: f64,
    pub eta: f64,
    pub iterations: usize,
}

/// Ordered continuation schedule for the width projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationSchedule {
    pub steps: Vec<ContinuationStep>,
}

impl ContinuationSchedule {
    /// Eight steps of 50 iterations: eta ramps up to 0.05, then beta sharpens.
    pub fn standard() -> Self {
        let pairs = [
            (8.0, 0.001),
            (8.0, 0.01),
            (8.0, 0.02),
            (8.0, 0.035),
            (8.0, 0.05),
            (16.0, 0.05),
            (32.0, 0.05),
            (64.0, 0.05),
        ];
        Self {
            steps: pairs
                .iter()
                .map(|&(beta, eta)| ContinuationStep {
                    beta,
                    eta,
                    iterations: 50,
                })
                .collect(),
        }
    }

    pub fn total_iterations(&self) -> usize {
        self.steps.iter().map(|s| s.iterations).sum()
    }

    /// Step active at a zero-based iteration number (clamped to the last).
    pub fn step_at(&self, iteration: usize) -> ContinuationStep {
        let mut acc = 0;
        for s in &self.steps {
            acc += s.iterations;
            if iteration < acc {
                return *s;
            }
        }
        *self.steps.last().expect("schedule has at least one step")
    }

    pub fn last(&self) -> ContinuationStep {
        *self.steps.last().expect("schedule has at least one step")
    }
}

/// Linear cone-weighted density filter on a structured grid.
///
/// Weights are `max(0, R - dist)` between element centers, renormalized over
/// the neighbors that exist inside the domain.
pub struct DensityFilter {
    grid: Grid3,
    /// center-to-center offsets (di,dj,dk) with their cone weight
    stencil: Vec<(i64, i64, i64, f64)>,
    /// per-element weight normalization
    norm: Vec<f64>,
}

impl DensityFilter {
    pub fn new(grid: &Grid3, radius: f64) -> Self {
        assert!(radius > 0.0, "filter radius must be positive");
        let reach = (radius / grid.h).ceil() as i64;
        let mut stencil = Vec::new();
        for dk in -reach..=reach {
            for dj in -reach..=reach {
                for di in -reach..=reach {
                    let dist = grid.h * ((di * di + dj * dj + dk * dk) as f64).sqrt();
                    let w = radius - dist;
                    if w > 0.0 {
                        stencil.push((di, dj, dk, w));
                    }
                }
            }
        }
        let mut norm = vec![0.0; grid.num_elements()];
        let (nx, ny, nz) = grid.dims();
        for e in 0..grid.num_elements() {
            let (i, j, k) = grid.elem_coords(e);
            let mut sum = 0.0;
            for &(di, dj, dk, w) in &stencil {
                let (ii, jj, kk) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
                if ii >= 0
                    && jj >= 0
                    && kk >= 0
                    && ii < nx as i64
                    && jj < ny as i64
                    && kk < nz as i64
                {
                    sum += w;
                }
            }
            norm[e] = sum;
        }
        Self {
            grid: grid.clone(),
            stencil,
            norm,
        }
    }

    fn stencil_sum(&self, field: &[f64], e: usize, weight_by_target_norm: bool) -> f64 {
        let (nx, ny, nz) = self.grid.dims();
        let (i, j, k) = self.grid.elem_coords(e);
        let mut acc = 0.0;
        for &(di, dj, dk, w) in &self.stencil {
            let (ii, jj, kk) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
            if ii >= 0 && jj >= 0 && kk >= 0 && ii < nx as i64 && jj < ny as i64 && kk < nz as i64 {
                let n = self
                    .grid
                    .elem_index(ii as usize, jj as usize, kk as usize);
                let scale = if weight_by_target_norm {
                    self.norm[n]
                } else {
                    1.0
                };
                acc += w * field[n] / scale;
            }
        }
        acc
    }

    /// Filtered field: `(Fx)_i = sum_j w_ij x_j / sum_j w_ij`.
    pub fn apply(&self, field: &[f64]) -> Vec<f64> {
        assert_eq!(field.len(), self.grid.num_elements());
        (0..field.len())
            .map(|e| self.stencil_sum(field, e, false) / self.norm[e])
            .collect()
    }

    /// Adjoint operator, used to chain sensitivities back to raw variables:
    /// `(F^T y)_j = sum_i w_ij y_i / sum_k w_ik`.
    pub fn apply_adjoint(&self, field: &[f64]) -> Vec<f64> {
        assert_eq!(field.len(), self.grid.num_elements());
        // The stencil is symmetric in (i,j); only the normalization moves.
        (0..field.len())
            .map(|e| self.stencil_sum(field, e, true))
            .collect()
    }
}

/// Smoothed Heaviside projection with sharpness `beta` and threshold `eta`.
///
/// `H(0) = 0` and `H(1) = 1` exactly for any parameters.
pub fn smoothed_heaviside(beta: f64, eta: f64, x: f64) -> f64 {
    let denom = (beta * eta).tanh() + (beta * (1.0 - eta)).tanh();
    ((beta * eta).tanh() + (beta * (x - eta)).tanh()) / denom
}

/// Derivative of [`smoothed_heaviside`] w.r.t. `x`.
pub fn smoothed_heaviside_deriv(beta: f64, eta: f64, x: f64) -> f64 {
    let denom = (beta * eta).tanh() + (beta * (1.0 - eta)).tanh();
    let t = (beta * (x - eta)).tanh();
    beta * (1.0 - t * t) / denom
}

/// Projection linking filtered widths to physical widths: pushes values
/// toward {0} + [eta, 1-eta] + {1}.
pub fn width_projection(mu_tilde: f64, beta: f64, eta: f64) -> f64 {
    let h_lo = smoothed_heaviside(beta, eta, mu_tilde);
    let h_hi = smoothed_heaviside(beta, 1.0 - eta, mu_tilde);
    mu_tilde * (1.0 - h_hi) * h_lo + ((beta - 1.0) / beta + mu_tilde / beta) * h_hi
}

/// Derivative of [`width_projection`] w.r.t. `mu_tilde`.
pub fn width_projection_deriv(mu_tilde: f64, beta: f64, eta: f64) -> f64 {
    let h_lo = smoothed_heaviside(beta, eta, mu_tilde);
    let h_hi = smoothed_heaviside(beta, 1.0 - eta, mu_tilde);
    let d_lo = smoothed_heaviside_deriv(beta, eta, mu_tilde);
    let d_hi = smoothed_heaviside_deriv(beta, 1.0 - eta, mu_tilde);
    (1.0 - h_hi) * h_lo + mu_tilde * (-d_hi * h_lo + (1.0 - h_hi) * d_lo)
        + (1.0 / beta) * h_hi
        + ((beta - 1.0) / beta + mu_tilde / beta) * d_hi
}

/// Penalization of the misalignment of two unit vectors: zero at relative
/// angles k*pi/2, maximal (=1) at pi/4 + k*pi/2.
pub fn angle_penalty(na: &nalgebra::Vector3<f64>, nb: &nalgebra::Vector3<f64>) -> f64 {
    let d = na.dot(nb);
    let d2 = d * d;
    4.0 * d2 - 4.0 * d2 * d2
}

fn angle_penalty_deriv_wrt_dot(d: f64) -> f64 {
    8.0 * d - 16.0 * d * d * d
}

/// Interior-face list over the coarse grid; thin wrapper so callers can reuse
/// it across evaluations.
#[derive(Debug, Clone)]
pub struct FaceGraph {
    pub faces: Vec<(usize, usize)>,
}

impl FaceGraph {
    pub fn build(grid: &Grid3) -> Self {
        Self {
            faces: grid.interior_faces(),
        }
    }
}

/// Aggregated angle-regularization objective and its gradient w.r.t. the
/// three per-element Euler angle fields.
///
/// `F = (sum_f sum_i P_fi^q)^(1/q)`, with the per-face penalties chained
/// analytically through the frame trigonometry.
pub fn angle_regularization(
    theta: [&[f64]; 3],
    faces: &FaceGraph,
    q: f64,
) -> (f64, [Vec<f64>; 3]) {
    assert!(q >= 1.0, "aggregation exponent must be >= 1");
    let n = theta[0].len();
    assert!(theta.iter().all(|t| t.len() == n));

    let frames: Vec<_> = (0..n)
        .map(|e| {
            let a = EulerAngles::new(theta[0][e], theta[1][e], theta[2][e]);
            (frame_from_angles(&a), frame_gradients(&a))
        })
        .collect();

    let mut raw_sum = 0.0;
    // gradient of the raw sum S = sum P^q; the outer (1/q) power is chained after
    let mut grad: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; n]);
    for &(a, b) in &faces.faces {
        let (fa, dfa) = &frames[a];
        let (fb, dfb) = &frames[b];
        for layer in 0..3 {
            let na = fa.normal(layer);
            let nb = fb.normal(layer);
            let d = na.dot(&nb);
            let p = 4.0 * d * d - 4.0 * d * d * d * d;
            raw_sum += p.powf(q);
            // dS/dtheta = q P^(q-1) * dP/dd * dd/dtheta
            let outer = if q == 1.0 {
                1.0
            } else if p > 0.0 {
                q * p.powf(q - 1.0)
            } else {
                0.0
            };
            let dp_dd = angle_penalty_deriv_wrt_dot(d);
            for k in 0..3 {
                grad[k][a] += outer * dp_dd * dfa[k].normal(layer).dot(&nb);
                grad[k][b] += outer * dp_dd * na.dot(&dfb[k].normal(layer));
            }
        }
    }

    if q == 1.0 {
        return (raw_sum, grad);
    }
    let value = raw_sum.powf(1.0 / q);
    let chain = if raw_sum > 0.0 {
        (1.0 / q) * raw_sum.powf(1.0 / q - 1.0)
    } else {
        0.0
    };
    for g in grad.iter_mut() {
        for v in g.iter_mut() {
            *v *= chain;
        }
    }
    (value, grad)
}
