//! Method of Moving Asymptotes with the standard primal-dual interior-point
//! subproblem solver.
//!
//! The approximation and the Newton iteration follow Svanberg's published
//! algorithm; the number of constraints `m` is general but the intended use
//! here is a single volume constraint.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct MmaOptions {
    pub asyinit: f64,
    pub asyincr: f64,
    pub asydecr: f64,
    pub albefa: f64,
    pub raa0: f64,
    pub epsimin: f64,
    pub a0: f64,
    pub a: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

impl MmaOptions {
    pub fn standard(m: usize) -> Self {
        Self {
            asyinit: 0.5,
            asyincr: 1.2,
            asydecr: 0.7,
            albefa: 0.1,
            raa0: 1e-5,
            epsimin: 1e-7,
            a0: 1.0,
            a: vec![0.0; m],
            c: vec![1000.0; m],
            d: vec![1.0; m],
        }
    }
}

/// Persistent state between design updates: the two previous iterates and the
/// moving asymptotes.
#[derive(Debug, Clone)]
pub struct MmaState {
    n: usize,
    m: usize,
    iter: usize,
    xmin: Vec<f64>,
    xmax: Vec<f64>,
    /// absolute move limit per variable
    pub move_limit: Vec<f64>,
    xold1: Vec<f64>,
    xold2: Vec<f64>,
    pub low: Vec<f64>,
    pub upp: Vec<f64>,
    options: MmaOptions,
}

impl MmaState {
    pub fn new(xmin: Vec<f64>, xmax: Vec<f64>, move_limit: Vec<f64>, m: usize) -> Self {
        let n = xmin.len();
        assert_eq!(xmax.len(), n);
        assert_eq!(move_limit.len(), n);
        Self {
            n,
            m,
            iter: 0,
            xmin,
            xmax,
            move_limit,
            xold1: vec![0.0; n],
            xold2: vec![0.0; n],
            low: vec![0.0; n],
            upp: vec![0.0; n],
            options: MmaOptions::standard(m),
        }
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    /// Snapshot of the persistent state for checkpointing.
    pub fn raw(&self) -> MmaRawState {
        MmaRawState {
            iter: self.iter,
            xold1: self.xold1.clone(),
            xold2: self.xold2.clone(),
            low: self.low.clone(),
            upp: self.upp.clone(),
            move_limit: self.move_limit.clone(),
        }
    }

    /// Restore a snapshot taken with [`MmaState::raw`]. Bounds and options
    /// come from the freshly constructed state.
    pub fn restore(&mut self, raw: MmaRawState) {
        assert_eq!(raw.xold1.len(), self.n, "checkpoint size mismatch");
        self.iter = raw.iter;
        self.xold1 = raw.xold1;
        self.xold2 = raw.xold2;
        self.low = raw.low;
        self.upp = raw.upp;
        self.move_limit = raw.move_limit;
    }

    /// One MMA design update. `dfdx[i]` is the gradient row of constraint `i`
    /// (constraints in the form `f_i(x) <= 0`).
    pub fn update(
        &mut self,
        x: &[f64],
        df0dx: &[f64],
        fval: &[f64],
        dfdx: &[Vec<f64>],
    ) -> Result<Vec<f64>> {
        assert_eq!(x.len(), self.n);
        assert_eq!(df0dx.len(), self.n);
        assert_eq!(fval.len(), self.m);
        assert_eq!(dfdx.len(), self.m);
        let n = self.n;
        let m = self.m;
        let o = &self.options;
        self.iter += 1;

        // moving asymptotes
        if self.iter < 3 {
            for j in 0..n {
                let span = self.xmax[j] - self.xmin[j];
                self.low[j] = x[j] - o.asyinit * span;
                self.upp[j] = x[j] + o.asyinit * span;
            }
        } else {
            for j in 0..n {
                let span = self.xmax[j] - self.xmin[j];
                let zzz = (x[j] - self.xold1[j]) * (self.xold1[j] - self.xold2[j]);
                let factor = if zzz > 0.0 {
                    o.asyincr
                } else if zzz < 0.0 {
                    o.asydecr
                } else {
                    1.0
                };
                let mut low = x[j] - factor * (self.xold1[j] - self.low[j]);
                let mut upp = x[j] + factor * (self.upp[j] - self.xold1[j]);
                low = low.clamp(x[j] - 10.0 * span, x[j] - 0.01 * span);
                upp = upp.clamp(x[j] + 0.01 * span, x[j] + 10.0 * span);
                self.low[j] = low;
                self.upp[j] = upp;
            }
        }

        // subproblem bounds from asymptotes, move limits and box bounds
        let mut alfa = vec![0.0; n];
        let mut beta = vec![0.0; n];
        for j in 0..n {
            alfa[j] = (self.low[j] + o.albefa * (x[j] - self.low[j]))
                .max(x[j] - self.move_limit[j])
                .max(self.xmin[j]);
            beta[j] = (self.upp[j] - o.albefa * (self.upp[j] - x[j]))
                .min(x[j] + self.move_limit[j])
                .min(self.xmax[j]);
        }

        // separable approximation coefficients
        let mut p0 = vec![0.0; n];
        let mut q0 = vec![0.0; n];
        let mut pij = vec![vec![0.0; n]; m];
        let mut qij = vec![vec![0.0; n]; m];
        let mut b = vec![0.0; m];
        for j in 0..n {
            let xmami = (self.xmax[j] - self.xmin[j]).max(1e-5);
            let ux1 = self.upp[j] - x[j];
            let xl1 = x[j] - self.low[j];
            let (ux2, xl2) = (ux1 * ux1, xl1 * xl1);
            let dp = df0dx[j].max(0.0);
            let dq = (-df0dx[j]).max(0.0);
            let pq = 0.001 * (dp + dq) + o.raa0 / xmami;
            p0[j] = (dp + pq) * ux2;
            q0[j] = (dq + pq) * xl2;
            for i in 0..m {
                let dpi = dfdx[i][j].max(0.0);
                let dqi = (-dfdx[i][j]).max(0.0);
                let pqi = 0.001 * (dpi + dqi) + o.raa0 / xmami;
                pij[i][j] = (dpi + pqi) * ux2;
                qij[i][j] = (dqi + pqi) * xl2;
            }
        }
        for i in 0..m {
            let mut acc = 0.0;
            for j in 0..n {
                acc += pij[i][j] / (self.upp[j] - x[j]) + qij[i][j] / (x[j] - self.low[j]);
            }
            b[i] = acc - fval[i];
        }

        let xnew = subsolv(
            n, m, &self.low, &self.upp, &alfa, &beta, &p0, &q0, &pij, &qij, &b, o,
        )?;

        self.xold2 = std::mem::take(&mut self.xold1);
        self.xold1 = x.to_vec();
        Ok(xnew)
    }
}

/// Serializable snapshot of the MMA memory between iterations.
#[derive(Debug, Clone)]
pub struct MmaRawState {
    pub iter: usize,
    pub xold1: Vec<f64>,
    pub xold2: Vec<f64>,
    pub low: Vec<f64>,
    pub upp: Vec<f64>,
    pub move_limit: Vec<f64>,
}

struct SubState {
    x: Vec<f64>,
    y: Vec<f64>,
    z: f64,
    lam: Vec<f64>,
    xsi: Vec<f64>,
    eta: Vec<f64>,
    mu: Vec<f64>,
    zet: f64,
    s: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn subsolv(
    n: usize,
    m: usize,
    low: &[f64],
    upp: &[f64],
    alfa: &[f64],
    beta: &[f64],
    p0: &[f64],
    q0: &[f64],
    pij: &[Vec<f64>],
    qij: &[Vec<f64>],
    b: &[f64],
    o: &MmaOptions,
) -> Result<Vec<f64>> {
    let mut st = SubState {
        x: (0..n).map(|j| 0.5 * (alfa[j] + beta[j])).collect(),
        y: vec![1.0; m],
        z: 1.0,
        lam: vec![1.0; m],
        xsi: (0..n)
            .map(|j| (1.0 / (0.5 * (alfa[j] + beta[j]) - alfa[j])).max(1.0))
            .collect(),
        eta: (0..n)
            .map(|j| (1.0 / (beta[j] - 0.5 * (alfa[j] + beta[j]))).max(1.0))
            .collect(),
        mu: o.c.iter().map(|&c| (0.5 * c).max(1.0)).collect(),
        zet: 1.0,
        s: vec![1.0; m],
    };

    let residual = |st: &SubState, epsi: f64| -> (Vec<f64>, f64, f64) {
        let mut res = Vec::with_capacity(3 * n + 4 * m + 2);
        let mut plam = p0.to_vec();
        let mut qlam = q0.to_vec();
        for i in 0..m {
            for j in 0..n {
                plam[j] += st.lam[i] * pij[i][j];
                qlam[j] += st.lam[i] * qij[i][j];
            }
        }
        for j in 0..n {
            let ux1 = upp[j] - st.x[j];
            let xl1 = st.x[j] - low[j];
            let dpsidx = plam[j] / (ux1 * ux1) - qlam[j] / (xl1 * xl1);
            res.push(dpsidx - st.xsi[j] + st.eta[j]);
        }
        for i in 0..m {
            res.push(o.c[i] + o.d[i] * st.y[i] - st.mu[i] - st.lam[i]);
        }
        {
            let mut rez = o.a0 - st.zet;
            for i in 0..m {
                rez -= o.a[i] * st.lam[i];
            }
            res.push(rez);
        }
        for i in 0..m {
            let mut gvec = 0.0;
            for j in 0..n {
                gvec += pij[i][j] / (upp[j] - st.x[j]) + qij[i][j] / (st.x[j] - low[j]);
            }
            res.push(gvec - o.a[i] * st.z - st.y[i] + st.s[i] - b[i]);
        }
        for j in 0..n {
            res.push(st.xsi[j] * (st.x[j] - alfa[j]) - epsi);
        }
        for j in 0..n {
            res.push(st.eta[j] * (beta[j] - st.x[j]) - epsi);
        }
        for i in 0..m {
            res.push(st.mu[i] * st.y[i] - epsi);
        }
        res.push(st.zet * st.z - epsi);
        for i in 0..m {
            res.push(st.lam[i] * st.s[i] - epsi);
        }
        let norm = res.iter().map(|v| v * v).sum::<f64>().sqrt();
        let max = res.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        (res, norm, max)
    };

    let mut epsi = 1.0;
    while epsi > o.epsimin {
        let (_, mut residunorm, mut residumax) = residual(&st, epsi);
        let mut ittt = 0;
        while residumax > 0.9 * epsi && ittt < 200 {
            ittt += 1;
            // Newton direction
            let mut plam = p0.to_vec();
            let mut qlam = q0.to_vec();
            for i in 0..m {
                for j in 0..n {
                    plam[j] += st.lam[i] * pij[i][j];
                    qlam[j] += st.lam[i] * qij[i][j];
                }
            }
            let mut delx = vec![0.0; n];
            let mut diagx = vec![0.0; n];
            let mut gg = vec![vec![0.0; n]; m];
            for j in 0..n {
                let ux1 = upp[j] - st.x[j];
                let xl1 = st.x[j] - low[j];
                let (ux2, xl2) = (ux1 * ux1, xl1 * xl1);
                let (ux3, xl3) = (ux1 * ux2, xl1 * xl2);
                let dpsidx = plam[j] / ux2 - qlam[j] / xl2;
                delx[j] = dpsidx - epsi / (st.x[j] - alfa[j]) + epsi / (beta[j] - st.x[j]);
                diagx[j] = 2.0 * (plam[j] / ux3 + qlam[j] / xl3)
                    + st.xsi[j] / (st.x[j] - alfa[j])
                    + st.eta[j] / (beta[j] - st.x[j]);
                for i in 0..m {
                    gg[i][j] = pij[i][j] / ux2 - qij[i][j] / xl2;
                }
            }
            let mut dely = vec![0.0; m];
            let mut dellam = vec![0.0; m];
            let mut diagy = vec![0.0; m];
            let mut diaglamyi = vec![0.0; m];
            for i in 0..m {
                dely[i] = o.c[i] + o.d[i] * st.y[i] - st.lam[i] - epsi / st.y[i];
                let mut gvec = 0.0;
                for j in 0..n {
                    gvec += pij[i][j] / (upp[j] - st.x[j]) + qij[i][j] / (st.x[j] - low[j]);
                }
                dellam[i] = gvec - o.a[i] * st.z - st.y[i] - b[i] + epsi / st.lam[i];
                diagy[i] = o.d[i] + st.mu[i] / st.y[i];
                diaglamyi[i] = st.s[i] / st.lam[i] + 1.0 / diagy[i];
            }
            let mut delz = o.a0 - epsi / st.z;
            for i in 0..m {
                delz -= o.a[i] * st.lam[i];
            }

            // reduced (m+1) x (m+1) system for (dlam, dz)
            let mut aa = DMatrix::<f64>::zeros(m + 1, m + 1);
            let mut bb = DVector::<f64>::zeros(m + 1);
            for i in 0..m {
                let mut blam = dellam[i] + dely[i] / diagy[i];
                for j in 0..n {
                    blam -= gg[i][j] * delx[j] / diagx[j];
                }
                bb[i] = blam;
                for k in 0..m {
                    let mut v = if i == k { diaglamyi[i] } else { 0.0 };
                    for j in 0..n {
                        v += gg[i][j] * gg[k][j] / diagx[j];
                    }
                    aa[(i, k)] = v;
                }
                aa[(i, m)] = o.a[i];
                aa[(m, i)] = o.a[i];
            }
            aa[(m, m)] = -st.zet / st.z;
            bb[m] = delz;
            let sol = aa.lu().solve(&bb).ok_or(Error::SubproblemFailure)?;
            let dlam: Vec<f64> = (0..m).map(|i| sol[i]).collect();
            let dz = sol[m];

            let mut dx = vec![0.0; n];
            for j in 0..n {
                let mut v = -delx[j] / diagx[j];
                for i in 0..m {
                    v -= gg[i][j] * dlam[i] / diagx[j];
                }
                dx[j] = v;
            }
            let dy: Vec<f64> = (0..m)
                .map(|i| -dely[i] / diagy[i] + dlam[i] / diagy[i])
                .collect();
            let dxsi: Vec<f64> = (0..n)
                .map(|j| {
                    -st.xsi[j] + epsi / (st.x[j] - alfa[j])
                        - st.xsi[j] * dx[j] / (st.x[j] - alfa[j])
                })
                .collect();
            let deta: Vec<f64> = (0..n)
                .map(|j| {
                    -st.eta[j] + epsi / (beta[j] - st.x[j])
                        + st.eta[j] * dx[j] / (beta[j] - st.x[j])
                })
                .collect();
            let dmu: Vec<f64> = (0..m)
                .map(|i| -st.mu[i] + epsi / st.y[i] - st.mu[i] * dy[i] / st.y[i])
                .collect();
            let dzet = -st.zet + epsi / st.z - st.zet * dz / st.z;
            let ds: Vec<f64> = (0..m)
                .map(|i| -st.s[i] + epsi / st.lam[i] - st.s[i] * dlam[i] / st.lam[i])
                .collect();

            // step length: keep multipliers positive and x inside (alfa, beta)
            let mut stm = 1.0f64;
            let ratio = |v: f64, dv: f64| if dv < 0.0 { -1.01 * dv / v } else { 0.0 };
            for i in 0..m {
                stm = stm
                    .max(ratio(st.y[i], dy[i]))
                    .max(ratio(st.lam[i], dlam[i]))
                    .max(ratio(st.mu[i], dmu[i]))
                    .max(ratio(st.s[i], ds[i]));
            }
            stm = stm.max(ratio(st.z, dz)).max(ratio(st.zet, dzet));
            for j in 0..n {
                stm = stm
                    .max(ratio(st.xsi[j], dxsi[j]))
                    .max(ratio(st.eta[j], deta[j]))
                    .max(ratio(st.x[j] - alfa[j], dx[j]))
                    .max(ratio(beta[j] - st.x[j], -dx[j]));
            }
            let mut steg = 1.0 / stm;

            let old = SubState {
                x: st.x.clone(),
                y: st.y.clone(),
                z: st.z,
                lam: st.lam.clone(),
                xsi: st.xsi.clone(),
                eta: st.eta.clone(),
                mu: st.mu.clone(),
                zet: st.zet,
                s: st.s.clone(),
            };
            let mut resinew = 2.0 * residunorm;
            let mut itto = 0;
            while resinew > residunorm && itto < 50 {
                itto += 1;
                for j in 0..n {
                    st.x[j] = old.x[j] + steg * dx[j];
                    st.xsi[j] = old.xsi[j] + steg * dxsi[j];
                    st.eta[j] = old.eta[j] + steg * deta[j];
                }
                for i in 0..m {
                    st.y[i] = old.y[i] + steg * dy[i];
                    st.lam[i] = old.lam[i] + steg * dlam[i];
                    st.mu[i] = old.mu[i] + steg * dmu[i];
                    st.s[i] = old.s[i] + steg * ds[i];
                }
                st.z = old.z + steg * dz;
                st.zet = old.zet + steg * dzet;
                let (_, norm, max) = residual(&st, epsi);
                resinew = norm;
                residumax = max;
                steg *= 0.5;
            }
            if !resinew.is_finite() {
                return Err(Error::SubproblemFailure);
            }
            residunorm = resinew;
        }
        if residumax > 0.9 * epsi && ittt >= 200 {
            return Err(Error::SubproblemFailure);
        }
        epsi *= 0.1;
    }
    Ok(st.x)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Minimize (x - 0.3)^2 on [0,1] with an inactive constraint.
    #[test]
    fn quadratic_toy_converges() {
        let mut state = MmaState::new(vec![0.0], vec![1.0], vec![0.5], 1);
        let mut x = vec![0.9];
        let mut best = f64::INFINITY;
        for _ in 0..50 {
            let df0 = vec![2.0 * (x[0] - 0.3)];
            let fval = vec![-1.0]; // always satisfied
            let dfdx = vec![vec![0.0]];
            x = state.update(&x, &df0, &fval, &dfdx).unwrap();
            assert!((0.0..=1.0).contains(&x[0]));
            best = best.min((x[0] - 0.3).abs());
        }
        assert!(best < 1e-3, "closest approach {best}");
    }

    /// Minimize x1^2 + x2^2 subject to x1 + x2 >= 1; optimum (0.5, 0.5) with
    /// multiplier 1. Checks the KKT residual of the converged iterate.
    #[test]
    fn constrained_toy_kkt() {
        let mut state = MmaState::new(vec![0.0; 2], vec![1.0; 2], vec![0.2; 2], 1);
        let mut x = vec![0.9, 0.2];
        for _ in 0..300 {
            let df0 = vec![2.0 * x[0], 2.0 * x[1]];
            let fval = vec![1.0 - x[0] - x[1]];
            let dfdx = vec![vec![-1.0, -1.0]];
            let xn = state.update(&x, &df0, &fval, &dfdx).unwrap();
            let change = (xn[0] - x[0]).abs().max((xn[1] - x[1]).abs());
            x = xn;
            if change < 1e-10 {
                break;
            }
        }
        assert!((x[0] - 0.5).abs() < 1e-5, "x = {x:?}");
        assert!((x[1] - 0.5).abs() < 1e-5);
        // stationarity with lambda from the active constraint: grad f = lambda * (1,1)
        let lambda = 2.0 * x[0];
        let kkt = (2.0 * x[0] - lambda).abs().max((2.0 * x[1] - lambda).abs());
        let feas = (1.0 - x[0] - x[1]).max(0.0);
        assert!(kkt < 1e-6 && feas < 1e-6);
    }

    /// Strong negative gradient pushes to the upper bound; iterates must stay
    /// inside the box exactly.
    #[test]
    fn bounds_clamped_exactly() {
        let mut state = MmaState::new(vec![0.0; 3], vec![0.7; 3], vec![0.5; 3], 1);
        let mut x = vec![0.1, 0.3, 0.6];
        for _ in 0..60 {
            let df0 = vec![-1.0; 3];
            let fval = vec![-1.0];
            let dfdx = vec![vec![0.0; 3]];
            x = state.update(&x, &df0, &fval, &dfdx).unwrap();
            for &v in &x {
                assert!((0.0..=0.7).contains(&v));
            }
        }
        for &v in &x {
            assert!((v - 0.7).abs() < 1e-4, "x = {x:?}");
        }
    }
}
