//! Independent ground-truth generators: the constant-coefficient closed
//! form, a Riccati ODE oracle for the linear-Gaussian family, and
//! brute-force grid optimizers for Hamiltonian and saddle verification.
//!
//! The brute-force evaluators recompute every matrix product with explicit
//! loops so they share no arithmetic with the closed forms they check.

use nalgebra::{DMatrix, DVector};

use crate::control::ControlParams;
use crate::error::{Error, Result};
use crate::market::{LinearGaussianSpec, MarketModel};

// ---------------------------------------------------------------------------
// Constant-coefficient (Merton) closed form
// ---------------------------------------------------------------------------

/// Closed-form solution of the single-asset constant-coefficient problem.
#[derive(Debug, Clone, Copy)]
pub struct MertonOracle {
    pub h_star: f64,
    /// Optimal risk-sensitive growth rate per unit time.
    pub rho: f64,
    /// Optimal criterion value over the horizon: `ln v0 + rho * T`.
    pub criterion: f64,
}

/// Criterion of a constant fraction `h` held over `[0, T]`:
/// log-wealth is Gaussian, so the exponential moment is a lognormal moment
/// and `J(h) = ln v0 + [r + h(a-r) - (theta+2)/4 h^2 sigma2] T`.
pub fn merton_criterion_of_h(
    a: f64,
    r: f64,
    sigma2: f64,
    theta: f64,
    horizon: f64,
    v0: f64,
    h: f64,
) -> f64 {
    v0.ln() + (r + h * (a - r) - 0.25 * (theta + 2.0) * h * h * sigma2) * horizon
}

/// Maximizes the quadratic criterion in closed form:
/// `h* = 2(a-r)/((theta+2) sigma2)`, `rho = r + (a-r)^2/((theta+2) sigma2)`.
pub fn merton_constant_oracle(
    a: f64,
    r: f64,
    sigma2: f64,
    theta: f64,
    horizon: f64,
    v0: f64,
) -> Result<MertonOracle> {
    if sigma2 <= 0.0 {
        return Err(Error::Config(format!(
            "merton oracle needs sigma^2 > 0 (got {sigma2})"
        )));
    }
    let h_star = 2.0 * (a - r) / ((theta + 2.0) * sigma2);
    let rho = r + (a - r) * (a - r) / ((theta + 2.0) * sigma2);
    Ok(MertonOracle {
        h_star,
        rho,
        criterion: v0.ln() + rho * horizon,
    })
}

// ---------------------------------------------------------------------------
// Riccati oracle for the linear-Gaussian family
// ---------------------------------------------------------------------------

/// Quadratic-ansatz solution `u(t,x) = x'K(t)x + k(t)'x + c(t)` of the
/// reduced HJB equation for affine drifts and constant loadings.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub times: Vec<f64>,
    pub k_quad: Vec<DMatrix<f64>>,
    pub k_lin: Vec<DVector<f64>>,
    pub c_const: Vec<f64>,
}

impl RiccatiSolution {
    /// Value of the quadratic ansatz at `(t, x)` (linear interpolation in t).
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        let (i0, i1, w) = self.locate(t);
        let xv = DVector::from_column_slice(x);
        let q0 = (&xv.transpose() * &self.k_quad[i0] * &xv)[(0, 0)]
            + self.k_lin[i0].dot(&xv)
            + self.c_const[i0];
        let q1 = (&xv.transpose() * &self.k_quad[i1] * &xv)[(0, 0)]
            + self.k_lin[i1].dot(&xv)
            + self.c_const[i1];
        (1.0 - w) * q0 + w * q1
    }

    /// Spatial gradient `2 K(t) x + k(t)`.
    pub fn gradient(&self, t: f64, x: &[f64]) -> DVector<f64> {
        let (i0, i1, w) = self.locate(t);
        let xv = DVector::from_column_slice(x);
        let g0 = &self.k_quad[i0] * &xv * 2.0 + &self.k_lin[i0];
        let g1 = &self.k_quad[i1] * &xv * 2.0 + &self.k_lin[i1];
        g0 * (1.0 - w) + g1 * w
    }

    fn locate(&self, t: f64) -> (usize, usize, f64) {
        let nt = self.times.len();
        let t0 = self.times[0];
        let dt = self.times[1] - self.times[0];
        let pos = ((t - t0) / dt).clamp(0.0, (nt - 1) as f64);
        let i0 = (pos.floor() as usize).min(nt - 2);
        (i0, i0 + 1, pos - i0 as f64)
    }
}

struct RiccatiRhs {
    b_mat: DMatrix<f64>,
    a_mat: DMatrix<f64>,
    b0: DVector<f64>,
    excess0: DVector<f64>,
    s_inv: DMatrix<f64>,
    c_mat: DMatrix<f64>,
    m_mat: DMatrix<f64>,
    theta: f64,
    r0: f64,
}

impl RiccatiRhs {
    /// Time derivatives (going forward in t) obtained by matching powers of
    /// x after substituting the ansatz into the PDE.
    fn eval(&self, kq: &DMatrix<f64>, kl: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>, f64) {
        let th = self.theta;
        let g_mat = &self.a_mat - &self.c_mat * kq * (0.5 * th);
        let g0 = &self.excess0 - &self.c_mat * kl * (0.25 * th);
        let sg = &self.s_inv * &g_mat;
        let sg0 = &self.s_inv * &g0;
        let kmk = kq * &self.m_mat * kq;
        let dk = -(self.b_mat.transpose() * kq + kq * &self.b_mat) + &kmk * th
            - g_mat.transpose() * &sg / (th + 2.0);
        let dkl = -self.b_mat.transpose() * kl - kq * &self.b0 * 2.0
            + kq * &self.m_mat * kl * th
            - g_mat.transpose() * &sg0 * (2.0 / (th + 2.0));
        let kmk_lin = (kl.transpose() * &self.m_mat * kl)[(0, 0)];
        let dc = -self.b0.dot(kl) + 0.25 * th * kmk_lin
            - (&self.m_mat * kq).trace()
            - self.r0
            - g0.dot(&sg0) / (th + 2.0);
        ((&dk + dk.transpose()) * 0.5, dkl, dc)
    }
}

/// Integrates the coupled Riccati system backward from the zero terminal
/// condition with classical fourth-order steps; `K` is symmetrized along
/// the path. Paths are stored on a uniform mesh of `time_steps` intervals.
pub fn riccati_oracle(
    spec: &LinearGaussianSpec,
    params: &ControlParams,
    horizon: f64,
    time_steps: usize,
) -> Result<RiccatiSolution> {
    spec.validate()?;
    if horizon < 0.0 || time_steps == 0 {
        return Err(Error::Config(
            "riccati oracle needs T >= 0 and steps >= 1".into(),
        ));
    }
    let n = spec.n();
    let m = spec.m();
    let s_mat = &spec.sigma * spec.sigma.transpose();
    let s_inv = s_mat
        .cholesky()
        .ok_or_else(|| Error::Ellipticity("sigma sigma^T singular".into()))?
        .inverse();
    let rhs = RiccatiRhs {
        b_mat: spec.b_mat.clone(),
        a_mat: spec.a_mat.clone(),
        b0: spec.b0.clone(),
        excess0: &spec.a0 - DVector::from_element(m, spec.r0),
        s_inv,
        c_mat: &spec.sigma * spec.lambda.transpose(),
        m_mat: &spec.lambda * spec.lambda.transpose(),
        theta: params.theta(),
        r0: spec.r0,
    };

    let nt = time_steps + 1;
    let dt = horizon / time_steps as f64;
    let times: Vec<f64> = (0..nt).map(|i| i as f64 * dt).collect();
    let mut k_quad = vec![DMatrix::zeros(n, n); nt];
    let mut k_lin = vec![DVector::zeros(n); nt];
    let mut c_const = vec![0.0; nt];

    // march backward: state at times[i] from state at times[i+1]
    for i in (0..nt - 1).rev() {
        let kq1 = k_quad[i + 1].clone();
        let kl1 = k_lin[i + 1].clone();
        let c1 = c_const[i + 1];
        let h = -dt; // backward step
        let (d1q, d1l, d1c) = rhs.eval(&kq1, &kl1);
        let (d2q, d2l, d2c) = rhs.eval(&(&kq1 + &d1q * (0.5 * h)), &(&kl1 + &d1l * (0.5 * h)));
        let (d3q, d3l, d3c) = rhs.eval(&(&kq1 + &d2q * (0.5 * h)), &(&kl1 + &d2l * (0.5 * h)));
        let (d4q, d4l, d4c) = rhs.eval(&(&kq1 + &d3q * h), &(&kl1 + &d3l * h));
        let kq = &kq1 + (&d1q + &d2q * 2.0 + &d3q * 2.0 + &d4q) * (h / 6.0);
        let kl = &kl1 + (&d1l + &d2l * 2.0 + &d3l * 2.0 + &d4l) * (h / 6.0);
        let c = c1 + (d1c + 2.0 * d2c + 2.0 * d3c + d4c) * (h / 6.0);
        let norm = kq.norm() + kl.norm() + c.abs();
        if !norm.is_finite() || norm > 1e8 {
            return Err(Error::Solver(format!(
                "riccati blow-up at t = {:.6}: horizon too long for this spec",
                times[i]
            )));
        }
        k_quad[i] = (&kq + kq.transpose()) * 0.5;
        k_lin[i] = kl;
        c_const[i] = c;
    }

    Ok(RiccatiSolution {
        times,
        k_quad,
        k_lin,
        c_const,
    })
}

// ---------------------------------------------------------------------------
// Brute-force optimizers
// ---------------------------------------------------------------------------

/// Coefficient products computed with explicit loops only.
struct LoopCoeffs {
    m: usize,
    n: usize,
    a: Vec<f64>,
    mu: Vec<f64>,
    s: Vec<f64>,
    c: Vec<f64>,
    lambda: Vec<f64>,
    sigma: Vec<f64>,
    r: f64,
}

impl LoopCoeffs {
    fn at(model: &MarketModel, x: &[f64]) -> Result<Self> {
        let m = model.m();
        let n = model.n();
        let k = m + n;
        let a = model.a_at(x)?.as_slice().to_vec();
        let mu = model.mu_at(x)?.as_slice().to_vec();
        let sig = model.sigma_at(x)?;
        let lam = model.lambda_at(x)?;
        let mut sigma = vec![0.0; m * k];
        let mut lambda = vec![0.0; n * k];
        for i in 0..m {
            for kk in 0..k {
                sigma[i * k + kk] = sig[(i, kk)];
            }
        }
        for i in 0..n {
            for kk in 0..k {
                lambda[i * k + kk] = lam[(i, kk)];
            }
        }
        let mut s = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                let mut v = 0.0;
                for kk in 0..k {
                    v += sigma[i * k + kk] * sigma[j * k + kk];
                }
                s[i * m + j] = v;
            }
        }
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut v = 0.0;
                for kk in 0..k {
                    v += sigma[i * k + kk] * lambda[j * k + kk];
                }
                c[i * n + j] = v;
            }
        }
        Ok(LoopCoeffs {
            m,
            n,
            a,
            mu,
            s,
            c,
            lambda,
            sigma,
            r: model.r_at(x)?,
        })
    }

    /// Hamiltonian bracket by direct summation.
    fn bracket(&self, theta: f64, grad: &[f64], h: &[f64]) -> f64 {
        let m = self.m;
        let mut quad = 0.0;
        for i in 0..m {
            for j in 0..m {
                quad += h[i] * self.s[i * m + j] * h[j];
            }
        }
        let mut lin = 0.0;
        for i in 0..m {
            lin += h[i] * (self.a[i] - self.r);
        }
        let mut cross = 0.0;
        for i in 0..m {
            for j in 0..self.n {
                cross += h[i] * self.c[i * self.n + j] * grad[j];
            }
        }
        0.5 * (0.5 * theta + 1.0) * quad - lin - self.r + 0.25 * theta * cross
    }

    /// Game integrand by direct summation: controlled drift applied to a
    /// gradient plus the running cost.
    fn game_integrand(&self, theta: f64, grad: &[f64], h: &[f64], omega: &[f64]) -> f64 {
        let m = self.m;
        let n = self.n;
        let k = m + n;
        let mut first_order = 0.0;
        for i in 0..n {
            let mut drift = self.mu[i];
            for kk in 0..k {
                drift += self.lambda[i * k + kk] * omega[kk];
            }
            for l in 0..m {
                let mut inner = 0.0;
                for kk in 0..k {
                    inner += self.lambda[i * k + kk] * self.sigma[l * k + kk];
                }
                drift += 0.5 * theta * h[l] * inner;
            }
            first_order += drift * grad[i];
        }
        let mut quad = 0.0;
        for i in 0..m {
            for j in 0..m {
                quad += h[i] * self.s[i * m + j] * h[j];
            }
        }
        let mut lin = 0.0;
        for i in 0..m {
            lin += h[i] * (self.a[i] - self.r);
        }
        let omega2: f64 = omega.iter().map(|v| v * v).sum();
        first_order + 0.5 * (0.5 * theta + 1.0) * quad - omega2 / theta - lin - self.r
    }
}

fn grid_coord(lo: f64, hi: f64, count: usize, i: usize) -> f64 {
    if count == 1 {
        0.5 * (lo + hi)
    } else {
        lo + (hi - lo) * i as f64 / (count - 1) as f64
    }
}

fn for_each_gridpoint(lo: &[f64], hi: &[f64], count: usize, mut visit: impl FnMut(usize, &[f64])) {
    let d = lo.len();
    let total: usize = count.pow(d as u32);
    let mut pt = vec![0.0; d];
    for flat in 0..total {
        let mut rem = flat;
        for dd in (0..d).rev() {
            let idx = rem % count;
            rem /= count;
            pt[dd] = grid_coord(lo[dd], hi[dd], count, idx);
        }
        visit(flat, &pt);
    }
}

/// Result of a dense grid minimization of the Hamiltonian bracket.
#[derive(Debug, Clone)]
pub struct HamiltonianScan {
    pub min_value: f64,
    pub argmin: DVector<f64>,
    /// Whether the search box had to be expanded to contain the minimizer.
    pub expanded: bool,
    pub cell: Vec<f64>,
}

/// Dense-grid minimization of the Hamiltonian bracket over `h_box`.
/// If the argmin lands on the box boundary the box is doubled once.
pub fn brute_force_hamiltonian(
    model: &MarketModel,
    x: &[f64],
    grad_u: &[f64],
    params: &ControlParams,
    h_box: (&[f64], &[f64]),
    grid_count: usize,
) -> Result<HamiltonianScan> {
    if grid_count < 3 {
        return Err(Error::Config(
            "brute force needs at least 3 grid points".into(),
        ));
    }
    let lc = LoopCoeffs::at(model, x)?;
    let theta = params.theta();
    let mut lo = h_box.0.to_vec();
    let mut hi = h_box.1.to_vec();
    for attempt in 0..2 {
        let mut best = f64::INFINITY;
        let mut best_pt = vec![0.0; lo.len()];
        let mut best_flat = 0usize;
        for_each_gridpoint(&lo, &hi, grid_count, |flat, h| {
            let v = lc.bracket(theta, grad_u, h);
            if v < best {
                best = v;
                best_pt.copy_from_slice(h);
                best_flat = flat;
            }
        });
        // on-boundary detection via the flat multi-index
        let mut on_boundary = false;
        let mut rem = best_flat;
        for _ in 0..lo.len() {
            let idx = rem % grid_count;
            rem /= grid_count;
            if idx == 0 || idx == grid_count - 1 {
                on_boundary = true;
            }
        }
        if !on_boundary {
            let cell: Vec<f64> = lo
                .iter()
                .zip(&hi)
                .map(|(l, u)| (u - l) / (grid_count - 1) as f64)
                .collect();
            return Ok(HamiltonianScan {
                min_value: best,
                argmin: DVector::from_vec(best_pt),
                expanded: attempt > 0,
                cell,
            });
        }
        // widen around the center and retry once
        for d in 0..lo.len() {
            let c = 0.5 * (lo[d] + hi[d]);
            let half = hi[d] - c;
            lo[d] = c - 2.0 * half;
            hi[d] = c + 2.0 * half;
        }
    }
    Err(Error::Solver(
        "brute-force box expansion failed: minimizer still on the boundary".into(),
    ))
}

/// Result of the iterated grid optimization of the game integrand.
#[derive(Debug, Clone)]
pub struct SaddleScan {
    pub supinf: f64,
    pub infsup: f64,
    pub saddle_h: DVector<f64>,
    pub saddle_omega: DVector<f64>,
    /// `2 * max_d (adjacent-cell variation along d)`: the measured
    /// resolution of the control grids, used as the tolerance on
    /// `|supinf - infsup|`.
    pub resolution_bound: f64,
}

/// Iterated sup/inf of the game integrand on dense control grids, together
/// with a measured grid-resolution bound. Grid sizes are
/// `grid_counts.0^m` investor points and `grid_counts.1^(m+n)` adversary
/// points; keep the control dimensions small.
pub fn brute_force_saddle(
    model: &MarketModel,
    x: &[f64],
    grad_u_hat: &[f64],
    params: &ControlParams,
    h_box: (&[f64], &[f64]),
    omega_box: (&[f64], &[f64]),
    grid_counts: (usize, usize),
) -> Result<SaddleScan> {
    let lc = LoopCoeffs::at(model, x)?;
    let theta = params.theta();
    let m = lc.m;
    let k = lc.m + lc.n;
    let (ch, cw) = grid_counts;
    if ch < 3 || cw < 3 {
        return Err(Error::Config(
            "saddle scan needs at least 3 grid points per axis".into(),
        ));
    }
    let nh: usize = ch.pow(m as u32);
    let nw: usize = cw.pow(k as u32);

    let mut h_pts = vec![0.0; nh * m];
    for_each_gridpoint(h_box.0, h_box.1, ch, |flat, h| {
        h_pts[flat * m..(flat + 1) * m].copy_from_slice(h);
    });
    let mut w_pts = vec![0.0; nw * k];
    for_each_gridpoint(omega_box.0, omega_box.1, cw, |flat, w| {
        w_pts[flat * k..(flat + 1) * k].copy_from_slice(w);
    });

    // full tableau of the integrand
    let mut table = vec![0.0; nh * nw];
    for ih in 0..nh {
        let h = &h_pts[ih * m..(ih + 1) * m];
        for iw in 0..nw {
            let w = &w_pts[iw * k..(iw + 1) * k];
            table[ih * nw + iw] = lc.game_integrand(theta, grad_u_hat, h, w);
        }
    }

    // sup over omega of (inf over h)
    let mut supinf = f64::NEG_INFINITY;
    let mut best_w = 0usize;
    for iw in 0..nw {
        let mut inner = f64::INFINITY;
        for ih in 0..nh {
            inner = inner.min(table[ih * nw + iw]);
        }
        if inner > supinf {
            supinf = inner;
            best_w = iw;
        }
    }
    let mut best_h = 0usize;
    {
        let mut inner = f64::INFINITY;
        for ih in 0..nh {
            let v = table[ih * nw + best_w];
            if v < inner {
                inner = v;
                best_h = ih;
            }
        }
    }
    // inf over h of (sup over omega)
    let mut infsup = f64::INFINITY;
    for ih in 0..nh {
        let mut inner = f64::NEG_INFINITY;
        for iw in 0..nw {
            inner = inner.max(table[ih * nw + iw]);
        }
        infsup = infsup.min(inner);
    }

    // measured adjacent-cell variation along each control dimension
    let mut bound: f64 = 0.0;
    for d in 0..m {
        let stride = ch.pow((m - 1 - d) as u32);
        let mut lip: f64 = 0.0;
        for ih in 0..nh {
            let di = (ih / stride) % ch;
            if di + 1 < ch {
                for iw in 0..nw {
                    lip = lip.max((table[(ih + stride) * nw + iw] - table[ih * nw + iw]).abs());
                }
            }
        }
        bound = bound.max(2.0 * lip);
    }
    for d in 0..k {
        let stride = cw.pow((k - 1 - d) as u32);
        let mut lip: f64 = 0.0;
        for iw in 0..nw {
            let di = (iw / stride) % cw;
            if di + 1 < cw {
                for ih in 0..nh {
                    lip = lip.max((table[ih * nw + iw + stride] - table[ih * nw + iw]).abs());
                }
            }
        }
        bound = bound.max(2.0 * lip);
    }

    Ok(SaddleScan {
        supinf,
        infsup,
        saddle_h: DVector::from_column_slice(&h_pts[best_h * m..(best_h + 1) * m]),
        saddle_omega: DVector::from_column_slice(&w_pts[best_w * k..(best_w + 1) * k]),
        resolution_bound: bound,
    })
}

/// Max violations of the two saddle inequalities for a candidate pair on
/// the control grids. For a true saddle both gaps
/// `max_omega F(h_bar, omega) - F(h_bar, omega_bar)` and
/// `max_h F(h_bar, omega_bar) - F(h, omega_bar)` are <= 0 up to roundoff.
pub fn saddle_inequality_gaps(
    model: &MarketModel,
    x: &[f64],
    grad_u_hat: &[f64],
    params: &ControlParams,
    h_bar: &[f64],
    omega_bar: &[f64],
    h_box: (&[f64], &[f64]),
    omega_box: (&[f64], &[f64]),
    grid_counts: (usize, usize),
) -> Result<(f64, f64)> {
    let lc = LoopCoeffs::at(model, x)?;
    let theta = params.theta();
    let center = lc.game_integrand(theta, grad_u_hat, h_bar, omega_bar);
    let mut omega_gap = f64::NEG_INFINITY;
    for_each_gridpoint(omega_box.0, omega_box.1, grid_counts.1, |_, w| {
        let v = lc.game_integrand(theta, grad_u_hat, h_bar, w);
        omega_gap = omega_gap.max(v - center);
    });
    let mut h_gap = f64::NEG_INFINITY;
    for_each_gridpoint(h_box.0, h_box.1, grid_counts.0, |_, h| {
        let v = lc.game_integrand(theta, grad_u_hat, h, omega_bar);
        h_gap = h_gap.max(center - v);
    });
    Ok((omega_gap, h_gap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{hamiltonian_k_theta, minimizing_selector, saddle_controls};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn merton_model() -> MarketModel {
        MarketModel::constant(
            vec![0.10],
            vec![0.0],
            DMatrix::from_row_slice(1, 2, &[0.2, 0.0]),
            DMatrix::from_row_slice(1, 2, &[0.0, 0.3]),
            0.03,
        )
        .unwrap()
    }

    #[test]
    fn merton_oracle_reference_values() {
        let o = merton_constant_oracle(0.10, 0.03, 0.04, 2.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(o.h_star, 0.875, epsilon = 1e-15);
        assert_relative_eq!(o.rho, 0.060625, epsilon = 1e-15);
        assert_relative_eq!(o.criterion, 0.060625, epsilon = 1e-15);
    }

    #[test]
    fn merton_oracle_no_premium() {
        let o = merton_constant_oracle(0.03, 0.03, 0.04, 2.0, 5.0, 2.0).unwrap();
        assert_eq!(o.h_star, 0.0);
        assert_relative_eq!(o.rho, 0.03, epsilon = 1e-15);
        assert_relative_eq!(o.criterion, 2.0f64.ln() + 0.15, epsilon = 1e-12);
    }

    #[test]
    fn merton_oracle_kelly_limit() {
        // theta -> 0: h* -> (a-r)/sigma^2
        let kelly = 0.07 / 0.04;
        let o = merton_constant_oracle(0.10, 0.03, 0.04, 1e-9, 1.0, 1.0).unwrap();
        assert_relative_eq!(o.h_star, kelly, max_relative = 1e-8);
    }

    #[test]
    fn merton_criterion_maximized_at_h_star() {
        // numeric 1-D maximization of J(h) agrees with the closed form
        let (a, r, s2, th) = (0.10, 0.03, 0.04, 2.0);
        let o = merton_constant_oracle(a, r, s2, th, 1.0, 1.0).unwrap();
        let mut best_h = 0.0;
        let mut best = f64::NEG_INFINITY;
        let count = 20001;
        for i in 0..count {
            let h = -5.0 + 10.0 * i as f64 / (count - 1) as f64;
            let j = merton_criterion_of_h(a, r, s2, th, 1.0, 1.0, h);
            if j > best {
                best = j;
                best_h = h;
            }
        }
        assert!((best_h - o.h_star).abs() <= 10.0 / (count - 1) as f64);
        assert!(best <= o.criterion + 1e-12);
        // concavity: every probed value stays below the optimum
        for h in [-2.0, -0.5, 0.0, 0.3, 0.875, 1.5, 4.0] {
            assert!(merton_criterion_of_h(a, r, s2, th, 1.0, 1.0, h) <= o.criterion + 1e-12);
        }
    }

    #[test]
    fn sigma_must_be_positive() {
        assert!(merton_constant_oracle(0.1, 0.03, 0.0, 2.0, 1.0, 1.0).is_err());
        assert!(merton_constant_oracle(0.1, 0.03, -0.1, 2.0, 1.0, 1.0).is_err());
    }

    fn linear_1f_spec() -> LinearGaussianSpec {
        LinearGaussianSpec {
            a0: DVector::from_vec(vec![0.10]),
            a_mat: DMatrix::from_row_slice(1, 1, &[0.05]),
            b0: DVector::zeros(1),
            b_mat: DMatrix::from_row_slice(1, 1, &[-1.0]),
            sigma: DMatrix::from_row_slice(1, 2, &[0.2, 0.0]),
            lambda: DMatrix::from_row_slice(1, 2, &[0.1, 0.3]),
            r0: 0.03,
        }
    }

    #[test]
    fn riccati_terminal_condition() {
        let params = ControlParams::new(2.0).unwrap();
        let sol = riccati_oracle(&linear_1f_spec(), &params, 1.0, 500).unwrap();
        let last = sol.times.len() - 1;
        assert_eq!(sol.k_quad[last][(0, 0)], 0.0);
        assert_eq!(sol.k_lin[last][0], 0.0);
        assert_eq!(sol.c_const[last], 0.0);
        // short horizon: everything shrinks to zero with T
        let tiny = riccati_oracle(&linear_1f_spec(), &params, 1e-6, 10).unwrap();
        assert!(tiny.c_const[0].abs() < 1e-6);
        assert!(tiny.k_quad[0][(0, 0)].abs() < 1e-6);
    }

    #[test]
    fn riccati_constant_reduction() {
        // A=0, B=0, b0=0 behaves like the constant model: K=k=0,
        // c(t) = -Kbar (T-t) with Kbar the constant Hamiltonian value
        let spec = LinearGaussianSpec {
            a0: DVector::from_vec(vec![0.10]),
            a_mat: DMatrix::zeros(1, 1),
            b0: DVector::zeros(1),
            b_mat: DMatrix::zeros(1, 1),
            sigma: DMatrix::from_row_slice(1, 2, &[0.2, 0.0]),
            lambda: DMatrix::from_row_slice(1, 2, &[0.0, 0.3]),
            r0: 0.03,
        };
        let params = ControlParams::new(2.0).unwrap();
        let sol = riccati_oracle(&spec, &params, 1.0, 1000).unwrap();
        assert!(sol.k_quad[0][(0, 0)].abs() < 1e-14);
        assert!(sol.k_lin[0][0].abs() < 1e-14);
        assert_relative_eq!(sol.c_const[0], 0.060625, epsilon = 1e-10);
        assert_relative_eq!(sol.eval(0.0, &[0.7]), 0.060625, epsilon = 1e-10);
    }

    #[test]
    fn riccati_satisfies_pde_at_random_points() {
        // time derivative by finite differences along the stored path,
        // spatial terms from the ansatz, Hamiltonian from the closed form:
        // the full residual must vanish at random (t, x)
        let spec = linear_1f_spec();
        let params = ControlParams::new(2.0).unwrap();
        let steps = 2000;
        let sol = riccati_oracle(&spec, &params, 1.0, steps).unwrap();
        let model = MarketModel::from_linear(&spec).unwrap();
        let m_fac = 0.1f64 * 0.1 + 0.3 * 0.3; // Lambda Lambda^T
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..30 {
            let ti = rng.random_range(2..steps - 2);
            let t = sol.times[ti];
            let x = rng.random_range(-3.0..3.0);
            let dt = sol.times[1] - sol.times[0];
            let u_t = (sol.eval(t + dt, &[x]) - sol.eval(t - dt, &[x])) / (2.0 * dt);
            let grad = sol.gradient(t, &[x])[0];
            let hess = 2.0 * sol.k_quad[ti][(0, 0)];
            let mu = -x;
            let k_theta = hamiltonian_k_theta(&model, &[x], &[grad], &params).unwrap();
            let residual =
                u_t + mu * grad - 0.5 * m_fac * grad * grad + 0.5 * m_fac * hess - k_theta;
            assert!(
                residual.abs() < 5e-6,
                "riccati residual {residual} at t={t}, x={x}"
            );
        }
    }

    #[test]
    fn riccati_residual_quadratic_coefficients_vanish() {
        // fit the residual in x by a quadratic at a fixed t: all three
        // coefficients must vanish (term-by-term validation of the ODEs)
        let spec = linear_1f_spec();
        let params = ControlParams::new(2.0).unwrap();
        let steps = 2000;
        let sol = riccati_oracle(&spec, &params, 1.0, steps).unwrap();
        let model = MarketModel::from_linear(&spec).unwrap();
        let m_fac = 0.1f64 * 0.1 + 0.3 * 0.3;
        let ti = steps / 3;
        let t = sol.times[ti];
        let dt = sol.times[1] - sol.times[0];
        let res_at = |x: f64| {
            let u_t = (sol.eval(t + dt, &[x]) - sol.eval(t - dt, &[x])) / (2.0 * dt);
            let grad = sol.gradient(t, &[x])[0];
            let hess = 2.0 * sol.k_quad[ti][(0, 0)];
            let k_theta = hamiltonian_k_theta(&model, &[x], &[grad], &params).unwrap();
            u_t + (-x) * grad - 0.5 * m_fac * grad * grad + 0.5 * m_fac * hess - k_theta
        };
        // the residual of a quadratic ansatz is quadratic in x; an exact
        // 3-point fit isolates each coefficient
        let (rm, r0, rp) = (res_at(-1.0), res_at(0.0), res_at(1.0));
        let c0 = r0;
        let c1 = 0.5 * (rp - rm);
        let c2 = 0.5 * (rp + rm) - r0;
        assert!(c0.abs() < 5e-6, "constant term {c0}");
        assert!(c1.abs() < 5e-6, "linear term {c1}");
        assert!(c2.abs() < 5e-6, "quadratic term {c2}");
    }

    #[test]
    fn riccati_blowup_detected() {
        let spec = LinearGaussianSpec {
            a0: DVector::from_vec(vec![0.10]),
            a_mat: DMatrix::from_row_slice(1, 1, &[1e200]),
            b0: DVector::zeros(1),
            b_mat: DMatrix::from_row_slice(1, 1, &[-1.0]),
            sigma: DMatrix::from_row_slice(1, 2, &[0.2, 0.0]),
            lambda: DMatrix::from_row_slice(1, 2, &[0.0, 0.3]),
            r0: 0.03,
        };
        let params = ControlParams::new(2.0).unwrap();
        assert!(riccati_oracle(&spec, &params, 1.0, 100).is_err());
    }

    #[test]
    fn brute_force_merton_argmin() {
        let model = merton_model();
        let params = ControlParams::new(2.0).unwrap();
        let scan =
            brute_force_hamiltonian(&model, &[0.0], &[0.0], &params, (&[-5.0], &[5.0]), 2001)
                .unwrap();
        let cell = scan.cell[0];
        assert!((scan.argmin[0] - 0.875).abs() <= cell);
        let k = hamiltonian_k_theta(&model, &[0.0], &[0.0], &params).unwrap();
        assert!(scan.min_value >= k - 1e-12);
        assert!(scan.min_value - k <= 1e-4);
    }

    #[test]
    fn brute_force_no_premium_argmin_zero() {
        let model = MarketModel::constant(
            vec![0.03],
            vec![0.0],
            DMatrix::from_row_slice(1, 2, &[0.2, 0.0]),
            DMatrix::from_row_slice(1, 2, &[0.0, 0.3]),
            0.03,
        )
        .unwrap();
        let params = ControlParams::new(2.0).unwrap();
        let scan =
            brute_force_hamiltonian(&model, &[0.0], &[0.0], &params, (&[-5.0], &[5.0]), 1001)
                .unwrap();
        assert!(scan.argmin[0].abs() <= scan.cell[0]);
        assert_relative_eq!(scan.min_value, -0.03, epsilon = 1e-6);
    }

    #[test]
    fn brute_force_two_asset_against_selector() {
        // random 2-asset instance: grid argmin within one cell of h*
        let model = MarketModel::constant(
            vec![0.09, 0.12],
            vec![0.0],
            DMatrix::from_row_slice(2, 3, &[0.22, 0.05, 0.02, 0.04, 0.25, 0.03]),
            DMatrix::from_row_slice(1, 3, &[0.05, 0.0, 0.3]),
            0.03,
        )
        .unwrap();
        let params = ControlParams::new(2.0).unwrap();
        let grad = [0.6];
        let h_star = minimizing_selector(&model, &[0.1], &grad, &params).unwrap();
        let scan = brute_force_hamiltonian(
            &model,
            &[0.1],
            &grad,
            &params,
            (&[-5.0, -5.0], &[5.0, 5.0]),
            401,
        )
        .unwrap();
        for d in 0..2 {
            assert!(
                (scan.argmin[d] - h_star[d]).abs() <= scan.cell[d],
                "dim {d}: {} vs {}",
                scan.argmin[d],
                h_star[d]
            );
        }
        let k = hamiltonian_k_theta(&model, &[0.1], &grad, &params).unwrap();
        assert!(scan.min_value >= k - 1e-12);
    }

    #[test]
    fn brute_force_box_expansion() {
        // box too small around h* = 0.875: one expansion must fix it
        let model = merton_model();
        let params = ControlParams::new(2.0).unwrap();
        let scan =
            brute_force_hamiltonian(&model, &[0.0], &[0.0], &params, (&[-0.5], &[0.5]), 101)
                .unwrap();
        assert!(scan.expanded);
        assert!((scan.argmin[0] - 0.875).abs() <= 2.0 * scan.cell[0]);
    }

    #[test]
    fn brute_force_argmin_converges_dyadically() {
        // argmin error shrinks with the cell size across three dyadic levels
        let model = merton_model();
        let params = ControlParams::new(2.0).unwrap();
        let mut prev_err = f64::INFINITY;
        for count in [129usize, 257, 513] {
            let scan = brute_force_hamiltonian(
                &model,
                &[0.0],
                &[0.0],
                &params,
                (&[-5.12], &[5.12]),
                count,
            )
            .unwrap();
            let err = (scan.argmin[0] - 0.875).abs().max(1e-15);
            assert!(err <= scan.cell[0]);
            assert!(err <= prev_err + 1e-15);
            prev_err = err;
        }
    }

    #[test]
    fn saddle_scan_zero_gradient_no_premium() {
        let model = MarketModel::constant(
            vec![0.03],
            vec![0.0],
            DMatrix::from_row_slice(1, 2, &[0.2, 0.0]),
            DMatrix::from_row_slice(1, 2, &[0.0, 0.3]),
            0.03,
        )
        .unwrap();
        let params = ControlParams::new(2.0).unwrap();
        let scan = brute_force_saddle(
            &model,
            &[0.0],
            &[0.0],
            &params,
            (&[-1.0], &[1.0]),
            (&[-1.0, -1.0], &[1.0, 1.0]),
            (41, 21),
        )
        .unwrap();
        // optima at h = 0, omega = 0: both values equal -r
        assert_relative_eq!(scan.supinf, -0.03, epsilon = 1e-9);
        assert_relative_eq!(scan.infsup, -0.03, epsilon = 1e-9);
        assert!(scan.saddle_h[0].abs() < 0.06);
        assert!(scan.saddle_omega.norm() < 0.12);
    }

    #[test]
    fn saddle_scan_merton_value() {
        // zero gradient: the saddle value is the constant-model game value -rho
        let model = merton_model();
        let params = ControlParams::new(2.0).unwrap();
        let scan = brute_force_saddle(
            &model,
            &[0.0],
            &[0.0],
            &params,
            (&[-3.0], &[3.0]),
            (&[-1.0, -1.0], &[1.0, 1.0]),
            (121, 21),
        )
        .unwrap();
        assert!((scan.supinf + 0.060625).abs() < 2e-3);
        assert!((scan.infsup - scan.supinf).abs() <= scan.resolution_bound);
    }

    #[test]
    fn saddle_inequalities_hold_for_saddle_controls() {
        // block-orthogonal instance, random gradients: the analytic pair
        // satisfies both inequalities on a 41x41 control grid
        let model = merton_model();
        let params = ControlParams::new(2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let grad = [rng.random_range(-1.5..1.5)];
            let x = [rng.random_range(-1.0..1.0)];
            let ctrl = saddle_controls(&model, &x, &grad, &params).unwrap();
            let (w_gap, h_gap) = saddle_inequality_gaps(
                &model,
                &x,
                &grad,
                &params,
                ctrl.h.as_slice(),
                ctrl.omega.as_slice(),
                (&[-5.0], &[5.0]),
                (&[-5.0, -5.0], &[5.0, 5.0]),
                (41, 41),
            )
            .unwrap();
            assert!(w_gap <= 1e-12, "omega inequality violated by {w_gap}");
            assert!(h_gap <= 1e-12, "h inequality violated by {h_gap}");
        }
    }

    #[test]
    fn saddle_scan_supinf_matches_infsup_random_instance() {
        let model = merton_model();
        let params = ControlParams::new(2.0).unwrap();
        let scan = brute_force_saddle(
            &model,
            &[0.3],
            &[0.8],
            &params,
            (&[-3.0], &[3.0]),
            (&[-2.0, -2.0], &[2.0, 2.0]),
            (61, 61),
        )
        .unwrap();
        assert!(
            (scan.supinf - scan.infsup).abs() <= scan.resolution_bound,
            "gap {} vs bound {}",
            (scan.supinf - scan.infsup).abs(),
            scan.resolution_bound
        );
    }
}
