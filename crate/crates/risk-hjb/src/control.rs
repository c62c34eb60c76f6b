//! Control maps: the Hamiltonian of the reduced HJB equation, its
//! minimizing selector, the game running cost, the controlled-factor
//! generator, and the saddle controls.
//!
//! The Hamiltonian is
//!
//! ```text
//! K_theta(x, p) = inf_h [ (theta+2)/4 h'Sh - h'(a - r 1) - r + theta/4 h'C p ]
//! ```
//!
//! with `S = sigma sigma'` and `C = sigma Lambda'`. The strictly convex
//! quadratic has the unique minimizer
//!
//! ```text
//! h*(x, p) = 2/(theta+2) S^{-1} [ (a - r 1) - theta/4 C p ]
//! ```
//!
//! which is the single source of truth for every strategy in the toolkit
//! and is cross-checked against a brute-force grid search in `oracles`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::{CoeffBuf, MarketModel};

/// Risk-sensitivity parameter; theta > 0 means the investor is risk averse.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ControlParams {
    theta: f64,
}

impl ControlParams {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(Error::Config(format!(
                "risk sensitivity theta must be positive and finite (got {theta})"
            )));
        }
        Ok(ControlParams { theta })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

/// A pair of investment fractions and adversarial drift distortion.
#[derive(Debug, Clone)]
pub struct ControlPoint {
    pub h: DVector<f64>,
    pub omega: DVector<f64>,
}

// ---------------------------------------------------------------------------
// Per-point coefficient products shared by the control maps and the solvers
// ---------------------------------------------------------------------------

/// Packed products at one spatial point: excess drift, inverse of
/// sigma*sigma^T, the hedging coupling sigma*Lambda^T, factor drift,
/// factor diffusion, and the short rate. All matrices row-major.
#[derive(Debug, Clone)]
pub(crate) struct NodeCoeffs {
    pub m: usize,
    pub n: usize,
    /// a - r 1, length m
    pub amr: Vec<f64>,
    /// (sigma sigma^T)^{-1}, m x m
    pub s_inv: Vec<f64>,
    /// sigma sigma^T, m x m
    pub s: Vec<f64>,
    /// sigma Lambda^T, m x n
    pub c: Vec<f64>,
    /// mu, length n
    pub mu: Vec<f64>,
    /// Lambda Lambda^T, n x n
    pub m_mat: Vec<f64>,
    pub r: f64,
}

impl NodeCoeffs {
    pub fn at(model: &MarketModel, x: &[f64]) -> Result<Self> {
        let mut buf = CoeffBuf::new(model.m(), model.n());
        model.eval_into(x, &mut buf)?;
        Self::from_buf(model, &buf, x)
    }

    pub fn from_buf(model: &MarketModel, buf: &CoeffBuf, x: &[f64]) -> Result<Self> {
        let m = model.m();
        let n = model.n();
        let k = model.noise_dim();
        let mut s = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..=i {
                let mut v = 0.0;
                for kk in 0..k {
                    v += buf.sigma[i * k + kk] * buf.sigma[j * k + kk];
                }
                s[i * m + j] = v;
                s[j * m + i] = v;
            }
        }
        let s_mat = DMatrix::from_row_slice(m, m, &s);
        let chol = s_mat.clone().cholesky().ok_or_else(|| {
            Error::Ellipticity(format!("sigma sigma^T singular at x = {x:?}"))
        })?;
        let s_inv_mat = chol.inverse();
        let mut s_inv = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                s_inv[i * m + j] = s_inv_mat[(i, j)];
            }
        }
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut v = 0.0;
                for kk in 0..k {
                    v += buf.sigma[i * k + kk] * buf.lambda[j * k + kk];
                }
                c[i * n + j] = v;
            }
        }
        let mut m_mat = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut v = 0.0;
                for kk in 0..k {
                    v += buf.lambda[i * k + kk] * buf.lambda[j * k + kk];
                }
                m_mat[i * n + j] = v;
                m_mat[j * n + i] = v;
            }
        }
        let amr = (0..m).map(|i| buf.a[i] - buf.r).collect();
        Ok(NodeCoeffs {
            m,
            n,
            amr,
            s_inv,
            s,
            c,
            mu: buf.mu.clone(),
            m_mat,
            r: buf.r,
        })
    }

    /// g = (a - r 1) - theta/4 C grad, written into `g`.
    #[inline]
    pub fn hedged_excess(&self, theta: f64, grad: &[f64], g: &mut [f64]) {
        for i in 0..self.m {
            let mut v = self.amr[i];
            for j in 0..self.n {
                v -= 0.25 * theta * self.c[i * self.n + j] * grad[j];
            }
            g[i] = v;
        }
    }

    /// K_theta(x, grad) in closed form.
    #[inline]
    pub fn k_theta(&self, theta: f64, grad: &[f64], g: &mut [f64]) -> f64 {
        self.hedged_excess(theta, grad, g);
        let mut quad = 0.0;
        for i in 0..self.m {
            for j in 0..self.m {
                quad += g[i] * self.s_inv[i * self.m + j] * g[j];
            }
        }
        -self.r - quad / (theta + 2.0)
    }

    /// Minimizing selector h*(x, grad), written into `h`.
    #[inline]
    pub fn selector(&self, theta: f64, grad: &[f64], g: &mut [f64], h: &mut [f64]) {
        self.hedged_excess(theta, grad, g);
        let scale = 2.0 / (theta + 2.0);
        for i in 0..self.m {
            let mut v = 0.0;
            for j in 0..self.m {
                v += self.s_inv[i * self.m + j] * g[j];
            }
            h[i] = scale * v;
        }
    }

    /// The bracketed expression of the Hamiltonian at an arbitrary `h`.
    #[inline]
    pub fn bracket(&self, theta: f64, grad: &[f64], h: &[f64]) -> f64 {
        let mut quad = 0.0;
        for i in 0..self.m {
            for j in 0..self.m {
                quad += h[i] * self.s[i * self.m + j] * h[j];
            }
        }
        let mut lin = 0.0;
        let mut cross = 0.0;
        for i in 0..self.m {
            lin += h[i] * self.amr[i];
            for j in 0..self.n {
                cross += h[i] * self.c[i * self.n + j] * grad[j];
            }
        }
        0.25 * (theta + 2.0) * quad - lin - self.r + 0.25 * theta * cross
    }
}

// ---------------------------------------------------------------------------
// Public control maps
// ---------------------------------------------------------------------------

/// Unique minimizer of the Hamiltonian bracket at `(x, grad_u)`.
pub fn minimizing_selector(
    model: &MarketModel,
    x: &[f64],
    grad_u: &[f64],
    params: &ControlParams,
) -> Result<DVector<f64>> {
    let nc = NodeCoeffs::at(model, x)?;
    let mut g = vec![0.0; nc.m];
    let mut h = vec![0.0; nc.m];
    nc.selector(params.theta(), grad_u, &mut g, &mut h);
    Ok(DVector::from_vec(h))
}

/// Infimum value of the Hamiltonian bracket (closed form).
pub fn hamiltonian_k_theta(
    model: &MarketModel,
    x: &[f64],
    grad_u: &[f64],
    params: &ControlParams,
) -> Result<f64> {
    let nc = NodeCoeffs::at(model, x)?;
    let mut g = vec![0.0; nc.m];
    Ok(nc.k_theta(params.theta(), grad_u, &mut g))
}

/// The Hamiltonian bracket evaluated at an arbitrary investment fraction.
pub fn hamiltonian_bracket(
    model: &MarketModel,
    x: &[f64],
    grad_u: &[f64],
    params: &ControlParams,
    h: &[f64],
) -> Result<f64> {
    let nc = NodeCoeffs::at(model, x)?;
    Ok(nc.bracket(params.theta(), grad_u, h))
}

/// Running cost of the ergodic game:
/// `(theta+2)/4 h'Sh - ||omega||^2/theta - h'(a - r 1) - r`.
pub fn running_cost(
    model: &MarketModel,
    x: &[f64],
    ctrl: &ControlPoint,
    params: &ControlParams,
) -> Result<f64> {
    let nc = NodeCoeffs::at(model, x)?;
    Ok(running_cost_from(&nc, ctrl, params.theta()))
}

pub(crate) fn running_cost_from(nc: &NodeCoeffs, ctrl: &ControlPoint, theta: f64) -> f64 {
    let m = nc.m;
    let mut quad = 0.0;
    for i in 0..m {
        for j in 0..m {
            quad += ctrl.h[i] * nc.s[i * m + j] * ctrl.h[j];
        }
    }
    let mut lin = 0.0;
    for i in 0..m {
        lin += ctrl.h[i] * nc.amr[i];
    }
    let omega2: f64 = ctrl.omega.iter().map(|v| v * v).sum();
    0.5 * (0.5 * theta + 1.0) * quad - omega2 / theta - lin - nc.r
}

/// Drift and diffusion of the controlled factor process:
/// `drift = mu + Lambda omega + theta/2 Lambda sigma' h`, `diffusion = Lambda Lambda'`.
pub fn generator_coefficients(
    model: &MarketModel,
    x: &[f64],
    ctrl: &ControlPoint,
    params: &ControlParams,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let mu = model.mu_at(x)?;
    let lambda = model.lambda_at(x)?;
    let sigma = model.sigma_at(x)?;
    let m_mat = &lambda * lambda.transpose();
    let drift =
        &mu + &lambda * &ctrl.omega + (&lambda * sigma.transpose() * &ctrl.h) * (0.5 * params.theta());
    Ok((drift, (&m_mat + m_mat.transpose()) * 0.5))
}

/// First-order game integrand: the controlled drift applied to a gradient
/// plus the running cost. The Isaacs check iterates optima of this map.
pub fn game_integrand(
    model: &MarketModel,
    x: &[f64],
    grad_u_hat: &[f64],
    ctrl: &ControlPoint,
    params: &ControlParams,
) -> Result<f64> {
    let (drift, _) = generator_coefficients(model, x, ctrl, params)?;
    let first_order: f64 = drift.iter().zip(grad_u_hat).map(|(d, g)| d * g).sum();
    Ok(first_order + running_cost(model, x, ctrl, params)?)
}

/// Saddle controls of the ergodic game at a bias gradient:
/// the selector for the investor and `omega = theta/2 Lambda' grad` for the
/// adversary.
pub fn saddle_controls(
    model: &MarketModel,
    x: &[f64],
    grad_u_hat: &[f64],
    params: &ControlParams,
) -> Result<ControlPoint> {
    let h = minimizing_selector(model, x, grad_u_hat, params)?;
    let lambda = model.lambda_at(x)?;
    let grad = DVector::from_column_slice(grad_u_hat);
    let omega = lambda.transpose() * grad * (0.5 * params.theta());
    Ok(ControlPoint { h, omega })
}
