//! Ergodic (infinite-horizon) solver: the risk-sensitive growth rate and
//! bias function are obtained as the long-horizon limit of the auxiliary
//! Cauchy problem, reusing the finite-horizon stepper under time reversal.
//!
//! The march records checkpoints on a geometric schedule `T_i = T0 * 2^i`.
//! At each checkpoint the normalized field `phi(T, .) = u~(T, .) - u~(T, x0)`
//! and the discrete time derivative `xi = du~/dt` are captured; convergence
//! is declared when consecutive normalized fields are Cauchy in the interior
//! max norm and the interior spread of `xi` collapses. The growth rate is
//! the interior mean of `xi` (the limit is a constant, so averaging only
//! suppresses discretization noise), and the bias is the final normalized
//! field. A run that exhausts its horizon budget returns a divergence error
//! carrying the full history; that is the expected outcome for factor
//! dynamics without a stabilizing drift.

use serde::Serialize;

use crate::control::{game_integrand, ControlParams, ControlPoint, NodeCoeffs};
use crate::error::{DivergenceHistory, Error, Result};
use crate::hjb::{gradient_at, GridField, SolverConfig, Stepper, StrategyField, TRUST_MARGIN};
use crate::market::{Grid, MarketModel};

/// Geometric checkpoint schedule and convergence tolerances.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ErgodicSchedule {
    /// First checkpoint horizon.
    pub t0: f64,
    /// Horizon budget; exceeding it is a divergence error.
    pub max_horizon: f64,
    /// Interior max-norm tolerance on consecutive normalized fields.
    pub tol_u: f64,
    /// Interior standard-deviation tolerance on the discrete time derivative.
    pub tol_rho: f64,
}

impl Default for ErgodicSchedule {
    fn default() -> Self {
        ErgodicSchedule {
            t0: 1.0,
            max_horizon: 16384.0,
            tol_u: 1e-6,
            tol_rho: 1e-6,
        }
    }
}

/// One checkpoint of the long-horizon march.
#[derive(Debug, Clone)]
pub struct CheckpointRecord {
    pub horizon: f64,
    /// Max interior |phi(T_i) - phi(T_{i-1})| (NaN at the first checkpoint).
    pub cauchy_increment: f64,
    /// Interior standard deviation of the discrete time derivative.
    pub rate_std: f64,
    /// Interior mean of the discrete time derivative.
    pub rate_mean: f64,
    /// Normalized field at this checkpoint.
    pub phi: Vec<f64>,
    /// Discrete time derivative at this checkpoint.
    pub xi: Vec<f64>,
}

/// Converged ergodic pair with its convergence history.
#[derive(Debug, Clone)]
pub struct ErgodicSolution {
    /// Risk-sensitive growth-rate constant, per unit time.
    pub rho: f64,
    /// Bias function, normalized to vanish at the normalization node.
    pub u_hat: GridField,
    pub x0_index: usize,
    pub x0: Vec<f64>,
    pub history: Vec<CheckpointRecord>,
    pub converged_horizon: f64,
    /// Fraction of axis rays from the normalization node on which the bias
    /// increases toward the boundary (growth condition diagnostic).
    pub boundary_growth_fraction: f64,
    pub boundary_growth_ok: bool,
}

impl ErgodicSolution {
    /// Gradient of the bias at a node.
    pub fn gradient_into(&self, node: usize, out: &mut [f64]) {
        self.u_hat.gradient_into(0, node, out);
    }
}

/// Long-horizon limit of the auxiliary Cauchy problem.
///
/// `x0` is snapped to the nearest grid node; `None` uses the node nearest
/// the domain center.
pub fn solve_ergodic(
    model: &MarketModel,
    params: &ControlParams,
    grid: &Grid,
    x0: Option<&[f64]>,
    cfg: &SolverConfig,
    schedule: &ErgodicSchedule,
) -> Result<ErgodicSolution> {
    if schedule.t0 <= 0.0 || schedule.max_horizon < schedule.t0 {
        return Err(Error::Config(
            "ergodic schedule needs 0 < t0 <= max_horizon".into(),
        ));
    }
    let x0_index = match x0 {
        Some(x) => grid.nearest_node(x),
        None => grid.center_node(),
    };
    let stepper = Stepper::new(model, params, grid, cfg, cfg.dt)?;
    let mut scratch = stepper.scratch();
    let nodes = grid.node_count();
    let interior = grid.trust_region(TRUST_MARGIN);
    if interior.is_empty() {
        return Err(Error::Config("grid too small: empty trust region".into()));
    }
    let dt = stepper.dt;

    let mut w = vec![0.0; nodes];
    let mut w_prev = vec![0.0; nodes];
    let mut history: Vec<CheckpointRecord> = Vec::new();
    let mut prev_phi: Option<Vec<f64>> = None;
    let mut step_index: usize = 0;
    let mut checkpoint = schedule.t0;

    loop {
        let target_step = (checkpoint / dt).round().max(1.0) as usize;
        while step_index < target_step {
            if step_index + 1 == target_step {
                w_prev.copy_from_slice(&w);
            }
            stepper.step(&mut w, &mut scratch)?;
            step_index += 1;
        }
        let horizon = step_index as f64 * dt;
        let anchor = w[x0_index];
        let phi: Vec<f64> = w.iter().map(|&v| v - anchor).collect();
        let xi: Vec<f64> = w
            .iter()
            .zip(&w_prev)
            .map(|(&a, &b)| (a - b) / dt)
            .collect();
        let mut mean = 0.0;
        for &i in &interior {
            mean += xi[i];
        }
        mean /= interior.len() as f64;
        let mut var = 0.0;
        for &i in &interior {
            var += (xi[i] - mean) * (xi[i] - mean);
        }
        let rate_std = (var / interior.len() as f64).sqrt();
        let cauchy = match &prev_phi {
            None => f64::NAN,
            Some(prev) => interior
                .iter()
                .map(|&i| (phi[i] - prev[i]).abs())
                .fold(0.0, f64::max),
        };
        history.push(CheckpointRecord {
            horizon,
            cauchy_increment: cauchy,
            rate_std,
            rate_mean: mean,
            phi: phi.clone(),
            xi,
        });
        let converged = cauchy.is_finite() && cauchy <= schedule.tol_u && rate_std <= schedule.tol_rho;
        if converged {
            let u_hat = GridField::new(grid.clone(), vec![0.0], phi);
            let (frac, ok) = boundary_growth(&u_hat, x0_index);
            return Ok(ErgodicSolution {
                rho: mean,
                u_hat,
                x0_index,
                x0: grid.node(x0_index),
                history,
                converged_horizon: horizon,
                boundary_growth_fraction: frac,
                boundary_growth_ok: ok,
            });
        }
        prev_phi = Some(phi);
        checkpoint *= 2.0;
        if checkpoint > schedule.max_horizon * (1.0 + 1e-12) {
            return Err(Error::Diverged {
                max_horizon: schedule.max_horizon,
                history: DivergenceHistory {
                    horizons: history.iter().map(|c| c.horizon).collect(),
                    cauchy_increments: history.iter().map(|c| c.cauchy_increment).collect(),
                    rate_stds: history.iter().map(|c| c.rate_std).collect(),
                },
            });
        }
    }
}

/// Checks the bias along the 2n axis rays from the normalization node:
/// a ray counts as growing when the value at the last trust-region node
/// exceeds the value halfway out.
fn boundary_growth(u_hat: &GridField, x0_index: usize) -> (f64, bool) {
    let grid = u_hat.grid();
    let n = grid.dim();
    let mi0 = grid.multi_index(x0_index);
    let margins = grid.margin_nodes(TRUST_MARGIN);
    let mut grown = 0usize;
    let mut total = 0usize;
    for d in 0..n {
        for sign in [-1isize, 1isize] {
            let far_idx = if sign > 0 {
                grid.points()[d] - 1 - margins[d].max(1)
            } else {
                margins[d].max(1)
            };
            let mid_idx = (mi0[d] as isize + (far_idx as isize - mi0[d] as isize) / 2) as usize;
            if mid_idx == mi0[d] || far_idx == mid_idx {
                continue;
            }
            let mut mi_far = mi0.clone();
            mi_far[d] = far_idx;
            let mut mi_mid = mi0.clone();
            mi_mid[d] = mid_idx;
            total += 1;
            if u_hat.value(0, grid.flat_index(&mi_far)) > u_hat.value(0, grid.flat_index(&mi_mid)) {
                grown += 1;
            }
        }
    }
    if total == 0 {
        return (0.0, false);
    }
    let frac = grown as f64 / total as f64;
    (frac, frac >= 0.9)
}

/// Interior max-norm residual of the stationary equation at the converged
/// pair: `rho - [1/2 tr(M D2 u^) + mu.grad u^ - theta/4 grad'M grad - K_theta]`.
pub fn ergodic_residual(
    sol: &ErgodicSolution,
    model: &MarketModel,
    params: &ControlParams,
) -> Result<f64> {
    let grid = sol.u_hat.grid().clone();
    let n = grid.dim();
    let theta = params.theta();
    let slice = sol.u_hat.slice(0);
    let mut stride = vec![0usize; n];
    let mut s = 1;
    for d in (0..n).rev() {
        stride[d] = s;
        s *= grid.points()[d];
    }
    let mut grad = vec![0.0; n];
    let mut g = vec![0.0; model.m()];
    let mut worst = 0.0f64;
    for &i in &grid.trust_region(TRUST_MARGIN) {
        let c = NodeCoeffs::at(model, &grid.node(i))?;
        gradient_at(&grid, slice, i, &mut grad);
        let mut space = 0.0;
        for d in 0..n {
            let h = grid.spacing()[d];
            space += 0.5 * c.m_mat[d * n + d] * (slice[i + stride[d]] - 2.0 * slice[i] + slice[i - stride[d]])
                / (h * h);
        }
        if n == 2 {
            let m01 = c.m_mat[1];
            if m01 != 0.0 {
                let (s0, s1) = (stride[0], stride[1]);
                space += m01
                    * (slice[i + s0 + s1] - slice[i + s0 - s1] - slice[i - s0 + s1]
                        + slice[i - s0 - s1])
                    / (4.0 * grid.spacing()[0] * grid.spacing()[1]);
            }
        }
        let mut quad = 0.0;
        for a in 0..n {
            for b in 0..n {
                quad += grad[a] * c.m_mat[a * n + b] * grad[b];
            }
        }
        for d in 0..n {
            space += c.mu[d] * grad[d];
        }
        let k_theta = c.k_theta(theta, &grad, &mut g);
        worst = worst.max((sol.rho - (space - 0.25 * theta * quad - k_theta)).abs());
    }
    Ok(worst)
}

/// Iterated optima of the game integrand on dense control grids. Returns
/// `(sup_omega inf_h, inf_h sup_omega)`; the two agree within the control
/// grid resolution because the integrand is concave in omega and convex
/// in h.
pub fn isaacs_check(
    model: &MarketModel,
    params: &ControlParams,
    x: &[f64],
    grad_u_hat: &[f64],
    h_box: (&[f64], &[f64]),
    omega_box: (&[f64], &[f64]),
    grid_counts: (usize, usize),
) -> Result<(f64, f64)> {
    let m = model.m();
    let k = model.noise_dim();
    let (ch, cw) = grid_counts;
    if ch < 3 || cw < 3 {
        return Err(Error::Config("isaacs check needs at least 3 grid points per axis".into()));
    }
    let nh = ch.pow(m as u32);
    let nw = cw.pow(k as u32);
    let coord = |lo: f64, hi: f64, count: usize, i: usize| lo + (hi - lo) * i as f64 / (count - 1) as f64;
    let point = |lo: &[f64], hi: &[f64], count: usize, flat: usize, out: &mut [f64]| {
        let mut rem = flat;
        for d in (0..out.len()).rev() {
            out[d] = coord(lo[d], hi[d], count, rem % count);
            rem /= count;
        }
    };
    let mut table = vec![0.0; nh * nw];
    let mut hbuf = vec![0.0; m];
    let mut wbuf = vec![0.0; k];
    for ih in 0..nh {
        point(h_box.0, h_box.1, ch, ih, &mut hbuf);
        for iw in 0..nw {
            point(omega_box.0, omega_box.1, cw, iw, &mut wbuf);
            let ctrl = ControlPoint {
                h: nalgebra::DVector::from_column_slice(&hbuf),
                omega: nalgebra::DVector::from_column_slice(&wbuf),
            };
            table[ih * nw + iw] = game_integrand(model, x, grad_u_hat, &ctrl, params)?;
        }
    }
    let mut supinf = f64::NEG_INFINITY;
    for iw in 0..nw {
        let mut inner = f64::INFINITY;
        for ih in 0..nh {
            inner = inner.min(table[ih * nw + iw]);
        }
        supinf = supinf.max(inner);
    }
    let mut infsup = f64::INFINITY;
    for ih in 0..nh {
        let mut inner = f64::NEG_INFINITY;
        for iw in 0..nw {
            inner = inner.max(table[ih * nw + iw]);
        }
        infsup = infsup.min(inner);
    }
    Ok((supinf, infsup))
}

/// Time-independent feedback strategy from the bias gradient.
pub fn stationary_strategy(
    sol: &ErgodicSolution,
    model: &MarketModel,
    params: &ControlParams,
) -> Result<StrategyField> {
    let grid = sol.u_hat.grid().clone();
    let nodes = grid.node_count();
    let n = grid.dim();
    let m = model.m();
    let theta = params.theta();
    let mut h = vec![0.0; nodes * m];
    let mut grad = vec![0.0; n];
    let mut g = vec![0.0; m];
    for i in 0..nodes {
        let c = NodeCoeffs::at(model, &grid.node(i))?;
        sol.u_hat.gradient_into(0, i, &mut grad);
        c.selector(theta, &grad, &mut g, &mut h[i * m..(i + 1) * m]);
    }
    Ok(StrategyField::new(grid, vec![0.0], m, h))
}

/// Drift distortion built from the bias gradient:
/// `omega(x) = sign * theta/2 Lambda(x)' grad u^(x)`.
///
/// With `sign = +1` this is the distortion entering the saddle-control
/// verification of the game integrand. With `sign = -1` the controlled
/// factor process satisfies the ergodic identity: the time average of the
/// running cost converges to `-rho` (the constant-model calibration of
/// `sim::game_value_estimate`).
pub struct BiasDistortion {
    grad: StrategyField,
    model: MarketModel,
    theta: f64,
    sign: f64,
}

impl BiasDistortion {
    pub fn new(
        sol: &ErgodicSolution,
        model: &MarketModel,
        params: &ControlParams,
        sign: f64,
    ) -> Self {
        let grid = sol.u_hat.grid().clone();
        let n = grid.dim();
        let nodes = grid.node_count();
        let mut data = vec![0.0; nodes * n];
        for i in 0..nodes {
            sol.u_hat.gradient_into(0, i, &mut data[i * n..(i + 1) * n]);
        }
        BiasDistortion {
            grad: StrategyField::new(grid, vec![0.0], n, data),
            model: model.clone(),
            theta: params.theta(),
            sign,
        }
    }
}

impl crate::sim::DistortionRule for BiasDistortion {
    fn omega_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.model.n();
        let k = self.model.noise_dim();
        let mut g = vec![0.0; n];
        self.grad.fractions_at(0.0, x, &mut g);
        match self.model.lambda_at(x) {
            Ok(lambda) => {
                for j in 0..k {
                    let mut v = 0.0;
                    for d in 0..n {
                        v += lambda[(d, j)] * g[d];
                    }
                    out[j] = self.sign * 0.5 * self.theta * v;
                }
            }
            Err(_) => out[..k].fill(f64::NAN),
        }
    }
}

/// Gradient-bound diagnostic fields of the long-horizon estimate.
#[derive(Debug, Clone)]
pub struct QBUDiagnostic {
    /// n x n field, row-major per node.
    pub q_field: Vec<f64>,
    /// n field per node.
    pub b_field: Vec<f64>,
    /// scalar field per node.
    pub u_field: Vec<f64>,
    /// Max over interior nodes of
    /// `|grad u~|^2 - 4(1+c)(theta+2)/(theta delta0) |du~/dt|` per checkpoint.
    pub lhs_max_per_checkpoint: Vec<f64>,
    pub c_probe: f64,
    pub delta0: f64,
}

/// Evaluates the gradient-bound ingredients
///
/// ```text
/// Q = theta/4 Lambda [I - theta/(theta+2) sigma'(sigma sigma')^{-1} sigma] Lambda'
/// B = mu - theta/(theta+2) Lambda sigma' (sigma sigma')^{-1} (a - r 1)
/// U = 1/(theta+2) (a - r 1)'(sigma sigma')^{-1}(a - r 1) + r
/// ```
///
/// and the left-hand-side combination along the convergence history. The
/// multiplicative constant of the bound is unknown, so the trajectory is
/// reported without a pass/fail verdict.
pub fn compute_qbu(
    model: &MarketModel,
    params: &ControlParams,
    sol: &ErgodicSolution,
    c_probe: f64,
    delta0: f64,
) -> Result<QBUDiagnostic> {
    if !(delta0 > 0.0) {
        return Err(Error::Config(format!(
            "uniform ellipticity constant must be positive (got {delta0})"
        )));
    }
    if c_probe <= 0.0 {
        return Err(Error::Config("probe constant must be positive".into()));
    }
    let grid = sol.u_hat.grid().clone();
    let n = grid.dim();
    let nodes = grid.node_count();
    let theta = params.theta();
    let mut q_field = vec![0.0; nodes * n * n];
    let mut b_field = vec![0.0; nodes * n];
    let mut u_field = vec![0.0; nodes];
    for i in 0..nodes {
        let c = NodeCoeffs::at(model, &grid.node(i))?;
        let m = c.m;
        // Q = theta/4 (M - theta/(theta+2) C' S^{-1} C)
        for a in 0..n {
            for b in 0..n {
                let mut proj = 0.0;
                for ia in 0..m {
                    for ib in 0..m {
                        proj += c.c[ia * n + a] * c.s_inv[ia * m + ib] * c.c[ib * n + b];
                    }
                }
                q_field[i * n * n + a * n + b] =
                    0.25 * theta * (c.m_mat[a * n + b] - theta / (theta + 2.0) * proj);
            }
        }
        // B = mu - theta/(theta+2) C' S^{-1} (a - r1)
        for a in 0..n {
            let mut corr = 0.0;
            for ia in 0..m {
                for ib in 0..m {
                    corr += c.c[ia * n + a] * c.s_inv[ia * m + ib] * c.amr[ib];
                }
            }
            b_field[i * n + a] = c.mu[a] - theta / (theta + 2.0) * corr;
        }
        // U = 1/(theta+2) (a-r1)' S^{-1} (a-r1) + r
        let mut quad = 0.0;
        for ia in 0..m {
            for ib in 0..m {
                quad += c.amr[ia] * c.s_inv[ia * m + ib] * c.amr[ib];
            }
        }
        u_field[i] = quad / (theta + 2.0) + c.r;
    }

    let factor = 4.0 * (1.0 + c_probe) * (theta + 2.0) / (theta * delta0);
    let interior = grid.trust_region(TRUST_MARGIN);
    let mut lhs_max_per_checkpoint = Vec::with_capacity(sol.history.len());
    let mut grad = vec![0.0; n];
    for rec in &sol.history {
        let mut worst = f64::NEG_INFINITY;
        for &i in &interior {
            gradient_at(&grid, &rec.phi, i, &mut grad);
            let g2: f64 = grad.iter().map(|v| v * v).sum();
            worst = worst.max(g2 - factor * rec.xi[i].abs());
        }
        lhs_max_per_checkpoint.push(worst);
    }

    Ok(QBUDiagnostic {
        q_field,
        b_field,
        u_field,
        lhs_max_per_checkpoint,
        c_probe,
        delta0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::SaturatingSpec;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

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

    fn theta2() -> ControlParams {
        ControlParams::new(2.0).unwrap()
    }

    /// Mean-reverting factor with saturating excess return and
    /// block-orthogonal loadings (sigma Lambda^T = 0).
    pub(crate) fn ou_model() -> MarketModel {
        MarketModel::saturating(&SaturatingSpec {
            a0: DVector::from_vec(vec![0.10]),
            a_mat: DMatrix::from_row_slice(1, 1, &[0.05]),
            b0: DVector::zeros(1),
            b_mat: DMatrix::from_row_slice(1, 1, &[-1.0]),
            sigma: DMatrix::from_row_slice(1, 2, &[0.2, 0.0]),
            lambda: DMatrix::from_row_slice(1, 2, &[0.0, 0.3]),
            r0: 0.03,
            scale: 2.0,
        })
        .unwrap()
    }

    fn quick_cfg() -> SolverConfig {
        SolverConfig {
            dt: 2e-3,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn constant_model_rate_and_flat_bias() {
        let grid = Grid::line(-1.0, 1.0, 101).unwrap();
        let sol = solve_ergodic(
            &merton_model(),
            &theta2(),
            &grid,
            None,
            &quick_cfg(),
            &ErgodicSchedule::default(),
        )
        .unwrap();
        assert_relative_eq!(sol.rho, 0.060625, epsilon = 1e-10);
        assert!(sol.u_hat.max_abs() < 1e-10);
        // normalization exact at every checkpoint
        for rec in &sol.history {
            assert_eq!(rec.phi[sol.x0_index], 0.0);
        }
    }

    #[test]
    fn ou_model_converges_and_satisfies_stationary_equation() {
        let grid = Grid::line(-3.0, 3.0, 301).unwrap();
        let sol = solve_ergodic(
            &ou_model(),
            &theta2(),
            &grid,
            None,
            &quick_cfg(),
            &ErgodicSchedule::default(),
        )
        .unwrap();
        // rate lands between the interior extremes of the local rate U(x)
        assert!(sol.rho > 0.03 && sol.rho < 0.12, "rho = {}", sol.rho);
        let res = ergodic_residual(&sol, &ou_model(), &theta2()).unwrap();
        assert!(res < 2e-3, "stationary residual {res}");
        // time derivative is nonnegative along the whole history
        for rec in &sol.history {
            let min_xi = rec.xi.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min_xi > -1e-8, "negative time derivative {min_xi}");
        }
        // the premium is monotone in x, so the bias tilts upward to the
        // right: exactly one of the two axis rays grows
        assert_relative_eq!(sol.boundary_growth_fraction, 0.5);
        assert!(!sol.boundary_growth_ok);
    }

    #[test]
    fn shift_invariance_of_normalization_point() {
        let grid = Grid::line(-3.0, 3.0, 301).unwrap();
        let a = solve_ergodic(
            &ou_model(),
            &theta2(),
            &grid,
            None,
            &quick_cfg(),
            &ErgodicSchedule::default(),
        )
        .unwrap();
        let b = solve_ergodic(
            &ou_model(),
            &theta2(),
            &grid,
            Some(&[1.0]),
            &quick_cfg(),
            &ErgodicSchedule::default(),
        )
        .unwrap();
        assert!((a.rho - b.rho).abs() <= 2e-6, "rho shift {}", (a.rho - b.rho).abs());
        // bias fields differ by the constant u_hat_a(x1)
        let offset = a.u_hat.value(0, b.x0_index);
        let mut worst = 0.0f64;
        for &i in &grid.trust_region(TRUST_MARGIN) {
            worst = worst.max((a.u_hat.value(0, i) - offset - b.u_hat.value(0, i)).abs());
        }
        assert!(worst < 1e-5, "bias shift mismatch {worst}");
    }

    #[test]
    fn divergence_reports_history() {
        let grid = Grid::line(-3.0, 3.0, 101).unwrap();
        let schedule = ErgodicSchedule {
            t0: 0.25,
            max_horizon: 0.5,
            tol_u: 1e-12,
            tol_rho: 1e-12,
            ..ErgodicSchedule::default()
        };
        let err = solve_ergodic(&ou_model(), &theta2(), &grid, None, &quick_cfg(), &schedule)
            .unwrap_err();
        match err {
            Error::Diverged { history, .. } => {
                assert_eq!(history.horizons.len(), 2);
            }
            other => panic!("expected divergence, got {other}"),
        }
    }

    #[test]
    fn rho_decreasing_in_theta_on_constant_family() {
        let grid = Grid::line(-1.0, 1.0, 51).unwrap();
        let mut prev = f64::INFINITY;
        for theta in [1.0, 2.0, 4.0] {
            let params = ControlParams::new(theta).unwrap();
            let sol = solve_ergodic(
                &merton_model(),
                &params,
                &grid,
                None,
                &quick_cfg(),
                &ErgodicSchedule::default(),
            )
            .unwrap();
            let closed = 0.03 + 0.07 * 0.07 / ((theta + 2.0) * 0.04);
            assert_relative_eq!(sol.rho, closed, epsilon = 1e-9);
            assert!(sol.rho < prev);
            prev = sol.rho;
        }
    }

    #[test]
    fn isaacs_trivial_cases() {
        // a = r1, zero gradient: optima at h = 0, omega = 0, both values -r
        let model = MarketModel::constant(
            vec![0.03],
            vec![0.0],
            DMatrix::from_row_slice(1, 2, &[0.2, 0.0]),
            DMatrix::from_row_slice(1, 2, &[0.0, 0.3]),
            0.03,
        )
        .unwrap();
        let (supinf, infsup) = isaacs_check(
            &model,
            &theta2(),
            &[0.0],
            &[0.0],
            (&[-1.0], &[1.0]),
            (&[-1.0, -1.0], &[1.0, 1.0]),
            (41, 21),
        )
        .unwrap();
        assert_relative_eq!(supinf, -0.03, epsilon = 1e-9);
        assert_relative_eq!(infsup, -0.03, epsilon = 1e-9);

        // constant-premium instance: both optima equal -rho at zero gradient
        let (si, is) = isaacs_check(
            &merton_model(),
            &theta2(),
            &[0.0],
            &[0.0],
            (&[-3.0], &[3.0]),
            (&[-1.0, -1.0], &[1.0, 1.0]),
            (241, 21),
        )
        .unwrap();
        assert!((si + 0.060625).abs() < 1e-3, "supinf {si}");
        assert!((is - si).abs() < 1e-6);
    }

    #[test]
    fn isaacs_matches_brute_force_oracle() {
        let model = ou_model();
        let params = theta2();
        let x = [0.4];
        let grad = [0.6];
        let (supinf, infsup) = isaacs_check(
            &model,
            &params,
            &x,
            &grad,
            (&[-3.0], &[3.0]),
            (&[-2.0, -2.0], &[2.0, 2.0]),
            (61, 61),
        )
        .unwrap();
        let scan = crate::oracles::brute_force_saddle(
            &model,
            &x,
            &grad,
            &params,
            (&[-3.0], &[3.0]),
            (&[-2.0, -2.0], &[2.0, 2.0]),
            (61, 61),
        )
        .unwrap();
        assert_relative_eq!(supinf, scan.supinf, epsilon = 1e-12);
        assert_relative_eq!(infsup, scan.infsup, epsilon = 1e-12);
        assert!((supinf - infsup).abs() <= scan.resolution_bound);
    }

    #[test]
    fn stationary_strategy_merton() {
        let grid = Grid::line(-1.0, 1.0, 101).unwrap();
        let sol = solve_ergodic(
            &merton_model(),
            &theta2(),
            &grid,
            None,
            &quick_cfg(),
            &ErgodicSchedule::default(),
        )
        .unwrap();
        let strat = stationary_strategy(&sol, &merton_model(), &theta2()).unwrap();
        for i in 0..grid.node_count() {
            assert_relative_eq!(strat.fractions(0, i)[0], 0.875, epsilon = 1e-10);
        }
    }

    #[test]
    fn qbu_block_orthogonal_reduction() {
        // sigma Lambda^T = 0: Q = theta/4 M and B = mu exactly
        let model = ou_model();
        let params = theta2();
        let grid = Grid::line(-3.0, 3.0, 151).unwrap();
        let sol = solve_ergodic(
            &model,
            &params,
            &grid,
            None,
            &quick_cfg(),
            &ErgodicSchedule::default(),
        )
        .unwrap();
        let qbu = compute_qbu(&model, &params, &sol, 1.0, 0.04).unwrap();
        for i in 0..grid.node_count() {
            assert_relative_eq!(qbu.q_field[i], 0.5 * 0.09, epsilon = 1e-12);
            let x = grid.node(i)[0];
            let mu = -2.0 * (x / 2.0).tanh();
            assert_relative_eq!(qbu.b_field[i], mu, epsilon = 1e-12);
        }
        // U >= r everywhere
        assert!(qbu.u_field.iter().all(|&u| u >= 0.03 - 1e-12));
        // late checkpoints: gradients flat, time derivative positive -> lhs < 0
        assert!(*qbu.lhs_max_per_checkpoint.last().unwrap() < 0.0);
    }

    #[test]
    fn qbu_no_premium_gives_short_rate() {
        let model = MarketModel::constant(
            vec![0.03],
            vec![0.0],
            DMatrix::from_row_slice(1, 2, &[0.2, 0.0]),
            DMatrix::from_row_slice(1, 2, &[0.0, 0.3]),
            0.03,
        )
        .unwrap();
        let params = theta2();
        let grid = Grid::line(-1.0, 1.0, 51).unwrap();
        let sol = solve_ergodic(
            &model,
            &params,
            &grid,
            None,
            &quick_cfg(),
            &ErgodicSchedule::default(),
        )
        .unwrap();
        let qbu = compute_qbu(&model, &params, &sol, 0.5, 0.04).unwrap();
        for &u in &qbu.u_field {
            assert_relative_eq!(u, 0.03, epsilon = 1e-14);
        }
    }
}
